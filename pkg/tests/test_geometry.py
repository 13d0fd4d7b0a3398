import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats
from scipy.integrate import quad

from contjump.errors import GeometryError, InvalidParameterError, MembershipError
from contjump.geometry import (
    Configuration,
    TorusGeometry,
    min_image_diff,
    require_interaction_range,
    sample_poisson,
)
from contjump.observables import TestProfile


class TestMinImage:
    def test_identity(self, geom):
        assert np.allclose(min_image_diff(geom, [3.0], [3.0]), 0.0)

    def test_wrap_around(self, geom):
        # d=1, L=20: from 1 to 19 the short way is -2
        assert np.allclose(min_image_diff(geom, [1.0], [19.0]), [-2.0])

    def test_coordinates_in_half_open_box(self, geom, rng):
        x = rng.random((500, 1)) * geom.L
        y = rng.random((500, 1)) * geom.L
        delta = min_image_diff(geom, x, y)
        assert np.all(delta >= -geom.L / 2) and np.all(delta < geom.L / 2)

    @settings(max_examples=100, deadline=None)
    @given(st.floats(0.0, 19.999), st.floats(0.0, 19.999))
    def test_antisymmetry(self, xv, yv):
        geom = TorusGeometry(1, 20.0)
        fwd = min_image_diff(geom, [xv], [yv])
        bwd = min_image_diff(geom, [yv], [xv])
        # antisymmetric except at the half-period boundary image
        if abs(abs(fwd[0]) - geom.L / 2) > 1e-9:
            assert np.allclose(fwd, -bwd, atol=1e-12)

    def test_distance_2d(self):
        geom = TorusGeometry(2, 10.0)
        assert geom.distance([9.5, 0.5], [0.5, 9.5]) == pytest.approx(np.sqrt(2.0))


class TestConfiguration:
    def test_points_wrapped_and_readonly(self, geom):
        config = Configuration(geom, [[21.0], [-1.0]])
        assert np.allclose(config.points, [[1.0], [19.0]])
        with pytest.raises(ValueError):
            config.points[0, 0] = 5.0

    def test_membership(self, geom):
        config = Configuration(geom, [[2.0], [7.5]])
        assert config.index_of([7.5]) == 1
        with pytest.raises(MembershipError):
            config.index_of([7.6])

    def test_shape_validation(self, geom):
        with pytest.raises(InvalidParameterError):
            Configuration(geom, [[1.0, 2.0]])


class TestPoissonSampler:
    def test_parameter_errors(self, geom, rng):
        with pytest.raises(InvalidParameterError):
            sample_poisson(geom, 0.0, rng)
        with pytest.raises(InvalidParameterError):
            sample_poisson(geom, -1.0, rng)
        with pytest.raises(InvalidParameterError):
            TorusGeometry(1, -2.0)

    def test_vanishing_intensity_gives_empty(self, geom, rng):
        empties = sum(len(sample_poisson(geom, 1e-5, rng)) == 0 for _ in range(200))
        assert empties >= 198  # P(empty) = exp(-2e-4)

    def test_count_moments(self, geom, rng):
        # geom(d=1, L=10), z=2: counts ~ Poisson(20) over 1e4 draws
        g = TorusGeometry(1, 10.0)
        counts = np.array([len(sample_poisson(g, 2.0, rng)) for _ in range(10_000)])
        assert counts.mean() == pytest.approx(20.0, abs=4 * np.sqrt(20 / 10_000) * 3)
        assert counts.var(ddof=1) == pytest.approx(20.0, rel=0.1)

    def test_count_distribution_chi_square(self, geom, rng):
        # invariant: chi-square at the 1e-3 level over 1e5 draws
        counts = np.array([len(sample_poisson(geom, 1.0, rng)) for _ in range(100_000)])
        mean = geom.volume  # z = 1
        kmax = int(mean + 8 * np.sqrt(mean))
        pk = stats.poisson.pmf(np.arange(kmax + 1), mean)
        # pool the two tails so every expected count is comfortable
        edges = np.arange(kmax + 2) - 0.5
        obs, _ = np.histogram(counts, bins=np.concatenate([[-0.5], edges[1:]]))
        exp = pk * counts.size
        exp[-1] += (1.0 - pk.sum()) * counts.size
        keep = exp >= 5
        chi2 = float(np.sum((obs[keep] - exp[keep]) ** 2 / exp[keep]))
        dof = int(keep.sum()) - 1
        assert stats.chi2.sf(chi2, dof) > 1e-3

    def test_uniform_locations(self, geom, rng):
        pts = np.concatenate(
            [sample_poisson(geom, 1.0, rng).points[:, 0] for _ in range(2000)]
        )
        stat = stats.kstest(pts / geom.L, "uniform")
        assert stat.pvalue > 1e-3

    def test_laplace_functional(self, geom, rng):
        # E[e^{<phi, gamma>}] = exp(z * int(e^phi - 1)), quadrature oracle by scipy
        prof = TestProfile((10.0,), 2.0, 0.5)
        z = 1.0

        def integrand(x):
            u = ((x - 10.0) / 2.0) ** 2
            val = 0.5 * np.exp(1.0 - 1.0 / (1.0 - u)) if u < 1 else 0.0
            return np.expm1(val)

        exact = np.exp(z * quad(integrand, 8.0, 12.0, limit=200)[0])
        vals = np.empty(20_000)
        for s in range(vals.size):
            config = sample_poisson(geom, z, rng)
            vals[s] = np.exp(prof.values(geom, config.points).sum()) if len(config) else 1.0
        se = vals.std(ddof=1) / np.sqrt(vals.size)
        assert abs(vals.mean() - exact) <= 3 * se


def test_interaction_range_guard(spec):
    with pytest.raises(GeometryError):
        require_interaction_range(TorusGeometry(1, 5.9), spec.cutoff)
    require_interaction_range(TorusGeometry(1, 6.1), spec.cutoff)
