import numpy as np
import pytest
from scipy.integrate import dblquad, quad

from contjump.errors import InvalidParameterError, NotDifferentiableError
from contjump.kernels import (
    FACTORIZED,
    MOMENTUM,
    KernelSpec,
    RadialProfile,
    base_kernel,
    check_symmetry,
    eval_q,
    kernel_constants,
    midpoint_nodes,
    scaled_kernel_bd,
    scaled_kernel_diffusive,
)

# frozen once from scipy adaptive quadrature of the unit smooth bump in d=1:
# integral of exp(1 - 1/(1-x^2)) over [-1, 1]
BUMP_MASS_1D = 1.2069003224378743


def bump(x):
    return np.exp(1.0 - 1.0 / (1.0 - x * x)) if abs(x) < 1 else 0.0


class TestRadialProfile:
    def test_uniform_ball_constants(self):
        a = RadialProfile("uniform-ball", 1.0, 1.0)
        # d=1, height 1 on [-r, r]: <a> = 2r, c = 2 r^3 / 3
        assert a.mass(1) == pytest.approx(2.0, rel=1e-12)
        assert a.second_moment_first_coord(1) == pytest.approx(2.0 / 3.0, rel=1e-4)

    def test_linearity_in_height(self):
        a1 = RadialProfile("uniform-ball", 1.0, 1.0)
        a2 = RadialProfile("uniform-ball", 1.0, 3.0)
        assert a2.mass(1) == pytest.approx(3.0 * a1.mass(1), rel=1e-12)
        assert a2.second_moment_first_coord(1) == pytest.approx(
            3.0 * a1.second_moment_first_coord(1), rel=1e-12
        )

    def test_bump_mass_regression(self, bump_b):
        assert bump_b.mass(1) == pytest.approx(BUMP_MASS_1D, rel=1e-9)

    def test_ball_mass_2d(self):
        a = RadialProfile("uniform-ball", 1.5, 2.0)
        assert a.mass(2) == pytest.approx(2.0 * np.pi * 1.5**2, rel=5e-3)

    def test_gradient_smooth_only(self, ball_a, bump_b):
        with pytest.raises(NotDifferentiableError):
            ball_a.gradient_vec(np.array([0.3]))
        g = bump_b.gradient_vec(np.array([[0.3]]))
        h = 1e-6
        fd = (bump(0.3 + h) - bump(0.3 - h)) / (2 * h)
        assert g[0, 0] == pytest.approx(fd, rel=1e-6)

    def test_sampler_matches_density(self, bump_b, rng):
        draws = np.array([bump_b.sample(1, rng)[0] for _ in range(20_000)])
        assert np.all(np.abs(draws) <= 1.0)
        # fraction inside |x| < 0.5 equals the density mass there
        inner = quad(bump, -0.5, 0.5)[0] / BUMP_MASS_1D
        frac = np.mean(np.abs(draws) < 0.5)
        assert frac == pytest.approx(inner, abs=3 * np.sqrt(inner * (1 - inner) / draws.size))

    def test_validation(self):
        with pytest.raises(InvalidParameterError):
            RadialProfile("triangle", 1.0, 1.0)
        with pytest.raises(InvalidParameterError):
            RadialProfile("uniform-ball", -1.0, 1.0)


class TestKernelConstants:
    def test_derived_constants(self, spec):
        ka = kernel_constants(spec)
        assert ka.mean_a == pytest.approx(1.0, rel=1e-12)
        assert ka.mean_b == pytest.approx(BUMP_MASS_1D, rel=1e-9)
        assert ka.c == pytest.approx(1.0 / 3.0, rel=1e-4)
        assert ka.sup_b == pytest.approx(1.0)
        assert tuple(ka) == (ka.mean_a, ka.mean_b, ka.c, ka.sup_b)

    def test_cutoff_and_bound(self, spec):
        assert spec.cutoff == pytest.approx(3.0)
        assert spec.pair_rate_bound == pytest.approx(2.0 * 1.0**2 * 1.0)


class TestEvalQ:
    def test_closed_form_d1(self, spec):
        # uniform ball height 1/2: a(h1) a(h2) = 1/4 inside the support
        x, h1, h2 = 0.4, 0.3, -0.5
        expect = 0.25 * (bump(x) + bump(x + h2 - h1))
        assert eval_q(spec, [x], [h1], [h2]) == pytest.approx(expect, rel=1e-12)

    def test_compact_support_in_h(self, spec):
        assert eval_q(spec, [0.1], [1.2], [0.0]) == 0.0

    def test_momentum_diagonal_domain(self, spec_momentum):
        v = eval_q(spec_momentum, [0.5], [0.2], [-0.2])
        assert v == pytest.approx(0.5 * bump(0.3), rel=1e-12)
        with pytest.raises(InvalidParameterError):
            eval_q(spec_momentum, [0.5], [0.2], [0.2])

    def test_symmetry_spot_check(self, spec, rng):
        x = (rng.random(1000) * 8 - 4)[:, None]
        h1 = (rng.random(1000) * 2 - 1)[:, None]
        h2 = (rng.random(1000) * 2 - 1)[:, None]
        lhs = spec.q_factorized(-x, h1, h2)
        rhs = spec.q_factorized(x, h2, h1)
        assert np.max(np.abs(lhs - rhs)) < 1e-12


class TestSymmetryChecker:
    def test_builtin_kernels_pass(self, spec, spec_momentum, rng):
        assert check_symmetry(spec, 10_000, rng) <= 1e-12
        assert check_symmetry(spec_momentum, 10_000, rng) <= 1e-12

    def test_odd_b_counterexample_detected(self, ball_a, bump_b, rng):
        broken = KernelSpec(FACTORIZED, ball_a, bump_b, d=1, odd_b_bias=0.5)
        assert check_symmetry(broken, 10_000, rng) > 1e-3

    def test_odd_drift_detected(self, ball_a, bump_b, rng):
        broken = KernelSpec(FACTORIZED, ball_a, bump_b, d=1, odd_drift_bias=0.5)
        assert check_symmetry(broken, 10_000, rng) > 1e-3


class TestTotalPairRate:
    def test_support_arithmetic(self, spec, spec_momentum):
        assert spec.total_pair_rate(np.array([3.01])) == 0.0
        assert spec.total_pair_rate(np.array([2.9])) > 0.0
        assert spec_momentum.total_pair_rate(np.array([2.01])) == 0.0

    def test_uniform_bound(self, spec):
        xs = np.linspace(-4, 4, 200)[:, None]
        vals = spec.total_pair_rate(xs)
        bound = 2.0 * spec.mean_a**2 * spec.sup_b
        assert np.all(vals <= bound + 1e-12)
        assert np.all(vals >= 0.0)

    def test_factorized_against_dblquad(self, spec):
        for x in (0.0, 0.3, 1.4):
            exact = dblquad(
                lambda h2, h1: 0.25 * (bump(x) + bump(x + h2 - h1)),
                -1, 1, -1, 1, epsabs=1e-11,
            )[0]
            assert spec.total_pair_rate(np.array([x])) == pytest.approx(exact, rel=2e-5)

    def test_factorized_against_mc(self, spec, rng):
        # 2-dim Monte Carlo integration oracle at x = 0
        x = np.array([0.0])
        n = 200_000
        h1 = rng.uniform(-1, 1, n)[:, None]
        h2 = rng.uniform(-1, 1, n)[:, None]
        vals = spec.q_factorized(x[None, :], h1, h2) * 4.0
        se = vals.std(ddof=1) / np.sqrt(n)
        assert abs(vals.mean() - spec.total_pair_rate(x)) <= 3 * se

    def test_momentum_against_quad(self, spec_momentum):
        x = 0.7
        exact = quad(lambda h: 0.5 * bump(x - h) if abs(h) <= 1 else 0.0, -1, 1)[0]
        assert spec_momentum.total_pair_rate(np.array([x])) == pytest.approx(exact, rel=2e-5)


class TestScaledFamilies:
    def test_eps_one_reproduces_base(self, spec, spec_momentum, geom):
        for s in (spec, spec_momentum):
            ev1 = scaled_kernel_diffusive(s, 1.0)
            ev2 = scaled_kernel_bd(s, 1.0)
            ev0 = base_kernel(s)
            xbar = np.array([0.7])
            t0 = ev0.pair_weight_table(geom, xbar)
            assert np.array_equal(t0, ev1.pair_weight_table(geom, xbar))
            assert np.array_equal(t0, ev2.pair_weight_table(geom, xbar))

    @pytest.mark.parametrize("eps", [1.0, 0.5, 0.25])
    def test_diffusive_mass_and_second_moment(self, spec, eps):
        # change of variables: int eps^-d a(h/eps) dh = <a> and
        # int eps^-d-2 a(h/eps) (h^1)^2 dh = c, by direct quadrature of the
        # scaled profile on its own support
        nodes, step = midpoint_nodes(-eps * spec.r_a, eps * spec.r_a, 4096)
        vals = spec.a.value_r(np.abs(nodes / eps)) / eps
        assert vals.sum() * step == pytest.approx(spec.mean_a, rel=1e-9)
        second = (vals * nodes**2).sum() * step / eps**2
        assert second == pytest.approx(spec.c, rel=1e-3)

    def test_bd_mass_preservation(self, spec):
        eps = 0.25
        nodes, step = midpoint_nodes(-spec.r_a / eps, spec.r_a / eps, 4096)
        vals = eps * spec.a.value_r(np.abs(eps * nodes))
        assert vals.sum() * step == pytest.approx(spec.mean_a, rel=1e-9)

    @pytest.mark.parametrize("eps", [1.0, 0.5, 0.25])
    def test_bd_smearing_against_quadrature(self, spec, geom, eps):
        # total mass of the spread-jump table equals the direct double
        # quadrature of a(u1) a(u2) (b(x) + b_wrapped(x + (u2-u1)/eps))
        ev = scaled_kernel_bd(spec, eps)
        xbar = np.array([0.6])
        table_total = float(ev.pair_weight_table(geom, xbar).sum())
        m = 160
        u, step = midpoint_nodes(-1.0, 1.0, m)
        au = spec.a.value_r(np.abs(u))
        diffs = geom.min_image((u[None, :] - u[:, None]) / eps)
        bvals = bump(0.6) + np.vectorize(bump)(geom.min_image(0.6 + diffs))
        direct = float((au[:, None] * au[None, :] * bvals).sum() * step**2)
        assert table_total == pytest.approx(direct, rel=1e-3)

    def test_eps_positive(self, spec):
        with pytest.raises(InvalidParameterError):
            scaled_kernel_diffusive(spec, 0.0)
        with pytest.raises(InvalidParameterError):
            scaled_kernel_bd(spec, -0.5)


class TestBiasGuards:
    def test_equilibrium_paths_refuse_bias(self, ball_a, bump_b):
        biased = KernelSpec(FACTORIZED, ball_a, bump_b, d=1, odd_b_bias=0.3)
        with pytest.raises(InvalidParameterError):
            biased.require_unbiased("x")
        with pytest.raises(InvalidParameterError):
            KernelSpec(MOMENTUM, ball_a, bump_b, d=1, odd_drift_bias=0.3)
        with pytest.raises(InvalidParameterError):
            KernelSpec(FACTORIZED, ball_a, bump_b, d=1, odd_b_bias=1.5)
