import numpy as np
import pytest

from contjump.geometry import TorusGeometry
from contjump.harness import (
    autocovariance,
    bd_convergence,
    diffusive_convergence,
    duality_report,
    invariance_report,
    random_cylinder,
    reversibility_report,
    spectral_gap_report,
)
from contjump.kernels import FACTORIZED, KernelSpec, RadialProfile
from contjump.observables import (
    CylinderFunction,
    PolynomialOuter,
    TestProfile,
)


class TestAutocovariance:
    def test_against_direct_sums(self, rng):
        x = rng.standard_normal(200)
        mean = x.mean()
        got = autocovariance(x)
        for k in (0, 1, 5, 17):
            direct = np.mean([(x[t] - mean) * (x[t + k] - mean) for t in range(200 - k)])
            # same per-lag normalization as the direct average
            direct = direct * (200 - k) / (200 - k)
            assert got[k] == pytest.approx(direct, rel=1e-10)

    def test_known_mean_variant(self, rng):
        x = rng.standard_normal(128) + 3.0
        got = autocovariance(x, mean=3.0)
        direct0 = np.mean((x - 3.0) ** 2)
        assert got[0] == pytest.approx(direct0, rel=1e-10)


class TestDiffusiveConvergence:
    @pytest.mark.parametrize("variant_fixture", ["spec", "spec_momentum"])
    def test_passes_for_both_variants(self, variant_fixture, geom, request, rng):
        spec = request.getfixturevalue(variant_fixture)
        F = random_cylinder(rng, geom)
        rep = diffusive_convergence(F, spec, 1.0, geom, [0.4, 0.2, 0.1, 0.05], 120, rng)
        assert rep.passed
        eps_col = [row[0] for row in rep.rows]
        assert eps_col == [0.4, 0.2, 0.1, 0.05]

    def test_constant_observable_all_zero(self, geom, spec, rng):
        F = CylinderFunction(
            [TestProfile((10.0,), 2.0, 0.5)], PolynomialOuter(1, [(2.0, (0,))])
        )
        rep = diffusive_convergence(F, spec, 1.0, geom, [0.4, 0.2], 100, rng)
        assert all(row[1] == 0.0 for row in rep.rows)
        assert rep.passed  # zero gap counts as converged

    def test_requires_decreasing_eps(self, geom, spec, rng):
        F = random_cylinder(rng, geom)
        with pytest.raises(Exception):
            diffusive_convergence(F, spec, 1.0, geom, [0.1, 0.2], 100, rng)

    def test_quadrature_truncation_below_stderr(self, geom, ball_a, bump_b, rng):
        # doubling the jump quadrature grid moves the eps = 0.4 gap estimate
        # by less than its own statistical error
        from contjump.generators import apply_L0_diffusive, apply_L_eps_diffusive
        from contjump.geometry import sample_poisson

        spec64 = KernelSpec(FACTORIZED, ball_a, bump_b, d=1, gen_nodes=64)
        spec128 = KernelSpec(FACTORIZED, ball_a, bump_b, d=1, gen_nodes=128)
        F = random_cylinder(np.random.default_rng(77), geom)
        configs = [sample_poisson(geom, 1.0, rng) for _ in range(80)]
        gaps = {}
        for tag, s in (("64", spec64), ("128", spec128)):
            vals = np.array([
                (apply_L_eps_diffusive(F, c, s, 0.4) - apply_L0_diffusive(F, c, s)) ** 2
                for c in configs
            ])
            gaps[tag] = (vals.mean(), vals.std(ddof=1) / np.sqrt(vals.size))
        assert abs(gaps["64"][0] - gaps["128"][0]) < gaps["64"][1]


class TestBDConvergence:
    def test_pieces_decrease(self, ball_a, bump_b, rng):
        geom = TorusGeometry(1, 16.0)
        spec = KernelSpec(FACTORIZED, ball_a, bump_b, d=1)
        phi = TestProfile((8.0,), 1.5, 0.3)
        rep = bd_convergence(phi, spec, 1.0, geom, [1.0, 0.5, 0.25, 0.125], 60, rng)
        assert rep.passed
        assert "piece 1 eps-independent (bitwise): True" in rep.details[0]

    def test_zero_profile_all_zero(self, ball_a, bump_b, rng):
        geom = TorusGeometry(1, 16.0)
        spec = KernelSpec(FACTORIZED, ball_a, bump_b, d=1)
        phi = TestProfile((8.0,), 1.5, 0.0)
        rep = bd_convergence(phi, spec, 1.0, geom, [1.0, 0.5], 40, rng)
        assert all(row[2] == pytest.approx(0.0, abs=1e-20) for row in rep.rows)


class TestInvariance:
    def test_zero_horizon_is_identical(self, geom, spec, rng):
        rep = invariance_report("jumps", spec, 1.0, 1e-9, 50, rng, geom)
        assert rep.passed
        assert all(row[2] == 0.0 for row in rep.rows)

    def test_jump_and_bd_pass(self, geom, spec, rng):
        T = 5.0 / spec.pair_rate_bound
        for sim in ("jumps", "bd"):
            rep = invariance_report(sim, spec, 1.0, T, 250, rng, geom)
            assert rep.passed, rep.rows

    def test_bd_mutation_fails(self, geom, spec):
        rep = invariance_report("bd", spec, 1.0, 2.5, 400,
                                np.random.default_rng(9), geom, thinning_power=3.0)
        assert rep.passed is False

    def test_jump_acceptance_power_stays_invariant(self, geom, spec):
        # squaring the jump acceptance yields another symmetric pair-jump
        # kernel, so the Poisson field must STILL be invariant; this guards
        # the theory, not the test's power
        rep = invariance_report("jumps", spec, 1.0, 2.5, 250,
                                np.random.default_rng(10), geom, thinning_power=2.0)
        assert rep.passed


class TestSpectralGap:
    def test_interacting_rate_above_bound(self, geom, spec):
        rep = spectral_gap_report(spec, 1.0, 60.0, 16, np.random.default_rng(3), geom,
                                  observable_profile=TestProfile((10.0,), 2.0, 0.6),
                                  dt=0.125)
        assert rep.passed

    def test_free_rate_matches_closed_form(self, geom, spec):
        rep = spectral_gap_report(spec, 1.0, 80.0, 32, np.random.default_rng(4), geom,
                                  free=True, dt=0.125)
        assert rep.passed

    def test_insufficient_signal_status(self, geom, spec):
        rep = spectral_gap_report(spec, 0.005, 10.0, 4, np.random.default_rng(5), geom,
                                  observable_profile=TestProfile((10.0,), 1.0, 0.5),
                                  dt=0.5)
        assert rep.passed is None
        assert rep.verdict == "INSUFFICIENT-SIGNAL"

    def test_gap_bound_arithmetic(self):
        # <a> = 1, z = 1, <b> = 1 gives the unit lower bound
        unit_b = RadialProfile("uniform-ball", 0.5, 1.0)  # mass 1 in d = 1
        ball_a = RadialProfile("uniform-ball", 1.0, 0.5)  # mass 1 in d = 1
        s = KernelSpec(FACTORIZED, ball_a, unit_b, d=1)
        assert s.mean_a**2 * 1.0 * s.mean_b == pytest.approx(1.0, rel=1e-12)


class TestReversibilityAndDuality:
    def test_equal_observables_trivially_symmetric(self, geom, spec, rng):
        F = random_cylinder(rng, geom)
        rep = reversibility_report(spec, 1.0, F, F, 120, rng, geom)
        assert rep.passed
        assert rep.rows[2][1] == 0.0  # paired difference vanishes identically

    def test_random_pairs_pass(self, geom, spec, spec_momentum, rng):
        for s in (spec, spec_momentum):
            F = random_cylinder(rng, geom)
            G = random_cylinder(rng, geom)
            rep = reversibility_report(s, 1.0, F, G, 150, rng, geom)
            assert rep.passed

    def test_drift_mutation_fails(self, ball_a, bump_b):
        from contjump.observables import ExponentialFunction

        geom = TorusGeometry(1, 20.0)
        bad = KernelSpec(FACTORIZED, ball_a, bump_b, d=1, odd_drift_bias=0.8, gen_nodes=32)
        F = ExponentialFunction(TestProfile((9.2,), 1.2, -1.0))
        G = ExponentialFunction(TestProfile((10.8,), 1.2, -1.0))
        rep = reversibility_report(bad, 1.0, F, G, 1200, np.random.default_rng(3), geom)
        assert rep.passed is False
        assert "skewed" in rep.name

    @pytest.mark.parametrize("form", ["jump", "diffusive", "bd"])
    def test_duality_reports(self, geom, spec, form, rng):
        F = random_cylinder(rng, geom)
        G = random_cylinder(rng, geom)
        rep = duality_report(spec, 1.0, F, G, 150, rng, geom, form=form)
        assert rep.passed
