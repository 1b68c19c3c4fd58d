import numpy as np
import pytest

from risisac import precoder as pc
from risisac import radar as rd
from risisac import ris
from risisac.exceptions import SurrogateInfeasible
from risisac.numerics import unit_modulus
from risisac.scenario import builtin_config, make_rng, synthesize_channels, target_geometry

from _toys import cn, phases, random_psd, ris_toy, sust_instance


class TestQuartic:
    @pytest.mark.parametrize("seed", range(5))
    def test_equals_radar_energy(self, seed):
        rng = np.random.default_rng(seed)
        inst = sust_instance(rng)
        ch, geo = inst["channels"], inst["geometry"]
        f, w = inst["f0"], inst["w"]
        x, y = ris.build_ris_quadratics(ch, geo, f, w)
        th = phases(rng, ch.n_ris)
        energy = rd.build_b_matrix(ch, geo, th, w).energy(f)
        assert ris.quartic(x, y, th) == pytest.approx(energy, rel=1e-10)

    def test_sensing_gain_is_lambda_max(self, rng):
        inst = sust_instance(rng)
        ch, geo = inst["channels"], inst["geometry"]
        th = phases(rng, ch.n_ris)
        w = rd.optimal_receiver_sust(ch, geo, th).w[0]
        lam = np.linalg.eigvalsh(rd.build_b_matrix(ch, geo, th, w).b_matrix)[-1]
        x, y = ris.sensing_gain_quadratics(ch, geo)
        assert ris.quartic(x, y, th) == pytest.approx(lam, rel=1e-10)


class TestObjective:
    @pytest.mark.parametrize("n_users", [1, 2])
    def test_equals_weighted_mse(self, n_users):
        rng = np.random.default_rng(n_users)
        from risisac.scenario import make_channels
        ch = make_channels([cn(rng, 2, 4) for _ in range(n_users)],
                           [cn(rng, 2, 5) for _ in range(n_users)], cn(rng, 5, 4),
                           user_noise=0.3)
        f = cn(rng, 4, 2 * n_users)
        th = phases(rng, 5)
        g = pc.lmmse_equalizers(ch.effective_all(th), f, ch.r_nc)
        g = [gk + 0.1 * cn(rng, *gk.shape) for gk in g]
        w = pc.MetricWeights(a=[random_psd(rng, 2) for _ in range(n_users)])
        obj = ris.ris_objective_terms(ch, f, g, w)
        for _ in range(5):
            t = phases(rng, 5)
            assert obj(t) == pytest.approx(pc.weighted_mse(ch.effective_all(t), f, g, ch.r_nc, w),
                                           rel=1e-10)

    def test_hessian_psd(self, rng):
        obj = ris_toy(0)[0]
        assert np.linalg.eigvalsh(obj.hq)[0] >= -1e-12


class TestSurrogate:
    @pytest.mark.parametrize("seed", range(5))
    def test_touches_and_minorizes(self, seed):
        rng = np.random.default_rng(seed)
        x, y = random_psd(rng, 6, 1), random_psd(rng, 6)
        t = phases(rng, 6)
        s = ris.mm_surrogate(x, y, t, 1.0)
        assert s.lower_bound(t) == pytest.approx(ris.quartic(x, y, t), rel=1e-10)
        for _ in range(200):
            th = phases(rng, 6)
            assert s.lower_bound(th) <= ris.quartic(x, y, th) * (1 + 1e-10)

    def test_constraint_implies_quartic(self, rng):
        x, y = random_psd(rng, 5, 1), random_psd(rng, 5)
        t = phases(rng, 5)
        thr = 0.5 * ris.quartic(x, y, t)
        s = ris.mm_surrogate(x, y, t, thr)
        assert s.feasible(t)
        for _ in range(500):
            th = phases(rng, 5)
            if s.feasible(th, tol=0.0):
                assert ris.quartic(x, y, th) >= thr * (1 - 1e-10)

    def test_qhat_psd(self, rng):
        s = ris.mm_surrogate(random_psd(rng, 4), random_psd(rng, 4), phases(rng, 4), 1.0)
        assert np.linalg.eigvalsh(s.q_hat)[0] >= -1e-9 * s.lam_max


class TestThetaStep:
    def test_multiplier_matches_grid_scan(self, rng):
        n = 3
        obj = ris.RisObjective(random_psd(rng, n), cn(rng, n), 0.0)
        x, y = random_psd(rng, n, 1), random_psd(rng, n)
        t = phases(rng, n)
        s = ris.mm_surrogate(x, y, t, 0.9 * ris.quartic(x, y, t))
        state = ris.AdmmState(alpha=phases(rng, n), upsilon=cn(rng, n) * 5, rho=1.0)
        rhs = 0.5 * state.rho * (state.alpha + state.upsilon) - obj.gl
        m = obj.hq + 0.5 * state.rho * np.eye(n)

        def excess(d):
            th = np.linalg.solve(m + d * s.q_hat, rhs)
            return s.value(th) - s.c_scalar

        if excess(0.0) <= 0:
            pytest.skip("constraint inactive for this draw")
        grid = np.linspace(0, 50, 200001)
        vals = np.array([excess(d) for d in grid[::100]])
        k = np.flatnonzero(vals <= 0)[0]
        fine = grid[(k - 1) * 100:k * 100 + 1]
        fv = np.array([excess(d) for d in fine])
        d_grid = fine[np.flatnonzero(fv <= 0)[0]]
        theta, delta = ris.admm_theta_step(obj, s, state)
        assert delta == pytest.approx(d_grid, abs=grid[1] - grid[0])
        assert s.value(theta) == pytest.approx(s.c_scalar, rel=1e-9)

    def test_unconstrained(self, rng):
        obj = ris.RisObjective(random_psd(rng, 3), cn(rng, 3), 0.0)
        state = ris.AdmmState(alpha=phases(rng, 3), upsilon=np.zeros(3, complex), rho=2.0)
        theta, delta = ris.admm_theta_step(obj, None, state)
        ref = np.linalg.solve(obj.hq + np.eye(3), state.alpha - obj.gl)
        np.testing.assert_allclose(theta, ref, atol=1e-12)
        assert delta == 0.0

    def test_empty_feasible_set(self, rng):
        obj = ris.RisObjective(random_psd(rng, 3), cn(rng, 3), 0.0)
        x, y = random_psd(rng, 3, 1), random_psd(rng, 3)
        t = phases(rng, 3)
        # threshold above n*lambda_max - quartic leaves c < 0
        s = ris.mm_surrogate(x, y, t, 10 * 3 * np.linalg.norm(x) * np.linalg.norm(y) * 9)
        state = ris.AdmmState(alpha=t, upsilon=np.zeros(3, complex), rho=1.0)
        with pytest.raises(SurrogateInfeasible):
            ris.admm_theta_step(obj, s, state)


class TestAdmm:
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_toy_feasible_and_descends(self, seed):
        obj, x, y, thr, best, th0 = ris_toy(seed)
        theta, trace = ris.admm_ris_design(obj, [(x, y, thr)], th0)
        np.testing.assert_allclose(np.abs(theta), 1.0, atol=1e-12)
        assert ris.quartic(x, y, theta) >= thr * (1 - 1e-9)
        outer = [r["objective"] for r in trace if r.get("accepted")]
        outer = outer[1:] if trace[0].get("phase") == "feasibility" else outer
        assert all(b <= a * (1 + 1e-12) for a, b in zip(outer, outer[1:]))

    def test_no_radar_terms(self, rng):
        obj = ris.RisObjective(random_psd(rng, 4), cn(rng, 4), 0.0)
        th0 = phases(rng, 4)
        theta, _ = ris.admm_ris_design(obj, [], th0)
        assert obj(theta) <= obj(th0)

    def test_duplicate_target(self):
        obj, x, y, thr, best, th0 = ris_toy(1)
        a, _ = ris.admm_ris_design(obj, [(x, y, thr)], th0)
        b, _ = ris.mumt_ris_design(obj, [(x, y, thr), (x, y, thr)], th0)
        np.testing.assert_allclose(a, b, atol=1e-6)


class TestRcg:
    def test_gradient_finite_difference(self, rng):
        x, y = random_psd(rng, 6, 1), random_psd(rng, 6)
        th = phases(rng, 6)
        g = ris.euclidean_gradient(x, y, th)
        for _ in range(10):
            d = cn(rng, 6)
            h = 1e-6
            fd = (ris.quartic(x, y, th - h * d) - ris.quartic(x, y, th + h * d)) / (2 * h)
            assert 2 * np.real(np.vdot(g, d)) == pytest.approx(fd, rel=1e-5)

    def test_monotone_and_tangent(self, rng):
        x, y = random_psd(rng, 8, 1), random_psd(rng, 8)
        th, trace = ris.rcg_ris_design(x, y, phases(rng, 8))
        obj = [r["objective"] for r in trace]
        assert all(b <= a + 1e-12 * abs(a) for a, b in zip(obj, obj[1:]))
        assert max(r["tangency"] for r in trace) <= 1e-9
        np.testing.assert_allclose(np.abs(th), 1.0, atol=1e-12)

    def test_reaches_rank_one_optimum(self, rng):
        # X = Y = a a^H: the maximum N^4 is reached at theta = a / |a|
        a = phases(rng, 5)
        x = np.outer(a, a.conj())
        th, _ = ris.rcg_ris_design(x, x, phases(rng, 5), eps=1e-12)
        assert ris.quartic(x, x, th) == pytest.approx(5 ** 4, rel=1e-6)

    def test_stop_value(self, rng):
        x, y = random_psd(rng, 6, 1), random_psd(rng, 6)
        th0 = phases(rng, 6)
        target = 1.2 * ris.quartic(x, y, th0)
        th, _ = ris.rcg_ris_design(x, y, th0, stop_value=target)
        full, _ = ris.rcg_ris_design(x, y, th0)
        assert target <= ris.quartic(x, y, th) <= ris.quartic(x, y, full) * (1 + 1e-9)


class TestBaselines:
    def test_target_direction_beats_user_direction(self):
        cfg = builtin_config()
        ch = synthesize_channels(cfg, make_rng(0))
        geo = target_geometry(cfg)
        x, y = ris.sensing_gain_quadratics(ch, geo)
        t = ris.baseline_phases("target-direction", ch, geo)
        u = ris.baseline_phases("user-direction", ch, geo)
        np.testing.assert_allclose(np.abs(t), 1.0)
        assert ris.quartic(x, y, t) > 10 * ris.quartic(x, y, u)

    def test_unknown_kind(self):
        cfg = builtin_config()
        ch = synthesize_channels(cfg, make_rng(0))
        with pytest.raises(ValueError):
            ris.baseline_phases("sideways", ch, target_geometry(cfg))


def test_unit_modulus_projection_is_nearest(rng):
    z = cn(rng, 50)
    p = unit_modulus(z)
    for _ in range(20):
        q = phases(rng, 50)
        assert np.linalg.norm(z - p) <= np.linalg.norm(z - q)
