import math

import numpy as np
import pytest
from conftest import SMALL_GRID

from qrisk.dynprog import kernels
from qrisk.dynprog.control import grad_w, optimal_u, optimal_u_rn, optimal_u_rs
from qrisk.dynprog.grid import DPConfig, Lattice, control_grid, terminal_values
from qrisk.dynprog.solver import SolverError, backward_solve, max_stable_dt, rn_backward_solve
from qrisk.model import TwoLevelParams

TINY = DPConfig(n_x=11, n_y=11, n_z=11, dt_dp=1e-2, n_u=9, search_every=5, store_every=5)


@pytest.fixture
def rs_vg(small_rs):
    return small_rs[0]


@pytest.fixture
def rn_vg(small_rn):
    return small_rn[0]


class TestLattice:
    def test_active_nodes_cover_ball(self):
        lat = Lattice(21, 21, 21)
        assert lat.inside.sum() < lat.active.sum()
        assert np.all(lat.X ** 2 + lat.Y ** 2 + lat.Z ** 2 <= 1 + 1e-12)

    def test_interpolation_exact_on_linear_functions(self):
        lat = Lattice(9, 9, 9)
        gx, gy, gz = np.meshgrid(*lat.axes, indexing="ij")
        V = 2 * gx - gy + 0.5 * gz + 1
        pts = np.random.default_rng(0).uniform(-0.5, 0.5, (3, 50))
        np.testing.assert_allclose(lat.interpolate(V, *pts), 2 * pts[0] - pts[1] + 0.5 * pts[2] + 1, atol=1e-13)

    def test_control_grid_inside_disc(self):
        c = control_grid(21, 5.0)
        assert np.all(np.hypot(c[:, 0], c[:, 1]) <= 5.0 + 1e-9)
        assert [0.0, 0.0] in c.tolist()

    def test_config_validation(self):
        with pytest.raises(ValueError):
            DPConfig(n_x=2)
        with pytest.raises(ValueError):
            DPConfig(rn_terminal="quadratic")


class TestSolvedGrids:
    def test_terminal_slice_is_exact(self, rs_vg, rn_vg):
        for vg in (rs_vg, rn_vg):
            _, _, Z = vg.lattice.node_states()
            assert np.array_equal(vg.values[-1], terminal_values(vg.params, vg.mode, Z))
        _, _, Z = rs_vg.lattice.node_states()
        expected = 0.5 * (1 + Z) + 0.5 * (1 - Z) * math.exp(0.1)
        np.testing.assert_array_equal(rs_vg.values[-1], expected)

    def test_exp_terminal_switch(self):
        p = TwoLevelParams(T=0.1)
        vg, _ = backward_solve(p, DPConfig(n_x=11, n_y=11, n_z=11, dt_dp=1e-2, n_u=9, rn_terminal="exp-c"), "rn")
        _, _, Z = vg.lattice.node_states()
        np.testing.assert_array_equal(vg.values[-1], 0.5 * (1 - Z) * math.e)

    def test_values_finite_and_bounded_below(self, rs_vg, rn_vg):
        act = rs_vg.lattice.active
        for s in range(len(rs_vg.times)):
            assert np.all(np.isfinite(rs_vg.values[s][act]))
            assert rs_vg.values[s][act].min() >= 1.0 - 1e-12
            assert rn_vg.values[s][act].min() >= -1e-12

    def test_rs_value_grows_backwards(self, rs_vg):
        up = [float(rs_vg.value(0, 0, 1, t)) for t in rs_vg.times]
        assert all(a >= b - 1e-12 for a, b in zip(up, up[1:]))

    def test_reflection_symmetry(self, rs_vg, rn_vg):
        for vg in (rs_vg, rn_vg):
            act = vg.lattice.active
            flipped = vg.values[0][:, ::-1, :]
            assert np.max(np.abs(vg.values[0][act] - flipped[act])) <= 1e-9 * np.abs(vg.values[0][act]).max()

    def test_up_state_is_cheaper(self, rn_vg, rs_vg):
        for vg in (rn_vg, rs_vg):
            for t in vg.times:
                assert vg.value(0, 0, 1, t) <= vg.value(0, 0, -1, t)

    def test_homogeneity(self, rs_vg, rn_vg, rng):
        for vg in (rs_vg, rn_vg):
            for _ in range(20):
                lam = rng.uniform(0.1, 10)
                v = rng.normal(size=3)
                v *= rng.uniform(0, 1) / np.linalg.norm(v)
                base = float(vg.unnormalized_value(1.0, *v))
                scaled = float(vg.unnormalized_value(lam, *(lam * v)))
                assert abs(scaled - lam * base) <= 1e-12 * max(1.0, abs(scaled))

    def test_w_mu(self, rs_vg, rn_vg):
        s = float(rs_vg.unnormalized_value(2.0, 0.2, 0.0, 1.0))
        assert float(rs_vg.w_mu(2.0, 0.2, 0.0, 1.0)) == pytest.approx((2.0 / 0.1) * math.log(s / 2.0))
        assert float(rn_vg.w_mu(2.0, 0.2, 0.0, 1.0)) == float(rn_vg.unnormalized_value(2.0, 0.2, 0.0, 1.0))


class TestPolicy:
    def test_bound(self, small_rs):
        _, pol = small_rs
        assert np.all(np.hypot(pol.u_r, pol.u_i) <= pol.params.u_max * (1 + 1e-12))

    def test_reflection(self, small_rs):
        _, pol = small_rs
        act = pol.lattice.active.copy()
        # (y, u_i) -> (-y, -u_i) leaves the dynamics and costs unchanged. On
        # the y = 0 plane the minimizers come in +-u_i pairs and the tie-break
        # picks one of them, so that plane is excluded.
        act[:, pol.lattice.shape[1] // 2, :] = False
        np.testing.assert_allclose(pol.u_r[0][act], pol.u_r[0][:, ::-1, :][act], atol=1e-9)
        np.testing.assert_allclose(pol.u_i[0][act], -pol.u_i[0][:, ::-1, :][act], atol=1e-9)

    def test_lookup_clamps(self, small_rs):
        _, pol = small_rs
        ur, ui = pol.lookup(np.array([0.3, 2.0]), np.array([0.0, 0.0]), np.array([0.1, 0.0]), 0.0)
        assert np.all(np.hypot(ur, ui) <= pol.params.u_max + 1e-12)
        assert ur.shape == (2,)

    def test_restart_consistency(self, small_rs):
        vg, pol = small_rs
        s = len(vg.times) // 2
        k = int(vg.step_index[s])
        re_vg, _ = backward_solve(vg.params, SMALL_GRID, "rs", start=(k, vg.values[s], pol.u_r[s], pol.u_i[s]))
        act = vg.lattice.active
        assert np.max(np.abs(re_vg.values[0][act] - vg.values[0][act])) <= 1e-8


class TestClosedForm:
    def test_axial_point(self, params):
        assert optimal_u_rs(params, 1.0, 0.0, 0.0, 0.7, (0.0, 0.0, 3.0)).u == 0
        assert optimal_u_rn(params, 1.0, 0.0, 0.0, -0.2, (0.0, 0.0, -1.0)).u == 0

    def test_hand_value(self, params):
        cv = optimal_u_rs(params, 1.0, 0.0, 0.0, 1.0, (1.0, 0.0, 0.0))
        assert cv.u == pytest.approx(-2 * params.kappa_f / params.b)
        assert not cv.clamped
        assert optimal_u_rn(params, 1.0, 0.0, 0.0, 1.0, (1.0, 0.0, 0.0)).u == cv.u

    def test_clamp(self, params):
        cv = optimal_u_rs(params, 1.0, 0.0, 0.0, 1.0, (10.0, 0.0, 0.0))
        assert cv.clamped and abs(cv.u) == pytest.approx(params.u_max)

    def test_nonpositive_mass(self, params):
        with pytest.raises(ValueError):
            optimal_u_rs(params, 0.0, 0.0, 0.0, 1.0, (1.0, 0.0, 0.0))

    def test_homogeneous_in_mass(self, rs_vg):
        a = optimal_u(rs_vg, 1.0, 0.3, -0.1, 0.4).u
        b = optimal_u(rs_vg, 3.0, 0.9, -0.3, 1.2).u
        assert a == pytest.approx(b, abs=1e-12)

    def test_gradient_of_w_rs(self, rs_vg):
        gw = grad_w(rs_vg, 1.0, 0.2, 0.1, 0.3)
        h = 1e-3
        w = lambda x: float(rs_vg.w_mu(1.0, x, 0.1, 0.3))
        # a secant across the lattice cell agrees in sign and rough size
        fd = (w(0.2 + 0.05) - w(0.2 - 0.05)) / 0.1
        assert gw[0] == pytest.approx(fd, rel=0.2, abs=h)


class TestSolverErrors:
    def test_zero_cost(self):
        p = TwoLevelParams(a=0.0, c=0.0, T=0.5)
        for mode, level in (("rs", 1.0), ("rn", 0.0)):
            vg, pol = backward_solve(p, TINY, mode)
            act = vg.lattice.active
            assert np.all(vg.values[:, act] == level)
            assert np.all(pol.u_r == 0) and np.all(pol.u_i == 0)

    def test_stability_bound(self):
        p = TwoLevelParams(T=1.0)
        lat = Lattice(41, 41, 41)
        limit = max_stable_dt(p, lat, "rs")
        with pytest.raises(SolverError) as info:
            backward_solve(p, DPConfig(dt_dp=0.05), "rs")
        assert info.value.max_dt == pytest.approx(limit)
        assert "dt_dp" in str(info.value)

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            backward_solve(TwoLevelParams(T=0.1), TINY, "lqg")

    def test_stored_times(self):
        vg, pol = rn_backward_solve(TwoLevelParams(T=0.5), TINY)
        np.testing.assert_allclose(vg.times, np.arange(0, 0.51, 0.05))
        assert pol.provenance == "grid-search"


@pytest.mark.skipif(len(kernels.BACKENDS) < 2, reason="compiled kernel not built")
@pytest.mark.parametrize("mode", ["rs", "rn"])
def test_backends_agree(mode):
    p = TwoLevelParams(T=0.3)
    out = {}
    for name in ("compiled", "python"):
        cfg = DPConfig(n_x=15, n_y=15, n_z=15, dt_dp=1e-2, n_u=11, search_every=4, store_every=10, backend=name)
        vg, pol = backward_solve(p, cfg, mode)
        out[name] = (vg.values, pol.u_r, pol.u_i)
    for a, b in zip(out["compiled"], out["python"]):
        np.testing.assert_allclose(a, b, atol=1e-12, rtol=1e-12)


@pytest.mark.slow
def test_grid_refinement():
    p = TwoLevelParams(T=1.0)
    coarse, _ = backward_solve(p, SMALL_GRID, "rs")
    fine, _ = backward_solve(p, DPConfig(n_x=41, n_y=41, n_z=41, dt_dp=2.5e-3, n_u=17), "rs")
    a, b = float(coarse.value(0, 0, 1)), float(fine.value(0, 0, 1))
    assert abs(a - b) <= 0.05 * b
