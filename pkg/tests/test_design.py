import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import solve_ivp
from scipy.optimize import fsolve

from crpnav import design, dynamics as dyn
from crpnav.dynamics import DAY, HOUR, Body, StateVector

SYS = dyn.SystemModel()
SC = dyn.SpacecraftModel()


def two_body_system():
    return dyn.SystemModel(mu2=1e-20, tidally_locked=False, mu_sun=0.0)


def lambert_oracle(r0, r1, tof, mu, v_seed):
    """Shoot the two-body problem numerically until the arc hits r1."""
    def end(v):
        sol = solve_ivp(lambda t, y: np.r_[y[3:], -mu * y[:3] / np.linalg.norm(y[:3]) ** 3],
                        (0, tof), np.r_[r0, v], rtol=1e-13, atol=1e-12, method="DOP853")
        return sol.y[:, -1]

    v0 = fsolve(lambda v: end(v)[:3] - r1, v_seed, xtol=1e-12)
    return v0, end(v0)[3:]


@pytest.fixture(scope="module")
def plan_a():
    return design.plan_from_layout(design.reference_layout("A"), SYS, SC)


@pytest.fixture(scope="module")
def plan_b():
    return design.plan_from_layout(design.reference_layout("B"), SYS, SC)


class TestLambert:
    def test_quarter_circle(self):
        mu, r = 35.2, 8000.0
        vc = math.sqrt(mu / r)
        period = 2 * math.pi * math.sqrt(r ** 3 / mu)
        v0, v1 = design.lambert([r, 0, 0], [0, r, 0], period / 4, mu)
        np.testing.assert_allclose(v0, [0, vc, 0], atol=1e-12)
        np.testing.assert_allclose(v1, [-vc, 0, 0], atol=1e-12)

    @pytest.mark.parametrize("r1, tof", [([-3000.0, 7000.0, 500.0], 2 * DAY),
                                         ([2000.0, -9000.0, -800.0], 4 * DAY),
                                         ([12000.0, 3000.0, 0.0], 1 * DAY)])
    def test_against_numerical_oracle(self, r1, tof):
        mu, r0 = 35.2, np.array([6000.0, 1000.0, 0.0])
        v0, v1 = design.lambert(r0, r1, tof, mu)
        w0, w1 = lambert_oracle(r0, np.array(r1), tof, mu, v0 * 1.05)
        assert np.linalg.norm(v0 - w0) / np.linalg.norm(w0) < 1e-8
        assert np.linalg.norm(v1 - w1) / np.linalg.norm(w1) < 1e-8

    def test_long_way_goes_around(self):
        mu = 35.2
        v0, _ = design.lambert([8000, 0, 0], [0, 8000, 0], 3 * DAY, mu, long_way=True)
        assert np.cross([8000, 0, 0], v0)[2] < 0


class TestSolveArc:
    def test_two_body_limit_matches_lambert(self):
        sys = two_body_system()
        r0, r1 = np.array([7000.0, 2000.0, 300.0]), np.array([-4000.0, 6000.0, -500.0])
        v0, v1 = design.solve_arc(r0, r1, 0.0, 3 * DAY, sys, None)
        w0, w1 = lambert_oracle(r0, r1, 3 * DAY, sys.mu, design.lambert(r0, r1, 3 * DAY, sys.mu)[0])
        assert np.linalg.norm(v0 - w0) / np.linalg.norm(w0) < 1e-6
        assert np.linalg.norm(v1 - w1) / np.linalg.norm(w1) < 1e-6

    def test_quarter_orbit(self):
        sys = two_body_system()
        r = 9000.0
        vc = math.sqrt(sys.mu / r)
        period = 2 * math.pi * math.sqrt(r ** 3 / sys.mu)
        v0, v1 = design.solve_arc([r, 0, 0], [0, r, 0], 0.0, period / 4, sys, None)
        np.testing.assert_allclose(v0, [0, vc, 0], rtol=0, atol=1e-6 * vc)
        np.testing.assert_allclose(v1, [-vc, 0, 0], rtol=0, atol=1e-6 * vc)

    def test_recovers_known_velocity(self):
        v_known = np.array([-0.04, 0.03, 0.002])
        s0 = StateVector(np.array([8000.0, 4000.0, 0.0]), v_known, 0.0)
        end = dyn.propagate(s0, 3 * DAY, SYS, SC)
        v0, v1 = design.solve_arc(s0.r, end.r, 0.0, 3 * DAY, SYS, SC, v_guess=v_known + 2e-4)
        assert np.linalg.norm(v0 - v_known) < 1e-9
        assert np.linalg.norm(v1 - end.v) < 1e-9

    def test_reversed_time(self):
        r0, r1 = np.array([8000.0, 3000.0, 0.0]), np.array([6000.0, -5000.0, 1000.0])
        v0, v1 = design.solve_arc(r0, r1, 0.0, 3 * DAY, SYS, SC)
        u1, u0 = design.solve_arc(r1, r0, 3 * DAY, 0.0, SYS, SC, v_guess=v1)
        back = dyn.propagate(StateVector(r1, u1, 3 * DAY), 0.0, SYS, SC)
        assert np.linalg.norm(back.r - r0) < 1.0
        # same physical path: the backward solution starts with the forward arrival velocity
        assert np.linalg.norm(u1 - v1) < 1e-6
        assert np.linalg.norm(u0 - v0) < 1e-6

    def test_residual_below_tolerance(self):
        r0, r1 = np.array([8000.0, 3000.0, 0.0]), np.array([6000.0, -5000.0, 1000.0])
        v0, _ = design.solve_arc(r0, r1, 0.0, 3 * DAY, SYS, SC)
        end = dyn.propagate(StateVector(r0, v0, 0.0), 3 * DAY, SYS, SC)
        assert np.linalg.norm(end.r - r1) < 1e-3

    def test_rejects_short_arc(self):
        with pytest.raises(ValueError):
            design.solve_arc([8000, 0, 0], [0, 8000, 0], 0.0, 47 * HOUR, SYS, SC)

    def test_rejects_identical_endpoints(self):
        with pytest.raises(ValueError):
            design.solve_arc([8000, 0, 0], [8000, 0, 0], 0.0, 3 * DAY, SYS, SC)

    def test_failure_reports_residual(self):
        with pytest.raises(design.BvpError) as info:
            design.solve_arc([8000, 0, 0], [0, 8000, 0], 0.0, 3 * DAY, SYS, SC,
                             v_guess=[0.3, 0.0, 0.0], max_iter=1)
        assert info.value.residual > 1.0


class TestKeyPoint:
    def test_zero_phase_on_sun_line(self):
        t = 2 * DAY
        kp = design.make_keypoint(t, Body.D2, 2780.0, 0.0, 0.0, SYS)
        rb = dyn.body_position(Body.D2, t, SYS)
        s_hat, r_ds = dyn.sun_direction(t, SYS)
        to_sun = s_hat * r_ds - rb
        np.testing.assert_allclose(kp.position, rb + 2780.0 * to_sun / np.linalg.norm(to_sun), atol=1e-9)

    @settings(max_examples=40, deadline=None)
    @given(st.floats(0.0, 40 * DAY), st.sampled_from([Body.D1, Body.D2]), st.floats(500.0, 20000.0),
           st.floats(0.0, 90.0), st.floats(0.0, 360.0))
    def test_inverse_consistency(self, t, body, dist, phase, az):
        kp = design.make_keypoint(t, body, dist, phase, az, SYS)
        rb = dyn.body_position(body, t, SYS)
        assert abs(np.linalg.norm(kp.position - rb) - dist) < 1e-6
        assert abs(dyn.phase_angle(kp.position, t, body, SYS) - phase) < 1e-9

    def test_azimuth_orientation(self):
        t = DAY
        flat = design.make_keypoint(t, Body.D1, 3000.0, 30.0, 0.0, SYS)
        up = design.make_keypoint(t, Body.D1, 3000.0, 30.0, 90.0, SYS)
        rb = dyn.body_position(Body.D1, t, SYS)
        rot = dyn.sun_south_rotation(t, SYS)
        s_hat, r_ds = dyn.sun_direction(t, SYS)
        u = s_hat * r_ds - rb
        u /= np.linalg.norm(u)
        off_axis = flat.position - rb - 3000.0 * math.cos(math.radians(30.0)) * u
        # the generator's offset from the Sun line lies in the equator plane
        assert abs(SYS.pole @ off_axis) < 1e-6
        assert rot[1] @ off_axis > 0
        assert rot[2] @ (up.position - flat.position) > 0

    def test_crater_bands(self):
        kp = design.make_keypoint(DAY, Body.D2, 2780.0, 5.0, 0.0, SYS)
        assert design.KEYPOINT_DISTANCE_BAND[0] <= kp.distance <= design.KEYPOINT_DISTANCE_BAND[1]
        assert design._in_bands(kp.phase_angle, design.KEYPOINT_PHASE_BANDS)

    def test_night_side_rejected(self):
        with pytest.raises(design.ConstraintError):
            design.make_keypoint(DAY, Body.D2, 2780.0, 120.0, 0.0, SYS)
        kp = design.make_keypoint(DAY, Body.D2, 2780.0, 120.0, 0.0, SYS, day_side=False)
        assert dyn.phase_angle(kp.position, DAY, Body.D2, SYS) == pytest.approx(120.0, abs=1e-9)

    @pytest.mark.parametrize("args", [(0.0, 5.0), (2780.0, -1.0), (2780.0, 181.0)])
    def test_bad_input(self, args):
        with pytest.raises(ValueError):
            design.make_keypoint(DAY, Body.D2, args[0], args[1], 0.0, SYS)


def circular_nodes(sys, r, epochs):
    n = math.sqrt(sys.mu / r ** 3)
    return [design.NodeSpec(t, r * np.array([math.cos(n * t), math.sin(n * t), 0.0])) for t in epochs]


class TestBuildPlan:
    def test_ballistic_continuation(self):
        sys = two_body_system()
        nodes = circular_nodes(sys, 9000.0, [0.0, 2.5 * DAY, 5 * DAY, 8 * DAY])
        plan = design.build_plan(nodes, sys, None, loop=False)
        assert len(plan.arcs) == 3
        assert plan.nodes[0].dv @ plan.nodes[0].dv == 0.0
        assert design.plan_total_dv(plan) < 1e-6

    def test_spacing_violation(self):
        nodes = [design.NodeSpec(0.0, np.array([8000.0, 0, 0])),
                 design.NodeSpec(30 * HOUR, np.array([0, 8000.0, 0]))]
        with pytest.raises(design.DesignError, match="48 h"):
            design.build_plan(nodes, SYS, SC, end_epoch=5 * DAY)

    def test_pass_through_spacing_is_allowed(self):
        sys = two_body_system()
        nodes = circular_nodes(sys, 9000.0, [0.0, DAY, 3 * DAY])
        nodes[1].commanded = False
        plan = design.build_plan(nodes, sys, None, loop=False)
        assert plan.pattern == [3.0]
        assert np.linalg.norm(plan.arcs[1].v0 - plan.arcs[0].v1) < 1e-9

    def test_epochs_must_increase(self):
        nodes = [design.NodeSpec(0.0, np.array([8000.0, 0, 0])),
                 design.NodeSpec(0.0, np.array([0, 8000.0, 0]))]
        with pytest.raises(design.DesignError):
            design.build_plan(nodes, SYS, SC, end_epoch=5 * DAY)

    def test_failing_arc_index(self, monkeypatch):
        real = design.solve_arc
        calls = []

        def flaky(*args, **kwargs):
            calls.append(1)
            if len(calls) == 2:
                raise design.BvpError("forced", residual=12.0)
            return real(*args, **kwargs)

        monkeypatch.setattr(design, "solve_arc", flaky)
        nodes = [design.NodeSpec(0.0, np.array([8000.0, 0, 0])),
                 design.NodeSpec(3 * DAY, np.array([0, 8000.0, 0]))]
        with pytest.raises(design.BvpError) as info:
            design.build_plan(nodes, SYS, SC, end_epoch=6 * DAY)
        assert info.value.arc_index == 1


class TestReferencePlans:
    def test_option_a_structure(self, plan_a):
        assert plan_a.option_label == "A"
        assert len(plan_a.maneuver_nodes) == 8
        assert plan_a.pattern == [3.0, 4.0] * 4
        assert (plan_a.end_epoch - plan_a.start_epoch) / DAY == pytest.approx(28.0)
        assert len(plan_a.keypoints) == 4
        assert [plan_a.arc_index_at(kp.epoch) for kp in plan_a.keypoints] == [0, 2, 4, 6]

    def test_option_b_structure(self, plan_b):
        assert plan_b.option_label == "B"
        assert len(plan_b.maneuver_nodes) == 6
        assert plan_b.pattern == [7.0, 4.0, 7.0, 7.0, 3.0, 7.0]
        assert (plan_b.end_epoch - plan_b.start_epoch) / DAY == pytest.approx(35.0)
        assert len(plan_b.arcs) == 10
        assert len(plan_b.keypoints) == 2

    def test_mid_nodes_carry_no_impulse(self, plan_b):
        for j, arc in enumerate(plan_b.arcs):
            if not arc.start.commanded:
                assert np.linalg.norm(arc.start.dv) == 0.0
                assert np.linalg.norm(arc.v0 - plan_b.arcs[j - 1].v1) < 1e-9

    @pytest.mark.parametrize("which", ["plan_a", "plan_b"])
    def test_arcs_close(self, which, request):
        plan = request.getfixturevalue(which)
        for arc in plan.arcs:
            end = dyn.propagate(arc.start_state, arc.end_epoch, SYS, SC)
            assert np.linalg.norm(end.r - arc.end_position) < 1.0
        assert np.allclose(plan.arcs[-1].end_position, plan.arcs[0].start.position)

    @pytest.mark.parametrize("which", ["plan_a", "plan_b"])
    def test_no_hard_violations(self, which, request):
        plan = request.getfixturevalue(which)
        report = design.validate_plan(plan, SYS, SC)
        assert report.ok, [v.message for v in report.violations]
        assert all(k["ok"] for k in report.keypoints)
        assert report.max_phase_d1 < 90.0

    def test_saturation_is_soft(self, plan_a):
        report = design.validate_plan(plan_a, SYS, SC)
        limit = report.min_range["D1"] + 100.0
        loose = design.Constraints(nir_saturation=limit)
        flagged = design.validate_plan(plan_a, SYS, SC, loose)
        assert any(w.kind == "nir_saturation" for w in flagged.warnings)
        assert flagged.ok == report.ok

    def test_dv_bookkeeping(self, plan_a):
        total = sum(np.linalg.norm(n.dv) for n in plan_a.nodes)
        assert design.plan_total_dv(plan_a) == pytest.approx(total, abs=1e-15)
        assert abs(design.plan_total_dv(plan_a) - design.plan_total_dv(plan_a)) < 1e-12
        closure = plan_a.arcs[0].v0 - plan_a.arcs[-1].v1
        np.testing.assert_array_equal(plan_a.nodes[0].dv, closure)

    def test_deterministic(self, plan_b):
        again = design.plan_from_layout(design.reference_layout("B"), SYS, SC)
        for a, b in zip(plan_b.arcs, again.arcs):
            np.testing.assert_array_equal(a.v0, b.v0)
            np.testing.assert_array_equal(a.start.position, b.start.position)

    def test_round_trip(self, plan_b):
        restored = design.plan_from_dict(design.plan_to_dict(plan_b))
        assert restored.pattern == plan_b.pattern
        assert restored.total_dv == pytest.approx(plan_b.total_dv, abs=1e-15)
        assert len(restored.keypoints) == 2


class TestValidate:
    def test_anti_sunward_node(self):
        t0 = 0.0
        nodes = [design.NodeSpec(t0, design.waypoint_position(t0, 9000.0, 180.0, 0.0, SYS)),
                 design.NodeSpec(3 * DAY, design.waypoint_position(3 * DAY, 9000.0, 150.0, 0.0, SYS))]
        plan = design.build_plan(nodes, SYS, SC, end_epoch=6 * DAY)
        report = design.validate_plan(plan, SYS, SC)
        assert not report.ok
        assert any(v.kind == "day_side" for v in report.violations)

    def test_short_arc_reported(self, plan_b):
        report = design.validate_plan(plan_b, SYS, SC, design.Constraints(min_arc=5 * DAY))
        assert sum(v.kind == "min_arc" for v in report.violations) == 2

    def test_keypoint_band(self, plan_b):
        report = design.validate_plan(plan_b, SYS, SC, design.Constraints(keypoint_distance=(2780.0, 3500.0)))
        assert sum(v.kind == "keypoint" for v in report.violations) == 2
