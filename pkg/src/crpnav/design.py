"""Key points, ballistic arcs and patched trajectory plans."""
from __future__ import annotations

import json
import math
from importlib import resources
from dataclasses import dataclass, field

import numpy as np
import yaml
from scipy.optimize import brentq

from crpnav import dynamics as dyn
from crpnav.dynamics import DAY, HOUR, Body, StateVector

MIN_ARC = 48 * HOUR
KEYPOINT_DISTANCE_BAND = (2780.0, 4572.0)
KEYPOINT_PHASE_BANDS = ((0.0, 10.0), (30.0, 60.0))
NIR_SATURATION_RANGE = 1960.0


class DesignError(Exception):
    pass


class ConstraintError(DesignError):
    pass


class BvpError(DesignError):
    def __init__(self, message, residual=math.inf, arc_index=None):
        super().__init__(message)
        self.residual = residual
        self.arc_index = arc_index


class ConditioningError(BvpError):
    pass


@dataclass(eq=False)
class KeyPoint:
    epoch: float
    target: Body
    distance: float
    phase_angle: float
    position: np.ndarray

    def to_dict(self):
        return {"epoch": self.epoch, "target": Body(self.target).value,
                "distance": self.distance, "phase_angle": self.phase_angle,
                "position": self.position.tolist()}


def make_keypoint(epoch, target, distance, phase_angle, azimuth, sys, day_side=True):
    """Place a point at ``distance`` from ``target`` seen at ``phase_angle``.

    The admissible positions form a cone around the target->Sun direction.
    ``azimuth`` [deg] selects the generator: 0 lies in the equatorial plane
    on the +y side of the Sun-South frame, 90 points toward its +z axis.
    """
    if distance <= 0:
        raise ValueError("distance must be positive")
    if not 0.0 <= phase_angle <= 180.0:
        raise ValueError("phase angle must lie in [0, 180] deg")
    if day_side and phase_angle > 90.0:
        raise ConstraintError(f"phase angle {phase_angle} deg cannot be reached on the day side")
    target = Body(target)
    rb = dyn.body_position(target, epoch, sys)
    s_hat, r_ds = dyn.sun_direction(epoch, sys)
    u = s_hat * r_ds - rb
    u /= np.linalg.norm(u)
    south = -sys.pole
    e1 = np.cross(south, u)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(u, e1)
    ph, az = math.radians(phase_angle), math.radians(azimuth)
    d = math.cos(ph) * u + math.sin(ph) * (math.cos(az) * e1 + math.sin(az) * e2)
    return KeyPoint(float(epoch), target, float(distance), float(phase_angle), rb + distance * d)


def _stumpff(z):
    if z > 1e-8:
        sz = math.sqrt(z)
        return (1 - math.cos(sz)) / z, (sz - math.sin(sz)) / sz ** 3
    if z < -1e-8:
        sz = math.sqrt(-z)
        return (math.cosh(sz) - 1) / (-z), (math.sinh(sz) - sz) / sz ** 3
    return 0.5 - z / 24, 1 / 6 - z / 120


def lambert(r0, r1, tof, mu, long_way=False):
    """Single-revolution two-body Lambert solution (universal variables).

    Returns the departure and arrival velocities.
    """
    r0, r1 = np.asarray(r0, float), np.asarray(r1, float)
    n0, n1 = np.linalg.norm(r0), np.linalg.norm(r1)
    cos_dnu = np.clip(r0 @ r1 / (n0 * n1), -1.0, 1.0)
    dnu = math.acos(cos_dnu)
    if long_way:
        dnu = 2 * math.pi - dnu
    a_const = math.sin(dnu) * math.sqrt(n0 * n1 / (1 - math.cos(dnu)))
    if abs(a_const) < 1e-12:
        raise DesignError("Lambert geometry is degenerate (180 deg transfer)")

    def y_of(z):
        c, s = _stumpff(z)
        return n0 + n1 + a_const * (z * s - 1) / math.sqrt(c)

    def f(z):
        c, s = _stumpff(z)
        y = y_of(z)
        return (y / c) ** 1.5 * s + a_const * math.sqrt(y) - math.sqrt(mu) * tof

    z_hi = 4 * math.pi ** 2 * (1 - 1e-6)
    z_lo = -4.0
    while y_of(z_lo) > 0 and f(z_lo) > 0:
        z_lo *= 2
        if z_lo < -1e6:
            raise DesignError("Lambert bracket not found")
    if y_of(z_lo) <= 0:
        # y must stay positive: walk the lower bound up to the y = 0 crossing
        lo, hi = z_lo, z_hi
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if y_of(mid) <= 0:
                lo = mid
            else:
                hi = mid
        z_lo = hi
    z = brentq(f, z_lo, z_hi, xtol=1e-14, maxiter=500)
    y = y_of(z)
    f_lag = 1 - y / n0
    g_lag = a_const * math.sqrt(y / mu)
    gdot = 1 - y / n1
    return (r1 - f_lag * r0) / g_lag, (gdot * r1 - r0) / g_lag


def solve_arc(r0, r1, t0, t1, sys, sc, v_guess=None, tol=1.0, max_iter=50,
              min_duration=MIN_ARC, opts=dyn.DEFAULT_OPTIONS):
    """Ballistic arc from r0 at t0 to r1 at t1 by single shooting.

    Newton steps use the position/velocity block of the STM and are halved
    while the miss distance grows.  Iteration continues past ``tol`` until
    the miss stops improving, so neighbouring solutions agree to integrator
    precision.  Returns ``(v0, v1)``.
    """
    r0, r1 = np.asarray(r0, float), np.asarray(r1, float)
    if abs(t1 - t0) < min_duration:
        raise ValueError(f"arc of {abs(t1 - t0) / HOUR:.1f} h is shorter than the minimum")
    if np.linalg.norm(r1 - r0) == 0.0:
        raise ValueError("rest-to-rest arc with identical endpoints")
    if v_guess is None:
        candidates = [lambert(r0, r1, abs(t1 - t0), sys.mu, lw)[0] for lw in (False, True)]
        if t1 < t0:
            candidates = [-lambert(r1, r0, t0 - t1, sys.mu, lw)[1] for lw in (False, True)]
    else:
        candidates = [np.asarray(v_guess, float)]
    best = None
    for guess in candidates:
        try:
            sol = _shoot(r0, r1, t0, t1, guess, sys, sc, tol, max_iter, opts)
        except BvpError as err:
            if best is None or (isinstance(best, BvpError) and err.residual < best.residual):
                best = err
            continue
        if best is None or isinstance(best, BvpError) or np.linalg.norm(sol[0]) < np.linalg.norm(best[0]):
            best = sol
    if isinstance(best, BvpError):
        raise best
    return best


def _shoot(r0, r1, t0, t1, v0, sys, sc, tol, max_iter, opts):
    def miss(v):
        end, stm = dyn.propagate_with_stm(StateVector(r0, v, t0), t1, sys, sc, opts)
        return end.r - r1, end.v, stm

    v = v0.copy()
    try:
        res, v_end, stm = miss(v)
    except dyn.PropagationError as err:
        raise BvpError(f"initial guess propagation failed: {err}") from err
    err_norm = np.linalg.norm(res)
    for _ in range(max_iter):
        if err_norm < 1e-6:
            break
        jac = stm.rv
        if np.linalg.cond(jac) > 1e12:
            raise ConditioningError("position/velocity STM block is near singular", err_norm)
        step = -np.linalg.solve(jac, res)
        scale = 1.0
        improved = False
        for _ in range(12):
            trial = v + scale * step
            try:
                t_res, t_vend, t_stm = miss(trial)
            except dyn.PropagationError:
                scale *= 0.5
                continue
            if np.linalg.norm(t_res) < err_norm:
                v, res, v_end, stm = trial, t_res, t_vend, t_stm
                improved = True
                break
            scale *= 0.5
        new_norm = np.linalg.norm(res)
        if not improved or (err_norm < tol and new_norm > 0.5 * err_norm):
            err_norm = new_norm
            break
        err_norm = new_norm
    if err_norm >= tol:
        raise BvpError(f"shooting did not converge, miss {err_norm:.3g} m", err_norm)
    return v, v_end


@dataclass(eq=False)
class ManeuverNode:
    epoch: float
    position: np.ndarray
    dv: np.ndarray = field(default_factory=lambda: np.zeros(3))
    commanded: bool = True  # False for zero-magnitude pass-through nodes


@dataclass(eq=False)
class Arc:
    start: ManeuverNode
    end_epoch: float
    end_position: np.ndarray
    v0: np.ndarray  # post-maneuver velocity at start
    v1: np.ndarray  # arrival velocity
    keypoint: KeyPoint | None = None

    @property
    def duration(self):
        return (self.end_epoch - self.start.epoch) / DAY

    @property
    def start_state(self):
        return StateVector(self.start.position, self.v0, self.start.epoch)


@dataclass(eq=False)
class TrajectoryPlan:
    arcs: list
    option_label: str = "custom"
    loop: bool = True

    @property
    def nodes(self):
        return [a.start for a in self.arcs]

    @property
    def maneuver_nodes(self):
        return [n for n in self.nodes if n.commanded]

    @property
    def pattern(self):
        """Durations [days] between consecutive commanded maneuvers."""
        epochs = [n.epoch for n in self.maneuver_nodes] + [self.end_epoch]
        return [round((b - a) / DAY, 9) for a, b in zip(epochs, epochs[1:])]

    @property
    def start_epoch(self):
        return self.arcs[0].start.epoch

    @property
    def end_epoch(self):
        return self.arcs[-1].end_epoch

    @property
    def keypoints(self):
        return [a.keypoint for a in self.arcs if a.keypoint is not None]

    @property
    def total_dv(self):
        return plan_total_dv(self)

    def arc_index_at(self, t):
        for k, arc in enumerate(self.arcs):
            if arc.start.epoch <= t <= arc.end_epoch:
                return k
        raise ValueError(f"epoch {t} outside the plan")

    def state_at(self, t, sys, sc):
        arc = self.arcs[self.arc_index_at(t)]
        return dyn.propagate(arc.start_state, t, sys, sc)

    def sample(self, sys, sc, step=HOUR):
        """Dense nominal samples over the whole plan.

        Returns ``(t, y, arc_index)``; node epochs appear once, with the
        post-maneuver state.
        """
        ts, ys, idx = [], [], []
        for k, arc in enumerate(self.arcs):
            tr = dyn.trajectory(arc.start_state, arc.end_epoch, sys, sc, step)
            keep = slice(None) if k == len(self.arcs) - 1 else slice(None, -1)
            ts.append(tr.t[keep])
            ys.append(tr.y[keep])
            idx.append(np.full(len(tr.t[keep]), k))
        return np.concatenate(ts), np.concatenate(ys), np.concatenate(idx)


@dataclass
class NodeSpec:
    """Input description of a node: epoch, position and whether it is commanded."""

    epoch: float
    position: np.ndarray | None = None
    commanded: bool = True
    v_guess: np.ndarray | None = None


def build_plan(nodes, sys, sc, end_epoch=None, loop=True, keypoints=(), option_label="custom",
               opts=dyn.DEFAULT_OPTIONS):
    """Solve every ballistic leg and patch the maneuvers.

    ``nodes`` is an ordered list of :class:`NodeSpec`.  For loop plans the
    last leg returns to the first node at ``end_epoch`` and the first node
    carries the closure maneuver.  Pass-through nodes (``commanded=False``)
    split a leg without a maneuver; their positions are taken from the
    solved leg.
    """
    nodes = list(nodes)
    if not nodes or not nodes[0].commanded:
        raise DesignError("the first node must be a commanded maneuver")
    if loop:
        if end_epoch is None:
            raise DesignError("loop plans need an end epoch")
        final = NodeSpec(end_epoch, np.asarray(nodes[0].position, float))
    else:
        final = nodes.pop()
    epochs = [n.epoch for n in nodes] + [final.epoch]
    if any(b <= a for a, b in zip(epochs, epochs[1:])):
        raise DesignError("node epochs must be strictly increasing")
    commanded = [k for k, n in enumerate(nodes) if n.commanded] + [len(nodes)]
    short = [(k, (epochs[b] - epochs[a]) / HOUR) for k, (a, b) in enumerate(zip(commanded, commanded[1:]))
             if epochs[b] - epochs[a] < MIN_ARC]
    if short:
        raise DesignError("maneuvers closer than 48 h: " + ", ".join(
            f"leg {k} ({h:.1f} h)" for k, h in short))

    all_nodes = nodes + [final]
    arcs = []
    for leg, (a, b) in enumerate(zip(commanded, commanded[1:])):
        start, stop = all_nodes[a], all_nodes[b]
        try:
            v0, v1 = solve_arc(start.position, stop.position, start.epoch, stop.epoch, sys, sc,
                               v_guess=start.v_guess, opts=opts)
        except BvpError as err:
            err.arc_index = leg
            raise
        state = StateVector(start.position, v0, start.epoch)
        for k in range(a, b):
            node = ManeuverNode(all_nodes[k].epoch, state.r.copy(), commanded=all_nodes[k].commanded)
            if k + 1 < b:
                nxt = dyn.propagate(state, all_nodes[k + 1].epoch, sys, sc, opts)
            else:
                nxt = StateVector(np.asarray(stop.position, float), v1, stop.epoch)
            arcs.append(Arc(node, nxt.epoch, nxt.r.copy(), state.v.copy(), nxt.v.copy()))
            state = nxt

    for j in range(1, len(arcs)):
        if arcs[j].start.commanded:
            arcs[j].start.dv = arcs[j].v0 - arcs[j - 1].v1
    if loop:
        arcs[0].start.dv = arcs[0].v0 - arcs[-1].v1
    for kp in keypoints:
        arc = next((a for a in arcs if a.start.epoch <= kp.epoch <= a.end_epoch), None)
        if arc is None:
            raise DesignError(f"key point at {kp.epoch} s lies outside the plan")
        arc.keypoint = kp
    return TrajectoryPlan(arcs, option_label, loop)


def plan_total_dv(plan):
    return float(sum(np.linalg.norm(n.dv) for n in plan.nodes))


@dataclass
class Constraints:
    min_arc: float = MIN_ARC
    keypoint_distance: tuple = KEYPOINT_DISTANCE_BAND
    keypoint_phase: tuple = KEYPOINT_PHASE_BANDS
    nir_saturation: float = NIR_SATURATION_RANGE
    collision_radius_d1: float = 400.0
    collision_radius_d2: float = 100.0
    day_side_limit: float = 90.0
    sample_step: float = 600.0


@dataclass
class Violation:
    kind: str
    message: str
    arc_index: int | None = None
    epoch: float | None = None
    hard: bool = True

    def to_dict(self):
        return {"kind": self.kind, "message": self.message, "arc_index": self.arc_index,
                "epoch": self.epoch, "hard": self.hard}


@dataclass
class ConstraintReport:
    violations: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    min_range: dict = field(default_factory=dict)
    max_phase_d1: float = 0.0
    keypoints: list = field(default_factory=list)

    @property
    def ok(self):
        return not self.violations

    def to_dict(self):
        return {"ok": self.ok,
                "violations": [v.to_dict() for v in self.violations],
                "warnings": [v.to_dict() for v in self.warnings],
                "min_range": self.min_range, "max_phase_d1": self.max_phase_d1,
                "keypoints": self.keypoints}


def _in_bands(x, bands):
    return any(lo <= x <= hi for lo, hi in bands)


def validate_plan(plan, sys, sc, constraints=None):
    """Check a built plan against the operational and science constraints.

    Never raises on a violation; everything found is listed in the report.
    """
    c = constraints or Constraints()
    report = ConstraintReport()
    man = plan.maneuver_nodes
    epochs = [n.epoch for n in man] + [plan.end_epoch]
    for k, (a, b) in enumerate(zip(epochs, epochs[1:])):
        if b - a < c.min_arc:
            report.violations.append(Violation(
                "min_arc", f"maneuvers {k} and {k + 1} are {(b - a) / HOUR:.1f} h apart", k, a))

    t, y, idx = plan.sample(sys, sc, c.sample_step)
    d1 = np.empty(len(t))
    d2 = np.empty(len(t))
    ph1 = np.empty(len(t))
    for i, (ti, yi) in enumerate(zip(t, y)):
        d1[i], d2[i] = dyn.body_ranges(yi[:3], ti, sys)
        ph1[i] = dyn.phase_angle(yi[:3], ti, Body.D1, sys)
    report.min_range = {"D1": float(d1.min()), "D2": float(d2.min())}
    report.max_phase_d1 = float(ph1.max())

    night = ph1 >= c.day_side_limit
    for k in np.unique(idx[night]):
        first = np.argmax(night & (idx == k))
        report.violations.append(Violation(
            "day_side", f"arc {k} enters the night side (phase {ph1[first]:.1f} deg wrt D1)",
            int(k), float(t[first])))
    for name, rng, radius in (("D1", d1, c.collision_radius_d1), ("D2", d2, c.collision_radius_d2)):
        if rng.min() < radius:
            i = int(np.argmin(rng))
            report.violations.append(Violation(
                "collision", f"range to {name} {rng[i]:.0f} m below {radius:.0f} m",
                int(idx[i]), float(t[i])))
    sat = d1 < c.nir_saturation
    for k in np.unique(idx[sat]):
        first = np.argmax(sat & (idx == k))
        report.warnings.append(Violation(
            "nir_saturation", f"arc {k} passes {d1[sat & (idx == k)].min():.0f} m from D1",
            int(k), float(t[first]), hard=False))

    for k, arc in enumerate(plan.arcs):
        kp = arc.keypoint
        if kp is None:
            continue
        state = dyn.propagate(arc.start_state, kp.epoch, sys, sc)
        rb = dyn.body_position(kp.target, kp.epoch, sys)
        dist = float(np.linalg.norm(state.r - rb))
        phase = dyn.phase_angle(state.r, kp.epoch, kp.target, sys)
        ok = (c.keypoint_distance[0] <= dist <= c.keypoint_distance[1]
              and _in_bands(phase, c.keypoint_phase))
        report.keypoints.append({"arc_index": k, "epoch": kp.epoch, "target": Body(kp.target).value,
                                 "distance": dist, "phase_angle": phase, "ok": ok})
        if not ok:
            report.violations.append(Violation(
                "keypoint", f"key point of arc {k}: {dist:.0f} m, {phase:.1f} deg outside the bands",
                k, kp.epoch))
    return report


def plan_to_dict(plan):
    return {
        "option": plan.option_label,
        "loop": plan.loop,
        "pattern_days": plan.pattern,
        "total_dv": plan.total_dv,
        "end_epoch": plan.end_epoch,
        "nodes": [{"epoch": n.epoch, "position": n.position.tolist(), "dv": n.dv.tolist(),
                   "dv_norm": float(np.linalg.norm(n.dv)), "commanded": n.commanded}
                  for n in plan.nodes],
        "arcs": [{"start_epoch": a.start.epoch, "end_epoch": a.end_epoch,
                  "duration_days": a.duration, "v0": a.v0.tolist(), "v1": a.v1.tolist(),
                  "end_position": a.end_position.tolist(),
                  "keypoint": None if a.keypoint is None else a.keypoint.to_dict()}
                 for a in plan.arcs],
    }


def write_plan(plan, path):
    with open(path, "w") as fh:
        json.dump(plan_to_dict(plan), fh, indent=2)
        fh.write("\n")


def plan_from_dict(data):
    """Rebuild a plan from :func:`plan_to_dict` output without re-solving."""
    arcs = []
    for node, arc in zip(data["nodes"], data["arcs"]):
        kp = arc["keypoint"]
        keypoint = None if kp is None else KeyPoint(
            kp["epoch"], Body(kp["target"]), kp["distance"], kp["phase_angle"], np.array(kp["position"]))
        arcs.append(Arc(ManeuverNode(node["epoch"], np.array(node["position"]), np.array(node["dv"]),
                                     node["commanded"]),
                        arc["end_epoch"], np.array(arc["end_position"]), np.array(arc["v0"]),
                        np.array(arc["v1"]), keypoint))
    return TrajectoryPlan(arcs, data["option"], data["loop"])


TRAJECTORY_COLUMNS = ["epoch", "frame", "x", "y", "z", "vx", "vy", "vz", "range_d1", "range_d2",
                      "phase_d1", "phase_d2", "arc_index"]


def trajectory_rows(plan, sys, sc, step=HOUR, frame=dyn.FrameId.ECLIP):
    """Dense-output rows for CSV export."""
    t, y, idx = plan.sample(sys, sc, step)
    for ti, yi, k in zip(t, y, idx):
        state = StateVector.from_y(yi, ti)
        d1, d2 = dyn.body_ranges(state.r, ti, sys)
        p1 = dyn.phase_angle(state.r, ti, Body.D1, sys)
        p2 = dyn.phase_angle(state.r, ti, Body.D2, sys)
        if frame is dyn.FrameId.SUN_SOUTH:
            state = dyn.to_sun_south_frame(state, sys)
        yield [ti, frame.value, *state.r, *state.v, d1, d2, p1, p2, int(k)]


def waypoint_position(epoch, range_, azimuth, elevation, sys):
    """Barycentric position from Sun-South spherical coordinates.

    ``azimuth`` is measured from the Sun direction (+x) toward +y and
    ``elevation`` toward +z, both in degrees.
    """
    az, el = math.radians(azimuth), math.radians(elevation)
    r_ss = range_ * np.array([math.cos(el) * math.cos(az), math.cos(el) * math.sin(az), math.sin(el)])
    return dyn.sun_south_rotation(epoch, sys).T @ r_ss


def construct_nodes(layout, sys, sc, opts=dyn.DEFAULT_OPTIONS):
    """Turn a geometric layout description into node specs and key points.

    ``layout`` is a mapping with ``start_epoch`` [s], ``end_day`` and a list
    of ``nodes``.  Each node gives its ``day`` offset and one of

    * ``waypoint: {range, azimuth, elevation}`` in the Sun-South frame,
    * ``after_keypoint: {target, distance, phase, azimuth, lead_hours}``:
      the leg from the previous commanded node is solved to pass through a
      key point ``lead_hours`` before this node, and the node is wherever
      that ballistic leg arrives,
    * ``pass_through: true``: a zero-magnitude node on the next leg.

    A commanded node may add ``via: {day, range, azimuth, elevation}``; the
    leg leaving it is then seeded with the arc that reaches that point, which
    selects the branch that sweeps across the day side.

    Returns ``(node_specs, keypoints)`` ready for :func:`build_plan`.
    """
    t_start = float(layout.get("start_epoch", 0.0))
    specs, keypoints = [], []
    for k, item in enumerate(layout["nodes"]):
        epoch = t_start + float(item["day"]) * DAY
        if item.get("pass_through"):
            specs.append(NodeSpec(epoch, None, commanded=False))
        elif "waypoint" in item:
            w = item["waypoint"]
            pos = waypoint_position(epoch, w["range"], w["azimuth"], w.get("elevation", 0.0), sys)
            specs.append(NodeSpec(epoch, pos))
        elif "after_keypoint" in item:
            kp_cfg = item["after_keypoint"]
            prev = next((s for s in reversed(specs) if s.commanded), None)
            if prev is None:
                raise DesignError(f"node {k}: a key-point leg needs a preceding commanded node")
            t_kp = epoch - float(kp_cfg.get("lead_hours", 0.0)) * HOUR
            kp = make_keypoint(t_kp, kp_cfg.get("target", "D2"), kp_cfg["distance"], kp_cfg["phase"],
                               kp_cfg.get("azimuth", 0.0), sys)
            v0, _ = solve_arc(prev.position, kp.position, prev.epoch, t_kp, sys, sc,
                              v_guess=prev.v_guess, min_duration=0.0, opts=opts)
            prev.v_guess = v0
            arrival = dyn.propagate(StateVector(prev.position, v0, prev.epoch), epoch, sys, sc, opts)
            specs.append(NodeSpec(epoch, arrival.r))
            keypoints.append(kp)
        else:
            raise DesignError(f"node {k}: unknown node kind")
        if "via" in item:
            v = item["via"]
            t_via = t_start + float(v["day"]) * DAY
            r_via = waypoint_position(t_via, v["range"], v["azimuth"], v.get("elevation", 0.0), sys)
            node = specs[-1]
            seed = lambert(node.position, r_via, t_via - node.epoch, sys.mu)[0]
            node.v_guess, _ = solve_arc(node.position, r_via, node.epoch, t_via, sys, sc,
                                        v_guess=seed, min_duration=0.0, opts=opts)
    end_epoch = t_start + float(layout["end_day"]) * DAY
    return specs, keypoints, end_epoch


def plan_from_layout(layout, sys, sc, opts=dyn.DEFAULT_OPTIONS):
    specs, keypoints, end_epoch = construct_nodes(layout, sys, sc, opts)
    return build_plan(specs, sys, sc, end_epoch=end_epoch, loop=layout.get("loop", True),
                      keypoints=keypoints, option_label=layout.get("option", "custom"), opts=opts)


def reference_layout(option):
    """Shipped layout for option ``A`` or ``B``."""
    name = {"A": "option_a.yaml", "B": "option_b.yaml"}.get(str(option).upper())
    if name is None:
        raise ValueError(f"no reference layout for option {option!r}")
    return yaml.safe_load(resources.files("crpnav").joinpath("data", name).read_text())
