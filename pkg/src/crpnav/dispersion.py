"""Monte Carlo dispersion analysis with differential-guidance corrections."""
from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from crpnav import _kernels as K
from crpnav import dynamics as dyn
from crpnav import knowledge as kn
from crpnav.dynamics import DEFAULT_OPTIONS, HOUR, Stm, StateVector
from crpnav.measurements import named_stream


class DispersionError(Exception):
    pass


class GuidanceError(DispersionError):
    def __init__(self, message, cond=None):
        super().__init__(message)
        self.cond = cond


@dataclass(frozen=True)
class GuidanceConfig:
    q: float | None = None  # None: (1 / leg duration [s])^2
    apply_final_impulse: bool = False
    max_cond: float = 1e12

    def __post_init__(self):
        if self.q is not None and self.q < 0:
            raise ValueError("q must be non-negative")

    def weight(self, duration=None):
        if self.q is not None:
            return float(self.q)
        if duration is None or duration <= 0:
            raise ValueError("a positive leg duration is needed for the default weight")
        return 1.0 / duration ** 2


def differential_guidance(dr_est, dv_est, stm, cfg=GuidanceConfig(), duration=None):
    """Correction impulse that targets the nominal state at the next node.

    Minimises the weighted propagated position and velocity deviation:
    ``dv = -(Prv' Prv + q Pvv' Pvv)^-1 (Prv' Prr + q Pvv' Pvr) dr - dv_est``.
    """
    stm = stm if isinstance(stm, Stm) else Stm(np.asarray(stm, float))
    q = cfg.weight(duration)
    A = stm.rv.T @ stm.rv + q * stm.vv.T @ stm.vv
    B = stm.rv.T @ stm.rr + q * stm.vv.T @ stm.vr
    cond = np.linalg.cond(A)
    if not np.isfinite(cond) or cond > cfg.max_cond:
        raise GuidanceError(f"guidance normal matrix is ill-conditioned (cond {cond:.3e})", cond)
    return -np.linalg.solve(A, B @ np.asarray(dr_est, float)) - np.asarray(dv_est, float)


@dataclass(frozen=True)
class DispersionConfig:
    n_samples: int = 500
    seed: int = 0
    step: float = HOUR
    gm_step: float = HOUR
    collision_radius_d1: float = 400.0
    collision_radius_d2: float = 100.0
    escape_range: float = 30000.0
    collision_stop: float = 0.01
    early_stop: bool = True
    guidance: GuidanceConfig = field(default_factory=GuidanceConfig)
    opts: dyn.PropagationOptions = DEFAULT_OPTIONS

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("n_samples must be positive")
        if self.step <= 0 or self.gm_step <= 0:
            raise ValueError("steps must be positive")


def default_pd0(plan, budget, P_K0=None):
    """Initial dispersion: knowledge plus execution error of the first impulse."""
    P = kn.default_pk0() if P_K0 is None else np.array(P_K0, float)
    P = P.copy()
    P[3:, 3:] += kn.execution_covariance(plan.arcs[0].start.dv, budget.thrust_mag_dispersion,
                                         budget.thrust_dir_dispersion)
    return P


def _draw(rng, P):
    """Zero-mean Gaussian draw; exactly zero for a zero covariance."""
    w, V = np.linalg.eigh(0.5 * (P + P.T))
    return V @ (np.sqrt(np.clip(w, 0.0, None)) * rng.standard_normal(len(w)))


def gm_realization(seed, t0, t1, budget, step=HOUR):
    """Exact Ornstein-Uhlenbeck samples on a uniform grid.

    Columns: SRP scale (x, y, z) then residual acceleration (x, y, z).
    """
    n = int(math.ceil((t1 - t0) / step)) + 2
    rng = named_stream(seed, "gm")
    z = rng.standard_normal((n, 6))
    out = np.empty((n, 6))
    sig = np.array([budget.srp_sigma] * 3 + [budget.resid_sigma] * 3)
    tau = np.array([budget.srp_tau] * 3 + [budget.resid_tau] * 3)
    a = np.exp(-step / tau)
    b = sig * np.sqrt(1.0 - a ** 2)
    out[0] = sig * z[0]
    for k in range(1, n):
        out[k] = a * out[k - 1] + b * z[k]
    return out


@dataclass
class Termination:
    kind: str  # collision, escape or propagation
    epoch: float
    detail: str = ""


@dataclass
class SampleRun:
    seed: int
    t: np.ndarray
    r: np.ndarray
    deviation: np.ndarray
    corrections: list
    termination: Termination | None = None

    @property
    def dispersion_series(self):
        return np.linalg.norm(self.deviation, axis=1)

    @property
    def nav_cost(self):
        return float(sum(np.linalg.norm(dv) for _, dv in self.corrections))

    @property
    def truth_trajectory(self):
        return self.t, self.r


@dataclass(eq=False)
class _Leg:
    """One plan arc; the correction at its end node targets the next commanded node."""

    start: float
    end: float
    cot: float  # cut-off time of the end node
    phi_cot: np.ndarray  # nominal transition COT -> end
    phi_next: np.ndarray | None  # nominal transition end -> target node
    next_duration: float | None
    cot_cov: np.ndarray
    cuts: list  # (node epoch, COT) pairs whose COT falls inside this arc
    nominal_dv: np.ndarray  # planned impulse at the end node
    final: bool
    ref_cot: np.ndarray | None = None


@dataclass(eq=False)
class Reference:
    """Everything shared by the samples of one run."""

    plan: object
    sys: object
    sc: object
    budget: kn.UncertaintyBudget
    cfg: DispersionConfig
    P_D0: np.ndarray
    legs: list
    grid: np.ndarray
    y: np.ndarray  # reference (unperturbed, open-loop) states on the grid
    nominal_range: np.ndarray
    params: np.ndarray


def _nominal_stm(plan, t0, t1, sys, sc, opts):
    phi = np.eye(6)
    for arc in plan.arcs:
        a, b = max(t0, arc.start.epoch), min(t1, arc.end_epoch)
        if b <= a:
            continue
        start = arc.start_state if a == arc.start.epoch else dyn.propagate(arc.start_state, a, sys, sc, opts)
        _, stm = dyn.propagate_with_stm(start, b, sys, sc, opts)
        phi = stm.phi @ phi
    return phi


def _grid(plan, step):
    pts = [plan.start_epoch]
    for arc in plan.arcs:
        pts.extend(dyn.sample_grid(arc.start.epoch, arc.end_epoch, step)[1:])
    return np.array(pts)


def prepare(plan, knowledge, sys, sc, budget=kn.UncertaintyBudget(), cfg=DispersionConfig(), P_D0=None):
    """Precompute the leg geometry, nominal transitions and reference run."""
    if P_D0 is None:
        P_D0 = default_pd0(plan, budget)
    commanded = [n.epoch for n in plan.maneuver_nodes[1:]] + [plan.end_epoch]
    cot_of = {}
    for arc in plan.arcs:
        node = knowledge.node_at(arc.end_epoch)
        if node.cot is None or node.cot_covariance is None:
            raise DispersionError(f"no cut-off knowledge for the node at t={arc.end_epoch:.0f}")
        cot_of[arc.end_epoch] = (node.cot, node.cot_covariance)
    legs = []
    for k, arc in enumerate(plan.arcs):
        t0, t1 = arc.start.epoch, arc.end_epoch
        cot, cov = cot_of[t1]
        cuts = [(e, c) for e, (c, _) in cot_of.items() if t0 < c <= t1]
        phi_cot = _nominal_stm(plan, cot, t1, sys, sc, cfg.opts)
        final = k == len(plan.arcs) - 1
        if final:
            legs.append(_Leg(t0, t1, cot, phi_cot, None, None, cov, cuts, np.zeros(3), True))
            continue
        target = next(e for e in commanded if e > t1)
        legs.append(_Leg(t0, t1, cot, phi_cot, _nominal_stm(plan, t1, target, sys, sc, cfg.opts),
                         target - t1, cov, cuts, plan.arcs[k + 1].start.dv, False))
    grid = _grid(plan, cfg.step)
    ref = Reference(plan, sys, sc, budget, cfg, np.asarray(P_D0, float), legs, grid,
                    np.zeros((len(grid), 6)), np.zeros(len(grid)), dyn.pack_params(sys, sc))
    run = _open_loop(ref)
    if run.termination is not None:
        raise DispersionError(f"reference trajectory terminated: {run.termination}")
    ref.y = run.y
    ref.nominal_range = np.array([min(dyn.body_ranges(y[:3], t, sys)) for t, y in zip(grid, ref.y)])
    for leg in legs:
        leg.ref_cot = run.cot_states[leg.end]
    return ref


@dataclass(eq=False)
class _State:
    seed: int
    y: np.ndarray
    epoch: float
    t: list
    ys: list
    corrections: list
    termination: Termination | None = None
    cot_states: dict = field(default_factory=dict)


def _events(ref):
    p = ref.params
    c = ref.cfg

    def d1(t, y, *args):
        r1, _ = K.body_positions(t, p)
        return math.dist(y[:3], r1) - c.collision_radius_d1

    def d2(t, y, *args):
        _, r2 = K.body_positions(t, p)
        return math.dist(y[:3], r2) - c.collision_radius_d2

    def esc(t, y, *args):
        return c.escape_range - math.sqrt(y[0] ** 2 + y[1] ** 2 + y[2] ** 2)

    for f in (d1, d2, esc):
        f.terminal = True
        f.direction = -1
    return [d1, d2, esc]


_EVENT_KIND = (("collision", "D1"), ("collision", "D2"), ("escape", ""))


def _integrate(ref, st, t1, extra, dmu, gm):
    """Propagate the sample to ``t1`` storing grid points; returns states at ``extra`` epochs."""
    g = ref.grid
    t_grid = g[(g > st.epoch) & (g <= t1)]
    t_eval = np.unique(np.concatenate([t_grid, extra]))
    opts = ref.cfg.opts
    args = (ref.params, dmu, ref.plan.start_epoch, ref.cfg.gm_step, gm)
    sol = solve_ivp(K.rhs_truth, (st.epoch, t1), st.y, method=opts.method, rtol=opts.rtol,
                    atol=opts.atol(), t_eval=t_eval, events=_events(ref), args=args)
    ts = np.asarray(sol.t, float)  # empty lists when an event fires before any output epoch
    ys = np.asarray(sol.y, float).reshape(6, -1)
    keep = np.isin(ts, t_grid)
    st.t.extend(ts[keep])
    st.ys.extend(ys.T[keep])
    found = {float(t): ys[:, k].copy() for k, t in enumerate(ts)}
    if sol.status == 1:
        for k, (kind, body) in enumerate(_EVENT_KIND):
            if sol.t_events[k].size:
                st.termination = Termination(kind, float(sol.t_events[k][0]), body)
                break
        return None
    if sol.status != 0:
        st.termination = Termination("propagation", float(ts[-1]) if ts.size else st.epoch, sol.message)
        return None
    st.y = found[float(t1)]
    st.epoch = float(t1)
    return [found[float(t)] for t in extra]


def _apply(ref, st, dv, rng, perturbed=True):
    st.y = st.y.copy()
    st.y[3:] += dv
    if perturbed:
        b = ref.budget
        st.y[3:] += _draw(rng, kn.execution_covariance(dv, b.thrust_mag_dispersion, b.thrust_dir_dispersion))


def _advance(ref, st, j, dmu, gm, perturbed=True):
    """Fly arc ``j`` and perform the maneuver and correction at its end node."""
    leg = ref.legs[j]
    extra = np.array([c for _, c in leg.cuts] + [leg.end])
    got = _integrate(ref, st, leg.end, extra, dmu, gm)
    if got is None:
        return st
    for (node, _), y in zip(leg.cuts, got):
        st.cot_states[node] = y
    if leg.final and not ref.cfg.guidance.apply_final_impulse:
        return st
    correction = np.zeros(3)
    if perturbed:
        est = st.cot_states[leg.end] - leg.ref_cot + _draw(named_stream(st.seed, f"od/{j}"), leg.cot_cov)
        est = leg.phi_cot @ est
        if leg.final:
            correction = -est[3:]
        else:
            try:
                correction = differential_guidance(est[:3], est[3:], leg.phi_next, ref.cfg.guidance,
                                                   leg.next_duration)
            except GuidanceError:
                pass
        st.corrections.append((leg.end, correction))
    _apply(ref, st, leg.nominal_dv + correction, named_stream(st.seed, f"exec/{j}"), perturbed)
    return st


def _start_state(ref, seed, perturbed):
    arc = ref.plan.arcs[0]
    y0 = arc.start_state.y.copy()
    if perturbed:
        y0 = y0 + _draw(named_stream(seed, "initial"), ref.P_D0)
    return _State(seed, y0, arc.start.epoch, [arc.start.epoch], [y0.copy()], [])


def _gm_rows(ref):
    return int(math.ceil((ref.plan.end_epoch - ref.plan.start_epoch) / ref.cfg.gm_step)) + 2


def _perturbations(ref, seed):
    dmu = ref.budget.sigma_mu * named_stream(seed, "mu").standard_normal()
    gm = gm_realization(seed, ref.plan.start_epoch, ref.plan.end_epoch, ref.budget, ref.cfg.gm_step)
    return dmu, gm


@dataclass(eq=False)
class _OpenLoop:
    y: np.ndarray
    cot_states: dict
    termination: Termination | None


def _open_loop(ref):
    st = _start_state(ref, 0, False)
    for j in range(len(ref.legs)):
        _advance(ref, st, j, 0.0, np.zeros((_gm_rows(ref), 6)), perturbed=False)
        if st.termination is not None:
            break
    return _OpenLoop(np.array(st.ys), st.cot_states, st.termination)


def _to_run(st):
    t = np.array(st.t)
    ys = np.array(st.ys).reshape(-1, 6)
    return t, ys


def _finish(ref, st):
    t, ys = _to_run(st)
    n = len(t)
    dev = ys[:, :3] - ref.y[:n, :3]
    return SampleRun(st.seed, t, ys[:, :3].copy(), dev, st.corrections, st.termination)


def simulate_sample(ref, seed, legs=None):
    """Fly one Monte Carlo sample through the plan (or its first ``legs`` legs)."""
    dmu, gm = _perturbations(ref, seed)
    st = _start_state(ref, seed, True)
    for j in range(len(ref.legs) if legs is None else legs):
        _advance(ref, st, j, dmu, gm)
        if st.termination is not None:
            break
    return _finish(ref, st)


_WORKER_REF = None


def _init_worker(ref):
    global _WORKER_REF
    _WORKER_REF = ref


def _worker_leg(task):
    st, j = task
    dmu, gm = _perturbations(_WORKER_REF, st.seed)
    return _advance(_WORKER_REF, st, j, dmu, gm)


@dataclass(eq=False)
class DispersionResult:
    n_samples: int
    epoch: np.ndarray
    abs_sigma: np.ndarray
    rel_sigma: np.ndarray
    nominal_range: np.ndarray
    n_alive: np.ndarray
    is_maneuver: np.ndarray
    nav_cost_samples: np.ndarray
    collision_fraction: float
    escape_fraction: float
    stopped_early: bool
    stop_epoch: float
    terminations: list
    seeds: list
    header: dict = field(default_factory=dict)

    @property
    def peak_relative(self):
        return float(np.nanmax(self.rel_sigma)) if self.rel_sigma.size else 0.0

    def peak_relative_before(self, epoch):
        m = self.epoch <= epoch
        return float(np.nanmax(self.rel_sigma[m]))

    def summary(self):
        costs = self.nav_cost_samples
        pct = {f"p{p}": float(np.percentile(costs, p)) if costs.size else 0.0 for p in (50, 95, 99)}
        return {"n_samples": self.n_samples, "collision_fraction": self.collision_fraction,
                "escape_fraction": self.escape_fraction, "stopped_early": self.stopped_early,
                "stop_epoch": self.stop_epoch, "peak_relative_dispersion": self.peak_relative,
                "nav_cost": pct, "terminations": [asdict(t) | {"seed": s} for s, t in self.terminations],
                "header": self.header}


def _sample_seeds(master, n):
    return [int(s) for s in named_stream(master, "samples").integers(0, 2 ** 62, n)]


def _aggregate(ref, states, stop_epoch, stopped):
    n_grid = int(np.searchsorted(ref.grid, stop_epoch, side="right"))
    grid = ref.grid[:n_grid]
    dev = np.full((len(states), n_grid, 3), np.nan)
    for i, st in enumerate(states):
        t, ys = _to_run(st)
        m = min(len(t), n_grid)
        dev[i, :m] = ys[:m, :3] - ref.y[:m, :3]
    alive = np.sum(~np.isnan(dev[:, :, 0]), axis=0)
    abs_sigma = np.full(n_grid, np.nan)
    for k in range(n_grid):
        d = dev[~np.isnan(dev[:, k, 0]), k]
        if len(d) >= 2:
            abs_sigma[k] = math.sqrt(max(np.trace(np.atleast_2d(np.cov(d.T))), 0.0))
        elif len(d) == 1:
            abs_sigma[k] = 0.0
    rng_nom = ref.nominal_range[:n_grid]
    man = np.isin(grid, [n.epoch for n in ref.plan.maneuver_nodes])
    n = len(states)
    term = [(st.seed, st.termination) for st in states if st.termination is not None]
    coll = sum(1 for _, t in term if t.kind == "collision") / n
    esc = sum(1 for _, t in term if t.kind == "escape") / n
    cost = np.array([sum(float(np.linalg.norm(dv)) for _, dv in st.corrections) for st in states])
    return DispersionResult(n, grid, abs_sigma, 100.0 * abs_sigma / rng_nom, rng_nom, alive, man, cost,
                            coll, esc, stopped, float(stop_epoch), term, [st.seed for st in states])


def run_dispersion(ref, n_samples=None, seed=None, workers=1):
    """Monte Carlo over the plan, leg by leg.

    All samples fly each commanded leg before the next one starts, so the run
    can stop at the first node where the collision fraction exceeds the
    configured threshold.  Per-sample randomness depends only on the sample
    seed, which makes the result independent of the worker count.
    """
    cfg = ref.cfg
    n = cfg.n_samples if n_samples is None else int(n_samples)
    if n < 2:
        raise ValueError("at least two samples are needed")
    master = cfg.seed if seed is None else int(seed)
    seeds = _sample_seeds(master, n)
    states = []
    for s in seeds:
        st = _start_state(ref, s, True)
        states.append(st)
    stop_epoch, stopped = ref.plan.end_epoch, False
    pool = ProcessPoolExecutor(workers, initializer=_init_worker, initargs=(ref,)) if workers > 1 else None
    try:
        for j, leg in enumerate(ref.legs):
            live = [i for i, st in enumerate(states) if st.termination is None]
            tasks = [(states[i], j) for i in live]
            if pool is None:
                _init_worker(ref)
                done = [_worker_leg(t) for t in tasks]
            else:
                done = list(pool.map(_worker_leg, tasks, chunksize=max(1, len(tasks) // (4 * workers))))
            for i, st in zip(live, done):
                states[i] = st
            collided = sum(1 for st in states if st.termination is not None
                           and st.termination.kind == "collision") / n
            if cfg.early_stop and collided > cfg.collision_stop and not leg.final:
                stop_epoch, stopped = leg.end, True
                break
    finally:
        if pool is not None:
            pool.shutdown()
    res = _aggregate(ref, states, stop_epoch, stopped)
    res.header = config_echo(ref, master, n)
    return res


def config_echo(ref, seed, n):
    cfg = ref.cfg
    return {"option": ref.plan.option_label, "seed": int(seed), "n_samples": int(n),
            "budget": asdict(ref.budget),
            "P_D0_sigma": [float(x) for x in np.sqrt(np.diag(ref.P_D0))],
            "guidance": asdict(cfg.guidance), "step": cfg.step, "gm_step": cfg.gm_step,
            "collision_radius_d1": cfg.collision_radius_d1, "collision_radius_d2": cfg.collision_radius_d2,
            "escape_range": cfg.escape_range, "collision_stop": cfg.collision_stop,
            "early_stop": cfg.early_stop}


def nav_cost_cdf(result):
    """Empirical CDF of per-sample navigation cost as (cost, probability) steps."""
    costs = np.sort(np.asarray(result.nav_cost_samples if hasattr(result, "nav_cost_samples") else result, float))
    if costs.size == 0:
        raise ValueError("no samples")
    values, counts = np.unique(costs, return_counts=True)
    return [(float(v), float(c) / costs.size) for v, c in zip(values, np.cumsum(counts))]


DISPERSION_COLUMNS = ["epoch", "abs_sigma", "rel_sigma_pct", "nominal_range", "n_alive", "maneuver"]


def write_dispersion_csv(result, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(DISPERSION_COLUMNS)
        for k in range(len(result.epoch)):
            w.writerow([repr(float(result.epoch[k])), repr(float(result.abs_sigma[k])),
                        repr(float(result.rel_sigma[k])), repr(float(result.nominal_range[k])),
                        int(result.n_alive[k]), int(result.is_maneuver[k])])


def write_nav_cost_csv(result, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["seed", "nav_cost"])
        for s, c in zip(result.seeds, result.nav_cost_samples):
            w.writerow([s, repr(float(c))])


def write_summary(result, path):
    with open(path, "w") as fh:
        json.dump(result.summary(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def default_workers():
    return os.cpu_count() or 1
