"""Linear covariance knowledge analysis with a Schmidt-consider filter."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np

from crpnav import dynamics as dyn
from crpnav import measurements as ms
from crpnav.dynamics import DAY, HOUR, StateVector
from crpnav.measurements import Kind

BIAS_NAMES = ("isl_range", "isl_rate", "navcam_range", "navcam_az", "navcam_el")


class KnowledgeError(Exception):
    pass


class FilterNumericalError(KnowledgeError):
    pass


@dataclass(frozen=True)
class UncertaintyBudget:
    sigma_mu: float = 1e-4
    thrust_mag_knowledge: float = 0.0167
    thrust_dir_knowledge: float = math.radians(0.67)
    srp_sigma: float = 0.08  # fraction of the nominal SRP acceleration
    srp_tau: float = DAY
    resid_sigma: float = 5e-9
    resid_tau: float = DAY
    thrust_mag_dispersion: float = 0.05 / 3
    thrust_dir_dispersion: float = math.radians(2.0 / 3)

    def __post_init__(self):
        sigmas = (self.sigma_mu, self.thrust_mag_knowledge, self.thrust_dir_knowledge, self.srp_sigma,
                  self.resid_sigma, self.thrust_mag_dispersion, self.thrust_dir_dispersion)
        if min(sigmas) < 0:
            raise ValueError("budget sigmas must be non-negative")
        if self.srp_tau <= 0 or self.resid_tau <= 0:
            raise ValueError("correlation times must be positive")

    @classmethod
    def zero(cls):
        return cls(0.0, 0.0, 0.0, 0.0, DAY, 0.0, DAY, 0.0, 0.0)

    def scaled(self, factor):
        return replace(self, sigma_mu=self.sigma_mu * factor,
                       thrust_mag_knowledge=self.thrust_mag_knowledge * factor,
                       thrust_dir_knowledge=self.thrust_dir_knowledge * factor,
                       srp_sigma=self.srp_sigma * factor, resid_sigma=self.resid_sigma * factor,
                       thrust_mag_dispersion=self.thrust_mag_dispersion * factor,
                       thrust_dir_dispersion=self.thrust_dir_dispersion * factor)


def default_pk0(sigma_pos=100.0, sigma_vel=1e-3):
    return np.diag([sigma_pos ** 2] * 3 + [sigma_vel ** 2] * 3)


def execution_covariance(dv, sigma_mag, sigma_dir):
    """Velocity covariance of an impulse with magnitude and pointing errors.

    Magnitude error acts along the burn, pointing error equally on the two
    transverse axes.
    """
    dv = np.asarray(dv, float)
    n = np.linalg.norm(dv)
    if n == 0.0:
        return np.zeros((3, 3))
    u = dv / n
    along = np.outer(u, u)
    return (sigma_mag * n) ** 2 * along + (n * math.tan(sigma_dir)) ** 2 * (np.eye(3) - along)


@dataclass(frozen=True)
class StateLayout:
    """Index map of the filter vector: estimated block first, consider block last."""

    estimate_biases: bool = False

    @property
    def n_est(self):
        return 12 + (5 if self.estimate_biases else 0)

    @property
    def n(self):
        return 18

    @property
    def mu(self):
        return self.n_est if not self.estimate_biases else 17

    def bias(self, name):
        k = BIAS_NAMES.index(name)
        return 12 + k if self.estimate_biases else 13 + k

    @property
    def consider(self):
        return slice(self.n_est, self.n)


@dataclass(eq=False)
class FilterState:
    P: np.ndarray
    epoch: float
    layout: StateLayout = field(default_factory=StateLayout)
    x_hat: np.ndarray | None = None

    def __post_init__(self):
        if self.x_hat is None:
            self.x_hat = np.zeros(self.layout.n_est)

    @property
    def P_xx(self):
        return self.P[:self.layout.n_est, :self.layout.n_est]

    @property
    def P_xc(self):
        return self.P[:self.layout.n_est, self.layout.consider]

    @property
    def P_cc(self):
        return self.P[self.layout.consider, self.layout.consider]

    @property
    def sigma_pos(self):
        return math.sqrt(max(np.trace(self.P[:3, :3]), 0.0))

    @property
    def sigma_vel(self):
        return math.sqrt(max(np.trace(self.P[3:6, 3:6]), 0.0))

    def copy(self):
        return FilterState(self.P.copy(), self.epoch, self.layout, self.x_hat.copy())


def initial_filter(P_K0, budget, navcam, isl, layout=StateLayout(), epoch=0.0):
    sig = np.zeros(layout.n)
    sig[6:9] = budget.srp_sigma
    sig[9:12] = budget.resid_sigma
    sig[layout.mu] = budget.sigma_mu
    for name, value in zip(BIAS_NAMES, (isl.bias_range, isl.bias_rr, navcam.bias_range,
                                        navcam.bias_angle, navcam.bias_angle)):
        sig[layout.bias(name)] = value
    P = np.diag(sig ** 2)
    P[:6, :6] = np.asarray(P_K0, float)
    return FilterState(P, float(epoch), layout)


def expand_transition(M, layout):
    """Full filter transition from the 13x13 augmented dynamics matrix."""
    phi = np.eye(layout.n)
    idx = list(range(12)) + [layout.mu]
    phi[np.ix_(idx, idx)] = M
    return phi


def process_noise(dt, budget, layout):
    Q = np.zeros((layout.n, layout.n))
    q_srp = budget.srp_sigma ** 2 * (1.0 - math.exp(-2.0 * dt / budget.srp_tau))
    q_res = budget.resid_sigma ** 2 * (1.0 - math.exp(-2.0 * dt / budget.resid_tau))
    for i in range(3):
        Q[6 + i, 6 + i] = q_srp
        Q[9 + i, 9 + i] = q_res
    return Q


def _symmetrize(fs, P_cc):
    fs.P = 0.5 * (fs.P + fs.P.T)
    fs.P[fs.layout.consider, fs.layout.consider] = P_cc


def time_update(fs, to, phi, Q):
    """P <- phi P phi^T + Q; the consider block is carried through unchanged."""
    if to < fs.epoch:
        raise ValueError("time update must move forward")
    out = fs.copy()
    if to == fs.epoch:
        return out
    P_cc = fs.P_cc.copy()
    out.P = phi @ fs.P @ phi.T + Q
    out.x_hat = (phi @ np.r_[fs.x_hat, np.zeros(fs.layout.n - fs.layout.n_est)])[:fs.layout.n_est]
    out.epoch = float(to)
    _symmetrize(out, P_cc)
    return out


def schmidt_update(fs, H, sigma, residual=None):
    """Schmidt-consider measurement update in Joseph form.

    ``H`` spans the full filter vector; consider rows of the gain are zero.
    """
    H = np.atleast_2d(np.asarray(H, float))
    sigma = np.atleast_1d(np.asarray(sigma, float))
    if np.any(sigma <= 0):
        raise ValueError("measurement sigma must be positive")
    if H.shape != (len(sigma), fs.layout.n):
        raise ValueError(f"H has shape {H.shape}, expected {(len(sigma), fs.layout.n)}")
    R = np.diag(sigma ** 2)
    P_cc = fs.P_cc.copy()
    S = H @ fs.P @ H.T + R
    try:
        L = np.linalg.cholesky(S)
    except np.linalg.LinAlgError as err:
        raise FilterNumericalError(f"innovation covariance not positive (cond {np.linalg.cond(S):.2e})") from err
    PHt = fs.P @ H.T
    K = np.linalg.solve(L.T, np.linalg.solve(L, PHt.T)).T
    K[fs.layout.n_est:] = 0.0
    A = np.eye(fs.layout.n) - K @ H
    out = fs.copy()
    out.P = A @ fs.P @ A.T + K @ R @ K.T
    if residual is not None:
        full = np.r_[fs.x_hat, np.zeros(fs.layout.n - fs.layout.n_est)]
        out.x_hat = fs.x_hat + (K @ (np.atleast_1d(residual) - H @ full))[:fs.layout.n_est]
    _symmetrize(out, P_cc)
    return out


def apply_maneuver_knowledge(fs, dv, budget):
    out = fs.copy()
    out.P[3:6, 3:6] += execution_covariance(dv, budget.thrust_mag_knowledge, budget.thrust_dir_knowledge)
    return out


def full_partials(kind, state, t, sys, isl, layout):
    H6 = ms.measurement_partials(kind, state, t, sys, isl)
    H = np.zeros((H6.shape[0], layout.n))
    H[:, :6] = H6
    kind = Kind(kind)
    if kind is Kind.ISL_RANGE:
        H[0, layout.bias("isl_range")] = 1.0
    elif kind is Kind.ISL_RANGE_RATE:
        H[0, layout.bias("isl_rate")] = 1.0
    elif kind is Kind.NAVCAM_RANGE:
        H[0, layout.bias("navcam_range")] = 1.0
    else:
        H[0, layout.bias("navcam_az")] = 1.0
        H[1, layout.bias("navcam_el")] = 1.0
    return H


@dataclass
class NodeKnowledge:
    index: int
    epoch: float
    commanded: bool
    cot: float | None
    ground: np.ndarray  # 6x6 at the node, from observables up to the COT
    posteriori: np.ndarray  # 6x6 at the node, all observables, before the maneuver
    cot_covariance: np.ndarray | None  # 6x6 at the COT

    @property
    def sigma_pos(self):
        return math.sqrt(np.trace(self.ground[:3, :3]))

    @property
    def sigma_vel(self):
        return math.sqrt(np.trace(self.ground[3:, 3:]))


@dataclass
class KnowledgeTimeline:
    epoch: np.ndarray
    sigma_pos_ground: np.ndarray
    sigma_vel_ground: np.ndarray
    sigma_pos_post: np.ndarray
    sigma_vel_post: np.ndarray
    arc_index: np.ndarray
    is_maneuver: np.ndarray
    is_cot: np.ndarray
    nodes: list
    min_eig_ratio: float
    P_cc: np.ndarray
    header: dict = field(default_factory=dict)

    def node_at(self, epoch):
        return next(n for n in self.nodes if n.epoch == epoch)

    def summary(self):
        return {"header": self.header,
                "min_eig_ratio": self.min_eig_ratio,
                "maneuvers": [{"index": n.index, "epoch": n.epoch, "commanded": n.commanded,
                               "cot": n.cot, "sigma_pos": n.sigma_pos, "sigma_vel": n.sigma_vel}
                              for n in self.nodes]}


KNOWLEDGE_COLUMNS = ["epoch", "sigma_pos_ground", "sigma_vel_ground", "sigma_pos_posteriori",
                     "sigma_vel_posteriori", "arc_index", "maneuver", "cot"]


def write_knowledge_csv(tl, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(KNOWLEDGE_COLUMNS)
        for k in range(len(tl.epoch)):
            w.writerow([repr(float(tl.epoch[k])), repr(float(tl.sigma_pos_ground[k])),
                        repr(float(tl.sigma_vel_ground[k])), repr(float(tl.sigma_pos_post[k])),
                        repr(float(tl.sigma_vel_post[k])), int(tl.arc_index[k]),
                        int(tl.is_maneuver[k]), int(tl.is_cot[k])])


def _psd_ratio(P):
    tr = np.trace(P)
    return float(np.linalg.eigvalsh(P).min() / tr) if tr > 0 else 0.0


def run_knowledge(plan, schedule, sys, sc, budget=UncertaintyBudget(), P_K0=None,
                  navcam=ms.NavCamModel(), isl=ms.IslModel(), estimate_biases=False,
                  cadence=HOUR, cot_lead=ms.COT_LEAD):
    """Sequential knowledge analysis along the nominal plan.

    One filter carries the a-posteriori covariance through every observable.
    At each node's cut-off time (``cot_lead`` before the node) a copy is
    frozen and propagated without measurements to the node: that copy is the
    ground knowledge used to command the maneuver or correction there.  Each
    node's execution covariance is added to the a-posteriori filter and to
    any ground copy still in flight.
    """
    layout = StateLayout(estimate_biases)
    P_K0 = default_pk0() if P_K0 is None else np.asarray(P_K0, float)
    fs = initial_filter(P_K0, budget, navcam, isl, layout, plan.start_epoch)
    P_cc0 = fs.P_cc.copy()
    stubs = schedule.stubs
    cot_of = {a.end_epoch: a.end_epoch - cot_lead for a in plan.arcs
              if a.end_epoch - cot_lead > plan.start_epoch}
    pending = {}  # node epoch -> ground copy
    rows = {k: [] for k in ("t", "pg", "vg", "pp", "vp", "arc", "man", "cot")}
    nodes = []
    min_ratio = _psd_ratio(fs.P)

    def record(t, post, ground, arc, man=False, cot=False):
        rows["t"].append(t)
        rows["pp"].append(post.sigma_pos)
        rows["vp"].append(post.sigma_vel)
        rows["pg"].append(ground.sigma_pos)
        rows["vg"].append(ground.sigma_vel)
        rows["arc"].append(arc)
        rows["man"].append(man)
        rows["cot"].append(cot)

    def upcoming():
        return pending[min(pending)] if pending else fs

    first = plan.arcs[0].start
    nodes.append(NodeKnowledge(0, first.epoch, first.commanded, None, fs.P[:6, :6].copy(),
                               fs.P[:6, :6].copy(), None))
    record(first.epoch, fs, fs, 0, man=True)
    fs = apply_maneuver_knowledge(fs, first.dv, budget)
    cot_cov = {}

    for k, arc in enumerate(plan.arcs):
        t0, t1 = arc.start.epoch, arc.end_epoch
        meas = [m for m in stubs if t0 < m.epoch < t1]
        cots = [c for c in cot_of.values() if t0 < c <= t1]
        grid = list(np.arange(t0 + cadence, t1, cadence))
        events = sorted(set([m.epoch for m in meas] + grid + [t1] + cots))
        states, mats = dyn.propagate_augmented(arc.start_state, np.array([t0] + events), sys, sc,
                                               budget.srp_tau, budget.resid_tau)
        M_prev = mats[0]
        mi = 0
        for e, t in enumerate(events, start=1):
            M = mats[e]
            step = np.linalg.solve(M_prev.T, M.T).T
            phi = expand_transition(step, layout)
            Q = process_noise(t - fs.epoch, budget, layout)
            fs = time_update(fs, t, phi, Q)
            for key in pending:
                pending[key] = time_update(pending[key], t, phi, Q)
            M_prev = M
            nominal = StateVector(states[e, :3], states[e, 3:], t)
            while mi < len(meas) and meas[mi].epoch == t:
                m = meas[mi]
                H = full_partials(m.kind, nominal, t, sys, isl, layout)
                sig = ms.measurement_sigma(m.kind, np.linalg.norm(nominal.r), navcam, isl)
                fs = schmidt_update(fs, H, sig)
                mi += 1
            is_cot = False
            for node_epoch, c in cot_of.items():
                if c == t:
                    pending[node_epoch] = fs.copy()
                    cot_cov[node_epoch] = fs.P[:6, :6].copy()
                    is_cot = True
            min_ratio = min(min_ratio, _psd_ratio(fs.P))
            if t < t1:
                record(t, fs, upcoming(), k, cot=is_cot)
        ground = pending.pop(t1, None) or fs.copy()
        nxt = plan.arcs[k + 1].start if k + 1 < len(plan.arcs) else None
        commanded = nxt.commanded if nxt is not None else True
        nodes.append(NodeKnowledge(k + 1, t1, commanded, cot_of.get(t1), ground.P[:6, :6].copy(),
                                   fs.P[:6, :6].copy(), cot_cov.get(t1)))
        record(t1, fs, ground, k + 1 if nxt is not None else k, man=True)
        if nxt is not None:
            fs = apply_maneuver_knowledge(fs, nxt.dv, budget)
            for key in pending:
                pending[key] = apply_maneuver_knowledge(pending[key], nxt.dv, budget)
    if not np.array_equal(fs.P_cc, P_cc0):
        raise FilterNumericalError("consider covariance drifted")
    header = {"P_K0_sigma_pos": [float(x) for x in np.sqrt(np.diag(P_K0)[:3])],
              "P_K0_sigma_vel": [float(x) for x in np.sqrt(np.diag(P_K0)[3:])],
              "estimate_biases": estimate_biases, "cadence": cadence, "budget": budget.__dict__.copy()}
    return KnowledgeTimeline(np.array(rows["t"]), np.array(rows["pg"]), np.array(rows["vg"]),
                             np.array(rows["pp"]), np.array(rows["vp"]), np.array(rows["arc"]),
                             np.array(rows["man"]), np.array(rows["cot"]), nodes, min_ratio,
                             fs.P_cc.copy(), header)
