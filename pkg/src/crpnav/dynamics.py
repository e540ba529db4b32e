"""Binary-asteroid dynamical environment.

Point-mass primary and secondary on a circular mutual orbit, solar
fourth-body tide and cannonball SRP, all expressed in the quasi-inertial
``DidymosEclipJ2000`` frame centred at the system barycentre.  Epochs are
plain floats, seconds past a configurable reference epoch.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.integrate import solve_ivp

from crpnav import _kernels as K

G = 6.6743e-11  # m^3 / (kg s^2)
AU = 1.495978707e11  # m
C_LIGHT = 299792458.0  # m/s
P0 = 1367.0  # W/m^2 at 1 AU
MU_SUN = 1.32712440018e20  # m^3/s^2
HOUR = 3600.0
DAY = 86400.0

Epoch = float


class DynamicsError(Exception):
    pass


class SingularityError(DynamicsError):
    """Spacecraft inside a point mass."""


class KeplerConvergenceError(DynamicsError):
    def __init__(self, residual):
        super().__init__(f"Kepler solver did not converge, residual {residual:.3e} rad")
        self.residual = residual


class PropagationError(DynamicsError):
    def __init__(self, message, last_state=None):
        super().__init__(message)
        self.last_state = last_state


class DegenerateFrameError(DynamicsError):
    pass


class FrameId(str, Enum):
    ECLIP = "DidymosEclipJ2000"
    SUN_SOUTH = "DidymosEquatorialSunSouth"


class Body(str, Enum):
    D1 = "D1"
    D2 = "D2"


@dataclass(frozen=True)
class HelioElements:
    """Heliocentric Kepler elements of the binary system.

    Only a, e, i and the period come from the reference model; node,
    argument of perihelion and the mean anomaly at the reference epoch are
    free inputs.  The default mean anomaly puts the system near r = a.
    """

    a: float = 1.66446  # AU
    e: float = 0.3839
    i: float = 3.4083  # deg
    period: float = 770.0  # days
    raan: float = 0.0  # deg
    argp: float = 0.0  # deg
    mean_anomaly: float = 68.0  # deg at t = 0

    def __post_init__(self):
        if not 0.0 <= self.e < 1.0:
            raise ValueError(f"eccentricity must be in [0, 1), got {self.e}")
        if self.a <= 0 or self.period <= 0:
            raise ValueError("semi-major axis and period must be positive")


@dataclass(frozen=True)
class SystemModel:
    mu1: float = G * 5.226e11
    mu2: float = G * 4.860e9
    spin_t1: float = 2.26  # h
    spin_t2: float = 11.92  # h
    separation_d12: float = 1180.0  # m
    pole_direction: tuple = (0.0, 0.0, -1.0)
    tidally_locked: bool = True
    mutual_phase: float = 0.0  # deg, secondary direction at t = 0 from the equatorial x-axis
    mu_sun: float = MU_SUN
    helio: HelioElements = field(default_factory=HelioElements)

    def __post_init__(self):
        if not self.mu1 > self.mu2 > 0.0:
            raise ValueError(f"need mu1 > mu2 > 0, got {self.mu1}, {self.mu2}")
        if self.separation_d12 <= 0.0:
            raise ValueError("separation must be positive")
        pole = np.asarray(self.pole_direction, dtype=float)
        norm = np.linalg.norm(pole)
        if pole.shape != (3,) or norm == 0.0:
            raise ValueError("pole_direction must be a non-zero 3-vector")
        object.__setattr__(self, "pole_direction", tuple(float(x) for x in pole / norm))
        if self.tidally_locked:
            ratio = self.mutual_period / (self.spin_t2 * HOUR)
            if abs(ratio - 1.0) > 0.01:
                raise ValueError(
                    f"mutual period {self.mutual_period / HOUR:.3f} h differs from the "
                    f"secondary spin period {self.spin_t2} h by more than 1%")

    @property
    def mu(self):
        return self.mu1 + self.mu2

    @property
    def mutual_period(self):
        return 2.0 * math.pi * math.sqrt(self.separation_d12 ** 3 / self.mu)

    @property
    def pole(self):
        return np.array(self.pole_direction)

    def equator_basis(self):
        """Orthonormal (u, w) spanning the equatorial plane, u x w = pole."""
        pole = self.pole
        ref = np.array([1.0, 0.0, 0.0])
        if abs(pole @ ref) > 0.9:
            ref = np.array([0.0, 1.0, 0.0])
        u = ref - (ref @ pole) * pole
        u /= np.linalg.norm(u)
        return u, np.cross(pole, u)


@dataclass(frozen=True)
class SpacecraftModel:
    mass: float = 12.0  # kg
    area: float = 0.51  # m^2
    cr: float = 1.25

    def __post_init__(self):
        if self.mass <= 0 or self.area <= 0:
            raise ValueError("mass and area must be positive")
        if not 1.0 <= self.cr <= 2.0:
            raise ValueError(f"cr must be in [1, 2], got {self.cr}")

    @property
    def srp_constant(self):
        """P0/c * AU^2 * Cr*A/m, so that |a_srp| = srp_constant / r_S^2."""
        return P0 / C_LIGHT * AU ** 2 * self.cr * self.area / self.mass


@dataclass(eq=False)
class StateVector:
    r: np.ndarray
    v: np.ndarray
    epoch: float = 0.0
    frame: FrameId = FrameId.ECLIP

    def __post_init__(self):
        self.r = np.asarray(self.r, dtype=float).reshape(3)
        self.v = np.asarray(self.v, dtype=float).reshape(3)
        self.frame = FrameId(self.frame)

    @property
    def y(self):
        return np.concatenate([self.r, self.v])

    @classmethod
    def from_y(cls, y, epoch, frame=FrameId.ECLIP):
        return cls(y[:3], y[3:6], float(epoch), frame)


@dataclass(eq=False)
class Stm:
    phi: np.ndarray

    @property
    def rr(self):
        return self.phi[:3, :3]

    @property
    def rv(self):
        return self.phi[:3, 3:]

    @property
    def vr(self):
        return self.phi[3:, :3]

    @property
    def vv(self):
        return self.phi[3:, 3:]


@dataclass(frozen=True)
class PropagationOptions:
    rtol: float = 1e-10
    atol_pos: float = 1e-6
    atol_vel: float = 1e-12
    atol_var: float = 1e-12  # variational entries
    method: str = "DOP853"

    def atol(self, n_extra=0):
        base = [self.atol_pos] * 3 + [self.atol_vel] * 3
        return np.array(base + [self.atol_var] * n_extra)


DEFAULT_OPTIONS = PropagationOptions()


def _rotation_perifocal(h: HelioElements):
    cO, sO = math.cos(math.radians(h.raan)), math.sin(math.radians(h.raan))
    cw, sw = math.cos(math.radians(h.argp)), math.sin(math.radians(h.argp))
    ci, si = math.cos(math.radians(h.i)), math.sin(math.radians(h.i))
    return np.array([
        [cO * cw - sO * sw * ci, -cO * sw - sO * cw * ci, sO * si],
        [sO * cw + cO * sw * ci, -sO * sw + cO * cw * ci, -cO * si],
        [sw * si, cw * si, ci],
    ])


def pack_params(sys: SystemModel, sc: SpacecraftModel | None = None,
                tau_srp=DAY, tau_res=DAY, t0=0.0):
    """Flatten the models into the kernel parameter vector."""
    h = sys.helio
    p = np.zeros(K.N_PARAMS)
    p[K.P_MU_SUN] = sys.mu_sun
    p[K.P_A] = h.a * AU
    p[K.P_E] = h.e
    p[K.P_N] = 2.0 * math.pi / (h.period * DAY)
    p[K.P_M0] = math.radians(h.mean_anomaly)
    p[K.P_ROT:K.P_ROT + 9] = _rotation_perifocal(h).ravel()
    p[K.P_MU1] = sys.mu1
    p[K.P_MU2] = sys.mu2
    p[K.P_D12] = sys.separation_d12
    p[K.P_WMUT] = 2.0 * math.pi / sys.mutual_period
    p[K.P_THETA0] = math.radians(sys.mutual_phase)
    u, w = sys.equator_basis()
    p[K.P_U:K.P_U + 3] = u
    p[K.P_W:K.P_W + 3] = w
    p[K.P_KSRP] = 0.0 if sc is None else sc.srp_constant
    p[K.P_TAU_SRP] = tau_srp
    p[K.P_TAU_RES] = tau_res
    p[K.P_T0] = t0
    return p


def kepler_solve(mean_anomaly, e):
    """Eccentric anomaly for the given mean anomaly [rad]."""
    if not 0.0 <= e < 1.0:
        raise ValueError(f"eccentricity must be in [0, 1), got {e}")
    big_e, res, _ = K.kepler_newton(float(mean_anomaly), float(e))
    if abs(res) >= 1e-12:
        raise KeplerConvergenceError(res)
    return big_e


def sun_direction(t, sys: SystemModel):
    """Unit vector barycentre -> Sun and the Sun distance [m]."""
    r_ds = K.helio_position(float(t), pack_params(sys))
    dist = float(np.linalg.norm(r_ds))
    return -r_ds / dist, dist


def asteroid_states(t, sys: SystemModel):
    """Barycentric positions (r1, r2) of D1 and D2 [m]."""
    return K.body_positions(float(t), pack_params(sys))


def body_position(body, t, sys):
    r1, r2 = asteroid_states(t, sys)
    return r1 if Body(body) is Body.D1 else r2


def accel_fourbody(r, t, sys: SystemModel):
    tide, _, _ = K.sun_terms(float(t), np.asarray(r, dtype=float), pack_params(sys))
    return tide


def accel_srp(r, t, sys: SystemModel, sc: SpacecraftModel):
    _, srp, _ = K.sun_terms(float(t), np.asarray(r, dtype=float), pack_params(sys, sc))
    return srp


def _check_singular(r, t, sys):
    for rb in asteroid_states(t, sys):
        if np.linalg.norm(r - rb) < 1e-6:
            raise SingularityError(f"position {r} coincides with a point mass")


def accel_total(state: StateVector, sys: SystemModel, sc: SpacecraftModel):
    _check_singular(state.r, state.epoch, sys)
    a, _, _ = K.accel(state.epoch, state.r, pack_params(sys, sc), np.zeros(3), np.zeros(3), 0.0)
    return a


def jacobian(state: StateVector, sys: SystemModel, sc: SpacecraftModel):
    """6x6 partials of (rdot, vdot) with respect to (r, v)."""
    _check_singular(state.r, state.epoch, sys)
    a = np.zeros((6, 6))
    a[:3, 3:] = np.eye(3)
    a[3:, :3] = K.gravity_gradient(state.epoch, state.r, pack_params(sys, sc))
    return a


def _solve(fun, t0, tf, y0, opts, n_extra=0, t_eval=None, args=()):
    if tf == t0:
        return None
    sol = solve_ivp(fun, (t0, tf), y0, method=opts.method, rtol=opts.rtol,
                    atol=opts.atol(n_extra), t_eval=t_eval, args=args)
    if sol.status != 0:
        last = StateVector.from_y(sol.y[:6, -1], sol.t[-1]) if sol.y.size else None
        raise PropagationError(f"integration failed at t={sol.t[-1]:.1f}: {sol.message}", last)
    return sol


def propagate(state0: StateVector, tf, sys: SystemModel, sc: SpacecraftModel,
              opts: PropagationOptions = DEFAULT_OPTIONS):
    """Integrate the full equations of motion from ``state0`` to ``tf``."""
    p = pack_params(sys, sc)
    sol = _solve(K.rhs_state, state0.epoch, float(tf), state0.y, opts, args=(p,))
    if sol is None:
        return StateVector(state0.r.copy(), state0.v.copy(), state0.epoch)
    return StateVector.from_y(sol.y[:, -1], tf)


@dataclass(eq=False)
class Trajectory:
    """Dense samples of a propagated state, shape (n,) and (n, 6)."""

    t: np.ndarray
    y: np.ndarray

    @property
    def r(self):
        return self.y[:, :3]

    @property
    def v(self):
        return self.y[:, 3:]

    def state(self, k):
        return StateVector.from_y(self.y[k], self.t[k])


def sample_grid(t0, tf, step):
    """Uniform grid from t0 to tf (both included) at roughly ``step`` spacing."""
    n = max(1, int(math.ceil((tf - t0) / step - 1e-9)))
    return np.linspace(t0, tf, n + 1)


def trajectory(state0: StateVector, tf, sys, sc, step=HOUR, opts=DEFAULT_OPTIONS, t_eval=None):
    """Propagate and return samples at ``step`` cadence (or at ``t_eval``)."""
    if t_eval is None:
        t_eval = sample_grid(state0.epoch, float(tf), step)
    p = pack_params(sys, sc)
    sol = _solve(K.rhs_state, state0.epoch, float(tf), state0.y, opts, t_eval=t_eval, args=(p,))
    if sol is None:
        return Trajectory(np.array([state0.epoch]), state0.y[None, :])
    return Trajectory(sol.t, sol.y.T.copy())


def propagate_with_stm(state0: StateVector, tf, sys, sc, opts=DEFAULT_OPTIONS):
    """Propagate state and the 6x6 state transition matrix."""
    p = pack_params(sys, sc)
    y0 = np.concatenate([state0.y, np.eye(6).ravel()])
    sol = _solve(K.rhs_stm, state0.epoch, float(tf), y0, opts, n_extra=36, args=(p,))
    if sol is None:
        return StateVector(state0.r.copy(), state0.v.copy(), state0.epoch), Stm(np.eye(6))
    y = sol.y[:, -1]
    return StateVector.from_y(y[:6], tf), Stm(y[6:].reshape(6, 6))


def propagate_augmented(state0: StateVector, t_eval, sys, sc, tau_srp=DAY, tau_res=DAY,
                        opts=DEFAULT_OPTIONS):
    """Augmented 13x13 transition matrices from ``state0.epoch`` to each ``t_eval``.

    The augmented state is (r, v, srp scale[3], residual accel[3], total GM).
    Returns ``(states, mats)`` with shapes (n, 6) and (n, 13, 13).
    """
    t_eval = np.asarray(t_eval, dtype=float)
    t0 = state0.epoch
    p = pack_params(sys, sc, tau_srp, tau_res, t0)
    top0 = np.zeros((6, 13))
    top0[:, :6] = np.eye(6)
    y0 = np.concatenate([state0.y, top0.ravel()])
    tf = float(t_eval[-1])
    if tf == t0:
        ys = np.tile(y0, (len(t_eval), 1))
    else:
        sol = _solve(K.rhs_augmented, t0, tf, y0, opts, n_extra=78, t_eval=t_eval, args=(p,))
        ys = sol.y.T
    mats = np.zeros((len(t_eval), 13, 13))
    mats[:, :6, :] = ys[:, 6:].reshape(-1, 6, 13)
    dt = t_eval - t0
    for i in range(3):
        mats[:, 6 + i, 6 + i] = np.exp(-dt / tau_srp)
        mats[:, 9 + i, 9 + i] = np.exp(-dt / tau_res)
    mats[:, 12, 12] = 1.0
    return ys[:, :6].copy(), mats


def sun_south_rotation(t, sys: SystemModel):
    """Rotation matrix R with r_sunsouth = R @ r_eclip."""
    s_hat, _ = sun_direction(t, sys)
    pole = sys.pole
    z = -pole
    x = s_hat - (s_hat @ pole) * pole
    nx = np.linalg.norm(x)
    if nx < 1e-12:
        raise DegenerateFrameError("Sun direction is parallel to the pole")
    x /= nx
    y = np.cross(z, x)
    return np.vstack([x, y, z])


def to_sun_south_frame(state: StateVector, sys: SystemModel):
    if state.frame is not FrameId.ECLIP:
        raise ValueError(f"expected a {FrameId.ECLIP.value} state, got {state.frame.value}")
    rot = sun_south_rotation(state.epoch, sys)
    return StateVector(rot @ state.r, rot @ state.v, state.epoch, FrameId.SUN_SOUTH)


def from_sun_south_frame(state: StateVector, sys: SystemModel):
    if state.frame is not FrameId.SUN_SOUTH:
        raise ValueError(f"expected a {FrameId.SUN_SOUTH.value} state, got {state.frame.value}")
    rot = sun_south_rotation(state.epoch, sys)
    return StateVector(rot.T @ state.r, rot.T @ state.v, state.epoch, FrameId.ECLIP)


def _angle_between(a, b):
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValueError("zero-length vector in angle computation")
    # atan2 form keeps precision near 0 and 180 deg
    return math.degrees(math.atan2(np.linalg.norm(np.cross(a, b)), a @ b))


def phase_angle(r, t, body, sys: SystemModel):
    """Sun-asteroid-spacecraft angle at ``body`` [deg]."""
    rb = body_position(body, t, sys)
    s_hat, r_ds = sun_direction(t, sys)
    to_sun = s_hat * r_ds - rb
    return _angle_between(to_sun, np.asarray(r, dtype=float) - rb)


def body_ranges(r, t, sys):
    r1, r2 = asteroid_states(t, sys)
    return float(np.linalg.norm(r - r1)), float(np.linalg.norm(r - r2))
