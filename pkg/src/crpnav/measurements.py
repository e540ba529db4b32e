"""Optical and inter-satellite-link observables, noise models and schedules."""
from __future__ import annotations

import csv
import math
import zlib
from dataclasses import dataclass, field, replace
from enum import Enum
from functools import lru_cache

import numpy as np

from crpnav import dynamics as dyn
from crpnav.dynamics import HOUR, Body

ARCSEC = math.pi / (180 * 3600)
COT_LEAD = 49 * HOUR
ISL_START = 6 * HOUR
ISL_MARGIN = 3 * HOUR


class MeasurementError(Exception):
    pass


class UnavailableError(MeasurementError):
    pass


class MeasurementConfigError(MeasurementError):
    pass


class SingularGeometryError(MeasurementError):
    pass


class InfeasibleScheduleError(MeasurementError):
    pass


class Kind(str, Enum):
    NAVCAM_RANGE = "NavCamRange"
    NAVCAM_ANGLES = "NavCamAngle2D"
    ISL_RANGE = "IslRange"
    ISL_RANGE_RATE = "IslRangeRate"


def named_stream(seed, name):
    """Independent generator for a named purpose, stable across runs."""
    return np.random.default_rng([int(seed), zlib.crc32(name.encode())])


@dataclass(frozen=True)
class NavCamModel:
    c_r0: float = 10.0
    c_r1: float = 5e-3
    c_th0: float = 50.0
    c_th1: float = 1e-5  # rad/sqrt(m)
    bias_range: float = 2.0
    bias_angle: float = 32.4 * ARCSEC

    def __post_init__(self):
        if min(self.c_r0, self.c_r1, self.c_th0, self.c_th1) < 0:
            raise ValueError("noise coefficients must be non-negative")

    def sigma_range(self, r):
        return self.c_r0 + self.c_r1 * r

    def sigma_angle(self, r):
        return math.atan(self.c_th0 / r) + self.c_th1 * math.sqrt(r)

    def noiseless(self):
        return replace(self, c_r0=0.0, c_r1=0.0, c_th0=0.0, c_th1=0.0, bias_range=0.0, bias_angle=0.0)


@dataclass(frozen=True)
class HeraReference:
    """Mothership parked at a fixed point of the Sun-South frame."""

    position_ss: tuple = (10000.0, 0.0, 0.0)
    fd_step: float = 60.0

    def position(self, t, sys):
        return dyn.sun_south_rotation(t, sys).T @ np.asarray(self.position_ss, float)

    def state(self, t, sys):
        r, v = _hera_state_cached(self, float(t), sys)
        return r.copy(), v.copy()


@lru_cache(maxsize=4096)
def _hera_state_cached(ref, t, sys):
    h = ref.fd_step
    v = (ref.position(t + h, sys) - ref.position(t - h, sys)) / (2 * h)
    return ref.position(t, sys), v


@dataclass(frozen=True)
class IslModel:
    sigma_range: float = 0.5
    sigma_rr: float = 0.015
    bias_range: float = 150.0
    bias_rr: float = 0.03
    hera: HeraReference | None = field(default_factory=HeraReference)

    def __post_init__(self):
        if self.sigma_range <= 0 or self.sigma_rr <= 0:
            raise ValueError("ISL sigmas must be positive")


def draw_biases(navcam, isl, rng):
    """Models with bias values replaced by one random realization."""
    nav = replace(navcam, bias_range=navcam.bias_range * rng.standard_normal(),
                  bias_angle=navcam.bias_angle * rng.standard_normal())
    link = replace(isl, bias_range=isl.bias_range * rng.standard_normal(),
                   bias_rr=isl.bias_rr * rng.standard_normal())
    return nav, link


@dataclass(eq=False)
class Measurement:
    kind: Kind
    epoch: float
    value: object = None
    sigma: object = None
    is_post_cot: bool = False
    arc_index: int = 0

    @property
    def dim(self):
        return 2 if self.kind is Kind.NAVCAM_ANGLES else 1


def _angles(r):
    rho = math.hypot(r[0], r[1])
    return np.array([math.atan2(r[1], r[0]), math.atan2(r[2], rho)])


def _hera_state(isl, t, sys):
    if isl.hera is None:
        raise MeasurementConfigError("ISL observable requested without a Hera reference")
    return isl.hera.state(t, sys)


def observable(kind, r, v, t, sys, isl=None):
    """Noise-free observable of a barycentric state."""
    kind = Kind(kind)
    r = np.asarray(r, float)
    if kind is Kind.NAVCAM_RANGE:
        return float(np.linalg.norm(r))
    if kind is Kind.NAVCAM_ANGLES:
        return _angles(r)
    rh, vh = _hera_state(isl, t, sys)
    rho = r - rh
    if kind is Kind.ISL_RANGE:
        return float(np.linalg.norm(rho))
    return float(rho @ (np.asarray(v, float) - vh) / np.linalg.norm(rho))


def _check_day_side(r, t, sys):
    if dyn.phase_angle(r, t, Body.D1, sys) >= 90.0:
        raise UnavailableError(f"spacecraft on the night side at t = {t:.0f} s")


def navcam_observe(state, t, model, rng, sys, nominal_range=None):
    """Simulated NavCam range and two line-of-sight angles.

    Returns ``(range_measurement, angle_measurement)``.  The attached sigmas
    follow the noise model at ``nominal_range`` (the true range by default).
    """
    _check_day_side(state.r, t, sys)
    r_true = float(np.linalg.norm(state.r))
    r_nom = r_true if nominal_range is None else nominal_range
    sr = model.sigma_range(r_true)
    sa = model.sigma_angle(r_true)
    rng_val = r_true + model.bias_range + sr * rng.standard_normal()
    ang = _angles(state.r) + model.bias_angle + sa * rng.standard_normal(2)
    sig_a = model.sigma_angle(r_nom)
    return (Measurement(Kind.NAVCAM_RANGE, t, rng_val, model.sigma_range(r_nom)),
            Measurement(Kind.NAVCAM_ANGLES, t, ang, np.array([sig_a, sig_a])))


def isl_observe(state, t, model, rng, sys, kind=Kind.ISL_RANGE):
    kind = Kind(kind)
    if kind is Kind.ISL_RANGE:
        value = observable(kind, state.r, state.v, t, sys, model)
        return Measurement(kind, t, value + model.bias_range + model.sigma_range * rng.standard_normal(),
                           model.sigma_range)
    if kind is Kind.ISL_RANGE_RATE:
        value = observable(kind, state.r, state.v, t, sys, model)
        return Measurement(kind, t, value + model.bias_rr + model.sigma_rr * rng.standard_normal(),
                           model.sigma_rr)
    raise ValueError(f"{kind} is not an ISL observable")


def measurement_sigma(kind, r_nominal, navcam, isl):
    kind = Kind(kind)
    if kind is Kind.NAVCAM_RANGE:
        return navcam.sigma_range(r_nominal)
    if kind is Kind.NAVCAM_ANGLES:
        s = navcam.sigma_angle(r_nominal)
        return np.array([s, s])
    if kind is Kind.ISL_RANGE:
        return isl.sigma_range
    return isl.sigma_rr


def measurement_partials(kind, state, t, sys=None, isl=None):
    """Analytic d(observable)/d(r, v) as a (1, 6) or (2, 6) array."""
    kind = Kind(kind)
    r = np.asarray(state.r, float)
    H = np.zeros((2 if kind is Kind.NAVCAM_ANGLES else 1, 6))
    if kind in (Kind.NAVCAM_RANGE, Kind.NAVCAM_ANGLES):
        n = np.linalg.norm(r)
        if n == 0.0:
            raise SingularGeometryError("zero range to the barycentre")
        if kind is Kind.NAVCAM_RANGE:
            H[0, :3] = r / n
            return H
        rho2 = r[0] ** 2 + r[1] ** 2
        if rho2 == 0.0:
            raise SingularGeometryError("line of sight along the pole, azimuth undefined")
        rho = math.sqrt(rho2)
        H[0, :3] = [-r[1] / rho2, r[0] / rho2, 0.0]
        H[1, :3] = np.array([-r[0] * r[2], -r[1] * r[2], rho2]) / (n * n * rho)
        return H
    rh, vh = _hera_state(isl, t, sys)
    d = r - rh
    n = np.linalg.norm(d)
    if n == 0.0:
        raise SingularGeometryError("zero range to Hera")
    u = d / n
    if kind is Kind.ISL_RANGE:
        H[0, :3] = u
        return H
    dv = np.asarray(state.v, float) - vh
    H[0, :3] = (dv - (u @ dv) * u) / n
    H[0, 3:] = u
    return H


@dataclass
class ArcSchedule:
    index: int
    start: float
    end: float
    cot: float
    stubs: list

    def count(self, kind, post_cot=None):
        return sum(1 for m in self.stubs if m.kind is Kind(kind)
                   and (post_cot is None or m.is_post_cot == post_cot))


@dataclass
class MeasurementSchedule:
    option: str
    arcs: list

    @property
    def stubs(self):
        out = [m for a in self.arcs for m in a.stubs]
        return sorted(out, key=lambda m: (m.epoch, list(Kind).index(m.kind)))

    @property
    def cot_epochs(self):
        return [a.cot for a in self.arcs]


@dataclass(frozen=True)
class SchedulePolicy:
    optical_pre: int
    optical_post: int
    isl_to_cot: bool  # True: ISL stops 3 h before the COT, else 3 h before the arc end
    range_cadence: float = 3 * HOUR
    rate_cadence: float = HOUR


POLICIES = {
    "A": SchedulePolicy(4, 3, True),
    "B": SchedulePolicy(7, 5, False),
}


def _cadence(start, stop, step):
    n = int(math.floor((stop - start) / step + 1e-9)) + 1
    return [start + k * step for k in range(max(n, 0))]


def arc_schedule(index, start, end, policy):
    """Stubs for one leg between commanded maneuvers."""
    cot = end - COT_LEAD
    isl_stop = cot - ISL_MARGIN if policy.isl_to_cot else end - ISL_MARGIN
    if cot - ISL_MARGIN < start + ISL_START:
        raise InfeasibleScheduleError(
            f"arc {index} of {(end - start) / HOUR:.1f} h leaves no room before its cut-off time")
    stubs = []
    for t in _cadence(start + ISL_START, isl_stop, policy.range_cadence):
        stubs.append(Measurement(Kind.ISL_RANGE, t, is_post_cot=t > cot, arc_index=index))
    for t in _cadence(start + ISL_START, isl_stop, policy.rate_cadence):
        stubs.append(Measurement(Kind.ISL_RANGE_RATE, t, is_post_cot=t > cot, arc_index=index))
    pre = np.linspace(start + ISL_START, cot, policy.optical_pre)
    post = np.linspace(cot, end, policy.optical_post + 2)[1:-1]
    for t, flag in [(t, False) for t in pre] + [(t, True) for t in post]:
        for kind in (Kind.NAVCAM_RANGE, Kind.NAVCAM_ANGLES):
            stubs.append(Measurement(kind, float(t), is_post_cot=flag, arc_index=index))
    stubs.sort(key=lambda m: (m.epoch, list(Kind).index(m.kind)))
    return ArcSchedule(index, start, end, cot, stubs)


def build_schedule(plan, option=None, policy=None):
    """Measurement stubs for every leg between commanded maneuvers of a plan."""
    option = (option or plan.option_label).upper()
    if policy is None:
        if option not in POLICIES:
            raise ValueError(f"no default measurement policy for option {option!r}")
        policy = POLICIES[option]
    epochs = [n.epoch for n in plan.maneuver_nodes] + [plan.end_epoch]
    arcs = [arc_schedule(k, a, b, policy) for k, (a, b) in enumerate(zip(epochs, epochs[1:]))]
    return MeasurementSchedule(option, arcs)


def empty_schedule(plan):
    epochs = [n.epoch for n in plan.maneuver_nodes] + [plan.end_epoch]
    return MeasurementSchedule(
        "empty", [ArcSchedule(k, a, b, b - COT_LEAD, []) for k, (a, b) in enumerate(zip(epochs, epochs[1:]))])


def simulate(schedule, truth, sys, navcam, isl, rng, nominal=None):
    """Fill schedule stubs with simulated values.

    ``truth(t)`` and optional ``nominal(t)`` return StateVectors; sigmas are
    evaluated on the nominal.
    """
    out = []
    for stub in schedule.stubs:
        st = truth(stub.epoch)
        nom_range = None if nominal is None else float(np.linalg.norm(nominal(stub.epoch).r))
        if stub.kind is Kind.NAVCAM_RANGE:
            m = navcam_observe(st, stub.epoch, navcam, rng, sys, nom_range)[0]
        elif stub.kind is Kind.NAVCAM_ANGLES:
            m = navcam_observe(st, stub.epoch, navcam, rng, sys, nom_range)[1]
        else:
            m = isl_observe(st, stub.epoch, isl, rng, sys, stub.kind)
        m.is_post_cot, m.arc_index = stub.is_post_cot, stub.arc_index
        out.append(m)
    return out


SCHEDULE_COLUMNS = ["epoch", "kind", "value_1", "value_2", "sigma_1", "sigma_2", "post_cot", "arc_index"]


def write_measurements_csv(measurements, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SCHEDULE_COLUMNS)
        for m in measurements:
            vals = [] if m.value is None else list(np.atleast_1d(m.value))
            sigs = [] if m.sigma is None else list(np.atleast_1d(m.sigma))
            vals += [""] * (2 - len(vals))
            sigs += [""] * (2 - len(sigs))
            w.writerow([repr(float(m.epoch)), m.kind.value, *[v if v == "" else repr(float(v)) for v in vals],
                        *[s if s == "" else repr(float(s)) for s in sigs], int(m.is_post_cot), m.arc_index])
