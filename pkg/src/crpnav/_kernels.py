"""Compiled force-model kernels.

Every function here works on a flat parameter vector built by
:func:`crpnav.dynamics.pack_params` so the integrator right-hand sides can be
jitted once and reused for nominal, variational and Monte Carlo propagation.
"""
import math

import numpy as np
from numba import njit

# parameter vector layout
P_MU_SUN = 0
P_A = 1
P_E = 2
P_N = 3
P_M0 = 4
P_ROT = 5  # 9 entries, perifocal -> ecliptic, row-major
P_MU1 = 14
P_MU2 = 15
P_D12 = 16
P_WMUT = 17
P_THETA0 = 18
P_U = 19  # 3 entries
P_W = 22  # 3 entries
P_KSRP = 25
P_TAU_SRP = 26
P_TAU_RES = 27
P_T0 = 28  # reference epoch of a variational integration
N_PARAMS = 29

KEPLER_TOL = 1e-13
KEPLER_MAXITER = 60


@njit(cache=True)
def kepler_newton(mean_anomaly, e):
    """Return (E, residual, iterations) for Kepler's equation."""
    two_pi = 2.0 * math.pi
    m = mean_anomaly - two_pi * math.floor((mean_anomaly + math.pi) / two_pi)
    offset = mean_anomaly - m
    if e < 0.8:
        big_e = m + e * math.sin(m)
    else:
        big_e = math.pi if m >= 0.0 else -math.pi
    res = big_e - e * math.sin(big_e) - m
    it = 0
    while abs(res) > KEPLER_TOL and it < KEPLER_MAXITER:
        big_e -= res / (1.0 - e * math.cos(big_e))
        res = big_e - e * math.sin(big_e) - m
        it += 1
    return big_e + offset, res, it


@njit(cache=True)
def helio_position(t, p):
    """Position of the system barycentre relative to the Sun [m]."""
    e = p[P_E]
    big_e, _, _ = kepler_newton(p[P_M0] + p[P_N] * t, e)
    xp = p[P_A] * (math.cos(big_e) - e)
    yp = p[P_A] * math.sqrt(1.0 - e * e) * math.sin(big_e)
    out = np.empty(3)
    for i in range(3):
        out[i] = p[P_ROT + 3 * i] * xp + p[P_ROT + 3 * i + 1] * yp
    return out


@njit(cache=True)
def body_positions(t, p):
    """Barycentric positions of the primary and the secondary [m]."""
    mu1 = p[P_MU1]
    mu2 = p[P_MU2]
    th = p[P_THETA0] + p[P_WMUT] * t
    c = math.cos(th)
    s = math.sin(th)
    r1 = np.empty(3)
    r2 = np.empty(3)
    f1 = -mu2 / (mu1 + mu2) * p[P_D12]
    f2 = mu1 / (mu1 + mu2) * p[P_D12]
    for i in range(3):
        ehat = c * p[P_U + i] + s * p[P_W + i]
        r1[i] = f1 * ehat
        r2[i] = f2 * ehat
    return r1, r2


@njit(cache=True)
def _tide_factor(q):
    # 1 - (1+q)^(3/2), cancellation-free
    s = (1.0 + q) ** 1.5
    return -q * (3.0 + 3.0 * q + q * q) / (1.0 + s)


@njit(cache=True)
def sun_terms(t, r, p):
    """Return (a_tide, a_srp_unit_scale, r_s) for a spacecraft at ``r``.

    ``r_s`` is the spacecraft position relative to the Sun.
    """
    r_ds = helio_position(t, p)
    rds2 = r_ds[0] ** 2 + r_ds[1] ** 2 + r_ds[2] ** 2
    r_s = np.empty(3)
    for i in range(3):
        r_s[i] = r[i] + r_ds[i]
    rs2 = r_s[0] ** 2 + r_s[1] ** 2 + r_s[2] ** 2
    rs = math.sqrt(rs2)
    q = (r[0] * (r[0] + 2.0 * r_ds[0]) + r[1] * (r[1] + 2.0 * r_ds[1])
         + r[2] * (r[2] + 2.0 * r_ds[2])) / rds2
    fq = _tide_factor(q)
    g = -p[P_MU_SUN] / (rs2 * rs)
    k = p[P_KSRP] / (rs2 * rs)
    tide = np.empty(3)
    srp = np.empty(3)
    for i in range(3):
        tide[i] = g * (r[i] + fq * r_ds[i])
        srp[i] = k * r_s[i]
    return tide, srp, r_s


@njit(cache=True)
def point_mass(r, rb, mu):
    d0 = r[0] - rb[0]
    d1 = r[1] - rb[1]
    d2 = r[2] - rb[2]
    dd = math.sqrt(d0 * d0 + d1 * d1 + d2 * d2)
    f = -mu / (dd * dd * dd)
    out = np.empty(3)
    out[0] = f * d0
    out[1] = f * d1
    out[2] = f * d2
    return out, dd


@njit(cache=True)
def accel(t, r, p, srp_scale, resid, dmu):
    """Total acceleration with optional model perturbations.

    ``srp_scale`` multiplies the SRP components (1 + s_i), ``resid`` is an
    additive acceleration and ``dmu`` a change in the total system GM shared
    in proportion to the nominal masses.
    """
    mu1 = p[P_MU1]
    mu2 = p[P_MU2]
    mu = mu1 + mu2
    r1, r2 = body_positions(t, p)
    a1, d1 = point_mass(r, r1, mu1 + dmu * mu1 / mu)
    a2, d2 = point_mass(r, r2, mu2 + dmu * mu2 / mu)
    tide, srp, _ = sun_terms(t, r, p)
    out = np.empty(3)
    for i in range(3):
        out[i] = a1[i] + a2[i] + tide[i] + srp[i] * (1.0 + srp_scale[i]) + resid[i]
    return out, d1, d2


@njit(cache=True)
def _tidal_tensor(d, mu, out):
    # adds mu/d^3 (3 dd^T/d^2 - I)
    dn2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
    dn = math.sqrt(dn2)
    f = mu / (dn2 * dn)
    for i in range(3):
        for j in range(3):
            out[i, j] += f * 3.0 * d[i] * d[j] / dn2
        out[i, i] -= f


@njit(cache=True)
def gravity_gradient(t, r, p):
    """d(accel)/d(r) of the nominal model."""
    r1, r2 = body_positions(t, p)
    g = np.zeros((3, 3))
    _tidal_tensor(r - r1, p[P_MU1], g)
    _tidal_tensor(r - r2, p[P_MU2], g)
    _, _, r_s = sun_terms(t, r, p)
    # solar gravity and SRP share the r_s/|r_s|^3 form with opposite signs
    _tidal_tensor(r_s, p[P_MU_SUN] - p[P_KSRP], g)
    return g


@njit(cache=True)
def accel_dmu(t, r, p):
    """d(accel)/d(total GM) with the mass ratio held fixed."""
    mu1 = p[P_MU1]
    mu2 = p[P_MU2]
    mu = mu1 + mu2
    r1, r2 = body_positions(t, p)
    a1, _ = point_mass(r, r1, mu1 / mu)
    a2, _ = point_mass(r, r2, mu2 / mu)
    return a1 + a2


@njit(cache=True)
def _variational(g, phi, d):
    # d/dt [Phi_r; Phi_v] = [Phi_v; G Phi_r]
    ncol = phi.shape[1]
    for j in range(ncol):
        for i in range(3):
            d[i, j] = phi[3 + i, j]
            d[3 + i, j] = g[i, 0] * phi[0, j] + g[i, 1] * phi[1, j] + g[i, 2] * phi[2, j]


@njit(cache=True)
def rhs_state(t, y, p):
    a, _, _ = accel(t, y[:3], p, np.zeros(3), np.zeros(3), 0.0)
    out = np.empty(6)
    out[:3] = y[3:6]
    out[3:] = a
    return out


@njit(cache=True)
def rhs_stm(t, y, p):
    """State plus 6x6 STM, y = [x, Phi.ravel()]."""
    out = np.empty(42)
    a, _, _ = accel(t, y[:3], p, np.zeros(3), np.zeros(3), 0.0)
    out[:3] = y[3:6]
    out[3:6] = a
    g = gravity_gradient(t, y[:3], p)
    phi = y[6:42].reshape((6, 6))
    d = np.empty((6, 6))
    _variational(g, phi, d)
    out[6:] = d.ravel()
    return out


@njit(cache=True)
def rhs_augmented(t, y, p):
    """State plus the top 6x13 block of the augmented transition matrix.

    Columns 0-5 are the state STM, 6-8 the sensitivity to the SRP scale
    Gauss-Markov states, 9-11 to the residual acceleration states and 12 to
    the total GM.  The Gauss-Markov states decay as exp(-(t - t0)/tau).
    """
    out = np.empty(6 + 78)
    r = y[:3]
    a, _, _ = accel(t, r, p, np.zeros(3), np.zeros(3), 0.0)
    out[:3] = y[3:6]
    out[3:6] = a
    g = gravity_gradient(t, r, p)
    phi = y[6:84].reshape((6, 13))
    d = np.empty((6, 13))
    _variational(g, phi, d)
    _, srp, _ = sun_terms(t, r, p)
    dt = t - p[P_T0]
    e_srp = math.exp(-dt / p[P_TAU_SRP])
    e_res = math.exp(-dt / p[P_TAU_RES])
    for i in range(3):
        d[3 + i, 6 + i] += srp[i] * e_srp
        d[3 + i, 9 + i] += e_res
    dmu = accel_dmu(t, r, p)
    for i in range(3):
        d[3 + i, 12] += dmu[i]
    out[6:] = d.ravel()
    return out


@njit(cache=True)
def rhs_truth(t, y, p, dmu, gm_t0, gm_dt, gm_vals):
    """Perturbed dynamics with Gauss-Markov samples on a uniform grid.

    ``gm_vals[k]`` holds (srp scale xyz, residual accel xyz) at
    ``gm_t0 + k*gm_dt``; values are linearly interpolated in time.
    """
    x = (t - gm_t0) / gm_dt
    n = gm_vals.shape[0]
    k = int(math.floor(x))
    if k < 0:
        k = 0
    if k > n - 2:
        k = n - 2
    w = x - k
    if w < 0.0:
        w = 0.0
    if w > 1.0:
        w = 1.0
    s = np.empty(3)
    res = np.empty(3)
    for i in range(3):
        s[i] = (1.0 - w) * gm_vals[k, i] + w * gm_vals[k + 1, i]
        res[i] = (1.0 - w) * gm_vals[k, 3 + i] + w * gm_vals[k + 1, 3 + i]
    a, _, _ = accel(t, y[:3], p, s, res, dmu)
    out = np.empty(6)
    out[:3] = y[3:6]
    out[3:] = a
    return out
