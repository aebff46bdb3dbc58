"""Hot numeric kernels: per-TD dual evaluation and the two dual ascent engines.

Compiled with numba unless MEC_NUMBA=0, in which case the same functions run as
plain numpy (slower, bit-identical logic). Everything here works on one TD
block: the dual of the fixed-trajectory problem separates exactly per terminal
device, so engines operate on vectors of dimension 2..5 * N.

Packed dual layout per TD (scaled units): [lam? (N)][mu? (N)][nu? (N)][omega (N)][eta (N)],
where lam is present iff the UAV-compute route is active and mu/nu iff the relay
route is active. Bit multipliers are scaled by BIT_SCALE (per-Mbit units) so the
search region is O(1); eta is in natural W units.
"""

from __future__ import annotations

import os

import numpy as np

LN2 = float(np.log(2.0))
BIT_SCALE = 1e-6  # scaled bit multiplier -> SI J/bit

_flag = os.environ.get("MEC_NUMBA", "1").strip().lower()
_WANT_NUMBA = _flag not in ("0", "false", "no", "off")

NUMBA_ENABLED = False
if _WANT_NUMBA:
    try:
        from numba import njit as _njit

        def _jit(f):
            return _njit(cache=True, fastmath=False)(f)

        NUMBA_ENABLED = True
    except ImportError:  # pragma: no cover - numba is a declared dependency
        def _jit(f):
            return f
else:
    def _jit(f):
        return f


def block_dim(N: int, use_uavc: bool, use_relay: bool) -> int:
    return N * (2 + (1 if use_uavc else 0) + (2 if use_relay else 0))


@_jit
def dual_eval_td(x, N, use_uavc, use_relay, dt, B0, Pu, Ph, gb0, gb1,
                 au, ah, eu, eh, cap_lu, cap_lh, Lmin):
    """Dual function value and supergradient for one TD at packed scaled duals x.

    au/ah are 3*kappa*c^3; eu/eh are kappa*c^3/dt^2; gb0/gb1 the per-watt SNRs
    at the current slot positions. Returns (g, supergradient) with the
    supergradient already in scaled units.
    """
    o = 0
    if use_uavc:
        lam = x[0:N] * BIT_SCALE
        o = N
    else:
        lam = np.zeros(N)
    if use_relay:
        mu = x[o:o + N] * BIT_SCALE
        nu = x[o + N:o + 2 * N] * BIT_SCALE
        o = o + 2 * N
    else:
        mu = np.zeros(N)
        nu = np.zeros(N)
    omega = x[o:o + N] * BIT_SCALE
    eta = x[o + N:o + 2 * N]

    lam_hat = np.cumsum(lam[::-1])[::-1]

    g = 0.0
    t1r1 = np.zeros(N)
    t2r2 = np.zeros(N)
    t3r3 = np.zeros(N)
    t1 = np.zeros(N)
    t2 = np.zeros(N)
    t3 = np.zeros(N)

    if use_uavc:
        p1 = np.minimum(np.maximum(lam_hat * (B0 / LN2) - 1.0 / gb0, 0.0), Pu)
        r1 = (B0 / LN2) * np.log1p(gb0 * p1)
        h1 = p1 - lam_hat * r1 + eta
        t1 = np.where(h1 < 0.0, dt, 0.0)
        t1r1 = t1 * r1
        g += np.sum(t1 * h1)

    if use_relay:
        p2 = np.minimum(np.maximum(mu * (B0 / LN2) - 1.0 / gb0, 0.0), Pu)
        r2 = (B0 / LN2) * np.log1p(gb0 * p2)
        h2 = p2 - mu * r2 + eta
        t2 = np.where(h2 < 0.0, dt, 0.0)
        t2r2 = t2 * r2
        g += np.sum(t2 * h2)

        p3 = np.minimum(np.maximum(nu * (B0 / LN2) - 1.0 / gb1, 0.0), Ph)
        r3 = (B0 / LN2) * np.log1p(gb1 * p3)
        h3 = p3 - nu * r3 + eta
        t3 = np.where(h3 < 0.0, dt, 0.0)
        t3r3 = t3 * r3
        g += np.sum(t3 * h3)

    lu = np.minimum(dt * np.sqrt(omega / au), cap_lu)
    g += np.sum(eu * lu ** 3 - omega * lu)

    lh = np.zeros(N)
    if use_uavc:
        rad = omega - lam_hat
        lh = np.where(rad >= 0.0,
                      np.minimum(dt * np.sqrt(np.maximum(rad, 0.0) / ah), cap_lh),
                      0.0)
        g += np.sum(eh * lh ** 3 + (lam_hat - omega) * lh)

    g += np.sum(omega * Lmin) - dt * np.sum(eta)

    sub = np.empty(x.shape[0])
    o = 0
    if use_uavc:
        sub[0:N] = (np.cumsum(lh) - np.cumsum(t1r1)) * BIT_SCALE
        o = N
    if use_relay:
        sub[o:o + N] = -t2r2 * BIT_SCALE
        sub[o + N:o + 2 * N] = -t3r3 * BIT_SCALE
        o = o + 2 * N
    sub[o:o + N] = (Lmin - lu - lh) * BIT_SCALE
    sub[o + N:o + 2 * N] = t1 + t2 + t3 - dt
    return g, sub


@_jit
def dual_inner_td(lam, mu, nu, omega, eta, use_uavc, use_relay, dt, B0, Pu, Ph,
                  gb0, gb1, au, ah, cap_lu, cap_lh):
    """Closed-form inner minimizers at SI duals for one TD.

    Returns (p1, p2, p3, t1, t2, t3, r1, r2, r3, lu, lh). Subslot ties
    (stationarity expression exactly zero) resolve to t = 0; the
    reconstruction LP owns the tie.
    """
    N = lam.shape[0]
    lam_hat = np.cumsum(lam[::-1])[::-1]
    p1 = np.zeros(N)
    p2 = np.zeros(N)
    p3 = np.zeros(N)
    t1 = np.zeros(N)
    t2 = np.zeros(N)
    t3 = np.zeros(N)
    r1 = np.zeros(N)
    r2 = np.zeros(N)
    r3 = np.zeros(N)
    if use_uavc:
        p1 = np.minimum(np.maximum(lam_hat * (B0 / LN2) - 1.0 / gb0, 0.0), Pu)
        r1 = (B0 / LN2) * np.log1p(gb0 * p1)
        t1 = np.where(p1 - lam_hat * r1 + eta < 0.0, dt, 0.0)
    if use_relay:
        p2 = np.minimum(np.maximum(mu * (B0 / LN2) - 1.0 / gb0, 0.0), Pu)
        r2 = (B0 / LN2) * np.log1p(gb0 * p2)
        t2 = np.where(p2 - mu * r2 + eta < 0.0, dt, 0.0)
        p3 = np.minimum(np.maximum(nu * (B0 / LN2) - 1.0 / gb1, 0.0), Ph)
        r3 = (B0 / LN2) * np.log1p(gb1 * p3)
        t3 = np.where(p3 - nu * r3 + eta < 0.0, dt, 0.0)
    lu = np.minimum(dt * np.sqrt(omega / au), cap_lu)
    lh = np.zeros(N)
    if use_uavc:
        rad = omega - lam_hat
        lh = np.where(rad >= 0.0,
                      np.minimum(dt * np.sqrt(np.maximum(rad, 0.0) / ah), cap_lh),
                      0.0)
    return p1, p2, p3, t1, t2, t3, r1, r2, r3, lu, lh


@_jit
def project_duals_td(x, N, use_uavc, use_relay):
    """Project a packed block onto {x >= 0, mu+nu-omega >= 0}; returns a new array."""
    y = np.maximum(x, 0.0)
    if use_relay:
        o_mu = N if use_uavc else 0
        o_nu = o_mu + N
        o_om = o_nu + N
        for n in range(N):
            gap = y[o_om + n] - y[o_mu + n] - y[o_nu + n]
            if gap > 0.0:
                th = gap / 3.0
                y[o_mu + n] += th
                y[o_nu + n] += th
                y[o_om + n] -= th
    return y


@_jit
def ellipsoid_td(x0, radius, tol, max_iter, N, use_uavc, use_relay, dt, B0, Pu, Ph,
                 gb0, gb1, au, ah, eu, eh, cap_lu, cap_lh, Lmin):
    """Central-cut ellipsoid ascent on one TD's dual block.

    Feasibility cuts use the violated constraint's gradient; objective cuts use
    the negated supergradient (the dual is maximized). Stops when the sqrt of
    g' P g at an objective cut drops below tol, which bounds the remaining gap.
    Returns (best_x, best_g, iterations, g_trace, viol_trace).
    """
    d = x0.shape[0]
    x = x0.copy()
    P = np.eye(d) * (radius * radius)
    best_g = -np.inf
    best_x = x0.copy()
    g_trace = np.empty(max_iter)
    v_trace = np.empty(max_iter)
    o_mu = N if use_uavc else 0
    o_nu = o_mu + N
    o_om = o_nu + (N if use_relay else 0)
    it = 0
    while it < max_iter:
        viol = 0.0
        vidx = -1
        for i in range(d):
            if x[i] < viol:
                viol = x[i]
                vidx = i
        cviol = 0.0
        cidx = -1
        if use_relay:
            for n in range(N):
                c = x[o_mu + n] + x[o_nu + n] - x[o_om + n]
                if c < cviol:
                    cviol = c
                    cidx = n
        cut = np.zeros(d)
        feas_cut = False
        if vidx >= 0 and viol <= cviol:
            cut[vidx] = -1.0
            feas_cut = True
            v_trace[it] = -viol
        elif cidx >= 0:
            cut[o_om + cidx] = 1.0
            cut[o_mu + cidx] = -1.0
            cut[o_nu + cidx] = -1.0
            feas_cut = True
            v_trace[it] = -cviol
        else:
            g, sub = dual_eval_td(x, N, use_uavc, use_relay, dt, B0, Pu, Ph,
                                  gb0, gb1, au, ah, eu, eh, cap_lu, cap_lh, Lmin)
            if g > best_g:
                best_g = g
                best_x = x.copy()
            cut = -sub
            v_trace[it] = 0.0
        g_trace[it] = best_g

        Pg = P @ cut
        gamma2 = cut @ Pg
        if gamma2 <= 1e-300:
            it += 1
            break
        gamma = np.sqrt(gamma2)
        if (not feas_cut) and gamma <= tol:
            it += 1
            break
        gn = Pg / gamma
        x = x - gn / (d + 1.0)
        P = (d * d / (d * d - 1.0)) * (P - (2.0 / (d + 1.0)) * np.outer(gn, gn))
        P = 0.5 * (P + P.T)
        it += 1
    return best_x, best_g, it, g_trace[:it], v_trace[:it]


@_jit
def subgradient_td(x0, max_iter, patience, delta_frac, tol_rel, N, use_uavc,
                   use_relay, dt, B0, Pu, Ph, gb0, gb1, au, ah, eu, eh,
                   cap_lu, cap_lh, Lmin):
    """Projected supergradient ascent with a Polyak-style adaptive target level.

    The step targets best_g + delta; delta halves after `patience` iterations
    without improvement (recentering at the incumbent), and the run stops when
    delta falls below tol_rel * max(1, |best_g|).
    """
    x = project_duals_td(x0, N, use_uavc, use_relay)
    g, s = dual_eval_td(x, N, use_uavc, use_relay, dt, B0, Pu, Ph, gb0, gb1,
                        au, ah, eu, eh, cap_lu, cap_lh, Lmin)
    best_g = g
    best_x = x.copy()
    delta = delta_frac * max(1.0, abs(g))
    since = 0
    it = 1
    while it < max_iter:
        sn2 = s @ s
        if sn2 <= 1e-300:
            break
        step = (best_g + delta - g) / sn2
        x = project_duals_td(x + step * s, N, use_uavc, use_relay)
        g, s = dual_eval_td(x, N, use_uavc, use_relay, dt, B0, Pu, Ph, gb0, gb1,
                            au, ah, eu, eh, cap_lu, cap_lh, Lmin)
        it += 1
        if g > best_g + 1e-14 * max(1.0, abs(best_g)):
            best_g = g
            best_x = x.copy()
            since = 0
        else:
            since += 1
            if since >= patience:
                delta *= 0.5
                since = 0
                x = best_x.copy()
                g, s = dual_eval_td(x, N, use_uavc, use_relay, dt, B0, Pu, Ph,
                                    gb0, gb1, au, ah, eu, eh, cap_lu, cap_lh, Lmin)
                it += 1
                if delta < tol_rel * max(1.0, abs(best_g)):
                    break
    return best_x, best_g, it
