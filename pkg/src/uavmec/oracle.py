"""Independent brute-force and finite-difference oracles.

Everything here re-derives its formulas from the model definition and shares no
code with the production solvers (closed forms, simplex, barrier method). Used
by tests to certify lemma conformance, weak/strong duality and bound tangency.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.optimize import minimize

from .scenario import Scenario, Trajectory

_LOG2 = math.log(2.0)


def _rate(p, snr_per_watt, B0):
    return B0 * np.log1p(snr_per_watt * np.asarray(p, dtype=float)) / _LOG2


def _leg_energy(t, bits, snr_per_watt, B0):
    """Minimal energy to push `bits` through a leg in `t` seconds (exact-rate power)."""
    t = np.asarray(t, dtype=float)
    bits = np.asarray(bits, dtype=float)
    out = np.zeros(np.broadcast(t, bits).shape)
    tt = np.broadcast_to(t, out.shape)
    bb = np.broadcast_to(bits, out.shape)
    pos = bb > 0.0
    safe_t = np.where(tt > 1e-300, tt, 1.0)
    expo = np.minimum(bb / (safe_t * B0), 1000.0)
    p = (np.exp2(expo) - 1.0) / snr_per_watt
    out[pos] = (tt * p)[pos]
    out[pos & ((tt <= 1e-300) | (expo >= 1000.0))] = np.inf
    return out if out.ndim else float(out)


def _refine_2d(f, t_lo, t_hi, s_lo, s_hi, n, rounds):
    t_min, t_max = t_lo, t_hi
    s_min, s_max = s_lo, s_hi
    best = (np.inf, 0.5 * (t_lo + t_hi), 0.5 * (s_lo + s_hi))
    for _ in range(rounds + 1):
        ts = np.linspace(t_lo, t_hi, n)
        ss = np.linspace(s_lo, s_hi, n)
        T, S = np.meshgrid(ts, ss, indexing="ij")
        V = f(T, S)
        idx = np.unravel_index(int(np.argmin(V)), V.shape)
        val = float(V[idx])
        if val < best[0]:
            best = (val, float(T[idx]), float(S[idx]))
        wt = (t_hi - t_lo) / (n - 1) * 5.0
        ws = (s_hi - s_lo) / (n - 1) * 5.0
        t_lo, t_hi = max(best[1] - wt, t_min), min(best[1] + wt, t_max)
        s_lo, s_hi = max(best[2] - ws, s_min), min(best[2] + ws, s_max)
    return best


def _refine_1d(f, lo, hi, n, rounds):
    best = (np.inf, 0.5 * (lo + hi))
    lo0, hi0 = lo, hi
    for _ in range(rounds + 1):
        xs = np.linspace(lo, hi, n)
        vs = f(xs)
        i = int(np.argmin(vs))
        if float(vs[i]) < best[0]:
            best = (float(vs[i]), float(xs[i]))
        w = (hi - lo) / (n - 1) * 5.0
        lo, hi = max(best[1] - w, lo0), min(best[1] + w, hi0)
    return best


def grid_subproblem_optimum(name: str, duals: dict, snr_per_watt: float,
                            sc: Scenario, grid: int = 80, rounds: int = 3) -> float:
    """Grid + refinement optimum of one per-(TD, slot) dual subproblem.

    Names: offload_compute, offload_relay, forward (2-D over subslot duration
    and energy), local_bits, uav_bits (1-D over bits), relay_bits (linear).
    """
    dt = sc.slot_len
    B0 = sc.subcarrier_bw
    eta = duals.get("eta", 0.0)
    if name in ("offload_compute", "offload_relay", "forward"):
        mult = duals["lam_hat"] if name == "offload_compute" else (
            duals["mu"] if name == "offload_relay" else duals["nu"])
        p_max = sc.p_uav_max if name == "forward" else sc.p_td_max

        def f(T, S):
            E = S * T * p_max
            R = _rate(np.where(T > 0, E / np.where(T > 0, T, 1.0), 0.0), snr_per_watt, B0)
            return E - mult * T * R + eta * T

        val, _, _ = _refine_2d(f, 0.0, dt, 0.0, 1.0, grid, rounds)
        return min(val, 0.0)  # (t, E) = 0 is always feasible
    if name == "local_bits":
        coef = sc.cap_coeff_td * sc.cycles_per_bit_td ** 3 / dt ** 2
        cap = dt * sc.f_td_max / sc.cycles_per_bit_td

        def f(x):
            return coef * x ** 3 - duals["omega"] * x

        return _refine_1d(f, 0.0, cap, max(grid * 10, 400), rounds)[0]
    if name == "uav_bits":
        coef = sc.cap_coeff_uav * sc.cycles_per_bit_uav ** 3 / dt ** 2
        cap = dt * (sc.f_uav_max / sc.K) / sc.cycles_per_bit_uav

        def f(x):
            return coef * x ** 3 + (duals["lam_hat"] - duals["omega"]) * x

        return _refine_1d(f, 0.0, cap, max(grid * 10, 400), rounds)[0]
    if name == "relay_bits":
        coef = duals["mu"] + duals["nu"] - duals["omega"]
        if coef < 0.0:
            return -np.inf
        return 0.0
    raise ValueError(f"unknown subproblem {name!r}")


def fd_check(fn, point, direction, analytic_dd: float, h: float = 1e-6) -> float:
    """Relative residual between a central-difference directional derivative and
    the supplied analytic value."""
    point = np.asarray(point, dtype=float)
    direction = np.asarray(direction, dtype=float)
    num = (fn(point + h * direction) - fn(point - h * direction)) / (2.0 * h)
    return abs(num - analytic_dd) / max(1.0, abs(analytic_dd))


# small-instance primal bound ---------------------------------------------

def _td_energy(z, N, Lmin, snr0, snr1, sc):
    lu, lh, la, b1, t1, t2, t3 = z.reshape(7, N)
    B0 = sc.subcarrier_bw
    eu = sc.cap_coeff_td * sc.cycles_per_bit_td ** 3 / sc.slot_len ** 2
    eh = sc.cap_coeff_uav * sc.cycles_per_bit_uav ** 3 / sc.slot_len ** 2
    e = np.sum(eu * lu ** 3 + eh * lh ** 3)
    e += np.sum(_leg_energy(t1, b1, snr0, B0))
    e += np.sum(_leg_energy(t2, la, snr0, B0))
    e += np.sum(_leg_energy(t3, la, snr1, B0))
    return float(e)


def _td_feasible(z, N, Lmin, snr0, snr1, sc, tol=1e-7):
    lu, lh, la, b1, t1, t2, t3 = z.reshape(7, N)
    scale = max(float(Lmin.max(initial=0.0)), 1.0)
    if np.any(z < -tol):
        return False
    if np.any(lu + lh + la < Lmin - tol * scale):
        return False
    if np.any(lu > sc.bits_cap_td + tol * scale) or np.any(lh > sc.bits_cap_uav + tol * scale):
        return False
    if np.any(np.cumsum(lh) > np.cumsum(b1) + tol * scale):
        return False
    if np.any(t1 + t2 + t3 > sc.slot_len * (1 + 1e-9) + tol):
        return False
    r_u = _rate(sc.p_td_max, snr0, sc.subcarrier_bw)
    r_h = _rate(sc.p_uav_max, snr1, sc.subcarrier_bw)
    if np.any(b1 > t1 * r_u + tol * scale) or np.any(la > t2 * r_u + tol * scale) \
            or np.any(la > t3 * r_h + tol * scale):
        return False
    return True


def _td_bound(Lmin, snr0, snr1, sc) -> float:
    """Certified upper bound on one TD's optimal energy: coarse starts + SLSQP polish.

    The polish runs on nondimensionalized variables (bits per Mbit, times per
    slot) so the NLP is well scaled; feasibility of every candidate is
    re-checked in SI before it can contribute to the bound.
    """
    N = Lmin.shape[0]
    dt = sc.slot_len
    cap_u, cap_h = sc.bits_cap_td, sc.bits_cap_uav
    starts = []
    for fh in (0.0, 0.15, 0.3, 0.6, 1.0):
        for fa in (0.0, 0.4, 0.8, 0.95, 1.0):
            lh = np.minimum(fh * Lmin, cap_h)
            la = np.clip(fa * (Lmin - lh), 0.0, None)
            lu = np.clip(Lmin - lh - la, 0.0, cap_u)
            if np.any(lu + lh + la < Lmin - 1e-6):
                continue
            for split in ((0.3, 0.3, 0.3), (0.6, 0.15, 0.15), (0.15, 0.4, 0.4)):
                t1 = np.full(N, split[0] * dt)
                t2 = np.full(N, split[1] * dt)
                t3 = np.full(N, split[2] * dt)
                z = np.concatenate([lu, lh, la, lh.copy(), t1, t2, t3])
                if _td_feasible(z, N, Lmin, snr0, snr1, sc, tol=1e-5):
                    starts.append(z)
    starts.sort(key=lambda z: _td_energy(z, N, Lmin, snr0, snr1, sc))

    S = np.concatenate([np.full(4 * N, 1e6), np.full(3 * N, dt)])
    scale = max(float(Lmin.max(initial=0.0)), 1.0) / 1e6
    Lm = Lmin / 1e6
    r_u = _rate(sc.p_td_max, snr0, sc.subcarrier_bw) * dt / 1e6   # Mbit per full subslot
    r_h = _rate(sc.p_uav_max, snr1, sc.subcarrier_bw) * dt / 1e6

    def blocks(z):
        return z.reshape(7, N)

    cons = [
        {"type": "ineq", "fun": lambda z: (blocks(z)[0] + blocks(z)[1] + blocks(z)[2] - Lm) / scale},
        {"type": "ineq", "fun": lambda z: (np.cumsum(blocks(z)[3]) - np.cumsum(blocks(z)[1])) / scale},
        {"type": "ineq", "fun": lambda z: 1.0 - blocks(z)[4:7].sum(axis=0)},
        {"type": "ineq", "fun": lambda z: (blocks(z)[4] * r_u - blocks(z)[3]) / scale},
        {"type": "ineq", "fun": lambda z: (blocks(z)[5] * r_u - blocks(z)[2]) / scale},
        {"type": "ineq", "fun": lambda z: (blocks(z)[6] * r_h - blocks(z)[2]) / scale},
    ]
    bounds = ([(0.0, cap_u / 1e6)] * N + [(0.0, cap_h / 1e6)] * N + [(0.0, None)] * N
              + [(0.0, None)] * N + [(0.0, 1.0)] * N * 3)
    best = np.inf
    for z0 in starts[:6]:
        res = minimize(lambda z: _td_energy(z * S, N, Lmin, snr0, snr1, sc), z0 / S,
                       method="SLSQP", bounds=bounds, constraints=cons,
                       options={"maxiter": 600, "ftol": 1e-14})
        for z in (res.x * S, z0):
            if _td_feasible(z, N, Lmin, snr0, snr1, sc, tol=1e-6):
                best = min(best, _td_energy(z, N, Lmin, snr0, snr1, sc))
    return best


def brute_force_primal_bound(traj: Trajectory, sc: Scenario) -> float:
    """Certified upper bound on the fixed-trajectory optimum for K<=2, N<=5 instances."""
    if sc.K > 2 or sc.N > 5:
        raise ValueError("primal oracle is restricted to K<=2, N<=5 instances")
    q = traj.q[:-1]
    h2 = sc.altitude ** 2
    total = 0.0
    snr1 = sc.snr_ref_ap / (((q - sc.ap_pos) ** 2).sum(axis=1) + h2)
    for k in range(sc.K):
        snr0 = sc.snr_ref_uav / (((q - sc.td_pos[k]) ** 2).sum(axis=1) + h2)
        total += _td_bound(sc.task_min[k], snr0, snr1, sc)
    return total


# textbook simplex (LP oracle) ---------------------------------------------

def reference_simplex(c, A, b, max_iter: int = 20000):
    """Plain Big-M tableau simplex for min c'x s.t. Ax <= b, x >= 0.

    Independent of the production two-phase solver. Returns (status, x, objective).
    """
    c = np.asarray(c, dtype=float)
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float)
    m, n = A.shape
    bigM = 1e7 * max(1.0, float(np.abs(c).max(initial=0.0)))

    neg = b < 0
    sign = np.where(neg, -1.0, 1.0)
    As = A * sign[:, None]
    bs = b * sign
    n_art = int(neg.sum())
    ncols = n + m + n_art
    T = np.zeros((m, ncols + 1))
    T[:, :n] = As
    T[np.arange(m), n + np.arange(m)] = sign
    T[np.where(neg)[0], n + m + np.arange(n_art)] = 1.0
    T[:, -1] = bs
    cost = np.zeros(ncols)
    cost[:n] = c
    cost[n + m:] = bigM
    basis = np.where(neg, 0, n + np.arange(m))
    basis[neg] = n + m + np.arange(n_art)

    z = cost.copy().astype(float)
    zval = 0.0
    for i in range(m):
        z -= cost[basis[i]] * T[i, :-1]
        zval -= cost[basis[i]] * T[i, -1]

    for _ in range(max_iter):
        enter = -1
        for j in range(ncols):
            if z[j] < -1e-9:
                enter = j
                break
        if enter < 0:
            break
        ratios = np.where(T[:, enter] > 1e-11, T[:, -1] / T[:, enter], np.inf)
        if not np.any(np.isfinite(ratios)):
            return "unbounded", None, -np.inf
        leave = -1
        best = np.inf
        for i in range(m):
            if ratios[i] < best - 1e-15 or (abs(ratios[i] - best) <= 1e-15
                                            and (leave < 0 or basis[i] < basis[leave])):
                if np.isfinite(ratios[i]):
                    best = ratios[i]
                    leave = i
        piv = T[leave, enter]
        T[leave] /= piv
        for i in range(m):
            if i != leave and T[i, enter] != 0.0:
                T[i] -= T[i, enter] * T[leave]
        f = z[enter]
        z -= f * T[leave, :-1]
        zval -= f * T[leave, -1]
        basis[leave] = enter
    else:
        return "failed", None, np.nan

    x_full = np.zeros(ncols)
    x_full[basis] = T[:, -1]
    if n_art and np.any(x_full[n + m:] > 1e-7):
        return "infeasible", None, np.nan
    x = x_full[:n]
    return "optimal", x, float(c @ x)
