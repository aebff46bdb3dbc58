"""Log-barrier interior solver for the convexified trajectory step.

One problem shape: cubic computation costs plus surrogate flight power over
waypoints, bit loads and the two slack families, subject to linearized rate
lower bounds, prefix causality, speed caps, a second-order-cone row per slot
(speed slack) and the slack-coupling row. Damped Newton on the barrier
objective; the SOC rows use the canonical Lorentz-cone barrier.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)


@dataclass
class TrajectorySubproblem:
    """Data of one convexified trajectory step at a fixed expansion point.

    Rate lower bounds are stored as phi(q) = alpha - beta * ||q - w||^2 (bits/s/Hz
    against the anchor w of each family), scaled by a = t* B0. Pinned bit entries
    are fixed constants (presolve); kept-row masks drop vacuous constraints.
    """

    # dimensions and fixed scenario data
    K: int
    N: int
    dt: float
    v_max: float
    q0: np.ndarray
    qF: np.ndarray
    w_td: np.ndarray              # (K, 2)
    w_ap: np.ndarray              # (2,)
    # objective coefficients
    eu: float                     # kappa_u c_u^3 / dt^2
    eh: float
    w_dt: float                   # flight_weight * dt
    P0: float
    Pi: float
    Utip2: float
    par: float                    # 0.5 d0 rho s A
    v0sq: float
    # linearized rate bounds
    a1: np.ndarray                # (K, N) t1* B0
    a2: np.ndarray
    a3: np.ndarray
    al1: np.ndarray
    be1: np.ndarray
    al2: np.ndarray
    be2: np.ndarray
    al3: np.ndarray
    be3: np.ndarray
    # bit data
    cap_lu: float
    cap_lh: float
    Lmin: np.ndarray              # (K, N)
    lu_pin: np.ndarray            # (K, N) bool
    lu_fix: np.ndarray            # (K, N) pinned values
    lh_pin: np.ndarray
    la_pin: np.ndarray
    keep_caus: np.ndarray         # (K, N) bool
    keep_r2: np.ndarray
    keep_r3: np.ndarray
    keep_task: np.ndarray
    # expansion point and slack-coupling linearization
    q_exp: np.ndarray             # (N+1, 2)
    v_exp: np.ndarray             # (N,)
    u_exp: np.ndarray             # (N,)
    cA: np.ndarray                # (N,) 2 u_j
    cB: np.ndarray                # (N,) 2 v_j / v0^2
    cC: np.ndarray                # (N,) u_j^2 + v_j^2/v0^2
    # warm start bits
    lu0: np.ndarray
    lh0: np.ndarray
    la0: np.ndarray
    q_free: bool = True
    u_min: float = 1e-6


@dataclass
class TrajectoryStepResult:
    q: np.ndarray
    v: np.ndarray
    u: np.ndarray
    l_u: np.ndarray
    l_h: np.ndarray
    l_a: np.ndarray
    objective: float
    status: str = "optimal"        # optimal | iteration-limit | stalled
    newton_iters: int = 0
    kkt_residual: float = np.nan


def surrogate_objective(tsp: TrajectorySubproblem, lu, lh, v, u) -> float:
    comp = float(np.sum(tsp.eu * lu ** 3) + np.sum(tsp.eh * lh ** 3))
    fly = float(np.sum(tsp.P0 * (1.0 + 3.0 * v ** 2 / tsp.Utip2)
                       + tsp.Pi * u + tsp.par * v ** 3))
    return comp + tsp.w_dt * fly


def _phi(a, al, be, s):
    """a * (alpha - beta * s): linearized bits per full subslot second."""
    return a * (al - be * s)


def constraint_report(tsp: TrajectorySubproblem, q, lu, lh, la, v, u) -> dict:
    """Constraint residuals (<= 0 feasible) per family, cone margin > 0 feasible."""
    dq = np.diff(q, axis=0)
    seg2 = (dq ** 2).sum(axis=1)
    s_td = ((q[None, :-1, :] - tsp.w_td[:, None, :]) ** 2).sum(axis=2)   # (K, N)
    s_ap = ((q[:-1] - tsp.w_ap) ** 2).sum(axis=1)                        # (N,)
    cap1 = _phi(tsp.a1, tsp.al1, tsp.be1, s_td)
    rep = {
        "speed": seg2 - (tsp.dt * tsp.v_max) ** 2,
        "causality": (np.cumsum(lh, axis=1) - np.cumsum(cap1, axis=1))[tsp.keep_caus],
        "relay_uav": (la - _phi(tsp.a2, tsp.al2, tsp.be2, s_td))[tsp.keep_r2],
        "relay_ap": (la - _phi(tsp.a3, tsp.al3, tsp.be3, s_ap[None, :]))[tsp.keep_r3],
        "task": (tsp.Lmin - lu - lh - la)[tsp.keep_task],
        "lu_lo": -lu[~tsp.lu_pin],
        "lu_hi": (lu - tsp.cap_lu)[~tsp.lu_pin],
        "lh_lo": -lh[~tsp.lh_pin],
        "lh_hi": (lh - tsp.cap_lh)[~tsp.lh_pin],
        "la_lo": -la[~tsp.la_pin],
        "v_lo": -v,
        "u_lo": tsp.u_min - u,
        "soc_margin": v ** 2 - seg2 / tsp.dt ** 2,
        "chi": 1.0 / u ** 2 - (tsp.cA * u + tsp.cB * v - tsp.cC),
    }
    return rep


def max_violation(rep: dict) -> float:
    worst = 0.0
    for name, vals in rep.items():
        if len(vals) == 0:
            continue
        if name == "soc_margin":
            worst = max(worst, float(np.max(-vals)))
        else:
            worst = max(worst, float(np.max(vals)))
    return worst


class _Work:
    """Index maps and row bookkeeping for one subproblem."""

    def __init__(self, tsp: TrajectorySubproblem):
        self.tsp = tsp
        N, K = tsp.N, tsp.K
        self.nq = 2 * (N - 1) if tsp.q_free else 0
        self.lu_free = np.flatnonzero(~tsp.lu_pin)
        self.lh_free = np.flatnonzero(~tsp.lh_pin)
        self.la_free = np.flatnonzero(~tsp.la_pin)
        self.o_lu = self.nq
        self.o_lh = self.o_lu + self.lu_free.size
        self.o_la = self.o_lh + self.lh_free.size
        self.o_v = self.o_la + self.la_free.size
        self.o_u = self.o_v + N
        self.dim = self.o_u + N

        flat_to_col = {}
        for c, f in enumerate(self.lh_free):
            flat_to_col[f] = self.o_lh + c
        self.lh_col = np.full(K * N, -1, dtype=int)
        for f, c in flat_to_col.items():
            self.lh_col[f] = c
        self.lu_col = np.full(K * N, -1, dtype=int)
        self.lu_col[self.lu_free] = self.o_lu + np.arange(self.lu_free.size)
        self.la_col = np.full(K * N, -1, dtype=int)
        self.la_col[self.la_free] = self.o_la + np.arange(self.la_free.size)

        self.caus_rows = [(k, n) for k in range(K) for n in range(N) if tsp.keep_caus[k, n]]
        self.r2_rows = [(k, n) for k in range(K) for n in range(N) if tsp.keep_r2[k, n]]
        self.r3_rows = [(k, n) for k in range(K) for n in range(N) if tsp.keep_r3[k, n]]
        self.task_rows = [(k, n) for k in range(K) for n in range(N) if tsp.keep_task[k, n]]
        self.n_rows = (len(self.caus_rows) + len(self.r2_rows) + len(self.r3_rows)
                       + len(self.task_rows) + (N if tsp.q_free else 0))
        # barrier constraint count (bounds + plain rows + cone + chi)
        self.m_total = (self.n_rows + 2 * self.lu_free.size + 2 * self.lh_free.size
                        + self.la_free.size + 2 * N + N + N)

    def pack(self, q, lu, lh, la, v, u) -> np.ndarray:
        z = np.empty(self.dim)
        if self.tsp.q_free:
            z[:self.nq] = q[1:-1].ravel()
        z[self.o_lu:self.o_lh] = lu.ravel()[self.lu_free]
        z[self.o_lh:self.o_la] = lh.ravel()[self.lh_free]
        z[self.o_la:self.o_v] = la.ravel()[self.la_free]
        z[self.o_v:self.o_u] = v
        z[self.o_u:] = u
        return z

    def unpack(self, z):
        tsp = self.tsp
        N = tsp.N
        if tsp.q_free:
            q = np.vstack([tsp.q0, z[:self.nq].reshape(N - 1, 2), tsp.qF])
        else:
            q = tsp.q_exp.copy()
        lu = tsp.lu_fix.copy()
        np.put(lu, self.lu_free, z[self.o_lu:self.o_lh])
        lh = np.zeros((tsp.K, N))
        np.put(lh, self.lh_free, z[self.o_lh:self.o_la])
        la = np.zeros((tsp.K, N))
        np.put(la, self.la_free, z[self.o_la:self.o_v])
        v = z[self.o_v:self.o_u]
        u = z[self.o_u:]
        return q, lu, lh, la, v, u


def _strictly_feasible(w: _Work, z, margin=0.0) -> bool:
    tsp = w.tsp
    q, lu, lh, la, v, u = w.unpack(z)
    if np.any(v <= margin) or np.any(u <= tsp.u_min + margin):
        return False
    rep = constraint_report(tsp, q, lu, lh, la, v, u)
    for name, vals in rep.items():
        if len(vals) == 0:
            continue
        if name == "soc_margin":
            if np.any(vals <= margin):
                return False
        elif name in ("v_lo", "u_lo"):
            continue
        elif np.any(vals >= -margin):
            return False
    return True


def _barrier_eval(w: _Work, z, t_bar):
    """psi, gradient, Hessian of t*f0 + Phi at a strictly feasible z."""
    tsp = w.tsp
    N, K = tsp.N, tsp.K
    q, lu, lh, la, v, u = w.unpack(z)
    dq = np.diff(q, axis=0)
    seg2 = (dq ** 2).sum(axis=1)
    diff_td = q[None, :-1, :] - tsp.w_td[:, None, :]          # (K, N, 2)
    s_td = (diff_td ** 2).sum(axis=2)
    diff_ap = q[:-1] - tsp.w_ap
    s_ap = (diff_ap ** 2).sum(axis=1)

    grad = np.zeros(w.dim)
    H = np.zeros((w.dim, w.dim))

    # objective
    f0 = surrogate_objective(tsp, lu, lh, v, u)
    g_lu = 3.0 * tsp.eu * lu ** 2
    g_lh = 3.0 * tsp.eh * lh ** 2
    grad[w.o_lu:w.o_lh] += t_bar * g_lu.ravel()[w.lu_free]
    grad[w.o_lh:w.o_la] += t_bar * g_lh.ravel()[w.lh_free]
    grad[w.o_v:w.o_u] += t_bar * tsp.w_dt * (6.0 * tsp.P0 * v / tsp.Utip2
                                             + 3.0 * tsp.par * v ** 2)
    grad[w.o_u:] += t_bar * tsp.w_dt * tsp.Pi
    dd = np.zeros(w.dim)
    dd[w.o_lu:w.o_lh] = t_bar * 6.0 * tsp.eu * lu.ravel()[w.lu_free]
    dd[w.o_lh:w.o_la] = t_bar * 6.0 * tsp.eh * lh.ravel()[w.lh_free]
    dd[w.o_v:w.o_u] = t_bar * tsp.w_dt * (6.0 * tsp.P0 / tsp.Utip2 + 6.0 * tsp.par * v)
    H[np.diag_indices_from(H)] += dd
    psi = t_bar * f0

    def add_bound(cols, gap, sign):
        # -log(gap) with d(gap)/dx = sign on the named columns
        nonlocal psi
        psi -= float(np.sum(np.log(gap)))
        grad[cols] += -sign / gap
        H[cols, cols] += 1.0 / gap ** 2

    lu_f = lu.ravel()[w.lu_free]
    lh_f = lh.ravel()[w.lh_free]
    la_f = la.ravel()[w.la_free]
    lu_cols = np.arange(w.o_lu, w.o_lh)
    lh_cols = np.arange(w.o_lh, w.o_la)
    la_cols = np.arange(w.o_la, w.o_v)
    v_cols = np.arange(w.o_v, w.o_u)
    u_cols = np.arange(w.o_u, w.dim)
    if lu_cols.size:
        add_bound(lu_cols, lu_f, 1.0)
        add_bound(lu_cols, tsp.cap_lu - lu_f, -1.0)
    if lh_cols.size:
        add_bound(lh_cols, lh_f, 1.0)
        add_bound(lh_cols, tsp.cap_lh - lh_f, -1.0)
    if la_cols.size:
        add_bound(la_cols, la_f, 1.0)
    add_bound(v_cols, v.copy(), 1.0)
    add_bound(u_cols, u - tsp.u_min, 1.0)

    # plain rows: collect jacobian and weights, add rank-one and curvature terms
    rows = []
    vals = []
    curv_q = np.zeros((N, 2))          # diagonal curvature per slot position (both coords)

    if tsp.q_free:
        # speed rows
        cap2 = (tsp.dt * tsp.v_max) ** 2
        for n in range(N):
            gval = seg2[n] - cap2
            row = np.zeros(w.dim)
            if n >= 1:
                row[2 * (n - 1):2 * n] = -2.0 * dq[n]
            if n <= N - 2:
                row[2 * n:2 * n + 2] = 2.0 * dq[n]
            rows.append(row)
            vals.append(gval)
            # curvature 2*[[I,-I],[-I,I]] on (q[n], q[n+1])
            wgt = 1.0 / (-gval)
            for (i, j, s) in ((n, n, 1.0), (n + 1, n + 1, 1.0), (n, n + 1, -1.0),
                              (n + 1, n, -1.0)):
                if 1 <= i <= N - 1 and 1 <= j <= N - 1:
                    ci, cj = 2 * (i - 1), 2 * (j - 1)
                    H[ci, cj] += 2.0 * s * wgt
                    H[ci + 1, cj + 1] += 2.0 * s * wgt

    cap1 = _phi(tsp.a1, tsp.al1, tsp.be1, s_td)
    pre_lh = np.cumsum(lh, axis=1)
    pre_cap = np.cumsum(cap1, axis=1)
    ab1 = tsp.a1 * tsp.be1
    Gq1 = 2.0 * ab1[:, :, None] * diff_td                     # (K, N, 2)
    caus_weights = np.zeros((K, N))
    for (k, n) in w.caus_rows:
        gval = pre_lh[k, n] - pre_cap[k, n]
        row = np.zeros(w.dim)
        if tsp.q_free and n >= 1:
            m = min(n, N - 1)
            row[:2 * m] = Gq1[k, 1:m + 1].ravel()
        cols = w.lh_col[k * N:k * N + n + 1]
        cols = cols[cols >= 0]
        row[cols] = 1.0
        rows.append(row)
        vals.append(gval)
        caus_weights[k, n] = 1.0 / (-gval)
    if tsp.q_free and w.caus_rows:
        # sum_{rows n >= i} w_row * 2 a1 be1[k, i] lands on q[i] diagonal
        suffix = np.cumsum(caus_weights[:, ::-1], axis=1)[:, ::-1]
        coef = (2.0 * ab1 * suffix).sum(axis=0)               # (N,)
        curv_q[:, 0] += coef
        curv_q[:, 1] += coef

    ab2 = tsp.a2 * tsp.be2
    Gq2 = 2.0 * ab2[:, :, None] * diff_td
    for (k, n) in w.r2_rows:
        gval = la[k, n] - _phi(tsp.a2[k, n], tsp.al2[k, n], tsp.be2[k, n], s_td[k, n])
        row = np.zeros(w.dim)
        if tsp.q_free and 1 <= n <= N - 1:
            row[2 * (n - 1):2 * n] = Gq2[k, n]
        c = w.la_col[k * N + n]
        if c >= 0:
            row[c] = 1.0
        rows.append(row)
        vals.append(gval)
        if 0 <= n:
            curv_q[n] += 2.0 * ab2[k, n] / (-gval)

    ab3 = tsp.a3 * tsp.be3
    Gq3 = 2.0 * ab3[:, :, None] * diff_ap[None, :, :]
    for (k, n) in w.r3_rows:
        gval = la[k, n] - _phi(tsp.a3[k, n], tsp.al3[k, n], tsp.be3[k, n], s_ap[n])
        row = np.zeros(w.dim)
        if tsp.q_free and 1 <= n <= N - 1:
            row[2 * (n - 1):2 * n] = Gq3[k, n]
        c = w.la_col[k * N + n]
        if c >= 0:
            row[c] = 1.0
        rows.append(row)
        vals.append(gval)
        curv_q[n] += 2.0 * ab3[k, n] / (-gval)

    for (k, n) in w.task_rows:
        gval = tsp.Lmin[k, n] - lu[k, n] - lh[k, n] - la[k, n]
        row = np.zeros(w.dim)
        for colmap in (w.lu_col, w.lh_col, w.la_col):
            c = colmap[k * N + n]
            if c >= 0:
                row[c] = -1.0
        rows.append(row)
        vals.append(gval)

    # chi rows: 1/u^2 - (cA u + cB v - cC) <= 0
    chi_gap = (tsp.cA * u + tsp.cB * v - tsp.cC) - 1.0 / u ** 2
    for n in range(N):
        row = np.zeros(w.dim)
        row[w.o_u + n] = -2.0 / u[n] ** 3 - tsp.cA[n]
        row[w.o_v + n] = -tsp.cB[n]
        rows.append(row)
        vals.append(-chi_gap[n])
        H[w.o_u + n, w.o_u + n] += (6.0 / u[n] ** 4) / chi_gap[n]

    if tsp.q_free:
        for i in range(1, N):
            c = 2 * (i - 1)
            H[c, c] += curv_q[i, 0]
            H[c + 1, c + 1] += curv_q[i, 1]

    vals = np.asarray(vals)
    Jm = np.asarray(rows)
    psi += -float(np.sum(np.log(-vals)))
    wts1 = 1.0 / (-vals)
    grad += Jm.T @ wts1
    H += (Jm * (wts1 ** 2)[:, None]).T @ Jm

    # Lorentz-cone barrier per slot: -log(v^2 - ||dq||^2/dt^2)
    dt2 = tsp.dt ** 2
    c_margin = v ** 2 - seg2 / dt2
    psi += -float(np.sum(np.log(c_margin)))
    for n in range(N):
        gc = np.zeros(w.dim)
        gc[w.o_v + n] = 2.0 * v[n]
        idx = []
        if tsp.q_free:
            if n >= 1:
                gc[2 * (n - 1):2 * n] = 2.0 * dq[n] / dt2
                idx.extend([2 * (n - 1), 2 * n - 1])
            if n <= N - 2:
                gc[2 * n:2 * n + 2] = -2.0 * dq[n] / dt2
                idx.extend([2 * n, 2 * n + 1])
        idx.append(w.o_v + n)
        cm = c_margin[n]
        grad[idx] += -gc[idx] / cm
        sub = np.ix_(idx, idx)
        H[sub] += np.outer(gc[idx], gc[idx]) / cm ** 2
        # -hess(c)/c: +2/(c dt^2) Laplacian block on q, -2/c on v
        H[w.o_v + n, w.o_v + n] += -2.0 / cm
        if tsp.q_free:
            for (i, j, s) in ((n, n, 1.0), (n + 1, n + 1, 1.0), (n, n + 1, -1.0),
                              (n + 1, n, -1.0)):
                if 1 <= i <= N - 1 and 1 <= j <= N - 1:
                    ci, cj = 2 * (i - 1), 2 * (j - 1)
                    H[ci, cj] += 2.0 * s / (cm * dt2)
                    H[ci + 1, cj + 1] += 2.0 * s / (cm * dt2)

    return psi, grad, H, f0


def _newton_stage(w: _Work, z, t_bar, max_newton=80, tol_dec=1e-9):
    # stage suboptimality is about dec2/(2 t_bar) in objective units, so the
    # decrement threshold scales with t_bar (psi itself scales with t_bar and
    # its float64 rounding would otherwise dominate at late stages)
    threshold = max(2.0 * tol_dec, 2e-13 * t_bar)
    iters = 0
    for _ in range(max_newton):
        psi, grad, H, f0 = _barrier_eval(w, z, t_bar)
        step = None
        ridge = 0.0
        for _try in range(6):
            try:
                Hr = H if ridge == 0.0 else H + ridge * np.eye(w.dim)
                Ld = np.linalg.cholesky(Hr)
                step = np.linalg.solve(Ld.T, np.linalg.solve(Ld, -grad))
                break
            except np.linalg.LinAlgError:
                ridge = max(ridge * 100.0, 1e-10 * float(np.abs(H).max()))
        if step is None:
            return z, iters, False
        dec2 = float(-grad @ step)
        if dec2 <= threshold:
            return z, iters, True
        alpha = 1.0
        accepted = False
        for _bt in range(70):
            z_try = z + alpha * step
            if _strictly_feasible(w, z_try):
                psi_try, _, _, _ = _barrier_eval_cheap(w, z_try, t_bar)
                if psi_try <= psi - 0.25 * alpha * dec2:
                    z = z_try
                    accepted = True
                    break
            alpha *= 0.5
        iters += 1
        if not accepted:
            # progress exhausted at float resolution; converged if the
            # remaining gap is negligible in objective units
            return z, iters, dec2 / (2.0 * t_bar) <= 1e-9
    return z, iters, False


def _barrier_eval_cheap(w: _Work, z, t_bar):
    """psi only (line search); assumes z strictly feasible."""
    tsp = w.tsp
    q, lu, lh, la, v, u = w.unpack(z)
    f0 = surrogate_objective(tsp, lu, lh, v, u)
    rep = constraint_report(tsp, q, lu, lh, la, v, u)
    psi = t_bar * f0
    for name, valsr in rep.items():
        if len(valsr) == 0:
            continue
        if name == "soc_margin":
            psi -= float(np.sum(np.log(valsr)))
        elif name == "u_lo":
            psi -= float(np.sum(np.log(u - tsp.u_min)))
        elif name == "v_lo":
            psi -= float(np.sum(np.log(v)))
        else:
            psi -= float(np.sum(np.log(-valsr)))
    return psi, None, None, f0


def _interior_start(tsp: TrajectorySubproblem, w: _Work):
    """Construct a strictly feasible start near the expansion point, or None."""
    N = tsp.N
    q = tsp.q_exp.copy()
    if tsp.q_free:
        speeds = np.linalg.norm(np.diff(q, axis=0), axis=1) / tsp.dt
        if np.max(speeds) >= tsp.v_max * (1.0 - 1e-9):
            straight = np.linspace(tsp.q0, tsp.qF, N + 1)
            eps = 1e-6
            while eps <= 1e-2:
                q_try = (1.0 - eps) * tsp.q_exp + eps * straight
                sp = np.linalg.norm(np.diff(q_try, axis=0), axis=1) / tsp.dt
                if np.max(sp) < tsp.v_max * (1.0 - 1e-12):
                    q = q_try
                    break
                eps *= 10.0
            else:
                return None

    speeds = np.linalg.norm(np.diff(q, axis=0), axis=1) / tsp.dt
    v = np.maximum(tsp.v_exp, speeds) + 0.05
    u = np.maximum(tsp.u_exp, tsp.u_min + 1e-3)
    for _ in range(200):
        gap = (tsp.cA * u + tsp.cB * v - tsp.cC) - 1.0 / u ** 2
        bad = gap <= 1e-9
        if not np.any(bad):
            break
        u = np.where(bad, u + 0.05, u)
    else:
        return None

    s_td = ((q[None, :-1, :] - tsp.w_td[:, None, :]) ** 2).sum(axis=2)
    s_ap = ((q[:-1] - tsp.w_ap) ** 2).sum(axis=1)
    cap1 = _phi(tsp.a1, tsp.al1, tsp.be1, s_td)
    la_cap = np.minimum(_phi(tsp.a2, tsp.al2, tsp.be2, s_td),
                        _phi(tsp.a3, tsp.al3, tsp.be3, s_ap[None, :]))

    scaleb = max(float(tsp.Lmin.max(initial=0.0)), 1.0)
    eps_l = 1e-7 * scaleb
    lh = np.where(tsp.lh_pin, 0.0, tsp.lh0 * (1.0 - 1e-4))
    la = np.where(tsp.la_pin, 0.0, tsp.la0 * (1.0 - 1e-4))
    la_room = np.where(tsp.la_pin, 0.0, np.maximum(la_cap, 0.0))
    la = np.minimum(la, 0.995 * la_room)
    la = np.where(~tsp.la_pin, np.maximum(la, np.minimum(eps_l, 0.25 * la_room)), 0.0)
    if np.any((~tsp.la_pin) & (la_room <= 0.0)):
        return None

    # keep strict prefix headroom per TD
    for k in range(tsp.K):
        pre_cap = np.cumsum(cap1[k])
        pre_lh = np.cumsum(lh[k])
        kept = np.flatnonzero(tsp.keep_caus[k])
        shrink = 1.0
        for n in kept:
            if pre_lh[n] > 0.0:
                shrink = min(shrink, 0.995 * pre_cap[n] / pre_lh[n])
        if shrink < 1.0:
            lh[k] *= max(shrink, 0.0)
    lh = np.where(~tsp.lh_pin,
                  np.clip(lh, np.minimum(eps_l, 0.25 * tsp.cap_lh), 0.995 * tsp.cap_lh),
                  0.0)

    need = tsp.Lmin - lh - la
    lu = np.where(tsp.lu_pin, tsp.lu_fix,
                  np.clip(need + 1e-4 * scaleb, eps_l, (1.0 - 1e-9) * tsp.cap_lu))
    # cover residual gaps with relay headroom where the local cap binds
    gap = tsp.Lmin - lu - lh - la
    fixable = (gap > 0.0) & (~tsp.la_pin)
    la = np.where(fixable, np.minimum(la + gap + eps_l, 0.999 * la_room), la)

    z = w.pack(q, lu, lh, la, v, u)
    if _strictly_feasible(w, z):
        return z
    # one fallback: scale bits toward the strict interior more aggressively
    lh2 = lh * 0.9
    la2 = np.where(~tsp.la_pin, np.maximum(la * 0.9, np.minimum(eps_l, 0.2 * la_room)), 0.0)
    need = tsp.Lmin - lh2 - la2
    lu2 = np.where(tsp.lu_pin, tsp.lu_fix,
                   np.clip(need + 1e-3 * scaleb, eps_l, (1.0 - 1e-9) * tsp.cap_lu))
    gap = tsp.Lmin - lu2 - lh2 - la2
    fixable = (gap > 0.0) & (~tsp.la_pin)
    la2 = np.where(fixable, np.minimum(la2 + gap + eps_l, 0.999 * la_room), la2)
    z = w.pack(q, lu2, lh2, la2, v, u)
    if _strictly_feasible(w, z):
        return z
    return None


def solve_trajectory_subproblem(tsp: TrajectorySubproblem, tol: float = 1e-7,
                                max_stages: int = 24) -> TrajectoryStepResult:
    """Barrier solve of one trajectory step; never returns worse than the expansion point."""
    w = _Work(tsp)
    f_exp = surrogate_objective(tsp, np.where(tsp.lu_pin, tsp.lu_fix, tsp.lu0),
                                tsp.lh0, tsp.v_exp, tsp.u_exp)

    def expansion_result(status):
        return TrajectoryStepResult(tsp.q_exp.copy(), tsp.v_exp.copy(), tsp.u_exp.copy(),
                                    np.where(tsp.lu_pin, tsp.lu_fix, tsp.lu0).copy(),
                                    tsp.lh0.copy(), tsp.la0.copy(), f_exp, status=status)

    z = _interior_start(tsp, w)
    if z is None:
        return expansion_result("stalled")

    _, _, _, f0 = _barrier_eval_cheap(w, z, 1.0)
    t_bar = max(1.0, w.m_total / max(0.1 * (abs(f0) + 1e-3), 1e-6))
    gap_target = 1e-9 * max(1.0, abs(f_exp))
    newton_total = 0
    status = "optimal"
    for _stage in range(max_stages):
        last = w.m_total / t_bar <= gap_target
        z, it, ok = _newton_stage(w, z, t_bar, tol_dec=1e-12 if last else 1e-9)
        newton_total += it
        if not ok:
            status = "iteration-limit"
            break
        if last:
            break
        t_bar *= 10.0
    else:
        status = "iteration-limit"

    q, lu, lh, la, v, u = w.unpack(z)
    f_final = surrogate_objective(tsp, lu, lh, v, u)
    psi, grad, _, _ = _barrier_eval(w, z, t_bar)
    kkt = float(np.linalg.norm(grad) / t_bar)
    if f_final > f_exp * (1.0 + 1e-12) + 1e-12:
        res = expansion_result("stalled")
        res.newton_iters = newton_total
        return res
    return TrajectoryStepResult(q, v, u, lu, lh, la, f_final, status=status,
                                newton_iters=newton_total, kkt_residual=kkt)
