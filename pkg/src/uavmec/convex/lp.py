"""Dense two-phase primal simplex for the reconstruction LP shape.

Solves min c'x s.t. A x <= b, lb <= x <= ub with finite lower bounds. Bland's
rule throughout, so runs are deterministic and degenerate ties break toward the
lowest index. Row duals are recovered from the slack reduced costs and a strong
duality residual is checked before reporting an optimum.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class LinearProgram:
    c: np.ndarray
    A: np.ndarray
    b: np.ndarray
    lb: np.ndarray
    ub: np.ndarray

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        self.b = np.asarray(self.b, dtype=float)
        self.lb = np.asarray(self.lb, dtype=float)
        self.ub = np.asarray(self.ub, dtype=float)
        m, n = self.A.shape
        if self.c.shape != (n,) or self.b.shape != (m,):
            raise ValueError("inconsistent LP dimensions")
        if not (np.all(np.isfinite(self.c)) and np.all(np.isfinite(self.A))
                and np.all(np.isfinite(self.b)) and np.all(np.isfinite(self.lb))):
            raise ValueError("LP data must be finite (lb finite, ub may be +inf)")
        if np.any(self.ub < self.lb):
            raise ValueError("ub < lb")


@dataclass
class LPResult:
    status: str                      # optimal | infeasible | unbounded | failed
    x: np.ndarray | None = None
    objective: float = np.nan
    row_duals: np.ndarray | None = None   # multipliers of A x <= b, >= 0
    duality_residual: float = np.nan
    iterations: int = 0
    message: str = ""


_PIV_TOL = 1e-11


def _pivot(tab, rhs, obj, objval, basis, row, col):
    piv = tab[row, col]
    tab[row] /= piv
    rhs[row] /= piv
    colvals = tab[:, col].copy()
    colvals[row] = 0.0
    tab -= np.outer(colvals, tab[row])
    rhs -= colvals * rhs[row]
    for k in range(len(obj)):
        f = obj[k][col]
        if f != 0.0:
            obj[k] -= f * tab[row]
            objval[k] -= f * rhs[row]
    basis[row] = col


def _run_simplex(tab, rhs, obj, objval, basis, cost_row, tol, max_iter):
    """Bland-rule phase on objective row index cost_row. Returns status string."""
    it = 0
    while True:
        r = obj[cost_row]
        enter = -1
        for j in range(tab.shape[1]):
            if r[j] < -tol:
                enter = j
                break
        if enter < 0:
            return "optimal", it
        col = tab[:, enter]
        best_ratio = np.inf
        leave = -1
        for i in range(tab.shape[0]):
            if col[i] > _PIV_TOL:
                ratio = rhs[i] / col[i]
                if ratio < best_ratio - 1e-15 or (abs(ratio - best_ratio) <= 1e-15
                                                  and (leave < 0 or basis[i] < basis[leave])):
                    best_ratio = ratio
                    leave = i
        if leave < 0:
            return "unbounded", it
        _pivot(tab, rhs, obj, objval, basis, leave, enter)
        it += 1
        if it > max_iter:
            return "failed", it


def lp_solve(lp: LinearProgram, tol: float = 1e-9, max_iter: int | None = None) -> LPResult:
    """Solve the LP; status optimal only after the duality residual check passes."""
    m, n = lp.A.shape
    if max_iter is None:
        max_iter = 2000 + 60 * (m + n)

    # shift to y = x - lb >= 0 and append finite upper bounds as rows
    b0 = lp.b - lp.A @ lp.lb
    rows = [lp.A]
    rhs_rows = [b0]
    ub_idx = np.where(np.isfinite(lp.ub))[0]
    if ub_idx.size:
        E = np.zeros((ub_idx.size, n))
        E[np.arange(ub_idx.size), ub_idx] = 1.0
        rows.append(E)
        rhs_rows.append(lp.ub[ub_idx] - lp.lb[ub_idx])
    G = np.vstack(rows)
    h = np.concatenate(rhs_rows)
    m2 = G.shape[0]

    scale = np.maximum(np.abs(G).max(axis=1), 1e-12)
    G = G / scale[:, None]
    h = h / scale

    neg = h < 0.0
    sign = np.where(neg, -1.0, 1.0)
    Gs = G * sign[:, None]
    hs = h * sign
    n_art = int(neg.sum())

    ncols = n + m2 + n_art
    tab = np.zeros((m2, ncols))
    tab[:, :n] = Gs
    tab[np.arange(m2), n + np.arange(m2)] = sign  # slack columns (+-1)
    art_rows = np.where(neg)[0]
    tab[art_rows, n + m2 + np.arange(n_art)] = 1.0
    rhs = hs.copy()

    basis = np.empty(m2, dtype=int)
    basis[~neg] = n + np.where(~neg)[0]
    basis[neg] = n + m2 + np.arange(n_art)

    # objective rows: [0] phase-2 cost, [1] phase-1 artificial cost
    c_full = np.zeros(ncols)
    c_full[:n] = lp.c
    obj = [c_full.copy(), np.zeros(ncols)]
    objval = np.zeros(2)
    if n_art:
        obj[1][n + m2:] = 1.0
        # price out initial artificial basis
        for r in art_rows:
            obj[1] -= tab[r]
        objval[1] = -rhs[art_rows].sum()

        status, it1 = _run_simplex(tab, rhs, obj, objval, basis, 1, tol, max_iter)
        if status == "failed":
            return LPResult("failed", message="phase 1 iteration limit")
        phase1 = -objval[1]
        if phase1 > tol * (1.0 + abs(hs).max()):
            return LPResult("infeasible", iterations=it1,
                            message=f"phase-1 infeasibility {phase1:.3e}")
        # pivot lingering artificials out of the basis where possible
        for i in range(m2):
            if basis[i] >= n + m2:
                piv_col = -1
                for j in range(n + m2):
                    if abs(tab[i, j]) > 1e-9:
                        piv_col = j
                        break
                if piv_col >= 0:
                    _pivot(tab, rhs, obj, objval, basis, i, piv_col)
        # freeze artificial columns at zero
        tab[:, n + m2:] = 0.0
        obj[0][n + m2:] = 0.0
    else:
        it1 = 0

    status, it2 = _run_simplex(tab, rhs, obj, objval, basis, 0, tol, max_iter)
    iters = it1 + it2
    if status == "failed":
        return LPResult("failed", iterations=iters, message="phase 2 iteration limit")
    if status == "unbounded":
        return LPResult("unbounded", iterations=iters)

    y = np.zeros(ncols)
    y[basis] = rhs
    x = lp.lb + y[:n]
    objective = float(lp.c @ x)

    # duals of the transformed rows = slack reduced costs; undo row scaling
    red = obj[0]
    lam = red[n:n + m2] / scale
    row_duals = lam[:m]

    # strong duality on the transformed problem: c'y = -h' lam  (min c'y, Gy<=h, y>=0)
    gap = abs(float(lp.c @ y[:n]) - float(-(h * scale) @ lam))
    primal_resid = float(np.max(G @ y[:n] - h, initial=0.0))
    dual_resid = float(np.max(-red, initial=0.0))
    residual = max(gap / (1.0 + abs(objective)), primal_resid, dual_resid)
    if residual > max(tol * 100.0, 1e-7):
        return LPResult("failed", x=x, objective=objective, iterations=iters,
                        duality_residual=residual,
                        message=f"optimality check failed, residual {residual:.3e}")
    return LPResult("optimal", x=x, objective=objective, row_duals=row_duals,
                    duality_residual=residual, iterations=iters)
