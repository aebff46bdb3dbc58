"""Fixed-trajectory resource solver via Lagrange duality.

For a given trajectory the energy problem is convex; its dual separates per
terminal device into blocks of closed-form inner minimizers (water-filling
powers, bang-bang subslots, square-root bit loads). Two ascent engines maximize
the dual (central-cut ellipsoid as the reference, projected subgradient for
large blocks), and the primal allocation is rebuilt from the unique lemma parts
by a small linear program per TD.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels as kern
from .channel import LN2
from .convex.lp import LinearProgram, lp_solve
from .scenario import DualVariables, ResourceAllocation, Scenario, Trajectory

log = logging.getLogger(__name__)

INDETERMINATE = "indeterminate"


@dataclass(frozen=True)
class Mode:
    """Which offloading routes exist: UAV computing (t1/l_h) and AP relaying (t2/t3/l_a)."""

    name: str
    use_uavc: bool = True
    use_relay: bool = True


FULL = Mode("full")
NO_AP = Mode("no-ap", use_relay=False)
ONLY_RELAY = Mode("only-relay", use_uavc=False)


@dataclass
class DualOptions:
    engine: str = "auto"          # auto | ellipsoid | subgradient
    radius: float = 1e3           # ellipsoid radius, scaled multiplier units
    center0: float = 1e-3         # cold-start center, scaled units
    tol: float = 1e-5             # ellipsoid stopping sqrt(g'Pg)
    max_iter: int | None = None   # per-TD ellipsoid cap; None = auto from dimension
    ellipsoid_dim_cap: int = 60   # auto engine: per-TD dims above this use subgradient
    sub_max_iter: int = 40000
    sub_patience: int = 200
    sub_delta_frac: float = 0.05
    sub_tol_rel: float = 1e-10
    trace_path: str | None = None


@dataclass
class InnerSolution:
    """Per-(TD, slot) lemma minimizers at a dual point. Subslot order: compute, relay, forward."""

    p: np.ndarray                 # (K, N, 3) W
    t: np.ndarray                 # (K, N, 3) s, bang-bang {0, slot_len}
    r: np.ndarray                 # (K, N, 3) bits/s at the lemma powers
    l_u: np.ndarray               # (K, N)
    l_h: np.ndarray               # (K, N)
    l_a_indeterminate: np.ndarray # (K, N) bool, Lemma-8 tie marker


@dataclass
class P2Result:
    alloc: ResourceAllocation | None
    duals: DualVariables
    inner: InnerSolution | None
    dual_value: float
    engine: str
    iterations: int
    status: str = "optimal"       # optimal | infeasible
    infeasible_kn: tuple | None = None
    message: str = ""


# geometry ---------------------------------------------------------------

def slot_snrs(traj: Trajectory, sc: Scenario) -> tuple[np.ndarray, np.ndarray]:
    """Per-watt SNRs at the slot positions q[0..N-1]: (gbar0 (K,N), gbar1 (N,))."""
    q = traj.q[:-1]
    h2 = sc.altitude ** 2
    d2_td = ((q[None, :, :] - sc.td_pos[:, None, :]) ** 2).sum(axis=2) + h2
    d2_ap = ((q - sc.ap_pos[None, :]) ** 2).sum(axis=1) + h2
    return sc.snr_ref_uav / d2_td, sc.snr_ref_ap / d2_ap


def _consts(sc: Scenario) -> dict:
    return dict(
        dt=sc.slot_len,
        B0=sc.subcarrier_bw,
        Pu=sc.p_td_max,
        Ph=sc.p_uav_max,
        au=3.0 * sc.cap_coeff_td * sc.cycles_per_bit_td ** 3,
        ah=3.0 * sc.cap_coeff_uav * sc.cycles_per_bit_uav ** 3,
        eu=sc.cap_coeff_td * sc.cycles_per_bit_td ** 3 / sc.slot_len ** 2,
        eh=sc.cap_coeff_uav * sc.cycles_per_bit_uav ** 3 / sc.slot_len ** 2,
        cap_lu=sc.bits_cap_td,
        cap_lh=sc.bits_cap_uav,
    )


# closed-form subslot/bit minimizers (Lemmas 3-8 surface) ----------------

def _subslot(mult: float, eta: float, snr_per_watt: float, p_max: float,
             sc: Scenario) -> tuple[float, float, float]:
    p = min(max(mult * sc.subcarrier_bw / LN2 - 1.0 / snr_per_watt, 0.0), p_max)
    r = sc.subcarrier_bw * math.log1p(snr_per_watt * p) / LN2
    t = sc.slot_len if p - mult * r + eta < 0.0 else 0.0
    return p, t, p * t


def best_offload_compute_subslot(lam_hat: float, eta: float, snr_per_watt: float,
                                 sc: Scenario) -> tuple[float, float, float]:
    """Optimal (power, duration, energy) of the offload-for-computing subslot."""
    return _subslot(lam_hat, eta, snr_per_watt, sc.p_td_max, sc)


def best_offload_relay_subslot(mu: float, eta: float, snr_per_watt: float,
                               sc: Scenario) -> tuple[float, float, float]:
    """Optimal (power, duration, energy) of the offload-for-relaying subslot."""
    return _subslot(mu, eta, snr_per_watt, sc.p_td_max, sc)


def best_forward_subslot(nu: float, eta: float, snr_per_watt: float,
                         sc: Scenario) -> tuple[float, float, float]:
    """Optimal (power, duration, energy) of the UAV-to-AP forwarding subslot."""
    return _subslot(nu, eta, snr_per_watt, sc.p_uav_max, sc)


def best_local_bits(omega: float, sc: Scenario) -> float:
    """Optimal locally computed bits: slot_len * clamp(sqrt(omega/(3 k_u c_u^3)), 0, f/c)."""
    au = 3.0 * sc.cap_coeff_td * sc.cycles_per_bit_td ** 3
    return min(sc.slot_len * math.sqrt(omega / au), sc.bits_cap_td)


def best_uav_bits(omega: float, lam_hat: float, sc: Scenario) -> float:
    """Optimal UAV-computed bits; zero when the causality price exceeds omega."""
    if omega < lam_hat:
        return 0.0
    ah = 3.0 * sc.cap_coeff_uav * sc.cycles_per_bit_uav ** 3
    return min(sc.slot_len * math.sqrt((omega - lam_hat) / ah), sc.bits_cap_uav)


def best_relay_bits(mu: float, nu: float, omega: float) -> tuple[float, bool]:
    """Optimal relayed bits: 0 when mu+nu-omega > 0, indeterminate tie at 0."""
    s = mu + nu - omega
    if s < 0.0:
        raise ValueError("dual infeasible: mu+nu-omega < 0 makes the dual unbounded")
    return 0.0, bool(s == 0.0)


# dual function / subgradient --------------------------------------------

def _pack_block(dv: DualVariables, k: int, mode: Mode) -> np.ndarray:
    parts = []
    if mode.use_uavc:
        parts.append(dv.lam[k] / kern.BIT_SCALE)
    if mode.use_relay:
        parts.append(dv.mu[k] / kern.BIT_SCALE)
        parts.append(dv.nu[k] / kern.BIT_SCALE)
    parts.append(dv.omega[k] / kern.BIT_SCALE)
    parts.append(dv.eta[k].copy())
    return np.concatenate(parts)


def _unpack_block(x: np.ndarray, N: int, mode: Mode):
    o = 0
    lam = np.zeros(N)
    mu = np.zeros(N)
    nu = np.zeros(N)
    if mode.use_uavc:
        lam = x[:N] * kern.BIT_SCALE
        o = N
    if mode.use_relay:
        mu = x[o:o + N] * kern.BIT_SCALE
        nu = x[o + N:o + 2 * N] * kern.BIT_SCALE
        o += 2 * N
    omega = x[o:o + N] * kern.BIT_SCALE
    eta = x[o + N:o + 2 * N].copy()
    return lam, mu, nu, omega, eta


def dual_value(duals: DualVariables, traj: Trajectory, sc: Scenario,
               mode: Mode = FULL) -> tuple[float, InnerSolution]:
    """Dual function of the fixed-trajectory problem and its inner minimizers."""
    duals.validate(require_cone=mode.use_relay)
    gb0, gb1 = slot_snrs(traj, sc)
    c = _consts(sc)
    K, N = sc.K, sc.N
    g = 0.0
    inner = InnerSolution(np.zeros((K, N, 3)), np.zeros((K, N, 3)), np.zeros((K, N, 3)),
                          np.zeros((K, N)), np.zeros((K, N)),
                          np.zeros((K, N), dtype=bool))
    for k in range(K):
        x = _pack_block(duals, k, mode)
        gk, _ = kern.dual_eval_td(x, N, mode.use_uavc, mode.use_relay, c["dt"], c["B0"],
                                  c["Pu"], c["Ph"], gb0[k], gb1, c["au"], c["ah"],
                                  c["eu"], c["eh"], c["cap_lu"], c["cap_lh"],
                                  sc.task_min[k])
        g += gk
        out = kern.dual_inner_td(duals.lam[k], duals.mu[k], duals.nu[k],
                                 duals.omega[k], duals.eta[k], mode.use_uavc,
                                 mode.use_relay, c["dt"], c["B0"], c["Pu"], c["Ph"],
                                 gb0[k], gb1, c["au"], c["ah"], c["cap_lu"], c["cap_lh"])
        p1, p2, p3, t1, t2, t3, r1, r2, r3, lu, lh = out
        inner.p[k] = np.stack([p1, p2, p3], axis=1)
        inner.t[k] = np.stack([t1, t2, t3], axis=1)
        inner.r[k] = np.stack([r1, r2, r3], axis=1)
        inner.l_u[k] = lu
        inner.l_h[k] = lh
        if mode.use_relay:
            inner.l_a_indeterminate[k] = (duals.mu[k] + duals.nu[k] - duals.omega[k]) == 0.0
    return g, inner


def dual_subgradient(duals: DualVariables, inner: InnerSolution, sc: Scenario) -> np.ndarray:
    """Supergradient of the dual at the inner minimizers, stacked [lam, mu, nu, omega, eta].

    Each block is a flattened (K, N) array in SI units; relayed bits enter as
    zero (the Lemma-8 minimizer under dual feasibility).
    """
    t1r1 = inner.t[:, :, 0] * inner.r[:, :, 0]
    d_lam = np.cumsum(inner.l_h, axis=1) - np.cumsum(t1r1, axis=1)
    d_mu = -inner.t[:, :, 1] * inner.r[:, :, 1]
    d_nu = -inner.t[:, :, 2] * inner.r[:, :, 2]
    d_omega = sc.task_min - inner.l_u - inner.l_h
    d_eta = inner.t.sum(axis=2) - sc.slot_len
    return np.concatenate([d_lam.ravel(), d_mu.ravel(), d_nu.ravel(),
                           d_omega.ravel(), d_eta.ravel()])


# dual ascent engines -----------------------------------------------------

@dataclass
class DualAscentResult:
    duals: DualVariables
    inner: InnerSolution
    value: float
    iterations: int
    engine: str
    traces: list = field(default_factory=list)   # per TD (g_trace, viol_trace)


def _auto_max_iter(dim: int) -> int:
    # ellipsoid volume shrinks by exp(-1/(2(d+1))) per cut; budget ~30 e-folds
    return int(min(1_200_000, 70 * dim * dim + 20_000))


def _solve_block(k: int, x0: np.ndarray, gb0k: np.ndarray, gb1: np.ndarray,
                 sc: Scenario, mode: Mode, opts: DualOptions, engine: str):
    c = _consts(sc)
    args = (sc.N, mode.use_uavc, mode.use_relay, c["dt"], c["B0"], c["Pu"], c["Ph"],
            gb0k, gb1, c["au"], c["ah"], c["eu"], c["eh"], c["cap_lu"], c["cap_lh"],
            sc.task_min[k])
    if engine == "ellipsoid":
        max_iter = opts.max_iter or _auto_max_iter(x0.size)
        bx, bg, it, g_tr, v_tr = kern.ellipsoid_td(x0, opts.radius, opts.tol,
                                                   max_iter, *args)
        return bx, bg, it, (g_tr, v_tr)
    bx, bg, it = kern.subgradient_td(x0, opts.sub_max_iter, opts.sub_patience,
                                     opts.sub_delta_frac, opts.sub_tol_rel, *args)
    return bx, bg, it, None


def solve_dual(traj: Trajectory, sc: Scenario, opts: DualOptions | None = None,
               mode: Mode = FULL, warm: DualVariables | None = None) -> DualAscentResult:
    """Maximize the dual per TD block and return the best feasible dual point."""
    opts = opts or DualOptions()
    gb0, gb1 = slot_snrs(traj, sc)
    N = sc.N
    dim = kern.block_dim(N, mode.use_uavc, mode.use_relay)
    engine = opts.engine
    if engine == "auto":
        engine = "ellipsoid" if dim <= opts.ellipsoid_dim_cap else "subgradient"
    if engine not in ("ellipsoid", "subgradient"):
        raise ValueError(f"unknown dual engine {engine!r}")

    duals = DualVariables.zeros(sc.K, N)
    total = 0.0
    iters = 0
    traces = []
    for k in range(sc.K):
        if warm is not None:
            x0 = kern.project_duals_td(_pack_block(warm, k, mode), N,
                                       mode.use_uavc, mode.use_relay)
        else:
            x0 = np.full(dim, opts.center0)
        bx, bg, it, tr = _solve_block(k, x0, gb0[k], gb1, sc, mode, opts, engine)
        lam, mu, nu, omega, eta = _unpack_block(bx, N, mode)
        duals.lam[k], duals.mu[k], duals.nu[k], duals.omega[k], duals.eta[k] = \
            lam, mu, nu, omega, eta
        total += bg
        iters += it
        if tr is not None:
            traces.append(tr)
    if opts.trace_path:
        _write_trace(opts.trace_path, traces)
    _, inner = dual_value(duals, traj, sc, mode)
    return DualAscentResult(duals, inner, total, iters, engine, traces)


def ellipsoid_solve(traj: Trajectory, sc: Scenario, opts: DualOptions | None = None,
                    mode: Mode = FULL, warm: DualVariables | None = None) -> DualAscentResult:
    """Reference dual engine: per-TD central-cut ellipsoid."""
    opts = replace(opts or DualOptions(), engine="ellipsoid")
    return solve_dual(traj, sc, opts, mode, warm)


def _write_trace(path, traces) -> None:
    offset = 0.0
    rows = []
    it = 0
    for g_tr, v_tr in traces:
        for g, v in zip(g_tr, v_tr):
            val = offset + (g if np.isfinite(g) else 0.0)
            rows.append((it, val, v))
            it += 1
        finite = g_tr[np.isfinite(g_tr)]
        offset += float(finite[-1]) if finite.size else 0.0
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write("iteration,g_value,max_violation\n")
        for i, g, v in rows:
            f.write(f"{i},{g:.11e},{v:.11e}\n")


# primal reconstruction ----------------------------------------------------

def _truncate_uav_bits(l_h: np.ndarray, cap_per_slot: np.ndarray) -> np.ndarray:
    """Clip UAV bits to what full-subslot transport at the lemma powers can carry."""
    out = np.zeros_like(l_h)
    avail = 0.0
    for n in range(l_h.shape[0]):
        avail += cap_per_slot[n]
        out[n] = min(l_h[n], max(avail, 0.0))
        avail -= out[n]
    return out


def _rate_for(p, snr, sc: Scenario) -> np.ndarray:
    return sc.subcarrier_bw * np.log1p(snr * p) / LN2


def _power_for_rate(rate, snr, sc: Scenario) -> np.ndarray:
    return (np.exp2(np.minimum(rate / sc.subcarrier_bw, 500.0)) - 1.0) / snr


def _reconstruct_td(k: int, inner: InnerSolution, gb0k: np.ndarray, gb1: np.ndarray,
                    sc: Scenario, mode: Mode, budget_frac: float = 1.0):
    """Reconstruction LP for one TD.

    Returns (t (N,3), p (N,3), l_h_used, l_a) or (None, ..., bad_n). Lemma powers
    are kept wherever they can carry the required load; slots where inexact
    duals left a needed leg at zero power get the minimal-energy repair power
    for the residual load instead.
    """
    N = sc.N
    dt = sc.slot_len
    p = inner.p[k].copy()
    r = inner.r[k].copy()
    l_u = inner.l_u[k]
    l_h_raw = inner.l_h[k] if mode.use_uavc else np.zeros(N)

    def boost_relay(la_need, avail):
        # raise too-weak relay legs so both fit the slot-local load in `avail`
        for n in np.where(la_need > 0.0)[0]:
            need_time = sum(la_need[n] / r[n, m] if r[n, m] > 0.0 else np.inf
                            for m in (1, 2))
            if need_time <= avail[n] * (1.0 + 1e-9):
                continue
            if avail[n] <= 0.0:
                return int(n)
            target_rate = 2.0 * la_need[n] / (0.9 * avail[n])
            for m, snr, p_max in ((1, gb0k[n], sc.p_td_max), (2, gb1[n], sc.p_uav_max)):
                if r[n, m] < target_rate:
                    p_new = min(float(_power_for_rate(target_rate, snr, sc)), p_max)
                    p[n, m] = max(p[n, m], p_new)
                    r[n, m] = float(_rate_for(p[n, m], snr, sc))
            need_time = sum(la_need[n] / r[n, m] if r[n, m] > 0.0 else np.inf
                            for m in (1, 2))
            if need_time > avail[n]:
                return int(n)
        return None

    # constructive per-slot plan: size the slot-local relay legs first, give the
    # compute-offload leg the leftover budget, lift starved powers minimally,
    # and only then clip l_h to the reachable prefix capacity
    l_h_used = np.zeros(N)
    relay_time = np.zeros(N)
    if mode.use_relay:
        la_opt = np.maximum(sc.task_min[k] - l_u - l_h_raw, 0.0)
        bad = boost_relay(la_opt, np.full(N, dt))
        if bad is not None:
            return None, None, l_h_used, None, bad
        with np.errstate(divide="ignore"):
            relay_time = np.where(la_opt > 0.0,
                                  la_opt / np.maximum(r[:, 1], 1e-300)
                                  + la_opt / np.maximum(r[:, 2], 1e-300), 0.0)
    if mode.use_uavc:
        leg1_budget = np.maximum(dt - relay_time, 0.0) * 0.95 * budget_frac
        short = (l_h_raw > 0.0) & (leg1_budget * r[:, 0] < l_h_raw) & (leg1_budget > 0.0)
        for n in np.where(short)[0]:
            p_new = min(float(_power_for_rate(l_h_raw[n] / leg1_budget[n], gb0k[n], sc)),
                        sc.p_td_max)
            if p_new > p[n, 0]:
                p[n, 0] = p_new
                r[n, 0] = float(_rate_for(p_new, gb0k[n], sc))
        l_h_used = _truncate_uav_bits(l_h_raw, leg1_budget * r[:, 0])

    la_lb = np.zeros(N)
    if mode.use_relay:
        la_lb = np.maximum(sc.task_min[k] - l_u - l_h_used, 0.0)
        with np.errstate(divide="ignore"):
            lh_time = np.where(l_h_used > 0.0,
                               l_h_used / np.maximum(r[:, 0], 1e-300), 0.0)
        bad = boost_relay(la_lb, np.maximum(dt - lh_time, 0.0))
        if bad is not None:
            return None, None, l_h_used, None, bad
    p1, p2, p3 = p[:, 0], p[:, 1], p[:, 2]
    r1, r2, r3 = r[:, 0], r[:, 1], r[:, 2]

    blocks = []       # variable blocks in order, each length N
    cost = []
    if mode.use_uavc:
        blocks.append("t1")
        cost.append(p1)
    if mode.use_relay:
        blocks.extend(["t2", "t3", "la"])
        cost.extend([p2, p3, np.zeros(N)])
    nb = len(blocks)
    nv = nb * N
    off = {name: i * N for i, name in enumerate(blocks)}
    c = np.concatenate(cost)

    rows = []
    rhs = []
    if mode.use_uavc:
        # prefix causality: sum_{i<=n} r1_i t1_i >= sum_{i<=n} l_h_i
        pref = np.cumsum(l_h_used)
        for n in range(N):
            row = np.zeros(nv)
            row[off["t1"]:off["t1"] + n + 1] = -r1[:n + 1]
            rows.append(row)
            rhs.append(-pref[n])
    if mode.use_relay:
        for n in range(N):
            row = np.zeros(nv)
            row[off["la"] + n] = 1.0
            row[off["t2"] + n] = -r2[n]
            rows.append(row)
            rhs.append(0.0)
        for n in range(N):
            row = np.zeros(nv)
            row[off["la"] + n] = 1.0
            row[off["t3"] + n] = -r3[n]
            rows.append(row)
            rhs.append(0.0)
    # subslot budget
    for n in range(N):
        row = np.zeros(nv)
        for name in blocks:
            if name != "la":
                row[off[name] + n] = 1.0
        rows.append(row)
        rhs.append(dt)

    lb = np.zeros(nv)
    ub = np.full(nv, dt)
    if mode.use_relay:
        lb[off["la"]:off["la"] + N] = la_lb
        ub[off["la"]:off["la"] + N] = np.inf

    res = lp_solve(LinearProgram(c, np.array(rows), np.array(rhs), lb, ub))
    if res.status != "optimal":
        return None, None, l_h_used, None, None

    t = np.zeros((N, 3))
    l_a = np.zeros(N)
    if mode.use_uavc:
        t[:, 0] = res.x[off["t1"]:off["t1"] + N]
    if mode.use_relay:
        t[:, 1] = res.x[off["t2"]:off["t2"] + N]
        t[:, 2] = res.x[off["t3"]:off["t3"] + N]
        l_a = res.x[off["la"]:off["la"] + N]
    # drop useless time parked on zero-rate subslots
    t[:, 0][r1 <= 0.0] = 0.0
    t[:, 1][r2 <= 0.0] = 0.0
    t[:, 2][r3 <= 0.0] = 0.0
    return t, p, l_h_used, l_a, None


def reconstruct_primal(duals: DualVariables, inner: InnerSolution, traj: Trajectory,
                       sc: Scenario, mode: Mode = FULL):
    """Rebuild a feasible allocation from the lemma-unique parts via one LP per TD.

    Returns (alloc, None) or (None, (k, n)) naming a violated requirement when
    the instance cannot carry the task load.
    """
    K, N = sc.K, sc.N
    gb0, gb1 = slot_snrs(traj, sc)
    alloc = ResourceAllocation.zeros(K, N)
    for k in range(K):
        t = None
        for frac in (1.0, 0.9, 0.5):
            t, p, l_h_used, l_a, bad_n = _reconstruct_td(k, inner, gb0[k], gb1, sc, mode, frac)
            if t is not None:
                break
        if t is None:
            n = bad_n if bad_n is not None else int(np.argmax(sc.task_min[k]))
            return None, (k, n)
        alloc.t[k] = t
        alloc.p[k] = p
        alloc.l_u[k] = inner.l_u[k]
        alloc.l_h[k] = l_h_used
        alloc.l_a[k] = l_a
    alloc.E[:] = alloc.t * alloc.p
    return alloc, None


def _polish_powers(alloc: ResourceAllocation, traj: Trajectory, sc: Scenario) -> None:
    """Exact (t, p) re-optimization per slot at the reconstructed bit plan.

    The LP fixes which bits each leg carries; the minimal-energy way to carry
    them re-splits the slot with equal marginal energy across active legs
    (time-price eta found by bisection) and lowers each power to the
    exact-transport value. Bit loads are unchanged, so every constraint of the
    original problem still holds; per-slot energy can only decrease.
    """
    dt = sc.slot_len
    B0 = sc.subcarrier_bw
    gb0, gb1 = slot_snrs(traj, sc)
    snr = np.stack([gb0, gb0, np.broadcast_to(gb1, gb0.shape)], axis=2)  # (K,N,3)
    p_cap = np.empty((sc.K, sc.N, 3))
    p_cap[:, :, :2] = sc.p_td_max
    p_cap[:, :, 2] = sc.p_uav_max

    r_in = B0 * np.log1p(snr * alloc.p) / LN2
    bits = np.stack([alloc.t[:, :, 0] * r_in[:, :, 0], alloc.l_a, alloc.l_a], axis=2)
    active = bits > 0.0
    if not np.any(active):
        return
    c = np.where(active, bits / B0, 0.0)           # exponent scale, s
    r_cap = np.log1p(snr * p_cap) / LN2            # rate/B0 at the power cap
    t_min = np.where(active, c / r_cap, 0.0)

    def marginal(t):
        # -dE/dt of t*(2^(c/t)-1)/snr, >= 0 and decreasing in t; 0 for inactive legs
        with np.errstate(over="ignore", invalid="ignore"):
            x = np.where(active & (t > 0.0), c / np.maximum(t, 1e-300), 0.0)
            x = np.minimum(x, 500.0)
            s = (np.exp2(x) * (LN2 * x - 1.0) + 1.0) / snr
        return np.where(active, s, 0.0)

    def times_at(eta):
        # per-leg t solving marginal(t) = eta, clipped to [t_min, dt]
        lo = np.maximum(t_min, 1e-12)
        hi = np.full_like(lo, dt)
        t = np.where(marginal(hi) >= eta[:, :, None], hi, 0.5 * (lo + hi))
        free = marginal(hi) < eta[:, :, None]
        llo, lhi = lo.copy(), hi.copy()
        for _ in range(60):
            mid = 0.5 * (llo + lhi)
            high = marginal(mid) >= eta[:, :, None]
            llo = np.where(free & high, mid, llo)
            lhi = np.where(free & ~high, mid, lhi)
        t = np.where(free, 0.5 * (llo + lhi), hi)
        return np.where(active, np.maximum(t, t_min), 0.0)

    eta_lo = np.zeros((sc.K, sc.N))
    eta_hi = np.max(np.where(active, marginal(np.maximum(t_min, 1e-12)), 0.0), axis=2) + 1.0
    for _ in range(90):
        eta = 0.5 * (eta_lo + eta_hi)
        too_long = times_at(eta).sum(axis=2) > dt
        eta_lo = np.where(too_long, eta, eta_lo)
        eta_hi = np.where(too_long, eta_hi, eta)
    t_new = times_at(eta_hi)

    with np.errstate(over="ignore"):
        x = np.where(active, c / np.maximum(t_new, 1e-300), 0.0)
        p_new = np.where(active, (np.exp2(np.minimum(x, 500.0)) - 1.0) / snr, 0.0)
    p_new = np.minimum(p_new, p_cap)
    e_new = t_new * p_new
    e_old = alloc.t * alloc.p
    ok = (t_new.sum(axis=2) <= dt * (1.0 + 1e-12)) & \
         (e_new.sum(axis=2) <= e_old.sum(axis=2) * (1.0 + 1e-12))
    use = ok[:, :, None] & active
    alloc.t[:] = np.where(use, t_new, np.where(ok[:, :, None], 0.0, alloc.t))
    alloc.p[:] = np.where(use, p_new, np.where(ok[:, :, None], 0.0, alloc.p))
    alloc.E[:] = alloc.t * alloc.p


def _repair_task_shortfall(alloc: ResourceAllocation, traj: Trajectory,
                           sc: Scenario, mode: Mode):
    """Close sub-percent task gaps left by inexact duals, cheapest route first.

    Order: extra relay subslot time inside the budget slack, then local cap
    slack, then UAV bits with extra offload time. Returns (k, n) if a gap
    cannot be closed, else None.
    """
    dt = sc.slot_len
    gb0, gb1 = slot_snrs(traj, sc)
    scale = max(float(np.max(sc.task_min, initial=0.0)), 1.0)
    tol = 1e-9 * scale
    for k in range(sc.K):
        r1 = _rate_for(alloc.p[k, :, 0], gb0[k], sc)
        r2 = _rate_for(alloc.p[k, :, 1], gb0[k], sc)
        r3 = _rate_for(alloc.p[k, :, 2], gb1, sc)
        for n in range(sc.N):
            gap = sc.task_min[k, n] - alloc.l_u[k, n] - alloc.l_h[k, n] - alloc.l_a[k, n]
            if gap <= tol:
                continue
            if mode.use_relay and r2[n] > 0.0 and r3[n] > 0.0:
                slack = dt - alloc.t[k, n].sum()
                need = gap / r2[n] + gap / r3[n]
                if need <= slack:
                    alloc.t[k, n, 1] += gap / r2[n]
                    alloc.t[k, n, 2] += gap / r3[n]
                    alloc.l_a[k, n] += gap
                    continue
            room = sc.bits_cap_td - alloc.l_u[k, n]
            take = min(gap, room)
            alloc.l_u[k, n] += take
            gap -= take
            if gap <= tol:
                continue
            if mode.use_uavc:
                room_h = sc.bits_cap_uav - alloc.l_h[k, n]
                slack = dt - alloc.t[k, n].sum()
                want = min(gap, room_h)
                if want > 0.0 and slack > 0.0:
                    # lift the offload power if the lemma rate cannot carry the
                    # forced UAV bits in the remaining slot time
                    if r1[n] * slack < want:
                        need_rate = want / (0.98 * slack)
                        p_new = min(float(_power_for_rate(need_rate, gb0[k][n], sc)),
                                    sc.p_td_max)
                        if p_new > alloc.p[k, n, 0]:
                            alloc.p[k, n, 0] = p_new
                            r1[n] = float(_rate_for(p_new, gb0[k][n], sc))
                    take = min(want, slack * r1[n]) if r1[n] > 0.0 else 0.0
                    if take > 0.0:
                        alloc.t[k, n, 0] += take / r1[n]
                        alloc.l_h[k, n] += take
                        gap -= take
            if gap > tol:
                return (k, n)
    alloc.E[:] = alloc.t * alloc.p
    return None


def static_capacity_violation(sc: Scenario, mode: Mode):
    """Per-slot hard-cap check; returns the first violated (k, n) or None."""
    cap = sc.bits_cap_td + (sc.bits_cap_uav if mode.use_uavc else 0.0)
    if mode.use_relay:
        return None  # relayed bits have no static per-slot cap
    bad = sc.task_min > cap * (1.0 + 1e-12)
    if np.any(bad):
        k, n = np.unravel_index(int(np.argmax(bad)), bad.shape)
        return int(k), int(n)
    return None


def solve_p2(traj: Trajectory, sc: Scenario, opts: DualOptions | None = None,
             mode: Mode = FULL, warm: DualVariables | None = None) -> P2Result:
    """Algorithm-1 pipeline: dual ascent, then LP reconstruction and repair."""
    opts = opts or DualOptions()
    bad = static_capacity_violation(sc, mode)
    if bad is not None:
        return P2Result(None, DualVariables.zeros(sc.K, sc.N), None, math.inf,
                        opts.engine, 0, status="infeasible", infeasible_kn=bad,
                        message=f"task exceeds per-slot computing caps at (k,n)={bad}")
    asc = solve_dual(traj, sc, opts, mode, warm)
    if not math.isfinite(asc.value) or asc.value > 1e12:
        return P2Result(None, asc.duals, asc.inner, asc.value, asc.engine,
                        asc.iterations, status="infeasible",
                        message="dual diverged; instance infeasible")
    alloc, bad = reconstruct_primal(asc.duals, asc.inner, traj, sc, mode)
    if alloc is None:
        return P2Result(None, asc.duals, asc.inner, asc.value, asc.engine,
                        asc.iterations, status="infeasible", infeasible_kn=bad,
                        message=f"reconstruction infeasible at (k,n)={bad}")
    _polish_powers(alloc, traj, sc)
    bad = _repair_task_shortfall(alloc, traj, sc, mode)
    if bad is not None:
        return P2Result(None, asc.duals, asc.inner, asc.value, asc.engine,
                        asc.iterations, status="infeasible", infeasible_kn=bad,
                        message=f"task requirement unreachable at (k,n)={bad}")
    return P2Result(alloc, asc.duals, asc.inner, asc.value, asc.engine, asc.iterations)
