"""Convexified trajectory step: slack variables, Taylor lower bounds, assembly.

The flight power is split with a speed slack and an induced-power slack coupled
by 1/u^2 <= u^2 + v^2/v0^2, whose right side is linearized at the expansion
point; each rate is lower-bounded by its first-order expansion in the squared
horizontal distance. All bounds are global under-estimators and tangent at the
expansion point, so any subproblem-feasible point is feasible for the true
nonconvex constraints.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import LN2
from .convex.barrier import TrajectorySubproblem, constraint_report, max_violation
from .energy import induced_power_slack
from .scenario import AeroParams, ResourceAllocation, Scenario, Trajectory

LOG2_E = 1.0 / LN2


@dataclass
class ExpansionPoint:
    """Trajectory plus slack values the next convex step is linearized at."""

    q: np.ndarray          # (N+1, 2)
    v: np.ndarray          # (N,) speed slacks, >= segment speeds
    u: np.ndarray          # (N,) induced-power slacks, > 0
    iteration: int = 0


def init_slacks(traj: Trajectory, aero: AeroParams) -> tuple[np.ndarray, np.ndarray]:
    """Tight slack initialization: v = segment speed, u = exact induced slack.

    With these values the surrogate flight power equals the true model exactly.
    """
    v = traj.speeds
    return v, induced_power_slack(v, aero)


def expansion_from_traj(traj: Trajectory, aero: AeroParams, iteration: int = 0) -> ExpansionPoint:
    v, u = init_slacks(traj, aero)
    return ExpansionPoint(traj.q.copy(), v, u, iteration)


def flight_power_surrogate(v, u, aero: AeroParams):
    """Convex stand-in for the rotor power: blade + Pi*u + parasite terms."""
    v = np.asarray(v, dtype=float)
    return aero.blade_power_w * (1.0 + 3.0 * v * v / aero.tip_speed_mps ** 2) \
        + aero.induced_power_w * np.asarray(u, dtype=float) \
        + aero.parasite_coeff * v ** 3


def slack_coupling_lb(u, v, point: ExpansionPoint, n: int, aero: AeroParams):
    """Tangent lower bound of u^2 + v^2/v0^2 at the expansion point's slot n."""
    v0sq = aero.induced_velocity_mps ** 2
    uj, vj = point.u[n], point.v[n]
    return uj * uj + 2.0 * uj * (u - uj) + vj * vj / v0sq + (2.0 * vj / v0sq) * (v - vj)


def _phi_coeffs(p, snr_ref, s_exp, h2):
    """(alpha, beta) with phi(s) = alpha - beta*s <= log2(1 + p*snr_ref/(s+h2)).

    s is the squared horizontal distance; tangency holds at s = s_exp.
    """
    p = np.asarray(p, dtype=float)
    s_exp = np.asarray(s_exp, dtype=float)
    D = s_exp + h2
    beta = LOG2_E * p * snr_ref / (D * (D + p * snr_ref))
    alpha = np.log1p(p * snr_ref / D) / LN2 + beta * s_exp
    return alpha, beta


def rate_lb_offload_compute(q, k: int, n: int, point: ExpansionPoint, p1: float,
                            sc: Scenario) -> float:
    """Lower bound on the TD->UAV computing-offload rate at position q, bits/s."""
    s_exp = float(np.sum((point.q[n] - sc.td_pos[k]) ** 2))
    al, be = _phi_coeffs(p1, sc.snr_ref_uav, s_exp, sc.altitude ** 2)
    s = float(np.sum((np.asarray(q, dtype=float) - sc.td_pos[k]) ** 2))
    return sc.subcarrier_bw * float(al - be * s)


def rate_lb_offload_relay(q, k: int, n: int, point: ExpansionPoint, p2: float,
                          sc: Scenario) -> float:
    """Lower bound on the TD->UAV relaying-offload rate at position q, bits/s."""
    return rate_lb_offload_compute(q, k, n, point, p2, sc)


def rate_lb_forward(q, n: int, point: ExpansionPoint, p3: float, sc: Scenario) -> float:
    """Lower bound on the UAV->AP forwarding rate at position q, bits/s."""
    s_exp = float(np.sum((point.q[n] - sc.ap_pos) ** 2))
    al, be = _phi_coeffs(p3, sc.snr_ref_ap, s_exp, sc.altitude ** 2)
    s = float(np.sum((np.asarray(q, dtype=float) - sc.ap_pos) ** 2))
    return sc.subcarrier_bw * float(al - be * s)


class InfeasibleSubproblem(ValueError):
    """Expansion point violates the assembled constraints, or a slot cannot carry its task."""


def build_subproblem(point: ExpansionPoint, alloc: ResourceAllocation,
                     sc: Scenario) -> TrajectorySubproblem:
    """Assemble one convex trajectory step at fixed subslot times and powers.

    The per-slot task requirement is enforced explicitly (the printed
    constraint set would otherwise zero all bit loads). Bit entries with no
    transport route are pinned at presolve so the barrier interior exists.
    """
    K, N = sc.K, sc.N
    h2 = sc.altitude ** 2
    q = point.q
    s_td = ((q[None, :-1, :] - sc.td_pos[:, None, :]) ** 2).sum(axis=2)
    s_ap = ((q[:-1] - sc.ap_pos) ** 2).sum(axis=1)

    t1, t2, t3 = alloc.t[:, :, 0], alloc.t[:, :, 1], alloc.t[:, :, 2]
    p1, p2, p3 = alloc.p[:, :, 0], alloc.p[:, :, 1], alloc.p[:, :, 2]
    a1 = t1 * sc.subcarrier_bw
    a2 = t2 * sc.subcarrier_bw
    a3 = t3 * sc.subcarrier_bw
    al1, be1 = _phi_coeffs(p1, sc.snr_ref_uav, s_td, h2)
    al2, be2 = _phi_coeffs(p2, sc.snr_ref_uav, s_td, h2)
    al3, be3 = _phi_coeffs(p3, sc.snr_ref_ap, s_ap[None, :], h2)

    active1 = (t1 > 0.0) & (p1 > 0.0)
    active2 = (t2 > 0.0) & (p2 > 0.0)
    active3 = (t3 > 0.0) & (p3 > 0.0)
    la_pin = ~(active2 & active3)
    lh_pin = ~np.cumsum(active1, axis=1).astype(bool)
    keep_caus = np.cumsum(active1, axis=1).astype(bool)
    keep_r2 = active2 & active3
    keep_r3 = keep_r2

    cap_u = sc.bits_cap_td
    lu_pin = np.zeros((K, N), dtype=bool)
    lu_fix = np.zeros((K, N))
    no_route = la_pin & lh_pin
    near_cap = np.abs(sc.task_min - cap_u) <= 1e-9 * max(cap_u, 1.0)
    over_cap = sc.task_min > cap_u * (1.0 + 1e-12)
    if np.any(no_route & over_cap):
        k, n = np.unravel_index(int(np.argmax(no_route & over_cap)), (K, N))
        raise InfeasibleSubproblem(
            f"slot (k={k}, n={n}) requires {sc.task_min[k, n]:.3g} bits with no "
            f"offload route and local cap {cap_u:.3g}")
    lu_pin = no_route & near_cap
    lu_fix = np.where(lu_pin, np.minimum(sc.task_min, cap_u), 0.0)
    keep_task = (sc.task_min > 0.0) & ~lu_pin

    v0sq = sc.aero.induced_velocity_mps ** 2
    tsp = TrajectorySubproblem(
        K=K, N=N, dt=sc.slot_len, v_max=sc.v_max, q0=sc.q0.copy(), qF=sc.qF.copy(),
        w_td=sc.td_pos.copy(), w_ap=sc.ap_pos.copy(),
        eu=sc.cap_coeff_td * sc.cycles_per_bit_td ** 3 / sc.slot_len ** 2,
        eh=sc.cap_coeff_uav * sc.cycles_per_bit_uav ** 3 / sc.slot_len ** 2,
        w_dt=sc.flight_weight * sc.slot_len,
        P0=sc.aero.blade_power_w, Pi=sc.aero.induced_power_w,
        Utip2=sc.aero.tip_speed_mps ** 2, par=sc.aero.parasite_coeff, v0sq=v0sq,
        a1=a1, a2=a2, a3=a3, al1=al1, be1=be1, al2=al2, be2=be2, al3=al3, be3=be3,
        cap_lu=cap_u, cap_lh=sc.bits_cap_uav, Lmin=sc.task_min.copy(),
        lu_pin=lu_pin, lu_fix=lu_fix, lh_pin=lh_pin, la_pin=la_pin,
        keep_caus=keep_caus, keep_r2=keep_r2, keep_r3=keep_r3, keep_task=keep_task,
        q_exp=q.copy(), v_exp=point.v.copy(), u_exp=point.u.copy(),
        cA=2.0 * point.u, cB=2.0 * point.v / v0sq,
        cC=point.u ** 2 + point.v ** 2 / v0sq,
        lu0=np.where(lu_pin, lu_fix, np.minimum(alloc.l_u, cap_u)),
        lh0=np.where(lh_pin, 0.0, alloc.l_h),
        la0=np.where(la_pin, 0.0, alloc.l_a),
        q_free=sc.N * sc.slot_len * sc.v_max
               > float(np.linalg.norm(sc.qF - sc.q0)) * (1.0 + 1e-9),
    )

    rep = constraint_report(tsp, q, tsp.lu0, tsp.lh0, tsp.la0, point.v, point.u)
    scale = max(float(sc.task_min.max(initial=0.0)), 1.0)
    if max_violation(rep) > 1e-7 * scale:
        raise InfeasibleSubproblem(
            f"expansion point violates the subproblem by {max_violation(rep):.3g}")
    return tsp
