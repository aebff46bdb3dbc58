"""Energy and power models: communication, cubic computation, rotary-wing flight."""

from __future__ import annotations

import math

import numpy as np

from .scenario import AeroParams, ResourceAllocation, Scenario, Trajectory


def comm_energy(alloc: ResourceAllocation) -> float:
    """Total communication energy: sum of t * p over TDs, slots, subslots."""
    return float(np.sum(alloc.t * alloc.p))


def local_comp_energy(l_u, sc: Scenario):
    """Per-slot local computing energy kappa_u * (c_u * l_u)^3 / slot_len^2."""
    l_u = np.asarray(l_u, dtype=float)
    return sc.cap_coeff_td * (sc.cycles_per_bit_td * l_u) ** 3 / sc.slot_len ** 2


def uav_comp_energy(l_h_column, sc: Scenario) -> float:
    """UAV computing energy for one slot, summed over TDs."""
    l_h = np.asarray(l_h_column, dtype=float)
    return float(np.sum(sc.cap_coeff_uav * (sc.cycles_per_bit_uav * l_h) ** 3) / sc.slot_len ** 2)


def comp_energy(alloc: ResourceAllocation, sc: Scenario) -> float:
    """Total computation energy over the period (local + UAV)."""
    e_local = np.sum(local_comp_energy(alloc.l_u, sc))
    e_uav = np.sum(sc.cap_coeff_uav * (sc.cycles_per_bit_uav * alloc.l_h) ** 3) / sc.slot_len ** 2
    return float(e_local + e_uav)


def flight_power(speed, aero: AeroParams):
    """Rotary-wing propulsion power at horizontal speed v (Eq. blade + induced + parasite)."""
    v = np.asarray(speed, dtype=float)
    v2 = v * v
    blade = aero.blade_power_w * (1.0 + 3.0 * v2 / aero.tip_speed_mps ** 2)
    v0sq = aero.induced_velocity_mps ** 2
    induced = aero.induced_power_w * np.sqrt(
        np.sqrt(1.0 + (v2 / v0sq) ** 2 / 4.0) - v2 / (2.0 * v0sq))
    parasite = aero.parasite_coeff * v2 * v
    out = blade + induced + parasite
    return float(out) if out.ndim == 0 else out


def induced_power_slack(speed, aero: AeroParams):
    """Exact slack u(v) with Pi*u = induced power: sqrt(sqrt(1+v^4/4v0^4) - v^2/2v0^2)."""
    v = np.asarray(speed, dtype=float)
    v0sq = aero.induced_velocity_mps ** 2
    x = (v * v) / v0sq
    out = np.sqrt(np.sqrt(1.0 + x * x / 4.0) - x / 2.0)
    return float(out) if out.ndim == 0 else out


def flight_energy(traj: Trajectory, aero: AeroParams, slot_len: float) -> float:
    """Total flight energy: slot_len * sum of per-slot flight power."""
    return slot_len * float(np.sum(flight_power(traj.speeds, aero)))


def max_endurance_speed(aero: AeroParams, lo: float = 0.0, hi: float = 100.0,
                        tol: float = 1e-6) -> float:
    """Speed minimizing flight power, by golden-section search on [lo, hi]."""
    gr = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - gr * (b - a)
    d = a + gr * (b - a)
    fc = flight_power(c, aero)
    fd = flight_power(d, aero)
    while b - a > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - gr * (b - a)
            fc = flight_power(c, aero)
        else:
            a, c, fc = c, d, fd
            d = a + gr * (b - a)
            fd = flight_power(d, aero)
    return 0.5 * (a + b)


def total_objective(alloc: ResourceAllocation, traj: Trajectory, sc: Scenario) -> float:
    """Weighted total energy: comm + computation + flight_weight * flight."""
    return comm_energy(alloc) + comp_energy(alloc, sc) \
        + sc.flight_weight * flight_energy(traj, sc.aero, sc.slot_len)


def energy_breakdown(alloc: ResourceAllocation, traj: Trajectory, sc: Scenario) -> tuple[float, float, float]:
    """(e_comm, e_comp, e_fly) in raw joules; the objective weights e_fly by flight_weight."""
    return comm_energy(alloc), comp_energy(alloc, sc), flight_energy(traj, sc.aero, sc.slot_len)
