"""Problem instances: every system parameter as typed state, file I/O, defaults.

All internal math is SI (W, J, s, Hz, bits, m). dB/dBm exist only at the file
boundary. Loaded objects are immutable and safe to share across workers.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from typing import Sequence

import numpy as np

SLOT_LEN_DEFAULT_S = 0.2


class ScenarioError(ValueError):
    """Invalid scenario file or parameter set; message names field and bound."""


def dbm_to_watt(dbm: float) -> float:
    return 10.0 ** (dbm / 10.0) / 1e3


def watt_to_dbm(w: float) -> float:
    return 10.0 * math.log10(w * 1e3)


def db_to_linear(db: float) -> float:
    return 10.0 ** (db / 10.0)


def linear_to_db(x: float) -> float:
    return 10.0 * math.log10(x)


@dataclass(frozen=True)
class AeroParams:
    """Rotary-wing propulsion model constants."""

    blade_power_w: float        # blade profile power in hover
    induced_power_w: float      # induced power in hover
    tip_speed_mps: float        # rotor tip speed
    induced_velocity_mps: float # mean rotor induced velocity in hover
    drag_ratio: float           # fuselage drag ratio
    air_density: float          # kg/m^3
    rotor_solidity: float
    disc_area_m2: float

    def __post_init__(self):
        for name in ("blade_power_w", "induced_power_w", "tip_speed_mps",
                     "induced_velocity_mps", "drag_ratio", "air_density",
                     "rotor_solidity", "disc_area_m2"):
            if not getattr(self, name) > 0.0:
                raise ScenarioError(f"aero.{name} must be > 0, got {getattr(self, name)}")

    @property
    def parasite_coeff(self) -> float:
        """Coefficient of the v^3 parasite term: 0.5 * d0 * rho * s * A."""
        return 0.5 * self.drag_ratio * self.air_density * self.rotor_solidity * self.disc_area_m2


def _ro(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Scenario:
    """Full problem instance in SI units, with derived radio/compute constants."""

    K: int
    N: int
    slot_len: float             # s
    altitude: float             # m
    q0: np.ndarray              # (2,) m
    qF: np.ndarray              # (2,) m
    v_max: float                # m/s
    td_pos: np.ndarray          # (K, 2) m
    ap_pos: np.ndarray          # (2,) m
    bandwidth: float            # Hz
    noise_psd_uav: float        # W/Hz
    noise_psd_ap: float         # W/Hz
    ref_gain: float             # linear power gain at 1 m
    p_td_max: float             # W
    p_uav_max: float            # W
    f_td_max: float             # cycles/s
    f_uav_max: float            # cycles/s
    cycles_per_bit_td: float
    cycles_per_bit_uav: float
    cap_coeff_td: float         # J s^2 / cycle^3
    cap_coeff_uav: float
    flight_weight: float
    task_min: np.ndarray        # (K, N) bits
    aero: AeroParams

    # derived
    subcarrier_bw: float = field(init=False)    # B/K, Hz
    snr_ref_uav: float = field(init=False)      # ref_gain / (N0 * B0), 1/W
    snr_ref_ap: float = field(init=False)       # ref_gain / (N1 * B0), 1/W
    f_uav_share: float = field(init=False)      # f_uav_max / K

    def __post_init__(self):
        for name in ("slot_len", "altitude", "v_max", "bandwidth", "noise_psd_uav",
                     "noise_psd_ap", "ref_gain", "p_td_max", "p_uav_max", "f_td_max",
                     "f_uav_max", "cycles_per_bit_td", "cycles_per_bit_uav",
                     "cap_coeff_td", "cap_coeff_uav"):
            if not getattr(self, name) > 0.0:
                raise ScenarioError(f"{name} must be > 0, got {getattr(self, name)}")
        if self.K < 1:
            raise ScenarioError(f"K must be >= 1, got {self.K}")
        if self.N < 1:
            raise ScenarioError(f"N must be >= 1, got {self.N}")
        if self.flight_weight < 0.0:
            raise ScenarioError(f"flight_weight must be >= 0, got {self.flight_weight}")

        object.__setattr__(self, "q0", _ro(self.q0))
        object.__setattr__(self, "qF", _ro(self.qF))
        object.__setattr__(self, "td_pos", _ro(self.td_pos))
        object.__setattr__(self, "ap_pos", _ro(self.ap_pos))
        object.__setattr__(self, "task_min", _ro(self.task_min))

        if self.q0.shape != (2,) or self.qF.shape != (2,):
            raise ScenarioError("q0/qF must be 2-vectors")
        if self.td_pos.shape != (self.K, 2):
            raise ScenarioError(f"td_pos must have shape ({self.K}, 2), got {self.td_pos.shape}")
        if self.ap_pos.shape != (2,):
            raise ScenarioError("ap_pos must be a 2-vector")
        if self.task_min.shape != (self.K, self.N):
            raise ScenarioError(f"task_min must have shape ({self.K}, {self.N})")
        if np.any(self.task_min < 0.0):
            raise ScenarioError("task_min entries must be >= 0")

        reach = self.N * self.slot_len * self.v_max
        dist = float(np.linalg.norm(self.qF - self.q0))
        if dist > reach * (1.0 + 1e-12) + 1e-12:
            raise ScenarioError(
                f"terminal position unreachable: ||qF-q0|| = {dist:.6g} m exceeds "
                f"N*slot_len*v_max = {reach:.6g} m")

        object.__setattr__(self, "subcarrier_bw", self.bandwidth / self.K)
        object.__setattr__(self, "snr_ref_uav",
                           self.ref_gain / (self.noise_psd_uav * self.subcarrier_bw))
        object.__setattr__(self, "snr_ref_ap",
                           self.ref_gain / (self.noise_psd_ap * self.subcarrier_bw))
        object.__setattr__(self, "f_uav_share", self.f_uav_max / self.K)

    @property
    def period(self) -> float:
        return self.N * self.slot_len

    @property
    def bits_cap_td(self) -> float:
        """Per-slot local computing cap, bits: slot_len * f_td_max / c_td."""
        return self.slot_len * self.f_td_max / self.cycles_per_bit_td

    @property
    def bits_cap_uav(self) -> float:
        """Per-slot per-TD UAV computing cap, bits: slot_len * (f_uav_max/K) / c_uav."""
        return self.slot_len * self.f_uav_share / self.cycles_per_bit_uav


@dataclass
class Trajectory:
    """UAV horizontal waypoints q[0..N] (slot n occupies q[n]), segment speeds derived."""

    q: np.ndarray               # (N+1, 2) m
    slot_len: float

    @property
    def n_slots(self) -> int:
        return self.q.shape[0] - 1

    @property
    def velocities(self) -> np.ndarray:
        """(N, 2) per-slot velocity vectors (q[n+1]-q[n])/slot_len."""
        return np.diff(self.q, axis=0) / self.slot_len

    @property
    def speeds(self) -> np.ndarray:
        return np.linalg.norm(self.velocities, axis=1)

    def validate(self, sc: Scenario, tol: float = 1e-9) -> None:
        if self.q.shape != (sc.N + 1, 2):
            raise ScenarioError(f"trajectory must have {sc.N + 1} waypoints")
        if np.linalg.norm(self.q[0] - sc.q0) > tol:
            raise ScenarioError("trajectory must start at q0")
        if np.linalg.norm(self.q[-1] - sc.qF) > tol:
            raise ScenarioError("trajectory must end at qF")
        step_cap = sc.slot_len * sc.v_max
        steps = np.linalg.norm(np.diff(self.q, axis=0), axis=1)
        if np.any(steps > step_cap * (1.0 + 1e-9) + tol):
            n = int(np.argmax(steps))
            raise ScenarioError(f"speed cap violated at slot {n}: {steps[n] / sc.slot_len:.6g} m/s")


@dataclass
class ResourceAllocation:
    """Per-(TD, slot) bits, subslot durations, powers and energies.

    Subslot index m: 0 = offload to UAV for computing, 1 = offload for relaying,
    2 = forward from UAV to AP.
    """

    l_u: np.ndarray             # (K, N) bits computed locally
    l_h: np.ndarray             # (K, N) bits computed at the UAV
    l_a: np.ndarray             # (K, N) bits relayed to the AP
    t: np.ndarray               # (K, N, 3) s
    p: np.ndarray               # (K, N, 3) W
    E: np.ndarray               # (K, N, 3) J

    @classmethod
    def zeros(cls, K: int, N: int) -> "ResourceAllocation":
        return cls(np.zeros((K, N)), np.zeros((K, N)), np.zeros((K, N)),
                   np.zeros((K, N, 3)), np.zeros((K, N, 3)), np.zeros((K, N, 3)))

    def validate(self, sc: Scenario, tol: float = 1e-9) -> None:
        for name in ("l_u", "l_h", "l_a"):
            if np.any(getattr(self, name) < -tol):
                raise ScenarioError(f"{name} has negative entries")
        if np.any(self.t < -tol) or np.any(self.E < -tol):
            raise ScenarioError("subslot durations and energies must be >= 0")
        if np.any(self.t.sum(axis=2) > sc.slot_len * (1.0 + 1e-9) + tol):
            raise ScenarioError("subslot budget exceeded")
        if np.any(self.p[:, :, :2] > sc.p_td_max * (1.0 + 1e-9)):
            raise ScenarioError("TD power box violated")
        if np.any(self.p[:, :, 2] > sc.p_uav_max * (1.0 + 1e-9)):
            raise ScenarioError("UAV power box violated")
        mismatch = np.max(np.abs(self.E - self.t * self.p))
        if mismatch > tol * (1.0 + float(np.max(self.E, initial=0.0))):
            raise ScenarioError(f"E != t*p, max mismatch {mismatch:.3g}")


@dataclass
class DualVariables:
    """Multipliers for (P2): causality, both relay bounds, task requirement, subslot budget."""

    lam: np.ndarray             # (K, N)
    mu: np.ndarray
    nu: np.ndarray
    omega: np.ndarray
    eta: np.ndarray

    @property
    def lam_hat(self) -> np.ndarray:
        """Suffix sums of lam along slots: lam_hat[k, n] = sum_{i >= n} lam[k, i]."""
        return np.cumsum(self.lam[:, ::-1], axis=1)[:, ::-1]

    @classmethod
    def zeros(cls, K: int, N: int) -> "DualVariables":
        z = lambda: np.zeros((K, N))
        return cls(z(), z(), z(), z(), z())

    def validate(self, tol: float = 1e-12, require_cone: bool = True) -> None:
        for name in ("lam", "mu", "nu", "omega", "eta"):
            if np.any(getattr(self, name) < -tol):
                raise ScenarioError(f"dual {name} must be >= 0")
        # boundedness condition for the relayed-bits subproblem; moot when the
        # relay route is disabled
        if require_cone and np.any(self.mu + self.nu - self.omega < -tol):
            raise ScenarioError("dual feasibility mu+nu-omega >= 0 violated")


@dataclass
class SolveReport:
    """Outcome bookkeeping for one solve: trace, energy split, residuals, status."""

    objective_trace: list
    e_comm: float = 0.0
    e_comp: float = 0.0
    e_fly: float = 0.0
    iterations: dict = field(default_factory=dict)
    feasibility: dict = field(default_factory=dict)
    status: str = "converged"   # converged | infeasible | iteration-limit

    @property
    def objective(self) -> float:
        return self.objective_trace[-1] if self.objective_trace else math.inf


_SCHEMA_KEYS = [
    "K", "N", "slot_len_s", "altitude_m", "q0_m", "qF_m", "v_max_mps", "td_pos_m",
    "ap_pos_m", "bandwidth_hz", "noise_psd_uav_dbm_hz", "noise_psd_ap_dbm_hz",
    "ref_gain_db", "p_td_max_dbm", "p_uav_max_dbm", "f_td_max_hz", "f_uav_max_hz",
    "cycles_per_bit_td", "cycles_per_bit_uav", "cap_coeff_td", "cap_coeff_uav",
    "flight_weight", "task_min_bits", "aero",
]
_AERO_KEYS = ["P0_w", "Pi_w", "U_tip_mps", "v0_ind_mps", "drag_ratio", "rho", "s", "A_m2"]


def _task_matrix(raw, K: int, N: int) -> np.ndarray:
    arr = np.asarray(raw, dtype=float)
    if arr.ndim == 0:
        return np.full((K, N), float(arr))
    if arr.ndim == 1:
        if arr.shape[0] != K:
            raise ScenarioError(f"task_min_bits per-TD array must have length K={K}")
        return np.repeat(arr[:, None], N, axis=1)
    if arr.shape != (K, N):
        raise ScenarioError(f"task_min_bits matrix must be {K}x{N}, got {arr.shape}")
    return arr


def scenario_from_dict(d: dict) -> Scenario:
    missing = [k for k in _SCHEMA_KEYS if k not in d]
    if missing:
        raise ScenarioError(f"scenario file missing keys: {missing}")
    extra = [k for k in d if k not in _SCHEMA_KEYS and not k.startswith("_")]
    if extra:
        raise ScenarioError(f"scenario file has unknown keys: {extra}")
    a = d["aero"]
    missing_a = [k for k in _AERO_KEYS if k not in a]
    if missing_a:
        raise ScenarioError(f"aero block missing keys: {missing_a}")
    aero = AeroParams(
        blade_power_w=float(a["P0_w"]),
        induced_power_w=float(a["Pi_w"]),
        tip_speed_mps=float(a["U_tip_mps"]),
        induced_velocity_mps=float(a["v0_ind_mps"]),
        drag_ratio=float(a["drag_ratio"]),
        air_density=float(a["rho"]),
        rotor_solidity=float(a["s"]),
        disc_area_m2=float(a["A_m2"]),
    )
    K, N = int(d["K"]), int(d["N"])
    return Scenario(
        K=K, N=N,
        slot_len=float(d["slot_len_s"]),
        altitude=float(d["altitude_m"]),
        q0=np.asarray(d["q0_m"], dtype=float),
        qF=np.asarray(d["qF_m"], dtype=float),
        v_max=float(d["v_max_mps"]),
        td_pos=np.asarray(d["td_pos_m"], dtype=float),
        ap_pos=np.asarray(d["ap_pos_m"], dtype=float),
        bandwidth=float(d["bandwidth_hz"]),
        noise_psd_uav=dbm_to_watt(float(d["noise_psd_uav_dbm_hz"])),
        noise_psd_ap=dbm_to_watt(float(d["noise_psd_ap_dbm_hz"])),
        ref_gain=db_to_linear(float(d["ref_gain_db"])),
        p_td_max=dbm_to_watt(float(d["p_td_max_dbm"])),
        p_uav_max=dbm_to_watt(float(d["p_uav_max_dbm"])),
        f_td_max=float(d["f_td_max_hz"]),
        f_uav_max=float(d["f_uav_max_hz"]),
        cycles_per_bit_td=float(d["cycles_per_bit_td"]),
        cycles_per_bit_uav=float(d["cycles_per_bit_uav"]),
        cap_coeff_td=float(d["cap_coeff_td"]),
        cap_coeff_uav=float(d["cap_coeff_uav"]),
        flight_weight=float(d["flight_weight"]),
        task_min=_task_matrix(d["task_min_bits"], K, N),
        aero=aero,
    )


def scenario_to_dict(sc: Scenario) -> dict:
    task = sc.task_min
    if np.all(task == task[0, 0]):
        task_out = float(task[0, 0])
    elif np.all(task == task[:, :1]):
        task_out = [float(x) for x in task[:, 0]]
    else:
        task_out = [[float(x) for x in row] for row in task]
    return {
        "K": sc.K, "N": sc.N,
        "slot_len_s": sc.slot_len,
        "altitude_m": sc.altitude,
        "q0_m": [float(x) for x in sc.q0],
        "qF_m": [float(x) for x in sc.qF],
        "v_max_mps": sc.v_max,
        "td_pos_m": [[float(x) for x in row] for row in sc.td_pos],
        "ap_pos_m": [float(x) for x in sc.ap_pos],
        "bandwidth_hz": sc.bandwidth,
        "noise_psd_uav_dbm_hz": watt_to_dbm(sc.noise_psd_uav),
        "noise_psd_ap_dbm_hz": watt_to_dbm(sc.noise_psd_ap),
        "ref_gain_db": linear_to_db(sc.ref_gain),
        "p_td_max_dbm": watt_to_dbm(sc.p_td_max),
        "p_uav_max_dbm": watt_to_dbm(sc.p_uav_max),
        "f_td_max_hz": sc.f_td_max,
        "f_uav_max_hz": sc.f_uav_max,
        "cycles_per_bit_td": sc.cycles_per_bit_td,
        "cycles_per_bit_uav": sc.cycles_per_bit_uav,
        "cap_coeff_td": sc.cap_coeff_td,
        "cap_coeff_uav": sc.cap_coeff_uav,
        "flight_weight": sc.flight_weight,
        "task_min_bits": task_out,
        "aero": {
            "P0_w": sc.aero.blade_power_w,
            "Pi_w": sc.aero.induced_power_w,
            "U_tip_mps": sc.aero.tip_speed_mps,
            "v0_ind_mps": sc.aero.induced_velocity_mps,
            "drag_ratio": sc.aero.drag_ratio,
            "rho": sc.aero.air_density,
            "s": sc.aero.rotor_solidity,
            "A_m2": sc.aero.disc_area_m2,
        },
    }


def load_scenario(path) -> Scenario:
    """Load and validate a scenario JSON file (schema with dB/dBm radio fields)."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            d = json.load(f)
    except FileNotFoundError:
        raise
    except json.JSONDecodeError as e:
        raise ScenarioError(f"cannot parse scenario file {path}: {e}") from e
    return scenario_from_dict(d)


def save_scenario(sc: Scenario, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(scenario_to_dict(sc), f, indent=2)
        f.write("\n")


def _package_json(name: str) -> dict:
    with resources.files("uavmec.data").joinpath(name).open("r", encoding="utf-8") as f:
        return json.load(f)


def default_layout() -> tuple[np.ndarray, np.ndarray]:
    d = _package_json("default_layout.json")
    return np.asarray(d["td_pos_m"], dtype=float), np.asarray(d["ap_pos_m"], dtype=float)


def default_scenario(T: float, L: float | Sequence[float]) -> Scenario:
    """Bundled default instance with period T (s) and per-slot requirement L (bits/TD/slot).

    T must be a positive multiple of the default slot length (0.2 s). L may be a
    scalar or a per-TD sequence.
    """
    if T <= 0:
        raise ScenarioError(f"T must be > 0, got {T}")
    n = T / SLOT_LEN_DEFAULT_S
    if abs(n - round(n)) > 1e-9 * max(1.0, abs(n)):
        raise ScenarioError(f"T = {T} s is not a multiple of slot_len = {SLOT_LEN_DEFAULT_S} s")
    d = _package_json("table1.json")
    td_pos, ap_pos = default_layout()
    d["td_pos_m"] = td_pos.tolist()
    d["ap_pos_m"] = ap_pos.tolist()
    d["N"] = int(round(n))
    d["task_min_bits"] = list(np.atleast_1d(np.asarray(L, dtype=float)).astype(float)) \
        if np.ndim(L) else float(L)
    return scenario_from_dict(d)
