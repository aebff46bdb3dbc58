"""Free-space channel gains and achievable rates, including the perspective form.

Pure functions of scalars/arrays; base-2 logs are computed as ln/ln2 with the
single shared constant LN2.
"""

from __future__ import annotations

import numpy as np

LN2 = float(np.log(2.0))


def gain_td_uav(q, w_k, altitude: float, ref_gain: float):
    """Channel power gain TD -> UAV: ref_gain / (H^2 + ||q - w_k||^2)."""
    q = np.asarray(q, dtype=float)
    w_k = np.asarray(w_k, dtype=float)
    d2 = float(np.sum((q - w_k) ** 2))
    return ref_gain / (altitude * altitude + d2)


def gain_uav_ap(q, w_a, altitude: float, ref_gain: float):
    """Channel power gain UAV -> AP; same law with the AP position."""
    return gain_td_uav(q, w_a, altitude, ref_gain)


def rate_bps(p, gain, noise_psd: float, subcarrier_bw: float):
    """Achievable rate B0 * log2(1 + p*gain/(noise_psd*B0)) in bits/s."""
    snr = np.asarray(p, dtype=float) * gain / (noise_psd * subcarrier_bw)
    return subcarrier_bw * np.log1p(snr) / LN2


def perspective_bits(t, E, gain, noise_psd: float, subcarrier_bw: float):
    """Bits carried in t seconds spending E joules: t * rate(E/t).

    Continuously extended to 0 at t = 0 (where E must also be 0).
    """
    t = float(t)
    E = float(E)
    if t <= 0.0:
        if E > 0.0:
            raise ValueError(f"E = {E} > 0 with t = 0 violates the energy box E <= t*P")
        return 0.0
    return t * float(rate_bps(E / t, gain, noise_psd, subcarrier_bw))
