"""Single-user analog stage: exhaustive beam search and achievable rate."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from canyonwave.phy import Codebook, _as_entries

# Thermal noise density constant: sigma^2[dBm] = -173.8 + 10*log10(B).
NOISE_DENSITY_DBM_PER_HZ = -173.8


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


def watts_to_dbm(watts: float) -> float:
    return 10.0 * math.log10(watts) + 30.0


def noise_power_dbm(bandwidth_hz: float) -> float:
    """Noise power over the signal bandwidth, in dBm."""
    if bandwidth_hz <= 0.0:
        raise ValueError("bandwidth must be > 0")
    return NOISE_DENSITY_DBM_PER_HZ + 10.0 * math.log10(bandwidth_hz)


@dataclass(frozen=True)
class LinkBudget:
    """Transmit power and bandwidth; noise power is derived, never stored."""

    tx_power_dbm: float
    bandwidth_hz: float

    @property
    def noise_power(self) -> float:
        return noise_power_dbm(self.bandwidth_hz)

    @property
    def tx_power_w(self) -> float:
        return dbm_to_watts(self.tx_power_dbm)

    @property
    def noise_power_w(self) -> float:
        return dbm_to_watts(self.noise_power)


@dataclass(frozen=True)
class BeamSelection:
    precoder_index: int
    combiner_index: int
    gain: float  # |w^H H f| for the selected pair


def beam_search(channel, precoders: Codebook, combiners: Codebook) -> BeamSelection:
    """Exhaustive search for argmax |w^H H f| over both codebooks.

    Ties break toward the lowest (combiner_index, precoder_index) pair.
    """
    if len(precoders) == 0 or len(combiners) == 0:
        raise ValueError("beam search needs non-empty codebooks")
    h = _as_entries(channel)
    if h.shape != (combiners.dim, precoders.dim):
        raise ValueError(
            f"channel shape {h.shape} does not match codebooks "
            f"({combiners.dim} x {precoders.dim})"
        )
    metric = np.abs(combiners.vectors.conj().T @ h @ precoders.vectors)
    flat = int(np.argmax(metric))  # first max in row-major order = lexicographic tie-break
    w_idx, f_idx = divmod(flat, len(precoders))
    return BeamSelection(precoder_index=f_idx, combiner_index=w_idx, gain=float(metric[w_idx, f_idx]))


def su_rate(channel, selection: BeamSelection, budget: LinkBudget) -> float:
    """Single-user achievable rate, bits/s:

        R = B * log2(1 + P * |w^H H f|^2 / sigma^2)

    with P and sigma^2 in linear watts.
    """
    snr = budget.tx_power_w * selection.gain**2 / budget.noise_power_w
    return budget.bandwidth_hz * math.log2(1.0 + snr)
