"""Multiuser hybrid precoding with limited feedback.

The analog stage reuses the single-user beam search (full array, or one
contiguous subarray per RF chain for the partially-connected structure).
Each served vehicle quantizes its effective channel on a random vector
quantization codebook and feeds the index back; the base station builds a
zero-forcing baseband precoder on the quantized channels. Rates are then
evaluated against the true channels, so quantization error shows up as
residual multiuser interference.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from canyonwave.beamforming import BeamSelection, LinkBudget, beam_search
from canyonwave.phy import ArrayGeometry, Codebook, _as_entries

logger = logging.getLogger(__name__)

FULLY_CONNECTED = "fully-connected"
PARTIALLY_CONNECTED = "partially-connected"

# Condition-number gate for the zero-forcing inverse; beyond this the
# stacked feedback matrix is treated as singular and the slot is dropped.
COND_LIMIT = 1e12


class SingularChannelError(np.linalg.LinAlgError):
    """Stacked quantized channels are (numerically) rank deficient."""


@dataclass(frozen=True)
class PowerModel:
    """Transmitter power consumption model, all in watts."""

    common_w: float = 10.0
    rf_chain_w: float = 0.1
    amplifier_w: float = 0.1
    phase_shifter_w: float = 0.01

    def __post_init__(self):
        for name in ("common_w", "rf_chain_w", "amplifier_w", "phase_shifter_w"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be >= 0")


@dataclass(frozen=True)
class HybridConfig:
    """Serving structure for one scheduling slot; one RF chain per user."""

    structure: str
    users: int
    feedback_bits: int = None  # None => perfect CSIT, no quantization
    subarray_size: int = None  # partially-connected only

    def __post_init__(self):
        if self.structure not in (FULLY_CONNECTED, PARTIALLY_CONNECTED):
            raise ValueError(f"unknown structure {self.structure!r}")
        if self.users < 1:
            raise ValueError("users must be >= 1")
        if self.feedback_bits is not None and self.feedback_bits < 1:
            raise ValueError("feedback_bits must be >= 1 (or None for perfect CSIT)")
        if self.structure == PARTIALLY_CONNECTED and self.subarray_size is None:
            raise ValueError("partially-connected structure needs subarray_size")

    @property
    def n_rf(self) -> int:
        return self.users

    @property
    def perfect_csit(self) -> bool:
        return self.feedback_bits is None

    def validate_tx(self, n_tx: int):
        if self.structure == PARTIALLY_CONNECTED and self.users * self.subarray_size != n_tx:
            raise ValueError(
                f"partially-connected needs users*subarray_size == n_tx "
                f"({self.users}*{self.subarray_size} != {n_tx})"
            )


def subarray_geometry(geom: ArrayGeometry, users: int) -> ArrayGeometry:
    """Geometry of one contiguous subarray: whole antenna columns.

    The flattening is vertical-index-fastest, so a contiguous block of
    rows*(cols/users) flat indices is a vertical slice of the URA; that
    requires users to divide cols.
    """
    if geom.cols % users != 0:
        raise ValueError(
            f"cannot split {geom.cols} antenna columns into {users} contiguous subarrays"
        )
    return ArrayGeometry(
        rows=geom.rows, cols=geom.cols // users,
        wavelength=geom.wavelength, d_h=geom.d_h, d_v=geom.d_v,
    )


def analog_stage(channels, bs_codebook: Codebook, vehicle_codebook: Codebook, cfg: HybridConfig):
    """Select per-user analog precoders and combiners by beam search.

    Fully-connected: column u of the analog precoder is the full-array
    winner for user u. Partially-connected: block u (flat antenna indices
    [u*subarray_size, (u+1)*subarray_size)) is the winner over the subarray
    codebook against user u's channel restricted to those antennas.

    Returns (analog_precoder (n_tx, U), combiners (n_rx, U), selections).
    """
    mats = [_as_entries(h) for h in channels]
    if len(mats) != cfg.users:
        raise ValueError(f"expected {cfg.users} channels, got {len(mats)}")
    n_rx, n_tx = mats[0].shape
    for h in mats:
        if h.shape != (n_rx, n_tx):
            raise ValueError("all user channels must share one shape")
    cfg.validate_tx(n_tx)

    f_rf = np.zeros((n_tx, cfg.users), dtype=complex)
    combiners = np.zeros((n_rx, cfg.users), dtype=complex)
    selections: list[BeamSelection] = []
    for u, h in enumerate(mats):
        if cfg.structure == FULLY_CONNECTED:
            if bs_codebook.dim != n_tx:
                raise ValueError("fully-connected needs a full-array BS codebook")
            sel = beam_search(h, bs_codebook, vehicle_codebook)
            f_rf[:, u] = bs_codebook.vector(sel.precoder_index)
        else:
            if bs_codebook.dim != cfg.subarray_size:
                raise ValueError("partially-connected needs a subarray BS codebook")
            block = slice(u * cfg.subarray_size, (u + 1) * cfg.subarray_size)
            sel = beam_search(h[:, block], bs_codebook, vehicle_codebook)
            f_rf[block, u] = bs_codebook.vector(sel.precoder_index)
        combiners[:, u] = vehicle_codebook.vector(sel.combiner_index)
        selections.append(sel)
    return f_rf, combiners, selections


def effective_channels(channels, combiners: np.ndarray, analog_precoder: np.ndarray) -> np.ndarray:
    """Post-analog channels, one row per user: row u = w_u^H H_u F_RF."""
    rows = [
        combiners[:, u].conj() @ _as_entries(h) @ analog_precoder
        for u, h in enumerate(channels)
    ]
    return np.vstack(rows)


def quantize_effective(effective: np.ndarray, codebook: Codebook = None):
    """Feedback codeword maximizing |h^H c| (ties -> lowest index).

    `effective` is the user's channel as a column (conjugate of its row in
    the stacked matrix). With codebook None (perfect CSIT) the direction of
    the true channel is returned unquantized.

    Returns (unit vector, index); index is None for perfect CSIT.
    """
    h = np.asarray(effective)
    if codebook is None:
        norm = np.linalg.norm(h)
        if norm == 0.0:
            return np.zeros_like(h), None
        return h / norm, None
    if codebook.dim != h.shape[0]:
        raise ValueError(f"codebook dimension {codebook.dim} != channel length {h.shape[0]}")
    metric = np.abs(h.conj() @ codebook.vectors)
    idx = int(np.argmax(metric))
    return codebook.vector(idx), idx


def normalize_baseband(baseband: np.ndarray, analog_precoder: np.ndarray) -> np.ndarray:
    """Scale each baseband column so the cascaded precoder has unit norm."""
    out = baseband.copy()
    for u in range(out.shape[1]):
        norm = np.linalg.norm(analog_precoder @ out[:, u])
        if not np.isfinite(norm) or norm == 0.0:
            raise SingularChannelError(f"cascaded precoder for user {u} has zero norm")
        out[:, u] /= norm
    return out


def zf_precoder(quantized, analog_precoder: np.ndarray, cond_limit: float = COND_LIMIT) -> np.ndarray:
    """Zero-forcing baseband precoder on the fed-back channels.

    Builds Hq with row u = quantized_u^H, computes Hq^H (Hq Hq^H)^{-1}, and
    normalizes each column against the analog precoder. Raises
    SingularChannelError when Hq is rank deficient (e.g. two users fed back
    the same codeword); callers record such slots with zero rates.
    """
    hq = np.vstack([np.asarray(q).conj() for q in quantized])
    gram = hq @ hq.conj().T
    if not np.isfinite(gram).all() or np.linalg.cond(gram) > cond_limit:
        raise SingularChannelError(
            f"stacked feedback matrix is singular (cond > {cond_limit:g})"
        )
    baseband = hq.conj().T @ np.linalg.inv(gram)
    return normalize_baseband(baseband, analog_precoder)


def identity_baseband(users: int, analog_precoder: np.ndarray = None) -> np.ndarray:
    """No-digital-precoding baseline: identity, then the usual normalization."""
    eye = np.eye(users, dtype=complex)
    if analog_precoder is None:
        return eye
    return normalize_baseband(eye, analog_precoder)


def mu_rate(channels, combiners: np.ndarray, analog_precoder: np.ndarray,
            baseband: np.ndarray, budget: LinkBudget) -> np.ndarray:
    """Per-user rates under equal power split, bits/s:

        R_u = B log2(1 + (P/U)|g_uu|^2 / ((P/U) sum_{n!=u} |g_un|^2 + sigma^2))

    where g_un = w_u^H H_u F_RF f_n^BB uses the true channels, so imperfect
    feedback surfaces as residual interference.
    """
    users = baseband.shape[1]
    eff = effective_channels(channels, combiners, analog_precoder)  # rows w_u^H H_u F_RF
    g = eff @ baseband  # g[u, n]
    p_split = budget.tx_power_w / users
    noise = budget.noise_power_w
    rates = np.empty(users)
    for u in range(users):
        signal = p_split * abs(g[u, u]) ** 2
        interference = p_split * (np.abs(g[u, :]) ** 2).sum() - signal
        rates[u] = budget.bandwidth_hz * math.log2(1.0 + signal / (interference + noise))
    return rates


def phase_shifter_count(structure: str, n_tx: int, n_rf: int) -> int:
    if structure == FULLY_CONNECTED:
        return n_tx * n_rf
    if structure == PARTIALLY_CONNECTED:
        return n_tx
    raise ValueError(f"unknown structure {structure!r}")


def consumed_power_w(cfg: HybridConfig, power_model: PowerModel, n_tx: int) -> float:
    n_ps = phase_shifter_count(cfg.structure, n_tx, cfg.n_rf)
    return (
        power_model.common_w
        + cfg.n_rf * power_model.rf_chain_w
        + n_tx * power_model.amplifier_w
        + n_ps * power_model.phase_shifter_w
    )


def energy_efficiency(rate: float, cfg: HybridConfig, power_model: PowerModel, n_tx: int) -> float:
    """Rate over total consumed power, bits/joule."""
    if rate < 0.0:
        raise ValueError("rate must be >= 0")
    return rate / consumed_power_w(cfg, power_model, n_tx)


@dataclass
class MultiuserSlot:
    """Everything computed for one scheduling slot."""

    user_indices: tuple[int, ...]
    analog_precoder: np.ndarray
    combiners: np.ndarray
    effective_true: np.ndarray  # rows w_u^H H_u F_RF
    effective_quantized: np.ndarray  # rows = fed-back unit rows
    baseband: np.ndarray
    rates: np.ndarray  # bits/s per user
    efficiencies: np.ndarray  # bits/joule per user
    singular: bool = False
    feedback_indices: tuple = ()


def evaluate_slot(
    channels,
    bs_codebook: Codebook,
    vehicle_codebook: Codebook,
    cfg: HybridConfig,
    budget: LinkBudget,
    power_model: PowerModel = None,
    rvq_codebook: Codebook = None,
    user_indices=None,
    baseband: str = "zf",
) -> MultiuserSlot:
    """Run the full hybrid pipeline for one slot of scheduled users."""
    if power_model is None:
        power_model = PowerModel()
    if not cfg.perfect_csit and rvq_codebook is None:
        raise ValueError("feedback_bits set but no rvq codebook supplied")
    if user_indices is None:
        user_indices = tuple(range(cfg.users))

    f_rf, combiners, _ = analog_stage(channels, bs_codebook, vehicle_codebook, cfg)
    eff = effective_channels(channels, combiners, f_rf)
    n_tx = f_rf.shape[0]

    quantized = []
    indices = []
    for u in range(cfg.users):
        q, idx = quantize_effective(eff[u].conj(), None if cfg.perfect_csit else rvq_codebook)
        quantized.append(q)
        indices.append(idx)
    eff_quantized = np.vstack([q.conj() for q in quantized])

    singular = False
    try:
        if baseband == "zf":
            f_bb = zf_precoder(quantized, f_rf)
        elif baseband == "identity":
            f_bb = identity_baseband(cfg.users, f_rf)
        else:
            raise ValueError(f"unknown baseband scheme {baseband!r}")
        rates = mu_rate(channels, combiners, f_rf, f_bb, budget)
    except SingularChannelError:
        logger.warning("singular feedback matrix for users %s; slot rates zeroed", user_indices)
        singular = True
        f_bb = np.zeros((cfg.users, cfg.users), dtype=complex)
        rates = np.zeros(cfg.users)

    denom = consumed_power_w(cfg, power_model, n_tx)
    return MultiuserSlot(
        user_indices=tuple(user_indices),
        analog_precoder=f_rf,
        combiners=combiners,
        effective_true=eff,
        effective_quantized=eff_quantized,
        baseband=f_bb,
        rates=rates,
        efficiencies=rates / denom,
        singular=singular,
        feedback_indices=tuple(indices),
    )
