"""Arrays, channels, and codebooks.

Uniform rectangular arrays are flattened with the vertical (row) index
fastest: flat index = p * rows + q for horizontal index p and vertical
index q. Beam codewords follow the same order because they are built as
kron(azimuth_beam, elevation_beam).
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass

import numpy as np
from scipy.constants import c as SPEED_OF_LIGHT

from canyonwave.raytracer import RaySet

DEFAULT_MAX_RVQ_BITS = 20
MAX_RVQ_BITS_ENV = "CANYONWAVE_MAX_CODEBOOK_BITS"


class CodebookBudgetError(ValueError):
    """Requested feedback codebook would exceed the size cap."""


@dataclass(frozen=True)
class ArrayGeometry:
    """URA with `rows` vertical and `cols` horizontal elements."""

    rows: int
    cols: int
    wavelength: float
    d_h: float = None  # defaults to half wavelength
    d_v: float = None

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError("array must have rows, cols >= 1")
        if self.wavelength <= 0.0:
            raise ValueError("wavelength must be > 0")
        if self.d_h is None:
            object.__setattr__(self, "d_h", self.wavelength / 2.0)
        if self.d_v is None:
            object.__setattr__(self, "d_v", self.wavelength / 2.0)
        if self.d_h <= 0.0 or self.d_v <= 0.0:
            raise ValueError("element spacing must be > 0")

    @classmethod
    def for_carrier(cls, rows: int, cols: int, carrier_hz: float) -> "ArrayGeometry":
        return cls(rows=rows, cols=cols, wavelength=SPEED_OF_LIGHT / carrier_hz)

    @property
    def size(self) -> int:
        return self.rows * self.cols


def steering_vector(geom: ArrayGeometry, azimuth: float, elevation: float) -> np.ndarray:
    """Unit-norm URA response for a plane wave at (azimuth, elevation).

    Entry (p, q) is exp(j*2*pi/lam*(d_h*p*sin(az)*sin(el) + d_v*q*cos(el)))
    / sqrt(rows*cols), elevation measured from +z in [0, pi].
    """
    if not 0.0 <= elevation <= math.pi:
        raise ValueError(f"elevation must be in [0, pi], got {elevation}")
    k = 2.0 * math.pi / geom.wavelength
    az_phase = k * geom.d_h * math.sin(azimuth) * math.sin(elevation) * np.arange(geom.cols)
    el_phase = k * geom.d_v * math.cos(elevation) * np.arange(geom.rows)
    vec = np.kron(np.exp(1j * az_phase), np.exp(1j * el_phase))
    return vec / math.sqrt(geom.size)


@dataclass(frozen=True)
class ChannelMatrix:
    """Narrowband complex channel (n_rx x n_tx) for one link."""

    entries: np.ndarray
    tx_index: int = -1
    rx_index: int = -1

    @property
    def shape(self):
        return self.entries.shape


def _as_entries(channel) -> np.ndarray:
    return channel.entries if isinstance(channel, ChannelMatrix) else np.asarray(channel)


def synthesize_channel(
    rays: RaySet, tx_geom: ArrayGeometry, rx_geom: ArrayGeometry, carrier_hz: float,
    tx_boresight_azimuth: float = 0.0,
) -> ChannelMatrix:
    """Sum of per-ray rank-1 terms:

        H = sum_l sqrt(p_l) * e^{j*phase_l} * e^{j*2*pi*f_c*tau_l}
                 * a_rx(aoa_l) * a_tx(aod_l)^H

    An empty RaySet gives the all-zero matrix. tx_boresight_azimuth rotates
    departure azimuths into the transmit array frame.
    """
    h = np.zeros((rx_geom.size, tx_geom.size), dtype=complex)
    for r in rays.rays:
        a_t = steering_vector(tx_geom, r.aod_azimuth - tx_boresight_azimuth, r.aod_elevation)
        a_r = steering_vector(rx_geom, r.aoa_azimuth, r.aoa_elevation)
        coeff = math.sqrt(r.power_w) * np.exp(
            1j * (r.phase_rad + 2.0 * math.pi * carrier_hz * r.delay_s)
        )
        h += coeff * np.outer(a_r, a_t.conj())
    return ChannelMatrix(entries=h, tx_index=rays.tx_index, rx_index=rays.rx_index)


@dataclass(frozen=True)
class Codebook:
    """Ordered unit-norm beamforming vectors, stored as matrix columns."""

    vectors: np.ndarray  # (dim, count)
    kind: str  # "analog-beam" | "rvq"
    oversampling: int = None
    seed: int = None
    azimuth_sines: np.ndarray = None  # analog-beam grids, for inspection
    elevation_cosines: np.ndarray = None

    def __len__(self) -> int:
        return self.vectors.shape[1]

    @property
    def dim(self) -> int:
        return self.vectors.shape[0]

    def vector(self, index: int) -> np.ndarray:
        return self.vectors[:, index]


def _wrapped_grid(points: int) -> np.ndarray:
    """points values 2k/points, wrapped (mod 2) into (-1, 1].

    Coarse grids nest inside 2^m-times finer ones, and every value's
    negation is on the grid, so conjugate beams are always available.
    """
    g = 2.0 * np.arange(points) / points
    g = np.where(g > 1.0, g - 2.0, g)
    return g


def build_beam_codebook(geom: ArrayGeometry, oversampling: int = 1) -> Codebook:
    """3D beam codebook over nested azimuth/elevation grids.

    The azimuth grid has oversampling*cols points in sin(azimuth) and the
    elevation grid oversampling*rows points in cos(elevation); codeword
    (k, l) is kron(azimuth_beam(k, l), elevation_beam(l)) where the azimuth
    phase slope carries the sin(elevation_l) factor. Codewords are ordered
    k-major (elevation index fastest).
    """
    if oversampling < 1:
        raise ValueError("oversampling must be >= 1")
    n, m = geom.rows, geom.cols
    sin_az = _wrapped_grid(oversampling * m)
    cos_el = _wrapped_grid(oversampling * n)
    sin_el = np.sqrt(np.maximum(0.0, 1.0 - cos_el**2))

    kh = 2.0 * math.pi / geom.wavelength * geom.d_h
    kv = 2.0 * math.pi / geom.wavelength * geom.d_v
    p = np.arange(m)
    q = np.arange(n)
    # elevation beams: (rows, n_el)
    delta = np.exp(-1j * kv * np.outer(q, cos_el)) / math.sqrt(n)
    cols = []
    for k in range(len(sin_az)):
        for ell in range(len(cos_el)):
            nu = np.exp(-1j * kh * sin_az[k] * sin_el[ell] * p) / math.sqrt(m)
            cols.append(np.kron(nu, delta[:, ell]))
    return Codebook(
        vectors=np.column_stack(cols),
        kind="analog-beam",
        oversampling=oversampling,
        azimuth_sines=sin_az,
        elevation_cosines=cos_el,
    )


def build_rvq_codebook(dimension: int, bits: int, seed: int, max_bits: int = None) -> Codebook:
    """2**bits pseudorandom unit vectors on the complex sphere.

    Vector i is generated from a counter-based stream keyed by (seed, i), so
    serial and parallel generation agree bit for bit. The size cap guards
    against the exponential blow-up of feedback codebooks; override it with
    the CANYONWAVE_MAX_CODEBOOK_BITS environment variable.
    """
    if bits < 1:
        raise ValueError("bits must be >= 1")
    if max_bits is None:
        max_bits = int(os.environ.get(MAX_RVQ_BITS_ENV, DEFAULT_MAX_RVQ_BITS))
    if bits > max_bits:
        raise CodebookBudgetError(
            f"rvq codebook of 2**{bits} vectors exceeds the cap of 2**{max_bits}; "
            f"raise {MAX_RVQ_BITS_ENV} to allow it"
        )
    count = 2**bits
    vectors = np.empty((dimension, count), dtype=complex)
    for i in range(count):
        rng = np.random.Generator(np.random.Philox(key=np.array([seed, i], dtype=np.uint64)))
        z = rng.standard_normal(dimension) + 1j * rng.standard_normal(dimension)
        vectors[:, i] = z / np.linalg.norm(z)
    return Codebook(vectors=vectors, kind="rvq", seed=seed)


def export_codebook_csv(codebook: Codebook, path) -> None:
    """Debug dump: one row per codeword, entries as re/im pairs."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        header = ["index"]
        for j in range(codebook.dim):
            header += [f"re{j}", f"im{j}"]
        writer.writerow(header)
        for i in range(len(codebook)):
            v = codebook.vector(i)
            row = [i]
            for x in v:
                row += [repr(float(x.real)), repr(float(x.imag))]
            writer.writerow(row)
