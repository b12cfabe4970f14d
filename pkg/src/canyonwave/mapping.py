"""Situational maps and statistics.

Single-user maps evaluate every grid location in its own time slot against
the best serving base station. Multiuser maps average per-user rates over
randomly scheduled slots; locations never scheduled stay flagged as
unserved and are excluded from statistics. All statistics run on raw grid
values; interpolation exists only to render smoother pictures.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from canyonwave import hybrid
from canyonwave.beamforming import LinkBudget, beam_search, dbm_to_watts, su_rate
from canyonwave.hybrid import HybridConfig, PowerModel, evaluate_slot
from canyonwave.phy import (
    ArrayGeometry,
    ChannelMatrix,
    Codebook,
    build_beam_codebook,
    build_rvq_codebook,
    synthesize_channel,
)
from canyonwave.raytracer import RaySet, Tracer
from canyonwave.scene import Scene, grid_positions

# Service targets: collective perception, video sharing, info sharing for
# automation levels, emitted in this order.
DEFAULT_TARGET_RATES = (1e9, 500e6, 50e6)


class EmptySampleError(ValueError):
    """Statistics requested over zero samples."""


class GridMismatchError(ValueError):
    """Comparison across maps whose grids differ."""


@dataclass
class RateMap:
    """Per-location scalar results on the vehicle grid.

    values is rows x cols with NaN at unserved locations; visits counts how
    often each location was scheduled (1 everywhere for single-user maps).
    realization_samples keeps the per-realization served rates so coverage
    statistics can be computed the same way the maps were built.
    """

    values: np.ndarray
    visits: np.ndarray
    quantity: str  # "rate" | "energy-efficiency"
    x_coords: np.ndarray
    y_coords: np.ndarray
    metadata: dict = field(default_factory=dict)
    realization_samples: list = None

    @property
    def shape(self):
        return self.values.shape

    def served_values(self) -> np.ndarray:
        return self.values[~np.isnan(self.values)]

    def scaled(self, factor: float, quantity: str) -> "RateMap":
        """Same map with values (and samples) scaled; used for efficiency maps."""
        samples = None
        if self.realization_samples is not None:
            samples = [s * factor for s in self.realization_samples]
        return RateMap(
            values=self.values * factor,
            visits=self.visits.copy(),
            quantity=quantity,
            x_coords=self.x_coords,
            y_coords=self.y_coords,
            metadata=dict(self.metadata),
            realization_samples=samples,
        )


@dataclass(frozen=True)
class CoverageReport:
    target_rates: tuple
    coverage_percent: tuple
    mean_rate: float
    std_dev: float
    realization_count: int

    def to_dict(self) -> dict:
        return {
            "target_rates": list(self.target_rates),
            "coverage_percent": list(self.coverage_percent),
            "mean_rate": self.mean_rate,
            "std_dev": self.std_dev,
            "realization_count": self.realization_count,
        }


# ---------------------------------------------------------------------------
# Link evaluation shared by both map builders
# ---------------------------------------------------------------------------


class _Links:
    """Traced, per-watt-normalized channels for every (base, grid point)."""

    def __init__(self, scene: Scene, rays_by_link=None, threads: int = 1):
        self.scene = scene
        self.positions = grid_positions(scene)
        self.tracer = Tracer(scene)
        self.tx_geom = ArrayGeometry.for_carrier(
            scene.bases[0].array_rows, scene.bases[0].array_cols, scene.carrier_hz
        )
        self.rx_geom = ArrayGeometry.for_carrier(
            scene.grid.array_rows, scene.grid.array_cols, scene.carrier_hz
        )
        self._rays_by_link = rays_by_link
        self._threads = max(1, threads)
        self.raysets: dict[tuple[int, int], RaySet] = {}
        self.channels: dict[tuple[int, int], ChannelMatrix] = {}

    def _trace_one(self, link):
        b, k = link
        base = self.scene.bases[b]
        if self._rays_by_link is not None:
            rs = self._rays_by_link.get(
                (b, k), RaySet(rays=(), tx_index=b, rx_index=k)
            )
        else:
            rs = self.tracer.trace(
                base.position, self.positions[k],
                tx_power_dbm=base.tx_power_dbm, tx_index=b, rx_index=k,
            )
        h = synthesize_channel(
            rs, self.tx_geom, self.rx_geom, self.scene.carrier_hz,
            tx_boresight_azimuth=base.boresight_azimuth,
        )
        # Channels are kept per transmitted watt so the rate formulas apply
        # the transmit power explicitly and exactly once.
        scale = 1.0 / math.sqrt(dbm_to_watts(base.tx_power_dbm))
        return rs, ChannelMatrix(entries=h.entries * scale, tx_index=b, rx_index=k)

    def evaluate(self, base_indices=None):
        if base_indices is None:
            base_indices = range(len(self.scene.bases))
        links = [(b, k) for b in base_indices for k in range(len(self.positions))]
        links = [link for link in links if link not in self.channels]
        if not links:
            return
        if self._threads > 1:
            with ThreadPoolExecutor(max_workers=self._threads) as pool:
                results = list(pool.map(self._trace_one, links))
        else:
            results = [self._trace_one(link) for link in links]
        for link, (rs, h) in zip(links, results):
            self.raysets[link] = rs
            self.channels[link] = h

    def sorted_raysets(self) -> list[RaySet]:
        return [self.raysets[key] for key in sorted(self.raysets)]


def los_blocked_mask(scene: Scene) -> np.ndarray:
    """rows x cols mask, True where no base station has line of sight."""
    tracer = Tracer(scene)
    positions = grid_positions(scene)
    blocked = np.ones(len(positions), dtype=bool)
    for k, p in enumerate(positions):
        blocked[k] = not any(tracer.los_clear(b.position, p) for b in scene.bases)
    return blocked.reshape(scene.grid.rows, scene.grid.cols)


def _map_coords(scene: Scene):
    g = scene.grid
    x = g.origin[0] + np.arange(g.cols) * g.spacing
    y = g.origin[1] + np.arange(g.rows) * g.spacing
    return x, y


def su_map(
    scene: Scene,
    oversampling: int = 1,
    best_bs_policy: str = "max-rate",
    rays_by_link=None,
    ray_sink: list = None,
    threads: int = 1,
) -> RateMap:
    """TDMA rate map: each location served by its best base station."""
    if best_bs_policy != "max-rate":
        raise ValueError(f"unknown best-BS policy {best_bs_policy!r}")
    links = _Links(scene, rays_by_link=rays_by_link, threads=threads)
    links.evaluate()
    if ray_sink is not None:
        ray_sink.extend(links.sorted_raysets())

    bs_codebook = build_beam_codebook(links.tx_geom, oversampling)
    veh_codebook = build_beam_codebook(links.rx_geom, oversampling)
    budgets = [LinkBudget(b.tx_power_dbm, scene.bandwidth_hz) for b in scene.bases]

    n_points = len(links.positions)
    values = np.zeros(n_points)
    for k in range(n_points):
        best = 0.0
        for b in range(len(scene.bases)):
            sel = beam_search(links.channels[(b, k)], bs_codebook, veh_codebook)
            best = max(best, su_rate(links.channels[(b, k)], sel, budgets[b]))
        values[k] = best

    grid_values = values.reshape(scene.grid.rows, scene.grid.cols)
    x, y = _map_coords(scene)
    return RateMap(
        values=grid_values,
        visits=np.ones_like(grid_values, dtype=int),
        quantity="rate",
        x_coords=x,
        y_coords=y,
        metadata={
            "mode": "su",
            "oversampling": oversampling,
            "scene_hash": scene.content_hash(),
        },
        realization_samples=[values.copy()],
    )


def mu_map(
    scene: Scene,
    cfg: HybridConfig,
    realizations: int,
    seed: int,
    oversampling: int = 1,
    power_model: PowerModel = None,
    baseband: str = "zf",
    rays_by_link=None,
    ray_sink: list = None,
    threads: int = 1,
) -> RateMap:
    """Average per-user rate map over randomly scheduled multiuser slots.

    Each realization draws cfg.users distinct grid locations (counter-based
    stream keyed by (seed, realization)), runs the hybrid pipeline from the
    first base station, and accumulates per-user rates at their locations.
    """
    if power_model is None:
        power_model = PowerModel()
    n_points = scene.grid.rows * scene.grid.cols
    if cfg.users > n_points:
        raise ValueError(f"cannot schedule {cfg.users} users on a {n_points}-point grid")
    if realizations < 1:
        raise ValueError("realizations must be >= 1")

    links = _Links(scene, rays_by_link=rays_by_link, threads=threads)
    links.evaluate(base_indices=[0])
    if ray_sink is not None:
        ray_sink.extend(links.sorted_raysets())

    if cfg.structure == hybrid.PARTIALLY_CONNECTED:
        bs_codebook = build_beam_codebook(hybrid.subarray_geometry(links.tx_geom, cfg.users), oversampling)
    else:
        bs_codebook = build_beam_codebook(links.tx_geom, oversampling)
    veh_codebook = build_beam_codebook(links.rx_geom, oversampling)
    rvq = None if cfg.perfect_csit else build_rvq_codebook(cfg.users, cfg.feedback_bits, seed)
    budget = LinkBudget(scene.bases[0].tx_power_dbm, scene.bandwidth_hz)

    acc = np.zeros(n_points)
    visits = np.zeros(n_points, dtype=int)
    samples = []
    singular_slots = 0
    for r in range(realizations):
        rng = np.random.Generator(np.random.Philox(key=np.array([seed, r], dtype=np.uint64)))
        users = rng.choice(n_points, size=cfg.users, replace=False)
        channels = [links.channels[(0, int(k))] for k in users]
        slot = evaluate_slot(
            channels, bs_codebook, veh_codebook, cfg, budget,
            power_model=power_model, rvq_codebook=rvq,
            user_indices=tuple(int(k) for k in users), baseband=baseband,
        )
        if slot.singular:
            singular_slots += 1
        for u, k in enumerate(users):
            acc[int(k)] += slot.rates[u]
            visits[int(k)] += 1
        samples.append(slot.rates.copy())

    values = np.full(n_points, np.nan)
    served = visits > 0
    values[served] = acc[served] / visits[served]
    x, y = _map_coords(scene)
    return RateMap(
        values=values.reshape(scene.grid.rows, scene.grid.cols),
        visits=visits.reshape(scene.grid.rows, scene.grid.cols),
        quantity="rate",
        x_coords=x,
        y_coords=y,
        metadata={
            "mode": "mu",
            "oversampling": oversampling,
            "seed": seed,
            "realizations": realizations,
            "structure": cfg.structure,
            "users": cfg.users,
            "feedback_bits": cfg.feedback_bits,
            "baseband": baseband,
            "singular_slots": singular_slots,
            "scene_hash": scene.content_hash(),
        },
        realization_samples=samples,
    )


# ---------------------------------------------------------------------------
# Display interpolation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Raster:
    """Dense display raster; never feeds back into statistics."""

    values: np.ndarray
    x_coords: np.ndarray
    y_coords: np.ndarray
    quantity: str


def _interp_axis(values: np.ndarray, factor: int) -> np.ndarray:
    """Linear interpolation along the last axis with `factor` inserted points."""
    n = values.shape[-1]
    if n < 2:
        return values.copy()
    steps = factor + 1
    t = np.arange(steps) / steps
    left = values[..., :-1, None]
    right = values[..., 1:, None]
    seg = left * (1.0 - t) + right * t
    out = seg.reshape(*values.shape[:-1], (n - 1) * steps)
    return np.concatenate([out, values[..., -1:]], axis=-1)


def interpolate_map(ratemap: RateMap, factor: int = 8) -> Raster:
    """Bilinear raster with `factor` points inserted between grid nodes.

    Unserved (NaN) nodes poison only the spans they touch, so they never
    contribute interpolation support.
    """
    if factor < 0:
        raise ValueError("factor must be >= 0")
    vals = _interp_axis(ratemap.values, factor)  # along columns (x)
    vals = _interp_axis(vals.T, factor).T  # along rows (y)
    return Raster(
        values=vals,
        x_coords=_interp_axis(ratemap.x_coords, factor),
        y_coords=_interp_axis(ratemap.y_coords, factor),
        quantity=ratemap.quantity,
    )


# ---------------------------------------------------------------------------
# Coverage and outage statistics
# ---------------------------------------------------------------------------


def _sample_groups(values) -> list[np.ndarray]:
    if isinstance(values, RateMap):
        groups = values.realization_samples or [values.served_values()]
    elif isinstance(values, (list, tuple)) and values and np.ndim(values[0]) >= 1:
        groups = list(values)
    else:
        groups = [values]
    groups = [np.asarray(g, dtype=float).ravel() for g in groups]
    groups = [g[~np.isnan(g)] for g in groups]
    groups = [g for g in groups if g.size]
    if not groups:
        raise EmptySampleError("no served samples to aggregate")
    return groups


def coverage(values, targets=DEFAULT_TARGET_RATES) -> CoverageReport:
    """Percentage of samples meeting each target, plus realization stats.

    `values` may be a flat sample array, a list of per-realization arrays,
    or a RateMap. Mean and standard deviation are taken over
    realization-level means (population std, so one realization gives 0).
    """
    groups = _sample_groups(values)
    pooled = np.concatenate(groups)
    pct = tuple(100.0 * float(np.mean(pooled >= t)) for t in targets)
    means = np.array([g.mean() for g in groups])
    return CoverageReport(
        target_rates=tuple(targets),
        coverage_percent=pct,
        mean_rate=float(means.mean()),
        std_dev=float(means.std(ddof=0)),
        realization_count=len(groups),
    )


def outage(samples, threshold: float) -> float:
    """Empirical P[rate < threshold]."""
    s = np.asarray(samples, dtype=float).ravel()
    s = s[~np.isnan(s)]
    if s.size == 0:
        raise EmptySampleError("outage over an empty sample")
    return float(np.mean(s < threshold))


def rate_with_outage(samples, epsilon: float) -> float:
    """Largest sample value whose empirical outage stays within epsilon.

    Convention: over the empirical CDF, return max{zeta in samples :
    P[rate < zeta] <= epsilon}; epsilon = 0 gives the minimum sample.
    """
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must be in [0, 1]")
    s = np.sort(np.asarray(samples, dtype=float).ravel())
    s = s[~np.isnan(s)]
    if s.size == 0:
        raise EmptySampleError("rate_with_outage over an empty sample")
    n = s.size
    for value in np.unique(s)[::-1]:
        below = np.searchsorted(s, value, side="left") / n
        if below <= epsilon:
            return float(value)
    return float(s[0])


def deployment_compare(variant_maps: dict, targets=DEFAULT_TARGET_RATES) -> dict:
    """Coverage/mean/std table across named scenario variants.

    All maps must share one grid; raises GridMismatchError otherwise.
    """
    if not variant_maps:
        raise EmptySampleError("no variants to compare")
    maps = list(variant_maps.values())
    ref = maps[0]
    for m in maps[1:]:
        if (
            m.shape != ref.shape
            or not np.array_equal(m.x_coords, ref.x_coords)
            or not np.array_equal(m.y_coords, ref.y_coords)
        ):
            raise GridMismatchError("variant maps use different grids")
    table = {}
    for label, m in variant_maps.items():
        report = coverage(m, targets)
        table[label] = report.to_dict()
    return {"target_rates": list(targets), "variants": table}


# ---------------------------------------------------------------------------
# Delimited output
# ---------------------------------------------------------------------------


def write_ratemap_csv(ratemap: RateMap, path, config_hash: str = "") -> None:
    """Row-major CSV of the raw grid with provenance comment line."""
    scene_hash = ratemap.metadata.get("scene_hash", "")
    with open(path, "w", newline="") as fh:
        fh.write(f"# config_hash={config_hash} scene_hash={scene_hash}\n")
        fh.write("x_m,y_m,value,visits,flag\n")
        rows, cols = ratemap.shape
        for r in range(rows):
            for c in range(cols):
                v = ratemap.values[r, c]
                flag = "unserved" if ratemap.visits[r, c] == 0 else "served"
                value = "nan" if np.isnan(v) else repr(float(v))
                fh.write(
                    f"{repr(float(ratemap.x_coords[c]))},{repr(float(ratemap.y_coords[r]))},"
                    f"{value},{int(ratemap.visits[r, c])},{flag}\n"
                )
