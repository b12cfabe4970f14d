"""Image-source ray tracing over axis-aligned canyon scenes.

Paths between a transmitter and a receiver are the line of sight plus
specular reflections (up to two bounces) off vertical building faces.
Obstacles and buildings block; obstacles never reflect. Per ray we keep
received power, phase, delay, and departure/arrival angles -- everything
the narrowband channel synthesis needs.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.constants import c as SPEED_OF_LIGHT
from scipy.constants import epsilon_0

from canyonwave.scene import Material, Scene

MAX_BOUNCES = 2
# All reflections use one fixed polarization; directivity comes from the
# arrays, not the elements, so a single consistent choice keeps runs
# deterministic and comparable.
POLARIZATION = "TE"
# Penetration shorter than this (in segment-parameter units) at a reflection
# endpoint is the ray touching its own mirror face, not a blockage.
_TOUCH_EPS = 1e-12


@dataclass(frozen=True)
class Ray:
    """One propagation path.

    power_w is the received power for the transmit power handed to trace();
    phase folds the free-space electrical length together with reflection
    phase shifts into [0, 2*pi). Angles are global-frame: azimuth in
    [-pi, pi], elevation measured from +z in [0, pi].
    """

    power_w: float
    phase_rad: float
    delay_s: float
    aod_azimuth: float
    aod_elevation: float
    aoa_azimuth: float
    aoa_elevation: float
    bounces: int


@dataclass(frozen=True)
class RaySet:
    """Rays for one tx/rx pair, sorted by descending power. May be empty."""

    rays: tuple[Ray, ...]
    tx_index: int = -1
    rx_index: int = -1

    def __len__(self) -> int:
        return len(self.rays)

    @property
    def has_los(self) -> bool:
        return any(r.bounces == 0 for r in self.rays)


def fresnel_reflection(
    material: Material, incidence_angle: float, carrier_hz: float, polarization: str = "TE"
) -> complex:
    """Reflection coefficient off a thick slab of the given material.

    incidence_angle is measured from the surface normal, in [0, pi/2).
    Uses the complex permittivity eps = eps_r - j*sigma/(2*pi*f*eps0);
    a PEC material reflects fully (-1 for TE, +1 for TM).
    """
    if not 0.0 <= incidence_angle < math.pi / 2:
        raise ValueError(f"incidence angle must be in [0, pi/2), got {incidence_angle}")
    if polarization not in ("TE", "TM"):
        raise ValueError(f"unknown polarization {polarization!r}")
    if material.pec:
        return -1.0 + 0.0j if polarization == "TE" else 1.0 + 0.0j
    eps = material.relative_permittivity - 1j * material.conductivity / (
        2.0 * math.pi * carrier_hz * epsilon_0
    )
    cos_i = math.cos(incidence_angle)
    sin2_i = math.sin(incidence_angle) ** 2
    root = np.sqrt(eps - sin2_i)
    if polarization == "TE":
        return complex((cos_i - root) / (cos_i + root))
    return complex((eps * cos_i - root) / (eps * cos_i + root))


# ---------------------------------------------------------------------------
# Geometry helpers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _Face:
    """Vertical rectangle of a building: plane axis (0=x, 1=y), plane
    coordinate, extent along the other horizontal axis, height, outward
    normal sign, and owning building index."""

    axis: int
    coord: float
    lo: float
    hi: float
    z_top: float
    sign: float
    building: int


def _building_faces(scene: Scene) -> list[_Face]:
    faces = []
    for i, b in enumerate(scene.buildings):
        faces.append(_Face(0, b.min_x, b.min_y, b.max_y, b.height, -1.0, i))
        faces.append(_Face(0, b.max_x, b.min_y, b.max_y, b.height, +1.0, i))
        faces.append(_Face(1, b.min_y, b.min_x, b.max_x, b.height, -1.0, i))
        faces.append(_Face(1, b.max_y, b.min_x, b.max_x, b.height, +1.0, i))
    return faces


def _mirror(point: np.ndarray, face: _Face) -> np.ndarray:
    out = point.copy()
    out[face.axis] = 2.0 * face.coord - point[face.axis]
    return out


class Tracer:
    """Reusable tracer for one scene; trace() is pure and thread-safe."""

    def __init__(self, scene: Scene):
        self.scene = scene
        self.faces = _building_faces(scene)
        boxes = [b.box for b in scene.buildings] + [o.box for o in scene.obstacles]
        # owner id: building index, or -1 for obstacles (never own a vertex)
        self._owners = np.array(
            list(range(len(scene.buildings))) + [-1] * len(scene.obstacles), dtype=int
        )
        if boxes:
            arr = np.asarray(boxes, dtype=float)
            self._lo = arr[:, 0:3]
            self._hi = arr[:, 3:6]
        else:
            self._lo = np.zeros((0, 3))
            self._hi = np.zeros((0, 3))

    # -- blockage ----------------------------------------------------------

    def _segment_blocked(self, p0: np.ndarray, p1: np.ndarray, owner_start: int, owner_end: int) -> bool:
        """Exact closed-solid segment test against every building/obstacle.

        A graze counts as blocked, except zero-length touches at a segment
        endpoint that lies on its own reflecting building.
        """
        if self._lo.shape[0] == 0:
            return False
        d = p1 - p0
        with np.errstate(divide="ignore", invalid="ignore"):
            t0 = (self._lo - p0) / d
            t1 = (self._hi - p0) / d
        tmin = np.minimum(t0, t1)
        tmax = np.maximum(t0, t1)
        # Axes the segment is parallel to: inside the slab -> unbounded,
        # outside -> impossible.
        parallel = d == 0.0
        if parallel.any():
            inside = (p0 >= self._lo) & (p0 <= self._hi)
            tmin = np.where(parallel, np.where(inside, -np.inf, np.inf), tmin)
            tmax = np.where(parallel, np.where(inside, np.inf, -np.inf), tmax)
        t_enter = tmin.max(axis=1)
        t_exit = tmax.min(axis=1)
        lo_t = np.maximum(t_enter, 0.0)
        hi_t = np.minimum(t_exit, 1.0)
        hit = (t_enter <= t_exit) & (lo_t <= hi_t)
        if not hit.any():
            return False
        owned = (self._owners == owner_start) | (self._owners == owner_end)
        # Non-owner solids: any closed intersection blocks.
        if (hit & ~owned).any():
            return True
        # Owner solids: only a positive penetration length blocks; the
        # zero-length touch at the mirror face is the reflection itself.
        return bool((hit & owned & (hi_t - lo_t > _TOUCH_EPS)).any())

    def los_clear(self, tx, rx) -> bool:
        """True when the direct segment dodges every building and obstacle."""
        return not self._segment_blocked(np.asarray(tx, float), np.asarray(rx, float), -1, -1)

    # -- path construction ---------------------------------------------------

    def trace(
        self,
        tx,
        rx,
        tx_power_dbm: float = 0.0,
        tx_index: int = -1,
        rx_index: int = -1,
    ) -> RaySet:
        """All unblocked paths with at most MAX_BOUNCES wall reflections."""
        tx = np.asarray(tx, dtype=float)
        rx = np.asarray(rx, dtype=float)
        if np.array_equal(tx, rx):
            raise ValueError("trace requires tx != rx")
        for name, p in (("tx", tx), ("rx", rx)):
            for i, b in enumerate(self.scene.buildings):
                if b.contains_xy(p[0], p[1]) and 0.0 < p[2] < b.height:
                    raise ValueError(f"{name} point lies inside buildings[{i}]")

        tx_power_w = 10.0 ** ((tx_power_dbm - 30.0) / 10.0)
        rays = []

        if not self._segment_blocked(tx, rx, -1, -1):
            rays.append(self._make_ray([tx, rx], [], tx_power_w))

        for f1 in self.faces:
            path = self._reflect_path(tx, rx, [f1])
            if path is not None:
                rays.append(self._make_ray(path, [f1], tx_power_w))
        for f1 in self.faces:
            for f2 in self.faces:
                if f1 is f2:
                    continue
                path = self._reflect_path(tx, rx, [f1, f2])
                if path is not None:
                    rays.append(self._make_ray(path, [f1, f2], tx_power_w))

        rays.sort(key=lambda r: (-r.power_w, r.delay_s, r.bounces))
        return RaySet(rays=tuple(rays), tx_index=tx_index, rx_index=rx_index)

    def _reflect_path(self, tx, rx, faces: list[_Face]):
        """Image-source construction; returns [tx, P1, ..., rx] or None."""
        images = [tx]
        for f in faces:
            images.append(_mirror(images[-1], f))
        # Walk backwards from rx to find the reflection points.
        points = [rx]
        target = rx
        for k in range(len(faces) - 1, -1, -1):
            f = faces[k]
            src = images[k + 1]
            denom = target[f.axis] - src[f.axis]
            if denom == 0.0:
                return None
            t = (f.coord - src[f.axis]) / denom
            if not 0.0 < t < 1.0:
                return None
            p = src + t * (target - src)
            p[f.axis] = f.coord  # pin onto the mirror plane exactly
            other = 1 - f.axis
            if not (f.lo <= p[other] <= f.hi and 0.0 <= p[2] <= f.z_top):
                return None
            points.append(p)
            target = p
        points.append(tx)
        path = points[::-1]  # [tx, P1, ..., Pk, rx]

        # Specular orientation: arrive from outside, leave outside.
        for k, f in enumerate(faces):
            n = np.zeros(3)
            n[f.axis] = f.sign
            incoming = path[k + 1] - path[k]
            outgoing = path[k + 2] - path[k + 1]
            if not (np.dot(n, incoming) < 0.0 and np.dot(n, outgoing) > 0.0):
                return None

        owners = [-1] + [f.building for f in faces] + [-1]
        for k in range(len(path) - 1):
            if self._segment_blocked(path[k], path[k + 1], owners[k], owners[k + 1]):
                return None
        return path

    def _make_ray(self, path, faces: list[_Face], tx_power_w: float) -> Ray:
        scene = self.scene
        lam = scene.wavelength
        segments = [path[k + 1] - path[k] for k in range(len(path) - 1)]
        lengths = [float(np.linalg.norm(s)) for s in segments]
        total = sum(lengths)

        gamma_mag2 = 1.0
        gamma_phase = 0.0
        for k, f in enumerate(faces):
            u = segments[k] / lengths[k]
            cos_i = min(abs(u[f.axis]), 1.0)
            theta_i = math.acos(cos_i)
            g = fresnel_reflection(
                scene.buildings[f.building].material, theta_i, scene.carrier_hz, POLARIZATION
            )
            gamma_mag2 *= abs(g) ** 2
            gamma_phase += math.atan2(g.imag, g.real)

        power = tx_power_w * (lam / (4.0 * math.pi * total)) ** 2 * gamma_mag2
        phase = (2.0 * math.pi * total / lam + gamma_phase) % (2.0 * math.pi)

        dep = segments[0] / lengths[0]
        arr = -segments[-1] / lengths[-1]  # from rx back toward the last vertex
        return Ray(
            power_w=power,
            phase_rad=phase,
            delay_s=total / SPEED_OF_LIGHT,
            aod_azimuth=math.atan2(dep[1], dep[0]),
            aod_elevation=math.acos(max(-1.0, min(1.0, dep[2]))),
            aoa_azimuth=math.atan2(arr[1], arr[0]),
            aoa_elevation=math.acos(max(-1.0, min(1.0, arr[2]))),
            bounces=len(faces),
        )


def trace(scene: Scene, tx, rx, tx_power_dbm: float = 0.0, tx_index: int = -1, rx_index: int = -1) -> RaySet:
    """One-shot convenience wrapper around Tracer."""
    return Tracer(scene).trace(tx, rx, tx_power_dbm=tx_power_dbm, tx_index=tx_index, rx_index=rx_index)


# ---------------------------------------------------------------------------
# CSV ray exchange (export and import share one format)
# ---------------------------------------------------------------------------

RAY_CSV_FIELDS = (
    "tx_index", "rx_index", "power_dbm", "phase_rad", "delay_s",
    "aod_az", "aod_el", "aoa_az", "aoa_el", "bounces",
)


def dump_rays_csv(raysets, path) -> None:
    """Write one row per ray; floats are round-trip exact (repr)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RAY_CSV_FIELDS)
        for rs in raysets:
            for r in rs.rays:
                power_dbm = 10.0 * math.log10(r.power_w * 1000.0)
                writer.writerow(
                    [rs.tx_index, rs.rx_index, repr(power_dbm), repr(r.phase_rad),
                     repr(r.delay_s), repr(r.aod_azimuth), repr(r.aod_elevation),
                     repr(r.aoa_azimuth), repr(r.aoa_elevation), r.bounces]
                )


def load_rays_csv(path) -> dict[tuple[int, int], RaySet]:
    """Read a ray dump back into RaySets keyed by (tx_index, rx_index)."""
    groups: dict[tuple[int, int], list[Ray]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(RAY_CSV_FIELDS) - set(reader.fieldnames or [])
        if missing:
            raise ValueError(f"ray CSV {path} missing columns {sorted(missing)}")
        for row in reader:
            key = (int(row["tx_index"]), int(row["rx_index"]))
            groups.setdefault(key, []).append(
                Ray(
                    power_w=10.0 ** ((float(row["power_dbm"]) - 30.0) / 10.0),
                    phase_rad=float(row["phase_rad"]),
                    delay_s=float(row["delay_s"]),
                    aod_azimuth=float(row["aod_az"]),
                    aod_elevation=float(row["aod_el"]),
                    aoa_azimuth=float(row["aoa_az"]),
                    aoa_elevation=float(row["aoa_el"]),
                    bounces=int(row["bounces"]),
                )
            )
    out = {}
    for key, rays in groups.items():
        rays.sort(key=lambda r: (-r.power_w, r.delay_s, r.bounces))
        out[key] = RaySet(rays=tuple(rays), tx_index=key[0], rx_index=key[1])
    return out
