"""Simulation world: materials, buildings, obstacles, base stations, vehicle grid.

A scene is loaded from a strict JSON document (see the schema in the README)
and is immutable afterwards, so it can be shared read-only across workers.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np


class SceneError(ValueError):
    """Base class for scene file problems."""


class SceneParseError(SceneError):
    """Malformed file or schema violation; message names the offending field."""


class SceneInvariantError(SceneError):
    """Structurally valid file describing an inconsistent world."""


# Wet earth from standard ground-material tables; used when the scene file
# does not define a material named "terrain". The default tracer never
# reflects off the ground, so this only matters for future toggles.
DEFAULT_TERRAIN = ("terrain", 25.0, 0.02, 0.0)


@dataclass(frozen=True)
class Material:
    """Reflecting surface properties. `pec` marks a perfect conductor."""

    name: str
    relative_permittivity: float = 1.0
    conductivity: float = 0.0  # S/m
    thickness: float = 0.0  # m
    pec: bool = False

    def __post_init__(self):
        if not self.pec and self.relative_permittivity < 1.0:
            raise SceneInvariantError(
                f"material '{self.name}': relative_permittivity must be >= 1 "
                f"unless pec is set (got {self.relative_permittivity})"
            )
        if self.conductivity < 0.0:
            raise SceneInvariantError(
                f"material '{self.name}': conductivity must be >= 0"
            )
        if self.thickness < 0.0:
            raise SceneInvariantError(f"material '{self.name}': thickness must be >= 0")


@dataclass(frozen=True)
class Building:
    """Axis-aligned extruded rectangle sitting on the ground plane."""

    min_x: float
    min_y: float
    max_x: float
    max_y: float
    height: float
    material: Material

    def __post_init__(self):
        if not (self.max_x > self.min_x and self.max_y > self.min_y):
            raise SceneInvariantError(
                f"building footprint [{self.min_x},{self.min_y},{self.max_x},"
                f"{self.max_y}] must have positive area"
            )
        if self.height <= 0.0:
            raise SceneInvariantError("building height must be > 0")

    def contains_xy(self, x: float, y: float) -> bool:
        """Strict 2D interior test (boundary points do not count)."""
        return self.min_x < x < self.max_x and self.min_y < y < self.max_y

    @property
    def box(self) -> tuple[float, float, float, float, float, float]:
        return (self.min_x, self.min_y, 0.0, self.max_x, self.max_y, self.height)


@dataclass(frozen=True)
class Obstacle:
    """Axis-aligned blocking box (e.g. a parked truck). Blocks, never reflects."""

    box: tuple[float, float, float, float, float, float]  # min_x..max_z
    material: Material

    def __post_init__(self):
        x0, y0, z0, x1, y1, z1 = self.box
        if not (x1 > x0 and y1 > y0 and z1 > z0):
            raise SceneInvariantError(f"obstacle box {self.box} must have positive volume")


@dataclass(frozen=True)
class BasePlacement:
    """One base station: position, URA shape, orientation, transmit power."""

    position: tuple[float, float, float]
    array_rows: int
    array_cols: int
    boresight_azimuth: float = 0.0  # rad
    tx_power_dbm: float = 10.0

    def __post_init__(self):
        if self.array_rows < 1 or self.array_cols < 1:
            raise SceneInvariantError("base station array must have rows, cols >= 1")


@dataclass(frozen=True)
class VehicleGrid:
    """Uniform rectangular grid of receiver positions, row-major ordering."""

    origin: tuple[float, float]
    rows: int
    cols: int
    spacing: float
    antenna_height: float
    array_rows: int
    array_cols: int

    def __post_init__(self):
        if self.spacing <= 0.0:
            raise SceneInvariantError(f"VehicleGrid.spacing must be > 0 (got {self.spacing})")
        if self.rows < 1 or self.cols < 1:
            raise SceneInvariantError("VehicleGrid must have rows, cols >= 1")
        if self.array_rows < 1 or self.array_cols < 1:
            raise SceneInvariantError("vehicle array must have rows, cols >= 1")


@dataclass(frozen=True)
class Scene:
    """Immutable simulation world."""

    buildings: tuple[Building, ...]
    obstacles: tuple[Obstacle, ...]
    bases: tuple[BasePlacement, ...]
    grid: VehicleGrid
    terrain_material: Material
    carrier_hz: float
    bandwidth_hz: float

    def __post_init__(self):
        if self.carrier_hz <= 0.0:
            raise SceneInvariantError("rf.carrier_hz must be > 0")
        if self.bandwidth_hz <= 0.0:
            raise SceneInvariantError("rf.bandwidth_hz must be > 0")
        if not self.bases:
            raise SceneInvariantError("scene must place at least one base station")
        # One global array shape per side: all BSs identical, all vehicles identical.
        shapes = {(b.array_rows, b.array_cols) for b in self.bases}
        if len(shapes) > 1:
            raise SceneInvariantError(
                f"all base stations must share one array shape, got {sorted(shapes)}"
            )
        for k, (x, y, z) in enumerate(grid_positions(self)):
            for i, b in enumerate(self.buildings):
                if b.contains_xy(x, y):
                    raise SceneInvariantError(
                        f"grid point {k} at ({x}, {y}) lies inside buildings[{i}] footprint"
                    )

    @property
    def wavelength(self) -> float:
        from scipy.constants import c

        return c / self.carrier_hz

    @property
    def n_tx(self) -> int:
        return self.bases[0].array_rows * self.bases[0].array_cols

    @property
    def n_rx(self) -> int:
        return self.grid.array_rows * self.grid.array_cols

    def content_hash(self) -> str:
        """sha256 over a canonical serialization; equal scenes hash equal."""
        blob = json.dumps(_scene_to_plain(self), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def grid_positions(scene: Scene) -> np.ndarray:
    """Row-major (rows*cols, 3) array of vehicle antenna positions.

    Point (r, c) sits at origin + (c*spacing, r*spacing) at antenna height.
    """
    g = scene.grid
    cc, rr = np.meshgrid(np.arange(g.cols), np.arange(g.rows))
    x = g.origin[0] + cc.ravel() * g.spacing
    y = g.origin[1] + rr.ravel() * g.spacing
    z = np.full(x.shape, g.antenna_height)
    return np.column_stack([x, y, z])


# ---------------------------------------------------------------------------
# Strict JSON loading
# ---------------------------------------------------------------------------

_TOP_KEYS = {"materials", "buildings", "obstacles", "bases", "grid", "rf"}
_MATERIAL_KEYS = {"name", "permittivity", "conductivity_s_per_m", "thickness_m", "pec"}
_BUILDING_KEYS = {"footprint_m", "height_m", "material"}
_OBSTACLE_KEYS = {"box_m", "material"}
_BASE_KEYS = {"position_m", "array_rows", "array_cols", "boresight_azimuth_rad", "tx_power_dbm"}
_GRID_KEYS = {"origin_m", "rows", "cols", "spacing_m", "antenna_height_m", "array_rows", "array_cols"}
_RF_KEYS = {"carrier_hz", "bandwidth_hz"}


def _reject_unknown(obj: dict, allowed: set, where: str):
    extra = set(obj) - allowed
    if extra:
        raise SceneParseError(f"{where}: unknown keys {sorted(extra)}")


def _require(obj: dict, key: str, where: str):
    if key not in obj:
        raise SceneParseError(f"{where}: missing required key '{key}'")
    return obj[key]


def _number(value, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SceneParseError(f"{where}: expected a number, got {value!r}")
    return float(value)


def _count(value, where: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise SceneParseError(f"{where}: expected an integer, got {value!r}")
    return value


def _vector(value, n: int, where: str) -> tuple:
    if not isinstance(value, list) or len(value) != n:
        raise SceneParseError(f"{where}: expected a list of {n} numbers")
    return tuple(_number(v, where) for v in value)


def load_scene(path) -> Scene:
    """Parse and validate a scene file. Pure function of the file bytes."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise SceneParseError(f"cannot read scene file {path}: {exc}") from exc
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise SceneParseError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise SceneParseError(f"{path}: top level must be a JSON object")
    _reject_unknown(doc, _TOP_KEYS, "scene")
    for key in _TOP_KEYS:
        _require(doc, key, "scene")

    materials: dict[str, Material] = {}
    for i, m in enumerate(doc["materials"]):
        where = f"materials[{i}]"
        _reject_unknown(m, _MATERIAL_KEYS, where)
        name = _require(m, "name", where)
        if name in materials:
            raise SceneParseError(f"{where}: duplicate material name '{name}'")
        materials[name] = Material(
            name=name,
            relative_permittivity=_number(m.get("permittivity", 1.0), f"{where}.permittivity"),
            conductivity=_number(m.get("conductivity_s_per_m", 0.0), f"{where}.conductivity_s_per_m"),
            thickness=_number(m.get("thickness_m", 0.0), f"{where}.thickness_m"),
            pec=bool(m.get("pec", False)),
        )

    def lookup(name, where):
        if name not in materials:
            raise SceneParseError(f"{where}: unknown material '{name}'")
        return materials[name]

    buildings = []
    for i, b in enumerate(doc["buildings"]):
        where = f"buildings[{i}]"
        _reject_unknown(b, _BUILDING_KEYS, where)
        x0, y0, x1, y1 = _vector(_require(b, "footprint_m", where), 4, f"{where}.footprint_m")
        buildings.append(
            Building(
                min_x=x0, min_y=y0, max_x=x1, max_y=y1,
                height=_number(_require(b, "height_m", where), f"{where}.height_m"),
                material=lookup(_require(b, "material", where), where),
            )
        )

    obstacles = []
    for i, o in enumerate(doc["obstacles"]):
        where = f"obstacles[{i}]"
        _reject_unknown(o, _OBSTACLE_KEYS, where)
        obstacles.append(
            Obstacle(
                box=_vector(_require(o, "box_m", where), 6, f"{where}.box_m"),
                material=lookup(_require(o, "material", where), where),
            )
        )

    bases = []
    for i, s in enumerate(doc["bases"]):
        where = f"bases[{i}]"
        _reject_unknown(s, _BASE_KEYS, where)
        bases.append(
            BasePlacement(
                position=_vector(_require(s, "position_m", where), 3, f"{where}.position_m"),
                array_rows=_count(_require(s, "array_rows", where), f"{where}.array_rows"),
                array_cols=_count(_require(s, "array_cols", where), f"{where}.array_cols"),
                boresight_azimuth=_number(s.get("boresight_azimuth_rad", 0.0), f"{where}.boresight_azimuth_rad"),
                tx_power_dbm=_number(s.get("tx_power_dbm", 10.0), f"{where}.tx_power_dbm"),
            )
        )

    g = doc["grid"]
    _reject_unknown(g, _GRID_KEYS, "grid")
    grid = VehicleGrid(
        origin=_vector(_require(g, "origin_m", "grid"), 2, "grid.origin_m"),
        rows=_count(_require(g, "rows", "grid"), "grid.rows"),
        cols=_count(_require(g, "cols", "grid"), "grid.cols"),
        spacing=_number(_require(g, "spacing_m", "grid"), "grid.spacing_m"),
        antenna_height=_number(_require(g, "antenna_height_m", "grid"), "grid.antenna_height_m"),
        array_rows=_count(_require(g, "array_rows", "grid"), "grid.array_rows"),
        array_cols=_count(_require(g, "array_cols", "grid"), "grid.array_cols"),
    )

    rf = doc["rf"]
    _reject_unknown(rf, _RF_KEYS, "rf")

    terrain = materials.get("terrain")
    if terrain is None:
        name, eps, sigma, thick = DEFAULT_TERRAIN
        terrain = Material(name, eps, sigma, thick)

    return Scene(
        buildings=tuple(buildings),
        obstacles=tuple(obstacles),
        bases=tuple(bases),
        grid=grid,
        terrain_material=terrain,
        carrier_hz=_number(_require(rf, "carrier_hz", "rf"), "rf.carrier_hz"),
        bandwidth_hz=_number(_require(rf, "bandwidth_hz", "rf"), "rf.bandwidth_hz"),
    )


def _scene_to_plain(scene: Scene) -> dict:
    return {
        "buildings": [
            [b.min_x, b.min_y, b.max_x, b.max_y, b.height, b.material.name,
             b.material.relative_permittivity, b.material.conductivity,
             b.material.thickness, b.material.pec]
            for b in scene.buildings
        ],
        "obstacles": [[*o.box, o.material.name, o.material.pec] for o in scene.obstacles],
        "bases": [
            [*s.position, s.array_rows, s.array_cols, s.boresight_azimuth, s.tx_power_dbm]
            for s in scene.bases
        ],
        "grid": [
            *scene.grid.origin, scene.grid.rows, scene.grid.cols, scene.grid.spacing,
            scene.grid.antenna_height, scene.grid.array_rows, scene.grid.array_cols,
        ],
        "terrain": [
            scene.terrain_material.relative_permittivity,
            scene.terrain_material.conductivity,
            scene.terrain_material.thickness,
            scene.terrain_material.pec,
        ],
        "rf": [scene.carrier_hz, scene.bandwidth_hz],
    }
