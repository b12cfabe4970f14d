"""Shared fixtures: scene paths, synthetic ray sets, and seeded channels."""

import math
from pathlib import Path

import numpy as np
import pytest
from scipy.constants import c as C0

from canyonwave.phy import ArrayGeometry, synthesize_channel
from canyonwave.raytracer import Ray, RaySet
from canyonwave.scene import BasePlacement, Material, Scene, VehicleGrid

SCENES = Path(__file__).resolve().parents[1] / "scenes"

CONCRETE = Material("concrete", 15.0, 0.015, 0.3)
METAL = Material("metal", pec=True)


@pytest.fixture(scope="session")
def scenes_dir() -> Path:
    return SCENES


def make_scene(
    buildings=(),
    obstacles=(),
    bases=None,
    grid=None,
    carrier_hz=28e9,
    bandwidth_hz=850e6,
):
    """Scene built directly from objects, for tracer-level tests."""
    if bases is None:
        bases = (BasePlacement(position=(0.0, 0.0, 6.0), array_rows=2, array_cols=2),)
    if grid is None:
        grid = VehicleGrid(
            origin=(50.0, 0.0), rows=1, cols=1, spacing=5.0,
            antenna_height=1.5, array_rows=2, array_cols=2,
        )
    return Scene(
        buildings=tuple(buildings),
        obstacles=tuple(obstacles),
        bases=tuple(bases),
        grid=grid,
        terrain_material=Material("terrain", 25.0, 0.02, 0.0),
        carrier_hz=carrier_hz,
        bandwidth_hz=bandwidth_hz,
    )


FULL_AZIMUTH = (-math.pi, math.pi)
MID_ELEVATION = (0.25 * math.pi, 0.75 * math.pi)


def synthetic_ray(
    rng,
    power_w,
    bounces=0,
    delay_s=None,
    phase=None,
    az_range=FULL_AZIMUTH,
    el_range=MID_ELEVATION,
):
    """One ray with random angles; power is a per-watt path gain."""
    return Ray(
        power_w=power_w,
        phase_rad=float(rng.uniform(0.0, 2.0 * math.pi)) if phase is None else phase,
        delay_s=float(rng.uniform(3e-8, 3e-7)) if delay_s is None else delay_s,
        aod_azimuth=float(rng.uniform(*az_range)),
        aod_elevation=float(rng.uniform(*el_range)),
        aoa_azimuth=float(rng.uniform(-math.pi, math.pi)),
        aoa_elevation=float(rng.uniform(0.25 * math.pi, 0.75 * math.pi)),
        bounces=bounces,
    )


def synthetic_rayset(rng, n_rays, distance_range=(5.0, 15.0), carrier_hz=28e9,
                     az_range=FULL_AZIMUTH):
    """Random multipath cluster with Friis-scaled per-watt powers."""
    lam = C0 / carrier_hz
    d0 = float(rng.uniform(*distance_range))
    rays = []
    for l in range(n_rays):
        d = d0 * (1.0 + 0.4 * l + float(rng.uniform(0.0, 0.2)))
        gain = (lam / (4.0 * math.pi * d)) ** 2
        if l > 0:
            gain *= float(rng.uniform(0.05, 0.3))
        rays.append(synthetic_ray(rng, gain, bounces=min(l, 2), delay_s=d / C0,
                                  az_range=az_range))
    rays.sort(key=lambda r: -r.power_w)
    return RaySet(rays=tuple(rays))


def seeded_channels(seed, users, tx_geom, rx_geom, carrier_hz=28e9,
                    distance_range=(5.0, 15.0), max_rays=3):
    """Per-watt channels for one scheduling slot, reproducible from seed."""
    rng = np.random.default_rng(seed)
    channels = []
    for _ in range(users):
        n_rays = int(rng.integers(1, max_rays + 1))
        rs = synthetic_rayset(rng, n_rays, distance_range, carrier_hz)
        channels.append(synthesize_channel(rs, tx_geom, rx_geom, carrier_hz))
    return channels


def stratified_channels(seed, users, tx_geom, rx_geom, carrier_hz=28e9,
                        distance_range=(5.0, 15.0), max_rays=3):
    """Slot channels whose departures occupy disjoint azimuth sectors.

    Mirrors scheduling spread-out users from a full cell: no two scheduled
    users share a transmit beam, so the zero-forcing stack stays
    well conditioned and singular-slot handling never kicks in.
    """
    rng = np.random.default_rng(seed)
    width = 2.0 * math.pi / users
    channels = []
    for u in range(users):
        lo = -math.pi + (u + 0.15) * width
        hi = -math.pi + (u + 0.85) * width
        n_rays = int(rng.integers(1, max_rays + 1))
        rs = synthetic_rayset(rng, n_rays, distance_range, carrier_hz, az_range=(lo, hi))
        channels.append(synthesize_channel(rs, tx_geom, rx_geom, carrier_hz))
    return channels


def rank1_channel(seed, tx_geom, rx_geom, gain=1.0):
    """Single-ray channel; returns (channel, departure/arrival angles)."""
    rng = np.random.default_rng(seed)
    ray = synthetic_ray(rng, gain**2, delay_s=0.0, phase=0.0)
    rs = RaySet(rays=(ray,))
    return synthesize_channel(rs, tx_geom, rx_geom, 28e9), ray


def default_geoms(bs_shape=(8, 8), veh_shape=(2, 2), carrier_hz=28e9):
    return (
        ArrayGeometry.for_carrier(*bs_shape, carrier_hz),
        ArrayGeometry.for_carrier(*veh_shape, carrier_hz),
    )
