import math

import numpy as np
import pytest
from scipy.constants import c as C0, epsilon_0

from canyonwave.raytracer import (
    Ray,
    RaySet,
    Tracer,
    dump_rays_csv,
    fresnel_reflection,
    load_rays_csv,
    trace,
)
from canyonwave.scene import Building, Obstacle, load_scene
from tests.conftest import CONCRETE, METAL, make_scene

F28 = 28e9
LAM = C0 / F28


def canyon_one_wall(obstacles=()):
    """Single north wall plus optional blockers; tx west, rx east."""
    wall = Building(min_x=-10.0, min_y=5.0, max_x=110.0, max_y=25.0, height=20.0, material=CONCRETE)
    return make_scene(buildings=(wall,), obstacles=tuple(obstacles))


def test_friis_at_reference_distance():
    scene = make_scene()
    d = LAM / (4.0 * math.pi)
    rs = trace(scene, (0, 0, 10), (d, 0, 10), tx_power_dbm=10.0)
    assert len(rs) == 1 and rs.rays[0].bounces == 0
    assert rs.rays[0].power_w == pytest.approx(10 ** ((10.0 - 30.0) / 10.0), rel=1e-12)


def test_friis_100m_at_28ghz():
    scene = make_scene()
    rs = trace(scene, (0, 0, 10), (100, 0, 10), tx_power_dbm=0.0)
    ray = rs.rays[0]
    loss_db = -10.0 * math.log10(ray.power_w / 1e-3)
    assert loss_db == pytest.approx(101.39, abs=0.01)
    assert ray.delay_s == pytest.approx(333.56e-9, abs=0.01e-9)
    assert ray.delay_s == 100.0 / C0  # exact by construction


def test_detour_path_delay_is_length_over_c():
    scene = canyon_one_wall()
    rs = trace(scene, (0, 0, 6), (80, 0, 1.5), tx_power_dbm=0.0)
    bounce = [r for r in rs.rays if r.bounces == 1]
    assert bounce
    # image of tx across the wall plane y=5 sits at y=10
    image_dist = np.linalg.norm(np.array([80, 0, 1.5]) - np.array([0, 10, 6]))
    assert bounce[0].delay_s == pytest.approx(image_dist / C0, rel=1e-12)


def test_full_blockage_gives_empty_rayset():
    block = Obstacle(box=(40.0, -50.0, 0.0, 45.0, 50.0, 50.0), material=METAL)
    scene = make_scene(obstacles=(block,))
    rs = trace(scene, (0, 0, 10), (100, 0, 10), tx_power_dbm=0.0)
    assert len(rs) == 0


def test_blocked_los_leaves_only_wall_reflection():
    truck = Obstacle(box=(38.0, -2.0, 0.0, 42.0, 2.0, 5.0), material=METAL)
    scene = canyon_one_wall(obstacles=(truck,))
    rs = trace(scene, (0, 0, 6), (80, 0, 1.5), tx_power_dbm=0.0)
    assert len(rs) >= 1
    assert not rs.has_los
    assert all(r.bounces >= 1 for r in rs.rays)
    assert rs.rays[0].power_w > 0.0


def test_moving_obstacle_out_of_corridor_changes_nothing():
    truck_far = Obstacle(box=(38.0, 60.0, 0.0, 42.0, 64.0, 5.0), material=METAL)
    with_truck = canyon_one_wall(obstacles=(truck_far,))
    without = canyon_one_wall()
    a = trace(with_truck, (0, 0, 6), (80, 0, 1.5), tx_power_dbm=0.0)
    b = trace(without, (0, 0, 6), (80, 0, 1.5), tx_power_dbm=0.0)
    assert a.rays == b.rays


def test_rays_sorted_by_descending_power():
    scene = load_scene("scenes/canyon_trucks.json")
    rs = trace(scene, scene.bases[0].position, (30, 2.5, 1.5), tx_power_dbm=10.0)
    powers = [r.power_w for r in rs.rays]
    assert powers == sorted(powers, reverse=True)
    assert len(rs) >= 3  # LOS + both walls at least


def test_angle_ranges_and_power_bounds():
    scene = load_scene("scenes/canyon_trucks.json")
    tx = scene.bases[0].position
    for rx in [(30, 2.5, 1.5), (80, -2.5, 1.5), (100, 2.5, 1.5)]:
        for r in trace(scene, tx, rx, tx_power_dbm=10.0).rays:
            assert -math.pi <= r.aod_azimuth <= math.pi
            assert -math.pi <= r.aoa_azimuth <= math.pi
            assert 0.0 <= r.aod_elevation <= math.pi
            assert 0.0 <= r.aoa_elevation <= math.pi
            assert 0.0 <= r.phase_rad < 2.0 * math.pi
            # free-space loss bounds every ray; reflections only subtract
            d = r.delay_s * C0
            friis = 10 ** ((10.0 - 30.0) / 10.0) * (LAM / (4.0 * math.pi * d)) ** 2
            assert r.power_w <= friis * (1.0 + 1e-9)


def test_reciprocity():
    scene = load_scene("scenes/canyon_trucks.json")
    tx = scene.bases[0].position
    for rx in [(30, 2.5, 1.5), (65, -2.5, 1.5)]:
        fwd = trace(scene, tx, rx, tx_power_dbm=0.0).rays
        rev = trace(scene, rx, tx, tx_power_dbm=0.0).rays
        assert len(fwd) == len(rev)
        key = lambda r: (-r.power_w, r.delay_s, r.bounces)
        for a, b in zip(sorted(fwd, key=key), sorted(rev, key=key)):
            assert a.power_w == pytest.approx(b.power_w, rel=1e-9)
            assert a.delay_s == pytest.approx(b.delay_s, rel=1e-9)
            assert a.bounces == b.bounces
            assert a.aod_azimuth == pytest.approx(b.aoa_azimuth, abs=1e-9)
            assert a.aod_elevation == pytest.approx(b.aoa_elevation, abs=1e-9)
            assert a.aoa_azimuth == pytest.approx(b.aod_azimuth, abs=1e-9)


def test_parallel_trace_matches_serial():
    from concurrent.futures import ThreadPoolExecutor

    scene = load_scene("scenes/canyon_trucks.json")
    tracer = Tracer(scene)
    tx = scene.bases[0].position
    targets = [(5 + 5 * k, 2.5, 1.5) for k in range(12)]
    serial = [tracer.trace(tx, rx, tx_power_dbm=10.0) for rx in targets]
    with ThreadPoolExecutor(max_workers=4) as pool:
        parallel = list(pool.map(lambda rx: tracer.trace(tx, rx, tx_power_dbm=10.0), targets))
    assert serial == parallel


def test_trace_preconditions():
    scene = canyon_one_wall()
    with pytest.raises(ValueError, match="tx != rx"):
        trace(scene, (0, 0, 6), (0, 0, 6))
    with pytest.raises(ValueError, match="inside buildings"):
        trace(scene, (0, 10, 6), (50, 0, 1.5))  # tx inside the wall


# -- Fresnel -----------------------------------------------------------------


def test_fresnel_pec_is_minus_one():
    for angle in (0.0, 0.3, 1.2):
        assert fresnel_reflection(METAL, angle, F28, "TE") == -1.0


def test_fresnel_no_contrast_is_zero():
    vacuum = CONCRETE.__class__("vacuum", 1.0, 0.0, 0.0)
    assert fresnel_reflection(vacuum, 0.4, F28, "TE") == pytest.approx(0.0, abs=1e-15)


def test_fresnel_concrete_normal_incidence_golden():
    # hand evaluation of (sqrt(eps)-1)/(sqrt(eps)+1) with
    # eps = 15 - j*0.015/(2*pi*28e9*eps0) gives |Gamma| = 0.5895738604984091
    gamma = fresnel_reflection(CONCRETE, 0.0, F28, "TE")
    eps = 15.0 - 1j * 0.015 / (2.0 * math.pi * F28 * epsilon_0)
    oracle = (np.sqrt(eps) - 1.0) / (np.sqrt(eps) + 1.0)
    assert abs(gamma) == pytest.approx(abs(oracle), rel=1e-12)
    assert abs(gamma) == pytest.approx(0.5895738604984091, rel=1e-9)
    assert abs(gamma) <= 1.0


def test_fresnel_magnitude_at_most_one():
    for angle in np.linspace(0.0, math.pi / 2 * 0.999, 25):
        assert abs(fresnel_reflection(CONCRETE, float(angle), F28, "TE")) <= 1.0 + 1e-12


def test_fresnel_rejects_grazing_and_bad_polarization():
    with pytest.raises(ValueError):
        fresnel_reflection(CONCRETE, math.pi / 2, F28, "TE")
    with pytest.raises(ValueError):
        fresnel_reflection(CONCRETE, 0.1, F28, "circular")


# -- CSV exchange -------------------------------------------------------------


def test_ray_csv_round_trip(tmp_path):
    scene = load_scene("scenes/canyon_trucks.json")
    tracer = Tracer(scene)
    tx = scene.bases[0].position
    raysets = [
        tracer.trace(tx, (5 + 10 * k, 2.5, 1.5), tx_power_dbm=10.0, tx_index=0, rx_index=k)
        for k in range(5)
    ]
    path = tmp_path / "rays.csv"
    dump_rays_csv(raysets, path)
    loaded = load_rays_csv(path)
    assert set(loaded) == {(0, k) for k in range(5)}
    for k, rs in enumerate(raysets):
        got = loaded[(0, k)]
        assert len(got) == len(rs)
        for a, b in zip(rs.rays, got.rays):
            assert a.power_w == pytest.approx(b.power_w, rel=1e-12)
            assert a.delay_s == b.delay_s
            assert a.aod_azimuth == b.aod_azimuth
            assert a.bounces == b.bounces


def test_ray_csv_rejects_missing_columns(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("tx_index,rx_index\n0,1\n")
    with pytest.raises(ValueError, match="missing columns"):
        load_rays_csv(path)
