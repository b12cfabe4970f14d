import math

import numpy as np
import pytest
from scipy.constants import c as C0

from canyonwave.phy import (
    ArrayGeometry,
    CodebookBudgetError,
    build_beam_codebook,
    build_rvq_codebook,
    export_codebook_csv,
    steering_vector,
    synthesize_channel,
)
from canyonwave.raytracer import Ray, RaySet
from tests.conftest import synthetic_ray, synthetic_rayset

F28 = 28e9
LAM = C0 / F28


def geo(rows, cols):
    return ArrayGeometry.for_carrier(rows, cols, F28)


# -- steering vectors ---------------------------------------------------------


def test_steering_broadside_is_uniform():
    g = geo(3, 4)
    v = steering_vector(g, 0.0, math.pi / 2)
    assert np.allclose(v, np.full(12, 1.0 / math.sqrt(12)), atol=1e-12)


def test_steering_two_element_endfire():
    # 1x2 half-wavelength row array looking along the array axis:
    # phases [0, pi] -> (1/sqrt(2)) * [1, -1]
    g = geo(1, 2)
    v = steering_vector(g, math.pi / 2, math.pi / 2)
    assert np.allclose(v, np.array([1.0, -1.0]) / math.sqrt(2.0), atol=1e-12)


def test_steering_unit_norm():
    g = geo(4, 7)
    rng = np.random.default_rng(3)
    for _ in range(20):
        v = steering_vector(g, rng.uniform(-math.pi, math.pi), rng.uniform(0, math.pi))
        assert np.linalg.norm(v) == pytest.approx(1.0, abs=1e-12)


def test_steering_flattening_is_vertical_fastest():
    g = geo(2, 2)
    az, el = 0.7, 1.1
    v = steering_vector(g, az, el)
    k = 2.0 * math.pi / g.wavelength
    for p in range(2):
        for q in range(2):
            expected = np.exp(
                1j * k * (g.d_h * p * math.sin(az) * math.sin(el) + g.d_v * q * math.cos(el))
            ) / 2.0
            assert v[p * 2 + q] == pytest.approx(expected, abs=1e-12)


def test_steering_rejects_bad_elevation():
    with pytest.raises(ValueError):
        steering_vector(geo(2, 2), 0.0, -0.1)


# -- channel synthesis ---------------------------------------------------------


def test_empty_rayset_gives_zero_channel():
    h = synthesize_channel(RaySet(rays=()), geo(2, 4), geo(2, 2), F28)
    assert h.entries.shape == (4, 8)
    assert np.all(h.entries == 0.0)


def test_single_ray_rank_one():
    rng = np.random.default_rng(0)
    ray = synthetic_ray(rng, power_w=1.0, delay_s=0.0, phase=0.0)
    h = synthesize_channel(RaySet(rays=(ray,)), geo(2, 4), geo(2, 2), F28).entries
    assert np.linalg.norm(h) == pytest.approx(1.0, abs=1e-12)
    a_t = steering_vector(geo(2, 4), ray.aod_azimuth, ray.aod_elevation)
    a_r = steering_vector(geo(2, 2), ray.aoa_azimuth, ray.aoa_elevation)
    assert np.allclose(h, np.outer(a_r, a_t.conj()), atol=1e-12)
    # rank one: the only nonzero singular value is 1
    s = np.linalg.svd(h, compute_uv=False)
    assert s[0] == pytest.approx(1.0, abs=1e-12)
    assert np.all(s[1:] < 1e-12)


def test_opposite_phase_rays_cancel():
    rng = np.random.default_rng(1)
    base = synthetic_ray(rng, power_w=2.0, delay_s=0.0, phase=0.0)
    flipped = Ray(
        power_w=base.power_w, phase_rad=math.pi, delay_s=0.0,
        aod_azimuth=base.aod_azimuth, aod_elevation=base.aod_elevation,
        aoa_azimuth=base.aoa_azimuth, aoa_elevation=base.aoa_elevation, bounces=0,
    )
    h = synthesize_channel(RaySet(rays=(base, flipped)), geo(2, 2), geo(2, 2), F28).entries
    assert np.allclose(h, 0.0, atol=1e-12)


def test_synthesis_is_linear_in_rays():
    rng = np.random.default_rng(2)
    rs = synthetic_rayset(rng, 3)
    whole = synthesize_channel(rs, geo(2, 4), geo(2, 2), F28).entries
    parts = sum(
        synthesize_channel(RaySet(rays=(r,)), geo(2, 4), geo(2, 2), F28).entries
        for r in rs.rays
    )
    assert np.allclose(whole, parts, atol=1e-15)


def test_carrier_phase_term_matters():
    rng = np.random.default_rng(3)
    ray = synthetic_ray(rng, power_w=1.0, delay_s=0.0, phase=0.25)
    shifted = Ray(
        power_w=1.0, phase_rad=0.25, delay_s=0.5 / F28,  # adds pi to the total phase
        aod_azimuth=ray.aod_azimuth, aod_elevation=ray.aod_elevation,
        aoa_azimuth=ray.aoa_azimuth, aoa_elevation=ray.aoa_elevation, bounces=0,
    )
    h0 = synthesize_channel(RaySet(rays=(ray,)), geo(1, 2), geo(1, 2), F28).entries
    h1 = synthesize_channel(RaySet(rays=(shifted,)), geo(1, 2), geo(1, 2), F28).entries
    assert np.allclose(h1, -h0, atol=1e-9)


# -- beam codebooks -------------------------------------------------------------


def test_degenerate_array_codebook_sizes():
    g = geo(1, 1)
    for rho in (1, 2, 4):
        cb = build_beam_codebook(g, rho)
        assert len(cb) == rho * rho
        assert np.allclose(np.abs(cb.vectors), 1.0, atol=1e-12)


def test_codebook_2x2_hand_values():
    # grids: sin(az) in {0, 1}, cos(el) in {0, 1}; working the azimuth and
    # elevation beam formulas through by hand gives these four codewords
    # (the sin(el)=0 row collapses the azimuth slope, duplicating one beam).
    cb = build_beam_codebook(geo(2, 2), 1)
    expected = 0.5 * np.array(
        [
            [1, 1, 1, 1],    # (k=0, l=0)
            [1, -1, 1, -1],  # (k=0, l=1)
            [1, 1, -1, -1],  # (k=1, l=0)
            [1, -1, 1, -1],  # (k=1, l=1) == (0, 1): sin(el)=0 degeneracy
        ],
        dtype=complex,
    ).T
    assert np.allclose(cb.vectors, expected, atol=1e-12)
    # per-axis DFT structure: orthogonal pairs along each axis
    assert abs(np.vdot(cb.vectors[:, 0], cb.vectors[:, 1])) < 1e-12
    assert abs(np.vdot(cb.vectors[:, 0], cb.vectors[:, 2])) < 1e-12


def test_codebook_size_and_unit_norm():
    g = geo(2, 4)
    for rho in (1, 2):
        cb = build_beam_codebook(g, rho)
        assert len(cb) == (rho * 4) * (rho * 2)
        assert np.allclose(np.linalg.norm(cb.vectors, axis=0), 1.0, atol=1e-12)


def test_oversampling_multiplies_azimuth_grid():
    # 128-wide row array: a 4x oversampled azimuth grid has 512 entries
    g = geo(1, 128)
    cb = build_beam_codebook(g, 4)
    assert len(cb.azimuth_sines) == 512
    assert len(cb.elevation_cosines) == 4


def test_kronecker_matches_direct_evaluation():
    g = geo(3, 4)
    cb = build_beam_codebook(g, 2)
    k = 2.0 * math.pi / g.wavelength
    n_el = len(cb.elevation_cosines)
    for idx in (0, 5, 17, len(cb) - 1):
        ka, le = divmod(idx, n_el)
        u = cb.azimuth_sines[ka]
        v = cb.elevation_cosines[le]
        sin_el = math.sqrt(max(0.0, 1.0 - v * v))
        direct = np.empty(g.size, dtype=complex)
        for p in range(g.cols):
            for q in range(g.rows):
                direct[p * g.rows + q] = np.exp(
                    -1j * k * (g.d_h * p * u * sin_el + g.d_v * q * v)
                ) / math.sqrt(g.size)
        assert np.allclose(cb.vector(idx), direct, atol=1e-12)


def test_coarse_grids_nest_in_fine_grids():
    g = geo(2, 4)
    coarse = build_beam_codebook(g, 1)
    for rho in (2, 4):
        fine = build_beam_codebook(g, rho)
        fine_set = {tuple(np.round(fine.vector(i), 10)) for i in range(len(fine))}
        for i in range(len(coarse)):
            assert tuple(np.round(coarse.vector(i), 10)) in fine_set


def test_fine_grid_recovers_single_ray_gain():
    from canyonwave.beamforming import beam_search

    rng = np.random.default_rng(7)
    g_t, g_r = geo(4, 4), geo(2, 2)
    for seed in range(5):
        ray = synthetic_ray(np.random.default_rng(seed), power_w=4.0, delay_s=0.0, phase=0.0)
        h = synthesize_channel(RaySet(rays=(ray,)), g_t, g_r, F28)
        prev = 0.0
        for rho in (1, 2, 4, 8):
            sel = beam_search(h, build_beam_codebook(g_t, rho), build_beam_codebook(g_r, rho))
            assert sel.gain >= prev - 1e-15  # nested grids never lose gain
            prev = sel.gain
        assert prev >= 0.9 * 2.0  # approaches sqrt(power) from below


# -- RVQ codebooks ---------------------------------------------------------------


def test_rvq_dimension_one_unit_modulus():
    cb = build_rvq_codebook(1, 1, seed=9)
    assert len(cb) == 2
    assert np.allclose(np.abs(cb.vectors), 1.0, atol=1e-12)


def test_rvq_reproducible_from_seed():
    a = build_rvq_codebook(4, 6, seed=11)
    b = build_rvq_codebook(4, 6, seed=11)
    assert np.array_equal(a.vectors, b.vectors)
    c = build_rvq_codebook(4, 6, seed=12)
    assert not np.array_equal(a.vectors, c.vectors)


def test_rvq_256_words_unit_norm_and_distinct():
    cb = build_rvq_codebook(4, 8, seed=5)
    assert len(cb) == 256
    assert np.allclose(np.linalg.norm(cb.vectors, axis=0), 1.0, atol=1e-12)
    gram = np.abs(cb.vectors.conj().T @ cb.vectors)
    np.fill_diagonal(gram, 0.0)
    assert gram.max() < 1.0 - 1e-6


def test_rvq_vector_i_independent_of_others():
    # counter-based keying: column i regenerates alone, bit for bit
    cb = build_rvq_codebook(3, 4, seed=21)
    for i in (0, 7, 15):
        rng = np.random.Generator(np.random.Philox(key=np.array([21, i], dtype=np.uint64)))
        z = rng.standard_normal(3) + 1j * rng.standard_normal(3)
        assert np.array_equal(cb.vector(i), z / np.linalg.norm(z))


def test_rvq_budget_guard(monkeypatch):
    with pytest.raises(CodebookBudgetError):
        build_rvq_codebook(4, 21, seed=0)
    monkeypatch.setenv("CANYONWAVE_MAX_CODEBOOK_BITS", "4")
    with pytest.raises(CodebookBudgetError):
        build_rvq_codebook(4, 5, seed=0)
    assert len(build_rvq_codebook(4, 4, seed=0)) == 16


def test_codebook_csv_export(tmp_path):
    cb = build_beam_codebook(geo(1, 2), 1)
    path = tmp_path / "cb.csv"
    export_codebook_csv(cb, path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "index,re0,im0,re1,im1"
    assert len(lines) == 1 + len(cb)
