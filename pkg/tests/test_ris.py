import numpy as np
import pytest
from hypothesis import given, strategies as st

from ltmsim.config import ChannelConfig, RisConfig
from ltmsim.ris import (
    N_BEAMS, AdamState, RisCodebook, RisPowerMaps, beam_schedule, build_codebook, canonical, coverage_grid,
    element_groups, grad_phi, optimize_zone, panel_codebook, power_at, tile_gain_db,
)


def rand_c(rng, n):
    return rng.normal(size=n) + 1j * rng.normal(size=n)


def fd_grad(phi, h_br, h_ru, step=1e-6):
    out = np.zeros_like(phi)
    for i in range(len(phi)):
        e = np.zeros_like(phi)
        e[i] = step
        out[i] = (power_at(phi + e, h_br, h_ru) - power_at(phi - e, h_br, h_ru)) / (2 * step)
    return out


def test_power_examples():
    rng = np.random.default_rng(0)
    h_br, h_ru = np.exp(1j * rng.uniform(0, 6, 4)), np.exp(1j * rng.uniform(0, 6, 4))
    phi = -np.angle(h_br * h_ru)
    assert power_at(phi, h_br, h_ru) == pytest.approx(16.0)
    assert power_at(phi + 1.234, h_br, h_ru) == pytest.approx(16.0)
    assert power_at(phi, h_br, np.zeros(4)) == 0.0
    with pytest.raises(ValueError):
        power_at(phi, h_br, np.ones(3))


@given(st.sampled_from([2, 8, 64]), st.integers(0, 2**31 - 1))
def test_gradient_matches_finite_differences(n, seed):
    rng = np.random.default_rng(seed)
    phi, h_br, h_ru = rng.uniform(0, 2 * np.pi, n), rand_c(rng, n), rand_c(rng, n)
    g = grad_phi(phi, h_br, h_ru)
    ref = fd_grad(phi, h_br, h_ru)
    scale = np.max(np.abs(ref))
    assert np.max(np.abs(g - ref)) <= 1e-5 * scale


def test_gradient_vanishes_at_coherent_optimum_and_for_one_element():
    rng = np.random.default_rng(1)
    h_br, h_ru = rand_c(rng, 16), rand_c(rng, 16)
    phi = -np.angle(h_br * h_ru)
    assert np.max(np.abs(grad_phi(phi, h_br, h_ru))) < 1e-10
    assert grad_phi(np.array([0.7]), h_br[:1], h_ru[:1]) == pytest.approx([0.0], abs=1e-15)


@given(st.integers(0, 2**31 - 1), st.floats(-10, 10))
def test_global_phase_invariance(seed, c):
    rng = np.random.default_rng(seed)
    phi, h_br, h_ru = rng.uniform(0, 2 * np.pi, 8), rand_c(rng, 8), rand_c(rng, 8)
    assert power_at(phi + c, h_br, h_ru) == pytest.approx(power_at(phi, h_br, h_ru), rel=1e-12)
    assert np.allclose(grad_phi(phi + c, h_br, h_ru), grad_phi(phi, h_br, h_ru), atol=1e-9)


@given(st.lists(st.floats(-100, 100), min_size=1, max_size=20))
def test_canonical_wraps_into_range(values):
    out = canonical(np.array(values))
    assert np.all((out >= 0) & (out < 2 * np.pi))
    assert np.allclose(np.exp(1j * out), np.exp(1j * np.array(values)), atol=1e-9)


def test_adam_state_starts_at_zero():
    a = AdamState(5)
    assert a.step_count == 0 and not a.m.any() and not a.v.any()


@pytest.mark.parametrize("seed", range(5))
def test_single_point_reaches_coherent_bound(seed):
    rng = np.random.default_rng(seed)
    h_br = np.exp(1j * rng.uniform(0, 2 * np.pi, 64))
    h_ru = np.exp(1j * rng.uniform(0, 2 * np.pi, (1, 64)))
    res = optimize_zone(h_br, h_ru, rng=rng)
    bound = np.sum(np.abs(h_ru[0] * h_br)) ** 2
    assert 10 * np.log10(bound / res.final_min) < 0.5
    assert res.converged and res.iterations < 1000


def test_identical_grid_equals_single_point():
    rng = np.random.default_rng(3)
    h_br, h_ru = rand_c(rng, 32), rand_c(rng, 32)
    phi0 = rng.uniform(0, 2 * np.pi, 32)
    one = optimize_zone(h_br, h_ru[None, :], phi0=phi0)
    many = optimize_zone(h_br, np.tile(h_ru, (100, 1)), phi0=phi0)
    assert np.allclose(one.phi, many.phi)
    assert one.final_min == pytest.approx(many.final_min)


def test_max_min_improves_on_initialisation_and_flags_non_convergence():
    rng = np.random.default_rng(4)
    h_br, grid = rand_c(rng, 64), rand_c(rng, 64)[None, :] * np.exp(1j * rng.normal(size=(50, 64)))
    res = optimize_zone(h_br, grid, max_iters=50, rng=rng)
    assert res.final_min >= res.initial_min
    assert len(res.trace) == res.iterations
    assert not res.converged and res.warning
    power = np.abs((grid * h_br) @ np.exp(1j * res.phi)) ** 2
    assert power.min() == pytest.approx(res.final_min, rel=1e-9)


def test_optimize_zone_rejects_bad_input():
    with pytest.raises(ValueError):
        optimize_zone(np.ones(3), np.ones((0, 3)))
    with pytest.raises(ValueError):
        optimize_zone(np.ones(3), np.ones((2, 4)))
    with pytest.raises(ValueError):
        optimize_zone(np.ones(3), np.ones((2, 3)), eps=0.0)


def test_element_groups_partition():
    for n in (64, 1600, 12800):
        groups = element_groups(n)
        assert len(groups) == 16
        allidx = np.concatenate(groups)
        assert len(allidx) == n and len(np.unique(allidx)) == n
        assert {len(g) for g in groups} == {n // 16}


def test_beam_schedule():
    seq = RisCodebook(np.zeros((16, 16)), "sequential")
    sim = RisCodebook(np.zeros((16, 16)), "simultaneous", element_groups(16))
    hits = np.concatenate([beam_schedule(seq, f) for f in range(32)])
    assert np.bincount(hits, minlength=16).tolist() == [2] * 16
    assert beam_schedule(seq, 17).tolist() == [1]
    assert beam_schedule(sim, 5).tolist() == list(range(16))
    with pytest.raises(ValueError):
        beam_schedule(seq, -1)


def _small_ris(tmp_path, **kw):
    return RisConfig(n_elements=64, max_iters=200, cache_dir=str(tmp_path), **kw)


def test_codebook_structure_and_determinism(layout, tmp_path):
    panel = layout.cells[0].panels[0]
    ch = ChannelConfig()
    ris = _small_ris(tmp_path)
    a, hit_a = panel_codebook(panel, layout, ch, ris, "sequential", use_cache=False)
    b, _ = panel_codebook(panel, layout, ch, ris, "sequential", use_cache=False)
    assert not hit_a
    assert a.entries.shape == (N_BEAMS, 64)
    assert np.array_equal(a.entries, b.entries)
    assert np.all((a.entries >= 0) & (a.entries < 2 * np.pi))
    s, _ = panel_codebook(panel, layout, ch, ris, "simultaneous", use_cache=False)
    for k, g in enumerate(s.groups):
        others = np.setdiff1d(np.arange(64), g)
        assert not s.entries[k, others].any()
    assert np.array_equal(s.combined()[s.groups[3]], s.entries[3, s.groups[3]])


def test_codebook_cache_hits_and_invalidates(layout, tmp_path):
    panel = layout.cells[0].panels[1]
    ch = ChannelConfig()
    ris = _small_ris(tmp_path)
    first, hit1 = panel_codebook(panel, layout, ch, ris, "sequential")
    second, hit2 = panel_codebook(panel, layout, ch, ris, "sequential")
    assert (hit1, hit2) == (False, True)
    assert np.array_equal(first.entries, second.entries)
    _, hit3 = panel_codebook(panel, layout, ch, _small_ris(tmp_path, seed=9), "sequential")
    assert not hit3


def test_sequential_beats_simultaneous_on_small_panel(layout, tmp_path):
    panel = layout.cells[0].panels[0]
    ch = ChannelConfig()
    ris = _small_ris(tmp_path)
    seq, _ = panel_codebook(panel, layout, ch, ris, "sequential")
    sim, _ = panel_codebook(panel, layout, ch, ris, "simultaneous")
    _, _, p_seq = coverage_grid(panel, layout, ch, seq, step=2.0)
    _, _, p_sim = coverage_grid(panel, layout, ch, sim, step=2.0)
    assert np.mean(p_seq) > np.mean(p_sim)


def test_tile_gain():
    assert tile_gain_db(1) == 0.0
    assert tile_gain_db(8) == pytest.approx(20 * np.log10(8))
    with pytest.raises(ValueError):
        tile_gain_db(0)


def test_power_map_lookup_matches_direct_evaluation(layout, tmp_path):
    ch = ChannelConfig()
    ris = _small_ris(tmp_path)
    books = {p.slot: panel_codebook(p, layout, ch, ris, "sequential")[0] for p in layout.cells[0].panels}
    maps = RisPowerMaps(layout, ch, ris, books)
    panel = layout.cells[0].panels[0]
    # grid nodes coincide with map samples, so bilinear lookup is exact there
    uv = np.array([[10.0, 20.0], [0.5, 39.5]])
    pts, sub, rsrp = coverage_grid(panel, layout, ch, books[0], step=1.0, tile_size=ris.tile_size)
    local = panel.local(pts)
    for q in uv:
        k = int(np.argmin(np.hypot(*(local - q).T)))
        got = maps.lookup(np.array([0]), np.array([sub[k]]), local[k][None])[0]
        assert got == pytest.approx(rsrp[k], abs=1e-6)
