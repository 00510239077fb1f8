import math

import numpy as np
import pytest

from fullflow.costvolume import (MemoryBudgetError, build_cost_volume, build_edge_weights,
                                 cost_row, cost_volume_bytes, hs_cost, ncc_cost)
from fullflow.model import Image, SolverConfig


def _rand_img(rng, h, w):
    return Image(rng.uniform(size=(h, w, 3)))


def test_ncc_self_match_is_zero():
    I = _rand_img(np.random.default_rng(0), 5, 5)
    assert ncc_cost(I, I, (2, 2), (0, 0)) == pytest.approx(0.0, abs=1e-12)


def test_ncc_anticorrelated_patch_costs_one():
    rng = np.random.default_rng(1)
    a = rng.uniform(size=(3, 3, 3))
    b = 2 * a.mean(axis=(0, 1)) - a  # zero-mean negation around the same mean
    assert ncc_cost(Image(a), Image(np.clip(b, -10, 10)), (1, 1), (0, 0)) == pytest.approx(1.0)


def test_ncc_outside_uses_zeta():
    I = _rand_img(np.random.default_rng(2), 4, 4)
    assert ncc_cost(I, I, (3, 0), (1, 0), zeta=0.8) == 0.8
    assert ncc_cost(I, I, (0, 0), (0, -1), zeta=0.8) == 0.8


def test_hs_examples():
    white = Image(np.ones((1, 2, 3)))
    mixed = Image(np.array([[[1, 1, 1], [0, 0, 0]]], float))
    assert hs_cost(white, white, (0, 0), (1, 0)) == 0.0
    assert hs_cost(white, mixed, (0, 0), (1, 0)) == pytest.approx(3.0)
    assert hs_cost(white, mixed, (1, 0), (1, 0), zeta=0.8) == 0.8


@pytest.mark.parametrize("gain,offset", [(2.0, 0.1), (0.3, -0.2), (1.7, 0.5)])
def test_ncc_gain_offset_invariance(gain, offset):
    rng = np.random.default_rng(3)
    I1 = _rand_img(rng, 6, 6)
    I2 = _rand_img(rng, 6, 6)
    I2b = Image(gain * I2.pixels + offset)
    for p in [(2, 2), (0, 0), (5, 3)]:
        for s in [(0, 0), (1, -1), (-2, 1)]:
            assert ncc_cost(I1, I2, p, s) == pytest.approx(ncc_cost(I1, I2b, p, s), abs=1e-6)


def test_single_pixel_zero_variance():
    I = Image(np.full((1, 1, 3), 0.4))
    cv = build_cost_volume(I, I, SolverConfig(radius=0, scale=1))
    assert cv.values.shape == (1, 1)
    assert cv.values[0, 0] == 1.0


def test_identical_images_self_match():
    rng = np.random.default_rng(4)
    I = _rand_img(rng, 4, 4)
    cv = build_cost_volume(I, I, SolverConfig(radius=1, scale=1))
    for y in range(1, 3):
        for x in range(1, 3):
            assert cv.at(x, y, 0, 0) == pytest.approx(0.0, abs=1e-6)


@pytest.mark.parametrize("term", ["ncc", "hs"])
def test_cost_volume_matches_scalar_oracle(term):
    rng = np.random.default_rng(5)
    I1, I2 = _rand_img(rng, 8, 8), _rand_img(rng, 8, 8)
    cfg = SolverConfig(radius=2, scale=1, data_term=term, zeta=0.7)
    cv = build_cost_volume(I1, I2, cfg)
    assert cv.values.dtype == np.float32
    for y in range(8):
        for x in range(8):
            for k in range(cfg.labels.size):
                s = cfg.labels.unindex(k)
                ref = ncc_cost(I1, I2, (x, y), s, 1, 0.7) if term == "ncc" else hs_cost(I1, I2, (x, y), s, 0.7)
                assert cv.values[y * 8 + x, k] == pytest.approx(ref, abs=1e-6)


def test_ncc_range_and_buffer_count():
    rng = np.random.default_rng(6)
    I1, I2 = _rand_img(rng, 7, 9), _rand_img(rng, 7, 9)
    cfg = SolverConfig(radius=3, scale=1, zeta=0.625)  # 0.625 is exact in float32
    cv = build_cost_volume(I1, I2, cfg)
    assert np.all(cv.values >= 0) and np.all(cv.values <= 1)
    dx, dy = cfg.labels.offsets()
    for y in range(7):
        for x in range(9):
            outside = ~((x + dx >= 0) & (x + dx < 9) & (y + dy >= 0) & (y + dy < 7))
            row = cv.values[y * 9 + x]
            assert np.all(row[outside] == np.float32(0.625))


def test_thread_count_bit_identical():
    rng = np.random.default_rng(7)
    I1, I2 = _rand_img(rng, 12, 10), _rand_img(rng, 12, 10)
    a = build_cost_volume(I1, I2, SolverConfig(radius=3, scale=1, threads=1))
    b = build_cost_volume(I1, I2, SolverConfig(radius=3, scale=1, threads=3))
    assert np.array_equal(a.values, b.values)


def test_memory_cap_reports_bytes():
    I = _rand_img(np.random.default_rng(8), 10, 10)
    cfg = SolverConfig(radius=8, scale=1, memory_cap_gb=1e-6)
    need = cost_volume_bytes(10, 10, cfg.labels)
    assert need == 10 * 10 * 289 * 4
    with pytest.raises(MemoryBudgetError, match=str(need)):
        build_cost_volume(I, I, cfg)


def test_size_mismatch_rejected():
    rng = np.random.default_rng(9)
    with pytest.raises(ValueError):
        build_cost_volume(_rand_img(rng, 4, 4), _rand_img(rng, 4, 5), SolverConfig(radius=1))


def test_edge_weight_examples():
    ew = build_edge_weights(Image(np.full((3, 4, 3), 0.2)), 0.1)
    assert ew.horizontal.shape == (3, 3) and ew.vertical.shape == (2, 4)
    assert np.all(ew.horizontal == 1.0) and np.all(ew.vertical == 1.0)

    d = 0.1 / math.sqrt(3)
    px = np.zeros((1, 2, 3))
    px[0, 1] = d
    assert build_edge_weights(Image(px), 0.1).horizontal[0, 0] == pytest.approx(math.exp(-1))

    two = np.zeros((2, 2, 3))
    two[:, 1] = 1.0
    ew = build_edge_weights(Image(two), 0.5)
    assert ew.horizontal[0, 0] == pytest.approx(math.exp(-2 * math.sqrt(3)))
    assert np.all(ew.vertical == 1.0)


def test_edge_weights_in_unit_interval():
    ew = build_edge_weights(_rand_img(np.random.default_rng(10), 6, 6), 0.05)
    for a in (ew.horizontal, ew.vertical):
        assert np.all(a > 0) and np.all(a <= 1)
    with pytest.raises(ValueError):
        build_edge_weights(_rand_img(np.random.default_rng(10), 2, 2), 0)


@pytest.mark.parametrize("term", ["ncc", "hs"])
def test_cost_row_matches_volume(term):
    rng = np.random.default_rng(11)
    I1, I2 = _rand_img(rng, 7, 8), _rand_img(rng, 7, 8)
    cfg = SolverConfig(radius=3, scale=1, data_term=term, zeta=0.6)
    cv = build_cost_volume(I1, I2, cfg)
    for x, y in [(0, 0), (3, 4), (7, 6)]:
        assert np.allclose(cost_row(I1, I2, (x, y), cfg), cv.values[y * 8 + x], atol=1e-6)
    with pytest.raises(ValueError):
        cost_row(I1, I2, (8, 0), cfg)
