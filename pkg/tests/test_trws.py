import math

import numpy as np
import pytest

from conftest import random_instance
from oracles import chain_optimum, grid_optimum, pair_table
from fullflow import kernels
from fullflow.costvolume import CostVolume, EdgeWeights, MemoryBudgetError
from fullflow.model import FlowField, LabelSpace, Penalty, SolverConfig
from fullflow.trws import TRWSSolver, energy, message_bytes, solve

PENALTIES = ["l1", "l2", "charbonnier"]


def cfg_for(radius, penalty="l1", tau=math.inf, lam=1.0, eps=1.0):
    return SolverConfig(radius=radius, penalty=Penalty(penalty, eps), tau=tau, lam=lam, scale=1)


def labelling_energy(labels, cost, weights, cfg):
    return energy(FlowField.from_labels(labels, cost.labels, cost.height, cost.width), cost, weights, cfg)


# ------------------------------------------------------------ single messages

def test_zero_lambda_message_is_zero():
    rng = np.random.default_rng(0)
    cost, w = random_instance(rng, 2, 3, 1)
    s = TRWSSolver(cost, w, cfg_for(1, lam=0.0))
    for p, q in [(0, 1), (1, 4), (5, 4)]:
        assert np.all(s.update_message(p, q) == 0)


def test_single_label_message():
    labels = LabelSpace(0)
    cost = CostVolume(2, 1, labels, np.array([[0.75], [0.5]], np.float32))
    s = TRWSSolver(cost, EdgeWeights(np.ones((1, 1)), np.zeros((0, 2))), cfg_for(0))
    before = s.normalization_offset
    assert np.array_equal(s.update_message(0, 1), [0.0])
    assert s.normalization_offset - before == pytest.approx(0.5 * 0.75)


@pytest.mark.parametrize("penalty", PENALTIES)
@pytest.mark.parametrize("tau", [0.8, math.inf])
def test_update_message_by_enumeration(penalty, tau):
    rng = np.random.default_rng(1)
    cost, w = random_instance(rng, 1, 2, 1, unary_scale=3.0)
    cfg = cfg_for(1, penalty, tau, lam=0.7)
    s = TRWSSolver(cost, w, cfg, message_dtype=np.float64)
    s.msgs[1, 0] = rng.uniform(0, 1, 9)  # existing message into p=0 from its right neighbour
    theta_hat = cost.values[0].astype(float) + s.msgs[:, 0].sum(axis=0)
    P = pair_table(cost.labels, cfg.penalty, tau)
    wt = 0.7 * w.horizontal[0, 0]
    expect = np.array([min(0.5 * theta_hat[a] - s.msgs[1, 0, a] + wt * P[a, b] for a in range(9))
                       for b in range(9)])
    expect -= expect.min()
    assert np.allclose(s.update_message(0, 1), expect, atol=1e-12)
    assert np.allclose(s.message(0, 1), expect, atol=1e-12)


def test_non_neighbours_rejected():
    cost, w = random_instance(np.random.default_rng(2), 3, 3, 0)
    s = TRWSSolver(cost, w, cfg_for(0))
    with pytest.raises(ValueError):
        s.update_message(0, 4)


# ------------------------------------------------------------ iterations and bounds

def test_initial_bound():
    cost, w = random_instance(np.random.default_rng(3), 3, 4, 1)
    s = TRWSSolver(cost, w, cfg_for(1))
    assert s.lower_bound == pytest.approx(cost.values.astype(float).min(axis=1).sum())


@pytest.mark.parametrize("penalty", PENALTIES)
def test_single_label_bound(penalty):
    rng = np.random.default_rng(4)
    cost, w = random_instance(rng, 3, 4, 0)
    cfg = cfg_for(0, penalty, lam=1.3, eps=2.0)
    s = TRWSSolver(cost, w, cfg, message_dtype=np.float64)
    rho_s0 = 2 * cfg.penalty(0)
    expect = cost.values.astype(float).sum() + 1.3 * rho_s0 * (w.horizontal.sum() + w.vertical.sum())
    for _ in range(3):
        assert s.run_iteration() == pytest.approx(expect, rel=1e-12)


@pytest.mark.parametrize("seed", range(40))
def test_monotone_bound_and_weak_duality(seed):
    rng = np.random.default_rng(seed)
    h, w_ = rng.integers(1, 7, 2)
    radius = int(rng.integers(0, 3))
    penalty = PENALTIES[seed % 3]
    tau = [math.inf, float(rng.uniform(0.5, 3))][seed % 2]
    cost, w = random_instance(rng, int(h), int(w_), radius, unary_scale=2.0)
    cfg = cfg_for(radius, penalty, tau, lam=float(rng.uniform(0.2, 2)), eps=float(rng.uniform(0.5, 3)))
    s = TRWSSolver(cost, w, cfg, message_dtype=np.float64)
    prev = s.lower_bound
    for _ in range(6):
        lb = s.run_iteration()
        assert lb >= prev - 1e-7
        assert lb <= energy(s.decode(), cost, w, cfg) + 1e-7
        prev = lb


@pytest.mark.parametrize("seed", range(6))
def test_three_by_three_sandwich(seed):
    rng = np.random.default_rng(100 + seed)
    cost, w = random_instance(rng, 3, 3, 1)
    cfg = cfg_for(1)
    s = TRWSSolver(cost, w, cfg, message_dtype=np.float64)
    s.run(10)
    opt = grid_optimum(cost, w, cfg)
    assert s.lower_bound <= opt + 1e-9
    assert energy(s.decode(), cost, w, cfg) >= opt - 1e-9


@pytest.mark.parametrize("k", [1, 2, 4, 6])
@pytest.mark.parametrize("penalty", PENALTIES)
@pytest.mark.parametrize("tau", [1.5, math.inf])
def test_chain_exactness(k, penalty, tau):
    rng = np.random.default_rng(k)
    cost, w = random_instance(rng, 1, k, 1)
    cfg = cfg_for(1, penalty, tau)
    s = TRWSSolver(cost, w, cfg, message_dtype=np.float64)
    s.run(20)
    opt = chain_optimum(cost, w, cfg)
    assert s.lower_bound == pytest.approx(opt, abs=1e-6)
    assert energy(s.decode(), cost, w, cfg) == pytest.approx(opt, abs=1e-6)


def test_column_chain_exactness():
    rng = np.random.default_rng(9)
    cost, w = random_instance(rng, 5, 1, 1)
    cfg = cfg_for(1, "l2", 2.0)
    s = TRWSSolver(cost, w, cfg, message_dtype=np.float64)
    s.run(20)
    # transpose to a row chain for the oracle
    t = CostVolume(5, 1, cost.labels, cost.values)
    tw = EdgeWeights(w.vertical.T.copy(), np.zeros((0, 5)))
    assert s.lower_bound == pytest.approx(chain_optimum(t, tw, cfg), abs=1e-6)


def test_one_pixel_image():
    cost = CostVolume(1, 1, LabelSpace(1), np.arange(9, dtype=np.float32)[None, ::-1].copy())
    s = TRWSSolver(cost, EdgeWeights(np.zeros((1, 0)), np.zeros((0, 1))), cfg_for(1))
    assert s.run_iteration() == 0.0
    assert s.decode_labels()[0] == 8


def test_messages_normalised():
    cost, w = random_instance(np.random.default_rng(10), 4, 5, 2)
    s = TRWSSolver(cost, w, cfg_for(2, "charbonnier", 2.0))
    s.run(2)
    h, wd = 4, 5
    present = [np.ones((h, wd), bool) for _ in range(4)]
    present[0][:, 0] = False
    present[1][:, -1] = False
    present[2][0, :] = False
    present[3][-1, :] = False
    for d in range(4):
        mins = s.msgs[d].min(axis=1).reshape(h, wd)
        assert np.all(mins[present[d]] == 0)
        assert np.all(s.msgs[d].reshape(h, wd, -1)[~present[d]] == 0)


@pytest.mark.parametrize("penalty", PENALTIES)
def test_reparameterisation_identity(penalty):
    rng = np.random.default_rng(11)
    cost, w = random_instance(rng, 3, 3, 1)
    cfg = cfg_for(1, penalty, 1.7, lam=0.8)
    s = TRWSSolver(cost, w, cfg, message_dtype=np.float64)
    s.run(2)
    un, edges = s.reparameterized()
    base = cfg.lam * pair_table(cost.labels, cfg.penalty, cfg.tau)
    for _ in range(20):
        lab = rng.integers(0, 9, 9)
        tilde = un[np.arange(9), lab].sum() + sum(e[lab[p], lab[q]] for (p, q), e in edges.items())
        assert tilde == pytest.approx(labelling_energy(lab, cost, w, cfg), abs=1e-9)
        # the edge tables are the original pairwise terms minus the two messages
        (p, q), e = next(iter(edges.items()))
        assert e[0, 0] == pytest.approx(w.horizontal[0, 0] * base[0, 0] - s.msgs[1, 0, 0] - s.msgs[0, 1, 0])


# ------------------------------------------------------------ decoding

def test_decode_without_smoothness_is_pointwise_argmin():
    cost, w = random_instance(np.random.default_rng(12), 4, 4, 2)
    s = TRWSSolver(cost, w, cfg_for(2, lam=0.0))
    s.run(1)
    assert np.array_equal(s.decode_labels(), np.argmin(cost.values, axis=1))


def test_decode_uniform_unaries_is_constant():
    labels = LabelSpace(2)
    cost = CostVolume(5, 4, labels, np.full((20, 25), 0.5, np.float32))
    w = EdgeWeights(np.ones((4, 4)), np.ones((3, 5)))
    s = TRWSSolver(cost, w, cfg_for(2))
    s.run(2)
    assert np.all(s.decode_labels() == 0)


@pytest.mark.parametrize("seed", range(5))
def test_decode_is_locally_greedy(seed):
    rng = np.random.default_rng(200 + seed)
    cost, w = random_instance(rng, 2, 2, 1)
    cfg = cfg_for(1, "l1", 1.2)
    s = TRWSSolver(cost, w, cfg, message_dtype=np.float64)
    s.run(3)
    lab = s.decode_labels()
    P = pair_table(cost.labels, cfg.penalty, cfg.tau)
    # raster order 0,1,2,3: each choice minimises unary + pairwise to fixed
    # predecessors + messages from not-yet-fixed successors
    for p in range(4):
        y, x = divmod(p, 2)
        score = cost.values[p].astype(float).copy()
        if x == 1:
            score += w.horizontal[y, 0] * P[lab[p - 1]]
        else:
            score += s.msgs[1, p]
        if y == 1:
            score += w.vertical[0, x] * P[lab[p - 2]]
        else:
            score += s.msgs[3, p]
        assert score[lab[p]] <= score.min() + 1e-12
        assert lab[p] == int(np.argmin(score))


# ------------------------------------------------------------ energy

def test_energy_examples():
    labels = LabelSpace(1)
    zero = CostVolume(3, 2, labels, np.zeros((6, 9), np.float32))
    w = EdgeWeights(np.full((2, 2), 0.5), np.full((1, 3), 0.25))
    for pen in ("l1", "l2"):
        assert energy(FlowField.constant(2, 3, 0, 0), zero, w, cfg_for(1, pen)) == 0.0
        assert energy(FlowField.constant(2, 3, 1, -1), zero, w, cfg_for(1, pen)) == 0.0
    # Charbonnier is not re-centred: every edge pays lam * 2 * eps even for equal labels
    ch = cfg_for(1, "charbonnier", eps=2.0, lam=2.0)
    assert energy(FlowField.constant(2, 3, 1, 1), zero, w, ch) == pytest.approx(2.0 * 4.0 * (4 * 0.5 + 3 * 0.25))


def test_energy_matches_direct_sum():
    rng = np.random.default_rng(13)
    cost, w = random_instance(rng, 2, 2, 1)
    cfg = cfg_for(1, "l2", 3.0, lam=0.9)
    lab = rng.integers(0, 9, 4)
    dx, dy = cost.labels.offsets()
    u, v = dx[lab].reshape(2, 2), dy[lab].reshape(2, 2)
    total = sum(float(cost.values[p, lab[p]]) for p in range(4))
    for (a, b, wt) in [((0, 0), (0, 1), w.horizontal[0, 0]), ((1, 0), (1, 1), w.horizontal[1, 0]),
                       ((0, 0), (1, 0), w.vertical[0, 0]), ((0, 1), (1, 1), w.vertical[0, 1])]:
        du, dv = u[a] - u[b], v[a] - v[b]
        total += 0.9 * wt * min(du * du + dv * dv, 3.0)
    assert labelling_energy(lab, cost, w, cfg) == pytest.approx(total)


# ------------------------------------------------------------ parallel and backends

def test_thread_count_does_not_change_results():
    cost, w = random_instance(np.random.default_rng(14), 12, 17, 3)
    cfg = cfg_for(3, "l1", 2.0)
    ref = None
    for t in sorted({1, 2, 3, kernels.max_threads()}):
        s = TRWSSolver(cost, w, cfg, message_dtype=np.float64)
        s.run(2, threads=t)
        out = (s.msgs.copy(), s.lower_bound, s.decode_labels())
        if ref is None:
            ref = out
        assert np.array_equal(out[0], ref[0])
        assert out[1] == ref[1]
        assert np.array_equal(out[2], ref[2])


@pytest.mark.parametrize("penalty", PENALTIES)
def test_backends_agree(penalty):
    if len(kernels.available()) < 2:
        pytest.skip("only one backend available")
    cost, w = random_instance(np.random.default_rng(15), 5, 6, 2)
    cfg = cfg_for(2, penalty, 1.5)
    runs = {}
    for name in kernels.available():
        s = TRWSSolver(cost, w, cfg, message_dtype=np.float64, backend=name)
        s.run(2)
        runs[name] = s
    a, b = runs["cython"], runs["numpy"]
    assert np.max(np.abs(a.msgs - b.msgs)) <= 1e-9
    assert a.lower_bound == pytest.approx(b.lower_bound, abs=1e-9)
    assert np.array_equal(a.decode_labels(), b.decode_labels())


def test_float32_messages_track_float64():
    cost, w = random_instance(np.random.default_rng(16), 6, 6, 2)
    cfg = cfg_for(2)
    a = TRWSSolver(cost, w, cfg, message_dtype=np.float32)
    b = TRWSSolver(cost, w, cfg, message_dtype=np.float64)
    a.run(3)
    b.run(3)
    assert a.lower_bound == pytest.approx(b.lower_bound, rel=1e-5)


def test_message_memory_cap():
    cost, w = random_instance(np.random.default_rng(17), 4, 4, 1)
    assert message_bytes(4, 4, 9) == 4 * 16 * 9 * 4
    with pytest.raises(MemoryBudgetError):
        TRWSSolver(cost, w, cfg_for(1).with_(memory_cap_gb=1e-9))


def test_solve_and_progress_hook():
    cost, w = random_instance(np.random.default_rng(18), 3, 3, 1)
    seen = []
    flow, s = solve(cost, w, cfg_for(1).with_(iterations=4), lambda it, lb, dt: seen.append((it, lb, dt)))
    assert [x[0] for x in seen] == [1, 2, 3, 4]
    assert all(dt >= 0 for _, _, dt in seen)
    assert seen[-1][1] == s.lower_bound
    assert flow.shape == (3, 3)
    assert [r.iteration for r in s.history] == [1, 2, 3, 4]
