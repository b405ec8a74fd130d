import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from dmfsgd.model import ContractError, Coordinate, DistanceModel, LossKind, predict
from dmfsgd.optimizer import UpdateConfig, sgd_step
from dmfsgd.protocol import (Mode, NeighborSet, NodeState, decay_weights, on_contact,
                             select_probe_target)


def node(rank=3, mode=Mode.ACTIVE, seed=0, **kw):
    return NodeState.bootstrap(0, rank, np.random.default_rng(seed), mode=mode, **kw)


def test_decay_weights_examples():
    np.testing.assert_allclose(decay_weights([0, 10, 20]), [2 / 3, 1 / 3, 0])
    np.testing.assert_array_equal(decay_weights([7.0]), [1.0])
    np.testing.assert_array_equal(decay_weights([4, 4, 4, 4]), [0.25] * 4)


def test_decay_weights_empty():
    with pytest.raises(ContractError):
        decay_weights([])


@given(st.lists(st.floats(0, 1e5), min_size=1, max_size=40))
def test_decay_weights_are_a_distribution(ages):
    w = decay_weights(ages)
    assert np.all(w >= 0)
    assert w.sum() == pytest.approx(1.0, abs=1e-12)


def test_neighbor_set_refresh_and_capacity():
    s = NeighborSet(2, capacity=2)
    s.upsert(5, 1.0, 1.0, [1, 1], [1, 1], now=0)
    s.upsert(6, 2.0, 2.0, [1, 1], [1, 1], now=1)
    s.upsert(5, 3.0, 3.0, [2, 2], [2, 2], now=2)
    assert len(s) == 2
    rec = {r.node_id: r for r in s.records(now=2)}
    assert rec[5].d_ij == 3.0 and rec[5].age == 0 and rec[6].age == 1
    s.upsert(7, 4.0, 4.0, [1, 1], [1, 1], now=3)  # evicts the stalest record, node 6
    assert sorted(r.node_id for r in s.records(3)) == [5, 7]


def test_neighbor_set_expiry_and_growth():
    s = NeighborSet(1, window=10.0)
    for j in range(20):
        s.upsert(j, 1.0, 1.0, [1], [1], now=float(j))
    s.expire(now=19.0)
    assert sorted(r.node_id for r in s.records(19.0)) == list(range(9, 20))
    assert all(r.age <= 10.0 for r in s.records(19.0))


def test_probe_target_landmark():
    marks = np.arange(10, 42)
    st_ = node(mode=Mode.LANDMARK, candidates=marks)
    rng = np.random.default_rng(1)
    assert all(select_probe_target(st_, rng) in set(marks) for _ in range(500))


def test_probe_target_uniform_over_neighbors():
    nbrs = np.sort(np.random.default_rng(2).choice(np.arange(1, 200), 32, replace=False))
    st_ = node(candidates=nbrs)
    rng = np.random.default_rng(3)
    draws = [select_probe_target(st_, rng) for _ in range(10_000)]
    counts = np.array([draws.count(int(j)) for j in nbrs])
    assert counts.sum() == 10_000
    assert stats.chisquare(counts).pvalue > 0.01


def test_probe_target_forced_pair():
    st_ = NodeState.bootstrap(0, 2, np.random.default_rng(0), candidates=[1], k=1)
    rng = np.random.default_rng(0)
    assert {select_probe_target(st_, rng) for _ in range(50)} == {1}


def test_probe_target_errors():
    rng = np.random.default_rng(0)
    with pytest.raises(ContractError):
        select_probe_target(node(), rng)
    with pytest.raises(ContractError):
        select_probe_target(node(mode=Mode.PASSIVE), rng)
    with pytest.raises(ContractError):
        select_probe_target(node(candidates=[0]), rng)


def test_bootstrap_coordinates_in_unit_interval():
    s = node(rank=50)
    assert np.all((s.coord.x >= 0) & (s.coord.x < 1))
    assert np.all((s.coord.y >= 0) & (s.coord.y < 1))


@pytest.mark.parametrize("kind", list(LossKind))
def test_first_contact_is_line_searched_sgd(kind):
    c = UpdateConfig(loss=kind, rank=3, lam=1.0, nonneg=True)
    s = node()
    x0, y0 = s.coord.x.copy(), s.coord.y.copy()
    xj, yj = np.array([0.2, 0.9, 0.4]), np.array([0.7, 0.1, 0.5])
    rep = on_contact(s, 1, 6.0, 6.0, xj, yj, 0.0, c)
    eta_x, eta_y = (r.eta for r in rep.searches)
    assert eta_x > 0 and eta_y > 0
    want_x, _ = sgd_step(x0, y0, xj, yj, 6.0, 6.0, eta_x, c)
    _, want_y = sgd_step(x0, y0, xj, yj, 6.0, 6.0, eta_y, c)
    np.testing.assert_array_equal(s.coord.x, want_x)
    np.testing.assert_array_equal(s.coord.y, want_y)


def test_symmetric_inputs_move_both_rows_toward_fit():
    c = UpdateConfig(loss="l2", rank=3, lam=0.0)
    s = node()
    xj, yj = np.array([0.2, 0.9, 0.4]), np.array([0.7, 0.1, 0.5])
    before = (abs(9.0 - s.coord.x @ yj), abs(9.0 - xj @ s.coord.y))
    on_contact(s, 1, 9.0, 9.0, xj, yj, 0.0, c)
    after = (abs(9.0 - s.coord.x @ yj), abs(9.0 - xj @ s.coord.y))
    assert after[0] < before[0] and after[1] < before[1]


def oracle_contact(x, y, nbrs, ages, c):
    """Direct evaluation: age-decay weights, then line-searched minibatch rows, in loops."""
    amax = max(ages)
    tot = sum(amax - a for a in ages)
    w = [(amax - a) / tot if tot > 0 else 1 / len(ages) for a in ages]
    psi = (lambda v: v) if c.loss is LossKind.L2 else (lambda v: float(np.sign(v)))
    lossf = (lambda v: v * v) if c.loss is LossKind.L2 else abs

    def objective(own, side):
        total = c.lam * sum(v * v for v in own)
        for (d_ij, d_ji, xj, yj), wj in zip(nbrs, w):
            other, d = (yj, d_ij) if side == "x" else (xj, d_ji)
            total += wj * lossf(d - sum(a * b for a, b in zip(own, other)))
        return total

    def update(own, side, eta):
        out = []
        for a in range(len(own)):
            acc = 0.0
            for (d_ij, d_ji, xj, yj), wj in zip(nbrs, w):
                other, d = (yj, d_ij) if side == "x" else (xj, d_ji)
                acc += wj * psi(d - sum(p * q for p, q in zip(own, other))) * other[a]
            out.append(max(0.0, (1 - eta * c.lam) * own[a] + eta * acc))
        return out

    def search(own, side):
        l0 = objective(own, side)
        eta = c.eta_init
        for _ in range(c.max_line_search):
            cand = update(own, side, eta)
            if objective(cand, side) < l0 + c.slack(l0):
                return cand, eta
            eta /= 2
        return list(own), 0.0

    x_new, ex = search(list(x), "x")
    y_new, ey = search(list(y), "y")
    return np.array(x_new), np.array(y_new), ex, ey


@pytest.mark.parametrize("kind", list(LossKind))
def test_passive_update_matches_direct_oracle(kind):
    c = UpdateConfig(loss=kind, rank=3, lam=0.5, nonneg=True)
    s = node(mode=Mode.PASSIVE)
    rng = np.random.default_rng(9)
    peers = [(float(rng.uniform(1, 4)), float(rng.uniform(1, 4)), rng.random(3), rng.random(3))
             for _ in range(3)]
    times = [100.0, 160.0, 190.0]
    for (j, (d_ij, d_ji, xj, yj)), t in zip(enumerate(peers, start=1), times[:2]):
        on_contact(s, j, d_ij, d_ji, xj, yj, t, c)
    x0, y0 = s.coord.x.copy(), s.coord.y.copy()
    d_ij, d_ji, xj, yj = peers[2]
    rep = on_contact(s, 3, d_ij, d_ji, xj, yj, times[2], c)
    want_x, want_y, ex, ey = oracle_contact(x0, y0, peers, [90.0, 30.0, 0.0], c)
    assert [r.eta for r in rep.searches] == [ex, ey]
    np.testing.assert_allclose(s.coord.x, want_x, rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(s.coord.y, want_y, rtol=1e-12, atol=1e-14)


def test_passive_retention_window():
    c = UpdateConfig(loss="l2", rank=2)
    s = node(rank=2, mode=Mode.PASSIVE, window=100.0)
    rng = np.random.default_rng(4)
    for step in range(60):
        t = step * 7.0
        on_contact(s, int(rng.integers(1, 15)), 5.0, 5.0, rng.random(2), rng.random(2), t, c)
        assert all(r.age <= 100.0 for r in s.neighbors.records(t))


def test_active_neighbor_set_bounded_by_k():
    c = UpdateConfig(loss="l2", rank=2)
    s = node(rank=2, candidates=np.arange(1, 5), k=4)
    rng = np.random.default_rng(5)
    for step in range(40):
        on_contact(s, int(rng.integers(1, 5)), 5.0, 5.0, rng.random(2), rng.random(2), step, c)
        assert len(s.neighbors) <= 4


def test_rank_mismatch_drops_record():
    c = UpdateConfig(loss="l2", rank=2)
    s = node(rank=2)
    on_contact(s, 1, 5.0, 5.0, np.ones(2), np.ones(2), 0.0, c)
    assert 1 in s.neighbors
    x_before = s.coord.x.copy()
    rep = on_contact(s, 1, 5.0, 5.0, np.ones(3), np.ones(3), 1.0, c)
    assert rep.dropped and 1 not in s.neighbors
    np.testing.assert_array_equal(s.coord.x, x_before)


def test_rejects_bad_measurement():
    with pytest.raises(ContractError):
        on_contact(node(), 1, -1.0, 1.0, np.ones(3), np.ones(3), 0.0, UpdateConfig(rank=3))
    with pytest.raises(ContractError):
        on_contact(node(), 1, np.nan, 1.0, np.ones(3), np.ones(3), 0.0, UpdateConfig(rank=3))


def test_landmark_mode_follows_active_trajectory():
    c = UpdateConfig(rank=3)
    cands = np.array([1, 2, 3])
    a = node(mode=Mode.ACTIVE, candidates=cands, seed=7)
    b = node(mode=Mode.LANDMARK, candidates=cands, seed=7)
    ra, rb = np.random.default_rng(11), np.random.default_rng(11)
    peers = {j: (np.random.default_rng(j).random(3), np.random.default_rng(j + 50).random(3))
             for j in cands}
    for t in range(30):
        ja, jb = select_probe_target(a, ra), select_probe_target(b, rb)
        assert ja == jb
        on_contact(a, ja, 3.0 + ja, 3.0 + ja, *peers[ja], float(t), c)
        on_contact(b, jb, 3.0 + jb, 3.0 + jb, *peers[jb], float(t), c)
    np.testing.assert_array_equal(a.coord.x, b.coord.x)
    np.testing.assert_array_equal(a.coord.y, b.coord.y)


@pytest.mark.parametrize("model", [DistanceModel.SYMMETRIC, DistanceModel.HEIGHT_SYMMETRIC])
def test_symmetric_models_reduce_error(model):
    c = UpdateConfig(loss="l2", rank=3, lam=0.0, eta_init=0.5)
    height = model is DistanceModel.HEIGHT_SYMMETRIC
    s = node(height=height)
    peer = Coordinate(np.array([0.2, 0.9, 0.4]), np.array([0.7, 0.1, 0.5]), 0.3 if height else None)
    before = abs(20.0 - predict(model, s.coord, peer))
    for t in range(50):
        on_contact(s, 1, 20.0, 20.0, peer.x, peer.y, float(t), c, model, peer.height)
    assert abs(20.0 - predict(model, s.coord, peer)) < 0.1 * before
    if height:
        assert s.coord.height >= 0
