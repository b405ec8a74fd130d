"""Per-node DMFSGD state: neighbor bookkeeping, neighbor decay and the update
run when node i obtains a measurement to node j."""

from __future__ import annotations

import dataclasses
import enum
from dataclasses import dataclass, field

import numpy as np

from .model import ContractError, Coordinate, DistanceModel
from .optimizer import LineSearchResult, UpdateConfig, search_row

DEFAULT_K = 32
DEFAULT_WINDOW_S = 1800.0


class Mode(str, enum.Enum):
    ACTIVE = "active"
    PASSIVE = "passive"
    LANDMARK = "landmark"


@dataclass(frozen=True)
class NeighborRecord:
    node_id: int
    d_ij: float
    d_ji: float
    yj: np.ndarray
    xj: np.ndarray
    age: float


_FIELDS = ("ids", "d_ij", "d_ji", "xs", "ys", "hs", "stamps")


class NeighborSet:
    """Cache of the last measurement and coordinates received from each neighbor.

    Records live in parallel arrays so that a minibatch update can use them
    without restacking. ``capacity`` bounds the set in active mode (the oldest
    record is evicted on overflow); ``window`` is the retention time in
    seconds used in passive mode.
    """

    def __init__(self, rank: int, capacity: int | None = None, window: float | None = None):
        if capacity is not None and capacity < 1:
            raise ContractError(f"capacity must be >= 1, got {capacity}")
        self.rank = rank
        self.capacity = capacity
        self.window = window
        size = capacity if capacity is not None else 8
        self.ids = np.empty(size, dtype=np.int64)
        self.d_ij = np.empty(size)
        self.d_ji = np.empty(size)
        self.xs = np.empty((size, rank))
        self.ys = np.empty((size, rank))
        self.hs = np.zeros(size)
        self.stamps = np.empty(size)
        self._slot: dict[int, int] = {}
        self._n = 0

    def __len__(self):
        return self._n

    def __contains__(self, node_id):
        return node_id in self._slot

    def _grow(self):
        size = 2 * self.ids.size
        for name in _FIELDS:
            old = getattr(self, name)
            new = np.empty((size,) + old.shape[1:], dtype=old.dtype)
            new[: self._n] = old[: self._n]
            setattr(self, name, new)

    def _keep(self, mask: np.ndarray):
        n = self._n
        for name in _FIELDS:
            arr = getattr(self, name)
            kept = arr[:n][mask]
            arr[: kept.shape[0]] = kept
        self._n = int(mask.sum())
        self._slot = {int(j): s for s, j in enumerate(self.ids[: self._n])}

    def upsert(self, node_id: int, d_ij: float, d_ji: float, xj, yj, now: float,
               hj: float = 0.0) -> None:
        s = self._slot.get(node_id)
        if s is None:
            if self.capacity is not None and self._n >= self.capacity:
                self.drop(int(self.ids[int(np.argmin(self.stamps[: self._n]))]))
            if self._n == self.ids.size:
                self._grow()
            s = self._n
            self._n += 1
            self._slot[node_id] = s
            self.ids[s] = node_id
        self.d_ij[s] = d_ij
        self.d_ji[s] = d_ji
        self.xs[s] = xj
        self.ys[s] = yj
        self.hs[s] = hj
        self.stamps[s] = now

    def drop(self, node_id: int) -> None:
        if node_id not in self._slot:
            return
        mask = np.ones(self._n, dtype=bool)
        mask[self._slot[node_id]] = False
        self._keep(mask)

    def expire(self, now: float) -> None:
        """Forget every record older than the retention window."""
        if self.window is None or self._n == 0:
            return
        mask = self.ages(now) <= self.window
        if not mask.all():
            self._keep(mask)

    def ages(self, now: float) -> np.ndarray:
        return now - self.stamps[: self._n]

    def records(self, now: float) -> list[NeighborRecord]:
        ages = self.ages(now)
        return [
            NeighborRecord(int(self.ids[s]), float(self.d_ij[s]), float(self.d_ji[s]),
                           self.ys[s].copy(), self.xs[s].copy(), float(ages[s]))
            for s in range(self._n)
        ]

    def view(self):
        """(ids, d_ij, d_ji, xs, ys) restricted to the live records."""
        n = self._n
        return self.ids[:n], self.d_ij[:n], self.d_ji[:n], self.xs[:n], self.ys[:n]


def decay_weights(ages) -> np.ndarray:
    """Age-based neighbor weights: (a_max - a_j) / sum_k (a_max - a_k).

    The oldest record gets weight 0. When all ages are equal (including the
    single-record case) the formula is 0/0 and uniform weights are returned.
    """
    ages = np.asarray(ages, dtype=np.float64)
    if ages.size == 0:
        raise ContractError("decay weights need at least one record")
    slack = ages.max() - ages
    total = slack.sum()
    if total <= 0:
        return np.full(ages.size, 1.0 / ages.size)
    return slack / total


@dataclass
class NodeState:
    node_id: int
    coord: Coordinate
    neighbors: NeighborSet
    mode: Mode = Mode.ACTIVE
    candidates: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))

    @classmethod
    def bootstrap(cls, node_id: int, rank: int, rng: np.random.Generator, mode: Mode = Mode.ACTIVE,
                  candidates=(), k: int = DEFAULT_K, window: float = DEFAULT_WINDOW_S,
                  height: bool = False) -> "NodeState":
        """A node with coordinates drawn uniformly from [0, 1) and an empty neighbor set."""
        mode = Mode(mode)
        coord = Coordinate.random(rank, rng, height=height)
        if mode is Mode.PASSIVE:
            nbrs = NeighborSet(rank, window=window)
        else:
            nbrs = NeighborSet(rank, capacity=max(k, len(candidates), 1))
        return cls(node_id, coord, nbrs, mode, np.asarray(candidates, dtype=np.int64))


def select_probe_target(state: NodeState, rng: np.random.Generator) -> int:
    """Pick uniformly among the node's probe candidates.

    In active mode the candidates are the node's fixed random neighbors; in
    landmark mode they are the landmarks other than the node itself.
    """
    if state.mode is Mode.PASSIVE:
        raise ContractError("passive nodes do not choose probe targets")
    cands = state.candidates
    if cands.size == 0:
        raise ContractError(f"node {state.node_id} has no probe candidates")
    j = int(cands[rng.integers(cands.size)])
    if j == state.node_id:
        raise ContractError(f"node {state.node_id} lists itself as a probe candidate")
    return j


@dataclass
class ContactReport:
    """Line-search outcomes of one contact, one entry per updated block (x, y, height)."""

    searches: list[LineSearchResult] = field(default_factory=list)
    dropped: bool = False


def _search_block(own, others, target, w, cfg: UpdateConfig) -> LineSearchResult:
    """Line-searched minibatch update of one row against linear predictions ``others @ own``."""
    return search_row(own, others, target, w, cfg)


def on_contact(state: NodeState, j: int, d_ij: float, d_ji: float, xj, yj, now: float,
               cfg: UpdateConfig, model: DistanceModel = DistanceModel.RAW,
               hj: float | None = None) -> ContactReport:
    """Fold one measurement to node ``j`` into node i's state, updating it in place.

    The neighbor record for ``j`` is refreshed, neighbor weights are computed
    (age decay in passive mode, all ones otherwise), then x_i and y_i are each
    moved by a line-searched minibatch step over the whole neighbor set. Only
    node i changes; ``xj``/``yj`` are read as a snapshot.
    """
    if not (np.isfinite(d_ij) and np.isfinite(d_ji)) or d_ij < 0 or d_ji < 0:
        raise ContractError(f"measurement to node {j} must be finite and >= 0")
    xj = np.asarray(xj, dtype=np.float64)
    yj = np.asarray(yj, dtype=np.float64)
    nbrs = state.neighbors
    coord = state.coord
    if xj.shape != (coord.rank,) or yj.shape != (coord.rank,):
        # stale record from a peer with another rank: forget it and relearn on the next contact
        nbrs.drop(j)
        return ContactReport(dropped=True)

    model = DistanceModel(model)
    if model is DistanceModel.HEIGHT_SYMMETRIC and (coord.height is None or hj is None):
        raise ContractError("the height model needs heights on both nodes")
    nbrs.upsert(j, d_ij, d_ji, xj, yj, now, 0.0 if hj is None else hj)
    if state.mode is Mode.PASSIVE:
        nbrs.expire(now)
        w = decay_weights(nbrs.ages(now))
    else:
        w = np.ones(len(nbrs))
    ids, dij, dji, xs, ys = nbrs.view()
    report = ContactReport()

    if model is DistanceModel.RAW:
        res = _search_block(coord.x, ys, dij, w, cfg)
        coord.x = res.value
        report.searches.append(res)
        res = _search_block(coord.y, xs, dji, w, cfg)
        coord.y = res.value
        report.searches.append(res)
        return report

    # symmetric prediction 0.5 * (x_i . y_j + x_j . y_i) (+ h_i + h_j): each block is
    # still linear in the row being updated, so it reduces to the raw update
    hs = nbrs.hs[: len(nbrs)]
    heights = coord.height + hs if model is DistanceModel.HEIGHT_SYMMETRIC else 0.0
    res = _search_block(coord.x, 0.5 * ys, dij - 0.5 * (xs @ coord.y) - heights, w, cfg)
    coord.x = res.value
    report.searches.append(res)
    res = _search_block(coord.y, 0.5 * xs, dji - 0.5 * (ys @ coord.x) - heights, w, cfg)
    coord.y = res.value
    report.searches.append(res)
    if model is DistanceModel.HEIGHT_SYMMETRIC:
        sym = 0.5 * (ys @ coord.x + xs @ coord.y)
        hcfg = dataclasses.replace(cfg, lam=0.0, nonneg=True, rank=1)
        res = _search_block(np.array([coord.height]), np.ones((len(w), 1)),
                            dij - sym - hs, w, hcfg)
        coord.height = float(res.value[0])
        report.searches.append(res)
    return report
