"""Deterministic simulation of DMFSGD nodes in active, landmark and
passive-replay settings, plus a Vivaldi run over the same probe schedule."""

from __future__ import annotations

import dataclasses
import logging
from collections import defaultdict, deque
from dataclasses import dataclass, field

import numpy as np

from . import metrics
from .baselines import EuclideanCoord, euclidean_matrix, vivaldi_step
from .data import TraceDataset, ground_truth, median
from .model import DistanceModel, PartialMatrix, predict_matrix
from .optimizer import UpdateConfig
from .protocol import DEFAULT_K, DEFAULT_WINDOW_S, Mode, NodeState, on_contact, select_probe_target

log = logging.getLogger(__name__)


class SimConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SimConfig:
    mode: Mode = Mode.ACTIVE
    k: int = DEFAULT_K
    landmarks: tuple[int, ...] = ()
    update: UpdateConfig = field(default_factory=UpdateConfig)
    model: DistanceModel = DistanceModel.RAW
    seed: int = 0
    rounds: int = 100
    snapshot_every: int | None = None  # in contacts; None means once per n contacts
    window_s: float = DEFAULT_WINDOW_S  # neighbor retention, passive mode
    filter_window_ms: float = DEFAULT_WINDOW_S * 1000.0  # median filter, passive mode

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        object.__setattr__(self, "model", DistanceModel(self.model))
        object.__setattr__(self, "landmarks", tuple(int(v) for v in self.landmarks))
        if self.k < 1:
            raise SimConfigError(f"k must be >= 1, got {self.k}")
        if self.rounds < 0:
            raise SimConfigError(f"rounds must be >= 0, got {self.rounds}")
        if self.snapshot_every is not None and self.snapshot_every < 1:
            raise SimConfigError("snapshot_every must be >= 1")
        if self.mode is Mode.LANDMARK and not self.landmarks:
            raise SimConfigError("landmark mode needs at least one landmark")


@dataclass
class Snapshot:
    contacts: int
    measurements_per_node: float
    stress: float
    mae: float
    ree: np.ndarray
    train_stress: float
    min_coordinate: float
    min_prediction: float


@dataclass
class LineSearchStats:
    searches: int = 0
    accepted: int = 0
    exhausted: int = 0
    violations: int = 0  # accepted steps with loss_after >= loss_before + slack

    def add(self, report):
        for res in report.searches:
            self.searches += 1
            if res.accepted:
                self.accepted += 1
                if not res.loss_after < res.loss_before + res.slack:
                    self.violations += 1
            else:
                self.exhausted += 1


@dataclass
class SimResult:
    snapshots: list[Snapshot]
    x: np.ndarray
    y: np.ndarray | None = None
    heights: np.ndarray | None = None
    candidates: list[np.ndarray] = field(default_factory=list)
    eval_mask: np.ndarray | None = None
    line_search: LineSearchStats = field(default_factory=LineSearchStats)

    def predictions(self, model: DistanceModel = DistanceModel.RAW) -> np.ndarray:
        if self.y is None:
            return euclidean_matrix(self.x, self.heights)
        return predict_matrix(model, self.x, self.y, self.heights)


def _streams(seed: int):
    init, boot, probe = np.random.SeedSequence(seed).spawn(3)
    return (np.random.default_rng(init), np.random.default_rng(boot),
            np.random.default_rng(probe))


def _candidate_lists(cfg: SimConfig, truth: PartialMatrix, boot_rng) -> list[np.ndarray]:
    n = truth.n
    known = truth.measured
    lists = []
    if cfg.mode is Mode.LANDMARK:
        marks = np.array(sorted(set(cfg.landmarks)), dtype=np.int64)
        if marks.min() < 0 or marks.max() >= n:
            raise SimConfigError(f"landmark ids must lie in [0, {n})")
        for i in range(n):
            # a sole landmark has nobody to probe and stays idle
            c = marks[marks != i]
            missing = c[~known[i, c]]
            if missing.size:
                raise SimConfigError(f"node {i} has no measurement to landmark {int(missing[0])}")
            lists.append(c)
        return lists
    for i in range(n):
        c = np.flatnonzero(known[i])
        if c.size == 0:
            raise SimConfigError(f"node {i} has no measured neighbor candidates")
        if c.size > cfg.k:
            c = np.sort(boot_rng.choice(c, size=cfg.k, replace=False))
        lists.append(c)
    return lists


def _split(truth: PartialMatrix, lists) -> tuple[np.ndarray, np.ndarray]:
    """(trained, held-out) masks; a pair is trained when either end lists the other."""
    trained = np.zeros((truth.n, truth.n), dtype=bool)
    for i, c in enumerate(lists):
        trained[i, c] = True
    trained |= trained.T
    evaluable = truth.measured & (truth.d > 0)
    return trained & evaluable, ~trained & evaluable


class _Recorder:
    def __init__(self, truth, eval_mask, train_mask, n, every):
        self.truth = truth
        # with every pair probed there is nothing held out; fall back to the probed pairs
        self.eval_mask = eval_mask if eval_mask.any() else train_mask
        self.train_mask = train_mask
        self.n = n
        self.every = every
        self.snapshots: list[Snapshot] = []
        self.contacts = 0

    def tick(self, predict_all, coords_min):
        self.contacts += 1
        if self.contacts % self.every == 0:
            self.take(predict_all, coords_min)

    def finish(self, predict_all, coords_min):
        if self.contacts and (not self.snapshots or self.snapshots[-1].contacts != self.contacts):
            self.take(predict_all, coords_min)

    def take(self, predict_all, coords_min):
        p = predict_all()
        d = self.truth.d
        em = self.eval_mask
        if not em.any():
            raise SimConfigError("truth has no positive measured pair to evaluate")
        tm = self.train_mask if self.train_mask.any() else em
        snap = Snapshot(
            contacts=self.contacts,
            measurements_per_node=self.contacts / self.n,
            stress=metrics.stress(d[em], p[em]),
            mae=metrics.mae(d[em], p[em]),
            ree=metrics.ree_values(d[em], p[em]),
            train_stress=metrics.stress(d[tm], p[tm]),
            min_coordinate=coords_min(),
            min_prediction=float(p[~np.eye(self.n, dtype=bool)].min()) if self.n > 1 else 0.0,
        )
        log.debug("contacts=%d stress=%.4f mae=%.4f", snap.contacts, snap.stress, snap.mae)
        self.snapshots.append(snap)


def _bootstrap_nodes(cfg, n, init_rng, mode, lists):
    height = cfg.model is DistanceModel.HEIGHT_SYMMETRIC
    return [
        NodeState.bootstrap(i, cfg.update.rank, init_rng, mode=mode,
                            candidates=lists[i] if lists else (), k=cfg.k,
                            window=cfg.window_s, height=height)
        for i in range(n)
    ]


def _dmf_views(nodes, model):
    def predict_all():
        x = np.stack([s.coord.x for s in nodes])
        y = np.stack([s.coord.y for s in nodes])
        h = None
        if model is DistanceModel.HEIGHT_SYMMETRIC:
            h = np.array([s.coord.height for s in nodes])
        return predict_matrix(model, x, y, h)

    def coords_min():
        return float(min(min(s.coord.x.min(), s.coord.y.min()) for s in nodes))

    return predict_all, coords_min


def _result(nodes, rec, lists, stats, model):
    x = np.stack([s.coord.x for s in nodes]) if nodes else np.empty((0, 0))
    y = np.stack([s.coord.y for s in nodes]) if nodes else np.empty((0, 0))
    h = None
    if model is DistanceModel.HEIGHT_SYMMETRIC and nodes:
        h = np.array([s.coord.height for s in nodes])
    return SimResult(rec.snapshots, x, y, h, lists, rec.eval_mask, stats)


def _run_probing(cfg: SimConfig, truth: PartialMatrix) -> SimResult:
    n = truth.n
    init_rng, boot_rng, probe_rng = _streams(cfg.seed)
    lists = _candidate_lists(cfg, truth, boot_rng)
    train_mask, eval_mask = _split(truth, lists)
    nodes = _bootstrap_nodes(cfg, n, init_rng, cfg.mode, lists)
    rec = _Recorder(truth, eval_mask, train_mask, n, cfg.snapshot_every or n)
    views = _dmf_views(nodes, cfg.model)
    stats = LineSearchStats()
    d = truth.d
    known = truth.measured
    for rnd in range(cfg.rounds):
        for i in probe_rng.permutation(n):
            i = int(i)
            state = nodes[i]
            if not len(state.candidates):
                continue
            j = select_probe_target(state, probe_rng)
            peer = nodes[j].coord
            d_ij = d[i, j]
            d_ji = d[j, i] if known[j, i] else d_ij
            report = on_contact(state, j, d_ij, d_ji, peer.x, peer.y, float(rnd), cfg.update,
                                cfg.model, peer.height)
            stats.add(report)
            rec.tick(*views)
    rec.finish(*views)
    return _result(nodes, rec, lists, stats, cfg.model)


def run_active(cfg: SimConfig, truth: PartialMatrix) -> SimResult:
    """Each round every node, in a seeded random order, probes one of its k
    fixed random neighbors and updates. Metrics are computed over measured
    pairs that no node ever probes."""
    if cfg.mode is not Mode.ACTIVE:
        cfg = _replace_mode(cfg, Mode.ACTIVE)
    return _run_probing(cfg, truth)


def run_landmark(cfg: SimConfig, truth: PartialMatrix) -> SimResult:
    """Same loop as :func:`run_active` with every node probing only landmarks."""
    if cfg.mode is not Mode.LANDMARK:
        cfg = _replace_mode(cfg, Mode.LANDMARK)
    return _run_probing(cfg, truth)


def _replace_mode(cfg, mode):
    return dataclasses.replace(cfg, mode=mode)


def run_passive(cfg: SimConfig, trace: TraceDataset) -> SimResult:
    """Replay a measurement trace in time order.

    Each event (t, i, j, rtt) enters the median filter of the pair (i, j);
    node i then updates with the filtered value, with neighbor records aged
    by trace time and weighted by age decay. Snapshots compare predictions
    against the per-pair medians of the whole trace.
    """
    n = trace.n
    truth = ground_truth(trace)
    init_rng, _, _ = _streams(cfg.seed)
    nodes = _bootstrap_nodes(cfg, n, init_rng, Mode.PASSIVE, None)
    eval_mask = truth.measured & (truth.d > 0)
    rec = _Recorder(truth, eval_mask, eval_mask, n, cfg.snapshot_every or max(n, 1))
    views = _dmf_views(nodes, cfg.model)
    stats = LineSearchStats()
    streams: dict[tuple[int, int], deque] = defaultdict(deque)
    for ev in trace.events:
        buf = streams[ev.src, ev.dst]
        buf.append((ev.t, ev.rtt))
        while buf[0][0] <= ev.t - cfg.filter_window_ms:
            buf.popleft()
        filtered = median([v for _, v in buf])
        peer = nodes[ev.dst].coord
        report = on_contact(nodes[ev.src], ev.dst, filtered, filtered, peer.x, peer.y,
                            ev.t / 1000.0, cfg.update, cfg.model, peer.height)
        stats.add(report)
        rec.tick(*views)
    rec.finish(*views)
    return _result(nodes, rec, [], stats, cfg.model)


def run_vivaldi(cfg: SimConfig, truth: PartialMatrix, dim: int = 10, eta: float = 0.25,
                height: bool = False) -> SimResult:
    """Constant-step Vivaldi driven by the same neighbor lists and probe order as
    :func:`run_active` with the same seed."""
    n = truth.n
    init_rng, boot_rng, probe_rng = _streams(cfg.seed)
    lists = _candidate_lists(_replace_mode(cfg, Mode.ACTIVE), truth, boot_rng)
    train_mask, eval_mask = _split(truth, lists)
    coords = [EuclideanCoord(init_rng.random(dim), float(init_rng.random()) if height else None)
              for _ in range(n)]
    jitter = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(4)[3])

    def predict_all():
        x = np.stack([c.x for c in coords])
        h = np.array([c.height for c in coords]) if height else None
        return euclidean_matrix(x, h)

    def coords_min():
        return float(min(c.x.min() for c in coords))

    rec = _Recorder(truth, eval_mask, train_mask, n, cfg.snapshot_every or n)
    d = truth.d
    for _ in range(cfg.rounds):
        for i in probe_rng.permutation(n):
            i = int(i)
            cands = lists[i]
            j = int(cands[probe_rng.integers(cands.size)])
            coords[i] = vivaldi_step(coords[i], coords[j], d[i, j], eta, jitter)
            rec.tick(predict_all, coords_min)
    rec.finish(predict_all, coords_min)
    x = np.stack([c.x for c in coords])
    h = np.array([c.height for c in coords]) if height else None
    return SimResult(rec.snapshots, x, None, h, lists, rec.eval_mask)


def synthetic_lowrank(n: int, rank: int, rng: np.random.Generator) -> PartialMatrix:
    """Complete nonnegative matrix X @ Y.T with X, Y entries uniform on [0, 1)."""
    x = rng.random((n, rank))
    y = rng.random((n, rank))
    return PartialMatrix(x @ y.T, np.ones((n, n)))


def synthetic_euclidean(n: int, dim: int, rng: np.random.Generator, scale: float = 100.0) -> PartialMatrix:
    """Complete distance matrix of points uniform in a ``dim``-dimensional cube."""
    pts = rng.random((n, dim)) * scale
    return PartialMatrix(euclidean_matrix(pts), np.ones((n, n)))
