"""Command-line front end: run simulations and dataset diagnostics, write CSV."""

from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from . import data
from .baselines import NumericError
from .model import ContractError, DistanceModel, LossKind
from .optimizer import UpdateConfig
from .protocol import DEFAULT_K, DEFAULT_WINDOW_S, Mode
from .sim import SimConfig, SimConfigError, run_active, run_landmark, run_passive, run_vivaldi

log = logging.getLogger("dmfsgd")

SNAPSHOT_HEADER = ["measurements_per_node", "stress", "mae", "ree_p50", "ree_p90"]


def fmt(v) -> str:
    """Six significant digits, independent of locale."""
    return format(float(v), ".6g")


def _configure_logging():
    level = os.environ.get("DMF_LOG", "off").lower()
    if level not in ("off", "info", "debug"):
        level = "off"
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger("dmfsgd")
    root.handlers[:] = [handler]
    root.setLevel({"off": logging.CRITICAL + 1, "info": logging.INFO, "debug": logging.DEBUG}[level])


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {text}")
    return v


def _nonneg_float(text):
    v = float(text)
    if not v >= 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {text}")
    return v


def _positive_float(text):
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be > 0, got {text}")
    return v


def _add_sim_flags(p: argparse.ArgumentParser, modes=True):
    p.add_argument("--dataset", required=True, help="matrix file, or trace CSV in passive mode")
    p.add_argument("--output", "-o", help="output CSV path (default: stdout)")
    if modes:
        p.add_argument("--mode", choices=[m.value for m in Mode], default=Mode.ACTIVE.value)
    p.add_argument("--rank", type=_positive_int, default=10)
    p.add_argument("--lambda", dest="lam", type=_nonneg_float, default=1.0)
    p.add_argument("--loss", choices=[k.value for k in LossKind], default=LossKind.L1.value)
    p.add_argument("--nonneg", action=argparse.BooleanOptionalAction, default=True,
                   help="project coordinates onto the nonnegative orthant after each update")
    p.add_argument("--eta-init", type=_positive_float, default=None,
                   help="initial line-search step (default 1e-3 for l2, 1e-2 for l1)")
    p.add_argument("--max-line-search", type=_positive_int, default=20)
    p.add_argument("--delta", type=_nonneg_float, default=None,
                   help="line-search slack (default 1e-4 * max(1, starting loss))")
    p.add_argument("--model", choices=[m.value for m in DistanceModel], default=DistanceModel.RAW.value)
    p.add_argument("--k", type=_positive_int, default=DEFAULT_K)
    p.add_argument("--landmarks", type=_positive_int, default=32,
                   help="number of randomly chosen landmarks (landmark mode)")
    p.add_argument("--landmark-ids", default=None, help="comma-separated landmark ids, overrides --landmarks")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--rounds", type=_positive_int, default=20 * DEFAULT_K)
    p.add_argument("--snapshot-every", type=_positive_int, default=None,
                   help="measurements between snapshots (default: node count)")
    p.add_argument("--window", type=_positive_float, default=DEFAULT_WINDOW_S,
                   help="neighbor retention and median-filter window in seconds (passive mode)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dmfsgd", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="simulate DMFSGD and write one CSV row per snapshot")
    _add_sim_flags(run)

    analyze = sub.add_parser("analyze", help="node count, density and TIV ratio of a matrix")
    analyze.add_argument("--dataset", required=True)
    analyze.add_argument("--output", "-o")

    prof = sub.add_parser("svd-profile", help="normalized singular values of a complete matrix")
    prof.add_argument("--dataset", required=True)
    prof.add_argument("--count", type=_positive_int, default=20)
    prof.add_argument("--output", "-o")

    cmp_ = sub.add_parser("compare", help="DMFSGD, Vivaldi and DMFSGD landmark side by side")
    _add_sim_flags(cmp_, modes=False)
    cmp_.add_argument("--vivaldi-eta", type=_positive_float, default=0.25)
    cmp_.add_argument("--vivaldi-height", action="store_true")
    return parser


def _landmarks(args, n: int) -> tuple[int, ...]:
    if args.landmark_ids:
        ids = tuple(int(t) for t in args.landmark_ids.split(",") if t.strip())
        bad = [i for i in ids if not 0 <= i < n]
        if bad:
            raise SimConfigError(f"landmark id {bad[0]} outside [0, {n})")
        return ids
    m = min(args.landmarks, n)
    return tuple(int(v) for v in np.sort(np.random.default_rng(args.seed).choice(n, m, replace=False)))


def _sim_config(args, mode: Mode, n: int) -> SimConfig:
    update = UpdateConfig(lam=args.lam, rank=args.rank, loss=LossKind(args.loss), nonneg=args.nonneg,
                          eta_init=args.eta_init, max_line_search=args.max_line_search,
                          delta=args.delta)
    landmarks = _landmarks(args, n) if mode is Mode.LANDMARK else ()
    return SimConfig(mode=mode, k=args.k, landmarks=landmarks, update=update,
                     model=DistanceModel(args.model), seed=args.seed, rounds=args.rounds,
                     snapshot_every=args.snapshot_every, window_s=args.window,
                     filter_window_ms=args.window * 1000.0)


def snapshot_row(s) -> list[str]:
    if s.ree.size:
        p50, p90 = np.percentile(s.ree, [50, 90])
    else:
        p50 = p90 = float("nan")
    return [fmt(s.measurements_per_node), fmt(s.stress), fmt(s.mae), fmt(p50), fmt(p90)]


def _csv(rows) -> str:
    return "".join(",".join(r) + "\n" for r in rows)


def _emit(text: str, path: str | None) -> None:
    if path is None:
        sys.stdout.write(text)
        return
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(text)


def cmd_run(args) -> str:
    mode = Mode(args.mode)
    if mode is Mode.PASSIVE:
        trace = data.load_trace(args.dataset)
        result = run_passive(_sim_config(args, mode, trace.n), trace)
    else:
        truth = data.load_matrix(args.dataset)
        cfg = _sim_config(args, mode, truth.n)
        result = (run_landmark if mode is Mode.LANDMARK else run_active)(cfg, truth)
    log.info("%d snapshots, line search %s", len(result.snapshots), result.line_search)
    return _csv([SNAPSHOT_HEADER] + [snapshot_row(s) for s in result.snapshots])


def cmd_analyze(args) -> str:
    m = data.load_matrix(args.dataset)
    rows = [["n", str(m.n)], ["density", fmt(m.density())], ["tiv_ratio", fmt(data.tiv_ratio(m))]]
    return _csv([["metric", "value"]] + rows)


def cmd_svd_profile(args) -> str:
    m = data.load_matrix(args.dataset)
    prof = data.singular_profile(m, args.count)
    return _csv([["index", "normalized_singular_value"]]
                + [[str(i), fmt(v)] for i, v in enumerate(prof, start=1)])


def cmd_compare(args) -> str:
    truth = data.load_matrix(args.dataset)
    cfg = _sim_config(args, Mode.ACTIVE, truth.n)
    active = run_active(cfg, truth)
    viv = run_vivaldi(cfg, truth, dim=args.rank, eta=args.vivaldi_eta, height=args.vivaldi_height)
    land = run_landmark(_sim_config(args, Mode.LANDMARK, truth.n), truth)
    header = ["measurements_per_node"]
    for name in ("dmfsgd", "vivaldi", "landmark"):
        header += [f"{name}_{col}" for col in SNAPSHOT_HEADER[1:]]
    rows = [header]
    for a, v, l in zip(active.snapshots, viv.snapshots, land.snapshots):
        rows.append(snapshot_row(a) + snapshot_row(v)[1:] + snapshot_row(l)[1:])
    return _csv(rows)


COMMANDS = {"run": cmd_run, "analyze": cmd_analyze, "svd-profile": cmd_svd_profile,
            "compare": cmd_compare}


def main(argv=None) -> int:
    _configure_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        text = COMMANDS[args.command](args)
    except (data.DataError, OSError, SimConfigError, ContractError, NumericError) as exc:
        print(f"dmfsgd: {exc}", file=sys.stderr)
        return 1
    _emit(text, args.output)
    return 0


if __name__ == "__main__":
    sys.exit(main())
