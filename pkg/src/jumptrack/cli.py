"""Command line: ``jumptrack {sim,track,eval,sweep}``.

Exit codes: 0 success, 2 configuration error, 3 I/O or file format error,
4 numerical failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import io
from .evaluation import GATE_M, MotReport, baseline_track, frames_from_truth, mot_evaluate
from .model import DegenerateProposalError, SingularCovarianceError
from .simulator import AXES, SimConfig, SweepRun, generate, sweep
from .tracking import run_filter, track

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4
THREADS_ENV = "JUMPTRACK_THREADS"


def resolve_threads(flag: int | None) -> int:
    if flag is not None:
        n = flag
    else:
        raw = os.environ.get(THREADS_ENV, "").strip()
        if not raw:
            return 1
        try:
            n = int(raw)
        except ValueError:
            raise io.ConfigError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    if n < 1:
        raise io.ConfigError("thread count must be positive")
    return n


def _read_text(path: str) -> str:
    with open(path, encoding="utf-8") as fh:
        return fh.read()


def _resolve(base: Path, p: str) -> Path:
    q = Path(p)
    return q if q.is_absolute() else base / q


# ---------------------------------------------------------------------------


def cmd_sim(args) -> int:
    cfg = io.parse_sim_config(_read_text(args.config), args.config) if args.config else SimConfig()
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, rng_seed=args.seed)
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    ds, gt = generate(cfg)
    io.write_dataset(out / "dataset.jsonl", ds)
    io.write_truth(out / "truth.jsonl", gt)
    run = io.RunConfig(cfg.filter_params(), dataset="dataset.jsonl", output="tracks.jsonl")
    io.atomic_write(out / "track.conf", run.to_text())
    print(f"wrote {len(ds.rounds)} rounds to {out}")
    return EXIT_OK


def cmd_track(args) -> int:
    if not args.config:
        raise io.ConfigError("track needs --config")
    run = io.RunConfig.parse(_read_text(args.config), args.config)
    base = Path(args.config).parent
    params = run.params
    if args.seed is not None:
        params = dataclasses.replace(params, rng_seed=args.seed)
    if run.dataset is None:
        raise io.ConfigError(f"{args.config}: no dataset given")
    ds_path = _resolve(base, run.dataset)
    if not ds_path.is_file():
        raise FileNotFoundError(f"dataset not found: {ds_path}")
    if args.out:
        out = Path(args.out)
    elif run.output:
        out = _resolve(base, run.output)
    else:
        raise io.ConfigError("no output path: give --out or set 'output' in the config")
    ds = io.read_dataset(ds_path)
    rounds, summary = run_filter(ds, params, threads=resolve_threads(args.threads))
    io.atomic_write(out, io.tracks_to_text(io.track_header(params, len(ds.targets)), rounds, summary))
    print(f"tracked {len(ds.targets)} targets over {summary['rounds']} rounds; mean ESS {summary['mean_ess']:.1f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    if not args.truth:
        raise io.ConfigError("eval needs --truth")
    gt = io.read_truth(args.truth)
    if args.baseline is not None:
        if not args.dataset:
            raise io.ConfigError("--baseline needs --dataset")
        estimates = baseline_track(io.read_dataset(args.dataset), args.baseline)
    elif args.track:
        _, rounds, _ = io.read_tracks(args.track)
        estimates = [r.track_estimates() for r in rounds]
    else:
        raise io.ConfigError("eval needs --track, or --baseline with --dataset")
    try:
        report = mot_evaluate(estimates, frames_from_truth(gt), args.gate)
    except ValueError as exc:
        raise io.FormatError(str(exc)) from None
    out = Path(args.out or "report.json")
    json_path = out if out.suffix == ".json" else out.with_name(out.name + ".json")
    io.write_report(json_path, json_path.with_suffix(".csv"), report)
    print(f"MOTA {report.mota:.4f}  MOTP {report.motp_m:.4f} m")
    return EXIT_OK


@lru_cache(maxsize=8)
def _dataset(sim: SimConfig):
    return generate(sim)


def run_sweep_entry(run: SweepRun) -> MotReport:
    ds, gt = _dataset(run.sim)
    return mot_evaluate(track(ds, run.params), frames_from_truth(gt))


def cmd_sweep(args) -> int:
    cfg = io.SweepConfig.parse(_read_text(args.config), args.config) if args.config else io.SweepConfig()
    axis = args.axis or cfg.axis
    if axis not in AXES:
        raise io.ConfigError(f"sweep axis must be one of {', '.join(AXES)}; got {axis!r}")
    try:
        values = io.parse_sweep_values(args.values) if args.values else cfg.values
    except ValueError as exc:
        raise io.ConfigError(f"--values: {exc}") from None
    if not values:
        raise io.ConfigError("no sweep values given")
    if (axis == "grid") != all(isinstance(v, tuple) for v in values):
        raise io.ConfigError("the grid axis takes p_jump:p_meas pairs, other axes take plain numbers")
    if not args.out:
        raise io.ConfigError("sweep needs --out")
    sim = cfg.sim if args.seed is None else dataclasses.replace(cfg.sim, rng_seed=args.seed)
    repeats = args.repeats if args.repeats is not None else cfg.repeats
    evals = args.evals if args.evals is not None else cfg.evals
    if repeats < 1 or evals < 1:
        raise io.ConfigError("repeats and evals must be positive")
    derive = not ({"feature_meas_cov", "feature_support"} & cfg.explicit_filter_keys)
    runs = sweep(sim, axis, values, repeats, evals, cfg.params, derive_feature_model=derive)
    threads = resolve_threads(args.threads)
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            reports = list(pool.map(run_sweep_entry, runs, chunksize=max(1, evals)))
    else:
        reports = [run_sweep_entry(r) for r in runs]
    rows = [(r.value, r.repeat, r.eval, rep) for r, rep in zip(runs, reports)]
    io.atomic_write(args.out, io.sweep_csv(axis, rows))
    for vi, value in enumerate(values):
        motas = [rep.mota for r, rep in zip(runs, reports) if r.value_index == vi]
        print(f"{axis}={value}: mean MOTA {np.mean(motas):.4f} over {len(motas)} runs")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value configuration file")
    common.add_argument("--seed", type=int, help="override the configured random seed")
    common.add_argument("--threads", type=int, help=f"worker count (default: ${THREADS_ENV} or 1)")
    common.add_argument("--out", help="output path")

    p = argparse.ArgumentParser(prog="jumptrack", description="Track semi-static objects that jump between locations.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("sim", parents=[common], help="generate a synthetic dataset, ground truth and run config into --out DIR")
    sub.add_parser("track", parents=[common], help="run the filter on the dataset named in --config")
    ev = sub.add_parser("eval", parents=[common], help="score a track file (or the baseline tracker) against ground truth")
    ev.add_argument("--track", help="track file written by 'track'")
    ev.add_argument("--truth", help="ground-truth file written by 'sim'")
    ev.add_argument("--gate", type=float, default=GATE_M, help="matching gate in metres (default 0.5)")
    ev.add_argument("--dataset", help="dataset file, for --baseline")
    ev.add_argument("--baseline", type=float, metavar="THRESHOLD", help="evaluate the movable/absent baseline with this feature threshold")
    sw = sub.add_parser("sweep", parents=[common], help="parameter sweep written as CSV")
    sw.add_argument("--axis", choices=AXES)
    sw.add_argument("--values", help="comma-separated values; the grid axis takes p_jump:p_meas pairs")
    sw.add_argument("--repeats", type=int, help="simulations per value (default 3)")
    sw.add_argument("--evals", type=int, help="filter runs per simulation (default 10)")
    return p


COMMANDS = {"sim": cmd_sim, "track": cmd_track, "eval": cmd_eval, "sweep": cmd_sweep}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (DegenerateProposalError, SingularCovarianceError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"jumptrack: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except io.ConfigError as exc:
        print(f"jumptrack: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, io.FormatError) as exc:
        print(f"jumptrack: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
