"""File formats: JSON-lines datasets, ground truth and tracks; key = value configs.

All writers go through :func:`atomic_write`, which writes a temporary file
in the target directory and renames it into place.
"""
from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Callable, Iterable, Iterator

import numpy as np

from .evaluation import MotReport
from .tracking import TrackRound
from .model import UNKNOWN, Environment, FilterParams, JumpTrackError, Measurement, Round
from .simulator import Dataset, GroundTruth, InitialTarget, SimConfig, TargetTruth


class ConfigError(JumpTrackError, ValueError):
    """Malformed or invalid configuration."""


class FormatError(JumpTrackError, ValueError):
    """Malformed data file."""


def atomic_write(path: str | os.PathLike, text: str) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent if str(path.parent) else ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


def _dumps(obj) -> str:
    return json.dumps(obj, separators=(",", ":"), allow_nan=False)


def _vec(a) -> list[float]:
    return [float(x) for x in np.asarray(a, dtype=float).ravel()]


def _read_records(path: str | os.PathLike) -> Iterator[tuple[int, dict]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            if not isinstance(rec, dict):
                raise FormatError(f"{path}:{lineno}: expected a JSON object")
            yield lineno, rec


def _need(rec: dict, key: str, where: str):
    if key not in rec:
        raise FormatError(f"{where}: missing field {key!r}")
    return rec[key]


# ---------------------------------------------------------------------------
# Dataset


def dataset_to_text(ds: Dataset) -> str:
    header = {
        "type": "header",
        "feature_dim": ds.feature_dim,
        "locations": [{"id": i, "area": float(a)} for i, a in enumerate(ds.environment.areas)],
        "targets": [
            {"label": t.label, "location": t.location, "position": _vec(t.position), "feature": _vec(t.feature)}
            for t in ds.targets
        ],
    }
    lines = [_dumps(header)]
    for rnd in ds.rounds:
        lines.append(_dumps({
            "type": "round",
            "time_step": rnd.time_step,
            "observed_location": rnd.location,
            "measurements": [
                {"position": _vec(m.position), "feature": _vec(m.feature), "label": m.label}
                for m in rnd.measurements
            ],
        }))
    return "\n".join(lines) + "\n"


def write_dataset(path, ds: Dataset) -> None:
    atomic_write(path, dataset_to_text(ds))


def read_dataset(path) -> Dataset:
    records = list(_read_records(path))
    if not records or records[0][1].get("type") != "header":
        raise FormatError(f"{path}: first record must be the header")
    lineno, head = records[0]
    where = f"{path}:{lineno}"
    dim = int(_need(head, "feature_dim", where))
    locs = sorted(_need(head, "locations", where), key=lambda l: l["id"])
    if [l["id"] for l in locs] != list(range(len(locs))):
        raise FormatError(f"{where}: location ids must be 0..n-1")
    try:
        env = Environment([float(l["area"]) for l in locs])
    except ValueError as exc:
        raise FormatError(f"{where}: {exc}") from None

    def feature(v, where):
        f = np.asarray(v, dtype=float)
        if f.shape != (dim,):
            raise FormatError(f"{where}: feature has length {f.size}, expected {dim}")
        return f

    def position(v, where):
        p = np.asarray(v, dtype=float)
        if p.shape != (2,):
            raise FormatError(f"{where}: position must have two coordinates")
        return p

    targets = []
    for t in _need(head, "targets", where):
        loc = int(t["location"])
        if not 0 <= loc < env.n_locations:
            raise FormatError(f"{where}: target {t['label']} has unknown location {loc}")
        targets.append(InitialTarget(int(t["label"]), loc, position(t["position"], where), feature(t["feature"], where)))
    rounds = []
    last = None
    for lineno, rec in records[1:]:
        where = f"{path}:{lineno}"
        if rec.get("type") != "round":
            raise FormatError(f"{where}: expected a round record")
        k = int(_need(rec, "time_step", where))
        if last is not None and k <= last:
            raise FormatError(f"{where}: time steps must be strictly increasing")
        last = k
        obs = int(_need(rec, "observed_location", where))
        if not 0 <= obs < env.n_locations:
            raise FormatError(f"{where}: unknown observed location {obs}")
        meas = tuple(
            Measurement(position(m["position"], where), feature(m["feature"], where), obs, k, m.get("label"))
            for m in _need(rec, "measurements", where)
        )
        rounds.append(Round(k, obs, meas))
    return Dataset(env, dim, targets, rounds)


# ---------------------------------------------------------------------------
# Ground truth


def truth_to_text(gt: GroundTruth) -> str:
    lines = []
    for k, obs, states, ann in zip(gt.time_steps, gt.observed, gt.states, gt.annotations):
        lines.append(_dumps({
            "type": "truth",
            "time_step": k,
            "observed_location": obs,
            "targets": [
                {"location": s.location, "position": _vec(s.position), "detected": s.detected, "measurement": s.measurement}
                for s in states
            ],
            "annotations": [{"label": lab, "position": _vec(p)} for lab, p in ann],
        }))
    return "\n".join(lines) + "\n" if lines else ""


def write_truth(path, gt: GroundTruth) -> None:
    atomic_write(path, truth_to_text(gt))


def read_truth(path) -> GroundTruth:
    gt = GroundTruth()
    for lineno, rec in _read_records(path):
        where = f"{path}:{lineno}"
        if rec.get("type") != "truth":
            raise FormatError(f"{where}: expected a truth record")
        gt.time_steps.append(int(_need(rec, "time_step", where)))
        gt.observed.append(int(_need(rec, "observed_location", where)))
        gt.states.append([
            TargetTruth(int(s["location"]), np.asarray(s["position"], float), bool(s["detected"]), s["measurement"])
            for s in _need(rec, "targets", where)
        ])
        gt.annotations.append([(a["label"], np.asarray(a["position"], float)) for a in _need(rec, "annotations", where)])
    return gt


# ---------------------------------------------------------------------------
# Tracks


def _loc_key(loc: int) -> str:
    return "unknown" if loc == UNKNOWN else str(loc)


def _loc_value(v) -> int:
    return UNKNOWN if v == "unknown" else int(v)


def track_header(params: FilterParams, n_targets: int) -> dict:
    return {
        "type": "track_header",
        "n_targets": n_targets,
        "sampler_mode": params.sampler_mode,
        "num_particles": params.num_particles,
        "rng_seed": params.rng_seed,
    }


def track_round_record(tr: TrackRound) -> dict:
    return {
        "type": "round",
        "time_step": tr.time_step,
        "observed_location": tr.observed_location,
        "targets": [
            {
                "label": tr.label(j),
                "map_location": _loc_key(loc),
                "estimate": "unknown" if est is None else _vec(est),
                "location_marginal": {_loc_key(l): p for l, p in sorted(marg.items(), key=lambda kv: (kv[0] == UNKNOWN, kv[0]))},
            }
            for j, (loc, est, marg) in enumerate(zip(tr.map_location, tr.estimates, tr.marginals))
        ],
    }


def tracks_to_text(header: dict, rounds: Iterable[TrackRound], summary: dict) -> str:
    lines = [_dumps(header)] + [_dumps(track_round_record(r)) for r in rounds]
    lines.append(_dumps({"type": "summary", **summary}))
    return "\n".join(lines) + "\n"


def read_tracks(path) -> tuple[dict, list[TrackRound], dict]:
    header, summary, rounds = None, {}, []
    for lineno, rec in _read_records(path):
        where = f"{path}:{lineno}"
        kind = rec.get("type")
        if kind == "track_header":
            header = rec
        elif kind == "summary":
            summary = rec
        elif kind == "round":
            targets = _need(rec, "targets", where)
            rounds.append(TrackRound(
                int(_need(rec, "time_step", where)),
                int(_need(rec, "observed_location", where)),
                [_loc_value(t["map_location"]) for t in targets],
                [None if t["estimate"] == "unknown" else np.asarray(t["estimate"], float) for t in targets],
                [{_loc_value(k): float(v) for k, v in t["location_marginal"].items()} for t in targets],
                [int(t["label"]) for t in targets],
            ))
        else:
            raise FormatError(f"{where}: unknown record type {kind!r}")
    if header is None:
        raise FormatError(f"{path}: missing track header")
    return header, rounds, summary


# ---------------------------------------------------------------------------
# key = value configs


def parse_kv(text: str, source: str = "<config>") -> list[tuple[str, str, int]]:
    """``(key, raw value, line number)`` triples; '#' starts a comment."""
    out = []
    seen = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        if key in seen:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r} (first on line {seen[key]})")
        seen[key] = lineno
        out.append((key, value, lineno))
    return out


def _parse_int(v: str) -> int:
    return int(v)


def _parse_float(v: str) -> float:
    x = float(v)
    if not math.isfinite(x):
        raise ValueError("must be finite")
    return x


def _parse_cov(v: str):
    x = json.loads(v)
    return float(x) if isinstance(x, (int, float)) else np.asarray(x, dtype=float)


def _format(value) -> str:
    if isinstance(value, np.ndarray):
        return json.dumps(value.tolist())
    if isinstance(value, float):
        return repr(value)
    return str(value)


_PARSERS: dict[str, Callable[[str], Any]] = {"int": _parse_int, "float": _parse_float, "str": str}


def _schema(cls) -> dict[str, Callable[[str], Any]]:
    out = {}
    for f in fields(cls):
        if f.name == "feature_meas_cov":
            out[f.name] = _parse_cov
        else:
            t = f.type if isinstance(f.type, str) else f.type.__name__
            out[f.name] = _PARSERS[t.split("|")[0].strip()]
    return out


FILTER_KEYS = _schema(FilterParams)
SIM_KEYS = _schema(SimConfig)


def _bind(entries, schema: dict, source: str) -> dict:
    values = {}
    for key, raw, lineno in entries:
        if key not in schema:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        try:
            values[key] = schema[key](raw)
        except (ValueError, TypeError, json.JSONDecodeError) as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key!r}: {exc}") from None
    return values


def _build(cls, values: dict, source: str):
    try:
        return cls(**values)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{source}: {exc}") from None


@dataclass
class RunConfig:
    """Filter parameters plus the dataset to track and where to write the tracks."""

    params: FilterParams = field(default_factory=FilterParams)
    dataset: str | None = None
    output: str | None = None

    PATH_KEYS = ("dataset", "output")

    @classmethod
    def parse(cls, text: str, source: str = "<config>") -> "RunConfig":
        entries = parse_kv(text, source)
        paths = {k: v for k, v, _ in entries if k in cls.PATH_KEYS}
        values = _bind([e for e in entries if e[0] not in cls.PATH_KEYS], FILTER_KEYS, source)
        return cls(_build(FilterParams, values, source), paths.get("dataset"), paths.get("output"))

    def to_text(self) -> str:
        lines = [f"{f.name} = {_format(getattr(self.params, f.name))}" for f in fields(FilterParams)]
        lines += [f"{k} = {getattr(self, k)}" for k in self.PATH_KEYS if getattr(self, k) is not None]
        return "\n".join(lines) + "\n"


def parse_sim_config(text: str, source: str = "<config>") -> SimConfig:
    return _build(SimConfig, _bind(parse_kv(text, source), SIM_KEYS, source), source)


def sim_config_to_text(cfg: SimConfig) -> str:
    return "\n".join(f"{f.name} = {_format(getattr(cfg, f.name))}" for f in fields(SimConfig)) + "\n"


@dataclass
class SweepConfig:
    """Simulation keys prefixed with ``sim.``, filter keys unprefixed, plus the sweep design."""

    sim: SimConfig = field(default_factory=SimConfig)
    params: FilterParams = field(default_factory=FilterParams)
    explicit_filter_keys: frozenset = frozenset()
    axis: str | None = None
    values: list | None = None
    repeats: int = 3
    evals: int = 10

    @classmethod
    def parse(cls, text: str, source: str = "<config>") -> "SweepConfig":
        entries = parse_kv(text, source)
        sim_e, filt_e, design = [], [], {}
        for key, raw, lineno in entries:
            if key.startswith("sim."):
                sim_e.append((key[4:], raw, lineno))
            elif key in ("axis", "values", "repeats", "evals"):
                design[key] = (raw, lineno)
            else:
                filt_e.append((key, raw, lineno))
        sim = _build(SimConfig, _bind(sim_e, SIM_KEYS, source), source)
        fvals = _bind(filt_e, FILTER_KEYS, source)
        out = cls(sim, _build(FilterParams, fvals, source), frozenset(fvals))
        if "axis" in design:
            out.axis = design["axis"][0]
        convert = {"values": parse_sweep_values, "repeats": int, "evals": int}
        for key, fn in convert.items():
            if key in design:
                raw, lineno = design[key]
                try:
                    setattr(out, key, fn(raw))
                except ValueError as exc:
                    raise ConfigError(f"{source}:{lineno}: bad value for {key!r}: {exc}") from None
        return out


def parse_sweep_values(text: str) -> list:
    """Comma-separated numbers; ``a:b`` items are (p_jump, p_meas) grid points."""
    out = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        if ":" in item:
            a, b = item.split(":", 1)
            out.append((float(a), float(b)))
        else:
            x = float(item)
            out.append(int(x) if x.is_integer() and "." not in item and "e" not in item.lower() else x)
    if not out:
        raise ValueError("no sweep values given")
    return out


# ---------------------------------------------------------------------------
# Reports


def write_report(json_path, csv_path, report: MotReport) -> None:
    atomic_write(json_path, report.to_json() + "\n")
    atomic_write(csv_path, MotReport.CSV_HEADER + "\n" + report.csv_row() + "\n")


SWEEP_COLUMNS = ("axis_value", "repeat", "eval", "mota", "motp", "miss", "fp", "mismatch")
GRID_COLUMNS = ("p_jump", "p_meas") + SWEEP_COLUMNS[1:]


def sweep_csv(axis: str, rows: list[tuple]) -> str:
    """``rows`` are ``(value, repeat, eval, MotReport)`` in output order."""
    header = GRID_COLUMNS if axis == "grid" else SWEEP_COLUMNS
    lines = [",".join(header)]
    for value, r, e, rep in rows:
        lead = [repr(float(v)) for v in value] if axis == "grid" else [repr(value)]
        nums = [rep.mota, rep.motp_m, rep.miss_rate, rep.false_positive_rate, rep.mismatch_rate]
        lines.append(",".join(lead + [str(r), str(e)] + [repr(float(x)) for x in nums]))
    return "\n".join(lines) + "\n"
