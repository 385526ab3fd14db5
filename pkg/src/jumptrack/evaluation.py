"""CLEAR-MOT scoring with strict mismatch counting, and a movable/absent baseline tracker.

Every matched observation whose estimated label differs from its annotation
counts as a mismatch, not only the first one after an identity switch.
Only estimates placed in the round's observed location take part in the
matching.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .simulator import Dataset, GroundTruth

GATE_M = 0.5


class TrackEstimate(NamedTuple):
    label: int
    location: int
    position: np.ndarray


@dataclass
class EvalFrame:
    """Annotated observations of one round; a label of None marks a detection of no tracked object."""

    time_step: int
    observed_location: int
    annotations: list[tuple[int | None, np.ndarray]]


def frames_from_truth(truth: GroundTruth) -> list[EvalFrame]:
    return [
        EvalFrame(k, obs, list(ann))
        for k, obs, ann in zip(truth.time_steps, truth.observed, truth.annotations)
    ]


class Matching(NamedTuple):
    pairs: list[tuple[int, int, float]]
    unmatched_estimates: list[int]
    unmatched_annotations: list[int]


def hungarian_assign(estimates, annotations, gate_m: float = GATE_M) -> Matching:
    """Match estimates to annotations by position, only pairs closer than ``gate_m``.

    Both inputs are sequences of ``(label, position)``.  The matching has the
    largest possible number of gated pairs and, among those, the smallest
    total distance.
    """
    n, m = len(estimates), len(annotations)
    if n == 0 or m == 0:
        return Matching([], list(range(n)), list(range(m)))
    a = np.array([np.asarray(p, dtype=float) for _, p in estimates]).reshape(n, -1)
    b = np.array([np.asarray(p, dtype=float) for _, p in annotations]).reshape(m, -1)
    dist = np.linalg.norm(a[:, None, :] - b[None, :, :], axis=-1)
    ok = dist < gate_m
    big = gate_m * (min(n, m) + 1) + 1.0
    cost = np.where(ok, dist, big)
    ri, ci = linear_sum_assignment(cost)
    pairs = [(int(i), int(j), float(dist[i, j])) for i, j in zip(ri, ci) if ok[i, j]]
    used_e = {i for i, _, _ in pairs}
    used_a = {j for _, j, _ in pairs}
    return Matching(
        pairs,
        [i for i in range(n) if i not in used_e],
        [j for j in range(m) if j not in used_a],
    )


@dataclass
class MotReport:
    motp_m: float
    miss_rate: float
    false_positive_rate: float
    mismatch_rate: float
    mota: float
    ground_truth: int
    matches: int
    misses: int
    false_positives: int
    mismatches: int
    total_distance: float
    frames: list[dict] = field(default_factory=list)

    @classmethod
    def from_counts(cls, frames: list[dict]) -> "MotReport":
        gt = sum(f["ground_truth"] for f in frames)
        matches = sum(f["matches"] for f in frames)
        misses = sum(f["misses"] for f in frames)
        fps = sum(f["false_positives"] for f in frames)
        mms = sum(f["mismatches"] for f in frames)
        dist = float(sum(f["distance"] for f in frames))
        denom = max(gt, 1)
        return cls(
            motp_m=dist / matches if matches else 0.0,
            miss_rate=misses / denom,
            false_positive_rate=fps / denom,
            mismatch_rate=mms / denom,
            mota=1.0 - (misses + fps + mms) / denom,
            ground_truth=gt,
            matches=matches,
            misses=misses,
            false_positives=fps,
            mismatches=mms,
            total_distance=dist,
            frames=frames,
        )

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "MotReport":
        return cls(**json.loads(text))

    CSV_HEADER = "mota,motp,miss,fp,mismatch,ground_truth"

    def csv_row(self) -> str:
        return f"{self.mota!r},{self.motp_m!r},{self.miss_rate!r},{self.false_positive_rate!r},{self.mismatch_rate!r},{self.ground_truth}"


MOT_REPORT_SCHEMA = {
    "type": "object",
    "required": [
        "motp_m", "miss_rate", "false_positive_rate", "mismatch_rate", "mota",
        "ground_truth", "matches", "misses", "false_positives", "mismatches",
        "total_distance", "frames",
    ],
    "properties": {
        "motp_m": {"type": "number", "minimum": 0},
        "miss_rate": {"type": "number", "minimum": 0},
        "false_positive_rate": {"type": "number", "minimum": 0},
        "mismatch_rate": {"type": "number", "minimum": 0},
        "mota": {"type": "number", "maximum": 1},
        "ground_truth": {"type": "integer", "minimum": 0},
        "matches": {"type": "integer", "minimum": 0},
        "misses": {"type": "integer", "minimum": 0},
        "false_positives": {"type": "integer", "minimum": 0},
        "mismatches": {"type": "integer", "minimum": 0},
        "total_distance": {"type": "number", "minimum": 0},
        "frames": {"type": "array", "items": {"type": "object"}},
    },
}


def _sorted_estimates(estimates: Iterable[TrackEstimate]) -> list[TrackEstimate]:
    return sorted(estimates, key=lambda e: (e.label, float(e.position[0]), float(e.position[1])))


def mot_evaluate(
    estimates: Sequence[Sequence[TrackEstimate]], frames: Sequence[EvalFrame], gate_m: float = GATE_M
) -> MotReport:
    """Score per-round estimates against annotated observations.

    Per round: a matched pair with an unlabeled annotation or an unmatched
    estimate is a false positive, a matched pair with a different label is a
    mismatch, and an unmatched labeled annotation is a miss.  MOTP averages
    the distance over matched pairs with labeled annotations.
    """
    if len(estimates) != len(frames):
        raise ValueError(f"{len(estimates)} estimate rounds for {len(frames)} ground-truth rounds")
    counts = []
    for est_round, frame in zip(estimates, frames):
        est = _sorted_estimates(e for e in est_round if e.location == frame.observed_location)
        match = hungarian_assign(
            [(e.label, e.position) for e in est], frame.annotations, gate_m
        )
        fps = len(match.unmatched_estimates)
        mms = 0
        tp_dist = 0.0
        n_matched = 0
        for i, j, d in match.pairs:
            label = frame.annotations[j][0]
            if label is None:
                fps += 1
                continue
            n_matched += 1
            tp_dist += d
            if est[i].label != label:
                mms += 1
        misses = sum(1 for j in match.unmatched_annotations if frame.annotations[j][0] is not None)
        gt = sum(1 for lab, _ in frame.annotations if lab is not None)
        counts.append({
            "time_step": frame.time_step,
            "ground_truth": gt,
            "matches": n_matched,
            "misses": misses,
            "false_positives": fps,
            "mismatches": mms,
            "distance": tp_dist,
        })
    return MotReport.from_counts(counts)


# ---------------------------------------------------------------------------
# Baseline


@dataclass
class _BaselineObject:
    label: int
    location: int
    position: np.ndarray
    feature: np.ndarray
    movable: bool = True


def baseline_track(
    dataset: Dataset, feature_threshold: float, static_distance_m: float = 0.3
) -> list[list[TrackEstimate]]:
    """Deterministic movable/absent tracker.

    A movable object in the observed room stays put if some detection lies
    within ``static_distance_m`` of its last position.  Otherwise, and for
    every absent object, the object takes the unexplained detection with the
    closest feature if that distance is below ``feature_threshold``; failing
    that it becomes absent.  Movable objects are reported at the position of
    their last matched observation.
    """
    objs = [
        _BaselineObject(t.label, t.location, np.array(t.position, float), np.array(t.feature, float))
        for t in dataset.targets
    ]
    out = []
    for rnd in dataset.rounds:
        pos = rnd.positions()
        feat = rnd.features(dataset.feature_dim)
        free = np.ones(len(rnd), dtype=bool)
        pending = []
        for o in objs:
            if not o.movable or o.location != rnd.location:
                continue
            if free.any():
                d = np.linalg.norm(pos - o.position, axis=1)
                d[~free] = np.inf
                i = int(np.argmin(d))
                if d[i] <= static_distance_m:
                    free[i] = False
                    o.position = pos[i].copy()
                    continue
            pending.append(o)
        pending += [o for o in objs if not o.movable]
        for o in pending:
            o.movable = False
            if free.any():
                d = np.linalg.norm(feat - o.feature, axis=1)
                d[~free] = np.inf
                i = int(np.argmin(d))
                if d[i] < feature_threshold:
                    free[i] = False
                    o.position = pos[i].copy()
                    o.feature = feat[i].copy()
                    o.location = rnd.location
                    o.movable = True
        out.append([TrackEstimate(o.label, o.location, o.position.copy()) for o in objs if o.movable])
    return out


def threshold_search(
    cases: Sequence[tuple[Dataset, GroundTruth]],
    candidates: Sequence[float],
    static_distance_m: float = 0.3,
    gate_m: float = GATE_M,
) -> tuple[float, dict[float, float]]:
    """Candidate feature threshold with the best mean MOTA over ``cases``; ties go to the smaller one."""
    if not cases:
        raise ValueError("need at least one dataset")
    if not candidates:
        raise ValueError("need at least one candidate threshold")
    scores = {}
    for thr in candidates:
        motas = [
            mot_evaluate(baseline_track(ds, thr, static_distance_m), frames_from_truth(gt), gate_m).mota
            for ds, gt in cases
        ]
        scores[float(thr)] = float(np.mean(motas))
    best = min(scores, key=lambda t: (-scores[t], t))
    return best, scores
