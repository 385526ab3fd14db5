"""Run the filter over a whole dataset and collect per-round estimates."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import filter as rbpf
from .evaluation import TrackEstimate
from .model import UNKNOWN, FilterParams
from .simulator import Dataset


@dataclass
class TrackRound:
    """Filter output after one round: per target the MAP location, point estimate and location marginal."""

    time_step: int
    observed_location: int
    map_location: list[int]
    estimates: list[np.ndarray | None]
    marginals: list[dict[int, float]]
    labels: list[int] | None = None

    def label(self, j: int) -> int:
        return j if self.labels is None else self.labels[j]

    def track_estimates(self) -> list[TrackEstimate]:
        return [
            TrackEstimate(self.label(j), loc, est)
            for j, (loc, est) in enumerate(zip(self.map_location, self.estimates))
            if est is not None and loc != UNKNOWN
        ]


def summarize(ps: rbpf.ParticleSet, time_step: int, observed: int, env, labels: list[int] | None = None) -> TrackRound:
    posts = [rbpf.posterior(ps, j, env) for j in range(ps.n_targets)]
    return TrackRound(
        time_step, observed,
        [p.map_location for p in posts],
        [p.point_estimate for p in posts],
        [p.location_marginal for p in posts],
        labels,
    )


def run_filter(dataset: Dataset, params: FilterParams, threads: int = 1) -> tuple[list[TrackRound], dict]:
    """Filter every round; returns the per-round summaries and run statistics."""
    env = dataset.environment
    ps = rbpf.init(
        [(t.location, t.position) for t in dataset.targets],
        [t.feature for t in dataset.targets],
        params, env,
    )
    labels = [t.label for t in dataset.targets]
    out = []
    ess = []
    for rnd in dataset.rounds:
        ps = rbpf.step(ps, rnd, params, env, threads=threads)
        ess.append(ps.ess())
        out.append(summarize(ps, rnd.time_step, rnd.location, env, labels))
    summary = {"rounds": len(out), "mean_ess": float(np.mean(ess)) if ess else float(len(ps)), "final_ess": ps.ess()}
    return out, summary


def track(dataset: Dataset, params: FilterParams, threads: int = 1) -> list[list[TrackEstimate]]:
    """Per-round estimates of every target with a point estimate."""
    rounds, _ = run_filter(dataset, params, threads)
    return [r.track_estimates() for r in rounds]
