"""Synthetic scenarios: targets that drift locally and occasionally jump between rooms.

Locations are square rooms laid out side by side.  In every round the
robot observes one room (round-robin), each target in it is detected with
probability ``true_p_meas``, and a Poisson number of clutter detections with
uniform position and feature is added.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .model import Environment, FilterParams, Measurement, Round


@dataclass(frozen=True)
class SimConfig:
    n_locations: int = 3
    n_targets: int = 6
    n_rounds: int = 90
    true_p_jump: float = 0.05
    true_p_meas: float = 0.98
    sigma_q_true: float = 0.05
    sigma_r_true: float = 0.1
    clutter_rate: float = 2.0
    feature_dim: int = 4
    feature_cluster_spread: float = 1.0
    location_side_m: float = math.sqrt(20.0)
    rng_seed: int = 0

    def __post_init__(self):
        for name in ("n_locations", "n_targets", "n_rounds", "feature_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        for name in ("true_p_jump", "true_p_meas"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.clutter_rate < 0 or self.sigma_q_true < 0 or self.sigma_r_true < 0:
            raise ValueError("rates and noise levels must be non-negative")
        if self.feature_cluster_spread <= 0 or self.location_side_m <= 0:
            raise ValueError("feature spread and room size must be positive")

    @property
    def area(self) -> float:
        return self.location_side_m**2

    @property
    def feature_grid(self) -> int:
        """Points per axis of the lattice that target features are drawn from."""
        return max(2, math.ceil((4 * self.n_targets) ** (1.0 / self.feature_dim)))

    @property
    def feature_spacing(self) -> float:
        return 6.0 * self.feature_cluster_spread

    def feature_box(self) -> tuple[float, float]:
        pad = 3.0 * self.feature_cluster_spread
        return -pad, (self.feature_grid - 1) * self.feature_spacing + pad

    def feature_support(self) -> float:
        lo, hi = self.feature_box()
        return (hi - lo) ** self.feature_dim

    def environment(self) -> Environment:
        return Environment.uniform(self.n_locations, self.area)

    def filter_params(self, base: FilterParams | None = None, **overrides) -> FilterParams:
        """Filter parameters with the feature noise and clutter support this scenario implies."""
        base = base or FilterParams()
        return replace(
            base,
            feature_meas_cov=self.feature_cluster_spread**2,
            feature_support=self.feature_support(),
            **overrides,
        )


@dataclass(frozen=True)
class InitialTarget:
    label: int
    location: int
    position: np.ndarray
    feature: np.ndarray


@dataclass
class Dataset:
    environment: Environment
    feature_dim: int
    targets: list[InitialTarget]
    rounds: list[Round]


@dataclass(frozen=True)
class TargetTruth:
    location: int
    position: np.ndarray
    detected: bool
    measurement: int | None


@dataclass
class GroundTruth:
    """True target states per round (``states[k][j]``) and the observed location of each round."""

    time_steps: list[int] = field(default_factory=list)
    observed: list[int] = field(default_factory=list)
    states: list[list[TargetTruth]] = field(default_factory=list)
    annotations: list[list[tuple[int | None, np.ndarray]]] = field(default_factory=list)


def _room_origin(cfg: SimConfig, loc: int) -> np.ndarray:
    return np.array([loc * (cfg.location_side_m + 1.0), 0.0])


def generate(cfg: SimConfig) -> tuple[Dataset, GroundTruth]:
    """Sample one scenario and its ground truth."""
    rng = np.random.default_rng(cfg.rng_seed)
    side = cfg.location_side_m
    n, d = cfg.n_targets, cfg.feature_dim
    env = cfg.environment()

    grid = cfg.feature_grid
    cells = rng.choice(grid**d, size=n, replace=False)
    lattice = np.array(np.unravel_index(cells, (grid,) * d)).T
    true_feat = lattice * cfg.feature_spacing
    lo, hi = cfg.feature_box()

    loc = rng.integers(cfg.n_locations, size=n)
    local = rng.uniform(0.0, side, size=(n, 2))

    def world(j):
        return _room_origin(cfg, loc[j]) + local[j]

    spread = cfg.feature_cluster_spread
    initial = [
        InitialTarget(
            j, int(loc[j]),
            world(j) + cfg.sigma_r_true * rng.standard_normal(2),
            true_feat[j] + spread * rng.standard_normal(d),
        )
        for j in range(n)
    ]

    rounds: list[Round] = []
    truth = GroundTruth()
    for k in range(1, cfg.n_rounds + 1):
        jumps = rng.random(n) < cfg.true_p_jump
        new_loc = rng.integers(cfg.n_locations, size=n)
        new_pos = rng.uniform(0.0, side, size=(n, 2))
        drift = cfg.sigma_q_true * rng.standard_normal((n, 2))
        loc = np.where(jumps, new_loc, loc)
        local = np.where(jumps[:, None], new_pos, np.clip(local + drift, 0.0, side))

        obs = (k - 1) % cfg.n_locations
        detections = []
        for j in range(n):
            if loc[j] == obs and rng.random() < cfg.true_p_meas:
                pos = world(j) + cfg.sigma_r_true * rng.standard_normal(2)
                feat = true_feat[j] + spread * rng.standard_normal(d)
                detections.append((j, pos, feat))
        n_clutter = rng.poisson(cfg.clutter_rate)
        for _ in range(n_clutter):
            pos = _room_origin(cfg, obs) + rng.uniform(0.0, side, size=2)
            feat = rng.uniform(lo, hi, size=d)
            detections.append((None, pos, feat))
        order = rng.permutation(len(detections))
        detections = [detections[i] for i in order]

        meas = [Measurement(p, f, obs, k, lab) for lab, p, f in detections]
        rounds.append(Round(k, obs, tuple(meas)))
        index_of = {lab: i for i, (lab, _, _) in enumerate(detections) if lab is not None}
        truth.time_steps.append(k)
        truth.observed.append(obs)
        truth.states.append([
            TargetTruth(int(loc[j]), world(j).copy(), j in index_of, index_of.get(j))
            for j in range(n)
        ])
        truth.annotations.append([(lab, p.copy()) for lab, p, _ in detections])
    return Dataset(env, d, initial, rounds), truth


AXES = ("jump_rate", "n_targets", "n_particles", "grid")


@dataclass(frozen=True)
class SweepRun:
    axis: str
    value: float | tuple[float, float]
    value_index: int
    repeat: int
    eval: int
    sim: SimConfig
    params: FilterParams


def derive_seed(*key: int) -> int:
    return int(np.random.SeedSequence([abs(int(k)) for k in key]).generate_state(1, np.uint64)[0])


def sweep(
    base: SimConfig,
    axis: str,
    values: Sequence,
    repeats_per_value: int = 3,
    evals_per_sim: int = 10,
    params: FilterParams | None = None,
    derive_feature_model: bool = True,
) -> list[SweepRun]:
    """Enumerate every run of a parameter sweep with deterministic seeds.

    ``jump_rate`` and ``n_targets`` vary the simulation; ``n_particles``
    varies the filter and reuses one dataset per repeat; ``grid`` takes
    ``(p_jump, p_meas)`` pairs for the filter and also reuses datasets.
    With ``derive_feature_model`` the filter's feature noise and clutter
    support are taken from each simulation (see :meth:`SimConfig.filter_params`).
    """
    if axis not in AXES:
        raise ValueError(f"unknown sweep axis {axis!r}")
    if not values:
        raise ValueError("values must not be empty")
    base_params = params or FilterParams()
    runs = []
    for vi, value in enumerate(values):
        for r in range(repeats_per_value):
            shares_data = axis in ("n_particles", "grid")
            sim_seed = derive_seed(base.rng_seed, 1, 0 if shares_data else vi, r)
            sim = replace(base, rng_seed=sim_seed)
            if axis == "jump_rate":
                sim = replace(sim, true_p_jump=float(value))
            elif axis == "n_targets":
                sim = replace(sim, n_targets=int(value))
            for e in range(evals_per_sim):
                seed = derive_seed(base.rng_seed, 2, vi, r, e)
                if derive_feature_model:
                    fp = sim.filter_params(base_params, rng_seed=seed)
                else:
                    fp = replace(base_params, rng_seed=seed)
                if axis == "n_particles":
                    fp = replace(fp, num_particles=int(value))
                elif axis == "grid":
                    pj, pm = value
                    fp = replace(fp, p_jump=float(pj), p_meas=float(pm))
                runs.append(SweepRun(axis, value, vi, r, e, sim, fp))
    return runs
