"""Walkthrough: simulate a household, track it, and score the result.

Run with ``python demos/tracking_walkthrough.py``.  Takes a few seconds.
"""
# %% A small world: three rooms, six objects, a visit to one room per step.
import numpy as np

from jumptrack.evaluation import baseline_track, frames_from_truth, mot_evaluate
from jumptrack.simulator import SimConfig, generate
from jumptrack.tracking import run_filter

cfg = SimConfig(n_targets=6, n_rounds=60, true_p_jump=0.05, rng_seed=7)
dataset, truth = generate(cfg)
print(f"{len(dataset.targets)} objects, {len(dataset.rounds)} rounds over {dataset.environment.n_locations} rooms")

jumps = sum(a.location != b.location for s0, s1 in zip(truth.states, truth.states[1:]) for a, b in zip(s0, s1))
print(f"objects changed room {jumps} times, almost always while nobody was looking")

# %% Run the filter.  The simulator knows its own feature noise, so let it set the filter's feature model.
params = cfg.filter_params(num_particles=300)
rounds, summary = run_filter(dataset, params)
print(f"filter finished: {summary}")

# %% Peek at what the filter believes about object 0 at a few points in time.
for k, tr in list(enumerate(rounds))[::15]:
    marginal = {("unknown" if loc < 0 else loc): round(p, 3) for loc, p in sorted(tr.marginals[0].items()) if p > 0.001}
    true_loc = truth.states[k][0].location
    print(f"t={tr.time_step:3d} observed room {tr.observed_location}: P(room) = {marginal}, truly in {true_loc}")

# %% Score against ground truth and against the nearest-feature baseline tracker.
frames = frames_from_truth(truth)
ours = mot_evaluate([tr.track_estimates() for tr in rounds], frames)
base = mot_evaluate(baseline_track(dataset, feature_threshold=3.0), frames)
for name, rep in (("particle filter", ours), ("baseline", base)):
    print(f"{name:16s} MOTA {rep.mota:6.3f}  MOTP {rep.motp_m:.3f} m  "
          f"miss {rep.miss_rate:.3f}  fp {rep.false_positive_rate:.3f}  mismatch {rep.mismatch_rate:.3f}")

# %% Stretch the feature space by 1.5x (same seed, so the same world).  The filter's feature model comes
# from the simulator config and scales along; the baseline's hand-set threshold does not, and it loses objects.
stretched = SimConfig(n_targets=6, n_rounds=60, feature_cluster_spread=1.5, rng_seed=7)
ds2, gt2 = generate(stretched)
frames2 = frames_from_truth(gt2)
ours2 = mot_evaluate([tr.track_estimates() for tr in run_filter(ds2, stretched.filter_params())[0]], frames2)
base2 = mot_evaluate(baseline_track(ds2, feature_threshold=3.0), frames2)
print(f"stretched features: filter MOTA {ours2.mota:.3f}, baseline MOTA {base2.mota:.3f}")
print("miss / mismatch rates, filter:", np.round([ours2.miss_rate, ours2.mismatch_rate], 3),
      "baseline:", np.round([base2.miss_rate, base2.mismatch_rate], 3))
