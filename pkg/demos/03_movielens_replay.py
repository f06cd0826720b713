"""Offline replay on MovieLens 100k.

Logged ratings cannot tell us how a user would have rated a movie they
never saw, so replay only counts the periods where the logged movie
happens to be in the slate the policy shows.  This demo holds out 100
long-history users, pretrains three methods on everyone else and
reports CAR at T=40 with a slate of ten, plus how many logged events
each policy managed to keep.  Watch that last column: ranking by raw
mean rating puts movies rated once or twice at the top, few held-out
users ever watched them, so popularity's CAR rests on a handful of
events and swings widely between splits.

Needs ``data/ml-100k`` (see tools/materialize_ml100k.py).

Run:  python3 demos/03_movielens_replay.py [path/to/ml-100k]
"""
import sys
from pathlib import Path

import numpy as np

from cfba import HyperParams, PolicySpec, build_policy, replay_evaluate
from cfba.data_io import load_movielens
from cfba.tuning import empirical_priors

root = Path(sys.argv[1] if len(sys.argv) > 1 else "data/ml-100k")
if not (root / "u.data").is_file():
    sys.exit(f"{root} has no u.data; run: python3 tools/materialize_ml100k.py {root}")

ds = load_movielens(root, standardize_age=True)
eligible = np.flatnonzero(ds.record_counts() > 40)
test = np.sort(np.random.default_rng(0).choice(eligible, 100, replace=False))
train = np.setdiff1d(np.arange(ds.feedback.n_users), test)
print(f"{ds.feedback.nnz} ratings; {eligible.size} users have more than 40, 100 held out")

fb = ds.feedback.subset_users(train)
d, a = ds.demographics.matrix[train], ds.attributes.matrix
priors = empirical_priors(fb, d, a)
h = HyperParams(k=3, sigma2=3.0, alpha=1.0, **{k: v for k, v in priors.items() if k.startswith("lambda")})
print("empirical prior precisions:", {k: round(v, 3) for k, v in priors.items() if k.startswith("lambda")})

logs = ds.user_logs(test)
for kind in ("random", "popularity", "cfba"):
    policy = build_policy(PolicySpec(kind, h), fb, d, a)
    rep = replay_evaluate(logs, policy, t=40, slate_size=10, seed=0)
    print(f"{kind:11s} CAR {rep.car:.3f}   events kept {int(rep.retained_counts.sum()):4d}")
