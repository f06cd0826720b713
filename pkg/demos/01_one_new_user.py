"""Follow one newcomer through fifteen periods of recommendations.

We build a small shared-latent world, fit the factor model on the
existing users, then start a session for a user the model has never
seen.  Users here carry only two demographic columns for a
three-dimensional taste, so demographics narrow the taste down without
fixing it; the remaining direction has to be learned from feedback.
Each period the session recommends one item, observes how much the
user liked it, and tightens its belief.

Run:  python3 demos/01_one_new_user.py
"""
import warnings

import numpy as np

from cfba import HyperParams, fit, gen_nonlinear
from cfba.engine import init_session, refresh, snapshot_posterior, step

world = gen_nonlinear(i=400, j=300, p=2, q=30, k=3, seed=7)
newcomers = np.arange(20)
# K above the demographic width is the point of this world, so silence the fit's warning
warnings.filterwarnings("ignore", message="K=3 exceeds")
existing = np.arange(20, world.n_users)

model = fit(world.feedback(existing), world.d.matrix[existing], world.a.matrix,
            HyperParams(k=3, alpha=1.0), sweeps=40)
print(f"fitted on {existing.size} users; final objective {model.objective_trace[-1]:.1f}")

# one user in detail
truth = world.utility[newcomers[0]]
state = init_session(world.d.matrix[newcomers[0]], pretrained=model)
refresh(state)
guess = model.factors.v @ snapshot_posterior(state).mean
print(f"demographic-only guess vs true utility: correlation {np.corrcoef(guess, truth)[0, 1]:.2f}")

ideal = np.sort(truth)[::-1]
print("\nperiod  item  utility  oracle  posterior-sd")
for period in range(1, 16):
    out = step(state, model.factors.v, lambda slate: [(slate.top, truth[slate.top])],
               exclude=state.consumed)
    spread = np.sqrt(np.trace(out.posterior.cov))
    print(f"{period:6d}  {out.slate.top:4d}  {truth[out.slate.top]:7.2f}  {ideal[period - 1]:6.2f}"
          f"  {spread:12.3f}")
final = model.factors.v @ out.posterior.mean
print(f"after 15 periods: correlation {np.corrcoef(final, truth)[0, 1]:.2f}")

# the same before/after comparison averaged over twenty newcomers
before, after = [], []
for user in newcomers:
    truth = world.utility[user]
    state = init_session(world.d.matrix[user], pretrained=model)
    refresh(state)
    before.append(np.corrcoef(model.factors.v @ snapshot_posterior(state).mean, truth)[0, 1])
    for _ in range(15):
        out = step(state, model.factors.v, lambda slate: [(slate.top, truth[slate.top])],
                   exclude=state.consumed)
    after.append(np.corrcoef(model.factors.v @ out.posterior.mean, truth)[0, 1])
print(f"\n20 newcomers, mean correlation: {np.mean(before):.2f} before, {np.mean(after):.2f} after")
