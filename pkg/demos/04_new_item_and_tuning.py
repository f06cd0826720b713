"""Two smaller tools: cold-start items, and hyper-parameter search.

The session engine is symmetric.  A new *item* with known attributes
gets a prior from the attribute loadings, and each user who tries it
refines the item's latent vector, exactly as users are handled.

The second half runs a tiny grid search over K and the exploration
rate, scoring each point in closed loop on held-out training users.

Run:  python3 demos/04_new_item_and_tuning.py
"""
import numpy as np

from cfba import FeedbackMatrix, HyperParams, PolicySpec, fit, gen_nonlinear
from cfba.engine import init_session, ingest, snapshot_posterior
from cfba.tuning import GridSpec, TuningData, grid_search

world = gen_nonlinear(i=300, j=200, p=10, q=15, k=3, seed=11)
old_items = np.arange(1, world.n_items)
fb = world.feedback().dense()[:, old_items]

model = fit(FeedbackMatrix.from_dense(fb), world.d.matrix, world.a.matrix[old_items],
            HyperParams(k=3), sweeps=40)

# new item 0: prior from its attributes, then ten users rate it
state = init_session(world.a.matrix[0], pretrained=model, mode="new-item")
truth = world.utility[:, 0]
raters = np.random.default_rng(0).choice(world.n_users, 10, replace=False)
print("raters  corr(predicted, true) over all users")
for n in range(11):
    pred = model.factors.u @ snapshot_posterior(state).mean
    print(f"{n:6d}  {np.corrcoef(pred, truth)[0, 1]:.3f}")
    if n < 10:
        i = raters[n]
        ingest(state, model.factors.u, [(i, truth[i])])

# grid search for cfba on the same world
data = TuningData(world.feedback(), world.d.matrix, world.a.matrix, utility=world.utility)
grid = GridSpec(k_values=(2, 3, 5), alpha_values=(0.0, 1.0, 3.0), sigma2_values=(1.0,))
result = grid_search(data, "cfba", grid, seed=0, base=PolicySpec("cfba", sweeps=20), t=10)
print("\n k  alpha  validation CAR")
for k, alpha, _, score in result.table:
    print(f"{k:2d}  {alpha:5.1f}  {score:.3f}")
print(f"chosen: K={result.best.k}, alpha={result.best.alpha}")
