"""Compare every method on a synthetic world, in closed loop.

Eighty users are held out as newcomers.  Each method is pretrained on
the remaining users and then recommends one item per period to each
newcomer; the reward is the true utility of that item.  The table shows
cumulative average reward (the mean, over newcomers, of each one's
average reward so far) after periods 1, 5 and 15.

The worlds here are smaller than the full-size experiment so the
script finishes in well under a minute.  Pass ``linear`` as the first
argument to switch worlds.

Run:  python3 demos/02_synthetic_comparison.py [linear|nonlinear]
"""
import sys

from cfba import POLICY_KINDS, HyperParams, PolicySpec, run_simulation
from cfba.evaluation import report_from_trajectory
from cfba.simulation import generate

setting = sys.argv[1] if len(sys.argv) > 1 else "nonlinear"
world = generate(setting, seed=3, i=400, j=400, p=20, q=60)
print(f"{setting} world: {world.n_users} users x {world.n_items} items, "
      f"utility sd {world.utility.std():.2f}")

cache = {}
rows = []
for kind in (*POLICY_KINDS, "oracle"):
    policy = kind if kind == "oracle" else PolicySpec(kind, HyperParams(k=5), sweeps=30)
    traj = run_simulation(world, policy, new_user_count=80, t=15, seed=0, cache=cache)
    curve = report_from_trajectory(traj, 15).per_period
    rows.append((kind, curve[0], curve[4], curve[14]))

print(f"\n{'method':16s} {'T=1':>7s} {'T=5':>7s} {'T=15':>7s}")
for kind, c1, c5, c15 in sorted(rows, key=lambda r: -r[3]):
    print(f"{kind:16s} {c1:7.2f} {c5:7.2f} {c15:7.2f}")
