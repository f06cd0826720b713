"""Synthetic worlds and the closed-loop cold-start simulation.

Two generators are provided.  The *linear* world draws preferences over
item categories from user demographics; the *nonlinear* world draws
users, items and both side matrices from one shared low-rank latent
space.  :func:`run_simulation` then holds out a random set of users,
pretrains a policy on the rest, and lets it recommend to every held-out
user for ``t`` periods.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np

from .bandits import Slate, top_slate
from .baselines import Policy, PolicySpec, Session, build_policy
from .types import Attributes, Demographics, FeedbackMatrix, HyperParams

SETTINGS = ("linear", "nonlinear")


@dataclass(frozen=True, eq=False)
class SyntheticWorld:
    utility: np.ndarray
    d: Demographics
    a: Attributes
    truth: dict
    setting: str
    seed: int

    def __post_init__(self):
        u = np.asarray(self.utility, dtype=np.float64)
        if u.shape != (len(self.d), len(self.a)):
            raise ValueError(f"utility shape {u.shape} does not match "
                             f"{len(self.d)} demographic rows and {len(self.a)} attribute rows")
        u.setflags(write=False)
        object.__setattr__(self, "utility", u)

    @property
    def n_users(self) -> int:
        return self.utility.shape[0]

    @property
    def n_items(self) -> int:
        return self.utility.shape[1]

    def feedback(self, users=None) -> FeedbackMatrix:
        """Fully observed feedback for ``users`` (all users by default)."""
        rows = np.arange(self.n_users) if users is None else np.asarray(users)
        return FeedbackMatrix.from_dense(self.utility[rows])


def demographic_blocks(p: int) -> tuple[int, int, int]:
    """Column counts of the (gender, income, location) blocks for ``p`` columns."""
    income = math.ceil(p / 10)
    location = p - 1 - income
    if p < 3 or location < 1:
        raise ValueError(f"p={p} is too small for gender, income and location blocks (need p >= 3)")
    return 1, income, location


def _one_hot(rng, n: int, width: int) -> np.ndarray:
    out = np.zeros((n, width))
    out[np.arange(n), rng.integers(0, width, size=n)] = 1.0
    return out


def gen_linear(i: int = 1000, j: int = 1000, p: int = 50, q: int = 300, seed: int = 0,
               noise: bool = True) -> SyntheticWorld:
    """Category-preference world.

    Each user has a Bernoulli(0.5) gender flag, one income level and one
    location.  Each item falls in exactly one of ``q + 1`` slots: one of
    the ``q`` categories, or the baseline slot that the intercept column
    of the extended attribute matrix represents.  A user's taste for each
    slot is linear in their demographics plus noise, and the utility of
    an item is the taste for its slot plus noise.

    ``noise=False`` zeroes both noise terms so ``utility == D @ gamma @ a_ext.T``.
    """
    if min(i, j) < 1 or q < 1:
        raise ValueError("i, j and q must be >= 1")
    _, n_income, n_loc = demographic_blocks(p)
    rng = np.random.default_rng(seed)
    gender = rng.binomial(1, 0.5, size=(i, 1)).astype(float)
    d = np.hstack([gender, _one_hot(rng, i, n_income), _one_hot(rng, i, n_loc)])
    a_ext = _one_hot(rng, j, q + 1)
    gamma = rng.standard_normal((p, q + 1))
    e = rng.standard_normal((i, q + 1)) if noise else np.zeros((i, q + 1))
    beta = d @ gamma + e
    eps = rng.standard_normal((i, j)) if noise else np.zeros((i, j))
    utility = beta @ a_ext.T + eps
    truth = {"gamma": gamma, "beta": beta, "a_ext": a_ext}
    return SyntheticWorld(utility, Demographics(d), Attributes(a_ext[:, 1:]), truth, "linear", seed)


def gen_nonlinear(i: int = 1000, j: int = 1000, p: int = 50, q: int = 300, k: int = 5,
                  seed: int = 0, noise: bool = True) -> SyntheticWorld:
    """Shared-latent world: ``D = U W^T``, ``A = V Psi^T``, ``utility = U V^T + eps``."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if min(i, j, p, q) < 1:
        raise ValueError("i, j, p and q must be >= 1")
    rng = np.random.default_rng(seed)
    u = rng.standard_normal((i, k))
    v = rng.standard_normal((j, k))
    w = rng.standard_normal((p, k))
    psi = rng.standard_normal((q, k))
    eps = rng.standard_normal((i, j)) if noise else np.zeros((i, j))
    truth = {"u": u, "v": v, "w": w, "psi": psi, "k": k}
    return SyntheticWorld(u @ v.T + eps, Demographics(u @ w.T), Attributes(v @ psi.T),
                          truth, "nonlinear", seed)


def generate(setting: str, seed: int = 0, **sizes) -> SyntheticWorld:
    if setting == "linear":
        sizes.pop("k", None)
        return gen_linear(seed=seed, **sizes)
    if setting == "nonlinear":
        return gen_nonlinear(seed=seed, **sizes)
    raise ValueError(f"setting must be one of {SETTINGS}, got {setting!r}")


# ---------------------------------------------------------------------------
# closed loop


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Per-user reward sequences, retention flags and slate logs for one run."""

    users: np.ndarray
    rewards: list
    retained: list
    slates: list
    method: str = ""

    def __post_init__(self):
        if not len(self.users) == len(self.rewards) == len(self.retained) == len(self.slates):
            raise ValueError("trajectory fields must have one entry per user")

    @property
    def horizon(self) -> int:
        return max((len(s) for s in self.slates), default=0)


class _OracleSession(Session):
    def __init__(self, utility_row: np.ndarray):
        self.row = utility_row

    def select(self, slate_size=1, exclude=None):
        idx = np.arange(self.row.size)
        if exclude:
            idx = idx[~np.isin(idx, np.fromiter(exclude, dtype=np.int64))]
        return top_slate(idx, self.row[idx], slate_size)


class OraclePolicy(Policy):
    """Clairvoyant reference: always recommends the best remaining item."""

    kind = "oracle"

    def __init__(self, utility: np.ndarray):
        super().__init__()
        self.utility = np.asarray(utility)

    def new_session(self, context=None, seed=None, user=None):
        if user is None:
            raise ValueError("the oracle needs the world index of the user")
        return _OracleSession(self.utility[user])


def split_users(n_users: int, new_user_count: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Random (training, new) partition of ``range(n_users)``; both sides sorted."""
    if not 0 < new_user_count < n_users:
        raise ValueError(f"new_user_count must lie in (0, {n_users}), got {new_user_count}")
    perm = np.random.default_rng(seed).permutation(n_users)
    return np.sort(perm[new_user_count:]), np.sort(perm[:new_user_count])


PolicyLike = Union[Policy, PolicySpec, str, Callable[..., Policy]]


def _materialize(policy: PolicyLike, world: SyntheticWorld, train: np.ndarray, seed: int,
                 cache: Optional[dict]) -> Policy:
    if isinstance(policy, Policy):
        return policy
    if isinstance(policy, str):
        if policy == "oracle":
            return OraclePolicy(world.utility)
        policy = PolicySpec(policy)
    if isinstance(policy, PolicySpec):
        return build_policy(policy, world.feedback(train), world.d.matrix[train], world.a.matrix,
                            seed=seed, cache=cache)
    return policy(world.feedback(train), world.d.matrix[train], world.a.matrix)


def run_simulation(world: SyntheticWorld, policy: PolicyLike, new_user_count: int = 200,
                   t: int = 15, slate_size: int = 1, seed: int = 0,
                   exclude_consumed: bool = True, cache: Optional[dict] = None) -> Trajectory:
    """Recommend to ``new_user_count`` held-out users for ``t`` periods each.

    ``policy`` is a ready :class:`Policy`, a :class:`PolicySpec` or kind
    name (pretrained here on the remaining users' full utility rows), or
    a factory ``f(feedback, demographics, attributes) -> Policy``.  The
    reward of a period is the utility of the top item of the slate, and
    that single choice is the feedback the policy sees.
    """
    if t < 1:
        raise ValueError("t must be >= 1")
    if slate_size < 1:
        raise ValueError("slate_size must be >= 1")
    train, new = split_users(world.n_users, new_user_count, seed)
    pol = _materialize(policy, world, train, seed, cache)
    return closed_loop(pol, world.utility[new], world.d.matrix[new], t, slate_size, seed,
                       exclude_consumed, users=new)


def closed_loop(policy: Policy, utility: np.ndarray, contexts: Optional[np.ndarray], t: int,
                slate_size: int = 1, seed: int = 0, exclude_consumed: bool = True,
                users: Optional[np.ndarray] = None) -> Trajectory:
    """Run ``policy`` against known utility rows, one session per row, periods outermost."""
    if t < 1:
        raise ValueError("t must be >= 1")
    n_users = utility.shape[0]
    users = np.arange(n_users) if users is None else np.asarray(users)
    streams = np.random.SeedSequence(seed).spawn(n_users)
    sessions = [policy.new_session(None if contexts is None else contexts[n],
                                   np.random.default_rng(streams[n]), user=int(users[n]))
                for n in range(n_users)]
    rewards = [np.empty(t) for _ in range(n_users)]
    slates: list[list[Slate]] = [[] for _ in range(n_users)]
    consumed = [set() for _ in range(n_users)]
    for period in range(t):
        for n, session in enumerate(sessions):
            slate = session.select(slate_size, consumed[n] if exclude_consumed else None)
            item = slate.top
            value = float(utility[n, item])
            rewards[n][period] = value
            slates[n].append(slate)
            consumed[n].add(item)
            session.observe([(item, value)])
        policy.end_period(period + 1, sessions)
    retained = [np.ones(t, dtype=bool) for _ in range(n_users)]
    return Trajectory(users, rewards, retained, slates, getattr(policy, "kind", ""))
