"""Hyper-parameter selection.

Prior precisions come straight from moments of the training data.  The
latent dimension, exploration rate and noise variance are chosen by
grid search: policies are pretrained on a calibration share of the
training users and scored on the remaining validation users.
"""
from __future__ import annotations

import csv
import io
import itertools
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .baselines import PolicySpec, build_policy
from .evaluation import UserLog, replay_evaluate, report_from_trajectory
from .simulation import closed_loop
from .types import FeedbackMatrix, HyperParams

LAMBDA_CAP = 1e6
METRICS = ("car", "chpr")
# kinds whose models have no latent dimension, so the K axis is collapsed
_NO_K = ("random", "popularity", "ts", "ucb", "ts-pca", "ucb-pca")
_NO_ALPHA = ("random", "popularity", "active-learning", "ts", "ts-pca")
_NO_SIGMA2 = ("random", "popularity")


@dataclass(frozen=True)
class GridSpec:
    k_values: tuple
    alpha_values: tuple
    sigma2_values: tuple
    metric: str = "car"

    def __post_init__(self):
        for name in ("k_values", "alpha_values", "sigma2_values"):
            values = tuple(getattr(self, name))
            if not values:
                raise ValueError(f"{name} must be nonempty")
            object.__setattr__(self, name, values)
        if self.metric not in METRICS:
            raise ValueError(f"metric must be one of {METRICS}")

    def points(self):
        return itertools.product(self.k_values, self.alpha_values, self.sigma2_values)


def _log_ints(lo: int, hi: int, n: int) -> tuple[int, ...]:
    if hi - lo + 1 <= n:
        return tuple(range(lo, hi + 1))
    grid = np.unique(np.round(np.geomspace(lo, hi, n)).astype(int))
    # rounding can merge neighbours; top up from the unused integers in order
    extra = (x for x in range(lo, hi + 1) if x not in set(grid))
    while grid.size < n:
        grid = np.unique(np.append(grid, next(extra)))
    return tuple(int(x) for x in grid)


def default_grids(p: int, q: int, metric: str = "car") -> GridSpec:
    """Up to eight candidates per axis over the recommended ranges.

    K spans 2 to half the smaller side dimension, α is evenly spaced over
    [0, 10], and σ² is log-spaced over [0.1, 100].
    """
    k_max = min(p, q) // 2
    ks = (2,) if k_max < 2 else _log_ints(2, k_max, 8)
    alphas = tuple(float(x) for x in np.linspace(0.0, 10.0, 8))
    sigmas = tuple(float(x) for x in np.geomspace(0.1, 100.0, 8))
    return GridSpec(ks, alphas, sigmas, metric)


def _mean_group_variance(groups: np.ndarray, values: np.ndarray, n_groups: int) -> Optional[float]:
    count = np.bincount(groups, minlength=n_groups).astype(float)
    s1 = np.bincount(groups, weights=values, minlength=n_groups)
    s2 = np.bincount(groups, weights=values ** 2, minlength=n_groups)
    ok = count >= 2
    if not ok.any():
        return None
    # unbiased per-group variance; sums of squares are centered per group first
    mean = s1[ok] / count[ok]
    var = np.maximum(s2[ok] - count[ok] * mean ** 2, 0.0) / (count[ok] - 1)
    return float(var.mean())


def _precision(variance: Optional[float]) -> float:
    if variance is None or variance <= 1.0 / LAMBDA_CAP:
        return LAMBDA_CAP
    return 1.0 / variance


def empirical_priors(training: FeedbackMatrix, d: Optional[np.ndarray] = None,
                     a: Optional[np.ndarray] = None) -> dict:
    """Precisions as the inverse of average variances, plus per-item popularity.

    Variances are unbiased (``ddof=1``).  Users and items with fewer than
    two observations contribute nothing; a zero average variance maps
    to ``LAMBDA_CAP``.
    """
    if training.nnz == 0:
        raise ValueError("training matrix has no observed feedback")
    out = {
        "lambda_u": _precision(_mean_group_variance(training.rows, training.values, training.n_users)),
        "lambda_v": _precision(_mean_group_variance(training.cols, training.values, training.n_items)),
    }
    for name, mat in (("lambda_w", d), ("lambda_psi", a)):
        if mat is not None:
            mat = np.asarray(getattr(mat, "matrix", mat), dtype=np.float64)
            var = float(np.var(mat, axis=0, ddof=1).mean()) if mat.shape[0] >= 2 else None
            out[name] = _precision(var)
    total = np.bincount(training.cols, weights=training.values, minlength=training.n_items)
    count = np.bincount(training.cols, minlength=training.n_items)
    pop = np.full(training.n_items, float(training.values.mean()))
    pop[count > 0] = total[count > 0] / count[count > 0]
    out["popularity"] = pop
    return out


# ---------------------------------------------------------------------------
# grid search


@dataclass(frozen=True, eq=False)
class TuningData:
    """Training users, with either replay logs or their full utility rows.

    With ``logs`` the validation score is a replay; with ``utility`` each
    validation user is simulated in closed loop, the limit of a replay
    where every recommended item has a recorded response.
    """

    feedback: FeedbackMatrix
    demographics: Optional[np.ndarray]
    attributes: Optional[np.ndarray]
    logs: Optional[Sequence[UserLog]] = None
    utility: Optional[np.ndarray] = None

    def __post_init__(self):
        if (self.logs is None) == (self.utility is None):
            raise ValueError("provide exactly one of logs or utility")


@dataclass(frozen=True, eq=False)
class TuningResult:
    best: HyperParams
    best_score: float
    table: list = field(default_factory=list)

    def table_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["k", "alpha", "sigma2", "score"])
        for k, alpha, s2, score in self.table:
            writer.writerow([k, repr(float(alpha)), repr(float(s2)), repr(float(score))])
        return buf.getvalue()


def _feasible_k(k: int, data: TuningData, n_cal: int) -> bool:
    sides = [m.shape[1] for m in (data.demographics, data.attributes) if m is not None]
    limit = min([n_cal, data.feedback.n_items, *sides])
    return 1 <= k <= limit


def _score(metric: str, report) -> float:
    if metric == "car":
        return float(report.car) if np.isfinite(report.car) else -np.inf
    # running mean over periods of the share of users with a kept event
    traj = report.trajectory
    hits = np.array([np.asarray(r, bool) for r in traj.retained], dtype=float)
    return float(hits.mean(axis=0).mean())


def _axes(kind: str, grid: GridSpec):
    ks = grid.k_values[:1] if kind in _NO_K else grid.k_values
    alphas = grid.alpha_values[:1] if kind in _NO_ALPHA else grid.alpha_values
    sigmas = grid.sigma2_values[:1] if kind in _NO_SIGMA2 else grid.sigma2_values
    return ks, alphas, sigmas


def grid_search(data: TuningData, kind: str, grid: GridSpec, split_fraction: float = 0.8,
                seed: int = 0, base: Optional[PolicySpec] = None, t: int = 15,
                slate_size: int = 1) -> TuningResult:
    """Pick (K, α, σ²) for ``kind`` by validation score.

    Users are shuffled with ``seed`` and the first ``split_fraction`` of
    them pretrain the policy.  The best score wins; ties go to smaller K,
    then smaller α, then smaller σ².  Axes a method does not use are
    collapsed to their first value; the PCA variants keep the component
    count of ``base`` (``pca_components``, else ``base.h.k``).
    """
    if not 0.0 < split_fraction < 1.0:
        raise ValueError("split_fraction must lie in (0, 1)")
    base = base or PolicySpec(kind)
    n = data.feedback.n_users
    perm = np.random.default_rng(seed).permutation(n)
    n_cal = int(round(split_fraction * n))
    if not 0 < n_cal < n:
        raise ValueError("split leaves an empty calibration or validation set")
    cal, val = np.sort(perm[:n_cal]), np.sort(perm[n_cal:])
    fb = data.feedback.subset_users(cal)
    d_cal = None if data.demographics is None else data.demographics[cal]

    ks, alphas, sigmas = _axes(kind, grid)
    ks = tuple(k for k in ks if kind in _NO_K or _feasible_k(k, data, n_cal))
    if not ks:
        raise ValueError("no feasible K left in the grid")

    cache: dict = {}
    table = []
    for k, alpha, s2 in itertools.product(ks, alphas, sigmas):
        h = base.h.replace(k=int(k) if kind not in _NO_K else base.h.k,
                           alpha=float(alpha), sigma2=float(s2))
        spec = replace(base, kind=kind, h=h)
        policy = build_policy(spec, fb, d_cal, data.attributes, seed=seed, cache=cache)
        if data.logs is not None:
            logs = [data.logs[i] for i in val]
            report = replay_evaluate(logs, policy, t, slate_size, seed)
        else:
            ctx = None if data.demographics is None else data.demographics[val]
            traj = closed_loop(policy, data.utility[val], ctx, t, slate_size, seed, users=val)
            report = report_from_trajectory(traj, t, kind, seed, slate_size)
        table.append((int(k), float(alpha), float(s2), _score(grid.metric, report)))

    best = min(table, key=lambda row: (-row[3], row[0], row[1], row[2]))
    best_h = base.h.replace(k=best[0] if kind not in _NO_K else base.h.k,
                            alpha=best[1], sigma2=best[2])
    return TuningResult(best_h, best[3], table)
