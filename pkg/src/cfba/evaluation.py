"""Offline replay and performance metrics."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .bandits import Slate
from .baselines import Policy
from .simulation import Trajectory

REPORT_COLUMNS = ("method", "T", "period", "metric", "value", "seed")


def car(rewards: Sequence[Sequence[float]]) -> float:
    """Average over users of each user's mean observed reward.

    Users without any observed reward are left out of the average
    entirely.
    """
    means = [float(np.mean(r)) for r in rewards if len(r)]
    if not means:
        raise ValueError("no observed feedback")
    return float(np.mean(means))


def car_curve(rewards: Sequence[Sequence[float]], periods: Sequence[Sequence[int]],
              t: int) -> np.ndarray:
    """``car`` restricted to events up to each period ``1..t`` (NaN while nothing is observed).

    ``periods[n]`` holds the 1-based period of every reward of user ``n``.
    """
    out = np.full(t, np.nan)
    pairs = [(np.asarray(r, float), np.asarray(p, int)) for r, p in zip(rewards, periods)]
    for tau in range(1, t + 1):
        cut = [r[p <= tau] for r, p in pairs]
        if any(len(c) for c in cut):
            out[tau - 1] = car(cut)
    return out


@dataclass(frozen=True, eq=False)
class MetricReport:
    car: float
    per_period: np.ndarray
    retained_counts: np.ndarray
    metadata: dict = field(default_factory=dict)
    trajectory: Optional[Trajectory] = None

    def __post_init__(self):
        t = self.metadata.get("T")
        if t is not None and len(self.per_period) > t:
            raise ValueError("per_period is longer than the horizon")

    def rows(self) -> list[tuple]:
        """Long-format rows in :data:`REPORT_COLUMNS` order."""
        md = self.metadata
        method, t, seed = md.get("method", ""), md.get("T", len(self.per_period)), md.get("seed", "")
        out = [(method, t, p + 1, "car", float(v), seed) for p, v in enumerate(self.per_period)]
        out.append((method, t, t, "retained", float(np.sum(self.retained_counts)), seed))
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(REPORT_COLUMNS)
        for row in self.rows():
            writer.writerow(row[:4] + (repr(row[4]),) + row[5:])
        return buf.getvalue()


def report_from_trajectory(traj: Trajectory, t: int, method: str = "", seed=0,
                           slate_size: Optional[int] = None) -> MetricReport:
    rewards, periods = [], []
    for r, keep in zip(traj.rewards, traj.retained):
        keep = np.asarray(keep, bool)
        rewards.append(np.asarray(r, float)[keep])
        periods.append(np.nonzero(keep)[0] + 1)
    curve = car_curve(rewards, periods, t)
    counts = np.array([len(r) for r in rewards])
    meta = {"method": method or traj.method, "T": t, "seed": seed, "slate_size": slate_size}
    overall = car(rewards) if counts.any() else float("nan")
    return MetricReport(overall, curve, counts, meta, traj)


# ---------------------------------------------------------------------------
# replay


@dataclass(frozen=True, eq=False)
class UserLog:
    """One user's history in period order: the item and value of each event."""

    user: int
    items: np.ndarray
    values: np.ndarray
    context: Optional[np.ndarray] = None

    def __post_init__(self):
        items = np.asarray(self.items, dtype=np.int64).reshape(-1)
        values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if items.shape != values.shape:
            raise ValueError("items and values must have equal length")
        object.__setattr__(self, "items", items)
        object.__setattr__(self, "values", values)

    def __len__(self):
        return self.items.size


def replay_evaluate(log: Sequence[UserLog], policy: Policy, t: int, slate_size: int = 10,
                    seed: int = 0, method: str = "", exclude_consumed: bool = False) -> MetricReport:
    """Score ``policy`` on logged data by keeping only the events it would have shown.

    In period ``p`` every user's ``p``-th logged event is kept when its
    item is in the slate the policy emits for that user; kept events are
    the user's rewards and are fed back to the policy at once, while
    every other event is discarded unseen.
    """
    log = list(log)
    if not log or all(len(u) == 0 for u in log):
        raise ValueError("empty log")
    if t < 1:
        raise ValueError("t must be >= 1")
    streams = np.random.SeedSequence(seed).spawn(len(log))
    sessions = [policy.new_session(u.context, np.random.default_rng(s), user=u.user)
                for u, s in zip(log, streams)]
    rewards = [np.full(t, np.nan) for _ in log]
    retained = [np.zeros(t, dtype=bool) for _ in log]
    slates: list[list[Slate]] = [[] for _ in log]
    consumed = [set() for _ in log]
    for period in range(t):
        for n, (user_log, session) in enumerate(zip(log, sessions)):
            slate = session.select(slate_size, consumed[n] if exclude_consumed else None)
            slates[n].append(slate)
            choices = []
            if period < len(user_log):
                item = int(user_log.items[period])
                if item in slate:
                    value = float(user_log.values[period])
                    rewards[n][period] = value
                    retained[n][period] = True
                    choices.append((item, value))
                    consumed[n].add(item)
            session.observe(choices)
        policy.end_period(period + 1, sessions)
    users = np.array([u.user for u in log])
    traj = Trajectory(users, rewards, retained, slates, method or getattr(policy, "kind", ""))
    return report_from_trajectory(traj, t, traj.method, seed, slate_size)


# ---------------------------------------------------------------------------
# field-experiment metrics


def hpr(purchases: np.ndarray) -> float:
    """Share of (user, homepage item) cells that turned into a purchase."""
    purchases = np.asarray(purchases, dtype=np.float64)
    if purchases.ndim != 2 or 0 in purchases.shape:
        raise ValueError("purchases must be a non-empty users x items matrix")
    return float(purchases.sum() / purchases.size)


def chpr(hpr_series: Sequence[float], t: int) -> float:
    """Running mean of the first ``t`` per-period rates."""
    series = np.asarray(hpr_series, dtype=np.float64)
    if t < 1 or t > series.size:
        raise ValueError(f"t={t} outside the series of length {series.size}")
    return float(np.sum(series[:t]) / t)


def ndcg(slate: Slate | Sequence[int], relevance, cutoff: int) -> float:
    """Normalized discounted cumulative gain of ``slate`` at ``cutoff``.

    ``relevance`` maps item index to gain (a dict, or an array indexed
    by item); missing items have gain 0.
    """
    if cutoff < 1:
        raise ValueError("cutoff must be >= 1")
    items = slate.items if isinstance(slate, Slate) else np.asarray(slate, dtype=np.int64)
    if isinstance(relevance, dict):
        gain_of = lambda j: float(relevance.get(int(j), 0.0))
        all_gains = np.array(list(relevance.values()), dtype=np.float64)
    else:
        rel = np.asarray(relevance, dtype=np.float64)
        gain_of = lambda j: float(rel[j]) if 0 <= j < rel.size else 0.0
        all_gains = rel
    gains = np.array([gain_of(j) for j in items[:cutoff]])
    discounts = 1.0 / np.log2(np.arange(2, cutoff + 2))
    dcg = float(np.sum(gains * discounts[:gains.size]))
    ideal = np.sort(all_gains)[::-1][:cutoff]
    idcg = float(np.sum(ideal * discounts[:ideal.size]))
    return 0.0 if idcg <= 0 else dcg / idcg


def search_concentration(slates: Sequence[Sequence[Slate]],
                         phases: Sequence[tuple[int, int]]) -> np.ndarray:
    """Distinct items shown to each user within each phase.

    Phases are inclusive 1-based period ranges ``(first, last)``; the
    result is a ``users x phases`` integer array.
    """
    spans = sorted((int(a), int(b)) for a, b in phases)
    for a, b in spans:
        if a < 1 or b < a:
            raise ValueError(f"invalid phase ({a}, {b})")
    for (_, b1), (a2, _) in zip(spans, spans[1:]):
        if a2 <= b1:
            raise ValueError("phases overlap")
    out = np.zeros((len(slates), len(phases)), dtype=np.int64)
    for n, user_slates in enumerate(slates):
        for m, (a, b) in enumerate(phases):
            seen = set()
            for s in user_slates[a - 1:b]:
                seen.update(int(j) for j in (s.items if isinstance(s, Slate) else s))
            out[n, m] = len(seen)
    return out
