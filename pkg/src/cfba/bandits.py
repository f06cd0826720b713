"""Slate selection by upper confidence bound and Thompson sampling."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Union

import numpy as np

from .types import Gaussian, SCHEDULES


@dataclass(frozen=True, eq=False)
class Slate:
    """Ordered recommendation list with the score that ranked each item."""

    items: np.ndarray
    scores: np.ndarray

    def __post_init__(self):
        items = np.asarray(self.items, dtype=np.int64).reshape(-1)
        scores = np.asarray(self.scores, dtype=np.float64).reshape(-1)
        if items.shape != scores.shape:
            raise ValueError("items and scores must have equal length")
        if np.unique(items).size != items.size:
            raise ValueError("slate contains duplicate items")
        if np.any(np.diff(scores) > 0):
            raise ValueError("slate scores must be non-increasing")
        items.setflags(write=False)
        scores.setflags(write=False)
        object.__setattr__(self, "items", items)
        object.__setattr__(self, "scores", scores)

    def __len__(self):
        return self.items.size

    def __contains__(self, item):
        return bool(np.any(self.items == item))

    @property
    def top(self) -> int:
        return int(self.items[0])


ItemFactors = Union[np.ndarray, Iterable[tuple[int, np.ndarray]]]


def candidates(item_factors: ItemFactors, exclude: Optional[Iterable[int]] = None):
    """Resolve ``item_factors`` to ``(indices, matrix)`` minus excluded items.

    ``item_factors`` is either a ``(J, K)`` matrix whose row ``j`` belongs
    to item ``j``, or an iterable of ``(item index, vector)`` pairs.
    """
    if isinstance(item_factors, np.ndarray):
        mat = np.asarray(item_factors, dtype=np.float64)
        if mat.ndim != 2:
            raise ValueError("item factor matrix must be 2-d")
        idx = np.arange(mat.shape[0])
    elif isinstance(item_factors, tuple) and len(item_factors) == 2 \
            and isinstance(item_factors[1], np.ndarray) and item_factors[1].ndim == 2:
        idx = np.asarray(item_factors[0], dtype=np.int64)
        mat = np.asarray(item_factors[1], dtype=np.float64)
    else:
        pairs = list(item_factors)
        idx = np.array([int(p[0]) for p in pairs], dtype=np.int64)
        mat = np.array([np.asarray(p[1], dtype=np.float64) for p in pairs])
    if exclude:
        ex = np.fromiter(exclude, dtype=np.int64)
        keep = ~np.isin(idx, ex)
        idx, mat = idx[keep], mat[keep]
    if idx.size == 0:
        raise ValueError("empty candidate set")
    return idx, mat


def top_slate(idx: np.ndarray, scores: np.ndarray, slate_size: int,
              rng: Optional[np.random.Generator] = None) -> Slate:
    """Highest ``slate_size`` scores; ties go to the lower item index.

    Passing ``rng`` breaks ties uniformly at random instead.
    """
    if slate_size < 1:
        raise ValueError("slate_size must be >= 1")
    secondary = idx if rng is None else rng.permutation(idx.size)
    order = np.lexsort((secondary, -scores))[:slate_size]
    return Slate(idx[order], scores[order])


def exploration_rate(alpha: float, t: int, schedule: str = "log-t") -> float:
    """Exploration multiplier for period ``t`` (1-based)."""
    if t < 1:
        raise ValueError("t must be >= 1")
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    if schedule == "log-t":
        return alpha * np.sqrt(np.log(t))
    if schedule == "sqrt-t":
        return alpha * np.sqrt(t)
    if schedule == "constant":
        return float(alpha)
    raise ValueError(f"schedule must be one of {SCHEDULES}, got {schedule!r}")


def predictive_spread(cov: np.ndarray, mat: np.ndarray) -> np.ndarray:
    """``v_j^T Sigma v_j`` for every row of ``mat``."""
    return np.maximum(np.einsum("jk,kl,jl->j", mat, cov, mat), 0.0)


def ucb_scores(posterior: Gaussian, mat: np.ndarray, alpha_t: float,
               uncertainty: str = "std") -> np.ndarray:
    spread = predictive_spread(posterior.cov, mat)
    if uncertainty == "std":
        bonus = np.sqrt(spread)
    elif uncertainty == "var":
        bonus = spread
    else:
        raise ValueError("uncertainty must be 'std' or 'var'")
    return mat @ posterior.mean + alpha_t * bonus


def ucb_select(user_posterior: Gaussian, item_factors: ItemFactors, alpha_t: float,
               slate_size: int = 1, exclude: Optional[Iterable[int]] = None,
               uncertainty: str = "std", tie_rng: Optional[np.random.Generator] = None) -> Slate:
    """Rank items by predicted mean plus ``alpha_t`` times its standard deviation.

    ``uncertainty="var"`` uses the predictive variance as the bonus
    instead, for sensitivity checks.
    """
    idx, mat = candidates(item_factors, exclude)
    if mat.shape[1] != user_posterior.dim:
        raise ValueError("item factor length does not match the posterior dimension")
    return top_slate(idx, ucb_scores(user_posterior, mat, alpha_t, uncertainty), slate_size, tie_rng)


def ts_select(user_posterior: Gaussian, item_factors: ItemFactors, slate_size: int = 1,
              exclude: Optional[Iterable[int]] = None,
              seed: Union[int, np.random.Generator, None] = None) -> Slate:
    """Draw one user vector from the posterior and rank items greedily on it."""
    idx, mat = candidates(item_factors, exclude)
    if mat.shape[1] != user_posterior.dim:
        raise ValueError("item factor length does not match the posterior dimension")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    draw = user_posterior.sample(rng)
    return top_slate(idx, mat @ draw, slate_size)
