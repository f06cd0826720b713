"""Core data containers shared across the package.

Everything here is treated as immutable once constructed: arrays are
stored read-only so instances can be shared between sessions.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

import numpy as np

SCHEDULES = ("log-t", "sqrt-t", "constant")


def _frozen(arr, dtype=np.float64) -> np.ndarray:
    out = np.array(arr, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class FeedbackMatrix:
    """Sparse user x item feedback.

    Stored in coordinate form; every stored ``(row, col)`` pair is an
    observed cell (``y_ij = 1``), every other cell is unobserved.
    """

    n_users: int
    n_items: int
    rows: np.ndarray
    cols: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        rows = _frozen(self.rows, np.int64).reshape(-1)
        cols = _frozen(self.cols, np.int64).reshape(-1)
        vals = _frozen(self.values).reshape(-1)
        if not (rows.shape == cols.shape == vals.shape):
            raise ValueError("rows, cols and values must have equal length")
        if rows.size:
            if rows.min() < 0 or rows.max() >= self.n_users:
                raise ValueError("user index out of range")
            if cols.min() < 0 or cols.max() >= self.n_items:
                raise ValueError("item index out of range")
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "cols", cols)
        object.__setattr__(self, "values", vals)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_users, self.n_items)

    @property
    def nnz(self) -> int:
        return int(self.values.size)

    def mask(self) -> np.ndarray:
        """Dense 0/1 observation indicator ``y``."""
        y = np.zeros(self.shape)
        y[self.rows, self.cols] = 1.0
        return y

    def dense(self, fill: float = 0.0) -> np.ndarray:
        out = np.full(self.shape, fill, dtype=np.float64)
        out[self.rows, self.cols] = self.values
        return out

    def entries(self) -> list[tuple[int, int, float]]:
        return list(zip(self.rows.tolist(), self.cols.tolist(), self.values.tolist()))

    def user_items(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        sel = self.rows == i
        return self.cols[sel], self.values[sel]

    def subset_users(self, users: Sequence[int]) -> "FeedbackMatrix":
        """Restrict to ``users`` (re-indexed 0..len(users)-1, in the given order)."""
        users = np.asarray(users, dtype=np.int64)
        remap = np.full(self.n_users, -1, dtype=np.int64)
        remap[users] = np.arange(users.size)
        keep = remap[self.rows] >= 0
        return FeedbackMatrix(users.size, self.n_items, remap[self.rows[keep]],
                              self.cols[keep], self.values[keep])

    def __eq__(self, other):
        if not isinstance(other, FeedbackMatrix):
            return NotImplemented
        if self.shape != other.shape or self.nnz != other.nnz:
            return False
        a = np.lexsort((self.cols, self.rows))
        b = np.lexsort((other.cols, other.rows))
        return (np.array_equal(self.rows[a], other.rows[b])
                and np.array_equal(self.cols[a], other.cols[b])
                and np.array_equal(self.values[a], other.values[b]))

    @classmethod
    def from_dense(cls, values: np.ndarray, mask: Optional[np.ndarray] = None) -> "FeedbackMatrix":
        values = np.asarray(values, dtype=np.float64)
        if mask is None:
            mask = np.ones(values.shape, dtype=bool)
        r, c = np.nonzero(mask)
        return cls(values.shape[0], values.shape[1], r, c, values[r, c])


def build_feedback(records: Iterable[tuple[int, int, float]],
                   n_users: Optional[int] = None,
                   n_items: Optional[int] = None) -> FeedbackMatrix:
    """Assemble a :class:`FeedbackMatrix` from ``(user, item, value)`` triples.

    Duplicate pairs keep the last value seen. Dimensions default to the
    largest index plus one.
    """
    latest: dict[tuple[int, int], float] = {}
    for user, item, value in records:
        user, item = int(user), int(item)
        if user < 0 or item < 0:
            raise ValueError("indices must be non-negative")
        latest[(user, item)] = float(value)
    if not latest and (n_users is None or n_items is None):
        raise ValueError("cannot infer dimensions from an empty record list")
    keys = sorted(latest)
    rows = np.array([k[0] for k in keys], dtype=np.int64)
    cols = np.array([k[1] for k in keys], dtype=np.int64)
    vals = np.array([latest[k] for k in keys], dtype=np.float64)
    if n_users is None:
        n_users = int(rows.max()) + 1
    if n_items is None:
        n_items = int(cols.max()) + 1
    return FeedbackMatrix(n_users, n_items, rows, cols, vals)


@dataclass(frozen=True, eq=False)
class Demographics:
    """Dense I x P user-side matrix ``D``."""

    matrix: np.ndarray

    def __post_init__(self):
        m = _frozen(self.matrix)
        if m.ndim != 2:
            raise ValueError("demographics must be a 2-d matrix")
        object.__setattr__(self, "matrix", m)

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def __len__(self):
        return self.matrix.shape[0]


@dataclass(frozen=True, eq=False)
class Attributes:
    """Dense J x Q item-side matrix ``A``."""

    matrix: np.ndarray

    def __post_init__(self):
        m = _frozen(self.matrix)
        if m.ndim != 2:
            raise ValueError("attributes must be a 2-d matrix")
        object.__setattr__(self, "matrix", m)

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def __len__(self):
        return self.matrix.shape[0]


@dataclass(frozen=True)
class HyperParams:
    k: int = 5
    sigma2: float = 1.0
    sigma_d2: float = 1.0
    sigma_a2: float = 1.0
    lambda_u: float = 1.0
    lambda_v: float = 1.0
    lambda_w: float = 1.0
    lambda_psi: float = 1.0
    alpha: float = 1.0
    schedule: str = "log-t"

    def replace(self, **changes) -> "HyperParams":
        return replace(self, **changes)


def validate_hyperparams(h: HyperParams) -> HyperParams:
    """Return ``h`` unchanged, or raise ``ValueError`` naming the bad field."""
    for name in ("sigma2", "sigma_d2", "sigma_a2",
                 "lambda_u", "lambda_v", "lambda_w", "lambda_psi"):
        value = getattr(h, name)
        if not np.isfinite(value) or value <= 0:
            raise ValueError(f"{name} must be > 0 (got {value!r})")
    if int(h.k) != h.k or h.k < 1:
        raise ValueError(f"k must be >= 1 (got {h.k!r})")
    if not np.isfinite(h.alpha) or h.alpha < 0:
        raise ValueError(f"alpha must be >= 0 (got {h.alpha!r})")
    if h.schedule not in SCHEDULES:
        raise ValueError(f"schedule must be one of {SCHEDULES} (got {h.schedule!r})")
    return h


@dataclass(frozen=True, eq=False)
class Gaussian:
    """Multivariate normal belief over a latent vector."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = _frozen(self.mean).reshape(-1)
        cov = _frozen(self.cov)
        if cov.shape != (mean.size, mean.size):
            raise ValueError(f"cov shape {cov.shape} does not match mean length {mean.size}")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.size

    def check(self, tol: float = 1e-10) -> None:
        """Raise ``ValueError`` unless ``cov`` is symmetric positive definite."""
        scale = max(1.0, float(np.abs(self.cov).max(initial=0.0)))
        if not np.allclose(self.cov, self.cov.T, rtol=0, atol=1e-12 * scale):
            raise ValueError("covariance is not symmetric")
        if self.dim and np.linalg.eigvalsh(self.cov).min() <= tol:
            raise ValueError("covariance is not positive definite")
        np.linalg.cholesky(self.cov)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        # eigh tolerates the near-singular covariances that appear late in a session
        vals, vecs = np.linalg.eigh(self.cov)
        z = rng.standard_normal(self.dim)
        return self.mean + vecs @ (np.sqrt(np.clip(vals, 0.0, None)) * z)


@dataclass(frozen=True, eq=False)
class LatentFactors:
    u: np.ndarray
    v: np.ndarray
    w: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    psi: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))

    def __post_init__(self):
        k = np.asarray(self.u).shape[1]
        for name in ("u", "v", "w", "psi"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.size == 0:
                arr = np.zeros((0, k))
            if arr.ndim != 2 or arr.shape[1] != k:
                raise ValueError(f"factor {name} must have {k} columns, got shape {arr.shape}")
            object.__setattr__(self, name, _frozen(arr))

    @property
    def k(self) -> int:
        return self.u.shape[1]
