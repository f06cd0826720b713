"""Bayesian matrix factorization with optional side information.

The CF model factorizes feedback as ``mu ~ U V^T``; the CFA model adds
``D ~ U W^T`` for user demographics and ``A ~ V Psi^T`` for item
attributes.  All conditionals are Gaussian and available in closed
form, so fitting alternates exact block updates: conditional means for
MAP coordinate ascent, draws for Gibbs sampling.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .types import (Attributes, Demographics, FeedbackMatrix, Gaussian,
                    HyperParams, LatentFactors, validate_hyperparams)

FIT_MODES = ("map", "gibbs")


# ---------------------------------------------------------------------------
# closed-form conditionals for a single latent vector


def _stack(pairs, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Turn ``[(vector, value), ...]`` into a design matrix and target."""
    if isinstance(pairs, tuple) and len(pairs) == 2 and isinstance(pairs[0], np.ndarray) \
            and pairs[0].ndim == 2:
        x, y = pairs
    else:
        pairs = list(pairs)
        if not pairs:
            return np.zeros((0, k)), np.zeros(0)
        x = np.array([np.asarray(p[0], dtype=np.float64).reshape(-1) for p in pairs])
        y = np.array([float(p[1]) for p in pairs])
    x = np.asarray(x, dtype=np.float64).reshape(len(y), -1) if len(y) else np.zeros((0, k))
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if x.shape[1] != k:
        raise ValueError(f"factor vectors must have length {k}, got {x.shape[1]}")
    return x, y


def _loadings(rows, k: int, expected: Optional[int] = None) -> np.ndarray:
    m = np.asarray(rows, dtype=np.float64)
    if m.size == 0:
        m = np.zeros((0, k))
    if m.ndim != 2 or m.shape[1] != k:
        raise ValueError(f"loading rows must be K={k} vectors, got shape {m.shape}")
    if expected is not None and m.shape[0] != expected:
        raise ValueError(f"expected {expected} loading rows, got {m.shape[0]}")
    return m


def gaussian_from_information(precision: np.ndarray, information: np.ndarray) -> Gaussian:
    """``N(P^-1 h, P^-1)`` via a Cholesky factorization of the precision ``P``."""
    k = precision.shape[0]
    factor = cho_factor(precision, lower=True)
    cov = cho_solve(factor, np.eye(k))
    cov = 0.5 * (cov + cov.T)
    mean = cho_solve(factor, information)
    return Gaussian(mean, cov)


def _conditional(lam: float, s2: float, x: np.ndarray, y: np.ndarray,
                 side_s2: Optional[float] = None, side_rows: Optional[np.ndarray] = None,
                 side_values: Optional[np.ndarray] = None, k: int = 0) -> Gaussian:
    prec = lam * np.eye(k) + x.T @ x / s2
    info = x.T @ y / s2
    if side_rows is not None and side_rows.shape[0]:
        prec = prec + side_rows.T @ side_rows / side_s2
        info = info + side_rows.T @ side_values / side_s2
    return gaussian_from_information(prec, info)


def posterior_user_cf(observed, h: HyperParams) -> Gaussian:
    """Conditional of ``u_i`` given the item factors of the items user ``i`` rated.

    ``observed`` is a sequence of ``(v_j, mu_ij)`` pairs (or an ``(X, y)``
    array pair).
    """
    x, y = _stack(observed, h.k)
    return _conditional(h.lambda_u, h.sigma2, x, y, k=h.k)


def posterior_item_cf(observed, h: HyperParams) -> Gaussian:
    """Conditional of ``v_j`` given ``(u_i, mu_ij)`` pairs for its raters."""
    x, y = _stack(observed, h.k)
    return _conditional(h.lambda_v, h.sigma2, x, y, k=h.k)


def posterior_user_cfa(observed, d_i, w, h: HyperParams) -> Gaussian:
    """Conditional of ``u_i`` combining feedback with the user's demographics.

    Parameters
    ----------
    observed : sequence of (v_j, mu_ij)
        Items the user rated and the feedback given.
    d_i : (P,) array
        The user's demographic vector.
    w : (P, K) array
        Demographic loadings; row ``p`` is ``w_p``.
    h : HyperParams
        Uses ``lambda_u``, ``sigma2`` and ``sigma_d2``.
    """
    x, y = _stack(observed, h.k)
    d_i = np.asarray(d_i, dtype=np.float64).reshape(-1)
    w = _loadings(w, h.k, expected=d_i.size)
    return _conditional(h.lambda_u, h.sigma2, x, y, h.sigma_d2, w, d_i, k=h.k)


def posterior_item_cfa(observed, a_j, psi, h: HyperParams) -> Gaussian:
    """Conditional of ``v_j`` combining feedback with the item's attributes."""
    x, y = _stack(observed, h.k)
    a_j = np.asarray(a_j, dtype=np.float64).reshape(-1)
    psi = _loadings(psi, h.k, expected=a_j.size)
    return _conditional(h.lambda_v, h.sigma2, x, y, h.sigma_a2, psi, a_j, k=h.k)


def posterior_w(u_rows, d_column, h: HyperParams) -> Gaussian:
    """Conditional of one demographic loading ``w_p`` given all user factors."""
    d_column = np.asarray(d_column, dtype=np.float64).reshape(-1)
    u = _loadings(u_rows, h.k)
    if u.shape[0] != d_column.size:
        raise ValueError(f"{u.shape[0]} user rows but demographic column has {d_column.size} entries")
    return _conditional(h.lambda_w, h.sigma_d2, u, d_column, k=h.k)


def posterior_psi(v_rows, a_column, h: HyperParams) -> Gaussian:
    """Conditional of one attribute loading ``psi_q`` given all item factors."""
    a_column = np.asarray(a_column, dtype=np.float64).reshape(-1)
    v = _loadings(v_rows, h.k)
    if v.shape[0] != a_column.size:
        raise ValueError(f"{v.shape[0]} item rows but attribute column has {a_column.size} entries")
    return _conditional(h.lambda_psi, h.sigma_a2, v, a_column, k=h.k)


def predict(u: Union[Gaussian, np.ndarray], v: Union[Gaussian, np.ndarray]) -> tuple[float, float]:
    """Predicted feedback mean and variance for one user/item pair.

    At most one side may carry uncertainty; the variance is the quadratic
    form of the point side with the uncertain side's covariance.
    """
    if isinstance(u, Gaussian) and isinstance(v, Gaussian):
        raise ValueError("one side must be a point estimate")
    if isinstance(u, Gaussian):
        point = np.asarray(v, dtype=np.float64).reshape(-1)
        belief = u
    elif isinstance(v, Gaussian):
        point = np.asarray(u, dtype=np.float64).reshape(-1)
        belief = v
    else:
        a = np.asarray(u, dtype=np.float64).reshape(-1)
        b = np.asarray(v, dtype=np.float64).reshape(-1)
        if a.size != b.size:
            raise ValueError("factor lengths differ")
        return float(a @ b), 0.0
    if point.size != belief.dim:
        raise ValueError("factor lengths differ")
    return float(belief.mean @ point), float(point @ belief.cov @ point)


# ---------------------------------------------------------------------------
# full-model fitting


@dataclass(frozen=True, eq=False)
class FittedModel:
    factors: LatentFactors
    u_covs: np.ndarray
    v_covs: np.ndarray
    w_covs: np.ndarray
    psi_covs: np.ndarray
    hyper: HyperParams
    mode: str
    objective_trace: tuple = ()
    offset: float = 0.0
    has_demographics: bool = False
    has_attributes: bool = False

    def user_posterior(self, i: int) -> Gaussian:
        return Gaussian(self.factors.u[i], self.u_covs[i])

    def item_posterior(self, j: int) -> Gaussian:
        return Gaussian(self.factors.v[j], self.v_covs[j])

    def predict_matrix(self) -> np.ndarray:
        return self.factors.u @ self.factors.v.T + self.offset


def _batched_rows(y: np.ndarray, m: np.ndarray, f: np.ndarray, lam: float, s2: float,
                  side_loadings: Optional[np.ndarray], side_values: Optional[np.ndarray],
                  side_s2: float) -> tuple[np.ndarray, np.ndarray]:
    """Precision and information of every row's conditional at once."""
    n, k = y.shape[0], f.shape[1]
    outer = (f[:, :, None] * f[:, None, :]).reshape(f.shape[0], k * k)
    prec = (y @ outer).reshape(n, k, k) / s2
    prec += lam * np.eye(k)
    info = (m * y) @ f / s2
    if side_loadings is not None:
        prec += (side_loadings.T @ side_loadings / side_s2)[None]
        info += side_values @ side_loadings / side_s2
    return prec, info


def _solve_rows(prec: np.ndarray, info: np.ndarray, rng: Optional[np.random.Generator]):
    chol = np.linalg.cholesky(prec)
    mean = np.linalg.solve(prec, info[..., None])[..., 0]
    if rng is None:
        return mean
    z = rng.standard_normal(info.shape)
    # L^-T z has covariance (L L^T)^-1
    return mean + np.linalg.solve(np.swapaxes(chol, 1, 2), z[..., None])[..., 0]


def _shared_rows(f: np.ndarray, values: np.ndarray, lam: float, s2: float,
                 rng: Optional[np.random.Generator]) -> np.ndarray:
    """Loadings of a side matrix: every column shares one precision."""
    k = f.shape[1]
    prec = lam * np.eye(k) + f.T @ f / s2
    factor = cho_factor(prec, lower=True)
    mean = cho_solve(factor, (values.T @ f / s2).T).T
    if rng is None:
        return mean
    z = rng.standard_normal(mean.shape)
    chol = np.linalg.cholesky(prec)
    return mean + np.linalg.solve(chol.T, z.T).T


def objective(feedback_dense: np.ndarray, mask: np.ndarray, factors: LatentFactors,
              d: Optional[np.ndarray], a: Optional[np.ndarray], h: HyperParams) -> float:
    """Twice the negative log posterior, up to an additive constant."""
    u, v, w, psi = factors.u, factors.v, factors.w, factors.psi
    resid = (feedback_dense - u @ v.T) * mask
    total = np.sum(resid ** 2) / h.sigma2 + h.lambda_u * np.sum(u ** 2) + h.lambda_v * np.sum(v ** 2)
    if d is not None:
        total += np.sum((d - u @ w.T) ** 2) / h.sigma_d2 + h.lambda_w * np.sum(w ** 2)
    if a is not None:
        total += np.sum((a - v @ psi.T) ** 2) / h.sigma_a2 + h.lambda_psi * np.sum(psi ** 2)
    return float(total)


def _row_covs(prec: np.ndarray) -> np.ndarray:
    cov = np.linalg.inv(prec)
    return 0.5 * (cov + np.swapaxes(cov, 1, 2))


def fit(feedback: FeedbackMatrix,
        demographics: Optional[Union[Demographics, np.ndarray]] = None,
        attributes: Optional[Union[Attributes, np.ndarray]] = None,
        h: HyperParams = HyperParams(),
        mode: str = "map",
        sweeps: int = 50,
        seed: int = 0,
        burn_in: int = 20,
        keep: int = 30,
        center: bool = False) -> FittedModel:
    """Fit the CF (no side data) or CFA model by alternating block updates.

    Sweep order is U rows, V rows, W rows, Psi rows.  ``mode="map"`` sets
    each block to its conditional mean, so the objective never increases;
    ``mode="gibbs"`` draws each block from its conditional and summarizes
    the chain by the mean of the last ``keep`` draws after ``burn_in``.

    With ``sweeps=0`` the returned factors are the prior draws used for
    initialization.
    """
    validate_hyperparams(h)
    if mode not in FIT_MODES:
        raise ValueError(f"mode must be one of {FIT_MODES}, got {mode!r}")
    if sweeps < 0:
        raise ValueError("sweeps must be >= 0")
    d = None if demographics is None else np.asarray(getattr(demographics, "matrix", demographics), dtype=float)
    a = None if attributes is None else np.asarray(getattr(attributes, "matrix", attributes), dtype=float)
    if d is not None and d.shape[0] != feedback.n_users:
        raise ValueError(f"demographics have {d.shape[0]} rows but feedback has {feedback.n_users} users")
    if a is not None and a.shape[0] != feedback.n_items:
        raise ValueError(f"attributes have {a.shape[0]} rows but feedback has {feedback.n_items} items")
    k = h.k
    side_dims = [x.shape[1] for x in (d, a) if x is not None]
    if side_dims and k > min(side_dims):
        warnings.warn(f"K={k} exceeds the side-information dimension {min(side_dims)}", RuntimeWarning)

    offset = float(feedback.values.mean()) if center and feedback.nnz else 0.0
    y = feedback.mask()
    m = feedback.dense() - offset * y

    rng = np.random.default_rng(seed)
    u = rng.standard_normal((feedback.n_users, k)) / np.sqrt(h.lambda_u)
    v = rng.standard_normal((feedback.n_items, k)) / np.sqrt(h.lambda_v)
    w = rng.standard_normal((d.shape[1], k)) / np.sqrt(h.lambda_w) if d is not None else np.zeros((0, k))
    psi = rng.standard_normal((a.shape[1], k)) / np.sqrt(h.lambda_psi) if a is not None else np.zeros((0, k))

    draw = rng if mode == "gibbs" else None
    trace = []
    kept = []
    for sweep in range(sweeps):
        prec, info = _batched_rows(y, m, v, h.lambda_u, h.sigma2,
                                   w if d is not None else None, d, h.sigma_d2)
        u = _solve_rows(prec, info, draw)
        prec, info = _batched_rows(y.T, m.T, u, h.lambda_v, h.sigma2,
                                   psi if a is not None else None, a, h.sigma_a2)
        v = _solve_rows(prec, info, draw)
        if d is not None:
            w = _shared_rows(u, d, h.lambda_w, h.sigma_d2, draw)
        if a is not None:
            psi = _shared_rows(v, a, h.lambda_psi, h.sigma_a2, draw)
        current = LatentFactors(u, v, w, psi)
        trace.append(objective(m, y, current, d, a, h))
        if mode == "gibbs" and sweep >= burn_in:
            kept.append((u, v, w, psi))

    if mode == "gibbs" and sweeps:
        if not kept:
            kept = [(u, v, w, psi)]
        kept = kept[-keep:]
        u, v, w, psi = (np.mean([s[n] for s in kept], axis=0) for n in range(4))

    factors = LatentFactors(u, v, w, psi)
    prec_u, _ = _batched_rows(y, m, v, h.lambda_u, h.sigma2, w if d is not None else None, d, h.sigma_d2)
    prec_v, _ = _batched_rows(y.T, m.T, u, h.lambda_v, h.sigma2, psi if a is not None else None, a, h.sigma_a2)
    w_cov = np.linalg.inv(h.lambda_w * np.eye(k) + u.T @ u / h.sigma_d2)
    psi_cov = np.linalg.inv(h.lambda_psi * np.eye(k) + v.T @ v / h.sigma_a2)
    return FittedModel(
        factors=factors,
        u_covs=_row_covs(prec_u),
        v_covs=_row_covs(prec_v),
        w_covs=np.repeat(0.5 * (w_cov + w_cov.T)[None], w.shape[0], axis=0),
        psi_covs=np.repeat(0.5 * (psi_cov + psi_cov.T)[None], psi.shape[0], axis=0),
        hyper=h,
        mode=mode,
        objective_trace=tuple(trace),
        offset=offset,
        has_demographics=d is not None,
        has_attributes=a is not None,
    )
