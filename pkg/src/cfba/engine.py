"""Online learning loop for one cold-start user (or item).

The session keeps the sufficient statistics of the user's conditional
posterior in sigma^2-scaled units:

    S   = sigma^2 * precision  = lambda sigma^2 I + sum v v^T + (sigma^2/sigma_d^2) W^T W
    b   = sigma^2 * information = sum mu v + (sigma^2/sigma_d^2) W^T d

and, for the demographic loadings, ``S_u`` / ``b_u`` in sigma_d^2-scaled
units.  ``update="literal"`` applies the accumulator updates exactly as
listed in the algorithm (the demographic term is added every period);
``update="consistent"`` rebuilds the demographic term from the current
loadings so that the session posterior always equals the batch
conditional of :func:`cfba.cfa.posterior_user_cfa`.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence, Union

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .bandits import Slate, exploration_rate, ts_select, ucb_select
from .cfa import FittedModel
from .types import Gaussian, HyperParams, validate_hyperparams

SESSION_MODES = ("new-user", "new-item")
UPDATE_MODES = ("consistent", "literal")


@dataclass
class EngineState:
    s: np.ndarray
    b: np.ndarray
    s_u: np.ndarray
    b_u: np.ndarray
    t: int
    h: HyperParams
    w_current: np.ndarray
    side: np.ndarray
    mode: str = "new-user"
    consumed: set = field(default_factory=set)
    s_data: Optional[np.ndarray] = None
    b_data: Optional[np.ndarray] = None
    fix_loadings: bool = False
    offset: float = 0.0

    def __post_init__(self):
        k = self.s.shape[0]
        if self.s_data is None:
            self.s_data = np.zeros((k, k))
        if self.b_data is None:
            self.b_data = np.zeros(k)

    # the roles of (lambda, side variance) flip between new users and new items
    @property
    def prior_precision(self) -> float:
        return self.h.lambda_u if self.mode == "new-user" else self.h.lambda_v

    @property
    def loading_precision(self) -> float:
        return self.h.lambda_w if self.mode == "new-user" else self.h.lambda_psi

    @property
    def side_variance(self) -> float:
        return self.h.sigma_d2 if self.mode == "new-user" else self.h.sigma_a2

    def to_json(self) -> str:
        doc = {
            "s": self.s.tolist(), "b": self.b.tolist(),
            "s_u": self.s_u.tolist(), "b_u": self.b_u.tolist(),
            "t": self.t, "h": self.h.__dict__,
            "w_current": self.w_current.tolist(), "side": self.side.tolist(),
            "mode": self.mode, "consumed": sorted(int(c) for c in self.consumed),
            "s_data": self.s_data.tolist(), "b_data": self.b_data.tolist(),
            "fix_loadings": self.fix_loadings, "offset": self.offset,
        }
        return json.dumps(doc)

    @classmethod
    def from_json(cls, text: str) -> "EngineState":
        doc = json.loads(text)
        k = len(doc["b"])

        def mat(key, shape):
            return np.array(doc[key], dtype=np.float64).reshape(shape)

        p = len(doc["side"])
        return cls(
            s=mat("s", (k, k)), b=mat("b", (k,)), s_u=mat("s_u", (k, k)), b_u=mat("b_u", (k, p)),
            t=int(doc["t"]), h=HyperParams(**doc["h"]), w_current=mat("w_current", (p, k)),
            side=mat("side", (p,)), mode=doc["mode"], consumed=set(doc["consumed"]),
            s_data=mat("s_data", (k, k)), b_data=mat("b_data", (k,)),
            fix_loadings=bool(doc["fix_loadings"]), offset=float(doc["offset"]),
        )


@dataclass(frozen=True)
class StepOutcome:
    slate: Slate
    posterior: Gaussian
    retained: bool


def init_session(side: Optional[np.ndarray], pretrained: Optional[FittedModel] = None,
                 h: Optional[HyperParams] = None, mode: str = "new-user",
                 loadings: Optional[np.ndarray] = None, fix_loadings: bool = False) -> EngineState:
    """Start a session for a new user (``mode="new-user"``) or new item.

    ``side`` is the user's demographic vector (or the item's attribute
    vector).  Loadings come from ``pretrained`` (W for new users, Psi for
    new items) unless passed explicitly as a ``(P, K)`` array.
    """
    if mode not in SESSION_MODES:
        raise ValueError(f"mode must be one of {SESSION_MODES}, got {mode!r}")
    if h is None:
        if pretrained is None:
            raise ValueError("hyper-parameters are required without a pretrained model")
        h = pretrained.hyper
    validate_hyperparams(h)
    k = h.k
    if loadings is None:
        if pretrained is None:
            raise ValueError("pretrained factors are required for the chosen mode")
        loadings = pretrained.factors.w if mode == "new-user" else pretrained.factors.psi
    loadings = np.asarray(loadings, dtype=np.float64).reshape(-1, k)
    side = np.zeros(0) if side is None else np.asarray(side, dtype=np.float64).reshape(-1)
    if side.size != loadings.shape[0]:
        if loadings.shape[0] == 0:
            # plain CF: no side information enters the session
            side = np.zeros(0)
        else:
            raise ValueError(f"side vector has {side.size} entries but {loadings.shape[0]} loadings")

    lam, lam_side, side_s2 = ((h.lambda_u, h.lambda_w, h.sigma_d2) if mode == "new-user"
                              else (h.lambda_v, h.lambda_psi, h.sigma_a2))
    s = lam * h.sigma2 * np.eye(k)
    b = s @ (loadings.T @ side)
    s_u = lam_side * side_s2 * np.eye(k)
    b_u = s_u @ loadings.T
    offset = pretrained.offset if pretrained is not None else 0.0
    return EngineState(s=s, b=b, s_u=s_u, b_u=b_u, t=0, h=h, w_current=loadings.copy(),
                       side=side, mode=mode, fix_loadings=fix_loadings, offset=offset)


def snapshot_posterior(state: EngineState) -> Gaussian:
    """``N(S^-1 b, sigma^2 S^-1)``."""
    k = state.s.shape[0]
    factor = cho_factor(state.s, lower=True)
    inv = cho_solve(factor, np.eye(k))
    return Gaussian(cho_solve(factor, state.b), state.h.sigma2 * 0.5 * (inv + inv.T))


def _current_loadings(state: EngineState) -> np.ndarray:
    if state.side.size == 0:
        return state.w_current
    return cho_solve(cho_factor(state.s_u, lower=True), state.b_u).T


def refresh(state: EngineState, update: str = "consistent") -> None:
    """Recompute the loading estimate and, in consistent mode, the side term of ``S`` and ``b``."""
    if update not in UPDATE_MODES:
        raise ValueError(f"update must be one of {UPDATE_MODES}, got {update!r}")
    state.w_current = _current_loadings(state)
    if update == "consistent":
        _rebuild(state)


def _rebuild(state: EngineState) -> None:
    h = state.h
    k = state.s.shape[0]
    ratio = h.sigma2 / state.side_variance
    w = state.w_current
    state.s = state.prior_precision * h.sigma2 * np.eye(k) + state.s_data + ratio * w.T @ w
    state.b = state.b_data + ratio * w.T @ state.side


def select(state: EngineState, item_factors: np.ndarray, policy: str = "ucb", slate_size: int = 1,
           exclude: Optional[Iterable[int]] = None,
           rng: Optional[np.random.Generator] = None, uncertainty: str = "std") -> Slate:
    """Slate for the upcoming period from the current session posterior."""
    posterior = snapshot_posterior(state)
    if policy == "ucb":
        alpha_t = exploration_rate(state.h.alpha, state.t + 1, state.h.schedule)
        return ucb_select(posterior, item_factors, alpha_t, slate_size, exclude, uncertainty)
    if policy == "ts":
        return ts_select(posterior, item_factors, slate_size, exclude, rng)
    raise ValueError(f"policy must be 'ucb' or 'ts', got {policy!r}")


def ingest(state: EngineState, item_factors: np.ndarray, choices: Sequence[tuple[int, float]],
           update: str = "consistent", user_vector: Optional[np.ndarray] = None,
           rng: Optional[np.random.Generator] = None) -> None:
    """Fold one period's observed choices into the session and advance ``t``.

    ``user_vector`` is the point estimate paired with the side vector in
    the loading update; it defaults to the current posterior mean.
    """
    if update not in UPDATE_MODES:
        raise ValueError(f"update must be one of {UPDATE_MODES}, got {update!r}")
    h = state.h
    n_items = item_factors.shape[0]
    if user_vector is None:
        user_vector = snapshot_posterior(state).mean
    w_t = state.w_current
    ratio = h.sigma2 / state.side_variance
    chosen = sorted((int(j), float(mu)) for j, mu in choices)
    for j, mu in chosen:
        if not 0 <= j < n_items:
            raise ValueError(f"observed item {j} out of range [0, {n_items})")
        v = item_factors[j]
        gram = np.outer(v, v)
        signal = (mu - state.offset) * v
        state.s_data = state.s_data + gram
        state.b_data = state.b_data + signal
        if update == "literal":
            state.s = state.s + gram
            state.b = state.b + signal
        state.consumed.add(j)

    if update == "literal" and state.side.size:
        w_used = w_t
        if rng is not None:
            # sampled loadings for the Thompson variant
            cov = state.side_variance * np.linalg.inv(state.s_u)
            chol = np.linalg.cholesky(0.5 * (cov + cov.T))
            w_used = w_t + (chol @ rng.standard_normal(w_t.T.shape)).T
        state.s = state.s + ratio * w_used.T @ w_used
        state.b = state.b + ratio * w_used.T @ state.side

    if chosen and state.side.size and not state.fix_loadings:
        state.s_u = state.s_u + np.outer(user_vector, user_vector)
        state.b_u = state.b_u + np.outer(user_vector, state.side)

    state.t += 1
    state.w_current = _current_loadings(state)
    if update == "consistent":
        _rebuild(state)


Feedback = Union[None, Sequence[tuple[int, float]], tuple, Callable[[Slate], Sequence[tuple[int, float]]]]


def _resolve_feedback(feedback: Feedback, slate: Slate) -> list[tuple[int, float]]:
    if feedback is None:
        return []
    if callable(feedback):
        return list(feedback(slate) or [])
    if isinstance(feedback, tuple) and len(feedback) == 2 and np.isscalar(feedback[0]):
        return [(int(feedback[0]), float(feedback[1]))]
    return [(int(j), float(mu)) for j, mu in feedback]


def step(state: EngineState, item_factors: np.ndarray, feedback: Feedback = None,
         policy: str = "ucb", slate_size: int = 1, update: str = "consistent",
         exclude: Optional[Iterable[int]] = None, rng: Optional[np.random.Generator] = None,
         uncertainty: str = "std") -> StepOutcome:
    """One period: estimate, recommend, observe, update.

    ``feedback`` is either the observed ``(item, value)`` choice(s) for
    this period or a callable that receives the slate and returns them.
    """
    item_factors = np.asarray(item_factors, dtype=np.float64)
    refresh(state, update)
    estimate = snapshot_posterior(state)
    slate = select(state, item_factors, policy, slate_size, exclude, rng, uncertainty)
    choices = _resolve_feedback(feedback, slate)
    ingest(state, item_factors, choices, update, user_vector=estimate.mean,
           rng=rng if (policy == "ts" and update == "literal") else None)
    return StepOutcome(slate, snapshot_posterior(state), bool(choices))
