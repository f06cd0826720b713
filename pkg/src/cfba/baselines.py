"""Recommendation policies behind one interface.

A :class:`Policy` holds whatever was learned from existing users and
hands out one :class:`Session` per new user.  A session sees the user's
context once, then alternates ``select`` (emit a slate) and ``observe``
(consume the feedback on that slate).  The same objects drive both the
synthetic closed-loop simulation and the offline replay.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from . import engine
from .bandits import (Slate, candidates, exploration_rate, predictive_spread,
                      top_slate, ucb_select)
from .cfa import FittedModel, fit
from .types import FeedbackMatrix, Gaussian, HyperParams

POLICY_KINDS = ("random", "popularity", "active-learning", "ts", "ucb",
                "ts-pca", "ucb-pca", "cfb", "cfba")


class Session:
    def select(self, slate_size: int = 1, exclude: Optional[Iterable[int]] = None) -> Slate:
        raise NotImplementedError

    def observe(self, choices: Sequence[tuple[int, float]]) -> None:
        """Feedback for the last slate; an empty list means nothing was observed."""


class Policy:
    kind: str = ""

    def __init__(self, config: Optional[dict] = None):
        self.config = dict(config or {})

    def new_session(self, context: Optional[np.ndarray], seed=None, user: Optional[int] = None) -> Session:
        """``user`` is the caller's index for the user; only clairvoyant references use it."""
        raise NotImplementedError

    def end_period(self, t: int, sessions: Sequence[Session]) -> None:
        """Hook called after every session finished period ``t``."""

    def __repr__(self):
        return f"{type(self).__name__}(kind={self.kind!r})"


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


# ---------------------------------------------------------------------------
# null models


class _RandomSession(Session):
    def __init__(self, n_items: int, rng: np.random.Generator):
        self.n_items = n_items
        self.rng = rng

    def select(self, slate_size=1, exclude=None):
        idx = np.arange(self.n_items)
        if exclude:
            idx = idx[~np.isin(idx, np.fromiter(exclude, dtype=np.int64))]
        if idx.size == 0:
            raise ValueError("empty candidate set")
        pick = self.rng.choice(idx, size=min(slate_size, idx.size), replace=False)
        return Slate(pick, np.zeros(pick.size))


class RandomPolicy(Policy):
    kind = "random"

    def __init__(self, n_items: int, config=None):
        super().__init__(config)
        self.n_items = n_items

    def new_session(self, context=None, seed=None, user=None):
        return _RandomSession(self.n_items, _rng(seed))


def popularity_scores(training: FeedbackMatrix, prior_strength: float = 0.0) -> np.ndarray:
    """Mean observed feedback per item; unrated items get the global mean.

    ``prior_strength`` adds that many pseudo-ratings at the global mean
    to every item, which tames items rated only once or twice.
    """
    if training.nnz == 0:
        raise ValueError("training matrix has no observed feedback")
    total = np.bincount(training.cols, weights=training.values, minlength=training.n_items)
    count = np.bincount(training.cols, minlength=training.n_items).astype(float)
    overall = float(training.values.mean())
    with np.errstate(invalid="ignore", divide="ignore"):
        scores = (total + prior_strength * overall) / (count + prior_strength)
    scores[count + prior_strength == 0] = overall
    return scores


class _FixedRankingSession(Session):
    def __init__(self, scores: np.ndarray):
        self.scores = scores

    def select(self, slate_size=1, exclude=None):
        idx = np.arange(self.scores.size)
        if exclude:
            keep = ~np.isin(idx, np.fromiter(exclude, dtype=np.int64))
            idx = idx[keep]
        if idx.size == 0:
            raise ValueError("empty candidate set")
        return top_slate(idx, self.scores[idx], slate_size)


class PopularityPolicy(Policy):
    kind = "popularity"

    def __init__(self, scores: np.ndarray, config=None):
        super().__init__(config)
        self.scores = np.asarray(scores, dtype=np.float64)

    def new_session(self, context=None, seed=None, user=None):
        return _FixedRankingSession(self.scores)


# ---------------------------------------------------------------------------
# factor-model policies


def active_learning_select(user_posterior: Gaussian, item_factors, slate_size: int = 1,
                           exclude=None) -> Slate:
    """Most uncertain items first: score is the predictive standard deviation."""
    idx, mat = candidates(item_factors, exclude)
    return top_slate(idx, np.sqrt(predictive_spread(user_posterior.cov, mat)), slate_size)


class _EngineSession(Session):
    def __init__(self, policy: "FactorPolicy", state: engine.EngineState, rng):
        self.policy = policy
        self.state = state
        self.rng = rng
        self._estimate = None
        self.history: list[tuple[int, float]] = []

    def select(self, slate_size=1, exclude=None):
        p = self.policy
        engine.refresh(self.state, p.update)
        self._estimate = engine.snapshot_posterior(self.state)
        if p.selector == "uncertainty":
            return active_learning_select(self._estimate, p.item_factors, slate_size, exclude)
        return engine.select(self.state, p.item_factors, p.selector, slate_size, exclude,
                             self.rng, p.uncertainty)

    def observe(self, choices):
        p = self.policy
        choices = list(choices)
        self.history.extend(choices)
        sample_rng = self.rng if (p.selector == "ts" and p.update == "literal") else None
        mean = self._estimate.mean if self._estimate is not None else None
        engine.ingest(self.state, p.item_factors, choices, p.update, mean, sample_rng)
        self._estimate = None


class FactorPolicy(Policy):
    """Sessions run the incremental posterior engine against fixed item factors.

    ``selector`` is ``"ucb"`` or ``"ts"`` for the bandit variants and
    ``"uncertainty"`` for active learning.
    """

    def __init__(self, kind: str, model: FittedModel, selector: str = "ucb",
                 update: str = "consistent", fix_loadings: bool = False,
                 uncertainty: str = "std", use_side: bool = True, config=None,
                 refit_every: Optional[int] = None, training: Optional[dict] = None):
        super().__init__(config)
        self.kind = kind
        self.model = model
        self.selector = selector
        self.update = update
        self.fix_loadings = fix_loadings
        self.uncertainty = uncertainty
        self.use_side = use_side
        self.refit_every = refit_every
        self.training = training
        self.item_factors = np.asarray(model.factors.v)
        self.sessions: list[_EngineSession] = []

    def new_session(self, context=None, seed=None, user=None):
        h = self.model.hyper
        loadings = self.model.factors.w if self.use_side else np.zeros((0, h.k))
        side = context if self.use_side else None
        state = engine.init_session(side, self.model, h, "new-user", loadings=loadings,
                                    fix_loadings=self.fix_loadings)
        session = _EngineSession(self, state, _rng(seed))
        if self.refit_every:
            self.sessions.append(session)
        return session

    def end_period(self, t, sessions):
        if not self.refit_every or t % self.refit_every or self.training is None:
            return
        self._refit(sessions)

    def _refit(self, sessions):
        """Refit the batch model on training data plus everything the sessions saw."""
        tr = self.training
        fb: FeedbackMatrix = tr["feedback"]
        base = fb.n_users
        rows, cols, vals = [fb.rows], [fb.cols], [fb.values]
        contexts = []
        for n, s in enumerate(sessions):
            for j, mu in s.history:
                rows.append(np.array([base + n]))
                cols.append(np.array([j]))
                vals.append(np.array([mu]))
            contexts.append(s.state.side)
        merged = FeedbackMatrix(base + len(sessions), fb.n_items, np.concatenate(rows),
                                np.concatenate(cols), np.concatenate(vals))
        d = tr.get("demographics")
        if d is not None and self.use_side:
            d = np.vstack([d, np.array(contexts)])
        else:
            d = None
        model = fit(merged, d, tr.get("attributes") if self.use_side else None, self.model.hyper,
                    tr.get("fit_mode", "map"), tr.get("sweeps", 30), tr.get("seed", 0),
                    center=self.model.offset != 0.0)
        self.model = model
        self.item_factors = np.asarray(model.factors.v)
        for s in sessions:
            st = s.state
            # session statistics are rebuilt against the refreshed item factors
            new = engine.init_session(st.side if self.use_side else None, model, model.hyper,
                                      "new-user",
                                      loadings=model.factors.w if self.use_side else np.zeros((0, model.hyper.k)),
                                      fix_loadings=self.fix_loadings)
            new.consumed = st.consumed
            for j, mu in s.history:
                v = self.item_factors[j]
                new.s_data = new.s_data + np.outer(v, v)
                new.b_data = new.b_data + (mu - new.offset) * v
            new.t = st.t
            engine.refresh(new, "consistent")
            s.state = new


def cfb_policy(pretrained: FittedModel, h: Optional[HyperParams] = None, selector: str = "ucb",
               **kwargs) -> FactorPolicy:
    """Collaborative filtering bandit: the engine loop without side information."""
    model = pretrained if h is None else _rehyper(pretrained, h)
    return FactorPolicy("cfb", model, selector=selector, use_side=False, **kwargs)


def cfba_policy(pretrained: FittedModel, h: Optional[HyperParams] = None, selector: str = "ucb",
                **kwargs) -> FactorPolicy:
    model = pretrained if h is None else _rehyper(pretrained, h)
    return FactorPolicy("cfba", model, selector=selector, use_side=True, **kwargs)


def active_learning_policy(pretrained: FittedModel, h: Optional[HyperParams] = None,
                           **kwargs) -> FactorPolicy:
    model = pretrained if h is None else _rehyper(pretrained, h)
    return FactorPolicy("active-learning", model, selector="uncertainty", use_side=True, **kwargs)


def _rehyper(model: FittedModel, h: HyperParams) -> FittedModel:
    if h.k != model.hyper.k:
        raise ValueError("hyper-parameter K differs from the pretrained model")
    return FittedModel(model.factors, model.u_covs, model.v_covs, model.w_covs, model.psi_covs,
                       h, model.mode, model.objective_trace, model.offset,
                       model.has_demographics, model.has_attributes)


# ---------------------------------------------------------------------------
# contextual bandits on item features


@dataclass(frozen=True, eq=False)
class PcaModel:
    components: np.ndarray
    explained_variance: np.ndarray
    center: np.ndarray

    def transform(self, data: np.ndarray) -> np.ndarray:
        return (np.asarray(data, dtype=np.float64) - self.center) @ self.components

    def inverse_transform(self, scores: np.ndarray) -> np.ndarray:
        return scores @ self.components.T + self.center


def pca_reduce(data: np.ndarray, n_components: int) -> PcaModel:
    """Principal components of the column-centered data via a thin SVD.

    Signs are fixed so the largest-magnitude loading of every component
    is positive.
    """
    data = np.asarray(data, dtype=np.float64)
    if n_components < 1:
        raise ValueError("n_components must be >= 1")
    center = data.mean(axis=0)
    centered = data - center
    _, sing, vt = np.linalg.svd(centered, full_matrices=False)
    tol = sing.max(initial=0.0) * max(centered.shape) * np.finfo(float).eps
    rank = int(np.sum(sing > tol))
    if n_components > rank:
        raise ValueError(f"n_components={n_components} exceeds the data rank {rank}")
    comps = vt[:n_components].T
    pivot = np.argmax(np.abs(comps), axis=0)
    signs = np.sign(comps[pivot, np.arange(n_components)])
    comps = comps * signs
    var = sing[:n_components] ** 2 / max(data.shape[0] - 1, 1)
    return PcaModel(comps, var, center)


class _LinearBanditSession(Session):
    """Bayesian linear regression of feedback on item features.

    The posterior covariance and every item's predictive variance are
    updated in place with rank-one formulas.
    """

    def __init__(self, policy: "ContextualBanditPolicy", rng: np.random.Generator):
        self.policy = policy
        self.rng = rng
        f = policy.features.shape[1]
        h = policy.h
        self.cov = np.eye(f) / h.lambda_u
        self.info = np.zeros(f)
        self.spread = np.sum(policy.features ** 2, axis=1) / h.lambda_u
        self.seen: list[np.ndarray] = []
        self.t = 0

    @property
    def mean(self) -> np.ndarray:
        return self.cov @ self.info / self.policy.h.sigma2

    def posterior(self) -> Gaussian:
        return Gaussian(self.mean, 0.5 * (self.cov + self.cov.T))

    def select(self, slate_size=1, exclude=None):
        p = self.policy
        x = p.features
        idx = np.arange(x.shape[0])
        if exclude:
            idx = idx[~np.isin(idx, np.fromiter(exclude, dtype=np.int64))]
        if idx.size == 0:
            raise ValueError("empty candidate set")
        if self.t == 0 and p.random_first:
            pick = self.rng.choice(idx, size=min(slate_size, idx.size), replace=False)
            return Slate(pick, np.zeros(pick.size))
        h = p.h
        if p.selector == "ucb":
            alpha_t = exploration_rate(h.alpha, self.t + 1, h.schedule)
            scores = x[idx] @ self.mean + alpha_t * np.sqrt(np.maximum(self.spread[idx], 0.0))
        else:
            scores = x[idx] @ self._draw()
        return top_slate(idx, scores, slate_size)

    def _draw(self) -> np.ndarray:
        # perturb the prior draw and the observed targets, then solve: exact posterior sample
        h = self.policy.h
        f = self.cov.shape[0]
        prior_draw = self.rng.standard_normal(f) / np.sqrt(h.lambda_u)
        noisy_info = self.info.copy()
        if self.seen:
            xs = np.array(self.seen)
            noisy_info = noisy_info + xs.T @ (np.sqrt(h.sigma2) * self.rng.standard_normal(len(xs)))
        return self.cov @ (noisy_info / h.sigma2 + h.lambda_u * prior_draw)

    def observe(self, choices):
        p = self.policy
        h = p.h
        for j, mu in sorted(choices):
            x = p.features[int(j)]
            cx = self.cov @ x
            denom = h.sigma2 + x @ cx
            self.cov = self.cov - np.outer(cx, cx) / denom
            self.spread = self.spread - (p.features @ cx) ** 2 / denom
            self.info = self.info + float(mu) * x
            self.seen.append(x)
        self.t += 1


class ContextualBanditPolicy(Policy):
    def __init__(self, kind: str, features: np.ndarray, h: HyperParams, selector: str,
                 random_first: bool = True, config=None):
        super().__init__(config)
        self.kind = kind
        self.features = np.asarray(features, dtype=np.float64)
        self.h = h
        self.selector = selector
        self.random_first = random_first

    def new_session(self, context=None, seed=None, user=None):
        return _LinearBanditSession(self, _rng(seed))


def contextual_bandit_policy(kind: str, features: np.ndarray, h: HyperParams,
                             intercept: bool = True, random_first: bool = True) -> ContextualBanditPolicy:
    """Linear-payoff TS or UCB over per-item feature vectors.

    ``kind`` is ``ts``/``ucb`` (raw features) or ``ts-pca``/``ucb-pca``
    (features already projected); the prior on the payoff weights is
    ``N(0, lambda_u^-1 I)`` and the noise variance ``sigma2``.
    """
    selector = kind.split("-")[0]
    if selector not in ("ts", "ucb"):
        raise ValueError(f"contextual bandit kind must start with ts or ucb, got {kind!r}")
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2:
        raise ValueError("features must be a 2-d (items x features) matrix")
    if intercept:
        features = np.hstack([np.ones((features.shape[0], 1)), features])
    return ContextualBanditPolicy(kind, features, h, selector, random_first)


# ---------------------------------------------------------------------------
# construction from training data


@dataclass
class PolicySpec:
    """Everything needed to build one method from training data."""

    kind: str
    h: HyperParams = field(default_factory=HyperParams)
    fit_mode: str = "map"
    sweeps: int = 30
    center: bool = False
    update: str = "consistent"
    selector: str = "ucb"
    fix_loadings: bool = False
    pca_components: Optional[int] = None
    prior_strength: float = 0.0
    refit_every: Optional[int] = None


def build_policy(spec: PolicySpec, feedback: FeedbackMatrix,
                 demographics: Optional[np.ndarray], attributes: Optional[np.ndarray],
                 seed: int = 0, cache: Optional[dict] = None) -> Policy:
    """Pretrain ``spec.kind`` on the existing users.

    ``cache`` may be shared between calls so that methods using the same
    factor model (active learning and CFB-A) fit it only once.
    """
    kind = spec.kind
    if kind not in POLICY_KINDS:
        raise ValueError(f"unknown method {kind!r}; valid kinds: {', '.join(POLICY_KINDS)}")
    h = spec.h
    cache = {} if cache is None else cache
    if kind == "random":
        return RandomPolicy(feedback.n_items)
    if kind == "popularity":
        return PopularityPolicy(popularity_scores(feedback, spec.prior_strength))
    if kind in ("ts", "ucb", "ts-pca", "ucb-pca"):
        if attributes is None:
            raise ValueError(f"{kind} needs item attributes")
        feats = np.asarray(attributes, dtype=np.float64)
        if kind.endswith("pca"):
            r = spec.pca_components or h.k
            feats = pca_reduce(feats, r).transform(feats)
        return contextual_bandit_policy(kind, feats, h)

    side = kind != "cfb"
    key = (side, h.k, h.sigma2, h.sigma_d2, h.sigma_a2, h.lambda_u, h.lambda_v, h.lambda_w,
           h.lambda_psi, spec.fit_mode, spec.sweeps, spec.center, seed)
    if key not in cache:
        cache[key] = fit(feedback, demographics if side else None, attributes if side else None,
                         h, spec.fit_mode, spec.sweeps, seed, center=spec.center)
    model = _rehyper(cache[key], h)
    training = None
    if spec.refit_every:
        training = {"feedback": feedback, "demographics": demographics, "attributes": attributes,
                    "fit_mode": spec.fit_mode, "sweeps": spec.sweeps, "seed": seed}
    common = dict(update=spec.update, fix_loadings=spec.fix_loadings,
                  refit_every=spec.refit_every, training=training)
    if kind == "active-learning":
        return active_learning_policy(model, **common)
    if kind == "cfb":
        return cfb_policy(model, selector=spec.selector, **common)
    return cfba_policy(model, selector=spec.selector, **common)
