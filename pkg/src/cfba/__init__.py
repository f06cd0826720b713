"""Cold-start recommendation with side-informed Bayesian matrix factorization and bandits.

The pieces build on each other: :mod:`cfba.cfa` fits the factor model,
:mod:`cfba.engine` updates one new user's posterior online,
:mod:`cfba.baselines` wraps every method behind a common policy
interface, and :mod:`cfba.simulation` / :mod:`cfba.evaluation` score
policies on synthetic worlds or logged data.
"""
__version__ = "0.1.0"

from .types import (Attributes, Demographics, FeedbackMatrix, Gaussian, HyperParams,
                    LatentFactors, build_feedback, validate_hyperparams)
from .cfa import FittedModel, fit, predict
from .baselines import POLICY_KINDS, Policy, PolicySpec, build_policy
from .simulation import SyntheticWorld, Trajectory, gen_linear, gen_nonlinear, run_simulation
from .evaluation import MetricReport, car, chpr, hpr, ndcg, replay_evaluate, search_concentration

__all__ = [
    "Attributes", "Demographics", "FeedbackMatrix", "Gaussian", "HyperParams", "LatentFactors",
    "build_feedback", "validate_hyperparams", "FittedModel", "fit", "predict", "POLICY_KINDS",
    "Policy", "PolicySpec", "build_policy", "SyntheticWorld", "Trajectory", "gen_linear",
    "gen_nonlinear", "run_simulation", "MetricReport", "car", "chpr", "hpr", "ndcg",
    "replay_evaluate", "search_concentration",
]
