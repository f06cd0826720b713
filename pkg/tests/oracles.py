"""Reference computations that share no code with the package.

Every Gaussian conditional in the model is a Bayesian linear regression:
observations, side-information rows and the zero-mean prior can all be
written as whitened rows of one least-squares problem.  The oracle
solves that stacked problem with a QR factorization.
"""
import numpy as np


def stacked_posterior(blocks, prior_precision, k):
    """Posterior N(mean, cov) for a K-vector x.

    ``blocks`` is a list of ``(X, y, noise_variance)`` with ``y ~ N(X x, var I)``;
    the prior is ``x ~ N(0, prior_precision^-1 I)``.
    """
    rows = [np.sqrt(prior_precision) * np.eye(k)]
    targets = [np.zeros(k)]
    for x, y, var in blocks:
        x = np.asarray(x, float).reshape(-1, k)
        y = np.asarray(y, float).reshape(-1)
        rows.append(x / np.sqrt(var))
        targets.append(y / np.sqrt(var))
    a = np.vstack(rows)
    b = np.concatenate(targets)
    q, r = np.linalg.qr(a)
    mean = np.linalg.solve(r, q.T @ b)
    r_inv = np.linalg.solve(r, np.eye(k))
    return mean, r_inv @ r_inv.T
