"""Least-squares Monte Carlo conditional expectations on polynomial bases."""

import itertools
import logging

import numpy as np

from .conf import toolkit_setting
from .exceptions import IllConditionedRegression, check_finite

logger = logging.getLogger(__name__)


class FeatureCache:
    """Conditioning features per grid index, built once per ensemble."""

    def __init__(self, w, traj=None):
        self.w = w
        self.traj = traj
        self.brownian = w.paths()

    def __call__(self, k):
        columns = [self.brownian[:, k:k + 1]]
        if self.traj is not None:
            for name in ('x', 'y', 'z', 'kappa'):
                values = getattr(self.traj, name)[:, k]
                columns.append(np.broadcast_to(values, (self.w.n_paths, values.shape[-1])))
        return np.concatenate(columns, axis=1)


def _informative(features):
    """Standardised columns, dropping constant ones and exact duplicates up to affine maps."""
    kept = []
    for column in features.T:
        scale = np.std(column)
        if scale <= 1e-12 * max(1.0, np.max(np.abs(column))):
            continue
        z = (column - np.mean(column)) / scale
        if any(abs(np.mean(z * other)) > 1 - 1e-10 for other in kept):
            continue
        kept.append(z)
    if not kept:
        return np.zeros((features.shape[0], 0))
    return np.stack(kept, axis=1)


def polynomial_basis(features, degree):
    """All monomials of total degree <= degree in the informative feature columns."""
    z = _informative(features)
    n_rows = features.shape[0]
    columns = [np.ones(n_rows)]
    for power in range(1, degree + 1):
        for combo in itertools.combinations_with_replacement(range(z.shape[1]), power):
            columns.append(np.prod(z[:, combo], axis=1))
    return np.stack(columns, axis=1)


def conditional_expectation(features, targets, degree=None):
    """Fitted E[targets | features] per path, with the ridge system's condition number.

    targets has shape (paths, r); every column shares one normal-equation solve.
    """
    degree = toolkit_setting('REGRESSION_DEGREE') if degree is None else degree
    targets = np.asarray(targets, dtype=float)
    squeeze = targets.ndim == 1
    if squeeze:
        targets = targets[:, None]
    X = polynomial_basis(features, degree)
    if X.shape[1] == 1:
        fitted = np.broadcast_to(targets.mean(axis=0), targets.shape).copy()
        return (fitted[:, 0] if squeeze else fitted), 1.0

    gram = X.T @ X
    lam = toolkit_setting('RIDGE') * np.trace(gram) / gram.shape[0]
    A = gram + lam * np.eye(gram.shape[0])
    condition = float(np.linalg.cond(A))
    limit = toolkit_setting('MAX_CONDITION')
    if not np.isfinite(condition) or condition > limit:
        raise IllConditionedRegression(
            f'regression matrix condition number {condition:.3e} exceeds {limit:.1e}',
            condition_number=condition,
        )
    if condition > 1e-2 * limit:
        logger.warning('regression close to ill-conditioned (cond=%.3e)', condition)
    coeffs = np.linalg.solve(A, X.T @ targets)
    fitted = check_finite(X @ coeffs, 'regression fit')
    return (fitted[:, 0] if squeeze else fitted), condition


def martingale_increment(features, targets, mean, dw, dt, degree=None):
    """E[(targets - mean) ΔW_k | F_k] / dt, the Z-part of a backward step."""
    centred = (targets - mean) * (dw[:, None] if np.ndim(targets) == 2 else dw)
    fitted, condition = conditional_expectation(features, centred, degree)
    return fitted / dt, condition
