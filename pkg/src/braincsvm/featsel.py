"""LASSO feature selection by cyclic coordinate descent.

Features are standardized inside :func:`fit_lasso` (mean 0, population
variance 1); the fitted coefficients live on that standardized scale and
the mask is expressed in the original feature indices.
"""
from dataclasses import dataclass

import numba
import numpy as np

from .errors import InvalidArgumentError

DEFAULT_LAMBDA_FRACTION = 0.01
DEFAULT_TOL = 1e-6
DEFAULT_MAX_ITER = 10_000


def soft_threshold(z, t):
    return np.sign(z) * np.maximum(np.abs(z) - t, 0.0)


@numba.njit(cache=True)
def _cd_sweeps(xt, resid, beta, active, lam, tol, max_iter, objective):
    # xt is (p, n): one standardized feature per row, so columns are contiguous.
    # Full sweeps alternate with sweeps over the nonzero coefficients only;
    # convergence is declared on a full sweep.
    p, n = xt.shape
    sweeps = 0
    full = True
    for it in range(max_iter):
        max_change = 0.0
        for j in range(p):
            if not active[j] or (not full and beta[j] == 0.0):
                continue
            old = beta[j]
            rho = old
            for i in range(n):
                rho += xt[j, i] * resid[i] / n
            if rho > lam:
                new = rho - lam
            elif rho < -lam:
                new = rho + lam
            else:
                new = 0.0
            delta = new - old
            if delta != 0.0:
                for i in range(n):
                    resid[i] -= xt[j, i] * delta
                beta[j] = new
                if abs(delta) > max_change:
                    max_change = abs(delta)
        rss = 0.0
        for i in range(n):
            rss += resid[i] * resid[i]
        l1 = 0.0
        for j in range(p):
            l1 += abs(beta[j])
        objective[it] = rss / (2.0 * n) + lam * l1
        sweeps = it + 1
        if max_change < tol:
            if full:
                break
            full = True
        else:
            full = False
    return sweeps


@numba.njit(cache=True)
def _max_correlation(xt, r):
    # same accumulation order as the first update in _cd_sweeps, so that
    # lam == lambda_max really does leave every coefficient at zero
    p, n = xt.shape
    best = 0.0
    for j in range(p):
        rho = 0.0
        for i in range(n):
            rho += xt[j, i] * r[i] / n
        if abs(rho) > best:
            best = abs(rho)
    return best


@dataclass
class LassoModel:
    coefficients: np.ndarray  # standardized scale
    intercept: float
    lam: float
    feature_means: np.ndarray
    feature_scales: np.ndarray  # 0 for constant features
    n_sweeps: int = 0
    objective_trace: np.ndarray = None  # objective after each sweep
    initial_objective: float = 0.0

    @property
    def raw_coefficients(self):
        """Coefficients for unstandardized features."""
        out = np.zeros_like(self.coefficients)
        nz = self.feature_scales > 0
        out[nz] = self.coefficients[nz] / self.feature_scales[nz]
        return out

    @property
    def raw_intercept(self):
        return float(self.intercept - self.raw_coefficients @ self.feature_means)

    def standardize(self, X):
        X = np.asarray(X, dtype=np.float64)
        safe = np.where(self.feature_scales > 0, self.feature_scales, 1.0)
        return np.where(self.feature_scales > 0, (X - self.feature_means) / safe, 0.0)

    def predict(self, X):
        return self.standardize(X) @ self.coefficients + self.intercept


def _check_xy(X, y):
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or y.ndim != 1:
        raise InvalidArgumentError("X must be 2-D and y 1-D")
    if X.shape[0] != y.shape[0]:
        raise InvalidArgumentError(f"X has {X.shape[0]} rows but y has {y.shape[0]} entries")
    if X.shape[0] < 2:
        raise InvalidArgumentError("need at least two samples")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise InvalidArgumentError("X and y must be finite")
    return X, y


def standardize_stats(X):
    means = X.mean(axis=0)
    scales = X.std(axis=0)
    # features that are constant up to rounding are treated as constant
    scales[scales <= 1e-12 * np.maximum(1.0, np.abs(means))] = 0.0
    return means, scales


def _standardized(X, means, scales):
    safe = np.where(scales > 0, scales, 1.0)
    return np.where(scales > 0, (X - means) / safe, 0.0)


def lambda_max(X, y):
    """Smallest lambda at which every standardized coefficient is zero."""
    X, y = _check_xy(X, y)
    means, scales = standardize_stats(X)
    xt = np.ascontiguousarray(_standardized(X, means, scales).T)
    return float(_max_correlation(xt, y - y.mean()))


def fit_lasso(X, y, lam=None, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER, warm_start=None):
    """Minimize ``(1/2n)||y - b0 - Xs beta||^2 + lam * ||beta||_1``.

    ``lam=None`` uses ``0.01 * lambda_max``.  Stops once the largest
    coefficient change within a sweep drops below ``tol``.
    """
    X, y = _check_xy(X, y)
    if lam is not None and not lam >= 0:
        raise InvalidArgumentError(f"lambda must be >= 0, got {lam}")
    n = X.shape[0]
    means, scales = standardize_stats(X)
    xt = np.ascontiguousarray(_standardized(X, means, scales).T)
    intercept = float(y.mean())
    yc = y - intercept
    if lam is None:
        lam = DEFAULT_LAMBDA_FRACTION * float(_max_correlation(xt, yc))

    beta = np.zeros(X.shape[1]) if warm_start is None else np.array(warm_start, dtype=np.float64)
    active = scales > 0
    beta[~active] = 0.0
    resid = yc - xt.T @ beta
    initial = float(resid @ resid / (2 * n) + lam * np.abs(beta).sum())
    trace = np.zeros(max_iter)
    sweeps = _cd_sweeps(xt, resid, beta, active, float(lam), float(tol), int(max_iter), trace)
    return LassoModel(coefficients=beta, intercept=intercept, lam=float(lam),
                      feature_means=means, feature_scales=scales, n_sweeps=sweeps,
                      objective_trace=trace[:sweeps].copy(), initial_objective=initial)


def lambda_path(lam_max, n_lambdas=20, ratio=1e-3):
    """Log-spaced, decreasing path from ``lam_max`` down to ``ratio * lam_max``."""
    return lam_max * np.logspace(0.0, np.log10(ratio), n_lambdas)


def select_lambda_cv(X, y, folds=5, n_lambdas=20, seed=0, tol=1e-4, max_iter=1000):
    """Pick lambda from the path by k-fold mean squared prediction error."""
    from .evaltune import kfold_split

    X, y = _check_xy(X, y)
    path = lambda_path(lambda_max(X, y), n_lambdas)
    errors = np.zeros(len(path))
    for fold in kfold_split(len(y), folds, seed, labels=np.sign(y)):
        train = np.setdiff1d(np.arange(len(y)), fold)
        warm = None
        for k, lam in enumerate(path):
            model = fit_lasso(X[train], y[train], lam, tol=tol, max_iter=max_iter, warm_start=warm)
            warm = model.coefficients
            errors[k] += np.mean((y[fold] - model.predict(X[fold])) ** 2)
    # ties go to the larger lambda (sparser model)
    return float(path[int(np.argmin(errors))])


def mask(model):
    return model.coefficients != 0


def apply_mask(v, m):
    v = np.asarray(v)
    m = np.asarray(m, dtype=bool)
    if v.shape[-1] != m.shape[0]:
        raise InvalidArgumentError(f"vector length {v.shape[-1]} does not match mask length {m.shape[0]}")
    return v[..., m]
