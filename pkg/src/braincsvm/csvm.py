"""Cost-sensitive soft-margin SVM with an RBF kernel.

The dual solved here is

    max  sum(a) - 1/2 sum_ij a_i a_j y_i y_j K(x_i, x_j)
    s.t. sum(a_i y_i) = 0,   0 <= a_i <= C_i

where ``C_i = C * r`` for the protected class (+1, whose misses are false
negatives) and ``C_i = C`` for the other class.  The solver is SMO with the
maximal-violating-pair working set rule; internally it minimizes the
negated objective ``f(a) = 1/2 a'Qa - e'a`` with ``Q_ij = y_i y_j K_ij``.
"""
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, InvalidArgumentError

PROTECTED = 1
DEFAULT_TOL = 1e-3
DEFAULT_MAX_PASSES = 10_000
DEFAULT_COST_RATIO = 4.0
FULL_GRAM_LIMIT = 4000
ALPHA_EPS = 1e-12
_TAU = 1e-12


@dataclass(frozen=True)
class KernelSpec:
    g: float

    def __post_init__(self):
        if not self.g > 0:
            raise InvalidArgumentError(f"kernel parameter g must be positive, got {self.g}")


@dataclass(frozen=True)
class CostSpec:
    C: float
    r: float = DEFAULT_COST_RATIO

    def __post_init__(self):
        if not self.C > 0:
            raise InvalidArgumentError(f"C must be positive, got {self.C}")
        if not self.r >= 1:
            raise InvalidArgumentError(f"cost ratio must be >= 1, got {self.r}")

    def penalties(self, y):
        """Per-sample box bound C_i."""
        return np.where(np.asarray(y) == PROTECTED, self.C * self.r, self.C).astype(np.float64)


@dataclass
class SvmModel:
    support_vectors: np.ndarray  # (n_sv, d)
    dual_coef: np.ndarray  # alpha_i * y_i for each support vector
    bias: float
    kernel: KernelSpec
    cost: CostSpec
    support_indices: np.ndarray = None  # rows of the training matrix
    n_iter: int = 0
    objective: float = float("nan")  # dual objective at the solution

    @property
    def alphas(self):
        return np.abs(self.dual_coef)

    @property
    def sv_labels(self):
        return np.where(self.dual_coef > 0, 1, -1)

    @property
    def n_features(self):
        return self.support_vectors.shape[1]


def rbf(x, z, g):
    x = np.asarray(x, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if x.shape != z.shape:
        raise InvalidArgumentError(f"vector lengths differ: {x.shape} vs {z.shape}")
    if not g > 0:
        raise InvalidArgumentError(f"g must be positive, got {g}")
    d = x - z
    return float(np.exp(-g * np.dot(d, d)))


def sq_distances(A, B):
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    d = (A * A).sum(axis=1)[:, None] + (B * B).sum(axis=1)[None, :] - 2.0 * (A @ B.T)
    return np.maximum(d, 0.0)


def gram(A, B, g):
    """RBF kernel matrix between the rows of ``A`` and ``B``."""
    return np.exp(-g * sq_distances(A, B))


class _KernelRows:
    """Rows of K for the training set: fully cached for small n, LRU otherwise."""

    def __init__(self, X, g, full_limit=FULL_GRAM_LIMIT, max_rows=512):
        self.X, self.g = X, g
        self.sq = (X * X).sum(axis=1)
        n = X.shape[0]
        self.full = None
        if n <= full_limit:
            k = gram(X, X, g)
            np.fill_diagonal(k, 1.0)
            self.full = k
        self._cache = OrderedDict()
        self._max_rows = max_rows

    def row(self, i):
        if self.full is not None:
            return self.full[i]
        hit = self._cache.get(i)
        if hit is not None:
            self._cache.move_to_end(i)
            return hit
        d = np.maximum(self.sq + self.sq[i] - 2.0 * (self.X @ self.X[i]), 0.0)
        d[i] = 0.0
        k = np.exp(-self.g * d)
        self._cache[i] = k
        if len(self._cache) > self._max_rows:
            self._cache.popitem(last=False)
        return k

    def diag(self):
        return np.ones(self.X.shape[0])


def _validate_training(X, y):
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
        raise InvalidArgumentError("X must be (n, d) and y must have n labels")
    if not np.all(np.isin(y, (-1, 1))):
        raise InvalidArgumentError("labels must be +1 or -1")
    if np.unique(y).size < 2:
        raise InvalidArgumentError("training data must contain both classes")
    if not np.all(np.isfinite(X)):
        raise InvalidArgumentError("features must be finite")
    return X, y.astype(np.float64)


def _select_pair(y, alpha, G, upper):
    """Maximal violating pair (i, j) and the KKT gap m - M."""
    v = -y * G
    up = ((y > 0) & (alpha < upper)) | ((y < 0) & (alpha > 0))
    low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < upper))
    if not up.any() or not low.any():
        return -1, -1, 0.0
    i = int(np.argmax(np.where(up, v, -np.inf)))
    j = int(np.argmin(np.where(low, v, np.inf)))
    return i, j, float(v[i] - v[j])


def _pair_update(i, j, y, alpha, G, Ci, Cj, Kii, Kjj, Kij):
    """Analytic two-variable step, clipped to the box (returns new a_i, a_j)."""
    ai, aj = alpha[i], alpha[j]
    if y[i] != y[j]:
        quad = Kii + Kjj - 2.0 * Kij
        if quad <= 0:
            quad = _TAU
        delta = (-G[i] - G[j]) / quad
        diff = ai - aj
        ai += delta
        aj += delta
        if diff > 0:
            if aj < 0:
                aj, ai = 0.0, diff
        elif ai < 0:
            ai, aj = 0.0, -diff
        if diff > Ci - Cj:
            if ai > Ci:
                ai, aj = Ci, Ci - diff
        elif aj > Cj:
            aj, ai = Cj, Cj + diff
    else:
        quad = Kii + Kjj - 2.0 * Kij
        if quad <= 0:
            quad = _TAU
        delta = (G[i] - G[j]) / quad
        total = ai + aj
        ai -= delta
        aj += delta
        if total > Ci:
            if ai > Ci:
                ai, aj = Ci, total - Ci
        elif aj < 0:
            aj, ai = 0.0, total
        if total > Cj:
            if aj > Cj:
                aj, ai = Cj, total - Cj
        elif ai < 0:
            ai, aj = 0.0, total
    return ai, aj


def _bias(y, alpha, G, upper):
    v = -y * G
    free = (alpha > 0) & (alpha < upper)
    if free.any():
        return float(v[free].mean())
    # no free vector: midpoint of the interval of biases consistent with KKT
    at_lo = alpha <= 0
    at_hi = alpha >= upper
    lower_set = ((y > 0) & at_lo) | ((y < 0) & at_hi)
    upper_set = ((y > 0) & at_hi) | ((y < 0) & at_lo)
    lo = v[lower_set].max() if lower_set.any() else -np.inf
    hi = v[upper_set].min() if upper_set.any() else np.inf
    if np.isinf(lo):
        return float(hi)
    if np.isinf(hi):
        return float(lo)
    return float((lo + hi) / 2.0)


def solve_dual(X, y, kernel, cost, tol=DEFAULT_TOL, max_passes=DEFAULT_MAX_PASSES,
               full_gram_limit=FULL_GRAM_LIMIT):
    """Run SMO; returns ``(alpha, bias, n_iter, objective)`` over all samples."""
    X, y = _validate_training(X, y)
    n = X.shape[0]
    upper = cost.penalties(y)
    rows = _KernelRows(X, kernel.g, full_limit=full_gram_limit)
    alpha = np.zeros(n)
    G = -np.ones(n)
    best_gap, stall, it = np.inf, 0, 0
    hard_cap = max(10_000_000, 100 * n)
    while True:
        i, j, gap = _select_pair(y, alpha, G, upper)
        if i < 0 or gap < tol:
            break
        if gap < best_gap:
            best_gap, stall = gap, 0
        else:
            stall += 1
            if stall >= max_passes:
                raise ConvergenceError(f"SMO made no progress in {max_passes} updates (gap {gap:.3g})")
        it += 1
        if it > hard_cap:
            raise ConvergenceError(f"SMO exceeded {hard_cap} updates (gap {gap:.3g})")
        Ki, Kj = rows.row(i), rows.row(j)
        ai, aj = _pair_update(i, j, y, alpha, G, upper[i], upper[j], Ki[i], Kj[j], Ki[j])
        dai, daj = ai - alpha[i], aj - alpha[j]
        alpha[i], alpha[j] = ai, aj
        # column t of Q is y * y_t * K[:, t]
        G += y * (y[i] * dai * Ki + y[j] * daj * Kj)
    b = _bias(y, alpha, G, upper)
    objective = float(alpha.sum() - 0.5 * alpha @ (G + 1.0))
    return alpha, b, it, objective


def train_svm(X, y, kernel, cost, tol=DEFAULT_TOL, max_passes=DEFAULT_MAX_PASSES):
    X_arr = np.asarray(X, dtype=np.float64)
    alpha, b, n_iter, objective = solve_dual(X_arr, y, kernel, cost, tol, max_passes)
    y = np.asarray(y, dtype=np.float64)
    keep = np.flatnonzero(alpha > ALPHA_EPS)
    return SvmModel(support_vectors=X_arr[keep].copy(), dual_coef=alpha[keep] * y[keep],
                    bias=b, kernel=kernel, cost=cost, support_indices=keep,
                    n_iter=n_iter, objective=objective)


def dual_objective(alpha, X, y, g):
    """Dual objective value of an arbitrary alpha (for checks and oracles)."""
    y = np.asarray(y, dtype=np.float64)
    K = gram(X, X, g)
    ay = np.asarray(alpha) * y
    return float(np.sum(alpha) - 0.5 * ay @ K @ ay)


def decision_function(model, Z):
    """Raw scores ``sum_i a_i y_i K(x_i, z) + b`` for each row of ``Z``."""
    Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
    if Z.shape[1] != model.n_features:
        raise InvalidArgumentError(f"feature length {Z.shape[1]} does not match model ({model.n_features})")
    if model.support_vectors.shape[0] == 0:
        return np.full(Z.shape[0], model.bias)
    return gram(Z, model.support_vectors, model.kernel.g) @ model.dual_coef + model.bias


def predict(model, Z):
    """Labels in {+1, -1}; a score of exactly 0 goes to the protected class."""
    return np.where(decision_function(model, Z) >= 0, PROTECTED, -PROTECTED)


def decide(model, z):
    """Score and label for a single feature vector."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 1:
        raise InvalidArgumentError("decide expects a single feature vector")
    score = float(decision_function(model, z[None, :])[0])
    return score, PROTECTED if score >= 0 else -PROTECTED


def kkt_violations(model, X, y, tol=DEFAULT_TOL):
    """Indices violating the KKT bands at tolerance ``10 * tol``.

    alpha = 0 needs y f(x) >= 1 - 10 tol; alpha = C_i needs y f(x) <= 1 + 10 tol;
    free vectors need |y f(x) - 1| <= 10 tol.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    alpha = np.zeros(len(y))
    alpha[model.support_indices] = model.alphas
    upper = model.cost.penalties(y)
    margin = y * decision_function(model, X)
    band = 10 * tol
    bad = np.zeros(len(y), dtype=bool)
    zero = alpha <= ALPHA_EPS
    at_c = alpha >= upper - ALPHA_EPS * np.maximum(1.0, upper)
    free = ~zero & ~at_c
    bad |= zero & (margin < 1 - band)
    bad |= at_c & (margin > 1 + band)
    bad |= free & (np.abs(margin - 1) > band)
    return np.flatnonzero(bad)
