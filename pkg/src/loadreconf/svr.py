"""Epsilon-insensitive support vector regression with an RBF kernel.

Training solves the standard dual

    max_beta  -1/2 beta' K beta - eps * sum|beta_i| + y' beta
    s.t.      sum beta_i = 0,  -C <= beta_i <= C

by sequential minimal optimisation over the 2n-variable split
``beta = alpha - alpha*``. The working pair is the maximal violator plus its
second-order partner, as in LIBSVM. Features and
targets are standardised on the training data; ``epsilon`` and the dual live
in the standardised target space.
"""

from __future__ import annotations

import json
import math
from collections import OrderedDict
from dataclasses import asdict, dataclass

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin

from .validation import check_features, check_is_fitted, check_regression_data

_TAU = 1e-12


@dataclass(frozen=True)
class Hyperparams:
    gamma: float
    c: float
    epsilon: float

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if not self.c > 0:
            raise ValueError("C must be positive")
        if not self.epsilon >= 0:
            raise ValueError("epsilon must be non-negative")

    def as_params(self) -> dict:
        return {"gamma": self.gamma, "C": self.c, "epsilon": self.epsilon}

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.gamma, self.c, self.epsilon)


class SVRConvergenceError(RuntimeError):
    """SMO hit its iteration cap; carries the best iterate reached."""

    def __init__(self, message, beta, intercept, violation):
        super().__init__(message)
        self.beta = beta
        self.intercept = intercept
        self.violation = violation


def rbf_kernel(x1, x2, gamma: float) -> float:
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    if x1.shape != x2.shape:
        raise ValueError(f"dimension mismatch: {x1.shape} vs {x2.shape}")
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    return float(np.exp(-gamma * np.sum((x1 - x2) ** 2)))


def rbf_matrix(A: np.ndarray, B: np.ndarray, gamma: float) -> np.ndarray:
    sq = (np.sum(A * A, axis=1)[:, None] + np.sum(B * B, axis=1)[None, :] - 2.0 * A @ B.T)
    return np.exp(-gamma * np.maximum(sq, 0.0))


class KernelRowCache:
    """Least-recently-used cache of RBF kernel rows over a fixed sample set."""

    def __init__(self, X: np.ndarray, gamma: float, size: int = 1000):
        self.X = X
        self.gamma = gamma
        self.size = max(int(size), 1)
        self._sq = np.sum(X * X, axis=1)
        self._rows: OrderedDict[int, np.ndarray] = OrderedDict()
        self.misses = 0

    def __call__(self, i: int) -> np.ndarray:
        row = self._rows.get(i)
        if row is not None:
            self._rows.move_to_end(i)
            return row
        self.misses += 1
        d = self._sq + self._sq[i] - 2.0 * (self.X @ self.X[i])
        row = np.exp(-self.gamma * np.maximum(d, 0.0))
        row[i] = 1.0
        self._rows[i] = row
        if len(self._rows) > self.size:
            self._rows.popitem(last=False)
        return row


def smo_epsilon_svr(X, y, gamma, C, epsilon, tol=1e-3, max_iter=1_000_000, cache_size=1000):
    """Solve the epsilon-SVR dual. Returns ``(beta, intercept, n_iter)``."""
    n = len(y)
    kernel_row = KernelRowCache(X, gamma, cache_size)
    sign = np.concatenate([np.ones(n), -np.ones(n)])
    G = np.concatenate([epsilon - y, epsilon + y])  # gradient at a = 0
    a = np.zeros(2 * n)
    pos = sign > 0
    neg_inf = -np.inf

    yG = -sign * G  # kept in step with G
    up = pos.copy()  # may increase y_t * a_t
    low = ~pos
    buf = np.empty(2 * n)

    def select():
        # i: maximal violator; j: second-order choice (largest guaranteed decrease)
        np.copyto(buf, neg_inf)
        np.copyto(buf, yG, where=up)
        i = int(np.argmax(buf))
        np.copyto(buf, neg_inf)
        np.negative(yG, out=buf, where=low)
        j_min = int(np.argmax(buf))
        gap = yG[i] + buf[j_min]
        if gap < tol:
            return i, j_min, gap
        Ki = kernel_row(i % n)
        b = yG[i] - yG
        curv = 2.0 - 2.0 * np.concatenate([Ki, Ki])
        np.maximum(curv, _TAU, out=curv)
        np.copyto(buf, neg_inf)
        np.divide(b * b, curv, out=buf, where=low & (b > 0))
        return i, int(np.argmax(buf)), gap

    for it in range(max_iter):
        i, j, gap = select()
        if gap < tol:
            break
        ii, jj = i % n, j % n
        Ki = kernel_row(ii)
        Kj = kernel_row(jj)
        yi, yj = sign[i], sign[j]
        Qij = yi * yj * Ki[jj]
        old_i, old_j = a[i], a[j]
        if yi != yj:
            quad = max(2.0 + 2.0 * Qij, _TAU)  # Q_ii = Q_jj = 1 for RBF
            delta = (-G[i] - G[j]) / quad
            diff = a[i] - a[j]
            a[i] += delta
            a[j] += delta
            if diff > 0:
                if a[j] < 0:
                    a[j] = 0.0
                    a[i] = diff
            elif a[i] < 0:
                a[i] = 0.0
                a[j] = -diff
            if diff > 0:
                if a[i] > C:
                    a[i] = C
                    a[j] = C - diff
            elif a[j] > C:
                a[j] = C
                a[i] = C + diff
        else:
            quad = max(2.0 - 2.0 * Qij, _TAU)
            delta = (G[i] - G[j]) / quad
            total = a[i] + a[j]
            a[i] -= delta
            a[j] += delta
            if total > C:
                if a[i] > C:
                    a[i] = C
                    a[j] = total - C
            elif a[j] < 0:
                a[j] = 0.0
                a[i] = total
            if total > C:
                if a[j] > C:
                    a[j] = C
                    a[i] = total - C
            elif a[i] < 0:
                a[i] = 0.0
                a[j] = total
        di = (a[i] - old_i) * yi
        dj = (a[j] - old_j) * yj
        # Q[:, i] = sign * y_i * K[:, i mod n]
        upd = di * Ki + dj * Kj
        G[:n] += upd
        G[n:] -= upd
        yG[:n] -= upd
        yG[n:] -= upd
        for t in (i, j):
            up[t] = a[t] < C if pos[t] else a[t] > 0
            low[t] = a[t] > 0 if pos[t] else a[t] < C
    else:
        i, j, gap = select()
        beta = a[:n] - a[n:]
        raise SVRConvergenceError(
            f"SMO did not reach KKT tolerance {tol} in {max_iter} updates (violation {gap:.3g})",
            beta, -_rho(a, G, sign, C), gap,
        )
    return a[:n] - a[n:], -_rho(a, G, sign, C), it


def _rho(a, G, sign, C) -> float:
    yG = sign * G
    at_upper = a >= C
    at_lower = a <= 0
    free = ~(at_upper | at_lower)
    if np.any(free):
        return float(np.mean(yG[free]))
    pos = sign > 0
    ub_mask = (at_upper & ~pos) | (at_lower & pos)
    lb_mask = (at_upper & pos) | (at_lower & ~pos)
    ub = np.min(yG[ub_mask]) if np.any(ub_mask) else np.inf
    lb = np.max(yG[lb_mask]) if np.any(lb_mask) else -np.inf
    return float((ub + lb) / 2)


def dual_objective(K: np.ndarray, y: np.ndarray, epsilon: float, beta: np.ndarray) -> float:
    """Dual value ``-1/2 b'Kb - eps*|b|_1 + y'b`` (larger is better)."""
    return float(-0.5 * beta @ K @ beta - epsilon * np.sum(np.abs(beta)) + y @ beta)


def _standardise(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = a.mean(axis=0)
    scale = a.std(axis=0)
    scale = np.where(scale > 0, scale, 1.0)
    return mean, scale


class EpsilonSVR(RegressorMixin, BaseEstimator):
    """RBF epsilon-SVR trained by SMO.

    Parameters
    ----------
    gamma : float
        RBF width, ``k(a, b) = exp(-gamma |a - b|^2)`` on standardised features.
    C : float
        Penalty on tube violations.
    epsilon : float
        Tube half-width in standardised target units.
    tol : float
        KKT violation at which SMO stops.
    max_iter : int
        Cap on pair updates.
    cache_size : int
        Number of kernel rows held in the LRU cache.
    """

    def __init__(self, gamma=1.0, C=1.0, epsilon=0.1, tol=1e-3, max_iter=1_000_000, cache_size=1000):
        self.gamma = gamma
        self.C = C
        self.epsilon = epsilon
        self.tol = tol
        self.max_iter = max_iter
        self.cache_size = cache_size

    @property
    def hyperparams(self) -> Hyperparams:
        return Hyperparams(self.gamma, self.C, self.epsilon)

    def fit(self, X, y):
        hp = self.hyperparams
        X, y = check_regression_data(X, y)
        self.x_mean_, self.x_scale_ = _standardise(X)
        y_mean, y_scale = _standardise(y[:, None])
        self.y_mean_, self.y_scale_ = float(y_mean[0]), float(y_scale[0])
        Xs = (X - self.x_mean_) / self.x_scale_
        ys = (y - self.y_mean_) / self.y_scale_
        beta, b, n_iter = smo_epsilon_svr(
            Xs, ys, hp.gamma, hp.c, hp.epsilon, self.tol, self.max_iter, self.cache_size
        )
        self._set_solution(X, y, Xs, beta, b)
        self.n_iter_ = n_iter
        return self

    def _set_solution(self, X, y, Xs, beta, b):
        sv = np.flatnonzero(beta != 0)
        self.n_features_in_ = X.shape[1]
        self.beta_ = beta
        self.support_ = sv
        self.support_vectors_ = Xs[sv]
        self.support_samples_ = (X[sv], y[sv])
        self.dual_coef_ = beta[sv]
        self.intercept_ = float(b)

    def predict_scaled(self, X) -> np.ndarray:
        """Prediction in standardised target units."""
        check_is_fitted(self, "dual_coef_")
        X = check_features(X, self.n_features_in_, type(self).__name__)
        Xs = (X - self.x_mean_) / self.x_scale_
        if len(self.dual_coef_) == 0:
            return np.full(len(Xs), self.intercept_)
        return rbf_matrix(Xs, self.support_vectors_, self.gamma) @ self.dual_coef_ + self.intercept_

    def predict(self, X) -> np.ndarray:
        return self.predict_scaled(X) * self.y_scale_ + self.y_mean_

    # -- persistence -------------------------------------------------------
    def to_dict(self) -> dict:
        check_is_fitted(self, "dual_coef_")
        Xsv, ysv = self.support_samples_
        return {
            "hyperparams": asdict(self.hyperparams),
            "solver": {"tol": self.tol, "max_iter": self.max_iter, "cache_size": self.cache_size},
            "feature_scaler": {"mean": self.x_mean_.tolist(), "scale": self.x_scale_.tolist()},
            "target_scaler": {"mean": self.y_mean_, "scale": self.y_scale_},
            "support_samples": {"features": Xsv.tolist(), "targets": ysv.tolist()},
            "beta": self.dual_coef_.tolist(),
            "b": self.intercept_,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EpsilonSVR":
        hp = data["hyperparams"]
        model = cls(gamma=hp["gamma"], C=hp["c"], epsilon=hp["epsilon"], **data.get("solver", {}))
        model.x_mean_ = np.asarray(data["feature_scaler"]["mean"], dtype=float)
        model.x_scale_ = np.asarray(data["feature_scaler"]["scale"], dtype=float)
        model.y_mean_ = float(data["target_scaler"]["mean"])
        model.y_scale_ = float(data["target_scaler"]["scale"])
        Xsv = np.asarray(data["support_samples"]["features"], dtype=float).reshape(
            -1, len(model.x_mean_))
        ysv = np.asarray(data["support_samples"]["targets"], dtype=float)
        model.n_features_in_ = len(model.x_mean_)
        model.support_samples_ = (Xsv, ysv)
        model.support_vectors_ = (Xsv - model.x_mean_) / model.x_scale_
        model.dual_coef_ = np.asarray(data["beta"], dtype=float)
        model.beta_ = model.dual_coef_
        model.support_ = np.arange(len(model.dual_coef_))
        model.intercept_ = float(data["b"])
        return model

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "EpsilonSVR":
        return cls.from_dict(json.loads(text))


# ---------------------------------------------------------------- functional API

def kernel(x1, x2, gamma: float) -> float:
    return rbf_kernel(x1, x2, gamma)


def train(X, y, hyper: Hyperparams, **solver) -> EpsilonSVR:
    return EpsilonSVR(**hyper.as_params(), **solver).fit(X, y)


def predict(model: EpsilonSVR, x) -> float | np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        return float(model.predict(x[None, :])[0])
    return model.predict(x)


def risk(model: EpsilonSVR, X, y) -> float:
    """Primal soft-margin risk ``1/2 |w|^2 + C * sum(xi + xi*)`` in standardised units."""
    X, y = check_regression_data(X, y, min_samples=1)
    beta = model.dual_coef_
    K = rbf_matrix(model.support_vectors_, model.support_vectors_, model.gamma)
    flat = 0.5 * float(beta @ K @ beta)
    err = (y - model.y_mean_) / model.y_scale_ - model.predict_scaled(X)
    xi = np.maximum(err - model.epsilon, 0.0)
    xi_star = np.maximum(-err - model.epsilon, 0.0)
    return flat + model.C * float(np.sum(xi + xi_star))


def lipschitz_bound(model: EpsilonSVR) -> float:
    """Upper bound on ``|f(a) - f(b)| / |a - b|`` for the raw-unit predictor."""
    base = float(np.sum(np.abs(model.dual_coef_))) * math.sqrt(2 * model.gamma / math.e)
    return base * model.y_scale_ / float(np.min(model.x_scale_))
