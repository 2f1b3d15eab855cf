"""Sample-weighted L2-regularized logistic regression.

Minimizes ``sum_i w_i * bce(y_i, sigmoid(x_i . beta + b)) + l2/2 * |beta|^2``
with the intercept unpenalized and weights rescaled to mean 1. Fitting is
full-batch and deterministic: zero start and a backtracking (Armijo) line
search along Newton directions by default. L-BFGS and plain gradient descent
share the same objective and line search and serve as cross-checks.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import DatasetTable

OPTIMIZERS = ("newton", "lbfgs", "gd")


class FitError(RuntimeError):
    pass


@dataclass(frozen=True)
class Hyperparams:
    l2_strength: float = 1.0
    max_iterations: int = 1000
    gradient_tolerance: float = 1e-6
    decision_threshold: float = 0.5
    optimizer: str = "newton"
    memory: int = 10

    def __post_init__(self):
        if self.l2_strength < 0:
            raise ValueError("l2_strength must be >= 0")
        if not 0.0 < self.decision_threshold < 1.0:
            raise ValueError("decision_threshold must lie in (0, 1)")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


@dataclass(frozen=True, eq=False)
class Model:
    coefficients: np.ndarray
    intercept: float
    feature_names: tuple[str, ...] = ()
    iterations: int = field(default=0, compare=False)
    gradient_norm: float = field(default=float("nan"), compare=False)
    converged: bool = field(default=False, compare=False)

    def __post_init__(self):
        if not (np.all(np.isfinite(self.coefficients)) and np.isfinite(self.intercept)):
            raise FitError("model parameters are not finite")

    def __eq__(self, other) -> bool:
        if not isinstance(other, Model):
            return NotImplemented
        return (np.array_equal(self.coefficients, other.coefficients)
                and self.intercept == other.intercept and self.feature_names == other.feature_names)

    __hash__ = None

    def to_json(self) -> dict:
        return {
            "feature_names": list(self.feature_names),
            "coefficients": [float(c) for c in self.coefficients],
            "intercept": float(self.intercept),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "Model":
        return cls(
            coefficients=np.asarray(doc["coefficients"], dtype=float),
            intercept=float(doc["intercept"]),
            feature_names=tuple(doc.get("feature_names", ())),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2))

    @classmethod
    def load(cls, path: str | Path) -> "Model":
        return cls.from_json(json.loads(Path(path).read_text()))


def sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=float)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def normalize_weights(weights: np.ndarray) -> np.ndarray:
    weights = np.asarray(weights, dtype=float)
    if weights.size == 0:
        return weights
    if np.any(weights < 0) or not np.all(np.isfinite(weights)):
        raise ValueError("sample weights must be finite and nonnegative")
    mean = weights.mean()
    if mean <= 0:
        raise ValueError("sample weights sum to zero")
    return weights / mean


class Objective:
    """Weighted cross-entropy plus L2 on coefficients.

    Parameters are packed as ``theta = [beta..., b]``. Weights are used as
    given; callers normalize.
    """

    def __init__(self, X: np.ndarray, y: np.ndarray, w: np.ndarray, l2: float):
        self.X = np.ascontiguousarray(X, dtype=float)
        self.y = np.asarray(y, dtype=float)
        self.w = np.asarray(w, dtype=float)
        self.l2 = float(l2)

    def value(self, theta: np.ndarray) -> float:
        beta, b = theta[:-1], theta[-1]
        z = self.X @ beta + b
        # log(1 + e^z) - y*z is the per-row cross-entropy of sigmoid(z)
        data = float(self.w @ (np.logaddexp(0.0, z) - self.y * z))
        return data + 0.5 * self.l2 * float(beta @ beta)

    def value_and_grad(self, theta: np.ndarray) -> tuple[float, np.ndarray]:
        beta, b = theta[:-1], theta[-1]
        z = self.X @ beta + b
        data = float(self.w @ (np.logaddexp(0.0, z) - self.y * z))
        r = self.w * (sigmoid(z) - self.y)
        grad = np.empty_like(theta)
        grad[:-1] = self.X.T @ r + self.l2 * beta
        grad[-1] = r.sum()
        return data + 0.5 * self.l2 * float(beta @ beta), grad

    def grad(self, theta: np.ndarray) -> np.ndarray:
        return self.value_and_grad(theta)[1]

    def hessian(self, theta: np.ndarray) -> np.ndarray:
        z = self.X @ theta[:-1] + theta[-1]
        p = sigmoid(z)
        h = self.w * p * (1.0 - p)
        d = self.X.shape[1]
        H = np.empty((d + 1, d + 1))
        hx = self.X * h[:, None]
        H[:d, :d] = hx.T @ self.X
        H[:d, d] = H[d, :d] = hx.sum(axis=0)
        H[d, d] = h.sum()
        H[np.arange(d), np.arange(d)] += self.l2
        return H


_ARMIJO = 1e-4
_MAX_BACKTRACKS = 60


def _line_search(obj: Objective, theta, f, g, d, t0):
    """Backtracking until the Armijo condition holds.

    Once decreases fall below the resolution of the loss, a step within a few
    ulps of ``f`` is accepted only if it also shrinks the gradient.
    """
    gd = float(g @ d)
    slack = 8 * np.finfo(float).eps * max(1.0, abs(f))
    t = t0
    for _ in range(_MAX_BACKTRACKS):
        cand = theta + t * d
        f_new, g_new = obj.value_and_grad(cand)
        if np.isfinite(f_new):
            if f_new - f <= _ARMIJO * t * gd:
                return cand, f_new, g_new
            if f_new - f <= slack and np.max(np.abs(g_new)) < np.max(np.abs(g)):
                return cand, f_new, g_new
        t *= 0.5
    return None


def _minimize_lbfgs(obj: Objective, theta, hp: Hyperparams):
    f, g = obj.value_and_grad(theta)
    pairs: deque = deque(maxlen=hp.memory)
    it = 0
    while it < hp.max_iterations and np.max(np.abs(g)) > hp.gradient_tolerance:
        # two-loop recursion
        q = g.copy()
        alphas = []
        for s, yv, rho in reversed(pairs):
            a = rho * float(s @ q)
            q -= a * yv
            alphas.append(a)
        if pairs:
            s, yv, _ = pairs[-1]
            q *= float(s @ yv) / float(yv @ yv)
        else:
            q /= max(1.0, float(np.linalg.norm(g)))
        for (s, yv, rho), a in zip(pairs, reversed(alphas)):
            q += (a - rho * float(yv @ q)) * s
        d = -q
        if float(g @ d) >= 0:  # not a descent direction; restart from steepest descent
            pairs.clear()
            d = -g / max(1.0, float(np.linalg.norm(g)))
        step = _line_search(obj, theta, f, g, d, 1.0)
        it += 1
        if step is None:
            if not pairs:
                break
            pairs.clear()
            continue
        new_theta, f_new, g_new = step
        s, yv = new_theta - theta, g_new - g
        sy = float(s @ yv)
        if sy > 1e-12 * float(s @ s):
            pairs.append((s, yv, 1.0 / sy))
        theta, f, g = new_theta, f_new, g_new
    return theta, f, g, it


def _minimize_newton(obj: Objective, theta, hp: Hyperparams):
    f, g = obj.value_and_grad(theta)
    it = 0
    while it < hp.max_iterations and np.max(np.abs(g)) > hp.gradient_tolerance:
        H = obj.hessian(theta)
        try:
            d = -np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            d = -np.linalg.lstsq(H, g, rcond=None)[0]
        if not np.all(np.isfinite(d)) or float(g @ d) >= 0:
            d = -g / max(1.0, float(np.linalg.norm(g)))
        step = _line_search(obj, theta, f, g, d, 1.0)
        it += 1
        if step is None:
            break
        theta, f, g = step
    return theta, f, g, it


def _minimize_gd(obj: Objective, theta, hp: Hyperparams):
    f, g = obj.value_and_grad(theta)
    t = 1.0
    it = 0
    while it < hp.max_iterations and np.max(np.abs(g)) > hp.gradient_tolerance:
        step = _line_search(obj, theta, f, g, -g, t)
        it += 1
        if step is None:
            break
        new_theta, f, g_new = step
        # next trial step: twice the accepted one
        t = 2.0 * float(np.linalg.norm(new_theta - theta)) / max(float(np.linalg.norm(g)), 1e-300)
        theta, g = new_theta, g_new
    return theta, f, g, it


def fit_arrays(X: np.ndarray, y: np.ndarray, weights: np.ndarray, hp: Hyperparams = Hyperparams(),
               feature_names: Sequence[str] = ()) -> Model:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    if X.shape[0] != y.shape[0] or np.shape(weights) != y.shape:
        raise ValueError("X, y and weights must have the same number of rows")
    classes = np.unique(y)
    if classes.size < 2:
        raise FitError(f"training data has a single class {classes.tolist()}")
    obj = Objective(X, y, normalize_weights(weights), hp.l2_strength)
    theta = np.zeros(X.shape[1] + 1)
    minimize = {"newton": _minimize_newton, "lbfgs": _minimize_lbfgs, "gd": _minimize_gd}[hp.optimizer]
    theta, f, g, it = minimize(obj, theta, hp)
    if not np.isfinite(f):
        raise FitError("loss became non-finite during fitting")
    gnorm = float(np.max(np.abs(g)))
    return Model(
        coefficients=theta[:-1].copy(),
        intercept=float(theta[-1]),
        feature_names=tuple(feature_names),
        iterations=it,
        gradient_norm=gnorm,
        converged=gnorm <= hp.gradient_tolerance,
    )


def fit(train: DatasetTable, weights: np.ndarray, hp: Hyperparams = Hyperparams()) -> Model:
    if len(weights) != train.row_count:
        raise ValueError(f"{len(weights)} weights for {train.row_count} training rows")
    return fit_arrays(train.features, train.labels, weights, hp, train.feature_names)


def predict_proba(model: Model, features: np.ndarray) -> np.ndarray:
    features = np.asarray(features, dtype=float)
    if features.ndim != 2 or features.shape[1] != model.coefficients.shape[0]:
        raise ValueError(
            f"feature width {features.shape[-1] if features.ndim else 0} "
            f"does not match model width {model.coefficients.shape[0]}"
        )
    return sigmoid(features @ model.coefficients + model.intercept)


def predict(model: Model, features: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    return (predict_proba(model, features) >= threshold).astype(np.int8)
