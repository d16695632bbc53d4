"""Core probabilistic model: expert, gate, mixture prediction, loss, gradients.

The classifier mixes a trainable logistic expert f(x) = sigmoid(theta'x) with a
human guideline g(x) in {1, 0, -1} through a logistic gate rho(x) = sigmoid(w'x):

    yhat(x) = (1 - rho(x)) * f(x) + rho(x) * g(x)   if g(x) != -1
    yhat(x) = f(x)                                  if g(x) = -1

yhat is the Bernoulli parameter of the label likelihood. Training minimizes the
summed binary cross-entropy plus an L1 penalty on the gate weights (bias
excluded). A constant-1 bias coordinate is appended to every input internally,
so parameter vectors have length d + 1 with the bias last.

All probabilities are clipped to [delta, 1 - delta] before any logarithm so the
loss stays finite; rows at a clip boundary contribute gradients evaluated at
the clipped value.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit

from .errors import DimensionMismatchError

PROB_CLIP_DELTA = 1e-7

# Compactness caps on parameter norms; loose enough to never bind on
# standardized data, tight enough to stop divergence on separable data.
PARAM_NORM_CAP = 1e3

NOT_APPLICABLE = -1


@dataclass
class Standardization:
    """Per-column (mean, std) record applied as (x - mean) / std.

    Binary 0/1 columns and constant columns carry std = 1 so reapplying the
    record to raw data reproduces the standardized data exactly.
    """

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)
        self.std = np.asarray(self.std, dtype=float)
        if self.mean.shape != self.std.shape or self.mean.ndim != 1:
            raise ValueError("standardization mean/std must be 1-D and congruent")
        if not np.all(self.std > 0):
            raise ValueError("standardization stddev entries must be > 0")

    def apply(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.shape[-1] != self.mean.shape[0]:
            raise DimensionMismatchError(self.mean.shape[0], X.shape[-1])
        return (X - self.mean) / self.std


@dataclass
class Dataset:
    """Feature matrix with binary labels and named columns."""

    X: np.ndarray                       # (N, d) float
    y: np.ndarray                       # (N,) int in {0, 1}
    columns: list[str]
    standardization: Standardization | None = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.y = np.asarray(self.y)
        if self.X.ndim != 2 or self.X.shape[0] < 1 or self.X.shape[1] < 1:
            raise ValueError("dataset requires N >= 1 rows and d >= 1 columns")
        if self.y.shape != (self.X.shape[0],):
            raise ValueError("labels must be one per row")
        if not np.all(np.isin(self.y, (0, 1))):
            raise ValueError("labels must be 0 or 1")
        if not np.all(np.isfinite(self.X)):
            raise ValueError("features must be finite")
        if len(self.columns) != self.X.shape[1]:
            raise ValueError("column_names must match feature dimension")

    @property
    def n_rows(self) -> int:
        return self.X.shape[0]

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.X[idx], self.y[idx], list(self.columns), self.standardization)


@dataclass
class MoEModel:
    """Gate weights w, expert weights theta, and training hyperparameters.

    theta and w have length d + 1 (bias last). reference_loss holds the step-1
    training loss and is present whenever the model came out of constrained
    training.
    """

    theta: np.ndarray
    w: np.ndarray
    gamma: float = 0.0
    epsilon: float = 0.1
    reference_loss: float | None = None
    standardization: Standardization | None = None
    columns: list[str] = field(default_factory=list)
    delta: float = PROB_CLIP_DELTA

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float)
        self.w = np.asarray(self.w, dtype=float)
        if self.theta.shape != self.w.shape or self.theta.ndim != 1:
            raise ValueError("theta and w must be 1-D vectors of equal length")
        if not (np.all(np.isfinite(self.theta)) and np.all(np.isfinite(self.w))):
            raise ValueError("parameters must be finite")
        if self.gamma < 0 or self.epsilon < 0:
            raise ValueError("gamma and epsilon must be nonnegative")
        if not 0 < self.delta < 0.5:
            raise ValueError("prob_clip_delta must lie in (0, 0.5)")

    @property
    def n_features(self) -> int:
        return self.theta.shape[0] - 1

    def copy(self) -> "MoEModel":
        return replace(self, theta=self.theta.copy(), w=self.w.copy())

    @classmethod
    def zeros(cls, d: int, **kwargs) -> "MoEModel":
        return cls(theta=np.zeros(d + 1), w=np.zeros(d + 1), **kwargs)


def append_bias(X: np.ndarray) -> np.ndarray:
    """Append the constant-1 bias coordinate: (N, d) -> (N, d+1)."""
    X = np.asarray(X, dtype=float)
    one = np.ones(X.shape[:-1] + (1,))
    return np.concatenate([X, one], axis=-1)


def _check_dim(model: MoEModel, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.shape[-1] != model.n_features:
        raise DimensionMismatchError(model.n_features, X.shape[-1])
    return X


def expert_prob(model: MoEModel, X: np.ndarray) -> np.ndarray:
    """Expert probability f(x) = sigmoid(theta'[x, 1]), clipped.

    Accepts a single vector (d,) or a matrix (N, d); returns a scalar or (N,).
    """
    X = _check_dim(model, X)
    p = expit(append_bias(X) @ model.theta)
    return np.clip(p, model.delta, 1.0 - model.delta)


def gate_prob(model: MoEModel, X: np.ndarray) -> np.ndarray:
    """Gate probability rho(x) = sigmoid(w'[x, 1]), clipped. Same contract as expert_prob."""
    X = _check_dim(model, X)
    p = expit(append_bias(X) @ model.w)
    return np.clip(p, model.delta, 1.0 - model.delta)


def predict_proba(model: MoEModel, X: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Mixture prediction: the Bernoulli parameter of the label likelihood.

    g holds guideline outputs in {1, 0, -1}; -1 marks rows where no rule
    applies and the expert predicts alone.
    """
    g = np.asarray(g)
    f = expert_prob(model, X)
    rho = gate_prob(model, X)
    applicable = g != NOT_APPLICABLE
    mixed = np.clip((1.0 - rho) * f + rho * g, model.delta, 1.0 - model.delta)
    return np.where(applicable, mixed, f)


def loss(model: MoEModel, X: np.ndarray, y: np.ndarray, g: np.ndarray) -> float:
    """Summed binary cross-entropy of the mixture plus gamma * ||w||_1 (bias excluded)."""
    y = np.asarray(y)
    yhat = predict_proba(model, X, g)
    bce = -np.sum(y * np.log(yhat) + (1 - y) * np.log(1.0 - yhat))
    return float(bce + model.gamma * np.sum(np.abs(model.w[:-1])))


def loss_gradients(model: MoEModel, X: np.ndarray, y: np.ndarray,
                   g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Exact gradients of `loss` with respect to theta and w.

    The L1 term contributes the subgradient gamma * sign(w) with 0 at exact
    zeros, bias coordinate excluded. Rows at clip boundaries contribute the
    gradient evaluated at the clipped value.
    """
    X = _check_dim(model, X)
    y = np.asarray(y, dtype=float)
    g = np.asarray(g)
    Xb = append_bias(X)

    f = np.clip(expit(Xb @ model.theta), model.delta, 1.0 - model.delta)
    rho = np.clip(expit(Xb @ model.w), model.delta, 1.0 - model.delta)
    applicable = g != NOT_APPLICABLE
    mixed = np.clip((1.0 - rho) * f + rho * g, model.delta, 1.0 - model.delta)
    yhat = np.where(applicable, mixed, f)

    dbce = (yhat - y) / (yhat * (1.0 - yhat))
    mult = np.where(applicable, 1.0 - rho, 1.0)
    grad_theta = Xb.T @ (dbce * mult * f * (1.0 - f))

    gate_coef = dbce * (g - f) * rho * (1.0 - rho) * applicable
    grad_w = Xb.T @ gate_coef
    l1_sub = model.gamma * np.sign(model.w)
    l1_sub[-1] = 0.0
    return grad_theta, grad_w + l1_sub


def coverage_objective(model: MoEModel, X: np.ndarray,
                       g: np.ndarray | None = None,
                       applicable_only: bool = False) -> float:
    """Gate player's objective -sum_n ln rho(x_n), summed over all rows by default."""
    rho = gate_prob(model, X)
    if applicable_only:
        if g is None:
            raise ValueError("applicable_only requires guideline values")
        rho = rho[np.asarray(g) != NOT_APPLICABLE]
    return float(-np.sum(np.log(rho)))


def coverage_gradient(model: MoEModel, X: np.ndarray,
                      g: np.ndarray | None = None,
                      applicable_only: bool = False) -> np.ndarray:
    """Gradient of coverage_objective with respect to w: -sum (1 - rho) x."""
    X = _check_dim(model, X)
    Xb = append_bias(X)
    rho = np.clip(expit(Xb @ model.w), model.delta, 1.0 - model.delta)
    weight = -(1.0 - rho)
    if applicable_only:
        if g is None:
            raise ValueError("applicable_only requires guideline values")
        weight = weight * (np.asarray(g) != NOT_APPLICABLE)
    return Xb.T @ weight


def cap_norm(v: np.ndarray, cap: float = PARAM_NORM_CAP) -> tuple[np.ndarray, bool]:
    """Rescale v onto the norm ball of radius cap if it falls outside."""
    n = float(np.linalg.norm(v))
    if n > cap:
        return v * (cap / n), True
    return v, False
