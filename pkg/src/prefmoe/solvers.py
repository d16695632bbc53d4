"""Two-step training pipeline for the rule-preferring mixture.

Step 1 minimizes the regularized cross-entropy without constraints (the
standard mixture-of-experts fit) and records the achieved loss L* as the
performance reference. Step 2 maximizes reliance on the human rules subject to
the loss staying within (1 + epsilon) * L*, by one of two solvers:

* log-barrier: joint gradient descent on
      t * sum_n -ln(rho(x_n)) - ln((1 + eps) L* - L(theta, w)),
  rejecting any step that drives the barrier argument nonpositive;
* projected gradient: alternate a descent step on the loss in theta with a
  coverage ascent step in w, projecting w back onto the feasible set via
  bisection on the Lagrange multiplier of the loss constraint.

All solvers run full batch with backtracking line search and are deterministic
for a fixed seed and configuration.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .errors import InfeasibleInitError, ProjectionInfeasibleError, SolverError
from .model import (Dataset, MoEModel, append_bias, cap_norm, coverage_gradient,
                    coverage_objective, loss, loss_gradients)

MAX_HALVINGS_DESCENT = 30     # per-iteration line search budget
MAX_HALVINGS_BARRIER = 40     # extra room when the barrier argument blocks a step
MAX_INNER_ITERS = 500         # projection inner problem
MAX_ALPHA_SHRINKS = 10        # projected-gradient fallback when projection fails


@dataclass
class SolverConfig:
    solver_kind: str = "unconstrained"   # unconstrained | log_barrier | projected_gradient
    learning_rate: float = 0.1
    max_iters: int = 500
    grad_tol: float = 1e-6
    t: float = 5.0                       # coverage weight, log-barrier only
    epsilon: float = 0.1
    gamma: float = 0.0
    seed: int = 0
    lambda_cap: float = 1e6
    bisect_tol: float = 1e-6
    inner_tol: float = 1e-8
    coverage_applicable_only: bool = False

    def __post_init__(self):
        if self.solver_kind not in ("unconstrained", "log_barrier", "projected_gradient"):
            raise ValueError(f"unknown solver_kind {self.solver_kind!r}")
        for name in ("learning_rate", "max_iters", "grad_tol", "t",
                     "lambda_cap", "bisect_tol", "inner_tol"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.epsilon < 0 or self.gamma < 0:
            raise ValueError("epsilon and gamma must be nonnegative")


@dataclass
class IterationRecord:
    iteration: int
    loss: float
    slack: float | None          # (1 + eps) L* - L, when L* is known
    soft_coverage: float         # percent
    step_size: float
    event: str                   # accepted | backtracked | projected | clipped


@dataclass
class TrainReport:
    records: list[IterationRecord] = field(default_factory=list)
    status: str = "max_iters"    # converged | max_iters | infeasible_init
    note: str = ""
    initial_loss: float = float("nan")
    initial_soft_coverage: float = float("nan")

    def to_csv(self) -> str:
        lines = ["iter,loss,slack,soft_coverage,step_size,event"]
        for r in self.records:
            slack = "" if r.slack is None else repr(float(r.slack))
            lines.append(f"{r.iteration},{float(r.loss)!r},{slack},"
                         f"{float(r.soft_coverage)!r},{float(r.step_size)!r},{r.event}")
        lines.append(f"# initial_loss={float(self.initial_loss)!r}")
        lines.append(f"# initial_soft_coverage={float(self.initial_soft_coverage)!r}")
        lines.append(f"# status={self.status}")
        if self.note:
            lines.append(f"# note={self.note}")
        return "\n".join(lines) + "\n"

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_csv())

    @property
    def final_loss(self) -> float:
        return self.records[-1].loss if self.records else self.initial_loss

    @property
    def final_soft_coverage(self) -> float:
        return self.records[-1].soft_coverage if self.records else self.initial_soft_coverage


def _soft_coverage(model: MoEModel, X: np.ndarray) -> float:
    rho = np.clip(expit(append_bias(X) @ model.w), model.delta, 1.0 - model.delta)
    return 100.0 * float(np.mean(rho))


def _event(clipped: bool, projected: bool, backtracked: bool) -> str:
    if clipped:
        return "clipped"
    if projected:
        return "projected"
    if backtracked:
        return "backtracked"
    return "accepted"


def _check_binary_labels(data: Dataset) -> None:
    if not np.all(np.isin(data.y, (0, 1))):
        raise SolverError("training requires binary 0/1 labels")


def train_unconstrained(data: Dataset, g: np.ndarray,
                        config: SolverConfig) -> tuple[MoEModel, TrainReport]:
    """Step 1: full-batch gradient descent on the regularized cross-entropy.

    Parameters start at zero plus seeded uniform noise in [-0.01, 0.01]. The
    returned model carries the final training loss as reference_loss.
    """
    _check_binary_labels(data)
    d = data.n_features
    rng = np.random.default_rng(config.seed)
    model = MoEModel(
        theta=rng.uniform(-0.01, 0.01, d + 1),
        w=rng.uniform(-0.01, 0.01, d + 1),
        gamma=config.gamma,
        epsilon=config.epsilon,
        standardization=data.standardization,
        columns=list(data.columns),
    )
    X, y = data.X, data.y

    current = loss(model, X, y, g)
    if not np.isfinite(current):
        raise SolverError("unconstrained solver: initial loss is not finite "
                          "(check feature standardization)")
    report = TrainReport(initial_loss=current, initial_soft_coverage=_soft_coverage(model, X))

    step = config.learning_rate
    for it in range(1, config.max_iters + 1):
        grad_theta, grad_w = loss_gradients(model, X, y, g)
        grad_norm = float(np.linalg.norm(grad_theta) + np.linalg.norm(grad_w))
        if grad_norm <= config.grad_tol:
            report.status = "converged"
            break

        step = min(step * 2.0, config.learning_rate * 2.0 ** 20)
        accepted = False
        for halving in range(MAX_HALVINGS_DESCENT + 1):
            trial = model.copy()
            trial.theta = model.theta - step * grad_theta
            trial.w = model.w - step * grad_w
            trial_loss = loss(trial, X, y, g)
            if np.isnan(trial_loss):
                raise SolverError("unconstrained solver: loss became NaN "
                                  "(check feature standardization)")
            if trial_loss < current:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            report.status = "converged"
            report.note = "line search exhausted"
            break

        trial.theta, clip_t = cap_norm(trial.theta)
        trial.w, clip_w = cap_norm(trial.w)
        moved = float(np.linalg.norm(trial.theta - model.theta)
                      + np.linalg.norm(trial.w - model.w))
        model = trial
        current = loss(model, X, y, g) if (clip_t or clip_w) else trial_loss
        report.records.append(IterationRecord(
            iteration=it, loss=current, slack=None,
            soft_coverage=_soft_coverage(model, X), step_size=step,
            event=_event(clip_t or clip_w, False, halving > 0)))
        if moved < config.grad_tol:
            report.status = "converged"
            break
    else:
        report.status = "max_iters"

    model.reference_loss = current
    return model, report


def _barrier_value(model: MoEModel, X, y, g, bound: float, t: float,
                   applicable_only: bool) -> tuple[float, float]:
    """Returns (barrier objective, barrier argument); argument <= 0 is out of domain."""
    arg = bound - loss(model, X, y, g)
    if arg <= 0:
        return np.inf, arg
    cov = coverage_objective(model, X, g, applicable_only)
    return t * cov - np.log(arg), arg


def train_log_barrier(data: Dataset, g: np.ndarray, warm: MoEModel,
                      config: SolverConfig) -> tuple[MoEModel, TrainReport]:
    """Step 2, barrier variant: joint descent on coverage plus loss barrier.

    Any step that would drive the barrier argument (1 + eps) L* - L to zero or
    below is rejected and halved; exhausting the halving budget terminates at
    the constraint boundary. The final iterate always satisfies the loss
    constraint.
    """
    _check_binary_labels(data)
    if warm.reference_loss is None:
        raise SolverError("log-barrier solver requires a warm model with reference_loss")
    X, y = data.X, data.y
    model = warm.copy()
    model.gamma = config.gamma
    model.epsilon = config.epsilon

    l_star = warm.reference_loss
    bound = (1.0 + config.epsilon) * l_star
    current, arg = _barrier_value(model, X, y, g, bound, config.t,
                                  config.coverage_applicable_only)
    if arg <= 0:
        raise InfeasibleInitError(
            f"log-barrier warm start infeasible: loss exceeds bound by {-arg!r}")

    report = TrainReport(initial_loss=loss(model, X, y, g),
                         initial_soft_coverage=_soft_coverage(model, X))

    step = config.learning_rate
    for it in range(1, config.max_iters + 1):
        cur_loss = loss(model, X, y, g)
        slack = bound - cur_loss
        grad_theta_l, grad_w_l = loss_gradients(model, X, y, g)
        grad_theta = grad_theta_l / slack
        grad_w = (config.t * coverage_gradient(model, X, g, config.coverage_applicable_only)
                  + grad_w_l / slack)
        if float(np.linalg.norm(grad_theta) + np.linalg.norm(grad_w)) <= config.grad_tol:
            report.status = "converged"
            break

        step = min(step * 2.0, config.learning_rate * 2.0 ** 20)
        accepted = False
        hit_boundary = False
        for halving in range(MAX_HALVINGS_BARRIER + 1):
            trial = model.copy()
            trial.theta = model.theta - step * grad_theta
            trial.w = model.w - step * grad_w
            value, trial_arg = _barrier_value(trial, X, y, g, bound, config.t,
                                              config.coverage_applicable_only)
            hit_boundary = trial_arg <= 0
            if not hit_boundary and value < current:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            report.status = "converged"
            report.note = ("converged at boundary" if hit_boundary
                           else "line search exhausted")
            break

        trial.theta, clip_t = cap_norm(trial.theta)
        trial.w, clip_w = cap_norm(trial.w)
        if clip_t or clip_w:
            value, trial_arg = _barrier_value(trial, X, y, g, bound, config.t,
                                              config.coverage_applicable_only)
            if trial_arg <= 0:      # cap pushed us out of the domain; keep previous iterate
                report.status = "converged"
                report.note = "norm cap collided with constraint boundary"
                break
        moved = float(np.linalg.norm(trial.theta - model.theta)
                      + np.linalg.norm(trial.w - model.w))
        model, current = trial, value
        new_loss = loss(model, X, y, g)
        report.records.append(IterationRecord(
            iteration=it, loss=new_loss, slack=bound - new_loss,
            soft_coverage=_soft_coverage(model, X), step_size=step,
            event=_event(clip_t or clip_w, False, halving > 0)))
        if moved < config.grad_tol:
            report.status = "converged"
            break
    else:
        report.status = "max_iters"

    model.reference_loss = l_star
    return model, report


class _GateSubproblem:
    """Loss and gradient in w at fixed theta, with expert terms precomputed."""

    def __init__(self, model: MoEModel, X: np.ndarray, y: np.ndarray, g: np.ndarray):
        self.Xb = append_bias(X)
        self.delta = model.delta
        self.gamma = model.gamma
        self.f = np.clip(expit(self.Xb @ model.theta), self.delta, 1.0 - self.delta)
        self.y = np.asarray(y, dtype=float)
        self.g = np.asarray(g)
        self.applicable = self.g != -1

    def _yhat(self, w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        rho = np.clip(expit(self.Xb @ w), self.delta, 1.0 - self.delta)
        mixed = np.clip((1.0 - rho) * self.f + rho * self.g, self.delta, 1.0 - self.delta)
        return np.where(self.applicable, mixed, self.f), rho

    def loss(self, w: np.ndarray) -> float:
        yhat, _ = self._yhat(w)
        bce = -np.sum(self.y * np.log(yhat) + (1 - self.y) * np.log(1.0 - yhat))
        return float(bce + self.gamma * np.sum(np.abs(w[:-1])))

    def grad(self, w: np.ndarray) -> np.ndarray:
        yhat, rho = self._yhat(w)
        dbce = (yhat - self.y) / (yhat * (1.0 - yhat))
        coef = dbce * (self.g - self.f) * rho * (1.0 - rho) * self.applicable
        out = self.Xb.T @ coef
        sub = self.gamma * np.sign(w)
        sub[-1] = 0.0
        return out + sub


def _solve_inner(problem: _GateSubproblem, z: np.ndarray, lam: float,
                 w0: np.ndarray, inner_tol: float) -> np.ndarray:
    """Minimize 0.5 ||w - z||^2 + lam * L(w) by backtracking gradient descent.

    The trial step starts from a Barzilai-Borwein estimate (the objective is
    strongly convex, so the curvature ratio is well defined) and halves until
    the value decreases; this keeps the iteration count low even when lam
    makes the problem stiff.
    """
    w = w0.copy()

    def value_at(v):
        return 0.5 * float(np.sum((v - z) ** 2)) + lam * problem.loss(v)

    def grad_at(v):
        return (v - z) + lam * problem.grad(v)

    value = value_at(w)
    grad = grad_at(w)
    step = 1.0 / (1.0 + lam)
    for _ in range(MAX_INNER_ITERS):
        if float(np.linalg.norm(grad)) <= inner_tol:
            break
        step = step * 2.0
        accepted = False
        for _ in range(MAX_HALVINGS_DESCENT + 1):
            trial = w - step * grad
            trial_value = value_at(trial)
            if trial_value < value:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        trial_grad = grad_at(trial)
        s = trial - w
        diff = trial_grad - grad
        curvature = float(s @ diff)
        if curvature > 0:
            step = float(s @ s) / curvature
        w, value, grad = trial, trial_value, trial_grad
    return w


def project_onto_feasible(theta: np.ndarray, z: np.ndarray, data: Dataset,
                          g: np.ndarray, epsilon: float, l_star: float,
                          config: SolverConfig,
                          w_start: np.ndarray | None = None,
                          return_trace: bool = False):
    """Euclidean projection of z onto {w : L(theta, w) <= (1 + eps) L*}.

    Bisects the Lagrange multiplier of the loss constraint: the upper bracket
    comes from doubling lambda from 1 until the inner solution turns feasible
    (error if lambda_cap is exceeded), then the bracket shrinks to bisect_tol
    and the last feasible inner solution is returned. z itself is returned
    unchanged when already feasible.
    """
    if l_star <= 0:
        raise SolverError("projection requires a positive reference loss")
    template = MoEModel(theta=np.asarray(theta, dtype=float),
                        w=np.asarray(z, dtype=float), gamma=config.gamma,
                        epsilon=epsilon)
    problem = _GateSubproblem(template, data.X, data.y, g)
    bound = (1.0 + epsilon) * l_star
    trace: list[tuple[float, float]] = []

    z = np.asarray(z, dtype=float)
    if problem.loss(z) <= bound:
        return (z.copy(), trace) if return_trace else z.copy()

    w_cur = z.copy() if w_start is None else np.asarray(w_start, dtype=float).copy()
    lam_lo, lam_hi = 0.0, 1.0
    w_feasible = None
    while True:
        w_cur = _solve_inner(problem, z, lam_hi, w_cur, config.inner_tol)
        trace.append((lam_hi, problem.loss(w_cur)))
        if problem.loss(w_cur) <= bound:
            w_feasible = w_cur.copy()
            break
        lam_lo = lam_hi
        lam_hi *= 2.0
        if lam_hi > config.lambda_cap:
            raise ProjectionInfeasibleError(
                f"constraint unattainable at this theta (lambda cap {config.lambda_cap:g})")

    while lam_hi - lam_lo >= config.bisect_tol:
        lam_mid = 0.5 * (lam_lo + lam_hi)
        w_cur = _solve_inner(problem, z, lam_mid, w_cur, config.inner_tol)
        mid_loss = problem.loss(w_cur)
        trace.append((lam_mid, mid_loss))
        if mid_loss <= bound:
            lam_hi = lam_mid
            w_feasible = w_cur.copy()
        else:
            lam_lo = lam_mid
    return (w_feasible, trace) if return_trace else w_feasible


def train_projected_gradient(data: Dataset, g: np.ndarray, warm: MoEModel,
                             config: SolverConfig) -> tuple[MoEModel, TrainReport]:
    """Step 2, projected-gradient variant of the two-player game.

    Each iteration takes a backtracking descent step on the loss in theta,
    then a coverage ascent step in w projected back onto the feasible set at
    the new theta. Every accepted iterate is feasible. When the projection
    reports the constraint unattainable, the step size shrinks and the
    iteration retries a bounded number of times before stopping.
    """
    _check_binary_labels(data)
    if warm.reference_loss is None:
        raise SolverError("projected-gradient solver requires a warm model with reference_loss")
    X, y = data.X, data.y
    model = warm.copy()
    model.gamma = config.gamma
    model.epsilon = config.epsilon

    l_star = warm.reference_loss
    bound = (1.0 + config.epsilon) * l_star
    if loss(model, X, y, g) > bound * (1.0 + 1e-12):
        raise InfeasibleInitError("projected-gradient warm start violates the loss constraint")

    report = TrainReport(initial_loss=loss(model, X, y, g),
                         initial_soft_coverage=_soft_coverage(model, X))

    for it in range(1, config.max_iters + 1):
        alpha = config.learning_rate / np.sqrt(it)   # diminishing steps damp boundary bounce
        base_loss = loss(model, X, y, g)
        grad_theta, _ = loss_gradients(model, X, y, g)
        cov_grad = coverage_gradient(model, X, g, config.coverage_applicable_only)

        new_model = None
        shrink_alpha = alpha
        for _ in range(MAX_ALPHA_SHRINKS + 1):
            # player 2: descent on the loss; a shrinking trial keeps w feasible at new theta
            theta_step = shrink_alpha
            theta_new = model.theta
            for _ in range(MAX_HALVINGS_DESCENT + 1):
                candidate = model.theta - theta_step * grad_theta
                trial = model.copy()
                trial.theta = candidate
                if loss(trial, X, y, g) < base_loss:
                    theta_new = candidate
                    break
                theta_step *= 0.5
            # player 1: coverage ascent then projection onto K_eps(theta_new)
            v = model.w - shrink_alpha * cov_grad
            try:
                w_new = project_onto_feasible(theta_new, v, data, g, config.epsilon,
                                              l_star, config, w_start=model.w)
            except ProjectionInfeasibleError:
                shrink_alpha *= 0.5
                continue
            new_model = model.copy()
            new_model.theta, new_model.w = theta_new, w_new
            break
        if new_model is None:
            report.status = "converged"
            report.note = "projection infeasible after step-size shrinks"
            break

        new_model.theta, clip_t = cap_norm(new_model.theta)
        new_model.w, clip_w = cap_norm(new_model.w)
        moved = float(np.linalg.norm(new_model.theta - model.theta)
                      + np.linalg.norm(new_model.w - model.w))
        model = new_model
        new_loss = loss(model, X, y, g)
        report.records.append(IterationRecord(
            iteration=it, loss=new_loss, slack=bound - new_loss,
            soft_coverage=_soft_coverage(model, X), step_size=shrink_alpha,
            event=_event(clip_t or clip_w, True, False)))
        if moved < config.grad_tol:
            report.status = "converged"
            break
    else:
        report.status = "max_iters"

    model.reference_loss = l_star
    return model, report
