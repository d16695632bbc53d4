"""Numerical verification: gradient checks, assumption checks, game monotonicity.

These utilities are read-only and meant for small instances. The monotonicity
diagnostic assembles the gate/expert blocks of the game's Jacobian by finite
differences, adds a small quadratic regularizer as a strong-concavity
surrogate, and scans an auxiliary scale constant c for a certificate that the
symmetrized block matrix is positive semidefinite; a Schur-complement check
cross-validates the certificate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import (Dataset, MoEModel, PARAM_NORM_CAP, coverage_objective,
                    expert_prob, gate_prob, loss, loss_gradients)

EIG_TOLERANCE = -1e-8
KINK_RADIUS = 1e-3          # gradient checks stay this far from the L1 kink


@dataclass
class GradientCheckReport:
    max_rel_error: float
    worst_coordinate: str | None
    passed: bool | None                 # None when the precondition fails
    precondition_violated: bool = False
    message: str = ""

    def to_text(self) -> str:
        lines = [
            f"gradient_check_passed: {self.passed}",
            f"max_rel_error: {self.max_rel_error!r}",
            f"worst_coordinate: {self.worst_coordinate or 'none'}",
        ]
        if self.message:
            lines.append(f"message: {self.message}")
        return "\n".join(lines) + "\n"


def check_gradients(model: MoEModel, data: Dataset, g: np.ndarray,
                    fd_step: float = 1e-6, tol: float = 1e-5,
                    loss_fn=None, grad_fn=None) -> GradientCheckReport:
    """Compare analytic gradients against central finite differences.

    Requires either gamma = 0 or every penalized gate weight at least
    KINK_RADIUS from zero; otherwise the subgradient is not a derivative and
    the report flags a precondition violation instead of a failure.
    loss_fn/grad_fn may replace the model objective (used for self-tests of
    the checker itself).
    """
    if loss_fn is None:
        if model.gamma > 0 and np.any(np.abs(model.w[:-1]) <= KINK_RADIUS):
            return GradientCheckReport(
                max_rel_error=float("nan"), worst_coordinate=None, passed=None,
                precondition_violated=True,
                message=f"gate weight within {KINK_RADIUS} of the L1 kink with gamma > 0")

        def loss_fn(theta, w):
            m = model.copy()
            m.theta, m.w = theta, w
            return loss(m, data.X, data.y, g)

        def grad_fn(theta, w):
            m = model.copy()
            m.theta, m.w = theta, w
            return loss_gradients(m, data.X, data.y, g)

    theta0, w0 = model.theta.copy(), model.w.copy()
    analytic = np.concatenate(grad_fn(theta0, w0))
    n_theta = theta0.shape[0]

    def at(p):
        return loss_fn(p[:n_theta], p[n_theta:])

    p0 = np.concatenate([theta0, w0])
    fd = np.empty_like(p0)
    for i in range(p0.shape[0]):
        plus, minus = p0.copy(), p0.copy()
        plus[i] += fd_step
        minus[i] -= fd_step
        fd[i] = (at(plus) - at(minus)) / (2.0 * fd_step)

    rel = np.abs(analytic - fd) / np.maximum(1.0, np.abs(fd))
    worst = int(np.argmax(rel))
    name = (f"theta[{worst}]" if worst < n_theta else f"w[{worst - n_theta}]")
    max_rel = float(rel[worst])
    return GradientCheckReport(max_rel_error=max_rel, worst_coordinate=name,
                               passed=max_rel < tol)


def _fd_hessian(fn, x0: np.ndarray, h: float) -> np.ndarray:
    """Central-difference Hessian of a scalar function of one vector."""
    n = x0.shape[0]
    H = np.empty((n, n))
    f0 = fn(x0)
    for i in range(n):
        ei = np.zeros(n)
        ei[i] = h
        H[i, i] = (fn(x0 + ei) - 2.0 * f0 + fn(x0 - ei)) / h ** 2
        for j in range(i + 1, n):
            ej = np.zeros(n)
            ej[j] = h
            val = (fn(x0 + ei + ej) - fn(x0 + ei - ej)
                   - fn(x0 - ei + ej) + fn(x0 - ei - ej)) / (4.0 * h ** 2)
            H[i, j] = H[j, i] = val
    return H


def _fd_mixed(fn, w0: np.ndarray, theta0: np.ndarray, h: float) -> np.ndarray:
    """4-point mixed partials d^2 fn / dw dtheta, shape (len(w), len(theta))."""
    p, q = w0.shape[0], theta0.shape[0]
    M = np.empty((p, q))
    for i in range(p):
        ei = np.zeros(p)
        ei[i] = h
        for j in range(q):
            ej = np.zeros(q)
            ej[j] = h
            M[i, j] = (fn(w0 + ei, theta0 + ej) - fn(w0 + ei, theta0 - ej)
                       - fn(w0 - ei, theta0 + ej) + fn(w0 - ei, theta0 - ej)) / (4.0 * h ** 2)
    return M


@dataclass
class MonotonicityReport:
    lam: float
    mu: float
    c_grid: list[float]
    min_eigenvalues: list[float] = field(default_factory=list)
    schur_min_eigenvalues: list[float | None] = field(default_factory=list)
    certifying_c: float | None = None
    schur_agrees_at_certifying: bool | None = None
    error: str | None = None

    @property
    def certified(self) -> bool:
        return self.certifying_c is not None

    def to_text(self) -> str:
        lines = [
            f"monotonicity_certified: {self.certified}",
            f"lambda: {self.lam!r}",
            f"mu: {self.mu!r}",
            f"certifying_c: {'none' if self.certifying_c is None else repr(self.certifying_c)}",
            f"schur_agrees_at_certifying: {self.schur_agrees_at_certifying}",
        ]
        for c, eig, schur in zip(self.c_grid, self.min_eigenvalues,
                                 self.schur_min_eigenvalues):
            schur_txt = "none" if schur is None else repr(schur)
            lines.append(f"c={c:g}: min_eig={eig!r} schur_min_eig={schur_txt}")
        if self.error:
            lines.append(f"error: {self.error}")
        return "\n".join(lines) + "\n"


def monotonicity_diagnostic(model: MoEModel, data: Dataset, g: np.ndarray,
                            lam: float = 0.5,
                            c_grid: tuple[float, ...] = tuple(10.0 ** k for k in range(-2, 5)),
                            mu: float = 1e-3,
                            fd_step: float = 1e-4) -> MonotonicityReport:
    """Scan c for a positive-semidefiniteness certificate of the game Jacobian.

    The (w, theta) blocks are c * H_w[coverage + mu||w||^2], lam * d2L/dwdtheta,
    (1 + lam) * d2L/dthetadw, and (1 + lam) * H_theta[L + mu||theta||^2], all
    by central finite differences. Certification takes the smallest grid c
    whose symmetrized block matrix has minimum eigenvalue >= -1e-8, then the
    Schur complement S = r_tt - (1 + 2 lam) / (2c) * M' r_ww^{-1} M is checked
    at that c.
    """
    X, y = data.X, data.y
    theta0, w0 = model.theta.copy(), model.w.copy()

    def coverage_at(w):
        m = model.copy()
        m.w = w
        return coverage_objective(m, X) + mu * float(np.sum(w ** 2))

    def loss_at_theta(theta):
        m = model.copy()
        m.theta = theta
        return loss(m, X, y, g) + mu * float(np.sum(theta ** 2))

    def loss_at(w, theta):
        m = model.copy()
        m.w, m.theta = w, theta
        return loss(m, X, y, g)

    report = MonotonicityReport(lam=lam, mu=mu, c_grid=[float(c) for c in c_grid])
    try:
        r_ww = _fd_hessian(coverage_at, w0, fd_step)
        r_tt = _fd_hessian(loss_at_theta, theta0, fd_step)
        mixed = _fd_mixed(loss_at, w0, theta0, fd_step)

        for c in report.c_grid:
            top = np.block([
                [c * r_ww, lam * mixed],
                [(1.0 + lam) * mixed.T, (1.0 + lam) * r_tt],
            ])
            sym = 0.5 * (top + top.T)
            report.min_eigenvalues.append(float(np.linalg.eigvalsh(sym).min()))
            try:
                inv_m = np.linalg.solve(r_ww, mixed)
                schur = r_tt - (1.0 + 2.0 * lam) / (2.0 * c) * mixed.T @ inv_m
                report.schur_min_eigenvalues.append(
                    float(np.linalg.eigvalsh(0.5 * (schur + schur.T)).min()))
            except np.linalg.LinAlgError:
                report.schur_min_eigenvalues.append(None)

        for c, eig in zip(report.c_grid, report.min_eigenvalues):
            if eig >= EIG_TOLERANCE:
                report.certifying_c = c
                idx = report.c_grid.index(c)
                schur_eig = report.schur_min_eigenvalues[idx]
                if schur_eig is not None:
                    report.schur_agrees_at_certifying = (schur_eig >= EIG_TOLERANCE)
                break
    except np.linalg.LinAlgError as exc:
        report.error = f"eigen-solve failed: {exc}"
    return report


@dataclass
class AssumptionReport:
    norm_caps_ok: bool
    feasibility_witnessed: bool | None     # None when no reference loss is recorded
    log_concavity_ok: bool
    details: dict = field(default_factory=dict)

    @property
    def all_ok(self) -> bool:
        return bool(self.norm_caps_ok and self.feasibility_witnessed
                    and self.log_concavity_ok)

    def to_text(self) -> str:
        lines = [
            f"norm_caps_ok: {self.norm_caps_ok}",
            f"feasibility_witnessed: {self.feasibility_witnessed}",
            f"log_concavity_ok: {self.log_concavity_ok}",
        ]
        lines.extend(f"{k}: {v!r}" for k, v in sorted(self.details.items()))
        return "\n".join(lines) + "\n"


def check_assumptions(model: MoEModel, data: Dataset, g: np.ndarray,
                      seed: int = 0, n_segments: int = 10) -> AssumptionReport:
    """Verify the runtime-checkable solver assumptions.

    Parameter compactness: both norms within the cap. Feasible-set
    nonemptiness: the current iterate witnesses the loss constraint when a
    reference loss is recorded. Log-concavity: ln f and ln rho are concave
    along random parameter segments (second differences within tolerance).
    """
    theta_norm = float(np.linalg.norm(model.theta))
    w_norm = float(np.linalg.norm(model.w))
    norm_caps_ok = theta_norm <= PARAM_NORM_CAP and w_norm <= PARAM_NORM_CAP

    feasibility = None
    current_loss = loss(model, data.X, data.y, g)
    if model.reference_loss is not None:
        bound = (1.0 + model.epsilon) * model.reference_loss
        feasibility = bool(current_loss <= bound * (1.0 + 1e-6))

    rng = np.random.default_rng(seed)
    d = model.n_features
    ts = np.linspace(0.0, 1.0, 21)
    worst_second_diff = -np.inf
    for _ in range(n_segments):
        x = rng.standard_normal(d)
        for prob_fn in (expert_prob, gate_prob):
            p0 = rng.standard_normal(d + 1)
            p1 = rng.standard_normal(d + 1)
            m = model.copy()
            vals = []
            for t in ts:
                p = (1.0 - t) * p0 + t * p1
                if prob_fn is expert_prob:
                    m.theta = p
                else:
                    m.w = p
                vals.append(np.log(prob_fn(m, x)))
            vals = np.asarray(vals)
            second = vals[2:] - 2.0 * vals[1:-1] + vals[:-2]
            worst_second_diff = max(worst_second_diff, float(second.max()))
    log_concavity_ok = worst_second_diff <= 1e-8

    return AssumptionReport(
        norm_caps_ok=norm_caps_ok,
        feasibility_witnessed=feasibility,
        log_concavity_ok=log_concavity_ok,
        details={
            "theta_norm": theta_norm,
            "w_norm": w_norm,
            "current_loss": current_loss,
            "reference_loss": model.reference_loss,
            "epsilon": model.epsilon,
            "worst_segment_second_difference": worst_second_diff,
        },
    )
