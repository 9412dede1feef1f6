"""Cox proportional-hazards baseline.

Newton iterations with step-halving maximize the Breslow-approximation
partial likelihood on continuous durations; the Breslow cumulative baseline
hazard then maps fitted risks onto the shared discrete bin grid so the same
metric code paths evaluate this model and the neural ones.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .data import DiscretizationGrid
from .errors import SurvmoeError, UsageError
from .model import HazardCurve

RIDGE_FALLBACK = 1e-4
SEPARATION_NORM = 1e3  # hard divergence guard during iteration
SEPARATION_BETA_BOUND = 10.0  # post-fit plausibility bound for standardized features


class CoxConvergenceError(SurvmoeError):
    def __init__(self, message, beta, grad_norm):
        super().__init__(message)
        self.beta = beta
        self.grad_norm = grad_norm


@dataclass
class CoxModel:
    beta: np.ndarray
    baseline_times: np.ndarray | None = None  # unique event times, ascending
    baseline_jumps: np.ndarray | None = None  # Breslow increments (eta-shifted scale)
    eta_shift: float = 0.0  # jumps pair with exp(x.beta - eta_shift)
    loglik_path: list[float] = field(default_factory=list)

    def cumulative_hazard_before(self, t: float) -> float:
        """Breslow cumulative hazard accumulated strictly before time t
        (shifted scale; pair with exp(x.beta - eta_shift))."""
        if self.baseline_times is None:
            raise UsageError("model has no Breslow baseline")
        idx = np.searchsorted(self.baseline_times, t, side="left")
        return float(self.baseline_jumps[:idx].sum())


def _partial_terms(x: np.ndarray, time: np.ndarray, delta: np.ndarray, beta: np.ndarray,
                   need_derivatives: bool):
    """Breslow partial log-likelihood and, optionally, its gradient and Hessian."""
    order = np.argsort(time, kind="stable")
    xs = x[order]
    ts = time[order]
    ds = delta[order]

    eta = xs @ beta
    eta = eta - eta.max()  # keeps exp() in range; partial likelihood is shift-invariant
    w = np.exp(eta)

    # suffix sums: risk set of the subject at sorted position i is positions >= first
    # row sharing its time
    suffix_w = np.cumsum(w[::-1])[::-1]
    if need_derivatives:
        xw = xs * w[:, None]
        suffix_xw = np.cumsum(xw[::-1], axis=0)[::-1]
        outer = xs[:, :, None] * xs[:, None, :] * w[:, None, None]
        suffix_outer = np.cumsum(outer[::-1], axis=0)[::-1]

    # first sorted index of every distinct time
    first_of_time = np.zeros(len(ts), dtype=np.int64)
    for i in range(1, len(ts)):
        first_of_time[i] = first_of_time[i - 1] if ts[i] == ts[i - 1] else i

    event_rows = np.flatnonzero(ds == 1)
    if event_rows.size == 0:
        raise UsageError("cox fit requires at least one event")
    unique_firsts, counts = np.unique(first_of_time[event_rows], return_counts=True)

    ll = float(eta[event_rows].sum())
    grad = xs[event_rows].sum(axis=0) if need_derivatives else None
    hess = np.zeros((x.shape[1], x.shape[1])) if need_derivatives else None
    for fi, d_t in zip(unique_firsts, counts):
        s0 = suffix_w[fi]
        ll -= d_t * np.log(s0)
        if need_derivatives:
            mean = suffix_xw[fi] / s0
            grad -= d_t * mean
            hess -= d_t * (suffix_outer[fi] / s0 - np.outer(mean, mean))
    return ll, grad, hess


def cox_partial_loglik(x, time, delta, beta) -> float:
    """Breslow partial log-likelihood at `beta` (shift-normalized linear predictor)."""
    ll, _, _ = _partial_terms(
        np.asarray(x, dtype=np.float64),
        np.asarray(time, dtype=np.float64),
        np.asarray(delta, dtype=np.int64),
        np.asarray(beta, dtype=np.float64),
        need_derivatives=False,
    )
    return ll


def _newton(x, time, delta, max_iter, tol, ridge):
    d = x.shape[1]
    beta = np.zeros(d)
    path = []
    ll, grad, hess = _partial_terms(x, time, delta, beta, need_derivatives=True)
    if ridge > 0.0:
        ll -= 0.5 * ridge * beta @ beta
        grad = grad - ridge * beta
        hess = hess - ridge * np.eye(d)
    path.append(ll)
    for _ in range(max_iter):
        grad_norm = float(np.max(np.abs(grad)))
        if grad_norm < tol:
            return beta, path, True
        neg_hess = -hess
        try:
            direction = np.linalg.solve(neg_hess, grad)
        except np.linalg.LinAlgError:
            direction = np.linalg.solve(neg_hess + 1e-8 * np.eye(d), grad)
        step = 1.0
        accept_slack = 1e-10 * max(1.0, abs(ll))  # below this, ll changes are FP noise
        for _ in range(40):
            candidate = beta + step * direction
            ll_new, grad_new, hess_new = _partial_terms(
                x, time, delta, candidate, need_derivatives=True
            )
            if ridge > 0.0:
                ll_new -= 0.5 * ridge * candidate @ candidate
                grad_new = grad_new - ridge * candidate
                hess_new = hess_new - ridge * np.eye(d)
            if ll_new >= ll - accept_slack:
                break
            step *= 0.5
        else:
            return beta, path, float(np.max(np.abs(grad))) < tol
        beta, ll, grad, hess = candidate, ll_new, grad_new, hess_new
        path.append(ll)
        if np.linalg.norm(beta) > SEPARATION_NORM:
            return beta, path, None  # separation signal
    return beta, path, float(np.max(np.abs(grad))) < tol


def fit_cox(x, time, delta, max_iter: int = 100, tol: float = 1e-6) -> CoxModel:
    """Fit by Newton with step-halving; the partial log-likelihood never decreases.

    Diverging coefficients (separable data) trigger one ridge-penalized refit
    with a warning; zero-variance features are pinned at zero.
    """
    x = np.asarray(x, dtype=np.float64)
    time = np.asarray(time, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.int64)
    if x.ndim != 2 or x.shape[0] != time.shape[0] or time.shape != delta.shape:
        raise UsageError("fit_cox expects x (n, d), time (n,), delta (n,)")

    active = x.std(axis=0) > 0.0
    if not active.all():
        warnings.warn(
            f"zero-variance features pinned at beta=0: indices {np.flatnonzero(~active).tolist()}"
        )
    x_active = x[:, active]
    beta = np.zeros(x.shape[1])
    if x_active.shape[1] == 0:
        model = CoxModel(beta=beta, loglik_path=[cox_partial_loglik(x, time, delta, beta)])
        _attach_baseline(model, x, time, delta)
        return model

    fit_beta, path, status = _newton(x_active, time, delta, max_iter, tol, ridge=0.0)
    # flat separation tails converge by gradient while beta drifts off to
    # implausible magnitudes for standardized features; both cases get the
    # ridge fallback
    diverged = status is None or (
        status is True and float(np.max(np.abs(fit_beta))) > SEPARATION_BETA_BOUND
    )
    if diverged:
        warnings.warn(
            f"separable data suspected (diverging beta, max |beta| = "
            f"{np.max(np.abs(fit_beta)):.3g}); refitting with ridge {RIDGE_FALLBACK:g}"
        )
        fit_beta, path, status = _newton(x_active, time, delta, max_iter, tol,
                                         ridge=RIDGE_FALLBACK)
    if status is not True:
        _, grad, _ = _partial_terms(x_active, time, delta, fit_beta, need_derivatives=True)
        full = np.zeros(x.shape[1])
        full[active] = fit_beta
        raise CoxConvergenceError(
            f"cox fit did not converge in {max_iter} iterations "
            f"(gradient max-norm {np.max(np.abs(grad)):.3e})",
            beta=full,
            grad_norm=float(np.max(np.abs(grad))),
        )
    beta[active] = fit_beta
    model = CoxModel(beta=beta, loglik_path=path)
    _attach_baseline(model, x, time, delta)
    return model


def _attach_baseline(model: CoxModel, x, time, delta) -> None:
    eta = x @ model.beta
    eta = eta - eta.max()
    w = np.exp(eta)
    order = np.argsort(time, kind="stable")
    ts, ds, ws = time[order], delta[order], w[order]
    suffix_w = np.cumsum(ws[::-1])[::-1]
    first_of_time = np.zeros(len(ts), dtype=np.int64)
    for i in range(1, len(ts)):
        first_of_time[i] = first_of_time[i - 1] if ts[i] == ts[i - 1] else i
    event_rows = np.flatnonzero(ds == 1)
    unique_firsts, counts = np.unique(first_of_time[event_rows], return_counts=True)
    # increments are d_t / sum_{risk set} exp(eta); the max-shift in eta cancels
    # because predictions rescale by the same factor
    model.baseline_times = ts[unique_firsts]
    model.baseline_jumps = counts / suffix_w[unique_firsts]
    model.eta_shift = float((x @ model.beta).max())


def cox_risk(model: CoxModel, x) -> np.ndarray | float:
    """Linear predictor x . beta; sufficient for ranking under proportional hazards."""
    x = np.asarray(x, dtype=np.float64)
    out = x @ model.beta
    return float(out) if out.ndim == 0 else out


def cox_survival_matrix(model: CoxModel, x, grid: DiscretizationGrid) -> np.ndarray:
    """S(bin | x) on the shared grid: exp(-Lambda0(edge) * exp(eta))."""
    if model.baseline_times is None:
        raise UsageError("model has no Breslow baseline; fit with fit_cox first")
    x = np.asarray(x, dtype=np.float64)
    eta = x @ model.beta - model.eta_shift
    cum = np.array(
        [model.cumulative_hazard_before(edge) for edge in grid.cuts]
        + [float(model.baseline_jumps.sum())]
    )
    # bins 0..max_bin-1 end at their cut; the top bin absorbs the remaining mass
    return np.exp(-np.outer(np.exp(eta), cum))


def cox_survival_curve(model: CoxModel, x_vector, grid: DiscretizationGrid) -> HazardCurve:
    surv = cox_survival_matrix(model, np.asarray(x_vector)[None, :], grid)[0]
    prev = np.concatenate(([1.0], surv[:-1]))
    hazards = np.divide(prev - surv, prev, out=np.ones_like(surv), where=prev > 0)
    return HazardCurve(np.clip(hazards, 0.0, 1.0))
