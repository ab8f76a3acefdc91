"""Concordance, Kaplan-Meier, logrank, Cox-PH regression and the neural Cox loss.

Ties in event time use the Breslow convention throughout: every sample
with ``t_j >= t_i`` is in the risk set of ``t_i``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy import stats

from .data import SurvivalLabels


class SurvivalError(ValueError):
    pass


@dataclass(frozen=True)
class CoxModel:
    beta: np.ndarray
    standard_errors: np.ndarray
    log_likelihood: float
    converged: bool
    penalty: float = 0.0
    n_iter: int = 0

    def predict_log_hazard(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=float) @ self.beta


@dataclass(frozen=True)
class KmCurve:
    event_times: np.ndarray
    survival: np.ndarray
    at_risk: np.ndarray
    events: np.ndarray


def concordance_index(predictions, labels: SurvivalLabels) -> float:
    """Harrell's C over admissible pairs, higher score meaning higher risk.

    A pair is admissible when the sample with the smaller time had an event,
    or when a censored sample shares the time of an observed event.  Pairs of
    two events at exactly the same time carry no ordering and are skipped.
    Tied predictions count as half-correct.
    """
    risk = np.asarray(predictions, dtype=float).ravel()
    t, e = labels.time, labels.event
    if risk.shape != t.shape:
        raise SurvivalError("predictions and labels differ in length")
    if not np.all(np.isfinite(risk)):
        raise SurvivalError("non-finite predictions")
    # i is the "earlier" member: e_i observed and t_i < t_j, or t_i == t_j with j censored
    earlier = e[:, None] & ((t[:, None] < t[None, :]) | ((t[:, None] == t[None, :]) & ~e[None, :]))
    admissible = int(earlier.sum())
    if admissible == 0:
        raise SurvivalError("no admissible pairs")
    diff = risk[:, None] - risk[None, :]
    correct = int((earlier & (diff > 0)).sum())
    tied = int((earlier & (diff == 0)).sum())
    return (correct + tied / 2.0) / admissible


def km_estimate(labels: SurvivalLabels) -> KmCurve:
    t, e = labels.time, labels.event
    if t.size == 0:
        raise SurvivalError("km_estimate needs at least one sample")
    event_times = np.unique(t[e])
    at_risk = np.array([(t >= u).sum() for u in event_times], dtype=int)
    events = np.array([(e & (t == u)).sum() for u in event_times], dtype=int)
    survival = np.cumprod(1.0 - events / at_risk) if event_times.size else np.zeros(0)
    return KmCurve(event_times, survival, at_risk, events)


def logrank_test(labels: SurvivalLabels, groups) -> Tuple[float, float]:
    """Two-group logrank test; returns ``(chi2, p)`` with 1 degree of freedom."""
    g = np.asarray(groups).astype(bool).ravel()
    if g.shape[0] != len(labels):
        raise SurvivalError("groups and labels differ in length")
    if g.all() or not g.any():
        raise SurvivalError("empty group")
    t, e = labels.time, labels.event
    if not e.any():
        raise SurvivalError("no events")
    observed_minus_expected = 0.0
    variance = 0.0
    for u in np.unique(t[e]):
        at_risk = t >= u
        n = at_risk.sum()
        n1 = (at_risk & g).sum()
        died = e & (t == u)
        d = died.sum()
        d1 = (died & g).sum()
        observed_minus_expected += d1 - d * n1 / n
        if n > 1:
            variance += d * (n1 / n) * (1 - n1 / n) * (n - d) / (n - 1)
    if variance <= 0:
        return 0.0, 1.0
    chi2 = observed_minus_expected ** 2 / variance
    return float(chi2), float(stats.chi2.sf(chi2, df=1))


def _tie_groups(t_sorted_desc: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Per-position first and last index of its tie group (times sorted descending)."""
    n = t_sorted_desc.shape[0]
    new_group = np.ones(n, dtype=bool)
    new_group[1:] = np.diff(t_sorted_desc) != 0
    group = np.cumsum(new_group) - 1
    starts = np.flatnonzero(new_group)
    ends = np.append(starts[1:] - 1, n - 1)
    return starts[group], ends[group]


def _risk_set_ends(t_sorted_desc: np.ndarray) -> np.ndarray:
    return _tie_groups(t_sorted_desc)[1]


def _partial_loglik(x, t, e, beta, penalty):
    """Breslow log partial likelihood with its gradient and Hessian."""
    order = np.argsort(-t, kind="stable")
    xs, ts, es = x[order], t[order], e[order]
    ends = _risk_set_ends(ts)
    eta = xs @ beta
    shift = eta.max()
    w = np.exp(eta - shift)
    s0 = np.cumsum(w)[ends]
    s1 = np.cumsum(w[:, None] * xs, axis=0)[ends]
    ev = es.astype(bool)
    loglik = float(np.sum(eta[ev] - shift - np.log(s0[ev])))
    a = s1[ev] / s0[ev, None]
    grad = xs[ev].sum(axis=0) - a.sum(axis=0)
    # sum_i S2_i/S0_i rewritten as X^T diag(w * c) X, c_j = sum of 1/S0_i over risk sets holding j
    c = _cum_inv_for_sorted(ts, np.where(ev, 1.0 / s0, 0.0))
    info = (xs * (w * c)[:, None]).T @ xs - a.T @ a
    loglik -= 0.5 * penalty * float(beta @ beta)
    grad = grad - penalty * beta
    info = info + penalty * np.eye(beta.shape[0])
    return loglik, grad, info


def _cum_inv_for_sorted(ts: np.ndarray, inv: np.ndarray) -> np.ndarray:
    """c_j = sum over events i with t_i <= t_j of 1/S0_i, for times sorted descending."""
    total = np.cumsum(inv[::-1])[::-1]
    # tied samples share the sum starting at their group's first index
    return total[_tie_groups(ts)[0]]


def cox_fit(x, labels: SurvivalLabels, penalty: float = 0.0, max_iter: int = 100,
            tol: float = 1e-7) -> CoxModel:
    """Fit a Cox-PH model by Newton-Raphson with step halving.

    Maximises the Breslow partial log-likelihood minus ``penalty/2 * |beta|^2``.
    The model comes back with ``converged=False`` when the iteration cap is hit
    or the information matrix cannot be inverted; callers decide whether to
    retry with a ridge penalty.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] != len(labels) or x.shape[1] < 1:
        raise SurvivalError("design matrix must be n x p with p >= 1")
    if not np.all(np.isfinite(x)):
        raise SurvivalError("non-finite input")
    if penalty < 0:
        raise SurvivalError("penalty must be nonnegative")
    if labels.n_events == 0:
        raise SurvivalError("no events")
    t, e = labels.time, labels.event
    p = x.shape[1]
    beta = np.zeros(p)
    loglik, grad, info = _partial_loglik(x, t, e, beta, penalty)
    converged = False
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        try:
            step = np.linalg.solve(info, grad)
        except np.linalg.LinAlgError:
            break
        if not np.all(np.isfinite(step)):
            break
        scale = 1.0
        for _ in range(30):
            candidate = beta + scale * step
            with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
                new = _partial_loglik(x, t, e, candidate, penalty)
            finite = np.isfinite(new[0]) and np.all(np.isfinite(new[1])) \
                and np.all(np.isfinite(new[2]))
            if finite and new[0] >= loglik - 1e-12 * abs(loglik):
                break
            scale *= 0.5
        else:
            break
        delta = candidate - beta
        beta = candidate
        loglik, grad, info = new
        if np.max(np.abs(delta)) < tol:
            converged = True
            break
    se = np.full(p, np.nan)
    if converged:
        try:
            cov = np.linalg.inv(info)
            diag = np.diag(cov)
            if np.all(diag > 0) and np.all(np.isfinite(diag)):
                se = np.sqrt(diag)
            else:
                converged = False
        except np.linalg.LinAlgError:
            converged = False
    return CoxModel(beta, se, loglik, converged, float(penalty), n_iter)


def cox_pvalues(model: CoxModel) -> np.ndarray:
    """Two-sided Wald p-values per coefficient."""
    if not model.converged:
        raise SurvivalError("model did not converge")
    z = np.abs(model.beta / model.standard_errors)
    return 2.0 * stats.norm.sf(z)


def cox_fit_with_fallback(x, labels: SurvivalLabels, fallback_penalty: float = 0.1) -> CoxModel:
    """Unpenalised fit, retried once with a ridge penalty if it does not converge."""
    model = cox_fit(x, labels, penalty=0.0)
    if not model.converged:
        model = cox_fit(x, labels, penalty=fallback_penalty)
    return model


def univariate_cox_select(fingerprints, labels: SurvivalLabels, alpha: float = 0.05,
                          fallback_penalty: float = 0.1) -> np.ndarray:
    """Indices of fingerprints with univariate Wald p < ``alpha``.

    Falls back to every index when nothing passes.
    """
    z = np.asarray(fingerprints, dtype=float)
    n_fp = z.shape[1]
    if n_fp < 1:
        raise SurvivalError("need at least one fingerprint")
    selected = []
    for j in range(n_fp):
        col = z[:, j]
        if np.ptp(col) <= 1e-12 * max(1.0, np.abs(col).max()):
            continue
        model = cox_fit_with_fallback(col[:, None], labels, fallback_penalty)
        if not model.converged:
            continue
        if cox_pvalues(model)[0] < alpha:
            selected.append(j)
    if not selected:
        return np.arange(n_fp)
    return np.asarray(selected, dtype=int)


def cox_neural_loss(log_h, labels: SurvivalLabels) -> Tuple[float, np.ndarray]:
    """Negative mean partial log-likelihood of predicted log hazards.

    Returns the loss and its gradient with respect to ``log_h`` in input order.
    Risk-set sums are accumulated as running log-sum-exps, i.e. the
    ``max(log_h)`` shift applied per risk set, so widely spread log hazards
    neither overflow nor underflow.
    """
    log_h = np.asarray(log_h, dtype=float).ravel()
    if log_h.shape[0] != len(labels):
        raise SurvivalError("log_h and labels differ in length")
    if not np.all(np.isfinite(log_h)):
        raise SurvivalError("non-finite log hazards")
    n_events = labels.n_events
    if n_events == 0:
        raise SurvivalError("no events")
    order = np.argsort(-labels.time, kind="stable")
    ts = labels.time[order]
    es = labels.event[order]
    lh = log_h[order]
    starts, ends = _tie_groups(ts)
    log_risk = np.logaddexp.accumulate(lh)[ends]
    loss = -float(np.sum(lh[es] - log_risk[es])) / n_events
    # log of sum over events i with t_i <= t_j of 1/S_i, tied samples share their group's sum
    neg = np.where(es, -log_risk, -np.inf)
    log_c = np.logaddexp.accumulate(neg[::-1])[::-1][starts]
    grad_sorted = (np.exp(lh + log_c) - es) / n_events
    grad = np.empty_like(grad_sorted)
    grad[order] = grad_sorted
    return loss, grad
