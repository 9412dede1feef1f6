"""Training objective: censored negative log-likelihood plus two
load-balancing penalties on the routing distributions.

Every loss builder returns a DiffNode so the same code serves training
(backward through the graph) and evaluation (read .item()). Array inputs are
wrapped as constants.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import DiffNode
from .errors import UsageError
from .model import DualMoeConfig, ForwardGraph

PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class LossBreakdown:
    nll: float
    lb_feat: float
    lb_haz: float
    total: float


@dataclass(frozen=True)
class BatchRoutingStats:
    """Batch-mean routing probabilities: (K,) features, (n_bins, L) hazards."""

    pi_bar_feat: np.ndarray
    pi_bar_haz: np.ndarray


def _wrap(x) -> DiffNode:
    return x if isinstance(x, DiffNode) else ad.constant(np.asarray(x, dtype=np.float64))


def nll_loss(hazards, tau, delta) -> DiffNode:
    """Batch-mean negative log-likelihood of a (B, n_bins) hazard matrix.

    Events contribute -log p(tau) with p(t) = hazard_t * S(t-1); censored
    records contribute -log S(tau). Probabilities are floored at 1e-12 before
    the log.
    """
    lam = _wrap(hazards)
    batch, n_bins = lam.value.shape
    tau = np.asarray(tau, dtype=np.int64)
    delta = np.asarray(delta, dtype=np.int64)
    if tau.shape != (batch,) or delta.shape != (batch,):
        raise UsageError("tau/delta must be 1-D arrays matching the batch size")
    if tau.min() < 0 or tau.max() >= n_bins:
        raise UsageError(f"tau out of range [0, {n_bins - 1}]")

    log_lam = ad.log(ad.clip_min(lam, PROB_FLOOR))
    log_keep = ad.log(ad.clip_min(1.0 - lam, PROB_FLOOR))
    incl = np.tril(np.ones((n_bins, n_bins))).T  # [t', t] = 1 iff t' <= t
    strict = incl - np.eye(n_bins)  # [t', t] = 1 iff t' < t
    log_surv = ad.matmul(log_keep, ad.constant(incl))
    log_prev = ad.matmul(log_keep, ad.constant(strict))
    log_mass = log_lam + log_prev

    rows = np.arange(batch)
    event_mask = np.zeros((batch, n_bins))
    event_mask[rows[delta == 1], tau[delta == 1]] = 1.0
    censor_mask = np.zeros((batch, n_bins))
    censor_mask[rows[delta == 0], tau[delta == 0]] = 1.0

    picked = ad.mul(ad.constant(event_mask), log_mass) + ad.mul(
        ad.constant(censor_mask), log_surv
    )
    return ad.mul(picked.sum(), -1.0 / batch)


def lb_feat_loss(pi_bar, n_experts: int, coef: float) -> DiffNode:
    """Balance penalty K * sum_k pi_bar_k^2 - 1, scaled by `coef`; 0 at uniform."""
    pb = _wrap(pi_bar)
    s = ad.mul(pb, pb).sum()
    return ad.mul(ad.mul(s, float(n_experts)) - 1.0, float(coef))


def lb_haz_loss(pi_bar_haz, n_experts: int, coef: float) -> DiffNode:
    """Per-bin balance penalty L * sum_l pi_bar_{t,l}^2 - 1, averaged over
    bins and scaled by `coef`; 0 when every bin routes uniformly."""
    pb = _wrap(pi_bar_haz)
    per_bin = ad.mul(ad.mul(pb, pb).sum(axis=1), float(n_experts))
    return ad.mul(per_bin.mean() - 1.0, float(coef))


def lb_feat_from_batch(pi_feat: DiffNode, n_experts: int, coef: float) -> DiffNode:
    return lb_feat_loss(pi_feat.mean(axis=0, keepdims=True), n_experts, coef)


def lb_haz_from_batch(pi_haz: DiffNode, batch: int, n_bins: int, n_experts: int,
                      coef: float) -> DiffNode:
    # rows are patient-major: reshape so the batch mean lands per (bin, expert)
    per_patient = ad.reshape(pi_haz, (batch, n_bins * n_experts))
    pi_bar = ad.reshape(per_patient.mean(axis=0), (n_bins, n_experts))
    return lb_haz_loss(pi_bar, n_experts, coef)


def batch_routing_stats(graph: ForwardGraph, config: DualMoeConfig) -> BatchRoutingStats:
    """Numpy batch-mean routing probabilities for reporting."""
    if graph.pi_feat is None:
        pi_bar_feat = np.ones(1)
    else:
        pi_bar_feat = graph.pi_feat.value.mean(axis=0)
    if graph.pi_haz is None:
        pi_bar_haz = np.ones((config.n_bins, 1))
    else:
        pi_bar_haz = graph.pi_haz.value.reshape(
            graph.batch_size, config.n_bins, config.n_hazard_experts
        ).mean(axis=0)
    return BatchRoutingStats(pi_bar_feat=pi_bar_feat, pi_bar_haz=pi_bar_haz)


def total_loss(graph: ForwardGraph, tau, delta,
               config: DualMoeConfig) -> tuple[DiffNode, LossBreakdown]:
    """Combined objective node plus its float breakdown.

    Disabled mixtures contribute nothing, so the total is exactly the NLL for
    the single-network configuration.
    """
    nll = nll_loss(graph.hazards, tau, delta)
    total = nll
    lb_f = 0.0
    lb_h = 0.0
    if graph.pi_feat is not None:
        node = lb_feat_from_batch(graph.pi_feat, config.n_feature_experts,
                                  config.feat_balance_coef)
        total = total + node
        lb_f = node.item()
    if graph.pi_haz is not None:
        node = lb_haz_from_batch(graph.pi_haz, graph.batch_size, config.n_bins,
                                 config.n_hazard_experts, config.hazard_balance_coef)
        total = total + node
        lb_h = node.item()
    return total, LossBreakdown(nll=nll.item(), lb_feat=lb_f, lb_haz=lb_h, total=total.item())
