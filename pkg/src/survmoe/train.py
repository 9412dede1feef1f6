"""Training loop and multi-seed experiment harness.

One run = one (model config, seed): derive that seed's split, fit with
mini-batch Adam, early-stop on validation concordance, evaluate the retained
parameters on test. A grid maps variants x seeds to runs and aggregates
mean +/- sample std per metric. Everything is seeded; a rerun with identical
inputs reproduces every number bit for bit.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import autodiff as ad
from .autodiff import rng_for
from .data import PrepConfig, PreparedData, RawDataset, prepare
from .errors import ConfigurationError, TrainingAbortedError
from .losses import LossBreakdown, total_loss
from .metrics import DEFAULT_PERCENTILES, evaluate_curves, harrell_cindex, risk_scores
from .model import DualMoeConfig, DualMoeModel, survival_from_hazards


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 128
    learning_rate: float = 1e-3
    patience: int = 20
    eval_every: int = 1
    stop_metric: str = "cindex"  # "cindex" (validation concordance) or "nll"

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.eval_every < 1:
            raise ConfigurationError("epochs, batch_size, eval_every must be >= 1")
        if self.patience > self.epochs:
            raise ConfigurationError("patience cannot exceed epochs")
        if self.stop_metric not in ("cindex", "nll"):
            raise ConfigurationError("stop_metric must be 'cindex' or 'nll'")

    def to_entries(self) -> dict[str, str]:
        return {f.name: str(getattr(self, f.name)) for f in fields(self)}

    @classmethod
    def from_entries(cls, entries: dict[str, str]) -> "TrainConfig":
        kwargs = {}
        for f in fields(cls):
            if f.name not in entries:
                continue
            raw = entries[f.name]
            kwargs[f.name] = int(raw) if f.type == "int" else (
                float(raw) if f.type == "float" else raw
            )
        return cls(**kwargs)


DEFAULT_SEEDS = tuple(range(10))


@dataclass
class EpochLog:
    epoch: int
    nll: float
    lb_feat: float
    lb_haz: float
    total: float
    val_score: float


@dataclass
class RunResult:
    seed: int
    best_epoch: int
    test_cindex: float
    test_cindex_pairs: int
    test_td: dict[float, float]
    test_td_pairs: dict[float, int]
    final_loss: LossBreakdown
    epoch_logs: list[EpochLog] = field(repr=False)
    routing_pi_feat: np.ndarray = field(repr=False, default=None)
    routing_pi_haz: np.ndarray = field(repr=False, default=None)
    snapshot: dict = field(repr=False, default=None)


def _val_score(model: DualMoeModel, split, stop_metric: str) -> float:
    hazards, _, _ = model.predict(split.x)
    if stop_metric == "cindex":
        surv = survival_from_hazards(hazards)
        return harrell_cindex(risk_scores(surv), split.tau, split.delta).value
    from .losses import nll_loss

    return -nll_loss(hazards, split.tau, split.delta).item()


def train_one(model_config: DualMoeConfig, train_config: TrainConfig,
              raw: RawDataset, prep: PrepConfig, seed: int,
              keep_snapshot: bool = False) -> RunResult:
    """Train on the seed's split and evaluate the best-validation parameters."""
    prepared = prepare(raw, prep, seed)
    if prepared.input_dim != model_config.input_dim:
        raise ConfigurationError(
            f"model expects input_dim={model_config.input_dim}, data has {prepared.input_dim}"
        )
    if prepared.max_bin != model_config.max_bin:
        raise ConfigurationError(
            f"model expects max_bin={model_config.max_bin}, data has {prepared.max_bin}"
        )
    model = DualMoeModel(model_config, seed=seed)
    shuffle_rng = rng_for(seed, "shuffle")
    train = prepared.train

    best_score = -math.inf
    best_epoch = -1
    best_params = model.store.snapshot()
    evals_since_best = 0
    last_finite = None
    logs: list[EpochLog] = []

    stop = False
    for epoch in range(train_config.epochs):
        order = shuffle_rng.permutation(train.n)
        sums = np.zeros(4)
        for start in range(0, train.n, train_config.batch_size):
            batch = order[start : start + train_config.batch_size]
            graph = model.forward(train.x[batch])
            loss, parts = total_loss(graph, train.tau[batch], train.delta[batch],
                                     model_config)
            if not math.isfinite(parts.total):
                raise TrainingAbortedError(
                    f"non-finite loss at epoch {epoch}, batch {start // train_config.batch_size}",
                    last_finite_loss=last_finite,
                    batch_index=start // train_config.batch_size,
                    epoch=epoch,
                )
            last_finite = parts.total
            ad.backward(loss)
            model.store.adam_step(lr=train_config.learning_rate)
            sums += np.array([parts.nll, parts.lb_feat, parts.lb_haz, parts.total]) * len(batch)
        means = sums / train.n

        val_score = math.nan
        if (epoch + 1) % train_config.eval_every == 0:
            val_score = _val_score(model, prepared.val, train_config.stop_metric)
            if val_score > best_score:
                best_score = val_score
                best_epoch = epoch
                best_params = model.store.snapshot()
                evals_since_best = 0
            else:
                evals_since_best += 1
            if evals_since_best >= train_config.patience:
                stop = True
        logs.append(EpochLog(epoch, means[0], means[1], means[2], means[3], val_score))
        if stop:
            break

    model.store.restore(best_params)
    # retained parameters must reproduce the best observed validation score
    assert _val_score(model, prepared.val, train_config.stop_metric) == best_score

    test = prepared.test
    hazards, pi_feat, pi_haz = model.predict(test.x)
    surv = survival_from_hazards(hazards)
    report = evaluate_curves(surv, test.tau, test.delta, DEFAULT_PERCENTILES)

    graph = model.forward(train.x)
    _, final_parts = total_loss(graph, train.tau, train.delta, model_config)
    model.store.zero_grads()

    return RunResult(
        seed=seed,
        best_epoch=best_epoch,
        test_cindex=report["cindex"].value,
        test_cindex_pairs=report["cindex"].comparable_pairs,
        test_td={p: r.value for p, r in report["td"].items()},
        test_td_pairs={p: r.comparable_pairs for p, r in report["td"].items()},
        final_loss=final_parts,
        epoch_logs=logs,
        routing_pi_feat=pi_feat,
        routing_pi_haz=pi_haz,
        snapshot=model.store.snapshot() if keep_snapshot else None,
    )


@dataclass
class GridResult:
    """Per-(variant, seed) run results plus aggregate rows."""

    runs: dict[tuple[str, int], RunResult | None]
    failures: dict[tuple[str, int], str]
    variants: list[str]
    seeds: list[int]

    def completed(self, variant: str) -> list[RunResult]:
        return [r for (v, _), r in sorted(self.runs.items()) if v == variant and r is not None]

    def metric_values(self, variant: str, metric: str, percentile: float | None = None):
        vals = []
        for run in self.completed(variant):
            if metric == "cindex":
                vals.append(run.test_cindex)
            elif metric == "td_cindex" and percentile in run.test_td:
                vals.append(run.test_td[percentile])
        return np.array(vals)

    def aggregate_rows(self) -> list[dict]:
        """Long-form rows: variant, metric, horizon percentile, mean, std, n."""
        rows = []
        for variant in self.variants:
            for metric, percentiles in (("cindex", (None,)), ("td_cindex", DEFAULT_PERCENTILES)):
                for p in percentiles:
                    vals = self.metric_values(variant, metric, p)
                    if vals.size == 0:
                        continue
                    std = float(np.std(vals, ddof=1)) if vals.size > 1 else 0.0
                    rows.append(
                        {
                            "variant": variant,
                            "metric": metric,
                            "horizon_percentile": "" if p is None else f"{int(p * 100)}",
                            "mean": float(np.mean(vals)),
                            "std": std,
                            "n_runs": int(vals.size),
                        }
                    )
        return rows


def _run_task(args):
    variant, seed, model_config, train_config, raw, prep = args
    try:
        result = train_one(model_config, train_config, raw, prep, seed)
        return variant, seed, result, None
    except TrainingAbortedError as exc:
        return variant, seed, None, str(exc)


def run_grid(raw: RawDataset, prep: PrepConfig, variants: dict[str, DualMoeConfig],
             train_config: TrainConfig, seeds=DEFAULT_SEEDS, jobs: int = 1) -> GridResult:
    """Train every (variant, seed) pair; aborted runs are recorded, not fatal."""
    if not variants:
        raise ConfigurationError("run_grid needs at least one variant")
    seeds = list(seeds)
    if not seeds:
        raise ConfigurationError("run_grid needs at least one seed")
    tasks = [
        (name, seed, cfg, train_config, raw, prep)
        for name, cfg in variants.items()
        for seed in seeds
    ]
    runs: dict[tuple[str, int], RunResult | None] = {}
    failures: dict[tuple[str, int], str] = {}
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_run_task, tasks))
    else:
        outcomes = [_run_task(t) for t in tasks]
    for variant, seed, result, error in outcomes:
        runs[(variant, seed)] = result
        if error is not None:
            failures[(variant, seed)] = error
    return GridResult(runs=runs, failures=failures, variants=list(variants), seeds=seeds)
