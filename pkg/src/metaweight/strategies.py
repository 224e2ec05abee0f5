"""Related-example weighting baselines and the training regimes built on them."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Callable, Protocol

import numpy as np

from . import meta
from .report import RunReport, snapshot_weights, task_accuracy
from .tensor import ParamVector, make_rng

STRATEGIES = ("one_for_all", "random_fixed", "random_changing", "oracle", "learned")
REGIMES = ("primary_only", "pretrain_finetune", "pooled", "multitask", "weighted_multitask")

# RNG stream ids under one seed
STREAM_INIT, STREAM_STRATEGY, STREAM_TRAIN, STREAM_WEIGHT_INIT = 1, 2, 3, 4


class WeightSource(Protocol):
    def forward(self, eta: ParamVector, idx=None) -> np.ndarray: ...
    def backward(self, eta: ParamVector, idx, upstream) -> ParamVector: ...


class WeightingStrategy:
    """Produces per-example weights for related batches.

    ``correct`` marks related examples whose label agrees with the primary
    task; only ``oracle`` needs it.
    """

    def __init__(self, kind: str, n_related: int, rng: np.random.Generator, correct: np.ndarray | None = None,
                 source: WeightSource | None = None):
        if kind not in STRATEGIES:
            raise ValueError(f"unknown strategy {kind!r}; expected one of {STRATEGIES}")
        if kind == "oracle" and correct is None:
            raise ValueError("oracle weighting needs per-example correctness ground truth")
        if kind == "learned" and source is None:
            raise ValueError("learned weighting needs a weight model")
        self.kind, self.n_related, self.rng, self.source = kind, n_related, rng, source
        self.correct = None if correct is None else np.asarray(correct, dtype=bool)
        self.fixed_table = None
        if kind == "random_fixed":
            self.fixed_table = rng.uniform(0.0, 1.0, size=n_related)
            self.fixed_table.flags.writeable = False

    def weights_for(self, batch, eta: ParamVector | None = None) -> np.ndarray:
        batch = np.asarray(batch)
        if self.kind == "one_for_all":
            return np.ones(len(batch))
        if self.kind == "random_fixed":
            return self.fixed_table[batch]
        if self.kind == "random_changing":
            return self.rng.uniform(0.0, 1.0, size=len(batch))
        if self.kind == "oracle":
            return self.correct[batch].astype(float)
        if eta is None:
            raise ValueError("learned weighting needs weight-model parameters")
        return self.source.forward(eta, batch)

    def full_weights(self, eta: ParamVector | None = None) -> np.ndarray | None:
        """Weights of the whole related set, or ``None`` when they are not fixed."""
        if self.kind == "random_changing":
            return None
        if self.kind == "learned":
            return self.source.forward(eta, None)
        return self.weights_for(np.arange(self.n_related), eta)

    def weighting(self) -> meta.Weighting:
        backward = None
        if self.kind == "learned":
            src = self.source
            backward = lambda batch, eta, upstream: src.backward(eta, batch, upstream)  # noqa: E731
        return meta.Weighting(self.weights_for, backward, self.full_weights, self.correct)


@dataclass
class TaskBundle:
    init_theta: Callable[[np.random.Generator], ParamVector]
    primary: meta.Task
    related: meta.Task | None
    valid: meta.Task
    test: meta.Task


class Problem(Protocol):
    """An experiment's data and models, exposed per model layout.

    ``layout`` is ``"primary"`` (one head over primary answers only),
    ``"pooled"`` (one head over the union of answers) or ``"multihead"``
    (shared body, one head per task).
    """

    experiment: str
    related_correct: np.ndarray | None

    def bundle(self, layout: str) -> TaskBundle: ...
    def weight_source(self) -> tuple[WeightSource, Callable[[np.random.Generator], ParamVector]]: ...


_LAYOUT = {"primary_only": "primary", "pretrain_finetune": "pooled", "pooled": "pooled",
           "multitask": "multihead", "weighted_multitask": "multihead"}


def _report(problem, regime, strategy, seed, config, result: meta.TrainResult, bundle: TaskBundle,
            correct, extra=None, evals_prefix=()) -> RunReport:
    snaps = [snapshot_weights(w, it, correct) for it, w in result.snapshots if w is not None]
    return RunReport(
        experiment=problem.experiment, regime=regime, strategy=strategy, seed=seed,
        config=config.to_dict(),
        evals=[dataclasses.asdict(e) for e in (*evals_prefix, *result.evals)],
        best_iteration=result.best_iteration, best_valid_accuracy=result.best_valid_accuracy,
        test_accuracy=task_accuracy(bundle.test, result.best_theta),
        weight_snapshots=snaps, wallclock=result.wallclock, extra=extra or {},
    )


def run_regime(regime: str, problem: Problem, config: meta.MetaTrainConfig, seed: int,
               strategy: str = "one_for_all", checkpoint_dir=None) -> RunReport:
    """Train one seed under ``regime`` and report test accuracy at the best validation point.

    Only ``weighted_multitask`` consults ``strategy``; the other regimes
    weight every related example by one (or ignore the related task).
    """
    if regime not in REGIMES:
        raise ValueError(f"unknown regime {regime!r}; expected one of {REGIMES}")
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")
    if regime != "weighted_multitask":
        strategy = "one_for_all"
    bundle = problem.bundle(_LAYOUT[regime])
    if regime != "primary_only" and bundle.related is None:
        raise ValueError(f"regime {regime} needs related-task data")
    theta0 = bundle.init_theta(make_rng(seed, STREAM_INIT))
    train_rng = make_rng(seed, STREAM_TRAIN)

    if regime == "primary_only":
        state = meta.TrainState.create(theta0, None, train_rng)
        result = meta.train(state, bundle.primary, None, bundle.valid, None, config, checkpoint_dir)
        return _report(problem, regime, strategy, seed, config, result, bundle, None)

    if regime == "pretrain_finetune":
        # phase 1: related data alone, early-stopped on primary validation
        pre_cfg = dataclasses.replace(config, patience=config.patience or 50)
        state = meta.TrainState.create(theta0, None, train_rng)
        pre = meta.train(state, bundle.related, None, bundle.valid, None, pre_cfg)
        # phase 2: fresh optimizer, primary data from the pretrained point
        state = meta.TrainState.create(pre.best_theta, None, train_rng)
        result = meta.train(state, bundle.primary, None, bundle.valid, None, config, checkpoint_dir)
        extra = {"pretrain_best_iteration": pre.best_iteration, "pretrain_best_valid": pre.best_valid_accuracy,
                 "pretrain_iterations": pre.final_state.iter}
        return _report(problem, regime, strategy, seed, config, result, bundle, None, extra)

    source, eta = None, None
    if strategy == "learned":
        source, init_eta = problem.weight_source()
        eta = init_eta(make_rng(seed, STREAM_WEIGHT_INIT))
    correct = problem.related_correct
    ws = WeightingStrategy(strategy, len(bundle.related), make_rng(seed, STREAM_STRATEGY), correct, source)
    if regime in ("pooled", "multitask"):
        config = dataclasses.replace(config, enable_step1=True)
    state = meta.TrainState.create(theta0, eta, train_rng)
    result = meta.train(state, bundle.primary, bundle.related, bundle.valid, ws.weighting(), config,
                        checkpoint_dir)
    return _report(problem, regime, strategy, seed, config, result, bundle, correct)
