"""Meta-learned example weighting.

Each training iteration runs up to three steps:

1. (optional) an Adam step on the mean primary loss, lr ``alpha``;
2. an Adam step on ``sum_i w_i L_i`` over a related batch, lr ``beta``, with
   the weights held constant;
3. ``meta_updates_per_iter`` times: simulate ``K`` plain-SGD steps of the
   weighted related loss, take the primary-loss gradient ``v`` at the
   simulated parameters, and move the weight-model parameters ``eta`` along

       d L^P / d eta = sum_k sum_i (-beta * g_i(theta_k) . v) * d w_i / d eta

   which is exact for ``K = 1`` and first order beyond.
"""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Protocol

import numpy as np

from .tensor import AdamState, ParamVector, adam_step, make_rng


class TrainingDiverged(FloatingPointError):
    def __init__(self, iteration: int, what: str):
        super().__init__(f"non-finite {what} at iteration {iteration}")
        self.iteration = iteration


class Task(Protocol):
    name: str

    def __len__(self) -> int: ...
    def loss_and_grad(self, theta: ParamVector, idx, scale): ...
    def example_dots(self, theta: ParamVector, idx, v: ParamVector) -> np.ndarray: ...
    def losses(self, theta: ParamVector, idx=None) -> np.ndarray: ...
    def correct(self, theta: ParamVector, idx=None) -> np.ndarray: ...


@dataclass
class MetaTrainConfig:
    alpha: float = 1e-3
    beta: float = 1e-3
    gamma: float = 1e-3
    adam_eps: float = 1e-8
    batch_primary: int = 32
    batch_related: int = 32
    unroll_depth: int = 1
    meta_updates_per_iter: int = 1
    enable_step1: bool = True
    max_iters: int = 1000
    eval_every: int = 100
    snapshot_every: int = 0  # 0 disables weight snapshots
    train_eval_size: int = 2048  # primary examples used for the logged train loss
    patience: int = 0  # stop after this many evaluations without improvement; 0 = never

    def __post_init__(self):
        if self.patience < 0:
            raise ValueError("patience must be non-negative")
        for name in ("alpha", "beta", "gamma", "adam_eps"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("batch_primary", "batch_related", "unroll_depth", "meta_updates_per_iter", "eval_every"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")
        if self.max_iters < 0 or self.snapshot_every < 0:
            raise ValueError("max_iters and snapshot_every must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)


class BatchSampler:
    """Epoch-wise shuffled batches; each epoch is a fresh permutation."""

    def __init__(self, n: int, batch: int, rng: np.random.Generator):
        if n == 0:
            raise ValueError("cannot sample from an empty dataset")
        self.n, self.batch, self.rng = n, min(batch, n), rng
        self._perm = np.zeros(0, dtype=np.int64)
        self._pos = 0
        self.epochs = 0

    def next(self) -> np.ndarray:
        if self._pos + self.batch > self._perm.shape[0]:
            self._perm = self.rng.permutation(self.n)
            self._pos = 0
            self.epochs += 1
        out = self._perm[self._pos:self._pos + self.batch]
        self._pos += self.batch
        return out


@dataclass
class TrainState:
    theta: ParamVector
    eta: ParamVector | None
    adam_theta: AdamState
    adam_eta: AdamState | None
    iter: int
    rng: np.random.Generator

    @classmethod
    def create(cls, theta: ParamVector, eta: ParamVector | None, rng: np.random.Generator) -> "TrainState":
        return cls(theta, eta, AdamState.zeros(theta.size), None if eta is None else AdamState.zeros(eta.size),
                   0, rng)


WeightFn = Callable[[np.ndarray, "ParamVector | None"], np.ndarray]


@dataclass
class InnerRecord:
    """One simulated step: parameters it started from, its batch and weights.

    Per-example gradients are recomputed lazily from ``theta`` when needed,
    which is cheaper than storing them.
    """

    theta: ParamVector
    batch: np.ndarray
    weights: np.ndarray


def _sample(n: int, size: int, rng: np.random.Generator) -> np.ndarray:
    if n == 0:
        raise ValueError("cannot sample from an empty dataset")
    return rng.choice(n, size=min(size, n), replace=False)


def _finite(x, iteration: int, what: str):
    if not np.all(np.isfinite(x)):
        raise TrainingDiverged(iteration, what)


def step_primary(state: TrainState, primary: Task, config: MetaTrainConfig, batch=None) -> TrainState:
    """Adam step on the mean primary loss; a no-op when step 1 is disabled."""
    if not config.enable_step1:
        return state
    if batch is None:
        batch = _sample(len(primary), config.batch_primary, state.rng)
    return _primary_adam(state, primary, config, batch)


def _primary_adam(state, primary, config, batch):
    losses, grad = primary.loss_and_grad(state.theta, batch, np.full(len(batch), 1.0 / len(batch)))
    _finite(losses, state.iter, "primary loss")
    state.theta, state.adam_theta = adam_step(state.theta, grad, state.adam_theta, config.alpha, config.adam_eps)
    return state


def step_related_weighted(state: TrainState, related: Task, weight_fn: WeightFn, config: MetaTrainConfig,
                          batch=None) -> TrainState:
    """Adam step on ``sum_i w_i L_i``; the weights enter as constants."""
    if batch is None:
        batch = _sample(len(related), config.batch_related, state.rng)
    w = weight_fn(batch, state.eta)
    losses, grad = related.loss_and_grad(state.theta, batch, w)
    _finite(losses, state.iter, "related loss")
    state.theta, state.adam_theta = adam_step(state.theta, grad, state.adam_theta, config.beta, config.adam_eps)
    return state


def simulate_inner(state: TrainState, related: Task, weight_fn: WeightFn, config: MetaTrainConfig,
                   batches=None) -> tuple[ParamVector, list[InnerRecord]]:
    """``K`` plain-SGD steps from the live parameters; the state is not modified."""
    theta = state.theta
    trace = []
    for k in range(config.unroll_depth):
        batch = batches[k] if batches is not None else _sample(len(related), config.batch_related, state.rng)
        w = weight_fn(batch, state.eta)
        _, g = related.loss_and_grad(theta, batch, w)
        trace.append(InnerRecord(theta, batch, w))
        theta = theta.axpy(-config.beta, g)
    return theta, trace


def meta_gradient(state: TrainState, primary: Task, related: Task, weight_fn: WeightFn, weight_backward,
                  config: MetaTrainConfig, inner_batches=None, primary_batch=None) -> ParamVector:
    """Gradient of the post-simulation primary loss with respect to ``eta``.

    ``weight_backward(batch, eta, upstream)`` must return the gradient of
    ``sum_i upstream_i * w_i(eta)``.
    """
    theta_prime, trace = simulate_inner(state, related, weight_fn, config, inner_batches)
    if primary_batch is None:
        primary_batch = _sample(len(primary), config.batch_primary, state.rng)
    _, v = primary.loss_and_grad(theta_prime, primary_batch, np.ones(len(primary_batch)))
    g_eta = state.eta.zeros_like()
    for rec in trace:
        upstream = -config.beta * related.example_dots(rec.theta, rec.batch, v)
        g_eta.values += weight_backward(rec.batch, state.eta, upstream).values
    return g_eta


def meta_update(state: TrainState, primary: Task, related: Task, weight_fn: WeightFn, weight_backward,
                config: MetaTrainConfig, **kw) -> TrainState:
    g = meta_gradient(state, primary, related, weight_fn, weight_backward, config, **kw)
    _finite(g.values, state.iter, "meta-gradient")
    state.eta, state.adam_eta = adam_step(state.eta, g, state.adam_eta, config.gamma, config.adam_eps)
    return state


@dataclass
class Evaluation:
    iteration: int
    train_loss: float
    valid_loss: float
    valid_accuracy: float


def _mean_finite(x: np.ndarray) -> float:
    x = x[np.isfinite(x)]
    return float(x.mean()) if x.size else float("nan")


def evaluate(theta: ParamVector, primary: Task, valid: Task, iteration: int, train_idx: np.ndarray) -> Evaluation:
    return Evaluation(
        iteration=iteration,
        train_loss=_mean_finite(primary.losses(theta, train_idx)),
        valid_loss=_mean_finite(valid.losses(theta)),
        valid_accuracy=100.0 * float(np.mean(valid.correct(theta))),
    )


@dataclass
class Weighting:
    """How step 2 and the meta update obtain related-example weights.

    ``forward(batch, eta)`` gives weights; ``backward`` is set only for a
    learned weighter and switches on step 3. ``snapshot(eta)`` returns
    weights for the whole related set, or ``None`` when that is undefined.
    """

    forward: WeightFn
    backward: Callable | None = None
    snapshot: Callable | None = None
    indicator: np.ndarray | None = None


@dataclass
class TrainResult:
    evals: list[Evaluation]
    best_iteration: int
    best_valid_accuracy: float
    best_theta: ParamVector
    final_state: TrainState
    snapshots: list[tuple[int, np.ndarray]] = field(default_factory=list)
    wallclock: float = 0.0


def train(state: TrainState, primary: Task, related: Task | None, valid: Task, weighting: Weighting | None,
          config: MetaTrainConfig, checkpoint_dir: str | Path | None = None) -> TrainResult:
    """Run ``config.max_iters`` iterations and keep the best-validation parameters.

    Without a related task only step 1 runs (regardless of ``enable_step1``).
    Ties in validation accuracy keep the earliest iteration.
    """
    t0 = time.perf_counter()
    primary_sampler = BatchSampler(len(primary), config.batch_primary, state.rng)
    related_sampler = BatchSampler(len(related), config.batch_related, state.rng) if related is not None else None
    train_idx = np.arange(min(len(primary), config.train_eval_size))
    learned = weighting is not None and weighting.backward is not None
    if learned and state.eta is None:
        raise ValueError("learned weighting needs weight-model parameters")

    evals = [evaluate(state.theta, primary, valid, state.iter, train_idx)]
    best = (evals[0].valid_accuracy, state.iter, state.theta.copy())
    snapshots = []

    def snap():
        if weighting is not None and weighting.snapshot is not None and config.snapshot_every:
            snapshots.append((state.iter, weighting.snapshot(state.eta)))

    snap()
    step1 = config.enable_step1 or related is None
    end = state.iter + config.max_iters
    while state.iter < end:
        if step1:
            _primary_adam(state, primary, config, primary_sampler.next())
        if related is not None:
            step_related_weighted(state, related, weighting.forward, config, batch=related_sampler.next())
            if learned:
                for _ in range(config.meta_updates_per_iter):
                    meta_update(state, primary, related, weighting.forward, weighting.backward, config)
        state.iter += 1
        if state.iter % config.eval_every == 0 or state.iter == end:
            ev = evaluate(state.theta, primary, valid, state.iter, train_idx)
            if not np.isfinite(ev.train_loss) and len(primary):
                raise TrainingDiverged(state.iter, "training loss")
            evals.append(ev)
            if ev.valid_accuracy > best[0]:
                best = (ev.valid_accuracy, state.iter, state.theta.copy())
                if checkpoint_dir is not None:
                    save_checkpoint(Path(checkpoint_dir) / "best_theta.mwpv", best[2])
            elif config.patience and (state.iter - best[1]) >= config.patience * config.eval_every:
                break
        if config.snapshot_every and state.iter % config.snapshot_every == 0:
            snap()

    if checkpoint_dir is not None:
        save_checkpoint(Path(checkpoint_dir) / "final_theta.mwpv", state.theta)
        if state.eta is not None:
            save_checkpoint(Path(checkpoint_dir) / "final_eta.mwpv", state.eta)
    return TrainResult(evals, best[1], best[0], best[2], state, snapshots, time.perf_counter() - t0)


def save_checkpoint(path: Path, p: ParamVector) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(p.to_bytes())


def load_checkpoint(path: str | Path) -> ParamVector:
    return ParamVector.from_bytes(Path(path).read_bytes())


def new_state(theta: ParamVector, eta: ParamVector | None, seed: int, stream: int = 7) -> TrainState:
    return TrainState.create(theta, eta, make_rng(seed, stream))
