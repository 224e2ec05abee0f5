"""Quick numerical checks runnable from the command line."""
from __future__ import annotations

import numpy as np

from . import dialog as dlg
from . import meta
from .classifier import LinearClassifier, WeightPerceptron
from .memnet import MemoryNetwork, WeightMemNet
from .strategies import WeightingStrategy
from .tasks import ClassifierTask
from .tensor import finite_difference_grad, make_rng, relative_error

GRADIENT_TOLERANCE = 1e-5
META_TOLERANCE = 1e-4
ORACLE_TOLERANCE = 1e-12
_PROBES = 40  # finite-difference coordinates per memory-network trial


def _tiny_dialogs():
    spec = dlg.SyntheticSpec(n_related=3, n_primary_train=2, n_primary_valid=1, n_primary_test=1, n_restaurants=6,
                             results_per_query=(2, 3))
    related, primary = dlg.generate_synthetic(spec, make_rng(0, 901))
    vocab = dlg.build_vocabulary([related, primary["train"]])
    rc = dlg.build_candidates([related], vocab)
    pc = dlg.build_candidates([primary["train"]], vocab)
    return vocab, (dlg.extract_examples(related, vocab, rc), rc), (dlg.extract_examples(primary["train"], vocab, pc), pc)


def _worst(trials, one_trial) -> float:
    return max(one_trial(make_rng(t, 902)) for t in range(trials))


def _probe(rng, f, p, g):
    coords = rng.choice(p.size, size=min(_PROBES, p.size), replace=False)
    fd = finite_difference_grad(f, p, coords=coords)
    return relative_error(g.values[coords], fd.values[coords])


def check_classifier(trials: int) -> float:
    model = LinearClassifier(6, 4)

    def trial(rng):
        X, y, scale = rng.normal(size=(5, 6)), rng.integers(0, 4, 5), rng.random(5)
        theta = model.init_params()
        theta.values[:] = rng.normal(size=theta.size)
        g = model.loss_and_grad(theta, X, y, scale)[1]
        fd = finite_difference_grad(lambda p: float(scale @ model.forward(p, X, y)[1]), theta)
        return relative_error(g.values, fd.values)
    return _worst(trials, trial)


def check_perceptron(trials: int) -> float:
    wp = WeightPerceptron(7)

    def trial(rng):
        feats, up = rng.normal(size=(5, 7)), rng.normal(size=5)
        eta = wp.init_params(rng)
        eta.values[:] = rng.normal(scale=0.5, size=eta.size)
        fd = finite_difference_grad(lambda e: float(up @ wp.forward(e, feats)), eta)
        return relative_error(wp.backward(eta, feats, up).values, fd.values)
    return _worst(trials, trial)


def check_memnet(trials: int, heads: bool = False) -> float:
    vocab, (rel, rc), (pri, pc) = _tiny_dialogs()
    model = MemoryNetwork(len(vocab), embed=4, heads=("primary", "related") if heads else None)

    def trial(rng):
        theta = model.init_params(rng)
        head, data, cands = ("related", rel, rc) if heads and rng.random() < 0.5 else \
            ("primary" if heads else None, pri, pc)
        batch = rng.choice(len(data), size=min(4, len(data)), replace=False)
        scale = rng.random(batch.size)
        g = model.loss_and_grad(theta, data, cands, batch, scale, head)[1]
        return _probe(rng, lambda p: float(scale @ model.forward(p, data, cands, batch, head)[2]), theta, g)
    return _worst(trials, trial)


def check_weight_memnet(trials: int) -> float:
    vocab, (rel, _), _ = _tiny_dialogs()
    wm = WeightMemNet(len(vocab), embed=4)

    def trial(rng):
        eta = wm.init_params(rng)
        eta.values[:] = rng.uniform(-0.5, 0.5, size=eta.size)
        batch = rng.choice(len(rel), size=min(4, len(rel)), replace=False)
        up = rng.normal(size=batch.size)
        return _probe(rng, lambda e: float(up @ wm.forward(e, rel, batch)), eta, wm.backward(eta, rel, batch, up))
    return _worst(trials, trial)


def gradient_suite(trials: int) -> dict[str, float]:
    """Worst relative error per model over ``trials`` randomized instances."""
    return {"classifier": check_classifier(trials),
            "weight perceptron": check_perceptron(trials),
            "memory network": check_memnet(trials),
            "two-head memory network": check_memnet(trials, heads=True),
            "weight memory network": check_weight_memnet(trials)}


def check_meta_gradient(trials: int) -> float:
    def trial(rng):
        model = LinearClassifier(4, 3)
        primary = ClassifierTask(model, rng.normal(size=(6, 4)), rng.integers(0, 3, 6))
        related = ClassifierTask(model, rng.normal(size=(8, 4)), rng.integers(0, 3, 8), "related")
        feats = rng.normal(size=(8, 3))
        wp = WeightPerceptron(3)
        theta = model.init_params()
        theta.values[:] = rng.normal(scale=0.3, size=theta.size)
        eta = wp.init_params(rng)
        cfg = meta.MetaTrainConfig(beta=0.5, batch_primary=6, batch_related=8)
        state = meta.TrainState.create(theta, eta, rng)
        rb, pb = np.arange(8), np.arange(6)
        g = meta.meta_gradient(state, primary, related, lambda b, e: wp.forward(e, feats[b]),
                               lambda b, e, up: wp.backward(e, feats[b], up), cfg,
                               inner_batches=[rb], primary_batch=pb)

        def outer(e):
            _, gr = related.loss_and_grad(theta, rb, wp.forward(e, feats[rb]))
            return float(primary.losses(theta.axpy(-cfg.beta, gr), pb).sum())
        return relative_error(g.values, finite_difference_grad(outer, eta).values)
    return _worst(trials, trial)


def check_oracle(n_features: int = 5, n: int = 16) -> float:
    rng = make_rng(0, 905)
    model = LinearClassifier(n_features, 3)
    X, y = rng.normal(size=(n, n_features)), rng.integers(0, 3, n)
    correct = rng.random(n) < 0.5
    theta = model.init_params()
    theta.values[:] = rng.normal(size=theta.size)
    w = WeightingStrategy("oracle", n, rng, correct).weights_for(np.arange(n))
    full = model.loss_and_grad(theta, X, y, w)[1]
    sub = model.loss_and_grad(theta, X[correct], y[correct], np.ones(int(correct.sum())))[1]
    return float(np.max(np.abs(full.values - sub.values)))


def run_selftest(trials: int = 10, log=print) -> int:
    results = [(f"{name} gradient", err, GRADIENT_TOLERANCE) for name, err in gradient_suite(trials).items()]
    results.append(("one-step meta-gradient", check_meta_gradient(trials), META_TOLERANCE))
    results.append(("oracle equals correct subset", check_oracle(), ORACLE_TOLERANCE))
    failed = 0
    for name, err, tol in results:
        ok = err <= tol
        failed += not ok
        log(f"{'PASS' if ok else 'FAIL'} {name}: error {err:.2e} (limit {tol:.0e})")
    return 1 if failed else 0
