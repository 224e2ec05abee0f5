"""Softmax linear classifier and the sigmoid perceptron that scores examples.

Model objects hold the architecture only; parameters travel separately as
``ParamVector`` so the meta-trainer can evaluate the same model at simulated
parameters without copying the model.
"""
from __future__ import annotations

import numpy as np

from .tensor import DTYPE, ParamVector, open_unit, sigmoid, softmax_cross_entropy_rows

N_PIXELS = 784
N_CLASSES = 10
N_INDICATOR = 2
CORRECT, INCORRECT = 0, 1


def _check_batch(X: np.ndarray) -> None:
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("batch must be a non-empty 2-D array")


class LinearClassifier:
    """Multinomial logistic regression: ``logits = X @ W + b``."""

    def __init__(self, n_features: int = N_PIXELS, n_classes: int = N_CLASSES):
        self.n_features = n_features
        self.n_classes = n_classes
        self.layout = [("W", (n_features, n_classes)), ("b", (n_classes,))]
        if (n_features, n_classes) == (N_PIXELS, N_CLASSES):
            assert self.n_params == 7850

    @property
    def n_params(self) -> int:
        return self.n_features * self.n_classes + self.n_classes

    def init_params(self, rng=None) -> ParamVector:
        # convex problem: zeros are a fine, deterministic start
        return ParamVector(self.layout)

    def logits(self, theta: ParamVector, X: np.ndarray) -> np.ndarray:
        return X @ theta["W"] + theta["b"]

    def forward(self, theta: ParamVector, X: np.ndarray, y: np.ndarray):
        """Return ``(mean_loss, per_example_losses, logits)``."""
        _check_batch(X)
        logits = self.logits(theta, X)
        losses, _ = softmax_cross_entropy_rows(logits, y)
        return float(losses.mean()), losses, logits

    def backward(self, theta: ParamVector, X: np.ndarray, y: np.ndarray, scale) -> ParamVector:
        """Gradient of ``sum_i scale_i * loss_i`` with respect to ``W`` and ``b``."""
        return self.loss_and_grad(theta, X, y, scale)[1]

    def loss_and_grad(self, theta: ParamVector, X, y, scale):
        _check_batch(X)
        scale = np.asarray(scale, dtype=DTYPE)
        if scale.shape != (X.shape[0],):
            raise ValueError(f"scale has shape {scale.shape}, batch has {X.shape[0]} rows")
        losses, dlogits = softmax_cross_entropy_rows(self.logits(theta, X), y)
        dlogits *= scale[:, None]
        grad = theta.zeros_like()
        grad["W"] = X.T @ dlogits
        grad["b"] = dlogits.sum(axis=0)
        return losses, grad

    def example_dots(self, theta: ParamVector, X, y, v: ParamVector) -> np.ndarray:
        """``g_i . v`` for every example, where ``g_i`` is that example's loss gradient.

        ``g_i`` is the outer product ``x_i (p_i - e_y)``, so the contraction is
        ``x_i^T V_W (p_i - e_y) + v_b . (p_i - e_y)`` and never materializes
        per-example gradients.
        """
        _, dlogits = softmax_cross_entropy_rows(self.logits(theta, X), y)
        return np.einsum("ij,ij->i", X @ v["W"] + v["b"], dlogits)

    def predict(self, theta: ParamVector, X: np.ndarray) -> np.ndarray:
        return np.argmax(self.logits(theta, X), axis=1)


def weight_features(X: np.ndarray, labels: np.ndarray, indicator, n_classes: int = N_CLASSES) -> np.ndarray:
    """Concatenate pixels, one-hot shown label and one-hot correctness flag."""
    if indicator is None:
        raise ValueError("weight features need a correctness indicator per example")
    indicator = np.asarray(indicator)
    n = X.shape[0]
    if labels.shape != (n,) or indicator.shape != (n,):
        raise ValueError("labels/indicator must have one entry per example")
    feats = np.zeros((n, X.shape[1] + n_classes + N_INDICATOR), dtype=DTYPE)
    feats[:, :X.shape[1]] = X
    rows = np.arange(n)
    feats[rows, X.shape[1] + labels] = 1.0
    feats[rows, X.shape[1] + n_classes + indicator] = 1.0
    return feats


class WeightPerceptron:
    """``w = sigmoid(features @ V + c)`` with features from :func:`weight_features`."""

    def __init__(self, n_inputs: int = N_PIXELS + N_CLASSES + N_INDICATOR):
        self.n_inputs = n_inputs
        self.layout = [("V", (n_inputs, 1)), ("c", (1,))]
        if n_inputs == N_PIXELS + N_CLASSES + N_INDICATOR:
            assert n_inputs + 1 == 797

    @property
    def n_params(self) -> int:
        return self.n_inputs + 1

    def init_params(self, rng: np.random.Generator) -> ParamVector:
        p = ParamVector(self.layout)
        p["V"] = rng.uniform(-0.01, 0.01, size=(self.n_inputs, 1))
        return p

    def forward(self, eta: ParamVector, feats: np.ndarray) -> np.ndarray:
        _check_batch(feats)
        return open_unit(sigmoid(feats @ eta["V"][:, 0] + eta["c"][0]))

    def backward(self, eta: ParamVector, feats: np.ndarray, upstream) -> ParamVector:
        """Gradient of ``sum_i upstream_i * w_i`` with respect to ``V`` and ``c``."""
        upstream = np.asarray(upstream, dtype=DTYPE)
        if upstream.shape != (feats.shape[0],):
            raise ValueError("upstream must have one entry per example")
        w = self.forward(eta, feats)
        dz = upstream * w * (1.0 - w)
        grad = eta.zeros_like()
        grad["V"] = (feats.T @ dz)[:, None]
        grad["c"] = dz.sum()
        return grad
