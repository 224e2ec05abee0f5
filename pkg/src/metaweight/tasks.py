"""Bind a model to one dataset so the trainer can address examples by index."""
from __future__ import annotations

import numpy as np

from .classifier import LinearClassifier
from .memnet import CandidateSet, DialogTensors, MemoryNetwork, WeightMemNet
from .tensor import ParamVector


class ClassifierTask:
    def __init__(self, model: LinearClassifier, X: np.ndarray, y: np.ndarray, name: str = "primary"):
        if X.shape[0] != y.shape[0]:
            raise ValueError("images and labels differ in length")
        self.model, self.X, self.y, self.name = model, X, y, name

    def __len__(self) -> int:
        return self.y.shape[0]

    def loss_and_grad(self, theta: ParamVector, idx, scale):
        return self.model.loss_and_grad(theta, self.X[idx], self.y[idx], scale)

    def example_dots(self, theta: ParamVector, idx, v: ParamVector) -> np.ndarray:
        return self.model.example_dots(theta, self.X[idx], self.y[idx], v)

    def losses(self, theta: ParamVector, idx=None) -> np.ndarray:
        idx = slice(None) if idx is None else idx
        return self.model.forward(theta, self.X[idx], self.y[idx])[1]

    def correct(self, theta: ParamVector, idx=None) -> np.ndarray:
        idx = slice(None) if idx is None else idx
        return self.model.predict(theta, self.X[idx]) == self.y[idx]


class DialogTask:
    def __init__(self, model: MemoryNetwork, data: DialogTensors, cands: CandidateSet, head: str | None = None,
                 name: str | None = None):
        self.model, self.data, self.cands, self.head = model, data, cands, head
        self.name = name or data.task

    def __len__(self) -> int:
        return len(self.data)

    def loss_and_grad(self, theta, idx, scale):
        return self.model.loss_and_grad(theta, self.data, self.cands, idx, scale, self.head)

    def example_dots(self, theta, idx, v):
        return self.model.example_dots(theta, self.data, self.cands, idx, v, self.head)

    def losses(self, theta, idx=None) -> np.ndarray:
        return self.model.forward(theta, self.data, self.cands, idx, self.head)[2]

    def correct(self, theta, idx=None) -> np.ndarray:
        pred = self.model.predict(theta, self.data, self.cands, idx, self.head)
        answers = self.data.answers if idx is None else self.data.answers[idx]
        return pred == answers  # sentinel -1 never matches


class MemNetWeights:
    def __init__(self, model: WeightMemNet, data: DialogTensors):
        self.model, self.data = model, data

    def __len__(self) -> int:
        return len(self.data)

    def forward(self, eta, idx=None) -> np.ndarray:
        if idx is None:
            # chunked so full-set snapshots don't allocate one huge batch
            n = len(self.data)
            return np.concatenate([self.model.forward(eta, self.data, np.arange(i, min(i + 4096, n)))
                                   for i in range(0, n, 4096)]) if n else np.zeros(0)
        return self.model.forward(eta, self.data, idx)

    def backward(self, eta, idx, upstream) -> ParamVector:
        return self.model.backward(eta, self.data, idx, upstream)
