"""Concrete problems: corrupted-label digits and related/primary dialog retrieval."""
from __future__ import annotations

from functools import cached_property
from typing import Mapping

import numpy as np

from . import dialog as dlg
from .classifier import LinearClassifier, WeightPerceptron, weight_features
from .memnet import CandidateSet, DialogTensors, MemoryNetwork, WeightMemNet
from .strategies import TaskBundle
from .tasks import ClassifierTask, DialogTask, MemNetWeights
from .tensor import ParamVector
from .vision import CorruptedDataset, ImageDataset, corrupt


class PerceptronWeights:
    """Weight source that builds perceptron features per batch from the corrupted set."""

    def __init__(self, model: WeightPerceptron, related: CorruptedDataset, chunk: int = 8192):
        self.model, self.related, self.chunk = model, related, chunk

    def __len__(self) -> int:
        return len(self.related)

    def features(self, idx) -> np.ndarray:
        r = self.related
        return weight_features(r.base.images[idx], r.shown_labels[idx], r.indicator[idx])

    def forward(self, eta: ParamVector, idx=None) -> np.ndarray:
        if idx is None:
            n = len(self.related)
            return np.concatenate([self.model.forward(eta, self.features(slice(i, min(i + self.chunk, n))))
                                   for i in range(0, n, self.chunk)])
        return self.model.forward(eta, self.features(idx))

    def backward(self, eta: ParamVector, idx, upstream) -> ParamVector:
        return self.model.backward(eta, self.features(idx), upstream)


class DigitsProblem:
    """Clean digits as the primary task; the same images with corrupted labels as the related task."""

    experiment = "mnist"

    def __init__(self, splits: Mapping[str, ImageDataset], fraction: float, rng: np.random.Generator):
        self.splits = splits
        self.related = corrupt(splits["train"], fraction, rng)
        self.model = LinearClassifier(splits["train"].images.shape[1])
        self.related_correct = self.related.correct

    def bundle(self, layout: str) -> TaskBundle:
        # labels share one space, so every layout is the same single classifier
        tr, va, te = self.splits["train"], self.splits["valid"], self.splits["test"]
        m = self.model
        return TaskBundle(
            init_theta=m.init_params,
            primary=ClassifierTask(m, tr.images, tr.labels, "primary"),
            related=ClassifierTask(m, tr.images, self.related.shown_labels, "related"),
            valid=ClassifierTask(m, va.images, va.labels, "valid"),
            test=ClassifierTask(m, te.images, te.labels, "test"),
        )

    def weight_source(self):
        wp = WeightPerceptron(self.splits["train"].images.shape[1] + 12)
        return PerceptronWeights(wp, self.related), wp.init_params


class DialogProblem:
    """Related-task dialogs plus subsampled primary dialogs, encoded once per candidate layout.

    The vocabulary covers the training corpora (related train and primary
    train); validation and test tokens outside it map to the unknown id.
    """

    experiment = "dialog"
    related_correct = None

    def __init__(self, related: dlg.DialogCorpus, primary: Mapping[str, dlg.DialogCorpus],
                 max_memory: int = dlg.DEFAULT_MAX_MEMORY, backend: str | None = None):
        self.related_corpus, self.primary_corpora = related, primary
        self.max_memory, self.backend = max_memory, backend
        self.vocab = dlg.build_vocabulary([related, primary["train"]])
        self._cache: dict[tuple[str, str], DialogTensors] = {}

    @cached_property
    def candidates(self) -> dict[str, CandidateSet]:
        return {"primary": dlg.build_candidates([self.primary_corpora["train"]], self.vocab),
                "related": dlg.build_candidates([self.related_corpus], self.vocab),
                "pooled": dlg.build_candidates([self.primary_corpora["train"], self.related_corpus], self.vocab)}

    def _encode(self, corpus: dlg.DialogCorpus, cands: CandidateSet) -> DialogTensors:
        return dlg.extract_examples(corpus, self.vocab, cands, self.max_memory)

    def tensors(self, which: str, cand_key: str) -> DialogTensors:
        key = (which, cand_key)
        if key not in self._cache:
            corpus = self.related_corpus if which == "related" else self.primary_corpora[which]
            self._cache[key] = self._encode(corpus, self.candidates[cand_key])
        return self._cache[key]

    def bundle(self, layout: str) -> TaskBundle:
        V = len(self.vocab)
        if layout == "multihead":
            model = MemoryNetwork(V, heads=("primary", "related"), backend=self.backend)
            pc, rc, ph, rh = "primary", "related", "primary", "related"
        elif layout in ("primary", "pooled"):
            model = MemoryNetwork(V, backend=self.backend)
            pc = rc = layout
            ph = rh = None
        else:
            raise ValueError(f"unknown layout {layout!r}")
        cands = self.candidates
        related = None if layout == "primary" else \
            DialogTask(model, self.tensors("related", rc), cands[rc], rh, "related")
        return TaskBundle(
            init_theta=model.init_params,
            primary=DialogTask(model, self.tensors("train", pc), cands[pc], ph, "primary"),
            related=related,
            valid=DialogTask(model, self.tensors("valid", pc), cands[pc], ph, "valid"),
            test=DialogTask(model, self.tensors("test", pc), cands[pc], ph, "test"),
        )

    def weight_source(self):
        wm = WeightMemNet(len(self.vocab), backend=self.backend)
        return MemNetWeights(wm, self.tensors("related", "related")), wm.init_params
