"""Metrics, weight histograms, run reports and multi-seed aggregation."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

SCHEMA_VERSION = 1
N_BINS = 20
BIN_EDGES = np.linspace(0.0, 1.0, N_BINS + 1)
CSV_HEADER = ("iteration", "bin_lo", "bin_hi", "count_total", "count_correct", "count_incorrect")


def _pct(hits: np.ndarray) -> float:
    if hits.size == 0:
        raise ValueError("cannot score an empty set")
    return 100.0 * float(np.count_nonzero(hits)) / hits.size


def retrieval_accuracy(pred: np.ndarray, answers: np.ndarray) -> float:
    """Percent of turns whose top candidate is the reference; sentinel answers always miss."""
    pred, answers = np.asarray(pred), np.asarray(answers)
    return _pct((pred == answers) & (answers >= 0))


def classification_accuracy(pred: np.ndarray, labels: np.ndarray) -> float:
    return _pct(np.asarray(pred) == np.asarray(labels))


def task_accuracy(task, theta) -> float:
    """Accuracy of a bound task (see :mod:`metaweight.tasks`) at ``theta``."""
    return _pct(np.asarray(task.correct(theta)))


@dataclass
class WeightHistogram:
    iteration: int
    bin_edges: list[float]
    counts_total: list[int]
    counts_correct: list[int] | None = None
    counts_incorrect: list[int] | None = None
    mean_all: float = float("nan")
    mean_correct: float | None = None
    mean_incorrect: float | None = None

    def csv_rows(self):
        for b in range(len(self.counts_total)):
            yield (self.iteration, self.bin_edges[b], self.bin_edges[b + 1], self.counts_total[b],
                   "" if self.counts_correct is None else self.counts_correct[b],
                   "" if self.counts_incorrect is None else self.counts_incorrect[b])


def _bin(w: np.ndarray) -> list[int]:
    # right-open bins, with 1.0 falling into the last one
    idx = np.minimum((w * N_BINS).astype(np.int64), N_BINS - 1)
    return np.bincount(idx, minlength=N_BINS).tolist()


def snapshot_weights(weights: np.ndarray, iteration: int, correct: np.ndarray | None = None) -> WeightHistogram:
    """Histogram of a full pass of related-example weights.

    ``correct`` is a boolean mask of examples whose label agrees with the
    primary task, when that ground truth exists.
    """
    w = np.asarray(weights, dtype=float)
    h = WeightHistogram(iteration, BIN_EDGES.tolist(), _bin(w), mean_all=float(w.mean()) if w.size else float("nan"))
    if correct is not None:
        correct = np.asarray(correct, dtype=bool)
        if correct.shape != w.shape:
            raise ValueError("correctness mask must match the weights")
        h.counts_correct = _bin(w[correct])
        h.counts_incorrect = _bin(w[~correct])
        h.mean_correct = float(w[correct].mean()) if correct.any() else None
        h.mean_incorrect = float(w[~correct].mean()) if (~correct).any() else None
    return h


@dataclass
class RunReport:
    experiment: str
    regime: str
    strategy: str
    seed: int
    config: dict
    evals: list[dict]
    best_iteration: int
    best_valid_accuracy: float
    test_accuracy: float
    weight_snapshots: list[WeightHistogram] = field(default_factory=list)
    wallclock: float = 0.0
    extra: dict = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunReport":
        d = dict(d)
        if d.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported report schema {d.get('schema_version')!r}")
        d["weight_snapshots"] = [WeightHistogram(**h) for h in d.get("weight_snapshots", [])]
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True, allow_nan=True)

    @classmethod
    def from_json(cls, text: str) -> "RunReport":
        return cls.from_dict(json.loads(text))

    def content(self) -> dict:
        """Everything except timing, for reproducibility comparisons."""
        d = self.to_dict()
        d.pop("wallclock")
        d.get("extra", {}).pop("phase_wallclock", None)
        return d

    def final_snapshot(self) -> WeightHistogram | None:
        return self.weight_snapshots[-1] if self.weight_snapshots else None

    def save(self, directory: str | Path, stem: str | None = None) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        stem = stem or f"{self.experiment}_{self.regime}_{self.strategy}_seed{self.seed}"
        path = directory / f"{stem}.json"
        path.write_text(self.to_json(), encoding="utf-8")
        if self.weight_snapshots:
            write_histogram_csv(directory / f"{stem}_weights.csv", self.weight_snapshots)
        return path

    @classmethod
    def load(cls, path: str | Path) -> "RunReport":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def write_histogram_csv(path: str | Path, snapshots: Sequence[WeightHistogram]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh)
        out.writerow(CSV_HEADER)
        for h in snapshots:
            out.writerows(h.csv_rows())


def _comparable(cfg: dict) -> dict:
    return {k: v for k, v in cfg.items() if k not in ("seed", "out", "seeds")}


@dataclass
class Aggregate:
    n: int
    mean: dict[str, float]
    std: dict[str, float]


def aggregate(reports: Sequence[RunReport]) -> Aggregate:
    """Mean and sample standard deviation over seeds of the scalar metrics."""
    if len(reports) < 2:
        raise ValueError("aggregation needs at least two reports")
    ref = reports[0]
    for r in reports[1:]:
        if (r.experiment, r.regime, r.strategy) != (ref.experiment, ref.regime, ref.strategy) or \
                _comparable(r.config) != _comparable(ref.config):
            raise ValueError("reports come from different configurations")
    metrics = {"test_accuracy": [r.test_accuracy for r in reports],
               "best_valid_accuracy": [r.best_valid_accuracy for r in reports]}
    for key in ("mean_correct", "mean_incorrect"):
        vals = [getattr(r.final_snapshot(), key, None) for r in reports]
        if all(v is not None for v in vals):
            metrics[f"final_{key}"] = vals
    mean = {k: float(np.mean(v)) for k, v in metrics.items()}
    std = {k: float(np.std(v, ddof=1)) for k, v in metrics.items()}
    return Aggregate(len(reports), mean, std)
