"""``metaweight`` command line: digit and dialog experiments, tables, self-test."""
from __future__ import annotations

import argparse
import dataclasses
import json
import math
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

from . import dialog as dlg
from .experiments import DialogProblem, DigitsProblem
from .meta import MetaTrainConfig, TrainingDiverged
from .report import RunReport, aggregate
from .strategies import REGIMES, STRATEGIES, run_regime
from .tensor import make_rng
from .vision import class_means, load_mnist, synth_clusters

FRACTIONS = {5: 50, 10: 100, 15: 150}
FAST_EPOCHS, FULL_EPOCHS = 200, 4000
STREAM_CORRUPT, STREAM_SUBSAMPLE, STREAM_SYNTH = 10, 11, 12
TRAIN_OVERRIDES = ("alpha", "beta", "gamma", "batch_primary", "batch_related", "unroll_depth",
                   "meta_updates_per_iter", "max_iters", "eval_every", "snapshot_every")


@dataclass
class ExperimentConfig:
    experiment: str
    regime: str = "weighted_multitask"
    strategy: str = "learned"
    seeds: list[int] = field(default_factory=lambda: [0])
    use_synthetic: bool = False
    mnist_dir: str | None = None
    dialog_dir: str | None = None
    primary_fraction: int = 5
    corruption: float = 0.75
    take_first: bool = False
    budget: str = "fast"
    epochs: int | None = None
    overrides: dict = field(default_factory=dict)
    out: str = "runs"

    def validate(self) -> None:
        if self.regime not in REGIMES:
            raise ValueError(f"unknown regime {self.regime!r}")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.experiment == "dialog" and self.primary_fraction not in FRACTIONS:
            raise ValueError(f"primary fraction must be one of {sorted(FRACTIONS)}")
        if not self.seeds:
            raise ValueError("at least one seed is required")
        unknown = set(self.overrides) - set(TRAIN_OVERRIDES)
        if unknown:
            raise ValueError(f"unknown training overrides {sorted(unknown)}")

    @property
    def effective_strategy(self) -> str:
        """Only weighted multitask consults the strategy; other regimes weight uniformly."""
        return self.strategy if self.regime == "weighted_multitask" else "one_for_all"

    def echo(self) -> dict:
        d = dataclasses.asdict(self)
        d.pop("seeds")
        d.pop("out")
        return d


def default_seed() -> int:
    return int(os.environ.get("METAWEIGHT_SEED", "0"))


# ---------------------------------------------------------------------------
# experiment wiring

def digits_config(exp: ExperimentConfig, n_train: int) -> MetaTrainConfig:
    epoch = math.ceil(n_train / 256)
    base = dict(alpha=1e-3, beta=1e-3, gamma=1e-3, adam_eps=1e-8, batch_primary=256, batch_related=256,
                unroll_depth=1, meta_updates_per_iter=1, enable_step1=False, max_iters=15_000,
                eval_every=epoch, snapshot_every=epoch)
    base.update(exp.overrides)
    return MetaTrainConfig(**base)


def digits_problem(exp: ExperimentConfig, seed: int) -> DigitsProblem:
    if exp.use_synthetic:
        rng = make_rng(seed, STREAM_SYNTH)
        means = class_means(rng)
        splits = {"train": synth_clusters(5000, rng, means=means, noise=0.5),
                  "valid": synth_clusters(1000, rng, means=means, noise=0.5, split="valid"),
                  "test": synth_clusters(1000, rng, means=means, noise=0.5, split="test")}
    else:
        if not exp.mnist_dir:
            raise FileNotFoundError("--mnist-dir is required unless --use-synthetic is given")
        splits = load_mnist(exp.mnist_dir)
    return DigitsProblem(splits, exp.corruption, make_rng(seed, STREAM_CORRUPT))


def dialog_corpora(exp: ExperimentConfig, seed: int):
    """Related training dialogs and the subsampled primary splits for one seed."""
    if exp.use_synthetic:
        related, primary = dlg.generate_synthetic(dlg.SyntheticSpec(), make_rng(seed, STREAM_SYNTH))
    else:
        if not exp.dialog_dir:
            raise FileNotFoundError("--dialog-dir is required unless --use-synthetic is given")
        loaded = dlg.load_corpora(exp.dialog_dir)
        related = loaded[("related", "train")]
        primary = {s: loaded[("primary", s)] for s in ("train", "valid", "test")}
    n = FRACTIONS[exp.primary_fraction]
    rng = make_rng(seed, STREAM_SUBSAMPLE)
    sub = {s: dlg.subsample(primary[s], min(n, len(primary[s])), rng, exp.take_first) for s in ("train", "valid")}
    sub["test"] = primary["test"]
    return related, sub


def dialog_config(exp: ExperimentConfig, n_primary_examples: int) -> MetaTrainConfig:
    """One epoch is a pass over the primary training turns."""
    epoch = math.ceil(n_primary_examples / 32)
    epochs = exp.epochs or (FULL_EPOCHS if exp.budget == "full" else FAST_EPOCHS)
    base = dict(alpha=1e-3, beta=1e-3, gamma=1e-3, adam_eps=1e-8, batch_primary=32, batch_related=32,
                unroll_depth=5, meta_updates_per_iter=10, enable_step1=True, max_iters=epochs * epoch,
                eval_every=epoch, snapshot_every=50 * epoch)
    base.update(exp.overrides)
    return MetaTrainConfig(**base)


def run_seed(exp: ExperimentConfig, seed: int) -> RunReport:
    if exp.experiment == "mnist":
        problem = digits_problem(exp, seed)
        cfg = digits_config(exp, len(problem.splits["train"]))
    else:
        related, primary = dialog_corpora(exp, seed)
        problem = DialogProblem(related, primary)
        cfg = dialog_config(exp, primary["train"].n_examples())
    t0 = time.perf_counter()
    rep = run_regime(exp.regime, problem, cfg, seed, exp.effective_strategy,
                     checkpoint_dir=Path(exp.out) / "checkpoints" / f"{_stem(exp)}_seed{seed}")
    rep.config = {"train": rep.config, "experiment": exp.echo()}
    rep.extra["phase_wallclock"] = time.perf_counter() - t0
    if exp.experiment == "dialog":
        rep.extra["vocab_size"] = len(problem.vocab)
        rep.extra["primary_dialogs"] = len(primary["train"])
    return rep


def _stem(exp: ExperimentConfig) -> str:
    parts = [exp.experiment, exp.regime, exp.effective_strategy]
    if exp.experiment == "dialog":
        parts.append(f"p{exp.primary_fraction}")
    return "_".join(parts)


def run_experiment(exp: ExperimentConfig, log=print) -> int:
    exp.validate()
    out = Path(exp.out)
    reports = []
    for seed in exp.seeds:
        try:
            rep = run_seed(exp, seed)
        except TrainingDiverged as err:
            log(f"seed {seed}: {err}", file=sys.stderr)
            return 1
        path = rep.save(out, f"{_stem(exp)}_seed{seed}")
        log(f"seed {seed}: test accuracy {rep.test_accuracy:.2f}% (best valid {rep.best_valid_accuracy:.2f}% "
            f"at iteration {rep.best_iteration}) -> {path}")
        reports.append(rep)
    if len(reports) >= 2:
        agg = aggregate(reports)
        (out / f"{_stem(exp)}_aggregate.json").write_text(
            json.dumps({"n": agg.n, "mean": agg.mean, "std": agg.std, "seeds": exp.seeds}, indent=1))
        log(f"{_stem(exp)}: {agg.mean['test_accuracy']:.2f} +/- {agg.std['test_accuracy']:.2f} "
            f"over {agg.n} seeds")
    return 0


# ---------------------------------------------------------------------------
# tables

MNIST_ROWS = [("one_for_all", "1 for All", "21.63 +/- 3.81"),
              ("random_fixed", "Random-Fixed", "20.81 +/- 4.46"),
              ("random_changing", "Random-Changing", "20.40 +/- 4.42"),
              ("learned", "Learned", "87.86 +/- 0.17"),
              ("oracle", "Oracle", "90.32 +/- 0.33")]
DIALOG_ROWS = [(("primary_only", None), "Primary", ("54.7 +/- 1.3", "59.3 +/- 0.5", "61.1 +/- 0.5")),
               (("pretrain_finetune", None), "Primary + Related Pre-Training",
                ("32.8 +/- 3.5", "42.1 +/- 4.7", "47.8 +/- 0.8")),
               (("pooled", None), "Primary + Related", ("37.1 +/- 4.1", "50.9 +/- 1.7", "58.6 +/- 0.7")),
               (("multitask", None), "Multi-Task", ("51.2 +/- 2.4", "58.2 +/- 1.2", "60.6 +/- 0.7")),
               (("weighted_multitask", "learned"), "Weighted: Learned", ("57.7 +/- 1.6", "64.6 +/- 0.8",
                                                                          "67.1 +/- 0.6")),
               (("weighted_multitask", "random_fixed"), "Weighted: Random-Fixed",
                ("50.7 +/- 2.0", "58.7 +/- 0.8", "61.2 +/- 1.0")),
               (("weighted_multitask", "random_changing"), "Weighted: Random-Changing",
                ("52.3 +/- 0.9", "58.7 +/- 1.0", "59.8 +/- 0.8"))]
GAP = "--"


def _fmt(values: list[float]) -> str:
    if not values:
        return GAP
    if len(values) == 1:
        return f"{values[0]:.2f} (n=1)"
    import numpy as np
    return f"{np.mean(values):.2f} +/- {np.std(values, ddof=1):.2f}"


def collect_reports(directory) -> list[RunReport]:
    out = []
    for path in sorted(Path(directory).glob("*.json")):
        try:
            out.append(RunReport.load(path))
        except (ValueError, TypeError, KeyError):
            continue  # aggregates and foreign files
    return out


def reproduce_tables(directory) -> tuple[str, str, int]:
    """Format both tables from saved reports; returns ``(table1, table2, n_reports)``."""
    reports = collect_reports(directory) if Path(directory).is_dir() else []
    acc: dict[tuple, list[float]] = {}
    for r in reports:
        exp = r.config.get("experiment", {}) if isinstance(r.config, dict) else {}
        if r.experiment == "mnist":
            key = ("mnist", r.strategy)
        else:
            strat = r.strategy if r.regime == "weighted_multitask" else None
            key = ("dialog", r.regime, strat, exp.get("primary_fraction", 5))
        acc.setdefault(key, []).append(r.test_accuracy)
    lines = ["Digits: test accuracy (%)", f"{'method':<18}{'measured':>22}{'reference':>20}"]
    for kind, label, ref in MNIST_ROWS:
        lines.append(f"{label:<18}{_fmt(acc.get(('mnist', kind), [])):>22}{ref:>20}")
    t1 = "\n".join(lines)
    lines = ["Dialog: per-turn retrieval accuracy (%), measured | reference",
             f"{'method':<32}" + "".join(f"{f'{n} dialogs':>36}" for n in FRACTIONS.values())]
    for (regime, strat), label, refs in DIALOG_ROWS:
        cells = [f"{_fmt(acc.get(('dialog', regime, strat, frac), []))} | {ref}"
                 for frac, ref in zip(FRACTIONS, refs)]
        lines.append(f"{label:<32}" + "".join(f"{c:>36}" for c in cells))
    return t1, "\n".join(lines), len(reports)


# ---------------------------------------------------------------------------
# argument parsing

def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--strategy", choices=STRATEGIES, default="learned")
    p.add_argument("--seeds", type=int, default=1, help="number of consecutive seeds")
    p.add_argument("--seed", type=int, default=None, help="first seed (default: $METAWEIGHT_SEED or 0)")
    p.add_argument("--use-synthetic", action="store_true", help="generate data instead of reading files")
    p.add_argument("--out", default="runs")
    for name in TRAIN_OVERRIDES:
        kind = float if name in ("alpha", "beta", "gamma") else int
        p.add_argument(f"--{name.replace('_', '-')}", type=kind, default=None, dest=name)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="metaweight", description=__doc__)
    parser.add_argument("--config", help="JSON file whose keys supply defaults for any flag")
    sub = parser.add_subparsers(dest="command", required=True)

    m = sub.add_parser("mnist", help="corrupted-label digit classification")
    _add_common(m)
    m.add_argument("--mnist-dir")
    m.add_argument("--corruption", type=float, default=0.75, help="fraction of related labels made wrong")

    d = sub.add_parser("dialog", help="related/primary dialog retrieval")
    _add_common(d)
    d.add_argument("--regime", choices=REGIMES, default="weighted_multitask")
    d.add_argument("--fraction", type=int, choices=sorted(FRACTIONS), default=5,
                   help="primary training/validation dialogs as a percent of 1000")
    d.add_argument("--dialog-dir")
    d.add_argument("--take-first", action="store_true", help="subsample the first dialogs instead of a random draw")
    budget = d.add_mutually_exclusive_group()
    budget.add_argument("--fast", dest="budget", action="store_const", const="fast")
    budget.add_argument("--full", dest="budget", action="store_const", const="full")
    d.add_argument("--epochs", type=int, default=None, help="explicit epoch budget (overrides --fast/--full)")
    d.set_defaults(budget="fast")

    t = sub.add_parser("tables", help="format result tables from saved reports")
    t.add_argument("--runs", default="runs")

    s = sub.add_parser("selftest", help="finite-difference and oracle checks")
    s.add_argument("--trials", type=int, default=10)
    return parser


def _apply_config_file(parser: argparse.ArgumentParser, argv: list[str]) -> None:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    values = json.loads(Path(known.config).read_text(encoding="utf-8"))
    if not isinstance(values, dict):
        parser.error("config file must hold a JSON object")
    values = {k.replace("-", "_"): v for k, v in values.items()}
    for action in parser._subparsers._group_actions:
        for sp in action.choices.values():
            dests = {a.dest for a in sp._actions}
            unknown = set(values) - dests - {"config", "command"}
            sp.set_defaults(**{k: v for k, v in values.items() if k in dests})
    # validate enum strings coming from the file like the flags would
    for key, allowed in (("strategy", STRATEGIES), ("regime", REGIMES)):
        if key in values and values[key] not in allowed:
            parser.error(f"argument --{key}: invalid choice: {values[key]!r} (choose from {', '.join(allowed)})")
    del unknown


def experiment_from_args(args) -> ExperimentConfig:
    first = default_seed() if args.seed is None else args.seed
    overrides = {k: getattr(args, k) for k in TRAIN_OVERRIDES if getattr(args, k) is not None}
    common = dict(strategy=args.strategy, seeds=list(range(first, first + args.seeds)),
                  use_synthetic=args.use_synthetic, overrides=overrides, out=args.out)
    if args.command == "mnist":
        return ExperimentConfig("mnist", mnist_dir=args.mnist_dir, corruption=args.corruption, **common)
    return ExperimentConfig("dialog", regime=args.regime, dialog_dir=args.dialog_dir,
                            primary_fraction=args.fraction, take_first=args.take_first, budget=args.budget,
                            epochs=args.epochs, **common)


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    parser = build_parser()
    _apply_config_file(parser, argv)
    args = parser.parse_args(argv)
    if args.command == "tables":
        t1, t2, n = reproduce_tables(args.runs)
        if n == 0:
            print(f"warning: no run reports found in {args.runs}", file=sys.stderr)
        print(t1 + "\n\n" + t2)
        return 0
    if args.command == "selftest":
        from .selftest import run_selftest
        return run_selftest(args.trials)
    try:
        exp = experiment_from_args(args)
        return run_experiment(exp)
    except (ValueError, FileNotFoundError) as err:
        print(f"metaweight: error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
