"""Time the memory-network body kernels: compiled extension vs numpy fallback.

    python benchmarks/bench_memnet.py [--batch 32] [--repeats 20]

Runs forward, backward and per-example dot kernels on a synthetic related
corpus and prints median wall time per call for each backend, plus the
largest output difference between them.
"""
from __future__ import annotations

import argparse
import statistics
import timeit

import numpy as np

from metaweight import _backend
from metaweight import dialog as dlg
from metaweight.memnet import EMBED_DIM, HOPS
from metaweight.tensor import make_rng


def setup(n_dialogs: int, batch: int, seed: int = 0):
    spec = dlg.SyntheticSpec(n_related=n_dialogs, n_primary_train=1, n_primary_valid=1, n_primary_test=1)
    related, _ = dlg.generate_synthetic(spec, make_rng(seed, 12))
    vocab = dlg.build_vocabulary([related])
    data = dlg.extract_examples(related, vocab, dlg.build_candidates([related], vocab))
    rng = make_rng(seed, 50)
    A = rng.uniform(-0.1, 0.1, (len(vocab), EMBED_DIM))
    R = rng.uniform(-0.1, 0.1, (EMBED_DIM, EMBED_DIM))
    idx = np.sort(rng.choice(len(data), size=batch, replace=False)).astype(np.int64)
    dU = rng.normal(size=(batch, EMBED_DIM))
    vA, vR = rng.normal(size=A.shape), rng.normal(size=R.shape)
    return data, A, R, idx, dU, vA, vR


def bench(kernels, data, A, R, idx, dU, vA, vR, repeats: int):
    args = data.body_args(idx)
    out = {}

    def fwd():
        return kernels.body_forward(A, R, HOPS, *args)

    def bwd():
        gA, gR = np.zeros_like(A), np.zeros_like(R)
        kernels.body_backward(A, R, HOPS, *args, dU, gA, gR)
        return gA, gR

    def dots():
        return kernels.body_dots(A, R, HOPS, *args, dU, vA, vR)

    results = {"forward": fwd()[0], "backward": np.concatenate([g.ravel() for g in bwd()]), "dots": dots()}
    for name, fn in (("forward", fwd), ("backward", bwd), ("dots", dots)):
        times = timeit.repeat(fn, number=1, repeat=repeats)
        out[name] = statistics.median(times)
    return out, results


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--dialogs", type=int, default=200)
    ap.add_argument("--batch", type=int, default=32)
    ap.add_argument("--repeats", type=int, default=20)
    args = ap.parse_args(argv)
    inputs = setup(args.dialogs, args.batch)
    backends = ["python"]
    try:
        _backend.get_kernels("cython")
        backends.append("cython")
    except ImportError:
        print("compiled extension not built; timing the numpy fallback only")
    timing, outputs = {}, {}
    for name in backends:
        timing[name], outputs[name] = bench(_backend.get_kernels(name), *inputs, args.repeats)
    print(f"batch {args.batch}, hops {HOPS}, embed {EMBED_DIM}, median of {args.repeats} calls (ms)")
    print(f"{'kernel':<10}" + "".join(f"{b:>12}" for b in backends) + ("     speedup" if len(backends) > 1 else ""))
    for kernel in ("forward", "backward", "dots"):
        row = f"{kernel:<10}" + "".join(f"{1e3 * timing[b][kernel]:>12.3f}" for b in backends)
        if len(backends) > 1:
            row += f"{timing['python'][kernel] / timing['cython'][kernel]:>11.1f}x"
        print(row)
    if len(backends) > 1:
        diff = max(float(np.max(np.abs(outputs["python"][k] - outputs["cython"][k]))) for k in outputs["python"])
        print(f"max |python - cython| over all outputs: {diff:.2e}")


if __name__ == "__main__":
    main()
