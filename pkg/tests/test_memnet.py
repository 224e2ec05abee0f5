import numpy as np
import pytest
import scipy.sparse as sp

from metaweight import _backend
from metaweight.memnet import (CandidateSet, DialogExample, MemoryNetwork, Vocabulary, WeightMemNet, encode_bow,
                               encode_examples, multihead_forward)
from metaweight.tensor import finite_difference_grad, make_rng, relative_error

TRIALS = 100
WORDS = [f"w{i}" for i in range(9)]


def random_examples(rng, n, n_cands, task="primary"):
    out = []
    for _ in range(n):
        mem = [[WORDS[j] for j in rng.integers(0, len(WORDS), size=rng.integers(1, 4))]
               for _ in range(rng.integers(0, 4))]
        query = [WORDS[j] for j in rng.integers(0, len(WORDS), size=rng.integers(1, 3))]
        out.append(DialogExample(mem, query, int(rng.integers(0, n_cands)), "w0 w1", task))
    return out


def random_setup(seed, heads=None, backend=None):
    rng = make_rng(seed, 200)
    vocab = Vocabulary(WORDS)
    cands = CandidateSet.build([" ".join(rng.choice(WORDS, size=2)) + f" w{k}" for k in range(6)], vocab)
    data = encode_examples(random_examples(rng, int(rng.integers(1, 4)), len(cands)), vocab)
    model = MemoryNetwork(len(vocab), embed=int(rng.integers(2, 5)), hops=int(rng.integers(1, 4)), heads=heads,
                          backend=backend)
    theta = model.init_params(rng)
    theta.values[:] = rng.normal(scale=0.5, size=theta.size)
    scale = rng.uniform(0.1, 1.0, size=len(data))
    return rng, vocab, cands, data, model, theta, scale


@pytest.mark.parametrize("backend", ["python", "cython"])
def test_single_head_gradient_fd(backend):
    if backend == "cython" and _backend.BACKEND != "cython":
        pytest.skip("compiled kernels not built")
    for trial in range(TRIALS):
        _, _, cands, data, model, theta, s = random_setup(trial, backend=backend)
        batch = np.arange(len(data))
        _, g = model.loss_and_grad(theta, data, cands, batch, s)
        fd = finite_difference_grad(lambda t: float(s @ model.forward(t, data, cands, batch)[2]), theta)
        assert relative_error(g.values, fd.values) <= 1e-5, trial


def test_two_head_gradient_fd_and_head_isolation():
    for trial in range(TRIALS):
        _, _, cands, data, model, theta, s = random_setup(trial, heads=("primary", "related"))
        head = "related" if trial % 2 else "primary"
        other = "primary" if trial % 2 else "related"
        _, g = model.loss_and_grad(theta, data, cands, None, s, head)
        fd = finite_difference_grad(lambda t: float(s @ model.forward(t, data, cands, None, head)[2]), theta)
        assert relative_error(g.values, fd.values) <= 1e-5, trial
        assert not g[f"C_{other}"].any()


def test_weight_memnet_gradient_fd():
    for trial in range(TRIALS):
        rng, vocab, _, data, _, _, _ = random_setup(trial)
        wm = WeightMemNet(len(vocab), embed=int(rng.integers(2, 5)), hops=int(rng.integers(1, 4)))
        eta = wm.init_params(rng)
        eta.values[:] = rng.normal(scale=0.5, size=eta.size)
        up = rng.normal(size=len(data))
        g = wm.backward(eta, data, None, up)
        fd = finite_difference_grad(lambda e: float(up @ wm.forward(e, data)), eta)
        assert relative_error(g.values, fd.values) <= 1e-5, trial


def test_example_dots_match_per_example_gradients():
    _, _, cands, data, model, theta, _ = random_setup(3)
    v = theta.like(make_rng(9).normal(size=theta.size))
    batch = np.arange(len(data))
    dots = model.example_dots(theta, data, cands, batch, v)
    for i in range(len(data)):
        gi = model.backward(theta, data, cands, batch, np.eye(len(data))[i])
        assert dots[i] == pytest.approx(gi.dot(v), rel=1e-10, abs=1e-12)


@pytest.mark.skipif(_backend.BACKEND != "cython", reason="compiled kernels not built")
def test_backends_agree():
    for seed in range(20):
        _, _, cands, data, _, theta, s = random_setup(seed)
        mp = MemoryNetwork(data.vocab_size, embed=theta["A"].shape[1], hops=2, backend="python")
        mc = MemoryNetwork(data.vocab_size, embed=theta["A"].shape[1], hops=2, backend="cython")
        Up, Pp = mp.state(theta, data)
        Uc, Pc = mc.state(theta, data)
        assert np.allclose(Up, Uc, atol=1e-13) and np.allclose(Pp, Pc, atol=1e-13)
        gp = mp.backward(theta, data, cands, None, s)
        gc = mc.backward(theta, data, cands, None, s)
        assert np.allclose(gp.values, gc.values, atol=1e-12)
        v = theta.like(make_rng(seed).normal(size=theta.size))
        assert np.allclose(mp.example_dots(theta, data, cands, None, v), mc.example_dots(theta, data, cands, None, v),
                           atol=1e-12)


def test_empty_memory_reads_out_zero():
    vocab = Vocabulary(["a", "b"])
    data = encode_examples([DialogExample([], ["a"], 0, "a", "primary")], vocab)
    model = MemoryNetwork(len(vocab), embed=3, hops=2)
    theta = model.init_params(make_rng(0))
    U, P = model.state(theta, data)
    A, R = theta["A"], theta["R"]
    assert np.allclose(U[0], R @ R @ A[vocab.lookup("a")])
    assert P.shape == (1, 2, 0)


def test_ties_break_to_lowest_candidate_and_sentinel():
    vocab = Vocabulary(["a", "b"])
    cands = CandidateSet.build(["a", "b"], vocab)
    data = encode_examples([DialogExample([["a"]], ["b"], 1, "b", "primary"),
                            DialogExample([["a"]], ["b"], -1, "zz", "primary")], vocab)
    model = MemoryNetwork(len(vocab), embed=3)
    theta = model.init_params(make_rng(0))
    theta["C"] = 0.0
    assert list(model.predict(theta, data, cands)) == [0, 0]
    _, _, losses = model.forward(theta, data, cands)
    assert np.isfinite(losses[0]) and np.isnan(losses[1])
    with pytest.raises(ValueError):
        model.loss_and_grad(theta, data, cands, [1], np.ones(1))


def test_multihead_routes_by_task_tag():
    vocab = Vocabulary(["a", "b"])
    pc = CandidateSet.build(["a"], vocab)
    rc = CandidateSet.build(["a", "b"], vocab)
    model = MemoryNetwork(len(vocab), embed=3, heads=("primary", "related"))
    theta = model.init_params(make_rng(0))
    ex = [DialogExample([["a"]], ["b"], 0, "a", "primary")]
    assert multihead_forward(model, theta, encode_examples(ex, vocab, "primary"), pc, rc)[1].shape == (1, 1)
    assert multihead_forward(model, theta, encode_examples(ex, vocab, "related"), pc, rc)[1].shape == (1, 2)
    with pytest.raises(ValueError):
        multihead_forward(model, theta, encode_examples(ex, vocab, "other"), pc, rc)
    with pytest.raises(KeyError):
        model.c_name("nope")


def test_bag_of_words_counts_and_unknown():
    vocab = Vocabulary(["a", "b"])
    row = encode_bow(["a", "a", "zzz"], vocab)
    assert isinstance(row, sp.csr_matrix)
    assert row[0, vocab.lookup("a")] == 2 and row[0, 1] == 1  # id 1 is the unknown token
    with pytest.raises(ValueError):
        CandidateSet.build([], vocab)
