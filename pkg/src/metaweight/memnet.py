"""End-to-end memory networks for retrieval dialog.

Sentences are bag-of-words rows in a shared sentence table; an example
attends over a list of sentence ids (its memory) with its query sentence.
The attention body runs in :mod:`metaweight._backend` kernels (compiled when
available); candidate scoring and the loss are plain numpy.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from . import _backend
from .tensor import DTYPE, ParamVector, open_unit, sigmoid, softmax_cross_entropy_rows

PAD, UNK = "<pad>", "<unk>"
SPEAKER_TOKENS = {"user": "$user", "bot": "$bot", "kb": "$kb", "profile": "$profile"}
EMBED_DIM = 20
HOPS = 3
NO_ANSWER = -1


def tokenize(text: str) -> list[str]:
    return text.lower().split()


def time_token(k: int) -> str:
    return f"#{k}"


class Vocabulary:
    """Dense token ids; id 0 is padding and id 1 the unknown token."""

    def __init__(self, tokens: Iterable[str] = ()):
        self.tokens: list[str] = [PAD, UNK]
        self.index: dict[str, int] = {PAD: 0, UNK: 1}
        for tok in tokens:
            self.add(tok)

    def add(self, tok: str) -> int:
        if tok not in self.index:
            self.index[tok] = len(self.tokens)
            self.tokens.append(tok)
        return self.index[tok]

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, tok: str) -> bool:
        return tok in self.index

    def lookup(self, tok: str) -> int:
        return self.index.get(tok, 1)

    @classmethod
    def build(cls, sentences: Iterable[Sequence[str]], max_time: int = 0) -> "Vocabulary":
        """Speaker and time markers first, then corpus tokens in sorted order."""
        words = set()
        for sent in sentences:
            words.update(sent)
        markers = list(SPEAKER_TOKENS.values()) + [time_token(k) for k in range(1, max_time + 1)]
        words.difference_update(markers)
        words.difference_update((PAD, UNK))
        return cls(markers + sorted(words))


def encode_bow(sentence: Sequence[str], vocab: Vocabulary) -> sp.csr_matrix:
    """Token counts as a ``1 x |V|`` sparse row; unknown tokens count toward UNK."""
    ids, counts = np.unique(np.array([vocab.lookup(t) for t in sentence], dtype=np.int64),
                            return_counts=True)
    return sp.csr_matrix((counts.astype(DTYPE), ids, np.array([0, len(ids)])), shape=(1, len(vocab)))


class SentenceTable:
    """Append-only CSR store of bag-of-words sentences."""

    def __init__(self, vocab: Vocabulary):
        self.vocab = vocab
        self._indptr = [0]
        self._indices: list[int] = []
        self._counts: list[float] = []

    def add(self, tokens: Sequence[str]) -> int:
        ids, counts = np.unique(np.array([self.vocab.lookup(t) for t in tokens], dtype=np.int64),
                                return_counts=True)
        self._indices.extend(ids.tolist())
        self._counts.extend(counts.astype(float).tolist())
        self._indptr.append(len(self._indices))
        return len(self._indptr) - 2

    def arrays(self):
        indptr = np.array(self._indptr, dtype=np.int64)
        # keep one dummy entry so kernels never see zero-length buffers
        indices = np.array(self._indices or [0], dtype=np.int64)
        counts = np.array(self._counts or [0.0], dtype=DTYPE)
        return indptr, indices, counts


@dataclass
class CandidateSet:
    """Ordered unique system responses and their bag-of-words rows."""

    utterances: list[str]
    csr: sp.csr_matrix
    index: dict[str, int] = field(repr=False)

    @classmethod
    def build(cls, utterances: Iterable[str], vocab: Vocabulary) -> "CandidateSet":
        uniq = sorted({" ".join(tokenize(u)) for u in utterances})
        if not uniq:
            raise ValueError("candidate set is empty")
        rows = [encode_bow(tokenize(u), vocab) for u in uniq]
        return cls(uniq, sp.vstack(rows, format="csr"), {u: i for i, u in enumerate(uniq)})

    def __len__(self) -> int:
        return len(self.utterances)

    def id_of(self, utterance: str) -> int:
        return self.index.get(" ".join(tokenize(utterance)), NO_ANSWER)


@dataclass
class DialogExample:
    """One turn: memory sentences, the query, and the answer candidate id."""

    memory: list[list[str]]
    query: list[str]
    answer: int
    answer_text: str
    task_tag: str


@dataclass
class DialogTensors:
    """Encoded examples of one task and split, ready for the kernels.

    ``mem_*`` index the model's memory; ``wmem_*`` index the weight net's
    memory, which additionally ends with the answer sentence.
    """

    task: str
    vocab_size: int
    indptr: np.ndarray
    indices: np.ndarray
    counts: np.ndarray
    mem_ptr: np.ndarray
    mem_ids: np.ndarray
    wmem_ptr: np.ndarray
    wmem_ids: np.ndarray
    query_ids: np.ndarray
    answers: np.ndarray
    sentences: list[list[str]] = field(default_factory=list, repr=False)
    answer_texts: list[str] = field(default_factory=list, repr=False)
    dialog_of: np.ndarray | None = field(default=None, repr=False)

    def __len__(self) -> int:
        return self.answers.shape[0]

    def table_csr(self) -> sp.csr_matrix:
        return sp.csr_matrix((self.counts[:self.indptr[-1]], self.indices[:self.indptr[-1]], self.indptr),
                             shape=(len(self.indptr) - 1, self.vocab_size))

    def example(self, i: int) -> DialogExample:
        lo, hi = self.mem_ptr[i], self.mem_ptr[i + 1]
        return DialogExample(
            memory=[self.sentences[s] for s in self.mem_ids[lo:hi]],
            query=self.sentences[self.query_ids[i]],
            answer=int(self.answers[i]),
            answer_text=self.answer_texts[i] if self.answer_texts else "",
            task_tag=self.task,
        )

    def body_args(self, batch: np.ndarray, weight_view: bool = False):
        if weight_view:
            return (self.indptr, self.indices, self.counts, self.wmem_ptr, self.wmem_ids, self.query_ids, batch)
        return (self.indptr, self.indices, self.counts, self.mem_ptr, self.mem_ids, self.query_ids, batch)


def encode_examples(examples: Sequence[DialogExample], vocab: Vocabulary, task: str | None = None) -> DialogTensors:
    """Encode free-standing examples (each sentence stored once per occurrence)."""
    table = SentenceTable(vocab)
    sentences: list[list[str]] = []

    def add(tokens):
        sentences.append(list(tokens))
        return table.add(tokens)

    mem_ptr, mem_ids, wmem_ptr, wmem_ids, query_ids, answers, texts = [0], [], [0], [], [], [], []
    for ex in examples:
        ids = [add(s) for s in ex.memory]
        mem_ids.extend(ids)
        mem_ptr.append(len(mem_ids))
        ans_tokens = tokenize(ex.answer_text) + [SPEAKER_TOKENS["bot"], time_token(len(ids) + 1)]
        wmem_ids.extend(ids + [add(ans_tokens)])
        wmem_ptr.append(len(wmem_ids))
        query_ids.append(add(ex.query))
        answers.append(ex.answer)
        texts.append(ex.answer_text)
    indptr, indices, counts = table.arrays()
    return DialogTensors(
        task=task or (examples[0].task_tag if examples else "primary"),
        vocab_size=len(vocab),
        indptr=indptr, indices=indices, counts=counts,
        mem_ptr=np.array(mem_ptr, dtype=np.int64), mem_ids=np.array(mem_ids or [0], dtype=np.int64),
        wmem_ptr=np.array(wmem_ptr, dtype=np.int64), wmem_ids=np.array(wmem_ids or [0], dtype=np.int64),
        query_ids=np.array(query_ids, dtype=np.int64), answers=np.array(answers, dtype=np.int64),
        sentences=sentences, answer_texts=texts,
    )


def _as_batch(batch, n: int) -> np.ndarray:
    if batch is None:
        return np.arange(n, dtype=np.int64)
    return np.ascontiguousarray(batch, dtype=np.int64)


def _init_uniform(p: ParamVector, rng: np.random.Generator, scale: float = 0.1) -> ParamVector:
    for name in p.names:
        seg = p[name]
        seg[...] = rng.uniform(-scale, scale, size=seg.shape)
    return p


class MemoryNetwork:
    """Retrieval memory network with one or more candidate heads.

    ``heads=None`` gives the single-head model with segments ``A, R, C``;
    ``heads=("primary", "related")`` shares ``A, R`` and keeps one candidate
    embedding ``C_<head>`` per head.
    """

    def __init__(self, vocab_size: int, embed: int = EMBED_DIM, hops: int = HOPS,
                 heads: Sequence[str] | None = None, backend: str | None = None):
        self.vocab_size = vocab_size
        self.embed = embed
        self.hops = hops
        self.heads = tuple(heads) if heads else None
        c_segments = [(self.c_name(h), (vocab_size, embed)) for h in self.heads] if self.heads else \
            [("C", (vocab_size, embed))]
        self.layout = [("A", (vocab_size, embed)), ("R", (embed, embed))] + c_segments
        self.kernels = _backend.get_kernels(backend)

    def c_name(self, head: str | None) -> str:
        if self.heads is None:
            return "C"
        if head not in self.heads:
            raise KeyError(f"unknown head {head!r}; model has {self.heads}")
        return f"C_{head}"

    def init_params(self, rng: np.random.Generator) -> ParamVector:
        return _init_uniform(ParamVector(self.layout), rng)

    def state(self, theta: ParamVector, data: DialogTensors, batch=None):
        """Final internal states ``(B, d)`` and attention ``(B, hops, M)``."""
        batch = _as_batch(batch, len(data))
        return self.kernels.body_forward(theta["A"], theta["R"], self.hops, *data.body_args(batch))

    def scores(self, theta: ParamVector, data: DialogTensors, cands: CandidateSet, batch=None, head=None):
        if len(cands) == 0:
            raise ValueError("candidate set is empty")
        U, _ = self.state(theta, data, batch)
        return U @ (cands.csr @ theta[self.c_name(head)]).T

    def forward(self, theta, data: DialogTensors, cands: CandidateSet, batch=None, head=None):
        """Return ``(states, scores, per_example_losses)``; unanswerable turns get NaN loss."""
        batch = _as_batch(batch, len(data))
        U, _ = self.state(theta, data, batch)
        S = U @ (cands.csr @ theta[self.c_name(head)]).T
        answers = data.answers[batch]
        losses = np.full(len(batch), np.nan)
        ok = answers >= 0
        if ok.any():
            losses[ok], _ = softmax_cross_entropy_rows(S[ok], answers[ok])
        return U, S, losses

    def _head_terms(self, theta, data, cands, batch, head):
        answers = data.answers[batch]
        if (answers < 0).any():
            raise ValueError("training batch contains turns without a candidate answer")
        C = theta[self.c_name(head)]
        E = cands.csr @ C
        U, _ = self.state(theta, data, batch)
        losses, dS = softmax_cross_entropy_rows(U @ E.T, answers)
        return U, E, losses, dS

    def loss_and_grad(self, theta: ParamVector, data: DialogTensors, cands: CandidateSet, batch, scale, head=None):
        """Per-example losses and the gradient of ``sum_i scale_i * loss_i``."""
        batch = _as_batch(batch, len(data))
        scale = np.asarray(scale, dtype=DTYPE)
        if scale.shape != batch.shape:
            raise ValueError("scale must have one entry per example")
        U, E, losses, dS = self._head_terms(theta, data, cands, batch, head)
        dS *= scale[:, None]
        grad = theta.zeros_like()
        grad[self.c_name(head)] = cands.csr.T @ (dS.T @ U)
        self.kernels.body_backward(theta["A"], theta["R"], self.hops, *data.body_args(batch),
                                   np.ascontiguousarray(dS @ E), grad["A"], grad["R"])
        return losses, grad

    def backward(self, theta, data, cands, batch, scale, head=None) -> ParamVector:
        return self.loss_and_grad(theta, data, cands, batch, scale, head)[1]

    def example_dots(self, theta: ParamVector, data: DialogTensors, cands: CandidateSet, batch,
                     v: ParamVector, head=None) -> np.ndarray:
        """``g_i . v`` per example without forming the per-example gradients."""
        batch = _as_batch(batch, len(data))
        U, E, _, dS = self._head_terms(theta, data, cands, batch, head)
        vE = cands.csr @ v[self.c_name(head)]
        head_part = np.einsum("bj,bj->b", dS, U @ vE.T)
        body_part = self.kernels.body_dots(theta["A"], theta["R"], self.hops, *data.body_args(batch),
                                           np.ascontiguousarray(dS @ E), v["A"], v["R"])
        return head_part + body_part

    def predict(self, theta, data: DialogTensors, cands: CandidateSet, batch=None, head=None) -> np.ndarray:
        # argmax returns the first maximum, i.e. the lowest candidate id on ties
        return np.argmax(self.scores(theta, data, cands, batch, head), axis=1)


def multihead_forward(model: MemoryNetwork, theta: ParamVector, data: DialogTensors,
                      primary_cands: CandidateSet, related_cands: CandidateSet, batch=None):
    """Score with the head matching ``data.task``; returns ``(states, scores, losses)``."""
    if data.task == "primary":
        return model.forward(theta, data, primary_cands, batch, head="primary")
    if data.task == "related":
        return model.forward(theta, data, related_cands, batch, head="related")
    raise ValueError(f"unknown task tag {data.task!r}")


class WeightMemNet:
    """Memory network whose final state is squashed to one weight in (0, 1).

    It reads the weight view of the data: the model's memory followed by the
    candidate answer as one extra sentence.
    """

    def __init__(self, vocab_size: int, embed: int = EMBED_DIM, hops: int = HOPS, backend: str | None = None):
        self.vocab_size = vocab_size
        self.embed = embed
        self.hops = hops
        self.layout = [("A", (vocab_size, embed)), ("R", (embed, embed)), ("Wout", (embed, 1)), ("bout", (1,))]
        self.kernels = _backend.get_kernels(backend)

    def init_params(self, rng: np.random.Generator) -> ParamVector:
        p = _init_uniform(ParamVector(self.layout), rng)
        p["bout"] = 0.0
        return p

    def _state(self, eta, data, batch):
        return self.kernels.body_forward(eta["A"], eta["R"], self.hops, *data.body_args(batch, weight_view=True))[0]

    def forward(self, eta: ParamVector, data: DialogTensors, batch=None) -> np.ndarray:
        batch = _as_batch(batch, len(data))
        U = self._state(eta, data, batch)
        return open_unit(sigmoid(U @ eta["Wout"][:, 0] + eta["bout"][0]))

    def backward(self, eta: ParamVector, data: DialogTensors, batch, upstream) -> ParamVector:
        """Gradient of ``sum_i upstream_i * w_i`` with respect to all segments."""
        batch = _as_batch(batch, len(data))
        upstream = np.asarray(upstream, dtype=DTYPE)
        if upstream.shape != batch.shape:
            raise ValueError("upstream must have one entry per example")
        U = self._state(eta, data, batch)
        w = sigmoid(U @ eta["Wout"][:, 0] + eta["bout"][0])
        dz = upstream * w * (1.0 - w)
        grad = eta.zeros_like()
        grad["Wout"] = (U.T @ dz)[:, None]
        grad["bout"] = dz.sum()
        dU = np.ascontiguousarray(np.outer(dz, eta["Wout"][:, 0]))
        self.kernels.body_backward(eta["A"], eta["R"], self.hops, *data.body_args(batch, weight_view=True),
                                   dU, grad["A"], grad["R"])
        return grad
