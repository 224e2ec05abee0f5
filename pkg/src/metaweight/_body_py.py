"""Pure-numpy memory-network body kernels (fallback for the compiled module).

Inputs shared by every kernel:

``A``         (V, d) word embedding, ``R`` (d, d) state transform
``indptr, indices, counts``  CSR rows of the sentence table (bag-of-words)
``mem_ptr, mem_ids``         example ``e`` attends over sentences
                             ``mem_ids[mem_ptr[e]:mem_ptr[e+1]]``
``query_ids``                sentence id of each example's query
``batch``                    example ids to process

The state recurrence is ``u0 = A.q``, ``p = softmax(u_k . m_j)``,
``u_{k+1} = R u_k + sum_j p_j m_j``. An empty memory reads out zero.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp


def _table(indptr, indices, counts, n_vocab):
    return sp.csr_matrix((counts, indices, indptr), shape=(len(indptr) - 1, n_vocab))


def _layout(mem_ptr, mem_ids, batch):
    lo = mem_ptr[batch]
    lens = mem_ptr[batch + 1] - lo
    n_mem = int(lens.max()) if len(batch) else 0
    row = np.repeat(np.arange(len(batch)), lens)
    starts = np.repeat(np.cumsum(lens) - lens, lens)
    col = np.arange(row.shape[0]) - starts
    flat = mem_ids[np.repeat(lo, lens) + col]
    return row, col, flat, n_mem


class _Forward:
    __slots__ = ("S_mem", "S_q", "row", "col", "mask", "mem", "us", "ps")


def _forward(A, R, hops, indptr, indices, counts, mem_ptr, mem_ids, query_ids, batch):
    batch = np.asarray(batch, dtype=np.int64)
    table = _table(indptr, indices, counts, A.shape[0])
    row, col, flat, n_mem = _layout(mem_ptr, mem_ids, batch)
    f = _Forward()
    f.S_mem = table[flat]
    f.S_q = table[query_ids[batch]]
    f.row, f.col = row, col
    B, d = len(batch), A.shape[1]
    mem = np.zeros((B, n_mem, d))
    mem[row, col] = f.S_mem @ A
    mask = np.zeros((B, n_mem), dtype=bool)
    mask[row, col] = True
    f.mask, f.mem = mask, mem
    u = np.asarray(f.S_q @ A)
    us, ps = [u], []
    for _ in range(hops):
        logits = np.einsum("bmd,bd->bm", mem, u)
        logits[~mask] = -np.inf
        top = logits.max(axis=1, keepdims=True) if n_mem else np.zeros((B, 1))
        top[~np.isfinite(top)] = 0.0
        e = np.exp(logits - top)
        z = e.sum(axis=1, keepdims=True)
        p = np.divide(e, z, out=np.zeros_like(e), where=z > 0)
        o = np.einsum("bm,bmd->bd", p, mem)
        u = u @ R.T + o
        us.append(u)
        ps.append(p)
    f.us, f.ps = us, ps
    return f


def body_forward(A, R, hops, indptr, indices, counts, mem_ptr, mem_ids, query_ids, batch):
    """Return ``(U, P)``: final states ``(B, d)`` and attention ``(B, hops, M)``."""
    f = _forward(A, R, hops, indptr, indices, counts, mem_ptr, mem_ids, query_ids, batch)
    P = np.stack(f.ps, axis=1) if hops else np.zeros((len(batch), 0, f.mem.shape[1]))
    return f.us[-1], P


def _backward(f, R, hops, dU):
    """Return ``(dmem, du0, dR)`` with ``dmem`` padded like ``f.mem``."""
    dmem = np.zeros_like(f.mem)
    dR = np.zeros_like(R)
    du = dU.copy()
    for k in range(hops - 1, -1, -1):
        u, p = f.us[k], f.ps[k]
        dR += du.T @ u
        dprev = du @ R
        dmem += p[:, :, None] * du[:, None, :]
        dp = np.einsum("bmd,bd->bm", f.mem, du)
        da = p * (dp - (p * dp).sum(axis=1, keepdims=True))
        dprev += np.einsum("bm,bmd->bd", da, f.mem)
        dmem += da[:, :, None] * u[:, None, :]
        du = dprev
    return dmem, du, dR


def body_backward(A, R, hops, indptr, indices, counts, mem_ptr, mem_ids, query_ids, batch, dU, gA, gR):
    """Accumulate the body gradient of ``sum_b dU_b . U_b`` into ``gA`` and ``gR``."""
    f = _forward(A, R, hops, indptr, indices, counts, mem_ptr, mem_ids, query_ids, batch)
    dmem, du0, dR = _backward(f, R, hops, np.asarray(dU))
    gR += dR
    gA += f.S_mem.T @ dmem[f.row, f.col] + f.S_q.T @ du0


def body_dots(A, R, hops, indptr, indices, counts, mem_ptr, mem_ids, query_ids, batch, dU, vA, vR):
    """Per example ``b``: the body gradient of ``dU_b . U_b`` contracted with ``(vA, vR)``."""
    f = _forward(A, R, hops, indptr, indices, counts, mem_ptr, mem_ids, query_ids, batch)
    B = len(f.us[0])
    dots = np.zeros(B)
    du = np.asarray(dU).copy()
    dmem = np.zeros_like(f.mem)
    for k in range(hops - 1, -1, -1):
        u, p = f.us[k], f.ps[k]
        dots += np.einsum("bi,bi->b", du, u @ vR.T)
        dprev = du @ R
        dmem += p[:, :, None] * du[:, None, :]
        dp = np.einsum("bmd,bd->bm", f.mem, du)
        da = p * (dp - (p * dp).sum(axis=1, keepdims=True))
        dprev += np.einsum("bm,bmd->bd", da, f.mem)
        dmem += da[:, :, None] * u[:, None, :]
        du = dprev
    vmem = np.zeros_like(f.mem)
    vmem[f.row, f.col] = f.S_mem @ vA
    dots += np.einsum("bmd,bmd->b", dmem, vmem)
    dots += np.einsum("bd,bd->b", du, np.asarray(f.S_q @ vA))
    return dots
