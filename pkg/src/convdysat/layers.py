"""Structural attention, causal-convolution temporal attention and position embeddings.

All layers are compositions of :mod:`convdysat.tensor` operations.  Heads
share one weight matrix whose column blocks belong to individual heads; head
outputs are concatenated in head order, so a ``[.., H, d]`` result reshaped to
``[.., H*d]`` is exactly the head concatenation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as tn
from .graph import NeighborTable, Snapshot
from .tensor import ShapeError, Tensor


@dataclass
class StructuralParams:
    """``weight`` is ``[D, F]``; ``attention`` is ``[H, 2*F/H]`` (neighbor half, then center half)."""

    weight: Tensor
    attention: Tensor

    @property
    def heads(self) -> int:
        return self.attention.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[1]


@dataclass
class TemporalParams:
    query_kernel: Tensor
    query_bias: Tensor
    key_kernel: Tensor
    key_bias: Tensor
    value_kernel: Tensor
    value_bias: Tensor
    heads: int


def _split_heads(x: Tensor, heads: int) -> Tensor:
    # [..., N, H*d] -> [..., H, N, d]
    *lead, n, f = x.shape
    x = tn.reshape(x, (*lead, n, heads, f // heads))
    k = len(lead)
    return tn.transpose(x, (*range(k), k + 1, k, k + 2))


def _merge_heads(x: Tensor) -> Tensor:
    # [..., H, N, d] -> [..., N, H*d]
    *lead, h, n, d = x.shape
    k = len(lead)
    x = tn.transpose(x, (*range(k), k + 1, k, k + 2))
    return tn.reshape(x, (*lead, n, h * d))


def _as_table(neighborhoods) -> NeighborTable:
    if isinstance(neighborhoods, NeighborTable):
        return neighborhoods
    if isinstance(neighborhoods, Snapshot):
        return NeighborTable.from_snapshots([neighborhoods], len(neighborhoods.adjacency))
    snaps = list(neighborhoods)
    return NeighborTable.from_snapshots(snaps, len(snaps[0].adjacency))


def _project(table: NeighborTable, features: Tensor | None, params: StructuralParams) -> Tensor:
    s, n, _ = table.shape
    f = params.out_dim
    if features is None:
        if params.weight.shape[0] != n:
            raise ShapeError(f"one-hot input needs a {n}-row weight, got {params.weight.shape}")
        return tn.expand(params.weight, (s, n, f))
    if features.ndim == 2:
        features = tn.expand(features, (s, *features.shape))
    if features.shape[:2] != (s, n) or features.shape[2] != params.weight.shape[0]:
        raise ShapeError(f"features {features.shape} do not fit weight {params.weight.shape}")
    return tn.matmul(features, tn.expand(params.weight, (s, *params.weight.shape)))


def _head_offsets(s: int, h: int, n: int) -> np.ndarray:
    return (np.arange(s)[:, None, None, None] * h + np.arange(h)[None, :, None, None]) * n


def _coefficients(table: NeighborTable, heads: Tensor, params: StructuralParams) -> Tensor:
    """Attention over padded neighbor slots, ``[S, H, N, K]``."""
    s, h, n, d = heads.shape
    k = table.shape[2]
    if params.attention.shape != (h, 2 * d):
        raise ShapeError(f"attention vector shape {params.attention.shape} != {(h, 2 * d)}")
    halves = tn.transpose(tn.reshape(params.attention, (h, 2, d)), (1, 0, 2))   # [2, H, d]
    a_nb = tn.expand(tn.reshape(tn.gather_rows(halves, [0]), (h, d, 1)), (s, h, d, 1))
    a_ctr = tn.expand(tn.reshape(tn.gather_rows(halves, [1]), (h, d, 1)), (s, h, d, 1))
    score_nb = tn.matmul(heads, a_nb)                                      # [S, H, N, 1]
    score_ctr = tn.matmul(heads, a_ctr)

    base = _head_offsets(s, h, n)
    nb_idx = base + table.index[:, None]                                   # [S, H, N, K]
    ctr_idx = np.broadcast_to(base + np.arange(n)[None, None, :, None], nb_idx.shape)
    raw = tn.add(tn.take(score_ctr, ctr_idx), tn.take(score_nb, nb_idx))
    weights = Tensor(np.broadcast_to(table.weight[:, None], (s, h, n, k)))
    logits = tn.leaky_relu(tn.multiply(weights, raw), 0.2)
    mask = np.where(table.valid, 0.0, -np.inf)[:, None]                  # [S, 1, N, K]
    return tn.masked_softmax(logits, mask)


def structural_attention(neighborhoods, features: Tensor | None, params: StructuralParams) -> Tensor:
    """Graph attention over each node's weighted neighborhood, per snapshot.

    ``neighborhoods`` is a :class:`NeighborTable` over S snapshots (a single
    Snapshot or a list of them is accepted too).  ``features`` is
    ``[S, N, D]`` or ``[N, D]``, or None for one-hot inputs, in which case the
    projected features are the rows of the weight matrix.  Returns ``[S, N, F]``.

    Logit for neighbor u of node v: ``leaky_relu(A_vu * (a_nb . Wx_u + a_ctr . Wx_v))``;
    the output is ``elu(sum_u alpha_vu Wx_u)`` with alpha the softmax over u.
    """
    table = _as_table(neighborhoods)
    h = params.heads
    if params.out_dim % h:
        raise ShapeError(f"output dim {params.out_dim} not divisible by {h} heads")
    heads = _split_heads(_project(table, features, params), h)            # [S, H, N, d]
    s, _, n, _ = heads.shape
    alpha = _coefficients(table, heads, params)
    # padding slots carry alpha == 0, so summing them onto the self entry is harmless
    pos = (_head_offsets(s, h, n) + np.arange(n)[None, None, :, None]) * n + table.index[:, None]
    dense = tn.scatter_add(alpha, pos, (s, h, n, n))                       # [S, H, N, N]
    z = tn.elu(tn.matmul(dense, heads))
    return _merge_heads(z)


def attention_coefficients(neighborhoods, features: Tensor | None, params: StructuralParams):
    """The neighbor table and its attention weights ``[S, H, N, K]`` (padding slots are 0)."""
    table = _as_table(neighborhoods)
    heads = _split_heads(_project(table, features, params), params.heads)
    return table, _coefficients(table, heads, params).data


def build_mask(steps: int) -> np.ndarray:
    """``[T, T]`` mask: 0 where key j <= query i, -inf above the diagonal."""
    if steps < 1:
        raise ValueError("mask needs at least one step")
    return np.where(np.tril(np.ones((steps, steps))) > 0, 0.0, -np.inf)


def add_position_embeddings(h: Tensor, positions: Tensor) -> Tensor:
    """Add ``positions`` ``[T, D]`` to every node sequence in ``h`` (``[T, D]`` or ``[N, T, D]``)."""
    if h.shape[-2:] != positions.shape:
        raise ShapeError(f"position embeddings {positions.shape} do not fit {h.shape}")
    if h.ndim == positions.ndim:
        return tn.add(h, positions)
    return tn.add(h, tn.expand(positions, h.shape))


def temporal_attention(x: Tensor, params: TemporalParams, mask: np.ndarray, scale_dim: str = "head") -> Tensor:
    """Masked multi-head self-attention over each node's own time series.

    ``x`` is ``[N, T, D']`` (or ``[T, D']`` for a single node).  Queries and
    keys come from causal convolutions (kernel size of ``query_kernel``),
    values from a kernel-1 convolution.  ``scale_dim`` picks the logit scale:
    ``"head"`` divides by sqrt(F'/H), ``"full"`` by sqrt(F').
    """
    single = x.ndim == 2
    if single:
        x = tn.reshape(x, (1, *x.shape))
    steps = x.shape[1]
    if mask.shape != (steps, steps):
        raise ShapeError(f"mask {mask.shape} does not match {steps} time steps")
    q = tn.causal_conv1d(x, params.query_kernel, params.query_bias)
    k = tn.causal_conv1d(x, params.key_kernel, params.key_bias)
    v = tn.causal_conv1d(x, params.value_kernel, params.value_bias)
    f = q.shape[-1]
    h = params.heads
    if f % h:
        raise ShapeError(f"temporal dim {f} not divisible by {h} heads")
    qh, kh, vh = (_split_heads(t, h) for t in (q, k, v))           # [N, H, T, d]
    logits = tn.matmul(qh, tn.transpose(kh, (0, 1, 3, 2)))
    width = f // h if scale_dim == "head" else f
    beta = tn.masked_softmax(tn.scale(logits, 1.0 / math.sqrt(width)), mask)
    out = _merge_heads(tn.matmul(beta, vh))                         # [N, T, F']
    return tn.reshape(out, out.shape[1:]) if single else out
