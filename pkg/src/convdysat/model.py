"""ConvDySAT forward pass and the random-walk graph-context loss."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from . import tensor as tn
from .graph import DynamicGraph
from .layers import (
    StructuralParams, TemporalParams, add_position_embeddings, build_mask,
    structural_attention, temporal_attention,
)
from .tensor import ShapeError, Tensor

LOG_FLOOR = 1e-12


@dataclass(frozen=True)
class ModelConfig:
    structural_dims: tuple[int, ...] = (64,)
    structural_heads: int = 8
    temporal_dim: int = 64
    temporal_heads: int = 8
    qk_kernel: int = 2
    negative_ratio: float = 1.0
    negatives_per_positive: int = 10
    scale_dim: str = "head"
    reduction: str = "mean"
    latest_only: bool = False

    def __post_init__(self):
        object.__setattr__(self, "structural_dims", tuple(int(d) for d in self.structural_dims))
        if not self.structural_dims:
            raise ValueError("need at least one structural layer")
        for d in self.structural_dims:
            if d % self.structural_heads:
                raise ValueError(f"structural dim {d} not divisible by {self.structural_heads} heads")
        if self.temporal_dim % self.temporal_heads:
            raise ValueError(f"temporal dim {self.temporal_dim} not divisible by {self.temporal_heads} heads")
        if self.qk_kernel not in (2, 3):
            raise ValueError("qk_kernel must be 2 or 3")
        if self.scale_dim not in ("head", "full"):
            raise ValueError("scale_dim must be 'head' or 'full'")
        if self.reduction not in ("mean", "sum"):
            raise ValueError("reduction must be 'mean' or 'sum'")
        if self.negative_ratio < 0 or self.negatives_per_positive < 0:
            raise ValueError("negative sampling settings must be non-negative")

    @property
    def embedding_dim(self) -> int:
        return self.temporal_dim


@dataclass
class ParameterSet:
    """Named trainable tensors, iterated in insertion order."""

    tensors: dict[str, Tensor] = field(default_factory=dict)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __setitem__(self, name: str, value: Tensor) -> None:
        value.name = name
        self.tensors[name] = value

    def __iter__(self) -> Iterator[str]:
        return iter(self.tensors)

    def __len__(self) -> int:
        return len(self.tensors)

    def items(self):
        return self.tensors.items()

    def values(self):
        return self.tensors.values()

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self.tensors.items()}

    @classmethod
    def from_arrays(cls, arrays: dict[str, np.ndarray]) -> ParameterSet:
        ps = cls()
        for k, a in arrays.items():
            ps[k] = Tensor(np.array(a, dtype=np.float64), requires_grad=True)
        return ps

    def copy(self) -> ParameterSet:
        return ParameterSet.from_arrays(self.arrays())

    def structural(self, layer: int) -> StructuralParams:
        return StructuralParams(self[f"structural.{layer}.weight"], self[f"structural.{layer}.attention"])

    def temporal(self, heads: int) -> TemporalParams:
        return TemporalParams(
            self["temporal.query.kernel"], self["temporal.query.bias"],
            self["temporal.key.kernel"], self["temporal.key.bias"],
            self["temporal.value.kernel"], self["temporal.value.bias"],
            heads,
        )

    def num_structural_layers(self) -> int:
        return sum(1 for k in self.tensors if k.endswith(".weight") and k.startswith("structural."))


def decayed_names(params: ParameterSet) -> list[str]:
    """Parameters that receive weight decay: structural weights and conv kernels."""
    return [k for k in params if k.endswith(".weight") or k.endswith(".kernel")]


def _glorot(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_params(cfg: ModelConfig, num_nodes: int, num_steps: int, seed: int = 0) -> ParameterSet:
    rng = np.random.default_rng([seed, 7919])
    arrays: dict[str, np.ndarray] = {}
    d_in = num_nodes
    hs = cfg.structural_heads
    for i, f in enumerate(cfg.structural_dims):
        arrays[f"structural.{i}.weight"] = _glorot(rng, (d_in, f), d_in, f)
        per_head = f // hs
        arrays[f"structural.{i}.attention"] = _glorot(rng, (hs, 2 * per_head), 2 * per_head, 1)
        d_in = f
    f_t = cfg.temporal_dim
    arrays["temporal.position"] = rng.normal(0.0, 0.01, size=(num_steps, d_in))
    for name, k in (("query", cfg.qk_kernel), ("key", cfg.qk_kernel), ("value", 1)):
        arrays[f"temporal.{name}.kernel"] = _glorot(rng, (k, d_in, f_t), k * d_in, f_t)
        arrays[f"temporal.{name}.bias"] = np.zeros(f_t)
    return ParameterSet.from_arrays(arrays)


def check_params(params: ParameterSet, cfg: ModelConfig, num_nodes: int, num_steps: int) -> None:
    """Raise ShapeError if ``params`` cannot run ``cfg`` on a graph of this size."""
    expected = init_params(cfg, num_nodes, num_steps)
    if list(expected) != list(params):
        raise ShapeError(f"parameter names {list(params)} do not match config {list(expected)}")
    for k, t in expected.items():
        if params[k].shape != t.shape:
            raise ShapeError(f"parameter {k} has shape {params[k].shape}, config expects {t.shape}")


def forward(g: DynamicGraph, params: ParameterSet, cfg: ModelConfig, up_to: int | None = None) -> Tensor:
    """Embeddings ``[up_to, N, d]``; row ``[t-1, v]`` is the embedding of v at step t."""
    up_to = g.num_steps if up_to is None else up_to
    if not 1 <= up_to <= g.num_steps:
        raise ValueError(f"up_to={up_to} outside [1, {g.num_steps}]")
    n_layers = params.num_structural_layers()
    if n_layers != len(cfg.structural_dims):
        raise ShapeError(f"{n_layers} structural layers in parameters, config has {len(cfg.structural_dims)}")
    table = g.neighbor_table(up_to)
    h = None
    for i in range(n_layers):
        h = structural_attention(table, h, params.structural(i))    # [t, N, F]
    seq = tn.transpose(h, (1, 0, 2))                                    # [N, t, F]
    position = params["temporal.position"]
    if position.shape[0] < up_to or position.shape[1] != seq.shape[2]:
        raise ShapeError(f"position embeddings {position.shape} cannot cover {up_to} steps of dim {seq.shape[2]}")
    seq = add_position_embeddings(seq, tn.gather_rows(position, np.arange(up_to)))
    out = temporal_attention(seq, params.temporal(cfg.temporal_heads), build_mask(up_to), cfg.scale_dim)
    return tn.transpose(out, (1, 0, 2))


def _pair_scores(flat: Tensor, n: int, triples: np.ndarray) -> Tensor:
    t, v, u = triples[:, 0], triples[:, 1], triples[:, 2]
    ev = tn.gather_rows(flat, t * n + v)
    eu = tn.gather_rows(flat, t * n + u)
    return tn.sum(tn.multiply(eu, ev), axis=1)


def _neg_log_sigmoid(scores: Tensor) -> Tensor:
    return tn.negate(tn.log(tn.clip_min(tn.sigmoid(scores), LOG_FLOOR)))


def context_loss(
    emb: Tensor,
    positives: np.ndarray,
    negatives: np.ndarray | None,
    negative_ratio: float = 1.0,
    reduction: str = "mean",
) -> Tensor:
    """Skip-gram loss with negative sampling over embeddings ``[T, N, d]``.

    ``positives`` and ``negatives`` are int arrays of ``(t, center, other)``
    rows with 0-based t.  Positive pairs are pulled together, negative pairs
    pushed apart with weight ``negative_ratio``.  ``mean`` divides the total by
    the number of positive pairs.
    """
    positives = np.asarray(positives, dtype=np.int64).reshape(-1, 3)
    if positives.shape[0] == 0:
        raise ValueError("context_loss needs at least one positive pair")
    steps, n, d = emb.shape
    for name, arr in (("positives", positives), ("negatives", negatives)):
        if arr is None or len(arr) == 0:
            continue
        arr = np.asarray(arr)
        if arr[:, 0].max() >= steps or arr[:, 1:].max() >= n or arr.min() < 0:
            raise IndexError(f"{name} reference steps or nodes outside the embedding table")
    flat = tn.reshape(emb, (steps * n, d))
    total = tn.sum(_neg_log_sigmoid(_pair_scores(flat, n, positives)))
    if negatives is not None and len(negatives) and negative_ratio != 0:
        negatives = np.asarray(negatives, dtype=np.int64).reshape(-1, 3)
        neg = tn.sum(_neg_log_sigmoid(tn.negate(_pair_scores(flat, n, negatives))))
        total = tn.add(total, tn.scale(neg, negative_ratio))
    if reduction == "mean":
        return tn.scale(total, 1.0 / positives.shape[0])
    if reduction == "sum":
        return total
    raise ValueError(f"unknown reduction {reduction!r}")
