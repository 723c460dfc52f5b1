"""Central finite-difference verification of tape gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import tensor as tn
from .graph import DynamicGraph, graph_from_edges
from .layers import (
    StructuralParams, TemporalParams, add_position_embeddings, build_mask,
    structural_attention, temporal_attention,
)
from .model import ModelConfig, ParameterSet, context_loss, forward, init_params
from .tensor import Tape, Tensor


def analytic_gradients(f: Callable[..., Tensor], inputs: Sequence[Tensor]) -> list[np.ndarray]:
    for x in inputs:
        x.requires_grad = True
        x.grad = None
    with Tape() as tape:
        out = f(*inputs)
    tape.backward(out)
    return [np.zeros(x.shape) if x.grad is None else x.grad.copy() for x in inputs]


def finite_difference_errors(
    f: Callable[..., Tensor],
    inputs: Tensor | Sequence[Tensor],
    epsilon: float = 1e-5,
) -> list[float]:
    """Max relative error per input between tape and central-difference gradients.

    The error of one coordinate is ``|analytic - numeric| / max(1, |analytic|)``.
    Non-finite coordinates (e.g. -inf mask sentinels) are never perturbed.
    """
    if isinstance(inputs, Tensor):
        inputs = [inputs]
    inputs = list(inputs)
    analytic = analytic_gradients(f, inputs)
    errors = []
    for x, grad in zip(inputs, analytic):
        flat = x.data.reshape(-1)
        gflat = grad.reshape(-1)
        worst = 0.0
        for i in range(flat.size):
            orig = flat[i]
            if not np.isfinite(orig):
                continue
            flat[i] = orig + epsilon
            up = f(*inputs).item()
            flat[i] = orig - epsilon
            down = f(*inputs).item()
            flat[i] = orig
            numeric = (up - down) / (2.0 * epsilon)
            err = abs(gflat[i] - numeric) / max(1.0, abs(gflat[i]))
            worst = max(worst, err)
        errors.append(float(worst))
    return errors


def finite_difference_check(
    f: Callable[..., Tensor],
    inputs: Tensor | Sequence[Tensor],
    epsilon: float = 1e-5,
) -> float:
    """Largest relative gradient error over all coordinates of all inputs."""
    return max(finite_difference_errors(f, inputs, epsilon), default=0.0)


# ---------------------------------------------------------------------------
# The suite behind ``convdysat gradcheck``
# ---------------------------------------------------------------------------

PER_OP_TOLERANCE = 1e-6
COMPOSED_TOLERANCE = 1e-4

SIZES = {
    # nodes, steps, input dim, structural dim, temporal dim, heads
    "small": dict(n=4, t=3, d=5, f=4, f_t=4, h=2),
    "medium": dict(n=6, t=5, d=8, f=8, f_t=8, h=4),
}


@dataclass
class CheckResult:
    component: str
    error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.error < self.tolerance


def _projected(fn: Callable[..., Tensor], weights: np.ndarray) -> Callable[..., Tensor]:
    """Reduce a tensor-valued ``fn`` to a scalar with fixed weights, so every output coordinate is checked."""
    def scalar(*xs):
        out = fn(*xs)
        return tn.sum(tn.multiply(out, Tensor(weights.reshape(out.shape))))
    return scalar


def _toy_graph(n: int, t: int) -> DynamicGraph:
    # a path that grows one link per step, plus a chord from step 2
    steps = []
    for s in range(t):
        links = [(i, i + 1) for i in range(min(n - 1, s + 1))]
        if s >= 1:
            links.append((0, n - 1))
        steps.append(links)
    return graph_from_edges(steps, n)


def _check(name, fn, inputs, tolerance, rng, project=True):
    if project:
        out = fn(*inputs)
        fn = _projected(fn, rng.uniform(-1.0, 1.0, size=out.shape))
    return CheckResult(name, finite_difference_check(fn, inputs), tolerance)


def run_suite(sizes: str = "small", seed: int = 0) -> list[CheckResult]:
    """Finite-difference checks for every layer type and the composed loss."""
    if sizes not in SIZES:
        raise ValueError(f"unknown size preset {sizes!r}; choose from {sorted(SIZES)}")
    z = SIZES[sizes]
    n, t, d, f, f_t, h = z["n"], z["t"], z["d"], z["f"], z["f_t"], z["h"]
    rng = np.random.default_rng(seed)

    def param(*shape, lo=-1.0, hi=1.0):
        return Tensor(rng.uniform(lo, hi, size=shape), requires_grad=True)

    g = _toy_graph(n, t)
    table = g.neighbor_table()
    results = []

    results.append(_check(
        "elementwise (sigmoid/exp/log/elu/leaky_relu)",
        lambda x: tn.add(tn.add(tn.sigmoid(x), tn.elu(x)),
                         tn.add(tn.leaky_relu(x, 0.2), tn.log(tn.exp(tn.scale(x, 0.5))))),
        [param(3, 4)], PER_OP_TOLERANCE, rng))

    mask = np.where(rng.random((3, 5)) < 0.3, -np.inf, 0.0)
    mask[:, 0] = 0.0
    results.append(_check("masked_softmax", lambda x: tn.masked_softmax(x, mask),
                          [param(3, 5, lo=-2, hi=2)], PER_OP_TOLERANCE, rng))

    results.append(_check(
        "structural_attention",
        lambda x, w, a: structural_attention(table, x, StructuralParams(w, a)),
        [param(t, n, d), param(d, f), param(h, 2 * f // h)], PER_OP_TOLERANCE, rng))

    results.append(_check("causal_conv1d", tn.causal_conv1d,
                          [param(n, t, f), param(2, f, f_t), param(f_t)], PER_OP_TOLERANCE, rng))

    causal = build_mask(t)
    results.append(_check(
        "temporal_attention",
        lambda x, qk, qb, kk, kb, vk, vb: temporal_attention(x, TemporalParams(qk, qb, kk, kb, vk, vb, h), causal),
        [param(n, t, f), param(2, f, f_t), param(f_t), param(2, f, f_t), param(f_t), param(1, f, f_t), param(f_t)],
        PER_OP_TOLERANCE, rng))

    results.append(_check("position_embeddings", add_position_embeddings,
                          [param(n, t, f), param(t, f)], PER_OP_TOLERANCE, rng))

    cfg = ModelConfig(structural_dims=(f,), structural_heads=h, temporal_dim=f_t, temporal_heads=h)
    params = init_params(cfg, n, t, seed)
    names = list(params)
    positives = np.array([(s, u, v) for s in range(t) for u, v, _ in g.snapshot(s + 1).edges], dtype=np.int64)
    negatives = np.stack([positives[:, 0], positives[:, 1], (positives[:, 2] + 1) % n], axis=1)

    def composed(*tensors):
        ps = ParameterSet({k: x for k, x in zip(names, tensors)})
        return context_loss(forward(g, ps, cfg), positives, negatives, 1.0)

    results.append(_check("composed model + context loss", composed, [params[k] for k in names],
                          COMPOSED_TOLERANCE, rng, project=False))
    return results
