"""Loop-by-loop reference evaluation of the ConvDySAT forward pass.

Deliberately naive: plain Python loops over snapshots, nodes, heads and
neighbors, no shared code with the package's vectorized layers.
"""

import math

import numpy as np


def leaky_relu(x, slope=0.2):
    return x if x >= 0 else slope * x


def elu(x):
    return x if x > 0 else math.exp(x) - 1.0


def structural(adjacency, features, weight, attention):
    """adjacency: dict v -> ((u, w), ...) including the self-loop."""
    n = features.shape[0]
    heads, two_d = attention.shape
    d = two_d // 2
    out = np.zeros((n, heads * d))
    alphas = {}
    for h in range(heads):
        proj = features @ weight[:, h * d:(h + 1) * d]
        a_nb, a_ctr = attention[h, :d], attention[h, d:]
        for v in range(n):
            row = adjacency[v]
            logits = [leaky_relu(w * (float(a_nb @ proj[u]) + float(a_ctr @ proj[v]))) for u, w in row]
            top = max(logits)
            ex = [math.exp(e - top) for e in logits]
            total = sum(ex)
            alpha = [e / total for e in ex]
            alphas[(h, v)] = dict(zip([u for u, _ in row], alpha))
            agg = sum(al * proj[u] for al, (u, _) in zip(alpha, row))
            out[v, h * d:(h + 1) * d] = [elu(x) for x in agg]
    return out, alphas


def conv(x, kernel, bias):
    steps = x.shape[0]
    k = kernel.shape[0]
    out = np.zeros((steps, kernel.shape[2]))
    for t in range(steps):
        acc = bias.copy()
        for p in range(k):
            src = t - k + 1 + p
            if src >= 0:
                acc = acc + x[src] @ kernel[p]
        out[t] = acc
    return out


def temporal(x, qk, qb, kk, kb, vk, vb, heads, scale_dim="head"):
    q, k, v = conv(x, qk, qb), conv(x, kk, kb), conv(x, vk, vb)
    steps, f = q.shape
    d = f // heads
    width = d if scale_dim == "head" else f
    out = np.zeros((steps, f))
    for h in range(heads):
        sl = slice(h * d, (h + 1) * d)
        for i in range(steps):
            logits = [float(q[i, sl] @ k[j, sl]) / math.sqrt(width) for j in range(i + 1)]
            top = max(logits)
            ex = [math.exp(e - top) for e in logits]
            total = sum(ex)
            out[i, sl] = sum((e / total) * v[j, sl] for j, e in enumerate(ex))
    return out


def full_forward(graph, arrays, heads_s, heads_t, up_to):
    n = graph.node_count
    h = np.eye(n)
    per_step = []
    for t in range(1, up_to + 1):
        x = h
        layer = 0
        while f"structural.{layer}.weight" in arrays:
            x, _ = structural(graph.snapshot(t).adjacency, x, arrays[f"structural.{layer}.weight"],
                              arrays[f"structural.{layer}.attention"])
            layer += 1
        per_step.append(x)
    seq = np.stack(per_step, axis=1) + arrays["temporal.position"][:up_to][None]
    out = np.stack([
        temporal(seq[v], arrays["temporal.query.kernel"], arrays["temporal.query.bias"],
                 arrays["temporal.key.kernel"], arrays["temporal.key.bias"],
                 arrays["temporal.value.kernel"], arrays["temporal.value.bias"], heads_t)
        for v in range(n)
    ])
    return out.transpose(1, 0, 2)


def context_loss(emb, positives, negatives, w_n, reduction="mean"):
    def sig(z):
        return 1.0 / (1.0 + math.exp(-z))

    total = 0.0
    for t, v, u in positives:
        total += -math.log(max(sig(float(emb[t, u] @ emb[t, v])), 1e-12))
    for t, v, u in negatives:
        total += -w_n * math.log(max(1.0 - sig(float(emb[t, u] @ emb[t, v])), 1e-12))
    return total / len(positives) if reduction == "mean" else total
