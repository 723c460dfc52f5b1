"""Single-step link prediction: held-out splits, Hadamard features, logistic regression, AUC."""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.stats import rankdata

from .graph import DynamicGraph
from .model import ModelConfig, ParameterSet, forward

VALIDATION_FRACTION = 0.2
TRAIN_FRACTION = 0.25
L2_GRID = (1e-4, 1e-3, 1e-2, 1e-1, 1.0)


@dataclass(frozen=True)
class EvalSplit:
    """Labelled node pairs for predicting the links of snapshot ``time_step``.

    ``positives`` are the links left after the validation hold-out and
    ``negatives`` an equal number of sampled non-links.  Pair arrays are
    ``[M, 2]`` int; label arrays hold 1 for links and 0 for non-links.
    """

    time_step: int
    positives: np.ndarray
    negatives: np.ndarray
    train_pairs: np.ndarray
    train_labels: np.ndarray
    test_pairs: np.ndarray
    test_labels: np.ndarray
    validation_pairs: np.ndarray
    validation_labels: np.ndarray


def _sample_non_links(active: np.ndarray, links: set, count: int, taken: set, rng) -> np.ndarray:
    out: list[tuple[int, int]] = []
    while len(out) < count:
        draws = rng.integers(0, active.size, size=(2 * (count - len(out)) + 8, 2))
        for i, j in draws:
            u, v = int(active[i]), int(active[j])
            if u == v:
                continue
            key = (min(u, v), max(u, v))
            if key in links or key in taken:
                continue
            taken.add(key)
            out.append(key)
            if len(out) == count:
                break
    return np.array(out, dtype=np.int64).reshape(-1, 2)


def _stratified(pos: np.ndarray, neg: np.ndarray, fraction: float):
    k = max(1, int(round(fraction * len(pos))))
    k = min(k, len(pos) - 1)
    first = np.concatenate([pos[:k], neg[:k]])
    rest = np.concatenate([pos[k:], neg[k:]])
    first_y = np.r_[np.ones(k), np.zeros(k)]
    rest_y = np.r_[np.ones(len(pos) - k), np.zeros(len(neg) - k)]
    return first, first_y, rest, rest_y


def build_eval_split(g: DynamicGraph, t: int, seed: int) -> EvalSplit:
    """Split for predicting snapshot ``t + 1`` from embeddings of step ``t``."""
    target = t + 1
    if not 1 <= t < g.num_steps:
        raise ValueError(f"need 1 <= t < {g.num_steps} to evaluate step t+1, got t={t}")
    snap = g.snapshot(target)
    edges = np.array([(u, v) for u, v, _ in snap.edges], dtype=np.int64).reshape(-1, 2)
    if len(edges) < 4:
        raise ValueError(f"snapshot {target} has {len(edges)} links; at least 4 are needed")
    active = np.unique(edges)
    links = {(int(u), int(v)) for u, v in edges}
    available = active.size * (active.size - 1) // 2 - len(links)
    if available <= 0:
        raise ValueError(f"snapshot {target} is complete over its active nodes; no negatives exist")

    rng = np.random.default_rng([seed, target, 31])
    edges = edges[rng.permutation(len(edges))]
    n_val = int(VALIDATION_FRACTION * len(edges))
    val_pos, pos = edges[:n_val], edges[n_val:]
    if available < len(edges):
        raise ValueError(f"snapshot {target} has only {available} non-links for {len(edges)} links")
    taken: set = set()
    neg = _sample_non_links(active, links, len(pos), taken, rng)
    val_neg = _sample_non_links(active, links, n_val, taken, rng)

    train, train_y, test, test_y = _stratified(pos, neg, TRAIN_FRACTION)
    return EvalSplit(
        time_step=target,
        positives=pos,
        negatives=neg,
        train_pairs=train,
        train_labels=train_y,
        test_pairs=test,
        test_labels=test_y,
        validation_pairs=np.concatenate([val_pos, val_neg]),
        validation_labels=np.r_[np.ones(n_val), np.zeros(n_val)],
    )


def hadamard_features(e_u: np.ndarray, e_v: np.ndarray) -> np.ndarray:
    """Elementwise product of two embeddings (or two stacks of them)."""
    e_u, e_v = np.asarray(e_u, dtype=np.float64), np.asarray(e_v, dtype=np.float64)
    if e_u.shape != e_v.shape:
        raise ValueError(f"embedding shapes differ: {e_u.shape} vs {e_v.shape}")
    return e_u * e_v


def pair_features(emb: np.ndarray, pairs: np.ndarray) -> np.ndarray:
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    return hadamard_features(emb[pairs[:, 0]], emb[pairs[:, 1]])


@dataclass(frozen=True)
class LogisticModel:
    weight: np.ndarray
    bias: float

    def decision(self, features: np.ndarray) -> np.ndarray:
        return np.asarray(features, dtype=np.float64) @ self.weight + self.bias

    def predict_proba(self, features: np.ndarray) -> np.ndarray:
        z = self.decision(features)
        return np.exp(-np.logaddexp(0.0, -z))


def _logistic_objective(w, b, x, y, l2):
    z = x @ w + b
    # sign flip gives log(1 + e^-z) for y=1 and log(1 + e^z) for y=0
    loss = float(np.logaddexp(0.0, (1.0 - 2.0 * y) * z).sum()) / y.size + 0.5 * l2 * float(w @ w)
    p = np.exp(-np.logaddexp(0.0, -z))
    r = (p - y) / y.size
    return loss, x.T @ r + l2 * w, float(r.sum())


def logistic_fit(features, labels, l2: float = 1e-3, iters: int = 5000, tol: float = 1e-6) -> LogisticModel:
    """L2-regularized logistic regression by full-batch gradient descent.

    Each iteration backtracks (Armijo condition) from twice the last
    accepted step.  The bias is not penalized.  Stops once the gradient
    norm falls below ``tol``.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64).ravel()
    if x.ndim != 2 or x.shape[0] != y.size:
        raise ValueError(f"features {x.shape} do not match {y.size} labels")
    if not np.all(np.isfinite(x)):
        raise ValueError("features contain non-finite values")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0 or 1")
    if y.min() == y.max():
        raise ValueError("logistic_fit needs examples of both classes")
    if l2 < 0:
        raise ValueError("l2 must be non-negative")

    w, b = np.zeros(x.shape[1]), 0.0
    loss, gw, gb = _logistic_objective(w, b, x, y, l2)
    step = 1.0
    for _ in range(iters):
        gnorm2 = float(gw @ gw) + gb * gb
        if gnorm2 < tol * tol:
            break
        step *= 2.0
        while True:
            nw, nb = w - step * gw, b - step * gb
            nloss, ngw, ngb = _logistic_objective(nw, nb, x, y, l2)
            if nloss <= loss - 0.5 * step * gnorm2 or step < 1e-16:
                break
            step *= 0.5
        if nloss > loss:
            break
        w, b, loss, gw, gb = nw, nb, nloss, ngw, ngb
    return LogisticModel(w, float(b))


def roc_auc(scores, labels) -> float:
    """Mann-Whitney AUC with midranks for ties."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel().astype(bool)
    if s.size != y.size:
        raise ValueError("scores and labels differ in length")
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("roc_auc needs both positive and negative examples")
    ranks = rankdata(s, method="average")
    return float((ranks[y].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


@dataclass
class StepResult:
    time_step: int
    auc: float
    scores: np.ndarray
    labels: np.ndarray


def score_step(emb: np.ndarray, split: EvalSplit, l2: float) -> StepResult:
    """Fit the downstream classifier on the training pairs and score the test pairs."""
    model = logistic_fit(pair_features(emb, split.train_pairs), split.train_labels, l2)
    scores = model.predict_proba(pair_features(emb, split.test_pairs))
    return StepResult(split.time_step, roc_auc(scores, split.test_labels), scores, split.test_labels)


def select_l2(embs: Sequence[np.ndarray], splits: Sequence[EvalSplit], l2_grid: Sequence[float] = L2_GRID) -> float:
    """The grid value with the best pooled AUC on the validation links of all steps.

    One value serves every step so that pooled (micro) scores come from
    comparably regularized classifiers.  Ties go to the earlier grid entry.
    """
    if len(l2_grid) == 1 or not any(len(s.validation_labels) for s in splits):
        return l2_grid[0]
    best, best_auc = l2_grid[0], -1.0
    for l2 in l2_grid:
        scores, labels = [], []
        for emb, split in zip(embs, splits):
            if not len(split.validation_labels):
                continue
            model = logistic_fit(pair_features(emb, split.train_pairs), split.train_labels, l2)
            scores.append(model.predict_proba(pair_features(emb, split.validation_pairs)))
            labels.append(split.validation_labels)
        auc = roc_auc(np.concatenate(scores), np.concatenate(labels))
        if auc > best_auc:
            best, best_auc = l2, auc
    return best


@dataclass
class EvalReport:
    """AUCs per evaluated step and seed.

    ``per_step[i, j]`` is the AUC for ``steps[i]`` (the predicted snapshot)
    under ``seeds[j]``; ``micro`` and ``macro`` hold one value per seed.
    """

    steps: list[int]
    seeds: list[int]
    per_step: np.ndarray
    micro: np.ndarray
    macro: np.ndarray
    config_hash: str = ""
    l2: dict = field(default_factory=dict)

    def summary(self) -> dict:
        return {
            "micro_mean": float(np.mean(self.micro)),
            "micro_std": float(np.std(self.micro)),
            "macro_mean": float(np.mean(self.macro)),
            "macro_std": float(np.std(self.macro)),
        }

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", *(f"auc_seed{s}" for s in self.seeds), "mean", "std"])
            for step, row in zip(self.steps, self.per_step):
                w.writerow([step, *(repr(float(a)) for a in row), repr(float(row.mean())), repr(float(row.std()))])

    def write_summary(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.summary(), sort_keys=True) + "\n", encoding="utf-8")


def config_hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode("utf-8")).hexdigest()[:16]


def evaluate_embeddings(
    g: DynamicGraph,
    embeddings: Mapping[int, np.ndarray],
    seeds: Sequence[int],
    l2_grid: Sequence[float] = L2_GRID,
) -> EvalReport:
    """Score fixed ``[N, d]`` embeddings; ``embeddings[t]`` predicts snapshot t+1."""
    if not seeds:
        raise ValueError("need at least one seed")
    ts = sorted(t for t in embeddings if t + 1 <= g.num_steps)
    if not ts:
        raise ValueError("no embeddings for a step with a following snapshot")
    per_step = np.zeros((len(ts), len(seeds)))
    micro, macro = np.zeros(len(seeds)), np.zeros(len(seeds))
    chosen = {}
    embs = [np.asarray(embeddings[t]) for t in ts]
    for j, seed in enumerate(seeds):
        splits = [build_eval_split(g, t, seed) for t in ts]
        l2 = chosen[seed] = select_l2(embs, splits, l2_grid)
        results = [score_step(e, s, l2) for e, s in zip(embs, splits)]
        per_step[:, j] = [r.auc for r in results]
        micro[j] = roc_auc(np.concatenate([r.scores for r in results]), np.concatenate([r.labels for r in results]))
        macro[j] = float(np.mean(per_step[:, j]))
    return EvalReport([t + 1 for t in ts], list(seeds), per_step, micro, macro, l2=chosen)


def embed_steps(g: DynamicGraph, params_by_step: Mapping[int, ParameterSet], model_cfg: ModelConfig) -> dict[int, np.ndarray]:
    """Latest-step embedding ``[N, d]`` for each trained step t."""
    out = {}
    for t, params in params_by_step.items():
        out[t] = forward(g, params, model_cfg, up_to=t).data[t - 1]
    return out


def evaluate(
    g: DynamicGraph,
    params_by_step: Mapping[int, ParameterSet],
    model_cfg: ModelConfig,
    seeds: Sequence[int],
    l2_grid: Sequence[float] = L2_GRID,
) -> EvalReport:
    report = evaluate_embeddings(g, embed_steps(g, params_by_step, model_cfg), seeds, l2_grid)
    report.config_hash = config_hash(model_cfg)
    return report
