"""Mini-batch Adam training with per-time-step budgets and binary checkpoints."""

from __future__ import annotations

import json
import logging
import math
import struct
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .graph import DynamicGraph
from .model import ModelConfig, ParameterSet, context_loss, decayed_names, forward, init_params
from .sampling import NegativeTable, WalkConfig, context_pairs, random_walks, sample_negatives
from .tensor import Tape

log = logging.getLogger(__name__)

MAGIC = b"CDYS1"


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss or gradient."""


@dataclass(frozen=True)
class TrainConfig:
    epochs_per_step: int = 200
    batch_size: int = 512
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 5e-4
    gradient_clip_norm: float = 10.0
    contexts_per_node: int = 10
    min_step: int = 1
    warm_start: bool = True
    resample_every_epoch: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.epochs_per_step < 0:
            raise ValueError("epochs_per_step must be >= 0")
        if min(self.batch_size, self.contexts_per_node, self.min_step) < 1:
            raise ValueError("batch_size, contexts_per_node and min_step must be positive")
        if min(self.learning_rate, self.eps, self.gradient_clip_norm) <= 0 or self.weight_decay < 0:
            raise ValueError("learning rate, eps and clip norm must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("adam betas must lie in (0, 1)")


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale ``grads`` in place so their global L2 norm is at most ``max_norm``; returns the pre-clip norm."""
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if norm > max_norm:
        factor = max_norm / norm
        for k in grads:
            grads[k] = grads[k] * factor
    return norm


def adam_step(
    params: ParameterSet,
    grads: dict[str, np.ndarray],
    state: AdamState,
    cfg: TrainConfig,
    decay: set[str] | None = None,
) -> tuple[ParameterSet, AdamState]:
    """One bias-corrected Adam update, preceded by decoupled weight decay on ``decay``."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"non-finite gradient for parameter {name}")
    state.t += 1
    bc1 = 1.0 - cfg.beta1 ** state.t
    bc2 = 1.0 - cfg.beta2 ** state.t
    decay = set(decayed_names(params)) if decay is None else decay
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m = state.m[name] = cfg.beta1 * state.m[name] + (1.0 - cfg.beta1) * g
        v = state.v[name] = cfg.beta2 * state.v[name] + (1.0 - cfg.beta2) * (g * g)
        data = p.data
        if name in decay and cfg.weight_decay:
            data = data - cfg.learning_rate * cfg.weight_decay * data
        p.data = data - cfg.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)
    return params, state


@dataclass
class StepContexts:
    positives: np.ndarray                  # [P, 3] rows of (t0, center, context), 0-based t
    tables: dict[int, NegativeTable]       # 0-based t -> negative table


def build_contexts(
    g: DynamicGraph,
    step: int,
    walk_cfg: WalkConfig,
    train_cfg: TrainConfig,
    latest_only: bool = False,
    stream: int = 0,
    threads: int = 1,
) -> StepContexts:
    """Walk contexts for snapshots 1..step, at most ``contexts_per_node`` per (snapshot, center)."""
    chunks, tables = [], {}
    first = step if latest_only else 1
    for t in range(first, step + 1):
        snap = g.snapshot(t)
        deg = snap.degrees(g.node_count)
        if deg.sum() <= 0:
            continue
        walks = random_walks(snap, walk_cfg, stream=stream * 100003 + step, threads=threads)
        centers, ctx = context_pairs(walks, walk_cfg.window)
        if centers.size == 0:
            continue
        rng = np.random.default_rng([train_cfg.seed, stream, step, t, 11])
        perm = rng.permutation(centers.size)
        c, x = centers[perm], ctx[perm]
        order = np.argsort(c, kind="stable")
        c, x = c[order], x[order]
        starts = np.searchsorted(c, c, side="left")
        keep = (np.arange(c.size) - starts) < train_cfg.contexts_per_node
        c, x = c[keep], x[keep]
        chunks.append(np.stack([np.full(c.size, t - 1), c, x], axis=1))
        tables[t - 1] = NegativeTable.from_degrees(deg)
    positives = np.concatenate(chunks) if chunks else np.empty((0, 3), np.int64)
    return StepContexts(positives.astype(np.int64), tables)


def attach_negatives(pairs: np.ndarray, tables: dict[int, NegativeTable], per_positive: int, rng) -> np.ndarray:
    """``per_positive`` negative draws for each pair's center, from its snapshot's table."""
    if per_positive == 0 or len(pairs) == 0:
        return np.empty((0, 3), np.int64)
    out = []
    for t0 in np.unique(pairs[:, 0]):
        centers = pairs[pairs[:, 0] == t0, 1]
        draws = sample_negatives(tables[int(t0)], centers.size * per_positive, rng)
        out.append(np.stack([np.full(draws.size, t0), np.repeat(centers, per_positive), draws], axis=1))
    return np.concatenate(out).astype(np.int64)


@dataclass
class TrainState:
    step: int                                   # evaluation step currently being trained
    epoch: int                                  # epochs completed within ``step``
    adam: AdamState
    loss_log: list[tuple[int, int, float]] = field(default_factory=list)
    step_params: dict[int, dict[str, np.ndarray]] = field(default_factory=dict)
    finished: bool = False


@dataclass
class TrainResult:
    params: ParameterSet
    state: TrainState
    timings: list[tuple[int, int, float]] = field(default_factory=list)

    @property
    def loss_log(self) -> list[tuple[int, int, float]]:
        return self.state.loss_log

    def params_for_step(self, step: int) -> ParameterSet:
        return ParameterSet.from_arrays(self.state.step_params[step])


class Trainer:
    """Single-step link-prediction training loop.

    For every evaluation step t (``min_step`` .. T-1) the model is trained for
    ``epochs_per_step`` epochs on snapshots 1..t and a copy of the parameters
    is kept for predicting the links of snapshot t+1.  Every random draw is
    derived from ``(seed, t, epoch)``, so a run resumed from a checkpoint
    replays the uninterrupted run exactly.
    """

    def __init__(
        self,
        graph: DynamicGraph,
        model_cfg: ModelConfig,
        train_cfg: TrainConfig,
        walk_cfg: WalkConfig | None = None,
        params: ParameterSet | None = None,
        state: TrainState | None = None,
        threads: int = 1,
    ):
        if graph.num_steps < 2:
            raise ValueError("training needs at least 2 snapshots")
        self.graph = graph
        self.model_cfg = model_cfg
        self.train_cfg = train_cfg
        self.walk_cfg = walk_cfg or WalkConfig(seed=train_cfg.seed)
        self.threads = threads
        self.params = params or init_params(model_cfg, graph.node_count, graph.num_steps, train_cfg.seed)
        self.state = state or TrainState(step=train_cfg.min_step, epoch=0, adam=AdamState())
        self._decay = set(decayed_names(self.params))
        self._contexts: tuple[tuple[int, int], StepContexts] | None = None

    def _contexts_for(self, step: int, epoch: int) -> StepContexts:
        key = (step, epoch if self.train_cfg.resample_every_epoch else -1)
        if self._contexts is None or self._contexts[0] != key:
            stream = epoch + 1 if self.train_cfg.resample_every_epoch else 0
            ctx = build_contexts(self.graph, step, self.walk_cfg, self.train_cfg,
                                 self.model_cfg.latest_only, stream, self.threads)
            self._contexts = (key, ctx)
        return self._contexts[1]

    def _run_epoch(self, step: int, epoch: int) -> float:
        cfg, mcfg = self.train_cfg, self.model_cfg
        ctx = self._contexts_for(step, epoch)
        pairs = ctx.positives
        if len(pairs) == 0:
            raise ValueError(f"no walk contexts for snapshots up to {step}")
        rng = np.random.default_rng([cfg.seed, step, epoch, 23])
        pairs = pairs[rng.permutation(len(pairs))]
        total, count = 0.0, 0
        for lo in range(0, len(pairs), cfg.batch_size):
            batch = pairs[lo:lo + cfg.batch_size]
            negs = attach_negatives(batch, ctx.tables, mcfg.negatives_per_positive, rng)
            with Tape() as tape:
                emb = forward(self.graph, self.params, mcfg, up_to=step)
                loss = context_loss(emb, batch, negs, mcfg.negative_ratio, mcfg.reduction)
            value = loss.item()
            if not math.isfinite(value):
                raise DivergenceError(f"loss became {value} at step {step}, epoch {epoch}")
            for p in self.params.values():
                p.grad = None
            tape.backward(loss)
            grads = {k: (p.grad if p.grad is not None else np.zeros_like(p.data)) for k, p in self.params.items()}
            clip_gradients(grads, cfg.gradient_clip_norm)
            adam_step(self.params, grads, self.state.adam, cfg, self._decay)
            total += value * len(batch)
            count += len(batch)
        return total / count

    def run(
        self,
        halt_after: int | None = None,
        on_epoch: Callable[[int, int, float, float], None] | None = None,
        on_step: Callable[[Trainer], None] | None = None,
    ) -> TrainResult:
        """Train until done, or until ``halt_after`` more epochs have run.

        ``on_epoch(step, epoch, loss, wall_ms)`` fires after every epoch and
        ``on_step(trainer)`` after each evaluation step's parameters are kept.
        """
        st, cfg = self.state, self.train_cfg
        timings = []
        budget = halt_after
        while not st.finished and st.step <= self.graph.num_steps - 1:
            if st.epoch == 0 and not cfg.warm_start and st.step > cfg.min_step:
                self.params = init_params(self.model_cfg, self.graph.node_count, self.graph.num_steps, cfg.seed)
                st.adam = AdamState()
            while st.epoch < cfg.epochs_per_step:
                if budget is not None and budget <= 0:
                    return TrainResult(self.params, st, timings)
                t0 = time.perf_counter()
                loss = self._run_epoch(st.step, st.epoch)
                wall_ms = (time.perf_counter() - t0) * 1000.0
                st.loss_log.append((st.step, st.epoch, loss))
                timings.append((st.step, st.epoch, wall_ms))
                if on_epoch is not None:
                    on_epoch(st.step, st.epoch, loss, wall_ms)
                log.debug("step %d epoch %d loss %.6f", st.step, st.epoch, loss)
                st.epoch += 1
                if budget is not None:
                    budget -= 1
            st.step_params[st.step] = self.params.arrays()
            st.step += 1
            st.epoch = 0
            if st.step > self.graph.num_steps - 1:
                st.finished = True
            if on_step is not None:
                on_step(self)
        st.finished = True
        return TrainResult(self.params, st, timings)


def train(
    g: DynamicGraph,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    walk_cfg: WalkConfig | None = None,
    threads: int = 1,
) -> TrainResult:
    return Trainer(g, model_cfg, train_cfg, walk_cfg, threads=threads).run()


# ---------------------------------------------------------------------------
# Checkpoints
#
#   b"CDYS1"
#   u32 header length, UTF-8 JSON header (config echo, counters, seed, loss log)
#   u32 record count, then per record:
#       u16 name length, UTF-8 name, u8 ndim, ndim x u64 dims, float64 data
#   all little-endian
# ---------------------------------------------------------------------------

def _write_record(fh, name: str, arr: np.ndarray) -> None:
    raw = name.encode("utf-8")
    arr = np.ascontiguousarray(arr, dtype="<f8")
    fh.write(struct.pack("<H", len(raw)))
    fh.write(raw)
    fh.write(struct.pack("<B", arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
    fh.write(arr.tobytes())


def _read_exact(fh, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise ValueError("truncated checkpoint")
    return buf


def _read_record(fh) -> tuple[str, np.ndarray]:
    (nlen,) = struct.unpack("<H", _read_exact(fh, 2))
    name = _read_exact(fh, nlen).decode("utf-8")
    (ndim,) = struct.unpack("<B", _read_exact(fh, 1))
    shape = struct.unpack(f"<{ndim}Q", _read_exact(fh, 8 * ndim))
    count = int(np.prod(shape, dtype=np.int64))
    data = np.frombuffer(_read_exact(fh, 8 * count), dtype="<f8").astype(np.float64).reshape(shape)
    return name, data


@dataclass
class Checkpoint:
    params: dict[str, np.ndarray]
    state: TrainState
    config: dict
    seed: int

    def parameter_set(self) -> ParameterSet:
        return ParameterSet.from_arrays(self.params)


def save_checkpoint(path: str | Path, params: ParameterSet, state: TrainState, config: dict, seed: int) -> None:
    header = {
        "config": config,
        "seed": seed,
        "step": state.step,
        "epoch": state.epoch,
        "adam_t": state.adam.t,
        "finished": state.finished,
        "loss_log": [list(x) for x in state.loss_log],
    }
    records: list[tuple[str, np.ndarray]] = [(f"param/{k}", a) for k, a in params.arrays().items()]
    records += [(f"adam.m/{k}", a) for k, a in state.adam.m.items()]
    records += [(f"adam.v/{k}", a) for k, a in state.adam.v.items()]
    for step in sorted(state.step_params):
        records += [(f"step{step}/{k}", a) for k, a in state.step_params[step].items()]
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(raw)))
        fh.write(raw)
        fh.write(struct.pack("<I", len(records)))
        for name, arr in records:
            _write_record(fh, name, arr)
    tmp.replace(path)


def load_checkpoint(path: str | Path) -> Checkpoint:
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise ValueError(f"{path} is not a checkpoint (bad magic)")
        (hlen,) = struct.unpack("<I", _read_exact(fh, 4))
        header = json.loads(_read_exact(fh, hlen).decode("utf-8"))
        (count,) = struct.unpack("<I", _read_exact(fh, 4))
        records = [_read_record(fh) for _ in range(count)]
    params: dict[str, np.ndarray] = {}
    adam = AdamState(t=header["adam_t"])
    step_params: dict[int, dict[str, np.ndarray]] = {}
    for name, arr in records:
        kind, _, key = name.partition("/")
        if kind == "param":
            params[key] = arr
        elif kind == "adam.m":
            adam.m[key] = arr
        elif kind == "adam.v":
            adam.v[key] = arr
        elif kind.startswith("step"):
            step_params.setdefault(int(kind[4:]), {})[key] = arr
        else:
            raise ValueError(f"unknown checkpoint record {name!r}")
    state = TrainState(
        step=header["step"], epoch=header["epoch"], adam=adam,
        loss_log=[(int(s), int(e), float(x)) for s, e, x in header["loss_log"]],
        step_params=step_params, finished=header["finished"],
    )
    return Checkpoint(params, state, header["config"], header["seed"])


def config_echo(model_cfg: ModelConfig, train_cfg: TrainConfig, walk_cfg: WalkConfig) -> dict:
    return {"model": asdict(model_cfg), "train": asdict(train_cfg), "walk": asdict(walk_cfg)}
