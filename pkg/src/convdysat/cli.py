"""``convdysat`` command line: ingest, train, evaluate, gradcheck.

Exit codes: 0 ok, 2 bad input, 3 training diverged, 4 shape mismatch,
5 gradient check failed.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .config import ConfigError, RunConfig, load_config
from .evaluation import evaluate
from .graph import EdgeListError, build_snapshots, read_edge_list, write_snapshot
from .gradcheck import SIZES, run_suite
from .model import ParameterSet, check_params
from .tensor import ShapeError
from .training import (
    DivergenceError, Trainer, config_echo, load_checkpoint, save_checkpoint,
)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_DIVERGED = 3
EXIT_SHAPE = 4
EXIT_GRADCHECK = 5

log = logging.getLogger("convdysat")


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_INPUT):
        super().__init__(message)
        self.code = code


def _threads(args, cfg: RunConfig | None = None) -> int:
    if args.threads is not None:
        n = args.threads
    elif os.environ.get("CONVDYSAT_THREADS"):
        try:
            n = int(os.environ["CONVDYSAT_THREADS"])
        except ValueError:
            raise CliError("CONVDYSAT_THREADS must be an integer") from None
    else:
        n = cfg.run.threads if cfg is not None else 1
    if n < 1:
        raise CliError("thread count must be at least 1")
    return n


def _load_graph(path: str, steps: int, mode: str):
    try:
        records = read_edge_list(path)
    except OSError as exc:
        raise CliError(f"cannot read edge list {path}: {exc.strerror}") from None
    except EdgeListError as exc:
        raise CliError(f"{path}: {exc}") from None
    try:
        return build_snapshots(records, steps, mode)
    except ValueError as exc:
        raise CliError(f"{path}: {exc}") from None


def _load_run_config(args) -> RunConfig:
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        raise CliError(str(exc)) from None
    if getattr(args, "out", None):
        cfg.run.out = args.out
    return cfg


# ---------------------------------------------------------------------------

def cmd_ingest(args) -> int:
    g = _load_graph(args.edges, args.steps, args.mode)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    width = len(str(g.num_steps))
    files = []
    for snap in g.snapshots:
        name = f"snapshot_{snap.time_index:0{width}d}.txt"
        with open(out / name, "w", encoding="utf-8") as fh:
            write_snapshot(snap, g.labels, fh)
        files.append(name)
    manifest = {
        "source": str(Path(args.edges).resolve()),
        "mode": args.mode,
        "steps": g.num_steps,
        "nodes": g.node_count,
        "links_per_step": [s.num_links for s in g.snapshots],
        "snapshot_files": files,
        "labels": list(g.labels),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    print(f"{g.node_count} nodes, {g.num_steps} snapshots, links per step {manifest['links_per_step']} -> {out}")
    return EXIT_OK


def _write_metrics_header(path: Path, rows) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epoch,time_step,loss\n")
        for step, epoch, loss in rows:
            fh.write(f"{epoch},{step},{loss!r}\n")


def cmd_train(args) -> int:
    cfg = _load_run_config(args)
    g = _load_graph(cfg.data.path, cfg.data.steps, cfg.data.mode)
    out = Path(cfg.run.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg.write(out / "config.json")
    ckpt_path = out / "checkpoint.bin"
    echo = config_echo(cfg.model, cfg.train, cfg.walk)

    params = state = None
    if args.resume:
        if not ckpt_path.exists():
            raise CliError(f"--resume given but {ckpt_path} does not exist")
        try:
            ckpt = load_checkpoint(ckpt_path)
        except (OSError, ValueError) as exc:
            raise CliError(f"cannot load {ckpt_path}: {exc}") from None
        if json.loads(json.dumps(echo)) != ckpt.config:
            raise CliError(f"{ckpt_path} was written with a different configuration")
        params, state = ckpt.parameter_set(), ckpt.state
        check_params(params, cfg.model, g.node_count, g.num_steps)

    trainer = Trainer(g, cfg.model, cfg.train, cfg.walk, params=params, state=state, threads=_threads(args, cfg))
    metrics = out / "metrics.csv"
    timing = out / "timing.csv"
    _write_metrics_header(metrics, trainer.state.loss_log)
    if not args.resume or not timing.exists():
        timing.write_text("epoch,time_step,wall_ms\n", encoding="utf-8")

    with open(metrics, "a", encoding="utf-8") as mfh, open(timing, "a", encoding="utf-8") as tfh:
        def on_epoch(step, epoch, loss, wall_ms):
            mfh.write(f"{epoch},{step},{loss!r}\n")
            mfh.flush()
            tfh.write(f"{epoch},{step},{wall_ms:.3f}\n")

        def on_step(tr):
            save_checkpoint(ckpt_path, tr.params, tr.state, echo, cfg.train.seed)

        try:
            result = trainer.run(halt_after=args.halt_after, on_epoch=on_epoch, on_step=on_step)
        except DivergenceError as exc:
            raise CliError(f"training diverged: {exc}; last checkpoint kept at {ckpt_path}", EXIT_DIVERGED) from None
    save_checkpoint(ckpt_path, result.params, result.state, echo, cfg.train.seed)
    st = result.state
    status = "finished" if st.finished else f"halted at step {st.step}, epoch {st.epoch}"
    last = f", last loss {st.loss_log[-1][2]:.6f}" if st.loss_log else ""
    print(f"training {status}{last}; checkpoint {ckpt_path}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = _load_run_config(args)
    g = _load_graph(cfg.data.path, cfg.data.steps, cfg.data.mode)
    try:
        ckpt = load_checkpoint(args.checkpoint)
    except OSError as exc:
        raise CliError(f"cannot read checkpoint {args.checkpoint}: {exc.strerror}") from None
    except ValueError as exc:
        raise CliError(f"cannot load checkpoint {args.checkpoint}: {exc}") from None
    if not ckpt.state.step_params:
        raise CliError("checkpoint holds no trained time steps to evaluate")
    params_by_step = {}
    for t, arrays in sorted(ckpt.state.step_params.items()):
        ps = ParameterSet.from_arrays(arrays)
        check_params(ps, cfg.model, g.node_count, g.num_steps)
        params_by_step[t] = ps
    seeds = list(range(args.seeds)) if args.seeds is not None else list(cfg.run.seeds)
    if not seeds:
        raise CliError("need at least one seed")
    try:
        report = evaluate(g, params_by_step, cfg.model, seeds)
    except ValueError as exc:
        raise CliError(f"evaluation failed: {exc}") from None
    out = Path(cfg.run.out)
    out.mkdir(parents=True, exist_ok=True)
    report.write_csv(out / "eval.csv")
    report.write_summary(out / "summary.json")
    s = report.summary()
    print(f"micro-AUC {s['micro_mean']:.4f} ± {s['micro_std']:.4f}  "
          f"macro-AUC {s['macro_mean']:.4f} ± {s['macro_std']:.4f}  ({len(seeds)} seeds)")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    results = run_suite(args.sizes)
    for r in results:
        verdict = "ok" if r.passed else "FAIL"
        print(f"{r.component:<46} max rel err {r.error:.3e}  (tol {r.tolerance:.0e})  {verdict}")
    failed = [r.component for r in results if not r.passed]
    if failed:
        raise CliError("gradient check failed for: " + ", ".join(failed), EXIT_GRADCHECK)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="convdysat", description="Dynamic graph embeddings with ConvDySAT.")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="bin an edge list into snapshots")
    p.add_argument("--edges", required=True, help="edge list: u v [weight] timestamp")
    p.add_argument("--steps", type=int, required=True, help="number of snapshots T")
    p.add_argument("--mode", choices=("binned", "cumulative"), default="cumulative")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", help="train and checkpoint a model")
    p.add_argument("--config", required=True, help="flat JSON config, or 'toy' for the bundled one")
    p.add_argument("--out", help="output directory (overrides run.out)")
    p.add_argument("--resume", action="store_true", help="continue from OUT/checkpoint.bin")
    p.add_argument("--halt-after", type=int, metavar="N", help="stop after N more epochs")
    p.add_argument("--threads", type=int, help="worker cap (default: $CONVDYSAT_THREADS or run.threads)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="link-prediction AUC of a trained checkpoint")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--seeds", type=int, help="evaluate seeds 0..N-1 (default: run.seeds)")
    p.add_argument("--out", help="output directory (overrides run.out)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("gradcheck", help="finite-difference check of every layer")
    p.add_argument("--sizes", choices=sorted(SIZES), default="small")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "halt_after", None) is not None and args.halt_after < 0:
        print("convdysat: --halt-after must be non-negative", file=sys.stderr)
        return EXIT_INPUT
    if getattr(args, "seeds", None) is not None and args.seeds < 1:
        print("convdysat: --seeds must be at least 1", file=sys.stderr)
        return EXIT_INPUT
    try:
        return args.func(args)
    except CliError as exc:
        print(f"convdysat: {exc}", file=sys.stderr)
        return exc.code
    except ShapeError as exc:
        print(f"convdysat: shape mismatch: {exc}", file=sys.stderr)
        return EXIT_SHAPE


if __name__ == "__main__":
    sys.exit(main())
