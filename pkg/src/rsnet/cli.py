"""``rsnet`` command-line entry point.

Exit codes: 0 success, 1 validation or usage error, 2 numerical failure.
Every run writes a manifest: next to ``--out`` when given (``<dir>/manifest.json``
or ``<file>.manifest.json``), to ``--manifest`` when given, else to stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import platform
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .ablations import AXES, run_axis, write_csv
from .data import read_jsonl, synth_generate, write_jsonl
from .gradcheck import run_suite
from .graph import SkeletonTopology, build_adjacency, load_topology, normalize_adjacency
from .model import ModelConfig, RSNet, load_checkpoint, save_checkpoint
from .spectral import PowerIterationError, implicit_fairing, spectral_filter
from .splitting import ConvergenceError, solve_direct, solve_iterative, split, verify_properties
from .training import TrainConfig, TrainingDiverged, detector_preset, evaluate, gt_preset, train

log = logging.getLogger("rsnet")

BUNDLED = ("h36m17", "h36m16")
PRESETS = {"detector": detector_preset, "gt": gt_preset}


class UsageError(Exception):
    pass


class NumericalFailure(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


@dataclass
class RunManifest:
    command: str
    argv: list
    config: dict
    seed: int
    artifacts: dict = field(default_factory=dict)
    version: str = __version__
    python: str = platform.python_version()
    numpy: str = np.__version__


# ---------------------------------------------------------------- helpers

def resolve_skeleton(name: str) -> SkeletonTopology:
    """A path to a topology file, or a bundled name (``h36m17`` or ``h36m17.json``)."""
    path = Path(name)
    if path.exists():
        return load_topology(path)
    if path.stem in BUNDLED and path.parent == Path("."):
        return load_topology(path.stem)
    raise UsageError(f"skeleton {name!r} is neither a file nor one of {list(BUNDLED)}")


def _read_json(path: str) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise UsageError(f"no such file: {path}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON ({exc})") from None


def _read_data(path: str):
    if not Path(path).exists():
        raise UsageError(f"no such file: {path}")
    samples = read_jsonl(path)
    if not samples:
        raise UsageError(f"{path}: no samples")
    return samples


def _emit(obj) -> None:
    print(json.dumps(obj, indent=2))


def _write_manifest(args, manifest: RunManifest) -> None:
    target = args.manifest
    if target is None and getattr(args, "out", None):
        out = Path(args.out)
        target = out / "manifest.json" if out.is_dir() else out.with_name(out.name + ".manifest.json")
    if target is None:
        print(json.dumps(asdict(manifest)), file=sys.stderr)
    else:
        Path(target).write_text(json.dumps(asdict(manifest), indent=2) + "\n")


def load_run_config(path: str | None, seed: int) -> tuple[ModelConfig, TrainConfig]:
    """``{"preset": "gt"|"detector", "model": {...}, "train": {...}}``; every key optional."""
    doc = _read_json(path) if path else {}
    unknown = set(doc) - {"preset", "model", "train"}
    if unknown:
        raise UsageError(f"unknown config sections {sorted(unknown)}")
    preset = doc.get("preset", "gt")
    if preset not in PRESETS:
        raise UsageError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    train_cfg, model_over = PRESETS[preset]()
    model_doc = {**model_over, **doc.get("model", {})}
    model_cfg = ModelConfig.from_dict(model_doc)
    train_doc = {**train_cfg.to_dict(), "seed": seed, **doc.get("train", {})}
    return model_cfg, TrainConfig.from_dict(train_doc)


# --------------------------------------------------------------- commands

def cmd_solve_fairing(args) -> dict:
    topo = resolve_skeleton(args.skeleton)
    A_hat, L = normalize_adjacency(build_adjacency(topo))
    if args.signal:
        X = np.asarray(_read_json(args.signal), dtype=np.float64)
        if X.ndim == 1:
            X = X[:, None]
    else:
        X = np.random.default_rng(args.seed).standard_normal((topo.num_joints, args.features))
    sp = split(A_hat, args.s)
    try:
        H, trace = solve_iterative(sp, X, tol=args.tol, max_iter=args.max_iter, keep_iterates=False)
    except ConvergenceError as exc:
        raise NumericalFailure(str(exc)) from None
    H_lu = solve_direct(sp, X)
    H_filt = spectral_filter(L, X, implicit_fairing(args.s))
    rel = lambda a, b: float(np.linalg.norm(a - b) / np.linalg.norm(b))
    result = {"s": args.s, "num_nodes": topo.num_joints, "steps": trace.steps,
              "residual_norms": trace.residual_norms, "true_residual": trace.true_residual,
              "rel_error_vs_direct": rel(H, H_lu), "rel_error_vs_spectral": rel(H, H_filt),
              "solution": H.tolist()}
    if args.out:
        Path(args.out).write_text(json.dumps(result) + "\n")
        result = {k: v for k, v in result.items() if k not in ("solution", "residual_norms")}
    _emit(result)
    return {"skeleton": topo.to_dict(), "s": args.s, "tol": args.tol, "max_iter": args.max_iter,
            "features": int(X.shape[1]), "signal": args.signal}


def cmd_verify_splitting(args) -> dict:
    topo = resolve_skeleton(args.skeleton)
    A_hat, _ = normalize_adjacency(build_adjacency(topo))
    try:
        report = verify_properties(split(A_hat, args.s), tol=args.tol)
    except PowerIterationError as exc:
        raise NumericalFailure(str(exc)) from None
    doc = report.to_dict()
    if args.out:
        Path(args.out).write_text(json.dumps(doc, indent=2) + "\n")
    _emit(doc)
    if not report.all_passed:
        failed = [c.name for c in report.checks if not c.passed]
        raise NumericalFailure(f"splitting properties failed: {failed}")
    return {"skeleton": topo.to_dict(), "s": args.s, "tol": args.tol}


def cmd_gradcheck(args) -> dict:
    if not args.all:
        raise UsageError("gradcheck needs --all")
    rows = run_suite(args.num_seeds)
    width = max(len(r["name"]) for r in rows)
    print(f"{'check':<{width}}  {'max_rel_error':>13}  {'tolerance':>9}  status")
    for r in rows:
        status = "pass" if r["passed"] else "FAIL"
        print(f"{r['name']:<{width}}  {r['max_rel_error']:>13.3e}  {r['tolerance']:>9.0e}  {status}")
    if args.out:
        with open(args.out, "w", newline="") as f:
            w = csv.DictWriter(f, fieldnames=["name", "max_rel_error", "tolerance", "passed"])
            w.writeheader()
            w.writerows(rows)
    if not all(r["passed"] for r in rows):
        raise NumericalFailure("gradient check failed")
    return {"num_seeds": args.num_seeds}


def cmd_synth_data(args) -> dict:
    topo = resolve_skeleton(args.skeleton)
    if args.count < 1:
        raise UsageError("--count must be >= 1")
    samples = synth_generate(topo, args.count, args.seed)
    write_jsonl(samples, args.out)
    print(f"wrote {len(samples)} samples to {args.out}")
    return {"skeleton": topo.to_dict(), "count": args.count}


def cmd_train(args) -> dict:
    model_cfg, train_cfg = load_run_config(args.config, args.seed)
    if args.epochs is not None:
        train_cfg.epochs = args.epochs
    train_set = _read_data(args.data)
    eval_set = _read_data(args.eval_data) if args.eval_data else None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    model = RSNet(model_cfg, seed=args.seed)
    try:
        result = train(model, train_set, train_cfg, eval_set, out_dir=out, log_every=1)
    except TrainingDiverged as exc:
        raise NumericalFailure(str(exc)) from None
    save_checkpoint(model, out / "final.json", {"epoch": train_cfg.epochs - 1})
    print(result.records[-1].to_json())
    return {"model": model_cfg.to_dict(), "train": train_cfg.to_dict(), "data": args.data,
            "eval_data": args.eval_data}


def cmd_eval(args) -> dict:
    if not Path(args.checkpoint).exists():
        raise UsageError(f"no such file: {args.checkpoint}")
    model = load_checkpoint(args.checkpoint)
    rec = evaluate(model, _read_data(args.data), flip_test=args.flip_test)
    line = rec.to_json()
    print(line)
    if args.out:
        Path(args.out).write_text(line + "\n")
    return {"checkpoint": args.checkpoint, "data": args.data, "flip_test": args.flip_test}


def cmd_ablate(args) -> dict:
    model_cfg, train_cfg = load_run_config(args.config, args.seed)
    if args.epochs is not None:
        train_cfg.epochs = args.epochs
    train_set = _read_data(args.data)
    eval_set = _read_data(args.eval_data) if args.eval_data else train_set
    axes = sorted(AXES) if args.axis == "all" else [args.axis]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    try:
        for axis in axes:
            rows += run_axis(axis, train_set, eval_set, model_cfg, train_cfg, args.seed, out)
    except TrainingDiverged as exc:
        raise NumericalFailure(str(exc)) from None
    write_csv(rows, out / "ablations.csv")
    for r in rows:
        print(f"{r['axis']:<10} {r['arm']:<15} mpjpe {r['mpjpe_mm']:8.2f}  pa {r['pa_mpjpe_mm']:8.2f}")
    return {"model": model_cfg.to_dict(), "train": train_cfg.to_dict(), "axes": axes,
            "data": args.data, "eval_data": args.eval_data}


# ----------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="rsnet", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"rsnet {__version__}")
    sub = p.add_subparsers(dest="command", parser_class=_Parser, required=True)

    def add(name, func, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--seed", type=int, default=42)
        sp.add_argument("--manifest", default=None, help="manifest path (default: next to --out)")
        sp.set_defaults(func=func)
        return sp

    sp = add("solve-fairing", cmd_solve_fairing, "iterative implicit-fairing solve with oracle comparison")
    sp.add_argument("--skeleton", default="h36m17")
    sp.add_argument("--s", type=float, required=True)
    sp.add_argument("--signal", help="JSON file with an N x F signal (default: seeded Gaussian)")
    sp.add_argument("--features", type=int, default=3)
    sp.add_argument("--tol", type=float, default=1e-10)
    sp.add_argument("--max-iter", type=int, default=10_000)
    sp.add_argument("--out")

    sp = add("verify-splitting", cmd_verify_splitting, "check the five splitting properties")
    sp.add_argument("--skeleton", default="h36m17")
    sp.add_argument("--s", type=float, required=True)
    sp.add_argument("--tol", type=float, default=1e-8)
    sp.add_argument("--out")

    sp = add("gradcheck", cmd_gradcheck, "finite-difference checks of every primitive and layer")
    sp.add_argument("--all", action="store_true")
    sp.add_argument("--num-seeds", type=int, default=5)
    sp.add_argument("--out", help="CSV table path")

    sp = add("synth-data", cmd_synth_data, "generate a synthetic 2-D/3-D dataset (JSON Lines)")
    sp.add_argument("--skeleton", default="h36m17")
    sp.add_argument("--count", type=int, required=True)
    sp.add_argument("--out", required=True)

    sp = add("train", cmd_train, "train a model; writes metrics.jsonl, best.json, final.json")
    sp.add_argument("--config")
    sp.add_argument("--data", required=True)
    sp.add_argument("--eval-data")
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--out", required=True)

    sp = add("eval", cmd_eval, "evaluate a checkpoint; prints one metrics record")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--flip-test", action="store_true")
    sp.add_argument("--out")

    sp = add("ablate", cmd_ablate, "paired ablation runs, logged to ablations.csv")
    sp.add_argument("--axis", choices=sorted(AXES) + ["all"], default="all")
    sp.add_argument("--config")
    sp.add_argument("--data", required=True)
    sp.add_argument("--eval-data")
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--out", required=True)
    return p


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
    code = 0
    config: dict = {}
    try:
        config = args.func(args)
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        code = 2
    except (UsageError, ValueError, KeyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    artifacts = {k: getattr(args, k) for k in ("out", "data", "eval_data", "checkpoint", "signal")
                 if getattr(args, k, None)}
    _write_manifest(args, RunManifest(args.command, argv, config or {}, args.seed, artifacts))
    return code


if __name__ == "__main__":
    sys.exit(main())
