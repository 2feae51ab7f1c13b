"""Command-line entry point: ``bgan <subcommand> [--config FILE] [--key value ...]``.

Every invocation creates a fresh ``<runs>/<timestamp>-<hash>`` directory holding
its outputs and a ``manifest.json``. Exit codes: 0 success, 2 invalid
configuration or arguments, 3 training/estimation divergence, 4 I/O or file
format error.
"""
from __future__ import annotations

import argparse
import csv
import datetime as _dt
import hashlib
import json
import sys
import warnings
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .baselines import nlm_denoise
from .clustering import METHODS, accuracy, cluster_two, embed, write_embedding
from .config import ConfigError, ExperimentConfig
from .contamination import contaminate_pairs
from .losses import ABLATION_GRID, ReconLoss, ScoringRule
from .metrics import report
from .networks import LINEAR, SIGMOID
from .phantoms import corrupt, render_phantoms
from .robust import EstimateBudget, scaling_sweep, write_sweep
from .stack_io import (
    CheckpointCorruptError,
    ImageStack,
    RunManifest,
    StackFormatError,
    fingerprint,
    load_checkpoint,
    read_stack,
    save_checkpoint,
    write_stack,
)
from .trainer import DivergenceError, deterministic_env, denoise, model_from_blob, model_to_blob, train

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_IO = 0, 2, 3, 4

LAMBDA_GRID = [0.1, 1.0, 5.0, 10.0, 50.0, 100.0, 500.0, 10000.0]
CONTAMINATION_GRID = [(t, e) for t in ("A", "B", "C") for e in (0.0, 0.1, 0.2, 0.3)]
SWEEP_COLUMNS = ["cell", "model", "rule", "lambda", "type", "epsilon",
                 "test_mse", "test_psnr", "test_ssim", "final_train_mse"]


# ---------------------------------------------------------------- run directories


class Run:
    def __init__(self, command: str, cfg: ExperimentConfig, extra: dict):
        self.command = command
        self.cfg = cfg
        self.record = {"command": command, "config": cfg.to_dict(), "args": extra}
        # the hash names the experiment, not where its outputs are stored
        keyed = {**self.record, "config": {k: v for k, v in self.record["config"].items() if k != "paths"}}
        digest = hashlib.sha256(json.dumps(keyed, sort_keys=True).encode()).hexdigest()[:8]
        stamp = _dt.datetime.now().strftime("%Y%m%d-%H%M%S")
        root = Path(cfg.paths.runs)
        root.mkdir(parents=True, exist_ok=True)
        path = root / f"{stamp}-{digest}"
        k = 1
        while path.exists():
            path = root / f"{stamp}-{digest}-{k}"
            k += 1
        path.mkdir()
        self.dir = path
        self.run_id = path.name
        self.outputs: list[Path] = []
        self.inputs: list[Path] = []

    def out(self, name: str) -> Path:
        p = self.dir / name
        self.outputs.append(p)
        return p

    def manifest(self) -> RunManifest:
        prints = {}
        for p in self.inputs:
            prints[f"input:{p}"] = fingerprint(p)
        for p in self.outputs:
            if p.exists():
                prints[p.name] = fingerprint(p)
        return RunManifest(self.run_id, self.record, self.cfg.seed,
                           _dt.datetime.now().isoformat(timespec="seconds"), prints)

    def finish(self) -> None:
        self.manifest().write(self.dir / "manifest.json")
        print(self.dir)


# ---------------------------------------------------------------- helpers


def _floats(text: str) -> list[float]:
    vals = [v for v in text.replace(";", ",").split(",") if v.strip()]
    return [float(v) for v in vals]


def _ints(text: str) -> list[int]:
    return [int(v) for v in _floats(text)]


def _rule_value(text: str):
    if text.strip().lower() in ("none", "autoencoder", "ae"):
        return None
    return ScoringRule.parse(text).to_dict()


def _head_for(rule: dict | None) -> str:
    return LINEAR if rule is not None and rule["kind"] == "WGAN" else SIGMOID


def _read(path) -> ImageStack:
    return read_stack(path)


def _split(n: int, test_fraction: float, seed: int):
    perm = np.random.default_rng([seed, 7]).permutation(n)
    n_test = int(round(test_fraction * n))
    return np.sort(perm[n_test:]), np.sort(perm[:n_test])


def _generate(cfg: ExperimentConfig) -> tuple[ImageStack, ImageStack]:
    clean = render_phantoms(cfg.phantom, cfg.data.n_per_conformation, cfg.seed)
    noisy = corrupt(clean, cfg.forward, cfg.seed)
    return clean, noisy


def _pairs(args, cfg: ExperimentConfig, run: Run) -> tuple[ImageStack, ImageStack]:
    if args.refs and args.noisy:
        run.inputs += [Path(args.refs), Path(args.noisy)]
        return _read(args.refs), _read(args.noisy)
    if args.refs or args.noisy:
        raise ConfigError("--refs and --noisy must be given together")
    return _generate(cfg)


def _train_eval(cfg: ExperimentConfig, refs: ImageStack, noisy: ImageStack,
                test: tuple[ImageStack, ImageStack]):
    G, log = train((refs, noisy), cfg.train_config(), cfg.arch, test_pairs=test)
    out = denoise(G, test[1])
    rep = report(test[0], out, cfg.metrics)
    return G, log, rep


# ---------------------------------------------------------------- subcommands


def cmd_generate(args, cfg):
    run = Run("generate", cfg, {})
    clean, noisy = _generate(cfg)
    write_stack(clean, run.out("clean.bgis"))
    write_stack(noisy, run.out("noisy.bgis"))
    run.finish()


def cmd_contaminate(args, cfg):
    run = Run("contaminate", cfg, {"refs": args.refs, "noisy": args.noisy})
    refs, noisy = _pairs(args, cfg, run)
    new_refs, new_noisy, flags = contaminate_pairs(refs, noisy, cfg.contamination)
    write_stack(new_refs, run.out("refs.bgis"))
    write_stack(new_noisy, run.out("noisy.bgis"))
    record = new_refs.meta["contamination"]
    run.out("flags.json").write_text(json.dumps(
        {**record, "count": int(flags.sum()), "n": int(len(flags))}, indent=2, sort_keys=True))
    run.finish()


def cmd_train(args, cfg):
    run = Run("train", cfg, {"refs": args.refs, "noisy": args.noisy})
    refs, noisy = _pairs(args, cfg, run)
    tr, te = _split(refs.count, cfg.data.test_fraction, cfg.seed)
    train_pairs = (refs.subset(tr), noisy.subset(tr))
    test_pairs = (refs.subset(te), noisy.subset(te)) if len(te) else None
    G, log = train(train_pairs, cfg.train_config(), cfg.arch, test_pairs=test_pairs)
    log.write_csv(run.out("train_log.csv"))
    run.out("split.json").write_text(json.dumps({"train": tr.tolist(), "test": te.tolist()}))
    if test_pairs is not None:
        write_stack(test_pairs[0], run.out("test_refs.bgis"))
        write_stack(test_pairs[1], run.out("test_noisy.bgis"))
    manifest = run.manifest()
    save_checkpoint(model_to_blob(G, cfg.arch), manifest, run.out("model.bgck"))
    run.finish()


def cmd_denoise(args, cfg):
    run = Run("denoise", cfg, {"noisy": args.noisy, "checkpoint": args.checkpoint, "method": args.method})
    run.inputs.append(Path(args.noisy))
    noisy = _read(args.noisy)
    if args.method == "nlm":
        out = nlm_denoise(noisy, cfg.nlm)
    else:
        if not args.checkpoint:
            raise ConfigError("denoise --method gan needs --checkpoint")
        run.inputs.append(Path(args.checkpoint))
        blob, _ = load_checkpoint(args.checkpoint)
        G, _arch = model_from_blob(blob)
        out = denoise(G, noisy)
    write_stack(out, run.out("denoised.bgis"))
    run.finish()


def cmd_evaluate(args, cfg):
    run = Run("evaluate", cfg, {"refs": args.refs, "tests": args.tests})
    run.inputs += [Path(args.refs), Path(args.tests)]
    rep = report(_read(args.refs), _read(args.tests), cfg.metrics)
    rep.write_csv(run.out("metrics.csv"))
    rep.write_json(run.out("metrics.json"))
    print(rep.table_row(args.label or "evaluated"))
    run.finish()


def cmd_import(args, cfg):
    """Convert an external (count, d1, d2) or (d1, d2) .npy float array into a stack."""
    run = Run("import", cfg, {"array": args.array, "labels": args.labels})
    run.inputs.append(Path(args.array))
    arr = np.load(args.array, allow_pickle=False)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3 or not np.issubdtype(arr.dtype, np.number):
        raise ConfigError(f"expected a numeric (count, d1, d2) array, got {arr.dtype} {arr.shape}")
    labels = None
    if args.labels:
        run.inputs.append(Path(args.labels))
        labels = np.load(args.labels, allow_pickle=False)
    raw = arr.astype(np.float64)
    lo, hi = float(raw.min()), float(raw.max())
    scaled = (raw - lo) / (hi - lo) if hi > lo else np.zeros_like(raw)
    stack = ImageStack(scaled.astype(np.float32), labels,
                       {"source": "import", "origin": str(args.array), "normalization": {"min": lo, "max": hi}})
    write_stack(stack, run.out("imported.bgis"))
    run.finish()


def _sweep_cells(grid: str, values: str | None):
    if grid == "rule":
        if values is None:
            return [{"rule": ScoringRule(alpha=a, beta=b).to_dict()} for a, b in ABLATION_GRID]
        return [{"rule": _rule_value(v)} for v in values.split(";") if v.strip()]
    if grid == "lambda":
        lams = LAMBDA_GRID if values is None else _floats(values)
        return [{"lambda": v} for v in lams]
    if grid == "contamination":
        if values is None:
            cells = CONTAMINATION_GRID
        else:
            cells = []
            for item in values.split(";"):
                if item.strip():
                    t, e = item.split(":")
                    cells.append((t.strip().upper(), float(e)))
        return [{"type": t, "epsilon": e} for t, e in cells]
    raise ConfigError(f"unknown grid {grid!r}; valid: rule, lambda, contamination")


def cmd_sweep(args, cfg):
    cells = _sweep_cells(args.grid, args.values)
    if not cells:
        raise ConfigError(f"the {args.grid} grid is empty")
    # validate every cell before any training starts
    cell_cfgs = []
    for cell in cells:
        d = cfg.to_dict()
        if "rule" in cell:
            d["rule"] = cell["rule"]
            d["arch"]["head"] = _head_for(cell["rule"])
        if "lambda" in cell:
            d["recon"]["weight"] = cell["lambda"]
        if "type" in cell:
            d["contamination"]["type"] = cell["type"]
            d["contamination"]["epsilon"] = cell["epsilon"]
        c = cfgmod.from_dict(d)
        c.validate()
        cell_cfgs.append(c)
    run = Run("sweep", cfg, {"grid": args.grid, "values": args.values, "refs": args.refs, "noisy": args.noisy})
    refs, noisy = _pairs(args, cfg, run)
    tr, te = _split(refs.count, cfg.data.test_fraction, cfg.seed)
    if not len(te):
        raise ConfigError("[data] sweep needs a nonzero test_fraction")
    test = (refs.subset(te), noisy.subset(te))
    rows = []
    for i, (cell, c) in enumerate(zip(cells, cell_cfgs)):
        tr_refs, tr_noisy = refs.subset(tr), noisy.subset(tr)
        if "type" in cell:
            tr_refs, tr_noisy, _ = contaminate_pairs(tr_refs, tr_noisy, c.contamination)
        _G, log, rep = _train_eval(c, tr_refs, tr_noisy, test)
        log.write_csv(run.out(f"cell{i:02d}_log.csv"))
        s = rep.summary
        rows.append([i, c.train_config().name, "none" if c.rule is None else c.rule.name,
                     repr(c.recon.weight), c.contamination.type, repr(c.contamination.epsilon),
                     repr(s["mse_mean"]), repr(s["psnr_mean"]), repr(s["ssim_mean"]),
                     repr(float(log.column("train_mse")[-1]) if len(log) else float("nan"))])
    with open(run.out("sweep.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        w.writerows(rows)
    run.finish()


def cmd_cluster(args, cfg):
    run = Run("cluster", cfg, {"noisy": args.noisy, "checkpoint": args.checkpoint})
    if args.noisy:
        run.inputs.append(Path(args.noisy))
        stack = _read(args.noisy)
    else:
        _clean, stack = _generate(cfg)
    if stack.labels is None:
        raise ConfigError("clustering needs a labelled stack")
    lo, hi = int(stack.labels.min()), int(stack.labels.max())
    keep = np.flatnonzero((stack.labels == lo) | (stack.labels == hi))
    stack = stack.subset(keep)
    if args.checkpoint:
        run.inputs.append(Path(args.checkpoint))
        blob, _ = load_checkpoint(args.checkpoint)
        G, _arch = model_from_blob(blob)
        stack = denoise(G, stack)
    pts = embed(stack, cfg.embedding)
    labels, history = cluster_two(pts, cfg.embedding.seed)
    acc = accuracy(labels, stack.labels)
    write_embedding(run.out("embedding.csv"), pts, stack.labels, labels)
    run.out("cluster.json").write_text(json.dumps(
        {"accuracy": acc, "method": cfg.embedding.method, "classes": [lo, hi],
         "count": int(len(keep)), "inertia_history": history}, indent=2, sort_keys=True))
    print(f"accuracy {acc:.4f}")
    run.finish()


def cmd_robust(args, cfg):
    sw = cfg.robust
    if not sw.n_grid or not sw.eps_grid:
        raise ConfigError("[robust] n and epsilon grids must be nonempty")
    rule = cfg.rule if cfg.rule is not None else ScoringRule(alpha=0.5, beta=0.5)
    run = Run("robust-estimate", cfg, {})
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        result = scaling_sweep(sw, rule, cfg.budget)
    write_sweep(result, run.out("sweep.csv"), run.out("sweep.json"))
    for k, v in sorted(result["slopes"].items()):
        print(f"slope {k}: {v:.3f}")
    run.finish()


# ---------------------------------------------------------------- argument parsing

# flag -> dotted config path and value parser
OVERRIDES = {
    "generate": {"snr": ("forward.snr", float), "size": ("phantom.size", int),
                 "n": ("data.n_per_conformation", int)},
    "contaminate": {"type": ("contamination.type", str.upper), "epsilon": ("contamination.epsilon", float),
                    "q-seed": ("contamination.seed", int)},
    "train": {"rule": ("rule", _rule_value), "lambda": ("recon.weight", float), "recon-p": ("recon.p", int),
              "iterations": ("train.iterations", int), "snr": ("forward.snr", float),
              "size": ("phantom.size", int), "n": ("data.n_per_conformation", int)},
    "denoise": {},
    "evaluate": {},
    "import": {},
    "sweep": {"iterations": ("train.iterations", int), "snr": ("forward.snr", float),
              "size": ("phantom.size", int), "n": ("data.n_per_conformation", int),
              "recon-p": ("recon.p", int)},
    "cluster": {"method": ("embedding.method", str.upper), "k-nn": ("embedding.k_nn", int),
                "snr": ("forward.snr", float), "n": ("data.n_per_conformation", int),
                "size": ("phantom.size", int)},
    "robust-estimate": {"p": ("robust.p", int), "n": ("robust.n_grid", _ints),
                        "epsilon": ("robust.eps_grid", _floats), "reps": ("robust.repetitions", int),
                        "radial": ("robust.radial", str.upper), "steps": ("budget.steps", int),
                        "rule": ("rule", _rule_value)},
}

HANDLERS = {
    "generate": cmd_generate, "contaminate": cmd_contaminate, "train": cmd_train,
    "denoise": cmd_denoise, "evaluate": cmd_evaluate, "import": cmd_import, "sweep": cmd_sweep,
    "cluster": cmd_cluster, "robust-estimate": cmd_robust,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bgan", description="Adversarial denoising experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in HANDLERS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON experiment config")
        p.add_argument("--runs", help="root directory for run folders")
        p.add_argument("--seed", type=int)
        p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=JSON",
                       help="override any config key; value parsed as JSON when possible")
        for flag in OVERRIDES[name]:
            p.add_argument(f"--{flag}", dest=flag.replace("-", "_"))
        if name in ("contaminate", "train", "sweep"):
            p.add_argument("--refs")
            p.add_argument("--noisy")
        if name == "denoise":
            p.add_argument("--noisy", required=True)
            p.add_argument("--checkpoint")
            p.add_argument("--method", choices=["gan", "nlm"], default="gan")
        if name == "evaluate":
            p.add_argument("--refs", required=True)
            p.add_argument("--tests", required=True)
            p.add_argument("--label")
        if name == "sweep":
            p.add_argument("--grid", required=True, choices=["rule", "lambda", "contamination"])
            p.add_argument("--values", help="';'-separated cells; omitted means the standard grid")
        if name == "import":
            p.add_argument("--array", required=True, help=".npy array of images")
            p.add_argument("--labels", help=".npy integer labels")
        if name == "cluster":
            p.add_argument("--noisy")
            p.add_argument("--checkpoint")
    return parser


def _json_or_str(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def resolve_config(args) -> ExperimentConfig:
    overrides: dict = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects SECTION.KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = _json_or_str(value)
    for flag, (path, parse) in OVERRIDES[args.command].items():
        raw = getattr(args, flag.replace("-", "_"))
        if raw is not None:
            try:
                overrides[path] = parse(raw)
            except ValueError as exc:
                raise ConfigError(f"--{flag}: {exc}") from None
    if args.seed is not None:
        overrides["seed"] = args.seed
        overrides["train.seed"] = args.seed
    if args.runs:
        overrides["paths.runs"] = args.runs
    # an explicit rule change also picks the matching discriminator head
    if "rule" in overrides and "arch.head" not in overrides:
        overrides["arch.head"] = _head_for(overrides["rule"])
    if "phantom.size" in overrides and "arch.size" not in overrides:
        overrides["arch.size"] = overrides["phantom.size"]
    if args.command == "cluster" and "embedding.method" in overrides:
        m = overrides["embedding.method"]
        if m not in METHODS:
            raise ConfigError(f"[embedding] unknown method {m!r}; valid: {', '.join(METHODS)}")
    cfg = cfgmod.load(args.config, overrides)
    if deterministic_env():
        cfg = replace(cfg, train=replace(cfg.train, deterministic=True))
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        cfg = resolve_config(args)
        HANDLERS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DivergenceError, FloatingPointError) as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (OSError, StackFormatError, CheckpointCorruptError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
