"""Shared argument handling for the experiment scripts."""
import argparse
import json
import time
from dataclasses import replace
from pathlib import Path

from bgan.experiments import DeskSpec


def parser(description: str, iterations: int, seeds: str = "0,1,2") -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(description=description)
    p.add_argument("--iterations", type=int, default=iterations)
    p.add_argument("--seeds", default=seeds, help="comma-separated seeds")
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--n-train", type=int, default=2000)
    p.add_argument("--out", default="results")
    return p


def desk(args) -> DeskSpec:
    return replace(DeskSpec(), iterations=args.iterations, size=args.size, n_train=args.n_train)


def seeds(args) -> tuple[int, ...]:
    return tuple(int(s) for s in args.seeds.split(",") if s.strip())


def save(args, name: str, payload: dict, started: float) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    payload = {**payload, "seconds": time.perf_counter() - started}
    path = out / f"{name}.json"
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=str))
    print(json.dumps(payload, indent=2, sort_keys=True, default=str))
    return path
