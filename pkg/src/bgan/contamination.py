"""Huber contamination: exact-count pair replacement (types A/B/C) and Bernoulli mixtures."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .stack_io import ImageStack

TYPES = ("A", "B", "C", "MIXTURE")


@dataclass
class ContaminationSpec:
    epsilon: float = 0.0
    type: str = "A"
    q_mean: float = 0.5
    q_std: float = 0.15
    seed: int = 0

    def validate(self) -> None:
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError(f"epsilon must lie in [0, 1], got {self.epsilon}")
        if self.type not in TYPES:
            raise ValueError(f"unknown contamination type {self.type!r}; valid: {', '.join(TYPES)}")
        if self.q_std < 0:
            raise ValueError("q_std must be >= 0")


def draw_q(spec: ContaminationSpec, n: int, shape: tuple[int, int], rng: np.random.Generator) -> np.ndarray:
    """Replacement images: i.i.d. Gaussian pixels clipped to [0, 1]."""
    out = rng.normal(spec.q_mean, spec.q_std, size=(n, *shape))
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def contaminate_pairs(refs: ImageStack, noisy: ImageStack, spec: ContaminationSpec):
    """Replace exactly round(epsilon * count) pairs, chosen without replacement.

    Type A swaps the reference for a draw from Q, type B the noisy image, type C
    and MIXTURE both. Returns (refs, noisy, flags); unflagged pairs are untouched
    copies of the inputs.
    """
    spec.validate()
    if refs.pixels.shape != noisy.pixels.shape:
        raise ValueError(f"refs {refs.pixels.shape} and noisy {noisy.pixels.shape} are not aligned")
    n = refs.count
    k = int(round(spec.epsilon * n))
    rng = np.random.default_rng(spec.seed)
    idx = np.sort(rng.choice(n, size=k, replace=False)) if k else np.zeros(0, dtype=int)
    flags = np.zeros(n, dtype=bool)
    flags[idx] = True

    new_refs = refs.pixels.copy()
    new_noisy = noisy.pixels.copy()
    if spec.type in ("A", "C", "MIXTURE"):
        new_refs[idx] = draw_q(spec, k, refs.shape, rng)
    if spec.type in ("B", "C", "MIXTURE"):
        new_noisy[idx] = draw_q(spec, k, noisy.shape, rng)

    record = {
        "epsilon": spec.epsilon,
        "type": spec.type,
        "q": {"mean": spec.q_mean, "std": spec.q_std},
        "seed": spec.seed,
        "flags": [int(i) for i in idx],
    }
    out_refs = ImageStack(new_refs, refs.labels, {**refs.meta, "contamination": record})
    out_noisy = ImageStack(new_noisy, noisy.labels, {**noisy.meta, "contamination": record})
    return out_refs, out_noisy, flags


def sample_huber(
    p0: Callable[[int, np.random.Generator], np.ndarray],
    q: Callable[[int, np.random.Generator], np.ndarray],
    epsilon: float,
    n: int,
    seed: int,
) -> tuple[np.ndarray, np.ndarray]:
    """n i.i.d. draws from (1 - epsilon) P0 + epsilon Q.

    Samplers take (count, rng) and return an array with leading dimension count.
    Returns (samples, from_q) where ``from_q`` is the per-draw provenance.
    """
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError(f"epsilon must lie in [0, 1], got {epsilon}")
    rng = np.random.default_rng(seed)
    from_q = rng.random(n) < epsilon
    n_q = int(from_q.sum())
    clean = np.asarray(p0(n - n_q, rng))
    bad = np.asarray(q(n_q, rng))
    out = np.empty((n, *clean.shape[1:]) if n - n_q else (n, *bad.shape[1:]), dtype=np.float64)
    out[~from_q] = clean
    out[from_q] = bad
    return out, from_q
