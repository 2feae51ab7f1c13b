"""Desk-scale comparative experiments shared by scripts/ and the acceptance suite.

Everything runs on small phantoms with slim networks so a full comparison fits
on one CPU core; the comparisons are directional (which model wins), not
reproductions of absolute numbers.
"""
from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, replace

import numpy as np
import torch

from .baselines import NlmSpec, nlm_denoise
from .clustering import DisconnectedGraphError, EmbeddingSpec, accuracy, cluster_two, embed
from .contamination import ContaminationSpec, contaminate_pairs
from .losses import ReconLoss, ScoringRule
from .metrics import report
from .networks import LINEAR, SIGMOID, ArchSpec
from .phantoms import ForwardModelSpec, PhantomSpec, corrupt, render_phantoms
from .stack_io import ImageStack
from .trainer import TrainConfig, denoise, stability_report, train

# name -> (rule, recon); rule None means autoencoder only
MODELS = {
    "WGANgp+l1": (ScoringRule.wgan(), ReconLoss(1, 10.0)),
    "(.5,.5)-GAN+l1": (ScoringRule(alpha=0.5, beta=0.5), ReconLoss(1, 10.0)),
    "(1,1)-GAN+l1": (ScoringRule(alpha=1.0, beta=1.0), ReconLoss(1, 10.0)),
    "(0,0)-GAN+l1": (ScoringRule(alpha=0.0, beta=0.0), ReconLoss(1, 10.0)),
    "(0,0)-GAN": (ScoringRule(alpha=0.0, beta=0.0), ReconLoss(1, 0.0)),
    "l1-AE": (None, ReconLoss(1, 1.0)),
    "l2-AE": (None, ReconLoss(2, 1.0)),
}


@dataclass
class DeskSpec:
    size: int = 32
    n_train: int = 2000
    n_test: int = 100
    snr: float = 0.1
    iterations: int = 3000
    width: int = 8
    disc_width: int = 4
    blocks: int = 1
    eval_interval: int = 10
    eval_size: int = 100
    rotation_range: float = 2 * math.pi
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def desk_data(spec: DeskSpec, seed: int | None = None):
    """(train_pairs, test_pairs) of (clean, noisy) stacks over five conformations, shuffled."""
    seed = spec.seed if seed is None else seed
    total = spec.n_train + spec.n_test
    phantom = PhantomSpec(size=spec.size, rotation_range=spec.rotation_range)
    per = -(-total // phantom.n_conformations)
    clean = render_phantoms(phantom, per, seed)
    noisy = corrupt(clean, ForwardModelSpec(snr=spec.snr), seed)
    perm = np.random.default_rng([seed, 3]).permutation(clean.count)[:total]
    tr, te = perm[: spec.n_train], perm[spec.n_train :]
    return (clean.subset(tr), noisy.subset(tr)), (clean.subset(te), noisy.subset(te))


def arch_for(spec: DeskSpec, rule: ScoringRule | None, seed: int = 0) -> ArchSpec:
    head = LINEAR if rule is not None and rule.kind == "WGAN" else SIGMOID
    return ArchSpec(size=spec.size, width=spec.width, disc_width=spec.disc_width,
                    blocks=spec.blocks, head=head, seed=seed)


def train_config(spec: DeskSpec, rule, recon, seed: int = 0, **kw) -> TrainConfig:
    return TrainConfig(rule=rule, recon=recon, iterations=spec.iterations,
                       eval_interval=spec.eval_interval, eval_size=spec.eval_size, seed=seed, **kw)


def run_model(spec: DeskSpec, model, train_pairs, test_pairs, seed: int = 0):
    """Train one named model (or a (rule, recon) pair); return (G, log, test MetricsReport, seconds)."""
    rule, recon = MODELS[model] if isinstance(model, str) else model
    t0 = time.perf_counter()
    torch.set_flush_denormal(True)  # denormals slow CPU convolutions; process-wide, so undone below
    try:
        G, log = train(train_pairs, train_config(spec, rule, recon, seed), arch_for(spec, rule, seed),
                       test_pairs=test_pairs)
    finally:
        torch.set_flush_denormal(False)
    rep = report(test_pairs[0], denoise(G, test_pairs[1]))
    return G, log, rep, time.perf_counter() - t0


def noisy_mse(test_pairs) -> float:
    return report(test_pairs[0], test_pairs[1]).summary["mse_mean"]


# ---------------------------------------------------------------- comparisons


def stability(spec: DeskSpec, seeds=(0, 1, 2), window_iters: int = 500) -> dict:
    """Trailing-window test-MSE spread of the bare (0,0)-GAN against (0,0)-GAN + l1."""
    window = max(window_iters // spec.eval_interval, 2)
    per_seed = []
    for s in seeds:
        tr, te = desk_data(spec, s)
        _, log_a, _, _ = run_model(spec, "(0,0)-GAN", tr, te, s)
        _, log_b, _, _ = run_model(spec, "(0,0)-GAN+l1", tr, te, s)
        rep = stability_report(log_a, log_b, window)
        rep["seed"] = s
        # a saturated generator freezes the curve; record levels so a collapse is visible
        for tag, log in (("bare", log_a), ("joint", log_b)):
            curve = log.column("test_mse")
            rep[f"{tag}_final"], rep[f"{tag}_best"] = float(curve[-1]), float(curve.min())
        per_seed.append(rep)
    return {"per_seed": per_seed, "median_std_ratio": float(np.median([r["std_ratio"] for r in per_seed]))}


def denoising_table(spec: DeskSpec, models=("WGANgp+l1", "(.5,.5)-GAN+l1", "(1,1)-GAN+l1", "l2-AE"),
                    seed: int = 0, with_nlm: bool = True) -> dict:
    tr, te = desk_data(spec, seed)
    rows = {"noisy": report(te[0], te[1]).summary}
    if with_nlm:
        rows["NLM"] = report(te[0], nlm_denoise(te[1], NlmSpec())).summary
    for m in models:
        _, _, rep, secs = run_model(spec, m, tr, te, seed)
        rows[m] = {**rep.summary, "seconds": secs}
    return rows


def robustness(spec: DeskSpec, models=("(.5,.5)-GAN+l1", "l2-AE"), epsilon: float = 0.3,
               kind: str = "A", seeds=(0, 1, 2)) -> dict:
    """Relative test-MSE degradation (mse_eps / mse_0 - 1) per model, median over seeds."""
    out = {m: [] for m in models}
    for s in seeds:
        tr, te = desk_data(spec, s)
        c_refs, c_noisy, _ = contaminate_pairs(tr[0], tr[1], ContaminationSpec(epsilon, kind, seed=s))
        for m in models:
            _, _, clean_rep, _ = run_model(spec, m, tr, te, s)
            _, _, dirty_rep, _ = run_model(spec, m, (c_refs, c_noisy), te, s)
            m0, m1 = clean_rep.summary["mse_mean"], dirty_rep.summary["mse_mean"]
            out[m].append({"seed": s, "mse_clean": m0, "mse_contaminated": m1, "degradation": m1 / m0 - 1.0})
    return {m: {"runs": v, "median_degradation": float(np.median([r["degradation"] for r in v]))}
            for m, v in out.items()}


def lambda_ablation(spec: DeskSpec, lambdas=(0.1, 10.0, 10000.0), seed: int = 0,
                    rule: ScoringRule = ScoringRule(alpha=0.5, beta=0.5)) -> dict:
    tr, te = desk_data(spec, seed)
    rows = {}
    for lam in lambdas:
        _, _, rep, _ = run_model(spec, (rule, ReconLoss(1, lam)), tr, te, seed)
        rows[f"lambda={lam:g}"] = rep.summary["mse_mean"]
    _, _, rep, _ = run_model(spec, "l1-AE", tr, te, seed)
    rows["l1-AE"] = rep.summary["mse_mean"]
    return rows


def cluster_accuracy(stack: ImageStack, k_nn: int = 10, max_k: int = 40) -> tuple[float, int]:
    """ISOMAP + 2-means accuracy, growing k until the neighbour graph is connected."""
    k = k_nn
    while True:
        try:
            pts = embed(stack, EmbeddingSpec("ISOMAP", k_nn=k))
            break
        except DisconnectedGraphError:
            if k >= max_k:
                raise
            k += 2
    labels, _ = cluster_two(pts)
    return accuracy(labels, stack.labels), k


def clustering(spec: DeskSpec, model: str = "(.5,.5)-GAN+l1", per_class: int = 30, seed: int = 0) -> dict:
    """Train on the five-conformation set, then cluster the two extreme conformations."""
    tr, _ = desk_data(spec, seed)
    phantom = PhantomSpec(size=spec.size, rotation_range=spec.rotation_range)
    clean = render_phantoms(phantom, per_class, seed + 1000)
    keep = np.flatnonzero((clean.labels == 0) | (clean.labels == phantom.n_conformations - 1))
    clean = clean.subset(keep)
    noisy = corrupt(clean, ForwardModelSpec(snr=spec.snr), seed + 1000)
    G, _, _, _ = run_model(spec, model, tr, (clean, noisy), seed)
    den = denoise(G, noisy)
    acc_noisy, k_noisy = cluster_accuracy(noisy)
    acc_den, k_den = cluster_accuracy(den)
    return {"noisy": acc_noisy, "denoised": acc_den, "k_noisy": k_noisy, "k_denoised": k_den,
            "count": int(clean.count)}


def desk_for_clustering(spec: DeskSpec) -> DeskSpec:
    return replace(spec, snr=0.05, rotation_range=0.5)
