"""Joint (alpha, beta)-GAN + l_p autoencoder training, plus the autoencoder-only baseline."""
from __future__ import annotations

import csv
import io
import math
import os
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Callable

import numpy as np
import torch

from . import losses
from .losses import ReconLoss, ScoringRule
from .networks import LINEAR, SIGMOID, ArchSpec, build_discriminator, build_generator
from .stack_io import ImageStack

LOG_COLUMNS = ["iteration", "train_mse", "test_mse", "d_loss", "g_loss", "gp", "wall_ms"]


class DivergenceError(RuntimeError):
    """A loss became NaN or infinite during training."""


def deterministic_env() -> bool:
    return os.environ.get("BGAN_DETERMINISTIC", "0") == "1"


@dataclass
class TrainConfig:
    rule: ScoringRule | None = field(default_factory=lambda: ScoringRule(losses.BETA, 0.5, 0.5))
    recon: ReconLoss = field(default_factory=ReconLoss)
    k_d: int = 1
    k_g: int = 2
    lr_d: float = 1e-3
    lr_g: float = 1e-2
    batch_size: int = 20
    mu: float | None = None  # None -> 10 for WGAN, 0 otherwise
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    iterations: int = 3000
    eval_interval: int = 10
    eval_size: int = 100
    sampling: str = "replacement"  # or "epoch"
    seed: int = 0
    deterministic: bool = True

    @property
    def penalty(self) -> float:
        if self.mu is not None:
            return self.mu
        return 10.0 if self.rule is not None and self.rule.kind == losses.WGAN else 0.0

    def validate(self) -> None:
        if self.k_d < 1 or self.k_g < 1:
            raise ValueError("k_d and k_g must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not (self.lr_d > 0 and self.lr_g > 0):
            raise ValueError("learning rates must be positive")
        if self.iterations < 0 or self.eval_interval < 1:
            raise ValueError("iterations must be >= 0 and eval_interval >= 1")
        if self.sampling not in ("replacement", "epoch"):
            raise ValueError(f"sampling must be 'replacement' or 'epoch', got {self.sampling!r}")
        if self.penalty < 0:
            raise ValueError("mu must be >= 0")
        if self.penalty > 0 and (self.rule is None or self.rule.kind != losses.WGAN):
            raise ValueError("gradient penalty mu > 0 is only allowed with the WGAN rule")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["rule"] = None if self.rule is None else self.rule.to_dict()
        d["mu"] = self.penalty
        return d

    @property
    def name(self) -> str:
        if self.rule is None:
            return f"l{self.recon.p}-Autoencoder"
        if self.recon.weight == 0:
            return self.rule.name
        return f"{self.rule.name}+l{self.recon.p}"


@dataclass
class TrainLog:
    records: list[dict] = field(default_factory=list)

    def append(self, rec: dict) -> None:
        if self.records and rec["iteration"] <= self.records[-1]["iteration"]:
            raise ValueError("log iterations must be strictly increasing")
        self.records.append(rec)

    def __len__(self):
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.records], dtype=np.float64)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(LOG_COLUMNS)
        for r in self.records:
            w.writerow([r["iteration"]] + [repr(float(r[c])) for c in LOG_COLUMNS[1:]])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_csv())

    @classmethod
    def read_csv(cls, path) -> "TrainLog":
        log = cls()
        with open(path) as fh:
            for row in csv.DictReader(fh):
                rec = {k: float(v) for k, v in row.items()}
                rec["iteration"] = int(rec["iteration"])
                log.append(rec)
        return log


def check_compatible(cfg: TrainConfig, arch: ArchSpec) -> None:
    if cfg.rule is None:
        return
    want = LINEAR if cfg.rule.kind == losses.WGAN else SIGMOID
    if arch.head != want:
        raise ValueError(
            f"rule {cfg.rule.name} needs a {want} discriminator head, got {arch.head}"
        )


def _as_tensor(stack) -> torch.Tensor:
    px = stack.pixels if isinstance(stack, ImageStack) else stack
    return torch.as_tensor(np.asarray(px, dtype=np.float32))


def _finite(value: torch.Tensor, what: str, it: int) -> None:
    if not torch.isfinite(value).all():
        raise DivergenceError(f"{what} became non-finite at iteration {it}")


def _eval_mse(G, y: torch.Tensor, x: torch.Tensor, chunk: int = 100) -> float:
    if len(y) == 0:
        return math.nan
    total = 0.0
    with torch.no_grad():
        for s in range(0, len(y), chunk):
            out = G(y[s : s + chunk])
            total += float(((out.double() - x[s : s + chunk].double()) ** 2).mean(dim=(1, 2)).sum())
    return total / len(y)


class _Sampler:
    def __init__(self, n: int, m: int, mode: str, gen: torch.Generator):
        self.n, self.m, self.mode, self.gen = n, m, mode, gen
        self._perm = torch.empty(0, dtype=torch.long)

    def __call__(self) -> torch.Tensor:
        if self.mode == "replacement":
            return torch.randint(self.n, (self.m,), generator=self.gen)
        while len(self._perm) < self.m:
            self._perm = torch.cat([self._perm, torch.randperm(self.n, generator=self.gen)])
        idx, self._perm = self._perm[: self.m], self._perm[self.m :]
        return idx


def train(
    pairs: tuple,
    cfg: TrainConfig,
    arch: ArchSpec,
    test_pairs: tuple | None = None,
    hook: Callable[[str, int], None] | None = None,
):
    """Alternate k_d discriminator steps and k_g generator steps per outer iteration.

    ``pairs`` and ``test_pairs`` are (refs, noisy) stacks or arrays with noisy
    inputs already in [0, 1]. ``cfg.rule = None`` trains the generator alone on
    the reconstruction loss. Returns (generator, TrainLog); ``hook`` is called
    as hook("d_step" | "g_step", outer_iteration) after every optimizer step.
    """
    cfg.validate()
    check_compatible(cfg, arch)
    deterministic = cfg.deterministic or deterministic_env()
    if deterministic:
        torch.use_deterministic_algorithms(True)
    torch.manual_seed(cfg.seed)
    gen = torch.Generator().manual_seed(cfg.seed)

    x_all, y_all = (_as_tensor(s) for s in pairs)
    if x_all.shape != y_all.shape:
        raise ValueError(f"refs {tuple(x_all.shape)} and noisy {tuple(y_all.shape)} are not aligned")
    if x_all.shape[1:] != (arch.size, arch.size):
        raise ValueError(f"images are {tuple(x_all.shape[1:])}, architecture expects {arch.size}")
    if test_pairs is not None:
        x_te, y_te = (_as_tensor(s) for s in test_pairs)
        x_te, y_te = x_te[: cfg.eval_size], y_te[: cfg.eval_size]
    else:
        x_te = y_te = torch.empty(0, arch.size, arch.size)
    x_tr_eval, y_tr_eval = x_all[: cfg.eval_size], y_all[: cfg.eval_size]

    G = build_generator(arch)
    opt_g = torch.optim.Adam(G.parameters(), lr=cfg.lr_g, betas=cfg.adam_betas, eps=cfg.adam_eps)
    use_gan = cfg.rule is not None
    if use_gan:
        D = build_discriminator(arch)
        opt_d = torch.optim.Adam(D.parameters(), lr=cfg.lr_d, betas=cfg.adam_betas, eps=cfg.adam_eps)
    lam = cfg.recon.weight if use_gan else 1.0
    mu = cfg.penalty
    sample = _Sampler(len(x_all), cfg.batch_size, cfg.sampling, gen)

    log = TrainLog()
    t_start = time.perf_counter()
    d_val = g_val = gp_val = 0.0
    for it in range(1, cfg.iterations + 1):
        idx = sample()
        x, y = x_all[idx], y_all[idx]
        if use_gan:
            for _ in range(cfg.k_d):
                with torch.no_grad():
                    fake = G(y)
                d_real, d_fake = D(x), D(fake)
                _finite(torch.cat([d_real.detach().flatten(), d_fake.detach().flatten()]),
                        "discriminator output", it)
                d_loss, _ = losses.gan_objective(cfg.rule, d_real, d_fake)
                gp = losses.gradient_penalty(D, x, fake, mu, gen) if mu > 0 else torch.zeros(())
                total = d_loss + gp
                _finite(total, "discriminator loss", it)
                opt_d.zero_grad(set_to_none=True)
                total.backward()
                opt_d.step()
                d_val, gp_val = float(d_loss.detach()), float(gp.detach())
                if hook:
                    hook("d_step", it)
        for _ in range(cfg.k_g):
            fake = G(y)
            rec = losses.recon_loss(x, fake, cfg.recon.p)
            if use_gan:
                d_fake = D(fake)
                _finite(d_fake.detach(), "discriminator output", it)
                adv = losses.torch_score(cfg.rule, _checked(cfg.rule, d_fake), 0).mean()
                g_loss = adv + lam * rec
            else:
                g_loss = rec
            _finite(g_loss, "generator loss", it)
            opt_g.zero_grad(set_to_none=True)
            g_loss.backward()
            opt_g.step()
            g_val = float(g_loss.detach())
            if hook:
                hook("g_step", it)
        if it % cfg.eval_interval == 0 or it == cfg.iterations:
            wall = 0.0 if deterministic else 1000.0 * (time.perf_counter() - t_start)
            log.append({
                "iteration": it,
                "train_mse": _eval_mse(G, y_tr_eval, x_tr_eval),
                "test_mse": _eval_mse(G, y_te, x_te),
                "d_loss": d_val,
                "g_loss": g_val,
                "gp": gp_val,
                "wall_ms": wall,
            })
    G.eval()
    return G, log


def _checked(rule: ScoringRule, d: torch.Tensor) -> torch.Tensor:
    losses._check_range(rule, d.detach())
    return d


def train_autoencoder_only(pairs, cfg: TrainConfig, arch: ArchSpec, test_pairs=None, hook=None):
    """Generator-only training on the unweighted l_p loss (the DA baseline)."""
    return train(pairs, replace(cfg, rule=None, mu=0.0), arch, test_pairs, hook)


def stability_report(log_a: TrainLog, log_b: TrainLog, window: int) -> dict:
    """Trailing-window spread of test MSE for two runs and the a/b ratios.

    ``window`` counts log records. A zero spread in ``log_b`` gives ratio 1 when
    ``log_a`` is also flat and inf otherwise.
    """
    if not len(log_a) or not len(log_b):
        raise ValueError("both logs must be nonempty")
    if window < 1 or window > min(len(log_a), len(log_b)):
        raise ValueError(f"window {window} exceeds log length {min(len(log_a), len(log_b))}")
    out = {"window": window}
    for tag, log in (("a", log_a), ("b", log_b)):
        tail = log.column("test_mse")[-window:]
        out[f"std_{tag}"] = float(np.std(tail))
        out[f"range_{tag}"] = float(tail.max() - tail.min())

    def ratio(num, den):
        if den == 0.0:
            return 1.0 if num == 0.0 else math.inf
        return num / den

    out["std_ratio"] = ratio(out["std_a"], out["std_b"])
    out["range_ratio"] = ratio(out["range_a"], out["range_b"])
    return out


def denoise(G, noisy, chunk: int = 100) -> ImageStack:
    y = _as_tensor(noisy)
    if y.dim() != 3:
        raise ValueError(f"expected a stack of images, got shape {tuple(y.shape)}")
    outs = []
    with torch.no_grad():
        for s in range(0, len(y), chunk):
            outs.append(G(y[s : s + chunk]).numpy())
    pixels = np.concatenate(outs) if outs else np.zeros((0, *y.shape[1:]), dtype=np.float32)
    labels = noisy.labels if isinstance(noisy, ImageStack) else None
    meta = {"source": "denoised", "normalization": {"min": 0.0, "max": 1.0}}
    return ImageStack(pixels.astype(np.float32), labels, meta)


def model_to_blob(G, arch: ArchSpec) -> bytes:
    buf = io.BytesIO()
    torch.save({"arch": arch.to_dict(), "state_dict": G.state_dict()}, buf)
    return buf.getvalue()


def model_from_blob(blob: bytes):
    state = torch.load(io.BytesIO(blob), weights_only=True)
    arch = ArchSpec(**state["arch"])
    G = build_generator(arch)
    G.load_state_dict(state["state_dict"])
    G.eval()
    return G, arch
