"""MSE, PSNR and global-statistics SSIM, plus per-stack reports."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class InfinitePSNRError(ValueError):
    """Raised when PSNR is requested for identical images."""


@dataclass(frozen=True)
class MetricsConfig:
    t: float = 1.0
    L: float = 1.0
    K1: float = 0.01
    K2: float = 0.03

    @property
    def c1(self) -> float:
        return (self.K1 * self.L) ** 2

    @property
    def c2(self) -> float:
        return (self.K2 * self.L) ** 2

    @property
    def c3(self) -> float:
        return self.c2 / 2


def _pair(x, x_hat):
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x.shape != x_hat.shape:
        raise ValueError(f"image dims differ: {x.shape} vs {x_hat.shape}")
    return x, x_hat


def mse(x, x_hat) -> float:
    x, x_hat = _pair(x, x_hat)
    return float(np.mean((x - x_hat) ** 2))


def psnr(x, x_hat, cfg: MetricsConfig = MetricsConfig()) -> float:
    err = mse(x, x_hat)
    if err == 0.0:
        raise InfinitePSNRError("images are identical; PSNR is infinite")
    return 10.0 * math.log10(cfg.t**2 / err)


def ssim(x, x_hat, cfg: MetricsConfig = MetricsConfig()) -> float:
    """Three-factor SSIM with mean, std and covariance taken over the whole image."""
    x, x_hat = _pair(x, x_hat)
    mu_x, mu_y = x.mean(), x_hat.mean()
    sd_x, sd_y = x.std(), x_hat.std()
    cov = np.mean((x - mu_x) * (x_hat - mu_y))
    c1, c2, c3 = cfg.c1, cfg.c2, cfg.c3
    luminance = (2 * mu_x * mu_y + c1) / (mu_x**2 + mu_y**2 + c1)
    contrast = (2 * sd_x * sd_y + c2) / (sd_x**2 + sd_y**2 + c2)
    structure = (cov + c3) / (sd_x * sd_y + c3)
    return float(luminance * contrast * structure)


@dataclass
class MetricsReport:
    mse: np.ndarray
    psnr: np.ndarray
    ssim: np.ndarray
    summary: dict = field(default_factory=dict)

    def rows(self):
        for i in range(len(self.mse)):
            yield {"index": i, "mse": self.mse[i], "psnr": self.psnr[i], "ssim": self.ssim[i]}

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["index", "mse", "psnr", "ssim"])
            w.writeheader()
            for row in self.rows():
                w.writerow({k: (repr(float(v)) if k != "index" else v) for k, v in row.items()})

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.summary, indent=2, sort_keys=True))

    def table_row(self, name: str) -> str:
        s = self.summary
        return (f"{name:<24} {s['mse_mean']:.3e}({s['mse_std']:.2e})  "
                f"{s['psnr_mean']:.2f}({s['psnr_std']:.2f})  "
                f"{s['ssim_mean']:.2f}({s['ssim_std']:.2f})")


def report(refs, tests, cfg: MetricsConfig = MetricsConfig()) -> MetricsReport:
    """Per-image metrics and mean/sample-std (n - 1) across the stack.

    Identical image pairs give PSNR = inf in the per-image array; the summary
    then reports ``psnr_mean = inf``. Single-image stacks report std 0 and set
    ``std_defined = False``.
    """
    refs = np.asarray(getattr(refs, "pixels", refs), dtype=np.float64)
    tests = np.asarray(getattr(tests, "pixels", tests), dtype=np.float64)
    if refs.shape != tests.shape:
        raise ValueError(f"stacks not aligned: {refs.shape} vs {tests.shape}")
    n = len(refs)
    m = np.array([mse(refs[i], tests[i]) for i in range(n)])
    p = np.array([10.0 * math.log10(cfg.t**2 / e) if e > 0 else math.inf for e in m])
    s = np.array([ssim(refs[i], tests[i], cfg) for i in range(n)])
    summary = {"count": n, "std_defined": n > 1}
    for name, arr in (("mse", m), ("psnr", p), ("ssim", s)):
        summary[f"{name}_mean"] = float(np.mean(arr)) if n else math.nan
        if n > 1 and np.all(np.isfinite(arr)):
            summary[f"{name}_std"] = float(np.std(arr, ddof=1))
        else:
            summary[f"{name}_std"] = 0.0
    return MetricsReport(m, p, s, summary)
