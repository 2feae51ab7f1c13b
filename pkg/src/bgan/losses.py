"""(alpha, beta) scoring rules, WGAN critic surrogate, gradient penalty, l_p reconstruction.

For label 1 the score is S(t, 1) = -int_t^1 c^(a-1) (1-c)^b dc and for label 0
S(t, 0) = -int_0^t c^a (1-c)^(b-1) dc, with t clamped to [delta, 1 - delta].
When an endpoint integral diverges (exponent <= -1) the integration limit is
moved to the clamp, i.e. 1 - delta or delta.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import torch
from scipy import integrate

BETA = "BETA"
WGAN = "WGAN"

# Pairs evaluated in the (alpha, beta) ablation.
ABLATION_GRID = [(1.0, 1.0), (0.5, 0.5), (-0.5, -0.5), (-1.0, -1.0),
                 (1.0, -1.0), (0.5, -0.5), (0.0, 0.0), (0.1, -0.1)]


@dataclass(frozen=True)
class ScoringRule:
    kind: str = BETA
    alpha: float = 0.0
    beta: float = 0.0
    delta: float = 1e-6

    def __post_init__(self):
        if self.kind not in (BETA, WGAN):
            raise ValueError(f"unknown scoring rule kind {self.kind!r}; valid: BETA, WGAN")
        if self.kind == BETA:
            if not (-1.0 <= self.alpha <= 1.0 and -1.0 <= self.beta <= 1.0):
                raise ValueError(f"alpha, beta must lie in [-1, 1], got ({self.alpha}, {self.beta})")
            if not 0.0 < self.delta < 0.5:
                raise ValueError(f"delta must lie in (0, 0.5), got {self.delta}")

    @classmethod
    def wgan(cls) -> "ScoringRule":
        return cls(WGAN, 0.0, 0.0)

    @classmethod
    def parse(cls, text: str) -> "ScoringRule":
        """``"wgan"`` or ``"alpha,beta"``."""
        text = text.strip()
        if text.lower() in ("wgan", "wgangp"):
            return cls.wgan()
        try:
            a, b = (float(v) for v in text.split(","))
        except ValueError:
            raise ValueError(f"cannot parse scoring rule {text!r}; use 'wgan' or 'alpha,beta'") from None
        return cls(BETA, a, b)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "alpha": self.alpha, "beta": self.beta, "delta": self.delta}

    @property
    def name(self) -> str:
        if self.kind == WGAN:
            return "WGANgp"
        return f"({self.alpha:g},{self.beta:g})-GAN"

    def closed_form(self) -> str | None:
        if self.kind == WGAN:
            return "wgan"
        if (self.alpha, self.beta) == (0.0, 0.0):
            return "log"
        if (self.alpha, self.beta) == (1.0, 1.0):
            return "square"
        return None


@dataclass(frozen=True)
class ReconLoss:
    p: int = 1
    weight: float = 10.0

    def __post_init__(self):
        if self.p not in (1, 2):
            raise ValueError(f"p must be 1 or 2, got {self.p}")
        if self.weight < 0:
            raise ValueError(f"lambda must be >= 0, got {self.weight}")


# ---------------------------------------------------------------- tables

_U_STEP = 0.004
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(8)


def _log_sigmoid(u):
    return -np.logaddexp(0.0, -u)


class _ScoreTable:
    """Cumulative integrals of the score integrands on a fixed logit grid.

    In u = logit(c) the label-1 integrand becomes c^a (1-c)^(b+1) du and the
    label-0 one c^(a+1) (1-c)^b du, both smooth, so Gauss-Legendre cells plus
    cubic Hermite interpolation (derivative known exactly) are accurate to
    roughly machine precision.
    """

    def __init__(self, alpha: float, beta: float, delta: float):
        self.alpha, self.beta, self.delta = alpha, beta, delta
        self.u_lo = math.log(delta / (1 - delta))
        self.u_hi = -self.u_lo
        n = int(math.ceil((self.u_hi - self.u_lo) / _U_STEP))
        self.grid = np.linspace(self.u_lo, self.u_hi, n + 1)
        h = self.grid[1] - self.grid[0]
        mids = 0.5 * (self.grid[:-1] + self.grid[1:])
        nodes = mids[:, None] + 0.5 * h * _GL_NODES[None, :]
        w = 0.5 * h * _GL_WEIGHTS[None, :]
        cells1 = (self._f1(nodes) * w).sum(axis=1)
        cells0 = (self._f0(nodes) * w).sum(axis=1)
        # label 1: integral from u up to the upper end
        tail1 = self._upper_tail()
        self.int1 = np.concatenate([np.cumsum(cells1[::-1])[::-1], [0.0]]) + tail1
        # label 0: integral from the lower end up to u
        tail0 = self._lower_tail()
        self.int0 = np.concatenate([[0.0], np.cumsum(cells0)]) + tail0

    def _f1(self, u):
        return np.exp(self.alpha * _log_sigmoid(u) + (self.beta + 1) * _log_sigmoid(-u))

    def _f0(self, u):
        return np.exp((self.alpha + 1) * _log_sigmoid(u) + self.beta * _log_sigmoid(-u))

    def _upper_tail(self) -> float:
        if self.beta <= -1:
            return 0.0
        lo = 1 - self.delta
        val, _ = integrate.quad(lambda c: c ** (self.alpha - 1), lo, 1.0,
                                weight="alg", wvar=(0.0, self.beta))
        return val

    def _lower_tail(self) -> float:
        if self.alpha <= -1:
            return 0.0
        val, _ = integrate.quad(lambda c: (1 - c) ** (self.beta - 1), 0.0, self.delta,
                                weight="alg", wvar=(self.alpha, 0.0))
        return val

    def _interp(self, table, deriv, u):
        u = np.clip(u, self.u_lo, self.u_hi)
        h = self.grid[1] - self.grid[0]
        i = np.clip(((u - self.u_lo) / h).astype(np.int64), 0, len(self.grid) - 2)
        s = (u - self.grid[i]) / h
        y0, y1 = table[i], table[i + 1]
        m0, m1 = deriv(self.grid[i]) * h, deriv(self.grid[i + 1]) * h
        h00 = 2 * s**3 - 3 * s**2 + 1
        h10 = s**3 - 2 * s**2 + s
        h01 = -2 * s**3 + 3 * s**2
        h11 = s**3 - s**2
        return h00 * y0 + h10 * m0 + h01 * y1 + h11 * m1

    def score(self, t: np.ndarray, label: int) -> np.ndarray:
        u = np.log(t) - np.log1p(-t)
        if label == 1:
            return -self._interp(self.int1, lambda v: -self._f1(v), u)
        return -self._interp(self.int0, self._f0, u)


@lru_cache(maxsize=64)
def _table(alpha: float, beta: float, delta: float) -> _ScoreTable:
    return _ScoreTable(alpha, beta, delta)


# ---------------------------------------------------------------- numpy API


def clamp(rule: ScoringRule, t):
    return np.clip(t, rule.delta, 1 - rule.delta)


def score(rule: ScoringRule, t, label: int):
    """S(t, label); vectorized over ``t``."""
    t = np.asarray(t, dtype=np.float64)
    if np.any(np.isnan(t)):
        raise ValueError("score received NaN input")
    if label not in (0, 1):
        raise ValueError(f"label must be 0 or 1, got {label}")
    form = rule.closed_form()
    if form == "wgan":
        return t.copy() if label == 1 else -t
    # the natural endpoint (t = 1 for label 1, t = 0 for label 0) is an empty integral
    at_end = t >= 1.0 if label == 1 else t <= 0.0
    t = clamp(rule, t)
    if form == "log":
        out = np.log(t) if label == 1 else np.log1p(-t)
    elif form == "square":
        out = -0.5 * (1 - t) ** 2 if label == 1 else -0.5 * t**2
    else:
        out = _table(rule.alpha, rule.beta, rule.delta).score(t, label)
    return np.where(at_end, 0.0, out)


def score_derivative(rule: ScoringRule, t, label: int):
    t = np.asarray(t, dtype=np.float64)
    if rule.kind == WGAN:
        return np.full_like(t, 1.0 if label == 1 else -1.0)
    t = clamp(rule, t)
    a, b = rule.alpha, rule.beta
    if label == 1:
        return t ** (a - 1) * (1 - t) ** b
    return -(t**a) * (1 - t) ** (b - 1)


# ---------------------------------------------------------------- torch API


class _TableScore(torch.autograd.Function):
    @staticmethod
    def forward(ctx, t, rule, label):
        ctx.rule, ctx.label = rule, label
        ctx.save_for_backward(t)
        val = score(rule, t.detach().cpu().double().numpy(), label)
        return torch.as_tensor(val, dtype=t.dtype, device=t.device)

    @staticmethod
    def backward(ctx, grad):
        (t,) = ctx.saved_tensors
        d = score_derivative(ctx.rule, t.detach().cpu().double().numpy(), ctx.label)
        return grad * torch.as_tensor(d, dtype=t.dtype, device=t.device), None, None


def torch_score(rule: ScoringRule, t: torch.Tensor, label: int) -> torch.Tensor:
    """Differentiable S(t, label). BETA inputs are clamped to [delta, 1 - delta]."""
    form = rule.closed_form()
    if form == "wgan":
        return t if label == 1 else -t
    at_end = t >= 1.0 if label == 1 else t <= 0.0
    t = t.clamp(rule.delta, 1 - rule.delta)
    if form == "log":
        out = torch.log(t) if label == 1 else torch.log1p(-t)
    elif form == "square":
        out = -0.5 * (1 - t) ** 2 if label == 1 else -0.5 * t**2
    else:
        out = _TableScore.apply(t, rule, label)
    return torch.where(at_end, torch.zeros_like(out), out)


def _check_range(rule: ScoringRule, d: torch.Tensor) -> None:
    if rule.kind == BETA and d.numel():
        lo, hi = float(d.detach().min()), float(d.detach().max())
        if lo < 0.0 or hi > 1.0:
            raise ValueError(f"BETA rules need discriminator outputs in [0, 1], got [{lo}, {hi}]")


def gan_objective(rule: ScoringRule, d_real, d_fake):
    """(disc_loss, gen_loss).

    disc_loss = -mean[S(D(x), 1) + S(D(G(y)), 0)], minimized by the
    discriminator; gen_loss = mean[S(D(G(y)), 0)], minimized by the generator.
    """
    d_real = torch.as_tensor(d_real, dtype=torch.float64 if not torch.is_tensor(d_real) else None)
    d_fake = torch.as_tensor(d_fake, dtype=torch.float64 if not torch.is_tensor(d_fake) else None)
    _check_range(rule, d_real)
    _check_range(rule, d_fake)
    s_real = torch_score(rule, d_real.reshape(-1), 1)
    s_fake = torch_score(rule, d_fake.reshape(-1), 0)
    disc = -(s_real.mean() + s_fake.mean())
    gen = s_fake.mean()
    return disc, gen


def gradient_penalty(D, x_real: torch.Tensor, x_fake: torch.Tensor, mu: float,
                     generator: torch.Generator | None = None) -> torch.Tensor:
    """mu * mean[(||grad D(x_mix)||_2 - 1)^2] on random real/fake interpolates."""
    if x_real.shape != x_fake.shape:
        raise ValueError(f"real {tuple(x_real.shape)} and fake {tuple(x_fake.shape)} batches differ")
    shape = (x_real.shape[0],) + (1,) * (x_real.dim() - 1)
    u = torch.rand(shape, generator=generator, dtype=x_real.dtype, device=x_real.device)
    mix = (u * x_real.detach() + (1 - u) * x_fake.detach()).requires_grad_(True)
    out = D(mix)
    (grad,) = torch.autograd.grad(out.sum(), mix, create_graph=True)
    norms = grad.reshape(grad.shape[0], -1).norm(2, dim=1)
    return mu * ((norms - 1) ** 2).mean()


def recon_loss(x, x_hat, p: int = 1):
    """Mean over images of sum |x - x_hat| (p=1) or of 1/2 sum (x - x_hat)^2 (p=2).

    Accepts torch tensors or numpy arrays / ImageStacks with leading image axis.
    """
    if hasattr(x, "pixels"):
        x = x.pixels
    if hasattr(x_hat, "pixels"):
        x_hat = x_hat.pixels
    if tuple(x.shape) != tuple(x_hat.shape):
        raise ValueError(f"shape mismatch: {tuple(x.shape)} vs {tuple(x_hat.shape)}")
    if torch.is_tensor(x) or torch.is_tensor(x_hat):
        diff = (torch.as_tensor(x) - torch.as_tensor(x_hat)).reshape(x.shape[0], -1)
        per = diff.abs().sum(1) if p == 1 else 0.5 * (diff**2).sum(1)
        return per.mean()
    diff = (np.asarray(x, dtype=np.float64) - np.asarray(x_hat, dtype=np.float64)).reshape(len(x), -1)
    per = np.abs(diff).sum(1) if p == 1 else 0.5 * (diff**2).sum(1)
    return float(per.mean())
