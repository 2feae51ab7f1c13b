"""GAN-based robust location/scatter estimation for elliptical distributions.

The generator is the elliptical family itself, X = theta + xi * A U, and the
discriminator is a ramp -> ReLU -> sigmoid network whose layer weights are kept
inside l1 balls by Euclidean projection after every step.
"""
from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
from torch import nn

from . import losses
from .contamination import sample_huber
from .losses import ScoringRule

GAUSSIAN = "GAUSSIAN"
CAUCHY = "CAUCHY"


@dataclass
class EllipticalModel:
    theta: np.ndarray
    A: np.ndarray
    radial: str = GAUSSIAN
    seed: int = 0

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=np.float64).reshape(-1)
        self.A = np.asarray(self.A, dtype=np.float64).reshape(len(self.theta), -1)
        if self.radial not in (GAUSSIAN, CAUCHY):
            raise ValueError(f"unknown radial law {self.radial!r}; valid: GAUSSIAN, CAUCHY")

    @property
    def p(self) -> int:
        return len(self.theta)

    @property
    def r(self) -> int:
        return self.A.shape[1]

    @property
    def sigma(self) -> np.ndarray:
        return self.A @ self.A.T


def radial_draws(radial: str, r: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """xi >= 0. GAUSSIAN: chi with r dof (so xi U ~ N(0, I)); CAUCHY: sqrt(r) |C|."""
    if radial == GAUSSIAN:
        return np.sqrt(rng.chisquare(r, size=n))
    return math.sqrt(r) * np.abs(rng.standard_cauchy(size=n))


def sphere_draws(r: int, n: int, rng: np.random.Generator) -> np.ndarray:
    z = rng.standard_normal((n, r))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def sample_elliptical(model: EllipticalModel, n: int, rng: np.random.Generator | None = None) -> np.ndarray:
    if rng is None:
        rng = np.random.default_rng(model.seed)
    xi = radial_draws(model.radial, model.r, n, rng)
    u = sphere_draws(model.r, n, rng)
    return model.theta + xi[:, None] * (u @ model.A.T)


# ---------------------------------------------------------------- discriminator class


def project_l1_ball(v: torch.Tensor, radius: float) -> torch.Tensor:
    """Euclidean projection of each row of ``v`` onto {w : ||w||_1 <= radius}."""
    if radius <= 0:
        return torch.zeros_like(v)
    squeeze = v.dim() == 1
    rows = v.reshape(1, -1) if squeeze else v
    absv = rows.abs()
    inside = absv.sum(dim=1) <= radius
    mu, _ = torch.sort(absv, dim=1, descending=True)
    cssv = mu.cumsum(dim=1) - radius
    ind = torch.arange(1, rows.shape[1] + 1, dtype=rows.dtype)
    cond = mu - cssv / ind > 0
    # last index where cond holds
    rho = cond.shape[1] - 1 - torch.flip(cond, dims=[1]).to(torch.int64).argmax(dim=1)
    tau = cssv.gather(1, rho[:, None]).squeeze(1) / (rho + 1).to(rows.dtype)
    proj = torch.sign(rows) * torch.clamp(absv - tau[:, None], min=0.0)
    out = torch.where(inside[:, None], rows, proj)
    return out.reshape(v.shape)


def ramp(x):
    return torch.clamp(x + 0.5, 0.0, 1.0)


@dataclass
class DiscClassSpec:
    depth: int = 1
    B: float = 1.0
    kappa: float = 0.1
    widths: list[int] = field(default_factory=lambda: [20])

    def validate(self) -> None:
        if self.depth < 1:
            raise ValueError("depth L must be >= 1")
        if len(self.widths) != self.depth:
            raise ValueError(f"need one width per layer ({self.depth}), got {self.widths}")
        if self.B <= 0 or self.kappa < 0:
            raise ValueError("B must be positive and kappa nonnegative")


class ConstrainedDisc(nn.Module):
    """sigmoid(w . g(x)) with g a ramp layer followed by depth-1 bias-free ReLU layers."""

    def __init__(self, spec: DiscClassSpec, p: int, init_scale: float = 1.0):
        super().__init__()
        spec.validate()
        self.spec = spec
        self.bottom = nn.Linear(p, spec.widths[0], dtype=torch.float64)
        nn.init.normal_(self.bottom.weight, std=init_scale)
        nn.init.uniform_(self.bottom.bias, -0.5, 0.5)
        self.hidden = nn.ModuleList(
            nn.Linear(spec.widths[i - 1], spec.widths[i], bias=False, dtype=torch.float64)
            for i in range(1, spec.depth)
        )
        self.out = nn.Linear(spec.widths[-1], 1, bias=False, dtype=torch.float64)
        self.project()

    def features(self, x):
        h = ramp(self.bottom(x))
        for layer in self.hidden:
            h = torch.relu(layer(h))
        return h

    def logit(self, x):
        return self.out(self.features(x)).squeeze(-1)

    def forward(self, x):
        return torch.sigmoid(self.logit(x))

    @torch.no_grad()
    def project(self) -> None:
        for layer in self.hidden:
            layer.weight.copy_(project_l1_ball(layer.weight, self.spec.B))
        self.out.weight.copy_(project_l1_ball(self.out.weight, self.spec.kappa))

    def norms(self) -> dict:
        return {
            "hidden": [float(layer.weight.detach().abs().sum(dim=1).max()) for layer in self.hidden],
            "out": float(self.out.weight.detach().abs().sum()),
        }


def build_disc_class(spec: DiscClassSpec, p: int, seed: int = 0) -> ConstrainedDisc:
    torch.manual_seed(seed)
    return ConstrainedDisc(spec, p)


def kappa_for(p: int, n: int, epsilon: float, c: float = 1.0) -> float:
    return c * (math.sqrt(p / n) + epsilon)


# ---------------------------------------------------------------- estimator


@dataclass
class EstimateBudget:
    steps: int = 1500
    d_steps: int = 1
    lr_d: float = 0.05
    lr_g: float = 0.5
    draws: int | None = None  # Monte-Carlo draws per step; None -> draw_factor * n
    draw_factor: float = 1.0
    average_from: float = 0.5  # fraction of steps after which iterates are averaged
    tol: float = 0.05
    decay_span: float = 50.0


@dataclass
class EstimateResult:
    theta: np.ndarray
    sigma: np.ndarray
    converged: bool
    audit: list = field(default_factory=list)


def op_norm(M: np.ndarray, iters: int = 5000, tol: float = 1e-15, seed: int = 0) -> float:
    """Largest singular value by power iteration on M^T M."""
    M = np.asarray(M, dtype=np.float64)
    if not np.any(M):
        return 0.0
    v = np.random.default_rng(seed).standard_normal(M.shape[1])
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(iters):
        w = M.T @ (M @ v)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        v = w / nw
        new = math.sqrt(nw)
        if abs(new - est) <= tol * new:
            est = new
            break
        est = new
    return float(np.linalg.norm(M @ v))


def _robust_init(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    med = np.median(x, axis=0)
    mad = 1.4826 * np.median(np.abs(x - med), axis=0)
    return med, np.diag(np.maximum(mad, 1e-3))


def estimate(
    samples: np.ndarray,
    rule: ScoringRule,
    spec: DiscClassSpec,
    budget: EstimateBudget = EstimateBudget(),
    radial: str = GAUSSIAN,
    seed: int = 0,
    audit_every: int = 0,
) -> EstimateResult:
    """Alternating minimax fit of (theta, A) against the constrained discriminator class.

    theta and A start from the coordinate-wise median and MAD. The expectation
    under the model is a fresh reparameterized Monte-Carlo draw each step, and
    the returned estimate averages iterates over the tail of the run.
    """
    if rule.kind == losses.BETA and not abs(rule.alpha - rule.beta) < 1:
        raise ValueError(f"need |alpha - beta| < 1, got ({rule.alpha}, {rule.beta})")
    x = np.asarray(samples, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("samples must be finite")
    n, p = x.shape
    draws = budget.draws or max(int(budget.draw_factor * n), 1)
    rng = np.random.default_rng(seed)
    torch.manual_seed(seed)

    med, a0 = _robust_init(x)
    theta = torch.tensor(med, requires_grad=True)
    A = torch.tensor(a0, requires_grad=True)
    D = ConstrainedDisc(spec, p, init_scale=1.0 / max(float(np.mean(np.diag(a0))), 1e-3))
    with torch.no_grad():
        D.bottom.bias.copy_(-(D.bottom.weight @ theta.detach()) + D.bottom.bias)
    opt_d = torch.optim.Adam(D.parameters(), lr=budget.lr_d)
    # Generator gradients scale with kappa; plain SGD on the kappa-normalized loss
    # keeps step sizes tied to the signal instead of amplifying Monte-Carlo noise.
    opt_g = torch.optim.SGD([theta, A], lr=budget.lr_g)
    g_scale = 1.0 / spec.kappa if spec.kappa > 0 else 1.0
    start = int(budget.average_from * budget.steps)
    # constant rate while searching, then 1/t decay over the averaging window
    sched = torch.optim.lr_scheduler.LambdaLR(
        opt_g, lambda t: 1.0 if t < start else budget.decay_span / (budget.decay_span + t - start))
    data = torch.as_tensor(x)

    def model_draws():
        xi = torch.as_tensor(radial_draws(radial, p, draws, rng))
        u = torch.as_tensor(sphere_draws(p, draws, rng))
        return theta + xi[:, None] * (u @ A.T)

    sum_theta = np.zeros(p)
    sum_sigma = np.zeros((p, p))
    half_theta = []
    audit = []
    for step in range(budget.steps):
        for _ in range(budget.d_steps):
            fake = model_draws().detach()
            d_loss, _ = losses.gan_objective(rule, D(data), D(fake))
            opt_d.zero_grad()
            d_loss.backward()
            opt_d.step()
            D.project()
        fake = model_draws()
        g_loss = losses.torch_score(rule, D(fake), 0).mean() * g_scale
        opt_g.zero_grad()
        g_loss.backward()
        opt_g.step()
        sched.step()
        if not (torch.isfinite(theta).all() and torch.isfinite(A).all()):
            raise FloatingPointError(f"estimate diverged at step {step}")
        if audit_every and step % audit_every == 0:
            audit.append(D.norms())
        if step >= start:
            th = theta.detach().numpy().copy()
            a = A.detach().numpy()
            sum_theta += th
            sum_sigma += a @ a.T
            half_theta.append(th)
    k = max(budget.steps - start, 1)
    theta_hat = sum_theta / k
    sigma_hat = sum_sigma / k
    converged = True
    if len(half_theta) >= 4:
        h = len(half_theta) // 2
        drift = np.linalg.norm(np.mean(half_theta[:h], 0) - np.mean(half_theta[h:], 0))
        scale = math.sqrt(max(np.trace(sigma_hat), 1e-12) / p)
        converged = drift <= budget.tol * scale
    if not converged:
        warnings.warn("robust estimate did not settle within the step budget; returning the tail average")
    return EstimateResult(theta_hat, sigma_hat, converged, audit)


# ---------------------------------------------------------------- sweep


@dataclass
class SweepSpec:
    p: int = 2
    n_grid: list[int] = field(default_factory=lambda: [250, 500, 1000, 2000, 4000])
    eps_grid: list[float] = field(default_factory=lambda: [0.0, 0.1, 0.2])
    repetitions: int = 5
    radial: str = GAUSSIAN
    q_distance: float = 10.0
    kappa_c: float = 1.0
    depth: int = 1
    width: int = 20
    B: float = 1.0
    seed: int = 0


def contaminated_sample(sw: SweepSpec, n: int, eps: float, seed: int):
    """Huber sample around theta = 0, Sigma = I with a point mass at distance q_distance."""
    model = EllipticalModel(np.zeros(sw.p), np.eye(sw.p), sw.radial)
    far = np.full(sw.p, sw.q_distance / math.sqrt(sw.p))

    def p0(k, rng):
        return sample_elliptical(model, k, rng)

    def q(k, rng):
        return np.tile(far, (k, 1))

    x, from_q = sample_huber(p0, q, eps, n, seed)
    return model, x, from_q


def scaling_sweep(sw: SweepSpec, rule: ScoringRule, budget: EstimateBudget = EstimateBudget()) -> dict:
    """Run every (n, epsilon, rep) cell; return rows, per-cell medians and log-log slopes."""
    if not sw.n_grid or not sw.eps_grid:
        raise ValueError("n_grid and eps_grid must be nonempty")
    rows = []
    for n in sw.n_grid:
        for eps in sw.eps_grid:
            for rep in range(sw.repetitions):
                cell_seed = int(np.random.SeedSequence([sw.seed, n, int(round(eps * 1e6)), rep]).generate_state(1)[0])
                model, x, _ = contaminated_sample(sw, n, eps, cell_seed)
                spec = DiscClassSpec(sw.depth, sw.B, kappa_for(sw.p, n, eps, sw.kappa_c), [sw.width] * sw.depth)
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")
                    res = estimate(x, rule, spec, budget, sw.radial, seed=cell_seed)
                rows.append({
                    "p": sw.p, "n": n, "epsilon": eps, "rep": rep,
                    "theta_err_sq": float(np.sum((res.theta - model.theta) ** 2)),
                    "sigma_err_op_sq": op_norm(res.sigma - model.sigma) ** 2,
                    "mean_err_sq": float(np.sum((x.mean(0) - model.theta) ** 2)),
                    "converged": res.converged,
                })
    medians = {}
    for eps in sw.eps_grid:
        for key in ("theta_err_sq", "sigma_err_op_sq", "mean_err_sq"):
            medians[(eps, key)] = [
                float(np.median([r[key] for r in rows if r["epsilon"] == eps and r["n"] == n]))
                for n in sw.n_grid
            ]
    slopes = {}
    logn = np.log(np.asarray(sw.n_grid, dtype=np.float64))
    for eps in sw.eps_grid:
        for key in ("theta_err_sq", "sigma_err_op_sq"):
            if len(sw.n_grid) >= 2:
                slopes[f"eps={eps:g}:{key}"] = float(np.polyfit(logn, np.log(medians[(eps, key)]), 1)[0])
    return {"rows": rows, "medians": medians, "slopes": slopes, "spec": asdict(sw)}


SWEEP_COLUMNS = ["p", "n", "epsilon", "rep", "theta_err_sq", "sigma_err_op_sq"]


def write_sweep(result: dict, csv_path, json_path) -> None:
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        for r in result["rows"]:
            w.writerow([r["p"], r["n"], repr(float(r["epsilon"])), r["rep"],
                        repr(r["theta_err_sq"]), repr(r["sigma_err_op_sq"])])
    summary = {
        "slopes": result["slopes"],
        "medians": {f"eps={e:g}:{k}": v for (e, k), v in result["medians"].items()},
        "spec": result["spec"],
    }
    with open(json_path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
