"""Synthetic clamp phantoms and the additive-noise forward model y = a * x + noise."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage

from .stack_io import ImageStack, normalize

NOISELESS = math.inf


@dataclass
class PhantomSpec:
    """Crab-claw phantoms: a round body with two arms opening by a per-class angle.

    Shape sizes default to fractions of the image size when left as ``None``.
    """

    size: int = 64
    n_conformations: int = 5
    angle_min: float = 0.35
    angle_max: float = 1.40
    arm_length: float | None = None
    arm_width: float | None = None
    body_radius: float | None = None
    rotate: bool = True
    rotation_range: float = 2 * math.pi

    @property
    def angles(self) -> np.ndarray:
        if self.n_conformations == 1:
            return np.array([self.angle_min])
        return np.linspace(self.angle_min, self.angle_max, self.n_conformations)

    def dims(self) -> tuple[float, float, float]:
        d = self.size
        arm_length = self.arm_length if self.arm_length is not None else 0.25 * d
        arm_width = self.arm_width if self.arm_width is not None else 0.09 * d
        body_radius = self.body_radius if self.body_radius is not None else 0.16 * d
        return arm_length, arm_width, body_radius

    def validate(self) -> None:
        if self.size < 8:
            raise ValueError(f"phantom size must be >= 8, got {self.size}")
        if self.n_conformations < 1:
            raise ValueError("n_conformations must be >= 1")
        if self.n_conformations > 1 and not self.angle_max > self.angle_min:
            raise ValueError("angle_max must exceed angle_min so angles strictly increase")
        arm_length, arm_width, body_radius = self.dims()
        if min(arm_length, arm_width, body_radius) <= 0:
            raise ValueError("shape parameters must be positive")
        reach = body_radius + arm_length + arm_width / 2
        if reach > self.size / 2 - 1:
            raise ValueError(
                f"shape reaches {reach:.1f} px from the centre but the image half-width "
                f"is {self.size / 2:.1f} px"
            )


@dataclass
class ForwardModelSpec:
    snr: float = 0.05
    psf_radius: int = 0  # 0 means identity kernel
    psf_sigma: float = 1.0

    def validate(self) -> None:
        if not self.snr > 0:
            raise ValueError(f"snr must be positive, got {self.snr}")
        if self.psf_radius < 0:
            raise ValueError("psf_radius must be >= 0")

    def kernel(self) -> np.ndarray:
        if self.psf_radius == 0:
            return np.ones((1, 1))
        r = np.arange(-self.psf_radius, self.psf_radius + 1)
        g = np.exp(-0.5 * (r / self.psf_sigma) ** 2)
        k = np.outer(g, g)
        return k / k.sum()


def _segment_distance(px, py, ex, ey):
    # distance from points to the segment (0,0)-(ex,ey)
    t = np.clip((px * ex + py * ey) / (ex * ex + ey * ey), 0.0, 1.0)
    return np.hypot(px - t * ex, py - t * ey)


def render_one(spec: PhantomSpec, opening: float, orientation: float) -> np.ndarray:
    arm_length, arm_width, body_radius = spec.dims()
    d = spec.size
    c = (d - 1) / 2.0
    yy, xx = np.mgrid[0:d, 0:d].astype(np.float64)
    px, py = xx - c, yy - c
    # signed distances (pixels), negative inside
    sd = np.hypot(px, py) - body_radius
    reach = body_radius + arm_length
    for sign in (-1.0, 1.0):
        phi = orientation + sign * opening / 2
        arm = _segment_distance(px, py, reach * math.cos(phi), reach * math.sin(phi)) - arm_width / 2
        sd = np.minimum(sd, arm)
    # one-pixel linear ramp anti-aliasing
    return np.clip(0.5 - sd, 0.0, 1.0)


def render_phantoms(spec: PhantomSpec, n_per_conformation: int, seed: int) -> ImageStack:
    """n images per conformation, labelled by conformation index (class-major order)."""
    spec.validate()
    angles = spec.angles
    k = len(angles)
    images = np.empty((k * n_per_conformation, spec.size, spec.size), dtype=np.float32)
    labels = np.repeat(np.arange(k, dtype=np.int32), n_per_conformation)
    for i in range(len(labels)):
        rng = np.random.default_rng([seed, i])
        orientation = rng.uniform(0.0, spec.rotation_range) if spec.rotate else 0.0
        images[i] = render_one(spec, angles[labels[i]], orientation)
    meta = {
        "source": "phantom",
        "normalization": {"min": 0.0, "max": 1.0},
        "labels_meaning": "conformation index",
        "phantom": asdict(spec),
        "seed": seed,
    }
    return ImageStack(images, labels, meta)


def raw_pixels(stack: ImageStack) -> np.ndarray:
    """Pixels mapped back through the sidecar's normalization record."""
    norm = stack.meta.get("normalization")
    px = np.asarray(stack.pixels, dtype=np.float64)
    if norm is None:
        return px
    return px * (norm["max"] - norm["min"]) + norm["min"]


def measure_snr(clean: ImageStack, noisy: ImageStack) -> float:
    """Pooled Var(clean) / Var(noisy - clean), both in the original intensity scale."""
    if clean.pixels.shape != noisy.pixels.shape:
        raise ValueError(f"stack shapes differ: {clean.pixels.shape} vs {noisy.pixels.shape}")
    x = raw_pixels(clean)
    noise_var = float(np.var(raw_pixels(noisy) - x))
    if noise_var == 0.0:
        raise ValueError("noise variance is zero; SNR is undefined")
    return float(np.var(x)) / noise_var


def apply_psf(pixels: np.ndarray, fm: ForwardModelSpec) -> np.ndarray:
    pixels = np.asarray(pixels, dtype=np.float64)
    if fm.psf_radius == 0:
        return pixels.copy()
    return ndimage.convolve(pixels, fm.kernel()[None], mode="reflect")


def corrupt(clean: ImageStack, fm: ForwardModelSpec, seed: int) -> ImageStack:
    """Blur by the PSF, add i.i.d. Gaussian noise at the target pooled SNR, renormalize.

    One noise variance is used for the whole stack. The returned pixels are in
    [0, 1]; ``meta["normalization"]`` recovers the raw values.
    """
    fm.validate()
    clean.validate()
    blurred = apply_psf(raw_pixels(clean), fm)
    if fm.snr == NOISELESS:
        raw = blurred
        sigma = 0.0
    else:
        signal_var = float(np.var(blurred))
        if signal_var == 0.0:
            raise ValueError("clean stack has zero pixel variance; cannot calibrate SNR")
        sigma = math.sqrt(signal_var / fm.snr)
        raw = np.empty_like(blurred)
        for i in range(len(blurred)):
            rng = np.random.default_rng([seed, i, 1])
            raw[i] = blurred[i] + sigma * rng.standard_normal(blurred.shape[1:])
    pixels, norm = normalize(raw)
    meta = {
        "source": "corrupt",
        "normalization": norm,
        "snr": None if fm.snr == NOISELESS else fm.snr,
        "noise_sigma": sigma,
        "forward_model": {"snr": None if fm.snr == NOISELESS else fm.snr,
                          "psf_radius": fm.psf_radius, "psf_sigma": fm.psf_sigma},
        "seed": seed,
    }
    if "labels_meaning" in clean.meta:
        meta["labels_meaning"] = clean.meta["labels_meaning"]
    labels = None if clean.labels is None else clean.labels.copy()
    return ImageStack(pixels.astype(np.float32), labels, meta)
