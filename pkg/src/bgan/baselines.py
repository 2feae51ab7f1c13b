"""Non-local means as a classical, non-learned denoising reference."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from skimage.restoration import denoise_nl_means

from .stack_io import ImageStack


@dataclass
class NlmSpec:
    patch: int = 7
    window: int = 21
    h: float | None = None  # None: 0.8 x per-image noise std estimate
    h_factor: float = 0.8

    def validate(self) -> None:
        if self.patch < 1 or self.patch % 2 == 0 or self.window % 2 == 0:
            raise ValueError(f"patch ({self.patch}) and window ({self.window}) must be odd positive sizes")
        if self.patch >= self.window:
            raise ValueError(f"patch {self.patch} must be smaller than window {self.window}")
        if self.h is not None and not self.h > 0:
            raise ValueError(f"h must be positive, got {self.h}")


_LAPLACE = np.array([[1.0, -2.0, 1.0], [-2.0, 4.0, -2.0], [1.0, -2.0, 1.0]])


def noise_std(img: np.ndarray) -> float:
    """Immerkaer's estimate: mean |difference-of-Laplacians| scaled to a Gaussian std."""
    resp = ndimage.convolve(np.asarray(img, dtype=np.float64), _LAPLACE, mode="reflect")[1:-1, 1:-1]
    return float(np.sqrt(np.pi / 2) * np.abs(resp).mean() / 6.0)


def _h_for(img: np.ndarray, spec: NlmSpec) -> float:
    if spec.h is not None:
        return spec.h
    sigma = noise_std(img)
    # noiseless images still need a positive bandwidth
    return max(spec.h_factor * sigma, 1e-4)


def nlm_denoise(stack, spec: NlmSpec = NlmSpec()) -> ImageStack:
    """Patch-weighted average per pixel (weights exp(-d^2 / h^2), fast mode)."""
    spec.validate()
    px = np.asarray(getattr(stack, "pixels", stack), dtype=np.float64)
    if px.ndim == 2:
        px = px[None]
    if min(px.shape[1:]) < spec.window:
        raise ValueError(f"image {px.shape[1:]} is smaller than the search window {spec.window}")
    out = np.empty_like(px)
    for i, img in enumerate(px):
        out[i] = denoise_nl_means(img, patch_size=spec.patch, patch_distance=spec.window // 2,
                                  h=_h_for(img, spec), fast_mode=True)
    meta = dict(getattr(stack, "meta", {}) or {})
    meta["source"] = "nlm"
    return ImageStack(out.astype(np.float32), getattr(stack, "labels", None), meta)
