"""Image, mask, regularization and prior-anchoring losses, each returning (value, gradient)."""
from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Callable

import numpy as np
from scipy.ndimage import correlate1d

from .renderer.gaussians import FIELDS, LocalGaussianSet

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


@dataclass
class LossWeights:
    lambda_pix: float = 1.0
    lambda_l1: float = 0.8
    lambda_ssim: float = 0.2
    lambda_alpha: float = 0.1
    lambda_percep: float = 0.0
    lambda_sigma: float = 1.0
    lambda_mu: float = 1.0
    lambda_prior: float = 0.1
    scale_threshold: float = 0.6
    scalp_mu_factor: float = 0.01

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ValueError(f"{f.name} must be non-negative")

    def to_dict(self):
        return {f.name: float(getattr(self, f.name)) for f in fields(self)}


def _check_shapes(a, b):
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")


def l1_loss(pred, target):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    _check_shapes(pred, target)
    diff = pred - target
    return float(np.mean(np.abs(diff))), np.sign(diff) / diff.size


def alpha_loss(pred_alpha, target_alpha):
    return l1_loss(pred_alpha, target_alpha)


def gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    x = np.arange(size) - size // 2
    w = np.exp(-x * x / (2.0 * sigma * sigma))
    return w / w.sum()


def _blur(img, w):
    # zero-padded 'same' filtering over the two spatial axes
    out = correlate1d(img, w, axis=0, mode="constant", cval=0.0)
    return correlate1d(out, w, axis=1, mode="constant", cval=0.0)


def ssim_map(x, y):
    w = gaussian_window()
    mx, my = _blur(x, w), _blur(y, w)
    exx, eyy, exy = _blur(x * x, w), _blur(y * y, w), _blur(x * y, w)
    a1 = 2.0 * mx * my + SSIM_C1
    a2 = 2.0 * (exy - mx * my) + SSIM_C2
    b1 = mx * mx + my * my + SSIM_C1
    b2 = (exx - mx * mx) + (eyy - my * my) + SSIM_C2
    s = (a1 * a2) / (b1 * b2)
    return s, (mx, my, a1, a2, b1, b2, w)


def ssim(pred, target):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    _check_shapes(pred, target)
    if min(pred.shape[:2]) < SSIM_WINDOW:
        raise ValueError(f"image smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")
    return float(np.mean(ssim_map(pred, target)[0]))


def ssim_loss(pred, target):
    """1 - mean SSIM over pixels and channels, with its gradient w.r.t. ``pred``."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    _check_shapes(pred, target)
    if min(pred.shape[:2]) < SSIM_WINDOW:
        raise ValueError(f"image smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")
    s, (mx, my, a1, a2, b1, b2, w) = ssim_map(pred, target)
    g = -1.0 / s.size
    d_mx = g * s * (2.0 * my / a1 - 2.0 * my / a2 - 2.0 * mx / b1 + 2.0 * mx / b2)
    d_exx = g * (-s / b2)
    d_exy = g * (2.0 * s / a2)
    # the symmetric zero-padded filter is its own adjoint
    grad = _blur(d_mx, w) + 2.0 * pred * _blur(d_exx, w) + target * _blur(d_exy, w)
    return 1.0 - float(np.mean(s)), grad


def reg_loss(local: LocalGaussianSet, scalp_mask, w: LossWeights):
    """Penalize oversized Gaussians and large offsets from the binding point.

    Per-Gaussian norms are averaged over the Gaussian count.  Scales below the
    threshold are clamped up to it, so they cost a constant and get no gradient.
    Scalp Gaussians have their displacement weight reduced so hair can move off
    the bald surface.
    """
    scalp_mask = np.asarray(scalp_mask, dtype=bool)
    n = len(local)
    if len(scalp_mask) != n:
        raise ValueError("scalp mask length must equal Gaussian count")
    grad = LocalGaussianSet.zeros(n)
    if n == 0:
        return 0.0, grad
    sig = np.exp(local.log_scale)
    m = np.maximum(w.scale_threshold, sig)
    mn = np.linalg.norm(m, axis=1)
    scale_term = w.lambda_sigma * float(np.mean(mn))
    active = sig > w.scale_threshold
    grad.log_scale = w.lambda_sigma / n * np.where(active, m / np.maximum(mn, 1e-300)[:, None] * sig, 0.0)

    lam = w.lambda_mu * np.where(scalp_mask, w.scalp_mu_factor, 1.0)
    un = np.linalg.norm(local.mu, axis=1)
    disp_term = float(np.mean(lam * un))
    safe = np.where(un > 0.0, un, 1.0)
    grad.mu = np.where((un > 0.0)[:, None], (lam / n / safe)[:, None] * local.mu, 0.0)
    return scale_term + disp_term, grad


def prior_reg_loss(current: LocalGaussianSet, anchor: LocalGaussianSet, weight: float = 1.0):
    """Sum over attribute groups of the mean squared distance to the anchor."""
    n = len(current)
    if len(anchor) != n:
        raise ValueError("current and anchor must have the same Gaussian count")
    grad = LocalGaussianSet.zeros(n)
    if n == 0:
        return 0.0, grad
    total = 0.0
    for f in FIELDS:
        d = getattr(current, f) - getattr(anchor, f)
        total += float(np.sum(d * d)) / n
        setattr(grad, f, weight * 2.0 * d / n)
    return weight * total, grad


PerceptualHook = Callable[[np.ndarray, np.ndarray], tuple]


def total_loss(rgb, alpha, target_rgb, target_alpha, local: LocalGaussianSet, scalp_mask, w: LossWeights,
               anchor: LocalGaussianSet | None = None, percep: PerceptualHook | None = None):
    """Weighted sum of all terms.

    Returns (value, parts, d_rgb, d_alpha, d_local).  ``percep`` is an optional
    external scorer returning (value, d_rgb); without one the term is zero.
    """
    parts = {}
    v_l1, g_l1 = l1_loss(rgb, target_rgb)
    parts["l1"] = v_l1
    d_rgb = (w.lambda_pix * w.lambda_l1) * g_l1
    if w.lambda_ssim > 0 and w.lambda_pix > 0:
        v_ss, g_ss = ssim_loss(rgb, target_rgb)
        parts["ssim"] = v_ss
        d_rgb = d_rgb + (w.lambda_pix * w.lambda_ssim) * g_ss
    else:
        parts["ssim"] = 0.0
    v_a, g_a = alpha_loss(alpha, target_alpha)
    parts["alpha"] = v_a
    d_alpha = w.lambda_alpha * g_a
    if percep is not None and w.lambda_percep > 0:
        v_p, g_p = percep(rgb, target_rgb)
        parts["percep"] = float(v_p)
        d_rgb = d_rgb + w.lambda_percep * g_p
    else:
        parts["percep"] = 0.0
    v_r, d_local = reg_loss(local, scalp_mask, w)
    parts["reg"] = v_r
    if anchor is not None and w.lambda_prior > 0:
        v_pr, g_pr = prior_reg_loss(local, anchor, w.lambda_prior)
        parts["prior"] = v_pr
        for f in FIELDS:
            setattr(d_local, f, getattr(d_local, f) + getattr(g_pr, f))
    else:
        parts["prior"] = 0.0
    value = (w.lambda_pix * (w.lambda_l1 * parts["l1"] + w.lambda_ssim * parts["ssim"])
             + w.lambda_alpha * parts["alpha"] + w.lambda_percep * parts["percep"]
             + parts["reg"] + parts["prior"])
    return value, parts, d_rgb, d_alpha, d_local
