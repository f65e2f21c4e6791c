"""Latent-space analysis: PCA of per-Gaussian features and linear-SVM edit directions."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class PcaResult:
    mean: np.ndarray  # (D,)
    components: np.ndarray  # (k, D) orthonormal rows
    explained_variance: np.ndarray  # (k,) descending
    projections: np.ndarray  # (N, k)

    @property
    def k(self):
        return len(self.explained_variance)

    def reconstruct(self, projections=None):
        p = self.projections if projections is None else np.asarray(projections)
        return self.mean + p @ self.components


def pca_features(features, k: int = 3) -> PcaResult:
    """Eigen-decomposition of the sample covariance of ``features`` (N x D).

    Each component is sign-fixed so its largest-magnitude entry is positive.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("features must be a 2-D array")
    n, dim = x.shape
    if n < 2:
        raise ValueError("need at least two rows")
    if not 1 <= k <= dim:
        raise ValueError(f"k must be in [1, {dim}], got {k}")
    mean = x.mean(axis=0)
    xc = x - mean
    cov = xc.T @ xc / (n - 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1][:k]
    comps = evecs[:, order].T.copy()
    pivot = np.argmax(np.abs(comps), axis=1)
    signs = np.sign(comps[np.arange(k), pivot])
    comps *= signs[:, None]
    var = np.clip(evals[order], 0.0, None)
    return PcaResult(mean, comps, var, xc @ comps.T)


def projection_colors(result: PcaResult, channels=3):
    """Map the first ``channels`` projections to [0, 1] per channel (min-max)."""
    p = result.projections[:, :channels]
    lo, hi = p.min(axis=0), p.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    col = (p - lo) / span
    if col.shape[1] < 3:
        col = np.concatenate([col, np.zeros((len(col), 3 - col.shape[1]))], axis=1)
    return col


def uv_image(mesh, bindings, values, resolution: int):
    """Scatter per-Gaussian RGB values onto a UV-space image at their binding texel."""
    uv = np.einsum("nk,nkj->nj", bindings.barycentric, mesh.uv[mesh.faces[bindings.face_index]])
    ij = np.clip(np.floor(uv * resolution).astype(np.int64), 0, resolution - 1)
    img = np.zeros((resolution, resolution, 3))
    img[ij[:, 1], ij[:, 0]] = values
    return img


# ---------------------------------------------------------------------------
# latent directions

@dataclass
class LatentDirection:
    direction: np.ndarray  # unit (D_z,)
    bias: float
    name: str = ""
    train_accuracy: float = 0.0

    def __post_init__(self):
        self.direction = np.asarray(self.direction, dtype=np.float64)
        n = np.linalg.norm(self.direction)
        if not np.isfinite(n) or n == 0.0:
            raise ValueError("direction must be a non-zero finite vector")

    def score(self, codes):
        """Signed distance-like decision value; +1 side is the positive class."""
        return np.asarray(codes, dtype=np.float64) @ self.direction + self.bias


def svm_direction(codes, labels, reg_strength: float = 1e-2, iterations: int = 3000, name: str = "",
                  seed: int = 0) -> LatentDirection:
    """Linear SVM by full-batch sub-gradient descent on hinge loss + L2.

    Codes are centered and divided by one global RMS scale before training so
    the regularizer does not depend on the code magnitude; a single scalar scale
    keeps the max-margin geometry.  The returned direction lives in raw code
    space, normalized, with the bias rescaled so score = d . z + bias.
    ``seed`` only perturbs the initial point; the iteration itself is deterministic.
    """
    x = np.asarray(codes, dtype=np.float64)
    y = np.where(np.asarray(labels, dtype=bool), 1.0, -1.0)
    if x.ndim != 2 or len(x) != len(y):
        raise ValueError("codes must be (N, D) with one label per code")
    if np.all(y > 0) or np.all(y < 0):
        raise ValueError("both classes must be present")
    if reg_strength <= 0:
        raise ValueError("reg_strength must be positive")
    m = x.mean(axis=0)
    s = float(np.sqrt(np.mean((x - m) ** 2)))
    s = s if s > 0 else 1.0
    xs = (x - m) / s
    n, dim = xs.shape
    w = np.random.default_rng(seed).normal(0.0, 1e-6, size=dim)
    b = 0.0
    w_avg, b_avg, n_avg = np.zeros(dim), 0.0, 0
    for t in range(1, iterations + 1):
        margin = y * (xs @ w + b)
        act = margin < 1.0
        gw = reg_strength * w - (y[act, None] * xs[act]).sum(axis=0) / n
        gb = -y[act].sum() / n
        eta = 1.0 / (reg_strength * (t + 10))
        w = w - eta * gw
        b = b - eta * gb
        if t > iterations // 2:
            w_avg += w
            b_avg += b
            n_avg += 1
    w, b = w_avg / n_avg, b_avg / n_avg
    # back to raw code space: w.(z - m)/s + b
    w_raw = w / s
    b_raw = b - w_raw @ m
    norm = np.linalg.norm(w_raw)
    if norm == 0.0:
        raise ValueError("degenerate solution: zero weight vector")
    d = w_raw / norm
    bias = b_raw / norm
    acc = float(np.mean(np.sign(x @ d + bias) == y))
    return LatentDirection(d, float(bias), name, acc)


def edit_latent(z, direction: LatentDirection, magnitude: float):
    z = np.asarray(z, dtype=np.float64)
    if z.shape != direction.direction.shape:
        raise ValueError(f"code has shape {z.shape}, direction has {direction.direction.shape}")
    return z + magnitude * direction.direction


def scalp_extent(local, scalp_mask):
    """Mean local displacement norm over scalp-bound Gaussians (hair volume proxy)."""
    mask = np.asarray(scalp_mask, dtype=bool)
    if not mask.any():
        raise ValueError("no scalp-bound Gaussians")
    return float(np.mean(np.linalg.norm(local.mu[mask], axis=1)))
