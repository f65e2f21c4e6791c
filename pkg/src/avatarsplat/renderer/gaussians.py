from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

FIELDS = ("mu", "log_scale", "rot", "color", "opacity")
WIDTHS = {"mu": 3, "log_scale": 3, "rot": 4, "color": 3, "opacity": 1}


@dataclass
class LocalGaussianSet:
    """Triangle-local, pre-activation Gaussian attributes.

    ``rot`` is kept unit-norm by whoever updates it; ``opacity`` is a logit.
    Bindings live alongside in :class:`~avatarsplat.geometry.Bindings`.
    """

    mu: np.ndarray
    log_scale: np.ndarray
    rot: np.ndarray
    color: np.ndarray
    opacity: np.ndarray

    def __post_init__(self):
        for name in FIELDS:
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        n = len(self.mu)
        for name in FIELDS:
            arr = getattr(self, name)
            want = (n,) if name == "opacity" else (n, WIDTHS[name])
            if arr.shape != want:
                raise ValueError(f"{name} has shape {arr.shape}, expected {want}")

    def __len__(self):
        return len(self.mu)

    @classmethod
    def zeros(cls, n):
        return cls(np.zeros((n, 3)), np.zeros((n, 3)), np.zeros((n, 4)), np.zeros((n, 3)), np.zeros(n))

    def copy(self):
        return LocalGaussianSet(*(getattr(self, f).copy() for f in FIELDS))

    def as_dict(self):
        return {f: getattr(self, f) for f in FIELDS}

    @classmethod
    def from_dict(cls, d):
        return cls(*(d[f] for f in FIELDS))

    def packed(self):
        """(N, 14) matrix in decoder-output order."""
        return np.concatenate([self.mu, self.log_scale, self.rot, self.color, self.opacity[:, None]], axis=1)

    @classmethod
    def from_packed(cls, a):
        return cls(a[:, 0:3], a[:, 3:6], a[:, 6:10], a[:, 10:13], a[:, 13])

    def subset(self, idx):
        return LocalGaussianSet(*(getattr(self, f)[idx] for f in FIELDS))

    def normalize_rotations(self):
        self.rot /= np.linalg.norm(self.rot, axis=1, keepdims=True)

    def to_float32_values(self):
        """Copy with every field rounded through float32 (the on-disk precision)."""
        return LocalGaussianSet(*(getattr(self, f).astype(np.float32).astype(np.float64) for f in FIELDS))

    def allclose(self, other, atol=0.0):
        return all(np.allclose(getattr(self, f), getattr(other, f), atol=atol, rtol=0) for f in FIELDS)

    def array_equal(self, other):
        return all(np.array_equal(getattr(self, f), getattr(other, f)) for f in FIELDS)


@dataclass
class WorldGaussianSet:
    mu: np.ndarray
    scale: np.ndarray
    rot: np.ndarray
    color: np.ndarray
    alpha: np.ndarray

    def __len__(self):
        return len(self.mu)

    def permuted(self, perm):
        return WorldGaussianSet(*(getattr(self, f.name)[perm] for f in fields(self)))

    @classmethod
    def concat(cls, sets):
        return cls(*(np.concatenate([getattr(s, f.name) for s in sets]) for f in fields(cls)))


@dataclass
class RenderGradients:
    """Gradients w.r.t. the local parameters plus the world-space intermediates."""

    local: LocalGaussianSet
    world: WorldGaussianSet
    mean2d: np.ndarray
    conic: np.ndarray

    @property
    def mu_local(self):
        return self.local.mu

    @property
    def log_scale_local(self):
        return self.local.log_scale

    @property
    def rot_local(self):
        return self.local.rot

    @property
    def color(self):
        return self.local.color

    @property
    def opacity_logit(self):
        return self.local.opacity
