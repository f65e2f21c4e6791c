from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class Camera:
    """Pinhole camera, OpenCV convention (x right, y down, z forward).

    Pixel (i, j) covers [i, i+1) x [j, j+1); its center is at (i + 0.5, j + 0.5).
    """

    rotation: np.ndarray  # world -> view
    translation: np.ndarray
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    near: float = 0.01

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise ValueError("image size must be at least 1x1")

    @property
    def position(self):
        return -self.rotation.T @ self.translation

    @classmethod
    def look_at(cls, eye, target, up, fx, fy, width, height, cx=None, cy=None, near=0.01):
        eye = np.asarray(eye, dtype=np.float64)
        forward = np.asarray(target, dtype=np.float64) - eye
        forward /= np.linalg.norm(forward)
        right = np.cross(forward, np.asarray(up, dtype=np.float64))
        right /= np.linalg.norm(right)
        down = np.cross(forward, right)
        R = np.stack([right, down, forward])
        return cls(R, -R @ eye, fx, fy,
                   width / 2.0 if cx is None else cx,
                   height / 2.0 if cy is None else cy,
                   int(width), int(height), near)

    @classmethod
    def orbit(cls, azimuth_deg, elevation_deg, radius, size, focal=None, target=(0.0, 0.0, 0.0), near=0.01):
        """Camera on a sphere around ``target``; azimuth 0, elevation 0 sits on +z looking back."""
        az, el = np.radians(azimuth_deg), np.radians(elevation_deg)
        eye = np.asarray(target) + radius * np.array([np.cos(el) * np.sin(az), np.sin(el), np.cos(el) * np.cos(az)])
        f = default_focal(size) if focal is None else focal
        return cls.look_at(eye, target, (0.0, 1.0, 0.0), f, f, size, size, near=near)

    def to_dict(self):
        return {
            "rotation": self.rotation.tolist(), "translation": self.translation.tolist(),
            "fx": float(self.fx), "fy": float(self.fy), "cx": float(self.cx), "cy": float(self.cy),
            "width": int(self.width), "height": int(self.height), "near": float(self.near),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["rotation"]), np.array(d["translation"]), d["fx"], d["fy"], d["cx"], d["cy"],
                   int(d["width"]), int(d["height"]), d.get("near", 0.01))


def default_focal(size):
    return 1.6 * size
