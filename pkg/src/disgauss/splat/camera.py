"""Pinhole camera and orbit parameterization."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


@dataclass
class Camera:
    """World-to-camera rotation/translation plus pinhole intrinsics.

    Camera frame: x right, y down, z forward; a point is visible when its
    camera-space z exceeds the near plane. Pixel (row i, col j) samples at
    pixel-space (x=j, y=i), so the image center is ((W-1)/2, (H-1)/2).
    """

    rotation: np.ndarray
    translation: np.ndarray
    fx: float
    fy: float
    cx: float
    cy: float
    height: int
    width: int

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        err = np.abs(self.rotation @ self.rotation.T - np.eye(3)).max()
        if err > 1e-6:
            raise ValueError(f"camera rotation not orthonormal (err={err:.2e})")
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")

    @property
    def position(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.rotation.T @ self.translation

    def to_json(self) -> dict:
        return {
            "rotation": [float(v) for v in self.rotation.reshape(-1)],
            "translation": [float(v) for v in self.translation],
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
            "h": self.height, "w": self.width,
        }

    @classmethod
    def from_json(cls, d: dict) -> "Camera":
        return cls(rotation=np.asarray(d["rotation"]).reshape(3, 3),
                   translation=np.asarray(d["translation"]),
                   fx=d["fx"], fy=d["fy"], cx=d["cx"], cy=d["cy"],
                   height=d["h"], width=d["w"])

    def save(self, path):
        with open(path, "w") as f:
            json.dump(self.to_json(), f, indent=1)

    @classmethod
    def load(cls, path) -> "Camera":
        with open(path) as f:
            return cls.from_json(json.load(f))


def orbit_camera(azimuth_deg: float, elevation_deg: float, radius: float,
                 image_size: int = 64, focal: float | None = None,
                 target=(0.0, 0.0, 0.0)) -> Camera:
    """Camera on a fixed-radius orbit looking at ``target`` (y-up world)."""
    az = np.deg2rad(azimuth_deg)
    el = np.deg2rad(elevation_deg)
    target = np.asarray(target, dtype=np.float64)
    pos = target + radius * np.array([
        np.cos(el) * np.sin(az), np.sin(el), np.cos(el) * np.cos(az)])
    fwd = target - pos
    fwd = fwd / np.linalg.norm(fwd)
    up = np.array([0.0, 1.0, 0.0])
    right = np.cross(fwd, up)
    nr = np.linalg.norm(right)
    if nr < 1e-8:  # looking straight up/down
        right = np.array([1.0, 0.0, 0.0])
    else:
        right = right / nr
    down = np.cross(fwd, right)
    R = np.stack([right, down, fwd])
    t = -R @ pos
    f = focal if focal is not None else 1.2 * image_size
    c = (image_size - 1) / 2.0
    return Camera(rotation=R, translation=t, fx=f, fy=f, cx=c, cy=c,
                  height=image_size, width=image_size)
