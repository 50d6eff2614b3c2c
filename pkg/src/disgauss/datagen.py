"""Procedural toy dataset: parametric chair scenes as Gaussian sets.

Each scene is a deterministic function of a 6-factor vector; images are
rendered with the package's own rasterizer, so ground truth is exactly
representable by the model family. Factor labels enable quantitative
disentanglement evaluation (MIG).
"""

from __future__ import annotations

import colorsys
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .splat.camera import Camera, orbit_camera
from .splat.gaussians import GaussianSet, rgb_to_dc, save_point_ply, load_point_ply
from .splat.image_io import load_png, load_raw, save_png, save_raw
from .splat.rasterize import render
from .autodiff import no_grad

FACTOR_NAMES = ("leg_thickness", "leg_height", "seat_size",
                "body_hue", "accent_hue", "brightness")
GEOMETRY_FACTORS = (0, 1, 2)
APPEARANCE_FACTORS = (3, 4, 5)

LEG_RADIUS_RANGE = (0.02, 0.09)
LEG_HEIGHT_RANGE = (0.25, 0.70)
SEAT_HALF_RANGE = (0.28, 0.52)
ORBIT_RADIUS = 2.6
N_GT_POINTS = 1024


@dataclass
class FactorVector:
    values: np.ndarray  # 6 floats in [0,1]

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).reshape(6)
        if self.values.min() < 0 or self.values.max() > 1:
            raise ValueError("factors must lie in [0,1]")

    def __getitem__(self, i):
        return float(self.values[i])

    def as_dict(self) -> dict:
        return {n: float(v) for n, v in zip(FACTOR_NAMES, self.values)}

    @classmethod
    def from_dict(cls, d: dict) -> "FactorVector":
        return cls(np.array([d[n] for n in FACTOR_NAMES]))


@dataclass
class SceneSample:
    scene: GaussianSet
    input_image: np.ndarray          # (H,W,3) float32
    input_camera: Camera
    novel_images: list[np.ndarray]
    novel_cameras: list[Camera]
    point_cloud: np.ndarray          # (N_gt, 3) float32
    factors: FactorVector
    seed: int


def _lerp(lo: float, hi: float, t: float) -> float:
    return lo + (hi - lo) * t


def _hsv(h: float, s: float, v: float) -> np.ndarray:
    return np.array(colorsys.hsv_to_rgb(h % 1.0, s, v), dtype=np.float64)


def _lattice(center, half_extent, counts) -> np.ndarray:
    axes = [np.linspace(c - h, c + h, n) if n > 1 else np.array([c])
            for c, h, n in zip(center, half_extent, counts)]
    g = np.meshgrid(*axes, indexing="ij")
    return np.stack([a.reshape(-1) for a in g], axis=1)


def build_scene(factors: FactorVector) -> GaussianSet:
    """Deterministic parametric chair: seat slab + 4 legs + backrest."""
    leg_r = _lerp(*LEG_RADIUS_RANGE, factors[0])
    leg_h = _lerp(*LEG_HEIGHT_RANGE, factors[1])
    seat_half = _lerp(*SEAT_HALF_RANGE, factors[2])
    body_rgb = _hsv(factors[3], 0.72, 0.90 * factors[5])
    accent_rgb = _hsv(factors[4], 0.80, 0.90 * factors[5])

    y0 = -0.55                     # chair base
    seat_t = 0.06
    back_h = 0.55
    back_t = 0.05

    parts, colors, scales = [], [], []

    seat = _lattice((0.0, y0 + leg_h + seat_t / 2, 0.0),
                    (seat_half, seat_t / 2, seat_half), (14, 2, 14))
    parts.append(seat)
    colors.append(np.tile(body_rgb, (len(seat), 1)))
    seat_cell = 2 * seat_half / 13
    scales.append(np.tile([seat_cell * 0.65, seat_t * 0.55, seat_cell * 0.65],
                          (len(seat), 1)))

    inset = seat_half - max(leg_r, 0.03)
    for sx in (-inset, inset):
        for sz in (-inset, inset):
            leg = _lattice((sx, y0 + leg_h / 2, sz),
                           (leg_r * 0.5, leg_h / 2, leg_r * 0.5), (2, 12, 2))
            parts.append(leg)
            colors.append(np.tile(body_rgb, (len(leg), 1)))
            scales.append(np.tile([leg_r * 0.7, leg_h / 22 * 1.3, leg_r * 0.7],
                                  (len(leg), 1)))

    back_y = y0 + leg_h + seat_t + back_h / 2
    back = _lattice((0.0, back_y, -seat_half + back_t),
                    (seat_half, back_h / 2, back_t / 2), (14, 12, 3))
    parts.append(back)
    colors.append(np.tile(accent_rgb, (len(back), 1)))
    back_cell = 2 * seat_half / 13
    scales.append(np.tile([back_cell * 0.65, back_h / 11 * 0.65, back_t * 0.6],
                          (len(back), 1)))

    pos = np.concatenate(parts)
    rgb = np.concatenate(colors)
    scl = np.concatenate(scales)
    n = len(pos)
    rot = np.zeros((n, 4), dtype=np.float32)
    rot[:, 0] = 1.0
    sh = np.zeros((n, 4, 3), dtype=np.float32)
    sh[:, 0, :] = rgb_to_dc(rgb)
    return GaussianSet(positions=pos, rotations=rot, scales=scl,
                       sh_coeffs=sh, opacities=np.full(n, 0.92, dtype=np.float32))


def scene_point_cloud(gs: GaussianSet, n: int = N_GT_POINTS) -> np.ndarray:
    """Ground-truth cloud: Gaussian centers, FPS-subsampled when larger."""
    pts = gs.positions.astype(np.float64)
    if len(pts) <= n:
        return pts.astype(np.float32)
    idx = kernels.farthest_point_sample(pts, n, start=0)
    return pts[idx].astype(np.float32)


def _scene_cameras(rng: np.random.Generator, n_novel: int,
                   resolution: int) -> tuple[Camera, list[Camera]]:
    az = rng.uniform(0, 360)
    el = rng.uniform(5, 35)
    cam_in = orbit_camera(az, el, ORBIT_RADIUS, image_size=resolution)
    novels = []
    for _ in range(n_novel):
        novels.append(orbit_camera(rng.uniform(0, 360), rng.uniform(5, 35),
                                   ORBIT_RADIUS, image_size=resolution))
    return cam_in, novels


def make_scene(factors: FactorVector, seed: int, n_novel: int = 4,
               resolution: int = 64) -> SceneSample:
    rng = np.random.default_rng([seed, 0xCA3])
    gs = build_scene(factors)
    cam_in, cams_nv = _scene_cameras(rng, n_novel, resolution)
    with no_grad():
        img_in = render(gs, cam_in).color.data
        imgs_nv = [render(gs, c).color.data for c in cams_nv]
    return SceneSample(scene=gs, input_image=img_in, input_camera=cam_in,
                       novel_images=imgs_nv, novel_cameras=cams_nv,
                       point_cloud=scene_point_cloud(gs), factors=factors,
                       seed=seed)


def sample_factors(count: int, seed: int) -> np.ndarray:
    """Stratified grid + jitter per factor (latin-hypercube style), (count, 6)."""
    rng = np.random.default_rng([seed, 0xFAC])
    cols = []
    for _ in range(6):
        strata = (rng.permutation(count) + rng.uniform(0, 1, count)) / count
        cols.append(strata)
    return np.stack(cols, axis=1)


def split_indices(count: int) -> dict[str, list[int]]:
    """Deterministic 85/5/10 train/val/test split by scene index."""
    n_train = int(count * 0.85)
    n_val = max(int(count * 0.05), 1) if count >= 20 else max(count - n_train - 1, 0)
    idx = list(range(count))
    return {"train": idx[:n_train],
            "val": idx[n_train:n_train + n_val],
            "test": idx[n_train + n_val:]}


def generate_dataset(out_dir, count: int, seed: int = 0, n_novel: int = 4,
                     resolution: int = 64, write_png: bool = True) -> Path:
    """Write one directory per scene plus a split manifest; returns the root."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    factors = sample_factors(count, seed)
    for i in range(count):
        scene_dir = out / f"scene_{i:05d}"
        scene_dir.mkdir(exist_ok=True)
        sample = make_scene(FactorVector(factors[i]), seed=int(seed * 100003 + i),
                            n_novel=n_novel, resolution=resolution)
        save_raw(scene_dir / "input.npy", sample.input_image)
        sample.input_camera.save(scene_dir / "input_camera.json")
        if write_png:
            save_png(scene_dir / "input.png", sample.input_image)
        for v, (img, cam) in enumerate(zip(sample.novel_images,
                                           sample.novel_cameras)):
            save_raw(scene_dir / f"novel_{v:02d}.npy", img)
            cam.save(scene_dir / f"novel_camera_{v:02d}.json")
            if write_png:
                save_png(scene_dir / f"novel_{v:02d}.png", img)
        save_point_ply(scene_dir / "points.ply", sample.point_cloud)
        with open(scene_dir / "factors.json", "w") as f:
            json.dump(sample.factors.as_dict(), f, indent=1)
    manifest = {"count": count, "seed": seed, "resolution": resolution,
                "n_novel": n_novel, "splits": split_indices(count)}
    with open(out / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=1)
    return out


@dataclass
class Dataset:
    root: Path
    manifest: dict
    input_images: np.ndarray        # (S, H, W, 3)
    novel_images: np.ndarray        # (S, V, H, W, 3)
    input_cameras: list[Camera]
    novel_cameras: list[list[Camera]]
    point_clouds: np.ndarray        # (S, N, 3)
    factors: np.ndarray             # (S, 6)

    @property
    def count(self) -> int:
        return len(self.input_images)

    def split(self, name: str) -> list[int]:
        return self.manifest["splits"][name]


def load_dataset(root) -> Dataset:
    root = Path(root)
    with open(root / "manifest.json") as f:
        manifest = json.load(f)
    count = manifest["count"]
    inputs, novels, in_cams, nv_cams, clouds, facs = [], [], [], [], [], []
    for i in range(count):
        d = root / f"scene_{i:05d}"
        inputs.append(load_raw(d / "input.npy"))
        in_cams.append(Camera.load(d / "input_camera.json"))
        imgs, cams = [], []
        for v in range(manifest["n_novel"]):
            imgs.append(load_raw(d / f"novel_{v:02d}.npy"))
            cams.append(Camera.load(d / f"novel_camera_{v:02d}.json"))
        novels.append(np.stack(imgs))
        nv_cams.append(cams)
        clouds.append(load_point_ply(d / "points.ply"))
        with open(d / "factors.json") as f:
            facs.append(FactorVector.from_dict(json.load(f)).values)
    return Dataset(root=root, manifest=manifest,
                   input_images=np.stack(inputs), novel_images=np.stack(novels),
                   input_cameras=in_cams, novel_cameras=nv_cams,
                   point_clouds=np.stack(clouds), factors=np.stack(facs))


# -- disentanglement metric ----------------------------------------------------

def _discretize(x: np.ndarray, bins: int) -> np.ndarray:
    out = np.empty(x.shape, dtype=np.int64)
    for j in range(x.shape[1]):
        col = x[:, j]
        lo, hi = col.min(), col.max()
        if hi - lo < 1e-12:
            out[:, j] = 0
        else:
            out[:, j] = np.clip(((col - lo) / (hi - lo) * bins).astype(np.int64),
                                0, bins - 1)
    return out


def _discrete_mi(a: np.ndarray, b: np.ndarray, bins: int) -> float:
    joint = np.histogram2d(a, b, bins=(bins, bins))[0]
    joint /= joint.sum()
    pa = joint.sum(axis=1, keepdims=True)
    pb = joint.sum(axis=0, keepdims=True)
    nz = joint > 0
    return float((joint[nz] * np.log(joint[nz] / (pa @ pb)[nz])).sum())


def _entropy(a: np.ndarray, bins: int) -> float:
    p = np.bincount(a, minlength=bins).astype(np.float64)
    p /= p.sum()
    nz = p > 0
    return float(-(p[nz] * np.log(p[nz])).sum())


def mig(latents: np.ndarray, factors: np.ndarray, bins: int = 20) -> float:
    """Mutual Information Gap in [0,1].

    latents (S, D) per-scene posterior means, factors (S, K) ground truth.
    Each latent dimension is discretized into ``bins`` bins; MIG is the mean
    over factors of (top1 - top2 MI) / H(factor). Constant latent dimensions
    contribute zero MI.
    """
    lat = _discretize(np.asarray(latents, dtype=np.float64), bins)
    fac = _discretize(np.asarray(factors, dtype=np.float64), bins)
    S, D = lat.shape
    K = fac.shape[1]
    mi = np.zeros((D, K))
    for j in range(D):
        for k in range(K):
            mi[j, k] = _discrete_mi(lat[:, j], fac[:, k], bins)
    gaps = []
    for k in range(K):
        h = _entropy(fac[:, k], bins)
        if h < 1e-12:
            continue
        srt = np.sort(mi[:, k])[::-1]
        top2 = srt[1] if len(srt) > 1 else 0.0
        gaps.append((srt[0] - top2) / h)
    return float(np.mean(gaps)) if gaps else 0.0
