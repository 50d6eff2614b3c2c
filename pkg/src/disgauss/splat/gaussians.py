"""Explicit Gaussian scene container and PLY import/export."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..autodiff import Tensor

SH_C0 = 0.28209479177387814


@dataclass
class GaussianSet:
    """positions (N,3), rotations (N,4) unit wxyz, scales (N,3) > 0,
    sh_coeffs (N,B,3) with B=(L+1)^2, opacities (N,) in [0,1]."""

    positions: np.ndarray
    rotations: np.ndarray
    scales: np.ndarray
    sh_coeffs: np.ndarray
    opacities: np.ndarray

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float32).reshape(-1, 3)
        n = len(self.positions)
        self.rotations = np.asarray(self.rotations, dtype=np.float32).reshape(n, 4)
        self.scales = np.asarray(self.scales, dtype=np.float32).reshape(n, 3)
        sh = np.asarray(self.sh_coeffs, dtype=np.float32)
        b = sh.size // (3 * n) if n else (sh.shape[1] if sh.ndim == 3 else 1)
        self.sh_coeffs = sh.reshape(n, b, 3)
        self.opacities = np.asarray(self.opacities, dtype=np.float32).reshape(n)

    def __len__(self):
        return len(self.positions)

    @property
    def sh_degree(self) -> int:
        return int(np.sqrt(self.sh_coeffs.shape[1])) - 1

    def validate(self, atol: float = 1e-5):
        qn = np.linalg.norm(self.rotations, axis=1)
        if len(self) and np.abs(qn - 1).max() > atol:
            raise ValueError(f"quaternions not unit norm (max err {np.abs(qn-1).max():.2e})")
        if len(self) and self.scales.min() <= 0:
            raise ValueError("scales must be positive")
        if len(self) and (self.opacities.min() < 0 or self.opacities.max() > 1):
            raise ValueError("opacities must lie in [0,1]")
        b = self.sh_coeffs.shape[1]
        if int(np.sqrt(b)) ** 2 != b:
            raise ValueError(f"sh coefficient count {b} is not a square")

    def to_tensors(self, dtype=np.float32) -> "GaussianTensors":
        return GaussianTensors(
            positions=Tensor(self.positions.astype(dtype)),
            rotations=Tensor(self.rotations.astype(dtype)),
            scales=Tensor(self.scales.astype(dtype)),
            sh_coeffs=Tensor(self.sh_coeffs.astype(dtype)),
            opacities=Tensor(self.opacities.astype(dtype)))


@dataclass
class GaussianTensors:
    """Tensor view of a Gaussian scene, optionally batched with leading dims."""

    positions: Tensor
    rotations: Tensor
    scales: Tensor
    sh_coeffs: Tensor
    opacities: Tensor

    def to_set(self, index=None) -> GaussianSet:
        sel = (lambda a: a) if index is None else (lambda a: a[index])
        return GaussianSet(positions=sel(self.positions.data),
                           rotations=sel(self.rotations.data),
                           scales=sel(self.scales.data),
                           sh_coeffs=sel(self.sh_coeffs.data),
                           opacities=sel(self.opacities.data))


# -- PLY ----------------------------------------------------------------------

_EPS = 1e-6


def save_gaussian_ply(path, gs: GaussianSet):
    """Write the de-facto splatting PLY layout (binary little-endian floats:
    x,y,z, nx,ny,nz, f_dc_*, f_rest_*, opacity (logit), scale_* (log),
    rot_* (wxyz))."""
    n = len(gs)
    b = gs.sh_coeffs.shape[1]
    rest = (b - 1) * 3
    props = ["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"]
    props += [f"f_rest_{i}" for i in range(rest)]
    props += ["opacity", "scale_0", "scale_1", "scale_2",
              "rot_0", "rot_1", "rot_2", "rot_3"]
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {n}"]
    header += [f"property float {p}" for p in props]
    header.append("end_header")
    opac = np.clip(gs.opacities, _EPS, 1 - _EPS)
    cols = [gs.positions, np.zeros((n, 3), dtype=np.float32),
            gs.sh_coeffs[:, 0, :],
            gs.sh_coeffs[:, 1:, :].transpose(0, 2, 1).reshape(n, rest),
            np.log(opac / (1 - opac))[:, None],
            np.log(gs.scales), gs.rotations]
    data = np.concatenate([np.asarray(c, dtype="<f4").reshape(n, -1) for c in cols], axis=1)
    with open(path, "wb") as f:
        f.write(("\n".join(header) + "\n").encode("ascii"))
        f.write(data.tobytes())


def load_gaussian_ply(path) -> GaussianSet:
    with open(path, "rb") as f:
        raw = f.read()
    end = raw.index(b"end_header\n") + len(b"end_header\n")
    header = raw[:end].decode("ascii").splitlines()
    if header[0] != "ply" or "format binary_little_endian 1.0" not in header[1]:
        raise ValueError("unsupported PLY header")
    n = 0
    props: list[str] = []
    for line in header:
        if line.startswith("element vertex"):
            n = int(line.split()[-1])
        elif line.startswith("property float"):
            props.append(line.split()[-1])
    arr = np.frombuffer(raw[end:], dtype="<f4").reshape(n, len(props))
    col = {p: i for i, p in enumerate(props)}
    rest_names = sorted((p for p in props if p.startswith("f_rest_")),
                        key=lambda p: int(p.split("_")[-1]))
    b = 1 + len(rest_names) // 3
    sh = np.zeros((n, b, 3), dtype=np.float32)
    sh[:, 0, :] = arr[:, [col["f_dc_0"], col["f_dc_1"], col["f_dc_2"]]]
    if rest_names:
        rest = arr[:, [col[p] for p in rest_names]].reshape(n, 3, b - 1)
        sh[:, 1:, :] = rest.transpose(0, 2, 1)
    opac = 1.0 / (1.0 + np.exp(-arr[:, col["opacity"]]))
    return GaussianSet(
        positions=arr[:, [col["x"], col["y"], col["z"]]],
        rotations=arr[:, [col["rot_0"], col["rot_1"], col["rot_2"], col["rot_3"]]],
        scales=np.exp(arr[:, [col["scale_0"], col["scale_1"], col["scale_2"]]]),
        sh_coeffs=sh,
        opacities=opac)


def save_point_ply(path, points: np.ndarray):
    points = np.asarray(points, dtype="<f4").reshape(-1, 3)
    header = ["ply", "format binary_little_endian 1.0",
              f"element vertex {len(points)}",
              "property float x", "property float y", "property float z",
              "end_header"]
    with open(path, "wb") as f:
        f.write(("\n".join(header) + "\n").encode("ascii"))
        f.write(points.tobytes())


def load_point_ply(path) -> np.ndarray:
    with open(path, "rb") as f:
        raw = f.read()
    end = raw.index(b"end_header\n") + len(b"end_header\n")
    header = raw[:end].decode("ascii").splitlines()
    n = next(int(l.split()[-1]) for l in header if l.startswith("element vertex"))
    return np.frombuffer(raw[end:], dtype="<f4").reshape(n, 3).copy()


def save_point_xyz(path, points: np.ndarray):
    np.savetxt(path, np.asarray(points).reshape(-1, 3), fmt="%.8f")


def load_point_xyz(path) -> np.ndarray:
    return np.loadtxt(path, dtype=np.float32).reshape(-1, 3)


def rgb_to_dc(rgb: np.ndarray) -> np.ndarray:
    """RGB in [0,1] to SH DC coefficients (inverse of the +0.5 shift)."""
    return (np.asarray(rgb) - 0.5) / SH_C0


def dc_to_rgb(dc: np.ndarray) -> np.ndarray:
    return np.asarray(dc) * SH_C0 + 0.5
