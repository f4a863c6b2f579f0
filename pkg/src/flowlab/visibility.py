"""Voxel visibility from a pinhole camera: z-buffer, dilation, soft weights.

Projection follows the convention ``u = c_x - f_x * x / z`` (note the minus
sign, mirrored for v); it is kept verbatim even though the common pinhole
convention uses a plus.  Voxels that project out of frame, land on an empty
depth pixel, or sit behind the camera carry no occlusion evidence and get
weight 1.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Camera",
    "VoxelGrid",
    "DepthMap",
    "VisibilityWeights",
    "voxel_to_camera",
    "project",
    "build_depth_map",
    "dilate_min",
    "kernel_size",
    "soft_visibility",
    "extract_occupancy",
    "visibility_weights",
    "load_scene",
    "dump_scene",
]

DEFAULT_BETA = 1.5
DEFAULT_GAMMA = 1.5
DEFAULT_LAMBDA = 3.0

EMPTY = np.inf


def _readonly(a, dtype=float):
    out = np.array(a, dtype=dtype)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class Camera:
    """Pinhole camera with rotation, per-axis scale, and translation.

    ``rotation`` must be orthonormal with determinant +1 (checked to 1e-9)
    and the object must sit in front of the camera (``t_z > 0``).
    """

    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray
    scale: np.ndarray
    translation: np.ndarray
    width: int
    height: int

    def __post_init__(self):
        r = _readonly(self.rotation)
        s = _readonly(self.scale)
        t = _readonly(self.translation)
        if r.shape != (3, 3) or s.shape != (3,) or t.shape != (3,):
            raise ValueError("rotation must be 3x3; scale and translation 3-vectors")
        if np.abs(r.T @ r - np.eye(3)).max() > 1e-9:
            raise ValueError("rotation must be orthonormal within 1e-9")
        if abs(np.linalg.det(r) - 1.0) > 1e-9:
            raise ValueError("rotation must have determinant +1 within 1e-9")
        if (s <= 0).any():
            raise ValueError("scale components must be positive")
        if t[2] <= 0:
            raise ValueError("object must be in front of the camera (t_z > 0)")
        if self.width < 1 or self.height < 1:
            raise ValueError("image resolution must be positive")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "scale", s)
        object.__setattr__(self, "translation", t)

    @property
    def f_avg(self):
        return 0.5 * (self.fx + self.fy)

    @property
    def z_obj(self):
        return float(self.translation[2])

    @classmethod
    def from_dict(cls, spec):
        return cls(
            fx=float(spec["fx"]), fy=float(spec["fy"]),
            cx=float(spec["cx"]), cy=float(spec["cy"]),
            rotation=np.asarray(spec["rotation"], dtype=float),
            scale=np.asarray(spec["scale"], dtype=float),
            translation=np.asarray(spec["translation"], dtype=float),
            width=int(spec["width"]), height=int(spec["height"]),
        )

    def to_dict(self):
        return {
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
            "rotation": self.rotation.tolist(),
            "scale": self.scale.tolist(),
            "translation": self.translation.tolist(),
            "width": self.width, "height": self.height,
        }


@dataclass(frozen=True, eq=False)
class VoxelGrid:
    """Occupied voxel indices on a cubic grid of the given resolution."""

    resolution: int = 64
    occupied: np.ndarray = None

    def __post_init__(self):
        if self.resolution < 1:
            raise ValueError("resolution must be positive")
        occ = self.occupied
        occ = np.zeros((0, 3), dtype=int) if occ is None else np.asarray(occ, dtype=int)
        occ = occ.reshape(-1, 3)
        if occ.size and ((occ < 0).any() or (occ >= self.resolution).any()):
            raise ValueError("voxel indices out of bounds")
        occ = occ.copy()
        occ.setflags(write=False)
        object.__setattr__(self, "occupied", occ)

    def __len__(self):
        return self.occupied.shape[0]

    def voxel_size(self, scale):
        """Object-space voxel size: max scale component over the resolution."""
        return float(np.max(scale)) / self.resolution

    @classmethod
    def from_dict(cls, spec):
        return cls(int(spec["resolution"]), np.asarray(spec["occupied"], dtype=int))

    def to_dict(self):
        return {"resolution": self.resolution, "occupied": self.occupied.tolist()}


@dataclass(frozen=True, eq=False)
class DepthMap:
    """Per-pixel minimum depth, ``inf`` marking pixels nothing projects to."""

    width: int
    height: int
    depth: np.ndarray

    def __post_init__(self):
        d = _readonly(self.depth)
        if d.shape != (self.height, self.width):
            raise ValueError("depth array must have shape (height, width)")
        filled = d[np.isfinite(d)]
        if (filled <= 0).any():
            raise ValueError("non-empty depths must be positive")
        object.__setattr__(self, "depth", d)

    def to_text(self, path):
        """PGM-style plain-text grid: header line, then one row per line."""
        with open(path, "w") as fh:
            fh.write(f"depthmap {self.width} {self.height}\n")
            for row in self.depth:
                fh.write(" ".join("empty" if np.isinf(v) else repr(float(v)) for v in row))
                fh.write("\n")

    @classmethod
    def from_text(cls, path):
        with open(path) as fh:
            tag, w, h = fh.readline().split()
            if tag != "depthmap":
                raise ValueError("not a depth-map text file")
            rows = [
                [EMPTY if v == "empty" else float(v) for v in line.split()]
                for line in fh
                if line.strip()
            ]
        return cls(int(w), int(h), np.asarray(rows))


@dataclass(frozen=True, eq=False)
class VisibilityWeights:
    """Per-voxel soft visibility with the margins and pixels that produced it."""

    indices: np.ndarray
    weights: np.ndarray
    margins: np.ndarray
    pixels: np.ndarray
    sigma_d: float
    kernel: int

    def __post_init__(self):
        w = _readonly(self.weights)
        if ((w <= 0) | (w > 1)).any():
            raise ValueError("weights must lie in (0, 1]")
        object.__setattr__(self, "indices", _readonly(self.indices, dtype=int))
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "margins", _readonly(self.margins))
        object.__setattr__(self, "pixels", _readonly(self.pixels))

    def __len__(self):
        return self.weights.size


def voxel_to_camera(index, camera, resolution=None):
    """Camera-space position ``s * (R @ c) + t`` of a voxel index (batched ok)."""
    idx = np.asarray(index, dtype=float)
    if (idx < 0).any() or (resolution is not None and (idx >= resolution).any()):
        raise ValueError("voxel index out of bounds")
    rotated = idx @ camera.rotation.T
    return camera.scale * rotated + camera.translation


def project(point, camera):
    """Pixel coordinates ``(c_x - f_x x / z, c_y - f_y y / z)``; requires z > 0."""
    p = np.asarray(point, dtype=float)
    z = p[..., 2]
    if (z <= 0).any():
        raise ValueError("cannot project points at or behind the camera plane")
    u = camera.cx - camera.fx * p[..., 0] / z
    v = camera.cy - camera.fy * p[..., 1] / z
    return u, v


def _pixel_assignment(grid, camera):
    """Camera positions, rounded in-frame pixel indices, and validity masks."""
    if len(grid) == 0:
        raise ValueError("voxel set is empty")
    cam = voxel_to_camera(grid.occupied, camera)
    z = cam[:, 2]
    in_front = z > 0
    if not in_front.any():
        raise ValueError("all voxels lie behind the camera")
    u = np.full(len(grid), np.nan)
    v = np.full(len(grid), np.nan)
    u[in_front], v[in_front] = project(cam[in_front], camera)
    col = np.rint(u).astype(float)
    row = np.rint(v).astype(float)
    in_frame = (
        in_front
        & (col >= 0) & (col < camera.width)
        & (row >= 0) & (row < camera.height)
    )
    return cam, u, v, col, row, in_frame


def build_depth_map(grid, camera):
    """Z-buffer over occupied voxels: per-pixel minimum camera depth.

    Voxels are assigned to the nearest integer pixel; voxels behind the
    camera or out of frame contribute nothing.  Errors if every voxel lies
    behind the camera.
    """
    cam, _, _, col, row, in_frame = _pixel_assignment(grid, camera)
    depth = np.full((camera.height, camera.width), EMPTY)
    rows = row[in_frame].astype(int)
    cols = col[in_frame].astype(int)
    np.minimum.at(depth, (rows, cols), cam[in_frame, 2])
    return DepthMap(camera.width, camera.height, depth)


def dilate_min(depth_map, k):
    """Min-pool the depth map over k x k windows; empties stay empty only
    when the whole window is empty."""
    if k % 2 != 1 or k < 1:
        raise ValueError("kernel size must be odd and >= 1")
    if k == 1:
        return DepthMap(depth_map.width, depth_map.height, depth_map.depth)
    pad = k // 2
    padded = np.pad(depth_map.depth, pad, mode="constant", constant_values=EMPTY)
    windows = np.lib.stride_tricks.sliding_window_view(padded, (k, k))
    return DepthMap(depth_map.width, depth_map.height, windows.min(axis=(-2, -1)))


def kernel_size(s_vox, f_avg, z_obj, gamma=DEFAULT_GAMMA):
    """Dilation kernel from the projected voxel footprint ``gamma s_vox f_avg / z_obj``.

    The footprint is rounded half-up to an integer, then taken to the nearest
    odd integer with exact ties resolved to the larger odd value, and finally
    clamped to at least 1.
    """
    if min(s_vox, f_avg, z_obj, gamma) <= 0:
        raise ValueError("all kernel-size inputs must be positive")
    value = gamma * s_vox * f_avg / z_obj
    rounded = math.floor(value + 0.5)
    k = rounded if rounded % 2 == 1 else rounded + 1
    return max(k, 1)


def soft_visibility(z, dilated_depth, sigma_d, lam=DEFAULT_LAMBDA):
    """Soft weight ``exp(-lam (max(z - D', 0) / sigma_d)^2)``; empty depth gives 1."""
    if sigma_d <= 0 or lam <= 0:
        raise ValueError("sigma_d and lam must be positive")
    if np.isinf(dilated_depth):
        return 1.0
    margin = z - dilated_depth
    return float(np.exp(-lam * (max(margin, 0.0) / sigma_d) ** 2))


def extract_occupancy(volume):
    """Indices of strictly positive entries of a cubic scalar volume."""
    vol = np.asarray(volume)
    if vol.ndim != 3 or len(set(vol.shape)) != 1:
        raise ValueError("volume must be a cubic 3-D array")
    return np.argwhere(vol > 0)


def visibility_weights(grid, camera, beta=DEFAULT_BETA, gamma=DEFAULT_GAMMA,
                       lam=DEFAULT_LAMBDA, k=None):
    """Full pipeline: project, z-buffer, dilate, margins, soft weights.

    Returns one weight per occupied voxel, in the order of ``grid.occupied``.
    Voxels with no depth evidence (out of frame, behind the camera, or over
    an empty pixel) get weight 1.  The frontmost voxel on any pixel defines
    the z-buffer there, so it always gets weight 1.
    """
    s_vox = grid.voxel_size(camera.scale)
    sigma_d = beta * s_vox
    if k is None:
        k = kernel_size(s_vox, camera.f_avg, camera.z_obj, gamma)
    raw = build_depth_map(grid, camera)
    dilated = dilate_min(raw, k)

    cam, u, v, col, row, in_frame = _pixel_assignment(grid, camera)
    weights = np.ones(len(grid))
    margins = np.full(len(grid), -np.inf)
    for i in np.flatnonzero(in_frame):
        d = dilated.depth[int(row[i]), int(col[i])]
        if np.isinf(d):
            continue
        margins[i] = cam[i, 2] - d
        weights[i] = soft_visibility(cam[i, 2], d, sigma_d, lam)
    pixels = np.stack([u, v], axis=1)
    return VisibilityWeights(grid.occupied, weights, margins, pixels, sigma_d, int(k))


def load_scene(path):
    """Load ``{"camera": {...}, "voxels": {...}}`` from a JSON document."""
    with open(path) as fh:
        spec = json.load(fh)
    return VoxelGrid.from_dict(spec["voxels"]), Camera.from_dict(spec["camera"])


def dump_scene(path, grid, camera):
    with open(path, "w") as fh:
        json.dump({"camera": camera.to_dict(), "voxels": grid.to_dict()}, fh, indent=2)
