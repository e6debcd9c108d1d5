"""Affine algebra, canonical (RAS-like) reorientation, and grid resampling."""

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import AmbiguousOrientation, SingularTransform
from .volume import Volume

DET_EPS = 1e-12


def identity() -> np.ndarray:
    return np.eye(4)


def translation(t) -> np.ndarray:
    m = np.eye(4)
    m[:3, 3] = t
    return m


def rotation_z(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    m = np.eye(4)
    m[:2, :2] = [[c, -s], [s, c]]
    return m


def compose(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Transform applying b first, then a."""
    return np.asarray(a) @ np.asarray(b)


def invert(t: np.ndarray) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64)
    if abs(np.linalg.det(t[:3, :3])) <= DET_EPS:
        raise SingularTransform("linear part is singular")
    return np.linalg.inv(t)


def save_transform(t: np.ndarray, path) -> None:
    """4-line whitespace-separated 4x4 world-to-world matrix (mm)."""
    np.savetxt(path, np.asarray(t), fmt="%.12g")


def load_transform(path) -> np.ndarray:
    t = np.loadtxt(path)
    if t.shape != (4, 4):
        raise ValueError(f"{path}: expected a 4x4 matrix, got {t.shape}")
    return t


@dataclass
class AxisPermutation:
    """Record of a reorientation: output axis j came from source axis perm[j],
    reversed when flips[j] is set."""

    perm: tuple[int, int, int]
    flips: tuple[bool, bool, bool]

    @property
    def is_identity(self) -> bool:
        return self.perm == (0, 1, 2) and not any(self.flips)

    def apply(self, data: np.ndarray) -> np.ndarray:
        out = np.transpose(data, self.perm)
        rev = tuple(j for j in range(3) if self.flips[j])
        return np.flip(out, rev) if rev else out

    def undo(self, data: np.ndarray) -> np.ndarray:
        rev = tuple(j for j in range(3) if self.flips[j])
        out = np.flip(data, rev) if rev else data
        inv = np.argsort(self.perm)
        return np.transpose(out, inv)


def reorient_to_canonical(v: Volume) -> tuple[Volume, AxisPermutation]:
    """Permute/flip voxel axes so each affine column is dominant-positive on
    the diagonal (closest-to-RAS). World geometry is unchanged: every voxel
    keeps its world coordinate exactly."""
    lin = v.affine[:3, :3]
    dominant = np.argmax(np.abs(lin), axis=0)  # world axis of each voxel axis
    if len(set(dominant.tolist())) != 3:
        raise AmbiguousOrientation(
            f"voxel axes map to world axes {dominant.tolist()}"
        )
    perm = tuple(int(np.where(dominant == j)[0][0]) for j in range(3))
    flips = tuple(bool(lin[j, perm[j]] < 0) for j in range(3))

    rec = AxisPermutation(perm, flips)
    if rec.is_identity:
        return Volume(v.data, v.affine.copy(), v.background), rec

    aff = v.affine.copy()
    # Flip columns in source-axis terms first, then permute.
    for j in range(3):
        i = perm[j]
        if flips[j]:
            aff[:3, 3] += aff[:3, i] * (v.dims[i] - 1)
            aff[:3, i] = -aff[:3, i]
    out_aff = aff.copy()
    out_aff[:3, :3] = aff[:3, [perm[0], perm[1], perm[2]]]
    data = np.ascontiguousarray(rec.apply(v.data))
    return Volume(data, out_aff, v.background), rec


def undo_reorientation(data: np.ndarray, rec: AxisPermutation) -> np.ndarray:
    return np.ascontiguousarray(rec.undo(data))


def resample(
    source: Volume,
    target_dims: tuple[int, int, int],
    target_affine: np.ndarray,
    world_map: np.ndarray,
    interp: str = "trilinear",
) -> Volume:
    """Sample source onto the target grid.

    world_map sends a target voxel's world position to the position in
    source-world at which to sample; out-of-bounds samples take the source
    background value. Voxel indices refer to voxel centers.
    """
    if interp not in ("nearest", "trilinear"):
        raise ValueError(f"unknown interpolation {interp!r}")
    vox_map = invert(source.affine) @ np.asarray(world_map) @ np.asarray(target_affine)

    idx = np.indices(target_dims, dtype=np.float64).reshape(3, -1)
    coords = vox_map[:3, :3] @ idx + vox_map[:3, 3:4]

    n = np.array(source.dims, dtype=np.float64).reshape(3, 1)
    if interp == "nearest":
        valid = np.all((coords > -0.5) & (coords < n - 0.5), axis=0)
        order = 0
    else:
        valid = np.all((coords >= 0.0) & (coords <= n - 1.0), axis=0)
        order = 1

    src = np.asarray(source.data, dtype=np.float64)
    out = ndimage.map_coordinates(
        src, coords, order=order, mode="grid-constant", cval=source.background
    )
    out[~valid] = source.background
    out = out.reshape(target_dims)
    if np.issubdtype(source.data.dtype, np.integer):
        out = np.rint(out)
    return Volume(
        out.astype(source.data.dtype), np.asarray(target_affine, float).copy(),
        source.background,
    )
