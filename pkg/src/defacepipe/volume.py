"""Core in-memory image model: a 3D scalar grid with world geometry."""

from dataclasses import dataclass

import numpy as np

from .errors import GridMismatch

# NIfTI datatype codes we handle, and the numpy dtypes they map to.
SUPPORTED_DTYPES = {
    2: np.uint8,
    4: np.int16,
    8: np.int32,
    16: np.float32,
    64: np.float64,
}
DTYPE_TO_CODE = {np.dtype(v): k for k, v in SUPPORTED_DTYPES.items()}

GRID_ATOL = 1e-6


@dataclass
class Volume:
    """A dense 3D scalar volume with a voxel-to-world affine.

    data is indexed [x, y, z] (x fastest in memory order on disk);
    affine maps homogeneous voxel indices to world mm.
    """

    data: np.ndarray
    affine: np.ndarray
    background: float = 0.0

    def __post_init__(self):
        if self.data.ndim != 3:
            raise ValueError(f"expected 3D data, got shape {self.data.shape}")
        self.affine = np.asarray(self.affine, dtype=np.float64)
        if self.affine.shape != (4, 4):
            raise ValueError("affine must be 4x4")

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape

    @property
    def spacing(self) -> np.ndarray:
        """Voxel spacing in mm: Euclidean norm of each affine column."""
        return np.linalg.norm(self.affine[:3, :3], axis=0)

    def same_grid(self, other: "Volume | BinaryMask") -> bool:
        return self.dims == other.dims and np.allclose(
            self.affine, other.affine, atol=GRID_ATOL
        )


@dataclass
class BinaryMask:
    """A {0,1} volume on a stated grid."""

    data: np.ndarray  # bool
    affine: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data).astype(bool)
        self.affine = np.asarray(self.affine, dtype=np.float64)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape

    @property
    def spacing(self) -> np.ndarray:
        return np.linalg.norm(self.affine[:3, :3], axis=0)

    def count(self) -> int:
        return int(self.data.sum())

    def same_grid(self, other: "Volume | BinaryMask") -> bool:
        return self.dims == other.dims and np.allclose(
            self.affine, other.affine, atol=GRID_ATOL
        )

    def to_volume(self) -> Volume:
        return Volume(self.data.astype(np.uint8), self.affine.copy())


def check_same_grid(a, b):
    """Raise GridMismatch unless a and b share dims and affine."""
    if a.dims != b.dims:
        raise GridMismatch(f"dims differ: {a.dims} vs {b.dims}")
    if not np.allclose(a.affine, b.affine, atol=GRID_ATOL):
        raise GridMismatch("affines differ beyond tolerance")
