"""Density voxelization, iso-surface extraction and surface masks.

Grids are stored as ``(k, k, k)`` arrays indexed ``[iz, iy, ix]`` so that a
C-order ravel is x-fastest, which is also the on-disk order.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from skimage import measure

from .generator import DTYPE

DEFAULT_BOUNDS = ((-1.1, -1.1, -1.1), (1.1, 1.1, 1.1))


class GeometryError(ValueError):
    pass


def _check_bounds(k, lo, hi):
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    if k < 2:
        raise GeometryError(f"grid resolution must be >= 2, got {k}")
    if lo.shape != (3,) or hi.shape != (3,) or not np.all(lo < hi):
        raise GeometryError(f"degenerate bounds lo={lo} hi={hi}")
    return lo, hi


def lattice_points(k: int, lo=DEFAULT_BOUNDS[0], hi=DEFAULT_BOUNDS[1]) -> torch.Tensor:
    """Cell-center points, shape (k**3, 3), x-fastest."""
    lo, hi = _check_bounds(k, lo, hi)
    axes = [lo[a] + (np.arange(k) + 0.5) * (hi[a] - lo[a]) / k for a in range(3)]
    zz, yy, xx = np.meshgrid(axes[2], axes[1], axes[0], indexing="ij")
    return torch.as_tensor(np.stack([xx, yy, zz], axis=-1).reshape(-1, 3), dtype=DTYPE)


@dataclass
class VoxelGrid:
    k: int
    lo: tuple
    hi: tuple
    densities: torch.Tensor  # (k, k, k), [iz, iy, ix]

    def __post_init__(self):
        lo, hi = _check_bounds(self.k, self.lo, self.hi)
        self.lo, self.hi = tuple(lo.tolist()), tuple(hi.tolist())
        if tuple(self.densities.shape) != (self.k,) * 3:
            raise GeometryError(f"densities shape {tuple(self.densities.shape)} != {(self.k,) * 3}")

    @property
    def spacing(self) -> np.ndarray:
        return (np.asarray(self.hi) - np.asarray(self.lo)) / self.k

    def same_geometry(self, other) -> bool:
        return self.k == other.k and np.allclose(self.lo, other.lo, 0, 0) and np.allclose(self.hi, other.hi, 0, 0)

    def numpy(self) -> np.ndarray:
        return self.densities.detach().cpu().numpy()


@dataclass
class MaskGrid:
    k: int
    lo: tuple
    hi: tuple
    values: np.ndarray  # bool (k, k, k), aligned with VoxelGrid

    def __post_init__(self):
        lo, hi = _check_bounds(self.k, self.lo, self.hi)
        self.lo, self.hi = tuple(lo.tolist()), tuple(hi.tolist())
        self.values = np.asarray(self.values, dtype=bool)
        if self.values.shape != (self.k,) * 3:
            raise GeometryError(f"mask shape {self.values.shape} != {(self.k,) * 3}")

    same_geometry = VoxelGrid.same_geometry


@dataclass
class SurfaceMesh:
    vertices: np.ndarray  # (V, 3) world coordinates
    triangles: np.ndarray  # (T, 3) int
    index_coords: np.ndarray  # (V, 3) fractional lattice indices (ix, iy, iz)

    @property
    def empty(self) -> bool:
        return len(self.vertices) == 0


def voxelize(field, k: int = 32, lo=DEFAULT_BOUNDS[0], hi=DEFAULT_BOUNDS[1], points=None) -> VoxelGrid:
    """Sample the field's density at the k**3 cell centers (differentiable)."""
    pts = lattice_points(k, lo, hi) if points is None else points
    _, dens = field(pts)
    return VoxelGrid(k, tuple(lo), tuple(hi), dens.reshape(k, k, k))


def marching_cubes(grid: VoxelGrid, iso: float) -> SurfaceMesh:
    """Lorensen marching cubes with linear edge interpolation."""
    vol = grid.numpy()
    empty = SurfaceMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64), np.zeros((0, 3)))
    if not (vol.min() < iso < vol.max()):
        return empty
    verts, faces = measure.marching_cubes(vol, level=iso, method="lorensen")[:2]
    idx = verts[:, ::-1].astype(np.float64)  # (iz, iy, ix) -> (ix, iy, iz)
    world = np.asarray(grid.lo) + (idx + 0.5) * grid.spacing
    return SurfaceMesh(world, faces.astype(np.int64), idx)


def default_iso(grid: VoxelGrid, percentile: float = 90.0) -> float:
    """Percentile of the positive densities, kept strictly below the maximum."""
    vol = grid.numpy()
    pos = vol[vol > 0]
    if pos.size == 0:
        return 0.0
    iso = float(np.percentile(pos, percentile))
    top = float(pos.max())
    return min(iso, top - 1e-6 * max(top, 1e-300))


def surface_mask(grid: VoxelGrid, iso: float, dilation: int = 1) -> MaskGrid:
    """Interior cells plus every cell whose centre lies within Chebyshev
    distance ``dilation`` (in cells) of a marching-cubes vertex."""
    if dilation < 0:
        raise GeometryError("dilation must be >= 0")
    vol = grid.numpy()
    mask = vol >= iso if np.any(vol > 0) else np.zeros_like(vol, dtype=bool)
    mesh = marching_cubes(grid, iso)
    if not mesh.empty:
        k = grid.k
        v = mesh.index_coords
        base = np.floor(v).astype(np.int64)
        span = np.arange(-dilation, dilation + 2)
        for off in np.stack(np.meshgrid(span, span, span, indexing="ij"), -1).reshape(-1, 3):
            cell = base + off
            ok = np.all(np.abs(cell - v) <= dilation + 1e-9, axis=1) & np.all((cell >= 0) & (cell < k), axis=1)
            c = cell[ok]
            mask[c[:, 2], c[:, 1], c[:, 0]] = True
    return MaskGrid(grid.k, grid.lo, grid.hi, mask)
