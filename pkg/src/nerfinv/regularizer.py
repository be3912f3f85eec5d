"""3-D priors over voxelized densities and style-space regularizers."""
from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field

import numpy as np
import torch

from .generator import DTYPE, StyleParams
from .geometry import MaskGrid, VoxelGrid


class PriorError(ValueError):
    pass


@dataclass
class ReferenceEntry:
    latent: np.ndarray
    grid: VoxelGrid
    mask: MaskGrid
    seed: int | None = None

    def __post_init__(self):
        if not self.grid.same_geometry(self.mask):
            raise PriorError("reference grid and mask have different geometry")


@dataclass
class ReferenceSet:
    entries: list
    iso_percentile: float = 90.0
    dilation: int = 1
    _stack: tuple = field(default=None, init=False, repr=False)

    def __post_init__(self):
        if not self.entries:
            raise PriorError("reference set is empty")
        first = self.entries[0].grid
        for e in self.entries[1:]:
            if not e.grid.same_geometry(first):
                raise PriorError("reference entries do not share grid geometry")

    def __len__(self):
        return len(self.entries)

    @property
    def k(self) -> int:
        return self.entries[0].grid.k

    @property
    def lo(self):
        return self.entries[0].grid.lo

    @property
    def hi(self):
        return self.entries[0].grid.hi

    def stacked(self):
        """``(ref_densities, keep)`` tensors of shape (S, k, k, k); keep = 1 - mask."""
        if self._stack is None:
            dens = torch.stack([e.grid.densities.detach().to(DTYPE) for e in self.entries])
            keep = torch.as_tensor(np.stack([~e.mask.values for e in self.entries]), dtype=DTYPE)
            self._stack = (dens, keep)
        return self._stack

    def subset(self, n: int) -> "ReferenceSet":
        return ReferenceSet(self.entries[:n], self.iso_percentile, self.dilation)


@dataclass
class PriorDiagnostics:
    weights: np.ndarray
    distances: np.ndarray

    @property
    def entropy(self) -> float:
        w = self.weights[self.weights > 0]
        return float(-(w * np.log(w)).sum())

    @property
    def max_weight(self) -> float:
        return float(self.weights.max())

    @property
    def argmax(self) -> int:
        return int(self.weights.argmax())


def _safe_norm(sq: torch.Tensor) -> torch.Tensor:
    # sqrt with a zero (not NaN) gradient at an exact match
    pos = sq > 0
    return torch.where(pos, torch.sqrt(torch.where(pos, sq, torch.ones_like(sq))), torch.zeros_like(sq))


def _check_geometry(grid, other):
    if not grid.same_geometry(other):
        raise PriorError("grid geometry mismatch")


def masked_distance(grid: VoxelGrid, ref: ReferenceEntry) -> torch.Tensor:
    """Frobenius norm of the density difference over cells outside the reference mask."""
    _check_geometry(grid, ref.grid)
    keep = torch.as_tensor(~ref.mask.values, dtype=DTYPE)
    diff = (grid.densities - ref.grid.densities.detach()) * keep
    return _safe_norm((diff**2).sum())


def masked_distances(grid: VoxelGrid, refs: ReferenceSet) -> torch.Tensor:
    """All reference distances at once, shape (S,)."""
    _check_geometry(grid, refs.entries[0].grid)
    dens, keep = refs.stacked()
    diff = (grid.densities[None] - dens) * keep
    return _safe_norm((diff**2).sum(dim=(1, 2, 3)))


def softmin_weights(distances: torch.Tensor, delta: float) -> torch.Tensor:
    """softmax(-delta * L), max-shifted; treated as a function of L only."""
    if delta < 0:
        raise PriorError("delta must be >= 0")
    return torch.softmax(-delta * distances, dim=0)


def soft_prior(grid: VoxelGrid, refs: ReferenceSet, delta: float, distances=None):
    """Softmin-weighted masked distance: ``sum_i softmax(-delta L)_i * L_i``.

    Returns ``(value, diagnostics)``.  The value lies between ``min L`` and
    ``mean L`` and decreases toward ``min L`` as ``delta`` grows.
    """
    if refs is None or len(refs) == 0:
        raise PriorError("reference set is empty")
    L = masked_distances(grid, refs) if distances is None else distances
    w = softmin_weights(L, delta)
    value = (w * L).sum()
    diag = PriorDiagnostics(w.detach().cpu().numpy(), L.detach().cpu().numpy())
    return value, diag


@dataclass(frozen=True)
class AnnealSchedule:
    """Piecewise-constant inverse temperature; the last value holds forever."""

    values: tuple
    steps: tuple

    def __post_init__(self):
        if len(self.values) != len(self.steps) + 1:
            raise PriorError("need exactly one more value than boundary steps")
        if any(v <= 0 for v in self.values) or any(b < a for a, b in zip(self.values, self.values[1:])):
            raise PriorError("delta values must be positive and nondecreasing")
        if any(b <= a for a, b in zip(self.steps, self.steps[1:])):
            raise PriorError("boundary steps must be strictly increasing")

    @classmethod
    def default(cls) -> "AnnealSchedule":
        return cls((100.0, 150.0, 200.0, 250.0, 300.0, 350.0, 400.0, 500.0, 550.0),
                   (100, 200, 300, 400, 500, 600, 700, 800))

    @classmethod
    def constant(cls, value: float) -> "AnnealSchedule":
        return cls((float(value),), ())

    def scaled(self, factor: float) -> "AnnealSchedule":
        return AnnealSchedule(tuple(v * factor for v in self.values), self.steps)

    def to_dict(self) -> dict:
        return {"values": list(self.values), "steps": list(self.steps)}

    @classmethod
    def from_dict(cls, d: dict) -> "AnnealSchedule":
        return cls(tuple(float(v) for v in d["values"]), tuple(int(s) for s in d["steps"]))


def anneal_delta(sched: AnnealSchedule, step: int) -> float:
    if step < 0:
        raise PriorError("step must be >= 0")
    return float(sched.values[bisect.bisect_right(sched.steps, step)])


def _check_style_shapes(a: StyleParams, b: StyleParams):
    if a.shape != b.shape:
        raise PriorError(f"style shapes differ: {a.shape} vs {b.shape}")


def pigan_reg(params: StyleParams, avg: StyleParams) -> torch.Tensor:
    """Squared distance of frequencies and phase shifts from their averages."""
    _check_style_shapes(params, avg)
    return ((params.freqs - avg.freqs) ** 2).sum() + ((params.phases - avg.phases) ** 2).sum()


def geodesic_reg(params: StyleParams) -> torch.Tensor:
    """Sum over layer pairs of the angle between normalized per-layer style vectors."""
    v = params.layer_vectors()
    if v.shape[0] < 2:
        raise PriorError("geodesic regularization needs at least 2 layers")
    norms = v.norm(dim=1)
    if torch.any(norms == 0):
        raise PriorError("zero-norm layer style vector")
    u = v / norms[:, None]
    i, j = torch.triu_indices(v.shape[0], v.shape[0], offset=1)
    # atan2 form stays differentiable at identical vectors, unlike acos(1)
    cross = u[i] - u[j]
    summ = u[i] + u[j]
    return (2.0 * torch.atan2(_safe_norm((cross**2).sum(1)), _safe_norm((summ**2).sum(1)))).sum()


def l2_outside_mask(grid: VoxelGrid, mask: MaskGrid) -> torch.Tensor:
    """Frobenius norm of densities outside the mask (ablation regularizer)."""
    _check_geometry(grid, mask)
    keep = torch.as_tensor(~mask.values, dtype=DTYPE)
    return _safe_norm(((grid.densities * keep) ** 2).sum())
