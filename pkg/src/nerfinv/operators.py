"""Linear forward operators acting on (H, W, 3) images and measurement synthesis."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .generator import DTYPE

KINDS = ("identity", "pixel_mask", "box_mask", "gaussian_cs", "downsample")
_PREFIX = {"identity": "identity", "pixmask": "pixel_mask", "box": "box_mask", "cs": "gaussian_cs", "down": "downsample"}


class OperatorError(ValueError):
    pass


@dataclass(frozen=True)
class OperatorSpec:
    kind: str = "identity"
    ratio: float = 1.0
    box: tuple = (0, 0, 0, 0)
    m: int = 0
    factor: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise OperatorError(f"unknown operator kind {self.kind!r}")
        if self.kind == "pixel_mask" and not 0.0 < self.ratio <= 1.0:
            raise OperatorError(f"observed ratio must lie in (0, 1], got {self.ratio}")
        if self.kind == "gaussian_cs" and self.m < 1:
            raise OperatorError("measurement count must be >= 1")
        if self.kind == "downsample" and self.factor < 1:
            raise OperatorError("downsampling factor must be >= 1")

    @classmethod
    def parse(cls, text: str, seed: int = 0) -> "OperatorSpec":
        """Parse ``identity``, ``pixmask:<ratio>``, ``box:<x0>,<y0>,<w>,<h>``, ``cs:<m>``, ``down:<f>``."""
        head, _, arg = text.strip().partition(":")
        kind = _PREFIX.get(head)
        if kind is None:
            raise OperatorError(f"cannot parse operator {text!r}")
        try:
            if kind == "identity":
                return cls(kind, seed=seed)
            if kind == "pixel_mask":
                return cls(kind, ratio=float(arg), seed=seed)
            if kind == "box_mask":
                box = tuple(int(v) for v in arg.split(","))
                if len(box) != 4:
                    raise OperatorError("box needs x0,y0,w,h")
                return cls(kind, box=box, seed=seed)
            if kind == "gaussian_cs":
                return cls(kind, m=int(arg), seed=seed)
            return cls(kind, factor=int(arg), seed=seed)
        except ValueError as exc:
            raise OperatorError(f"cannot parse operator {text!r}: {exc}") from None

    def label(self) -> str:
        return {
            "identity": "identity",
            "pixel_mask": f"pixmask:{self.ratio:g}",
            "box_mask": "box:" + ",".join(str(v) for v in self.box),
            "gaussian_cs": f"cs:{self.m}",
            "downsample": f"down:{self.factor}",
        }[self.kind]


class ForwardOperator:
    """A realized operator for a fixed image size.  Immutable after construction."""

    def __init__(self, spec: OperatorSpec, w: int, h: int, observed=None, matrix=None):
        self.spec, self.w, self.h = spec, w, h
        self.observed = observed  # sorted pixel indices (row-major) for masks
        self.matrix = matrix  # (m, 3wh) for gaussian_cs

    @property
    def kind(self) -> str:
        return self.spec.kind

    @property
    def n_in(self) -> int:
        return 3 * self.w * self.h

    @property
    def meas_shape(self) -> tuple:
        if self.kind == "identity":
            return (self.h, self.w, 3)
        if self.kind in ("pixel_mask", "box_mask"):
            return (len(self.observed), 3)
        if self.kind == "gaussian_cs":
            return (self.matrix.shape[0],)
        f = self.spec.factor
        return (self.h // f, self.w // f, 3)

    def _check_image(self, img):
        if tuple(img.shape) != (self.h, self.w, 3):
            raise OperatorError(f"image shape {tuple(img.shape)} does not match operator ({self.h}, {self.w}, 3)")

    def __call__(self, img: torch.Tensor) -> torch.Tensor:
        return apply(self, img)

    def pixel_mask(self) -> np.ndarray:
        """(H, W) boolean map of observed pixels for mask operators."""
        m = np.zeros(self.h * self.w, dtype=bool)
        m[self.observed] = True
        return m.reshape(self.h, self.w)


def realize(spec: OperatorSpec, w: int, h: int) -> ForwardOperator:
    n_pix = w * h
    if spec.kind == "identity":
        return ForwardOperator(spec, w, h)
    if spec.kind == "pixel_mask":
        count = max(1, int(round(spec.ratio * n_pix)))
        perm = np.random.default_rng(spec.seed).permutation(n_pix)
        return ForwardOperator(spec, w, h, observed=np.sort(perm[:count]))
    if spec.kind == "box_mask":
        x0, y0, bw, bh = spec.box
        if bw < 0 or bh < 0 or x0 < 0 or y0 < 0 or x0 + bw > w or y0 + bh > h:
            raise OperatorError(f"box {spec.box} outside a {w}x{h} image")
        inside = np.zeros((h, w), dtype=bool)
        inside[y0:y0 + bh, x0:x0 + bw] = True
        observed = np.flatnonzero(~inside.ravel())
        if observed.size == 0:
            raise OperatorError("box covers the whole image")
        return ForwardOperator(spec, w, h, observed=observed)
    if spec.kind == "gaussian_cs":
        if spec.m > 3 * n_pix:
            raise OperatorError(f"m = {spec.m} exceeds 3wh = {3 * n_pix}")
        a = np.random.default_rng(spec.seed).standard_normal((spec.m, 3 * n_pix)) / np.sqrt(spec.m)
        return ForwardOperator(spec, w, h, matrix=torch.as_tensor(a, dtype=DTYPE))
    f = spec.factor
    if w % f or h % f:
        raise OperatorError(f"downsampling factor {f} must divide {w}x{h}")
    return ForwardOperator(spec, w, h)


def from_matrix(matrix, w: int, h: int) -> ForwardOperator:
    """Gaussian-CS-shaped operator with an explicit matrix (for fixtures)."""
    matrix = torch.as_tensor(np.asarray(matrix), dtype=DTYPE)
    if matrix.ndim != 2 or matrix.shape[1] != 3 * w * h:
        raise OperatorError("matrix must have 3wh columns")
    return ForwardOperator(OperatorSpec("gaussian_cs", m=matrix.shape[0]), w, h, matrix=matrix)


def apply(op: ForwardOperator, img) -> torch.Tensor:
    img = torch.as_tensor(img, dtype=DTYPE)
    op._check_image(img)
    if op.kind == "identity":
        return img.clone()
    if op.kind in ("pixel_mask", "box_mask"):
        return img.reshape(-1, 3)[torch.as_tensor(op.observed)]
    if op.kind == "gaussian_cs":
        return op.matrix @ img.reshape(-1)
    f = op.spec.factor
    return img.reshape(op.h // f, f, op.w // f, f, 3).mean(dim=(1, 3))


def adjoint(op: ForwardOperator, meas) -> torch.Tensor:
    meas = torch.as_tensor(meas, dtype=DTYPE)
    if tuple(meas.shape) != op.meas_shape:
        raise OperatorError(f"measurement shape {tuple(meas.shape)} != {op.meas_shape}")
    if op.kind == "identity":
        return meas.clone()
    if op.kind in ("pixel_mask", "box_mask"):
        out = torch.zeros(op.h * op.w, 3, dtype=DTYPE)
        out[torch.as_tensor(op.observed)] = meas
        return out.reshape(op.h, op.w, 3)
    if op.kind == "gaussian_cs":
        return (op.matrix.T @ meas).reshape(op.h, op.w, 3)
    f = op.spec.factor
    up = meas[:, None, :, None, :].expand(op.h // f, f, op.w // f, f, 3) / (f * f)
    return up.reshape(op.h, op.w, 3)


def corrupt(op: ForwardOperator, img, noise_std: float = 0.0, seed: int = 0) -> torch.Tensor:
    """``apply(op, img)`` plus seeded i.i.d. Gaussian noise."""
    if noise_std < 0:
        raise OperatorError("noise std must be >= 0")
    y = apply(op, img)
    if noise_std == 0:
        return y
    noise = np.random.default_rng(seed).standard_normal(tuple(y.shape)) * noise_std
    return y + torch.as_tensor(noise, dtype=DTYPE)
