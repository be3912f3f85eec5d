"""Differentiable volume rendering of radiance fields from orbit cameras."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
import torch

from .generator import DTYPE

FRONTAL = (90.0, 90.0)


class CameraError(ValueError):
    pass


@dataclass(frozen=True)
class Camera:
    """Orbit camera looking at the origin with world up +y.

    ``(pitch, yaw) = (90, 90)`` puts the eye on the +z axis, the canonical
    frontal view.
    """

    pitch: float = 90.0
    yaw: float = 90.0
    radius: float = 2.0
    fov: float = 30.0
    width: int = 64
    height: int = 64

    def __post_init__(self):
        if not 0.0 < self.pitch < 180.0:
            raise CameraError(f"pitch must lie in (0, 180), got {self.pitch}")
        if not 0.0 < self.yaw <= 360.0:
            raise CameraError(f"yaw must lie in (0, 360], got {self.yaw}")
        if self.radius <= 0:
            raise CameraError("radius must be positive")
        if not 0.0 < self.fov < 180.0:
            raise CameraError(f"fov must lie in (0, 180), got {self.fov}")
        if self.width < 1 or self.height < 1:
            raise CameraError("image size must be at least 1x1")

    @property
    def eye(self) -> np.ndarray:
        p, y = math.radians(self.pitch), math.radians(self.yaw)
        return self.radius * np.array([math.sin(p) * math.cos(y), math.cos(p), math.sin(p) * math.sin(y)])

    def pose(self):
        """``(eye, right, up, forward)`` as float64 numpy 3-vectors."""
        eye = self.eye
        forward = -eye / np.linalg.norm(eye)
        right = np.cross(forward, [0.0, 1.0, 0.0])
        right /= np.linalg.norm(right)
        up = np.cross(right, forward)
        return eye, right, up, forward

    def rays(self) -> tuple[torch.Tensor, torch.Tensor]:
        """Per-pixel ray origins and unit directions, row-major, shape (H*W, 3)."""
        eye, right, up, forward = self.pose()
        half = math.tan(math.radians(self.fov) / 2.0)
        aspect = self.width / self.height
        u = ((np.arange(self.width) + 0.5) / self.width - 0.5) * 2.0 * half * aspect
        v = (0.5 - (np.arange(self.height) + 0.5) / self.height) * 2.0 * half
        vv, uu = np.meshgrid(v, u, indexing="ij")
        dirs = forward + uu[..., None] * right + vv[..., None] * up
        dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
        dirs = torch.as_tensor(dirs.reshape(-1, 3), dtype=DTYPE)
        origins = torch.as_tensor(np.broadcast_to(eye, dirs.shape).copy(), dtype=DTYPE)
        return origins, dirs

    @property
    def label(self) -> str:
        return f"{self.pitch:g}_{self.yaw:g}"

    def to_dict(self) -> dict:
        return asdict(self)


def camera_from_angles(pitch, yaw, radius=2.0, fov=30.0, w=64, h=64) -> Camera:
    return Camera(float(pitch), float(yaw), float(radius), float(fov), int(w), int(h))


@dataclass(frozen=True)
class RenderConfig:
    n_samples: int = 48
    near: float = 0.5
    far: float = 3.5
    background: tuple = (0.0, 0.0, 0.0)
    jitter: bool = False
    jitter_seed: int = 0

    def __post_init__(self):
        # near = 0 is allowed so closed-form transmittance checks can start at the eye
        if not 0.0 <= self.near < self.far:
            raise ValueError(f"need 0 <= near < far, got near={self.near}, far={self.far}")
        if self.n_samples < 2:
            raise ValueError("need at least 2 samples per ray")
        if len(self.background) != 3:
            raise ValueError("background must be an RGB triple")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["background"] = list(self.background)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RenderConfig":
        d = dict(d)
        if "background" in d:
            d["background"] = tuple(d["background"])
        return cls(**d)


def sample_depths(cfg: RenderConfig, n_rays: int) -> tuple[torch.Tensor, float]:
    """Sample depths (n_rays, N_s) in uniform bins and the common bin width."""
    width = (cfg.far - cfg.near) / cfg.n_samples
    lower = cfg.near + width * torch.arange(cfg.n_samples, dtype=DTYPE)
    if cfg.jitter:
        gen = torch.Generator().manual_seed(cfg.jitter_seed)
        offs = torch.rand((n_rays, cfg.n_samples), generator=gen, dtype=DTYPE)
    else:
        offs = torch.full((n_rays, cfg.n_samples), 0.5, dtype=DTYPE)
    return lower + width * offs, width


def composite(colors: torch.Tensor, densities: torch.Tensor, delta, background) -> tuple:
    """Alpha-composite samples along rays.

    ``colors`` (R, N, 3), ``densities`` (R, N), ``delta`` scalar or (R, N).
    Returns ``(pixels, weights, final_transmittance)`` where
    ``sum(weights) + final_transmittance == 1`` per ray.
    """
    tau = densities * delta
    # T_i = exp(-sum_{j<i} tau_j); one extra entry for the background
    acc = torch.cumsum(tau, dim=-1)
    acc = torch.cat([torch.zeros_like(acc[..., :1]), acc], dim=-1)
    trans = torch.exp(-acc)
    alpha = -torch.expm1(-tau)
    weights = trans[..., :-1] * alpha
    final = trans[..., -1]
    bg = torch.as_tensor(background, dtype=DTYPE)
    pixels = (weights[..., None] * colors).sum(-2) + final[..., None] * bg
    return pixels, weights, final


def render(field, cam: Camera, cfg: RenderConfig = RenderConfig(), return_opacity: bool = False,
           fused: bool = True):
    """Render ``field`` (callable mapping (N,3) points to (colors, densities)).

    Returns an (H, W, 3) tensor, plus the (H, W) accumulated opacity when
    ``return_opacity`` is set.  Fields exposing ``render_rays`` (blob fields)
    take a fused path unless ``fused`` is False.
    """
    origins, dirs = cam.rays()
    t, delta = sample_depths(cfg, origins.shape[0])
    out = field.render_rays(origins, dirs, t, delta, cfg.background) if fused and hasattr(field, "render_rays") else None
    if out is not None:
        pixels, final = out
    else:
        pts = origins[:, None, :] + t[..., None] * dirs[:, None, :]
        colors, dens = field(pts.reshape(-1, 3))
        colors = colors.reshape(*t.shape, 3)
        dens = dens.reshape(t.shape)
        pixels, _, final = composite(colors, dens, delta, cfg.background)
    img = pixels.reshape(cam.height, cam.width, 3)
    if return_opacity:
        return img, (1.0 - final).reshape(cam.height, cam.width)
    return img
