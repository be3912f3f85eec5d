"""Fast self-checks against closed-form oracles, used by ``nerfinv check``."""
from __future__ import annotations

import math

import numpy as np
import torch

from . import geometry, regularizer
from .generator import DTYPE, GeneratorSpec, StyleParams, average_style, style_shape
from .inversion import LossWeights, grad_check, total_loss
from .operators import OperatorSpec, adjoint, apply, realize
from .renderer import RenderConfig, camera_from_angles, composite, render


class _Constant:
    def __init__(self, sigma, color=(1.0, 1.0, 1.0)):
        self.sigma, self.color = sigma, torch.as_tensor(color, dtype=DTYPE)

    def __call__(self, p):
        n = p.shape[0]
        return self.color.expand(n, 3), torch.full((n,), self.sigma, dtype=DTYPE)


def check_transmittance():
    sigma, cfg = 0.7, RenderConfig(n_samples=256, near=0.5, far=3.5)
    _, opacity = render(_Constant(sigma), camera_from_angles(90, 90, w=4, h=4), cfg, return_opacity=True)
    err = float((opacity - (1 - math.exp(-sigma * (cfg.far - cfg.near)))).abs().max())
    return err < 1e-3, f"max |opacity - closed form| = {err:.2e}"


def check_telescoping():
    rng = np.random.default_rng(0)
    dens = torch.as_tensor(rng.exponential(2.0, (1000, 64)), dtype=DTYPE)
    cols = torch.as_tensor(rng.random((1000, 64, 3)), dtype=DTYPE)
    _, w, final = composite(cols, dens, 0.05, (0.0, 0.0, 0.0))
    err = float((w.sum(-1) + final - 1).abs().max())
    return err < 1e-12, f"max |sum w + T_final - 1| = {err:.2e}"


def check_softmin_limits():
    rng = np.random.default_rng(1)
    d = torch.as_tensor(rng.random(16) * 5, dtype=DTYPE)
    w0 = regularizer.softmin_weights(d, 0.0)
    mean_err = float(((w0 * d).sum() - d.mean()).abs())
    wl = regularizer.softmin_weights(d, 1e6)
    min_err = float(((wl * d).sum() - d.min()).abs() / d.min())
    return mean_err < 1e-12 and min_err < 1e-12, f"mean err {mean_err:.1e}, min rel err {min_err:.1e}"


def check_adjoints():
    rng = np.random.default_rng(2)
    worst = 0.0
    for text in ("identity", "pixmask:0.3", "box:2,3,5,4", "cs:40", "down:2"):
        op = realize(OperatorSpec.parse(text, seed=3), 8, 8)
        x = torch.as_tensor(rng.standard_normal((8, 8, 3)), dtype=DTYPE)
        y = torch.as_tensor(rng.standard_normal(op.meas_shape), dtype=DTYPE)
        lhs = float((apply(op, x) * y).sum())
        rhs = float((x * adjoint(op, y)).sum())
        worst = max(worst, abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-300))
    return worst < 1e-10, f"max adjoint rel err {worst:.1e}"


def check_sphere():
    k, r = 32, 0.6
    pts = geometry.lattice_points(k)
    dens = torch.exp(-(pts**2).sum(-1) / (2 * r * r)).reshape(k, k, k)
    grid = geometry.VoxelGrid(k, *geometry.DEFAULT_BOUNDS, dens)
    mesh = geometry.marching_cubes(grid, math.exp(-0.5))
    diag = float(np.linalg.norm(grid.spacing))
    err = float(np.abs(np.linalg.norm(mesh.vertices, axis=1) - r).max())
    return err < 1.5 * diag, f"max vertex radius error {err / diag:.2f} voxel diagonals"


def check_gradient():
    gen = GeneratorSpec.blob(3, 1)
    cam = camera_from_angles(90, 90, w=8, h=8)
    cfg = RenderConfig(n_samples=12, near=1.0, far=3.0)
    avg = average_style(gen, 64, 0)
    shape = style_shape(gen)
    y = torch.full((8, 8, 3), 0.3, dtype=DTYPE)
    op = realize(OperatorSpec(), 8, 8)
    wts = LossWeights(prior=0.0, geodesic=0.1, pigan=0.1)
    theta = avg.flat() + torch.as_tensor(np.random.default_rng(4).normal(0, 0.3, avg.flat().shape), dtype=DTYPE)

    def loss(t):
        return total_loss(StyleParams.from_flat(t, shape), y, op, cam, None, 0.0, wts, gen, cfg, avg)[0]

    err = grad_check(theta, loss, n_coords=20)
    return err < 1e-4, f"max gradient rel err {err:.1e}"


CHECKS = {
    "transmittance closed form": check_transmittance,
    "weights telescope to one": check_telescoping,
    "soft-min limits": check_softmin_limits,
    "operator adjoints": check_adjoints,
    "sphere level set": check_sphere,
    "loss gradient": check_gradient,
}


def run_checks() -> list[tuple[str, bool, str]]:
    out = []
    for name, fn in CHECKS.items():
        ok, detail = fn()
        out.append((name, bool(ok), detail))
    return out
