"""Regularized inversion over style parameters.

The objective is

    measurement * mean((A[render(params)] - y)**2)
      + prior * softmin_prior(voxelize(params), references, delta)
      + geodesic * geodesic_reg(params) + pigan * |params - average|**2
      + l2_outside * |grid outside reference masks|

minimized with Adam under a halving learning-rate schedule and a stepped
inverse-temperature schedule.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import torch

from . import geometry, regularizer
from .generator import DTYPE, GeneratorSpec, RadianceField, StyleParams, average_style, free_rows, style_shape
from .operators import ForwardOperator, apply
from .regularizer import AnnealSchedule, PriorDiagnostics, ReferenceSet, anneal_delta
from .renderer import Camera, RenderConfig, render

log = logging.getLogger(__name__)

TRACE_COLUMNS = ("step", "lr", "delta", "loss_total", "loss_meas", "loss_prior", "loss_geo", "max_weight", "entropy")


class InversionError(RuntimeError):
    def __init__(self, msg, trace=None):
        super().__init__(msg)
        self.trace = trace


@dataclass(frozen=True)
class LossWeights:
    measurement: float = 1.0
    prior: float = 0.1
    geodesic: float = 0.1
    pigan: float = 0.0
    perceptual: float = 0.0
    l2_outside: float = 0.0
    combine: bool = False

    def __post_init__(self):
        vals = (self.measurement, self.prior, self.geodesic, self.pigan, self.perceptual, self.l2_outside)
        if any(v < 0 for v in vals):
            raise ValueError("loss weights must be >= 0")
        if self.prior > 0 and self.pigan > 0 and not self.combine:
            raise ValueError("prior and pigan regularizers are exclusive unless combine=True")


@dataclass(frozen=True)
class InversionConfig:
    steps: int = 800
    lr: float = 0.01
    lr_half_life: int = 200
    anneal: AnnealSchedule = field(default_factory=AnnealSchedule.default)
    delta_scale: float = 1.0
    weights: LossWeights = field(default_factory=LossWeights)
    cadence: int = 5
    gen: GeneratorSpec = field(default_factory=GeneratorSpec)
    render: RenderConfig = field(default_factory=RenderConfig)
    flat_window: float = 0.25
    flat_tol: float = 0.02
    init_count: int = 10_000
    init_perturb: float = 0.0
    weight_decay: float = 0.0
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.cadence < 1:
            raise ValueError("voxelization cadence must be >= 1")
        if self.lr <= 0 or self.lr_half_life < 1:
            raise ValueError("lr must be positive and lr_half_life >= 1")
        if not 0 < self.flat_window <= 1 or self.flat_tol < 0:
            raise ValueError("flat window must lie in (0, 1] and tolerance >= 0")
        if self.init_count < 1 or self.init_perturb < 0:
            raise ValueError("init_count >= 1 and init_perturb >= 0 required")

    def lr_at(self, step: int) -> float:
        return self.lr * 2.0 ** (-(step // self.lr_half_life))

    def delta_at(self, step: int) -> float:
        return self.delta_scale * anneal_delta(self.anneal, step)

    def to_dict(self) -> dict:
        return {
            "steps": self.steps, "lr": self.lr, "lr_half_life": self.lr_half_life,
            "anneal": self.anneal.to_dict(), "delta_scale": self.delta_scale,
            "weights": asdict(self.weights), "cadence": self.cadence,
            "gen": self.gen.to_dict(), "render": self.render.to_dict(),
            "flat_window": self.flat_window, "flat_tol": self.flat_tol,
            "init_count": self.init_count, "init_perturb": self.init_perturb,
            "weight_decay": self.weight_decay, "betas": list(self.betas), "eps": self.eps,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "InversionConfig":
        d = dict(d)
        conv = {
            "anneal": AnnealSchedule.from_dict,
            "weights": lambda w: LossWeights(**w),
            "gen": GeneratorSpec.from_dict,
            "render": RenderConfig.from_dict,
            "betas": tuple,
        }
        for key, fn in conv.items():
            if key in d:
                d[key] = fn(d[key])
        return cls(**d)


@dataclass
class InversionResult:
    params: StyleParams
    best_loss: float
    trace: dict  # column name -> np.ndarray
    selected_step: int
    final_params: StyleParams
    gen: GeneratorSpec

    @property
    def field(self) -> RadianceField:
        return RadianceField(self.gen, self.params)

    def write_trace(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(TRACE_COLUMNS)
            for i in range(len(self.trace["step"])):
                w.writerow([_fmt(self.trace[c][i]) for c in TRACE_COLUMNS])


def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


class GridCache:
    """Voxelization of the iterate with a refresh cadence.

    On refresh steps every lattice point is evaluated.  In between, only the
    cached "active" points (unmasked for some weighted reference and carrying
    non-negligible density in the iterate or reference) are re-evaluated; the
    rest of the grid keeps its last values as constants.
    """

    def __init__(self, refs: ReferenceSet, cadence: int):
        self.refs = refs
        self.cadence = cadence
        self.points = geometry.lattice_points(refs.k, refs.lo, refs.hi)
        self.cached = None
        self.active = None

    def grid(self, field, step: int, force: bool = False) -> geometry.VoxelGrid:
        k = self.refs.k
        if force or self.cached is None or step % self.cadence == 0:
            return geometry.voxelize(field, k, self.refs.lo, self.refs.hi, points=self.points)
        _, fresh = field(self.points[self.active])
        dens = self.cached.reshape(-1).index_copy(0, self.active, fresh)
        return geometry.VoxelGrid(k, self.refs.lo, self.refs.hi, dens.reshape(k, k, k))

    def update(self, grid: geometry.VoxelGrid, weights: np.ndarray, full: bool):
        if not full:
            return
        dens = grid.densities.detach()
        self.cached = dens
        ref_dens, keep = self.refs.stacked()
        live = torch.as_tensor(weights > 1e-12)
        unmasked = keep[live].amax(0) > 0
        scale = max(float(dens.max()), float(ref_dens[live].max()), 1e-300)
        busy = (dens > 1e-4 * scale) | (ref_dens[live].amax(0) > 1e-4 * scale)
        self.active = torch.nonzero((unmasked & busy).reshape(-1)).reshape(-1)


def total_loss(params: StyleParams, y, op: ForwardOperator, cam: Camera, refs: ReferenceSet | None,
               delta: float, wts: LossWeights, gen: GeneratorSpec, render_cfg: RenderConfig = RenderConfig(),
               avg: StyleParams | None = None, grid: geometry.VoxelGrid | None = None, perceptual=None):
    """Return ``(total, components, diagnostics)`` for the given style parameters.

    ``grid`` overrides the voxelized iterate (used for cached voxelization);
    ``diagnostics`` is None when no prior term is active.
    """
    field = RadianceField(gen, params)
    img = render(field, cam, render_cfg)
    pred = apply(op, img)
    y = torch.as_tensor(y, dtype=DTYPE)
    meas = ((pred - y) ** 2).mean()
    comps = {"meas": meas, "prior": torch.zeros((), dtype=DTYPE), "geo": torch.zeros((), dtype=DTYPE),
             "pigan": torch.zeros((), dtype=DTYPE), "l2": torch.zeros((), dtype=DTYPE),
             "perceptual": torch.zeros((), dtype=DTYPE)}
    total = wts.measurement * meas
    diag = None
    if wts.prior > 0 or wts.l2_outside > 0:
        if refs is None:
            raise ValueError("a reference set is required when prior or l2_outside weights are positive")
        if grid is None:
            grid = geometry.voxelize(field, refs.k, refs.lo, refs.hi)
    if wts.prior > 0:
        value, diag = regularizer.soft_prior(grid, refs, delta)
        comps["prior"] = value
        total = total + wts.prior * value
    if wts.l2_outside > 0:
        union = np.logical_or.reduce([e.mask.values for e in refs.entries])
        mask = geometry.MaskGrid(refs.k, refs.lo, refs.hi, union)
        comps["l2"] = regularizer.l2_outside_mask(grid, mask)
        total = total + wts.l2_outside * comps["l2"]
    if wts.geodesic > 0:
        comps["geo"] = regularizer.geodesic_reg(params)
        total = total + wts.geodesic * comps["geo"]
    if wts.pigan > 0:
        if avg is None:
            raise ValueError("pigan regularization needs the average style")
        comps["pigan"] = regularizer.pigan_reg(params, avg)
        total = total + wts.pigan * comps["pigan"]
    if wts.perceptual > 0:
        if perceptual is None:
            raise ValueError("perceptual weight set but no perceptual metric supplied")
        comps["perceptual"] = perceptual(pred, y)
        total = total + wts.perceptual * comps["perceptual"]
    return total, comps, diag


def initial_style(cfg: InversionConfig, init_seed: int) -> tuple[StyleParams, StyleParams]:
    """``(init, average)``: the averaged style, optionally pushed off-manifold.

    With ``init_perturb > 0`` the rows the latent map pins (blob floaters)
    are released to zero and every coordinate gets seeded Gaussian noise.
    """
    avg = average_style(cfg.gen, cfg.init_count, init_seed)
    init = avg.detach()
    if cfg.init_perturb > 0:
        rng = np.random.default_rng([init_seed, 1])
        shape = init.shape
        free = list(free_rows(cfg.gen))
        freqs, phases = init.freqs.clone(), init.phases.clone()
        freqs[free] = 0.0
        phases[free] = 0.0
        init = StyleParams(
            freqs + torch.as_tensor(rng.standard_normal(shape) * cfg.init_perturb, dtype=DTYPE),
            phases + torch.as_tensor(rng.standard_normal(shape) * cfg.init_perturb, dtype=DTYPE),
        )
    return init, avg


def select_result(trace: dict, flat_window: float = 0.25, flat_tol: float = 0.02) -> int:
    """Index of the returned iterate.

    The global minimum wins unless later steps in the final ``flat_window``
    fraction come within ``flat_tol`` (relative) of it; then the qualifying
    step with the largest delta is preferred.
    """
    total = np.asarray(trace["loss_total"], dtype=np.float64)
    delta = np.asarray(trace["delta"], dtype=np.float64)
    n = len(total)
    if n == 0:
        raise ValueError("empty trace")
    best = int(np.argmin(total))
    start = n - max(1, math.ceil(flat_window * n))
    bound = total[best] + flat_tol * abs(total[best])
    cands = [best] + [t for t in range(max(start, best + 1), n) if total[t] <= bound]
    # largest delta, then lowest loss, then earliest
    return min(cands, key=lambda t: (-delta[t], total[t], t))


def invert(cfg: InversionConfig, y, op: ForwardOperator, cam: Camera, refs: ReferenceSet | None = None,
           init_seed: int = 0, init: StyleParams | None = None, perceptual=None) -> InversionResult:
    """Fit style parameters to measurements ``y`` with Adam; see module docstring."""
    gen = cfg.gen
    wts = cfg.weights
    start, avg = initial_style(cfg, init_seed)
    if init is not None:
        start = init.detach()
    if start.shape != style_shape(gen):
        raise ValueError("initial style does not match the generator")
    theta = start.flat().clone().requires_grad_(True)
    shape = start.shape
    opt = torch.optim.AdamW([theta], lr=cfg.lr, betas=cfg.betas, eps=cfg.eps, weight_decay=cfg.weight_decay)
    needs_grid = refs is not None and (wts.prior > 0 or wts.l2_outside > 0)
    cache = GridCache(refs, cfg.cadence) if needs_grid else None

    cols = {c: [] for c in TRACE_COLUMNS}
    snapshots = []
    for step in range(cfg.steps + 1):
        lr = cfg.lr_at(step)
        delta = cfg.delta_at(step)
        params = StyleParams.from_flat(theta, shape)
        grid = None
        full = False
        if cache is not None:
            full = cache.cached is None or step % cfg.cadence == 0
            grid = cache.grid(RadianceField(gen, params), step, force=full)
        total, comps, diag = total_loss(params, y, op, cam, refs, delta, wts, gen, cfg.render, avg, grid, perceptual)
        value = total.item()
        if cache is not None:
            cache.update(grid, diag.weights if diag is not None else np.ones(len(refs)), full)
        for c, v in zip(TRACE_COLUMNS, (step, lr, delta, value, comps["meas"].item(), comps["prior"].item(),
                                        comps["geo"].item(),
                                        diag.max_weight if diag else float("nan"),
                                        diag.entropy if diag else float("nan"))):
            cols[c].append(v)
        snapshots.append(theta.detach().clone())
        if not math.isfinite(value):
            raise InversionError(f"non-finite loss at step {step}", {c: np.asarray(v) for c, v in cols.items()})
        if step == cfg.steps:
            break
        for group in opt.param_groups:
            group["lr"] = lr
        opt.zero_grad()
        total.backward()
        opt.step()

    trace = {c: np.asarray(v) for c, v in cols.items()}
    sel = select_result(trace, cfg.flat_window, cfg.flat_tol)
    log.debug("inversion finished: selected step %d of %d", sel, cfg.steps)
    return InversionResult(
        params=StyleParams.from_flat(snapshots[sel], shape),
        best_loss=float(trace["loss_total"][sel]),
        trace=trace,
        selected_step=sel,
        final_params=StyleParams.from_flat(snapshots[-1], shape),
        gen=gen,
    )


def grad_check(theta, closure, n_coords: int = 50, seed: int = 0, rel_step: float = 1e-4,
               floor: float = 1e-6) -> float:
    """Max relative error between autograd and central differences on random coordinates.

    ``closure(theta) -> scalar tensor``.  The step is ``rel_step * (1 + |theta_j|)``;
    the error denominator is ``max(|a|, |f|, floor * max|grad|)`` so coordinates
    with vanishing gradient do not blow up the ratio.
    """
    theta = torch.as_tensor(theta, dtype=DTYPE).detach().clone()
    x = theta.clone().requires_grad_(True)
    loss = closure(x)
    if not torch.isfinite(loss):
        raise ValueError("loss is not finite at theta")
    (grad,) = torch.autograd.grad(loss, x, allow_unused=True)
    grad = torch.zeros_like(theta) if grad is None else grad.detach()
    n = theta.numel()
    idx = np.random.default_rng(seed).choice(n, size=min(n_coords, n), replace=False)
    scale = floor * float(grad.abs().max())
    worst = 0.0
    with torch.no_grad():
        for j in idx:
            h = rel_step * (1.0 + abs(float(theta[j])))
            tp, tm = theta.clone(), theta.clone()
            tp[j] += h
            tm[j] -= h
            fd = (float(closure(tp)) - float(closure(tm))) / (2.0 * h)
            a = float(grad[j])
            denom = max(abs(a), abs(fd), scale)
            if denom == 0.0:
                continue
            worst = max(worst, abs(a - fd) / denom)
    return worst
