"""Reference-geometry curation: view scoring, consistency/plausibility costs, good/bad split."""
from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field

import numpy as np
import torch

from . import geometry
from .generator import GeneratorSpec, RadianceField
from .regularizer import ReferenceEntry, ReferenceSet
from .renderer import Camera, RenderConfig, camera_from_angles, render

CLIP_PITCHES = (76.5, 90.0, 103.5)
CLIP_YAWS = (81.0, 90.0, 99.0)


class CurationError(ValueError):
    pass


@dataclass(frozen=True)
class ViewScorer:
    """Image -> plausibility score (higher is more plausible).

    ``fn(rgb, opacity)`` receives an (H, W, 3) array and the (H, W)
    accumulated opacity; scorers that only look at colors ignore the latter.
    """

    name: str
    fn: object

    def __call__(self, rgb: np.ndarray, opacity: np.ndarray | None = None) -> float:
        return float(self.fn(rgb, opacity))


def _outside_disk_fraction(rgb, opacity, radius_frac=0.4, threshold=0.5):
    h, w = opacity.shape
    yy, xx = np.mgrid[0:h, 0:w]
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    outside = (yy - cy) ** 2 + (xx - cx) ** 2 > (radius_frac * min(w, h)) ** 2
    return float(np.count_nonzero((opacity > threshold) & outside)) / (h * w)


def default_view_scorer() -> ViewScorer:
    """Minus the fraction of opaque pixels outside the centered disk of radius 0.4 * min(w, h)."""
    return ViewScorer("outside-disk-opacity", lambda rgb, op: -_outside_disk_fraction(rgb, op))


def camera_grid(pitches=CLIP_PITCHES, yaws=CLIP_YAWS, **cam_kwargs) -> list[Camera]:
    return [camera_from_angles(p, y, **cam_kwargs) for p in pitches for y in yaws]


def view_scores(z, cameras, scorer: ViewScorer, gen: GeneratorSpec, cfg: RenderConfig = RenderConfig()) -> np.ndarray:
    field = RadianceField.from_latent(gen, z)
    out = []
    with torch.no_grad():
        for cam in cameras:
            rgb, opacity = render(field, cam, cfg, return_opacity=True)
            out.append(scorer(rgb.numpy(), opacity.numpy()))
    return np.asarray(out)


def consistency_from_scores(scores) -> float:
    """Max over view pairs of the absolute score difference."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size < 2:
        raise CurationError("consistency needs at least 2 views")
    return float(max(abs(a - b) for a, b in itertools.combinations(scores, 2)))


def consistency_cost(z, cameras, scorer, gen, cfg: RenderConfig = RenderConfig()) -> float:
    if len(cameras) < 2:
        raise CurationError("consistency needs at least 2 cameras")
    return consistency_from_scores(view_scores(z, cameras, scorer, gen, cfg))


def plausibility_cost(z, cameras, scorer, gen, cfg: RenderConfig = RenderConfig()) -> float:
    if len(cameras) < 1:
        raise CurationError("plausibility needs at least 1 camera")
    return float(view_scores(z, cameras, scorer, gen, cfg).min())


@dataclass
class CurationReport:
    latents: list
    seeds: list
    w: np.ndarray
    c: np.ndarray
    eps1: float
    eps2: float
    bad_eps: float
    labels: list = field(default_factory=list)
    scores: np.ndarray | None = None

    @property
    def good(self) -> list[int]:
        return [i for i, lab in enumerate(self.labels) if lab == "good"]

    @property
    def bad(self) -> list[int]:
        return [i for i, lab in enumerate(self.labels) if lab == "bad"]

    @property
    def unclassified(self) -> list[int]:
        return [i for i, lab in enumerate(self.labels) if lab == "unclassified"]

    @property
    def bad_fraction(self) -> float:
        return len(self.bad) / len(self.labels) if self.labels else 0.0

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["latent_seed", "w_z", "c_z", "class"])
            for i, lab in enumerate(self.labels):
                seed = "" if self.seeds[i] is None else self.seeds[i]
                wr.writerow([seed, repr(float(self.w[i])), repr(float(self.c[i])), lab])


def classify(w, c, eps1, eps2, bad_eps=None, flip_plausibility=False) -> list[str]:
    """Bad: ``w >= bad_eps``; good: ``w <= eps1`` and ``c <= eps2`` (``>=`` when flipped).

    A latent meeting both predicates is bad; one meeting neither is unclassified.
    """
    bad_eps = eps1 if bad_eps is None else bad_eps
    labels = []
    for wz, cz in zip(w, c):
        plausible = cz >= eps2 if flip_plausibility else cz <= eps2
        if wz >= bad_eps:
            labels.append("bad")
        elif wz <= eps1 and plausible:
            labels.append("good")
        else:
            labels.append("unclassified")
    return labels


def curate(latents, cameras, scorer: ViewScorer, eps1: float, eps2: float, gen: GeneratorSpec,
           bad_eps: float | None = None, flip_plausibility: bool = False, seeds=None,
           cfg: RenderConfig = RenderConfig()) -> CurationReport:
    latents = [np.asarray(z, dtype=np.float64) for z in latents]
    seeds = list(seeds) if seeds is not None else [None] * len(latents)
    if len(cameras) < 2:
        raise CurationError("curation needs at least 2 cameras")
    scores = np.stack([view_scores(z, cameras, scorer, gen, cfg) for z in latents]) if latents else np.zeros((0, len(cameras)))
    w = np.array([consistency_from_scores(s) for s in scores])
    c = scores.min(axis=1) if len(scores) else np.zeros(0)
    labels = classify(w, c, eps1, eps2, bad_eps, flip_plausibility)
    return CurationReport(latents, seeds, w, c, eps1, eps2, eps1 if bad_eps is None else bad_eps, labels, scores)


def reference_entry(z, gen: GeneratorSpec, k=32, iso_percentile=90.0, dilation=1,
                    lo=geometry.DEFAULT_BOUNDS[0], hi=geometry.DEFAULT_BOUNDS[1], seed=None) -> ReferenceEntry:
    field = RadianceField.from_latent(gen, z)
    with torch.no_grad():
        grid = geometry.voxelize(field, k, lo, hi)
    # references live on disk as float32; quantize up front so save/load is exact
    grid.densities = torch.as_tensor(grid.numpy().astype(np.float32), dtype=torch.float64)
    iso = geometry.default_iso(grid, iso_percentile)
    mask = geometry.surface_mask(grid, iso, dilation)
    return ReferenceEntry(np.asarray(z, dtype=np.float64), grid, mask, seed)


def build_reference_set(report: CurationReport, gen: GeneratorSpec, k=32, iso_percentile=90.0, dilation=1,
                        lo=geometry.DEFAULT_BOUNDS[0], hi=geometry.DEFAULT_BOUNDS[1], limit=None) -> ReferenceSet:
    good = report.good[:limit] if limit else report.good
    if not good:
        raise CurationError("no good latents to build references from")
    entries = [reference_entry(report.latents[i], gen, k, iso_percentile, dilation, lo, hi, report.seeds[i])
               for i in good]
    return ReferenceSet(entries, iso_percentile, dilation)


def contact_sheet(z, gen: GeneratorSpec, cameras, cfg: RenderConfig = RenderConfig(), cols: int = 3) -> np.ndarray:
    """Tile the views of one latent into a single (rows*H, cols*W, 3) array."""
    field = RadianceField.from_latent(gen, z)
    with torch.no_grad():
        views = [render(field, cam, cfg).numpy() for cam in cameras]
    rows = -(-len(views) // cols)
    h, w = views[0].shape[:2]
    sheet = np.zeros((rows * h, cols * w, 3))
    for i, v in enumerate(views):
        r, c = divmod(i, cols)
        sheet[r * h:(r + 1) * h, c * w:(c + 1) * w] = v
    return sheet
