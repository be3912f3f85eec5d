"""Experiment specs and runners that write CSV/PNG artifacts.

Every run synthesizes an in-range target by rendering the generator at a
seeded latent, corrupts it with a forward operator, inverts it under one or
more method arms and scores the result on the frontal view and a list of
novel views against ground-truth renders.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import re
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import torch
import yaml

from . import artifacts, curation, geometry
from .generator import GeneratorSpec, RadianceField, sample_latent
from .inversion import InversionConfig, InversionResult, LossWeights, invert
from .metrics import mse, psnr
from .operators import OperatorSpec, corrupt, realize
from .regularizer import AnnealSchedule, ReferenceSet
from .renderer import FRONTAL, RenderConfig, camera_from_angles, render

log = logging.getLogger(__name__)

TASKS = ("invert", "inpaint_sweep", "box_inpaint", "cs_sweep", "superres_sweep",
         "ref_count_ablation", "anneal_ablation", "regularizer_compare", "curation")
SUMMARY_COLUMNS = ("seed", "arm", "op", "view_pitch", "view_yaw", "mse", "psnr", "steps",
                   "final_delta", "final_max_weight")
DEFAULT_VIEWS = ((90.0, 90.0), (77.0, 90.0), (103.0, 90.0), (90.0, 99.0))
DEFAULT_ARMS = {
    "invert": ("ours",),
    "inpaint_sweep": ("ours", "csgm"),
    "box_inpaint": ("ours", "csgm"),
    "cs_sweep": ("ours", "csgm"),
    "superres_sweep": ("ours", "csgm"),
    "ref_count_ablation": (),
    "anneal_ablation": ("ours-noanneal", "ours"),
    "regularizer_compare": ("pigan", "geodesic", "ours"),
    "curation": (),
}
BASE_ARMS = ("ours", "csgm", "pigan", "geodesic", "l2-outside", "ours-noanneal")


class SpecError(ValueError):
    pass


@dataclass(frozen=True)
class ReferenceConfig:
    """Where the reference set comes from: a saved directory or freshly curated latents."""

    path: str | None = None
    count: int = 16
    pool: int = 16
    seed_base: int = 5000
    k: int = 32
    iso_percentile: float = 90.0
    dilation: int = 1
    eps1: float = math.inf
    eps2: float = math.inf
    bad_eps: float | None = None
    flip_plausibility: bool = False


@dataclass(frozen=True)
class ExperimentSpec:
    task: str = "invert"
    gen: GeneratorSpec = field(default_factory=GeneratorSpec)
    inversion: InversionConfig = field(default_factory=InversionConfig)
    width: int = 64
    height: int = 64
    fov: float = 30.0
    radius: float = 2.0
    frontal: tuple = FRONTAL
    views: tuple = DEFAULT_VIEWS
    operators: tuple = ("identity",)
    seeds: tuple = (0,)
    target_offset: int = 1000
    arms: tuple = ()
    noise_std: float = 0.0
    references: ReferenceConfig = field(default_factory=ReferenceConfig)
    arm_weights: dict = field(default_factory=lambda: {"pigan": 0.1, "geodesic": 0.1, "l2_outside": 0.1})
    ratios: tuple = (0.1, 0.25, 0.5, 0.75, 1.0)
    cs_ms: tuple = (256, 576, 1024)
    factors: tuple = (2, 4)
    box: str = "box:16,16,32,32"
    ref_counts: tuple = (4, 8, 16, 32)
    curation_count: int = 32
    write_grids: bool = True
    out: str = "runs/experiment"

    def __post_init__(self):
        validate(self)

    @property
    def arm_list(self) -> tuple:
        if self.arms:
            return tuple(self.arms)
        if self.task == "ref_count_ablation":
            return tuple(f"ours@{n}" for n in self.ref_counts)
        return DEFAULT_ARMS[self.task]

    def operator_list(self) -> tuple:
        if self.task == "inpaint_sweep":
            return tuple(f"pixmask:{r:g}" for r in self.ratios)
        if self.task == "box_inpaint":
            return (self.box,)
        if self.task == "cs_sweep":
            return tuple(f"cs:{m}" for m in self.cs_ms)
        if self.task == "superres_sweep":
            return tuple(f"down:{f}" for f in self.factors)
        return tuple(self.operators)

    def cameras(self):
        views = list(self.views)
        if tuple(self.frontal) not in [tuple(v) for v in views]:
            views.insert(0, tuple(self.frontal))
        return [self.camera(p, y) for p, y in views]

    def camera(self, pitch, yaw):
        return camera_from_angles(pitch, yaw, self.radius, self.fov, self.width, self.height)

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "gen": self.gen.to_dict(),
            "inversion": self.inversion.to_dict(),
            "width": self.width, "height": self.height, "fov": self.fov, "radius": self.radius,
            "frontal": list(self.frontal),
            "views": [list(v) for v in self.views],
            "operators": list(self.operators),
            "seeds": list(self.seeds),
            "target_offset": self.target_offset,
            "arms": list(self.arms),
            "noise_std": self.noise_std,
            "references": {k: v for k, v in self.references.__dict__.items()},
            "arm_weights": dict(self.arm_weights),
            "ratios": list(self.ratios), "cs_ms": list(self.cs_ms), "factors": list(self.factors),
            "box": self.box, "ref_counts": list(self.ref_counts),
            "curation_count": self.curation_count, "write_grids": self.write_grids,
            "out": self.out,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise SpecError(f"unknown experiment keys: {sorted(unknown)}")
        if "gen" in d:
            d["gen"] = GeneratorSpec.from_dict(d["gen"])
        if "inversion" in d:
            inv = dict(d["inversion"])
            # the inversion inherits the experiment's generator unless it names its own
            if "gen" not in inv and "gen" in d:
                inv["gen"] = d["gen"].to_dict()
            d["inversion"] = InversionConfig.from_dict(inv)
        elif "gen" in d:
            d["inversion"] = InversionConfig(gen=d["gen"])
        if "references" in d:
            d["references"] = ReferenceConfig(**d["references"])
        for key in ("frontal", "operators", "seeds", "arms", "ratios", "cs_ms", "factors", "ref_counts"):
            if key in d:
                d[key] = tuple(d[key])
        if "views" in d:
            d["views"] = tuple(tuple(float(a) for a in v) for v in d["views"])
        return cls(**d)


def validate(spec: ExperimentSpec) -> None:
    """Check task-specific completeness before any compute happens."""
    if spec.task not in TASKS:
        raise SpecError(f"unknown task {spec.task!r}; expected one of {TASKS}")
    if spec.inversion.gen != spec.gen:
        raise SpecError("inversion config and experiment disagree on the generator")
    if not spec.seeds:
        raise SpecError("at least one seed is required")
    if len(set(spec.seeds)) != len(spec.seeds):
        raise SpecError("seeds must be distinct")
    if spec.noise_std < 0:
        raise SpecError("noise_std must be >= 0")
    if spec.task == "curation":
        if spec.curation_count < 1:
            raise SpecError("curation needs curation_count >= 1")
        return
    if spec.task == "ref_count_ablation" and not spec.ref_counts:
        raise SpecError("ref_count_ablation needs ref_counts")
    if spec.task == "inpaint_sweep" and not spec.ratios:
        raise SpecError("inpaint_sweep needs ratios")
    if spec.task == "cs_sweep" and not spec.cs_ms:
        raise SpecError("cs_sweep needs cs_ms")
    if spec.task == "superres_sweep" and not spec.factors:
        raise SpecError("superres_sweep needs factors")
    for arm in spec.arm_list:
        base = arm.split("@")[0]
        if base not in BASE_ARMS:
            raise SpecError(f"unknown arm {arm!r}")
    for text in spec.operator_list():
        realize(OperatorSpec.parse(text), spec.width, spec.height)
    if any(a.startswith("ours") for a in spec.arm_list) and spec.inversion.weights.prior <= 0:
        raise SpecError("the 'ours' arms need a positive prior weight")
    if spec.task == "ref_count_ablation":
        need = max(spec.ref_counts)
        if spec.references.path is None and spec.references.count < need:
            raise SpecError(f"ref_count_ablation needs at least {need} references")


def load_spec(path, **overrides) -> ExperimentSpec:
    with open(path, encoding="utf-8") as fh:
        d = yaml.safe_load(fh) or {}
    d.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentSpec.from_dict(d)


def dump_spec(spec: ExperimentSpec, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(spec.to_dict(), fh, sort_keys=False)


def arm_config(spec: ExperimentSpec, arm: str) -> tuple[InversionConfig, int | None]:
    """Inversion config for a method arm and the reference count it uses (None = all)."""
    base, _, count = arm.partition("@")
    cfg = spec.inversion
    w = cfg.weights
    aw = spec.arm_weights
    off = dict(prior=0.0, pigan=0.0, l2_outside=0.0)
    if base == "ours":
        weights = w
    elif base == "ours-noanneal":
        weights = w
        # without annealing the prior locks at the schedule's final temperature
        cfg = replace(cfg, anneal=AnnealSchedule.constant(cfg.anneal.values[-1]))
    elif base == "csgm":
        weights = replace(w, geodesic=0.0, **off)
    elif base == "pigan":
        weights = replace(w, **{**off, "geodesic": 0.0, "pigan": aw.get("pigan", 0.1)})
    elif base == "geodesic":
        weights = replace(w, **off, geodesic=aw.get("geodesic", 0.1))
    elif base == "l2-outside":
        weights = replace(w, **{**off, "l2_outside": aw.get("l2_outside", 0.1)})
    else:
        raise SpecError(f"unknown arm {arm!r}")
    return replace(cfg, weights=weights), (int(count) if count else None)


def needs_references(spec: ExperimentSpec) -> bool:
    return any(arm_config(spec, a)[0].weights.prior > 0 or arm_config(spec, a)[0].weights.l2_outside > 0
               for a in spec.arm_list)


def reference_set(spec: ExperimentSpec) -> ReferenceSet:
    rc = spec.references
    if rc.path is not None:
        return artifacts.load_reference_set(rc.path)
    report = curate_pool(spec, max(rc.pool, rc.count))
    return curation.build_reference_set(report, spec.gen, rc.k, rc.iso_percentile, rc.dilation, limit=rc.count)


def curate_pool(spec: ExperimentSpec, n: int) -> curation.CurationReport:
    rc = spec.references
    seeds = [rc.seed_base + i for i in range(n)]
    latents = [sample_latent(s, spec.gen.latent_dim) for s in seeds]
    cams = curation.camera_grid(radius=spec.radius, fov=spec.fov, w=spec.width, h=spec.height)
    return curation.curate(latents, cams, curation.default_view_scorer(), rc.eps1, rc.eps2, spec.gen,
                           rc.bad_eps, rc.flip_plausibility, seeds, spec.inversion.render)


def render_views(field, cameras, out_dir, cfg: RenderConfig = RenderConfig()) -> list[Path]:
    """One PNG per camera, named ``{pitch}_{yaw}.png``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    with torch.no_grad():
        for cam in cameras:
            path = out / f"{cam.label}.png"
            artifacts.save_png(render(field, cam, cfg), path)
            paths.append(path)
    return paths


@dataclass
class RunRecord:
    seed: int
    arm: str
    op: str
    result: InversionResult | None = None
    views: dict = field(default_factory=dict)  # (pitch, yaw) -> (mse, psnr)
    error: str | None = None


@dataclass
class ExperimentResult:
    out: Path
    records: list
    properties: dict

    @property
    def failures(self) -> list:
        return [r for r in self.records if r.error is not None]

    @property
    def ok(self) -> bool:
        return not self.failures and all(self.properties.values())


def _slug(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9.@-]+", "_", text)


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return repr(v)


def summary_rows(records, steps_of) -> list[list[str]]:
    rows = []
    for r in records:
        if r.result is None:
            continue
        tr = r.result.trace
        for (p, y), (err, db) in r.views.items():
            rows.append([str(r.seed), r.arm, r.op, f"{p:g}", f"{y:g}", _fmt(err), _fmt(db),
                         str(steps_of(r)), _fmt(tr["delta"][-1]), _fmt(tr["max_weight"][-1])])
    return rows


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def run_single(spec: ExperimentSpec, seed: int, op_text: str, arm: str, refs: ReferenceSet | None,
               run_dir: Path | None) -> RunRecord:
    rec = RunRecord(seed, arm, op_text)
    cfg, count = arm_config(spec, arm)
    cams = spec.cameras()
    frontal = spec.camera(*spec.frontal)
    z_true = sample_latent(spec.target_offset + seed, spec.gen.latent_dim)
    truth = RadianceField.from_latent(spec.gen, z_true)
    with torch.no_grad():
        x_true = render(truth, frontal, cfg.render)
    op = realize(OperatorSpec.parse(op_text, seed=seed), spec.width, spec.height)
    y = corrupt(op, x_true, spec.noise_std, seed=seed + 7919)
    use_refs = refs
    if refs is not None and count is not None:
        if count > len(refs):
            raise SpecError(f"arm {arm} asks for {count} references, only {len(refs)} available")
        use_refs = refs.subset(count)
    if cfg.weights.prior == 0 and cfg.weights.l2_outside == 0:
        use_refs = None
    res = invert(cfg, y, op, frontal, use_refs, init_seed=seed)
    rec.result = res
    field = res.field
    with torch.no_grad():
        for cam in cams:
            gt = render(truth, cam, cfg.render)
            est = render(field, cam, cfg.render)
            rec.views[(cam.pitch, cam.yaw)] = (mse(est, gt), psnr(est, gt))
    if run_dir is not None:
        run_dir.mkdir(parents=True, exist_ok=True)
        res.write_trace(run_dir / "trace.csv")
        render_views(field, cams, run_dir / "views", cfg.render)
        if spec.write_grids:
            k = refs.k if refs is not None else spec.references.k
            with torch.no_grad():
                grid = geometry.voxelize(field, k)
            (run_dir / "grid.f32").write_bytes(grid.numpy().astype("<f4").tobytes())
    return rec


def _frontal_mse(rec: RunRecord, spec: ExperimentSpec) -> float:
    return rec.views[tuple(float(a) for a in spec.frontal)][0]


def sweep_properties(spec: ExperimentSpec, records) -> dict:
    """Post-hoc sweep checks; names map to pass/fail."""
    ok = [r for r in records if r.result is not None]
    props = {}
    if spec.task == "inpaint_sweep":
        lo, hi = min(spec.ratios), max(spec.ratios)
        lo_op, hi_op = f"pixmask:{lo:g}", f"pixmask:{hi:g}"
        for arm in spec.arm_list:
            by = {(r.seed, r.op): _frontal_mse(r, spec) for r in ok if r.arm == arm}
            props[f"{arm}: frontal mse at ratio {hi:g} <= ratio {lo:g} on every seed"] = all(
                by[(s, hi_op)] <= by[(s, lo_op)] for s in spec.seeds if (s, hi_op) in by and (s, lo_op) in by)
    if spec.task == "cs_sweep":
        for arm in spec.arm_list:
            means = []
            for m in sorted(spec.cs_ms):
                vals = [_frontal_mse(r, spec) for r in ok if r.arm == arm and r.op == f"cs:{m}"]
                means.append(float(np.mean(vals)) if vals else math.nan)
            props[f"{arm}: mean frontal mse nonincreasing in m"] = all(b <= a for a, b in zip(means, means[1:]))
    return props


def anneal_table(spec: ExperimentSpec, records) -> list[list[str]]:
    """Mean per-view MSE, annealing off vs on, one row per view."""
    rows = []
    for cam in spec.cameras():
        key = (cam.pitch, cam.yaw)
        cols = []
        for arm in ("ours-noanneal", "ours"):
            vals = [r.views[key][0] for r in records if r.arm == arm and r.result is not None]
            cols.append(_fmt(float(np.mean(vals))) if vals else "nan")
        rows.append([f"({cam.pitch:g}, {cam.yaw:g})", *cols])
    return rows


def run_curation(spec: ExperimentSpec, out: Path) -> ExperimentResult:
    rc = spec.references
    report = curate_pool(spec, spec.curation_count)
    report.write_csv(out / "curation.csv")
    sheets = out / "contact_sheets"
    sheets.mkdir(exist_ok=True)
    cams = curation.camera_grid(radius=spec.radius, fov=spec.fov, w=spec.width, h=spec.height)
    for z, s in zip(report.latents, report.seeds):
        artifacts.save_png(curation.contact_sheet(z, spec.gen, cams, spec.inversion.render), sheets / f"latent_{s}.png")
    props = {}
    if report.good:
        refs = curation.build_reference_set(report, spec.gen, rc.k, rc.iso_percentile, rc.dilation, limit=rc.count)
        artifacts.save_reference_set(refs, out / "refs")
    else:
        props["good set nonempty"] = False
    return ExperimentResult(out, [], props)


def run_experiment(spec: ExperimentSpec, out=None) -> ExperimentResult:
    """Run every (seed, operator, arm) combination and write the artifact directory."""
    out = Path(out or spec.out)
    out.mkdir(parents=True, exist_ok=True)
    dump_spec(spec, out / "spec.yaml")
    if spec.task == "curation":
        return run_curation(spec, out)
    refs = reference_set(spec) if needs_references(spec) else None
    ops, arms = spec.operator_list(), spec.arm_list
    single = len(ops) * len(arms) * len(spec.seeds) == 1
    records = []
    for op_text in ops:
        for arm in arms:
            for seed in spec.seeds:
                run_dir = out if single else out / "runs" / _slug(op_text) / _slug(arm) / f"seed_{seed}"
                try:
                    rec = run_single(spec, seed, op_text, arm, refs, run_dir)
                except Exception as exc:  # recorded per run; the sweep carries on
                    log.warning("run seed=%s arm=%s op=%s failed: %s", seed, arm, op_text, exc)
                    rec = RunRecord(seed, arm, op_text, error=f"{type(exc).__name__}: {exc}")
                records.append(rec)

    steps_of = lambda r: arm_config(spec, r.arm)[0].steps  # noqa: E731
    rows = summary_rows(records, steps_of)
    _write_csv(out / "summary.csv", SUMMARY_COLUMNS, rows)
    if not single:
        arm_dir = out / "arms"
        arm_dir.mkdir(exist_ok=True)
        for arm in arms:
            _write_csv(arm_dir / f"{_slug(arm)}.csv", SUMMARY_COLUMNS, [r for r in rows if r[1] == arm])
    failures = [[str(r.seed), r.arm, r.op, r.error] for r in records if r.error is not None]
    if failures:
        _write_csv(out / "failures.csv", ("seed", "arm", "op", "error"), failures)
    if spec.task == "anneal_ablation":
        _write_csv(out / "anneal_table.csv", ("pitch_yaw", "no_annealing", "annealing"), anneal_table(spec, records))
    props = sweep_properties(spec, records)
    (out / "properties.json").write_text(json.dumps(props, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return ExperimentResult(out, records, props)
