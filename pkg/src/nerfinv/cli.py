"""Command-line entry point: curate, refs build, invert, sweep, render, check."""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import artifacts, checks, experiments
from .generator import RadianceField, sample_latent

log = logging.getLogger("nerfinv")

SWEEP_TASKS = tuple(t for t in experiments.TASKS if t not in ("invert", "curation"))


def _spec(args, task=None) -> experiments.ExperimentSpec:
    over = {}
    if args.out:
        over["out"] = args.out
    if args.seed is not None:
        over["seeds"] = [args.seed]
    if args.arm:
        over["arms"] = [args.arm]
    if task:
        over["task"] = task
    if args.config:
        return experiments.load_spec(args.config, **over)
    return experiments.ExperimentSpec.from_dict(over)


def _report(result: experiments.ExperimentResult) -> int:
    for rec in result.failures:
        print(f"FAILED seed={rec.seed} arm={rec.arm} op={rec.op}: {rec.error}")
    for name, ok in result.properties.items():
        print(f"{'PASS' if ok else 'FAIL'} {name}")
    print(f"artifacts in {result.out}")
    return 0 if result.ok else 1


def cmd_curate(args) -> int:
    return _report(experiments.run_experiment(_spec(args, "curation")))


def cmd_refs(args) -> int:
    spec = _spec(args)
    refs = experiments.reference_set(replace(spec, references=replace(spec.references, path=None)))
    out = artifacts.save_reference_set(refs, spec.out)
    print(f"wrote {len(refs)} references to {out}")
    return 0


def cmd_invert(args) -> int:
    return _report(experiments.run_experiment(_spec(args, "invert")))


def cmd_sweep(args) -> int:
    return _report(experiments.run_experiment(_spec(args, args.task)))


def cmd_render(args) -> int:
    spec = _spec(args)
    seed = spec.seeds[0]
    field = RadianceField.from_latent(spec.gen, sample_latent(spec.target_offset + seed, spec.gen.latent_dim))
    paths = experiments.render_views(field, spec.cameras(), spec.out, spec.inversion.render)
    for p in paths:
        print(p)
    return 0


def cmd_check(args) -> int:
    failed = 0
    for name, ok, detail in checks.run_checks():
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
        failed += not ok
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="experiment spec (YAML)")
    common.add_argument("--seed", type=int, help="run a single seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("--arm", help="restrict to one method arm")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="nerfinv", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("curate", parents=[common], help="score latents and build a reference set").set_defaults(fn=cmd_curate)
    refs = sub.add_parser("refs", help="reference-set utilities")
    refs_sub = refs.add_subparsers(dest="refs_command", required=True)
    refs_sub.add_parser("build", parents=[common], help="build and save a reference set").set_defaults(fn=cmd_refs)
    sub.add_parser("invert", parents=[common], help="invert seeded in-range targets").set_defaults(fn=cmd_invert)
    sweep = sub.add_parser("sweep", parents=[common], help="run an experiment sweep")
    sweep.add_argument("task", choices=SWEEP_TASKS)
    sweep.set_defaults(fn=cmd_sweep)
    sub.add_parser("render", parents=[common], help="render ground-truth views of a seeded latent").set_defaults(fn=cmd_render)
    sub.add_parser("check", parents=[common], help="run the built-in oracle checks").set_defaults(fn=cmd_check)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.fn(args)
    except (experiments.SpecError, artifacts.ArtifactError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
