"""
Curating a reference set
========================

Render every candidate latent on the 3x3 camera grid, score each view,
and split the pool by how much the score changes across views (w) and how
bad the worst view is (c).  The good latents are voxelized into the
reference set that the prior matches against, then written to disk.
"""
import math
from pathlib import Path

from nerfinv.artifacts import load_reference_set, save_png, save_reference_set
from nerfinv.curation import build_reference_set, camera_grid, contact_sheet, curate, default_view_scorer
from nerfinv.generator import GeneratorSpec, sample_latent
from nerfinv.renderer import RenderConfig

out = Path("demo_output/curation")
out.mkdir(parents=True, exist_ok=True)

gen = GeneratorSpec.blob(4)
cfg = RenderConfig(n_samples=24, near=1.0, far=3.0)
cams = camera_grid(w=48, h=48)
seeds = list(range(5000, 5024))
latents = [sample_latent(s, gen.latent_dim) for s in seeds]

# the default scorer penalizes opaque pixels far from the image centre
report = curate(latents, cams, default_view_scorer(), eps1=0.01, eps2=math.inf, gen=gen,
                bad_eps=0.02, seeds=seeds, cfg=cfg)
report.write_csv(out / "curation.csv")
print(f"good {len(report.good)}  bad {len(report.bad)}  unclassified {len(report.unclassified)}")
print(f"bad fraction {report.bad_fraction:.0%}")

# contact sheets are for eyeballing the split
for i in report.bad[:3] + report.good[:3]:
    save_png(contact_sheet(latents[i], gen, cams, cfg), out / f"sheet_{seeds[i]}_{report.labels[i]}.png")

refs = build_reference_set(report, gen, k=32, limit=16)
save_reference_set(refs, out / "refs")
again = load_reference_set(out / "refs")
print(f"saved and reloaded {len(again)} references at k = {again.k}")
