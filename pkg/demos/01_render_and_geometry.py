"""
Rendering a generated scene and extracting its geometry
=======================================================

Draw a latent, turn it into a radiance field, render it from a few
cameras, then voxelize the density and pull out a surface mesh and the
surface mask the 3-D prior uses.
"""
from pathlib import Path

import numpy as np

from nerfinv.artifacts import save_png
from nerfinv.generator import GeneratorSpec, RadianceField, sample_latent
from nerfinv.geometry import default_iso, marching_cubes, surface_mask, voxelize
from nerfinv.renderer import RenderConfig, camera_from_angles, render

out = Path("demo_output/render")
out.mkdir(parents=True, exist_ok=True)

# a head blob plus three feature blobs; latents are plain seeded normals
gen = GeneratorSpec.blob(4)
z = sample_latent(1003, gen.latent_dim)
field = RadianceField.from_latent(gen, z)

# frontal camera and two tilted views, all looking at the origin
cfg = RenderConfig(n_samples=48, near=1.0, far=3.0)
for pitch, yaw in [(90, 90), (77, 90), (90, 120)]:
    cam = camera_from_angles(pitch, yaw, w=96, h=96)
    img = render(field, cam, cfg).detach()
    save_png(img, out / f"{cam.label}.png")
    print(f"view {cam.label}: mean intensity {float(img.mean()):.3f}")

# densities on a 32^3 lattice; the iso level is a percentile of the positive cells
grid = voxelize(field, 32)
iso = default_iso(grid)
mesh = marching_cubes(grid, iso)
mask = surface_mask(grid, iso, dilation=1)
print(f"iso {iso:.3f}: {len(mesh.vertices)} vertices, {len(mesh.triangles)} triangles")
print(f"mask covers {mask.values.mean():.1%} of the grid")

# the prior only looks at cells outside the mask
outside = grid.numpy()[~mask.values]
print(f"largest density outside the mask: {outside.max():.3e}")
np.save(out / "grid.npy", grid.numpy())
