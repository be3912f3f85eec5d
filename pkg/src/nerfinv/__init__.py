"""Inverse problems over a generative radiance field with a soft-min 3-D reference prior."""
from .generator import GeneratorSpec, RadianceField, StyleParams, map_latent, sample_latent
from .geometry import MaskGrid, VoxelGrid, marching_cubes, surface_mask, voxelize
from .inversion import InversionConfig, InversionResult, LossWeights, invert, total_loss
from .operators import OperatorSpec, adjoint, apply, corrupt, realize
from .regularizer import AnnealSchedule, ReferenceSet, anneal_delta, soft_prior
from .renderer import Camera, RenderConfig, camera_from_angles, render

__all__ = [
    "AnnealSchedule", "Camera", "GeneratorSpec", "InversionConfig", "InversionResult", "LossWeights",
    "MaskGrid", "OperatorSpec", "RadianceField", "ReferenceSet", "RenderConfig", "StyleParams", "VoxelGrid",
    "adjoint", "anneal_delta", "apply", "camera_from_angles", "corrupt", "invert", "map_latent",
    "marching_cubes", "realize", "render", "sample_latent", "soft_prior", "surface_mask", "total_loss", "voxelize",
]
