import numpy as np
import pytest
import torch

from nerfinv.generator import DTYPE, GeneratorSpec
from nerfinv.renderer import RenderConfig, camera_from_angles


class ConstantField:
    """Homogeneous density and color everywhere."""

    def __init__(self, sigma, color=(1.0, 1.0, 1.0)):
        self.sigma = sigma
        self.color = torch.as_tensor(color, dtype=DTYPE)

    def __call__(self, p):
        n = p.shape[0]
        return self.color.expand(n, 3), torch.full((n,), float(self.sigma), dtype=DTYPE)


class BlobScene:
    """Explicit Gaussian blobs, independent of any latent squashing."""

    def __init__(self, centers, radii, colors, amps):
        self.centers = torch.as_tensor(np.asarray(centers, dtype=np.float64))
        self.radii = torch.as_tensor(np.asarray(radii, dtype=np.float64))
        self.colors = torch.as_tensor(np.asarray(colors, dtype=np.float64))
        self.amps = torch.as_tensor(np.asarray(amps, dtype=np.float64))

    def __call__(self, p):
        d2 = ((p[:, None, :] - self.centers[None]) ** 2).sum(-1)
        per = self.amps * torch.exp(-d2 / (2 * self.radii**2))
        dens = per.sum(-1)
        return (per @ self.colors) / (dens[:, None] + 1e-12), dens


@pytest.fixture
def blob_gen():
    return GeneratorSpec.blob(3)


@pytest.fixture
def floater_gen():
    return GeneratorSpec.blob(3, 1)


@pytest.fixture
def small_siren():
    return GeneratorSpec("siren", depth=3, width=16, latent_dim=8)


@pytest.fixture
def small_cam():
    return camera_from_angles(90, 90, w=12, h=10)


@pytest.fixture
def fast_render():
    return RenderConfig(n_samples=16, near=1.0, far=3.0)
