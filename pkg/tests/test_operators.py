import numpy as np
import pytest
import torch

from nerfinv.generator import DTYPE, GeneratorSpec, RadianceField, StyleParams, map_latent, sample_latent, style_shape
from nerfinv.inversion import grad_check
from nerfinv.operators import (
    OperatorError,
    OperatorSpec,
    adjoint,
    apply,
    corrupt,
    from_matrix,
    realize,
)
from nerfinv.renderer import RenderConfig, camera_from_angles, render

W, H = 8, 6
SPECS = ["identity", "pixmask:0.3", "box:2,1,3,4", "cs:40", "down:2"]


def rand_img(rng):
    return torch.as_tensor(rng.standard_normal((H, W, 3)))


@pytest.fixture(params=SPECS)
def op(request):
    return realize(OperatorSpec.parse(request.param, seed=4), W, H)


class TestRealize:
    def test_identity_bit_identical(self):
        img = rand_img(np.random.default_rng(0))
        assert torch.equal(apply(realize(OperatorSpec(), W, H), img), img)

    def test_full_pixel_mask(self):
        img = rand_img(np.random.default_rng(1))
        y = apply(realize(OperatorSpec("pixel_mask", ratio=1.0), W, H), img)
        assert torch.equal(y, img.reshape(-1, 3))

    def test_mask_seeded(self):
        a = realize(OperatorSpec("pixel_mask", ratio=0.4, seed=2), W, H).observed
        b = realize(OperatorSpec("pixel_mask", ratio=0.4, seed=2), W, H).observed
        c = realize(OperatorSpec("pixel_mask", ratio=0.4, seed=3), W, H).observed
        assert np.array_equal(a, b) and not np.array_equal(a, c) and len(a) == round(0.4 * W * H)

    def test_box_observes_complement(self):
        o = realize(OperatorSpec.parse("box:2,1,3,4"), W, H)
        m = o.pixel_mask()
        assert not m[1:5, 2:5].any() and m.sum() == W * H - 12

    def test_downsample_constant_and_checkerboard(self):
        o = realize(OperatorSpec("downsample", factor=2), W, H)
        assert torch.equal(apply(o, torch.full((H, W, 3), 0.7, dtype=DTYPE)), torch.full((3, 4, 3), 0.7, dtype=DTYPE))
        board = torch.as_tensor((np.indices((H, W)).sum(0) % 2)[..., None].repeat(3, -1), dtype=DTYPE)
        assert torch.equal(apply(o, board), torch.full((3, 4, 3), 0.5, dtype=DTYPE))

    def test_cs_identity_rows(self):
        img = rand_img(np.random.default_rng(3))
        assert torch.equal(apply(from_matrix(np.eye(3 * W * H), W, H), img), img.reshape(-1))

    def test_cs_scaling(self):
        a = realize(OperatorSpec("gaussian_cs", m=100, seed=0), 16, 16).matrix.numpy()
        assert abs(a.std() - 0.1) < 0.002

    @pytest.mark.parametrize("text", ["cs:145", "box:6,0,3,2", "pixmask:0", "pixmask:1.5", "down:3", "blur:2", "box:1,2"])
    def test_invalid(self, text):
        with pytest.raises(OperatorError):
            realize(OperatorSpec.parse(text), W, H)

    @pytest.mark.parametrize("text", SPECS)
    def test_label_round_trip(self, text):
        assert OperatorSpec.parse(text).label() == text


class TestLinearAlgebra:
    def test_linearity(self, op):
        rng = np.random.default_rng(5)
        for _ in range(100):
            x, y = rand_img(rng), rand_img(rng)
            a, b = rng.standard_normal(2)
            lhs = apply(op, a * x + b * y)
            rhs = a * apply(op, x) + b * apply(op, y)
            assert float((lhs - rhs).abs().max()) <= 1e-12 * max(1.0, float(rhs.abs().max()))

    def test_adjoint_identity(self, op):
        rng = np.random.default_rng(6)
        for _ in range(100):
            x = rand_img(rng)
            y = torch.as_tensor(rng.standard_normal(op.meas_shape))
            lhs = float((apply(op, x) * y).sum())
            rhs = float((x * adjoint(op, y)).sum())
            assert abs(lhs - rhs) <= 1e-10 * max(abs(lhs), 1e-300)

    def test_mask_adjoint_scatters(self):
        o = realize(OperatorSpec("pixel_mask", ratio=0.5, seed=1), W, H)
        back = adjoint(o, torch.ones(o.meas_shape, dtype=DTYPE))
        assert np.array_equal(back[..., 0].numpy().astype(bool), o.pixel_mask())

    def test_dimension_mismatch(self, op):
        with pytest.raises(OperatorError):
            apply(op, torch.zeros(H + 1, W, 3, dtype=DTYPE))
        with pytest.raises(OperatorError):
            adjoint(op, torch.zeros(7, 7, dtype=DTYPE))


class TestCorrupt:
    def test_zero_noise(self, op):
        img = rand_img(np.random.default_rng(7))
        assert torch.equal(corrupt(op, img, 0.0, 3), apply(op, img))

    def test_seeded(self):
        o = realize(OperatorSpec(), W, H)
        img = rand_img(np.random.default_rng(8))
        assert torch.equal(corrupt(o, img, 0.1, 9), corrupt(o, img, 0.1, 9))
        assert not torch.equal(corrupt(o, img, 0.1, 9), corrupt(o, img, 0.1, 10))

    def test_empirical_std(self):
        o = realize(OperatorSpec(), 200, 200)
        img = torch.zeros(200, 200, 3, dtype=DTYPE)
        noise = corrupt(o, img, 0.05, 0) - apply(o, img)
        assert noise.numel() >= 10**5
        assert abs(float(noise.std()) / 0.05 - 1) < 0.03

    def test_negative_std(self):
        with pytest.raises(OperatorError):
            corrupt(realize(OperatorSpec(), W, H), torch.zeros(H, W, 3, dtype=DTYPE), -1.0)


@pytest.mark.parametrize("text", ["pixmask:0.5", "cs:30", "down:2"])
def test_gradient_through_operator(text):
    gen = GeneratorSpec.blob(2, 1)
    cam = camera_from_angles(90, 90, w=W, h=H)
    cfg = RenderConfig(10, 1.0, 3.0)
    o = realize(OperatorSpec.parse(text, seed=1), W, H)
    y = apply(o, torch.as_tensor(np.random.default_rng(2).random((H, W, 3))))
    base = map_latent(gen, sample_latent(3, gen.latent_dim))

    def loss(theta):
        img = render(RadianceField(gen, StyleParams.from_flat(theta, style_shape(gen))), cam, cfg)
        return ((apply(o, img) - y) ** 2).sum()

    assert grad_check(base.flat(), loss, n_coords=30) < 1e-4
