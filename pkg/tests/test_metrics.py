import math

import numpy as np
import pytest

from nerfinv.metrics import mse, psnr


def test_identical():
    a = np.random.default_rng(0).random((4, 4, 3))
    assert mse(a, a) == 0.0 and psnr(a, a) == math.inf


def test_zeros_vs_ones():
    assert mse(np.zeros((3, 3, 3)), np.ones((3, 3, 3))) == 1.0
    assert psnr(np.zeros((3, 3, 3)), np.ones((3, 3, 3))) == 0.0


def test_half_channels_differ():
    a = np.zeros((2, 2, 3))
    b = a.copy()
    b.reshape(-1)[:6] = 0.5
    # direct average: six of twelve entries contribute 0.5**2
    assert mse(a, b) == pytest.approx(0.125, rel=1e-15)
    assert psnr(a, b) == pytest.approx(-10 * math.log10(0.125))


def test_shape_mismatch():
    with pytest.raises(ValueError):
        mse(np.zeros((2, 2, 3)), np.zeros((2, 3, 3)))
