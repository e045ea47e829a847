import numpy as np
import pytest

from tgafnet import functional as F
from tgafnet.autograd import Tensor, backward
from tgafnet.deform import dcn_forward, offset_channels
from tgafnet.errors import ConfigurationError, DimensionError


def _dcn(x, off, w, b, g):
    return dcn_forward(Tensor(x), Tensor(off), Tensor(w), Tensor(b), g).data


@pytest.mark.parametrize("k", [1, 3, 5])
@pytest.mark.parametrize("groups", [1, 3])
def test_zero_offsets_equal_plain_convolution(f64, rng, k, groups):
    x = rng.standard_normal((2, 3, 9, 8))
    w = rng.standard_normal((4, 3, k, k))
    b = rng.standard_normal(4)
    off = np.zeros((2, offset_channels(k, groups), 9, 8))
    conv = F.conv2d(Tensor(x), Tensor(w), Tensor(b), padding=(k - 1) // 2).data
    np.testing.assert_allclose(_dcn(x, off, w, b, groups), conv, atol=1e-12)


def test_per_channel_groups_zero_offset_is_pointwise_conv(f64, rng):
    c = 8
    x = rng.standard_normal((1, c, 6, 6))
    w = rng.standard_normal((c, c, 1, 1))
    b = rng.standard_normal(c)
    off = np.zeros((1, offset_channels(1, c), 6, 6))
    conv = F.conv2d(Tensor(x), Tensor(w), Tensor(b)).data
    np.testing.assert_allclose(_dcn(x, off, w, b, c), conv, atol=1e-12)


@pytest.mark.parametrize("dy,dx", [(1, 0), (0, -2), (2, 1)])
def test_constant_integer_offset_equals_shifted_convolution(f64, rng, dy, dx):
    k, h, w_ = 3, 12, 12
    x = rng.standard_normal((1, 2, h, w_))
    w = rng.standard_normal((3, 2, k, k))
    b = np.zeros(3)
    off = np.zeros((1, 1, k * k, 2, h, w_))
    off[:, :, :, 0] = dy
    off[:, :, :, 1] = dx
    got = _dcn(x, off.reshape(1, -1, h, w_), w, b, 1)
    shifted = np.roll(x, shift=(-dy, -dx), axis=(2, 3))
    ref = F.conv2d(Tensor(shifted), Tensor(w), Tensor(b), padding=1).data
    m = 1 + 2  # kernel reach plus the largest shift
    np.testing.assert_allclose(got[..., m:h - m, m:w_ - m], ref[..., m:h - m, m:w_ - m], atol=1e-12)


def test_offset_layout_is_dy_dx_per_group_and_sample(f64):
    # K=1, two groups: moving only group 1 along x must change only its output channel
    x = np.zeros((1, 2, 1, 3))
    x[0, 1, 0] = [1.0, 2.0, 3.0]
    x[0, 0, 0] = [5.0, 5.0, 5.0]
    w = np.eye(2).reshape(2, 2, 1, 1)
    off = np.zeros((1, 4, 1, 3))
    off[0, 3] = 1.0  # channel order: g0 dy, g0 dx, g1 dy, g1 dx
    out = _dcn(x, off, w, np.zeros(2), 2)
    np.testing.assert_array_equal(out[0, 0, 0], [5.0, 5.0, 5.0])
    np.testing.assert_array_equal(out[0, 1, 0], [2.0, 3.0, 0.0])


def test_offset_gradient_at_integer_landing_uses_right_cell(f64):
    # single sample landing exactly on x=1 of the ramp [0, 1, 4]
    w = Tensor(np.ones((1, 1, 1, 1)))
    xin = Tensor(np.array([[[[0.0, 1.0, 4.0]]]]))
    off = np.zeros((1, 2, 1, 3))
    off[0, 1, 0, 0] = 1.0  # output pixel 0 samples x=1 exactly
    offt = Tensor(off, requires_grad=True)
    backward(F.sum_all(dcn_forward(xin, offt, w, None, 1)))
    assert offt.grad[0, 1, 0, 0] == pytest.approx(3.0)


def test_even_kernel_rejected(rng):
    with pytest.raises(ConfigurationError):
        dcn_forward(Tensor(np.zeros((1, 1, 4, 4))), Tensor(np.zeros((1, 8, 4, 4))),
                    Tensor(np.zeros((1, 1, 2, 2))), None, 1)


def test_wrong_offset_channel_count_rejected():
    with pytest.raises(ConfigurationError, match="expected"):
        dcn_forward(Tensor(np.zeros((1, 3, 4, 4))), Tensor(np.zeros((1, 17, 4, 4))),
                    Tensor(np.zeros((1, 3, 3, 3))), None, 1)


def test_offset_spatial_mismatch_rejected():
    with pytest.raises(DimensionError):
        dcn_forward(Tensor(np.zeros((1, 3, 4, 4))), Tensor(np.zeros((1, 18, 4, 5))),
                    Tensor(np.zeros((1, 3, 3, 3))), None, 1)


def test_groups_must_divide_channels():
    with pytest.raises(ConfigurationError):
        dcn_forward(Tensor(np.zeros((1, 4, 4, 4))), Tensor(np.zeros((1, 54, 4, 4))),
                    Tensor(np.zeros((1, 4, 3, 3))), None, 3)


def test_offset_channels_arithmetic():
    assert [offset_channels(k, 3) for k in (1, 3, 5)] == [6, 54, 150]
    assert offset_channels(1, 64) == 128
