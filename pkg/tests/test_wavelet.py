import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dualitm.tensor import ShapeError, Tensor, grad_check
from dualitm.wavelet import PSNR_CAP, WAParams, WaveletCoeffs, dwt2_haar, hf_psnr, idwt2_haar, wavelet_attention


def haar_oracle(x):
    """Single-level 2-D Haar by explicit 2x2 block arithmetic."""
    H, W = x.shape[-2:]
    out = np.zeros((4,) + x.shape[:-2] + (H // 2, W // 2))
    for i in range(H // 2):
        for j in range(W // 2):
            a, b = x[..., 2 * i, 2 * j], x[..., 2 * i, 2 * j + 1]
            c, d = x[..., 2 * i + 1, 2 * j], x[..., 2 * i + 1, 2 * j + 1]
            out[0][..., i, j] = (a + b + c + d) / 2
            out[1][..., i, j] = (a + b - c - d) / 2
            out[2][..., i, j] = (a - b + c - d) / 2
            out[3][..., i, j] = (a - b - c + d) / 2
    return out


def test_hand_example():
    c = dwt2_haar(Tensor([[1.0, 2.0], [3.0, 4.0]]))
    assert [float(t.data[0, 0]) for t in c] == [5.0, -2.0, -1.0, 0.0]


def test_matches_block_oracle():
    x = np.random.default_rng(0).normal(size=(3, 6, 8))
    c = dwt2_haar(Tensor(x))
    np.testing.assert_allclose(np.stack([t.data for t in c]), haar_oracle(x), atol=1e-14)


def test_constant_image_has_no_detail():
    c = dwt2_haar(Tensor(np.full((2, 4, 4), 0.3)))
    for band in (c.lh, c.hl, c.hh):
        assert np.abs(band.data).max() == 0.0
    np.testing.assert_allclose(c.ll.data, 0.6)


@pytest.mark.parametrize("shape", [(3, 5), (4, 7), (1, 3, 4)])
def test_odd_dims_rejected(shape):
    with pytest.raises(ShapeError):
        dwt2_haar(Tensor(np.ones(shape)))


def test_idwt_shape_mismatch():
    z = Tensor(np.zeros((2, 2)))
    with pytest.raises(ShapeError):
        idwt2_haar(WaveletCoeffs(z, z, z, Tensor(np.zeros((2, 3)))))


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**31))
def test_perfect_reconstruction_and_parseval(h, w, seed):
    x = np.random.default_rng(seed).normal(size=(2, 2 * h, 2 * w))
    c = dwt2_haar(Tensor(x))
    assert np.abs(idwt2_haar(c).data - x).max() <= 1e-12
    energy = sum(float((t.data**2).sum()) for t in c)
    assert abs(energy - float((x**2).sum())) <= 1e-10 * max(1.0, float((x**2).sum()))


def test_float32_reconstruction():
    x = np.random.default_rng(1).normal(size=(4, 8, 8)).astype(np.float32)
    y = idwt2_haar(dwt2_haar(Tensor(x))).data
    assert y.dtype == np.float32
    assert np.abs(y - x).max() <= 1e-5


def test_gradients():
    x = Tensor(np.random.default_rng(2).normal(size=(2, 4, 6)))
    proj = np.random.default_rng(3).normal(size=(2, 4, 6))
    assert grad_check(lambda t: (idwt2_haar(dwt2_haar(t)) * Tensor(proj)).sum(), x) <= 1e-6
    assert grad_check(lambda t: (dwt2_haar(t).hh ** 2).sum(), x) <= 1e-6


class TestAttention:
    def test_zero_branch_is_identity(self):
        x = np.random.default_rng(0).normal(size=(4, 6, 8))
        y = wavelet_attention(Tensor(x), WAParams.zeros(4)).data
        assert np.abs(y - x).max() <= 1e-12

    def test_shape_preserved(self):
        rng = np.random.default_rng(1)
        p = WAParams.init(rng, 3, hidden=5)
        assert wavelet_attention(Tensor(rng.normal(size=(3, 8, 4))), p).shape == (3, 8, 4)

    def test_rejects_batched_input(self):
        with pytest.raises(ShapeError):
            wavelet_attention(Tensor(np.ones((1, 2, 4, 4))), WAParams.zeros(2))

    def test_matches_explicit_formula(self):
        rng = np.random.default_rng(2)
        C, H, W = 2, 4, 6
        p = WAParams.init(rng, C, expand_scale=1.0)
        for t in p.parameters():
            t.data[...] = rng.normal(size=t.shape)
        x = rng.normal(size=(C, H, W))
        coeffs = haar_oracle(x)  # [4, C, H/2, W/2]
        cat = coeffs.reshape(4 * C, -1)
        z = p.reduce_w.data @ cat + p.reduce_b.data[:, None]
        s = 1.0 / (1.0 + np.exp(-(p.gate_w.data @ z.mean(axis=1) + p.gate_b.data)))
        zo = p.expand_w.data @ (z * s[:, None]) + p.expand_b.data[:, None]
        out = idwt2_haar(WaveletCoeffs(*[Tensor(b) for b in (zo.reshape(coeffs.shape) + coeffs)])).data
        np.testing.assert_allclose(wavelet_attention(Tensor(x), p).data, out, atol=1e-12)

    def test_gradients(self):
        rng = np.random.default_rng(3)
        p = WAParams.init(rng, 2, expand_scale=1.0)
        x = Tensor(rng.normal(size=(2, 4, 4)))
        fn = lambda x, *ps: (wavelet_attention(x, WAParams(*ps)) ** 2).sum()  # noqa: E731
        assert grad_check(fn, [x, *p.parameters()]) <= 1e-4


class TestHfPsnr:
    def test_identical_is_capped(self):
        x = np.random.default_rng(0).uniform(size=(3, 8, 8))
        assert hf_psnr(x, x) == PSNR_CAP

    def test_ignores_low_band_offsets(self):
        x = np.random.default_rng(1).uniform(size=(3, 8, 8))
        assert hf_psnr(x + 0.1, x) == PSNR_CAP

    def test_closed_form(self):
        # one detail coefficient of size 0.5 among 3*4*4 detail values
        a = np.zeros((1, 8, 8))
        a[0, 0, 0], a[0, 0, 1], a[0, 1, 0], a[0, 1, 1] = 0.25, -0.25, 0.25, -0.25
        mse = 0.25 / 48
        assert hf_psnr(a, np.zeros_like(a)) == pytest.approx(10 * np.log10(1 / mse), abs=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            hf_psnr(np.zeros((3, 4, 4)), np.zeros((3, 4, 6)))
