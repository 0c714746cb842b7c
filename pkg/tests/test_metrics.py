import math

import numpy as np
import pytest

from dualitm.color import ColorSpace, Frame
from dualitm.metrics import (
    MS_SSIM_MIN,
    MetricReport,
    delta_e_itp,
    delta_e_itp_map,
    ms_ssim,
    psnr,
    reports_to_csv,
    reports_to_markdown,
    ssim,
    temporal_std_delta_e,
)
from dualitm.tensor import ContractError, ShapeError
from dualitm.wavelet import PSNR_CAP


def hdr(px):
    return Frame(np.asarray(px, dtype=np.float64), ColorSpace.HDR_BT2020_PQ)


rng = np.random.default_rng(0)
A = rng.uniform(size=(3, 32, 32))
B = np.clip(A + rng.normal(0, 0.05, size=A.shape), 0, 1)


class TestPsnr:
    def test_closed_form(self):
        assert psnr(np.zeros((3, 4, 4)), np.full((3, 4, 4), 0.1)) == pytest.approx(20.0, abs=1e-12)

    def test_identity_capped(self):
        assert psnr(A, A) == PSNR_CAP

    def test_symmetric(self):
        assert psnr(A, B) == psnr(B, A)

    def test_peak(self):
        assert psnr(A * 255, B * 255, peak=255) == pytest.approx(psnr(A, B), abs=1e-9)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            psnr(np.zeros((3, 4, 4)), np.zeros((3, 4, 5)))


class TestSsim:
    def test_identity(self):
        assert ssim(A, A) == 1.0

    def test_symmetric_and_bounded(self):
        s = ssim(A, B)
        assert s == pytest.approx(ssim(B, A), abs=1e-12)
        assert -1.0 <= s < 1.0

    def test_more_noise_lower(self):
        C = np.clip(A + rng.normal(0, 0.2, size=A.shape), 0, 1)
        assert ssim(A, C) < ssim(A, B)

    def test_constant_images_closed_form(self):
        # no structure: SSIM reduces to the luminance term (2ab + c1) / (a^2 + b^2 + c1)
        c1 = (0.01) ** 2
        a, b = 0.2, 0.6
        expect = (2 * a * b + c1) / (a * a + b * b + c1)
        assert ssim(np.full((1, 16, 16), a), np.full((1, 16, 16), b)) == pytest.approx(expect, rel=1e-9)

    def test_too_small(self):
        with pytest.raises(ContractError):
            ssim(np.zeros((3, 8, 8)), np.zeros((3, 8, 8)))


class TestMsSsim:
    big = rng.uniform(size=(1, MS_SSIM_MIN, MS_SSIM_MIN))

    def test_identity(self):
        assert ms_ssim(self.big, self.big) == 1.0

    def test_noise_lowers(self):
        noisy = np.clip(self.big + rng.normal(0, 0.1, size=self.big.shape), 0, 1)
        v = ms_ssim(self.big, noisy)
        assert 0.0 < v < 1.0
        assert v == pytest.approx(ms_ssim(noisy, self.big), abs=1e-12)

    def test_too_small(self):
        with pytest.raises(ContractError):
            ms_ssim(A, B)


class TestDeltaE:
    def test_identity_zero(self):
        assert delta_e_itp(hdr(A), hdr(A)) == 0.0

    def test_symmetric(self):
        assert delta_e_itp(hdr(A), hdr(B)) == pytest.approx(delta_e_itp(hdr(B), hdr(A)), abs=1e-12)

    def test_grey_intensity_only(self):
        from dualitm.color import linear2020_to_itp, pq_eotf

        a, b = np.full((3, 1, 1), 0.4), np.full((3, 1, 1), 0.5)
        ia = linear2020_to_itp(pq_eotf(a))[0, 0, 0]
        ib = linear2020_to_itp(pq_eotf(b))[0, 0, 0]
        assert delta_e_itp(hdr(a), hdr(b)) == pytest.approx(720 * abs(ia - ib), rel=1e-12)

    def test_map_shape(self):
        assert delta_e_itp_map(hdr(A), hdr(B)).shape == (32, 32)

    def test_space_mismatch(self):
        with pytest.raises(ContractError):
            delta_e_itp(hdr(A), Frame(A, ColorSpace.SDR_BT709))

    def test_untagged(self):
        with pytest.raises(ContractError):
            delta_e_itp(A, B)

    def test_temporal_std(self):
        ref = [hdr(A)] * 3
        assert temporal_std_delta_e(ref, ref) == 0.0
        vals = [delta_e_itp(hdr(x), hdr(A)) for x in (A, B, A)]
        assert temporal_std_delta_e([hdr(A), hdr(B), hdr(A)], ref) == pytest.approx(np.std(vals))
        with pytest.raises(ContractError):
            temporal_std_delta_e(ref[:2], ref)


class TestReports:
    def reports(self):
        r1, r2, r3 = MetricReport("a", 27), MetricReport("b", 37), MetricReport("c", 37)
        r1.add("psnr", 30.0)
        r2.add("psnr", 20.0)
        r3.add("psnr", 22.0)
        r3.add("psnr", 24.0)
        return [r1, r2, r3]

    def test_mean(self):
        assert self.reports()[2].mean("psnr") == 23.0

    def test_csv(self):
        text = reports_to_csv(self.reports())
        assert text.splitlines() == [
            "clip,frame,metric,value",
            "a,0,psnr,30.000000",
            "b,0,psnr,20.000000",
            "c,0,psnr,22.000000",
            "c,1,psnr,24.000000",
        ]

    def test_csv_stable(self):
        assert reports_to_csv(self.reports()) == reports_to_csv(self.reports())

    def test_markdown(self):
        lines = reports_to_markdown(self.reports()).splitlines()
        assert lines[0] == "| Metric | QP=27 | QP=37 | Mean |"
        assert lines[1] == "|---|---|---|---|"
        assert lines[2] == "| psnr | 30.0000 | 22.0000 | 24.0000 |"

    def test_markdown_without_qp(self):
        r = MetricReport("x")
        r.add("ssim", 0.5)
        assert reports_to_markdown([r]).splitlines() == ["| Metric | Mean |", "|---|---|", "| ssim | 0.5000 |"]


def test_psnr_matches_log_formula():
    mse = float(np.mean((A - B) ** 2))
    assert psnr(A, B) == pytest.approx(10 * math.log10(1 / mse), abs=1e-12)
