import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from medgan import oracles
from medgan.metrics import (MetricRow, aggregate_report, all_metrics, fpd, rows_from_csv, ssim, ssim_map, uqi,
                            uqi_map, vif_min_size, vif_p)
from medgan.synth import gen_phantom

unit_images = arrays(np.float64, (16, 16), elements=st.floats(0, 1))


def _blur(x):
    k = np.array([1, 4, 6, 4, 1]) / 16
    p = np.pad(x, 2, mode="edge")
    rows = sum(k[i] * p[i:i + x.shape[0], :] for i in range(5))
    return sum(k[j] * rows[:, j:j + x.shape[1]] for j in range(5))


class TestSSIM:
    def test_identity(self, rng):
        x = rng.uniform(size=(32, 32))
        assert abs(ssim(x, x) - 1) < 1e-9

    def test_matches_direct_formula(self, rng):
        for _ in range(3):
            a, b = rng.uniform(size=(16, 16)), rng.uniform(size=(16, 16))
            assert abs(ssim(a, b) - oracles.ssim_loops(a, b)) < 1e-8

    @given(unit_images, unit_images)
    @settings(max_examples=40, deadline=None)
    def test_symmetric_and_bounded(self, a, b):
        s = ssim(a, b)
        assert abs(s - ssim(b, a)) < 1e-12
        assert -1 - 1e-12 <= s <= 1 + 1e-12

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="shapes differ"):
            ssim(np.zeros((16, 16)), np.zeros((16, 17)))


class TestUQI:
    def test_identity_non_constant(self, rng):
        x = rng.uniform(size=(16, 16))
        assert abs(uqi(x, x) - 1) < 1e-10

    def test_equals_constant_free_ssim(self, rng):
        a, b = rng.uniform(size=(20, 20)), rng.uniform(size=(20, 20))
        q, n_deg = uqi_map(a, b)
        s = ssim_map(a, b, window="uniform", size=8, c1=0.0, c2=0.0)
        assert n_deg == 0
        assert np.max(np.abs(q - s)) < 1e-10

    def test_matches_direct_formula(self, rng):
        a, b = rng.uniform(size=(16, 16)), rng.uniform(size=(16, 16))
        assert abs(uqi(a, b) - oracles.uqi_loops(a, b)) < 1e-8

    def test_degenerate_windows(self):
        flat = np.full((8, 8), 0.4)
        assert uqi_map(flat, flat) == (np.ones((1, 1)), 1)
        assert uqi(flat, np.full((8, 8), 0.6)) == 0.0
        ramp = np.tile(np.linspace(0, 1, 8), (8, 1))
        assert uqi(flat, ramp) == 0.0

    @given(unit_images, unit_images)
    @settings(max_examples=40, deadline=None)
    def test_symmetric_and_bounded(self, a, b):
        q = uqi(a, b)
        assert abs(q - uqi(b, a)) < 1e-12
        assert -1 - 1e-9 <= q <= 1 + 1e-9


class TestVIF:
    def test_identity(self):
        x = gen_phantom("head", 64, 1)
        assert abs(vif_p(x, x) - 1) < 1e-6

    def test_blur_lowers(self):
        x = gen_phantom("pelvis", 64, 2)
        assert vif_p(x, _blur(x)) < 1

    def test_noise_monotone(self):
        x = gen_phantom("head", 64, 3)
        lo, hi = [], []
        for s in range(10):
            n = np.random.default_rng(s).normal(size=x.shape)
            lo.append(vif_p(x, x + 0.01 * n))
            hi.append(vif_p(x, x + 0.05 * n))
        assert np.median(hi) < np.median(lo)

    def test_too_small_rejected(self):
        side = vif_min_size()
        vif_p(np.eye(side), np.eye(side))
        with pytest.raises(ValueError, match="too small"):
            vif_p(np.eye(side - 1), np.eye(side - 1))

    def test_non_negative(self, rng):
        x = gen_phantom("abdomen", 64, 4)
        assert vif_p(x, rng.uniform(size=x.shape)) >= 0


class TestFPD:
    def test_identity_zero(self, rng):
        x = rng.uniform(size=(64, 64))
        assert fpd(x, x) == 0.0

    def test_noise_monotone(self):
        x = gen_phantom("pelvis", 64, 5)
        by_sigma = {s: [] for s in (0.01, 0.05, 0.1)}
        for seed in range(10):
            n = np.random.default_rng(seed).normal(size=x.shape)
            for s in by_sigma:
                by_sigma[s].append(fpd(x, np.clip(x + s * n, 0, 1)))
        med = [np.median(v) for v in by_sigma.values()]
        assert 0 < med[0] < med[1] < med[2]


def test_identity_suite_on_phantoms():
    for seed in range(20):
        x = gen_phantom(["head", "abdomen", "pelvis"][seed % 3], 64, seed)
        m = all_metrics(x, x)
        assert abs(m["ssim"] - 1) < 1e-9 and abs(m["uqi"] - 1) < 1e-10
        assert abs(m["vif"] - 1) < 1e-6 and m["fpd"] == 0


class TestReport:
    def test_reference_row(self):
        report = aggregate_report([MetricRow("1", "head", ssim=0.8369, uqi=0.5821, vif=0.3664, fpd=0.2202)])
        lines = report.to_csv().splitlines()
        assert lines[0] == "method,region,metric,mean,std,n"
        assert lines[1:] == ["MedGAN,head,SSIM,0.8369,0,1", "MedGAN,head,VIF,0.3664,0,1",
                             "MedGAN,head,UQI,0.5821,0,1", "MedGAN,head,FPD,0.2202,0,1"]
        assert "FPD (LPIPS stand-in)" in report.to_table()

    def test_aggregates_match_brute_force(self, rng):
        rows = [MetricRow(str(i), ["head", "pelvis"][i % 2], *rng.uniform(size=4)) for i in range(100)]
        report = aggregate_report(rows)
        for region in ("head", "pelvis"):
            for m in ("ssim", "uqi", "vif", "fpd"):
                mean, std = oracles.mean_std([getattr(r, m) for r in rows if r.region == region])
                agg = report.get("MedGAN", region, m)
                assert abs(agg.mean - mean) < 1e-12 and abs(agg.std - std) < 1e-12 and agg.n == 50

    def test_rows_csv_round_trip(self, rng):
        rows = [MetricRow(str(i), "abdomen", *rng.uniform(size=4), method="pix2pix") for i in range(5)]
        back = rows_from_csv(aggregate_report(rows).rows_csv())
        assert back == rows

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            aggregate_report([])

    def test_non_finite_row_rejected(self):
        with pytest.raises(ValueError):
            MetricRow("1", "head", ssim=math.nan, uqi=0, vif=0, fpd=0)
