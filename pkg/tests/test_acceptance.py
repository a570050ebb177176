"""Acceptance criteria 1-8, one test each.

Each test prints a single ``PASS``/``FAIL`` line; the lines are repeated in
the pytest terminal summary. Run standalone with
``python tests/test_acceptance.py [workdir]`` to get the same lines without
pytest. The desk experiment (criteria 5 and 6) trains ten models and takes
roughly 20 minutes on one CPU core.
"""

from __future__ import annotations

import functools
import math
import sys
import tempfile
import time
from pathlib import Path

import numpy as np
import pytest

from medgan import checkpoint as ck
from medgan import verify
from medgan.config import TrainConfig
from medgan.dataset import DatasetConfig, build_dataset, load_dataset, plan_dataset, synthesize_pair
from medgan.experiment import DESK_DATA, ExperimentSummary, ensure_dataset, run_one
from medgan.losses import LossWeights, adv_loss_g, generator_output_loss, mae, perceptual_loss, style_loss
from medgan.metrics import all_metrics
from medgan.networks import FixedExtractor, PatchDiscriminator
from medgan.synth import MotionParams, corrupt_nonrigid, corrupt_rigid, fft2, gen_phantom, ifft2
from medgan.train import Trainer, to_network

RESULTS: dict[int, str] = {}
SEEDS = (1, 2, 3)
MAX_STEPS = 2000
WALL_LIMIT_S = 30 * 60
MIN_GAIN = 0.05


def criterion(number: int, title: str):
    """Record one PASS/FAIL line per criterion, including on unexpected errors."""

    def wrap(fn):
        @functools.wraps(fn)
        def run(*args, **kwargs):
            try:
                ok, detail = fn(*args, **kwargs)
            except Exception as e:  # reported, then re-raised so pytest shows the traceback
                RESULTS[number] = f"FAIL criterion {number} ({title}): {type(e).__name__}: {e}"
                print(RESULTS[number])
                raise
            RESULTS[number] = f"{'PASS' if ok else 'FAIL'} criterion {number} ({title}): {detail}"
            print(RESULTS[number])
            assert ok, RESULTS[number]

        return run

    return wrap


# ---------------------------------------------------------------------------
# 1-4: numerical properties


@criterion(1, "finite-difference gradient suite")
def test_gradient_suite():
    t0 = time.perf_counter()
    results = verify.gradient_suite()
    elapsed = time.perf_counter() - t0
    for r in results:
        print("   ", r.line())
    failed = [r.name for r in results if not r.passed]
    worst = max(results, key=lambda r: r.value / r.tol)
    ok = not failed and elapsed < 120
    return ok, (f"{len(results) - len(failed)}/{len(results)} checks, worst {worst.name} "
                f"{worst.value:.2e} (tol {worst.tol:.0e}), {elapsed:.1f}s (limit 120s)")


@criterion(2, "oracle equivalence")
def test_oracle_suite():
    results = verify.oracle_suite()
    for r in results:
        print("   ", r.line())
    failed = [r.name for r in results if not r.passed]
    return not failed, f"{len(results) - len(failed)}/{len(results)} oracle comparisons within tolerance"


@criterion(3, "identity suite")
def test_identity_suite():
    ext = FixedExtractor(dtype=np.float64)
    worst = dict(ssim=0.0, uqi=0.0, vif=0.0, fpd=0.0, percep=0.0, style=0.0)
    rng = np.random.default_rng(33)
    regions = ("head", "abdomen", "pelvis")
    for i in range(20):
        x = gen_phantom(regions[i % 3], 64, 1000 + i)
        if i % 2:
            x = np.clip(x + 0.05 * rng.normal(size=x.shape), 0, 1)
        m = all_metrics(x, x.copy())
        worst["ssim"] = max(worst["ssim"], abs(m["ssim"] - 1))
        worst["uqi"] = max(worst["uqi"], abs(m["uqi"] - 1))
        worst["vif"] = max(worst["vif"], abs(m["vif"] - 1))
        worst["fpd"] = max(worst["fpd"], m["fpd"])
        t = to_network([x]).astype(np.float64)
        stack = [t, rng.normal(size=(1, 32, 32, 16)), rng.normal(size=(1, 16, 16, 32)), rng.normal(size=(1, 8, 8, 64))]
        worst["percep"] = max(worst["percep"], perceptual_loss(stack, [s.copy() for s in stack], (20, 5, 5, 5))[0])
        worst["style"] = max(worst["style"], style_loss(t, t.copy(), ext, (10, 10, 10))[0])
    ok = (worst["ssim"] < 1e-9 and worst["uqi"] < 1e-10 and worst["vif"] < 1e-6
          and worst["fpd"] == 0 and worst["percep"] == 0 and worst["style"] == 0)
    return ok, "20 (x, x) pairs; worst deviations " + ", ".join(f"{k} {v:.1e}" for k, v in worst.items())


@criterion(4, "simulator identity")
def test_simulator_identity():
    zero = MotionParams(max_translation=0, max_rotation=0, amplitude=0, seed=5)
    rigid = nonrigid = fft32 = parseval = 0.0
    for i, region in enumerate(("head", "abdomen", "pelvis") * 3):
        size = (64, 128, 256)[i // 3]
        x = gen_phantom(region, size, i)
        rigid = max(rigid, float(np.max(np.abs(corrupt_rigid(x, zero) - x))))
        nonrigid = max(nonrigid, float(np.max(np.abs(corrupt_nonrigid(x, zero) - x))))
        x32 = x.astype(np.float32)
        back = ifft2(fft2(x32).astype(np.complex64)).real.astype(np.float32)
        fft32 = max(fft32, float(np.max(np.abs(back - x32))))
        parseval = max(parseval, abs(float(np.sum(np.abs(fft2(x)) ** 2) / np.sum(x * x)) - 1))
    ok = rigid <= 1e-6 and nonrigid <= 1e-6 and fft32 <= 1e-6 and parseval <= 1e-5
    return ok, (f"rigid {rigid:.1e}, non-rigid {nonrigid:.1e}, 32-bit FFT round trip {fft32:.1e} (limits 1e-6); "
                f"Parseval {parseval:.1e} (limit 1e-5)")


# ---------------------------------------------------------------------------
# 5-6: desk experiment


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    return tmp_path_factory.mktemp("desk")


@pytest.fixture(scope="module")
def desk(workdir):
    t0 = time.perf_counter()
    data = ensure_dataset(workdir / "data", DESK_DATA)
    synth_s = time.perf_counter() - t0
    summary = ExperimentSummary()
    for mode in ("medgan", "pixel", "pix2pix"):
        for seed in SEEDS:
            summary.runs.append(run_one(data, workdir / "runs", mode, seed, MAX_STEPS))
    return data, summary, synth_s


@criterion(5, "desk-scale correction experiment")
def test_desk_experiment(desk):
    data, summary, synth_s = desk
    print(summary.table())
    med = summary.by_mode("medgan")
    gain = summary.median_improvement("medgan")
    wall = synth_s + sum(r.seconds for r in med)
    means = {m: np.mean([r.corrected_ssim for r in summary.by_mode(m)]) for m in ("medgan", "pixel", "pix2pix")}
    order = "holds" if means["medgan"] >= max(means["pixel"], means["pix2pix"]) else "does not hold"
    print(f"    mean val SSIM over seeds: medgan {means['medgan']:.4f}, pixel {means['pixel']:.4f}, "
          f"pix2pix {means['pix2pix']:.4f}; MedGAN >= baselines {order} (reported, not gating)")
    ok = gain >= MIN_GAIN and wall <= WALL_LIMIT_S and all(r.checkpoint.exists() for r in med)
    per_seed = ", ".join(f"s{r.seed} {r.improvement:+.4f}" for r in med)
    return ok, (f"median SSIM gain {gain:+.4f} (need >= {MIN_GAIN}; {per_seed}) at {MAX_STEPS} steps, "
                f"medgan wall time {wall:.0f}s (limit {WALL_LIMIT_S}s)")


@criterion(6, "determinism")
def test_determinism(desk, workdir):
    data, summary, _ = desk
    first = next(r for r in summary.by_mode("medgan") if r.seed == 1)
    second = run_one(data, workdir / "rerun", "medgan", 1, MAX_STEPS)
    same = {
        "checkpoint": first.checkpoint.read_bytes() == second.checkpoint.read_bytes(),
        "report csv": first.report_csv.read_bytes() == second.report_csv.read_bytes(),
        "rows csv": first.rows_csv.read_bytes() == second.rows_csv.read_bytes(),
        "training log": _log_without_time(first.checkpoint) == _log_without_time(second.checkpoint),
    }
    return all(same.values()), ", ".join(f"{k} {'identical' if v else 'DIFFERS'}" for k, v in same.items())


def _log_without_time(checkpoint_path: Path) -> list:
    lines = Path(str(checkpoint_path).replace(".mgck", ".log.csv")).read_text().splitlines()
    return [line.rsplit(",", 1)[0] for line in lines]


# ---------------------------------------------------------------------------
# 7-8: formats and collapses


@criterion(7, "format round trips")
def test_format_round_trips(tmp_path):
    cfg = DatasetConfig(size=64, seed=77, n_train=9, n_val=3)
    build_dataset(cfg, tmp_path / "d")
    loaded = load_dataset(tmp_path / "d")
    img_err = 0.0
    for entry, sample in zip(plan_dataset(cfg), loaded):
        clean, corrupted = synthesize_pair(entry, cfg.size, cfg.motion)
        img_err = max(img_err, float(np.max(np.abs(sample.clean - clean))),
                      float(np.max(np.abs(sample.corrupted - corrupted))))
    trainer = Trainer(TrainConfig(depth=2, base_channels=4, channel_cap=8, disc_channels=(4, 8, 8)))
    y, x = to_network([s.corrupted for s in loaded[:4]]), to_network([s.clean for s in loaded[:4]])
    trainer.train_step(y, x)
    ck.save(tmp_path / "m.mgck", trainer.metadata(), trainer.stores())
    back = ck.load(tmp_path / "m.mgck")
    tensors_equal = all(back.stores[s][k].tobytes() == v.tobytes()
                        for s, store in trainer.stores().items() for k, v in store.items())
    bytes_equal = ck.encode(back.metadata, back.stores) == (tmp_path / "m.mgck").read_bytes()
    ok = len(loaded) == 12 and img_err <= 1.6e-5 and tensors_equal and bytes_equal
    return ok, (f"12 PGM pairs max error {img_err:.2e} (limit 1.6e-5); checkpoint tensors "
                f"{'bit-exact' if tensors_equal else 'DIFFER'}, re-encoded bytes {'identical' if bytes_equal else 'DIFFER'}")


@criterion(8, "mode collapse identities")
def test_mode_collapses():
    rng = np.random.default_rng(8)
    y = rng.uniform(-1, 1, (4, 64, 64, 1)).astype(np.float32)
    x = rng.uniform(-1, 1, (4, 64, 64, 1)).astype(np.float32)
    checks = {}

    pixel = Trainer(TrainConfig(mode="pixel", seed=3))
    x_hat, _, _ = pixel.casnet.forward(pixel.g_params, y, training=True)
    t = generator_output_loss(x_hat, y, x, None, None, None, pixel.weights)
    checks["pixel total == MAE"] = t.total == mae(x_hat, x)
    row = pixel.train_step(y, x)
    checks["pixel log: L_D == L_style == 0, total == L1"] = (row["L_D"] == 0.0 and row["L_style"] == 0.0
                                                           and row["total_G"] == row["L_percep"])

    med = Trainer(TrainConfig(mode="medgan", seed=3))
    x_hat, _, _ = med.casnet.forward(med.g_params, y, training=True)
    disc, d = med.disc, med.d_params
    adv_only = LossWeights(adv=2.0, percep=(0, 0, 0, 0), style=(0, 0, 0))
    logits, _, _ = disc.forward(d, x_hat, y, training=True)
    checks["lambda_p = lambda_s = 0 -> total == lambda_adv * adv"] = (
        generator_output_loss(x_hat, y, x, disc, d, med.extractor, adv_only).total == 2.0 * adv_loss_g(logits)[0])
    l1_only = LossWeights(adv=0.0, percep=(1, 0, 0, 0), style=(0, 0, 0))
    checks["lambda_adv = lambda_s = 0, lambda_p = e0 -> total == MAE"] = (
        generator_output_loss(x_hat, y, x, disc, d, med.extractor, l1_only).total == mae(x_hat, x))
    p2p = TrainConfig(mode="pix2pix", pix2pix_l1=100.0).loss_weights()
    as_medgan = TrainConfig(weights={"adv": 1.0, "percep": [100, 0, 0, 0], "style": [0, 0, 0]}).loss_weights()
    a = generator_output_loss(x_hat, y, x, disc, d, med.extractor, p2p)
    b = generator_output_loss(x_hat, y, x, disc, d, med.extractor, as_medgan)
    checks["pix2pix == medgan with the same weights"] = (a.total == b.total
                                                        and np.array_equal(a.grad_output, b.grad_output))
    failed = [k for k, v in checks.items() if not v]
    return not failed, f"{len(checks) - len(failed)}/{len(checks)} bit-equal" + (f"; failed: {failed}" if failed else "")


if __name__ == "__main__":
    work = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="medgan-accept-"))
    data = ensure_dataset(work / "data", DESK_DATA)
    summary = ExperimentSummary()
    t0 = time.perf_counter()
    for mode in ("medgan", "pixel", "pix2pix"):
        for seed in SEEDS:
            summary.runs.append(run_one(data, work / "runs", mode, seed, MAX_STEPS))
    desk_result = (data, summary, time.perf_counter() - t0 - sum(r.seconds for r in summary.runs))
    steps = [
        (test_gradient_suite, ()), (test_oracle_suite, ()), (test_identity_suite, ()), (test_simulator_identity, ()),
        (test_desk_experiment, (desk_result,)), (test_determinism, (desk_result, work)),
        (test_format_round_trips, (Path(tempfile.mkdtemp()),)), (test_mode_collapses, ()),
    ]
    for fn, args in steps:
        try:
            fn(*args)
        except Exception:
            pass
    print("\n".join(RESULTS[k] for k in sorted(RESULTS)))
    sys.exit(0 if all(v.startswith("PASS") for v in RESULTS.values()) else 1)
