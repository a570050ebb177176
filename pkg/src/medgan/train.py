"""Adversarial training loop and checkpoint evaluation."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt_io
from .config import ConfigError, TrainConfig
from .dataset import DatasetError, PairedSample, load_dataset, read_manifest
from .losses import adv_loss_d, generator_output_loss
from .metrics import MetricRow, aggregate_report, all_metrics
from .networks import CasNet, FixedExtractor, PatchDiscriminator
from .optim import AdamState, NonFiniteGradient, adam_step
from .prng import Prng, derive_seed

log = logging.getLogger(__name__)

LOG_COLUMNS = ("step", "L_D", "L_G_adv", "L_percep", "L_style", "total_G", "wall_time")
# config fields that name files rather than describe the model
_PATH_FIELDS = ("data", "checkpoint", "log")


class TrainingAborted(FloatingPointError):
    pass


class IsolationError(AssertionError):
    pass


def to_network(images) -> np.ndarray:
    """[0, 1] images ``[n, h, w]`` -> float32 network tensors in [-1, 1]."""
    a = np.asarray(images, dtype=np.float64)
    return (2.0 * a - 1.0).astype(np.float32)[..., None]


def from_network(t) -> np.ndarray:
    return np.clip((np.asarray(t, dtype=np.float64)[..., 0] + 1.0) / 2.0, 0.0, 1.0)


def seeds_for(config: TrainConfig) -> dict:
    return {
        "seed": config.seed,
        "generator": derive_seed(config.seed, 1),
        "discriminator": derive_seed(config.seed, 2),
        "data_order": derive_seed(config.seed, 3),
    }


@dataclass
class TrainResult:
    checkpoint: ckpt_io.Checkpoint
    log_rows: list
    steps: int
    # per epoch: {region: number of samples delivered}
    epoch_visits: list = field(default_factory=list)


class Trainer:
    def __init__(self, config: TrainConfig):
        self.config = config
        self.weights = config.loss_weights()
        self.casnet = CasNet(config.casnet_spec())
        self.disc = PatchDiscriminator(config.disc_spec()) if config.uses_discriminator else None
        self.extractor = FixedExtractor(config.extractor_spec()) if any(self.weights.style) else None
        self.seeds = seeds_for(config)
        self.g_params = self.casnet.init_params(self.seeds["generator"])
        self.d_params = self.disc.init_params(self.seeds["discriminator"]) if self.disc else None
        opt = dict(lr=config.lr, beta1=config.beta1, beta2=config.beta2, eps=config.adam_eps)
        self.g_opt = [AdamState(**opt) for _ in self.g_params]
        self.d_opt = AdamState(**opt)
        self.step = 0

    # -- state ---------------------------------------------------------------

    def stores(self) -> dict:
        out = {f"G{i}": p for i, p in enumerate(self.g_params)}
        if self.d_params is not None:
            out["D"] = self.d_params
        return out

    def metadata(self) -> dict:
        cfg = {k: v for k, v in self.config.to_dict().items() if k not in _PATH_FIELDS}
        return {"format": "medgan-checkpoint", "config": cfg, "step": self.step, "seeds": self.seeds}

    def checkpoint(self) -> ckpt_io.Checkpoint:
        # via the byte form, so the in-memory result equals what load() returns
        return ckpt_io.decode(ckpt_io.encode(self.metadata(), self.stores()))

    def _g_digest(self):
        return [p.digest() for p in self.g_params]

    # -- one optimization step ---------------------------------------------

    def train_step(self, y, x) -> dict:
        cfg = self.config
        x_hat, _, g_tapes = self.casnet.forward(self.g_params, y, training=True)
        loss_d = 0.0

        if self.disc is not None:
            g_before = self._g_digest() if cfg.check_isolation else None
            for _ in range(cfg.d_steps):
                loss_d = self._discriminator_update(x_hat, y, x)
            if cfg.check_isolation and self._g_digest() != g_before:
                raise IsolationError("discriminator update modified generator parameters")

        d_before = self.d_params.digest() if (cfg.check_isolation and self.d_params is not None) else None
        terms = generator_output_loss(x_hat, y, x, self.disc, self.d_params, self.extractor, self.weights)
        values = (loss_d, terms.adv, terms.percep, terms.style, terms.total)
        if not all(math.isfinite(v) for v in values):
            raise TrainingAborted(f"non-finite loss at step {self.step + 1}: {values}")
        _, g_grads = self.casnet.backward(self.g_params, g_tapes, terms.grad_output)
        try:
            for params, grads, state in zip(self.g_params, g_grads, self.g_opt):
                adam_step(params, grads, state)
        except NonFiniteGradient as e:
            raise TrainingAborted(f"step {self.step + 1}: {e}") from None
        for params, tape in zip(self.g_params, g_tapes):
            params.update(tape.stats)
        if d_before is not None and self.d_params.digest() != d_before:
            raise IsolationError("generator update modified discriminator parameters")

        self.step += 1
        return {"step": self.step, "L_D": loss_d, "L_G_adv": terms.adv, "L_percep": terms.percep,
                "L_style": terms.style, "total_G": terms.total}

    def _discriminator_update(self, x_hat, y, x) -> float:
        # x_hat is a plain array here, so nothing flows back into the generator
        logits_r, _, tape_r = self.disc.forward(self.d_params, x, y, training=True)
        self.d_params.update(tape_r.stats)
        logits_f, _, tape_f = self.disc.forward(self.d_params, x_hat, y, training=True)
        loss, g_r, g_f = adv_loss_d(logits_r, logits_f)
        if not math.isfinite(loss):
            raise TrainingAborted(f"non-finite discriminator loss at step {self.step + 1}")
        _, _, grads_r = self.disc.backward(self.d_params, tape_r, g_r)
        _, _, grads_f = self.disc.backward(self.d_params, tape_f, g_f)
        grads = {k: grads_r[k] + grads_f[k] for k in grads_r}
        try:
            adam_step(self.d_params, grads, self.d_opt)
        except NonFiniteGradient as e:
            raise TrainingAborted(f"step {self.step + 1}: {e}") from None
        self.d_params.update(tape_f.stats)
        return loss


def _select(samples, regions) -> list[PairedSample]:
    chosen = [s for s in samples if s.region in set(regions)]
    if not chosen:
        raise DatasetError(f"no training samples for regions {list(regions)}")
    return chosen


def train(config: TrainConfig, samples: list[PairedSample] | None = None, *,
          checkpoint_path=None, log_path=None) -> TrainResult:
    """Run alternating D/G updates and write the final checkpoint.

    Data order: every epoch is a fresh Fisher-Yates permutation of the
    selected training samples from one PRNG stream, so each sample is seen
    exactly once per epoch; the last batch of an epoch may be short.
    """
    if samples is None:
        if not config.data:
            raise ConfigError("no dataset given (set 'data' or pass samples)")
        manifest = read_manifest(config.data)
        if manifest["size"] != config.image_size:
            raise ConfigError(f"dataset image size {manifest['size']} != config image_size {config.image_size}")
        samples = load_dataset(config.data, split="train")
    samples = _select(samples, config.regions)
    if samples[0].clean.shape != (config.image_size, config.image_size):
        raise ConfigError(f"sample shape {samples[0].clean.shape} != config image_size {config.image_size}")

    checkpoint_path = checkpoint_path or config.checkpoint
    log_path = log_path or config.log
    trainer = Trainer(config)
    order_rng = Prng(trainer.seeds["data_order"])
    clean = to_network([s.clean for s in samples])
    corrupted = to_network([s.corrupted for s in samples])
    regions = [s.region for s in samples]

    per_epoch = math.ceil(len(samples) / config.batch_size)
    total = min(config.max_steps, config.epochs * per_epoch)
    rows, visits = [], []
    log_file = writer = None
    if log_path:
        Path(log_path).parent.mkdir(parents=True, exist_ok=True)
        log_file = open(log_path, "w", newline="")
        writer = csv.writer(log_file)
        writer.writerow(LOG_COLUMNS)
    t0 = time.perf_counter()
    try:
        while trainer.step < total:
            order = order_rng.permutation(len(samples))
            seen: dict = {}
            for start in range(0, len(order), config.batch_size):
                if trainer.step >= total:
                    break
                idx = order[start:start + config.batch_size]
                for i in idx:
                    seen[regions[i]] = seen.get(regions[i], 0) + 1
                row = trainer.train_step(corrupted[idx], clean[idx])
                row["wall_time"] = time.perf_counter() - t0
                rows.append(row)
                if writer:
                    writer.writerow([row["step"]] + [repr(float(row[c])) for c in LOG_COLUMNS[1:-1]]
                                    + [f"{row['wall_time']:.3f}"])
                    log_file.flush()
                if checkpoint_path and config.checkpoint_every and trainer.step % config.checkpoint_every == 0:
                    ckpt_io.save(checkpoint_path, trainer.metadata(), trainer.stores())
                if trainer.step % 100 == 0:
                    log.info("step %d/%d total_G=%.4f L_D=%.4f", trainer.step, total, row["total_G"], row["L_D"])
            visits.append(seen)
    finally:
        if log_file:
            log_file.close()

    if checkpoint_path:
        ckpt_io.save(checkpoint_path, trainer.metadata(), trainer.stores())
    return TrainResult(trainer.checkpoint(), rows, trainer.step, visits)


# ---------------------------------------------------------------------------
# evaluation


def correct_images(images, checkpoint: ckpt_io.Checkpoint, batch_size: int = 8) -> np.ndarray:
    """Run the generator cascade in eval mode on [0, 1] images ``[n, h, w]``."""
    config = TrainConfig.from_dict(checkpoint.metadata["config"])
    casnet = CasNet(config.casnet_spec())
    g = checkpoint.generator
    out = []
    for s in range(0, len(images), batch_size):
        t = to_network(images[s:s + batch_size])
        y, _, _ = casnet.forward(g, t, training=False)
        out.append(from_network(y))
    return np.concatenate(out, axis=0)


def evaluate(checkpoint, data_dir, split: str = "val", *, bypass: bool = False, regions=None):
    """Metric report for a checkpoint on one split.

    Rows are emitted for the checkpoint's method and for the uncorrected
    input ("no correction"). ``bypass`` substitutes the identity for the
    generator, which must reproduce the "no correction" numbers exactly.
    """
    if not isinstance(checkpoint, ckpt_io.Checkpoint):
        checkpoint = ckpt_io.load(checkpoint)
    config = TrainConfig.from_dict(checkpoint.metadata["config"])
    manifest = read_manifest(data_dir)
    if manifest["size"] != config.image_size:
        raise ConfigError(
            f"checkpoint image_size {config.image_size} does not match dataset size {manifest['size']}"
        )
    samples = load_dataset(data_dir, split=split, regions=regions or config.regions)
    if not samples:
        raise DatasetError(f"split {split!r} has no samples for regions {list(regions or config.regions)}")
    corrupted = np.stack([s.corrupted for s in samples])
    corrected = corrupted if bypass else correct_images(corrupted, checkpoint)
    method = config.method_label
    rows = []
    for s, out in zip(samples, corrected):
        rows.append(MetricRow(id=str(s.id), region=s.region, method=method, **all_metrics(s.clean, out)))
    for s in samples:
        rows.append(MetricRow(id=str(s.id), region=s.region, method="no correction",
                              **all_metrics(s.clean, s.corrupted)))
    return aggregate_report(rows)
