"""Training configuration and its JSON form.

Every field is optional in JSON; unknown keys are rejected so that typos do
not silently fall back to defaults.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .losses import LossWeights
from .networks import CasNetSpec, FixedExtractorSpec, PatchDiscSpec, UNetSpec
from .synth import PhantomClass

MODES = ("pixel", "pix2pix", "medgan")
ALL_REGIONS = tuple(r.value for r in PhantomClass)


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    mode: str = "medgan"
    regions: tuple = ALL_REGIONS
    epochs: int = 40
    max_steps: int = 2000
    batch_size: int = 4
    seed: int = 1
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    adam_eps: float = 1e-8
    d_steps: int = 1
    weights: dict = field(default_factory=lambda: {"adv": 1.0, "percep": [20.0, 5.0, 5.0, 5.0],
                                                   "style": [10.0, 10.0, 10.0]})
    pix2pix_l1: float = 100.0
    saturating: bool = False
    n_unets: int = 3
    depth: int = 4
    base_channels: int = 16
    channel_cap: int = 128
    disc_channels: tuple = (16, 32, 64)
    extractor_seed: int = 19
    image_size: int = 64
    data: str = ""
    checkpoint: str = "checkpoint.mgck"
    checkpoint_every: int = 500
    log: str = ""
    check_isolation: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if isinstance(self.regions, str):
            self.regions = tuple(r for r in self.regions.split(",") if r.strip())
        try:
            self.regions = tuple(PhantomClass.parse(r).value for r in self.regions)
        except ValueError as e:
            raise ConfigError(str(e)) from None
        if not self.regions:
            raise ConfigError("regions must not be empty")
        self.disc_channels = tuple(int(c) for c in self.disc_channels)
        for name in ("epochs", "max_steps", "checkpoint_every"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        for name in ("batch_size", "d_steps", "n_unets", "depth", "base_channels"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.image_size % (2 ** max(self.depth, len(self.disc_channels))):
            raise ConfigError(f"image_size {self.image_size} not divisible by the network downsampling factor")
        self.loss_weights()  # validates lengths

    # -- derived objects ---------------------------------------------------

    def unet_spec(self) -> UNetSpec:
        return UNetSpec(depth=self.depth, base_channels=self.base_channels, channel_cap=self.channel_cap)

    def casnet_spec(self) -> CasNetSpec:
        return CasNetSpec(n_unets=self.n_unets, unet=self.unet_spec())

    def disc_spec(self) -> PatchDiscSpec:
        return PatchDiscSpec(channels=self.disc_channels)

    def extractor_spec(self) -> FixedExtractorSpec:
        return FixedExtractorSpec(seed=self.extractor_seed)

    def loss_weights(self) -> LossWeights:
        """Effective weights for the configured mode.

        pixel: level-0 L1 only, weight 1. pix2pix: adversarial plus level-0 L1
        with weight ``pix2pix_l1``. medgan: the configured weights.
        """
        w = self.weights
        n_hidden = len(self.disc_channels)
        n_style = len(FixedExtractorSpec().channels)
        try:
            if self.mode == "pixel":
                lw = LossWeights(adv=0.0, percep=(1.0,) + (0.0,) * n_hidden, style=(0.0,) * n_style)
            elif self.mode == "pix2pix":
                lw = LossWeights(adv=float(w.get("adv", 1.0)), percep=(self.pix2pix_l1,) + (0.0,) * n_hidden,
                                 style=(0.0,) * n_style, saturating=self.saturating)
            else:
                lw = LossWeights(adv=float(w.get("adv", 1.0)), percep=tuple(w["percep"]), style=tuple(w["style"]),
                                 saturating=self.saturating)
            lw.check_depths(n_hidden, n_style)
        except (KeyError, ValueError) as e:
            raise ConfigError(f"invalid loss weights: {e}") from None
        return lw

    @property
    def uses_discriminator(self) -> bool:
        return self.mode != "pixel"

    @property
    def method_label(self) -> str:
        label = {"pixel": "pixel", "pix2pix": "pix2pix", "medgan": "MedGAN"}[self.mode]
        if self.mode == "medgan" and set(self.regions) == set(ALL_REGIONS):
            label += "-joint"
        return label

    # -- serialization -----------------------------------------------------

    def to_dict(self) -> dict:
        d = asdict(self)
        d["regions"] = list(self.regions)
        d["disc_channels"] = list(self.disc_channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        try:
            d = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"{path}: {e}") from None
        if not isinstance(d, dict):
            raise ConfigError(f"{path}: top level must be a JSON object")
        return cls.from_dict(d)

    def replace(self, **changes) -> "TrainConfig":
        return TrainConfig.from_dict({**self.to_dict(), **{k: v for k, v in changes.items() if v is not None}})
