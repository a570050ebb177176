"""Paired clean/corrupted datasets on disk.

Layout of a dataset directory::

    manifest.json
    clean_000000.pgm    corrupt_000000.pgm
    clean_000001.pgm    ...

Images are binary PGM (``P5``), maxval 65535, big-endian 16-bit samples
holding ``round(value * 65535)`` for values in [0, 1].
"""

from __future__ import annotations

import json
import os
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .prng import derive_seed
from .synth import CORRUPTION_FOR, MotionParams, PhantomClass, corrupt, gen_phantom

MANIFEST = "manifest.json"
FORMAT = "medgan-paired"
FORMAT_VERSION = 1
SPLITS = ("train", "val")


class DatasetError(ValueError):
    pass


# ---------------------------------------------------------------------------
# PGM


def write_pgm(path, image) -> None:
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ValueError(f"PGM images must be 2-D, got shape {image.shape}")
    h, w = image.shape
    q = np.round(np.clip(image, 0.0, 1.0) * 65535.0).astype(">u2")
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        f.write(q.tobytes())


_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def read_pgm(path) -> np.ndarray:
    """Read a binary PGM into float64 values in [0, 1]."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise DatasetError(f"{path}: cannot read ({e.strerror})") from None
    pos = 0
    tokens = []
    for _ in range(4):
        m = _TOKEN.match(data, pos)
        if not m:
            raise DatasetError(f"{path}: truncated PGM header")
        tokens.append(m.group(1))
        pos = m.end()
    pos += 1  # single whitespace byte after maxval
    if tokens[0] != b"P5":
        raise DatasetError(f"{path}: not a binary PGM (magic {tokens[0]!r})")
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise DatasetError(f"{path}: malformed PGM header") from None
    if not 0 < maxval < 65536:
        raise DatasetError(f"{path}: invalid maxval {maxval}")
    dtype = ">u2" if maxval > 255 else "u1"
    need = w * h * np.dtype(dtype).itemsize
    body = data[pos:pos + need]
    if len(body) != need:
        raise DatasetError(f"{path}: expected {need} bytes of pixel data, found {len(body)}")
    return np.frombuffer(body, dtype=dtype).reshape(h, w).astype(np.float64) / maxval


# ---------------------------------------------------------------------------
# Dataset construction


@dataclass
class DatasetConfig:
    size: int = 64
    seed: int = 0
    regions: tuple = ("head", "abdomen", "pelvis")
    n_train: int = 200
    n_val: int = 40
    motion: MotionParams = field(default_factory=MotionParams)
    # {region: (train, val)}; overrides the round-robin n_train / n_val split
    region_counts: dict | None = None

    def __post_init__(self):
        self.regions = tuple(PhantomClass.parse(r).value for r in self.regions)
        if not self.regions:
            raise ValueError("at least one region is required")
        if isinstance(self.motion, dict):
            self.motion = MotionParams(**self.motion)

    @classmethod
    def full_scale(cls, seed: int = 0) -> "DatasetConfig":
        """Split sizes of the volunteer study: rigid 980/105, non-rigid 420/90, at 256x256."""
        return cls(size=256, seed=seed, regions=("head", "pelvis", "abdomen"),
                   region_counts={"head": (490, 53), "pelvis": (490, 52), "abdomen": (420, 90)})


@dataclass
class PairedSample:
    id: int
    split: str
    region: str
    clean: np.ndarray
    corrupted: np.ndarray


def sample_seed(global_seed: int, sample_id: int) -> int:
    return derive_seed(global_seed, sample_id)


def plan_dataset(config: DatasetConfig) -> list[dict]:
    """Manifest entries (no pixels) in id order."""
    entries = []

    def add(split, region):
        i = len(entries)
        entries.append({
            "id": i,
            "split": split,
            "region": region,
            "corruption": CORRUPTION_FOR[PhantomClass(region)],
            "seed": sample_seed(config.seed, i),
            "clean": f"clean_{i:06d}.pgm",
            "corrupt": f"corrupt_{i:06d}.pgm",
        })

    if config.region_counts:
        for s, split in enumerate(SPLITS):
            for region in config.regions:
                for _ in range(config.region_counts[region][s]):
                    add(split, region)
    else:
        for split, n in zip(SPLITS, (config.n_train, config.n_val)):
            for j in range(n):
                add(split, config.regions[j % len(config.regions)])
    return entries


def make_manifest(config: DatasetConfig, entries: list[dict]) -> dict:
    counts = {s: sum(e["split"] == s for e in entries) for s in SPLITS}
    by_corruption: dict = {}
    for e in entries:
        c = by_corruption.setdefault(e["corruption"], {s: 0 for s in SPLITS})
        c[e["split"]] += 1
    return {
        "format": FORMAT,
        "version": FORMAT_VERSION,
        "size": config.size,
        "seed": config.seed,
        "regions": list(config.regions),
        "counts": counts,
        "counts_by_corruption": by_corruption,
        "motion": asdict(config.motion),
        "samples": entries,
    }


def synthesize_pair(entry: dict, size: int, motion: MotionParams):
    clean = gen_phantom(entry["region"], size, entry["seed"])
    corrupted = corrupt(clean, entry["corruption"], motion.with_seed(derive_seed(entry["seed"], 1)))
    return clean, corrupted


def build_dataset(config: DatasetConfig, out_dir) -> dict:
    """Synthesize every pair, write images and ``manifest.json``; returns the manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = plan_dataset(config)
    for e in entries:
        clean, corrupted = synthesize_pair(e, config.size, config.motion)
        write_pgm(out / e["clean"], clean)
        write_pgm(out / e["corrupt"], corrupted)
    manifest = make_manifest(config, entries)
    tmp = out / (MANIFEST + ".tmp")
    tmp.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    os.replace(tmp, out / MANIFEST)
    return manifest


def read_manifest(data_dir) -> dict:
    path = Path(data_dir) / MANIFEST
    try:
        manifest = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise DatasetError(f"{path}: manifest not found") from None
    except json.JSONDecodeError as e:
        raise DatasetError(f"{path}: invalid JSON ({e})") from None
    if manifest.get("format") != FORMAT:
        raise DatasetError(f"{path}: unexpected format {manifest.get('format')!r}")
    samples = manifest.get("samples", [])
    for s in SPLITS:
        listed = sum(e["split"] == s for e in samples)
        if manifest["counts"].get(s) != listed:
            raise DatasetError(f"{path}: counts[{s}]={manifest['counts'].get(s)} but {listed} samples listed")
    return manifest


def load_dataset(data_dir, split: str | None = None, regions=None) -> list[PairedSample]:
    """Load pairs, optionally filtered by split and region.

    Any file listed in the manifest that is missing, unparsable or of the
    wrong size raises :class:`DatasetError` naming that file.
    """
    data_dir = Path(data_dir)
    manifest = read_manifest(data_dir)
    size = manifest["size"]
    wanted = None if regions is None else {PhantomClass.parse(r).value for r in regions}
    if wanted is not None and not wanted:
        raise DatasetError("region filter is empty")
    out = []
    for e in manifest["samples"]:
        if split is not None and e["split"] != split:
            continue
        if wanted is not None and e["region"] not in wanted:
            continue
        imgs = []
        for key in ("clean", "corrupt"):
            img = read_pgm(data_dir / e[key])
            if img.shape != (size, size):
                raise DatasetError(f"{data_dir / e[key]}: shape {img.shape}, manifest says {size}x{size}")
            imgs.append(img)
        out.append(PairedSample(e["id"], e["split"], e["region"], imgs[0], imgs[1]))
    return out
