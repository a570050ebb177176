"""Procedural phantoms and k-space motion corruption.

Images are 2-D float64 arrays in [0, 1], row index = phase-encode
direction. Spectra are kept *centered* (DC at row/column ``N // 2``) so
that phase-encode line ``t`` of a sequential acquisition is simply row
``t`` of the spectrum.
"""

from __future__ import annotations

import enum
from dataclasses import asdict, dataclass

import numpy as np

from .prng import Prng

VALID_SIZES = (64, 128, 256)


class PhantomClass(str, enum.Enum):
    HEAD = "head"
    ABDOMEN = "abdomen"
    PELVIS = "pelvis"

    @classmethod
    def parse(cls, name: str) -> "PhantomClass":
        key = name.strip().lower().removesuffix("-like")
        try:
            return cls(key)
        except ValueError:
            raise ValueError(f"unknown region {name!r}; expected one of head, abdomen, pelvis") from None


# head and hip movement is rigid, respiration is not
CORRUPTION_FOR = {PhantomClass.HEAD: "rigid", PhantomClass.PELVIS: "rigid", PhantomClass.ABDOMEN: "nonrigid"}


def _check_fft_size(shape) -> None:
    if len(shape) != 2 or shape[0] != shape[1] or shape[0] < 1 or shape[0] & (shape[0] - 1):
        raise ValueError(f"FFT needs a square power-of-two image, got shape {tuple(shape)}")


def fft2(image) -> np.ndarray:
    """Unitary 2-D DFT with the spectrum centered (DC at ``N // 2``)."""
    image = np.asarray(image)
    _check_fft_size(image.shape)
    return np.fft.fftshift(np.fft.fft2(image, norm="ortho"))


def ifft2(spectrum) -> np.ndarray:
    """Inverse of :func:`fft2`."""
    spectrum = np.asarray(spectrum)
    _check_fft_size(spectrum.shape)
    return np.fft.ifft2(np.fft.ifftshift(spectrum), norm="ortho")


def bilinear_sample(image, rows, cols) -> np.ndarray:
    """Sample ``image`` at fractional coordinates; outside the grid reads 0."""
    h, w = image.shape
    r0 = np.floor(rows).astype(np.int64)
    c0 = np.floor(cols).astype(np.int64)
    fr = rows - r0
    fc = cols - c0
    out = np.zeros(np.broadcast(rows, cols).shape, dtype=np.float64)
    for dr, wr in ((0, 1 - fr), (1, fr)):
        for dc, wc in ((0, 1 - fc), (1, fc)):
            rr, cc = r0 + dr, c0 + dc
            inside = (rr >= 0) & (rr < h) & (cc >= 0) & (cc < w)
            vals = image[np.clip(rr, 0, h - 1), np.clip(cc, 0, w - 1)]
            out += np.where(inside, wr * wc * vals, 0.0)
    return out


def rotate(image, degrees: float) -> np.ndarray:
    """Rotate about the image center with bilinear resampling."""
    if degrees == 0:
        return np.array(image, dtype=np.float64)
    h, w = image.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    t = np.deg2rad(degrees)
    # inverse map: output pixel -> source position
    src_y = cy + np.cos(t) * (yy - cy) - np.sin(t) * (xx - cx)
    src_x = cx + np.sin(t) * (yy - cy) + np.cos(t) * (xx - cx)
    return bilinear_sample(image, src_y, src_x)


# ---------------------------------------------------------------------------
# Phantoms


def _soft_ellipse(yy, xx, cy, cx, ry, rx, angle=0.0, edge=0.015):
    c, s = np.cos(angle), np.sin(angle)
    dy, dx = yy - cy, xx - cx
    u = (c * dx + s * dy) / rx
    v = (-s * dx + c * dy) / ry
    r = np.sqrt(u * u + v * v)
    return 1.0 / (1.0 + np.exp(np.clip((r - 1.0) / (edge / min(rx, ry)), -50, 50)))


def _smooth_noise(prng: Prng, size: int, cutoff: float) -> np.ndarray:
    """Unit-std low-pass noise field."""
    field = prng.normal(size * size).reshape(size, size)
    f = np.fft.fftfreq(size)
    lp = np.exp(-(f[:, None] ** 2 + f[None, :] ** 2) / (2 * cutoff * cutoff))
    out = np.real(np.fft.ifft2(np.fft.fft2(field) * lp))
    return out / (out.std() + 1e-12)


def _head(yy, xx, prng: Prng):
    j = prng.uniform_range(-1, 1, 8)
    cy, cx = 0.03 * j[0], 0.03 * j[1]
    sc = 1 + 0.05 * j[2]
    ang = np.deg2rad(8 * j[3])
    img = 0.85 * _soft_ellipse(yy, xx, cy, cx, 0.9 * sc, 0.74 * sc, ang)
    img -= 0.65 * _soft_ellipse(yy, xx, cy, cx, 0.83 * sc, 0.67 * sc, ang)    # dark skull
    img += 0.40 * _soft_ellipse(yy, xx, cy, cx, 0.78 * sc, 0.62 * sc, ang)    # grey matter
    img += 0.20 * _soft_ellipse(yy, xx, cy, cx, 0.62 * sc, 0.48 * sc, ang)    # white matter
    for side in (-1, 1):
        img -= 0.45 * _soft_ellipse(yy, xx, cy - 0.05 + 0.03 * j[4], cx + side * (0.12 + 0.02 * j[5]),
                                    0.22 * sc, 0.07 * sc, ang + side * 0.25)
    n_spots = 2 + prng.integer_below(3)
    for _ in range(n_spots):
        p = prng.uniform_range(-1, 1, 4)
        img += 0.25 * p[3] * _soft_ellipse(yy, xx, cy + 0.4 * p[0], cx + 0.35 * p[1],
                                           0.05 + 0.03 * abs(p[2]), 0.05 + 0.03 * abs(p[2]))
    return img


def _abdomen(yy, xx, prng: Prng):
    j = prng.uniform_range(-1, 1, 8)
    cy, cx = 0.03 * j[0], 0.03 * j[1]
    sc = 1 + 0.05 * j[2]
    img = 0.80 * _soft_ellipse(yy, xx, cy, cx, 0.62 * sc, 0.88 * sc)
    img -= 0.50 * _soft_ellipse(yy, xx, cy, cx, 0.55 * sc, 0.80 * sc)        # fat rim remains
    img += 0.22 * _soft_ellipse(yy, xx, cy - 0.05 + 0.04 * j[3], cx - 0.35 + 0.05 * j[4],
                                0.32 * sc, 0.30 * sc, 0.3)                    # liver
    for side in (-1, 1):
        img += 0.30 * _soft_ellipse(yy, xx, cy + 0.22, cx + side * 0.32, 0.12 * sc, 0.08 * sc, side * 0.4)
    img += 0.45 * _soft_ellipse(yy, xx, cy + 0.38, cx, 0.09, 0.09)            # vertebra
    img -= 0.35 * _soft_ellipse(yy, xx, cy + 0.38, cx, 0.04, 0.04)
    n_loops = 3 + prng.integer_below(4)
    for _ in range(n_loops):
        p = prng.uniform_range(-1, 1, 4)
        img += 0.2 * p[3] * _soft_ellipse(yy, xx, cy + 0.25 * p[0], cx + 0.15 + 0.3 * p[1],
                                          0.06 + 0.03 * abs(p[2]), 0.08)
    return img


def _pelvis(yy, xx, prng: Prng):
    j = prng.uniform_range(-1, 1, 8)
    cy, cx = 0.03 * j[0], 0.03 * j[1]
    sc = 1 + 0.05 * j[2]
    img = 0.85 * _soft_ellipse(yy, xx, cy, cx, 0.68 * sc, 0.92 * sc)
    img -= 0.45 * _soft_ellipse(yy, xx, cy, cx, 0.60 * sc, 0.84 * sc)
    img -= 0.30 * _soft_ellipse(yy, xx, cy - 0.1 + 0.04 * j[3], cx, 0.2 * sc, 0.25 * sc)  # bladder
    for side in (-1, 1):
        fy, fx = cy + 0.05 + 0.03 * j[4], cx + side * (0.55 + 0.03 * j[5])
        img += 0.45 * _soft_ellipse(yy, xx, fy, fx, 0.2 * sc, 0.2 * sc)      # femoral head, bright marrow
        img -= 0.45 * _soft_ellipse(yy, xx, fy, fx, 0.17 * sc, 0.17 * sc)    # cortical ring left dark
        img += 0.35 * _soft_ellipse(yy, xx, fy, fx, 0.14 * sc, 0.14 * sc)
    img += 0.15 * _soft_ellipse(yy, xx, cy + 0.4, cx, 0.12, 0.25)
    return img


_RECIPES = {PhantomClass.HEAD: _head, PhantomClass.ABDOMEN: _abdomen, PhantomClass.PELVIS: _pelvis}


def gen_phantom(region: PhantomClass | str, size: int = 64, seed: int = 0) -> np.ndarray:
    """Deterministic synthetic slice for one region class, values in [0, 1]."""
    region = PhantomClass.parse(region) if isinstance(region, str) else region
    if size not in VALID_SIZES:
        raise ValueError(f"phantom size must be one of {VALID_SIZES}, got {size}")
    prng = Prng(seed)
    axis = (np.arange(size) + 0.5) / size * 2 - 1
    yy, xx = np.meshgrid(axis, axis, indexing="ij")
    img = _RECIPES[region](yy, xx, prng)
    support = img > 0.02
    texture = _smooth_noise(prng, size, cutoff=0.08)
    img = img * (1 + 0.06 * texture * support)
    return np.clip(img, 0.0, 1.0)


# ---------------------------------------------------------------------------
# Motion


@dataclass(frozen=True)
class MotionParams:
    """Corruption severity. Rigid and non-rigid fields are used by their own simulator."""

    segments: int = 8
    max_translation: float = 2.0       # pixels
    max_rotation: float = 2.0          # degrees
    amplitude: float = 2.0             # pixels
    period: float = 12.0               # phase-encode lines
    envelope_width: float = 0.35       # fraction of image size
    seed: int = 0

    def __post_init__(self):
        if self.segments < 1:
            raise ValueError(f"segments must be >= 1, got {self.segments}")
        for name in ("max_translation", "max_rotation", "amplitude"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.period <= 0 or self.envelope_width <= 0:
            raise ValueError("period and envelope_width must be positive")

    def with_seed(self, seed: int) -> "MotionParams":
        return MotionParams(**{**asdict(self), "seed": int(seed)})

    def to_dict(self) -> dict:
        return asdict(self)


def rigid_segments(h: int, params: MotionParams):
    """Per-segment ``(rows, dy, dx, degrees)``.

    Draw order: for each segment, ``dy, dx, rotation`` uniformly in the
    symmetric ranges. The segment holding the k-space center is then reset
    to zero motion so the corrupted image stays registered to the clean one.
    """
    if params.segments > h:
        raise ValueError(f"{params.segments} segments exceed the {h} phase-encode lines")
    prng = Prng(params.seed)
    out = []
    for rows in np.array_split(np.arange(h), params.segments):
        u = prng.uniform_range(-1, 1, 3)
        dy, dx = params.max_translation * u[0], params.max_translation * u[1]
        deg = params.max_rotation * u[2]
        if rows[0] <= h // 2 <= rows[-1]:
            dy = dx = deg = 0.0
        out.append((rows, dy, dx, deg))
    return out


def _translate_rows(spec_rows, rows, dy: float, dx: float, n: int):
    """Apply a translation as a linear phase ramp to selected spectrum rows."""
    k = np.fft.fftshift(np.fft.fftfreq(n))
    ramp = np.exp(-2j * np.pi * (k[rows][:, None] * dy + k[None, :] * dx))
    return spec_rows * ramp


def rigid_kspace(clean, params: MotionParams) -> np.ndarray:
    """Composite centered spectrum of a rigidly moving object."""
    clean = np.asarray(clean, dtype=np.float64)
    _check_fft_size(clean.shape)
    base = fft2(clean)
    out = np.empty_like(base)
    for rows, dy, dx, deg in rigid_segments(clean.shape[0], params):
        spec = base if deg == 0 else fft2(rotate(clean, deg))
        out[rows] = _translate_rows(spec[rows], rows, dy, dx, clean.shape[0]) if (dy or dx) else spec[rows]
    return out


def _magnitude_image(spectrum) -> np.ndarray:
    return np.clip(np.abs(ifft2(spectrum)), 0.0, 1.0)


def corrupt_rigid(clean, params: MotionParams) -> np.ndarray:
    return _magnitude_image(rigid_kspace(clean, params))


def nonrigid_kspace(clean, params: MotionParams) -> np.ndarray:
    """Line-by-line composite under a smooth breathing-like deformation.

    For phase-encode line ``t`` the image is warped by a vertical
    displacement ``A sin(2 pi t / T + phase) env(r)`` with a Gaussian
    envelope centered on the image, and only row ``t`` of its spectrum is
    kept. The breathing phase is drawn from ``params.seed``.
    """
    clean = np.asarray(clean, dtype=np.float64)
    _check_fft_size(clean.shape)
    n = clean.shape[0]
    base = fft2(clean)
    if params.amplitude == 0:
        return base
    phase = 2 * np.pi * Prng(params.seed).uniform(1)[0]
    yy, xx = np.mgrid[0:n, 0:n].astype(np.float64)
    c = (n - 1) / 2.0
    width = params.envelope_width * n
    env = np.exp(-((yy - c) ** 2 + (xx - c) ** 2) / (2 * width * width))
    out = np.empty_like(base)
    cache: dict = {}
    for t in range(n):
        a = params.amplitude * np.sin(2 * np.pi * t / params.period + phase)
        key = round(float(a), 12)
        if key not in cache:
            cache[key] = fft2(bilinear_sample(clean, yy - key * env, xx)) if key != 0 else base
        out[t] = cache[key][t]
    return out


def corrupt_nonrigid(clean, params: MotionParams) -> np.ndarray:
    return _magnitude_image(nonrigid_kspace(clean, params))


def corrupt(clean, kind: str, params: MotionParams) -> np.ndarray:
    if kind == "rigid":
        return corrupt_rigid(clean, params)
    if kind == "nonrigid":
        return corrupt_nonrigid(clean, params)
    raise ValueError(f"unknown corruption kind {kind!r}; expected 'rigid' or 'nonrigid'")
