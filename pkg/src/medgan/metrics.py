"""Full-reference image quality metrics and Table-style reports.

All metrics take two 2-D images with values in [0, 1] and compute in
float64. SSIM and UQI average over *valid* window positions only (no
padding). VIF is the multi-scale pixel-domain variant evaluated on a copy
rescaled to [0, 255]. FPD is a fixed-feature perceptual distance that stands
in for LPIPS; it is not LPIPS and reports label it accordingly.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .networks import FixedExtractor, FixedExtractorSpec

METRICS = ("ssim", "vif", "uqi", "fpd")
CSV_NAMES = {"ssim": "SSIM", "vif": "VIF", "uqi": "UQI", "fpd": "FPD"}
METRIC_LABELS = {**CSV_NAMES, "fpd": "FPD (LPIPS stand-in)"}


def _as_image(name, a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 4 and a.shape[0] == 1 and a.shape[3] == 1:
        a = a[0, :, :, 0]
    if a.ndim != 2:
        raise ValueError(f"{name} must be a 2-D image, got shape {a.shape}")
    return a


def _pair(ref, test):
    ref, test = _as_image("ref", ref), _as_image("test", test)
    if ref.shape != test.shape:
        raise ValueError(f"image shapes differ: ref {ref.shape} vs test {test.shape}")
    return ref, test


def gaussian_window_1d(size: int, sigma: float) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r * r) / (2 * sigma * sigma))
    return g / g.sum()


def filter_valid(img: np.ndarray, k1d: np.ndarray) -> np.ndarray:
    """Separable 'valid' correlation with the outer product ``k1d k1d^T``."""
    n = len(k1d)
    if img.shape[0] < n or img.shape[1] < n:
        raise ValueError(f"image {img.shape} smaller than {n}x{n} window")
    rows = sliding_window_view(img, n, axis=0) @ k1d
    return sliding_window_view(rows, n, axis=1) @ k1d


def _local_stats(a, b, k1d):
    mu_a = filter_valid(a, k1d)
    mu_b = filter_valid(b, k1d)
    var_a = filter_valid(a * a, k1d) - mu_a * mu_a
    var_b = filter_valid(b * b, k1d) - mu_b * mu_b
    cov = filter_valid(a * b, k1d) - mu_a * mu_b
    return mu_a, mu_b, var_a, var_b, cov


def ssim_map(ref, test, *, window: str = "gaussian", size: int = 11, sigma: float = 1.5,
             c1: float | None = None, c2: float | None = None, data_range: float = 1.0):
    ref, test = _pair(ref, test)
    if window == "gaussian":
        k = gaussian_window_1d(size, sigma)
    elif window == "uniform":
        k = np.full(size, 1.0 / size)
    else:
        raise ValueError(f"unknown window {window!r}")
    c1 = (0.01 * data_range) ** 2 if c1 is None else c1
    c2 = (0.03 * data_range) ** 2 if c2 is None else c2
    mu_a, mu_b, var_a, var_b, cov = _local_stats(ref, test, k)
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return num / den


def ssim(ref, test, **kwargs) -> float:
    """Mean SSIM (11x11 Gaussian window, sigma 1.5, K1=0.01, K2=0.03, L=1)."""
    return float(ssim_map(ref, test, **kwargs).mean())


def _flat_windows(img, size: int) -> np.ndarray:
    win = sliding_window_view(img, (size, size))
    return win.max(axis=(2, 3)) == win.min(axis=(2, 3))


def uqi_map(ref, test, size: int = 8):
    """Quality-index map over valid 8x8 uniform windows.

    Returns ``(q_map, n_degenerate)``. A window with zero denominator scores
    1 when both patches are constant with equal means and 0 otherwise.
    """
    ref, test = _pair(ref, test)
    k = np.full(size, 1.0 / size)
    mu_a, mu_b, var_a, var_b, cov = _local_stats(ref, test, k)
    # E[x^2] - mu^2 leaves rounding noise on constant patches; zero those exactly
    flat_a, flat_b = _flat_windows(ref, size), _flat_windows(test, size)
    var_a[flat_a] = 0.0
    var_b[flat_b] = 0.0
    cov[flat_a | flat_b] = 0.0
    num = 4 * cov * mu_a * mu_b
    den = (var_a + var_b) * (mu_a * mu_a + mu_b * mu_b)
    degenerate = den == 0
    q = np.empty_like(num)
    ok = ~degenerate
    q[ok] = num[ok] / den[ok]
    equal_flat = (var_a == 0) & (var_b == 0) & (mu_a == mu_b)
    q[degenerate] = np.where(equal_flat[degenerate], 1.0, 0.0)
    return q, int(degenerate.sum())


def uqi(ref, test, size: int = 8) -> float:
    return float(uqi_map(ref, test, size)[0].mean())


VIF_NOISE_VAR = 2.0
VIF_SCALES = 4


def _vif_window(scale: int) -> np.ndarray:
    n = 2 ** (VIF_SCALES - scale + 1) + 1
    return gaussian_window_1d(n, n / 5.0)


def vif_min_size() -> int:
    """Smallest square side for which every scale keeps a valid window."""
    side = 1
    while True:
        try:
            _vif_pyramid_shapes(side)
            return side
        except ValueError:
            side += 1


def _vif_pyramid_shapes(side: int):
    h = side
    for scale in range(1, VIF_SCALES + 1):
        n = len(_vif_window(scale))
        if scale > 1:
            if h < n:
                raise ValueError("too small")
            h = (h - n + 1 + 1) // 2
        if h < n:
            raise ValueError("too small")


def vif_p(ref, test) -> float:
    """Multi-scale pixel-domain visual information fidelity."""
    ref, test = _pair(ref, test)
    try:
        _vif_pyramid_shapes(min(ref.shape))
    except ValueError:
        raise ValueError(
            f"image {ref.shape} too small for a {VIF_SCALES}-scale VIF pyramid (need side >= {vif_min_size()})"
        ) from None
    a = ref * 255.0
    b = test * 255.0
    eps = 1e-10
    num = den = 0.0
    for scale in range(1, VIF_SCALES + 1):
        k = _vif_window(scale)
        if scale > 1:
            a = filter_valid(a, k)[::2, ::2]
            b = filter_valid(b, k)[::2, ::2]
        mu_a, mu_b, var_a, var_b, cov = _local_stats(a, b, k)
        var_a = np.maximum(var_a, 0)
        var_b = np.maximum(var_b, 0)
        g = cov / (var_a + eps)
        sv2 = var_b - g * cov
        flat_a = var_a < eps
        g[flat_a] = 0
        sv2[flat_a] = var_b[flat_a]
        var_a = np.where(flat_a, 0.0, var_a)
        flat_b = var_b < eps
        g[flat_b] = 0
        sv2[flat_b] = 0
        neg = g < 0
        sv2[neg] = var_b[neg]
        g[neg] = 0
        sv2 = np.maximum(sv2, eps)
        num += float(np.sum(np.log2(1 + g * g * var_a / (sv2 + VIF_NOISE_VAR))))
        den += float(np.sum(np.log2(1 + var_a / VIF_NOISE_VAR)))
    if den == 0:
        # both images flat at every scale: nothing to lose
        return 1.0
    return num / den


_EXTRACTORS: dict = {}


def _extractor(spec: FixedExtractorSpec) -> FixedExtractor:
    if spec not in _EXTRACTORS:
        _EXTRACTORS[spec] = FixedExtractor(spec, dtype=np.float64)
    return _EXTRACTORS[spec]


def fpd(ref, test, extractor: FixedExtractorSpec | FixedExtractor = FixedExtractorSpec()) -> float:
    """Fixed-feature perceptual distance (LPIPS stand-in).

    Mean over extractor layers of the mean squared difference between
    channel-normalized feature maps. Images are mapped from [0, 1] to the
    network range [-1, 1] first.
    """
    ref, test = _pair(ref, test)
    ext = extractor if isinstance(extractor, FixedExtractor) else _extractor(extractor)
    fa, _ = ext.forward((2 * ref - 1)[None, :, :, None])
    fb, _ = ext.forward((2 * test - 1)[None, :, :, None])
    dists = []
    for a, b in zip(fa, fb):
        a = a / (np.sqrt(np.sum(a * a, axis=3, keepdims=True)) + 1e-10)
        b = b / (np.sqrt(np.sum(b * b, axis=3, keepdims=True)) + 1e-10)
        dists.append(float(np.mean((a - b) ** 2)))
    return math.fsum(dists) / len(dists)


def all_metrics(ref, test) -> dict:
    return {"ssim": ssim(ref, test), "vif": vif_p(ref, test), "uqi": uqi(ref, test), "fpd": fpd(ref, test)}


# ---------------------------------------------------------------------------
# Reports


@dataclass
class MetricRow:
    id: str
    region: str
    ssim: float
    uqi: float
    vif: float
    fpd: float
    method: str = "MedGAN"

    def __post_init__(self):
        for m in METRICS:
            if not math.isfinite(getattr(self, m)):
                raise ValueError(f"metric {m} is not finite in row {self.id!r}")


@dataclass
class Aggregate:
    method: str
    region: str
    metric: str
    mean: float
    std: float
    n: int


@dataclass
class MetricReport:
    rows: list
    aggregates: list

    def get(self, method: str, region: str, metric: str) -> Aggregate:
        for a in self.aggregates:
            if (a.method, a.region, a.metric) == (method, region, metric):
                return a
        raise KeyError((method, region, metric))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["method", "region", "metric", "mean", "std", "n"])
        for a in self.aggregates:
            w.writerow([a.method, a.region, CSV_NAMES[a.metric], f"{a.mean:.6g}", f"{a.std:.6g}", a.n])
        return buf.getvalue()

    def rows_csv(self) -> str:
        """Per-sample rows with round-trip float precision."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["id", "method", "region", *METRICS])
        for r in self.rows:
            w.writerow([r.id, r.method, r.region, *(repr(float(getattr(r, m))) for m in METRICS)])
        return buf.getvalue()

    def to_table(self) -> str:
        """Wide layout: one line per method, metric columns grouped by region."""
        methods = list(dict.fromkeys(a.method for a in self.aggregates))
        regions = list(dict.fromkeys(a.region for a in self.aggregates))
        header = ["Method"] + [f"{r} {METRIC_LABELS[m]}" for r in regions for m in METRICS]
        lines = ["\t".join(header)]
        for meth in methods:
            cells = [meth]
            for r in regions:
                for m in METRICS:
                    try:
                        cells.append(f"{self.get(meth, r, m).mean:.4f}")
                    except KeyError:
                        cells.append("-")
            lines.append("\t".join(cells))
        return "\n".join(lines) + "\n"


def aggregate_report(rows) -> MetricReport:
    """Group rows by (method, region) and compute mean and population std."""
    rows = list(rows)
    if not rows:
        raise ValueError("cannot aggregate an empty set of metric rows")
    groups: dict = {}
    for r in rows:
        groups.setdefault((r.method, r.region), []).append(r)
    aggs = []
    for (method, region), members in groups.items():
        for m in METRICS:
            vals = [float(getattr(r, m)) for r in members]
            mean = math.fsum(vals) / len(vals)
            std = math.sqrt(math.fsum((v - mean) ** 2 for v in vals) / len(vals))
            aggs.append(Aggregate(method, region, m, mean, std, len(vals)))
    return MetricReport(rows=rows, aggregates=aggs)


def rows_from_csv(text: str) -> list[MetricRow]:
    out = []
    for rec in csv.DictReader(io.StringIO(text)):
        out.append(MetricRow(id=rec["id"], region=rec["region"], method=rec["method"],
                             **{m: float(rec[m]) for m in METRICS}))
    return out
