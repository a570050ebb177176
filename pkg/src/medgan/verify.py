"""Finite-difference gradient checks and oracle comparisons.

``run_all`` is what ``medgan gradcheck`` executes. Every check runs on the
float64 path with central differences (step ``1e-4``). The relative error
of one gradient entry is ``|a - n| / max(|a|, |n|, 1e-6)``; the floor keeps
entries that are analytically zero (dead ReLUs, unused channels) from
dividing rounding noise by zero.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import losses, metrics, ops, oracles
from .networks import (CasNet, CasNetSpec, FixedExtractor, FixedExtractorSpec, PatchDiscriminator,
                       PatchDiscSpec, UNetSpec)

DELTA = 1e-4
REL_FLOOR = 1e-6
PRIMITIVE_TOL = 1e-5
ACTIVATION_TOL = 1e-6
COMPOSITE_TOL = 1e-4


@dataclass
class CheckResult:
    name: str
    value: float
    tol: float
    passed: bool

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name:<44s} {self.value:.3e} (tol {self.tol:.0e})"


def numerical_gradient(f, x: np.ndarray, delta: float = DELTA) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. every entry of ``x`` (perturbed in place)."""
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + delta
        up = f()
        flat[i] = old - delta
        down = f()
        flat[i] = old
        gflat[i] = (up - down) / (2 * delta)
    return g


def max_rel_error(analytic, numeric) -> float:
    a, n = np.ravel(analytic), np.ravel(numeric)
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), REL_FLOOR)))


def check(f, pairs, delta: float = DELTA) -> float:
    """Worst error over ``(array, analytic_grad)`` pairs."""
    return max(max_rel_error(g, numerical_gradient(f, x, delta)) for x, g in pairs)


def _away_from_zero(rng, shape, margin=0.05):
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-12) * margin + x, x)


# ---------------------------------------------------------------------------
# primitives

CONV_CASES = [
    # n, h, w, cin, k, cout, stride, pad
    (2, 5, 5, 2, 3, 3, 1, 1),
    (1, 6, 6, 3, 4, 2, 2, 1),
    (2, 7, 5, 1, 3, 4, 2, 0),
    (1, 4, 4, 2, 1, 3, 1, 0),
    (2, 8, 8, 2, 4, 3, 2, 1),
]


def grad_conv2d(seed: int = 0) -> float:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for n, h, w, cin, k, cout, s, p in CONV_CASES:
        x = rng.normal(size=(n, h, w, cin))
        K = rng.normal(size=(k, k, cin, cout))
        b = rng.normal(size=cout)
        R = rng.normal(size=ops.conv2d(x, K, b, s, p).shape)
        gx, gk, gb = ops.conv2d_backward(x, K, R, s, p)
        f = lambda: float(np.sum(ops.conv2d(x, K, b, s, p) * R))
        worst = max(worst, check(f, [(x, gx), (K, gk), (b, gb)]))
    return worst


def grad_conv_transpose2d(seed: int = 1) -> float:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for n, h, w, cin, k, cout, s, p in CONV_CASES:
        u = rng.normal(size=(n, max(h // s, 1), max(w // s, 1), cin))
        K = rng.normal(size=(k, k, cout, cin))
        b = rng.normal(size=cout)
        R = rng.normal(size=ops.conv_transpose2d(u, K, b, s, p).shape)
        gu, gk, gb = ops.conv_transpose2d_backward(u, K, R, s, p)
        f = lambda: float(np.sum(ops.conv_transpose2d(u, K, b, s, p) * R))
        worst = max(worst, check(f, [(u, gu), (K, gk), (b, gb)]))
    return worst


def grad_batch_norm(seed: int = 2) -> float:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for shape in [(2, 3, 3, 2), (4, 2, 2, 3), (1, 4, 4, 1), (3, 1, 2, 4), (2, 4, 3, 2)]:
        c = shape[3]
        x = rng.normal(size=shape) * 2 + 0.5
        gamma, beta = rng.normal(size=c), rng.normal(size=c)
        rm, rv = rng.normal(size=c), rng.uniform(0.5, 2, size=c)
        for training in (True, False):
            y, cache, _ = ops.batch_norm(x, gamma, beta, rm, rv, training)
            R = rng.normal(size=y.shape)
            gx, gg, gb = ops.batch_norm_backward(cache, R)
            f = lambda: float(np.sum(ops.batch_norm(x, gamma, beta, rm, rv, training)[0] * R))
            worst = max(worst, check(f, [(x, gx), (gamma, gg), (beta, gb)]))
    return worst


def grad_activations(seed: int = 3) -> float:
    rng = np.random.default_rng(seed)
    worst = 0.0
    pairs = [
        (ops.leaky_relu, lambda x, y, g: ops.leaky_relu_backward(x, g)),
        (ops.relu, lambda x, y, g: ops.relu_backward(x, g)),
        (ops.tanh, lambda x, y, g: ops.tanh_backward(y, g)),
        (ops.sigmoid, lambda x, y, g: ops.sigmoid_backward(y, g)),
    ]
    for fwd, bwd in pairs:
        x = _away_from_zero(rng, 10, margin=0.01) * 2
        y = fwd(x)
        R = rng.normal(size=10)
        f = lambda: float(np.sum(fwd(x) * R))
        worst = max(worst, check(f, [(x, bwd(x, y, R))]))
    return worst


# ---------------------------------------------------------------------------
# losses


def grad_adversarial(seed: int = 4) -> float:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(5):
        r = rng.normal(size=(2, 2, 2, 1)) * 3
        fk = rng.normal(size=(2, 2, 2, 1)) * 3
        _, gr, gf = losses.adv_loss_d(r, fk)
        f = lambda: losses.adv_loss_d(r, fk)[0]
        worst = max(worst, check(f, [(r, gr), (fk, gf)]))
        for sat in (False, True):
            _, g = losses.adv_loss_g(fk, sat)
            worst = max(worst, check(lambda: losses.adv_loss_g(fk, sat)[0], [(fk, g)]))
    return worst


def grad_perceptual(seed: int = 5) -> float:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(5):
        real = [rng.normal(size=(2, 4, 4, 1)), rng.normal(size=(2, 2, 2, 3))]
        fake = [r + _away_from_zero(rng, r.shape, 0.01) for r in real]
        w = rng.uniform(0.5, 2, size=2)
        _, grads = losses.perceptual_loss(fake, real, w)
        f = lambda: losses.perceptual_loss(fake, real, w)[0]
        worst = max(worst, check(f, list(zip(fake, grads))))
    return worst


def grad_gram_style(seed: int = 6) -> float:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(5):
        Vf = [rng.normal(size=(2, 3, 3, 2)), rng.normal(size=(2, 2, 2, 4))]
        Vr = [rng.normal(size=v.shape) for v in Vf]
        w = rng.uniform(0.5, 2, size=2)
        _, grads = losses.style_loss_from_features(Vf, Vr, w)
        f = lambda: losses.style_loss_from_features(Vf, Vr, w)[0]
        worst = max(worst, check(f, list(zip(Vf, grads))))
    return worst


def grad_style_through_extractor(seed: int = 7) -> float:
    rng = np.random.default_rng(seed)
    ext = FixedExtractor(FixedExtractorSpec(seed=3), dtype=np.float64)
    worst = 0.0
    for _ in range(5):
        x = rng.uniform(-1, 1, size=(2, 8, 8, 1))
        xh = rng.uniform(-1, 1, size=(2, 8, 8, 1))
        w = (1.0, 2.0, 0.5)
        _, g = losses.style_loss(xh, x, ext, w)
        worst = max(worst, check(lambda: losses.style_loss(xh, x, ext, w)[0], [(xh, g)]))
    return worst


# ---------------------------------------------------------------------------
# composites


def tiny_models(n_unets: int = 3):
    casnet = CasNet(CasNetSpec(n_unets=n_unets, unet=UNetSpec(depth=2, base_channels=2, channel_cap=8)))
    disc = PatchDiscriminator(PatchDiscSpec(channels=(2, 4, 4)))
    ext = FixedExtractor(FixedExtractorSpec(seed=5), dtype=np.float64)
    return casnet, disc, ext


def _perturb_init(store, rng):
    """Random gamma/beta/bias so that no gradient is trivially zero."""
    for k, v in store.items():
        if k.endswith((".b", ".beta")):
            store[k] = rng.normal(size=v.shape) * 0.1
        elif k.endswith(".gamma"):
            store[k] = 1 + rng.normal(size=v.shape) * 0.1
        elif k.endswith(".w"):
            store[k] = rng.normal(size=v.shape) * 0.5
    return store


def grad_generator_composite(seed: int = 8) -> float:
    rng = np.random.default_rng(seed)
    casnet, disc, ext = tiny_models()
    g_params = [_perturb_init(p, rng) for p in casnet.init_params(seed, np.float64)]
    d_params = _perturb_init(disc.init_params(seed + 1, np.float64), rng)
    y = rng.uniform(-1, 1, size=(2, 8, 8, 1))
    x = rng.uniform(-1, 1, size=(2, 8, 8, 1))
    weights = losses.LossWeights(adv=1.0, percep=(2.0, 1.0, 1.0, 1.0), style=(1.0, 1.0, 1.0))

    def total():
        return losses.generator_objective(y, x, g_params, d_params, weights,
                                          casnet=casnet, disc=disc, extractor=ext)[0].total

    _, grads, _, _ = losses.generator_objective(y, x, g_params, d_params, weights,
                                                casnet=casnet, disc=disc, extractor=ext)
    pairs = [(p[k], gr[k]) for p, gr in zip(g_params, grads) for k in p.trainable_names()]
    return check(total, pairs)


def grad_discriminator_composite(seed: int = 9) -> float:
    rng = np.random.default_rng(seed)
    _, disc, _ = tiny_models()
    d_params = _perturb_init(disc.init_params(seed, np.float64), rng)
    y = rng.uniform(-1, 1, size=(2, 8, 8, 1))
    x = rng.uniform(-1, 1, size=(2, 8, 8, 1))
    xh = rng.uniform(-1, 1, size=(2, 8, 8, 1))

    def loss_and_grads():
        lr, _, tr = disc.forward(d_params, x, y)
        lf, _, tf = disc.forward(d_params, xh, y)
        loss, gr, gf = losses.adv_loss_d(lr, lf)
        return loss, (tr, gr), (tf, gf)

    _, (tr, gr), (tf, gf) = loss_and_grads()
    _, _, g1 = disc.backward(d_params, tr, gr)
    _, _, g2 = disc.backward(d_params, tf, gf)
    pairs = [(d_params[k], g1[k] + g2[k]) for k in d_params.trainable_names()]
    return check(lambda: loss_and_grads()[0], pairs)


def gradient_suite() -> list[CheckResult]:
    checks = [
        ("grad conv2d (5 instances)", grad_conv2d, PRIMITIVE_TOL),
        ("grad conv_transpose2d (5 instances)", grad_conv_transpose2d, PRIMITIVE_TOL),
        ("grad batch_norm train+eval (5 instances)", grad_batch_norm, PRIMITIVE_TOL),
        ("grad activations (10 points each)", grad_activations, ACTIVATION_TOL),
        ("grad adversarial losses", grad_adversarial, PRIMITIVE_TOL),
        ("grad perceptual loss", grad_perceptual, PRIMITIVE_TOL),
        ("grad gram/style from features", grad_gram_style, PRIMITIVE_TOL),
        ("grad style loss through extractor", grad_style_through_extractor, PRIMITIVE_TOL),
        ("grad generator objective (tiny CasNet)", grad_generator_composite, COMPOSITE_TOL),
        ("grad discriminator loss (tiny D)", grad_discriminator_composite, COMPOSITE_TOL),
    ]
    return [CheckResult(name, v := fn(), tol, v < tol) for name, fn, tol in checks]


# ---------------------------------------------------------------------------
# oracles


def oracle_conv2d(seed: int = 10) -> float:
    """Integer-valued tensors make every float64 sum exact, so equality is bitwise."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for n, h, w, cin, k, cout, s, p in CONV_CASES:
        x = rng.integers(-8, 9, size=(n, h, w, cin)).astype(np.float64)
        K = rng.integers(-8, 9, size=(k, k, cin, cout)).astype(np.float64)
        b = rng.integers(-8, 9, size=cout).astype(np.float64)
        d = np.abs(ops.conv2d(x, K, b, s, p) - oracles.conv2d_loops(x, K, b, s, p))
        worst = max(worst, float(d.max()))
    return worst


def oracle_conv2d_real(seed: int = 11) -> float:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for n, h, w, cin, k, cout, s, p in CONV_CASES:
        x = rng.normal(size=(n, h, w, cin))
        K = rng.normal(size=(k, k, cin, cout))
        b = rng.normal(size=cout)
        worst = max(worst, float(np.abs(ops.conv2d(x, K, b, s, p) - oracles.conv2d_loops(x, K, b, s, p)).max()))
    return worst


def oracle_ssim_uqi(seed: int = 12, pairs: int = 20) -> tuple[float, float]:
    rng = np.random.default_rng(seed)
    ds, du = 0.0, 0.0
    for _ in range(pairs):
        a = rng.uniform(size=(16, 16))
        b = np.clip(a + rng.normal(scale=0.2, size=a.shape), 0, 1)
        ds = max(ds, abs(metrics.ssim(a, b) - oracles.ssim_loops(a, b)))
        du = max(du, abs(metrics.uqi(a, b) - oracles.uqi_loops(a, b)))
    return ds, du


def oracle_gram(seed: int = 13) -> float:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(5):
        V = rng.normal(size=(1, 4, 4, 3))
        worst = max(worst, float(np.abs(losses.gram_matrix(V) - oracles.gram_loops(V[0])).max()))
    worked = np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 2, 2)
    expect = np.array([[2.5, 3.5], [3.5, 5.0]])
    worst = max(worst, float(np.abs(losses.gram_matrix(worked) - expect).max()))
    return worst


def oracle_suite() -> list[CheckResult]:
    ds, du = oracle_ssim_uqi()
    out = [
        CheckResult("oracle conv2d, integer data (bitwise)", v := oracle_conv2d(), 0.0, v == 0.0),
        CheckResult("oracle conv2d, real data", v := oracle_conv2d_real(), 1e-12, v < 1e-12),
        CheckResult("oracle SSIM, 20 pairs 16x16", ds, 1e-8, ds < 1e-8),
        CheckResult("oracle UQI, 20 pairs 16x16", du, 1e-8, du < 1e-8),
        CheckResult("oracle Gram matrix 4x4x3 + worked 2x2", v := oracle_gram(), 1e-10, v < 1e-10),
    ]
    return out


def run_all(out=print) -> bool:
    t0 = time.perf_counter()
    results = gradient_suite() + oracle_suite()
    for r in results:
        out(r.line())
    ok = all(r.passed for r in results)
    out(f"{sum(r.passed for r in results)}/{len(results)} checks passed in {time.perf_counter() - t0:.1f}s")
    return ok
