"""Slow reference implementations used to cross-check the fast paths.

Nothing here imports the code it checks. Everything is explicit Python
loops over float64 values, in a fixed summation order.
"""

from __future__ import annotations

import math

import numpy as np


def conv2d_loops(x, kernel, bias, stride, pad):
    n, h, w, cin = x.shape
    kh, kw, kcin, cout = kernel.shape
    assert kcin == cin
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    out = np.zeros((n, oh, ow, cout))
    for b in range(n):
        for i in range(oh):
            for j in range(ow):
                for o in range(cout):
                    acc = 0.0 if bias is None else float(bias[o])
                    for di in range(kh):
                        for dj in range(kw):
                            r = i * stride + di - pad
                            c = j * stride + dj - pad
                            if 0 <= r < h and 0 <= c < w:
                                for ci in range(cin):
                                    acc += float(x[b, r, c, ci]) * float(kernel[di, dj, ci, o])
                    out[b, i, j, o] = acc
    return out


def gram_loops(V):
    """Single feature map ``V [h, w, d]``; entry ``(m, k) = sum V[.,.,m] V[.,.,k] / (h w d)``."""
    h, w, d = V.shape
    G = np.zeros((d, d))
    for m in range(d):
        for k in range(d):
            acc = 0.0
            for i in range(h):
                for j in range(w):
                    acc += float(V[i, j, m]) * float(V[i, j, k])
            G[m, k] = acc / (h * w * d)
    return G


def style_loss_loops(feats_fake, feats_real, weights):
    total = 0.0
    for Vf, Vr, lam in zip(feats_fake, feats_real, weights):
        n, _, _, d = Vf.shape
        Gf = sum(gram_loops(Vf[b]) for b in range(n)) / n
        Gr = sum(gram_loops(Vr[b]) for b in range(n)) / n
        fro = 0.0
        for m in range(d):
            for k in range(d):
                fro += (Gf[m, k] - Gr[m, k]) ** 2
        total += lam / (4.0 * d * d) * fro
    return total


def perceptual_loops(stack_a, stack_b, weights):
    total = 0.0
    for a, b, lam in zip(stack_a, stack_b, weights):
        fa, fb = np.ravel(a), np.ravel(b)
        s = 0.0
        for u, v in zip(fa, fb):
            s += abs(float(u) - float(v))
        total += lam * s / fa.size
    return total


def neg_log_sigmoid(z: float) -> float:
    # -log(1 / (1 + e^-z)), evaluated per element with the branch that cannot overflow
    if z >= 0:
        return math.log1p(math.exp(-z))
    return -z + math.log1p(math.exp(z))


def adv_d_loops(real, fake):
    r = [neg_log_sigmoid(float(v)) for v in np.ravel(real)]
    f = [neg_log_sigmoid(-float(v)) for v in np.ravel(fake)]
    return sum(r) / len(r) + sum(f) / len(f)


def _gauss2d(size, sigma):
    c = (size - 1) / 2.0
    w = [[math.exp(-((i - c) ** 2 + (j - c) ** 2) / (2 * sigma * sigma)) for j in range(size)] for i in range(size)]
    s = sum(map(sum, w))
    return [[v / s for v in row] for row in w]


def ssim_loops(a, b, size=11, sigma=1.5, data_range=1.0):
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    w = _gauss2d(size, sigma)
    H, W = a.shape
    vals = []
    for i in range(H - size + 1):
        for j in range(W - size + 1):
            mu_a = mu_b = 0.0
            for p in range(size):
                for q in range(size):
                    mu_a += w[p][q] * a[i + p, j + q]
                    mu_b += w[p][q] * b[i + p, j + q]
            va = vb = cov = 0.0
            for p in range(size):
                for q in range(size):
                    da = a[i + p, j + q] - mu_a
                    db = b[i + p, j + q] - mu_b
                    va += w[p][q] * da * da
                    vb += w[p][q] * db * db
                    cov += w[p][q] * da * db
            vals.append(((2 * mu_a * mu_b + c1) * (2 * cov + c2))
                        / ((mu_a ** 2 + mu_b ** 2 + c1) * (va + vb + c2)))
    return sum(vals) / len(vals)


def uqi_loops(a, b, size=8):
    """Wang-Bovik index with unbiased window statistics."""
    H, W = a.shape
    N = size * size
    vals = []
    for i in range(H - size + 1):
        for j in range(W - size + 1):
            pa = [float(a[i + p, j + q]) for p in range(size) for q in range(size)]
            pb = [float(b[i + p, j + q]) for p in range(size) for q in range(size)]
            ma, mb = sum(pa) / N, sum(pb) / N
            va = sum((u - ma) ** 2 for u in pa) / (N - 1)
            vb = sum((v - mb) ** 2 for v in pb) / (N - 1)
            cov = sum((u - ma) * (v - mb) for u, v in zip(pa, pb)) / (N - 1)
            den = (va + vb) * (ma * ma + mb * mb)
            if den == 0:
                vals.append(1.0 if va == vb == 0 and ma == mb else 0.0)
            else:
                vals.append(4 * cov * ma * mb / den)
    return sum(vals) / len(vals)


def mean_std(values):
    n = len(values)
    m = sum(values) / n
    return m, math.sqrt(sum((v - m) ** 2 for v in values) / n)
