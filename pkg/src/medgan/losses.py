"""Adversarial, perceptual and style objectives with exact gradients.

Every loss returns ``(value, grads)`` where ``value`` is a Python float and
``grads`` mirrors the differentiable inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ops
from .networks import CasNet, FixedExtractor, PatchDiscriminator


@dataclass
class LossWeights:
    adv: float = 1.0
    percep: tuple = (20.0, 5.0, 5.0, 5.0)
    style: tuple = (10.0, 10.0, 10.0)
    # non-saturating -log D(G(y)) unless set
    saturating: bool = False

    def __post_init__(self):
        self.percep = tuple(float(w) for w in self.percep)
        self.style = tuple(float(w) for w in self.style)
        for w in (self.adv, *self.percep, *self.style):
            if not np.isfinite(w) or w < 0:
                raise ValueError(f"loss weights must be finite and >= 0, got {w}")

    def check_depths(self, disc_hidden: int, extractor_layers: int) -> None:
        if len(self.percep) != disc_hidden + 1:
            raise ValueError(
                f"need {disc_hidden + 1} perceptual weights (level 0 plus {disc_hidden} hidden), got {len(self.percep)}"
            )
        if len(self.style) != extractor_layers:
            raise ValueError(f"need {extractor_layers} style weights, got {len(self.style)}")


def _log_sigmoid_neg(z):
    """``-log(sigmoid(z))`` in the stable softplus form."""
    return ops.softplus(-z)


def adv_loss_d(real_logits, fake_logits):
    """Discriminator loss ``-mean log s(real) - mean log s(-fake)``.

    Returns ``(loss, grad_real, grad_fake)``.
    """
    if real_logits.shape != fake_logits.shape:
        raise ValueError(f"logit maps differ in shape: {real_logits.shape} vs {fake_logits.shape}")
    n = real_logits.size
    loss = float(_log_sigmoid_neg(real_logits).mean() + ops.softplus(fake_logits).mean())
    grad_real = (ops.sigmoid(real_logits) - 1) / n
    grad_fake = ops.sigmoid(fake_logits) / n
    return loss, grad_real, grad_fake


def adv_loss_g(fake_logits, saturating: bool = False):
    """Generator adversarial loss; returns ``(loss, grad)``.

    The default non-saturating form is ``-mean log s(fake)``. The saturating
    form ``mean log(1 - s(fake))`` is the literal min-max objective.
    """
    n = fake_logits.size
    if saturating:
        loss = float(-ops.softplus(fake_logits).mean())
        grad = -ops.sigmoid(fake_logits) / n
    else:
        loss = float(_log_sigmoid_neg(fake_logits).mean())
        grad = (ops.sigmoid(fake_logits) - 1) / n
    return loss, grad


def mae(a, b) -> float:
    return float(np.mean(np.abs(a - b)))


def perceptual_loss(features_fake, features_real, weights):
    """Weighted sum of per-level mean absolute differences.

    Levels with zero weight are skipped entirely (their gradient is
    ``None``). Returns ``(loss, grads_fake)``.
    """
    if len(features_fake) != len(features_real) or len(weights) != len(features_fake):
        raise ValueError(
            f"level counts differ: fake {len(features_fake)}, real {len(features_real)}, weights {len(weights)}"
        )
    total = 0.0
    grads = []
    for i, (a, b, w) in enumerate(zip(features_fake, features_real, weights)):
        if a.shape != b.shape:
            raise ValueError(f"feature level {i} shapes differ: {a.shape} vs {b.shape}")
        if w == 0:
            grads.append(None)
            continue
        diff = a - b
        total += w * float(np.mean(np.abs(diff)))
        grads.append((w / diff.size) * np.sign(diff))
    return total, grads


def gram_matrix(V):
    """Batch-averaged Gram matrix of ``V [n, h, w, d]``.

    Entry ``(m, k)`` is ``sum_{h,w} V[h,w,m] V[h,w,k] / (h w d)``, averaged
    over the batch. The upper triangle is mirrored so the result is exactly
    symmetric.
    """
    n, h, w, d = V.shape
    flat = V.reshape(n * h * w, d)
    G = (flat.T @ flat) / (n * h * w * d)
    upper = np.triu(G)
    return upper + np.triu(G, 1).T


def gram_matrix_backward(V, grad_G):
    n, h, w, d = V.shape
    sym = grad_G + grad_G.T
    return (V.reshape(-1, d) @ sym).reshape(V.shape) / (n * h * w * d)


def style_loss_from_features(feats_fake, feats_real, weights):
    """Returns ``(loss, grads_fake)``; zero-weight layers are skipped."""
    total = 0.0
    grads = []
    for Vf, Vr, w in zip(feats_fake, feats_real, weights):
        if w == 0:
            grads.append(None)
            continue
        d = Vf.shape[3]
        diff = gram_matrix(Vf) - gram_matrix(Vr)
        scale = w / (4.0 * d * d)
        total += scale * float(np.sum(diff * diff))
        grads.append(gram_matrix_backward(Vf, 2.0 * scale * diff))
    return total, grads


def style_loss(x_hat, x, extractor: FixedExtractor, weights):
    """Gram-matrix style loss and its gradient w.r.t. ``x_hat``."""
    if x_hat.shape != x.shape:
        raise ValueError(f"style loss inputs differ in shape: {x_hat.shape} vs {x.shape}")
    if len(weights) != len(extractor.spec.channels):
        raise ValueError(f"need {len(extractor.spec.channels)} style weights, got {len(weights)}")
    if not any(weights):
        return 0.0, np.zeros_like(x_hat)
    ff, tape = extractor.forward(x_hat)
    fr, _ = extractor.forward(x)
    loss, fgrads = style_loss_from_features(ff, fr, weights)
    return loss, extractor.backward(tape, fgrads)


@dataclass
class GeneratorTerms:
    total: float
    adv: float = 0.0
    percep: float = 0.0
    style: float = 0.0
    grad_output: np.ndarray | None = field(default=None, repr=False)
    d_grads: dict = field(default_factory=dict, repr=False)


def generator_output_loss(x_hat, y, x, disc: PatchDiscriminator | None, d_params,
                          extractor: FixedExtractor | None, weights: LossWeights) -> GeneratorTerms:
    """Composite objective evaluated on a generator output ``x_hat``.

    ``total = adv_w * adv + percep + style``. Terms whose weights are all
    zero are not evaluated and contribute an exact 0.0; the discriminator is
    only run when the adversarial term or a hidden perceptual level is
    active. ``grad_output`` is the gradient w.r.t. ``x_hat``.
    """
    percep_w = weights.percep
    need_disc = weights.adv != 0 or any(percep_w[1:])
    grad = np.zeros_like(x_hat)
    adv = percep = style = 0.0

    if need_disc:
        logits_f, feats_f, tape_f = disc.forward(d_params, x_hat, y, training=True)
        _, feats_r, _ = disc.forward(d_params, x, y, training=True)
        g_logits = None
        if weights.adv != 0:
            adv, g_logits = adv_loss_g(logits_f, weights.saturating)
            g_logits = weights.adv * g_logits
        percep, pgrads = perceptual_loss(feats_f, feats_r, percep_w)
        g_cand, _, _ = disc.backward(d_params, tape_f, g_logits, pgrads)
        grad += g_cand
    elif percep_w[0] != 0:
        # level 0 of the discriminator stack is the raw image itself
        percep, pgrads = perceptual_loss([x_hat], [x], percep_w[:1])
        grad += pgrads[0]

    if any(weights.style):
        style, g_style = style_loss(x_hat, x, extractor, weights.style)
        grad += g_style

    total = weights.adv * adv + percep + style
    return GeneratorTerms(total=total, adv=adv, percep=percep, style=style, grad_output=grad)


def generator_objective(y, x, g_params, d_params, weights: LossWeights, *, casnet: CasNet,
                        disc: PatchDiscriminator | None, extractor: FixedExtractor | None,
                        training: bool = True):
    """Full generator loss and gradients w.r.t. the generator parameters only.

    Returns ``(terms, g_grads_list, x_hat, g_tapes)``. Discriminator and
    extractor parameters are read but never modified.
    """
    x_hat, _, tapes = casnet.forward(g_params, y, training)
    terms = generator_output_loss(x_hat, y, x, disc, d_params, extractor, weights)
    _, g_grads = casnet.backward(g_params, tapes, terms.grad_output)
    return terms, g_grads, x_hat, tapes
