"""Generator, discriminator and fixed feature extractor.

All networks are pure: parameters live in a :class:`ParamStore` passed to
``forward``/``backward``, and train-mode batch-norm statistics come back in
the returned tape instead of being written into the store.

Layer recipes
-------------
U-net (depth ``D``, channels ``c_k = min(base * 2**(k-1), cap)``):

* ``enc1..encD``: 4x4 conv, stride 2, pad 1, batch norm (not on ``enc1``),
  leaky ReLU 0.2.
* ``decD..dec2``: 4x4 transposed conv, stride 2, pad 1, batch norm, ReLU.
  ``decD`` reads the bottleneck ``encD``; ``dec_k`` (k < D) reads
  ``concat(dec_{k+1}, enc_k)`` along channels.
* ``dec1``: 4x4 transposed conv to ``out_channels``, tanh, no batch norm.

Patch discriminator: ``disc1..discL`` 4x4 stride-2 convs with leaky ReLU
(batch norm from layer 2 on), then ``proj``, a 3x3 stride-1 conv to one
logit channel. Feature level 0 is the raw candidate image, levels 1..L the
post-activation hidden maps.

Fixed extractor: three 3x3 stride-2 convs with ReLU and He-scaled seeded
weights. It is never trained.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import ops
from .prng import Prng, derive_seed, sample_normal

INIT_STD = 0.02
_BUFFER_SUFFIXES = (".running_mean", ".running_var")


class ParamStore(dict):
    """Ordered name -> array mapping.

    Insertion order is the canonical order used for initialization draws and
    checkpoint serialization. Batch-norm running statistics are stored here
    too but are not trainable.
    """

    def copy(self) -> "ParamStore":
        return ParamStore((k, v.copy()) for k, v in self.items())

    def astype(self, dtype) -> "ParamStore":
        return ParamStore((k, v.astype(dtype)) for k, v in self.items())

    def trainable_names(self) -> list[str]:
        return [k for k in self if not k.endswith(_BUFFER_SUFFIXES)]

    def num_trainable(self) -> int:
        return sum(self[k].size for k in self.trainable_names())

    def digest(self) -> str:
        h = hashlib.sha256()
        for k, v in self.items():
            h.update(k.encode())
            h.update(np.ascontiguousarray(v).tobytes())
        return h.hexdigest()


class FeatureStack(list):
    """Feature maps of one network evaluation, shallowest first."""

    @property
    def dims(self) -> list[tuple[int, int, int]]:
        return [tuple(f.shape[1:]) for f in self]


@dataclass
class Tape:
    """Forward record needed by ``backward`` plus pending batch-norm stats."""

    caches: dict = field(default_factory=dict)
    stats: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# Shared conv block


def _add_conv(store: ParamStore, prng: Prng, prefix: str, kshape, dtype, std=INIT_STD, transpose=False):
    store[f"{prefix}.w"] = sample_normal(prng, 0.0, std, kshape, dtype)
    store[f"{prefix}.b"] = np.zeros(kshape[2] if transpose else kshape[3], dtype)


def _add_bn(store: ParamStore, prefix: str, c: int, dtype):
    store[f"{prefix}.gamma"] = np.ones(c, dtype)
    store[f"{prefix}.beta"] = np.zeros(c, dtype)
    store[f"{prefix}.running_mean"] = np.zeros(c, dtype)
    store[f"{prefix}.running_var"] = np.ones(c, dtype)


def _block_forward(x, params, name, *, transpose, stride, pad, bn, act, training, tape):
    w, b = params[f"{name}.w"], params[f"{name}.b"]
    if transpose:
        z = ops.conv_transpose2d(x, w, b, stride, pad)
    else:
        z = ops.conv2d(x, w, b, stride, pad)
    bn_cache = None
    if bn:
        p = f"{name}.bn"
        z, bn_cache, (rm, rv) = ops.batch_norm(
            z, params[f"{p}.gamma"], params[f"{p}.beta"],
            params[f"{p}.running_mean"], params[f"{p}.running_var"], training=training,
        )
        if training:
            tape.stats[f"{p}.running_mean"] = rm
            tape.stats[f"{p}.running_var"] = rv
    if act == "lrelu":
        y = ops.leaky_relu(z)
    elif act == "relu":
        y = ops.relu(z)
    elif act == "tanh":
        y = ops.tanh(z)
    else:
        y = z
    tape.caches[name] = (x, z, y, bn_cache, transpose, stride, pad, bn, act)
    return y


def _block_backward(gy, params, name, tape, grads):
    x, z, y, bn_cache, transpose, stride, pad, bn, act = tape.caches[name]
    if act == "lrelu":
        gz = ops.leaky_relu_backward(z, gy)
    elif act == "relu":
        gz = ops.relu_backward(z, gy)
    elif act == "tanh":
        gz = ops.tanh_backward(y, gy)
    else:
        gz = gy
    if bn:
        gz, gg, gb = ops.batch_norm_backward(bn_cache, gz)
        grads[f"{name}.bn.gamma"] = gg
        grads[f"{name}.bn.beta"] = gb
    w = params[f"{name}.w"]
    if transpose:
        gx, gw, gbias = ops.conv_transpose2d_backward(x, w, gz, stride, pad)
    else:
        gx, gw, gbias = ops.conv2d_backward(x, w, gz, stride, pad)
    grads[f"{name}.w"] = gw
    grads[f"{name}.b"] = gbias
    return gx


# ---------------------------------------------------------------------------
# U-net and CasNet


@dataclass(frozen=True)
class UNetSpec:
    depth: int = 4
    base_channels: int = 16
    channel_cap: int = 128
    in_channels: int = 1
    out_channels: int = 1

    def channels(self, level: int) -> int:
        if level == 0:
            return self.in_channels
        return min(self.base_channels * 2 ** (level - 1), self.channel_cap)


def unet_param_count(spec: UNetSpec) -> int:
    """Closed-form trainable parameter count (kernels, biases, gamma, beta)."""
    c = [spec.channels(k) for k in range(spec.depth + 1)]
    d = spec.depth
    total = 0
    for k in range(1, d + 1):
        total += 16 * c[k - 1] * c[k] + c[k] + (2 * c[k] if k > 1 else 0)
    for k in range(d, 0, -1):
        cin = c[k] if k == d else 2 * c[k]
        cout = c[k - 1] if k > 1 else spec.out_channels
        total += 16 * cin * cout + cout + (2 * cout if k > 1 else 0)
    return total


class UNet:
    def __init__(self, spec: UNetSpec = UNetSpec()):
        if spec.depth < 1:
            raise ValueError(f"U-net depth must be >= 1, got {spec.depth}")
        self.spec = spec

    def init_params(self, seed: int, dtype=np.float32) -> ParamStore:
        s = self.spec
        prng = Prng(seed)
        store = ParamStore()
        for k in range(1, s.depth + 1):
            _add_conv(store, prng, f"enc{k}", (4, 4, s.channels(k - 1), s.channels(k)), dtype)
            if k > 1:
                _add_bn(store, f"enc{k}.bn", s.channels(k), dtype)
        for k in range(s.depth, 0, -1):
            cin = s.channels(k) if k == s.depth else 2 * s.channels(k)
            cout = s.channels(k - 1) if k > 1 else s.out_channels
            # transposed-conv kernels are [kh, kw, cout, cin]
            _add_conv(store, prng, f"dec{k}", (4, 4, cout, cin), dtype, transpose=True)
            if k > 1:
                _add_bn(store, f"dec{k}.bn", cout, dtype)
        return store

    def check_input(self, x) -> None:
        ops._check_rank4("U-net input", x)
        m = 2 ** self.spec.depth
        if x.shape[1] % m or x.shape[2] % m:
            raise ops.ShapeError(
                f"U-net of depth {self.spec.depth} needs h, w divisible by {m}, got input shape {x.shape}"
            )
        if x.shape[3] != self.spec.in_channels:
            raise ops.ShapeError(f"U-net expects {self.spec.in_channels} input channels, got shape {x.shape}")

    def forward(self, params, x, training: bool = True):
        self.check_input(x)
        d = self.spec.depth
        tape = Tape()
        enc = []
        h = x
        for k in range(1, d + 1):
            h = _block_forward(h, params, f"enc{k}", transpose=False, stride=2, pad=1,
                               bn=k > 1, act="lrelu", training=training, tape=tape)
            enc.append(h)
        h = enc[-1]
        for k in range(d, 0, -1):
            if k < d:
                h = np.concatenate([h, enc[k - 1]], axis=3)
            h = _block_forward(h, params, f"dec{k}", transpose=True, stride=2, pad=1,
                               bn=k > 1, act="relu" if k > 1 else "tanh", training=training, tape=tape)
        return h, tape

    def backward(self, params, tape: Tape, grad_out):
        d = self.spec.depth
        grads = {}
        skip_grads = {}
        g = grad_out
        for k in range(1, d + 1):
            g = _block_backward(g, params, f"dec{k}", tape, grads)
            if k < d:
                c_up = tape.caches[f"dec{k + 1}"][2].shape[3]
                skip_grads[k] = g[..., c_up:]
                g = g[..., :c_up]
        # g is now the gradient reaching enc_D from the decoder side
        for k in range(d, 0, -1):
            if k in skip_grads:
                g = g + skip_grads[k]
            g = _block_backward(g, params, f"enc{k}", tape, grads)
        return g, grads


def unet_forward(y, params, spec: UNetSpec = UNetSpec(), training: bool = False):
    out, _ = UNet(spec).forward(params, y, training)
    return out


@dataclass(frozen=True)
class CasNetSpec:
    n_unets: int = 3
    unet: UNetSpec = UNetSpec()

    def __post_init__(self):
        if self.n_unets < 1:
            raise ValueError(f"n_unets must be >= 1, got {self.n_unets}")
        if self.n_unets > 1 and self.unet.in_channels != self.unet.out_channels:
            raise ValueError(
                f"cascade needs out_channels == in_channels, got {self.unet.out_channels} and {self.unet.in_channels}"
            )


class CasNet:
    """End-to-end chain of U-nets; stage ``i`` refines the output of stage ``i-1``."""

    def __init__(self, spec: CasNetSpec = CasNetSpec()):
        self.spec = spec
        self.unet = UNet(spec.unet)

    def init_params(self, seed: int, dtype=np.float32) -> list[ParamStore]:
        return [self.unet.init_params(derive_seed(seed, i), dtype) for i in range(self.spec.n_unets)]

    def forward(self, params_list, y, training: bool = True):
        """Returns ``(output, intermediates, tapes)``; ``intermediates[-1] is output``."""
        if len(params_list) != self.spec.n_unets:
            raise ValueError(f"expected {self.spec.n_unets} parameter stores, got {len(params_list)}")
        h = y
        outs, tapes = [], []
        for params in params_list:
            h, tape = self.unet.forward(params, h, training)
            outs.append(h)
            tapes.append(tape)
        return h, outs, tapes

    def backward(self, params_list, tapes, grad_out):
        g = grad_out
        grads_list = [None] * len(params_list)
        for i in range(len(params_list) - 1, -1, -1):
            g, grads_list[i] = self.unet.backward(params_list[i], tapes[i], g)
        return g, grads_list


def casnet_forward(y, params_list, spec: CasNetSpec | None = None, training: bool = False):
    spec = spec or CasNetSpec(n_unets=len(params_list))
    out, _, _ = CasNet(spec).forward(params_list, y, training)
    return out


# ---------------------------------------------------------------------------
# Patch discriminator


@dataclass(frozen=True)
class PatchDiscSpec:
    candidate_channels: int = 1
    condition_channels: int = 1
    channels: tuple = (16, 32, 64)

    @property
    def n_hidden(self) -> int:
        return len(self.channels)

    @property
    def downsample(self) -> int:
        return 2 ** len(self.channels)


class PatchDiscriminator:
    def __init__(self, spec: PatchDiscSpec = PatchDiscSpec()):
        if not spec.channels:
            raise ValueError("discriminator needs at least one hidden layer")
        self.spec = spec

    def init_params(self, seed: int, dtype=np.float32) -> ParamStore:
        s = self.spec
        prng = Prng(seed)
        store = ParamStore()
        cin = s.candidate_channels + s.condition_channels
        for i, cout in enumerate(s.channels, start=1):
            _add_conv(store, prng, f"disc{i}", (4, 4, cin, cout), dtype)
            if i > 1:
                _add_bn(store, f"disc{i}.bn", cout, dtype)
            cin = cout
        _add_conv(store, prng, "proj", (3, 3, cin, 1), dtype)
        return store

    def forward(self, params, candidate, condition, training: bool = True):
        """Returns ``(logit_map, features, tape)`` with features ``D_0..D_L``."""
        ops._check_rank4("candidate", candidate)
        ops._check_rank4("condition", condition)
        if candidate.shape[:3] != condition.shape[:3]:
            raise ops.ShapeError(
                f"candidate {candidate.shape} and condition {condition.shape} differ in [n, h, w]"
            )
        m = self.spec.downsample
        if candidate.shape[1] % m or candidate.shape[2] % m:
            raise ops.ShapeError(f"discriminator needs h, w divisible by {m}, got {candidate.shape}")
        tape = Tape()
        h = np.concatenate([candidate, condition], axis=3)
        features = FeatureStack([candidate])
        for i in range(1, self.spec.n_hidden + 1):
            h = _block_forward(h, params, f"disc{i}", transpose=False, stride=2, pad=1,
                               bn=i > 1, act="lrelu", training=training, tape=tape)
            features.append(h)
        logits = _block_forward(h, params, "proj", transpose=False, stride=1, pad=1,
                                bn=False, act="none", training=training, tape=tape)
        return logits, features, tape

    def backward(self, params, tape: Tape, grad_logits=None, feature_grads=None):
        """Backpropagate logit and/or per-level feature gradients.

        ``feature_grads`` is indexed like the feature stack (level 0 = the
        candidate); missing or ``None`` entries contribute nothing. Returns
        ``(grad_candidate, grad_condition, grads)``.
        """
        L = self.spec.n_hidden
        feature_grads = list(feature_grads or [])
        feature_grads += [None] * (L + 1 - len(feature_grads))
        grads = {}
        logit_shape = tape.caches["proj"][2].shape
        g = grad_logits if grad_logits is not None else np.zeros(logit_shape, tape.caches["proj"][2].dtype)
        g = _block_backward(g, params, "proj", tape, grads)
        for i in range(L, 0, -1):
            if feature_grads[i] is not None:
                g = g + feature_grads[i]
            g = _block_backward(g, params, f"disc{i}", tape, grads)
        c = self.spec.candidate_channels
        g_cand, g_cond = g[..., :c], g[..., c:]
        if feature_grads[0] is not None:
            g_cand = g_cand + feature_grads[0]
        return g_cand, g_cond, grads


def patch_score(logit_map) -> np.ndarray:
    """Per-image realness score: mean of sigmoid over all patches."""
    return ops.sigmoid(logit_map).mean(axis=(1, 2, 3))


def patch_disc_forward(candidate, condition, params, spec: PatchDiscSpec = PatchDiscSpec(),
                       training: bool = False):
    logits, features, _ = PatchDiscriminator(spec).forward(params, candidate, condition, training)
    return logits, features


# ---------------------------------------------------------------------------
# Fixed feature extractor


@dataclass(frozen=True)
class FixedExtractorSpec:
    seed: int = 19
    in_channels: int = 1
    channels: tuple = (8, 16, 32)


class FixedExtractor:
    """Frozen random conv stack used for Gram-matrix style features and FPD.

    Weights are drawn once from ``spec.seed`` with std ``sqrt(2 / fan_in)``
    so that ReLU features neither vanish nor explode; biases are zero.
    """

    def __init__(self, spec: FixedExtractorSpec = FixedExtractorSpec(), dtype=np.float32):
        self.spec = spec
        prng = Prng(spec.seed)
        store = ParamStore()
        cin = spec.in_channels
        for i, cout in enumerate(spec.channels, start=1):
            _add_conv(store, prng, f"feat{i}", (3, 3, cin, cout), np.float64, std=np.sqrt(2.0 / (9 * cin)))
            cin = cout
        self._params64 = store
        self.params = store.astype(dtype)

    def params_for(self, dtype) -> ParamStore:
        return self._params64 if np.dtype(dtype) == np.float64 else self.params

    def forward(self, x):
        params = self.params_for(x.dtype)
        tape = Tape()
        feats = FeatureStack()
        h = x
        for i in range(1, len(self.spec.channels) + 1):
            h = _block_forward(h, params, f"feat{i}", transpose=False, stride=2, pad=1,
                               bn=False, act="relu", training=False, tape=tape)
            feats.append(h)
        return feats, tape

    def backward(self, tape: Tape, feature_grads):
        """Gradient w.r.t. the input image; weight gradients are discarded."""
        n = len(self.spec.channels)
        params = self.params_for(tape.caches["feat1"][0].dtype)
        discard = {}
        g = None
        for i in range(n, 0, -1):
            fg = feature_grads[i - 1]
            if fg is not None:
                g = fg if g is None else g + fg
            if g is None:
                continue
            g = _block_backward(g, params, f"feat{i}", tape, discard)
        if g is None:
            return np.zeros_like(tape.caches["feat1"][0])
        return g


def fixed_feature_extract(x, spec: FixedExtractorSpec = FixedExtractorSpec()) -> FeatureStack:
    feats, _ = FixedExtractor(spec, dtype=x.dtype).forward(x)
    return feats
