"""Digital, noise-free, double-precision CNN forward/backward reference.

This is the correctness oracle the analog pipeline is tested against:
plain convolution / ReLU / max-pool / dense layers, backpropagation with
argmax-routed pooling gradients, and vanilla mini-batch gradient descent.
Implementations favour clarity over speed (kernel-offset loops around
einsum); brute-force nested-loop references live in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .device import ConfigError, derive_rng


@dataclass
class KernelWeights:
    """One convolution layer: kernels[n][m][i][j], per-kernel bias, stride, pad."""

    kernels: np.ndarray  # (out_channels, in_channels, F1, F2)
    bias: np.ndarray  # (out_channels,)
    stride: tuple[int, int] = (1, 1)
    padding: int = 0

    def __post_init__(self) -> None:
        if self.kernels.ndim != 4:
            raise ConfigError(f"kernels must be 4-d, got shape {self.kernels.shape}")
        f1, f2 = self.kernels.shape[2], self.kernels.shape[3]
        if f1 < 1 or f2 < 1:
            raise ConfigError(f"kernel spatial extents must be >= 1, got {f1}x{f2}")
        if self.stride[0] < 1 or self.stride[1] < 1:
            raise ConfigError(f"stride components must be >= 1, got {self.stride}")
        if self.padding < 0:
            raise ConfigError(f"padding must be >= 0, got {self.padding}")


@dataclass
class FcWeights:
    """One dense layer: weight (out, in) and bias (out,)."""

    weight: np.ndarray
    bias: np.ndarray


@dataclass
class TrainingParams:
    learning_rate: float = 0.1
    batch_size: int = 10
    epochs: int = 3
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")


def conv_output_shape(in_shape, kw: KernelWeights):
    """(channels, H, W) -> conv output shape, validating wiring."""
    m, h, w = in_shape
    n, km, f1, f2 = kw.kernels.shape
    if km != m:
        raise ConfigError(f"input has {m} channels but kernels expect {km}")
    p, s1, s2 = kw.padding, kw.stride[0], kw.stride[1]
    oh = (h + 2 * p - f1) // s1 + 1
    ow = (w + 2 * p - f2) // s2 + 1
    if h + 2 * p < f1 or w + 2 * p < f2:
        raise ConfigError(f"spatial extent {h}x{w} (pad {p}) smaller than kernel {f1}x{f2}")
    return (n, oh, ow)


def conv2d_ideal(x: np.ndarray, kw: KernelWeights) -> np.ndarray:
    """Cross-correlation of a (M, H, W) input with kernels plus bias."""
    n, oh, ow = conv_output_shape(x.shape, kw)
    f1, f2 = kw.kernels.shape[2], kw.kernels.shape[3]
    s1, s2 = kw.stride
    p = kw.padding
    xp = np.pad(x, ((0, 0), (p, p), (p, p))) if p else x
    out = np.zeros((n, oh, ow), dtype=np.float64)
    for i in range(f1):
        for j in range(f2):
            window = xp[:, i : i + s1 * oh : s1, j : j + s2 * ow : s2]
            out += np.einsum("nm,mpq->npq", kw.kernels[:, :, i, j], window)
    return out + kw.bias[:, None, None]


def relu_ideal(z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0)


def maxpool_ideal(x: np.ndarray, window: int = 2, stride: int = 2):
    """2x2/stride-2 max pool; returns (pooled, argmax map for routing).

    Odd extents are padded with -inf so the pad can never win; ties break
    first-in-scan-order.  The argmax map holds the flat in-window winner
    index (0..window**2-1) per output element.
    """
    if window != stride:
        raise ConfigError("pooling window and stride must match")
    c, h, w = x.shape
    ph, pw = -(-h // window), -(-w // window)
    if h % window or w % window:
        xp = np.full((c, ph * window, pw * window), -np.inf)
        xp[:, :h, :w] = x
        x = xp
    blocks = x.reshape(c, ph, window, pw, window).transpose(0, 1, 3, 2, 4).reshape(c, ph, pw, window * window)
    argmax = blocks.argmax(axis=3)  # first max wins ties
    pooled = np.take_along_axis(blocks, argmax[..., None], axis=3)[..., 0]
    return pooled, argmax


def maxpool_backward(delta: np.ndarray, argmax: np.ndarray, in_shape, window: int = 2):
    """Scatter pooled gradients back to the winning input positions."""
    c, h, w = in_shape
    ph, pw = delta.shape[1], delta.shape[2]
    grad_blocks = np.zeros((c, ph, pw, window * window))
    np.put_along_axis(grad_blocks, argmax[..., None], delta[..., None], axis=3)
    grad = grad_blocks.reshape(c, ph, pw, window, window).transpose(0, 1, 3, 2, 4).reshape(c, ph * window, pw * window)
    return grad[:, :h, :w]


def fc_ideal(x: np.ndarray, weight: np.ndarray) -> np.ndarray:
    """Dense matrix-vector product (bias handled by the layer wrapper)."""
    if weight.shape[1] != x.shape[0]:
        raise ConfigError(f"dense weight expects {weight.shape[1]} inputs, got {x.shape[0]}")
    return weight @ x


def conv_backward_input(delta: np.ndarray, kw: KernelWeights, in_shape) -> np.ndarray:
    """Transposed convolution: route output deltas back to the input."""
    m, h, w = in_shape
    f1, f2 = kw.kernels.shape[2], kw.kernels.shape[3]
    s1, s2 = kw.stride
    p = kw.padding
    oh, ow = delta.shape[1], delta.shape[2]
    gx = np.zeros((m, h + 2 * p, w + 2 * p))
    for i in range(f1):
        for j in range(f2):
            gx[:, i : i + s1 * oh : s1, j : j + s2 * ow : s2] += np.einsum(
                "nm,npq->mpq", kw.kernels[:, :, i, j], delta
            )
    if p:
        gx = gx[:, p : p + h, p : p + w]
    return gx


def conv_backward_weights(delta: np.ndarray, x: np.ndarray, kw: KernelWeights):
    """Kernel/bias gradients, accumulated over all positions sharing a weight."""
    f1, f2 = kw.kernels.shape[2], kw.kernels.shape[3]
    s1, s2 = kw.stride
    p = kw.padding
    oh, ow = delta.shape[1], delta.shape[2]
    xp = np.pad(x, ((0, 0), (p, p), (p, p))) if p else x
    dw = np.zeros_like(kw.kernels)
    for i in range(f1):
        for j in range(f2):
            window = xp[:, i : i + s1 * oh : s1, j : j + s2 * ow : s2]
            dw[:, :, i, j] = np.einsum("npq,mpq->nm", delta, window)
    db = delta.sum(axis=(1, 2))
    return dw, db


@dataclass
class CnnParams:
    """All learnable weights: conv stages (lists of conv layers) then dense."""

    stages: list[list[KernelWeights]]
    fc: list[FcWeights]

    def copy(self) -> "CnnParams":
        return CnnParams(
            [
                [KernelWeights(k.kernels.copy(), k.bias.copy(), k.stride, k.padding) for k in stage]
                for stage in self.stages
            ],
            [FcWeights(f.weight.copy(), f.bias.copy()) for f in self.fc],
        )


def init_cnn_params(net, seed: int) -> CnnParams:
    """He-style uniform initialization of all layers of a parsed network."""
    stages = []
    layer_idx = 0
    for spec_stage in net.conv_layer_plan():
        stage = []
        for in_ch, out_ch, f in spec_stage:
            rng = derive_rng(seed, "init", layer_idx)
            limit = np.sqrt(6.0 / (in_ch * f * f))
            kernels = rng.uniform(-limit, limit, size=(out_ch, in_ch, f, f))
            stage.append(KernelWeights(kernels, np.zeros(out_ch), (1, 1), (f - 1) // 2))
            layer_idx += 1
        stages.append(stage)
    fc = []
    for in_dim, out_dim in net.fc_layer_plan():
        rng = derive_rng(seed, "init", layer_idx)
        limit = np.sqrt(6.0 / in_dim)
        fc.append(FcWeights(rng.uniform(-limit, limit, size=(out_dim, in_dim)), np.zeros(out_dim)))
        layer_idx += 1
    return CnnParams(stages, fc)


@dataclass
class StageCache:
    conv_inputs: list  # input tensor of each conv layer in the stage
    conv_outs: list  # pre-activation output of each conv layer
    relu_mask: np.ndarray  # derivative of the activation (entries 0/1)
    relu_out: np.ndarray
    pool_argmax: np.ndarray
    pooled: np.ndarray


@dataclass
class FcCache:
    x: np.ndarray
    z: np.ndarray
    mask: np.ndarray
    out: np.ndarray


@dataclass
class ForwardCache:
    sample: np.ndarray
    stages: list = field(default_factory=list)
    fc: list = field(default_factory=list)
    scores: np.ndarray | None = None


def forward_ideal(sample: np.ndarray, params: CnnParams) -> tuple[np.ndarray, ForwardCache]:
    """Full forward pass caching everything the backward pass needs.

    Stage structure: back-to-back convolutions, one ReLU, one 2x2 pool.
    Dense layers each apply ReLU; the classifier scores are the activated
    output of the last dense layer.
    """
    cache = ForwardCache(sample=sample)
    a = sample
    for stage in params.stages:
        conv_inputs, conv_outs = [], []
        for kw in stage:
            conv_inputs.append(a)
            a = conv2d_ideal(a, kw)
            conv_outs.append(a)
        mask = (a > 0).astype(np.float64)
        relu_out = relu_ideal(a)
        pooled, argmax = maxpool_ideal(relu_out)
        cache.stages.append(StageCache(conv_inputs, conv_outs, mask, relu_out, argmax, pooled))
        a = pooled
    a = a.reshape(-1)
    for layer in params.fc:
        z = fc_ideal(a, layer.weight) + layer.bias
        mask = (z > 0).astype(np.float64)
        out = relu_ideal(z)
        cache.fc.append(FcCache(a, z, mask, out))
        a = out
    cache.scores = a
    return a, cache


def cost_mse(scores: np.ndarray, target: np.ndarray) -> float:
    """Quadratic cost 0.5 * ||scores - target||^2."""
    d = scores - target
    return 0.5 * float(d @ d)


@dataclass
class Gradients:
    """Per-layer weight/bias gradients plus the error signals that made them."""

    stages: list  # list of list of (dW, db)
    fc: list  # list of (dW, db)
    deltas: dict  # layer label -> delta tensor


def backward_ideal(cache: ForwardCache, target: np.ndarray, params: CnnParams) -> Gradients:
    """Backpropagate the quadratic cost through the cached forward pass."""
    if cache.scores is None or not cache.fc and not cache.stages:
        raise ConfigError("backward pass requires a complete forward cache")
    if target.shape != cache.scores.shape:
        raise ConfigError(f"target shape {target.shape} != scores shape {cache.scores.shape}")
    deltas = {}
    fc_grads = [None] * len(params.fc)
    delta = (cache.scores - target) * cache.fc[-1].mask
    for li in range(len(params.fc) - 1, -1, -1):
        fcc = cache.fc[li]
        deltas[f"fc{li}"] = delta
        fc_grads[li] = (np.outer(delta, fcc.x), delta.copy())
        if li > 0:
            delta = (params.fc[li].weight.T @ delta) * cache.fc[li - 1].mask
        else:
            delta = params.fc[0].weight.T @ delta  # into the flattened features
    stage_grads = [None] * len(params.stages)
    delta = delta.reshape(cache.stages[-1].pooled.shape)
    for si in range(len(params.stages) - 1, -1, -1):
        sc = cache.stages[si]
        stage = params.stages[si]
        relu_in_shape = sc.relu_out.shape
        delta = maxpool_backward(delta, sc.pool_argmax, relu_in_shape)
        delta = delta * sc.relu_mask
        grads = [None] * len(stage)
        for ci in range(len(stage) - 1, -1, -1):
            deltas[f"stage{si}.conv{ci}"] = delta
            grads[ci] = conv_backward_weights(delta, sc.conv_inputs[ci], stage[ci])
            delta = conv_backward_input(delta, stage[ci], sc.conv_inputs[ci].shape)
            # stacked convolutions have no activation between them
        stage_grads[si] = grads
    return Gradients(stage_grads, fc_grads, deltas)


def accumulate_gradients(total: Gradients | None, g: Gradients) -> Gradients:
    if total is None:
        return Gradients(
            [[(dw.copy(), db.copy()) for dw, db in stage] for stage in g.stages],
            [(dw.copy(), db.copy()) for dw, db in g.fc],
            {},
        )
    for sa, sb in zip(total.stages, g.stages):
        for (dwa, dba), (dwb, dbb) in zip(sa, sb):
            dwa += dwb
            dba += dbb
    for (dwa, dba), (dwb, dbb) in zip(total.fc, g.fc):
        dwa += dwb
        dba += dbb
    return total


def sgd_step_ideal(params: CnnParams, grad_sum: Gradients, tparams: TrainingParams, m: int | None = None) -> CnnParams:
    """w <- w - (eta/m) * sum of per-sample gradients (likewise biases)."""
    m = m if m is not None else tparams.batch_size
    scale = tparams.learning_rate / m
    out = params.copy()
    for stage, gstage in zip(out.stages, grad_sum.stages):
        for kw, (dw, db) in zip(stage, gstage):
            kw.kernels -= scale * dw
            kw.bias -= scale * db
    for layer, (dw, db) in zip(out.fc, grad_sum.fc):
        layer.weight -= scale * dw
        layer.bias -= scale * db
    return out
