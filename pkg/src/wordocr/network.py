"""Convolutional feature extractor + two bidirectional recurrent layers + softmax.

Everything is plain numpy with hand-written reverse mode. Parameters live in
an ordered ``dict[str, ndarray]``; the structure (cell type, layer count,
widths) is recoverable from the array shapes, so the functions here only
need the dictionary.

Shapes are batch-first and channels-last: images ``(B, 50, 200)``, conv
activations ``(B, H, W, C)``, sequences ``(B, T, F)``.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

IMAGE_HEIGHT = 50
IMAGE_WIDTH = 200
N_FRAMES = 25
KERNEL = 3

GATES = {"lstm": 4, "gru": 3}


class NonFiniteError(FloatingPointError):
    def __init__(self, name: str):
        super().__init__(f"non-finite values in {name!r}")
        self.name = name


@dataclass(frozen=True)
class NetworkConfig:
    num_classes: int
    conv_channels: tuple = (16, 32, 48)
    cell: str = "gru"
    hidden: int = 64
    rnn_layers: int = 2
    dtype: str = "float64"

    def __post_init__(self):
        object.__setattr__(self, "conv_channels", tuple(int(c) for c in self.conv_channels))
        if self.cell not in GATES:
            raise ValueError(f"unknown cell {self.cell!r}")
        if self.rnn_layers != 2:
            raise ValueError("the recognizer uses exactly two bidirectional layers")
        if len(self.conv_channels) != 3:
            raise ValueError("three conv blocks are needed to reach 25 frames")
        if self.num_classes < 2 or self.hidden < 1:
            raise ValueError("num_classes must be >= 2 and hidden >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["conv_channels"] = list(self.conv_channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        return cls(**d)


def _glorot(rng, shape, fan_in, fan_out, dtype):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def init_params(config: NetworkConfig, seed: int = 0) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(seed)
    dt = np.dtype(config.dtype)
    params: dict[str, np.ndarray] = {}
    c_in = 1
    for i, c_out in enumerate(config.conv_channels):
        k2 = KERNEL * KERNEL
        params[f"conv{i}_w"] = _glorot(rng, (KERNEL, KERNEL, c_in, c_out),
                                       k2 * c_in, k2 * c_out, dt)
        params[f"conv{i}_b"] = np.zeros(c_out, dtype=dt)
        c_in = c_out

    H = config.hidden
    G = GATES[config.cell]
    d_in = config.conv_channels[-1]
    for layer in range(config.rnn_layers):
        for direction in ("fw", "bw"):
            p = f"rnn{layer}_{direction}"
            # per-gate Glorot bound; gates stacked along the last axis
            params[p + "_wx"] = _glorot(rng, (d_in, G * H), d_in, H, dt)
            params[p + "_wh"] = _glorot(rng, (H, G * H), H, H, dt)
            b = np.zeros(G * H, dtype=dt)
            if config.cell == "lstm":
                b[H:2 * H] = 1.0  # forget gate
            params[p + "_b"] = b
        d_in = 2 * H
    params["proj_w"] = _glorot(rng, (d_in, config.num_classes),
                               d_in, config.num_classes, dt)
    params["proj_b"] = np.zeros(config.num_classes, dtype=dt)
    return params


def infer_config(params: dict[str, np.ndarray]) -> NetworkConfig:
    """Rebuild the config that produced ``params``."""
    convs = tuple(params[f"conv{i}_w"].shape[-1] for i in range(3))
    H = params["rnn0_fw_wh"].shape[0]
    G = params["rnn0_fw_wh"].shape[1] // H
    cell = {v: k for k, v in GATES.items()}[G]
    layers = sum(1 for k in params if k.endswith("_fw_wh"))
    return NetworkConfig(num_classes=params["proj_b"].shape[0], conv_channels=convs,
                         cell=cell, hidden=H, rnn_layers=layers,
                         dtype=str(params["proj_b"].dtype))


def _check(name, arr):
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(name)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def softmax(logits):
    e = np.exp(logits - logits.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


# -- convolution blocks -----------------------------------------------------

def _im2col(x):
    """Same-padded 3x3 patches: ``(B, H, W, C)`` -> ``(B*H*W, 9*C)``."""
    B, H, W, C = x.shape
    xp = np.zeros((B, H + 2, W + 2, C), dtype=x.dtype)
    xp[:, 1:-1, 1:-1] = x
    win = sliding_window_view(xp, (KERNEL, KERNEL), axis=(1, 2))  # (B, H, W, C, ky, kx)
    return np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(B * H * W, -1)


def _conv_input_grad(dz2, w, shape):
    """Gradient w.r.t. the conv input, accumulated one kernel offset at a time."""
    B, H, W, C = shape
    dxp = np.zeros((B, H + 2, W + 2, C), dtype=dz2.dtype)
    for ky in range(KERNEL):
        for kx in range(KERNEL):
            dxp[:, ky:ky + H, kx:kx + W] += (dz2 @ w[ky, kx].T).reshape(shape)
    return dxp[:, 1:-1, 1:-1]


_POOL_OFFSETS = ((0, 0), (0, 1), (1, 0), (1, 1))


def _maxpool_forward(x):
    """2x2 max pool (floor). ``idx`` names the first maximal element per window."""
    H2, W2 = x.shape[1] // 2, x.shape[2] // 2
    v = [x[:, dy:2 * H2:2, dx:2 * W2:2] for dy, dx in _POOL_OFFSETS]
    top, bottom = np.maximum(v[0], v[1]), np.maximum(v[2], v[3])
    # strict comparisons keep the earlier element on ties
    lower = bottom > top
    out = np.where(lower, bottom, top)
    idx = np.where(lower, (v[3] > v[2]).view(np.int8) + np.int8(2), (v[1] > v[0]).view(np.int8))
    return out, idx


def _maxpool_backward(dout, idx, shape):
    H2, W2 = shape[1] // 2, shape[2] // 2
    dx = np.zeros(shape, dtype=dout.dtype)
    for k, (dy, dxo) in enumerate(_POOL_OFFSETS):
        np.multiply(dout, idx == k, out=dx[:, dy:2 * H2:2, dxo:2 * W2:2])
    return dx


def _features_forward(params, images):
    x = images[..., None]
    cache = []
    for i in range(3):
        w = params[f"conv{i}_w"]
        B, H, W, C = x.shape
        cols = _im2col(x)
        z = cols @ w.reshape(-1, w.shape[-1])
        z += params[f"conv{i}_b"]
        z = z.reshape(B, H, W, -1)
        # max pool commutes with ReLU, so pooling first is the same function
        pooled, idx = _maxpool_forward(z)
        a = np.maximum(pooled, 0.0)
        cache.append((x.shape, cols, z.shape, idx, pooled > 0))
        x = a
    feats = x.mean(axis=1)  # (B, 25, F): collapse remaining height rows
    return feats, (cache, x.shape)


def _features_backward(params, dfeats, fcache, grads):
    cache, last_shape = fcache
    dx = np.broadcast_to(dfeats[:, None, :, :] / last_shape[1], last_shape)
    for i in reversed(range(3)):
        x_shape, cols, z_shape, idx, active = cache[i]
        w = params[f"conv{i}_w"]
        dz = _maxpool_backward(dx * active, idx, z_shape)
        dz2 = dz.reshape(-1, z_shape[-1])
        grads[f"conv{i}_w"] = (cols.T @ dz2).reshape(w.shape)
        grads[f"conv{i}_b"] = dz2.sum(axis=0)
        if i > 0:
            dx = _conv_input_grad(dz2, w, x_shape)


def extract_features(params, image) -> np.ndarray:
    """Map one normalized 50x200 image to a ``(25, F)`` left-to-right sequence."""
    image = np.asarray(image)
    if image.shape != (IMAGE_HEIGHT, IMAGE_WIDTH):
        raise ValueError(f"expected image shape (50, 200), got {image.shape}")
    feats, _ = _features_forward(params, image[None].astype(params["conv0_w"].dtype))
    return feats[0]


# -- recurrent cells ----------------------------------------------------------

def rnn_cell_step(cell, weights, x, state):
    """One time step. ``weights = (wx, wh, b)`` with gates stacked on the last axis.

    LSTM state is ``(h, c)`` with gate order input, forget, candidate, output;
    GRU state is ``h`` with gate order update, reset, candidate.
    Works on single vectors or on batches of row vectors.
    """
    wx, wh, b = weights
    if cell == "lstm":
        h, c = state
        H = h.shape[-1]
        if wx.shape[0] != x.shape[-1] or wh.shape != (H, 4 * H):
            raise ValueError("dimension mismatch in LSTM step")
        a = x @ wx + h @ wh + b
        i, f, o = sigmoid(a[..., :H]), sigmoid(a[..., H:2 * H]), sigmoid(a[..., 3 * H:])
        g = np.tanh(a[..., 2 * H:3 * H])
        c_new = f * c + i * g
        return o * np.tanh(c_new), c_new
    if cell == "gru":
        h = state
        H = h.shape[-1]
        if wx.shape[0] != x.shape[-1] or wh.shape != (H, 3 * H):
            raise ValueError("dimension mismatch in GRU step")
        ax = x @ wx + b
        zr = sigmoid(ax[..., :2 * H] + h @ wh[:, :2 * H])
        z, r = zr[..., :H], zr[..., H:]
        cand = np.tanh(ax[..., 2 * H:] + (r * h) @ wh[:, 2 * H:])
        return (1.0 - z) * h + z * cand
    raise ValueError(f"unknown cell {cell!r}")


def _lstm_sweep(xw, wh):
    """Run an LSTM over ``xw = x @ wx + b`` of shape ``(B, T, 4H)``."""
    B, T, _ = xw.shape
    H = wh.shape[0]
    h = np.zeros((B, H), dtype=xw.dtype)
    c = np.zeros((B, H), dtype=xw.dtype)
    hs = np.empty((B, T, H), dtype=xw.dtype)
    cs = np.empty((B, T, H), dtype=xw.dtype)
    acts = np.empty((B, T, 4 * H), dtype=xw.dtype)
    for t in range(T):
        a = xw[:, t] + h @ wh
        act = acts[:, t]
        act[:, :2 * H] = sigmoid(a[:, :2 * H])
        act[:, 2 * H:3 * H] = np.tanh(a[:, 2 * H:3 * H])
        act[:, 3 * H:] = sigmoid(a[:, 3 * H:])
        c = act[:, H:2 * H] * c + act[:, :H] * act[:, 2 * H:3 * H]
        h = act[:, 3 * H:] * np.tanh(c)
        hs[:, t] = h
        cs[:, t] = c
    return hs, (hs, cs, acts)


def _lstm_sweep_backward(dhs, wh, cache):
    hs, cs, acts = cache
    B, T, H = hs.shape
    dxw = np.empty_like(acts)
    dh_next = np.zeros((B, H), dtype=hs.dtype)
    dc_next = np.zeros((B, H), dtype=hs.dtype)
    zeros = np.zeros((B, H), dtype=hs.dtype)
    for t in reversed(range(T)):
        i, f, g, o = (acts[:, t, k * H:(k + 1) * H] for k in range(4))
        c = cs[:, t]
        c_prev = cs[:, t - 1] if t > 0 else zeros
        dh = dhs[:, t] + dh_next
        tc = np.tanh(c)
        dc = dc_next + dh * o * (1.0 - tc * tc)
        da = dxw[:, t]
        da[:, :H] = dc * g * i * (1.0 - i)
        da[:, H:2 * H] = dc * c_prev * f * (1.0 - f)
        da[:, 2 * H:3 * H] = dc * i * (1.0 - g * g)
        da[:, 3 * H:] = dh * tc * o * (1.0 - o)
        dc_next = dc * f
        dh_next = da @ wh.T
    h_prev = np.concatenate([np.zeros((B, 1, H), dtype=hs.dtype), hs[:, :-1]], axis=1)
    dwh = h_prev.reshape(-1, H).T @ dxw.reshape(-1, 4 * H)
    return dxw, dwh


def _gru_sweep(xw, wh):
    B, T, _ = xw.shape
    H = wh.shape[0]
    h = np.zeros((B, H), dtype=xw.dtype)
    hs = np.empty((B, T, H), dtype=xw.dtype)
    zrs = np.empty((B, T, 2 * H), dtype=xw.dtype)
    cands = np.empty((B, T, H), dtype=xw.dtype)
    for t in range(T):
        zr = sigmoid(xw[:, t, :2 * H] + h @ wh[:, :2 * H])
        cand = np.tanh(xw[:, t, 2 * H:] + (zr[:, H:] * h) @ wh[:, 2 * H:])
        z = zr[:, :H]
        h = (1.0 - z) * h + z * cand
        hs[:, t] = h
        zrs[:, t] = zr
        cands[:, t] = cand
    return hs, (hs, zrs, cands)


def _gru_sweep_backward(dhs, wh, cache):
    hs, zrs, cands = cache
    B, T, H = hs.shape
    dxw = np.empty((B, T, 3 * H), dtype=hs.dtype)
    dwh = np.zeros_like(wh)
    wh_zr, wh_c = wh[:, :2 * H], wh[:, 2 * H:]
    dh_next = np.zeros((B, H), dtype=hs.dtype)
    zeros = np.zeros((B, H), dtype=hs.dtype)
    for t in reversed(range(T)):
        z, r = zrs[:, t, :H], zrs[:, t, H:]
        cand = cands[:, t]
        h_prev = hs[:, t - 1] if t > 0 else zeros
        dh = dhs[:, t] + dh_next
        dz = dh * (cand - h_prev)
        dac = dh * z * (1.0 - cand * cand)
        drh = dac @ wh_c.T
        da_z = dz * z * (1.0 - z)
        da_r = drh * h_prev * r * (1.0 - r)
        da = dxw[:, t]
        da[:, :H] = da_z
        da[:, H:2 * H] = da_r
        da[:, 2 * H:] = dac
        dwh[:, 2 * H:] += (r * h_prev).T @ dac
        dwh[:, :2 * H] += h_prev.T @ da[:, :2 * H]
        dh_next = dh * (1.0 - z) + drh * r + da[:, :2 * H] @ wh_zr.T
    return dxw, dwh


_SWEEPS = {"lstm": (_lstm_sweep, _lstm_sweep_backward),
           "gru": (_gru_sweep, _gru_sweep_backward)}


def _cell_of(params):
    wh = params["rnn0_fw_wh"]
    return {4: "lstm", 3: "gru"}[wh.shape[1] // wh.shape[0]]


def _birnn_forward(params, feats):
    cell = _cell_of(params)
    sweep = _SWEEPS[cell][0]
    x = feats
    cache = []
    layer = 0
    while f"rnn{layer}_fw_wx" in params:
        outs, lcache = [], []
        for direction in ("fw", "bw"):
            p = f"rnn{layer}_{direction}"
            xin = x if direction == "fw" else x[:, ::-1]
            xw = xin @ params[p + "_wx"] + params[p + "_b"]
            hs, scache = sweep(xw, params[p + "_wh"])
            outs.append(hs if direction == "fw" else hs[:, ::-1])
            lcache.append((xin, scache))
        cache.append((x, lcache))
        x = np.concatenate(outs, axis=-1)
        layer += 1
    return x, cache


def _birnn_backward(params, dout, cache, grads):
    backward = _SWEEPS[_cell_of(params)][1]
    for layer in reversed(range(len(cache))):
        x, lcache = cache[layer]
        H = params[f"rnn{layer}_fw_wh"].shape[0]
        dx = np.zeros_like(x)
        for d, direction in enumerate(("fw", "bw")):
            p = f"rnn{layer}_{direction}"
            xin, scache = lcache[d]
            dh = dout[..., d * H:(d + 1) * H]
            if direction == "bw":
                dh = dh[:, ::-1]
            dxw, dwh = backward(dh, params[p + "_wh"], scache)
            flat = dxw.reshape(-1, dxw.shape[-1])
            grads[p + "_wx"] = xin.reshape(-1, xin.shape[-1]).T @ flat
            grads[p + "_wh"] = dwh
            grads[p + "_b"] = flat.sum(axis=0)
            dxin = dxw @ params[p + "_wx"].T
            dx += dxin if direction == "fw" else dxin[:, ::-1]
        dout = dx
    return dout


def run_birnn_stack(params, features) -> np.ndarray:
    """``(25, F)`` features -> ``(25, 2 * hidden)`` hidden sequence."""
    out, _ = _birnn_forward(params, np.asarray(features)[None])
    return out[0]


def project_and_softmax(params, hidden) -> np.ndarray:
    return softmax(np.asarray(hidden) @ params["proj_w"] + params["proj_b"])


# -- whole network ------------------------------------------------------------

def forward_batch(params, images):
    """Logits ``(B, 25, K)`` for a batch of normalized images, plus a backward cache."""
    images = np.asarray(images, dtype=params["conv0_w"].dtype)
    if images.ndim != 3 or images.shape[1:] != (IMAGE_HEIGHT, IMAGE_WIDTH):
        raise ValueError(f"expected images of shape (B, 50, 200), got {images.shape}")
    feats, fcache = _features_forward(params, images)
    _check("features", feats)
    hidden, rcache = _birnn_forward(params, feats)
    _check("rnn_output", hidden)
    logits = hidden @ params["proj_w"] + params["proj_b"]
    _check("logits", logits)
    return logits, (fcache, rcache, hidden)


def backward_batch(params, cache, dlogits) -> dict[str, np.ndarray]:
    fcache, rcache, hidden = cache
    dlogits = np.asarray(dlogits, dtype=hidden.dtype)
    grads: dict[str, np.ndarray] = {}
    K = dlogits.shape[-1]
    grads["proj_w"] = hidden.reshape(-1, hidden.shape[-1]).T @ dlogits.reshape(-1, K)
    grads["proj_b"] = dlogits.reshape(-1, K).sum(axis=0)
    dhidden = dlogits @ params["proj_w"].T
    dfeats = _birnn_backward(params, dhidden, rcache, grads)
    _features_backward(params, dfeats, fcache, grads)
    out = {name: grads[name] for name in params}
    for name, g in out.items():
        _check(name, g)
    return out


def forward(params, image) -> np.ndarray:
    """Frame probabilities ``(25, K)`` for one normalized 50x200 image."""
    logits, _ = forward_batch(params, np.asarray(image)[None])
    return softmax(logits[0])


def backward(params, image, grad_wrt_logits) -> dict[str, np.ndarray]:
    """Gradient of ``sum(grad_wrt_logits * logits)`` for every parameter array."""
    grad_wrt_logits = np.asarray(grad_wrt_logits)
    K = params["proj_b"].shape[0]
    if grad_wrt_logits.shape != (N_FRAMES, K):
        raise ValueError(f"grad_wrt_logits must be (25, {K}), got {grad_wrt_logits.shape}")
    _, cache = forward_batch(params, np.asarray(image)[None])
    return backward_batch(params, cache, grad_wrt_logits[None])
