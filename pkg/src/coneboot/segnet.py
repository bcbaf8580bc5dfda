"""From-scratch encoder-decoder segmentation network.

A small U-Net-shaped model built directly on numpy: 3x3 same-padding
convolutions, ReLU, 2x2 max-pooling on the way down, nearest-neighbour
upsampling plus convolution on the way up, channel-concatenation skips, and
a sigmoid head trained with mean squared error and Adam. Forward, backward,
and the optimizer are hand-written so every gradient can be checked against
finite differences.

Weights live in a plain ``dict[str, np.ndarray]`` keyed by the fixed layer
order of :func:`param_order`; convolution kernels are shaped
``(out_channels, in_channels, 3, 3)``.
"""

from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .maskgen import BinaryMask
from .metrics import resize_mask_nearest

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class NetConfig:
    input_size: int = 256
    depth: int = 3
    base_channels: int = 8
    dtype: str = "float64"  # float64 for verification, float32 for speed

    def __post_init__(self) -> None:
        if self.input_size % (2 ** self.depth) != 0:
            raise ValueError(
                f"input_size {self.input_size} not divisible by 2^depth = {2 ** self.depth}"
            )
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"unsupported dtype {self.dtype!r}")

    @property
    def np_dtype(self) -> np.dtype:
        return np.dtype(self.dtype)


@dataclass
class TrainConfig:
    learning_rate: float = 1e-5
    batch_size: int = 8
    validation_fraction: float = 0.20
    epochs: int = 100
    eval_every: int = 10
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8

    def __post_init__(self) -> None:
        if not 0.0 < self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must be in (0, 1)")
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")


@dataclass
class CurvePoint:
    epoch: int
    train_loss: float
    validation_loss: float
    test_accuracy: float | None = None


@dataclass
class LearningCurve:
    points: list[CurvePoint] = field(default_factory=list)

    def append(self, point: CurvePoint) -> None:
        if self.points and point.epoch <= self.points[-1].epoch:
            raise ValueError("curve epochs must be strictly increasing")
        self.points.append(point)


# --- layer structure ---------------------------------------------------------


def _channels(cfg: NetConfig) -> list[int]:
    return [cfg.base_channels * (2 ** i) for i in range(cfg.depth + 1)]


def param_order(cfg: NetConfig) -> list[str]:
    names: list[str] = []
    for i in range(cfg.depth):
        names += [f"enc{i}_conv1_w", f"enc{i}_conv1_b", f"enc{i}_conv2_w", f"enc{i}_conv2_b"]
    names += ["bottleneck_conv1_w", "bottleneck_conv1_b", "bottleneck_conv2_w", "bottleneck_conv2_b"]
    for i in reversed(range(cfg.depth)):
        names += [f"dec{i}_up_w", f"dec{i}_up_b", f"dec{i}_mix_w", f"dec{i}_mix_b"]
    names += ["head_w", "head_b"]
    return names


def _conv_shapes(cfg: NetConfig) -> dict[str, tuple[int, ...]]:
    ch = _channels(cfg)
    shapes: dict[str, tuple[int, ...]] = {}
    in_c = 1
    for i in range(cfg.depth):
        shapes[f"enc{i}_conv1_w"] = (ch[i], in_c, 3, 3)
        shapes[f"enc{i}_conv2_w"] = (ch[i], ch[i], 3, 3)
        in_c = ch[i]
    shapes["bottleneck_conv1_w"] = (ch[cfg.depth], in_c, 3, 3)
    shapes["bottleneck_conv2_w"] = (ch[cfg.depth], ch[cfg.depth], 3, 3)
    above = ch[cfg.depth]
    for i in reversed(range(cfg.depth)):
        shapes[f"dec{i}_up_w"] = (ch[i], above, 3, 3)
        shapes[f"dec{i}_mix_w"] = (ch[i], 2 * ch[i], 3, 3)
        above = ch[i]
    shapes["head_w"] = (1, ch[0], 3, 3)
    for name in list(shapes):
        shapes[name.replace("_w", "_b")] = (shapes[name][0],)
    return shapes


def init_weights(cfg: NetConfig, seed: int) -> dict[str, np.ndarray]:
    """He-uniform fan-in initialization; biases start at zero."""
    rng = np.random.default_rng(seed)
    shapes = _conv_shapes(cfg)
    params: dict[str, np.ndarray] = {}
    for name in param_order(cfg):
        shape = shapes[name]
        if name.endswith("_b"):
            params[name] = np.zeros(shape, dtype=cfg.np_dtype)
        else:
            fan_in = shape[1] * shape[2] * shape[3]
            limit = math.sqrt(6.0 / fan_in)
            params[name] = rng.uniform(-limit, limit, size=shape).astype(cfg.np_dtype)
    return params


# --- primitive ops -----------------------------------------------------------


def _im2col(x: np.ndarray) -> np.ndarray:
    # (B, C, H, W) -> (B, C*9, H*W) patches of the zero-padded input; the
    # strided window view keeps rows contiguous so the reshape copy is cheap
    b, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    s0, s1, s2, s3 = xp.strides
    win = np.lib.stride_tricks.as_strided(xp, (b, c, 3, 3, h, w), (s0, s1, s2, s3, s2, s3))
    return win.reshape(b, c * 9, h * w)


def conv3x3_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    bs, _, h, wd = x.shape
    o = w.shape[0]
    cols = _im2col(x)
    y = np.matmul(w.reshape(o, -1), cols) + b[:, None]
    return y.reshape(bs, o, h, wd), cols


def conv3x3_backward(
    dy: np.ndarray, cols: np.ndarray, w: np.ndarray, x_shape: tuple[int, ...], need_dx: bool = True
) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
    bs, c, h, wd = x_shape
    o = w.shape[0]
    dy_r = dy.reshape(bs, o, h * wd)
    dw = np.matmul(dy_r, cols.swapaxes(1, 2)).sum(axis=0).reshape(w.shape)
    db = dy_r.sum(axis=(0, 2))
    if not need_dx:
        return dw, db, None
    # input gradient = same-padding convolution of dy with flipped, transposed kernels
    w_flip = w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)  # (C, O, 3, 3)
    dy_cols = _im2col(dy)
    dx = np.matmul(w_flip.reshape(c, -1), dy_cols).reshape(bs, c, h, wd)
    return dw, db, dx


def relu_forward(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mask = x > 0
    return x * mask, mask


def relu_backward(dy: np.ndarray, mask: np.ndarray) -> np.ndarray:
    return dy * mask


def maxpool2_forward(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    b, c, h, w = x.shape
    blocks = x.reshape(b, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h // 2, w // 2, 4)
    idx = blocks.argmax(axis=-1)
    y = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]
    return y, idx


def _pool_tie_margin(x: np.ndarray) -> float:
    # gap between the top two values of each 2x2 block
    b, c, h, w = x.shape
    blocks = x.reshape(b, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h // 2, w // 2, 4)
    part = np.partition(blocks, 2, axis=-1)
    return float((part[..., 3] - part[..., 2]).min())


def maxpool2_backward(dy: np.ndarray, idx: np.ndarray) -> np.ndarray:
    # route each gradient to the (first) argmax position of its 2x2 block
    b, c, hh, ww = dy.shape
    blocks = np.zeros((b, c, hh, ww, 4), dtype=dy.dtype)
    np.put_along_axis(blocks, idx[..., None], dy[..., None], axis=-1)
    return blocks.reshape(b, c, hh, ww, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, hh * 2, ww * 2)


def upsample2_forward(x: np.ndarray) -> np.ndarray:
    return x.repeat(2, axis=2).repeat(2, axis=3)


def upsample2_backward(dy: np.ndarray) -> np.ndarray:
    b, c, h, w = dy.shape
    return dy.reshape(b, c, h // 2, 2, w // 2, 2).sum(axis=(3, 5))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


# --- network forward / backward ----------------------------------------------


def forward(
    params: dict[str, np.ndarray], x: np.ndarray, cfg: NetConfig, collect_margins: bool = False
) -> tuple[np.ndarray, dict]:
    """Run the network on a batch (B, 1, S, S) of inputs in [0, 1].

    Returns per-pixel sigmoid outputs of the same spatial size plus the
    cache needed by :func:`backward`. With `collect_margins` the cache also
    records how far the instance sits from the nearest ReLU kink or pool
    tie, which finite-difference checks use to reject non-smooth points.
    """
    if x.ndim != 4 or x.shape[1] != 1 or x.shape[2] != cfg.input_size or x.shape[3] != cfg.input_size:
        raise ValueError(f"expected (B, 1, {cfg.input_size}, {cfg.input_size}) input, got {x.shape}")
    x = np.ascontiguousarray(x, dtype=cfg.np_dtype)
    cache: dict = {"x_shapes": {}, "cols": {}, "relu": {}, "pool": {}}
    margins: list[float] = []

    def conv_relu(name: str, inp: np.ndarray) -> np.ndarray:
        y, cols = conv3x3_forward(inp, params[f"{name}_w"], params[f"{name}_b"])
        cache["cols"][name] = cols
        cache["x_shapes"][name] = inp.shape
        if collect_margins:
            margins.append(float(np.abs(y).min()))
        y, mask = relu_forward(y)
        cache["relu"][name] = mask
        return y

    skips: list[np.ndarray] = []
    cur = x
    for i in range(cfg.depth):
        cur = conv_relu(f"enc{i}_conv1", cur)
        cur = conv_relu(f"enc{i}_conv2", cur)
        skips.append(cur)
        if collect_margins:
            margins.append(_pool_tie_margin(cur))
        cur, idx = maxpool2_forward(cur)
        cache["pool"][i] = idx
    cur = conv_relu("bottleneck_conv1", cur)
    cur = conv_relu("bottleneck_conv2", cur)
    for i in reversed(range(cfg.depth)):
        cur = upsample2_forward(cur)
        cur = conv_relu(f"dec{i}_up", cur)
        cur = np.concatenate([skips[i], cur], axis=1)
        cur = conv_relu(f"dec{i}_mix", cur)
    z, cols = conv3x3_forward(cur, params["head_w"], params["head_b"])
    cache["cols"]["head"] = cols
    cache["x_shapes"]["head"] = cur.shape
    y = _sigmoid(z)
    if not np.isfinite(y).all():
        raise TrainingDiverged("non-finite activations in forward pass")
    cache["y"] = y
    if collect_margins:
        cache["kink_margin"] = min(margins)
    return y, cache


def backward(
    params: dict[str, np.ndarray], cache: dict, dy: np.ndarray, cfg: NetConfig
) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss with upstream dL/dy (y = sigmoid output).

    Skip gradients collected on the decoder sweep rejoin the main path at
    the encoder activation they forked from.
    """
    grads: dict[str, np.ndarray] = {}
    y = cache["y"]
    dz = dy * y * (1.0 - y)

    def conv_relu_back(
        name: str, d: np.ndarray, through_relu: bool = True, need_dx: bool = True
    ) -> np.ndarray:
        if through_relu:
            d = relu_backward(d, cache["relu"][name])
        dw, db, dx = conv3x3_backward(
            d, cache["cols"][name], params[f"{name}_w"], cache["x_shapes"][name], need_dx
        )
        grads[f"{name}_w"] = dw
        grads[f"{name}_b"] = db
        return dx

    d = conv_relu_back("head", dz, through_relu=False)

    ch = _channels(cfg)
    skip_grads: list[np.ndarray | None] = [None] * cfg.depth
    for i in range(cfg.depth):
        d = conv_relu_back(f"dec{i}_mix", d)
        skip_grads[i] = d[:, :ch[i]]
        d = conv_relu_back(f"dec{i}_up", d[:, ch[i]:])
        d = upsample2_backward(d)
    d = conv_relu_back("bottleneck_conv2", d)
    d = conv_relu_back("bottleneck_conv1", d)
    for i in reversed(range(cfg.depth)):
        d = maxpool2_backward(d, cache["pool"][i])
        d = d + skip_grads[i]
        d = conv_relu_back(f"enc{i}_conv2", d)
        # the network input needs no gradient
        d = conv_relu_back(f"enc{i}_conv1", d, need_dx=(i > 0))
    return grads


def mse_loss(pred: np.ndarray, target: np.ndarray) -> float:
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred.astype(np.float64) - target.astype(np.float64)
    return float(np.mean(diff * diff))


def loss_and_grads(
    params: dict[str, np.ndarray], x: np.ndarray, target: np.ndarray, cfg: NetConfig
) -> tuple[float, dict[str, np.ndarray]]:
    y, cache = forward(params, x, cfg)
    if y.shape != target.shape:
        raise ValueError(f"target shape {target.shape} does not match output {y.shape}")
    loss = mse_loss(y, target)
    dy = (2.0 / y.size) * (y - target.astype(y.dtype))
    grads = backward(params, cache, dy, cfg)
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise TrainingDiverged(f"non-finite gradient in {name}")
    return loss, grads


# --- Adam ---------------------------------------------------------------------


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0


def adam_init(params: dict[str, np.ndarray]) -> AdamState:
    return AdamState(
        m={k: np.zeros_like(p) for k, p in params.items()},
        v={k: np.zeros_like(p) for k, p in params.items()},
    )


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    cfg: TrainConfig,
) -> tuple[dict[str, np.ndarray], AdamState]:
    """Bias-corrected Adam update applied in place."""
    state.t += 1
    b1, b2, eps = cfg.adam_beta1, cfg.adam_beta2, cfg.adam_epsilon
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for k, p in params.items():
        g = grads[k]
        if not np.isfinite(g).all():
            raise TrainingDiverged(f"non-finite gradient in {k}")
        state.m[k] = b1 * state.m[k] + (1.0 - b1) * g
        state.v[k] = b2 * state.v[k] + (1.0 - b2) * (g * g)
        m_hat = state.m[k] / c1
        v_hat = state.v[k] / c2
        p -= (cfg.learning_rate * m_hat / (np.sqrt(v_hat) + eps)).astype(p.dtype)
    return params, state


# --- training loop -------------------------------------------------------------


def _as_batch(pairs: list[tuple[np.ndarray, np.ndarray]], dtype: np.dtype) -> tuple[np.ndarray, np.ndarray]:
    xs = np.stack([p[0] for p in pairs]).astype(dtype)[:, None]
    ts = np.stack([p[1] for p in pairs]).astype(dtype)[:, None]
    return xs, ts


def _batch_loss(params, xs, ts, cfg: NetConfig, batch: int) -> float:
    total = 0.0
    for s in range(0, len(xs), batch):
        y, _ = forward(params, xs[s:s + batch], cfg)
        total += mse_loss(y, ts[s:s + batch]) * len(xs[s:s + batch])
    return total / len(xs)


def evaluate_accuracy(params, test_pairs, net_cfg: NetConfig, batch: int = 8) -> float:
    """Mean per-image pixel accuracy of thresholded predictions."""
    xs, ts = _as_batch(test_pairs, net_cfg.np_dtype)
    accs: list[float] = []
    for s in range(0, len(xs), batch):
        y, _ = forward(params, xs[s:s + batch], net_cfg)
        pred = y >= 0.5
        truth = ts[s:s + batch] >= 0.5
        match = (pred == truth).reshape(len(y), -1)
        accs.extend(match.mean(axis=1).tolist())
    return float(np.mean(accs))


def train(
    train_pairs: list[tuple[np.ndarray, np.ndarray]],
    test_pairs: list[tuple[np.ndarray, np.ndarray]] | None,
    net_cfg: NetConfig,
    train_cfg: TrainConfig,
    initial_weights: dict[str, np.ndarray] | None = None,
) -> tuple[dict[str, np.ndarray], LearningCurve]:
    """Mini-batch MSE/Adam training.

    `train_pairs` items are (image, target) arrays of shape (S, S) with
    image values in [0, 1] and targets in {0, 1}. A seeded fraction is held
    out for validation; test accuracy is recorded every `eval_every` epochs
    when `test_pairs` is given. Returns the final-epoch weights.
    """
    if not train_pairs:
        raise ValueError("empty training set")
    rng = np.random.default_rng(train_cfg.seed)
    if initial_weights is not None:
        params = {k: v.astype(net_cfg.np_dtype).copy() for k, v in initial_weights.items()}
    else:
        params = init_weights(net_cfg, seed=train_cfg.seed)
    curve = LearningCurve()
    if train_cfg.epochs == 0:
        return params, curve

    n = len(train_pairs)
    perm = rng.permutation(n)
    n_val = min(max(1, round(train_cfg.validation_fraction * n)), n - 1) if n > 1 else 0
    val_idx, fit_idx = perm[:n_val], perm[n_val:]
    xs, ts = _as_batch(train_pairs, net_cfg.np_dtype)

    state = adam_init(params)
    for epoch in range(1, train_cfg.epochs + 1):
        order = rng.permutation(fit_idx)
        total, seen = 0.0, 0
        for s in range(0, len(order), train_cfg.batch_size):
            sel = order[s:s + train_cfg.batch_size]
            loss, grads = loss_and_grads(params, xs[sel], ts[sel], net_cfg)
            if not math.isfinite(loss):
                raise TrainingDiverged(f"loss diverged at epoch {epoch}")
            params, state = adam_step(params, grads, state, train_cfg)
            total += loss * len(sel)
            seen += len(sel)
        train_loss = total / seen
        val_loss = _batch_loss(params, xs[val_idx], ts[val_idx], net_cfg, train_cfg.batch_size) if n_val else train_loss
        test_acc = None
        if test_pairs and (epoch % train_cfg.eval_every == 0 or epoch == train_cfg.epochs):
            test_acc = evaluate_accuracy(params, test_pairs, net_cfg, train_cfg.batch_size)
        curve.append(CurvePoint(epoch, train_loss, val_loss, test_acc))
    return params, curve


def predict_mask(
    params: dict[str, np.ndarray],
    image: np.ndarray,
    cfg: NetConfig,
    out_size: tuple[int, int] | None = None,
) -> BinaryMask:
    """Threshold the network output at 0.5 (ties count as foreground);
    optionally resize back to (w, h) by nearest neighbour."""
    y, _ = forward(params, image[None, None].astype(cfg.np_dtype), cfg)
    mask = BinaryMask(y[0, 0] >= 0.5)
    if out_size is not None and out_size != (mask.width, mask.height):
        mask = resize_mask_nearest(mask, out_size[0], out_size[1])
    return mask


# --- weights container ----------------------------------------------------------

_MAGIC = b"CBWT"
_DTYPE_CODES = {"float64": 0, "float32": 1}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}


def save_weights(path: str | Path, params: dict[str, np.ndarray], cfg: NetConfig) -> None:
    """Binary container: magic, version, dtype code, config ints, a layer
    table of (name, shape), then the raw little-endian payloads in table
    order. Non-finite values are rejected."""
    order = param_order(cfg)
    for name in order:
        if not np.isfinite(params[name]).all():
            raise ValueError(f"refusing to save non-finite weights in {name}")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<BBHBB", 1, _DTYPE_CODES[cfg.dtype], cfg.input_size, cfg.depth, cfg.base_channels))
        fh.write(struct.pack("<H", len(order)))
        for name in order:
            arr = params[name]
            encoded = name.encode()
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        item = "<f8" if cfg.dtype == "float64" else "<f4"
        for name in order:
            fh.write(np.ascontiguousarray(params[name], dtype=item).tobytes())


def load_weights(path: str | Path) -> tuple[dict[str, np.ndarray], NetConfig]:
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise ValueError(f"{path} is not a weights container")
        version, dtype_code, input_size, depth, base = struct.unpack("<BBHBB", fh.read(6))
        if version != 1:
            raise ValueError(f"unsupported weights version {version}")
        dtype = _CODE_DTYPES[dtype_code]
        cfg = NetConfig(input_size=input_size, depth=depth, base_channels=base, dtype=dtype)
        (n_tensors,) = struct.unpack("<H", fh.read(2))
        table: list[tuple[str, tuple[int, ...]]] = []
        for _ in range(n_tensors):
            (name_len,) = struct.unpack("<H", fh.read(2))
            name = fh.read(name_len).decode()
            (ndim,) = struct.unpack("<B", fh.read(1))
            shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
            table.append((name, shape))
        item = "<f8" if dtype == "float64" else "<f4"
        params: dict[str, np.ndarray] = {}
        for name, shape in table:
            count = int(np.prod(shape, dtype=np.int64))
            buf = fh.read(count * np.dtype(item).itemsize)
            arr = np.frombuffer(buf, dtype=item).reshape(shape).astype(dtype)
            if not np.isfinite(arr).all():
                raise ValueError(f"non-finite weights in {name}")
            params[name] = arr
    expected = param_order(cfg)
    if [t[0] for t in table] != expected:
        raise ValueError("weights table does not match the documented layer order")
    return params, cfg
