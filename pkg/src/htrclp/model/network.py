"""CRNN recognizer: conv stack -> column collapse -> BLSTM stack -> linear.

Images are (H, W) arrays with 1.0 as background.  The network sees
``1 - image`` so that background and padding are both zero.  Each image is
right-padded to a multiple of the total pooling factor, and batches to the
widest such image; activations beyond a sample's valid width are zeroed
after every conv layer and the LSTMs skip padded frames, so a line gets the
same logits alone or inside any batch (up to float rounding).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from ..numerics import ops
from ..numerics.tensor import Tensor, no_grad
from ..rng import substream
from .config import ConfigError, ModelConfig


class InputError(ValueError):
    """An image does not match the model input contract."""


@dataclass
class ModelState:
    config: ModelConfig
    params: dict                    # name -> float32 array
    charset: tuple                  # characters for output classes 0..L-1
    step: int = 0
    seed: int = 0
    meta: dict = field(default_factory=dict)

    def copy(self, **changes) -> "ModelState":
        fields = {"params": dict(self.params), "meta": dict(self.meta)}
        fields.update(changes)
        return replace(self, **fields)

    @property
    def n_params(self) -> int:
        return int(sum(p.size for p in self.params.values()))


def param_shapes(config: ModelConfig) -> dict:
    """Ordered parameter names and shapes; order fixes init draws and checkpoints."""
    shapes = {}
    k = config.kernel
    c_in = 1
    for i, f in enumerate(config.filters, 1):
        shapes[f"conv{i}.weight"] = (f, c_in, k, k)
        shapes[f"conv{i}.bias"] = (f,)
        c_in = f
    d_in = config.collapse_depth
    h = config.units
    for j in range(1, config.recurrent_layers + 1):
        for d in ("fwd", "bwd"):
            shapes[f"blstm{j}.{d}.w_x"] = (d_in, 4 * h)
            shapes[f"blstm{j}.{d}.w_h"] = (h, 4 * h)
            shapes[f"blstm{j}.{d}.b"] = (4 * h,)
        d_in = 2 * h
    shapes["out.weight"] = (d_in, config.n_classes)
    shapes["out.bias"] = (config.n_classes,)
    return shapes


def closed_form_param_count(config: ModelConfig) -> dict:
    """Parameter counts per block computed directly from the layer formulas."""
    k2 = config.kernel ** 2
    fs = (1,) + config.filters
    conv = sum(fs[i] * fs[i + 1] * k2 + fs[i + 1] for i in range(len(config.filters)))
    h = config.units
    rec, d_in = 0, config.collapse_depth
    for _ in range(config.recurrent_layers):
        rec += 2 * 4 * h * (d_in + h + 1)
        d_in = 2 * h
    out = (d_in + 1) * config.n_classes
    return {"conv": conv, "recurrent": rec, "output": out, "total": conv + rec + out}


def init_param(name: str, shape: tuple, rng: np.random.Generator, dtype=np.float32) -> np.ndarray:
    if name.endswith(".bias") or name.endswith(".b"):
        b = np.zeros(shape)
        if name.endswith(".b"):
            h = shape[0] // 4
            b[h:2 * h] = 1.0  # forget gate
        return b.astype(dtype)
    if name.startswith("blstm"):
        h = shape[1] // 4
        lim = 1.0 / math.sqrt(h)
    elif name.startswith("conv"):
        rf = shape[2] * shape[3]
        lim = math.sqrt(6.0 / (shape[1] * rf + shape[0] * rf))
    else:
        lim = math.sqrt(6.0 / (shape[0] + shape[1]))
    return rng.uniform(-lim, lim, size=shape).astype(dtype)


def build(config: ModelConfig, seed: int, charset=None) -> ModelState:
    """Fresh parameters drawn from ``substream(seed, "init")``."""
    config.validate()
    if charset is None:
        charset = tuple(chr(ord("a") + i) if i < 26 else chr(0x100 + i) for i in range(config.charset_size))
    charset = tuple(charset)
    if len(charset) != config.charset_size:
        raise ConfigError(f"charset has {len(charset)} symbols, config expects {config.charset_size}")
    rng = substream(seed, "init")
    params = {n: init_param(n, s, rng) for n, s in param_shapes(config).items()}
    return ModelState(config, params, charset, step=0, seed=seed)


def frames_for_width(width: int, config: ModelConfig) -> int:
    return -(-width // config.downsample)


def prepare_batch(images, config: ModelConfig, ids=None):
    """Stack images into (B, 1, H, W_pad) ink arrays plus per-sample frame counts."""
    ds = config.downsample
    for n, img in enumerate(images):
        if img.ndim != 2 or img.shape[0] != config.input_height:
            who = ids[n] if ids is not None else f"#{n}"
            raise InputError(f"line {who}: image shape {img.shape}, expected height {config.input_height}")
        if img.shape[1] < 1:
            who = ids[n] if ids is not None else f"#{n}"
            raise InputError(f"line {who}: empty image")
    lengths = np.array([frames_for_width(img.shape[1], config) for img in images], dtype=int)
    width = int(lengths.max()) * ds
    x = np.zeros((len(images), 1, config.input_height, width), dtype=np.float32)
    for n, img in enumerate(images):
        x[n, 0, :, :img.shape[1]] = 1.0 - img
    return x, lengths


def _width_mask(lengths, factor, width, dtype):
    valid = lengths * factor
    if np.all(valid >= width):
        return None
    return (np.arange(width)[None, :] < valid[:, None]).astype(dtype)[:, None, None, :]


def forward_tensors(params: dict, config: ModelConfig, x: np.ndarray, lengths: np.ndarray,
                    dropout_rng: np.random.Generator | None = None) -> Tensor:
    """Differentiable forward; ``params`` maps names to Tensors.  Dropout iff ``dropout_rng``."""
    dt = x.dtype
    h = Tensor(x)
    factor = config.downsample
    for i in range(1, len(config.filters) + 1):
        h = ops.conv2d(h, params[f"conv{i}.weight"], params[f"conv{i}.bias"])
        h = ops.leaky_relu(h, config.leaky_slope)
        mask = _width_mask(lengths, factor, h.shape[3], dt)
        if mask is not None:
            h = ops.mul_const(h, mask)
        if (i - 1) in config.pool_layers:
            h = ops.maxpool2x2(h)
            factor //= 2
        if i > 1:
            h = ops.dropout(h, config.dropout_conv, dropout_rng)
    bsz, c, fh, fw = h.shape
    h = ops.reshape(ops.transpose(h, (0, 3, 2, 1)), (bsz, fw, fh * c))
    frame_mask = np.arange(fw)[None, :] < lengths[:, None]
    for j in range(1, config.recurrent_layers + 1):
        fwd = ops.lstm_layer(h, frame_mask, params[f"blstm{j}.fwd.w_x"], params[f"blstm{j}.fwd.w_h"],
                             params[f"blstm{j}.fwd.b"], reverse=False)
        bwd = ops.lstm_layer(h, frame_mask, params[f"blstm{j}.bwd.w_x"], params[f"blstm{j}.bwd.w_h"],
                             params[f"blstm{j}.bwd.b"], reverse=True)
        h = ops.dropout(ops.concat([fwd, bwd], axis=-1), config.dropout_recurrent, dropout_rng)
    return ops.linear(h, params["out.weight"], params["out.bias"])


def forward(state: ModelState, images, train_mode: bool = False, dropout_rng=None, ids=None):
    """Logits (B, T, L+1) and valid frame counts for a list of images.

    In train mode dropout draws from ``dropout_rng`` (default: a stream
    keyed by the state's seed and step counter).
    """
    x, lengths = prepare_batch(images, state.config, ids)
    if train_mode and dropout_rng is None:
        dropout_rng = substream(state.seed, "dropout", state.step)
    params = {k: Tensor(v) for k, v in state.params.items()}
    with no_grad():
        logits = forward_tensors(params, state.config, x.astype(next(iter(state.params.values())).dtype),
                                 lengths, dropout_rng if train_mode else None)
    return logits.data, lengths


def decode(state: ModelState, images, batch_size: int = 32) -> list[str]:
    """Greedy transcripts for ``images`` (evaluation mode, width-bucketed batches)."""
    from ..ctc import best_path

    order = sorted(range(len(images)), key=lambda i: images[i].shape[1])
    out = [None] * len(images)
    for lo in range(0, len(order), batch_size):
        chunk = order[lo:lo + batch_size]
        logits, lengths = forward(state, [images[i] for i in chunk])
        for n, i in enumerate(chunk):
            out[i] = "".join(state.charset[k] for k in best_path(logits[n], lengths[n]))
    return out
