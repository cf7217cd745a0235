"""Convolution layers with zero or partial padding, and a small residual classifier.

Partial padding treats the zero-padded border as holes: each output of the
zero-padded convolution is rescaled by ``window_size / valid_cells`` before the
bias is added. Because the holes are exactly the padding, the ratio map depends
only on shapes and is computed once per layer geometry.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ShapeError

PADDING_MODES = ("zero", "partial")
STAGE_WIDTHS = (16, 32, 64)
BLOCKS_PER_STAGE = 2


@dataclass(frozen=True)
class Conv2dSpec:
    in_channels: int
    out_channels: int
    kernel: tuple[int, int] = (3, 3)
    stride: int = 1
    pad: int = 0
    padding: str = "zero"

    def __post_init__(self):
        if isinstance(self.kernel, int):
            object.__setattr__(self, "kernel", (self.kernel, self.kernel))
        kh, kw = self.kernel
        if min(self.in_channels, self.out_channels, kh, kw, self.stride) < 1:
            raise ConfigError(f"conv spec needs positive channels/kernel/stride: {self}")
        if self.pad < 0:
            raise ConfigError(f"negative padding: {self.pad}")
        if self.padding not in PADDING_MODES:
            raise ConfigError(f"padding mode must be one of {PADDING_MODES}, got {self.padding!r}")

    def output_hw(self, h: int, w: int) -> tuple[int, int]:
        kh, kw = self.kernel
        ho = ad.conv_output_size(h, kh, self.stride, self.pad)
        wo = ad.conv_output_size(w, kw, self.stride, self.pad)
        if ho < 1 or wo < 1:
            raise ShapeError(f"kernel {self.kernel} pad {self.pad} does not fit input {(h, w)}")
        return ho, wo


def _valid_counts(n: int, k: int, stride: int, pad: int) -> np.ndarray:
    """Per output index, how many of the k window taps land inside [0, n)."""
    out = ad.conv_output_size(n, k, stride, pad)
    start = np.arange(out) * stride - pad
    return np.clip(start + k, 0, n) - np.clip(start, 0, n)


@lru_cache(maxsize=256)
def _scale_map(h, w, kh, kw, stride, pad):
    rows = _valid_counts(h, kh, stride, pad)
    cols = _valid_counts(w, kw, stride, pad)
    valid = np.outer(rows, cols)
    if np.any(valid == 0):
        raise ConfigError(
            f"padding {pad} with kernel {(kh, kw)} on input {(h, w)} leaves a window with no valid pixels")
    ratio = (kh * kw) / valid
    ratio.setflags(write=False)
    return ratio


def partial_scale_map(input_hw: tuple[int, int], spec: Conv2dSpec) -> np.ndarray:
    """Ratio ``kh*kw / valid_cells`` for every output position."""
    h, w = input_hw
    spec.output_hw(h, w)
    return _scale_map(h, w, spec.kernel[0], spec.kernel[1], spec.stride, spec.pad)


def conv2d_forward(x: Tensor, spec: Conv2dSpec, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    x = ad.as_tensor(x)
    if x.ndim != 4 or x.shape[1] != spec.in_channels:
        raise ShapeError(f"conv input {x.shape} does not match in_channels={spec.in_channels}")
    want = (spec.out_channels, spec.in_channels, *spec.kernel)
    if tuple(weight.shape) != want:
        raise ShapeError(f"conv weight shape {weight.shape}, expected {want}")
    out = ad.conv2d(x, weight, stride=spec.stride, pad=spec.pad)
    if spec.padding == "partial" and spec.pad > 0:
        out = ad.mul(out, Tensor(partial_scale_map(x.shape[2:], spec)))
    if bias is not None:
        if tuple(bias.shape) != (spec.out_channels,):
            raise ShapeError(f"conv bias shape {bias.shape}, expected {(spec.out_channels,)}")
        out = ad.add(out, ad.reshape(bias, (1, spec.out_channels, 1, 1)))
    return out


def channel_affine(x: Tensor, gain: Tensor, shift: Tensor) -> Tensor:
    c = gain.shape[0]
    return ad.add(ad.mul(x, ad.reshape(gain, (1, c, 1, 1))), ad.reshape(shift, (1, c, 1, 1)))


# ---------------------------------------------------------------------------
# mini residual network

@dataclass
class MiniResNetParams:
    """Named parameter tensors plus the architecture switches.

    Blocks are conv-affine-relu-conv-affine with an identity skip, or a 1x1
    stride-2 projection at the first block of each stage. The second affine
    gain of every block starts at zero so each block begins as its skip path.
    """

    n_classes: int
    in_channels: int = 3
    padding: str = "zero"
    tensors: dict[str, Tensor] = field(default_factory=dict)

    def __iter__(self):
        return iter(self.tensors.items())

    def __getitem__(self, name):
        return self.tensors[name]

    def num_parameters(self) -> int:
        return int(sum(t.size for t in self.tensors.values()))

    def shapes(self) -> dict[str, tuple]:
        return {k: tuple(v.shape) for k, v in self.tensors.items()}

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.tensors.items()}

    def with_padding(self, padding: str) -> "MiniResNetParams":
        """Same weights, different padding mode."""
        if padding not in PADDING_MODES:
            raise ConfigError(f"padding mode must be one of {PADDING_MODES}, got {padding!r}")
        return MiniResNetParams(self.n_classes, self.in_channels, padding, dict(self.tensors))


def _block_layout(in_channels):
    """Yield (prefix, c_in, c_out, stride) for every residual block."""
    c_in = STAGE_WIDTHS[0]
    for s, width in enumerate(STAGE_WIDTHS):
        for b in range(BLOCKS_PER_STAGE):
            stride = 2 if b == 0 else 1
            yield f"stage{s + 1}.block{b + 1}", c_in, width, stride
            c_in = width


def parameter_shapes(n_classes: int, in_channels: int = 3) -> dict[str, tuple]:
    shapes = {
        "stem.weight": (STAGE_WIDTHS[0], in_channels, 3, 3),
        "stem.gain": (STAGE_WIDTHS[0],),
        "stem.shift": (STAGE_WIDTHS[0],),
    }
    for prefix, c_in, c_out, stride in _block_layout(in_channels):
        shapes[f"{prefix}.conv1.weight"] = (c_out, c_in, 3, 3)
        shapes[f"{prefix}.gain1"] = (c_out,)
        shapes[f"{prefix}.shift1"] = (c_out,)
        shapes[f"{prefix}.conv2.weight"] = (c_out, c_out, 3, 3)
        shapes[f"{prefix}.gain2"] = (c_out,)
        shapes[f"{prefix}.shift2"] = (c_out,)
        if stride != 1 or c_in != c_out:
            shapes[f"{prefix}.proj.weight"] = (c_out, c_in, 1, 1)
            shapes[f"{prefix}.proj.bias"] = (c_out,)
    shapes["fc.weight"] = (STAGE_WIDTHS[-1], n_classes)
    shapes["fc.bias"] = (n_classes,)
    return shapes


def init_params(n_classes: int, *, seed: int, in_channels: int = 3, padding: str = "zero") -> MiniResNetParams:
    """He fan-in initialisation from a seeded generator."""
    if n_classes < 2:
        raise ConfigError(f"need at least 2 classes, got {n_classes}")
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in parameter_shapes(n_classes, in_channels).items():
        if name.endswith("weight"):
            fan_in = int(np.prod(shape[1:])) if len(shape) == 4 else shape[0]
            value = rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)
        elif name.endswith("gain2"):
            value = np.zeros(shape)
        elif "gain" in name:
            value = np.ones(shape)
        else:
            value = np.zeros(shape)
        tensors[name] = Tensor(value, requires_grad=True)
    return MiniResNetParams(n_classes, in_channels, padding, tensors)


def params_from_arrays(arrays: dict[str, np.ndarray], n_classes: int, *, in_channels: int = 3,
                       padding: str = "zero") -> MiniResNetParams:
    """Rebuild parameters from raw arrays, checking every expected shape."""
    expected = parameter_shapes(n_classes, in_channels)
    problems = []
    for name, shape in expected.items():
        if name not in arrays:
            problems.append(f"{name}: expected {shape}, found nothing")
        elif tuple(arrays[name].shape) != shape:
            problems.append(f"{name}: expected {shape}, found {tuple(arrays[name].shape)}")
    for name in arrays:
        if name not in expected:
            problems.append(f"{name}: unexpected tensor {tuple(arrays[name].shape)}")
    if problems:
        raise ShapeError("checkpoint does not match architecture:\n  " + "\n  ".join(problems))
    tensors = {k: Tensor(np.array(arrays[k], dtype=np.float64), requires_grad=True) for k in expected}
    return MiniResNetParams(n_classes, in_channels, padding, tensors)


def infer_n_classes(arrays: dict[str, np.ndarray]) -> int:
    if "fc.bias" not in arrays:
        raise ShapeError("checkpoint has no fc.bias tensor")
    return int(arrays["fc.bias"].shape[0])


def _conv(params, name, x, c_in, c_out, k, stride, pad):
    spec = Conv2dSpec(c_in, c_out, (k, k), stride, pad, params.padding)
    bias = params.tensors.get(name + ".bias")
    return conv2d_forward(x, spec, params[name + ".weight"], bias)


def mini_resnet_forward(params: MiniResNetParams, batch) -> tuple[Tensor, Tensor]:
    """Return ``(logits, penultimate)`` for an NCHW batch."""
    x = ad.as_tensor(batch)
    if x.ndim != 4:
        raise ShapeError(f"expected an NCHW batch, got shape {x.shape}")
    if x.shape[1] != params.in_channels:
        raise ShapeError(f"batch has {x.shape[1]} channels, model expects {params.in_channels}")
    if x.shape[2] < 8 or x.shape[3] < 8:
        raise ShapeError(f"input spatial size {x.shape[2:]} is below the 8x8 minimum")

    h = _conv(params, "stem", x, params.in_channels, STAGE_WIDTHS[0], 3, 1, 1)
    h = ad.relu(channel_affine(h, params["stem.gain"], params["stem.shift"]))
    for prefix, c_in, c_out, stride in _block_layout(params.in_channels):
        y = _conv(params, f"{prefix}.conv1", h, c_in, c_out, 3, stride, 1)
        y = ad.relu(channel_affine(y, params[f"{prefix}.gain1"], params[f"{prefix}.shift1"]))
        y = _conv(params, f"{prefix}.conv2", y, c_out, c_out, 3, 1, 1)
        y = channel_affine(y, params[f"{prefix}.gain2"], params[f"{prefix}.shift2"])
        if f"{prefix}.proj.weight" in params.tensors:
            skip = _conv(params, f"{prefix}.proj", h, c_in, c_out, 1, stride, 0)
        else:
            skip = h
        h = ad.relu(ad.add(y, skip))
    penultimate = ad.mean(h, axis=(2, 3))
    logits = ad.add(ad.matmul(penultimate, params["fc.weight"]), params["fc.bias"])
    return logits, penultimate
