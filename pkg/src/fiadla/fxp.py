"""Bit-exact int8 fixed-point inference.

This is the golden reference model: every fault-injected execution in
the package is compared against the outputs produced here.  All
arithmetic is integer-only and deterministic:

* values are signed 8-bit with a power-of-two scale (`frac_bits`),
* products are held in signed 16-bit, accumulation in signed 32-bit
  (wrapping two's complement),
* requantization is an arithmetic right shift with round-half-away-
  from-zero, then int8 saturation,
* the squashing activation is a hard clamp to the int8 encoding of
  [-1, 1] (no transcendental functions in fixed point).
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field

import numpy as np

INT8_MIN, INT8_MAX = -128, 127

ACTIVATIONS = ("none", "hard_tanh", "relu")
LAYER_KINDS = ("conv", "fc")


class ShapeError(ValueError):
    """Input/weight/layer shapes do not compose."""


def _wrap_int32(acc: np.ndarray) -> np.ndarray:
    """Reduce an int64 accumulator to wrapping signed 32-bit."""
    return ((acc.astype(np.int64) + 2**31) % 2**32 - 2**31).astype(np.int64)


def round_half_away(values: np.ndarray) -> np.ndarray:
    """Round to nearest integer, halves away from zero."""
    v = np.asarray(values, dtype=np.float64)
    return np.where(v >= 0.0, np.floor(v + 0.5), np.ceil(v - 0.5))


def shift_round_half_away(acc: np.ndarray, shift: int) -> np.ndarray:
    """Arithmetic right shift by `shift` with round-half-away-from-zero."""
    if shift == 0:
        return np.asarray(acc, dtype=np.int64)
    acc = np.asarray(acc, dtype=np.int64)
    half = 1 << (shift - 1)
    mag = (np.abs(acc) + half) >> shift
    return np.where(acc >= 0, mag, -mag)


def saturate_int8(values: np.ndarray) -> np.ndarray:
    return np.clip(values, INT8_MIN, INT8_MAX).astype(np.int8)


@dataclass(frozen=True, eq=False)
class FxpTensor:
    """Quantized tensor: int8 data plus a power-of-two scale exponent.

    `dims` is the data shape; activations use (height, width, channels)
    and weights (k, k, in_channels, out_channels).
    """

    data: np.ndarray
    frac_bits: int

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.int8)
        data.flags.writeable = False
        object.__setattr__(self, "data", data)
        if not 0 <= self.frac_bits <= 7:
            raise ValueError(f"frac_bits must be in [0, 7], got {self.frac_bits}")

    @property
    def dims(self) -> tuple[int, ...]:
        return self.data.shape

    def to_real(self) -> np.ndarray:
        """Dequantize to float64."""
        return self.data.astype(np.float64) / (1 << self.frac_bits)

    def bit_equal(self, other: "FxpTensor") -> bool:
        return (
            self.frac_bits == other.frac_bits
            and self.dims == other.dims
            and bool(np.array_equal(self.data, other.data))
        )


def quantize(values, frac_bits: int) -> FxpTensor:
    """Quantize real values to int8 at 2^-frac_bits resolution.

    Saturation absorbs overflow, so there is no error path.
    """
    v = np.asarray(values, dtype=np.float64)
    q = round_half_away(v * (1 << frac_bits))
    return FxpTensor(saturate_int8(q), frac_bits)


@dataclass(frozen=True)
class LayerSpec:
    """One network layer: a 2D convolution or a fully-connected layer."""

    kind: str
    in_channels: int
    out_channels: int
    kernel_size: int = 1
    stride: int = 1
    padding: int = 0
    activation: str = "none"
    requant_shift: int = 0

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.kernel_size < 1 or self.stride < 1:
            raise ValueError("kernel_size and stride must be >= 1")
        if self.in_channels < 1 or self.out_channels < 1:
            raise ValueError("channel counts must be >= 1")
        if self.padding < 0 or self.requant_shift < 0:
            raise ValueError("padding and requant_shift must be >= 0")
        if self.kind == "fc" and (self.kernel_size != 1 or self.padding != 0):
            raise ValueError("fc layers use kernel_size 1 and no padding")

    def out_spatial(self, h: int, w: int) -> tuple[int, int]:
        k, s, p = self.kernel_size, self.stride, self.padding
        ho = (h + 2 * p - k) // s + 1
        wo = (w + 2 * p - k) // s + 1
        if ho < 1 or wo < 1:
            raise ShapeError(f"kernel {k} does not fit {h}x{w} input")
        return ho, wo


def apply_activation(q: np.ndarray, activation: str, frac_bits: int) -> np.ndarray:
    """Apply the layer activation to already-requantized int8 values."""
    if activation == "none":
        return q
    if activation == "relu":
        return np.maximum(q, 0)
    if activation == "hard_tanh":
        one = 1 << frac_bits
        return np.clip(q, -one, one)
    raise ValueError(f"unknown activation {activation!r}")


def hard_tanh(acc, requant_shift: int, frac_bits: int) -> np.ndarray:
    """Requantize an int32 accumulator and clamp to the encoding of [-1, 1]."""
    q = saturate_int8(shift_round_half_away(np.asarray(acc), requant_shift))
    return apply_activation(q, "hard_tanh", frac_bits).astype(np.int8)


def _finish(acc: np.ndarray, layer: LayerSpec, out_frac: int,
            bias: np.ndarray | None) -> np.ndarray:
    """Shared epilogue: bias add, wrap, requantize, saturate, activate."""
    acc = acc.astype(np.int64)
    if bias is not None:
        acc = acc + bias.astype(np.int64)
    acc = _wrap_int32(acc)
    q = saturate_int8(shift_round_half_away(acc, layer.requant_shift))
    return apply_activation(q, layer.activation, out_frac).astype(np.int8)


def out_frac_bits(input_frac: int, weight_frac: int, requant_shift: int) -> int:
    f = input_frac + weight_frac - requant_shift
    if not 0 <= f <= 7:
        raise ValueError(f"layer produces frac_bits {f}, outside [0, 7]")
    return f


def conv2d_ref(inp: FxpTensor, layer: LayerSpec, weights: FxpTensor,
               bias: np.ndarray | None = None) -> FxpTensor:
    """Reference 2D convolution.

    Input is (H, W, C), weights (k, k, C, O), output (Ho, Wo, O).  The
    optional bias is int32 at the accumulator scale (input frac_bits +
    weight frac_bits) and is added before requantization.
    """
    if inp.data.ndim != 3:
        raise ShapeError(f"conv input must be 3-D (H, W, C), got {inp.dims}")
    h, w, c = inp.dims
    k = layer.kernel_size
    if weights.dims != (k, k, c, layer.out_channels) or c != layer.in_channels:
        raise ShapeError(
            f"weights {weights.dims} do not match layer "
            f"(k={k}, c={layer.in_channels}, o={layer.out_channels}) on {inp.dims}"
        )
    ho, wo = layer.out_spatial(h, w)
    p = layer.padding
    padded = np.zeros((h + 2 * p, w + 2 * p, c), dtype=np.int64)
    padded[p:p + h, p:p + w, :] = inp.data

    # im2col: one row per output pixel, columns in (ki, kj, c) order.
    cols = np.empty((ho * wo, k * k * c), dtype=np.int64)
    idx = 0
    for i in range(ho):
        for j in range(wo):
            window = padded[i * layer.stride:i * layer.stride + k,
                            j * layer.stride:j * layer.stride + k, :]
            cols[idx] = window.reshape(-1)
            idx += 1
    acc = cols @ weights.data.reshape(k * k * c, layer.out_channels).astype(np.int64)

    out_frac = out_frac_bits(inp.frac_bits, weights.frac_bits, layer.requant_shift)
    out = _finish(acc, layer, out_frac, bias)
    return FxpTensor(out.reshape(ho, wo, layer.out_channels), out_frac)


def fc_ref(inp: FxpTensor, layer: LayerSpec, weights: FxpTensor,
           bias: np.ndarray | None = None) -> FxpTensor:
    """Reference fully-connected layer: k=1 convolution over the flattened input."""
    flat = inp.data.reshape(-1)
    if weights.dims != (1, 1, flat.size, layer.out_channels) \
            or flat.size != layer.in_channels:
        raise ShapeError(
            f"fc weights {weights.dims} do not match flattened input "
            f"{flat.size} -> {layer.out_channels}"
        )
    acc = flat.astype(np.int64) @ weights.data.reshape(
        flat.size, layer.out_channels).astype(np.int64)
    out_frac = out_frac_bits(inp.frac_bits, weights.frac_bits, layer.requant_shift)
    out = _finish(acc, layer, out_frac, bias)
    return FxpTensor(out.reshape(1, 1, layer.out_channels), out_frac)


def layer_ref(inp: FxpTensor, layer: LayerSpec, weights: FxpTensor,
              bias: np.ndarray | None = None) -> FxpTensor:
    return (conv2d_ref if layer.kind == "conv" else fc_ref)(inp, layer, weights, bias)


@dataclass(eq=False)
class Network:
    """Ordered layer stack with one weight tensor (and optional int32 bias
    vector, at accumulator scale) per layer."""

    name: str
    layers: list[LayerSpec]
    weights: list[FxpTensor]
    biases: list[np.ndarray | None] = field(default_factory=list)

    def __post_init__(self):
        if len(self.layers) != len(self.weights):
            raise ShapeError("one weight tensor per layer required")
        if not self.biases:
            self.biases = [None] * len(self.layers)
        if len(self.biases) != len(self.layers):
            raise ShapeError("one bias entry per layer required")
        for spec, w in zip(self.layers, self.weights):
            if w.dims[2] != spec.in_channels or w.dims[3] != spec.out_channels:
                raise ShapeError(
                    f"layer {spec} does not match weight dims {w.dims}")

    def with_weights(self, weights: list[FxpTensor]) -> "Network":
        """Same topology with substituted weights (used for SEU injection)."""
        return Network(self.name, self.layers, weights, self.biases)


def forward(net: Network, inp: FxpTensor, tap=None) -> FxpTensor:
    """Run the network; `tap(index, tensor) -> tensor` may observe or
    replace each inter-layer activation (the fault-injection hook).

    The tap is not applied to the final output, which is the network's
    external result rather than a hidden state.
    """
    x = inp
    last = len(net.layers) - 1
    for i, (spec, w, b) in enumerate(zip(net.layers, net.weights, net.biases)):
        x = layer_ref(x, spec, w, b)
        if tap is not None and i < last:
            x = tap(i, x)
    return x


# --- network file format -------------------------------------------------
#
# JSON: {"name": ..., "layers": [{layer fields..., "weights": {"dims", "frac_bits",
# "data_b64"}, "bias": {"data": [int32...]} | null}]}.  Weight bytes are the
# raw int8 array in C order, base64-encoded.


def _tensor_to_json(t: FxpTensor) -> dict:
    return {
        "dims": list(t.dims),
        "frac_bits": t.frac_bits,
        "data_b64": base64.b64encode(t.data.tobytes()).decode("ascii"),
    }


def _tensor_from_json(obj: dict) -> FxpTensor:
    raw = base64.b64decode(obj["data_b64"])
    data = np.frombuffer(raw, dtype=np.int8).reshape(obj["dims"])
    return FxpTensor(data, obj["frac_bits"])


def save_network(net: Network, path) -> None:
    doc = {"name": net.name, "layers": []}
    for spec, w, b in zip(net.layers, net.weights, net.biases):
        doc["layers"].append({
            "kind": spec.kind,
            "kernel_size": spec.kernel_size,
            "stride": spec.stride,
            "in_channels": spec.in_channels,
            "out_channels": spec.out_channels,
            "padding": spec.padding,
            "activation": spec.activation,
            "requant_shift": spec.requant_shift,
            "weights": _tensor_to_json(w),
            "bias": None if b is None else {"data": [int(v) for v in b]},
        })
    with open(path, "w") as f:
        json.dump(doc, f, indent=1)
        f.write("\n")


def load_network(path) -> Network:
    with open(path) as f:
        doc = json.load(f)
    layers, weights, biases = [], [], []
    for entry in doc["layers"]:
        layers.append(LayerSpec(
            kind=entry["kind"],
            in_channels=entry["in_channels"],
            out_channels=entry["out_channels"],
            kernel_size=entry["kernel_size"],
            stride=entry["stride"],
            padding=entry["padding"],
            activation=entry["activation"],
            requant_shift=entry["requant_shift"],
        ))
        weights.append(_tensor_from_json(entry["weights"]))
        bias = entry.get("bias")
        biases.append(None if bias is None
                      else np.asarray(bias["data"], dtype=np.int64))
    return Network(doc["name"], layers, weights, biases)
