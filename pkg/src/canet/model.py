"""Classifier assembly: separable-conv backbone, attention, head, checkpoints.

The reduced backbone ("XceptionLite") is an entry 3x3 stride-2 convolution
followed by residual separable blocks: [sepconv, ReLU, sepconv, maxpool]
with a 1x1 stride-2 convolution on the skip path, then the channel
attention block, global average pooling, a hidden ReLU dense layer and a
softmax classification head.

Freezing marks a prefix of parameterized layers non-trainable: the
optimizer skips their parameters while gradients keep flowing through
them.

Checkpoints are a little-endian binary format (magic ``CANW``) holding a
JSON config echo plus named raw float tensors; round-trips are bit-exact
and malformed files are rejected with the failing byte offset.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass

import numpy as np

from .attention import AttentionConfig, AttentionParams, HeadParams, attention_forward
from .layers import (
    ConvParams,
    DenseParams,
    conv2d,
    conv_params,
    dense_forward,
    dense_params,
    depthwise_params,
    global_avg_pool2d,
    he_uniform,
    max_pool2d,
    relu,
    separable_conv2d,
)
from .tensor import ShapeError, Tensor, add

__all__ = [
    "LayerSpec",
    "ModelSpec",
    "build_xception_lite",
    "freeze_layers",
    "model_forward",
    "save_checkpoint",
    "load_checkpoint",
    "CheckpointError",
    "CHECKPOINT_MAGIC",
    "CHECKPOINT_VERSION",
]


@dataclass
class LayerSpec:
    """Descriptor for one layer: kind, shape config, parameter names, trainable flag."""

    name: str
    kind: str               # conv | sepconv | skipconv | attention | gap | dense
    config: dict
    param_names: tuple[str, ...]
    trainable: bool = True


@dataclass
class ModelSpec:
    layers: list[LayerSpec]
    attention: AttentionConfig | None
    num_classes: int
    input_size: tuple[int, int, int]
    widths: tuple[int, ...]
    hidden_units: int
    attention_spatial: tuple[int, int] = (1, 1)

    def parameterized_layers(self) -> list[LayerSpec]:
        return [layer for layer in self.layers if layer.param_names]

    def to_dict(self) -> dict:
        return {
            "layers": [
                {
                    "name": l.name,
                    "kind": l.kind,
                    "config": l.config,
                    "param_names": list(l.param_names),
                    "trainable": l.trainable,
                }
                for l in self.layers
            ],
            "attention": None if self.attention is None else {
                "channels": self.attention.channels,
                "heads": self.attention.heads,
                "reduction": self.attention.reduction,
                "gate_mode": self.attention.gate_mode,
            },
            "num_classes": self.num_classes,
            "input_size": list(self.input_size),
            "widths": list(self.widths),
            "hidden_units": self.hidden_units,
            "attention_spatial": list(self.attention_spatial),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        attention = None
        if d.get("attention") is not None:
            attention = AttentionConfig(**d["attention"])
        layers = [
            LayerSpec(
                name=e["name"],
                kind=e["kind"],
                config=dict(e["config"]),
                param_names=tuple(e["param_names"]),
                trainable=bool(e["trainable"]),
            )
            for e in d["layers"]
        ]
        return cls(
            layers=layers,
            attention=attention,
            num_classes=int(d["num_classes"]),
            input_size=tuple(d["input_size"]),
            widths=tuple(d["widths"]),
            hidden_units=int(d["hidden_units"]),
            attention_spatial=tuple(d["attention_spatial"]),
        )


# ---------------------------------------------------------------------------
# construction

def build_xception_lite(width_config, attention_cfg: AttentionConfig | None,
                        num_classes: int, seed: int, *, input_size: int = 32,
                        hidden_units: int = 1024,
                        dtype=np.float32) -> tuple[ModelSpec, dict[str, Tensor]]:
    """Build the reduced backbone and its seeded parameters.

    ``width_config`` gives the per-block output channels; the entry
    convolution uses the first width.  ``attention_cfg`` must match the
    final width (pass None for the no-attention baseline).  Returns the
    model spec and a name -> tensor parameter dict.
    """
    widths = tuple(int(w) for w in width_config)
    if not widths or any(w < 1 for w in widths):
        raise ValueError(f"widths must be positive, got {width_config}")
    if input_size < 8:
        raise ValueError(f"input size must be >= 8, got {input_size}")
    if num_classes < 2:
        raise ValueError(f"num_classes must be >= 2, got {num_classes}")
    if attention_cfg is not None and attention_cfg.channels != widths[-1]:
        raise ValueError(
            f"attention channels {attention_cfg.channels} != final width {widths[-1]}")

    rng = np.random.default_rng(seed)
    layers: list[LayerSpec] = []
    params: dict[str, Tensor] = {}

    def register(prefix: str, pairs: dict[str, Tensor]) -> tuple[str, ...]:
        names = []
        for suffix, tensor in pairs.items():
            name = f"{prefix}.{suffix}"
            params[name] = tensor
            names.append(name)
        return tuple(names)

    # entry convolution, 3x3 stride 2, same padding, ReLU
    entry = conv_params(3, 3, 3, widths[0], rng, stride=2, padding="same", dtype=dtype)
    names = register("entry", {"kernel": entry.kernel, "bias": entry.bias})
    layers.append(LayerSpec("entry", "conv",
                            {"kh": 3, "kw": 3, "c_in": 3, "c_out": widths[0],
                             "stride": 2, "padding": "same", "activation": "relu"},
                            names))
    size = -(-input_size // 2)

    c_in = widths[0]
    for b, c_out in enumerate(widths, start=1):
        for s, (sc_in, sc_out) in enumerate(((c_in, c_out), (c_out, c_out)), start=1):
            dw = depthwise_params(3, 3, sc_in, rng, dtype=dtype)
            pw = ConvParams(
                kernel=Tensor(he_uniform(rng, (1, 1, sc_in, sc_out), sc_in, dtype),
                              requires_grad=True),
                bias=Tensor(np.zeros(sc_out, dtype=dtype), requires_grad=True),
            )
            names = register(f"block{b}.sep{s}", {
                "dw_kernel": dw.kernel, "dw_bias": dw.bias,
                "pw_kernel": pw.kernel, "pw_bias": pw.bias,
            })
            layers.append(LayerSpec(f"block{b}.sep{s}", "sepconv",
                                    {"kh": 3, "kw": 3, "c_in": sc_in, "c_out": sc_out,
                                     "stride": 1, "padding": "same"},
                                    names))
        skip = conv_params(1, 1, c_in, c_out, rng, stride=2, padding="same", dtype=dtype)
        names = register(f"block{b}.skip", {"kernel": skip.kernel, "bias": skip.bias})
        layers.append(LayerSpec(f"block{b}.skip", "skipconv",
                                {"kh": 1, "kw": 1, "c_in": c_in, "c_out": c_out,
                                 "stride": 2, "padding": "same"},
                                names))
        size = -(-size // 2)
        c_in = c_out

    spatial = (size, size)
    if attention_cfg is not None:
        attn = _init_attention_for_model(attention_cfg, spatial, rng, dtype)
        names = register("attention", {k.split("attention.", 1)[1]: v
                                       for k, v in attn.named_tensors().items()})
        layers.append(LayerSpec("attention", "attention",
                                {"channels": attention_cfg.channels,
                                 "heads": attention_cfg.heads,
                                 "reduction": attention_cfg.reduction,
                                 "gate_mode": attention_cfg.gate_mode,
                                 "spatial": list(spatial)},
                                names))

    layers.append(LayerSpec("gap", "gap", {}, ()))

    fc = dense_params(widths[-1], hidden_units, rng, init="he", dtype=dtype)
    names = register("fc", {"weight": fc.weight, "bias": fc.bias})
    layers.append(LayerSpec("fc", "dense",
                            {"in": widths[-1], "out": hidden_units, "activation": "relu"},
                            names))

    head = dense_params(hidden_units, num_classes, rng, init="glorot", dtype=dtype)
    names = register("head", {"weight": head.weight, "bias": head.bias})
    layers.append(LayerSpec("head", "dense",
                            {"in": hidden_units, "out": num_classes,
                             "activation": "softmax"},
                            names))

    spec = ModelSpec(layers=layers, attention=attention_cfg, num_classes=num_classes,
                     input_size=(input_size, input_size, 3), widths=widths,
                     hidden_units=hidden_units, attention_spatial=spatial)
    return spec, params


def _init_attention_for_model(cfg: AttentionConfig, spatial: tuple[int, int],
                              rng: np.random.Generator, dtype) -> AttentionParams:
    """Same init policy as attention.init_attention_params, drawing from the
    model's generator so the whole build is one seeded stream."""
    c, bn = cfg.channels, cfg.bottleneck
    heads = [
        HeadParams(
            w1=Tensor(he_uniform(rng, (c, bn), c, dtype), requires_grad=True),
            b1=Tensor(np.zeros(bn, dtype=dtype), requires_grad=True),
            w2=Tensor(np.zeros((bn, c), dtype=dtype), requires_grad=True),
            b2=Tensor(np.zeros(c, dtype=dtype), requires_grad=True),
        )
        for _ in range(cfg.heads)
    ]
    return AttentionParams(
        spatial_logits=Tensor(np.zeros(spatial, dtype=dtype), requires_grad=True),
        heads=heads,
        post_weight=Tensor(np.eye(c, dtype=dtype), requires_grad=True),
        post_bias=Tensor(np.zeros(c, dtype=dtype), requires_grad=True),
    )


def _attention_params_view(spec: ModelSpec, params: dict[str, Tensor]) -> AttentionParams:
    cfg = spec.attention
    heads = [
        HeadParams(
            w1=params[f"attention.head{i}.w1"],
            b1=params[f"attention.head{i}.b1"],
            w2=params[f"attention.head{i}.w2"],
            b2=params[f"attention.head{i}.b2"],
        )
        for i in range(cfg.heads)
    ]
    return AttentionParams(
        spatial_logits=params["attention.spatial_logits"],
        heads=heads,
        post_weight=params["attention.post.weight"],
        post_bias=params["attention.post.bias"],
    )


# ---------------------------------------------------------------------------
# freezing and forward

def freeze_layers(model: ModelSpec, fraction: float) -> ModelSpec:
    """Mark the first ceil(fraction * P) parameterized layers non-trainable.

    P counts parameterized layers in topological order; the attention
    block and head layers count like any other.  Frozen layers receive no
    optimizer updates but gradients still flow through them.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"freeze fraction must be in [0, 1], got {fraction}")
    plist = model.parameterized_layers()
    raw = fraction * len(plist)
    nearest = round(raw)
    n_freeze = nearest if abs(raw - nearest) < 1e-9 else math.ceil(raw)
    for i, layer in enumerate(plist):
        layer.trainable = i >= n_freeze
    return model


def model_forward(model: ModelSpec, params: dict[str, Tensor], batch: Tensor) -> Tensor:
    """Class probabilities for a batch of (n, S, S, 3) images."""
    s = model.input_size[0]
    if batch.ndim != 4 or batch.shape[1:] != (s, s, 3):
        raise ShapeError(
            f"batch shape {batch.shape} incompatible with input size {model.input_size}")

    x = relu(conv2d(batch, ConvParams(params["entry.kernel"], params["entry.bias"],
                                      stride=2, padding="same")))
    for b in range(1, len(model.widths) + 1):
        skip = conv2d(x, ConvParams(params[f"block{b}.skip.kernel"],
                                    params[f"block{b}.skip.bias"],
                                    stride=2, padding="same"))
        m = separable_conv2d(
            x,
            ConvParams(params[f"block{b}.sep1.dw_kernel"], params[f"block{b}.sep1.dw_bias"]),
            ConvParams(params[f"block{b}.sep1.pw_kernel"], params[f"block{b}.sep1.pw_bias"]),
        )
        m = relu(m)
        m = separable_conv2d(
            m,
            ConvParams(params[f"block{b}.sep2.dw_kernel"], params[f"block{b}.sep2.dw_bias"]),
            ConvParams(params[f"block{b}.sep2.pw_kernel"], params[f"block{b}.sep2.pw_bias"]),
        )
        m = max_pool2d(m)
        x = add(m, skip)

    if model.attention is not None:
        x = attention_forward(x, _attention_params_view(model, params), model.attention)

    x = global_avg_pool2d(x)
    x = dense_forward(x, DenseParams(params["fc.weight"], params["fc.bias"]), "relu")
    return dense_forward(x, DenseParams(params["head.weight"], params["head.bias"]),
                         "softmax")


# ---------------------------------------------------------------------------
# checkpoint serialization

CHECKPOINT_MAGIC = b"CANW"
CHECKPOINT_VERSION = 1
_DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_CODE_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


class CheckpointError(ValueError):
    """Malformed checkpoint file; the message carries the byte offset."""


def save_checkpoint(params: dict[str, Tensor], config: dict, path) -> None:
    """Write named parameters plus a JSON config echo (little-endian)."""
    blob = json.dumps(config, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        f.write(struct.pack("<I", len(params)))
        for name, tensor in params.items():
            encoded = name.encode("utf-8")
            f.write(struct.pack("<H", len(encoded)))
            f.write(encoded)
            arr = tensor.data
            f.write(struct.pack("<B", _DTYPE_CODES[arr.dtype]))
            f.write(struct.pack("<B", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<")).tobytes())


class _Reader:
    def __init__(self, data: bytes, what: str):
        self.data = data
        self.offset = 0
        self.what = what

    def take(self, n: int) -> bytes:
        if self.offset + n > len(self.data):
            raise CheckpointError(
                f"truncated {self.what}: needed {n} bytes at offset {self.offset}, "
                f"only {len(self.data) - self.offset} remain")
        chunk = self.data[self.offset:self.offset + n]
        self.offset += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path) -> tuple[dict[str, Tensor], dict]:
    """Read a checkpoint; bit-exact inverse of save_checkpoint, fail-closed."""
    with open(path, "rb") as f:
        r = _Reader(f.read(), "checkpoint")
    magic = r.take(4)
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointError(f"bad magic {magic!r} at offset 0")
    (version,) = r.unpack("<I")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported version {version} at offset 4")
    (blob_len,) = r.unpack("<I")
    try:
        config = json.loads(r.take(blob_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"invalid config blob ending at offset {r.offset}: {exc}")
    (count,) = r.unpack("<I")
    params: dict[str, Tensor] = {}
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        code_offset = r.offset
        (code,) = r.unpack("<B")
        if code not in _CODE_DTYPES:
            raise CheckpointError(f"unknown dtype code {code} at offset {code_offset}")
        dtype = _CODE_DTYPES[code]
        (rank,) = r.unpack("<B")
        dims = r.unpack(f"<{rank}I") if rank else ()
        n_values = int(np.prod(dims, dtype=np.int64)) if dims else 1
        raw = r.take(n_values * dtype.itemsize)
        arr = np.frombuffer(raw, dtype=dtype).reshape(dims).copy()
        params[name] = Tensor(arr.astype(arr.dtype.newbyteorder("=")), requires_grad=True)
    if r.offset != len(r.data):
        raise CheckpointError(
            f"trailing data: {len(r.data) - r.offset} unexpected bytes at offset {r.offset}")
    return params, config
