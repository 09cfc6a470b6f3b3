"""Convolutional autoencoder: configuration, parameters, forward/backward, checkpoints.

Layer stack for the default config (32x32 grayscale input)::

    enc1  conv 1->4   k3 p1, relu, maxpool2     32 -> 16
    enc2  conv 4->16  k3 p1, relu, maxpool2     16 -> 8
    enc3  conv 16->32 k3 p1, relu, maxpool2      8 -> 4   (latent 32x4x4)
    dec1  tconv 32->16 k2 s2, relu               4 -> 8
    dec2  tconv 16->4  k2 s2, relu               8 -> 16
    dec3  tconv 4->1   k2 s2, sigmoid           16 -> 32
"""
import os
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import container
from .errors import ConfigError, ShapeMismatchError
from .kernels import (
    ConvParams,
    conv2d_backward,
    conv2d_forward,
    maxpool2_backward,
    maxpool2_forward,
    relu,
    relu_backward,
    sigmoid,
    sigmoid_backward,
    tconv2d_backward,
    tconv2d_forward,
)
from .rng import SplitMix64

CHECKPOINT_MAGIC = b"ANOMALNET\x00"


@dataclass(frozen=True)
class ModelConfig:
    input_size: int = 32
    encoder_channels: tuple = (4, 16, 32)
    decoder_channels: tuple = (16, 4, 1)
    conv_kernel: int = 3
    conv_padding: int = 1
    pool: int = 2
    tconv_kernel: int = 2
    tconv_stride: int = 2
    seed: int = 0
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 200
    batch_size: int = 32

    def __post_init__(self):
        object.__setattr__(self, "encoder_channels", tuple(int(c) for c in self.encoder_channels))
        object.__setattr__(self, "decoder_channels", tuple(int(c) for c in self.decoder_channels))

    def violations(self) -> list:
        bad = []
        depth = len(self.encoder_channels)
        if depth < 1:
            bad.append("encoder_channels must be non-empty")
        if len(self.decoder_channels) != depth:
            bad.append("decoder_channels must have as many entries as encoder_channels")
        if any(c < 1 for c in self.encoder_channels + self.decoder_channels):
            bad.append("channel counts must be positive")
        if self.decoder_channels and self.decoder_channels[-1] != 1:
            bad.append("decoder output channel count must be 1 (grayscale target)")
        if self.input_size < 1 or self.input_size % (2 ** depth):
            bad.append(f"input_size must be a positive multiple of 2^{depth}")
        if self.conv_kernel < 1 or self.conv_kernel % 2 == 0 or self.conv_padding != (self.conv_kernel - 1) // 2:
            bad.append("conv_kernel must be odd with conv_padding = (conv_kernel - 1) / 2")
        if self.pool != 2:
            bad.append("pool must be 2")
        if self.tconv_kernel != self.tconv_stride or self.tconv_stride != 2:
            bad.append("tconv_kernel and tconv_stride must both be 2")
        if not (self.lr > 0 and 0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.eps > 0):
            bad.append("need lr > 0, 0 <= beta1, beta2 < 1, eps > 0")
        if self.epochs < 0:
            bad.append("epochs must be >= 0")
        if self.batch_size < 1:
            bad.append("batch_size must be >= 1")
        if not 0 <= self.seed < 2 ** 64:
            bad.append("seed must be an unsigned 64-bit integer")
        return bad

    def validate(self) -> "ModelConfig":
        bad = self.violations()
        if bad:
            raise ConfigError("invalid model config: " + "; ".join(bad))
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["encoder_channels"] = list(self.encoder_channels)
        d["decoder_channels"] = list(self.decoder_channels)
        return d

    @classmethod
    def from_dict(cls, d: dict, strict: bool = False) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if strict and unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**{k: v for k, v in d.items() if k in known})

    def layer_specs(self) -> list:
        """``(name, kind, in_channels, out_channels)`` per layer, in order."""
        specs = []
        c = 1
        for i, co in enumerate(self.encoder_channels, 1):
            specs.append((f"enc{i}", "conv", c, co))
            c = co
        for i, co in enumerate(self.decoder_channels, 1):
            specs.append((f"dec{i}", "tconv", c, co))
            c = co
        return specs

    def param_shapes(self) -> list:
        """``(name, shape)`` for every weight and bias tensor in checkpoint order."""
        out = []
        for name, kind, ci, co in self.layer_specs():
            if kind == "conv":
                w = (co, ci, self.conv_kernel, self.conv_kernel)
            else:
                w = (ci, co, self.tconv_kernel, self.tconv_kernel)
            out += [(f"{name}.weight", w), (f"{name}.bias", (co,))]
        return out

    def latent_shape(self) -> tuple:
        return (self.encoder_channels[-1],) + (self.input_size >> len(self.encoder_channels),) * 2


@dataclass
class ParameterSet:
    """Ordered per-layer parameters, ``enc1 .. encK`` then ``dec1 .. decK``."""

    names: list
    layers: list  # of ConvParams

    def __getitem__(self, name) -> ConvParams:
        return self.layers[self.names.index(name)]

    def arrays(self) -> list:
        """Flat ``[w, b, w, b, ...]`` list of the underlying arrays (no copies)."""
        return [a for p in self.layers for a in (p.weights, p.bias)]

    def named_arrays(self) -> list:
        return [(f"{n}.{k}", a) for n, p in zip(self.names, self.layers)
                for k, a in (("weight", p.weights), ("bias", p.bias))]

    def astype(self, dtype) -> "ParameterSet":
        return ParameterSet(list(self.names), [p.astype(dtype) for p in self.layers])

    def copy(self) -> "ParameterSet":
        return self.astype(self.layers[0].weights.dtype)


@dataclass
class Model:
    config: ModelConfig
    params: ParameterSet
    epochs_trained: int = 0
    # bumped whenever parameters change, so stale forward caches are detectable
    version: int = 0

    def astype(self, dtype) -> "Model":
        return Model(self.config, self.params.astype(dtype), self.epochs_trained)


@dataclass
class ForwardCache:
    model_id: int
    version: int
    input_shape: tuple
    enc: list = field(default_factory=list)  # (layer input, pre-activation, argmax)
    dec: list = field(default_factory=list)  # (layer input, activation output)


def init_parameters(config: ModelConfig, dtype=np.float32) -> ParameterSet:
    """Seeded uniform init in ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]``, zero biases.

    ``fan_in = in_channels * kh * kw``. Draws come from ``SplitMix64(config.seed)``,
    consumed layer by layer (enc1 .. dec3), each weight tensor in row-major
    order of its stored shape; one draw ``u`` maps to ``b * (2u - 1)``.
    """
    rng = SplitMix64(config.seed)
    names, layers = [], []
    shapes = dict(config.param_shapes())
    for name, kind, ci, _ in config.layer_specs():
        wshape = shapes[f"{name}.weight"]
        bound = 1.0 / np.sqrt(ci * wshape[2] * wshape[3])
        n = int(np.prod(wshape))
        w = np.array([bound * (2.0 * rng.random() - 1.0) for _ in range(n)]).reshape(wshape)
        names.append(name)
        layers.append(ConvParams(w.astype(dtype), np.zeros(shapes[f"{name}.bias"], dtype=dtype)))
    return ParameterSet(names, layers)


def zero_parameters(config: ModelConfig, dtype=np.float32) -> ParameterSet:
    shapes = dict(config.param_shapes())
    names = [s[0] for s in config.layer_specs()]
    return ParameterSet(names, [ConvParams(np.zeros(shapes[f"{n}.weight"], dtype), np.zeros(shapes[f"{n}.bias"], dtype))
                                for n in names])


def build_model(config: ModelConfig = None) -> Model:
    config = (config or ModelConfig()).validate()
    return Model(config, init_parameters(config))


def model_forward(model: Model, batch: np.ndarray):
    """Reconstruct ``batch`` ([N,1,S,S]); returns ``(reconstruction, cache)``."""
    cfg = model.config
    s = cfg.input_size
    if batch.ndim != 4 or batch.shape[1:] != (1, s, s):
        raise ValueError(f"expected batch of shape [N,1,{s},{s}], got {batch.shape}")
    cache = ForwardCache(id(model), model.version, batch.shape)
    depth = len(cfg.encoder_channels)
    h = batch
    for p in model.params.layers[:depth]:
        a = conv2d_forward(h, p, 1, cfg.conv_padding)
        pooled, idx = maxpool2_forward(relu(a))
        cache.enc.append((h, a, idx))
        h = pooled
    for i, p in enumerate(model.params.layers[depth:]):
        a = tconv2d_forward(h, p, cfg.tconv_stride)
        y = sigmoid(a) if i == depth - 1 else relu(a)
        cache.dec.append((h, y))
        h = y
    return h, cache


def model_backward(model: Model, cache: ForwardCache, grad_reconstruction: np.ndarray) -> ParameterSet:
    """Gradients for every weight and bias, packaged like ``model.params``."""
    if cache.model_id != id(model) or cache.version != model.version:
        raise ValueError("forward cache does not belong to the current model parameters")
    if grad_reconstruction.shape != cache.input_shape:
        raise ValueError(f"gradient shape {grad_reconstruction.shape} != reconstruction {cache.input_shape}")
    cfg = model.config
    depth = len(cfg.encoder_channels)
    layers = model.params.layers
    grads = [None] * len(layers)

    g = grad_reconstruction
    for i in reversed(range(depth)):
        x, y = cache.dec[i]
        g = sigmoid_backward(y, g) if i == depth - 1 else relu_backward(y, g)
        g, gw, gb = tconv2d_backward(x, layers[depth + i], g, cfg.tconv_stride)
        grads[depth + i] = ConvParams(gw, gb)
    for i in reversed(range(depth)):
        x, a, idx = cache.enc[i]
        g = maxpool2_backward(idx, g, a.shape)
        g = relu_backward(a, g)
        g, gw, gb = conv2d_backward(x, layers[i], g, 1, cfg.conv_padding)
        grads[i] = ConvParams(gw, gb)
    return ParameterSet(list(model.params.names), grads)


def checkpoint_bytes(model: Model) -> bytes:
    header = {"config": model.config.to_dict(), "seed": model.config.seed, "epochs_trained": model.epochs_trained}
    return container.encode(CHECKPOINT_MAGIC, header, model.params.named_arrays())


def save_checkpoint(model: Model, path) -> None:
    container.write_atomic(path, checkpoint_bytes(model))


def load_checkpoint(path) -> Model:
    with open(os.fspath(path), "rb") as f:
        blob = f.read()
    return model_from_bytes(blob)


def model_from_bytes(blob: bytes) -> Model:
    header, tensors = container.decode(CHECKPOINT_MAGIC, blob)
    try:
        config = ModelConfig.from_dict(header["config"]).validate()
    except (KeyError, TypeError, ConfigError) as exc:
        raise ShapeMismatchError(f"checkpoint config unusable: {exc}") from exc
    expected = config.param_shapes()
    got = [(n, a.shape) for n, a in tensors]
    if got != expected:
        raise ShapeMismatchError(f"tensor metadata {got} does not match config layout {expected}")
    arrays = dict(tensors)
    names = [s[0] for s in config.layer_specs()]
    params = ParameterSet(names, [ConvParams(arrays[f"{n}.weight"], arrays[f"{n}.bias"]) for n in names])
    return Model(config, params, int(header.get("epochs_trained", 0)))
