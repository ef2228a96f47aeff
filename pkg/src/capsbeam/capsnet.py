"""Capsule-network beamformer: layer configs and the float inference path.

The network maps time-of-flight corrected channel data [rows, cols, ch]
to an in-phase / quadrature pair per pixel. Dataflow: a conv stack with
ReLU, a capsule conv stack (conv, reshape to capsules, squash), per-pixel
dynamic routing by agreement, then a chain of pointwise FC layers ending
in 2 features. Routing predictions are the input capsules themselves
broadcast over output capsules; there are no trained routing matrices, so
in_dim must equal out_dim. Inference only; training is out of scope.

Weight bundle naming: conv0.weight/conv0.bias, conv1.*, caps0.*, caps1.*,
fc0.* .. fc3.*. Conv weights are [kh, kw, cin, cout] cross-correlation
kernels with zero padding (kh - 1) / 2 and stride 1; FC weights are
[in, out] applied as x @ W + b.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .data_model import EnvelopeImage, PixelGrid, RfVolume, Tensor, WeightBundle
from .errors import InvalidConfig, MissingWeight, ShapeMismatch

# Rows processed per conv chunk; bounds the im2col working set on full frames.
_CONV_ROW_CHUNK = 32


@dataclass(frozen=True)
class ConvLayerCfg:
    kernel_h: int
    kernel_w: int
    in_ch: int
    out_ch: int
    relu: bool = True

    def validate(self):
        if self.kernel_h < 1 or self.kernel_w < 1:
            raise InvalidConfig("kernel dims must be positive")
        if self.kernel_h % 2 == 0 or self.kernel_w % 2 == 0:
            raise InvalidConfig("kernels must be odd for symmetric zero padding")
        if self.in_ch < 1 or self.out_ch < 1:
            raise InvalidConfig("channel counts must be positive")


@dataclass(frozen=True)
class CapsConvLayerCfg:
    kernel_h: int
    kernel_w: int
    in_ch: int
    out_ch: int
    num_capsules: int
    capsule_dim: int

    def validate(self):
        ConvLayerCfg(self.kernel_h, self.kernel_w, self.in_ch, self.out_ch).validate()
        if self.num_capsules * self.capsule_dim != self.out_ch:
            raise InvalidConfig(
                f"capsule grouping {self.num_capsules}x{self.capsule_dim} "
                f"does not tile out_ch {self.out_ch}"
            )


@dataclass(frozen=True)
class RoutingCfg:
    num_in_capsules: int
    in_dim: int
    num_out_capsules: int
    out_dim: int
    num_iterations: int = 3

    def validate(self):
        if min(self.num_in_capsules, self.in_dim, self.num_out_capsules, self.out_dim) < 1:
            raise InvalidConfig("routing dims must be positive")
        if self.in_dim != self.out_dim:
            raise InvalidConfig("weight-free routing requires in_dim == out_dim")
        if self.num_iterations < 1:
            raise InvalidConfig("routing needs at least one iteration")


@dataclass(frozen=True)
class FcLayerCfg:
    in_features: int
    out_features: int
    relu: bool = True

    def validate(self):
        if self.in_features < 1 or self.out_features < 1:
            raise InvalidConfig("fc feature counts must be positive")


@dataclass(frozen=True)
class CapsConfig:
    """Full network description. Partial configs (subsets of stages) are
    valid for accounting; inference requires every stage present."""

    conv_layers: tuple[ConvLayerCfg, ...] = ()
    caps_conv_layers: tuple[CapsConvLayerCfg, ...] = ()
    routing: RoutingCfg | None = None
    fc_layers: tuple[FcLayerCfg, ...] = ()

    def validate(self):
        chain = None
        for layer in list(self.conv_layers) + list(self.caps_conv_layers):
            layer.validate()
            if chain is not None and layer.in_ch != chain:
                raise InvalidConfig(f"layer in_ch {layer.in_ch} breaks chain at {chain}")
            chain = layer.out_ch
        if self.routing is not None:
            self.routing.validate()
            if self.caps_conv_layers:
                last = self.caps_conv_layers[-1]
                if (last.num_capsules, last.capsule_dim) != (
                    self.routing.num_in_capsules,
                    self.routing.in_dim,
                ):
                    raise InvalidConfig("routing input does not match last capsule layer")
            chain = self.routing.num_out_capsules * self.routing.out_dim
        prev = chain
        for layer in self.fc_layers:
            layer.validate()
            if prev is not None and layer.in_features != prev:
                raise InvalidConfig(f"fc in_features {layer.in_features} breaks chain at {prev}")
            prev = layer.out_features

    def validate_for_inference(self):
        self.validate()
        if not self.conv_layers or not self.caps_conv_layers:
            raise InvalidConfig("inference needs conv and capsule conv stages")
        if self.routing is None or not self.fc_layers:
            raise InvalidConfig("inference needs routing and fc stages")
        if self.fc_layers[-1].out_features != 2:
            raise InvalidConfig("final fc layer must emit 2 features (I, Q)")

    @property
    def receptive_field(self) -> int:
        span = 1
        for layer in list(self.conv_layers) + list(self.caps_conv_layers):
            span += layer.kernel_h - 1
        return span

    def layer_names(self) -> list[str]:
        names = [f"conv{i}" for i in range(len(self.conv_layers))]
        names += [f"caps{i}" for i in range(len(self.caps_conv_layers))]
        names += [f"fc{i}" for i in range(len(self.fc_layers))]
        return names


def default_config() -> CapsConfig:
    """Stock architecture: 7x7 receptive field over 128 input channels.

    Widths put the parameter count at 306,722 and the whole-frame op count
    near 29.2e9 on the stock 368x128 grid.
    """
    return CapsConfig(
        conv_layers=(
            ConvLayerCfg(3, 3, 128, 128, relu=True),
            ConvLayerCfg(3, 3, 128, 88, relu=True),
        ),
        caps_conv_layers=(
            CapsConvLayerCfg(3, 3, 88, 64, num_capsules=8, capsule_dim=8),
            CapsConvLayerCfg(1, 1, 64, 64, num_capsules=8, capsule_dim=8),
        ),
        routing=RoutingCfg(8, 8, 8, 8, num_iterations=3),
        fc_layers=(
            FcLayerCfg(64, 32, relu=True),
            FcLayerCfg(32, 16, relu=True),
            FcLayerCfg(16, 8, relu=True),
            FcLayerCfg(8, 2, relu=False),
        ),
    )


def toy_config() -> CapsConfig:
    """Desk-scale network over 8 channels for tests and demos."""
    return CapsConfig(
        conv_layers=(
            ConvLayerCfg(3, 3, 8, 8, relu=True),
            ConvLayerCfg(3, 3, 8, 8, relu=True),
        ),
        caps_conv_layers=(
            CapsConvLayerCfg(3, 3, 8, 8, num_capsules=2, capsule_dim=4),
            CapsConvLayerCfg(1, 1, 8, 8, num_capsules=2, capsule_dim=4),
        ),
        routing=RoutingCfg(2, 4, 2, 4, num_iterations=3),
        fc_layers=(
            FcLayerCfg(8, 8, relu=True),
            FcLayerCfg(8, 4, relu=True),
            FcLayerCfg(4, 4, relu=True),
            FcLayerCfg(4, 2, relu=False),
        ),
    )


@dataclass
class RoutingState:
    """Snapshot of one routing iteration (leading dims are batch)."""

    logits_b: np.ndarray
    coupling_c: np.ndarray
    prediction_u_hat: np.ndarray
    output_v: np.ndarray


def conv2d(values: np.ndarray, weights: np.ndarray, bias: np.ndarray | None = None,
           relu: bool = False) -> np.ndarray:
    """Same-padded stride-1 cross-correlation on channel-last data.

    values [rows, cols, cin], weights [kh, kw, cin, cout]. Bias is added
    before the optional ReLU.
    """
    values = np.asarray(values)
    weights = np.asarray(weights)
    if values.ndim != 3 or weights.ndim != 4:
        raise ShapeMismatch("conv2d expects [rows, cols, cin] and [kh, kw, cin, cout]")
    kh, kw, cin, cout = weights.shape
    if values.shape[2] != cin:
        raise ShapeMismatch(f"input has {values.shape[2]} channels, weights expect {cin}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise InvalidConfig("conv2d requires odd kernels")
    rows, cols = values.shape[:2]
    ph, pw = kh // 2, kw // 2
    padded = np.pad(values, ((ph, ph), (pw, pw), (0, 0)))
    out = np.empty((rows, cols, cout), dtype=np.result_type(values, weights))
    flat_w = weights.reshape(kh * kw * cin, cout)
    for start in range(0, rows, _CONV_ROW_CHUNK):
        stop = min(start + _CONV_ROW_CHUNK, rows)
        window = sliding_window_view(padded[start : stop + 2 * ph], (kh, kw), axis=(0, 1))
        # window: [chunk, cols, cin, kh, kw] -> [chunk, cols, kh, kw, cin]
        patch = window.transpose(0, 1, 3, 4, 2).reshape(stop - start, cols, kh * kw * cin)
        out[start:stop] = patch @ flat_w
    if bias is not None:
        out = out + np.asarray(bias)
    if relu:
        out = np.maximum(out, 0)
    return out


def squash(s: np.ndarray, axis: int = -1) -> np.ndarray:
    """v = (|s|^2 / (1 + |s|^2)) * s / |s| along axis; zero maps to zero."""
    s = np.asarray(s)
    norm2 = np.sum(np.square(s), axis=axis, keepdims=True)
    norm = np.sqrt(norm2)
    scale = np.divide(norm, 1.0 + norm2, where=norm > 0, out=np.zeros_like(norm))
    return s * scale


def routing_softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    """Row-stabilized softmax over the output-capsule axis."""
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max(axis=axis, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=axis, keepdims=True)


def dynamic_routing(u_hat: np.ndarray, num_iterations: int,
                    record: list[RoutingState] | None = None) -> np.ndarray:
    """Route predictions [..., n_in, n_out, d] to output capsules [..., n_out, d].

    Logits start at zero. Each iteration: coupling = softmax over the
    output axis, weighted sum over inputs, squash. The logit update
    b += u_hat . v runs after every iteration except the last.
    """
    u_hat = np.asarray(u_hat, dtype=np.float64)
    if u_hat.ndim < 3:
        raise ShapeMismatch("u_hat needs at least [n_in, n_out, d] dims")
    if num_iterations < 1:
        raise InvalidConfig("need at least one routing iteration")
    b = np.zeros(u_hat.shape[:-1], dtype=np.float64)
    v = None
    for it in range(num_iterations):
        c = routing_softmax(b, axis=-1)
        s = np.einsum("...ij,...ijd->...jd", c, u_hat)
        v = squash(s, axis=-1)
        if it < num_iterations - 1:
            b = b + np.einsum("...ijd,...jd->...ij", u_hat, v)
        if record is not None:
            record.append(RoutingState(b.copy(), c, u_hat, v))
    return v


def caps_conv_layer(values: np.ndarray, layer: CapsConvLayerCfg, weights: np.ndarray,
                    bias: np.ndarray | None) -> np.ndarray:
    """Conv (no ReLU), reshape each pixel to capsules, squash per capsule.

    Returns [rows, cols, num_capsules, capsule_dim].
    """
    layer.validate()
    out = conv2d(values, weights, bias, relu=False)
    rows, cols = out.shape[:2]
    caps = out.reshape(rows, cols, layer.num_capsules, layer.capsule_dim)
    return squash(caps, axis=-1)


def init_weights(cfg: CapsConfig, seed: int = 0) -> WeightBundle:
    """Seeded uniform fan-balanced weights, zero biases."""
    cfg.validate()
    rng = np.random.default_rng(seed)
    bundle = WeightBundle(metadata={"init_seed": str(seed)})

    def glorot(shape, fan_in, fan_out):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-bound, bound, size=shape).astype(np.float32)

    conv_like = [(f"conv{i}", l) for i, l in enumerate(cfg.conv_layers)]
    conv_like += [(f"caps{i}", l) for i, l in enumerate(cfg.caps_conv_layers)]
    for name, layer in conv_like:
        shape = (layer.kernel_h, layer.kernel_w, layer.in_ch, layer.out_ch)
        fan = layer.kernel_h * layer.kernel_w
        bundle.entries[f"{name}.weight"] = Tensor.from_array(
            glorot(shape, fan * layer.in_ch, fan * layer.out_ch)
        )
        bundle.entries[f"{name}.bias"] = Tensor.from_array(
            np.zeros(layer.out_ch, dtype=np.float32)
        )
    for i, layer in enumerate(cfg.fc_layers):
        shape = (layer.in_features, layer.out_features)
        bundle.entries[f"fc{i}.weight"] = Tensor.from_array(
            glorot(shape, layer.in_features, layer.out_features)
        )
        bundle.entries[f"fc{i}.bias"] = Tensor.from_array(
            np.zeros(layer.out_features, dtype=np.float32)
        )
    return bundle


def _layer_arrays(bundle: WeightBundle, name: str, expect_shape) -> tuple[np.ndarray, np.ndarray]:
    weight = bundle.require(f"{name}.weight")
    bias = bundle.require(f"{name}.bias")
    if tuple(weight.dims) != tuple(expect_shape):
        raise ShapeMismatch(
            f"{name}.weight dims {weight.dims}, config implies {tuple(expect_shape)}"
        )
    return weight.data.astype(np.float64), bias.data.astype(np.float64)


def _trace(trace: dict | None, name: str, values: np.ndarray):
    if trace is not None:
        peak = float(np.max(np.abs(values))) if values.size else 0.0
        trace[name] = max(trace.get(name, 0.0), peak)


def infer(rf: RfVolume, cfg: CapsConfig, weights: WeightBundle,
          trace: dict | None = None) -> EnvelopeImage:
    """Run the float network over a ToF-corrected volume.

    trace, when given, accumulates per-stage max absolute activations
    under the names used by quantization calibration.
    """
    cfg.validate_for_inference()
    if cfg.conv_layers[0].in_ch != rf.num_channels:
        raise ShapeMismatch(
            f"network expects {cfg.conv_layers[0].in_ch} channels, volume has {rf.num_channels}"
        )
    x = rf.samples.astype(np.float64)
    _trace(trace, "input", x)
    for i, layer in enumerate(cfg.conv_layers):
        w, b = _layer_arrays(
            weights, f"conv{i}", (layer.kernel_h, layer.kernel_w, layer.in_ch, layer.out_ch)
        )
        x = conv2d(x, w, b, relu=layer.relu)
        _trace(trace, f"conv{i}.out", x)
    caps = None
    for i, layer in enumerate(cfg.caps_conv_layers):
        w, b = _layer_arrays(
            weights, f"caps{i}", (layer.kernel_h, layer.kernel_w, layer.in_ch, layer.out_ch)
        )
        pre = conv2d(x, w, b, relu=False)
        _trace(trace, f"caps{i}.pre", pre)
        rows, cols = pre.shape[:2]
        caps = squash(pre.reshape(rows, cols, layer.num_capsules, layer.capsule_dim), axis=-1)
        _trace(trace, f"caps{i}.out", caps)
        x = caps.reshape(rows, cols, layer.out_ch)
    routing = cfg.routing
    rows, cols = x.shape[:2]
    caps_in = x.reshape(rows * cols, routing.num_in_capsules, routing.in_dim)
    u_hat = np.broadcast_to(
        caps_in[:, :, None, :],
        (rows * cols, routing.num_in_capsules, routing.num_out_capsules, routing.out_dim),
    )
    if trace is not None:
        record: list[RoutingState] = []
        v = dynamic_routing(u_hat, routing.num_iterations, record=record)
        for state in record:
            _trace(trace, "routing.logits", state.logits_b)
            s = np.einsum("...ij,...ijd->...jd", state.coupling_c, u_hat)
            _trace(trace, "routing.pre", s)
        _trace(trace, "routing.out", v)
    else:
        v = dynamic_routing(u_hat, routing.num_iterations)
    x = v.reshape(rows, cols, routing.num_out_capsules * routing.out_dim)
    for i, layer in enumerate(cfg.fc_layers):
        w, b = _layer_arrays(weights, f"fc{i}", (layer.in_features, layer.out_features))
        x = x @ w + b
        if layer.relu:
            x = np.maximum(x, 0)
        _trace(trace, f"fc{i}.out", x)
    if x.shape[-1] != 2:
        raise ShapeMismatch("network tail must emit 2 features")
    return EnvelopeImage(grid=rf.grid, i_part=x[..., 0].astype(np.float32),
                         q_part=x[..., 1].astype(np.float32))
