"""16-bit fixed-point inference path.

Numbers are int16 raws with value raw * 2**-f; f comes from a QuantPlan
produced by calibration (f = 14 - ceil(log2(max(|x|, 2^-14))), capped at
15, leaving one integer guard bit). One arithmetic rule everywhere:
products and dot products accumulate exactly in 64-bit, the finished
accumulator saturates to 32 bits, and every rescale is a power-of-two
shift rounded half away from zero, saturating to int16.

The softmax exponential is the 5-term Taylor polynomial
1 + x + x^2/2 + x^3/6 + x^4/24 in Horner form. Its input is clamped to
[-1.59375, 2]: the stated working range is [-2, 2], but the polynomial's
derivative crosses zero near -1.596, so the floor sits at the nearest
exactly representable point above it to keep the op monotone. The
polynomial is evaluated at extended precision with a single final
rounding; a step-by-step 16-bit Horner would wiggle by one ulp where the
curve flattens and break the exhaustive monotonicity sweep.

Squash follows the same algebra as the float path with an exact integer
floor square root at doubled fraction bits:

    n2 = sum(s_i^2)            (saturated to 32 bits, scale 2f)
    norm = isqrt(n2)           (scale f)
    v = s * n2 * 2^f / ((2^2f + n2) * norm), zero when n2 is zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .data_model import EnvelopeImage, RfVolume, Tensor, WeightBundle
from .errors import (
    EmptyCalibration,
    InvalidConfig,
    MissingScale,
    ShapeMismatch,
)

INT16_MIN, INT16_MAX = -32768, 32767
INT32_MIN, INT32_MAX = -(2**31), 2**31 - 1
MAX_SCALE_EXP = 15
TAYLOR_INPUT_LO = -1.59375
TAYLOR_INPUT_HI = 2.0

_CONV_ROW_CHUNK = 32


@dataclass(frozen=True)
class FixedPoint16:
    """One int16 word at a power-of-two scale."""

    raw: int
    scale_exp: int

    def __post_init__(self):
        if not INT16_MIN <= self.raw <= INT16_MAX:
            raise InvalidConfig(f"raw {self.raw} outside int16")

    @property
    def value(self) -> float:
        return self.raw * 2.0 ** (-self.scale_exp)


def _round_half_away(x):
    return np.copysign(np.floor(np.abs(x) + 0.5), x)


def saturate16(x):
    return np.clip(x, INT16_MIN, INT16_MAX)


def saturate32(x):
    return np.clip(x, INT32_MIN, INT32_MAX)


def quantize_array(values, f: int) -> np.ndarray:
    """Round half away from zero onto the int16 lattice at scale f."""
    scaled = np.asarray(values, dtype=np.float64) * (2.0**f)
    return saturate16(_round_half_away(scaled)).astype(np.int16)


def quantize(x: float, f: int) -> FixedPoint16:
    return FixedPoint16(raw=int(quantize_array([x], f)[0]), scale_exp=f)


def dequantize_array(raw, f: int) -> np.ndarray:
    return np.asarray(raw, dtype=np.float64) * (2.0 ** (-f))


def shift_round(acc, shift: int):
    """Divide int64 values by 2**shift, rounding half away from zero.

    Negative shifts multiply exactly.
    """
    acc = np.asarray(acc, dtype=np.int64)
    if shift <= 0:
        return acc << (-shift)
    half = np.int64(1) << (shift - 1)
    mag = (np.abs(acc) + half) >> shift
    return np.where(acc < 0, -mag, mag)


def requantize(acc, from_f: int, to_f: int) -> np.ndarray:
    """Finish an accumulation: saturate to 32 bits, shift to the output
    scale with half-away rounding, saturate to int16."""
    acc = saturate32(np.asarray(acc, dtype=np.int64))
    return saturate16(shift_round(acc, from_f - to_f)).astype(np.int16)


def _divide_round_half_away(num, den):
    """Elementwise round-half-away num / den for int64 num, positive den."""
    num = np.asarray(num, dtype=np.int64)
    den = np.asarray(den, dtype=np.int64)
    mag = (2 * np.abs(num) + den) // (2 * den)
    return np.where(num < 0, -mag, mag)


def _exp_taylor5_raw(x_raw, f: int) -> np.ndarray:
    """Vectorized Taylor exponential on raw int16 values at scale f."""
    if f < 0:
        raise InvalidConfig("exp_taylor5 needs a non-negative fraction width")
    lo = int(_round_half_away(np.float64(TAYLOR_INPUT_LO * 2.0**f)))
    hi = min(int(TAYLOR_INPUT_HI * 2.0**f), INT16_MAX)
    x = np.clip(np.asarray(x_raw, dtype=np.int64), lo, hi).astype(np.float64)
    one = 2.0**f
    # 24 * 2^{3f} * p(x): integer-coefficient Horner in the raw variable.
    g = (((x + 4.0 * one) * x + 12.0 * one**2) * x + 24.0 * one**3) * x + 24.0 * one**4
    out = _round_half_away(g / (24.0 * one**3))
    return np.clip(out, 0, INT16_MAX).astype(np.int64)


def exp_taylor5(x: FixedPoint16) -> FixedPoint16:
    """Clamped 5-term Taylor e^x; non-negative, same scale as the input."""
    raw = int(_exp_taylor5_raw(np.array([x.raw]), x.scale_exp)[0])
    return FixedPoint16(raw=raw, scale_exp=x.scale_exp)


def _softmax_rows(raw, f: int) -> np.ndarray:
    """Softmax along the last axis of int raws at scale f, output at f.

    Each row subtracts its max before the Taylor exponential. A zero
    denominator (impossible for in-range inputs since the polynomial is
    positive, guarded anyway) falls back to the uniform distribution.
    """
    rows = np.asarray(raw, dtype=np.int64)
    n = rows.shape[-1]
    shifted = saturate16(rows - rows.max(axis=-1, keepdims=True))
    e = _exp_taylor5_raw(shifted, f)
    total = e.sum(axis=-1, keepdims=True)
    uniform = int(_round_half_away(np.float64(2.0**f / n)))
    safe_total = np.where(total > 0, total, 1)
    c = _divide_round_half_away(e << f, safe_total)
    c = np.where(total > 0, c, uniform)
    return saturate16(c).astype(np.int16)


def fixed_softmax(logits: list[FixedPoint16]) -> list[FixedPoint16]:
    if not logits:
        raise ShapeMismatch("softmax over an empty row")
    f = logits[0].scale_exp
    if any(x.scale_exp != f for x in logits):
        raise InvalidConfig("softmax inputs must share one scale")
    raws = _softmax_rows(np.array([x.raw for x in logits]), f)
    return [FixedPoint16(raw=int(r), scale_exp=f) for r in raws]


def _isqrt_exact(n2: np.ndarray) -> np.ndarray:
    """Exact floor square root for non-negative int64 values."""
    root = np.floor(np.sqrt(n2.astype(np.float64))).astype(np.int64)
    root = np.where((root + 1) * (root + 1) <= n2, root + 1, root)
    root = np.where(root * root > n2, root - 1, root)
    return root


def _squash_rows(raw, f: int) -> np.ndarray:
    """Squash along the last axis of int16 raws at scale f."""
    s = np.asarray(raw, dtype=np.int64)
    n2 = saturate32(np.sum(s * s, axis=-1, keepdims=True))
    norm = _isqrt_exact(n2)
    num = s * n2 << f
    den = ((np.int64(1) << (2 * f)) + n2) * np.maximum(norm, 1)
    v = _divide_round_half_away(num, den)
    v = np.where(n2 > 0, v, 0)
    return saturate16(v).astype(np.int16)


def fixed_squash(s: list[FixedPoint16]) -> list[FixedPoint16]:
    if not s:
        raise ShapeMismatch("squash of an empty vector")
    f = s[0].scale_exp
    if any(x.scale_exp != f for x in s):
        raise InvalidConfig("squash inputs must share one scale")
    raws = _squash_rows(np.array([x.raw for x in s]), f)
    return [FixedPoint16(raw=int(r), scale_exp=f) for r in raws]


# calibration ------------------------------------------------------------------


@dataclass
class QuantPlan:
    """Per-tensor fraction widths plus the fixed arithmetic conventions."""

    scales: dict[str, int] = field(default_factory=dict)
    accumulator_bits: int = 32
    rounding: str = "half-away-from-zero"

    def scale(self, name: str) -> int:
        if name not in self.scales:
            raise MissingScale(f"no quantization scale for {name!r}")
        return self.scales[name]


def scale_for_max(m: float, max_exp: int = MAX_SCALE_EXP) -> int:
    """f = 14 - ceil(log2(max(m, 2^-14))), capped at max_exp."""
    m = max(float(m), 2.0**-14)
    mant, exp = math.frexp(m)  # m = mant * 2^exp, mant in [0.5, 1)
    ceil_log2 = exp - 1 if mant == 0.5 else exp
    return min(max_exp, 14 - ceil_log2)


def activation_names(cfg) -> list[str]:
    names = ["input"]
    names += [f"conv{i}.out" for i in range(len(cfg.conv_layers))]
    for i in range(len(cfg.caps_conv_layers)):
        names += [f"caps{i}.pre", f"caps{i}.out"]
    if cfg.routing is not None:
        names += ["routing.logits", "routing.pre", "routing.out"]
    names += [f"fc{i}.out" for i in range(len(cfg.fc_layers))]
    return names


def calibrate(bundle: WeightBundle, samples: list[RfVolume], cfg) -> QuantPlan:
    """Derive fraction widths from weight maxima and traced activations."""
    from . import capsnet
    from .pruning import densify

    if not samples:
        raise EmptyCalibration("calibration needs at least one sample volume")
    plan = QuantPlan()
    for name, entry in bundle.entries.items():
        if name.endswith(".index") or name.endswith(".mask") or name.endswith(".scale"):
            continue
        values = entry.data.astype(np.float64)
        if entry.dtype == "fixed16":
            values = values * 2.0 ** (-entry.scale_exp)
        plan.scales[name] = scale_for_max(float(np.max(np.abs(values))) if values.size else 0.0)
    dense = densify(bundle, cfg.layer_names())
    trace: dict[str, float] = {}
    for rf in samples:
        capsnet.infer(rf, cfg, dense, trace=trace)
    for name in activation_names(cfg):
        plan.scales[name] = scale_for_max(trace.get(name, 0.0))
    return plan


def plan_to_entries(plan: QuantPlan) -> dict[str, Tensor]:
    entries = {}
    for name in sorted(plan.scales):
        entries[f"{name}.scale"] = Tensor(
            dims=(1,), dtype="fixed16",
            data=np.array([plan.scales[name]], dtype=np.int16), scale_exp=0,
        )
    return entries


def plan_from_bundle(bundle: WeightBundle) -> QuantPlan:
    plan = QuantPlan()
    for name, entry in bundle.entries.items():
        if name.endswith(".scale"):
            plan.scales[name[: -len(".scale")]] = int(entry.data.reshape(-1)[0])
    if not plan.scales:
        raise MissingScale("bundle carries no .scale entries; run quantize first")
    return plan


def quantize_bundle(bundle: WeightBundle, plan: QuantPlan) -> WeightBundle:
    """Quantize float entries in place of their float values, attach scales."""
    out = bundle.copy()
    for name, entry in bundle.entries.items():
        if name not in plan.scales or entry.dtype != "float32":
            continue
        f = plan.scales[name]
        out.entries[name] = Tensor(
            dims=entry.dims, dtype="fixed16",
            data=quantize_array(entry.data, f), scale_exp=f,
        )
    out.entries.update(plan_to_entries(plan))
    out.metadata["quantization"] = "fixed16"
    return out


# inference --------------------------------------------------------------------


def _entry_raw(entry: Tensor, f: int) -> np.ndarray:
    """Raw int16 view of an entry at scale f, quantizing floats on the fly."""
    if entry.dtype == "fixed16":
        if entry.scale_exp == f:
            return entry.data
        return requantize(entry.data.astype(np.int64), entry.scale_exp, f)
    return quantize_array(entry.data, f)


def _int_conv(x_raw: np.ndarray, w_raw: np.ndarray) -> np.ndarray:
    """Exact int64 same-padded cross-correlation accumulator."""
    kh, kw, cin, cout = w_raw.shape
    rows, cols = x_raw.shape[:2]
    ph, pw = kh // 2, kw // 2
    padded = np.pad(x_raw.astype(np.int64), ((ph, ph), (pw, pw), (0, 0)))
    flat_w = w_raw.astype(np.int64).reshape(kh * kw * cin, cout)
    acc = np.empty((rows, cols, cout), dtype=np.int64)
    for start in range(0, rows, _CONV_ROW_CHUNK):
        stop = min(start + _CONV_ROW_CHUNK, rows)
        window = sliding_window_view(padded[start : stop + 2 * ph], (kh, kw), axis=(0, 1))
        patch = window.transpose(0, 1, 3, 4, 2).reshape(stop - start, cols, kh * kw * cin)
        acc[start:stop] = patch @ flat_w
    return acc


def _bias_to_acc(b_raw: np.ndarray, from_f: int, acc_f: int) -> np.ndarray:
    shift = acc_f - from_f
    if shift >= 0:
        return b_raw.astype(np.int64) << shift
    return shift_round(b_raw.astype(np.int64), -shift)


def infer_quantized(rf: RfVolume, cfg, bundle: WeightBundle,
                    plan: QuantPlan | None = None) -> EnvelopeImage:
    """Integer replica of the float network; output dequantized to float.

    Accepts float bundles (quantized on the fly against the plan) or
    already-quantized fixed16 bundles. Compacted pruned layers must be
    densified by the caller beforehand.
    """
    cfg.validate_for_inference()
    if plan is None:
        plan = plan_from_bundle(bundle)
    if cfg.conv_layers[0].in_ch != rf.num_channels:
        raise ShapeMismatch(
            f"network expects {cfg.conv_layers[0].in_ch} channels, volume has {rf.num_channels}"
        )
    f_x = plan.scale("input")
    x = quantize_array(rf.samples, f_x)
    for i, layer in enumerate(cfg.conv_layers):
        f_w = plan.scale(f"conv{i}.weight")
        f_b = plan.scale(f"conv{i}.bias")
        f_out = plan.scale(f"conv{i}.out")
        w = _entry_raw(bundle.require(f"conv{i}.weight"), f_w)
        if w.shape != (layer.kernel_h, layer.kernel_w, layer.in_ch, layer.out_ch):
            raise ShapeMismatch(f"conv{i}.weight dims {w.shape} do not match config")
        b = _entry_raw(bundle.require(f"conv{i}.bias"), f_b)
        acc = _int_conv(x, w) + _bias_to_acc(b, f_b, f_x + f_w)
        out = requantize(acc, f_x + f_w, f_out)
        if layer.relu:
            out = np.maximum(out, 0).astype(np.int16)
        x, f_x = out, f_out
    caps = None
    f_caps = f_x
    for i, layer in enumerate(cfg.caps_conv_layers):
        f_w = plan.scale(f"caps{i}.weight")
        f_b = plan.scale(f"caps{i}.bias")
        f_pre = plan.scale(f"caps{i}.pre")
        f_out = plan.scale(f"caps{i}.out")
        w = _entry_raw(bundle.require(f"caps{i}.weight"), f_w)
        b = _entry_raw(bundle.require(f"caps{i}.bias"), f_b)
        acc = _int_conv(x, w) + _bias_to_acc(b, f_b, f_x + f_w)
        pre = requantize(acc, f_x + f_w, f_pre)
        rows, cols = pre.shape[:2]
        grouped = pre.reshape(rows, cols, layer.num_capsules, layer.capsule_dim)
        v = _squash_rows(grouped, f_pre)
        caps = requantize(v.astype(np.int64), f_pre, f_out)
        x, f_x = caps.reshape(rows, cols, layer.out_ch), f_out
        f_caps = f_out
    routing = cfg.routing
    rows, cols = x.shape[:2]
    v = _routing_fixed(
        x.reshape(rows * cols, routing.num_in_capsules, routing.in_dim),
        f_caps,
        routing.num_out_capsules,
        routing.num_iterations,
        f_logit=plan.scale("routing.logits"),
        f_pre=plan.scale("routing.pre"),
    )
    f_v = plan.scale("routing.out")
    x = requantize(v.astype(np.int64), plan.scale("routing.pre"), f_v)
    x = x.reshape(rows, cols, routing.num_out_capsules * routing.out_dim)
    f_x = f_v
    for i, layer in enumerate(cfg.fc_layers):
        f_w = plan.scale(f"fc{i}.weight")
        f_b = plan.scale(f"fc{i}.bias")
        f_out = plan.scale(f"fc{i}.out")
        w = _entry_raw(bundle.require(f"fc{i}.weight"), f_w)
        b = _entry_raw(bundle.require(f"fc{i}.bias"), f_b)
        acc = np.einsum("rci,io->rco", x.astype(np.int64), w.astype(np.int64))
        acc = acc + _bias_to_acc(b, f_b, f_x + f_w)
        out = requantize(acc, f_x + f_w, f_out)
        if layer.relu:
            out = np.maximum(out, 0).astype(np.int16)
        x, f_x = out, f_out
    i_part = dequantize_array(x[..., 0], f_x).astype(np.float32)
    q_part = dequantize_array(x[..., 1], f_x).astype(np.float32)
    return EnvelopeImage(grid=rf.grid, i_part=i_part, q_part=q_part)


def _routing_fixed(caps_raw: np.ndarray, f_caps: int, n_out: int, iterations: int,
                   f_logit: int, f_pre: int) -> np.ndarray:
    """Batched fixed-point routing; predictions are the input capsules.

    Returns output capsules at the pre-squash scale f_pre, shape
    [pixels, n_out, dim]. The logit update is skipped after the final
    iteration, matching the float path.
    """
    pixels, n_in, dim = caps_raw.shape
    u = caps_raw.astype(np.int64)
    b = np.zeros((pixels, n_in, n_out), dtype=np.int16)
    v = None
    for it in range(iterations):
        c = _softmax_rows(b, f_logit).astype(np.int64)
        s_acc = np.einsum("pij,pid->pjd", c, u)
        s = requantize(s_acc, f_logit + f_caps, f_pre)
        v = _squash_rows(s, f_pre)
        if it < iterations - 1:
            agree = np.einsum("pid,pjd->pij", u, v.astype(np.int64))
            delta = requantize(agree, f_caps + f_pre, f_logit)
            b = saturate16(b.astype(np.int64) + delta).astype(np.int16)
    return v
