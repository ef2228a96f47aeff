"""Transaction- and cycle-accurate model of the streaming conv engine.

Functional semantics reproduce the fixed-point path bit for bit while
walking the hardware order: a rolling line buffer of kernel-height input
rows (zero rows substituted at the image edges), filters processed in
pe_rows-wide blocks, one output column per PE column per cycle. Pruned
layers carry rectangular kept-channel index lists and skip the missing
kernels entirely.

The timing model is analytic, not RTL: compute cycles are
rows * ceil(cout / pe_rows) * ceil(cols / pe_cols) * kh * kw * kept_cin,
and a layer stalls when its external words outpace the combined DMA beat
rate. Routing stage costs are affine in n_caps * dim with the constants
below; absolute figures are model parameters, only orderings and the
report's internal arithmetic are contractual. The routing ops and cycle
ledgers charge the agreement stage every iteration because the engine
executes it even when the result is discarded after the last pass.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .data_model import PixelGrid
from .errors import BramOverflow, InvalidConfig, ShapeMismatch
from .quantized import (
    QuantPlan,
    _bias_to_acc,
    _softmax_rows,
    _squash_rows,
    requantize,
    saturate16,
)

POLICIES = ("reload_per_block", "weights_resident")

# Routing stage cycle cost = base + per_elem * (n_caps * dim).
ROUTING_STAGE_BASE = {"softmax": 8, "matvec": 4, "squash": 16, "agreement": 4}
ROUTING_STAGE_PER_ELEM = {"softmax": 2, "matvec": 1, "squash": 2, "agreement": 1}


@dataclass(frozen=True)
class AccelConfig:
    pe_rows: int = 4
    pe_cols: int = 128
    clock_hz: float = 100e6
    dma_count: int = 2
    dma_beat_bytes: int = 8
    word_bits: int = 16
    bram_budget_bytes: int = 1_437_696

    def __post_init__(self):
        if min(self.pe_rows, self.pe_cols, self.dma_count, self.dma_beat_bytes) < 1:
            raise InvalidConfig("accelerator dimensions must be positive")
        if self.clock_hz <= 0:
            raise InvalidConfig("clock must be positive")
        if self.word_bits % 8 != 0 or self.word_bits < 8:
            raise InvalidConfig("word_bits must be a positive byte multiple")
        if self.bram_budget_bytes < 1:
            raise InvalidConfig("bram budget must be positive")

    @property
    def word_bytes(self) -> int:
        return self.word_bits // 8

    @property
    def beat_words_per_cycle(self) -> float:
        return self.dma_count * self.dma_beat_bytes / self.word_bytes


@dataclass(frozen=True)
class LayerShape:
    """Geometry one conv layer presents to the memory system."""

    rows: int
    cols: int
    kernel_h: int
    kernel_w: int
    cin: int
    cout: int
    cin_kept: int | None = None
    cout_kept: int | None = None

    def __post_init__(self):
        if min(self.rows, self.cols) < 0 or min(self.kernel_h, self.kernel_w) < 1:
            raise InvalidConfig("bad layer geometry")
        if min(self.cin, self.cout) < 1:
            raise InvalidConfig("channel counts must be positive")
        kept_in = self.cin if self.cin_kept is None else self.cin_kept
        kept_out = self.cout if self.cout_kept is None else self.cout_kept
        if not (0 < kept_in <= self.cin and 0 < kept_out <= self.cout):
            raise InvalidConfig("kept counts must lie in (0, full]")
        object.__setattr__(self, "cin_kept", kept_in)
        object.__setattr__(self, "cout_kept", kept_out)


def count_transactions(layer: LayerShape, policy: str) -> int:
    """External word reads to run one layer under a weight policy.

    reload_per_block re-streams the full dense weight set every row;
    weights_resident fetches only the kept kernels once. Both stream the
    input activation rows once.
    """
    if policy not in POLICIES:
        raise InvalidConfig(f"unknown policy {policy!r}")
    input_words = layer.rows * layer.cols * layer.cin
    if policy == "reload_per_block":
        weight_words = layer.rows * layer.kernel_h * layer.kernel_w * layer.cin * layer.cout
    else:
        weight_words = layer.kernel_h * layer.kernel_w * layer.cin_kept * layer.cout_kept
    return weight_words + input_words


@dataclass
class LayerReport:
    name: str
    transactions: int
    compute_cycles: int
    stall_cycles: int
    ops: int
    bram_bytes: int

    @property
    def cycles(self) -> int:
        return self.compute_cycles + self.stall_cycles


@dataclass
class SimReport:
    """Totals plus a per-layer breakdown. Derived figures recompute from
    the integer fields, so modeled_gops * modeled_latency_s reproduces
    1e-9 * total_ops by construction."""

    clock_hz: float
    per_layer: list[LayerReport] = field(default_factory=list)

    @property
    def external_word_transactions(self) -> int:
        return sum(l.transactions for l in self.per_layer)

    @property
    def cycle_count(self) -> int:
        return sum(l.cycles for l in self.per_layer)

    @property
    def total_ops(self) -> int:
        return sum(l.ops for l in self.per_layer)

    @property
    def bram_bytes_peak(self) -> int:
        return max((l.bram_bytes for l in self.per_layer), default=0)

    @property
    def modeled_latency_s(self) -> float:
        return self.cycle_count / self.clock_hz

    @property
    def modeled_gops(self) -> float:
        if self.cycle_count == 0:
            return 0.0
        return 1e-9 * self.total_ops / self.modeled_latency_s

    def to_csv(self) -> str:
        out = io.StringIO()
        out.write("layer,transactions,compute_cycles,stall_cycles,cycles,ops,bram_bytes\n")
        for l in self.per_layer:
            out.write(
                f"{l.name},{l.transactions},{l.compute_cycles},{l.stall_cycles},"
                f"{l.cycles},{l.ops},{l.bram_bytes}\n"
            )
        out.write(
            f"total,{self.external_word_transactions},,,{self.cycle_count},"
            f"{self.total_ops},{self.bram_bytes_peak}\n"
        )
        return out.getvalue()

    def to_text(self) -> str:
        lines = [
            f"external_word_transactions={self.external_word_transactions}",
            f"cycle_count={self.cycle_count}",
            f"total_ops={self.total_ops}",
            f"bram_bytes_peak={self.bram_bytes_peak}",
            f"modeled_latency_s={self.modeled_latency_s!r}",
            f"modeled_gops={self.modeled_gops!r}",
        ]
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class ConvLayerSpec:
    """Weights as streamed to the engine. index is [kept, cout] original
    input-channel positions, or None for dense layers."""

    weight: np.ndarray  # [kh, kw, kept, cout] int16 raws
    bias: np.ndarray  # [cout] int16 raws
    index: np.ndarray | None
    relu: bool
    f_in: int
    f_w: int
    f_b: int
    f_out: int
    name: str = "conv"

    def __post_init__(self):
        w = np.asarray(self.weight)
        if w.ndim != 4:
            raise ShapeMismatch("spec weight must be [kh, kw, kept, cout]")
        if self.index is not None and np.asarray(self.index).shape != w.shape[2:]:
            raise ShapeMismatch("index list must be [kept, cout]")


def _conv_compute_cycles(shape: LayerShape, accel: AccelConfig) -> int:
    blocks = -(-shape.cout_kept // accel.pe_rows)
    col_passes = -(-shape.cols // accel.pe_cols)
    return (
        shape.rows * blocks * col_passes * shape.kernel_h * shape.kernel_w * shape.cin_kept
    )


def _layer_bram_bytes(shape: LayerShape, accel: AccelConfig, with_index: bool) -> int:
    wb = accel.word_bytes
    weight_words = shape.kernel_h * shape.kernel_w * shape.cin_kept * shape.cout_kept
    weight_words += shape.cout_kept  # bias
    if with_index:
        weight_words += shape.cin_kept * shape.cout_kept
    line_words = shape.kernel_h * shape.cols * shape.cin
    out_words = shape.cols * shape.cout_kept
    return (weight_words + line_words + out_words) * wb


def _stall_cycles(transactions: int, compute: int, accel: AccelConfig) -> int:
    need = int(np.ceil(transactions / accel.beat_words_per_cycle))
    return max(0, need - compute)


def sim_conv_layer(
    input_raw: np.ndarray,
    spec: ConvLayerSpec,
    accel: AccelConfig,
    policy: str = "weights_resident",
    exact_stream_order: bool = False,
) -> tuple[np.ndarray, SimReport]:
    """Stream one conv layer through the modeled engine.

    Returns the int16 output activations and a report. With the default
    ordering (bias added before ReLU) the output matches the whole-tensor
    fixed-point path bit for bit; exact_stream_order applies ReLU to the
    raw accumulator before the bias add, the literal engine sequence,
    and is for studying that discrepancy rather than for inference.

    Unlike count_transactions, which counts reads only, this ledger also
    charges bias and index words and the written output stream.
    """
    if policy not in POLICIES:
        raise InvalidConfig(f"unknown policy {policy!r}")
    x = np.asarray(input_raw)
    if x.ndim != 3 or x.dtype != np.int16:
        raise ShapeMismatch("input must be int16 [rows, cols, cin]")
    rows, cols, cin = x.shape
    kh, kw, kept, cout = spec.weight.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise InvalidConfig("kernels must be odd")
    if spec.index is None and kept != cin:
        raise ShapeMismatch(f"dense weights expect cin {kept}, input has {cin}")
    shape = LayerShape(rows, cols, kh, kw, cin, cout, cin_kept=kept, cout_kept=cout)
    weight_words = kh * kw * kept * cout + cout + (kept * cout if spec.index is not None else 0)
    if policy == "reload_per_block":
        weight_stream = rows * weight_words
    else:
        weight_stream = weight_words
    transactions = weight_stream + rows * cols * cin + rows * cols * cout
    bram = _layer_bram_bytes(shape, accel, spec.index is not None)
    if bram > accel.bram_budget_bytes:
        raise BramOverflow(
            f"{spec.name}: working set {bram} B exceeds budget {accel.bram_budget_bytes} B"
        )
    compute = _conv_compute_cycles(shape, accel)
    report = SimReport(clock_hz=accel.clock_hz)
    report.per_layer.append(
        LayerReport(
            name=spec.name,
            transactions=transactions,
            compute_cycles=compute,
            stall_cycles=_stall_cycles(transactions, compute, accel),
            ops=2 * rows * cols * kh * kw * kept * cout,
            bram_bytes=bram,
        )
    )
    out = np.zeros((rows, cols, cout), dtype=np.int16)
    if rows == 0:
        return out, report
    acc_f = spec.f_in + spec.f_w
    bias_acc = _bias_to_acc(np.asarray(spec.bias), spec.f_b, acc_f)
    bias_out = requantize(_bias_to_acc(np.asarray(spec.bias), spec.f_b, acc_f), acc_f, spec.f_out)
    pw = kw // 2
    line = np.zeros((kh, cols, cin), dtype=np.int16)
    if kh > 1:
        line[kh // 2] = x[0]
    else:
        line[0] = x[0]
    # Pre-fill rows below center for kernel heights above 3.
    for k in range(kh // 2 + 1, kh - 1):
        if k - kh // 2 <= rows - 1:
            line[k] = x[k - kh // 2]
    blocks = -(-cout // accel.pe_rows)
    w64 = spec.weight.astype(np.int64)
    idx = None if spec.index is None else np.asarray(spec.index, dtype=np.int64)
    for r in range(rows):
        if kh == 1:
            line[0] = x[r]
        else:
            if r != 0:
                line[:-1] = line[1:]
            if r + kh // 2 <= rows - 1:
                line[-1] = x[r + kh // 2]
            else:
                line[-1] = 0
        padded = np.pad(line, ((0, 0), (pw, pw), (0, 0))) if pw else line
        windows = sliding_window_view(padded, kw, axis=1)  # [kh, cols, cin, kw]
        win64 = windows.astype(np.int64)
        for b in range(blocks):
            for fidx in range(b * accel.pe_rows, min((b + 1) * accel.pe_rows, cout)):
                chans = idx[:, fidx] if idx is not None else np.arange(cin)
                sel = win64[:, :, chans, :]  # [kh, cols, kept, kw]
                acc = np.einsum("hcnw,hwn->c", sel, w64[:, :, :, fidx])
                if exact_stream_order:
                    val = requantize(acc, acc_f, spec.f_out)
                    if spec.relu:
                        val = np.maximum(val, 0)
                    val = saturate16(val.astype(np.int64) + bias_out[fidx]).astype(np.int16)
                else:
                    val = requantize(acc + bias_acc[fidx], acc_f, spec.f_out)
                    if spec.relu:
                        val = np.maximum(val, 0).astype(np.int16)
                out[r, :, fidx] = val
    return out, report


def routing_cycles_per_pixel(n_caps: int, dim: int, iterations: int) -> int:
    m = n_caps * dim
    per_iter = sum(
        ROUTING_STAGE_BASE[s] + ROUTING_STAGE_PER_ELEM[s] * m
        for s in ("softmax", "matvec", "squash", "agreement")
    )
    return iterations * per_iter


def _routing_ops_per_pixel(n_in: int, n_out: int, dim: int, iterations: int) -> int:
    softmax = n_in * (3 * n_out - 1)
    weighted = 2 * n_in * n_out * dim
    squash = n_out * (3 * dim + 4)
    agreement = 2 * n_in * n_out * dim
    return iterations * (softmax + weighted + squash + agreement)


def sim_routing(
    caps_raw: np.ndarray,
    accel: AccelConfig,
    n_out: int,
    iterations: int,
    f_caps: int,
    f_logit: int,
    f_pre: int,
) -> tuple[np.ndarray, SimReport]:
    """Per-pixel routing engine pass.

    Walks pixel blocks one at a time in stream order, sequencing the
    softmax, weighted-sum, squash, and agreement stages exactly as the
    engine would; output matches the whole-tensor fixed-point path bit
    for bit. Output capsules are at scale f_pre.
    """
    caps = np.asarray(caps_raw)
    if caps.ndim != 3 or caps.dtype != np.int16:
        raise ShapeMismatch("capsule stream must be int16 [pixels, n_caps, dim]")
    pixels, n_in, dim = caps.shape
    if iterations < 1:
        raise InvalidConfig("need at least one routing iteration")
    out = np.zeros((pixels, n_out, dim), dtype=np.int16)
    for p in range(pixels):
        u = caps[p].astype(np.int64)  # [n_in, dim]
        b = np.zeros((n_in, n_out), dtype=np.int16)
        for it in range(iterations):
            c = _softmax_rows(b, f_logit).astype(np.int64)
            s = requantize(c.T @ u, f_logit + f_caps, f_pre)
            v = _squash_rows(s, f_pre)
            if it < iterations - 1:
                agree = u @ v.astype(np.int64).T
                b = saturate16(b.astype(np.int64) +
                               requantize(agree, f_caps + f_pre, f_logit)).astype(np.int16)
        out[p] = v
    report = SimReport(clock_hz=accel.clock_hz)
    report.per_layer.append(
        LayerReport(
            name="routing",
            transactions=pixels * n_in * dim + pixels * n_out * dim,
            compute_cycles=pixels * routing_cycles_per_pixel(max(n_in, n_out), dim, iterations),
            stall_cycles=0,
            ops=pixels * _routing_ops_per_pixel(n_in, n_out, dim, iterations),
            bram_bytes=(n_in + n_out) * dim * accel.word_bytes,
        )
    )
    return out, report


def _kept_after_prune(cin: int, ratio: float) -> int:
    return cin - int(np.floor(ratio * cin))


def layer_shapes(cfg, grid: PixelGrid, pruned: bool = False,
                 prune_ratio: float = 0.85) -> list[tuple[str, LayerShape]]:
    """Memory-system geometry for every weighted layer of a network."""
    cfg.validate()
    shapes: list[tuple[str, LayerShape]] = []
    conv_like = [(f"conv{i}", l) for i, l in enumerate(cfg.conv_layers)]
    conv_like += [(f"caps{i}", l) for i, l in enumerate(cfg.caps_conv_layers)]
    for name, layer in conv_like:
        kept = _kept_after_prune(layer.in_ch, prune_ratio) if pruned else None
        shapes.append(
            (
                name,
                LayerShape(
                    rows=grid.num_rows,
                    cols=grid.num_cols,
                    kernel_h=layer.kernel_h,
                    kernel_w=layer.kernel_w,
                    cin=layer.in_ch,
                    cout=layer.out_ch,
                    cin_kept=kept,
                ),
            )
        )
    for i, layer in enumerate(cfg.fc_layers):
        shapes.append(
            (
                f"fc{i}",
                LayerShape(
                    rows=grid.num_rows,
                    cols=grid.num_cols,
                    kernel_h=1,
                    kernel_w=1,
                    cin=layer.in_features,
                    cout=layer.out_features,
                ),
            )
        )
    return shapes


def estimate_latency(cfg, grid: PixelGrid, accel: AccelConfig, pruned: bool = False,
                     policy: str = "weights_resident", prune_ratio: float = 0.85) -> SimReport:
    """Whole-network analytic report; no activations are touched.

    Conv, capsule conv, and pointwise FC layers use the conv engine
    model; routing adds its per-pixel stage costs. A zero-layer config
    yields an empty report with zero cycles.
    """
    if policy not in POLICIES:
        raise InvalidConfig(f"unknown policy {policy!r}")
    report = SimReport(clock_hz=accel.clock_hz)
    for name, shape in layer_shapes(cfg, grid, pruned=pruned, prune_ratio=prune_ratio):
        transactions = count_transactions(shape, policy)
        compute = _conv_compute_cycles(shape, accel)
        report.per_layer.append(
            LayerReport(
                name=name,
                transactions=transactions,
                compute_cycles=compute,
                stall_cycles=_stall_cycles(transactions, compute, accel),
                ops=2 * shape.rows * shape.cols * shape.kernel_h * shape.kernel_w
                * shape.cin_kept * shape.cout_kept,
                bram_bytes=_layer_bram_bytes(shape, accel, with_index=pruned),
            )
        )
    if cfg.routing is not None:
        r = cfg.routing
        pixels = grid.num_pixels
        report.per_layer.append(
            LayerReport(
                name="routing",
                transactions=pixels * (r.num_in_capsules + r.num_out_capsules) * r.out_dim,
                compute_cycles=pixels * routing_cycles_per_pixel(
                    max(r.num_in_capsules, r.num_out_capsules), r.out_dim, r.num_iterations
                ),
                stall_cycles=0,
                ops=pixels * _routing_ops_per_pixel(
                    r.num_in_capsules, r.num_out_capsules, r.out_dim, r.num_iterations
                ),
                bram_bytes=(r.num_in_capsules + r.num_out_capsules) * r.out_dim
                * accel.word_bytes,
            )
        )
    return report
