"""Classical beamformers and image-chain post-processing.

DAS is the normalized apodized channel sum. MVDR solves the loaded
spatial covariance per pixel over overlapping subarrays with temporal
(row) averaging, steering vector all-ones since delays are already
applied. Coherent compounding averages beamformed values across transmit
angles pixel-wise. The envelope stage is a frequency-domain Hilbert
transform down the rows, and log compression maps magnitudes to a
clamped dB scale.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.signal
from numpy.lib.stride_tricks import sliding_window_view

from .data_model import EnvelopeImage, PixelGrid, RfVolume
from .errors import (
    AllZeroImage,
    EmptyList,
    GridMismatch,
    InvalidConfig,
    ShapeMismatch,
    SingularCovariance,
    ZeroWeightSum,
)

THREADS_ENV_VAR = "CAPSBEAM_THREADS"


def thread_budget() -> int:
    """Worker cap from the CAPSBEAM_THREADS environment variable (default 1)."""
    value = os.environ.get(THREADS_ENV_VAR)
    if value is None:
        return 1
    try:
        parsed = int(value)
    except ValueError as exc:
        raise InvalidConfig(f"{THREADS_ENV_VAR}={value!r} is not an integer") from exc
    if parsed < 1:
        raise InvalidConfig(f"{THREADS_ENV_VAR} must be at least 1")
    return parsed


@dataclass(frozen=True)
class MvdrParams:
    """Subarray length L, temporal half-window K, diagonal loading factor."""

    subarray_len: int = 48
    temporal_half_window: int = 7
    diagonal_loading: float = 0.01

    def __post_init__(self):
        if self.subarray_len < 1:
            raise InvalidConfig("subarray_len must be positive")
        if self.temporal_half_window < 0:
            raise InvalidConfig("temporal_half_window cannot be negative")
        if self.diagonal_loading < 0:
            raise InvalidConfig("diagonal_loading cannot be negative")


@dataclass(frozen=True)
class BeamformedImage:
    grid: PixelGrid
    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64)
        expect = (self.grid.num_rows, self.grid.num_cols)
        if arr.shape != expect:
            raise ShapeMismatch(f"values shaped {arr.shape}, grid implies {expect}")
        object.__setattr__(self, "values", arr)


def das(rf: RfVolume, apodization: np.ndarray) -> BeamformedImage:
    """Apodized channel sum normalized by the weight sum."""
    w = np.asarray(apodization, dtype=np.float64)
    if w.shape != (rf.num_channels,):
        raise ShapeMismatch(f"apodization shaped {w.shape}, need ({rf.num_channels},)")
    denom = w.sum()
    if np.abs(w).sum() == 0.0 or denom == 0.0:
        raise ZeroWeightSum("apodization weights sum to zero")
    values = rf.samples.astype(np.float64) @ w / denom
    return BeamformedImage(grid=rf.grid, values=values)


def _mvdr_row(rf_samples: np.ndarray, r0: int, params: MvdrParams) -> np.ndarray:
    rows, cols, channels = rf_samples.shape
    L = params.subarray_len
    K = params.temporal_half_window
    window_rows = np.clip(np.arange(r0 - K, r0 + K + 1), 0, rows - 1)
    block = rf_samples[window_rows]  # [2K+1, cols, channels]
    subs = sliding_window_view(block, L, axis=2)  # [2K+1, cols, G, L]
    n_sub = subs.shape[2]
    snaps = subs.transpose(1, 0, 2, 3).reshape(cols, -1, L)
    n_snap = snaps.shape[1]
    R = np.matmul(snaps.transpose(0, 2, 1), snaps) / n_snap
    trace = np.trace(R, axis1=1, axis2=2)
    load = params.diagonal_loading * trace / L
    R = R + load[:, None, None] * np.eye(L)[None]
    ones = np.ones((cols, L, 1))
    try:
        w_tilde = np.linalg.solve(R, ones)[:, :, 0]
    except np.linalg.LinAlgError as exc:
        raise SingularCovariance(f"row {r0}: covariance not solvable") from exc
    denom = w_tilde.sum(axis=1)
    if np.any(denom == 0.0) or not np.all(np.isfinite(w_tilde)):
        raise SingularCovariance(f"row {r0}: distortionless normalization failed")
    w = w_tilde / denom[:, None]
    center = sliding_window_view(rf_samples[r0], L, axis=1)  # [cols, G, L]
    mean_sub = center.mean(axis=1)
    return np.einsum("cl,cl->c", w, mean_sub)


def mvdr(rf: RfVolume, params: MvdrParams) -> BeamformedImage:
    """Adaptive beamformer with subarray averaging and diagonal loading.

    Per pixel the covariance pools the length-L channel windows of the
    2K+1 temporally adjacent rows (edge rows clamp the window by index,
    so the snapshot count stays (2K+1) * (channels - L + 1) everywhere).
    Loading adds diagonal_loading * trace(R) / L to the diagonal. Weights
    solve R w = 1 and are normalized so w . 1 == 1; the output is the
    weight response averaged over subarrays at the center row.
    """
    if params.subarray_len > rf.num_channels:
        raise InvalidConfig(
            f"subarray_len {params.subarray_len} exceeds {rf.num_channels} channels"
        )
    samples = rf.samples.astype(np.float64)
    rows = rf.grid.num_rows
    out = np.empty((rows, rf.grid.num_cols), dtype=np.float64)
    workers = thread_budget()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for r0, row in zip(range(rows), pool.map(
                    lambda r: _mvdr_row(samples, r, params), range(rows))):
                out[r0] = row
    else:
        for r0 in range(rows):
            out[r0] = _mvdr_row(samples, r0, params)
    return BeamformedImage(grid=rf.grid, values=out)


def compound(images: list[BeamformedImage]) -> BeamformedImage:
    """Pixel-wise mean across transmits; grids must match exactly."""
    if not images:
        raise EmptyList("nothing to compound")
    grid = images[0].grid
    for img in images[1:]:
        if img.grid != grid:
            raise GridMismatch(f"grid {img.grid} differs from {grid}")
    stacked = np.stack([img.values for img in images], axis=0)
    return BeamformedImage(grid=grid, values=stacked.mean(axis=0))


def envelope(image: BeamformedImage) -> EnvelopeImage:
    """Analytic signal down each column via zero-padded FFT Hilbert.

    The FFT length is the next power of two at or above the row count,
    which bounds circular wrap at the edges. The in-phase part is the
    input itself; quadrature is the Hilbert transform.
    """
    rows = image.grid.num_rows
    if rows < 4:
        raise ShapeMismatch("envelope needs at least 4 rows")
    nfft = 1 << (rows - 1).bit_length()
    analytic = scipy.signal.hilbert(image.values, N=nfft, axis=0)[:rows]
    return EnvelopeImage(
        grid=image.grid,
        i_part=image.values.astype(np.float32),
        q_part=analytic.imag.astype(np.float32),
    )


def log_compress(env: EnvelopeImage, dynamic_range_db: float = 60.0) -> np.ndarray:
    """20 log10(|env| / max) clamped to [-dynamic_range_db, 0]."""
    if dynamic_range_db <= 0:
        raise InvalidConfig("dynamic range must be positive")
    mag = env.magnitude()
    peak = mag.max()
    if peak == 0.0:
        raise AllZeroImage("log compression undefined for an all-zero image")
    with np.errstate(divide="ignore"):
        db = 20.0 * np.log10(mag / peak)
    return np.maximum(db, -dynamic_range_db)


def write_pgm(db_image: np.ndarray, dynamic_range_db: float, path) -> None:
    """8-bit binary PGM with [-range, 0] dB mapped linearly onto [0, 255].

    path may be a filesystem path or a binary file object.
    """
    db = np.asarray(db_image, dtype=np.float64)
    if db.ndim != 2:
        raise ShapeMismatch("PGM export expects a 2-D dB image")
    scaled = (db + dynamic_range_db) * (255.0 / dynamic_range_db)
    pixels = np.clip(np.rint(scaled), 0, 255).astype(np.uint8)
    header = f"P5\n{db.shape[1]} {db.shape[0]}\n255\n".encode("ascii")
    if hasattr(path, "write"):
        path.write(header + pixels.tobytes())
        return
    with open(path, "wb") as fh:
        fh.write(header + pixels.tobytes())
