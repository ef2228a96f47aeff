"""Image-quality figures computed on linear envelope magnitudes.

Contrast figures (CR, CNR, gCNR) are evaluated on the linear envelope,
never on log-compressed pixels; dB appears only where the figure itself
is defined in dB. Half maximum means max/2 exactly, the -6.02 dB point,
rather than a rounded -6 dB level. Regions are geometric specs resolved
against the image's own pixel grid.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .data_model import EnvelopeImage, PixelGrid
from .errors import (
    AllZeroImage,
    DepthOutOfRange,
    EmptyRegion,
    InvalidConfig,
    NoCrossing,
    NoPeak,
    RegionMismatch,
    ShapeMismatch,
    ZeroMean,
    ZeroVariance,
)

GCNR_BINS = 256
REGION_KINDS = ("circle", "rectangle")
REGION_ROLES = ("target_in", "background_out", "")


@dataclass(frozen=True)
class RegionSpec:
    """Circle (center_x_m, center_z_m, radius_m) or axis-aligned
    rectangle (x0_m, z0_m, x1_m, z1_m) in probe coordinates.

    Masks clip to the grid; a region must select at least one pixel.
    """

    name: str
    kind: str
    params: tuple[float, ...]
    role: str = ""

    def __post_init__(self):
        if self.kind == "circle":
            if len(self.params) != 3 or self.params[2] <= 0:
                raise InvalidConfig(f"region {self.name}: circle needs (cx, cz, r>0)")
        elif self.kind == "rectangle":
            if len(self.params) != 4:
                raise InvalidConfig(f"region {self.name}: rectangle needs (x0, z0, x1, z1)")
            x0, z0, x1, z1 = self.params
            if x1 <= x0 or z1 <= z0:
                raise InvalidConfig(f"region {self.name}: rectangle corners out of order")
        else:
            raise InvalidConfig(f"region {self.name}: unknown kind {self.kind!r}")
        if self.role not in REGION_ROLES:
            raise InvalidConfig(f"region {self.name}: unknown role {self.role!r}")

    def mask(self, grid: PixelGrid) -> np.ndarray:
        xs = grid.col_positions[None, :]
        zs = grid.row_depths[:, None]
        if self.kind == "circle":
            cx, cz, r = self.params
            m = (xs - cx) ** 2 + (zs - cz) ** 2 <= r * r
        else:
            x0, z0, x1, z1 = self.params
            m = (xs >= x0) & (xs <= x1) & (zs >= z0) & (zs <= z1)
        m = np.broadcast_to(m, (grid.num_rows, grid.num_cols)).copy()
        if not m.any():
            raise EmptyRegion(f"region {self.name} selects no pixels")
        return m


def check_disjoint(grid: PixelGrid, a: RegionSpec, b: RegionSpec) -> None:
    if (a.mask(grid) & b.mask(grid)).any():
        raise RegionMismatch(f"regions {a.name} and {b.name} overlap")


def _region_values(env: EnvelopeImage, inside: RegionSpec,
                   outside: RegionSpec) -> tuple[np.ndarray, np.ndarray]:
    check_disjoint(env.grid, inside, outside)
    mag = env.magnitude()
    return mag[inside.mask(env.grid)], mag[outside.mask(env.grid)]


# 1-D profile width ---------------------------------------------------------------


def _fwhm_from(p: np.ndarray, peak_idx: int, spacing_m: float) -> float:
    peak = p[peak_idx]
    half = peak / 2.0
    lo = peak_idx
    while lo > 0 and p[lo] >= half:
        lo -= 1
    if p[lo] >= half:
        raise NoCrossing("no half-maximum crossing left of the peak")
    left = lo + (half - p[lo]) / (p[lo + 1] - p[lo])
    hi = peak_idx
    while hi < p.size - 1 and p[hi] >= half:
        hi += 1
    if p[hi] >= half:
        raise NoCrossing("no half-maximum crossing right of the peak")
    right = hi - 1 + (half - p[hi - 1]) / (p[hi] - p[hi - 1])
    return float((right - left) * spacing_m)


def fwhm(profile: np.ndarray, spacing_m: float) -> float:
    """Full width at half maximum of a 1-D magnitude profile, in meters.

    The peak is the first global maximum; the two crossings of peak/2
    adjacent to it are placed by linear interpolation between bracketing
    samples. A flat plateau at the peak walks out from the plateau edge.
    """
    p = np.asarray(profile, dtype=np.float64)
    if p.ndim != 1 or p.size < 3:
        raise ShapeMismatch("profile must be 1-D with at least 3 samples")
    if spacing_m <= 0:
        raise InvalidConfig("spacing must be positive")
    peak_idx = int(np.argmax(p))
    if p[peak_idx] <= 0 or np.all(p == p[0]):
        raise NoPeak("profile has no positive peak")
    return _fwhm_from(p, peak_idx, spacing_m)


# region contrast -----------------------------------------------------------------


def contrast_ratio(env: EnvelopeImage, inside: RegionSpec, outside: RegionSpec) -> float:
    """CR = |20 log10(mean_in / mean_out)| in dB on the linear envelope."""
    vin, vout = _region_values(env, inside, outside)
    mu_in, mu_out = float(vin.mean()), float(vout.mean())
    if mu_in <= 0 or mu_out <= 0:
        raise ZeroMean("region mean envelope is zero")
    return float(abs(20.0 * np.log10(mu_in / mu_out)))


def cnr(env: EnvelopeImage, inside: RegionSpec, outside: RegionSpec) -> float:
    """|mean difference| over the root of summed variances."""
    vin, vout = _region_values(env, inside, outside)
    denom = float(np.sqrt(vin.var() + vout.var()))
    if denom == 0.0:
        raise ZeroVariance("both regions are constant")
    return abs(float(vin.mean() - vout.mean())) / denom


def gcnr(env: EnvelopeImage, inside: RegionSpec, outside: RegionSpec,
         num_bins: int = GCNR_BINS, binning: str = "linear") -> float:
    """Generalized CNR: 1 minus the histogram overlap of the two regions.

    linear binning spans the pooled value range with equal-width bins;
    rank binning histograms each value's position in the sorted pooled
    sample (ties take the first position), making the figure invariant
    under any strictly monotone remap of the envelope.
    """
    vin, vout = _region_values(env, inside, outside)
    if num_bins < 2:
        raise InvalidConfig("need at least 2 bins")
    pooled = np.concatenate([vin, vout])
    if binning == "rank":
        order = np.sort(pooled)
        vin = np.searchsorted(order, vin, side="left").astype(np.float64)
        vout = np.searchsorted(order, vout, side="left").astype(np.float64)
        lo, hi = 0.0, float(pooled.size)
    elif binning == "linear":
        lo, hi = float(pooled.min()), float(pooled.max())
        if lo == hi:
            return 0.0
    else:
        raise InvalidConfig(f"unknown binning {binning!r}")
    h_in, _ = np.histogram(vin, bins=num_bins, range=(lo, hi))
    h_out, _ = np.histogram(vout, bins=num_bins, range=(lo, hi))
    p = h_in / vin.size
    q = h_out / vout.size
    return float(1.0 - np.minimum(p, q).sum())


# profiles and point targets ------------------------------------------------------


def lateral_profile(env: EnvelopeImage, depth_m: float,
                    dynamic_range_db: float = 60.0) -> np.ndarray:
    """Log-compressed magnitudes along the row nearest to depth_m.

    Values are 20 log10(mag / image max) clamped to [-dynamic_range, 0],
    so a constant image gives a flat 0 dB profile.
    """
    grid = env.grid
    depths = grid.row_depths
    if not (depths[0] <= depth_m <= depths[-1]):
        raise DepthOutOfRange(f"depth {depth_m} outside [{depths[0]}, {depths[-1]}]")
    if dynamic_range_db <= 0:
        raise InvalidConfig("dynamic range must be positive")
    mag = env.magnitude()
    peak = float(mag.max())
    if peak <= 0:
        raise AllZeroImage("cannot log-compress an all-zero image")
    row = int(np.argmin(np.abs(depths - depth_m)))
    with np.errstate(divide="ignore"):
        db = 20.0 * np.log10(mag[row] / peak)
    return np.maximum(db, -dynamic_range_db)


@dataclass(frozen=True)
class PointMeasure:
    row: int
    col: int
    depth_m: float
    lateral_m: float
    lateral_fwhm_m: float
    axial_fwhm_m: float


@dataclass
class ResolutionReport:
    points: list[PointMeasure]

    def to_csv(self) -> str:
        out = io.StringIO()
        out.write("row,col,depth_m,lateral_m,lateral_fwhm_m,axial_fwhm_m\n")
        for pt in self.points:
            out.write(
                f"{pt.row},{pt.col},{pt.depth_m!r},{pt.lateral_m!r},"
                f"{pt.lateral_fwhm_m!r},{pt.axial_fwhm_m!r}\n"
            )
        return out.getvalue()


def resolution_report(env: EnvelopeImage, min_rel_height: float = 0.25,
                      neighborhood: int = 2) -> ResolutionReport:
    """Locate bright point targets and measure lateral and axial FWHM.

    A pixel is a peak when it is the maximum of its (2n+1)^2 window (ties
    keep only the first in scan order) and at least min_rel_height of the
    image max. Measures walk outward from the peak along its row and
    column; points without a half-maximum crossing are skipped.
    """
    grid = env.grid
    mag = env.magnitude()
    peak = float(mag.max())
    if peak <= 0:
        raise AllZeroImage("no energy in image")
    if not 0 < min_rel_height <= 1:
        raise InvalidConfig("min_rel_height must be in (0, 1]")
    n = neighborhood
    points: list[PointMeasure] = []
    for r, c in np.argwhere(mag >= min_rel_height * peak):
        window = mag[max(0, r - n):r + n + 1, max(0, c - n):c + n + 1]
        if mag[r, c] < window.max():
            continue
        tie = np.argwhere(window == mag[r, c])
        if len(tie) > 1 and (tie[0][0] + max(0, r - n), tie[0][1] + max(0, c - n)) != (r, c):
            continue
        try:
            lat = _fwhm_from(mag[r, :], int(c), grid.col_spacing_m)
            axi = _fwhm_from(mag[:, c], int(r), grid.row_spacing_m)
        except NoCrossing:
            continue
        points.append(
            PointMeasure(
                row=int(r),
                col=int(c),
                depth_m=float(grid.row_depths[r]),
                lateral_m=float(grid.col_positions[c]),
                lateral_fwhm_m=lat,
                axial_fwhm_m=axi,
            )
        )
    if not points:
        raise NoPeak("no qualifying point targets found")
    points.sort(key=lambda p: (p.depth_m, p.lateral_m))
    return ResolutionReport(points=points)
