"""Monte Carlo workspace and dexterity analysis.

Fingertip positions are sampled over the actuator and servo ranges. The
circumradius of the contact triangle is taken as the size of a graspable
object, and its circumcentre as the object centre. In parallel (pinch) mode
only the two side fingers touch the object, so the contact circle is the one
through the two tips with its centre at their midpoint.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import rng as _rng
from .errors import DegenerateTriangle, EmptyBand, EmptyInput
from .kinematics import (
    DEFAULT_SERVO_LIMITS,
    DEFAULT_SERVO_PRESETS,
    GripperConfiguration,
    LinkageGeometry,
    Mode,
    fingertip_positions,
    solve_theta,
)

AREA_EPS = 1e-9  # mm^2
BLOCK_SIZE = 4096


def circumradius(p1, p2, p3):
    """Radius and centre of the circle through three points.

    >>> r, c = circumradius([0, 0, 0], [3, 0, 0], [0, 4, 0])
    >>> round(r, 12)
    2.5
    """
    p1, p2, p3 = (np.asarray(p, dtype=float) for p in (p1, p2, p3))
    radius, center, area = _circumcircle(p1[None], p2[None], p3[None])
    if area[0] < AREA_EPS:
        raise DegenerateTriangle("points are (nearly) collinear")
    return float(radius[0]), center[0]


def _circumcircle(p1, p2, p3):
    """Vectorised circumcircle of triangles given as (n, 3) arrays."""
    a = p2 - p1
    b = p3 - p1
    axb = np.cross(a, b)
    cross2 = np.einsum("ij,ij->i", axb, axb)
    area = 0.5 * np.sqrt(cross2)
    la = np.linalg.norm(a, axis=1)
    lb = np.linalg.norm(b, axis=1)
    lc = np.linalg.norm(p3 - p2, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        radius = la * lb * lc / (4.0 * area)
        num = np.cross((la * la)[:, None] * b - (lb * lb)[:, None] * a, axb)
        center = p1 + num / (2.0 * cross2)[:, None]
    return radius, center, area


@dataclass(frozen=True)
class WorkspaceSample:
    contact_points: tuple
    circumradius: float
    circumcenter: np.ndarray
    configuration: GripperConfiguration


@dataclass
class WorkspaceSampleSet:
    """Accepted Monte Carlo samples stored column-wise.

    Iterating or indexing yields :class:`WorkspaceSample` objects.
    """

    mode: Mode
    geometry: LinkageGeometry
    actuator: np.ndarray      # (n, 3) actuator displacement per finger, mm
    servo: np.ndarray         # (n, 2) side servo angles, rad
    contact_points: np.ndarray  # (n, k, 3) with k = 3, or 2 in parallel mode
    radius: np.ndarray        # (n,)
    center: np.ndarray        # (n, 3)
    n_drawn: int = 0
    n_degenerate: int = 0
    servo_limits: tuple | None = field(default=None, repr=False)

    def __len__(self):
        return int(self.radius.shape[0])

    def __getitem__(self, i) -> WorkspaceSample:
        thetas = solve_theta(self.geometry, self.actuator[i])
        from .kinematics import FingerState

        fingers = tuple(FingerState(float(y), float(t)) for y, t in zip(self.actuator[i], thetas))
        cfg = GripperConfiguration(self.mode, float(self.servo[i, 0]), float(self.servo[i, 1]),
                                   fingers, self.geometry, self.servo_limits)
        pts = tuple(p.copy() for p in self.contact_points[i])
        return WorkspaceSample(pts, float(self.radius[i]), self.center[i].copy(), cfg)

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def select(self, mask) -> "WorkspaceSampleSet":
        return WorkspaceSampleSet(self.mode, self.geometry, self.actuator[mask], self.servo[mask],
                                  self.contact_points[mask], self.radius[mask], self.center[mask],
                                  int(np.count_nonzero(mask)), 0, self.servo_limits)

    def in_band(self, radius_band) -> "WorkspaceSampleSet":
        lo, hi = radius_band
        return self.select((self.radius >= lo) & (self.radius <= hi))

    @staticmethod
    def concat(sets) -> "WorkspaceSampleSet":
        sets = list(sets)
        first = sets[0]
        k = max(s.contact_points.shape[1] for s in sets)
        if any(s.contact_points.shape[1] != k for s in sets):
            raise ValueError("cannot pool parallel-mode samples with three-finger samples")
        return WorkspaceSampleSet(
            first.mode, first.geometry,
            np.concatenate([s.actuator for s in sets]),
            np.concatenate([s.servo for s in sets]),
            np.concatenate([s.contact_points for s in sets]),
            np.concatenate([s.radius for s in sets]),
            np.concatenate([s.center for s in sets]),
            sum(s.n_drawn for s in sets),
            sum(s.n_degenerate for s in sets),
            first.servo_limits,
        )


def _sample_block(geometry, mode, limits, preset, equal_fingers, seed, block, count):
    gen = _rng.substream(seed, f"workspace/{int(mode)}", block)
    if equal_fingers:
        y = np.repeat(gen.uniform(geometry.y_min, geometry.y_max, size=(count, 1)), 3, axis=1)
        servo = np.full((count, 2), float(preset))
    else:
        y = gen.uniform(geometry.y_min, geometry.y_max, size=(count, 3))
        servo = gen.uniform(limits[0], limits[1], size=(count, 2))
    thetas = solve_theta(geometry, y)
    tips, _ = fingertip_positions(geometry, thetas, servo[:, 0], servo[:, 1])
    if mode == Mode.PARALLEL:
        pts = tips[:, 1:, :]
        radius = 0.5 * np.linalg.norm(pts[:, 0] - pts[:, 1], axis=1)
        center = 0.5 * (pts[:, 0] + pts[:, 1])
        ok = radius > np.sqrt(AREA_EPS)
    else:
        pts = tips
        radius, center, area = _circumcircle(tips[:, 0], tips[:, 1], tips[:, 2])
        ok = area >= AREA_EPS
    return y[ok], servo[ok], pts[ok], radius[ok], center[ok], int(count - ok.sum())


def sample_workspace(geometry: LinkageGeometry, mode, n: int, seed: int = 0, *,
                     servo_limits=None, servo_presets=None, equal_fingers: bool = False,
                     threads: int = 1) -> WorkspaceSampleSet:
    """Draw ``n`` uniform configurations and return the non-degenerate samples.

    Each block of ``BLOCK_SIZE`` draws has its own counter-based stream keyed
    by ``(seed, mode, block)``, so the output does not depend on ``threads``.
    """
    mode = Mode.parse(mode)
    if n < 1:
        raise ValueError("n must be >= 1")
    limits = tuple((servo_limits or DEFAULT_SERVO_LIMITS)[mode])
    preset = (servo_presets or DEFAULT_SERVO_PRESETS)[mode]
    jobs = list(_rng.block_ranges(int(n), BLOCK_SIZE))

    def run(job):
        b, start, stop = job
        return _sample_block(geometry, mode, limits, preset, equal_fingers, seed, b, stop - start)

    if threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, jobs))
    else:
        parts = [run(j) for j in jobs]
    return WorkspaceSampleSet(
        mode, geometry,
        np.concatenate([p[0] for p in parts]),
        np.concatenate([p[1] for p in parts]),
        np.concatenate([p[2] for p in parts]),
        np.concatenate([p[3] for p in parts]),
        np.concatenate([p[4] for p in parts]),
        int(n), sum(p[5] for p in parts), limits,
    )


@dataclass(frozen=True)
class RadiusHistogram:
    bin_edges: np.ndarray
    counts: np.ndarray
    configuration_mode: object = None

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def mean(self) -> float:
        """Count-weighted mean of the bin centres (finite bins only)."""
        edges = self.bin_edges[1:-1]
        centers = 0.5 * (edges[:-1] + edges[1:])
        inner = self.counts[1:-1]
        if inner.sum() == 0:
            return float("nan")
        return float((centers * inner).sum() / inner.sum())


def radius_histogram(samples, bin_width: float = 5.0, r_max: float = 200.0, mode=None) -> RadiusHistogram:
    """Histogram of circumradii on ``[0, r_max]`` plus underflow and overflow bins.

    ``counts[0]`` counts radii below 0 (always empty) and ``counts[-1]`` those
    at or above ``r_max``. The outer edges are ``-inf`` and ``+inf``.
    """
    if bin_width <= 0:
        raise ValueError("bin_width must be positive")
    radii = _radii(samples)
    if mode is None and isinstance(samples, WorkspaceSampleSet):
        mode = samples.mode
    nbins = int(np.ceil(r_max / bin_width))
    inner = np.arange(nbins + 1) * bin_width
    edges = np.concatenate([[-np.inf], inner, [np.inf]])
    idx = np.searchsorted(inner, radii, side="right")
    counts = np.bincount(idx, minlength=nbins + 2)[: nbins + 2].astype(np.int64)
    return RadiusHistogram(edges, counts, mode)


def _radii(samples) -> np.ndarray:
    if isinstance(samples, WorkspaceSampleSet):
        return samples.radius
    samples = list(samples)
    if not samples:
        return np.zeros(0)
    if isinstance(samples[0], WorkspaceSample):
        return np.array([s.circumradius for s in samples])
    return np.asarray(samples, dtype=float)


def histogram_support(hist: RadiusHistogram, tail: float = 0.05) -> tuple:
    """Radius interval left after trimming ``tail`` of the mass from each end.

    Resolution is one bin and rounding is inward: ``lo`` is the first edge
    with at least ``tail`` of the mass below it, ``hi`` the last edge with at
    least ``tail`` above it. Overflow counts take part in the mass.
    """
    if not 0 <= tail < 0.5:
        raise ValueError("tail must be in [0, 0.5)")
    total = hist.counts.sum()
    if total == 0:
        return (float("nan"), float("nan"))
    inner_edges = hist.bin_edges[1:-1]
    below = np.cumsum(hist.counts)[:-1] / total      # mass below each inner edge
    above = 1.0 - below
    lo_i = int(np.argmax(below >= tail - 1e-12))
    hi_candidates = np.nonzero(above >= tail - 1e-12)[0]
    hi_i = int(hi_candidates[-1]) if len(hi_candidates) else lo_i
    return (float(inner_edges[lo_i]), float(inner_edges[max(hi_i, lo_i)]))


@dataclass(frozen=True)
class GridSpec:
    origin: tuple          # (x0, y0), mm: position of node [0, 0]
    cell_size: float       # mm
    shape: tuple           # (ny, nx)

    def axes(self):
        ny, nx = self.shape
        xs = self.origin[0] + self.cell_size * np.arange(nx)
        ys = self.origin[1] + self.cell_size * np.arange(ny)
        return xs, ys

    @classmethod
    def covering(cls, points, margin: float, cell_size: float) -> "GridSpec":
        points = np.asarray(points, dtype=float)
        lo = points.min(axis=0) - margin
        hi = points.max(axis=0) + margin
        nx = int(np.ceil((hi[0] - lo[0]) / cell_size)) + 1
        ny = int(np.ceil((hi[1] - lo[1]) / cell_size)) + 1
        return cls((float(lo[0]), float(lo[1])), float(cell_size), (ny, nx))


@dataclass(frozen=True)
class DensityGrid:
    origin: tuple
    cell_size: float
    values: np.ndarray     # (ny, nx), 1/mm^2
    bandwidth: object      # float or (hx, hy)

    def mass(self) -> float:
        return float(self.values.sum() * self.cell_size ** 2)

    def spec(self) -> GridSpec:
        return GridSpec(self.origin, self.cell_size, self.values.shape)


def scott_bandwidth(points) -> tuple:
    """Per-axis bandwidth ``n**(-1/6) * std``; falls back to 1 mm on a zero spread."""
    points = np.asarray(points, dtype=float)
    n = points.shape[0]
    sd = points.std(axis=0, ddof=1) if n > 1 else np.zeros(points.shape[1])
    h = n ** (-1.0 / 6.0) * sd
    h = np.where(h > 0, h, 1.0)
    return float(h[0]), float(h[1])


def kde_density(points, bandwidth=None, grid: GridSpec | None = None, cell_size: float = 2.0) -> DensityGrid:
    """Gaussian KDE of 2-D points evaluated exactly on a regular grid.

    ``bandwidth`` is a scalar ``h`` or a pair ``(hx, hy)`` in mm; the default
    is :func:`scott_bandwidth`. The product kernel is separable, so the grid
    is one matrix product ``Ky.T @ Kx``.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if pts.shape[0] == 0:
        raise EmptyInput("kde_density needs at least one point")
    if bandwidth is None:
        bandwidth = scott_bandwidth(pts)
    hx, hy = (float(bandwidth), float(bandwidth)) if np.isscalar(bandwidth) else map(float, bandwidth)
    if hx <= 0 or hy <= 0:
        raise ValueError("bandwidth must be positive")
    if grid is None:
        grid = GridSpec.covering(pts, 4.0 * max(hx, hy), cell_size)
    xs, ys = grid.axes()
    kx = np.exp(-0.5 * ((xs[None, :] - pts[:, 0:1]) / hx) ** 2)
    ky = np.exp(-0.5 * ((ys[None, :] - pts[:, 1:2]) / hy) ** 2)
    values = ky.T @ kx / (pts.shape[0] * 2.0 * np.pi * hx * hy)
    bw = hx if hx == hy else (hx, hy)
    return DensityGrid(grid.origin, grid.cell_size, values, bw)


POSITIVE_FLOOR = 1e-3  # relative to the peak density


def high_density_mask(grid: DensityGrid, quantile: float = 0.5):
    """Cells at or above the ``quantile`` of the non-negligible densities."""
    v = grid.values
    positive = v[v > POSITIVE_FLOOR * v.max()]
    threshold = float(np.quantile(positive, quantile))
    return v >= threshold, threshold


@dataclass(frozen=True)
class DexterityMap:
    grid: DensityGrid
    region_count: int
    threshold: float
    labels: np.ndarray
    n_points: int


def dexterity_map(samples: WorkspaceSampleSet, radius_band, quantile: float = 0.5,
                  grid: GridSpec | None = None, bandwidth=None, cell_size: float = 2.0) -> DexterityMap:
    """KDE of circumcentres (x, y) for samples whose radius lies in the band.

    ``region_count`` is the number of 4-connected components of the cells at
    or above the density quantile.
    """
    lo, hi = radius_band
    if not lo < hi:
        raise ValueError("radius band must satisfy r_lo < r_hi")
    band = samples.in_band(radius_band)
    if len(band) == 0:
        raise EmptyBand(f"no samples with radius in [{lo}, {hi}] mm")
    dens = kde_density(band.center[:, :2], bandwidth, grid, cell_size)
    mask, thr = high_density_mask(dens, quantile)
    labels, count = ndimage.label(mask)
    return DexterityMap(dens, int(count), thr, labels, len(band))


def translation_range(samples: WorkspaceSampleSet, radius_band, quantile: float = 0.5,
                      bandwidth=None, cell_size: float = 2.0) -> dict:
    """Largest in-hand translation along x within the band's high-dexterity region.

    Returns ``delta_x_max`` (mm): the largest x extent of the band's
    circumcentres inside one connected above-threshold region. An object
    cannot be carried across a low-dexterity gap, so regions are not merged.
    """
    band = samples.in_band(radius_band)
    if len(band) == 0:
        raise EmptyBand("no samples in radius band")
    if len(band) == 1:
        return {"delta_x_max": 0.0, "n_points": 1}
    dmap = dexterity_map(band, radius_band, quantile, None, bandwidth, cell_size)
    g = dmap.grid
    pts = band.center[:, :2]
    ix = np.clip(np.rint((pts[:, 0] - g.origin[0]) / g.cell_size).astype(int), 0, g.values.shape[1] - 1)
    iy = np.clip(np.rint((pts[:, 1] - g.origin[1]) / g.cell_size).astype(int), 0, g.values.shape[0] - 1)
    lab = dmap.labels[iy, ix]
    dx = 0.0
    for region in range(1, dmap.region_count + 1):
        xs = pts[lab == region, 0]
        if xs.size:
            dx = max(dx, float(xs.max() - xs.min()))
    return {"delta_x_max": dx, "n_points": int((lab > 0).sum()), "region_count": dmap.region_count}
