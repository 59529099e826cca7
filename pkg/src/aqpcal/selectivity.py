"""Range counting, sampling, and the sample-based accuracy measurement.

The production counting path is an equi-width grid index (64x64 cell lists);
``linear_count`` is the independent scan it is verified against.  Samples are
fixed-size draws without replacement: the sample for a seed is the s indices
with the smallest stream keys (ties by index), which the kernels can count
without materializing.

A query's accuracy compares the scaled sample count pi against the exact
count Pi as max(0, 1 - |Pi - pi| / Pi); queries with Pi = 0 are excluded
because the measure is undefined there.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels, rng
from .geometry import BBox, PointSet, contains_mask, mbr

GRID_RES = 64

_TAG_WORKLOAD = 21
_TAG_PAIR = 22

_SQUARE_TOL = 1e-12
_RATIO_TOL = 1e-9


class EmptyWorkloadError(ValueError):
    """Every query in a workload had an empty ground truth."""


@dataclass(frozen=True)
class QuerySpec:
    """An axis-aligned square query; q is its area as a fraction of the MBR's."""

    box: BBox
    q: float

    def __post_init__(self):
        if not 0.0 < self.q <= 1.0:
            raise ValueError(f"q must be in (0, 1], got {self.q}")
        if abs(self.box.width - self.box.height) > _SQUARE_TOL:
            raise ValueError(
                f"query box must be square, got {self.box.width} x {self.box.height}"
            )


@dataclass(frozen=True)
class SelectivityResult:
    ground_truth: int
    estimate: float
    accuracy: float


class GridIndex:
    """Equi-width grid over the dataset MBR with per-cell point lists."""

    def __init__(self, points: PointSet, res: int = GRID_RES):
        if points.n == 0:
            raise ValueError("empty point set")
        self.extent = mbr(points)
        self.res = res
        order, starts = kernels.sort_by_cell(
            points.xs,
            points.ys,
            self.extent.min_x,
            self.extent.min_y,
            self.extent.max_x,
            self.extent.max_y,
            res,
        )
        self._sx = np.ascontiguousarray(points.xs[order])
        self._sy = np.ascontiguousarray(points.ys[order])
        self._starts = starts

    def count(self, box: BBox) -> int:
        return kernels.grid_count(
            self._sx,
            self._sy,
            self._starts,
            self.extent.min_x,
            self.extent.min_y,
            self.extent.max_x,
            self.extent.max_y,
            self.res,
            box.min_x,
            box.min_y,
            box.max_x,
            box.max_y,
        )


def _box_of(query) -> BBox:
    return query.box if isinstance(query, QuerySpec) else query


def _index_of(data: PointSet) -> GridIndex:
    if data._index is None:
        data._index = GridIndex(data)
    return data._index


def ground_truth(data: PointSet, query) -> int:
    """Exact number of points inside the (closed) query box."""
    if data.n == 0:
        raise ValueError("empty point set")
    return _index_of(data).count(_box_of(query))


def linear_count(data: PointSet, query) -> int:
    """Brute-force scan; the oracle the grid index must agree with."""
    box = _box_of(query)
    return int(np.count_nonzero(contains_mask(box, data.xs, data.ys)))


def sample_size(sigma: float, n: int) -> int:
    if not 0.0 < sigma <= 1.0:
        raise ValueError(f"sigma must be in (0, 1], got {sigma}")
    return max(1, round(sigma * n))


def draw_sample(data: PointSet, sigma: float, seed: int) -> PointSet:
    """Uniform fixed-size sample without replacement; order is the key order."""
    s = sample_size(sigma, data.n)
    seed = rng.check_seed(seed)
    keys = kernels.random_keys(seed, data.n)
    order = np.argsort(keys, kind="stable")
    return PointSet(data.coords[order[:s]])


def estimate_selectivity(sample: PointSet, s: int, n: int, query) -> float:
    """Scaled sample count: pi = k * (n / s)."""
    if s != sample.n or s < 1:
        raise ValueError(f"s={s} does not match the sample size {sample.n}")
    if n < s:
        raise ValueError(f"full size n={n} smaller than sample size {s}")
    box = _box_of(query)
    k = int(np.count_nonzero(contains_mask(box, sample.xs, sample.ys)))
    return k * (n / s)


def accuracy(pi: float, Pi: int) -> float:
    """max(0, 1 - |Pi - pi| / Pi); undefined (raises) for Pi <= 0."""
    if Pi <= 0:
        raise ValueError("undefined accuracy for empty ground truth")
    return max(0.0, 1.0 - abs(Pi - pi) / Pi)


def random_query_workload(data_mbr: BBox, q: float, m: int, seed: int) -> list[QuerySpec]:
    """m square queries of relative area q, centered uniformly in the MBR.

    Queries may overhang the MBR; no clamping.
    """
    if not 0.0 < q <= 1.0:
        raise ValueError(f"q must be in (0, 1], got {q}")
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    seed = rng.check_seed(seed)
    area = data_mbr.area
    side = math.sqrt(q * area)
    half = side * 0.5
    us = rng.uniform_array(seed, 2 * m)
    queries = []
    for i in range(m):
        cx = data_mbr.min_x + us[2 * i] * data_mbr.width
        cy = data_mbr.min_y + us[2 * i + 1] * data_mbr.height
        box = BBox(cx - half, cy - half, cx + half, cy + half)
        if area > 0.0 and abs(box.area / area - q) > _RATIO_TOL:
            raise AssertionError("query area drifted from the requested ratio")
        queries.append(QuerySpec(box, q))
    return queries


def run_query(data: PointSet, query, sigma: float, seed: int) -> SelectivityResult:
    """Convenience bundle: exact count, one sampled estimate, and its accuracy."""
    Pi = ground_truth(data, query)
    s = sample_size(sigma, data.n)
    sample = draw_sample(data, sigma, seed)
    pi = estimate_selectivity(sample, s, data.n, query)
    return SelectivityResult(Pi, pi, accuracy(pi, Pi))


def _pair_seeds(seed: int, m: int, r: int) -> np.ndarray:
    out = np.empty(m * r, dtype=np.uint64)
    for i in range(m):
        base = rng.derive(seed, _TAG_PAIR, i)
        for j in range(r):
            out[i * r + j] = rng.derive(base, j)
    return out


def pair_accuracies(
    data: PointSet, sigma: float, q: float, m: int, r: int, seed: int
) -> np.ndarray:
    """Accuracy of every (query, draw) pair as an (m, r) array, NaN where Pi=0.

    Each pair draws its own sample, seeded by (seed, query index, draw index),
    so evaluation order cannot change the result.
    """
    if data.n == 0:
        raise ValueError("empty point set")
    if r < 1:
        raise ValueError(f"r must be >= 1, got {r}")
    seed = rng.check_seed(seed)
    s = sample_size(sigma, data.n)
    queries = random_query_workload(mbr(data), q, m, rng.derive(seed, _TAG_WORKLOAD))
    index = _index_of(data)
    gts = np.array([index.count(qr.box) for qr in queries], dtype=np.int64)

    boxes = np.empty((m * r, 4))
    for i, qr in enumerate(queries):
        boxes[i * r : (i + 1) * r] = (
            qr.box.min_x,
            qr.box.min_y,
            qr.box.max_x,
            qr.box.max_y,
        )
    counts = kernels.sample_counts(data.xs, data.ys, _pair_seeds(seed, m, r), s, boxes)

    scale = data.n / s
    pis = counts.astype(np.float64) * scale
    gtf = np.repeat(gts, r).astype(np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        accs = np.maximum(0.0, 1.0 - np.abs(gtf - pis) / gtf)
    accs[gtf == 0.0] = np.nan
    return accs.reshape(m, r)


def measure_mean_accuracy(
    data: PointSet, sigma: float, q: float, m: int, r: int, seed: int
) -> float:
    """Mean accuracy over all (query, draw) pairs with a nonempty ground truth."""
    accs = pair_accuracies(data, sigma, q, m, r, seed)
    valid = accs[~np.isnan(accs)]
    if valid.size == 0:
        raise EmptyWorkloadError("no nonempty queries; increase q or n")
    return float(np.mean(valid))
