"""Uniform h x h frequency grids, the model's distribution feature.

Cells are equi-width over the dataset MBR; row 0 is the lowest y band.
Values are cell counts divided by the point count, so the grid sums to one
whatever the dataset size.  Points on the global max edge fold into the last
bin to conserve mass.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .geometry import BBox, PointSet, mbr
from .ioutil import atomic_write_text

_SUM_TOL = 1e-9


@dataclass
class HistogramGrid:
    h: int
    extent: BBox
    values: np.ndarray  # (h, h), row-major, row 0 = lowest y band

    def __post_init__(self):
        if self.h < 1:
            raise ValueError(f"h must be >= 1, got {self.h}")
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (self.h, self.h):
            raise ValueError(
                f"values shape {self.values.shape} does not match h={self.h}"
            )
        if (self.values < 0).any():
            raise ValueError("histogram values must be nonnegative")
        total = float(self.values.sum())
        if abs(total - 1.0) > _SUM_TOL:
            raise ValueError(f"histogram values sum to {total!r}, expected 1")


def build_histogram(data: PointSet, h: int) -> HistogramGrid:
    """Bin the points over their MBR and normalize by the point count."""
    if data.n == 0:
        raise ValueError("empty point set")
    if h < 1:
        raise ValueError(f"h must be >= 1, got {h}")
    extent = mbr(data)
    counts = kernels.histogram_counts(
        data.xs, data.ys, extent.min_x, extent.min_y, extent.max_x, extent.max_y, h
    )
    return HistogramGrid(h, extent, counts.astype(np.float64) / data.n)


def flatten(grid: HistogramGrid) -> np.ndarray:
    """Row-major vector of length h^2."""
    return grid.values.reshape(-1).copy()


def save_histogram(path: str | Path, grid: HistogramGrid) -> None:
    """Histogram file: "h=<int>", "extent=<4 reals>", then h rows of h reals."""
    e = grid.extent
    lines = [
        f"h={grid.h}",
        f"extent={e.min_x!r},{e.min_y!r},{e.max_x!r},{e.max_y!r}",
    ]
    for row in grid.values:
        lines.append(",".join(repr(float(v)) for v in row))
    atomic_write_text(path, "\n".join(lines) + "\n")


def load_histogram(path: str | Path) -> HistogramGrid:
    lines = Path(path).read_text().splitlines()
    if len(lines) < 2 or not lines[0].startswith("h=") or not lines[1].startswith("extent="):
        raise ValueError(f"{path} is not a histogram file")
    h = int(lines[0][2:])
    ext = [float(v) for v in lines[1][len("extent=") :].split(",")]
    if len(ext) != 4:
        raise ValueError(f"{path} has a malformed extent line")
    if len(lines) < 2 + h:
        raise ValueError(f"{path} is missing histogram rows")
    values = np.array(
        [[float(v) for v in lines[2 + i].split(",")] for i in range(h)],
        dtype=np.float64,
    )
    return HistogramGrid(h, BBox(*ext), values)
