"""Minimal 2D geometry: points, axis-aligned boxes, bounding rectangles.

Boxes are closed on all four edges.  All types are immutable values and all
operations are pure, so everything here is safe to share across threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .ioutil import atomic_write_text


@dataclass(frozen=True)
class Point:
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"point coordinates must be finite, got ({self.x}, {self.y})")


@dataclass(frozen=True)
class BBox:
    min_x: float
    min_y: float
    max_x: float
    max_y: float

    def __post_init__(self):
        vals = (self.min_x, self.min_y, self.max_x, self.max_y)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"box bounds must be finite, got {vals}")
        if self.min_x > self.max_x or self.min_y > self.max_y:
            raise ValueError(f"box has inverted bounds: {vals}")

    @property
    def width(self) -> float:
        return self.max_x - self.min_x

    @property
    def height(self) -> float:
        return self.max_y - self.min_y

    @property
    def area(self) -> float:
        return self.width * self.height


class PointSet:
    """An ordered multiset of 2D points backed by a float64 (n, 2) array."""

    def __init__(self, coords: np.ndarray):
        coords = np.ascontiguousarray(coords, dtype=np.float64)
        if coords.ndim != 2 or coords.shape[1] != 2:
            raise ValueError(f"expected an (n, 2) array, got shape {coords.shape}")
        if coords.size and not np.isfinite(coords).all():
            raise ValueError("point coordinates must be finite")
        self._coords = coords
        self._coords.setflags(write=False)
        self._mbr: BBox | None = None
        self._index = None  # lazily built grid index, see selectivity

    @classmethod
    def from_xy(cls, xs: np.ndarray, ys: np.ndarray) -> "PointSet":
        return cls(np.column_stack((xs, ys)))

    @classmethod
    def from_points(cls, points: Iterable[Point]) -> "PointSet":
        return cls(np.array([(p.x, p.y) for p in points], dtype=np.float64).reshape(-1, 2))

    @property
    def coords(self) -> np.ndarray:
        return self._coords

    @property
    def xs(self) -> np.ndarray:
        return self._coords[:, 0]

    @property
    def ys(self) -> np.ndarray:
        return self._coords[:, 1]

    @property
    def n(self) -> int:
        return self._coords.shape[0]

    def __len__(self) -> int:
        return self.n

    def point(self, i: int) -> Point:
        return Point(float(self._coords[i, 0]), float(self._coords[i, 1]))

    def __repr__(self) -> str:
        return f"PointSet(n={self.n})"


def mbr(points: PointSet) -> BBox:
    """Tightest axis-aligned box containing every point (cached on the set)."""
    if points.n == 0:
        raise ValueError("empty point set")
    if points._mbr is None:
        points._mbr = BBox(
            float(points.xs.min()),
            float(points.ys.min()),
            float(points.xs.max()),
            float(points.ys.max()),
        )
    return points._mbr


def contains(box: BBox, p: Point) -> bool:
    """Closed-box membership on all four edges."""
    return box.min_x <= p.x <= box.max_x and box.min_y <= p.y <= box.max_y


def contains_mask(box: BBox, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Vectorized closed-box membership."""
    return (xs >= box.min_x) & (xs <= box.max_x) & (ys >= box.min_y) & (ys <= box.max_y)


def save_points(path: str | Path, points: PointSet) -> None:
    """Write the shared point file format: one "x,y" line per point, LF endings.

    Coordinates use shortest round-trip decimal form, so a load returns the
    exact same doubles.
    """
    lines = [f"{float(x)!r},{float(y)!r}" for x, y in points.coords]
    data = "\n".join(lines)
    if lines:
        data += "\n"
    atomic_write_text(path, data)


def load_points(path: str | Path) -> PointSet:
    """Read a point file: "x,y" per line, no header."""
    coords = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    if coords.size and coords.shape[1] != 2:
        raise ValueError(f"expected two columns in {path}, got {coords.shape[1]}")
    return PointSet(coords.reshape(-1, 2))
