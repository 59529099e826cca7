"""Seeded synthetic point datasets for seven distribution families.

Families: uniform, gaussian, diagonal, sierpinski, bit, parcel, mixed.
Generation is deterministic per (spec, n, seed) and every point lands in the
unit square.  Specs can be written as strings, e.g.::

    uniform
    gaussian:sigma=0.05,cx=0.25,cy=0.25
    diagonal:buffer=0.05,theta=45
    mixed:gaussian@0.4+diagonal@0.3+uniform@0.3

Child params inside a mixed spec use ';' separators
(``mixed:gaussian:sigma=0.05;cx=0.25@0.5+uniform@0.5``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels, rng
from .geometry import PointSet
from .ioutil import atomic_write_text

FAMILIES = ("uniform", "gaussian", "diagonal", "sierpinski", "bit", "parcel", "mixed")

_DEFAULTS = {
    "uniform": {},
    "gaussian": {"sigma": 0.1, "cx": 0.5, "cy": 0.5},
    "diagonal": {"p": 0.5, "buffer": 0.05, "theta": 0.0},
    "sierpinski": {},
    "bit": {"p": 0.2, "digits": 16.0},
    "parcel": {"dither": 0.2},
    "mixed": {},
}

# default mixed blend: gaussian blob + diagonal band + uniform noise
_DEFAULT_MIX = (("gaussian", 0.4), ("diagonal", 0.3), ("uniform", 0.3))

_TAG_CHILD = 11
_TAG_SHUFFLE = 12

_WEIGHT_TOL = 1e-9


class SpecError(ValueError):
    """Raised for malformed distribution specs."""


def _bad(detail: str) -> SpecError:
    return SpecError(f"invalid distribution spec: {detail}")


@dataclass
class DistributionSpec:
    family: str
    params: dict = field(default_factory=dict)
    children: tuple = ()  # ((DistributionSpec, weight), ...) for mixed

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise _bad(f"unknown family {self.family!r}")
        merged = dict(_DEFAULTS[self.family])
        for k, v in self.params.items():
            if k not in merged:
                raise _bad(f"unknown parameter {k!r} for family {self.family!r}")
            merged[k] = float(v)
        self.params = merged
        if self.family == "mixed":
            if not self.children:
                self.children = tuple(
                    (DistributionSpec(fam), w) for fam, w in _DEFAULT_MIX
                )
            self.children = tuple((c, float(w)) for c, w in self.children)
            _check_children(self.children)
        elif self.children:
            raise _bad(f"family {self.family!r} takes no children")
        self._validate_params()

    def _validate_params(self):
        p = self.params
        if self.family == "gaussian":
            if p["sigma"] <= 0:
                raise _bad("gaussian sigma must be positive")
            if not (0.0 <= p["cx"] <= 1.0 and 0.0 <= p["cy"] <= 1.0):
                raise _bad("gaussian center must lie in the unit square")
        elif self.family == "diagonal":
            if not 0.0 <= p["p"] <= 1.0:
                raise _bad("diagonal p must be in [0, 1]")
            if p["buffer"] < 0:
                raise _bad("diagonal buffer must be nonnegative")
        elif self.family == "bit":
            if not 0.0 <= p["p"] <= 1.0:
                raise _bad("bit p must be in [0, 1]")
            d = p["digits"]
            if d != int(d) or not 1 <= d <= 32:
                raise _bad("bit digits must be an integer in 1..32")
        elif self.family == "parcel":
            if not 0.0 <= p["dither"] < 0.5:
                raise _bad("parcel dither must be in [0, 0.5)")

    def to_string(self) -> str:
        """Canonical round-trippable spec string (defaults included)."""
        if self.family == "mixed":
            parts = []
            for child, w in self.children:
                cs = child.to_string().replace(",", ";")
                parts.append(f"{cs}@{w!r}")
            return "mixed:" + "+".join(parts)
        if not self.params:
            return self.family
        kv = ",".join(f"{k}={self.params[k]!r}" for k in sorted(self.params))
        return f"{self.family}:{kv}"


def _check_children(children) -> None:
    if len(children) < 2:
        raise _bad("mixed needs at least two children")
    total = 0.0
    for child, w in children:
        if not isinstance(child, DistributionSpec):
            raise _bad("mixed children must be DistributionSpec values")
        if child.family == "mixed":
            raise _bad("mixed children cannot be nested mixed specs")
        if w <= 0:
            raise _bad("mixed weights must be positive")
        total += w
    if abs(total - 1.0) > _WEIGHT_TOL:
        raise _bad(f"mixed weights sum to {total!r}, expected 1")


def parse_spec(text: str) -> DistributionSpec:
    """Parse a spec string (see module docstring for the grammar)."""
    text = text.strip()
    if not text:
        raise _bad("empty spec string")
    family, _, rest = text.partition(":")
    family = family.strip().lower()
    if family == "mixed":
        if not rest:
            return DistributionSpec("mixed")
        children = []
        for part in rest.split("+"):
            body, at, wtext = part.rpartition("@")
            if not at:
                raise _bad(f"mixed child {part!r} is missing an @weight")
            child = parse_spec(body.replace(";", ","))
            try:
                w = float(wtext)
            except ValueError:
                raise _bad(f"bad weight {wtext!r}") from None
            children.append((child, w))
        return DistributionSpec("mixed", children=tuple(children))
    params = {}
    if rest:
        for kv in rest.split(","):
            k, eq, v = kv.partition("=")
            if not eq:
                raise _bad(f"expected key=value, got {kv!r}")
            try:
                params[k.strip()] = float(v)
            except ValueError:
                raise _bad(f"bad value for {k.strip()!r}: {v!r}") from None
    return DistributionSpec(family, params)


def generate(spec: DistributionSpec, n: int, seed: int) -> PointSet:
    """Generate exactly n points in the unit square, bit-reproducible per seed."""
    if not isinstance(spec, DistributionSpec):
        raise _bad(f"expected DistributionSpec, got {type(spec).__name__}")
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    seed = rng.check_seed(seed)
    fam = spec.family
    p = spec.params
    if fam == "mixed":
        return generate_mixed(spec.children, n, seed)
    if fam == "uniform":
        xs, ys = kernels.gen_uniform(seed, n)
    elif fam == "gaussian":
        xs, ys = kernels.gen_gaussian(seed, n, p["cx"], p["cy"], p["sigma"])
    elif fam == "diagonal":
        rad = math.radians(p["theta"])
        xs, ys = kernels.gen_diagonal(
            seed, n, p["p"], p["buffer"], math.cos(rad), math.sin(rad)
        )
    elif fam == "sierpinski":
        xs, ys = kernels.gen_sierpinski(seed, n)
    elif fam == "bit":
        xs, ys = kernels.gen_bit(seed, n, p["p"], int(p["digits"]))
    elif fam == "parcel":
        xs, ys = kernels.gen_parcel(seed, n, p["dither"])
    else:  # pragma: no cover - families list is closed
        raise _bad(f"unknown family {fam!r}")
    return PointSet.from_xy(xs, ys)


def generate_mixed(children, n: int, seed: int) -> PointSet:
    """Weighted union of child generators, then a seeded shuffle.

    Child i contributes round(weight_i * n) points; the last child absorbs
    the rounding remainder so the total is exactly n.
    """
    children = tuple((c, float(w)) for c, w in children)
    _check_children(children)
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    seed = rng.check_seed(seed)
    counts = [int(round(w * n)) for _, w in children[:-1]]
    counts.append(n - sum(counts))
    if counts[-1] < 0:
        raise _bad("weights round to more points than requested")
    parts = []
    for i, ((child, _), c) in enumerate(zip(children, counts)):
        if c == 0:
            continue
        parts.append(generate(child, c, rng.derive(seed, _TAG_CHILD, i)).coords)
    coords = np.concatenate(parts, axis=0)
    order = rng.permutation(rng.derive(seed, _TAG_SHUFFLE), n)
    return PointSet(coords[order])


def save_metadata(path: str | Path, spec: DistributionSpec, n: int, seed: int) -> None:
    """Sidecar describing how a point file was produced (key=value lines)."""
    params = spec.to_string().partition(":")[2]
    text = (
        f"family={spec.family}\n"
        f"params={params}\n"
        f"n={n}\n"
        f"seed={seed}\n"
    )
    atomic_write_text(path, text)
