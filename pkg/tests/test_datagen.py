import numpy as np
import pytest

from aqpcal import datagen
from aqpcal.datagen import DistributionSpec, SpecError, generate, generate_mixed, parse_spec
from aqpcal.histogram import build_histogram
from aqpcal.geometry import PointSet


ALL_SPECS = [
    "uniform",
    "gaussian:sigma=0.05",
    "diagonal:buffer=0.02,theta=30",
    "sierpinski",
    "bit:p=0.3",
    "parcel:dither=0.1",
    "mixed",
]


@pytest.mark.parametrize("spec_text", ALL_SPECS)
def test_containment_and_count(spec_text):
    ps = generate(parse_spec(spec_text), 5000, 11)
    assert ps.n == 5000
    assert (ps.xs >= 0).all() and (ps.xs <= 1).all()
    assert (ps.ys >= 0).all() and (ps.ys <= 1).all()


@pytest.mark.parametrize("spec_text", ALL_SPECS)
def test_determinism(spec_text):
    a = generate(parse_spec(spec_text), 2000, 5)
    b = generate(parse_spec(spec_text), 2000, 5)
    assert np.array_equal(a.coords, b.coords)


@pytest.mark.parametrize("spec_text", ALL_SPECS)
def test_seed_sensitivity(spec_text):
    a = generate(parse_spec(spec_text), 200, 5)
    b = generate(parse_spec(spec_text), 200, 6)
    assert not np.array_equal(a.coords[:10], b.coords[:10])


def test_uniform_chi_square_sanity():
    ps = generate(parse_spec("uniform"), 100_000, 3)
    grid = build_histogram(ps, 4)
    assert grid.values.min() >= 0.0525
    assert grid.values.max() <= 0.0725


def test_sierpinski_in_triangle_oracle():
    """Barycentric point-in-triangle test over every output point."""
    ps = generate(parse_spec("sierpinski"), 10_000, 7)
    x0, y0, x1, y1, x2, y2 = 0.5, 0.0, 0.0, 1.0, 1.0, 1.0
    d = (y1 - y2) * (x0 - x2) + (x2 - x1) * (y0 - y2)
    l1 = ((y1 - y2) * (ps.xs - x2) + (x2 - x1) * (ps.ys - y2)) / d
    l2 = ((y2 - y0) * (ps.xs - x2) + (x0 - x2) * (ps.ys - y2)) / d
    l3 = 1.0 - l1 - l2
    eps = 1e-12
    assert (l1 >= -eps).all() and (l2 >= -eps).all() and (l3 >= -eps).all()


def test_diagonal_zero_buffer_is_exact():
    ps = generate(parse_spec("diagonal:buffer=0.0"), 50, 3)
    assert (ps.xs == ps.ys).all()


def test_diagonal_rotation_moves_pattern():
    flat = generate(parse_spec("diagonal:buffer=0.0"), 500, 3)
    rot = generate(parse_spec("diagonal:buffer=0.0,theta=90"), 500, 3)
    # rotating y=x by 90 degrees about the center gives y=1-x
    assert np.allclose(rot.ys, 1.0 - rot.xs, atol=1e-12)
    assert not np.array_equal(flat.coords, rot.coords)


def test_bit_coordinates_are_dyadic():
    ps = generate(parse_spec("bit:p=0.5,digits=8"), 1000, 9)
    scaled = ps.coords * 256.0
    assert np.array_equal(scaled, np.round(scaled))


def test_parcel_small_n():
    one = generate(parse_spec("parcel"), 1, 4)
    assert one.coords.tolist() == [[0.5, 0.5]]
    many = generate(parse_spec("parcel"), 1000, 4)
    assert len(np.unique(many.coords, axis=0)) == 1000


def test_mixed_count_contract():
    children = (
        (DistributionSpec("gaussian"), 0.3),
        (DistributionSpec("diagonal"), 0.7),
    )
    ps = generate_mixed(children, 1000, 8)
    assert ps.n == 1000
    ps2 = generate_mixed(((DistributionSpec("uniform"), 0.5), (DistributionSpec("uniform"), 0.5)), 10, 1)
    assert ps2.n == 10


def test_mixed_two_blobs_histogram_oracle():
    """Direct 2x2 count: each corner blob holds at least 45% of the mass."""
    children = (
        (DistributionSpec("gaussian", {"sigma": 0.05, "cx": 0.25, "cy": 0.25}), 0.5),
        (DistributionSpec("gaussian", {"sigma": 0.05, "cx": 0.75, "cy": 0.75}), 0.5),
    )
    ps = generate_mixed(children, 10_000, 3)
    grid = build_histogram(ps, 2)
    assert grid.values[0, 0] >= 0.45
    assert grid.values[1, 1] >= 0.45


def test_mixed_weight_validation():
    with pytest.raises(SpecError, match="invalid distribution spec"):
        generate_mixed(((DistributionSpec("uniform"), 0.5), (DistributionSpec("uniform"), 0.6)), 10, 1)
    with pytest.raises(SpecError):
        generate_mixed(((DistributionSpec("uniform"), 1.0),), 10, 1)
    with pytest.raises(SpecError):
        DistributionSpec("mixed", children=((DistributionSpec("mixed"), 0.5), (DistributionSpec("uniform"), 0.5)))


def test_spec_validation_errors():
    for bad in ("nosuch", "gaussian:sigma=-1", "bit:p=2", "diagonal:p=1.5", "bit:digits=0.5", "uniform:oops=1"):
        with pytest.raises(SpecError, match="invalid distribution spec"):
            parse_spec(bad)
    with pytest.raises(ValueError, match="n must be"):
        generate(parse_spec("uniform"), 0, 1)
    with pytest.raises(ValueError):
        generate(parse_spec("uniform"), 10, -1)


def test_spec_string_roundtrip():
    for text in ALL_SPECS + ["mixed:gaussian:sigma=0.05;cx=0.25@0.5+uniform@0.5"]:
        spec = parse_spec(text)
        again = parse_spec(spec.to_string())
        assert again.to_string() == spec.to_string()
        a = generate(spec, 100, 5)
        b = generate(again, 100, 5)
        assert np.array_equal(a.coords, b.coords)


def test_metadata_sidecar(tmp_path):
    spec = parse_spec("gaussian:sigma=0.05")
    datagen.save_metadata(tmp_path / "p.csv.meta", spec, 100, 42)
    text = (tmp_path / "p.csv.meta").read_text()
    assert "family=gaussian" in text
    assert "n=100" in text
    assert "seed=42" in text
    assert "sigma=0.05" in text


def test_generate_rejects_non_spec():
    with pytest.raises(SpecError):
        generate("uniform", 10, 1)  # must be a parsed spec
