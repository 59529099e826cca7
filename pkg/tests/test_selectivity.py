import numpy as np
import pytest
from hypothesis import given, strategies as st

from aqpcal import datagen, rng, selectivity as sel
from aqpcal.geometry import BBox, PointSet, mbr


def _ps(*pts):
    return PointSet(np.array(pts, dtype=float))


# ---------------------------------------------------------------------------
# ground truth
# ---------------------------------------------------------------------------


def test_ground_truth_trivial():
    data = _ps((0.1, 0.1), (0.5, 0.5), (0.9, 0.9))
    assert sel.ground_truth(data, BBox(0.4, 0.4, 0.6, 0.6)) == 1


def test_ground_truth_mbr_is_n(uniform_20k):
    assert sel.ground_truth(uniform_20k, mbr(uniform_20k)) == uniform_20k.n


def test_grid_matches_linear_scan(uniform_100k):
    """The grid-indexed path must equal the independent scan exactly."""
    assert sel.ground_truth(uniform_100k, BBox(0.2, 0.2, 0.7, 0.7)) == sel.linear_count(
        uniform_100k, BBox(0.2, 0.2, 0.7, 0.7)
    )
    r = np.random.default_rng(0)
    for _ in range(100):
        cx, cy = r.uniform(-0.2, 1.2, 2)
        half = r.uniform(0.0, 0.6)
        box = BBox(cx - half, cy - half, cx + half, cy + half)
        assert sel.ground_truth(uniform_100k, box) == sel.linear_count(uniform_100k, box)


def test_grid_matches_linear_on_skewed_data():
    for spec in ("gaussian:sigma=0.05", "diagonal:buffer=0.02", "bit:p=0.2"):
        data = datagen.generate(datagen.parse_spec(spec), 30_000, 9)
        r = np.random.default_rng(1)
        for _ in range(50):
            cx, cy = r.uniform(0, 1, 2)
            half = r.uniform(0, 0.3)
            box = BBox(cx - half, cy - half, cx + half, cy + half)
            assert sel.ground_truth(data, box) == sel.linear_count(data, box)


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------


def test_draw_sample_sigma_one_is_permutation(uniform_20k):
    sample = sel.draw_sample(uniform_20k, 1.0, 5)
    assert sample.n == uniform_20k.n
    a = np.sort(sample.coords.view([("x", float), ("y", float)]).ravel())
    b = np.sort(uniform_20k.coords.view([("x", float), ("y", float)]).ravel())
    assert np.array_equal(a, b)
    assert not np.array_equal(sample.coords, uniform_20k.coords)  # shuffled order


def test_draw_sample_count_and_membership():
    data = datagen.generate(datagen.parse_spec("uniform"), 10, 3)
    sample = sel.draw_sample(data, 0.5, 7)
    assert sample.n == 5
    pool = {tuple(p) for p in data.coords}
    assert all(tuple(p) in pool for p in sample.coords)
    assert len({tuple(p) for p in sample.coords}) == 5  # distinct


def test_draw_sample_matches_fused_count(uniform_20k):
    """The materialized sample and the count-only kernel pick the same subset."""
    box = BBox(0.1, 0.3, 0.6, 0.8)
    for sigma in (0.01, 0.1, 0.5):
        for seed in (1, 2, 3):
            sample = sel.draw_sample(uniform_20k, sigma, seed)
            k_direct = sel.linear_count(sample, box)
            from aqpcal import kernels

            boxes = np.array([[0.1, 0.3, 0.6, 0.8]])
            seeds = np.array([seed], dtype=np.uint64)
            k_fused = kernels.sample_counts(
                uniform_20k.xs, uniform_20k.ys, seeds, sample.n, boxes
            )[0]
            assert k_direct == k_fused


def test_sample_inclusion_uniformity():
    """Monte-Carlo oracle: per-point inclusion frequencies behave like a
    uniform without-replacement design.

    With p points and R draws, individual frequencies are Binomial(R, s/n)/R,
    so a few land beyond 3 standard errors by chance; the checks are the
    exact grand mean, a 6-sigma extreme bound, and the 3-sigma outlier rate.
    """
    n, sigma, reps = 2000, 0.05, 1000
    data = datagen.generate(datagen.parse_spec("uniform"), n, 4)
    s = sel.sample_size(sigma, n)
    hits = np.zeros(n)
    for rep in range(reps):
        keys = np.argsort(
            np.array([rng.stream_value(rng.derive(9, rep), k) for k in range(n)], dtype=np.uint64),
            kind="stable",
        )[:s]
        hits[keys] += 1
    freq = hits / reps
    se = np.sqrt(sigma * (1 - sigma) / reps)
    assert freq.mean() == s / n
    assert np.abs(freq - sigma).max() < 6 * se
    assert np.mean(np.abs(freq - sigma) > 3 * se) < 0.02


def test_sigma_validation(uniform_20k):
    for bad in (0.0, -0.1, 1.0001):
        with pytest.raises(ValueError):
            sel.draw_sample(uniform_20k, bad, 1)


# ---------------------------------------------------------------------------
# estimator
# ---------------------------------------------------------------------------


def test_estimate_scaling_formula():
    sample = _ps(*[(0.5, 0.5)] * 3, *[(0.9, 0.9)] * 7)
    pi = sel.estimate_selectivity(sample, 10, 1000, BBox(0.4, 0.4, 0.6, 0.6))
    assert pi == 3 * (1000 / 10)


def test_estimate_full_sample_is_exact(uniform_20k):
    box = BBox(0.2, 0.2, 0.5, 0.9)
    sample = sel.draw_sample(uniform_20k, 1.0, 3)
    pi = sel.estimate_selectivity(sample, uniform_20k.n, uniform_20k.n, box)
    assert pi == sel.ground_truth(uniform_20k, box)


def test_estimator_unbiased_monte_carlo(uniform_20k):
    """Mean estimate over 500 seeded draws within 3 standard errors of the
    exact count."""
    box = BBox(0.25, 0.25, 0.55, 0.55)
    Pi = sel.ground_truth(uniform_20k, box)
    from aqpcal import kernels

    seeds = np.array([rng.derive(77, i) for i in range(500)], dtype=np.uint64)
    boxes = np.tile([box.min_x, box.min_y, box.max_x, box.max_y], (500, 1))
    s = sel.sample_size(0.05, uniform_20k.n)
    counts = kernels.sample_counts(uniform_20k.xs, uniform_20k.ys, seeds, s, boxes)
    pis = counts * (uniform_20k.n / s)
    se = pis.std(ddof=1) / np.sqrt(len(pis))
    assert abs(pis.mean() - Pi) < 3 * se


# ---------------------------------------------------------------------------
# accuracy metric
# ---------------------------------------------------------------------------


def test_accuracy_values():
    assert sel.accuracy(42.0, 42) == 1.0
    assert sel.accuracy(150.0, 100) == 0.5
    assert sel.accuracy(250.0, 100) == 0.0
    assert sel.accuracy(0.0, 100) == 0.0


def test_accuracy_zero_ground_truth_errors():
    with pytest.raises(ValueError, match="empty ground truth"):
        sel.accuracy(5.0, 0)


@given(
    st.integers(min_value=1, max_value=10**9),
    st.floats(min_value=0, max_value=1e12, allow_nan=False),
)
def test_accuracy_in_unit_interval(Pi, pi):
    a = sel.accuracy(pi, Pi)
    assert 0.0 <= a <= 1.0
    assert sel.accuracy(float(Pi), Pi) == 1.0


@given(
    st.integers(min_value=1, max_value=10**6),
    st.floats(min_value=0, max_value=1e7, allow_nan=False),
    st.integers(min_value=1, max_value=1000),
)
def test_accuracy_scale_invariance(Pi, pi, c):
    a = sel.accuracy(pi, Pi)
    b = sel.accuracy(c * pi, c * Pi)
    assert b == pytest.approx(a, rel=1e-12, abs=1e-12)


# ---------------------------------------------------------------------------
# workloads
# ---------------------------------------------------------------------------


def test_workload_q1_side_equals_mbr():
    box = BBox(0.0, 0.0, 1.0, 1.0)
    queries = sel.random_query_workload(box, 1.0, 5, 1)
    for q in queries:
        assert q.box.width == pytest.approx(1.0, abs=1e-12)


def test_workload_side_from_q():
    box = BBox(0.0, 0.0, 1.0, 1.0)
    for q in sel.random_query_workload(box, 0.01, 20, 1):
        assert abs(q.box.width - 0.1) < 1e-12
        assert abs(q.box.height - 0.1) < 1e-12


def test_workload_centers_inside_mbr():
    box = BBox(0.2, 0.1, 0.9, 0.8)
    queries = sel.random_query_workload(box, 0.05, 1000, 9)
    for q in queries:
        cx = (q.box.min_x + q.box.max_x) / 2
        cy = (q.box.min_y + q.box.max_y) / 2
        assert box.min_x <= cx <= box.max_x
        assert box.min_y <= cy <= box.max_y


def test_workload_determinism_and_validation():
    box = BBox(0.0, 0.0, 1.0, 1.0)
    a = sel.random_query_workload(box, 0.05, 10, 3)
    b = sel.random_query_workload(box, 0.05, 10, 3)
    assert a == b
    with pytest.raises(ValueError):
        sel.random_query_workload(box, 0.0, 10, 3)
    with pytest.raises(ValueError):
        sel.random_query_workload(box, 1.1, 10, 3)


def test_queryspec_validation():
    with pytest.raises(ValueError, match="square"):
        sel.QuerySpec(BBox(0.0, 0.0, 0.5, 0.6), 0.25)
    with pytest.raises(ValueError):
        sel.QuerySpec(BBox(0.0, 0.0, 0.5, 0.5), 0.0)


# ---------------------------------------------------------------------------
# mean accuracy measurement
# ---------------------------------------------------------------------------


def test_mean_accuracy_sigma_one_exact(uniform_20k):
    assert sel.measure_mean_accuracy(uniform_20k, 1.0, 0.05, 10, 2, 7) == 1.0


def test_mean_accuracy_deterministic(uniform_20k):
    a = sel.measure_mean_accuracy(uniform_20k, 0.02, 0.05, 20, 3, 7)
    assert a == sel.measure_mean_accuracy(uniform_20k, 0.02, 0.05, 20, 3, 7)


def test_mean_accuracy_regression_value(uniform_100k):
    """Frozen regression fixture, computed by this implementation."""
    a = sel.measure_mean_accuracy(uniform_100k, 0.02, 0.05, 50, 5, 7)
    assert 0.8 < a < 1.0
    b = sel.measure_mean_accuracy(uniform_100k, 0.001, 0.05, 50, 5, 7)
    assert a > b


def test_mean_accuracy_trend_spearman(uniform_20k):
    from scipy.stats import spearmanr

    sigmas = [0.001, 0.01, 0.05, 0.1, 0.2]
    accs = [sel.measure_mean_accuracy(uniform_20k, s, 0.05, 30, 3, 11) for s in sigmas]
    rho = spearmanr(sigmas, accs).statistic
    assert rho >= 0.9


def test_mean_accuracy_empty_workload_error():
    # two far-apart points and tiny queries: every query misses
    data = _ps((0.0, 0.0), (1.0, 1.0))
    with pytest.raises(sel.EmptyWorkloadError, match="no nonempty queries"):
        sel.measure_mean_accuracy(data, 0.5, 0.0001, 20, 2, 3)


def test_pair_accuracies_match_scalar_oracle(uniform_20k):
    """Vectorized per-pair accuracies equal the scalar op composed by hand."""
    m, r, sigma, q, seed = 5, 2, 0.1, 0.05, 13
    accs = sel.pair_accuracies(uniform_20k, sigma, q, m, r, seed)
    queries = sel.random_query_workload(mbr(uniform_20k), q, m, rng.derive(seed, 21))
    s = sel.sample_size(sigma, uniform_20k.n)
    from aqpcal import kernels

    for i, qr in enumerate(queries):
        Pi = sel.ground_truth(uniform_20k, qr)
        for j in range(r):
            pair_seed = rng.derive(rng.derive(seed, 22, i), j)
            boxes = np.array([[qr.box.min_x, qr.box.min_y, qr.box.max_x, qr.box.max_y]])
            k = kernels.sample_counts(
                uniform_20k.xs, uniform_20k.ys, np.array([pair_seed], dtype=np.uint64), s, boxes
            )[0]
            expected = sel.accuracy(k * (uniform_20k.n / s), Pi)
            assert accs[i, j] == expected


def test_run_query_bundle(uniform_20k):
    res = sel.run_query(uniform_20k, BBox(0.2, 0.2, 0.6, 0.6), 0.1, 5)
    assert res.ground_truth == sel.linear_count(uniform_20k, BBox(0.2, 0.2, 0.6, 0.6))
    assert 0.0 <= res.accuracy <= 1.0
