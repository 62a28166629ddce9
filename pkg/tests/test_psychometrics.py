import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adaptest.data import ResponseDataset, StudentRecord
from adaptest.psychometrics import (
    IQ_SCALE,
    Z_SCALE,
    ReliabilityTier,
    ScoreStats,
    StandardScale,
    UndefinedStatError,
    cronbach_alpha,
    inverse_normal_cdf,
    mccall_normalize,
    normal_cdf,
    normality_summary,
    pearson_correlation,
    reliability_tier,
    standard_score_table,
    standardize,
    validity_report,
)


def dataset_from_matrix(matrix, mode="numeric"):
    matrix = np.asarray(matrix)
    return ResponseDataset(
        item_ids=tuple(f"q{i}" for i in range(matrix.shape[1])),
        students=tuple(
            StudentRecord(id=f"s{r}", grades=tuple(int(g) for g in row))
            for r, row in enumerate(matrix)
        ),
        mode=mode,
    )


def bisect_inverse_cdf(p, tol=1e-13):
    """Independent oracle: bisection on the exact normal CDF."""
    lo, hi = -10.0, 10.0
    while hi - lo > tol:
        mid = (lo + hi) / 2.0
        if normal_cdf(mid) < p:
            lo = mid
        else:
            hi = mid
    return (lo + hi) / 2.0


class TestCronbachAlpha:
    def test_duplicated_columns_give_one(self):
        col = [0, 1, 2, 3, 4, 2]
        alpha = cronbach_alpha(dataset_from_matrix(np.column_stack([col, col])))
        assert alpha == pytest.approx(1.0, abs=1e-12)

    def test_uncorrelated_items_give_zero(self):
        # orthogonal design: total variance equals the sum of item variances
        a = [0, 0, 1, 1]
        b = [0, 1, 0, 1]
        alpha = cronbach_alpha(dataset_from_matrix(np.column_stack([a, b])))
        assert alpha == pytest.approx(0.0, abs=1e-12)

    def test_zero_total_variance_rejected(self):
        with pytest.raises(UndefinedStatError, match="variance"):
            cronbach_alpha(dataset_from_matrix([[1, 1], [1, 1]]))

    def test_all_missing_column_rejected(self):
        ds = ResponseDataset(
            item_ids=("q0", "q1"),
            students=(
                StudentRecord(id="s0", grades=(1, None)),
                StudentRecord(id="s1", grades=(0, None)),
            ),
        )
        with pytest.raises(UndefinedStatError, match="entirely missing"):
            cronbach_alpha(ds)

    def test_invariant_under_common_positive_rescale(self):
        rng = np.random.default_rng(7)
        base = rng.integers(0, 5, size=(40, 6))
        a1 = cronbach_alpha(dataset_from_matrix(base))
        a2 = cronbach_alpha(dataset_from_matrix(base * 3))
        assert a1 == pytest.approx(a2, abs=1e-12)


class TestReliabilityTier:
    @pytest.mark.parametrize(
        "alpha,tier",
        [
            (0.49, ReliabilityTier.UNUSABLE),
            (0.5, ReliabilityTier.ACCEPTABLE),
            (0.7, ReliabilityTier.ACCEPTABLE),
            (0.9, ReliabilityTier.QUALITY),
            (0.914, ReliabilityTier.QUALITY),
        ],
    )
    def test_thresholds(self, alpha, tier):
        assert reliability_tier(alpha) is tier

    def test_rejects_impossible_alpha(self):
        with pytest.raises(UndefinedStatError):
            reliability_tier(1.2)


class TestStandardize:
    def test_centered_input_maps_to_target_mean(self):
        stats = ScoreStats(mean=40.0, variance=100.0, n=50)
        assert standardize(40.0, stats, IQ_SCALE) == pytest.approx(100.0)

    def test_z_to_iq_reference_pairs(self):
        z_stats = ScoreStats(mean=0.0, variance=1.0, n=10)
        assert standardize(2.06, z_stats, IQ_SCALE) == pytest.approx(131, abs=0.5)
        assert standardize(-1.00, z_stats, IQ_SCALE) == pytest.approx(85, abs=0.5)

    def test_round_trip_identity(self):
        stats = ScoreStats(mean=44.5, variance=333.2, n=281)
        x = 57.0
        iq = standardize(x, stats, IQ_SCALE)
        back = standardize(
            iq, ScoreStats(mean=100.0, variance=225.0, n=281),
            StandardScale(stats.mean, stats.sd, "raw"),
        )
        assert back == pytest.approx(x, abs=1e-12)

    def test_zero_variance_rejected(self):
        with pytest.raises(UndefinedStatError):
            standardize(1.0, ScoreStats(mean=1.0, variance=0.0, n=5), Z_SCALE)


class TestInverseNormalCdf:
    def test_against_bisection_oracle(self):
        for p in [1e-9, 1e-4, 0.01, 1 / 6, 0.3, 0.5, 0.75, 5 / 6, 0.99, 1 - 1e-6]:
            assert inverse_normal_cdf(p) == pytest.approx(bisect_inverse_cdf(p), abs=1e-9)

    def test_domain(self):
        for p in (0.0, 1.0, -0.1, 1.1):
            with pytest.raises(UndefinedStatError):
                inverse_normal_cdf(p)


class TestMcCall:
    def test_three_distinct_scores(self):
        # mid-rank percentiles 1/6, 3/6, 5/6; z from the bisection oracle
        z = mccall_normalize([10, 20, 30])
        expected = [bisect_inverse_cdf(1 / 6), 0.0, bisect_inverse_cdf(5 / 6)]
        assert z == pytest.approx(expected, abs=1e-9)
        assert z == pytest.approx([-0.9674, 0.0, 0.9674], abs=1e-4)

    def test_median_of_odd_input_is_zero(self):
        z = mccall_normalize([5, 1, 9, 3, 7])
        assert sorted(z)[2] == pytest.approx(0.0, abs=1e-12)

    def test_ties_share_output(self):
        z = mccall_normalize([4, 7, 7, 10])
        assert z[1] == pytest.approx(z[2], abs=1e-15)

    def test_preserves_input_order_and_monotone(self):
        raw = [30, 10, 20, 20, 50]
        z = mccall_normalize(raw)
        for i, a in enumerate(raw):
            for j, b in enumerate(raw):
                if a < b:
                    assert z[i] < z[j] + 1e-12

    def test_large_sample_standardized(self):
        rng = np.random.default_rng(11)
        raw = rng.exponential(scale=17.0, size=10000)  # heavily skewed input
        z = np.asarray(mccall_normalize(raw))
        assert abs(z.mean()) < 0.02
        assert abs(z.var() - 1.0) < 0.05

    def test_needs_three_scores(self):
        with pytest.raises(UndefinedStatError):
            mccall_normalize([1, 2])


class TestPearson:
    def test_perfect_correlation(self):
        x = [1.0, 2.0, 3.0, 4.0]
        r, p = pearson_correlation(x, x)
        assert r == pytest.approx(1.0)
        assert p == 0.0

    def test_perfect_anticorrelation(self):
        x = [1.0, 2.0, 3.0, 4.0]
        r, _ = pearson_correlation(x, [-v for v in x])
        assert r == pytest.approx(-1.0)

    def test_constant_input_rejected(self):
        with pytest.raises(UndefinedStatError):
            pearson_correlation([1, 1, 1], [1, 2, 3])

    def test_independent_uniforms_monte_carlo(self):
        # |r| should hover near 0 and p should not be systematically tiny
        rng = np.random.default_rng(42)
        abs_r, p_values = [], []
        for _ in range(1000):
            x = rng.uniform(size=20)
            y = rng.uniform(size=20)
            r, p = pearson_correlation(x, y)
            abs_r.append(abs(r))
            p_values.append(p)
        assert float(np.mean(abs_r)) < 0.25
        # under the null, p is uniform-ish: the median sits near 0.5
        assert 0.35 < float(np.median(p_values)) < 0.65

    @given(
        scale=st.floats(min_value=0.1, max_value=50),
        shift=st.floats(min_value=-100, max_value=100),
    )
    @settings(max_examples=30, deadline=None)
    def test_affine_invariance_and_sign_flip(self, scale, shift):
        x = [1.0, 4.0, 2.0, 8.0, 5.0]
        y = [2.0, 3.0, 9.0, 1.0, 4.0]
        r0, _ = pearson_correlation(x, y)
        r1, _ = pearson_correlation([scale * v + shift for v in x], y)
        r2, _ = pearson_correlation(x, [-v for v in y])
        assert -1.0 <= r0 <= 1.0
        assert r1 == pytest.approx(r0, abs=1e-9)
        assert r2 == pytest.approx(-r0, abs=1e-12)


class TestValidityReport:
    def make_dataset(self):
        rng = np.random.default_rng(3)
        students = []
        for s in range(30):
            math_grade = int(rng.integers(1, 6))
            # score decreases in the school grade: exact affine relation
            score = 20 - 3 * math_grade
            students.append(
                StudentRecord(
                    id=f"s{s}",
                    grades=(score,),
                    info={
                        "math": str(math_grade),
                        "gender": "f" if s % 2 else "m",
                        "blank": "unknown",
                    },
                )
            )
        return ResponseDataset(
            item_ids=("q0",),
            students=tuple(students),
        )

    def test_affine_factor_gives_exact_correlation(self):
        ds = self.make_dataset()
        with pytest.warns(UserWarning, match="blank"):
            report = validity_report(ds, ["math", "gender", "blank"])
        by_factor = {row.factor: row for row in report.tables["score"]}
        assert by_factor["math"].r == pytest.approx(-1.0)
        assert report.skipped == ("blank",)

    def test_subset_equal_to_all_items_matches_total(self):
        ds = self.make_dataset()
        report = validity_report(ds, ["math"], subsets={"whole": ["q0"]})
        total = report.tables["score"][0]
        sub = report.tables["whole"][0]
        assert sub.r == pytest.approx(total.r)
        assert sub.p_value == pytest.approx(total.p_value)


def test_normality_summary_detects_gaussian_and_skew():
    rng = np.random.default_rng(5)
    gaussian = normality_summary(rng.standard_normal(5000))
    skewed = normality_summary(rng.exponential(size=5000))
    assert gaussian.looks_gaussian
    assert not skewed.looks_gaussian
    assert skewed.skewness > 1.0


def test_standard_score_table_shape():
    rng = np.random.default_rng(9)
    raw = rng.integers(0, 120, size=200)
    rows = standard_score_table(raw)
    assert all(set(r) == {"raw", "z", "IQ"} for r in rows)
    # IQ = 100 + 15 z throughout
    for row in rows:
        assert row["IQ"] == pytest.approx(100 + 15 * row["z"], abs=1e-9)
    # monotone in raw
    zs = [r["z"] for r in rows]
    assert zs == sorted(zs)
