"""Classical test analysis: reliability, standard scores, normalization, validity.

All functions are pure and operate on immutable inputs.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from enum import Enum
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy.special import stdtr

from .data import UNKNOWN, ResponseDataset, raw_score


class UndefinedStatError(ValueError):
    """A statistic is undefined for the given input (e.g. zero variance)."""


@dataclass(frozen=True)
class ScoreStats:
    """Mean and population variance of a score sample."""

    mean: float
    variance: float
    n: int

    def __post_init__(self):
        if self.variance < 0:
            raise UndefinedStatError("variance must be >= 0")
        if self.n < 1:
            raise UndefinedStatError("n must be >= 1")

    @property
    def sd(self) -> float:
        return math.sqrt(self.variance)

    @classmethod
    def from_scores(cls, scores: Sequence[float]) -> "ScoreStats":
        arr = np.asarray(scores, dtype=float)
        if arr.size < 1:
            raise UndefinedStatError("need at least one score")
        return cls(mean=float(arr.mean()), variance=float(arr.var()), n=int(arr.size))


@dataclass(frozen=True)
class StandardScale:
    """Target mean/sd of a linear standard-score scale."""

    target_mean: float
    target_sd: float
    name: str = "custom"

    def __post_init__(self):
        if self.target_sd <= 0:
            raise UndefinedStatError("target_sd must be > 0")


Z_SCALE = StandardScale(0.0, 1.0, "z")
IQ_SCALE = StandardScale(100.0, 15.0, "IQ")
BUILTIN_SCALES = (Z_SCALE, IQ_SCALE)


class ReliabilityTier(str, Enum):
    UNUSABLE = "unusable"
    ACCEPTABLE = "acceptable"
    QUALITY = "quality"


def cronbach_alpha(dataset: ResponseDataset) -> float:
    """Internal-consistency reliability.

    alpha = n/(n-1) * (1 - sum(var_i) / var_total)

    with per-item and total-score population variances; missing grades score 0,
    consistent with raw_score.
    """
    if dataset.n_items < 2:
        raise UndefinedStatError("cronbach_alpha needs >= 2 items")
    if dataset.n_students < 2:
        raise UndefinedStatError("cronbach_alpha needs >= 2 students")
    for col, item_id in enumerate(dataset.item_ids):
        if all(rec.grades[col] is None for rec in dataset.students):
            raise UndefinedStatError(f"item column {item_id!r} is entirely missing")
    matrix = np.asarray(dataset.grade_matrix(missing=0), dtype=float)
    item_vars = matrix.var(axis=0)
    total_var = matrix.sum(axis=1).var()
    if total_var <= 0:
        raise UndefinedStatError("total-score variance is zero; alpha undefined")
    n = dataset.n_items
    return float(n / (n - 1) * (1.0 - item_vars.sum() / total_var))


def reliability_tier(alpha: float) -> ReliabilityTier:
    """Quality tier: below 0.5 the test is of no use, 0.9 and above is quality."""
    if alpha > 1.0:
        raise UndefinedStatError(f"alpha must be <= 1, got {alpha}")
    if alpha < 0.5:
        return ReliabilityTier.UNUSABLE
    if alpha < 0.9:
        return ReliabilityTier.ACCEPTABLE
    return ReliabilityTier.QUALITY


def standardize(x: float, stats: ScoreStats, scale: StandardScale) -> float:
    """Linear transform x' = mu' + sd' * (x - mu) / sd. Order-preserving."""
    if stats.variance <= 0:
        raise UndefinedStatError("cannot standardize with zero variance")
    return scale.target_mean + scale.target_sd * (x - stats.mean) / stats.sd


# Coefficients of Acklam's rational approximation to the inverse normal CDF.
_ICDF_A = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
           1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
_ICDF_B = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
           6.680131188771972e+01, -1.328068155288572e+01)
_ICDF_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
           -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
_ICDF_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
           3.754408661907416e+00)


def normal_cdf(x: float) -> float:
    # erfc form keeps full precision in the lower tail
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def _normal_sf(x: float) -> float:
    return 0.5 * math.erfc(x / math.sqrt(2.0))


def inverse_normal_cdf(p: float) -> float:
    """Quantile of the standard normal, |error| well below 1e-9.

    Rational approximation refined by one Halley step on the CDF.
    """
    if not 0.0 < p < 1.0:
        raise UndefinedStatError(f"inverse_normal_cdf needs p in (0, 1), got {p}")
    p_low = 0.02425
    if p < p_low:
        q = math.sqrt(-2.0 * math.log(p))
        x = ((((((_ICDF_C[0] * q + _ICDF_C[1]) * q + _ICDF_C[2]) * q + _ICDF_C[3]) * q
               + _ICDF_C[4]) * q + _ICDF_C[5])
             / ((((_ICDF_D[0] * q + _ICDF_D[1]) * q + _ICDF_D[2]) * q + _ICDF_D[3]) * q + 1.0))
    elif p <= 1.0 - p_low:
        q = p - 0.5
        r = q * q
        x = ((((((_ICDF_A[0] * r + _ICDF_A[1]) * r + _ICDF_A[2]) * r + _ICDF_A[3]) * r
               + _ICDF_A[4]) * r + _ICDF_A[5]) * q
             / (((((_ICDF_B[0] * r + _ICDF_B[1]) * r + _ICDF_B[2]) * r + _ICDF_B[3]) * r
                 + _ICDF_B[4]) * r + 1.0))
    else:
        q = math.sqrt(-2.0 * math.log(1.0 - p))
        x = -((((((_ICDF_C[0] * q + _ICDF_C[1]) * q + _ICDF_C[2]) * q + _ICDF_C[3]) * q
                + _ICDF_C[4]) * q + _ICDF_C[5])
              / ((((_ICDF_D[0] * q + _ICDF_D[1]) * q + _ICDF_D[2]) * q + _ICDF_D[3]) * q + 1.0))
    # One Halley refinement against the exact CDF; the error is formed on the
    # nearer tail so the e^{x^2/2} amplification never meets cancellation noise.
    if p < 0.5:
        err = normal_cdf(x) - p
    else:
        err = (1.0 - p) - _normal_sf(x)
    u = err * math.sqrt(2.0 * math.pi) * math.exp(x * x / 2.0)
    return x - u / (1.0 + x * u / 2.0)


def _midrank_percentiles(scores: Sequence[float]) -> list[float]:
    arr = np.asarray(scores, dtype=float)
    n = arr.size
    order = np.argsort(arr, kind="stable")
    ranks = np.empty(n, dtype=float)
    i = 0
    while i < n:
        j = i
        while j + 1 < n and arr[order[j + 1]] == arr[order[i]]:
            j += 1
        # 1-based ranks i+1 .. j+1 share their mean
        mean_rank = (i + j) / 2.0 + 1.0
        for k in range(i, j + 1):
            ranks[order[k]] = mean_rank
        i = j + 1
    return [(float(r) - 0.5) / n for r in ranks]


def mccall_normalize(raw_scores: Sequence[float]) -> list[float]:
    """Area (rank-based) transformation of raw scores onto the Gaussian scale.

    Each score receives z = Phi^-1((rank - 0.5) / n) with tied scores sharing
    the mean of their ranks. Output order matches input order and is weakly
    monotone in the raw score.
    """
    if len(raw_scores) < 3:
        raise UndefinedStatError("mccall_normalize needs >= 3 scores")
    return [inverse_normal_cdf(p) for p in _midrank_percentiles(raw_scores)]


def pearson_correlation(x: Sequence[float], y: Sequence[float]) -> tuple[float, float]:
    """Sample Pearson r with the two-sided p-value of the r = 0 null.

    t = r * sqrt((n-2) / (1-r^2)) against Student-t with n-2 df.
    """
    xa = np.asarray(x, dtype=float)
    ya = np.asarray(y, dtype=float)
    if xa.size != ya.size:
        raise UndefinedStatError("pearson_correlation needs equal-length inputs")
    n = xa.size
    if n < 3:
        raise UndefinedStatError("pearson_correlation needs n >= 3")
    if np.ptp(xa) == 0 or np.ptp(ya) == 0:
        raise UndefinedStatError("correlation undefined for constant input")
    xc = xa - xa.mean()
    yc = ya - ya.mean()
    r = float(xc @ yc / math.sqrt((xc @ xc) * (yc @ yc)))
    r = max(-1.0, min(1.0, r))
    if abs(r) == 1.0:
        return r, 0.0
    df = n - 2
    t = abs(r) * math.sqrt(df / (1.0 - r * r))
    p = 2.0 * float(stdtr(df, -t))
    return r, p


_GENDER_CODES = {"f": 1.0, "female": 1.0, "1": 1.0, "m": -1.0, "male": -1.0, "-1": -1.0}
_FLAG_CODES = {"1": 1.0, "yes": 1.0, "true": 1.0, "0": 0.0, "no": 0.0, "false": 0.0}


def encode_factor(name: str, values: Sequence[str]) -> list[Optional[float]]:
    """Numeric encoding of an auxiliary factor; unknown entries become None.

    Gender: females 1, males -1. Flags (e.g. name_given): 1/0. Anything else
    must parse as a number (school grades).
    """
    encoded: list[Optional[float]] = []
    lname = name.lower()
    for v in values:
        token = v.strip().lower()
        if token == UNKNOWN or token == "":
            encoded.append(None)
        elif lname == "gender":
            if token not in _GENDER_CODES:
                raise UndefinedStatError(f"cannot encode gender value {v!r}")
            encoded.append(_GENDER_CODES[token])
        elif token in _FLAG_CODES and not _is_number(token):
            encoded.append(_FLAG_CODES[token])
        else:
            if not _is_number(token):
                raise UndefinedStatError(f"cannot encode factor {name!r} value {v!r}")
            encoded.append(float(token))
    return encoded


def _is_number(token: str) -> bool:
    try:
        float(token)
        return True
    except ValueError:
        return False


@dataclass(frozen=True)
class CorrelationRow:
    factor: str
    r: float
    p_value: float
    n: int


@dataclass(frozen=True)
class ValidityReport:
    """Correlation tables of the total score (and item subsets) with factors."""

    tables: Mapping[str, tuple[CorrelationRow, ...]]
    skipped: tuple[str, ...] = ()

    def to_payload(self) -> dict:
        return {
            "tables": {
                score_name: [
                    {"factor": row.factor, "r": row.r, "p_value": row.p_value, "n": row.n}
                    for row in rows
                ]
                for score_name, rows in self.tables.items()
            },
            "skipped": list(self.skipped),
        }


def validity_report(
    dataset: ResponseDataset,
    factors: Sequence[str],
    subsets: Optional[Mapping[str, Sequence[str]]] = None,
) -> ValidityReport:
    """Correlate the total score (and optional item-subset scores) with factors.

    Unknown factor values are dropped pairwise; a factor with no usable
    values is skipped with a warning.
    """
    scores: dict[str, list[float]] = {"score": [float(s) for s in dataset.raw_scores()]}
    for subset_name, ids in (subsets or {}).items():
        cols = [dataset.item_ids.index(i) for i in ids]
        scores[subset_name] = [
            float(sum(rec.grades[c] or 0 for c in cols)) for rec in dataset.students
        ]

    tables: dict[str, tuple[CorrelationRow, ...]] = {}
    skipped: list[str] = []
    encodings: dict[str, list[Optional[float]]] = {}
    for factor in factors:
        encoded = encode_factor(factor, dataset.info_values(factor))
        if all(v is None for v in encoded):
            skipped.append(factor)
            warnings.warn(f"factor {factor!r} has no known values; skipped")
            continue
        encodings[factor] = encoded

    for score_name, score_values in scores.items():
        rows = []
        for factor, encoded in encodings.items():
            pairs = [(s, v) for s, v in zip(score_values, encoded) if v is not None]
            xs = [p[0] for p in pairs]
            ys = [p[1] for p in pairs]
            r, p = pearson_correlation(xs, ys)
            rows.append(CorrelationRow(factor=factor, r=r, p_value=p, n=len(pairs)))
        tables[score_name] = tuple(rows)
    return ValidityReport(tables=tables, skipped=tuple(skipped))


@dataclass(frozen=True)
class NormalitySummary:
    """Moment-based normality sanity check (substitute for a formal test)."""

    n: int
    skewness: float
    excess_kurtosis: float

    @property
    def looks_gaussian(self) -> bool:
        # rough screening thresholds, not a hypothesis test
        return abs(self.skewness) < 0.5 and abs(self.excess_kurtosis) < 1.0


def normality_summary(scores: Sequence[float]) -> NormalitySummary:
    arr = np.asarray(scores, dtype=float)
    if arr.size < 3:
        raise UndefinedStatError("normality_summary needs >= 3 scores")
    sd = arr.std()
    if sd == 0:
        raise UndefinedStatError("normality undefined for constant scores")
    z = (arr - arr.mean()) / sd
    return NormalitySummary(
        n=int(arr.size),
        skewness=float(np.mean(z**3)),
        excess_kurtosis=float(np.mean(z**4) - 3.0),
    )


def standard_score_table(
    raw_scores: Sequence[float], scales: Sequence[StandardScale] = BUILTIN_SCALES
) -> list[dict]:
    """Per unique raw score: its McCall z and each requested scale value."""
    z_values = mccall_normalize(raw_scores)
    by_raw: dict[float, float] = {}
    for raw, z in zip(raw_scores, z_values):
        by_raw[float(raw)] = z  # ties share the same z by construction
    rows = []
    for raw in sorted(by_raw):
        z = by_raw[raw]
        row = {"raw": raw, "z": z}
        for scale in scales:
            if scale.name != "z":
                row[scale.name] = scale.target_mean + scale.target_sd * z
        rows.append(row)
    return rows
