"""3PL item response theory: response functions, information, ability
estimation, marginal-maximum-likelihood calibration and max-information
selection.

The item response function is

    p_i(theta) = c_i + (1 - c_i) / (1 + exp(-a_i (theta - b_i)))

with discrimination a, difficulty b and guessing c; q_i = 1 - p_i.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.special import logsumexp

from .data import ResponseDataset

_TINY = 1e-300
_PQ_EPS = 1e-15


class NoEstimateError(ValueError):
    """MLE requested without any evidence to estimate from."""


@dataclass(frozen=True)
class IrtItemParams:
    """3PL parameters. Calibration produces a > 0; hand-authored demo items
    may use any finite a (flat and reversed curves included)."""

    a: float
    b: float
    c: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.a) and math.isfinite(self.b)):
            raise ValueError("a and b must be finite")
        if not 0.0 <= self.c < 1.0:
            raise ValueError(f"c must be in [0, 1), got {self.c}")


@dataclass(frozen=True)
class ThetaEstimate:
    theta: float
    se: float
    method: str

    def __post_init__(self):
        if self.se < 0:
            raise ValueError("se must be >= 0")


@dataclass(frozen=True, eq=False)
class QuadratureGrid:
    """Prior-weighted quadrature nodes for empirical-Bayes ability estimation."""

    nodes: tuple[float, ...]
    weights: tuple[float, ...]

    def __post_init__(self):
        nodes = tuple(float(x) for x in self.nodes)
        weights = tuple(float(w) for w in self.weights)
        if len(nodes) != len(weights) or not nodes:
            raise ValueError("nodes and weights must be nonempty and aligned")
        if any(n2 <= n1 for n1, n2 in zip(nodes, nodes[1:])):
            raise ValueError("nodes must be strictly increasing")
        if any(w <= 0 for w in weights):
            raise ValueError("weights must be positive")
        total = sum(weights)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", tuple(w / total for w in weights))

    @classmethod
    def standard_normal(cls, n: int = 61, span: float = 4.5) -> "QuadratureGrid":
        """Equispaced nodes on [-span, span] weighted by the N(0,1) density."""
        nodes = np.linspace(-span, span, n)
        weights = np.exp(-0.5 * nodes**2)
        return cls(nodes=tuple(nodes), weights=tuple(weights))

    @property
    def node_array(self) -> np.ndarray:
        return np.asarray(self.nodes)

    @property
    def weight_array(self) -> np.ndarray:
        return np.asarray(self.weights)

    @property
    def prior_mean(self) -> float:
        return float(self.node_array @ self.weight_array)

    @property
    def prior_sd(self) -> float:
        mu = self.prior_mean
        return float(math.sqrt(self.weight_array @ (self.node_array - mu) ** 2))


def _sigmoid(t):
    t = np.asarray(t, dtype=float)
    out = np.empty_like(t)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    et = np.exp(t[~pos])
    out[~pos] = et / (1.0 + et)
    return out


def irf(params: IrtItemParams, theta):
    """3PL probability of a correct answer at ability theta."""
    s = _sigmoid(params.a * (np.asarray(theta, dtype=float) - params.b))
    out = params.c + (1.0 - params.c) * s
    return float(out) if out.ndim == 0 else out


def irf_derivative(params: IrtItemParams, theta):
    """Analytic d p / d theta = a (1-c) s (1-s) with s the 2PL sigmoid."""
    s = _sigmoid(params.a * (np.asarray(theta, dtype=float) - params.b))
    out = params.a * (1.0 - params.c) * s * (1.0 - s)
    return float(out) if out.ndim == 0 else out


def item_information(params: IrtItemParams, theta):
    """Fisher information I(theta) = p'(theta)^2 / (p q).

    Returns 0 where p is degenerate (0 or 1 within floating tolerance).
    """
    theta_arr = np.asarray(theta, dtype=float)
    p = np.asarray(irf(params, theta_arr))
    q = 1.0 - p
    pq = p * q
    dp = np.asarray(irf_derivative(params, theta_arr))
    with np.errstate(divide="ignore", invalid="ignore"):
        info = np.where(pq > _PQ_EPS, dp * dp / np.where(pq > _PQ_EPS, pq, 1.0), 0.0)
    return float(info) if info.ndim == 0 else info


def standard_error(info: float) -> float:
    """SE = 1 / sqrt(information); non-positive information gives inf."""
    if info <= 0:
        return math.inf
    return 1.0 / math.sqrt(info)


def _log_likelihood_on_grid(
    items: Sequence[IrtItemParams], answers: Sequence[int], nodes: np.ndarray
) -> np.ndarray:
    """log L(x | theta_k) for each grid node, summed over answered items."""
    loglik = np.zeros_like(nodes)
    with np.errstate(divide="ignore"):
        for params, x in zip(items, answers):
            p = np.clip(irf(params, nodes), _TINY, 1.0 - 1e-16)
            loglik += np.log(p) if x else np.log1p(-p)
    return loglik


def _golden_section_max(f, lo: float, hi: float, tol: float = 1e-6) -> float:
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    x1 = b - invphi * (b - a)
    x2 = a + invphi * (b - a)
    f1, f2 = f(x1), f(x2)
    while b - a > tol:
        if f1 < f2:
            a, x1, f1 = x1, x2, f2
            x2 = a + invphi * (b - a)
            f2 = f(x2)
        else:
            b, x2, f2 = x2, x1, f1
            x1 = b - invphi * (b - a)
            f1 = f(x1)
    return (a + b) / 2.0


def estimate_theta(
    items: Sequence[IrtItemParams],
    answers: Sequence[int],
    grid: Optional[QuadratureGrid] = None,
    method: str = "eap",
) -> ThetaEstimate:
    """Ability estimate from answered items.

    EAP/MAP use the grid's prior weights; MLE uses the likelihood alone and is
    refined by golden-section around the best grid node. With no evidence, EAP
    and MAP return the prior; MLE raises NoEstimateError.
    """
    if len(items) != len(answers):
        raise ValueError("items and answers must be aligned")
    method = method.lower()
    if method not in ("eap", "map", "mle"):
        raise ValueError(f"unknown estimation method {method!r}")
    grid = grid or QuadratureGrid.standard_normal()
    nodes = grid.node_array
    logw = np.log(grid.weight_array)

    if not items:
        if method == "mle":
            raise NoEstimateError("MLE needs at least one answered item")
        return ThetaEstimate(theta=grid.prior_mean, se=grid.prior_sd, method=method)

    loglik = _log_likelihood_on_grid(items, answers, nodes)

    if method == "eap":
        logpost = loglik + logw
        post = np.exp(logpost - logpost.max())
        post /= post.sum()
        theta = float(post @ nodes)
        var = float(post @ (nodes - theta) ** 2)
        return ThetaEstimate(theta=theta, se=math.sqrt(max(var, 0.0)), method="eap")

    if method == "map":
        logpost = loglik + logw

        def objective(t: float) -> float:
            ll = _log_likelihood_on_grid(items, answers, np.asarray([t]))[0]
            return ll + float(np.interp(t, nodes, logw))

        k = int(np.argmax(logpost))
        lo = nodes[max(k - 1, 0)]
        hi = nodes[min(k + 1, len(nodes) - 1)]
        theta = _golden_section_max(objective, lo, hi)
        post = np.exp(logpost - logpost.max())
        post /= post.sum()
        mean = float(post @ nodes)
        var = float(post @ (nodes - mean) ** 2)
        return ThetaEstimate(theta=theta, se=math.sqrt(max(var, 0.0)), method="map")

    # MLE
    def loglik_at(t: float) -> float:
        return _log_likelihood_on_grid(items, answers, np.asarray([t]))[0]

    k = int(np.argmax(loglik))
    lo = nodes[max(k - 1, 0)]
    hi = nodes[min(k + 1, len(nodes) - 1)]
    theta = _golden_section_max(loglik_at, lo, hi)
    total_info = sum(item_information(p, theta) for p in items)
    return ThetaEstimate(theta=theta, se=standard_error(total_info), method="mle")


def select_max_information(candidates: Sequence[IrtItemParams], theta: float) -> int:
    """Index of the candidate with the highest information at theta;
    ties break to the lowest index."""
    if not candidates:
        raise ValueError("candidate list must be nonempty")
    best_idx = 0
    best_info = item_information(candidates[0], theta)
    for i, params in enumerate(candidates[1:], start=1):
        info = item_information(params, theta)
        if info > best_info:
            best_idx, best_info = i, info
    return best_idx


@dataclass(frozen=True)
class CalibrationConfig:
    model: str = "2pl"  # "2pl" fixes c = 0, "3pl" fits c in [0, c_max]
    c_max: float = 0.35
    a_bounds: tuple[float, float] = (0.2, 4.0)
    b_bounds: tuple[float, float] = (-4.0, 4.0)
    tol: float = 1e-4
    max_iters: int = 100
    min_students: int = 30

    def __post_init__(self):
        if self.model not in ("2pl", "3pl"):
            raise ValueError(f"unknown calibration model {self.model!r}")


@dataclass
class CalibrationResult:
    params: dict[str, IrtItemParams]
    loglik_trace: list[float]
    excluded: list[tuple[str, str]]
    converged: bool
    warnings: list[str] = field(default_factory=list)


def _expected_item_loglik_and_grad(x, r, n, nodes, model, c_max):
    """Expected complete-data log-likelihood of one item and its gradient.

    x is (a, b[, c]); r/n are expected correct/answered counts per node.
    """
    a, b = x[0], x[1]
    c = x[2] if model == "3pl" else 0.0
    s = _sigmoid(a * (nodes - b))
    p = np.clip(c + (1.0 - c) * s, 1e-12, 1.0 - 1e-12)
    q = 1.0 - p
    value = float(r @ np.log(p) + (n - r) @ np.log(q))
    dldp = r / p - (n - r) / q
    ds = s * (1.0 - s)
    dpda = (1.0 - c) * ds * (nodes - b)
    dpdb = -(1.0 - c) * ds * a
    grad = [float(dldp @ dpda), float(dldp @ dpdb)]
    if model == "3pl":
        grad.append(float(dldp @ (1.0 - s)))
    return value, np.asarray(grad)


def calibrate_mml(
    dataset: ResponseDataset,
    grid: Optional[QuadratureGrid] = None,
    config: Optional[CalibrationConfig] = None,
) -> CalibrationResult:
    """Marginal-maximum-likelihood EM over a boolean response dataset.

    E-step: posterior weights of each examinee over the grid nodes.
    M-step: per-item bounded quasi-Newton maximization of the expected
    log-likelihood. Items with all-correct or all-incorrect observations are
    excluded up front; missing responses contribute no likelihood term.
    """
    if dataset.mode != "boolean":
        raise ValueError("calibration expects a boolean-mode dataset")
    grid = grid or QuadratureGrid.standard_normal()
    config = config or CalibrationConfig()
    warn_list: list[str] = []
    if dataset.n_students < config.min_students:
        msg = f"only {dataset.n_students} students; < {config.min_students} is unreliable"
        warnings.warn(msg)
        warn_list.append(msg)

    mask_all = np.asarray(
        [[g is not None for g in rec.grades] for rec in dataset.students], dtype=float
    )
    x_all = np.asarray(dataset.grade_matrix(missing=0), dtype=float)

    excluded: list[tuple[str, str]] = []
    keep: list[int] = []
    for i, item_id in enumerate(dataset.item_ids):
        observed = mask_all[:, i].sum()
        correct = x_all[:, i].sum()
        if observed == 0:
            excluded.append((item_id, "no observations"))
        elif correct == 0:
            excluded.append((item_id, "all observed responses incorrect"))
        elif correct == observed:
            excluded.append((item_id, "all observed responses correct"))
        else:
            keep.append(i)
    if not keep:
        raise ValueError("no calibratable items (all degenerate)")
    item_ids = [dataset.item_ids[i] for i in keep]
    X = x_all[:, keep]
    M = mask_all[:, keep]

    nodes = grid.node_array
    logw = np.log(grid.weight_array)

    # classic starting values: a = 1, b from the inverse logit of the p-value
    p_bar = X.sum(axis=0) / M.sum(axis=0)
    p_bar = np.clip(p_bar, 0.05, 0.95)
    init_b = np.clip(-np.log(p_bar / (1.0 - p_bar)), *config.b_bounds)
    current = [
        IrtItemParams(a=1.0, b=float(b0), c=0.1 if config.model == "3pl" else 0.0)
        for b0 in init_b
    ]

    bounds = [config.a_bounds, config.b_bounds]
    if config.model == "3pl":
        bounds = bounds + [(0.0, config.c_max)]

    def marginal_and_posterior(params_list):
        P = np.stack([np.clip(irf(p, nodes), 1e-12, 1 - 1e-12) for p in params_list])
        logP, logQ = np.log(P), np.log1p(-P)
        loglik = X @ logP + (M - X) @ logQ  # (students, nodes)
        joint = loglik + logw
        marginal = float(logsumexp(joint, axis=1).sum())
        gamma = np.exp(joint - logsumexp(joint, axis=1, keepdims=True))
        return marginal, gamma

    trace: list[float] = []
    converged = False
    for _ in range(config.max_iters):
        marginal, gamma = marginal_and_posterior(current)
        trace.append(marginal)
        if len(trace) >= 2 and abs(trace[-1] - trace[-2]) < config.tol:
            converged = True
            break
        R = gamma.T @ X  # expected correct counts (nodes, items)
        N = gamma.T @ M  # expected answered counts
        new_params = []
        for j, params in enumerate(current):
            x0 = [params.a, params.b] + ([params.c] if config.model == "3pl" else [])
            r, n = R[:, j], N[:, j]

            def neg(x):
                v, g = _expected_item_loglik_and_grad(x, r, n, nodes, config.model, config.c_max)
                return -v, -g

            res = minimize(neg, x0=np.asarray(x0), jac=True, method="L-BFGS-B", bounds=bounds)
            old_val, _ = _expected_item_loglik_and_grad(
                np.asarray(x0), r, n, nodes, config.model, config.c_max
            )
            if res.success and -res.fun >= old_val:
                c_new = float(res.x[2]) if config.model == "3pl" else 0.0
                new_params.append(IrtItemParams(a=float(res.x[0]), b=float(res.x[1]), c=c_new))
            else:
                new_params.append(params)  # never step downhill
        current = new_params
    else:
        final, _ = marginal_and_posterior(current)
        trace.append(final)

    if not converged:
        msg = f"EM did not converge within {config.max_iters} iterations; best-so-far returned"
        warnings.warn(msg)
        warn_list.append(msg)

    return CalibrationResult(
        params={item_id: p for item_id, p in zip(item_ids, current)},
        loglik_trace=trace,
        excluded=excluded,
        converged=converged,
        warnings=warn_list,
    )


def params_to_payload(params: Mapping[str, IrtItemParams]) -> dict:
    return {
        "items": [
            {"item_id": item_id, "a": p.a, "b": p.b, "c": p.c}
            for item_id, p in params.items()
        ]
    }


def params_from_payload(payload: Mapping) -> dict[str, IrtItemParams]:
    return {
        row["item_id"]: IrtItemParams(a=float(row["a"]), b=float(row["b"]), c=float(row.get("c", 0.0)))
        for row in payload["items"]
    }
