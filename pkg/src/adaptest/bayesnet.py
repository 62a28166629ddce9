"""Discrete Bayesian networks with skill / information / question node roles.

Supports explicit-CPT and noisy-OR parameterizations, exact inference by
variable elimination, EM learning from data with missing cells, entropy and
information-gain queries for adaptive question selection, and conversion of
skill posteriors to an expected test score.

A learned network is immutable and shareable; inference is a pure function
of (net, evidence).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Optional, Sequence

import numpy as np

from .data import UNKNOWN, ResponseDataset

_CPT_ATOL = 1e-9


class StructureError(ValueError):
    """Invalid network structure (cycle, bad roles, missing nodes)."""


class InconsistentEvidenceError(ValueError):
    """Observed configuration has probability zero under the model."""


class Role(str, Enum):
    SKILL = "skill"
    INFORMATION = "information"
    QUESTION = "question"
    AUXILIARY = "auxiliary"


@dataclass(frozen=True)
class Variable:
    """Discrete variable; skill variables must declare ordered (ordinal) states."""

    id: str
    role: Role
    states: tuple[str, ...]
    ordinal: bool = False
    state_values: Optional[tuple[float, ...]] = None

    def __post_init__(self):
        object.__setattr__(self, "role", Role(self.role))
        object.__setattr__(self, "states", tuple(self.states))
        if len(self.states) < 2:
            raise StructureError(f"variable {self.id!r} needs >= 2 states")
        if len(set(self.states)) != len(self.states):
            raise StructureError(f"variable {self.id!r} has duplicate states")
        if self.role is Role.SKILL and not self.ordinal:
            raise StructureError(f"skill variable {self.id!r} must be ordinal")
        if self.state_values is not None:
            values = tuple(float(v) for v in self.state_values)
            if len(values) != len(self.states):
                raise StructureError(f"variable {self.id!r}: state_values length mismatch")
            object.__setattr__(self, "state_values", values)

    @property
    def card(self) -> int:
        return len(self.states)


@dataclass(frozen=True)
class CptNode:
    """Explicit conditional probability table.

    ``table`` has one axis per parent (in parent order) plus a final axis for
    the child; every child-axis slice sums to 1.
    """

    var: str
    parents: tuple[str, ...]
    table: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "parents", tuple(self.parents))
        table = np.asarray(self.table, dtype=float)
        table.setflags(write=False)
        object.__setattr__(self, "table", table)
        if np.any(table < -_CPT_ATOL):
            raise StructureError(f"node {self.var!r}: negative probability")
        sums = table.sum(axis=-1)
        if not np.allclose(sums, 1.0, atol=_CPT_ATOL):
            raise StructureError(f"node {self.var!r}: CPT columns must sum to 1")


@dataclass(frozen=True)
class NoisyOrNode:
    """Leaky noisy-OR over binary parents: the child fires if any present
    cause survives its inhibition, or via the leak.

    P(Y=0 | x) = (1 - leak) * prod_{i: x_i = 1} (1 - link_probs_i)

    Stores n + 1 reals instead of a 2^n table.
    """

    var: str
    parents: tuple[str, ...]
    link_probs: tuple[float, ...]
    leak: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "parents", tuple(self.parents))
        object.__setattr__(self, "link_probs", tuple(float(p) for p in self.link_probs))
        if len(self.link_probs) != len(self.parents):
            raise StructureError(f"node {self.var!r}: one link prob per parent required")
        if any(not 0.0 <= p <= 1.0 for p in self.link_probs):
            raise StructureError(f"node {self.var!r}: link probs must be in [0, 1]")
        if not 0.0 <= self.leak < 1.0:
            raise StructureError(f"node {self.var!r}: leak must be in [0, 1)")


Node = "CptNode | NoisyOrNode"


def expand_noisy_or(node: NoisyOrNode) -> CptNode:
    """Equivalent explicit CPT, marginalizing the auxiliary inhibitor layer."""
    n = len(node.parents)
    table = np.empty((2,) * n + (2,))
    for config in np.ndindex(*((2,) * n)):
        p_off = (1.0 - node.leak) * math.prod(
            1.0 - link for link, x in zip(node.link_probs, config) if x == 1
        )
        table[config] = (p_off, 1.0 - p_off)
    return CptNode(var=node.var, parents=node.parents, table=table)


@dataclass(frozen=True)
class Factor:
    vars: tuple[str, ...]
    table: np.ndarray


class BayesNet:
    """Immutable DAG of discrete variables with one node definition each."""

    def __init__(self, variables: Sequence[Variable], nodes: Sequence):
        self.variables: tuple[Variable, ...] = tuple(variables)
        self._var_by_id = {v.id: v for v in self.variables}
        if len(self._var_by_id) != len(self.variables):
            raise StructureError("duplicate variable ids")
        self._order = {v.id: i for i, v in enumerate(self.variables)}

        self.nodes: dict[str, object] = {}
        for node in nodes:
            if node.var not in self._var_by_id:
                raise StructureError(f"node for undeclared variable {node.var!r}")
            if node.var in self.nodes:
                raise StructureError(f"variable {node.var!r} has two node definitions")
            for parent in node.parents:
                if parent not in self._var_by_id:
                    raise StructureError(f"node {node.var!r}: unknown parent {parent!r}")
            self.nodes[node.var] = node
        missing = [v.id for v in self.variables if v.id not in self.nodes]
        if missing:
            raise StructureError(f"variables without node definitions: {missing}")

        self._validate_nodes()
        self.topo_order = self._toposort()
        self._check_role_convention()
        self._factors = {vid: self._node_factor(vid) for vid in self.nodes}

    # -- construction helpers -------------------------------------------------

    def _validate_nodes(self):
        for vid, node in self.nodes.items():
            var = self._var_by_id[vid]
            if isinstance(node, NoisyOrNode):
                if var.card != 2 or any(self._var_by_id[p].card != 2 for p in node.parents):
                    raise StructureError(f"noisy-OR node {vid!r} needs binary child and parents")
            else:
                expected = tuple(self._var_by_id[p].card for p in node.parents) + (var.card,)
                if node.table.shape != expected:
                    raise StructureError(
                        f"node {vid!r}: table shape {node.table.shape} != {expected}"
                    )

    def _toposort(self) -> tuple[str, ...]:
        indeg = {vid: len(self.nodes[vid].parents) for vid in self.nodes}
        children: dict[str, list[str]] = {vid: [] for vid in self.nodes}
        for vid, node in self.nodes.items():
            for parent in node.parents:
                children[parent].append(vid)
        ready = sorted((v for v, d in indeg.items() if d == 0), key=self._order.get)
        out: list[str] = []
        while ready:
            vid = ready.pop(0)
            out.append(vid)
            for child in children[vid]:
                indeg[child] -= 1
                if indeg[child] == 0:
                    ready.append(child)
            ready.sort(key=self._order.get)
        if len(out) != len(self.nodes):
            raise StructureError("edges do not form a DAG")
        return tuple(out)

    def _check_role_convention(self):
        # skills are parents of questions, never the reverse
        for vid, node in self.nodes.items():
            if self._var_by_id[vid].role is Role.SKILL:
                for parent in node.parents:
                    if self._var_by_id[parent].role is Role.QUESTION:
                        raise StructureError(
                            f"question {parent!r} may not be a parent of skill {vid!r}"
                        )

    def _node_factor(self, vid: str) -> Factor:
        node = self.nodes[vid]
        cpt = expand_noisy_or(node) if isinstance(node, NoisyOrNode) else node
        fvars = cpt.parents + (vid,)
        order = sorted(range(len(fvars)), key=lambda k: self._order[fvars[k]])
        return Factor(
            vars=tuple(fvars[k] for k in order),
            table=np.ascontiguousarray(np.transpose(cpt.table, order)),
        )

    # -- simple accessors ------------------------------------------------------

    def variable(self, vid: str) -> Variable:
        return self._var_by_id[vid]

    def card(self, vid: str) -> int:
        return self._var_by_id[vid].card

    def vars_with_role(self, role: Role) -> tuple[str, ...]:
        return tuple(v.id for v in self.variables if v.role is role)

    @property
    def skill_vars(self) -> tuple[str, ...]:
        return self.vars_with_role(Role.SKILL)

    @property
    def question_vars(self) -> tuple[str, ...]:
        return self.vars_with_role(Role.QUESTION)

    @property
    def info_vars(self) -> tuple[str, ...]:
        return self.vars_with_role(Role.INFORMATION)

    def with_nodes(self, nodes: Sequence) -> "BayesNet":
        return BayesNet(self.variables, nodes)

    def check_evidence(self, evidence: Mapping[str, int]) -> dict[str, int]:
        checked = {}
        for vid, state in evidence.items():
            var = self._var_by_id.get(vid)
            if var is None:
                raise StructureError(f"evidence for unknown variable {vid!r}")
            if isinstance(state, str):
                if state not in var.states:
                    raise StructureError(f"variable {vid!r} has no state {state!r}")
                state = var.states.index(state)
            if not 0 <= int(state) < var.card:
                raise StructureError(f"state {state} out of range for {vid!r}")
            checked[vid] = int(state)
        return checked


# -- variable elimination ------------------------------------------------------


def _reduce_factor(factor: Factor, evidence: Mapping[str, int]) -> Factor:
    fvars, table = factor.vars, factor.table
    for vid in [v for v in fvars if v in evidence]:
        axis = fvars.index(vid)
        table = np.take(table, evidence[vid], axis=axis)
        fvars = fvars[:axis] + fvars[axis + 1:]
    return Factor(vars=fvars, table=table)


def _multiply(factors: Sequence[Factor], order: Mapping[str, int]) -> Factor:
    all_vars = sorted({v for f in factors for v in f.vars}, key=order.get)
    pos = {v: i for i, v in enumerate(all_vars)}
    result = None
    for f in factors:
        shape = [1] * len(all_vars)
        src = f.table
        for i, v in enumerate(f.vars):
            shape[pos[v]] = src.shape[i]
        # factor axes are already sorted by net order, so a reshape aligns them
        aligned = src.reshape(shape)
        result = aligned if result is None else result * aligned
    if result is None:
        return Factor(vars=(), table=np.asarray(1.0))
    return Factor(vars=tuple(all_vars), table=result)


def _sum_out(factor: Factor, vid: str) -> Factor:
    axis = factor.vars.index(vid)
    return Factor(
        vars=factor.vars[:axis] + factor.vars[axis + 1:],
        table=factor.table.sum(axis=axis),
    )


def _min_fill_order(factors: Sequence[Factor], eliminate: set[str]) -> list[str]:
    adjacency: dict[str, set[str]] = {}
    for f in factors:
        for v in f.vars:
            adjacency.setdefault(v, set()).update(u for u in f.vars if u != v)
    remaining = {v for v in eliminate if v in adjacency}
    ordering = []
    while remaining:
        best = min(
            remaining,
            key=lambda v: (
                sum(
                    1
                    for a in adjacency[v]
                    for b in adjacency[v]
                    if a < b and b not in adjacency[a]
                ),
                v,
            ),
        )
        ordering.append(best)
        neighbors = adjacency.pop(best)
        for n in neighbors:
            adjacency[n].discard(best)
            adjacency[n].update(u for u in neighbors if u != n)
        remaining.discard(best)
    return ordering


def _eliminate(factors: list[Factor], eliminate: set[str], order: Mapping[str, int]) -> list[Factor]:
    for vid in _min_fill_order(factors, eliminate):
        touched = [f for f in factors if vid in f.vars]
        untouched = [f for f in factors if vid not in f.vars]
        if touched:
            merged = _sum_out(_multiply(touched, order), vid)
            factors = untouched + [merged]
    return factors


def posterior_joint(net: BayesNet, evidence: Mapping[str, int], query: Sequence[str]) -> Factor:
    """Normalized joint posterior over the (non-evidence) query variables."""
    evidence = net.check_evidence(evidence)
    query = [q for q in query if q not in evidence]
    factors = [_reduce_factor(net._factors[vid], evidence) for vid in net.nodes]
    hidden = {v.id for v in net.variables} - set(evidence) - set(query)
    remaining = _eliminate(factors, hidden, net._order)
    joint = _multiply(remaining, net._order)
    z = float(joint.table.sum())
    if z <= 0.0:
        raise InconsistentEvidenceError("evidence has probability zero under the model")
    return Factor(vars=joint.vars, table=joint.table / z)


def evidence_log_prob(net: BayesNet, evidence: Mapping[str, int]) -> float:
    """log P(evidence); raises on zero-probability evidence."""
    evidence = net.check_evidence(evidence)
    factors = [_reduce_factor(net._factors[vid], evidence) for vid in net.nodes]
    hidden = {v.id for v in net.variables} - set(evidence)
    remaining = _eliminate(factors, hidden, net._order)
    z = float(_multiply(remaining, net._order).table.sum())
    if z <= 0.0:
        raise InconsistentEvidenceError("evidence has probability zero under the model")
    return math.log(z)


def infer_marginals(
    net: BayesNet, evidence: Mapping[str, int], targets: Sequence[str]
) -> dict[str, np.ndarray]:
    """Exact posterior marginals P(target | evidence) by variable elimination.

    Evidence variables yield point-mass distributions.
    """
    evidence = net.check_evidence(evidence)
    out: dict[str, np.ndarray] = {}
    for target in targets:
        if target in evidence:
            dist = np.zeros(net.card(target))
            dist[evidence[target]] = 1.0
            out[target] = dist
        else:
            joint = posterior_joint(net, evidence, [target])
            out[target] = np.asarray(joint.table, dtype=float)
    return out


# -- entropy-based question selection -------------------------------------------


def _entropy(dist: np.ndarray, base: Optional[float] = None) -> float:
    p = np.asarray(dist, dtype=float)
    p = p[p > 0.0]
    h = float(-(p * np.log(p)).sum())
    if base is not None:
        h /= math.log(base)
    return h


def skill_entropy(net: BayesNet, evidence: Mapping[str, int], base: Optional[float] = None) -> float:
    """Cumulative Shannon entropy over all skill variables given the evidence.

    Natural log by default; 0 log 0 counts as 0.
    """
    marginals = infer_marginals(net, evidence, net.skill_vars)
    return sum(_entropy(marginals[s], base) for s in net.skill_vars)


def expected_entropy(
    net: BayesNet, evidence: Mapping[str, int], question: str, base: Optional[float] = None
) -> float:
    """Expected post-answer skill entropy sum_j P(X'=x_j | e) H(e, X'=x_j).

    Zero-probability outcomes contribute nothing.
    """
    evidence = net.check_evidence(evidence)
    if question in evidence:
        raise ValueError(f"question {question!r} is already answered")
    outcome_dist = infer_marginals(net, evidence, [question])[question]
    eh = 0.0
    for j, pj in enumerate(outcome_dist):
        if pj <= 0.0:
            continue
        eh += pj * skill_entropy(net, {**evidence, question: j}, base)
    return float(eh)


def information_gains(
    net: BayesNet, evidence: Mapping[str, int], candidates: Sequence[str]
) -> dict[str, float]:
    h = skill_entropy(net, evidence)
    return {q: h - expected_entropy(net, evidence, q) for q in candidates}


def select_max_info_gain(
    net: BayesNet, evidence: Mapping[str, int], candidates: Sequence[str]
) -> str:
    """Question maximizing IG(X', e) = H(e) - EH(X', e); ties break to the
    candidate earliest in the network's declaration order."""
    if not candidates:
        raise ValueError("candidate set must be nonempty")
    ordered = sorted(candidates, key=net._order.get)
    gains = information_gains(net, evidence, ordered)
    best = ordered[0]
    for q in ordered[1:]:
        if gains[q] > gains[best]:
            best = q
    return best


# -- skill-to-score conversion ---------------------------------------------------


@dataclass(frozen=True)
class SkillWeights:
    """Per-skill weights C_i and optional per-state numeric values.

    State values default to the variable's declared values, else 0-based
    state indices.
    """

    weights: Mapping[str, float]
    state_values: Mapping[str, tuple[float, ...]] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "weights", dict(self.weights))
        object.__setattr__(
            self, "state_values", {k: tuple(v) for k, v in self.state_values.items()}
        )
        if any(c < 0 for c in self.weights.values()):
            raise ValueError("skill weights must be >= 0")
        if not any(c > 0 for c in self.weights.values()):
            raise ValueError("at least one skill weight must be positive")

    def values_for(self, net: BayesNet, skill: str) -> tuple[float, ...]:
        if skill in self.state_values:
            return self.state_values[skill]
        var = net.variable(skill)
        if var.state_values is not None:
            return var.state_values
        return tuple(float(j) for j in range(var.card))


def equal_impact_weights(net: BayesNet, scale: float = 1.0) -> SkillWeights:
    """Weights C_i = (n_max / n_i) * C so every skill moves the score equally."""
    cards = {s: net.card(s) for s in net.skill_vars}
    n_max = max(cards.values())
    return SkillWeights(weights={s: n_max / n * scale for s, n in cards.items()})


def expected_score(net: BayesNet, evidence: Mapping[str, int], weights: SkillWeights) -> float:
    """E(SC) = sum_i sum_j P(S_i = s_ij | e) value(s_ij) C_i."""
    marginals = infer_marginals(net, evidence, tuple(weights.weights))
    total = 0.0
    for skill, c in weights.weights.items():
        values = weights.values_for(net, skill)
        total += c * float(np.dot(marginals[skill], values))
    return total


def score_range(net: BayesNet, weights: SkillWeights) -> tuple[float, float]:
    """(SC_min, SC_max) over bottom/top skill states."""
    lo = sum(c * min(weights.values_for(net, s)) for s, c in weights.weights.items())
    hi = sum(c * max(weights.values_for(net, s)) for s, c in weights.weights.items())
    return lo, hi


# -- EM learning ------------------------------------------------------------------


@dataclass(frozen=True)
class LearnConfig:
    pseudocount: float = 0.1
    tol: float = 1e-4
    max_iters: int = 200


@dataclass
class LearnResult:
    net: BayesNet
    loglik_trace: list[float]
    iterations: int
    converged: bool


def dataset_evidence(net: BayesNet, dataset: ResponseDataset) -> list[dict[str, int]]:
    """Observed evidence per record: question cells become state indices,
    info values match their variable's state labels. Hidden where missing
    (unless an explicit "unknown" state exists)."""
    question_cols = []
    for col, item_id in enumerate(dataset.item_ids):
        if item_id in net._var_by_id:
            if net.variable(item_id).role is not Role.QUESTION:
                raise StructureError(f"dataset column {item_id!r} is not a question variable")
            question_cols.append((col, item_id))
    if not question_cols:
        raise StructureError("no dataset column matches a question variable")
    info_names = [n for n in dataset.info_names if n in net._var_by_id]

    records = []
    for rec in dataset.students:
        evidence: dict[str, int] = {}
        for col, vid in question_cols:
            grade = rec.grades[col]
            if grade is None:
                continue
            if grade >= net.card(vid):
                raise StructureError(
                    f"grade {grade} exceeds state space of question {vid!r}"
                )
            evidence[vid] = int(grade)
        for name in info_names:
            value = rec.info.get(name, UNKNOWN)
            states = net.variable(name).states
            if value in states:
                evidence[name] = states.index(value)
            # unknown without an explicit state stays hidden
        records.append(evidence)
    return records


def _expected_family_counts(net, pattern, count, node, accumulator):
    family = node.parents + (node.var,)
    free = [v for v in family if v not in pattern]
    if not free:
        idx = tuple(pattern[v] for v in family)
        accumulator[idx] += count
        return
    joint = posterior_joint(net, pattern, free)
    pos_of = {v: i for i, v in enumerate(joint.vars)}
    for free_idx, prob in np.ndenumerate(joint.table):
        if prob == 0.0:
            continue
        idx = tuple(
            pattern[v] if v in pattern else free_idx[pos_of[v]] for v in family
        )
        accumulator[idx] += count * prob


def learn_em(
    net: BayesNet, dataset: ResponseDataset, config: Optional[LearnConfig] = None
) -> LearnResult:
    """EM parameter learning with exact E-steps and pseudocount-smoothed
    M-steps. Noisy-OR nodes are held fixed; their parameters are not
    re-estimated.

    The observed log-likelihood trace is monotone non-decreasing: a smoothed
    M-step maximizes the penalized objective and may dip the raw likelihood,
    so a downhill candidate is rejected and learning stops at the best net.
    """
    config = config or LearnConfig()
    if dataset.n_students == 0:
        raise ValueError("empty dataset")
    records = dataset_evidence(net, dataset)

    patterns: dict[tuple, int] = {}
    for evidence in records:
        key = tuple(sorted(evidence.items()))
        patterns[key] = patterns.get(key, 0) + 1

    learnable = [vid for vid, n in net.nodes.items() if isinstance(n, CptNode)]

    def e_step(model: BayesNet) -> tuple[float, dict[str, np.ndarray]]:
        loglik = 0.0
        counts = {vid: np.zeros(model.nodes[vid].table.shape) for vid in learnable}
        for key, count in patterns.items():
            pattern = dict(key)
            loglik += count * evidence_log_prob(model, pattern)
            for vid in learnable:
                _expected_family_counts(model, pattern, count, model.nodes[vid], counts[vid])
        return loglik, counts

    def m_step(model: BayesNet, counts: Mapping[str, np.ndarray]) -> BayesNet:
        new_nodes = []
        for vid, node in model.nodes.items():
            if vid in counts:
                smoothed = counts[vid] + config.pseudocount
                table = smoothed / smoothed.sum(axis=-1, keepdims=True)
                new_nodes.append(CptNode(var=vid, parents=node.parents, table=table))
            else:
                new_nodes.append(node)
        return model.with_nodes(new_nodes)

    current = net
    loglik, counts = e_step(current)
    trace = [loglik]
    converged = False
    iterations = 1
    for _ in range(config.max_iters - 1):
        iterations += 1
        candidate = m_step(current, counts)
        new_loglik, new_counts = e_step(candidate)
        if new_loglik < loglik:
            converged = True  # the smoothing floor was reached
            break
        current, loglik, counts = candidate, new_loglik, new_counts
        trace.append(loglik)
        if trace[-1] - trace[-2] < config.tol:
            converged = True
            break

    return LearnResult(net=current, loglik_trace=trace, iterations=iterations, converged=converged)


# -- ordinality diagnostics --------------------------------------------------------


@dataclass(frozen=True)
class OrdinalityViolation:
    question: str
    parent: str
    context: tuple[tuple[str, int], ...]
    probabilities: tuple[float, ...]


def _success_curve(net: BayesNet, node: CptNode) -> np.ndarray:
    # probability of the question's top (correct) state per parent config
    return np.asarray(node.table[..., -1])


def enforce_ordinality_check(net: BayesNet) -> list[OrdinalityViolation]:
    """Flag question CPTs whose success probability is not monotone
    non-decreasing along each ordinal skill parent's axis (others held fixed).
    """
    violations = []
    for vid in net.question_vars:
        node = net.nodes[vid]
        cpt = expand_noisy_or(node) if isinstance(node, NoisyOrNode) else node
        curve = _success_curve(net, cpt)
        for axis, parent in enumerate(cpt.parents):
            pvar = net.variable(parent)
            if pvar.role is not Role.SKILL or not pvar.ordinal:
                continue
            moved = np.moveaxis(curve, axis, -1)
            for idx in np.ndindex(*moved.shape[:-1]):
                series = moved[idx]
                if np.any(np.diff(series) < -_CPT_ATOL):
                    others = [p for k, p in enumerate(cpt.parents) if k != axis]
                    violations.append(
                        OrdinalityViolation(
                            question=vid,
                            parent=parent,
                            context=tuple(zip(others, idx)),
                            probabilities=tuple(float(x) for x in series),
                        )
                    )
    return violations


def _pava_non_decreasing(y: np.ndarray) -> np.ndarray:
    values: list[float] = []
    counts: list[int] = []
    for v in y:
        values.append(float(v))
        counts.append(1)
        while len(values) > 1 and values[-2] > values[-1]:
            total = counts[-2] + counts[-1]
            merged = (values[-2] * counts[-2] + values[-1] * counts[-1]) / total
            values[-2:] = [merged]
            counts[-2:] = [total]
    out = []
    for v, c in zip(values, counts):
        out.extend([v] * c)
    return np.asarray(out)


def repair_ordinality(net: BayesNet, max_passes: int = 50) -> BayesNet:
    """Project binary-question success curves onto the nearest monotone
    vector (least squares, per ordinal-parent axis) and renormalize.

    Multi-state questions are left untouched with a warning.
    """
    new_nodes = []
    for vid, node in net.nodes.items():
        var = net.variable(vid)
        if var.role is not Role.QUESTION or isinstance(node, NoisyOrNode):
            new_nodes.append(node)
            continue
        if var.card != 2:
            warnings.warn(f"ordinality repair skips multi-state question {vid!r}")
            new_nodes.append(node)
            continue
        curve = np.array(node.table[..., 1])
        ordinal_axes = [
            axis
            for axis, parent in enumerate(node.parents)
            if net.variable(parent).role is Role.SKILL and net.variable(parent).ordinal
        ]
        for _ in range(max_passes):
            changed = False
            for axis in ordinal_axes:
                moved = np.moveaxis(curve, axis, -1)
                for idx in np.ndindex(*moved.shape[:-1]):
                    fixed = _pava_non_decreasing(moved[idx])
                    if not np.allclose(fixed, moved[idx]):
                        moved[idx] = fixed
                        changed = True
            if not changed:
                break
        table = np.stack([1.0 - curve, curve], axis=-1)
        new_nodes.append(CptNode(var=vid, parents=node.parents, table=table))
    return net.with_nodes(new_nodes)


# -- observed-score discretization ---------------------------------------------------


@dataclass(frozen=True)
class DiscretizedScores:
    labels: tuple[int, ...]
    boundaries: tuple[float, ...]


def discretize_observed_score(dataset: ResponseDataset, n_groups: int) -> DiscretizedScores:
    """Quantile-based grouping of total scores into n near-equal groups.

    Boundaries sit at midpoints between order statistics (shifted past ties),
    intervals are lower-closed. The labels can be attached as an info column
    and used as an observed variable during learning.
    """
    if n_groups < 2:
        raise ValueError("n_groups must be >= 2")
    scores = dataset.raw_scores()
    distinct = sorted(set(scores))
    if len(distinct) < n_groups:
        raise ValueError(
            f"{len(distinct)} distinct scores cannot form {n_groups} groups"
        )
    ordered = sorted(scores)
    n = len(ordered)
    boundaries: list[float] = []
    for g in range(1, n_groups):
        i = (g * n) // n_groups
        value = ordered[i]
        if ordered[i - 1] == value:
            above = [v for v in distinct if v > value]
            if not above:
                raise ValueError("ties leave no room for a boundary above the cut")
            boundary = (value + above[0]) / 2.0
        else:
            boundary = (ordered[i - 1] + value) / 2.0
        boundaries.append(boundary)
    if any(b2 <= b1 for b1, b2 in zip(boundaries, boundaries[1:])):
        raise ValueError("degenerate boundaries; too few distinct scores")
    labels = tuple(int(np.searchsorted(boundaries, s, side="right")) for s in scores)
    return DiscretizedScores(labels=labels, boundaries=tuple(boundaries))


# -- serialization ---------------------------------------------------------------------


def net_to_payload(net: BayesNet, weights: Optional[SkillWeights] = None) -> dict:
    doc: dict = {
        "variables": [
            {
                "id": v.id,
                "role": v.role.value,
                "states": list(v.states),
                "ordinal": v.ordinal,
                **({"state_values": list(v.state_values)} if v.state_values else {}),
            }
            for v in net.variables
        ],
        "nodes": [],
    }
    for v in net.variables:
        node = net.nodes[v.id]
        if isinstance(node, NoisyOrNode):
            doc["nodes"].append(
                {
                    "variable": node.var,
                    "type": "noisy_or",
                    "parents": list(node.parents),
                    "link_probs": list(node.link_probs),
                    "leak": node.leak,
                }
            )
        else:
            doc["nodes"].append(
                {
                    "variable": node.var,
                    "type": "cpt",
                    "parents": list(node.parents),
                    "table": node.table.tolist(),
                }
            )
    if weights is not None:
        doc["skill_weights"] = {
            "weights": dict(weights.weights),
            "state_values": {k: list(v) for k, v in weights.state_values.items()},
        }
    return doc


def net_from_payload(payload: Mapping) -> tuple[BayesNet, Optional[SkillWeights]]:
    variables = [
        Variable(
            id=row["id"],
            role=Role(row["role"]),
            states=tuple(row["states"]),
            ordinal=bool(row.get("ordinal", False)),
            state_values=tuple(row["state_values"]) if row.get("state_values") else None,
        )
        for row in payload["variables"]
    ]
    nodes: list = []
    for row in payload["nodes"]:
        if row["type"] == "noisy_or":
            nodes.append(
                NoisyOrNode(
                    var=row["variable"],
                    parents=tuple(row["parents"]),
                    link_probs=tuple(row["link_probs"]),
                    leak=float(row.get("leak", 0.0)),
                )
            )
        elif row["type"] == "cpt":
            nodes.append(
                CptNode(
                    var=row["variable"],
                    parents=tuple(row["parents"]),
                    table=np.asarray(row["table"], dtype=float),
                )
            )
        else:
            raise StructureError(f"unknown node type {row['type']!r}")
    net = BayesNet(variables, nodes)
    weights = None
    if payload.get("skill_weights"):
        sw = payload["skill_weights"]
        weights = SkillWeights(
            weights={k: float(v) for k, v in sw["weights"].items()},
            state_values={k: tuple(v) for k, v in sw.get("state_values", {}).items()},
        )
    return net, weights
