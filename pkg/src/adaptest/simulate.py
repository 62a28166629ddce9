"""Synthetic examinee generation and adaptive-vs-baseline evaluation.

Every sampler is deterministic per seed. One master seed fans out to
per-examinee sub-seeds through a splitmix64 stream, so growing a cohort
never reshuffles the examinees already drawn.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping, Optional, Sequence

import numpy as np
from scipy.stats import spearmanr

from . import bayesnet as bn
from . import irt
from .data import Item, QuestionBank, ResponseDataset, StudentRecord
from .engine import (
    EstimateView,
    StoppingRule,
    StudentModel,
    TestSession,
    Transcript,
    next_question,
    run_scripted,
    submit_answer,
)

_SPLITMIX_GAMMA = 0x9E3779B97F4A7C15
_MASK64 = (1 << 64) - 1


def splitmix64(state: int) -> int:
    """One output of the splitmix64 stream at the given state."""
    z = (state + _SPLITMIX_GAMMA) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


def child_seed(master: int, index: int) -> int:
    """index-th sub-seed of the master seed."""
    return splitmix64((master & _MASK64) + index * _SPLITMIX_GAMMA)


@dataclass(frozen=True)
class SimulatedExaminee:
    """Ground truth plus the full (pre-sampled) answer vector."""

    id: str
    truth: object  # theta (IRT), skill-state map (BN), or target score
    answers: Mapping[str, int]
    seed: int

    def oracle(self) -> Callable[[str], int]:
        return lambda qid: self.answers[qid]


@dataclass(frozen=True)
class Cohort:
    kind: str
    bank: QuestionBank
    dataset: ResponseDataset
    members: tuple[SimulatedExaminee, ...]


def bank_for_items(params: Mapping[str, irt.IrtItemParams]) -> QuestionBank:
    items = tuple(Item(id=qid, text=f"Question {qid}") for qid in params)
    return QuestionBank(items=items)


def sample_irt_cohort(
    params: Mapping[str, irt.IrtItemParams],
    n: int,
    seed: int,
    bank: Optional[QuestionBank] = None,
) -> Cohort:
    """theta_s ~ N(0,1); each answer ~ Bernoulli(p_i(theta_s))."""
    if n < 1:
        raise ValueError("cohort size must be >= 1")
    bank = bank or bank_for_items(params)
    item_ids = list(params)
    records = []
    members = []
    for s in range(n):
        sub = child_seed(seed, s)
        rng = np.random.default_rng(sub)
        theta = float(rng.standard_normal())
        answers = {
            qid: int(rng.random() < irt.irf(params[qid], theta)) for qid in item_ids
        }
        sid = f"sim{s:05d}"
        members.append(SimulatedExaminee(id=sid, truth=theta, answers=answers, seed=sub))
        records.append(StudentRecord(id=sid, grades=tuple(answers[q] for q in item_ids)))
    dataset = ResponseDataset(item_ids=tuple(item_ids), students=tuple(records), mode="boolean")
    return Cohort(kind="irt", bank=bank, dataset=dataset, members=tuple(members))


def sample_bn_cohort(net: bn.BayesNet, n: int, seed: int) -> Cohort:
    """Ancestral sampling in topological order; question/info columns are
    exported, skill truths retained separately."""
    if n < 1:
        raise ValueError("cohort size must be >= 1")
    question_ids = list(net.question_vars)
    info_ids = list(net.info_vars)
    items = tuple(
        Item(
            id=qid,
            text=f"Question {qid}",
            answer_space=net.variable(qid).states,
            grade_points=net.card(qid) - 1,
        )
        for qid in question_ids
    )
    bank = QuestionBank(items=items)

    records = []
    members = []
    for s in range(n):
        sub = child_seed(seed, s)
        rng = np.random.default_rng(sub)
        sample: dict[str, int] = {}
        for vid in net.topo_order:
            node = net.nodes[vid]
            cpt = bn.expand_noisy_or(node) if isinstance(node, bn.NoisyOrNode) else node
            idx = tuple(sample[p] for p in cpt.parents)
            dist = cpt.table[idx]
            sample[vid] = int(rng.choice(len(dist), p=dist))
        sid = f"sim{s:05d}"
        truth = {skill: sample[skill] for skill in net.skill_vars}
        answers = {qid: sample[qid] for qid in question_ids}
        info = {name: net.variable(name).states[sample[name]] for name in info_ids}
        members.append(SimulatedExaminee(id=sid, truth=truth, answers=answers, seed=sub))
        records.append(
            StudentRecord(id=sid, grades=tuple(sample[q] for q in question_ids), info=info)
        )
    dataset = ResponseDataset(item_ids=tuple(question_ids), students=tuple(records), mode="numeric")
    return Cohort(kind="bn", bank=bank, dataset=dataset, members=tuple(members))


class ForcedOrderModel(StudentModel):
    """Delegating wrapper that replaces the selection score with a fixed
    question order, leaving updates and estimates untouched. Lets the same
    engine code run random- and fixed-order baselines."""

    def __init__(self, inner: StudentModel, order: Sequence[str]):
        self._inner = inner
        self._rank = {qid: i for i, qid in enumerate(order)}
        self.kind = inner.kind

    def insert_answer(self, question_id: str, outcome: int) -> None:
        self._inner.insert_answer(question_id, outcome)

    def current_estimate(self) -> EstimateView:
        return self._inner.current_estimate()

    def predict_answers(self, candidates: Sequence[str]) -> dict[str, dict[int, float]]:
        return self._inner.predict_answers(candidates)

    def selection_score(self, question_id: str) -> float:
        return float(len(self._rank) - self._rank[question_id])

    def reset(self) -> None:
        self._inner.reset()


def _estimate_scalar(view: EstimateView) -> float:
    if view.kind in ("theta", "score"):
        return float(view.value)
    if view.expected_score is None:
        raise ValueError("skill-marginal estimates need skill weights for a scalar score")
    return float(view.expected_score)


def _truth_scalar(cohort: Cohort, member: SimulatedExaminee) -> float:
    if cohort.kind == "irt":
        return float(member.truth)
    return float(sum(member.answers.values()))


POLICIES = ("adaptive", "random", "fixed")


@dataclass
class PolicyReport:
    policy: str
    questions_to_stop: list[int]
    quartiles: tuple[float, float, float]
    pearson_r: Optional[float]
    spearman_rho: Optional[float]
    accuracy_curve: Optional[list[float]] = None

    def to_payload(self) -> dict:
        return {
            "policy": self.policy,
            "questions_to_stop": self.questions_to_stop,
            "quartiles": list(self.quartiles),
            "pearson_r": self.pearson_r,
            "spearman_rho": self.spearman_rho,
            "accuracy_curve": self.accuracy_curve,
        }


@dataclass
class EvaluationReport:
    seed: int
    policies: dict[str, PolicyReport]

    def to_payload(self) -> dict:
        return {
            "seed": self.seed,
            "policies": {name: rep.to_payload() for name, rep in self.policies.items()},
        }

    def csv_rows(self) -> list[dict]:
        """Plot-ready long format: one row per policy per examinee index."""
        rows = []
        for name, rep in self.policies.items():
            for i, q in enumerate(rep.questions_to_stop):
                rows.append({"policy": name, "examinee": i, "questions_to_stop": q})
        return rows


def _policy_model(
    policy: str, factory: Callable[[], StudentModel], bank: QuestionBank, rng: np.random.Generator
) -> StudentModel:
    model = factory()
    if policy == "adaptive":
        return model
    if policy == "fixed":
        return ForcedOrderModel(model, bank.item_ids)
    if policy == "random":
        order = list(bank.item_ids)
        rng.shuffle(order)
        return ForcedOrderModel(model, order)
    raise ValueError(f"unknown policy {policy!r}")


def compare_policies(
    model_factory: Callable[[], StudentModel],
    bank: QuestionBank,
    cohort: Cohort,
    stopping: Sequence[StoppingRule],
    policies: Sequence[str] = POLICIES,
    seed: int = 0,
    collect_predictions: bool = False,
) -> EvaluationReport:
    """Run every examinee under every ordering policy, aggregate
    questions-to-stop and truth-recovery agreement."""
    reports: dict[str, PolicyReport] = {}
    for p_idx, policy in enumerate(policies):
        lengths: list[int] = []
        estimates: list[float] = []
        truths: list[float] = []
        accuracy_steps: list[list[float]] = []
        for m_idx, member in enumerate(cohort.members):
            rng = np.random.default_rng(child_seed(seed, p_idx * len(cohort.members) + m_idx))
            model = _policy_model(policy, model_factory, bank, rng)
            session = TestSession(model, bank, stopping)
            if collect_predictions:
                transcript, accuracies = _run_with_predictions(session, member)
                for step, acc in enumerate(accuracies):
                    while len(accuracy_steps) <= step:
                        accuracy_steps.append([])
                    accuracy_steps[step].append(acc)
            else:
                transcript = run_scripted(session, member.oracle())
            lengths.append(len(transcript.records))
            estimates.append(_estimate_scalar(transcript.final_estimate))
            truths.append(_truth_scalar(cohort, member))
        q1, med, q3 = (float(q) for q in np.percentile(lengths, [25, 50, 75]))
        pearson = spearman = None
        if len(set(estimates)) > 1 and len(set(truths)) > 1:
            est = np.asarray(estimates)
            tru = np.asarray(truths)
            pearson = float(np.corrcoef(est, tru)[0, 1])
            spearman = float(spearmanr(est, tru).statistic)
        reports[policy] = PolicyReport(
            policy=policy,
            questions_to_stop=lengths,
            quartiles=(q1, med, q3),
            pearson_r=pearson,
            spearman_rho=spearman,
            accuracy_curve=(
                [float(np.mean(step)) for step in accuracy_steps] if collect_predictions else None
            ),
        )
    return EvaluationReport(seed=seed, policies=reports)


def _run_with_predictions(
    session: TestSession, member: SimulatedExaminee
) -> tuple[Transcript, list[float]]:
    accuracies: list[float] = []
    while True:
        step = next_question(session)
        if step.finished:
            session.mark_finished(step.stop_reason)
            from .engine import transcript_of

            return transcript_of(session), accuracies
        submit_answer(session, step.question_id, member.answers[step.question_id])
        if session.remaining:
            predictions = session.model.predict_answers(tuple(session.remaining))
            hits = sum(
                1
                for qid, dist in predictions.items()
                if max(dist, key=lambda o: (dist[o], -o)) == member.answers[qid]
            )
            accuracies.append(hits / len(predictions))


def prediction_accuracy_curve(
    model_factory: Callable[[], StudentModel],
    bank: QuestionBank,
    cohort: Cohort,
    stopping: Sequence[StoppingRule] = (),
    seed: int = 0,
) -> list[float]:
    """Mean fraction of remaining answers predicted correctly after each step."""
    per_step: list[list[float]] = []
    for member in cohort.members:
        session = TestSession(model_factory(), bank, stopping)
        _, accuracies = _run_with_predictions(session, member)
        for step, acc in enumerate(accuracies):
            while len(per_step) <= step:
                per_step.append([])
            per_step[step].append(acc)
    return [float(np.mean(v)) for v in per_step]
