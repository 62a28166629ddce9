"""Student-model adapters binding each model family to the engine interface."""

from __future__ import annotations

from typing import Mapping, Optional, Sequence

import numpy as np

from . import bayesnet as bn
from . import irt
from . import neuralnet as nn
from .data import QuestionBank
from .engine import EstimateView, RepeatedQuestionError, StudentModel


class IrtStudentModel(StudentModel):
    """3PL model: EAP/MAP/MLE ability estimate, max-information selection."""

    kind = "irt"

    def __init__(
        self,
        params: Mapping[str, irt.IrtItemParams],
        bank: QuestionBank,
        grid: Optional[irt.QuadratureGrid] = None,
        method: str = "eap",
    ):
        unknown = set(params) - set(bank.item_ids)
        if unknown:
            raise ValueError(f"params for items not in bank: {sorted(unknown)}")
        self._params = {qid: params[qid] for qid in bank.item_ids if qid in params}
        self._grade_points = {it.id: it.grade_points for it in bank.items}
        self._grid = grid or irt.QuadratureGrid.standard_normal()
        self._method = method
        self._answered: dict[str, int] = {}
        self._cached: Optional[irt.ThetaEstimate] = None
        ordered = list(self._params.values())
        self._slot = {qid: i for i, qid in enumerate(self._params)}
        self._a = np.asarray([p.a for p in ordered])
        self._b = np.asarray([p.b for p in ordered])
        self._c = np.asarray([p.c for p in ordered])

    def _estimate(self) -> irt.ThetaEstimate:
        if self._cached is None:
            items = [self._params[q] for q in self._answered]
            answers = list(self._answered.values())
            self._cached = irt.estimate_theta(items, answers, self._grid, self._method)
        return self._cached

    def insert_answer(self, question_id: str, outcome: int) -> None:
        if question_id in self._answered:
            raise RepeatedQuestionError(f"{question_id!r} already answered")
        if question_id not in self._params:
            raise ValueError(f"no IRT parameters for {question_id!r}")
        if outcome not in (0, 1):
            raise ValueError("IRT models take boolean outcomes (0/1)")
        self._answered[question_id] = outcome
        self._cached = None

    def _all_probs(self, theta: float):
        s = 1.0 / (1.0 + np.exp(-self._a * (theta - self._b)))
        return self._c + (1.0 - self._c) * s

    def current_estimate(self) -> EstimateView:
        est = self._estimate()
        probs = self._all_probs(est.theta)
        points = [self._grade_points[qid] for qid in self._params]
        expected = float(sum(p * g for p, g in zip(probs, points)))
        return EstimateView(
            kind="theta",
            value=est.theta,
            uncertainty=est.se,
            expected_score=expected,
        )

    def predict_answers(self, candidates: Sequence[str]) -> dict[str, dict[int, float]]:
        probs = self._all_probs(self._estimate().theta)
        out = {}
        for qid in candidates:
            p = float(probs[self._slot[qid]])
            out[qid] = {0: 1.0 - p, 1: p}
        return out

    def selection_score(self, question_id: str) -> float:
        return float(irt.item_information(self._params[question_id], self._estimate().theta))

    def selection_scores(self, candidates: Sequence[str]) -> list[float]:
        theta = self._estimate().theta
        s = 1.0 / (1.0 + np.exp(-self._a * (theta - self._b)))
        p = self._c + (1.0 - self._c) * s
        q = 1.0 - p
        dp = self._a * (1.0 - self._c) * s * (1.0 - s)
        pq = p * q
        with np.errstate(divide="ignore", invalid="ignore"):
            info = np.where(pq > 1e-15, dp * dp / np.where(pq > 1e-15, pq, 1.0), 0.0)
        return [float(info[self._slot[qid]]) for qid in candidates]

    def reset(self) -> None:
        self._answered.clear()
        self._cached = None


class BnStudentModel(StudentModel):
    """Bayesian-network model: skill marginals, information-gain selection."""

    kind = "bn"

    def __init__(
        self,
        net: bn.BayesNet,
        weights: Optional[bn.SkillWeights] = None,
        info_evidence: Optional[Mapping[str, int]] = None,
    ):
        self._net = net
        self._weights = weights
        self._info = net.check_evidence(info_evidence or {})
        self._answers: dict[str, int] = {}
        self._entropy_cache: Optional[float] = None

    @property
    def _evidence(self) -> dict[str, int]:
        return {**self._info, **self._answers}

    def _current_entropy(self) -> float:
        if self._entropy_cache is None:
            self._entropy_cache = bn.skill_entropy(self._net, self._evidence)
        return self._entropy_cache

    def insert_answer(self, question_id: str, outcome: int) -> None:
        if question_id in self._answers:
            raise RepeatedQuestionError(f"{question_id!r} already answered")
        if question_id not in self._net.question_vars:
            raise ValueError(f"{question_id!r} is not a question variable")
        self._answers.update(self._net.check_evidence({question_id: outcome}))
        self._entropy_cache = None

    def current_estimate(self) -> EstimateView:
        marginals = bn.infer_marginals(self._net, self._evidence, self._net.skill_vars)
        expected = (
            bn.expected_score(self._net, self._evidence, self._weights)
            if self._weights is not None
            else None
        )
        return EstimateView(
            kind="skill-marginals",
            value={s: [float(p) for p in marginals[s]] for s in self._net.skill_vars},
            uncertainty=self._current_entropy(),
            expected_score=expected,
        )

    def predict_answers(self, candidates: Sequence[str]) -> dict[str, dict[int, float]]:
        marginals = bn.infer_marginals(self._net, self._evidence, candidates)
        return {
            qid: {i: float(p) for i, p in enumerate(marginals[qid])} for qid in candidates
        }

    def selection_score(self, question_id: str) -> float:
        eh = bn.expected_entropy(self._net, self._evidence, question_id)
        return self._current_entropy() - eh

    def reset(self) -> None:
        self._answers.clear()
        self._entropy_cache = None


class NnStudentModel(StudentModel):
    """Neural score model: direct score prediction, variance-based selection.

    Answer predictions come from the static empirical outcome distributions;
    the network itself predicts only the score.
    """

    kind = "nn"

    def __init__(
        self,
        spec: nn.NetworkSpec,
        weights: nn.NetworkWeights,
        encoding: nn.AnswerEncoding,
        item_ids: Sequence[str],
        answer_probs: Mapping[int, Mapping[int, float]],
    ):
        if len(item_ids) != spec.input_size:
            raise ValueError("one input slot per item required")
        self._spec = spec
        self._weights = weights
        self._encoding = encoding
        self._slot = {qid: i for i, qid in enumerate(item_ids)}
        self._answer_probs = {int(k): dict(v) for k, v in answer_probs.items()}
        self._answers: dict[str, int] = {}

    def _evidence_slots(self) -> dict[int, float]:
        return {self._slot[q]: float(o) for q, o in self._answers.items()}

    def insert_answer(self, question_id: str, outcome: int) -> None:
        if question_id in self._answers:
            raise RepeatedQuestionError(f"{question_id!r} already answered")
        if question_id not in self._slot:
            raise ValueError(f"no input slot for {question_id!r}")
        self._answers[question_id] = outcome

    def current_estimate(self) -> EstimateView:
        answers: list[Optional[float]] = [None] * self._spec.input_size
        for slot, grade in self._evidence_slots().items():
            answers[slot] = grade
        score = nn.forward(self._weights, self._spec, self._encoding, answers)
        return EstimateView(kind="score", value=score, uncertainty=None, expected_score=score)

    def predict_answers(self, candidates: Sequence[str]) -> dict[str, dict[int, float]]:
        return {qid: dict(self._answer_probs[self._slot[qid]]) for qid in candidates}

    def selection_score(self, question_id: str) -> float:
        slot = self._slot[question_id]
        return nn.predicted_score_variance(
            self._weights,
            self._spec,
            self._encoding,
            self._evidence_slots(),
            slot,
            self._answer_probs[slot],
        )

    def reset(self) -> None:
        self._answers.clear()


def sub_bank(bank: QuestionBank, item_ids: Sequence[str]) -> QuestionBank:
    """The bank restricted to the items a model actually covers."""
    known = set(bank.item_ids)
    missing = [i for i in item_ids if i not in known]
    if missing:
        raise ValueError(f"model references items missing from the bank: {missing}")
    wanted = set(item_ids)
    return QuestionBank(items=tuple(it for it in bank.items if it.id in wanted))


def model_factory_from_envelope(envelope, bank: QuestionBank):
    """(fresh-model factory, effective bank) for any persisted model kind."""
    payload = envelope.payload
    if envelope.model_kind == "irt":
        params = irt.params_from_payload(payload)
        effective = sub_bank(bank, list(params))
        return (lambda: IrtStudentModel(params, effective)), effective
    if envelope.model_kind == "bn":
        net, weights = bn.net_from_payload(payload)
        effective = sub_bank(bank, list(net.question_vars))
        return (lambda: BnStudentModel(net, weights)), effective
    if envelope.model_kind == "nn":
        spec, weights, encoding, item_ids, answer_probs = nn.model_from_payload(payload)
        if answer_probs is None:
            raise ValueError("nn model payload lacks answer_probs")
        effective = sub_bank(bank, list(item_ids))
        return (
            lambda: NnStudentModel(spec, weights, encoding, item_ids, answer_probs)
        ), effective
    raise ValueError(f"unknown model kind {envelope.model_kind!r}")
