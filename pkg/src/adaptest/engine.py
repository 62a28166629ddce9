"""Model-agnostic adaptive-testing loop.

The engine repeats: select the next question (greedy argmax of the model's
selection score), ask it, insert the answer, refresh the estimate, until a
stopping rule triggers. It is identical across model families; models plug
in through the StudentModel interface.

One session has one owner; sessions never share mutable state and may run
concurrently against shared immutable models.
"""

from __future__ import annotations

import time
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Callable, Mapping, Optional, Sequence

from .data import QuestionBank


class EngineError(ValueError):
    pass


class RepeatedQuestionError(EngineError):
    pass


class InvalidOutcomeError(EngineError):
    pass


class SessionFinishedError(EngineError):
    pass


@dataclass(frozen=True)
class EstimateView:
    """Uniform projection of a model's state.

    kind: "theta" (IRT), "skill-marginals" (BN) or "score" (NN). uncertainty
    is the SE for theta, summed skill entropy for marginals, absent for
    score.
    """

    kind: str
    value: object
    uncertainty: Optional[float] = None
    expected_score: Optional[float] = None

    def __post_init__(self):
        if self.uncertainty is not None and self.uncertainty < 0:
            raise EngineError("uncertainty must be non-negative")

    def to_payload(self) -> dict:
        return {
            "kind": self.kind,
            "value": self.value,
            "uncertainty": self.uncertainty,
            "expected_score": self.expected_score,
        }

    @classmethod
    def from_payload(cls, doc: Mapping) -> "EstimateView":
        return cls(
            kind=doc["kind"],
            value=doc["value"],
            uncertainty=doc.get("uncertainty"),
            expected_score=doc.get("expected_score"),
        )


class StudentModel(ABC):
    """Behavioral contract every model family implements for the engine."""

    kind: str = "abstract"

    @abstractmethod
    def insert_answer(self, question_id: str, outcome: int) -> None:
        """Record an answer; a second answer to the same question is rejected."""

    @abstractmethod
    def current_estimate(self) -> EstimateView:
        ...

    @abstractmethod
    def predict_answers(self, candidates: Sequence[str]) -> dict[str, dict[int, float]]:
        """Outcome distribution per unanswered candidate."""

    @abstractmethod
    def selection_score(self, question_id: str) -> float:
        """Greedy selection criterion (information, IG, score variance)."""

    def selection_scores(self, candidates: Sequence[str]) -> list[float]:
        """Batch form of selection_score; models may vectorize it."""
        return [self.selection_score(q) for q in candidates]

    @abstractmethod
    def reset(self) -> None:
        """Back to the prior state."""


_STOPPING_KINDS = ("max_questions", "se_threshold", "entropy_threshold", "time_limit", "exhausted")


@dataclass(frozen=True)
class StoppingRule:
    kind: str
    value: Optional[float] = None

    def __post_init__(self):
        if self.kind not in _STOPPING_KINDS:
            raise EngineError(f"unknown stopping rule {self.kind!r}")
        if self.kind != "exhausted" and self.value is None:
            raise EngineError(f"stopping rule {self.kind!r} needs a value")
        if self.kind == "max_questions" and (self.value < 0 or self.value != int(self.value)):
            raise EngineError("max_questions must be a non-negative integer")

    def to_payload(self) -> dict:
        return {"kind": self.kind, "value": self.value}

    @classmethod
    def from_payload(cls, doc: Mapping) -> "StoppingRule":
        return cls(kind=doc["kind"], value=doc.get("value"))


def max_questions(n: int) -> StoppingRule:
    return StoppingRule("max_questions", n)


def se_threshold(tau: float) -> StoppingRule:
    return StoppingRule("se_threshold", tau)


def entropy_threshold(tau: float) -> StoppingRule:
    return StoppingRule("entropy_threshold", tau)


def time_limit(seconds: float) -> StoppingRule:
    return StoppingRule("time_limit", seconds)


@dataclass(frozen=True)
class TranscriptStep:
    step: int
    question_id: str
    outcome: int
    estimate: EstimateView

    def to_payload(self) -> dict:
        view = self.estimate.to_payload()
        return {
            "step": self.step,
            "question_id": self.question_id,
            "outcome": self.outcome,
            "estimate": {"kind": view["kind"], "value": view["value"]},
            "uncertainty": view["uncertainty"],
            "expected_score": view["expected_score"],
        }

    @classmethod
    def from_payload(cls, doc: Mapping) -> "TranscriptStep":
        return cls(
            step=int(doc["step"]),
            question_id=doc["question_id"],
            outcome=doc["outcome"],
            estimate=EstimateView(
                kind=doc["estimate"]["kind"],
                value=doc["estimate"]["value"],
                uncertainty=doc.get("uncertainty"),
                expected_score=doc.get("expected_score"),
            ),
        )


@dataclass(frozen=True)
class Transcript:
    records: tuple[TranscriptStep, ...]
    final_estimate: EstimateView
    stop_reason: str
    aborted: bool = False

    def to_payload(self) -> dict:
        return {
            "records": [r.to_payload() for r in self.records],
            "final_estimate": self.final_estimate.to_payload(),
            "stop_reason": self.stop_reason,
            "aborted": self.aborted,
        }

    @classmethod
    def from_payload(cls, doc: Mapping) -> "Transcript":
        return cls(
            records=tuple(TranscriptStep.from_payload(r) for r in doc["records"]),
            final_estimate=EstimateView.from_payload(doc["final_estimate"]),
            stop_reason=doc["stop_reason"],
            aborted=bool(doc.get("aborted", False)),
        )


@dataclass(frozen=True)
class NextStep:
    """Either the next question to ask or the finish signal."""

    question_id: Optional[str]
    stop_reason: Optional[str] = None

    @property
    def finished(self) -> bool:
        return self.question_id is None


class TestSession:
    """Mutable per-examinee test state: one model, one bank, one answer log."""

    __test__ = False  # domain class, not a pytest collectible

    def __init__(
        self,
        model: StudentModel,
        bank: QuestionBank,
        stopping: Sequence[StoppingRule] = (),
        clock: Callable[[], float] = time.monotonic,
        predict_each_step: bool = False,
    ):
        self.model = model
        self.bank = bank
        self.stopping = tuple(stopping)
        self.asked: list[TranscriptStep] = []
        self.remaining: list[str] = list(bank.item_ids)
        self.status = "running"
        self.stop_reason: Optional[str] = None
        self.predict_each_step = predict_each_step
        self.last_predictions: Optional[dict[str, dict[int, float]]] = None
        self._clock = clock
        self.started_at = clock()

    @property
    def asked_ids(self) -> set[str]:
        return {step.question_id for step in self.asked}

    def mark_finished(self, reason: str) -> None:
        self.status = "finished"
        self.stop_reason = reason

    def triggered_rule(self) -> Optional[str]:
        estimate = self.model.current_estimate()
        for rule in self.stopping:
            if rule.kind == "max_questions" and len(self.asked) >= rule.value:
                return rule.kind
            if rule.kind == "time_limit" and self._clock() - self.started_at >= rule.value:
                return rule.kind
            if not self.asked:
                continue  # precision rules need at least one answer
            if (
                rule.kind == "se_threshold"
                and estimate.kind == "theta"
                and estimate.uncertainty is not None
                and estimate.uncertainty <= rule.value
            ):
                return rule.kind
            if (
                rule.kind == "entropy_threshold"
                and estimate.kind == "skill-marginals"
                and estimate.uncertainty is not None
                and estimate.uncertainty <= rule.value
            ):
                return rule.kind
        if not self.remaining:
            return "exhausted"
        return None


def next_question(session: TestSession) -> NextStep:
    """Evaluate stopping rules; if none fire, greedily pick the remaining
    question with the highest selection score (lowest bank index on ties).
    Does not mutate the session."""
    if session.status != "running":
        return NextStep(question_id=None, stop_reason=session.stop_reason or "finished")
    reason = session.triggered_rule()
    if reason is not None:
        return NextStep(question_id=None, stop_reason=reason)
    scores = session.model.selection_scores(session.remaining)
    best, best_score = session.remaining[0], scores[0]
    for qid, score in zip(session.remaining[1:], scores[1:]):
        if score > best_score:
            best, best_score = qid, score
    return NextStep(question_id=best)


def submit_answer(session: TestSession, question_id: str, outcome: int) -> EstimateView:
    """Insert an answer, refresh the estimate, log the step."""
    if session.status != "running":
        raise SessionFinishedError("session already finished")
    if question_id in session.asked_ids:
        raise RepeatedQuestionError(f"question {question_id!r} was already asked")
    if question_id not in session.remaining:
        raise EngineError(f"question {question_id!r} is not in the remaining set")
    item = session.bank.item(question_id)
    if isinstance(outcome, str):
        if outcome not in item.answer_space:
            raise InvalidOutcomeError(f"outcome {outcome!r} not in answer space of {question_id!r}")
        outcome = item.answer_space.index(outcome)
    if not isinstance(outcome, int) or not 0 <= outcome < len(item.answer_space):
        raise InvalidOutcomeError(
            f"outcome {outcome!r} out of range for {question_id!r} "
            f"({len(item.answer_space)} states)"
        )
    session.model.insert_answer(question_id, outcome)
    session.remaining.remove(question_id)
    estimate = session.model.current_estimate()
    session.asked.append(
        TranscriptStep(
            step=len(session.asked) + 1,
            question_id=question_id,
            outcome=outcome,
            estimate=estimate,
        )
    )
    # optional loop step 5: re-predict every remaining answer
    session.last_predictions = (
        session.model.predict_answers(tuple(session.remaining))
        if session.predict_each_step and session.remaining
        else None
    )
    assert not (set(session.remaining) & session.asked_ids)
    return estimate


def transcript_of(session: TestSession, aborted: bool = False) -> Transcript:
    return Transcript(
        records=tuple(session.asked),
        final_estimate=session.model.current_estimate(),
        stop_reason=session.stop_reason or ("aborted" if aborted else "in-progress"),
        aborted=aborted,
    )


def run_scripted(session: TestSession, answer_oracle: Callable[[str], int]) -> Transcript:
    """Drive the full select/ask/insert/update loop with a scripted oracle."""
    while True:
        step = next_question(session)
        if step.finished:
            session.mark_finished(step.stop_reason)
            return transcript_of(session)
        submit_answer(session, step.question_id, answer_oracle(step.question_id))
