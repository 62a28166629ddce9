"""Session-oriented HTTP API for live adaptive tests.

Sessions are held in memory; models are loaded once at startup and shared
immutably. Per-session mutations are serialized: a second in-flight mutation
is rejected with 409. Clients never see correct-answer metadata or model
parameters, and all state transitions are validated server-side.
"""

from __future__ import annotations

import secrets
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from pydantic import BaseModel, ConfigDict

from .adapters import model_factory_from_envelope
from .data import QuestionBank, load_bank
from .engine import (
    InvalidOutcomeError,
    NextStep,
    StoppingRule,
    TestSession,
    next_question,
    submit_answer,
    transcript_of,
)
from .persistence import ModelEnvelope, load_model
from .psychometrics import IQ_SCALE

DEFAULT_ALLOWED_STOPPING = ("max_questions", "se_threshold", "entropy_threshold")


@dataclass(frozen=True)
class ServiceSettings:
    transcript_access: str = "finished"  # always | finished | never
    allowed_client_stopping: tuple[str, ...] = DEFAULT_ALLOWED_STOPPING
    default_stopping: tuple[StoppingRule, ...] = ()

    def __post_init__(self):
        if self.transcript_access not in ("always", "finished", "never"):
            raise ValueError(f"bad transcript_access {self.transcript_access!r}")


@dataclass
class RegisteredModel:
    model_id: str
    envelope: ModelEnvelope
    bank: QuestionBank
    factory: object  # () -> StudentModel
    score_stats: Optional[dict] = None


class ModelStore:
    """Immutable model catalog assembled at startup."""

    def __init__(self):
        self._models: dict[str, RegisteredModel] = {}

    def register(self, model_id: str, envelope: ModelEnvelope, bank: QuestionBank) -> None:
        if model_id in self._models:
            raise ValueError(f"duplicate model id {model_id!r}")
        factory, effective_bank = model_factory_from_envelope(envelope, bank)
        self._models[model_id] = RegisteredModel(
            model_id=model_id,
            envelope=envelope,
            bank=effective_bank,
            factory=factory,
            score_stats=envelope.payload.get("score_stats"),
        )

    @classmethod
    def from_directory(cls, models_dir) -> "ModelStore":
        """Load bank.json plus every *.model.json envelope in the directory."""
        models_dir = Path(models_dir)
        bank = load_bank(models_dir / "bank.json")
        store = cls()
        for path in sorted(models_dir.glob("*.model.json")):
            envelope = load_model(path)
            store.register(path.name[: -len(".model.json")], envelope, bank)
        if not store._models:
            raise ValueError(f"no *.model.json files in {models_dir}")
        return store

    def get(self, model_id: str) -> Optional[RegisteredModel]:
        return self._models.get(model_id)

    def catalog(self) -> list[dict]:
        return [
            {
                "model_id": m.model_id,
                "kind": m.envelope.model_kind,
                "items": len(m.bank.items),
            }
            for m in self._models.values()
        ]


@dataclass
class SessionHolder:
    session: TestSession
    model_id: str
    current: NextStep
    score_stats: Optional[dict]
    lock: threading.Lock = field(default_factory=threading.Lock)


class CreateSessionBody(BaseModel):
    model_config = ConfigDict(protected_namespaces=())
    model_id: str
    stopping: Optional[list[dict]] = None


class AnswerBody(BaseModel):
    question_id: str
    outcome: object


def _error(status: int, code: str, message: str, detail=None) -> JSONResponse:
    return JSONResponse(
        status_code=status, content={"code": code, "message": message, "detail": detail}
    )


def create_app(store: ModelStore, settings: Optional[ServiceSettings] = None) -> FastAPI:
    settings = settings or ServiceSettings()
    app = FastAPI(title="adaptest session service")
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )
    sessions: dict[str, SessionHolder] = {}

    @app.exception_handler(RequestValidationError)
    async def validation_handler(request: Request, exc: RequestValidationError):
        return _error(422, "invalid_request", "request body failed validation", exc.errors())

    def resource(session_id: str, holder: SessionHolder) -> dict:
        session = holder.session
        finished = session.status == "finished"
        current = None
        if not finished and holder.current.question_id is not None:
            item = session.bank.item(holder.current.question_id)
            current = {
                "id": item.id,
                "text": item.text,
                "options": list(item.answer_space),
            }
        estimate = session.model.current_estimate().to_payload()
        if holder.score_stats and estimate.get("expected_score") is not None:
            mean = float(holder.score_stats["mean"])
            sd = float(holder.score_stats["sd"])
            if sd > 0:
                z = (estimate["expected_score"] - mean) / sd
                estimate["standardized"] = {
                    "z": z,
                    "iq": IQ_SCALE.target_mean + IQ_SCALE.target_sd * z,
                }
        return {
            "session_id": session_id,
            "model_id": holder.model_id,
            "state": session.status,
            "current_question": current,
            "progress": {"asked": len(session.asked), "total": len(session.bank.items)},
            "estimate": estimate,
            "stop_reason": session.stop_reason,
        }

    def advance(holder: SessionHolder) -> None:
        holder.current = next_question(holder.session)
        if holder.current.finished:
            holder.session.mark_finished(holder.current.stop_reason)

    @app.get("/models")
    def list_models():
        return {"models": store.catalog()}

    @app.post("/sessions", status_code=201)
    def create_session(body: CreateSessionBody):
        registered = store.get(body.model_id)
        if registered is None:
            return _error(404, "unknown_model", f"no model {body.model_id!r}")
        client_rules: list[StoppingRule] = []
        for rule_doc in body.stopping or []:
            try:
                rule = StoppingRule.from_payload(rule_doc)
            except Exception as exc:
                return _error(422, "invalid_stopping", str(exc))
            if rule.kind not in settings.allowed_client_stopping:
                return _error(
                    422,
                    "stopping_not_allowed",
                    f"stopping kind {rule.kind!r} is not permitted by this deployment",
                )
            client_rules.append(rule)
        # deployment defaults always stay in force; clients can only tighten
        stopping = tuple(client_rules) + settings.default_stopping
        session = TestSession(registered.factory(), registered.bank, stopping)
        holder = SessionHolder(
            session=session,
            model_id=body.model_id,
            current=NextStep(question_id=None),
            score_stats=registered.score_stats,
        )
        advance(holder)
        session_id = secrets.token_urlsafe(16)
        sessions[session_id] = holder
        return resource(session_id, holder)

    @app.get("/sessions/{session_id}")
    def get_session(session_id: str):
        holder = sessions.get(session_id)
        if holder is None:
            return _error(404, "unknown_session", "no such session")
        return resource(session_id, holder)

    @app.post("/sessions/{session_id}/answers")
    def answer(session_id: str, body: AnswerBody):
        holder = sessions.get(session_id)
        if holder is None:
            return _error(404, "unknown_session", "no such session")
        if not holder.lock.acquire(blocking=False):
            return _error(409, "busy", "another mutation is in flight for this session")
        try:
            session = holder.session
            if session.status != "running":
                return _error(409, "finished", "session already finished")
            if holder.current.question_id != body.question_id:
                return _error(
                    409,
                    "stale_question",
                    "submitted question is not the current question",
                    {"current_question": holder.current.question_id},
                )
            try:
                submit_answer(session, body.question_id, body.outcome)
            except InvalidOutcomeError as exc:
                return _error(422, "invalid_outcome", str(exc))
            advance(holder)
            return resource(session_id, holder)
        finally:
            holder.lock.release()

    @app.get("/sessions/{session_id}/transcript")
    def transcript(session_id: str):
        holder = sessions.get(session_id)
        if holder is None:
            return _error(404, "unknown_session", "no such session")
        running = holder.session.status == "running"
        if settings.transcript_access == "never" or (
            running and settings.transcript_access != "always"
        ):
            return _error(403, "transcript_disabled", "transcript access is disabled")
        return transcript_of(holder.session).to_payload()

    return app


def serve(
    store: ModelStore,
    settings: Optional[ServiceSettings] = None,
    host: str = "127.0.0.1",
    port: int = 8000,
    ui_dir: Optional[str] = None,
) -> None:
    import uvicorn

    app = create_app(store, settings)
    if ui_dir:
        from fastapi.staticfiles import StaticFiles

        app.mount("/app", StaticFiles(directory=ui_dir, html=True), name="ui")
    uvicorn.run(app, host=host, port=port, log_level="warning")
