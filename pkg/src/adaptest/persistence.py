"""Versioned JSON envelopes for models, transcripts and reports.

One envelope format for every artifact kind: diffable, inspectable and
language-portable. Floats go through Python's shortest round-trip repr, so a
reload changes no value. Files are written atomically (temp + rename).
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Mapping, Optional

FORMAT_VERSION = 1
MODEL_KINDS = ("irt", "bn", "nn")


class PersistenceError(ValueError):
    pass


class VersionError(PersistenceError):
    """File written by a newer format; refusing a best-effort parse."""


class DigestError(PersistenceError):
    """Payload digest does not match; the file is corrupt or edited."""


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def payload_digest(payload: Mapping) -> str:
    return hashlib.sha256(canonical_json(payload).encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class ModelEnvelope:
    model_kind: str
    payload: Mapping
    provenance: Mapping = field(default_factory=dict)
    format_version: int = FORMAT_VERSION

    def __post_init__(self):
        if self.model_kind not in MODEL_KINDS:
            raise PersistenceError(f"unknown model kind {self.model_kind!r}")


def make_envelope(
    model_kind: str,
    payload: Mapping,
    seed: Optional[int] = None,
    dataset_digest: Optional[str] = None,
    config: Optional[Mapping] = None,
) -> ModelEnvelope:
    provenance = {
        "created_at": datetime.now(timezone.utc).isoformat(),
        "seed": seed,
        "dataset_digest": dataset_digest,
        "config_digest": payload_digest(config) if config is not None else None,
    }
    return ModelEnvelope(model_kind=model_kind, payload=payload, provenance=provenance)


def save_json_atomic(obj, path) -> None:
    directory = os.path.dirname(os.fspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            json.dump(obj, fh, indent=2, allow_nan=False)
            fh.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_model(envelope: ModelEnvelope, path) -> None:
    doc = {
        "format_version": envelope.format_version,
        "model_kind": envelope.model_kind,
        "payload": envelope.payload,
        "provenance": envelope.provenance,
        "digest": payload_digest(envelope.payload),
    }
    save_json_atomic(doc, path)


def load_model(path) -> ModelEnvelope:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    version = int(doc.get("format_version", -1))
    if version > FORMAT_VERSION:
        raise VersionError(
            f"file format version {version} is newer than supported {FORMAT_VERSION}"
        )
    if version < 1:
        raise VersionError(f"missing or invalid format version {doc.get('format_version')!r}")
    payload = doc["payload"]
    recorded = doc.get("digest")
    actual = payload_digest(payload)
    if recorded != actual:
        raise DigestError(f"digest mismatch: recorded {recorded}, computed {actual}")
    return ModelEnvelope(
        model_kind=doc["model_kind"],
        payload=payload,
        provenance=doc.get("provenance", {}),
        format_version=version,
    )
