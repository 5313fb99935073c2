"""Human-in-the-loop trigger refinement service.

Serves sentences with their top-k auto triggers, records binary
relevant/non-relevant judgments in an append-only JSONL log (last write
wins per (sentence, entity, rank, annotator)), and exports a refined
trigger dataset: judged entities keep their accepted triggers, unjudged
entities fall back to their auto top-k.
"""

from __future__ import annotations

import json
import os
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from autotrig.corpus import (
    Trigger,
    TriggerLabeledExample,
    read_triggers,
    write_triggers,
)


class RefineError(ValueError):
    pass


@dataclass(frozen=True)
class Judgment:
    sentence_id: str
    entity_index: int
    trigger_rank: int
    relevant: bool
    annotator: str
    timestamp: float

    @property
    def key(self) -> tuple[str, int, int, str]:
        return (self.sentence_id, self.entity_index, self.trigger_rank, self.annotator)

    def to_obj(self) -> dict:
        return {
            "sentence_id": self.sentence_id,
            "entity_index": self.entity_index,
            "trigger_rank": self.trigger_rank,
            "relevant": self.relevant,
            "annotator": self.annotator,
            "timestamp": self.timestamp,
        }

    @classmethod
    def from_obj(cls, obj: dict) -> "Judgment":
        return cls(
            sentence_id=str(obj["sentence_id"]),
            entity_index=int(obj["entity_index"]),
            trigger_rank=int(obj["trigger_rank"]),
            relevant=bool(obj["relevant"]),
            annotator=str(obj["annotator"]),
            timestamp=float(obj.get("timestamp", 0.0)),
        )


def _ranked(triggers: Sequence[Trigger]) -> list[Trigger]:
    # rank by importance score, best first; unscored triggers sort last
    return sorted(
        triggers,
        key=lambda t: (-(t.score if t.score is not None else float("-inf")), t.indices),
    )


class RefineSession:
    """In-memory view over an auto-trigger dataset plus a durable judgment
    log. All judgments are replayed from the log on startup, so a restart
    loses nothing that was acknowledged."""

    def __init__(self, dataset_path: str | Path, log_path: str | Path, k_shown: int = 5):
        if k_shown < 1:
            raise RefineError("k_shown must be >= 1")
        self.dataset_path = Path(dataset_path)
        self.log_path = Path(log_path)
        self.k_shown = k_shown
        self.examples = sorted(read_triggers(dataset_path), key=lambda ex: ex.sentence.id)
        self._by_id = {ex.sentence.id: ex for ex in self.examples}
        if len(self._by_id) != len(self.examples):
            raise RefineError("duplicate sentence ids in dataset")
        # candidates per (sentence id, entity index): score-ranked, truncated
        self._candidates: dict[tuple[str, int], list[Trigger]] = {}
        for ex in self.examples:
            for eidx, span in enumerate(ex.sentence.spans):
                ranked = _ranked(ex.triggers_for(span))[: self.k_shown]
                self._candidates[(ex.sentence.id, eidx)] = ranked
        # key -> (log sequence number, judgment); last write wins in log order
        self._judgments: dict[tuple[str, int, int, str], tuple[int, Judgment]] = {}
        self._seq = 0
        self._lock = threading.Lock()
        self._replay()

    # --- log -----------------------------------------------------------------

    def _replay(self) -> None:
        if not self.log_path.exists():
            return
        with open(self.log_path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    j = Judgment.from_obj(json.loads(line))
                except (json.JSONDecodeError, KeyError, ValueError) as exc:
                    raise RefineError(f"{self.log_path}:{lineno}: bad judgment record: {exc}")
                self._seq += 1
                self._judgments[j.key] = (self._seq, j)

    def record(self, j: Judgment) -> None:
        """Durable append (fsync before acknowledging), then last-write-wins
        in the in-memory view."""
        with self._lock:
            with open(self.log_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(j.to_obj(), sort_keys=True) + "\n")
                fh.flush()
                os.fsync(fh.fileno())
            self._seq += 1
            self._judgments[j.key] = (self._seq, j)

    # --- views -----------------------------------------------------------------

    def candidates(self, sentence_id: str, entity_index: int) -> list[Trigger] | None:
        return self._candidates.get((sentence_id, entity_index))

    def latest_by_rank(self, sentence_id: str, entity_index: int) -> dict[int, Judgment]:
        """Last judgment per rank across annotators, in log order."""
        best: dict[int, tuple[int, Judgment]] = {}
        for seq, j in self._judgments.values():
            if j.sentence_id == sentence_id and j.entity_index == entity_index:
                prev = best.get(j.trigger_rank)
                if prev is None or seq > prev[0]:
                    best[j.trigger_rank] = (seq, j)
        return {rank: j for rank, (_, j) in best.items()}

    def progress(self) -> dict:
        judged = 0
        total = 0
        for (sid, eidx), cands in self._candidates.items():
            total += 1
            if not cands:
                continue
            have = {j.trigger_rank for _, j in self._judgments.values()
                    if j.sentence_id == sid and j.entity_index == eidx}
            if all(rank in have for rank in range(len(cands))):
                judged += 1
        per_annotator: dict[str, int] = {}
        for key in self._judgments:
            per_annotator[key[3]] = per_annotator.get(key[3], 0) + 1
        return {
            "judged_entities": judged,
            "total_entities": total,
            "per_annotator": per_annotator,
        }


def export_refined(session: RefineSession, k: int = 2) -> list[TriggerLabeledExample]:
    """Apply the judgment log to the auto dataset.

    Per entity: candidates judged relevant are kept (capped at the best k
    by score) with source "refined"; entities with no judgments at all
    keep their unjudged auto top-k. Exported triggers are always a subset
    of the auto-extracted candidates."""
    out: list[TriggerLabeledExample] = []
    for ex in session.examples:
        kept: list[Trigger] = []
        for eidx, span in enumerate(ex.sentence.spans):
            cands = session.candidates(ex.sentence.id, eidx) or []
            latest = session.latest_by_rank(ex.sentence.id, eidx)
            if not latest:
                kept.extend(cands[:k])
                continue
            relevant = [
                cand for rank, cand in enumerate(cands)
                if rank in latest and latest[rank].relevant
            ]
            for cand in relevant[:k]:
                kept.append(Trigger(cand.entity, cand.indices, cand.score, "refined"))
        out.append(TriggerLabeledExample(ex.sentence, tuple(kept)))
    return out


def write_refined(session: RefineSession, path: str | Path, k: int = 2) -> None:
    write_triggers(path, export_refined(session, k))


# ---------------------------------------------------------------------------
# HTTP app


class JudgmentBody(BaseModel):
    sentence_id: str
    entity_index: int
    trigger_rank: int
    relevant: bool
    annotator: str = "anonymous"


def build_app(session: RefineSession, ui_dir: str | Path | None = None) -> FastAPI:
    app = FastAPI(title="trigger refinement service", docs_url="/api/docs")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )

    @app.exception_handler(RequestValidationError)
    async def malformed_body(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"detail": str(exc)})

    def example_item(ex: TriggerLabeledExample) -> dict:
        spans = ex.sentence.spans
        entities = [{"start": s.start, "end": s.end, "type": s.etype} for s in spans]
        per_entity = []
        for eidx in range(len(spans)):
            cands = session.candidates(ex.sentence.id, eidx) or []
            latest = session.latest_by_rank(ex.sentence.id, eidx)
            per_entity.append(
                [
                    {
                        "rank": rank,
                        "indices": list(t.indices),
                        "score": t.score,
                        "judgment": (
                            None if rank not in latest else latest[rank].relevant
                        ),
                    }
                    for rank, t in enumerate(cands)
                ]
            )
        return {
            "id": ex.sentence.id,
            "tokens": list(ex.sentence.tokens),
            "tags": list(ex.sentence.tags),
            "entities": entities,
            "candidates": per_entity,
        }

    @app.get("/api/examples")
    def get_examples(cursor: str | None = None, limit: int = 10):
        if limit < 1 or limit > 100:
            return JSONResponse(status_code=400, content={"detail": "limit must be in [1, 100]"})
        start = 0
        if cursor not in (None, ""):
            try:
                start = int(cursor)
            except ValueError:
                return JSONResponse(status_code=400, content={"detail": f"bad cursor {cursor!r}"})
            if start < 0:
                return JSONResponse(status_code=400, content={"detail": "cursor must be >= 0"})
        page = session.examples[start : start + limit]
        next_cursor = start + len(page)
        return {
            "items": [example_item(ex) for ex in page],
            "next_cursor": str(next_cursor) if next_cursor < len(session.examples) else None,
            "total": len(session.examples),
        }

    @app.post("/api/judgments", status_code=201)
    def post_judgment(body: JudgmentBody):
        cands = session.candidates(body.sentence_id, body.entity_index)
        if cands is None:
            return JSONResponse(
                status_code=404,
                content={"detail": f"unknown sentence/entity {body.sentence_id}/{body.entity_index}"},
            )
        if not (0 <= body.trigger_rank < len(cands)):
            return JSONResponse(
                status_code=404,
                content={"detail": f"trigger rank {body.trigger_rank} out of range"},
            )
        j = Judgment(
            sentence_id=body.sentence_id,
            entity_index=body.entity_index,
            trigger_rank=body.trigger_rank,
            relevant=body.relevant,
            annotator=body.annotator,
            timestamp=time.time(),
        )
        session.record(j)
        return {"status": "recorded", "key": list(j.key)}

    @app.get("/api/progress")
    def get_progress():
        return session.progress()

    if ui_dir is not None and Path(ui_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app
