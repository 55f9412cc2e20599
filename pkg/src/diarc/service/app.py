"""HTTP session service: interactive retrieval for human users.

The retrieval model, attribute predictor, and candidate pools are loaded
once at startup and shared read-only across handlers; each session's
journal is written under a per-session lock before the response leaves.
Human sessions hold no target item anywhere, so the no-leakage property
is structural.
"""

from __future__ import annotations

import datetime as _dt
import os
import threading
import uuid
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from ..captioner import FEEDBACK_LEN, AttributePredictor, CaptionVocabulary
from ..corpus import GarmentItem, filter_items, load_corpus
from ..pipeline import file_sha256, load_retriever
from ..retriever import CandidatePool, DialogTurn, RetrievalModel
from .schemas import (
    CandidateCard,
    CreateSessionRequest,
    CreateSessionResponse,
    ErrorBody,
    FeedbackRequest,
    FeedbackResponse,
    MetaResponse,
    SelectRequest,
    SelectResponse,
    SessionView,
    TurnView,
)
from .store import SessionStore

DATA_DIR_ENV = "DIARC_DATA_DIR"


class ServiceError(Exception):
    def __init__(self, status: int, code: str, message: str):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message


@dataclass
class LiveSession:
    view: SessionView
    dialog_turns: list[DialogTurn] = field(default_factory=list)
    shown_ids: list[str] = field(default_factory=list)
    lock: threading.Lock = field(default_factory=threading.Lock)

    @property
    def current_shown_id(self) -> str:
        if self.view.turns:
            return self.view.turns[-1].candidates[0].item_id
        return self.view.initial_candidate.item_id


class ServiceState:
    def __init__(self, corpus_dir: str | Path, checkpoint: str | Path,
                 data_dir: str | Path | None = None,
                 allow_repeats: bool = False):
        corpus_dir = Path(corpus_dir)
        items, vocab, _ = load_corpus(corpus_dir)
        self.items = items
        self.vocab = vocab
        model, predictor, caption_vocab = load_retriever(checkpoint, vocab)
        self.model: RetrievalModel = model
        self.predictor: AttributePredictor = predictor
        self.caption_vocab: CaptionVocabulary = caption_vocab
        self.allow_repeats = allow_repeats
        self.corpus_id = file_sha256(corpus_dir / "items.jsonl")[:16]
        self.checkpoint_id = file_sha256(checkpoint)[:16]
        self.categories = sorted({it.category for it in items})
        self.splits = sorted({it.split for it in items})
        self.pools: dict[tuple[str, str], CandidatePool] = {}
        for cat in self.categories:
            for split in self.splits:
                subset = filter_items(items, category=cat, split=split)
                if subset:
                    self.pools[(cat, split)] = CandidatePool(
                        subset, name=f"{cat}/{split}")
        root = data_dir or os.environ.get(DATA_DIR_ENV) or "diarc-data"
        self.store = SessionStore(root)
        self.sessions: dict[str, LiveSession] = {}
        self.registry_lock = threading.Lock()

    # -- helpers -------------------------------------------------------------

    def pool_for(self, category: str, split: str) -> CandidatePool:
        if category not in self.categories:
            raise ServiceError(
                404, "unknown_category",
                f"unknown category {category!r}; valid: {self.categories}")
        pool = self.pools.get((category, split))
        if pool is None:
            raise ServiceError(
                404, "unknown_split",
                f"no pool for split {split!r}; valid: {self.splits}")
        return pool

    def card(self, item: GarmentItem, distance: float | None = None) -> CandidateCard:
        return CandidateCard(
            item_id=item.id, category=item.category, title=list(item.title),
            attributes=self.vocab.names(sorted(item.true_attributes)),
            distance=distance,
        )

    def get_session(self, session_id: str) -> LiveSession:
        with self.registry_lock:
            live = self.sessions.get(session_id)
        if live is not None:
            return live
        loaded = self._load_from_disk(session_id)
        if loaded is None:
            raise ServiceError(404, "unknown_session",
                               f"no session {session_id!r}")
        with self.registry_lock:
            return self.sessions.setdefault(session_id, loaded)

    def _load_from_disk(self, session_id: str) -> LiveSession | None:
        records = self.store.load(session_id)
        if not records:
            return None
        header = records[0]
        view = SessionView(**header["session"])
        live = LiveSession(view=view)
        pool = self.pools[(view.category, view.pool_split)]
        for rec in records[1:]:
            if rec["kind"] == "turn":
                turn = TurnView(**rec["turn"])
                view.turns.append(turn)
                shown = pool.item(turn.shown_item_id)
                live.dialog_turns.append(self._dialog_turn(shown, turn.feedback_tokens))
                live.shown_ids.append(shown.id)
            elif rec["kind"] == "select":
                view.status = "completed"
                view.selected_item_id = rec["item_id"]
            elif rec["kind"] == "abandon":
                view.status = "abandoned"
        return live

    def _dialog_turn(self, shown: GarmentItem, tokens: list[str]) -> DialogTurn:
        return DialogTurn(
            retrieved_item_id=shown.id,
            feedback_tokens=self.caption_vocab.encode(tokens, FEEDBACK_LEN),
            retrieved_item_attributes=self.predictor.predict_attributes(shown),
            retrieved_item_feature=shown.feature,
        )

    def replay_candidates(self, view: SessionView) -> list[list[str]]:
        """Recompute each turn's candidate ids from the journaled feedback."""
        pool = self.pool_for(view.category, view.pool_split)
        turns: list[DialogTurn] = []
        shown = pool.item(view.initial_candidate.item_id)
        shown_ids: list[str] = []
        out = []
        for turn in view.turns:
            turns.append(self._dialog_turn(shown, turn.feedback_tokens))
            shown_ids.append(shown.id)
            q = self.model.encode_history(turns)
            exclude = set() if self.allow_repeats else set(shown_ids)
            top = pool.top_k(q, 10, exclude)
            out.append([item_id for item_id, _ in top])
            shown = pool.item(top[0][0])
        return out


def create_app(corpus_dir: str | Path, checkpoint: str | Path,
               data_dir: str | Path | None = None,
               allow_repeats: bool = False) -> FastAPI:
    state = ServiceState(corpus_dir, checkpoint, data_dir=data_dir,
                         allow_repeats=allow_repeats)
    app = FastAPI(title="diarc session service", version="1.0")
    app.state.service = state

    @app.exception_handler(ServiceError)
    async def _service_error(request: Request, exc: ServiceError):
        body = ErrorBody(code=exc.code, message=exc.message)
        return JSONResponse(status_code=exc.status, content=body.model_dump())

    @app.get("/v1/meta", response_model=MetaResponse)
    def meta() -> MetaResponse:
        return MetaResponse(
            categories=state.categories,
            pool_splits=state.splits,
            feature_dim=state.model.config.feature_dim,
            corpus_id=state.corpus_id,
            checkpoint_id=state.checkpoint_id,
            max_turns=state.model.config.max_turns,
        )

    @app.post("/v1/sessions", response_model=CreateSessionResponse, status_code=201)
    def create_session(req: CreateSessionRequest) -> CreateSessionResponse:
        pool = state.pool_for(req.category, req.pool_split)
        if req.seed is not None:
            rng = np.random.default_rng([req.seed, 47])
        else:
            rng = np.random.default_rng()
        initial = pool.items[int(rng.integers(len(pool)))]
        session_id = uuid.uuid4().hex
        view = SessionView(
            session_id=session_id,
            created_at=_dt.datetime.now(_dt.timezone.utc).isoformat(),
            category=req.category, pool_split=req.pool_split,
            corpus_id=state.corpus_id, checkpoint_id=state.checkpoint_id,
            status="active", initial_candidate=state.card(initial),
        )
        live = LiveSession(view=view)
        # write-ahead: the journal record lands before the response
        state.store.append(session_id, {"kind": "created",
                                        "session": view.model_dump()})
        with state.registry_lock:
            state.sessions[session_id] = live
        return CreateSessionResponse(session_id=session_id,
                                     initial_candidate=view.initial_candidate)

    @app.post("/v1/sessions/{session_id}/feedback",
              response_model=FeedbackResponse)
    def feedback(session_id: str, req: FeedbackRequest) -> FeedbackResponse:
        live = state.get_session(session_id)
        with live.lock:
            view = live.view
            if view.status == "completed":
                raise ServiceError(409, "session_completed",
                                   "session is completed; feedback is frozen")
            if view.status == "abandoned":
                raise ServiceError(409, "session_abandoned",
                                   "session was abandoned")
            text = req.text.strip()
            if not text:
                raise ServiceError(400, "empty_feedback",
                                   "feedback text must be non-empty")
            if len(live.dialog_turns) >= state.model.config.max_turns:
                raise ServiceError(
                    409, "turn_limit",
                    f"session reached the {state.model.config.max_turns}-turn limit")
            tokens = state.caption_vocab.tokenize(text)
            truncated = len(tokens) > FEEDBACK_LEN
            tokens = tokens[:FEEDBACK_LEN]
            pool = state.pool_for(view.category, view.pool_split)
            shown = pool.item(live.current_shown_id)
            live.dialog_turns.append(state._dialog_turn(shown, tokens))
            live.shown_ids.append(shown.id)
            q = state.model.encode_history(live.dialog_turns)
            exclude = set() if state.allow_repeats else set(live.shown_ids)
            top = pool.top_k(q, 10, exclude)
            cards = [state.card(pool.item(i), d) for i, d in top]
            turn = TurnView(
                turn_index=len(view.turns) + 1,
                shown_item_id=shown.id,
                feedback_text=text, feedback_tokens=tokens,
                truncated=truncated, candidates=cards,
            )
            state.store.append(session_id, {"kind": "turn",
                                            "turn": turn.model_dump()})
            view.turns.append(turn)
            return FeedbackResponse(turn_index=turn.turn_index,
                                    truncated=truncated, candidates=cards)

    @app.get("/v1/sessions/{session_id}", response_model=SessionView)
    def get_session(session_id: str) -> SessionView:
        return state.get_session(session_id).view

    @app.post("/v1/sessions/{session_id}/select", response_model=SelectResponse)
    def select(session_id: str, req: SelectRequest) -> SelectResponse:
        live = state.get_session(session_id)
        with live.lock:
            view = live.view
            if view.status == "completed":
                raise ServiceError(409, "session_completed",
                                   "session is already completed")
            pool = state.pool_for(view.category, view.pool_split)
            if req.item_id not in pool.id_to_index:
                raise ServiceError(404, "unknown_item",
                                   f"item {req.item_id!r} not in pool")
            state.store.append(session_id, {"kind": "select",
                                            "item_id": req.item_id})
            view.status = "completed"
            view.selected_item_id = req.item_id
            return SelectResponse(session_id=session_id, status="completed",
                                  selected_item_id=req.item_id)

    @app.delete("/v1/sessions/{session_id}", response_model=SessionView)
    def abandon(session_id: str) -> SessionView:
        live = state.get_session(session_id)
        with live.lock:
            if live.view.status == "active":
                state.store.append(session_id, {"kind": "abandon"})
                live.view.status = "abandoned"
            return live.view

    return app
