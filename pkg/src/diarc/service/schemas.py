"""Request/response models for the /v1 session API."""

from __future__ import annotations

from typing import Literal, Optional

from pydantic import BaseModel, Field


class CandidateCard(BaseModel):
    item_id: str
    category: str
    title: list[str]
    attributes: list[str]
    distance: Optional[float] = None


class CreateSessionRequest(BaseModel):
    category: str
    pool_split: str = "test"
    seed: Optional[int] = None


class CreateSessionResponse(BaseModel):
    session_id: str
    initial_candidate: CandidateCard
    turn_index: int = 0


class FeedbackRequest(BaseModel):
    text: str


class FeedbackResponse(BaseModel):
    turn_index: int
    truncated: bool
    candidates: list[CandidateCard]


class TurnView(BaseModel):
    turn_index: int
    shown_item_id: str
    feedback_text: str
    feedback_tokens: list[str]
    truncated: bool
    candidates: list[CandidateCard]


class SessionView(BaseModel):
    session_id: str
    created_at: str
    category: str
    pool_split: str
    corpus_id: str
    checkpoint_id: str
    status: Literal["active", "completed", "abandoned"]
    initial_candidate: CandidateCard
    turns: list[TurnView] = Field(default_factory=list)
    selected_item_id: Optional[str] = None


class SelectRequest(BaseModel):
    item_id: str


class SelectResponse(BaseModel):
    session_id: str
    status: str
    selected_item_id: str


class MetaResponse(BaseModel):
    categories: list[str]
    pool_splits: list[str]
    feature_dim: int
    corpus_id: str
    checkpoint_id: str
    max_turns: int
    api_version: str = "v1"


class ErrorBody(BaseModel):
    code: str
    message: str
