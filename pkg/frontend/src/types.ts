// Types mirroring the /v1 session API payloads.

export interface CandidateCard {
  item_id: string;
  category: string;
  title: string[];
  attributes: string[];
  distance: number | null;
  image_url?: string; // optional, for future real-image corpora
}

export interface MetaResponse {
  categories: string[];
  pool_splits: string[];
  feature_dim: number;
  corpus_id: string;
  checkpoint_id: string;
  max_turns: number;
  api_version: string;
}

export interface CreateSessionResponse {
  session_id: string;
  initial_candidate: CandidateCard;
  turn_index: number;
}

export interface FeedbackResponse {
  turn_index: number;
  truncated: boolean;
  candidates: CandidateCard[];
}

export interface TurnView {
  turn_index: number;
  shown_item_id: string;
  feedback_text: string;
  feedback_tokens: string[];
  truncated: boolean;
  candidates: CandidateCard[];
}

export type SessionStatus = "active" | "completed" | "abandoned";

export interface SessionView {
  session_id: string;
  created_at: string;
  category: string;
  pool_split: string;
  corpus_id: string;
  checkpoint_id: string;
  status: SessionStatus;
  initial_candidate: CandidateCard;
  turns: TurnView[];
  selected_item_id: string | null;
}

export interface SelectResponse {
  session_id: string;
  status: string;
  selected_item_id: string;
}

export interface ApiErrorBody {
  code: string;
  message: string;
}
