// Wire shapes of the review service JSON API. Field names follow the
// server exactly; the UI never derives scores or ranks on its own.

export type Action = "Keep" | "Remove";

export interface SessionConfig {
  dataset_root: string;
  manifest: string;
  embeddings: string | null;
  grouping: string;
  normalized: boolean;
  distance: string;
  method: string;
  output: string | null;
  sweep: boolean;
}

export interface SessionInfo {
  session_id: string;
  version: number;
  config: SessionConfig;
  total: number;
  reviewed: number;
  decision_count: number;
}

export interface CandidateEntry {
  image_id: string;
  group_key: string;
  score: number;
  rank: number;
  decision: Action | null;
}

export interface CandidatesPage {
  version: number;
  after_rank: number;
  total: number;
  entries: CandidateEntry[];
}

export interface DecisionAck {
  image_id: string;
  action: Action;
  decision_count: number;
  reviewed: number;
}

export interface RerankAck {
  version: number;
  total: number;
}
