/**
 * Shared types for the explorer: mirrors of the service's JSON wire
 * shapes plus the client-side session state.
 */

/** Trajectory record as written by the dataset files and the service. */
export interface TrajectoryRecord {
  id: string;
  timestamps: string[];
  values: number[][];
  conditions: string[][];
  cf_of?: string;
  divergence?: number;
}

export type EditMode = 'set' | 'scale';

/** One concept edit keyed by variable name; matches the CLI EditSpec. */
export interface ConceptEdit {
  variable: string;
  mode: EditMode;
  value: number;
}

export interface ForecastResponse {
  schema_version: number;
  prediction: number[];
  concept: number[];
  variables: string[];
}

export interface InterveneResponse {
  schema_version: number;
  rollout: TrajectoryRecord;
  baseline: TrajectoryRecord;
  deltas: number[][];
  variables: string[];
}

export interface SimilarityResponse {
  schema_version: number;
  r2: number;
  scores?: number[];
  cohort?: string;
}

export interface ModelInfo {
  schema_version: number;
  kind: string;
  variables: string[];
  config?: Record<string, unknown>;
}

export interface CohortsResponse {
  schema_version: number;
  cohorts: Record<string, number>;
}

export interface ApiErrorBody {
  schema_version: number;
  code: string;
  error: string;
}

/** A pinned rollout; frozen copy of a past intervention result. */
export interface PinnedRollout {
  label: string;
  edits: ConceptEdit[];
  response: InterveneResponse;
}

export interface CohortScore {
  cohort: string;
  r2: number;
  scores: number[];
}

/** Client session; every numeric field is verbatim service output. */
export interface SessionState {
  trajectory: TrajectoryRecord | null;
  variables: string[];
  visibleVariables: Record<string, boolean>;
  edits: ConceptEdit[];
  steps: number;
  lastResult: InterveneResponse | null;
  pinned: PinnedRollout[];
  cohortScores: CohortScore[];
  requestSeq: number;
  appliedSeq: number;
  error: string | null;
}
