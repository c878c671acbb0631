/**
 * Session state and pure update functions. The UI never computes model
 * numbers itself: state holds service responses verbatim, and reducers
 * only rearrange them. Stale intervention responses are dropped by
 * sequence number (one in-flight request wins, later-started requests
 * supersede earlier ones).
 */

import type {
  CohortScore,
  ConceptEdit,
  InterveneResponse,
  SessionState,
  TrajectoryRecord,
} from './types';

export function initialState(): SessionState {
  return {
    trajectory: null,
    variables: [],
    visibleVariables: {},
    edits: [],
    steps: 10,
    lastResult: null,
    pinned: [],
    cohortScores: [],
    requestSeq: 0,
    appliedSeq: 0,
    error: null,
  };
}

/** Parse one dataset line or a JSON trajectory object. */
export function parseTrajectory(text: string): TrajectoryRecord {
  const firstLine = text.split('\n').find(line => line.trim().length > 0);
  if (!firstLine) {
    throw new Error('empty trajectory input');
  }
  const record = JSON.parse(firstLine) as TrajectoryRecord;
  if (!record.id || !Array.isArray(record.timestamps) || !Array.isArray(record.values)) {
    throw new Error('not a trajectory record: need id, timestamps, values');
  }
  if (record.values.length !== record.timestamps.length) {
    throw new Error('timestamps and values lengths differ');
  }
  return record;
}

export function loadTrajectory(state: SessionState, record: TrajectoryRecord,
                               variables: string[]): SessionState {
  const names = variables.length === (record.values[0]?.length ?? 0)
    ? variables
    : record.values[0].map((_, k) => `x${k}`);
  const visible: Record<string, boolean> = {};
  for (const name of names) {
    visible[name] = true;
  }
  return {
    ...initialState(),
    trajectory: record,
    variables: names,
    visibleVariables: visible,
    pinned: state.pinned,
  };
}

export function toggleVariable(state: SessionState, name: string): SessionState {
  if (!(name in state.visibleVariables)) {
    return state;
  }
  return {
    ...state,
    visibleVariables: { ...state.visibleVariables, [name]: !state.visibleVariables[name] },
  };
}

/** Add or replace the edit for a variable; variables must exist. */
export function setEdit(state: SessionState, edit: ConceptEdit): SessionState {
  if (!state.variables.includes(edit.variable)) {
    throw new Error(`unknown variable ${edit.variable}`);
  }
  if (!Number.isFinite(edit.value)) {
    throw new Error('edit value must be finite');
  }
  const edits = state.edits.filter(e => e.variable !== edit.variable).concat([edit]);
  return { ...state, edits };
}

export function removeEdit(state: SessionState, variable: string): SessionState {
  return { ...state, edits: state.edits.filter(e => e.variable !== variable) };
}

export function setSteps(state: SessionState, steps: number): SessionState {
  if (!Number.isInteger(steps) || steps < 1) {
    throw new Error('steps must be a positive integer');
  }
  return { ...state, steps };
}

/** Rollout is only allowed with at least one edit staged. */
export function canRollout(state: SessionState): boolean {
  return state.trajectory !== null && state.edits.length > 0;
}

/** Claim a sequence number for a new intervention request. */
export function startRequest(state: SessionState): { state: SessionState; seq: number } {
  const seq = state.requestSeq + 1;
  return { state: { ...state, requestSeq: seq, error: null }, seq };
}

/** Apply a response unless a later request already landed. */
export function applyResult(state: SessionState, seq: number,
                            response: InterveneResponse): SessionState {
  if (seq <= state.appliedSeq) {
    return state; // stale: a newer response has been applied already
  }
  return { ...state, appliedSeq: seq, lastResult: response, error: null };
}

export function applyError(state: SessionState, seq: number, message: string): SessionState {
  if (seq <= state.appliedSeq) {
    return state;
  }
  return { ...state, appliedSeq: seq, error: message };
}

export function pinLast(state: SessionState, label: string): SessionState {
  if (!state.lastResult) {
    return state;
  }
  const pin = {
    label,
    edits: state.edits.map(e => ({ ...e })),
    response: state.lastResult,
  };
  return { ...state, pinned: [...state.pinned, pin] };
}

/** Reset clears the edit set and the working rollout; pins survive. */
export function reset(state: SessionState): SessionState {
  return { ...state, edits: [], lastResult: null, error: null };
}

export function setCohortScores(state: SessionState, scores: CohortScore[]): SessionState {
  const ordered = [...scores].sort((a, b) => a.cohort.localeCompare(b.cohort));
  return { ...state, cohortScores: ordered };
}

/** Session export: enough to replay the intervention from the CLI. */
export interface SessionExport {
  trajectory: string;
  edits: ConceptEdit[];
  steps: number;
}

export function exportSession(state: SessionState): SessionExport {
  if (!state.trajectory) {
    throw new Error('no trajectory loaded');
  }
  return {
    trajectory: state.trajectory.id,
    edits: state.edits.map(e => ({ ...e })),
    steps: state.steps,
  };
}

/** Equivalent reproducible CLI invocation for the current session. */
export function exportCliCommand(state: SessionState, dataPath = 'data.jsonl',
                                 modelPath = 'model.json'): string {
  const session = exportSession(state);
  const edits = session.edits
    .map(e => `--edit ${e.mode}:${e.variable}:${e.value}`)
    .join(' ');
  return `clef intervene --model ${modelPath} --data ${dataPath} ` +
    `--id ${session.trajectory} ${edits} --steps ${session.steps}`;
}
