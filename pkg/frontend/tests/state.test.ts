import { describe, expect, it } from 'vitest';

import {
  applyError,
  applyResult,
  canRollout,
  exportCliCommand,
  exportSession,
  initialState,
  loadTrajectory,
  parseTrajectory,
  pinLast,
  removeEdit,
  reset,
  setCohortScores,
  setEdit,
  setSteps,
  startRequest,
  toggleVariable,
} from '../src/state';
import type { InterveneResponse, TrajectoryRecord } from '../src/types';

const record: TrajectoryRecord = {
  id: 'traj0',
  timestamps: ['2000-01-01T00:00', '2000-01-01T10:00', '2000-01-02T06:00'],
  values: [[1, 2], [1.5, 2.5], [2, 3]],
  conditions: [['none'], ['a'], ['none']],
};

function loaded() {
  return loadTrajectory(initialState(), record, ['glucose', 'wbc']);
}

function fakeResponse(tag: number): InterveneResponse {
  return {
    schema_version: 1,
    rollout: { ...record, id: `rollout${tag}` },
    baseline: { ...record, id: `baseline${tag}` },
    deltas: [[1, 1], [1, 1], [1, 1]],
    variables: ['glucose', 'wbc'],
  };
}

describe('trajectory loading', () => {
  it('parses a dataset line', () => {
    const text = JSON.stringify(record) + '\n';
    expect(parseTrajectory(text).id).toBe('traj0');
  });

  it('rejects malformed input', () => {
    expect(() => parseTrajectory('{}')).toThrow();
    expect(() => parseTrajectory('')).toThrow();
  });

  it('uses model variable names when they match', () => {
    const state = loaded();
    expect(state.variables).toEqual(['glucose', 'wbc']);
    expect(state.visibleVariables).toEqual({ glucose: true, wbc: true });
  });

  it('falls back to indexed names on mismatch', () => {
    const state = loadTrajectory(initialState(), record, ['only-one']);
    expect(state.variables).toEqual(['x0', 'x1']);
  });
});

describe('edits', () => {
  it('only accepts variables present in the trajectory', () => {
    expect(() => setEdit(loaded(), { variable: 'ghost', mode: 'scale', value: 2 }))
      .toThrow(/unknown variable/);
  });

  it('replaces an existing edit for the same variable', () => {
    let state = setEdit(loaded(), { variable: 'glucose', mode: 'scale', value: 0.5 });
    state = setEdit(state, { variable: 'glucose', mode: 'set', value: 1 });
    expect(state.edits).toHaveLength(1);
    expect(state.edits[0].mode).toBe('set');
  });

  it('empty edit set disables rollout', () => {
    const state = loaded();
    expect(canRollout(state)).toBe(false);
    const edited = setEdit(state, { variable: 'wbc', mode: 'scale', value: 0.5 });
    expect(canRollout(edited)).toBe(true);
    expect(canRollout(removeEdit(edited, 'wbc'))).toBe(false);
  });

  it('validates steps', () => {
    expect(() => setSteps(loaded(), 0)).toThrow();
    expect(setSteps(loaded(), 5).steps).toBe(5);
  });
});

describe('request sequencing', () => {
  it('discards stale responses', () => {
    let state = setEdit(loaded(), { variable: 'glucose', mode: 'scale', value: 0.5 });
    const first = startRequest(state);
    const second = startRequest(first.state);
    state = second.state;
    // newer response lands first
    state = applyResult(state, second.seq, fakeResponse(2));
    expect(state.lastResult?.rollout.id).toBe('rollout2');
    // the older response must be ignored
    state = applyResult(state, first.seq, fakeResponse(1));
    expect(state.lastResult?.rollout.id).toBe('rollout2');
  });

  it('stale errors are ignored too', () => {
    let state = loaded();
    const first = startRequest(state);
    const second = startRequest(first.state);
    state = applyResult(second.state, second.seq, fakeResponse(2));
    state = applyError(state, first.seq, 'boom');
    expect(state.error).toBeNull();
  });
});

describe('pins and reset', () => {
  it('pinning freezes the rollout against later edits', () => {
    let state = setEdit(loaded(), { variable: 'glucose', mode: 'scale', value: 0.5 });
    const claim = startRequest(state);
    state = applyResult(claim.state, claim.seq, fakeResponse(1));
    state = pinLast(state, 'pin 1');
    const pinnedBefore = state.pinned[0].response.rollout.id;
    state = setEdit(state, { variable: 'glucose', mode: 'scale', value: 2 });
    const claim2 = startRequest(state);
    state = applyResult(claim2.state, claim2.seq, fakeResponse(2));
    expect(state.pinned[0].response.rollout.id).toBe(pinnedBefore);
    expect(state.pinned[0].edits[0].value).toBe(0.5);
  });

  it('reset clears edits and the working rollout but keeps pins', () => {
    let state = setEdit(loaded(), { variable: 'glucose', mode: 'scale', value: 0.5 });
    const claim = startRequest(state);
    state = applyResult(claim.state, claim.seq, fakeResponse(1));
    state = pinLast(state, 'keep me');
    state = reset(state);
    expect(state.edits).toHaveLength(0);
    expect(state.lastResult).toBeNull();
    expect(state.pinned).toHaveLength(1);
  });
});

describe('cohort scores', () => {
  it('orders groups stably by name', () => {
    const state = setCohortScores(loaded(), [
      { cohort: 'zebra', r2: 0.2, scores: [0.2] },
      { cohort: 'alpha', r2: 0.9, scores: [0.9] },
    ]);
    expect(state.cohortScores.map(s => s.cohort)).toEqual(['alpha', 'zebra']);
  });
});

describe('session export', () => {
  it('exports trajectory id, edits, and steps', () => {
    let state = setEdit(loaded(), { variable: 'glucose', mode: 'scale', value: 0.5 });
    state = setSteps(state, 10);
    expect(exportSession(state)).toEqual({
      trajectory: 'traj0',
      edits: [{ variable: 'glucose', mode: 'scale', value: 0.5 }],
      steps: 10,
    });
  });

  it('renders a reproducible CLI command', () => {
    const state = setEdit(loaded(), { variable: 'glucose', mode: 'scale', value: 0.5 });
    expect(exportCliCommand(state)).toBe(
      'clef intervene --model model.json --data data.jsonl ' +
      '--id traj0 --edit scale:glucose:0.5 --steps 10');
  });
});
