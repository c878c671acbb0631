import { afterEach, describe, expect, it, vi } from 'vitest';

import { ServiceClient, ServiceError } from '../src/api';
import type { TrajectoryRecord } from '../src/types';

const history: TrajectoryRecord = {
  id: 't',
  timestamps: ['2000-01-01T00:00'],
  values: [[1]],
  conditions: [['none']],
};

function stubFetch(status: number, body: unknown) {
  const calls: { url: string; init?: RequestInit }[] = [];
  vi.stubGlobal('fetch', vi.fn(async (url: string, init?: RequestInit) => {
    calls.push({ url, init });
    return new Response(JSON.stringify(body), { status });
  }));
  return calls;
}

afterEach(() => {
  vi.unstubAllGlobals();
});

describe('request shapes', () => {
  it('intervene posts the shared EditSpec JSON', async () => {
    const calls = stubFetch(200, {
      schema_version: 1, rollout: history, baseline: history,
      deltas: [[1]], variables: ['x0'],
    });
    const client = new ServiceClient('http://svc');
    await client.intervene(history, [{ variable: 'glucose', mode: 'scale', value: 0.5 }], 10);
    expect(calls[0].url).toBe('http://svc/intervene');
    const sent = JSON.parse(String(calls[0].init?.body));
    expect(sent.edits).toEqual([{ variable: 'glucose', mode: 'scale', value: 0.5 }]);
    expect(sent.steps).toBe(10);
    expect(sent.history.id).toBe('t');
  });

  it('forecast posts history, conditions, target_time', async () => {
    const calls = stubFetch(200, {
      schema_version: 1, prediction: [1], concept: [1], variables: ['x0'],
    });
    await new ServiceClient('http://svc')
      .forecast(history, ['chemo'], '2000-02-01T00:00');
    const sent = JSON.parse(String(calls[0].init?.body));
    expect(sent.conditions).toEqual(['chemo']);
    expect(sent.target_time).toBe('2000-02-01T00:00');
  });

  it('cohort similarity posts the cohort name', async () => {
    const calls = stubFetch(200, { schema_version: 1, r2: 0.5, scores: [0.5] });
    await new ServiceClient('http://svc').cohortSimilarity(history, 'healthy');
    const sent = JSON.parse(String(calls[0].init?.body));
    expect(sent.cohort).toBe('healthy');
    expect(sent.trajectory_b).toBeUndefined();
  });
});

describe('error surfacing', () => {
  it('carries the service error text verbatim', async () => {
    stubFetch(422, { schema_version: 1, code: 'noop_edits', error: 'edits leave the concept unchanged' });
    const client = new ServiceClient('http://svc');
    try {
      await client.intervene(history, [{ variable: 'x0', mode: 'scale', value: 1 }], 2);
      expect.unreachable('should have thrown');
    } catch (err) {
      expect(err).toBeInstanceOf(ServiceError);
      const service = err as ServiceError;
      expect(service.status).toBe(422);
      expect(service.code).toBe('noop_edits');
      expect(service.message).toBe('edits leave the concept unchanged');
    }
  });

  it('rejects unparseable bodies', async () => {
    vi.stubGlobal('fetch', vi.fn(async () => new Response('<html>', { status: 200 })));
    await expect(new ServiceClient('http://svc').health()).rejects.toThrow(/unparseable/);
  });
});
