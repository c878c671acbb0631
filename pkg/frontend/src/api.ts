/**
 * Typed client for the local inference service. Every method returns the
 * parsed JSON body; non-2xx responses throw ServiceError carrying the
 * service's own error text verbatim so the UI can surface it unchanged.
 */

import type {
  ApiErrorBody,
  CohortsResponse,
  ConceptEdit,
  ForecastResponse,
  InterveneResponse,
  ModelInfo,
  SimilarityResponse,
  TrajectoryRecord,
} from './types';

export class ServiceError extends Error {
  readonly status: number;
  readonly code: string;

  constructor(status: number, code: string, message: string) {
    super(message);
    this.status = status;
    this.code = code;
  }
}

async function request<T>(base: string, method: string, path: string,
                          body?: unknown): Promise<T> {
  const response = await fetch(`${base}${path}`, {
    method,
    headers: body === undefined ? undefined : { 'Content-Type': 'application/json' },
    body: body === undefined ? undefined : JSON.stringify(body),
  });
  const text = await response.text();
  let parsed: unknown = null;
  try {
    parsed = text ? JSON.parse(text) : null;
  } catch {
    throw new ServiceError(response.status, 'bad_json', `unparseable response: ${text}`);
  }
  if (!response.ok) {
    const err = parsed as ApiErrorBody | null;
    throw new ServiceError(response.status, err?.code ?? 'error',
                           err?.error ?? `HTTP ${response.status}`);
  }
  return parsed as T;
}

export class ServiceClient {
  constructor(readonly baseUrl: string) {}

  health(): Promise<{ status: string }> {
    return request(this.baseUrl, 'GET', '/health');
  }

  model(): Promise<ModelInfo> {
    return request(this.baseUrl, 'GET', '/model');
  }

  cohorts(): Promise<CohortsResponse> {
    return request(this.baseUrl, 'GET', '/cohorts');
  }

  forecast(history: TrajectoryRecord, conditions: string[],
           targetTime: string): Promise<ForecastResponse> {
    return request(this.baseUrl, 'POST', '/forecast', {
      history, conditions, target_time: targetTime,
    });
  }

  intervene(history: TrajectoryRecord, edits: ConceptEdit[],
            steps: number): Promise<InterveneResponse> {
    return request(this.baseUrl, 'POST', '/intervene', {
      history,
      edits: edits.map(e => ({ variable: e.variable, mode: e.mode, value: e.value })),
      steps,
    });
  }

  similarity(a: TrajectoryRecord, b: TrajectoryRecord,
             symmetric = false): Promise<SimilarityResponse> {
    return request(this.baseUrl, 'POST', '/similarity', {
      trajectory_a: a, trajectory_b: b, symmetric,
    });
  }

  cohortSimilarity(a: TrajectoryRecord, cohort: string): Promise<SimilarityResponse> {
    return request(this.baseUrl, 'POST', '/similarity', {
      trajectory_a: a, cohort,
    });
  }
}
