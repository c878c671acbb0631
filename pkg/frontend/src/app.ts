/**
 * DOM wiring for the explorer. All numbers rendered here come from
 * service responses held in the session state; this module only formats
 * and places them.
 */

import { ServiceClient, ServiceError } from './api';
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
} from './state';
import { barChartSvg, deltaRowHtml, lineChartSvg, Segment, SeriesSpec } from './chart';
import type { CohortScore, EditMode, SessionState, TrajectoryRecord } from './types';

const PALETTE = ['#2563eb', '#dc2626', '#16a34a', '#9333ea', '#ea580c',
                 '#0891b2', '#ca8a04', '#db2777'];

let state: SessionState = initialState();
let client = new ServiceClient(defaultBaseUrl());

function defaultBaseUrl(): string {
  const fromQuery = new URLSearchParams(window.location.search).get('service');
  return fromQuery ?? 'http://127.0.0.1:8642';
}

function $(id: string): HTMLElement {
  const node = document.getElementById(id);
  if (!node) {
    throw new Error(`missing element #${id}`);
  }
  return node;
}

function setStatus(text: string, isError = false): void {
  const node = $('status');
  node.textContent = text;
  node.className = isError ? 'status error' : 'status';
}

// ----------------------------------------------------------------------
// rendering

function seriesFor(record: TrajectoryRecord, generated: TrajectoryRecord | null): SeriesSpec[] {
  return state.variables
    .map((name, k) => ({ name, k }))
    .filter(({ name }) => state.visibleVariables[name])
    .map(({ name, k }) => {
      const observed = record.values.map(row => row[k]);
      const segments: Segment[] = [{ values: observed, kind: 'observed' }];
      if (generated) {
        segments.push({
          values: generated.values.map(row => row[k]),
          kind: 'generated',
        });
      }
      return { name, color: PALETTE[k % PALETTE.length], segments };
    });
}

function renderTrajectory(): void {
  const host = $('trajectory-chart');
  if (!state.trajectory) {
    host.innerHTML = '<p class="placeholder">load a trajectory to begin</p>';
    return;
  }
  host.innerHTML = lineChartSvg(seriesFor(state.trajectory, state.lastResult?.rollout ?? null));
  const toggles = $('variable-toggles');
  toggles.innerHTML = '';
  state.variables.forEach(name => {
    const label = document.createElement('label');
    const box = document.createElement('input');
    box.type = 'checkbox';
    box.checked = state.visibleVariables[name];
    box.addEventListener('change', () => {
      state = toggleVariable(state, name);
      renderTrajectory();
      renderComparison();
    });
    label.appendChild(box);
    label.appendChild(document.createTextNode(name));
    toggles.appendChild(label);
  });
}

function renderEditTable(): void {
  const body = $('edit-rows');
  body.innerHTML = '';
  state.variables.forEach(name => {
    const existing = state.edits.find(e => e.variable === name);
    const row = document.createElement('tr');
    row.innerHTML = `
      <td>${name}</td>
      <td><select data-role="mode">
        <option value="">no edit</option>
        <option value="scale"${existing?.mode === 'scale' ? ' selected' : ''}>scale</option>
        <option value="set"${existing?.mode === 'set' ? ' selected' : ''}>set</option>
      </select></td>
      <td><input data-role="value" type="number" step="0.1"
        value="${existing ? existing.value : ''}"></td>`;
    const mode = row.querySelector('select') as HTMLSelectElement;
    const value = row.querySelector('input') as HTMLInputElement;
    const update = () => {
      if (!mode.value || value.value === '') {
        state = removeEdit(state, name);
      } else {
        state = setEdit(state, {
          variable: name,
          mode: mode.value as EditMode,
          value: Number(value.value),
        });
      }
      syncControls();
    };
    mode.addEventListener('change', update);
    value.addEventListener('change', update);
    body.appendChild(row);
  });
}

function renderComparison(): void {
  const host = $('comparison');
  const deltaHost = $('delta-table');
  if (!state.lastResult || !state.trajectory) {
    host.innerHTML = '<p class="placeholder">no rollout yet</p>';
    deltaHost.innerHTML = '';
    renderPins();
    return;
  }
  const { baseline, rollout, deltas } = state.lastResult;
  const baseSvg = lineChartSvg(seriesFor(state.trajectory, baseline));
  const editSvg = lineChartSvg(seriesFor(state.trajectory, rollout));
  host.innerHTML = `
    <div class="side"><h3>baseline rollout</h3>${baseSvg}</div>
    <div class="side"><h3>with edits</h3>${editSvg}</div>`;
  const header = state.variables.map(v => `<th>${v}</th>`).join('');
  const rows = deltas.map(row => deltaRowHtml(state.variables, row)).join('');
  deltaHost.innerHTML = `
    <h3>delta (baseline / edited), 1 = unchanged</h3>
    <table><thead><tr>${header}</tr></thead><tbody>${rows}</tbody></table>`;
  renderPins();
}

function renderPins(): void {
  const host = $('pins');
  if (state.pinned.length === 0) {
    host.innerHTML = '';
    return;
  }
  const blocks = state.pinned.map(pin => {
    const edits = pin.edits.map(e => `${e.mode}:${e.variable}:${e.value}`).join(', ');
    const chart = state.trajectory
      ? lineChartSvg(seriesFor(state.trajectory, pin.response.rollout))
      : '';
    return `<div class="pin"><h4>${pin.label}</h4><p>${edits}</p>${chart}</div>`;
  });
  host.innerHTML = `<h3>pinned rollouts</h3>${blocks.join('')}`;
}

function renderCohorts(): void {
  const host = $('cohort-chart');
  if (state.cohortScores.length === 0) {
    host.innerHTML = '<p class="placeholder">no cohort scores yet</p>';
    return;
  }
  const bars = state.cohortScores.map(score => {
    const sorted = [...score.scores].sort((a, b) => a - b);
    return {
      label: score.cohort,
      mean: score.r2,
      low: sorted[0] ?? score.r2,
      high: sorted[sorted.length - 1] ?? score.r2,
    };
  });
  host.innerHTML = barChartSvg(bars);
}

function syncControls(): void {
  ($('rollout-btn') as HTMLButtonElement).disabled = !canRollout(state);
  ($('pin-btn') as HTMLButtonElement).disabled = !state.lastResult;
  ($('export-btn') as HTMLButtonElement).disabled = !state.trajectory;
  if (state.error) {
    setStatus(state.error, true);
  }
}

function renderAll(): void {
  renderTrajectory();
  renderEditTable();
  renderComparison();
  renderCohorts();
  syncControls();
}

// ----------------------------------------------------------------------
// actions

async function doRollout(): Promise<void> {
  const trajectory = state.trajectory;
  if (!trajectory || !canRollout(state)) {
    return;
  }
  const claim = startRequest(state);
  state = claim.state;
  setStatus(`rollout #${claim.seq} in flight...`);
  try {
    const response = await client.intervene(trajectory, state.edits, state.steps);
    state = applyResult(state, claim.seq, response);
    setStatus(`rollout #${claim.seq} done`);
  } catch (err) {
    const message = err instanceof ServiceError
      ? `service ${err.status} ${err.code}: ${err.message}`
      : String(err);
    state = applyError(state, claim.seq, message);
  }
  renderComparison();
  syncControls();
  void refreshCohorts();
}

async function refreshCohorts(): Promise<void> {
  const target = state.lastResult?.rollout ?? state.trajectory;
  if (!target) {
    return;
  }
  try {
    const listing = await client.cohorts();
    const names = Object.keys(listing.cohorts).sort();
    const scores: CohortScore[] = [];
    for (const name of names) {
      const result = await client.cohortSimilarity(target, name);
      scores.push({ cohort: name, r2: result.r2, scores: result.scores ?? [result.r2] });
    }
    state = setCohortScores(state, scores);
    renderCohorts();
  } catch (err) {
    // cohort panel is optional; show the notice without clobbering results
    $('cohort-chart').innerHTML = `<p class="placeholder">${String(err)}</p>`;
  }
}

function doExport(): void {
  const session = exportSession(state);
  const command = exportCliCommand(state);
  const payload = JSON.stringify({ ...session, cli: command }, null, 2);
  $('export-output').textContent = payload;
}

function wire(): void {
  ($('file-input') as HTMLInputElement).addEventListener('change', async event => {
    const input = event.target as HTMLInputElement;
    const file = input.files?.[0];
    if (!file) {
      return;
    }
    try {
      const record = parseTrajectory(await file.text());
      let variables: string[] = [];
      try {
        variables = (await client.model()).variables;
      } catch {
        variables = [];
      }
      state = loadTrajectory(state, record, variables);
      setStatus(`loaded ${record.id} (${record.values.length} steps)`);
      renderAll();
      void refreshCohorts();
    } catch (err) {
      setStatus(`could not load trajectory: ${String(err)}`, true);
    }
  });
  $('rollout-btn').addEventListener('click', () => void doRollout());
  $('pin-btn').addEventListener('click', () => {
    state = pinLast(state, `pin ${state.pinned.length + 1}`);
    renderPins();
  });
  $('reset-btn').addEventListener('click', () => {
    state = reset(state);
    renderAll();
    setStatus('edits cleared');
  });
  $('export-btn').addEventListener('click', doExport);
  ($('steps-input') as HTMLInputElement).addEventListener('change', event => {
    const value = Number((event.target as HTMLInputElement).value);
    try {
      state = setSteps(state, value);
    } catch (err) {
      setStatus(String(err), true);
    }
  });
  ($('service-input') as HTMLInputElement).value = client.baseUrl;
  $('service-input').addEventListener('change', event => {
    client = new ServiceClient((event.target as HTMLInputElement).value);
    setStatus(`service: ${client.baseUrl}`);
  });
  void client.health()
    .then(() => setStatus(`connected to ${client.baseUrl}`))
    .catch(() => setStatus(`service unreachable at ${client.baseUrl}`, true));
  renderAll();
}

document.addEventListener('DOMContentLoaded', wire);
