"""Local HTTP/JSON inference service.

Endpoints:
  GET  /health                          -> {"status": "ok"}
  GET  /model                           -> loaded model summary
  GET  /cohorts                         -> configured reference cohorts
  POST /forecast {history, conditions, target_time}
  POST /intervene {history, edits, steps, conditions?, reference?}
  POST /similarity {trajectory_a, trajectory_b} or {trajectory_a, cohort}

Requests never mutate the loaded snapshot; swapping a model is an atomic
attribute assignment. Responses carry `schema_version` and errors a
machine-readable `code`. CORS headers are sent so a local page can call
the service directly.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np

from .errors import ClefError, InvalidHorizon, InvalidIntervention
from .evaluation import r2_similarity
from .model import ClefModel, ConceptEdit
from .timeenc import parse_timestamp
from .trajectory import Trajectory

SCHEMA_VERSION = 1


@dataclass
class ServiceState:
    """Immutable-while-serving snapshot of the model and reference cohorts."""

    model: object | None = None
    references: dict[str, list[Trajectory]] = field(default_factory=dict)


class ApiError(Exception):
    def __init__(self, status: int, code: str, message: str):
        super().__init__(message)
        self.status = status
        self.code = code


def _parse_history(payload, key: str = "history") -> Trajectory:
    body = payload.get(key)
    if not isinstance(body, dict):
        raise ApiError(400, "malformed", f"{key} must be an object")
    try:
        timestamps = [parse_timestamp(t) for t in body["timestamps"]]
        values = np.asarray(body["values"], dtype=np.float64)
        conditions = body.get("conditions") or [["none"]] * len(timestamps)
        return Trajectory(id=str(body.get("id", "request")), timestamps=timestamps,
                          values=values, conditions=conditions)
    except (KeyError, TypeError, ValueError) as exc:
        raise ApiError(400, "malformed", f"bad {key}: {exc}") from None
    except ClefError as exc:
        raise ApiError(400, "malformed", f"bad {key}: {exc}") from None


def _trajectory_json(traj: Trajectory) -> dict:
    return {
        "id": traj.id,
        "timestamps": [t.iso() for t in traj.timestamps],
        "values": traj.values.tolist(),
        "conditions": traj.conditions,
    }


def _require_model(state: ServiceState) -> ClefModel:
    model = state.model
    if model is None:
        raise ApiError(404, "no_model", "no model loaded")
    if model.kind != "clef":
        raise ApiError(404, "no_model", f"loaded model kind {model.kind!r} cannot serve concepts")
    return model


def handle_forecast(state: ServiceState, payload: dict) -> dict:
    model = _require_model(state)
    history = _parse_history(payload)
    tokens = payload.get("conditions", ["none"])
    if isinstance(tokens, str):
        tokens = [tokens]
    if not isinstance(tokens, list) or not all(isinstance(t, str) for t in tokens):
        raise ApiError(400, "malformed", "conditions must be a list of strings")
    target_time = payload.get("target_time")
    if not isinstance(target_time, str):
        raise ApiError(400, "malformed", "target_time must be an ISO-8601 hour string")
    try:
        t_j = parse_timestamp(target_time)
    except ClefError as exc:
        raise ApiError(400, "malformed", str(exc)) from None
    try:
        pred, concept = model.forward(history, tokens, t_j)
    except InvalidHorizon as exc:
        raise ApiError(422, "not_future", str(exc)) from None
    return {
        "schema_version": SCHEMA_VERSION,
        "prediction": pred.tolist(),
        "concept": concept.values.tolist(),
        "variables": model.variable_names,
    }


def _parse_edits(payload: dict, model: ClefModel) -> list[ConceptEdit]:
    edits_body = payload.get("edits")
    if not isinstance(edits_body, list) or not edits_body:
        raise ApiError(422, "empty_edits", "edits must be a non-empty list")
    edits = []
    for item in edits_body:
        if not isinstance(item, dict):
            raise ApiError(400, "malformed", "each edit must be an object")
        mode = item.get("mode")
        value = item.get("value")
        variable = item.get("variable")
        if mode not in ("set", "scale") or not isinstance(value, (int, float)):
            raise ApiError(400, "malformed", "edit needs mode set|scale and numeric value")
        if isinstance(variable, str):
            if variable.isdigit():
                index = int(variable)
            elif variable in model.variable_names:
                index = model.variable_names.index(variable)
            else:
                raise ApiError(422, "unknown_variable", f"unknown variable {variable!r}")
        elif isinstance(variable, int):
            index = variable
        else:
            raise ApiError(400, "malformed", "edit variable must be a name or index")
        if not 0 <= index < model.config.n_variables:
            raise ApiError(422, "unknown_variable", f"variable index {index} out of range")
        edits.append(ConceptEdit(index=index, mode=mode, value=float(value)))
    return edits


def handle_intervene(state: ServiceState, payload: dict) -> dict:
    model = _require_model(state)
    history = _parse_history(payload)
    edits = _parse_edits(payload, model)
    steps = payload.get("steps", 10)
    if not isinstance(steps, int) or steps < 1:
        raise ApiError(400, "malformed", "steps must be a positive integer")
    tokens = payload.get("conditions")
    conditions = [[t] if isinstance(t, str) else list(t) for t in tokens] if tokens \
        else [["none"]] * steps
    if len(conditions) < steps:
        conditions = conditions + [["none"]] * (steps - len(conditions))
    try:
        baseline = model.rollout(history, conditions, steps)
        edited = model.rollout(history, conditions, steps, edits=edits)
    except InvalidIntervention as exc:
        raise ApiError(422, "noop_edits", str(exc)) from None
    if "reference" in payload:
        reference = _parse_history(payload, key="reference")
        shared = min(reference.length, edited.length)
        if shared < 1:
            raise ApiError(422, "no_overlap", "reference shares no steps with the rollout")
        deltas = (reference.values[:shared] / edited.values[:shared]).tolist()
    else:
        deltas = (baseline.values / edited.values).tolist()
    return {
        "schema_version": SCHEMA_VERSION,
        "rollout": _trajectory_json(edited),
        "baseline": _trajectory_json(baseline),
        "deltas": deltas,
        "variables": model.variable_names,
    }


def handle_similarity(state: ServiceState, payload: dict) -> dict:
    if state.model is None:
        raise ApiError(404, "no_model", "no model loaded")
    a = _parse_history(payload, key="trajectory_a")
    symmetric = bool(payload.get("symmetric", False))
    cohort_name = payload.get("cohort")
    if cohort_name is not None:
        members = state.references.get(cohort_name)
        if members is None:
            raise ApiError(422, "unknown_cohort", f"cohort {cohort_name!r} is not configured")
        if not members:
            raise ApiError(422, "empty_cohort", f"cohort {cohort_name!r} has no members")
        scores = []
        for member in members:
            try:
                score = r2_similarity(a, member, symmetric=symmetric)
            except ClefError:
                continue
            if score is not None:
                scores.append(score)
        if not scores:
            raise ApiError(422, "no_overlap", "no comparable member in the cohort")
        return {"schema_version": SCHEMA_VERSION, "r2": float(np.mean(scores)),
                "scores": scores, "cohort": cohort_name}
    b = _parse_history(payload, key="trajectory_b")
    try:
        score = r2_similarity(a, b, symmetric=symmetric)
    except ClefError as exc:
        raise ApiError(422, "no_overlap", str(exc)) from None
    if score is None:
        raise ApiError(422, "no_overlap", "target trajectory has no variance")
    return {"schema_version": SCHEMA_VERSION, "r2": score}


def handle_model_info(state: ServiceState) -> dict:
    if state.model is None:
        raise ApiError(404, "no_model", "no model loaded")
    model = state.model
    info = {"schema_version": SCHEMA_VERSION, "kind": model.kind,
            "variables": list(model.variable_names)}
    if hasattr(model, "config") and hasattr(model.config, "to_dict"):
        info["config"] = model.config.to_dict()
    return info


def handle_cohorts(state: ServiceState) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "cohorts": {name: len(members) for name, members in sorted(state.references.items())},
    }


class _Handler(BaseHTTPRequestHandler):
    server_version = "clef-service/1"
    state: ServiceState  # injected by make_server

    def log_message(self, *args):  # quiet by default
        pass

    def _send(self, status: int, body: dict) -> None:
        payload = json.dumps(body).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json; charset=utf-8")
        self.send_header("Content-Length", str(len(payload)))
        self.send_header("Access-Control-Allow-Origin", "*")
        self.send_header("Access-Control-Allow-Headers", "Content-Type")
        self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
        self.end_headers()
        self.wfile.write(payload)

    def _error(self, err: ApiError) -> None:
        self._send(err.status, {"schema_version": SCHEMA_VERSION, "code": err.code,
                                "error": str(err)})

    def do_OPTIONS(self):  # CORS preflight
        self._send(204, {})

    def do_GET(self):
        try:
            if self.path == "/health":
                self._send(200, {"status": "ok"})
            elif self.path == "/model":
                self._send(200, handle_model_info(self.state))
            elif self.path == "/cohorts":
                self._send(200, handle_cohorts(self.state))
            else:
                self._error(ApiError(404, "not_found", f"no route {self.path}"))
        except ApiError as err:
            self._error(err)

    def do_POST(self):
        try:
            length = int(self.headers.get("Content-Length") or 0)
            raw = self.rfile.read(length)
            try:
                payload = json.loads(raw.decode("utf-8")) if raw else {}
            except (json.JSONDecodeError, UnicodeDecodeError):
                raise ApiError(400, "malformed", "request body is not valid JSON") from None
            if not isinstance(payload, dict):
                raise ApiError(400, "malformed", "request body must be a JSON object")
            if self.path == "/forecast":
                self._send(200, handle_forecast(self.state, payload))
            elif self.path == "/intervene":
                self._send(200, handle_intervene(self.state, payload))
            elif self.path == "/similarity":
                self._send(200, handle_similarity(self.state, payload))
            else:
                self._error(ApiError(404, "not_found", f"no route {self.path}"))
        except ApiError as err:
            self._error(err)
        except ClefError as exc:
            self._error(ApiError(422, "invalid", str(exc)))


def make_server(state: ServiceState, port: int = 8642) -> ThreadingHTTPServer:
    handler = type("BoundHandler", (_Handler,), {"state": state})
    return ThreadingHTTPServer(("127.0.0.1", port), handler)


def serve_forever(state: ServiceState, port: int = 8642) -> None:
    server = make_server(state, port)
    print(f"serving on http://127.0.0.1:{port}")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        server.shutdown()


def start_background(state: ServiceState, port: int = 0):
    """Start on an ephemeral port for tests; returns (server, thread, port)."""
    server = make_server(state, port)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    return server, thread, server.server_address[1]
