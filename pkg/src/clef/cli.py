"""Command-line entry point.

Subcommands: `datagen synthetic|tumor`, `train`, `eval immediate|delayed|
zeroshot-cf|counterfactual`, `generate`, `intervene`, `serve`. Every run
logs its fully resolved configuration (including the effective seed) to
stderr; rerunning with the same log line reproduces the outputs bit for
bit. The CLEF_SEED environment variable overrides any configured seed.
Exit code 0 on success, 2 on validation errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .baselines import ConditionalForecaster, SimpleLinearModel, fit_var
from .conditions import ConditionRegistry
from .counterfactual import (
    OutcomePredictor,
    OutcomePredictorConfig,
    OutcomeTrainConfig,
    evaluate_counterfactual,
    train_outcome_predictor,
)
from .datagen.synthetic import GeneratorConfig, generate_dataset, split_dataset
from .datagen.tumor import TumorSimConfig, simulate_cohort, tumor_to_trajectory
from .errors import ClefError
from .evaluation import (
    evaluate_delayed,
    evaluate_immediate,
    evaluate_zero_shot_cf,
)
from .model import ClefConfig, ClefModel, ConceptEdit
from .persistence import (
    counterfactual_pairs,
    read_checkpoint,
    read_dataset,
    write_checkpoint,
    write_dataset,
)
from .training import TrainConfig, train

log = logging.getLogger("clef")

SEED_ENV = "CLEF_SEED"


def resolve_seed(seed: int) -> int:
    env = os.environ.get(SEED_ENV)
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ClefError(f"{SEED_ENV} must be an integer, got {env!r}") from None
    return seed


def _log_config(command: str, config: dict) -> None:
    log.info("%s %s", command, json.dumps(config, sort_keys=True, default=str))


def _parse_fractions(text: str) -> tuple[float, float, float]:
    parts = text.split(",")
    if len(parts) != 3:
        raise ClefError("fractions must be three comma-separated numbers")
    try:
        return tuple(float(p) for p in parts)  # type: ignore[return-value]
    except ValueError:
        raise ClefError(f"bad fractions {text!r}") from None


def parse_edit(text: str) -> tuple[str, str, float]:
    """Parse `mode:variable:value`, e.g. scale:glucose:0.5 or set:3:1.0."""
    parts = text.split(":")
    if len(parts) != 3 or parts[0] not in ("set", "scale"):
        raise ClefError(f"bad edit {text!r}, expected set|scale:<variable>:<value>")
    try:
        value = float(parts[2])
    except ValueError:
        raise ClefError(f"bad edit value in {text!r}") from None
    return parts[0], parts[1], value


def resolve_edits(specs: list[str], variable_names: list[str]) -> list[ConceptEdit]:
    edits = []
    for spec in specs:
        mode, var, value = parse_edit(spec)
        if var.isdigit():
            index = int(var)
        elif var in variable_names:
            index = variable_names.index(var)
        else:
            raise ClefError(f"unknown variable {var!r}; known: {variable_names}")
        edits.append(ConceptEdit(index=index, mode=mode, value=value))
    return edits


def _write_metrics(report, fmt: str, out: str | None) -> None:
    rows = report.to_flat()
    if fmt == "json":
        text = json.dumps(rows, indent=2)
    else:
        lines = ["metric,scope,horizon,value"]
        for row in rows:
            horizon = "" if row["horizon"] is None else str(row["horizon"])
            value = "" if row["value"] is None else repr(row["value"])
            lines.append(f"{row['metric']},{row['scope']},{horizon},{value}")
        text = "\n".join(lines)
    if out:
        Path(out).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)


def _split_from_args(trajectories, args):
    return split_dataset(trajectories, _parse_fractions(args.fractions),
                         seed=resolve_seed(args.split_seed), zero_shot=args.zero_shot)


# ----------------------------------------------------------------------
# subcommand implementations

def cmd_datagen_synthetic(args) -> int:
    seed = resolve_seed(args.seed)
    config = GeneratorConfig(
        n_variables=args.variables, n_tokens=args.tokens,
        min_length=args.min_length, max_length=args.max_length,
        drift_scale=args.drift_scale, noise_sigma=args.noise_sigma,
        none_probability=args.none_prob, seed=seed,
        variable_names=args.variable_names.split(",") if args.variable_names else None,
    )
    _log_config("datagen synthetic", config.to_dict())
    data = generate_dataset(config, args.n, cf_pairs=args.cf_pairs,
                            divergence=args.divergence)
    write_dataset(args.out, data)
    print(f"wrote {len(data)} trajectories to {args.out}")
    return 0


def cmd_datagen_tumor(args) -> int:
    seed = resolve_seed(args.seed)
    config = TumorSimConfig(gamma=args.gamma, n_train=args.n_train, n_val=args.n_val,
                            n_test=args.n_test, horizon=args.horizon, seed=seed)
    _log_config("datagen tumor", config.to_dict())
    cohorts = simulate_cohort(config)
    all_trajs = []
    for split in ("train", "val", "test"):
        all_trajs.extend(tumor_to_trajectory(p) for p in cohorts[split])
    write_dataset(args.out, all_trajs)
    config_path = args.config_out or f"{args.out}.simconfig.json"
    Path(config_path).write_text(json.dumps(config.to_dict(), indent=2) + "\n", encoding="utf-8")
    print(f"wrote {len(all_trajs)} trajectories to {args.out}; sim config to {config_path}")
    return 0


def _build_model(args, n_variables: int, seed: int, variable_names):
    registry = ConditionRegistry(dim=args.condition_dim)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 7]))
    if args.model == "clef":
        config = ClefConfig(
            n_variables=n_variables, condition_dim=args.condition_dim,
            hidden_dim=args.hidden_dim, ffn_enabled=args.ffn,
            encoder_kind=args.encoder, layers=args.layers, heads=args.heads,
            dropout=0.0 if args.dropout is None else args.dropout,
        )
        return ClefModel(config, registry, rng, variable_names=variable_names)
    if args.model == "forecaster":
        config = ClefConfig(
            n_variables=n_variables, condition_dim=args.condition_dim,
            hidden_dim=args.hidden_dim or n_variables, ffn_enabled=True,
            encoder_kind=args.encoder, layers=args.layers, heads=args.heads,
            dropout=0.0 if args.dropout is None else args.dropout,
        )
        return ConditionalForecaster(config, registry, rng, variable_names=variable_names)
    if args.model == "simple":
        return SimpleLinearModel(n_variables=n_variables, condition_dim=args.condition_dim,
                                 variable_names=variable_names)
    raise ClefError(f"unknown model kind {args.model!r}")


def cmd_train(args) -> int:
    seed = resolve_seed(args.seed)
    data = read_dataset(args.data)
    splits = _split_from_args(data, args)
    variable_names = args.variable_names.split(",") if args.variable_names else None
    n_variables = data[0].n_variables

    if args.model == "outcome":
        registry = ConditionRegistry(dim=args.condition_dim)
        config = OutcomePredictorConfig(
            n_outcomes=n_variables, condition_dim=args.condition_dim,
            hidden_dim=args.hidden_dim or 8, layers=args.layers,
            dropout=0.0 if args.dropout is None else args.dropout,
            head=args.head, balancing=args.balancing, grl_lambda=args.grl_lambda,
        )
        model = OutcomePredictor(config, registry, np.random.default_rng(np.random.SeedSequence([seed, 7])))
        tc = OutcomeTrainConfig(
            epochs=args.epochs, batch_size=args.batch_size, learning_rate=args.lr,
            seed=seed, tau_max=args.tau_max, samples_per_epoch=args.samples_per_epoch,
            patience=args.patience,
        )
        _log_config("train", {"model": "outcome", "seed": seed, **config.to_dict(),
                              "epochs": tc.epochs, "lr": tc.learning_rate})
        loss_curve, val_curve = train_outcome_predictor(model, splits["train"], tc,
                                                        splits["val"] or None)
    elif args.model == "var":
        _log_config("train", {"model": "var", "order": args.var_order, "seed": seed})
        model = fit_var(splits["train"], order=args.var_order, variable_names=variable_names)
        loss_curve, val_curve = [], []
    else:
        model = _build_model(args, n_variables, seed, variable_names)
        tc = TrainConfig(
            epochs=args.epochs, batch_size=args.batch_size, learning_rate=args.lr,
            dropout=args.dropout, seed=seed, patience=args.patience,
            horizon_cap=args.horizon_cap, samples_per_epoch=args.samples_per_epoch,
        )
        _log_config("train", {"model": args.model, "seed": seed, **tc.to_dict()})
        result = train(model, splits, tc)
        loss_curve, val_curve = result.loss_curve, result.val_curve

    train_ids = [t.id for t in splits["train"]]
    extra = {
        "split": {"fractions": args.fractions, "seed": resolve_seed(args.split_seed),
                  "zero_shot": args.zero_shot},
        "loss_curve": loss_curve,
        "val_curve": val_curve,
    }
    write_checkpoint(args.out, model, train_seed=seed, train_ids=train_ids, extra=extra)
    suffix = f" (final loss {loss_curve[-1]:.6f})" if loss_curve else ""
    print(f"wrote checkpoint to {args.out}{suffix}")
    return 0


def cmd_eval(args) -> int:
    seed = resolve_seed(args.seed)
    model, header = read_checkpoint(args.model)
    _log_config(f"eval {args.protocol}", {"model": args.model, "data": args.data,
                                          "seed": seed, "horizon": getattr(args, "horizon", None)})
    if args.protocol == "counterfactual":
        sim_config = TumorSimConfig.from_dict(json.loads(Path(args.sim_config).read_text()))
        cohorts = simulate_cohort(sim_config)
        nrmse = evaluate_counterfactual(
            model, cohorts["test"], sim_config, args.setting, args.tau_max,
            rng=np.random.default_rng(seed), max_origins_per_patient=args.max_origins,
        )
        rows = [{"metric": "nrmse_percent", "scope": "overall", "horizon": tau, "value": val}
                for tau, val in sorted(nrmse.items())]
        text = (json.dumps(rows, indent=2) if args.format == "json" else
                "\n".join(["metric,scope,horizon,value"] +
                          [f"{r['metric']},{r['scope']},{r['horizon']},{r['value']!r}" for r in rows]))
        if args.out:
            Path(args.out).write_text(text + "\n", encoding="utf-8")
        else:
            print(text)
        return 0

    if not args.data:
        raise ClefError(f"eval {args.protocol} requires --data")
    data = read_dataset(args.data)
    split_info = header.get("extra", {}).get("split")
    if args.use_checkpoint_split and split_info:
        splits = split_dataset(data, _parse_fractions(split_info["fractions"]),
                               seed=split_info["seed"], zero_shot=split_info["zero_shot"])
    else:
        splits = _split_from_args(data, args)
    test = splits["test"]
    if args.protocol == "immediate":
        report = evaluate_immediate(model, test)
    elif args.protocol == "delayed":
        report = evaluate_delayed(model, test, horizon=args.horizon, seed=seed)
    elif args.protocol == "zeroshot-cf":
        pairs = counterfactual_pairs(data)
        test_ids = {t.id for t in test}
        pairs = [p for p in pairs if p.counterfactual.id in test_ids]
        train_ids = set(header.get("train_ids") or [t.id for t in splits["train"]])
        report = evaluate_zero_shot_cf(model, pairs, train_ids)
    else:
        raise ClefError(f"unknown eval protocol {args.protocol!r}")
    _write_metrics(report, args.format, args.out)
    return 0


def _load_history(args, model):
    data = read_dataset(args.data)
    by_id = {t.id: t for t in data}
    if args.id not in by_id:
        raise ClefError(f"trajectory {args.id!r} not found in {args.data}")
    history = by_id[args.id]
    if args.prefix is not None:
        history = history.prefix(args.prefix)
    return history


def _parse_conditions(text: str | None, steps: int) -> list[list[str]]:
    if not text:
        return [["none"]] * steps
    tokens = text.split(",")
    conditions = [[t] if t else ["none"] for t in tokens]
    while len(conditions) < steps:
        conditions.append(["none"])
    return conditions[:steps]


def cmd_generate(args) -> int:
    seed = resolve_seed(args.seed)
    model, _ = read_checkpoint(args.model)
    if model.kind != "clef":
        raise ClefError("generate requires a clef checkpoint")
    _log_config("generate", {"model": args.model, "id": args.id,
                             "steps": args.steps, "seed": seed})
    history = _load_history(args, model)
    conditions = _parse_conditions(args.conditions, args.steps)
    suffix = model.rollout(history, conditions, args.steps)
    record = {
        "id": suffix.id,
        "timestamps": [t.iso() for t in suffix.timestamps],
        "values": [[float(v) for v in row] for row in suffix.values],
        "conditions": suffix.conditions,
    }
    text = json.dumps(record, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)
    return 0


def cmd_intervene(args) -> int:
    seed = resolve_seed(args.seed)
    model, _ = read_checkpoint(args.model)
    if model.kind != "clef":
        raise ClefError("intervene requires a clef checkpoint")
    _log_config("intervene", {"model": args.model, "id": args.id,
                              "edits": args.edit, "steps": args.steps, "seed": seed})
    history = _load_history(args, model)
    edits = resolve_edits(args.edit, model.variable_names)
    conditions = _parse_conditions(args.conditions, args.steps)
    baseline = model.rollout(history, conditions, args.steps)
    edited = model.rollout(history, conditions, args.steps, edits=edits)
    deltas = (baseline.values / edited.values).tolist()
    record = {
        "id": history.id,
        "edits": args.edit,
        "timestamps": [t.iso() for t in edited.timestamps],
        "baseline": baseline.values.tolist(),
        "edited": edited.values.tolist(),
        "delta_baseline_over_edited": deltas,
        "variables": model.variable_names,
    }
    text = json.dumps(record, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)
    return 0


def cmd_serve(args) -> int:
    from .service import ServiceState, serve_forever

    model, _ = read_checkpoint(args.model)
    references = {}
    for spec in args.reference or []:
        if "=" not in spec:
            raise ClefError(f"bad --reference {spec!r}, expected name=path")
        name, _, path = spec.partition("=")
        references[name] = read_dataset(path)
    _log_config("serve", {"model": args.model, "port": args.port,
                          "references": sorted(references)})
    state = ServiceState(model=model, references=references)
    serve_forever(state, port=args.port)
    return 0


# ----------------------------------------------------------------------
# argument parsing

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="clef",
                                     description="controllable sequence editing toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    datagen = sub.add_parser("datagen", help="generate benchmark datasets")
    dg = datagen.add_subparsers(dest="generator", required=True)
    syn = dg.add_parser("synthetic", help="multiplicative branching trajectories")
    syn.add_argument("--out", required=True)
    syn.add_argument("--n", type=int, default=600)
    syn.add_argument("--variables", type=int, default=20)
    syn.add_argument("--tokens", type=int, default=8)
    syn.add_argument("--min-length", type=int, default=20)
    syn.add_argument("--max-length", type=int, default=37)
    syn.add_argument("--drift-scale", type=float, default=0.25)
    syn.add_argument("--noise-sigma", type=float, default=0.05)
    syn.add_argument("--none-prob", type=float, default=0.25)
    syn.add_argument("--cf-pairs", type=int, default=0)
    syn.add_argument("--divergence", type=int, default=None)
    syn.add_argument("--variable-names", default=None)
    syn.add_argument("--seed", type=int, default=0)
    syn.set_defaults(func=cmd_datagen_synthetic)

    tum = dg.add_parser("tumor", help="PK-PD tumor growth cohorts")
    tum.add_argument("--out", required=True)
    tum.add_argument("--gamma", type=float, default=0.0)
    tum.add_argument("--n-train", type=int, default=10000)
    tum.add_argument("--n-val", type=int, default=1000)
    tum.add_argument("--n-test", type=int, default=1000)
    tum.add_argument("--horizon", type=int, default=60)
    tum.add_argument("--config-out", default=None)
    tum.add_argument("--seed", type=int, default=0)
    tum.set_defaults(func=cmd_datagen_tumor)

    tr = sub.add_parser("train", help="train a model")
    tr.add_argument("--data", required=True)
    tr.add_argument("--out", required=True)
    tr.add_argument("--model", choices=["clef", "forecaster", "simple", "var", "outcome"],
                    default="clef")
    tr.add_argument("--epochs", type=int, default=30)
    tr.add_argument("--batch-size", type=int, default=128)
    tr.add_argument("--lr", type=float, default=5e-3)
    tr.add_argument("--dropout", type=float, default=None)
    tr.add_argument("--seed", type=int, default=0)
    tr.add_argument("--patience", type=int, default=6)
    tr.add_argument("--horizon-cap", type=int, default=14)
    tr.add_argument("--samples-per-epoch", type=int, default=4096)
    tr.add_argument("--condition-dim", type=int, default=16)
    tr.add_argument("--hidden-dim", type=int, default=None)
    tr.add_argument("--ffn", action="store_true")
    tr.add_argument("--encoder", choices=["recurrent", "attention"], default="recurrent")
    tr.add_argument("--layers", type=int, default=1)
    tr.add_argument("--heads", type=int, default=4)
    tr.add_argument("--variable-names", default=None)
    tr.add_argument("--var-order", type=int, default=1)
    tr.add_argument("--head", choices=["clef", "plain"], default="clef")
    tr.add_argument("--balancing", choices=["none", "gradient_reversal"], default="none")
    tr.add_argument("--grl-lambda", type=float, default=1.0)
    tr.add_argument("--tau-max", type=int, default=6)
    tr.add_argument("--fractions", default="0.7,0.15,0.15")
    tr.add_argument("--split-seed", type=int, default=0)
    tr.add_argument("--zero-shot", action="store_true")
    tr.set_defaults(func=cmd_train)

    ev = sub.add_parser("eval", help="evaluate a checkpoint")
    ev.add_argument("protocol", choices=["immediate", "delayed", "zeroshot-cf", "counterfactual"])
    ev.add_argument("--model", required=True)
    ev.add_argument("--data", default=None)
    ev.add_argument("--horizon", type=int, default=14)
    ev.add_argument("--seed", type=int, default=0)
    ev.add_argument("--format", choices=["json", "csv"], default="json")
    ev.add_argument("--out", default=None)
    ev.add_argument("--fractions", default="0.7,0.15,0.15")
    ev.add_argument("--split-seed", type=int, default=0)
    ev.add_argument("--zero-shot", action="store_true")
    ev.add_argument("--use-checkpoint-split", action=argparse.BooleanOptionalAction, default=True)
    ev.add_argument("--sim-config", default=None)
    ev.add_argument("--setting", choices=["single_sliding", "random"], default="single_sliding")
    ev.add_argument("--tau-max", type=int, default=6)
    ev.add_argument("--max-origins", type=int, default=4)
    ev.set_defaults(func=cmd_eval)

    gen = sub.add_parser("generate", help="autoregressive rollout from a trajectory")
    gen.add_argument("--model", required=True)
    gen.add_argument("--data", required=True)
    gen.add_argument("--id", required=True)
    gen.add_argument("--steps", type=int, default=10)
    gen.add_argument("--conditions", default=None)
    gen.add_argument("--prefix", type=int, default=None)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", default=None)
    gen.set_defaults(func=cmd_generate)

    intr = sub.add_parser("intervene", help="rollout under edited temporal concepts")
    intr.add_argument("--model", required=True)
    intr.add_argument("--data", required=True)
    intr.add_argument("--id", required=True)
    intr.add_argument("--edit", action="append", required=True,
                      help="set|scale:<variable>:<value>; repeatable")
    intr.add_argument("--steps", type=int, default=10)
    intr.add_argument("--conditions", default=None)
    intr.add_argument("--prefix", type=int, default=None)
    intr.add_argument("--seed", type=int, default=0)
    intr.add_argument("--out", default=None)
    intr.set_defaults(func=cmd_intervene)

    srv = sub.add_parser("serve", help="HTTP inference service")
    srv.add_argument("--model", required=True)
    srv.add_argument("--port", type=int, default=8642)
    srv.add_argument("--reference", action="append", default=None,
                     help="name=path reference cohort; repeatable")
    srv.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ClefError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
