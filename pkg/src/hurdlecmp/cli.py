"""``hurdlecmp`` command line.

Subcommands
-----------
ingest-check  validate a CSV against the schema and describe the design
ppca          fit PPCA on the composition block and write scores
simulate      write a simulation-design dataset and its true parameters
fit           fit the configured roster (no validation)
validate      posterior-predictive validation of saved chains on the test split
report        rebuild ``comparison.csv`` from saved model summaries
run           fit, validate and report in one pass

Exit codes: 0 success, 2 schema violation, 3 fit failure, 4 config error.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from . import pipeline, ppca
from .errors import ConfigError, SchemaViolation

EXIT_OK, EXIT_SCHEMA, EXIT_FIT, EXIT_CONFIG = 0, 2, 3, 4


def _global_flags(parser: argparse.ArgumentParser, suppress: bool) -> None:
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", default=default, help="experiment configuration (JSON)")
    parser.add_argument("--seed", type=int, default=default, help="root seed override")
    parser.add_argument("--out", default=default, help="output directory override")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hurdlecmp", description="Bayesian hurdle CMP regression pipeline")
    _global_flags(parser, suppress=False)
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, suppress=True)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest-check", parents=[common], help="validate a CSV")
    p.add_argument("--csv", help="input CSV (defaults to the configured data path)")
    p.add_argument("--schema", help="schema JSON file (defaults to the configured or mining schema)")

    p = sub.add_parser("ppca", parents=[common], help="fit PPCA on the composition block")
    p.add_argument("--csv")
    p.add_argument("--schema")
    p.add_argument("--k", default="auto", help="latent dimension or 'auto'")
    p.add_argument("--k-max", type=int, default=None)

    p = sub.add_parser("simulate", parents=[common], help="write a simulated dataset")
    p.add_argument("--which", choices=sorted(pipeline.SIM_TRUTH), default="sim1")
    p.add_argument("--m", type=int, default=1000)

    for name, text in (("fit", "fit the roster"), ("validate", "validate saved chains"),
                       ("report", "rebuild the comparison table"), ("run", "fit, validate and report")):
        sub.add_parser(name, parents=[common], help=text)
    return parser


def _load_config(args) -> pipeline.ExperimentConfig:
    if not args.config:
        raise ConfigError("this command needs --config")
    cfg = pipeline.ExperimentConfig.load(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def _out_dir(args, cfg=None) -> Path:
    if args.out:
        return Path(args.out)
    if cfg is not None:
        return Path(cfg.output_dir)
    return Path(".")


def _schema_and_path(args):
    cfg = pipeline.ExperimentConfig.load(args.config) if args.config else None
    if args.schema:
        try:
            schema = pipeline.DatasetSchema.from_dict(json.loads(Path(args.schema).read_text(encoding="utf-8")))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read schema {args.schema}: {exc}") from exc
    elif cfg is not None and "path" in cfg.data:
        schema = cfg.schema()
    else:
        schema = pipeline.MINING_SCHEMA
    if args.csv:
        path = Path(args.csv)
    elif cfg is not None and "path" in cfg.data:
        path = cfg.data_path()
    else:
        raise ConfigError("no input CSV: pass --csv or a --config with data.path")
    return schema, path


def _print(doc) -> None:
    print(json.dumps(doc, indent=2, sort_keys=True, default=str))


def cmd_ingest_check(args) -> int:
    schema, path = _schema_and_path(args)
    res = pipeline.ingest(path, schema)
    _print({"rows": res.data.m, "design_columns": list(res.data.names), "has_offset": res.data.has_offset,
            "composition_columns": res.composition_names, "renormalized_rows": res.warnings,
            "positive_fraction": float(np.mean(res.data.y > 0)) if res.data.m else None})
    return EXIT_OK


def cmd_ppca(args) -> int:
    schema, path = _schema_and_path(args)
    res = pipeline.ingest(path, schema)
    if not res.composition_names:
        raise ConfigError("the schema declares no composition columns")
    shares = res.composition / pipeline.COMPOSITION_TOTAL
    rows = np.arange(shares.shape[0])
    seed = pipeline.model_seeds(args.seed or 0)["ppca"]
    if args.config:
        cfg = _load_config(args)
        spec = cfg.split_spec()
        if spec is not None and cfg.ppca.get("fit_on", "train") == "train":
            rows, _ = pipeline.split_indices(res.data.m, spec)
        seed = pipeline.model_seeds(cfg.seed)["ppca"]
    scores = None
    if args.k == "auto":
        k, scores = ppca.select_k(shares[rows], args.k_max or shares.shape[1] - 1, return_scores=True, seed=seed)
    else:
        try:
            k = int(args.k)
        except ValueError as exc:
            raise ConfigError(f"--k must be 'auto' or an integer, got {args.k!r}") from exc
    model, _ = ppca.map_fit(shares[rows], k, seed=seed)
    out = _out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    model.save(out / "ppca_model.json")
    pcs = pd.DataFrame(ppca.transform(shares, model), columns=[f"PC{j + 1}" for j in range(k)])
    pcs.to_csv(out / "ppca_scores.csv", index=False, float_format="%.10g")
    _print({"k": k, "bic": scores, "fit_rows": int(rows.size), "loglik": model.loglik})
    return EXIT_OK


def cmd_simulate(args) -> int:
    sim = pipeline.simulate(pipeline.SimSpec(args.which, args.m, args.seed or 0))
    out = _out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame({"y": sim.data.y, "x1": sim.data.X[:, 1]})
    frame.to_csv(out / f"{args.which}.csv", index=False, float_format="%.17g")
    (out / f"{args.which}_truth.json").write_text(json.dumps(sim.truth, indent=2, sort_keys=True) + "\n")
    _print({"rows": sim.data.m, "positive_fraction": float(np.mean(sim.data.y > 0)), "truth": sim.truth})
    return EXIT_OK


def _experiment(args, validate: bool) -> int:
    cfg = _load_config(args)
    res = pipeline.run_experiment(cfg, out_dir=_out_dir(args, cfg), validate=validate)
    print(res.comparison.to_string(index=False))
    if res.failures:
        for name, err in res.failures.items():
            print(f"{name}: {err}", file=sys.stderr)
        return EXIT_FIT
    return EXIT_OK


def cmd_fit(args) -> int:
    return _experiment(args, validate=False)


def cmd_run(args) -> int:
    return _experiment(args, validate=True)


def cmd_validate(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args, cfg)
    table = pipeline.validate_saved(cfg, out)
    table.to_csv(out / "validation.csv", index=False, float_format="%.10g")
    print(table.to_string(index=False))
    missing = sorted(set(cfg.models) - set(table["model"]))
    if missing:
        print(f"no saved chains for {missing}", file=sys.stderr)
        return EXIT_FIT
    return EXIT_OK


def cmd_report(args) -> int:
    cfg = pipeline.ExperimentConfig.load(args.config) if args.config else None
    out = _out_dir(args, cfg)
    table = pipeline.collect_reports(out)
    if table.empty:
        raise ConfigError(f"no model summaries under {out}")
    table.to_csv(out / "comparison.csv", index=False, float_format="%.10g")
    print(table.to_string(index=False))
    return EXIT_FIT if (table["status"] != "ok").any() else EXIT_OK


COMMANDS = {"ingest-check": cmd_ingest_check, "ppca": cmd_ppca, "simulate": cmd_simulate, "fit": cmd_fit,
            "validate": cmd_validate, "report": cmd_report, "run": cmd_run}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except SchemaViolation as exc:
        print(f"schema violation: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
