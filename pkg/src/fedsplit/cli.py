"""Command-line entry points.

Verbs:
  run <config>       train, evaluate, audit, and write the full report
  validate <config>  check a configuration and echo the resolved values
  sweep <config>     privacy-utility grid over the configured defenses
  audit <config>     re-audit a saved model checkpoint

Exit codes: 0 success, 1 configuration error, 2 partial cell failures,
3 total failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import experiment, report
from .config import SPLIT_BASED_METHODS, config_docs, load_config
from .errors import ConfigError, FedsplitError
from .privacy import AUDIT_CAVEAT, privacy_utility_sweep, sweep_means

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_PARTIAL = 2
EXIT_FAILURE = 3


def _cmd_validate(args) -> int:
    config = load_config(args.config)
    print(f"{args.config}: configuration valid")
    if args.docs:
        print(config_docs())
    else:
        print(json.dumps(config.resolved, indent=2, sort_keys=True, default=str))
    return EXIT_OK


def _cmd_run(args) -> int:
    config = load_config(args.config)
    outcome = experiment.run_experiment(config, write=True)
    out_dir = Path(config.output_dir)
    for (method, seed), reason in sorted(outcome.failures.items()):
        print(f"FAILED {method} seed {seed}: {reason}", file=sys.stderr)
    print(f"report: {out_dir / 'report.csv'}")
    print(f"note: {AUDIT_CAVEAT}")
    if outcome.all_failed:
        return EXIT_FAILURE
    if outcome.partial:
        return EXIT_PARTIAL
    return EXIT_OK


def _cmd_sweep(args) -> int:
    config = load_config(args.config)
    method = config.sweep["method"]
    if method not in SPLIT_BASED_METHODS:
        raise ConfigError(f"key 'sweep.method': '{method}' is not split-based")
    table = experiment.build_table(config)
    prepared = {seed: experiment.prepare(config, table, seed) for seed in config.seeds}
    run_point = experiment.sweep_run_point(config, prepared, method)
    points = privacy_utility_sweep(
        run_point,
        sigmas=config.sweep["sigmas"],
        clip_norms=config.sweep["clip_norms"],
        seeds=config.seeds,
    )
    means = sweep_means(points)
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    sweep_path = out_dir / "sweep.csv"
    report.emit_privacy_sweep(points, means, sweep_path)
    if config.render_figures:
        from . import figures

        (out_dir / "figures").mkdir(exist_ok=True)
        figures.render_privacy_sweep(means, out_dir / "figures" / "privacy_utility.png")
    print(f"sweep: {sweep_path}")
    print(f"note: {AUDIT_CAVEAT}")
    return EXIT_OK


def _cmd_audit(args) -> int:
    config = load_config(args.config)
    model_path = args.model or config.audit["model"]
    if not model_path:
        raise ConfigError("key 'audit.model': a saved model path is required")
    try:
        model, adapters, meta = report.load_model(model_path)
    except FileNotFoundError:
        raise ConfigError(f"key 'audit.model': file not found: {model_path}") from None
    seed = meta.get("seed", config.seeds[0])
    table = experiment.build_table(config)
    prep = experiment.prepare(config, table, seed)
    defense = config.defense if meta.get("defended") else None
    results, skipped = experiment.audit_clients(
        model.trunk,
        prep.clients,
        config.audit,
        seed,
        adapters=adapters,
        defense=defense,
        target_client=config.audit["target_client"],
    )
    print(f"# {AUDIT_CAVEAT}")
    for client_id, result in results:
        print(
            f"client {client_id}: attack_auc={result.attack_auc:.4f} "
            f"m={result.m} converged={result.converged}"
        )
    for client_id, reason in skipped:
        print(f"client {client_id}: skipped ({reason})", file=sys.stderr)
    if not results:
        return EXIT_FAILURE
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedsplit",
        description=(
            "Simulate centralized, federated, split, and hybrid training of "
            "two-head uplift models; audit leakage and report utility, "
            "decision quality, privacy, and communication cost."
        ),
    )
    sub = parser.add_subparsers(dest="verb", required=True)

    p_run = sub.add_parser("run", help="run the configured experiment end to end")
    p_run.add_argument("config", help="TOML configuration file")
    p_run.set_defaults(func=_cmd_run)

    p_val = sub.add_parser("validate", help="validate a configuration file")
    p_val.add_argument("config", help="TOML configuration file")
    p_val.add_argument("--docs", action="store_true", help="print the key reference instead")
    p_val.set_defaults(func=_cmd_validate)

    p_sweep = sub.add_parser("sweep", help="privacy-utility sweep over the defense grid")
    p_sweep.add_argument("config", help="TOML configuration file")
    p_sweep.set_defaults(func=_cmd_sweep)

    p_audit = sub.add_parser("audit", help="re-audit a saved model checkpoint")
    p_audit.add_argument("config", help="TOML configuration file")
    p_audit.add_argument("--model", default="", help="model .npz (overrides audit.model)")
    p_audit.set_defaults(func=_cmd_audit)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FedsplitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    raise SystemExit(main())
