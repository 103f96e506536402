"""Command-line interface.

Subcommands: simulate (write an ensemble), fit (learn drift and noise),
evaluate (metrics + figures for a fitted system), reproduce (full
pipeline with blocking acceptance bounds).

Exit codes: 0 success, 2 usage or configuration error, 3 runtime failure
(simulation blow-up, ill-conditioned fit, unreadable data), 4 acceptance
bounds violated in reproduce mode.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

from .config import (BUILTIN_SCALES, ExperimentConfig, builtin_config_path,
                     load_config, save_config)
from .errors import (ConfigurationError, ContractViolationError,
                     IllConditioningError, SimulationError)
from .models import BUILTIN_NAMES, make_builtin
from .pipeline import (fit_from_dict, fit_to_dict, run_evaluate,
                       run_experiment, run_fit, run_simulate, write_outputs,
                       ExperimentArtifacts, check_acceptance, compare_reference)
from .simulate import (ensemble_hash, export_states_csv, load_ensemble,
                       save_ensemble)

__all__ = ["main", "cmd_simulate", "cmd_fit", "cmd_evaluate", "cmd_reproduce"]

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_RUNTIME = 3
EXIT_ACCEPTANCE = 4


def _default_threads() -> int:
    raw = os.environ.get("MSDELEARN_THREADS", "1")
    try:
        value = int(raw)
    except ValueError:
        raise ConfigurationError(
            f"MSDELEARN_THREADS must be an integer, got {raw!r}")
    if value < 1:
        raise ConfigurationError(f"MSDELEARN_THREADS must be >= 1, got {value}")
    return value


def _resolve_config(args) -> ExperimentConfig:
    if getattr(args, "config", None):
        cfg = load_config(args.config)
    elif getattr(args, "experiment", None):
        cfg = load_config(builtin_config_path(args.experiment, args.scale))
    else:
        raise ConfigurationError("provide --config FILE or --experiment NAME")
    if args.seed is not None:
        cfg = dataclasses.replace(
            cfg, simulation=dataclasses.replace(cfg.simulation,
                                                seed=int(args.seed)))
    return cfg


def _out_dir(args, cfg: ExperimentConfig) -> Path:
    out = args.out or cfg.output_dir
    if not out:
        raise ConfigurationError("provide --out DIR (or set output_dir in the config)")
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_json(path: Path, obj) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n",
                   encoding="utf-8")
    os.replace(tmp, path)


def _load_training_data(cfg, args, threads):
    """Ensemble from --ensemble if given, otherwise a fresh simulation."""
    model = make_builtin(cfg.model_name, cfg.model_params)
    if getattr(args, "ensemble", None):
        ensemble = load_ensemble(args.ensemble)
        if ensemble.dims != model.dims:
            raise ConfigurationError(
                f"ensemble dimensions {ensemble.dims} do not match the "
                f"configured model {cfg.model_name!r} ({model.dims})")
        return model, ensemble
    return run_simulate(cfg, threads=threads, seed=None)


def cmd_simulate(args) -> int:
    cfg = _resolve_config(args)
    out = _out_dir(args, cfg)
    model, ensemble = run_simulate(cfg, threads=args.threads)
    save_ensemble(out / "ensemble.npz", ensemble)
    export_states_csv(out / "states.csv", ensemble)
    _write_json(out / "manifest.json", {
        "experiment": cfg.model_name,
        "seed": ensemble.seed,
        "grid": {"T": ensemble.T, "dt": ensemble.dt,
                 "M": ensemble.M, "L": ensemble.L},
        "dims": {"D_total": ensemble.dims.D_total, "D_x": ensemble.dims.D_x,
                 "D_y": ensemble.dims.D_y},
        "ensemble_sha256": ensemble_hash(ensemble),
        "files": ["ensemble.npz", "manifest.json", "states.csv"],
    })
    print(f"wrote ensemble ({ensemble.M} trajectories, {ensemble.L} steps) "
          f"to {out}")
    return EXIT_OK


def cmd_fit(args) -> int:
    cfg = _resolve_config(args)
    out = _out_dir(args, cfg)
    model, ensemble = _load_training_data(cfg, args, args.threads)
    fit = run_fit(cfg, model, ensemble)
    _write_json(out / "estimates.json", fit_to_dict(fit))
    if fit.diffusion.model_class == "constant_matrix":
        sigma = ", ".join(f"{v:.{cfg.report_precision}f}"
                          for v in fit.diffusion.sigma_diagonal())
        print(f"fitted {cfg.model_name}; sigma_hat = [{sigma}]")
    else:
        print(f"fitted {cfg.model_name}; state-dependent diagonal noise")
    print(f"wrote estimates to {out / 'estimates.json'}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = _resolve_config(args)
    out = _out_dir(args, cfg)
    model, ensemble = _load_training_data(cfg, args, args.threads)
    if getattr(args, "estimates", None):
        try:
            with open(args.estimates, "r", encoding="utf-8") as fh:
                fit = fit_from_dict(json.load(fh))
        except FileNotFoundError:
            raise ConfigurationError(f"estimates file not found: {args.estimates}")
        except (json.JSONDecodeError, KeyError) as exc:
            raise ConfigurationError(
                f"malformed estimates file {args.estimates}: {exc}") from exc
    else:
        fit = run_fit(cfg, model, ensemble)
    report, fitted_model, replayed, comparison, sigma_entries = run_evaluate(
        cfg, model, ensemble, fit, threads=args.threads)
    art = ExperimentArtifacts(
        config=cfg, model=model, ensemble=ensemble, fit=fit,
        fitted_model=fitted_model, replayed=replayed, comparison=comparison,
        report=report, sigma_entries=sigma_entries,
        acceptance_failures=tuple(check_acceptance(report, sigma_entries,
                                                   cfg.acceptance)),
        reference_notes=tuple(compare_reference(report, sigma_entries,
                                                cfg.reference)),
        timings={})
    paths = write_outputs(art, out, save_ensemble_data=False)
    print((out / "summary.txt").read_text(encoding="utf-8"), end="")
    print(f"wrote {len(paths)} report files to {out}")
    return EXIT_OK


def cmd_reproduce(args) -> int:
    cfg = _resolve_config(args)
    out = _out_dir(args, cfg)
    art = run_experiment(cfg, threads=args.threads)
    save_config(out / "config.yaml", cfg)
    write_outputs(art, out, save_ensemble_data=args.save_ensemble)
    print((out / "summary.txt").read_text(encoding="utf-8"), end="")
    print(f"report written to {out}")
    if art.acceptance_failures:
        for failure in art.acceptance_failures:
            print(f"acceptance failure: {failure}", file=sys.stderr)
        return EXIT_ACCEPTANCE
    return EXIT_OK


def _add_common(sub, with_ensemble=False, with_estimates=False,
                with_experiment=False):
    sub.add_argument("--config", help="path to a YAML experiment config")
    if with_experiment:
        sub.add_argument("--experiment", choices=BUILTIN_NAMES,
                         help="bundled experiment name (alternative to --config)")
        sub.add_argument("--scale", choices=BUILTIN_SCALES, default="desk",
                         help="bundled config scale (default desk)")
    sub.add_argument("--seed", type=int, default=None,
                     help="override the simulation seed")
    sub.add_argument("--out", default=None, help="output directory")
    sub.add_argument("--threads", type=int, default=None,
                     help="integration threads (default MSDELEARN_THREADS or 1)")
    if with_ensemble:
        sub.add_argument("--ensemble", default=None,
                         help="reuse a saved ensemble.npz instead of simulating")
    if with_estimates:
        sub.add_argument("--estimates", default=None,
                         help="reuse a saved estimates.json instead of fitting")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="msdelearn",
        description="Learn drift and noise of mixed SDEs from trajectories.")
    subs = parser.add_subparsers(dest="command", required=True)
    _add_common(subs.add_parser(
        "simulate", help="integrate an ensemble and save it"),
        with_experiment=True)
    _add_common(subs.add_parser(
        "fit", help="fit drift and diffusion, save the estimates"),
        with_ensemble=True, with_experiment=True)
    _add_common(subs.add_parser(
        "evaluate", help="compute error metrics and figures"),
        with_ensemble=True, with_estimates=True, with_experiment=True)
    repro = subs.add_parser(
        "reproduce", help="full pipeline with blocking acceptance bounds")
    _add_common(repro, with_experiment=True)
    repro.add_argument("--save-ensemble", action="store_true",
                       help="also write ensemble.npz and states.csv")
    return parser


_COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit,
             "evaluate": cmd_evaluate, "reproduce": cmd_reproduce}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        if args.threads is None:
            args.threads = _default_threads()
        elif args.threads < 1:
            raise ConfigurationError(f"--threads must be >= 1, got {args.threads}")
        return _COMMANDS[args.command](args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SimulationError, IllConditioningError,
            ContractViolationError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    raise SystemExit(main())
