"""Command-line entry point: ``voi <subcommand> --config run.json``.

Exit status is 0 on success, 1 when the configuration is invalid and 2 when
the computation itself fails.  Errors are written to stderr as JSON.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import dataclass, field
from typing import Any

from .core import FocalSubset
from .evppi import RegressionConfig, evppi, fit_conditional_inb
from .exceptions import ConfigError, ParseError, VoiError
from .harness import OracleSpec, SweepConfig, run_sweep, summarize_sweep
from .mm import MmConfig, evsi_moment_matching
from .models import ChemoModel, ToyModel, chemo_generator, toy_generator
from .oracle import evsi_nested_mc, toy_evppi_analytic, toy_evsi_analytic
from .psa import inb_moments, load_psa_csv, save_psa_csv, simulate_psa

__all__ = ["RunConfig", "parse_config", "run", "main", "SUBCOMMANDS"]

CONFIG_VERSION = 1
SUBCOMMANDS = {
    "psa": "psa",
    "evppi": "evppi",
    "evsi-mm": "mm",
    "evsi-nested": "nested",
    "oracle": "oracle",
    "sweep": "sweep",
}
METHODS = tuple(SUBCOMMANDS.values())
MODELS = ("toy", "chemo", "external")

_TOP_FIELDS = {
    "version", "model", "psa_path", "focal", "design", "method", "S", "Q", "R", "seed",
    "output", "psa_output", "clamp_variance", "threads", "regression", "sweep",
}
_DESIGN_FIELDS = {"toy": {"n"}, "chemo": {"n_per_arm"}, "external": set()}
_REGRESSION_FIELDS = {"n_knots", "n_lambdas", "max_terms"}
_SWEEP_FIELDS = {"Q_values", "budgets", "repetitions", "oracle", "base_seed"}
_ORACLE_FIELDS = {"kind", "value", "S", "R", "seed", "cache"}


@dataclass
class RunConfig:
    method: str
    model: str = "toy"
    psa_path: str | None = None
    focal: tuple[str, ...] = ()
    design: dict = field(default_factory=dict)
    S: int = 10_000
    Q: int = 50
    R: int = 5000
    seed: int = 0
    output: str | None = None
    psa_output: str | None = None
    clamp_variance: bool = True
    threads: int = 0
    regression: RegressionConfig = field(default_factory=RegressionConfig)
    sweep: SweepConfig | None = None

    def build_model(self):
        return ChemoModel() if self.model == "chemo" else ToyModel()

    def build_generator(self, model):
        if self.model == "chemo":
            return chemo_generator(self.design.get("n_per_arm", 150), model)
        return toy_generator(self.design.get("n", 20), model)


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _check_unknown(block: dict, allowed: set, where: str, errors: list) -> None:
    for key in sorted(set(block) - allowed):
        errors.append(f"unknown field {where}{key!r}; allowed: {sorted(allowed)}")


def _count(doc, key, errors, minimum, default):
    v = doc.get(key, default)
    if not _is_int(v) or v < minimum:
        errors.append(f"{key!r} must be an integer >= {minimum}, got {v!r}")
        return default
    return v


def parse_config(source, method: str | None = None) -> RunConfig:
    """Validate a JSON run configuration (a path or an already-loaded dict).

    Every problem is collected and reported together in one
    :class:`ConfigError`.
    """
    if isinstance(source, (str, os.PathLike)):
        try:
            with open(source, encoding="utf-8") as fh:
                doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError([f"config is not valid JSON: {exc}"]) from None
        except OSError as exc:
            raise ConfigError([f"cannot read config: {exc}"]) from None
    else:
        doc = dict(source)
    if not isinstance(doc, dict):
        raise ConfigError(["config must be a JSON object"])

    errors: list[str] = []
    _check_unknown(doc, _TOP_FIELDS, "", errors)
    if doc.get("version") != CONFIG_VERSION:
        errors.append(f"'version' must be {CONFIG_VERSION}, got {doc.get('version')!r}")

    cfg_method = doc.get("method")
    if method is None:
        method = cfg_method
    elif cfg_method is not None and cfg_method != method:
        errors.append(f"config method {cfg_method!r} does not match subcommand method {method!r}")
    if method not in METHODS:
        errors.append(f"'method' must be one of {list(METHODS)}, got {method!r}")

    model = doc.get("model", "toy")
    if model not in MODELS:
        errors.append(f"'model' must be one of {list(MODELS)}, got {model!r}")
        model = "toy"
    psa_path = doc.get("psa_path")
    if model == "external":
        if psa_path is None:
            errors.append("model 'external' requires 'psa_path'")
        if method not in ("psa", "evppi"):
            errors.append("model 'external' supports only the psa and evppi methods")

    design = doc.get("design", {})
    if not isinstance(design, dict):
        errors.append("'design' must be an object")
        design = {}
    _check_unknown(design, _DESIGN_FIELDS[model], "design.", errors)
    for key in _DESIGN_FIELDS[model] & set(design):
        if not _is_int(design[key]) or design[key] < 0:
            errors.append(f"design.{key} must be a non-negative integer")

    S = _count(doc, "S", errors, 2, 10_000)
    Q = _count(doc, "Q", errors, 2, 50)
    R = _count(doc, "R", errors, 2, 5000)
    seed = doc.get("seed", 0)
    if not _is_int(seed) or not 0 <= seed < 2**64:
        errors.append(f"'seed' must be an unsigned 64-bit integer, got {seed!r}")
        seed = 0
    threads = _count(doc, "threads", errors, 0, 0)
    clamp = doc.get("clamp_variance", True)
    if not isinstance(clamp, bool):
        errors.append("'clamp_variance' must be true or false")
    for key in ("output", "psa_output", "psa_path"):
        if key in doc and not isinstance(doc[key], str):
            errors.append(f"{key!r} must be a string path")

    # focal names: check against the model's parameters when they are known up front
    if model == "toy":
        names = ToyModel.parameter_names
        gen_focal = ("pi1",)
    elif model == "chemo":
        names = ChemoModel.parameter_names
        gen_focal = ChemoModel.parameter_names[:10]
    else:
        names, gen_focal = None, None
    focal = doc.get("focal", list(gen_focal) if gen_focal else None)
    if focal is None:
        errors.append("'focal' is required for an external PSA")
        focal = []
    elif not isinstance(focal, list) or not focal or not all(isinstance(f, str) for f in focal):
        errors.append("'focal' must be a non-empty list of parameter names")
        focal = []
    elif names is not None:
        bad = [f for f in focal if f not in names]
        if bad:
            errors.append(f"unknown focal parameter(s) {bad}; valid choices: {list(names)}")
        elif method in ("mm", "nested", "sweep") and sorted(focal, key=names.index) != list(gen_focal):
            errors.append(f"focal must match the trial's informed parameters {list(gen_focal)} "
                          f"for method {method!r}")

    reg_doc = doc.get("regression", {})
    if not isinstance(reg_doc, dict):
        errors.append("'regression' must be an object")
        reg_doc = {}
    _check_unknown(reg_doc, _REGRESSION_FIELDS, "regression.", errors)
    # the chemo trial informs ten inputs, so its default smoother admits ten terms
    default_terms = max(4, len(focal)) if model == "chemo" else 4
    regression = RegressionConfig(
        n_knots=_count(reg_doc, "n_knots", errors, 2, 10),
        n_lambdas=_count(reg_doc, "n_lambdas", errors, 1, 20),
        max_terms=_count(reg_doc, "max_terms", errors, 1, default_terms),
    )

    if method == "oracle" and model != "toy":
        errors.append("the analytic oracle exists only for the toy model; use evsi-nested")

    sweep = None
    if method == "sweep":
        sweep = _parse_sweep(doc.get("sweep"), seed, errors)
    elif "sweep" in doc:
        errors.append("'sweep' block is only valid for method 'sweep'")

    if errors:
        raise ConfigError(errors)
    return RunConfig(method=method, model=model, psa_path=psa_path, focal=tuple(focal),
                     design=dict(design), S=S, Q=Q, R=R, seed=seed, output=doc.get("output"),
                     psa_output=doc.get("psa_output"), clamp_variance=clamp, threads=threads,
                     regression=regression, sweep=sweep)


def _parse_sweep(block, seed, errors) -> SweepConfig | None:
    if not isinstance(block, dict):
        errors.append("method 'sweep' requires a 'sweep' object with Q_values, budgets, repetitions")
        return None
    _check_unknown(block, _SWEEP_FIELDS, "sweep.", errors)
    n_before = len(errors)
    for key in ("Q_values", "budgets"):
        v = block.get(key)
        if not isinstance(v, list) or not v or not all(_is_int(x) and x >= 2 for x in v):
            errors.append(f"sweep.{key} must be a non-empty list of integers >= 2")
    reps = block.get("repetitions")
    if not _is_int(reps) or reps < 2:
        errors.append("sweep.repetitions must be an integer >= 2")
    base_seed = block.get("base_seed", seed)
    if not _is_int(base_seed) or base_seed < 0:
        errors.append("sweep.base_seed must be a non-negative integer")
    oracle_doc = block.get("oracle", {"kind": "analytic"})
    if not isinstance(oracle_doc, dict):
        errors.append("sweep.oracle must be an object")
        oracle_doc = {}
    _check_unknown(oracle_doc, _ORACLE_FIELDS, "sweep.oracle.", errors)
    if len(errors) > n_before:
        return None
    try:
        oracle = OracleSpec(**oracle_doc)
        return SweepConfig(tuple(block["Q_values"]), tuple(block["budgets"]), reps,
                           oracle=oracle, base_seed=base_seed)
    except (TypeError, ValueError) as exc:
        errors.append(f"sweep: {exc}")
        return None


def _psa(cfg: RunConfig, model):
    if cfg.psa_path:
        psa = load_psa_csv(cfg.psa_path)
        if model is not None and psa.names != model.parameter_names:
            raise ConfigError([f"PSA columns {list(psa.names)} do not match the model's "
                               f"parameters {list(model.parameter_names)}"])
        return psa
    return simulate_psa(model, cfg.S, cfg.seed, threads=cfg.threads)


def _focal(cfg: RunConfig, psa) -> FocalSubset:
    try:
        return FocalSubset.from_names(cfg.focal, psa.names)
    except ValueError as exc:
        raise ConfigError([str(exc)]) from None


def _execute(cfg: RunConfig) -> dict[str, Any]:
    model = None if cfg.model == "external" else cfg.build_model()
    if cfg.method == "oracle":
        gen = cfg.build_generator(model)
        return {"method": "analytic", "value": toy_evsi_analytic(gen.n, model),
                "evppi": toy_evppi_analytic(model), "design": dict(gen.design),
                "S": None, "Q": None, "R": None, "seed": None, "warnings": []}
    if cfg.method == "nested":
        gen = cfg.build_generator(model)
        focal = FocalSubset.from_names(cfg.focal, model.parameter_names)
        est = evsi_nested_mc(model, gen, focal, cfg.S, cfg.R, seed=cfg.seed, threads=cfg.threads)
        return {**est.to_dict(), "design": dict(gen.design)}

    psa = _psa(cfg, model)
    mu, var = inb_moments(psa)
    if cfg.method == "psa":
        if cfg.psa_output:
            save_psa_csv(psa, cfg.psa_output)
        return {"method": "psa", "S": psa.S, "seed": None if cfg.psa_path else cfg.seed,
                "mu_theta": mu, "sigma2_theta": var, "parameters": list(psa.names),
                "psa_output": cfg.psa_output, "warnings": []}

    focal = _focal(cfg, psa)
    cinb = fit_conditional_inb(psa, focal, cfg.regression)
    if cfg.method == "evppi":
        return {"method": "evppi", "value": evppi(cinb, mu), "S": psa.S,
                "focal": list(cfg.focal), "mu_theta": mu, "sigma2_theta": var,
                "sigma2_phi": cinb.sigma2_phi, "warnings": []}

    gen = cfg.build_generator(model)
    if cfg.method == "mm":
        est = evsi_moment_matching(model, psa, cinb, gen,
                                   MmConfig(cfg.Q, cfg.R, cfg.clamp_variance, cfg.seed),
                                   threads=cfg.threads)
        return {**est.to_dict(), "evppi": evppi(cinb, mu), "design": dict(gen.design)}

    result = run_sweep(model, gen, focal, psa, cinb, cfg.sweep, threads=cfg.threads)
    table = summarize_sweep(result)
    if cfg.output:
        with open(cfg.output, "w", encoding="utf-8", newline="") as fh:
            fh.write(table)
    else:
        sys.stdout.write(table)
    return {"method": "sweep", "oracle": result.oracle, "S": psa.S, "seed": cfg.seed,
            "cells": len(result.cells), "csv": cfg.output, "warnings": []}


def run(cfg: RunConfig, record_runtime: bool = True) -> int:
    """Execute ``cfg``; write the result JSON to ``cfg.output`` or stdout."""
    t0 = time.perf_counter()
    try:
        doc = _execute(cfg)
    except (ConfigError, ParseError) as exc:
        _report(exc, getattr(exc, "errors", None))
        return 1
    except (VoiError, ValueError) as exc:
        _report(exc)
        return 2
    if record_runtime:
        doc["runtime_s"] = time.perf_counter() - t0
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if cfg.method == "sweep":
        # the CSV owns cfg.output; the summary goes to stderr
        sys.stderr.write(text)
    elif cfg.output:
        with open(cfg.output, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def _report(exc: Exception, errors=None) -> None:
    payload = {"error": type(exc).__name__, "message": str(exc)}
    if errors:
        payload["errors"] = list(errors)
    for attr in ("stage", "q", "s", "line"):
        if getattr(exc, attr, None) is not None:
            payload[attr] = getattr(exc, attr)
    sys.stderr.write(json.dumps(payload, sort_keys=True) + "\n")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="voi",
        description="Expected value of sample information by moment matching.",
        epilog="Choosing Q: fix R, the posterior draws needed per dataset, then set "
               "Q = (total posterior-simulation budget) / R.  Q below 30 is flagged.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "psa": "run the probabilistic sensitivity analysis and report INB moments",
        "evppi": "fit the conditional INB and report the EVPPI",
        "evsi-mm": "moment-matching EVSI",
        "evsi-nested": "gold-standard nested Monte Carlo EVSI",
        "oracle": "exact EVSI of the toy model",
        "sweep": "repeat moment matching over a grid of Q and budgets, CSV output",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text, description=text)
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--seed", type=int, help="override the configured root seed")
        p.add_argument("--output", help="override the configured output path")
        p.add_argument("--no-runtime", action="store_true",
                       help="omit runtime_s so reruns are byte-identical")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    method = SUBCOMMANDS[args.command]
    try:
        cfg = parse_config(args.config, method=method)
        if args.seed is not None:
            if not 0 <= args.seed < 2**64:
                raise ConfigError([f"--seed must be an unsigned 64-bit integer, got {args.seed}"])
            cfg.seed = args.seed
            if cfg.sweep is not None:
                cfg.sweep = SweepConfig(cfg.sweep.Q_values, cfg.sweep.budgets,
                                        cfg.sweep.repetitions, cfg.sweep.oracle,
                                        base_seed=args.seed)
        if args.output is not None:
            cfg.output = args.output
    except (ConfigError, ParseError) as exc:
        _report(exc, getattr(exc, "errors", None))
        return 1
    return run(cfg, record_runtime=not args.no_runtime)


if __name__ == "__main__":
    sys.exit(main())
