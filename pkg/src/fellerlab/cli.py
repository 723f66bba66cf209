"""Command-line entry point: ``fellerlab <subcommand> --config cfg.yaml``.

Exit codes: 0 success, 2 invalid configuration, 3 a computation
precondition failed (for instance no entry time for the decomposition),
4 I/O error. Errors are reported as one JSON object on stderr.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

import yaml
from pydantic import ValidationError

from .config import ExperimentConfig, grid_values, load_config_data, parse_config
from .core import DomainError, RngStream, UnsupportedOperation, estimate_dual, mode_index
from .decomposition import InsufficientMass, NoEntryTime, build_decomposition, verify_telescoping
from .ergodic import NotInvariant, cesaro_convergence, stationary_law
from .models import HeatModel
from .regularity import (
    ProbePlan,
    classify,
    e_modulus,
    eventual_continuity_modulus,
    eventual_e_modulus,
    stability_gap,
)
from .report import ReportBundle, Row, emit_report

EXIT_CONFIG, EXIT_PRECONDITION, EXIT_IO = 2, 3, 4
SUBCOMMANDS = {"dual": "dual", "modulus": "modulus", "decompose": "decompose", "cesaro": "cesaro",
               "stability": "stability", "report": "report-bundle"}
PRECONDITION_ERRORS = (DomainError, NoEntryTime, InsufficientMass, NotInvariant, UnsupportedOperation)


class ConfigError(Exception):
    pass


def _num(v):
    return v if isinstance(v, int) else float(v)


def _window(w):
    return [_num(x) for x in w] if isinstance(w, (tuple, list)) else _num(w)


def _run_dual(cfg, model, rng, threads):
    f = cfg.observable.build(model)
    x = cfg.dual.x.build(model)
    rows, curve = [], []
    for t in grid_values(cfg.dual.t_grid):
        est, se = estimate_dual(model, f, x, t, cfg.n_samples, rng.child(float(t)))
        rows.append(Row(cfg.experiment_id, model.kind, "dual", None, _num(t), est, se))
        curve.append([_num(t), est, se])
    return {"x": repr(x), "observable": f.name, "curve": curve}, rows


def _run_modulus(cfg, model, rng, threads):
    spec = cfg.modulus
    f = cfg.observable.build(model)
    plan = ProbePlan(spec.center.build(model), tuple(spec.radii), spec.probes_per_radius)
    if spec.definition == "e":
        rep = e_modulus(model, f, plan, grid_values(spec.t_grid), cfg.n_samples, rng, threads=threads)
    elif spec.definition == "eventual_e":
        rep = eventual_e_modulus(model, f, plan, spec.t_min, grid_values(spec.t_grid), cfg.n_samples,
                                 rng, threads=threads)
    else:
        rep = eventual_continuity_modulus(model, f, plan, spec.windows, cfg.n_samples, rng,
                                          spec.window_points, threads=threads)
    verdict = classify(rep, spec.threshold)
    rows = [
        Row(cfg.experiment_id, model.kind, f"{rep.definition}_modulus", c.radius, _window(c.window),
            c.value, c.std_error, f"{c.witness!r}@t={c.witness_t}")
        for c in rep.cells
    ]
    summary = {
        "definition": rep.definition,
        "observable": f.name,
        "moduli": [
            {"radius": e.radius, "modulus": e.modulus, "std_error": e.std_error,
             "witness": repr(e.witness), "witness_t": e.witness_t, "t_min": e.t_min}
            for e in rep.entries
        ],
        "verdict": verdict.verdict.value,
        "threshold": verdict.threshold,
        "grid": json.loads(json.dumps(rep.metadata, default=str)),
    }
    return summary, rows


def _run_decompose(cfg, model, rng, threads):
    spec = cfg.decompose
    trace = build_decomposition(model, spec.x0, spec.B, spec.alpha, spec.k, spec.t_max)
    resid = verify_telescoping(model, trace)
    rows = [Row(cfg.experiment_id, model.kind, "entry_time", None, i + 1, float(s))
            for i, s in enumerate(trace.s)]
    rows.append(Row(cfg.experiment_id, model.kind, "residual_tv", None, None, resid))
    return {"residual_tv": resid, "trace": trace.to_dict()}, rows


def _run_cesaro(cfg, model, rng, threads):
    x = cfg.cesaro.x.build(model)
    ref = stationary_law(model)
    curve = cesaro_convergence(model, x, ref, grid_values(cfg.cesaro.t_grid), cfg.n_samples, rng)
    rows = [Row(cfg.experiment_id, model.kind, "cesaro_divergence", None, _num(t), d) for t, d in curve]
    return {"x": repr(x), "curve": [[_num(t), d] for t, d in curve]}, rows


def _run_stability(cfg, model, rng, threads):
    spec = cfg.stability
    x, y = spec.x.build(model), spec.y.build(model)
    proj = None
    if spec.project_mode is not None:
        if not isinstance(model, HeatModel):
            raise ConfigError("project_mode applies to the heat model only")
        j = mode_index(spec.project_mode, model.N)
        proj = lambda s: s[:, j]  # noqa: E731
    curve = stability_gap(model, x, y, grid_values(spec.t_grid), cfg.n_samples, rng, proj)
    rows = [Row(cfg.experiment_id, model.kind, "w1_gap", None, _num(t), w) for t, w in curve]
    return {"x": repr(x), "y": repr(y), "curve": [[_num(t), w] for t, w in curve]}, rows


RUNNERS = {"dual": _run_dual, "modulus": _run_modulus, "decompose": _run_decompose,
           "cesaro": _run_cesaro, "stability": _run_stability}


def run_experiment(cfg: ExperimentConfig, threads: int = 1) -> ReportBundle:
    """Dispatch a validated config and collect the report bundle."""
    echo = cfg.model_dump(mode="json", exclude_none=True)
    if cfg.kind == "report-bundle":
        summary, rows = {}, []
        for i, sub in enumerate(cfg.experiments):
            sub = dict(sub)
            sub.setdefault("seed", cfg.seed)
            sub.setdefault("experiment_id", f"{cfg.experiment_id}.{i}")
            part = run_experiment(parse_config(sub), threads)
            summary[part.experiment_id] = {"kind": part.kind, **part.summary}
            rows.extend(part.rows)
        return ReportBundle(cfg.experiment_id, cfg.kind, summary, rows, echo)
    model = cfg.model.build()
    rng = RngStream(cfg.seed)
    summary, rows = RUNNERS[cfg.kind](cfg, model, rng, threads)
    summary = {"model": model.kind, "model_params": model.params(), "n_samples": cfg.n_samples,
               "seed": cfg.seed, **summary}
    return ReportBundle(cfg.experiment_id, cfg.kind, json.loads(json.dumps(summary)), rows, echo)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fellerlab", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        s = sub.add_parser(name, help=f"run a {SUBCOMMANDS[name]} experiment")
        s.add_argument("--config", required=True, help="YAML or JSON experiment config")
        s.add_argument("--out", help="output file (default: config 'output', else stdout)")
        s.add_argument("--format", choices=("csv", "json"), default="json")
        s.add_argument("--seed", type=int, help="override the config seed (unsigned 64-bit)")
        s.add_argument("--threads", type=int, default=1)
    return p


def _fail(code: int, exc: BaseException) -> int:
    err = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    stage = getattr(exc, "stage", None)
    if stage is not None:
        err["stage"] = stage
    print(json.dumps(err), file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        data = load_config_data(args.config)
    except OSError as exc:
        return _fail(EXIT_IO, exc)
    except (yaml.YAMLError, ValueError) as exc:
        return _fail(EXIT_CONFIG, exc)
    try:
        cfg = parse_config(data, SUBCOMMANDS[args.command], args.seed)
    except (ValidationError, ValueError) as exc:
        return _fail(EXIT_CONFIG, exc)
    try:
        bundle = run_experiment(cfg, args.threads)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, exc)
    except PRECONDITION_ERRORS as exc:
        return _fail(EXIT_PRECONDITION, exc)
    except (ValidationError, ValueError) as exc:
        return _fail(EXIT_CONFIG, exc)
    out = args.out or cfg.output
    try:
        text = emit_report(bundle, args.format, out)
    except OSError as exc:
        return _fail(EXIT_IO, exc)
    if out is None:
        try:
            sys.stdout.write(text)
            sys.stdout.flush()
        except BrokenPipeError:
            # reader went away (e.g. piped into head); silence the flush at exit
            os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
    return 0


if __name__ == "__main__":
    sys.exit(main())
