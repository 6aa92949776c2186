"""Command-line interface.

Subcommands: generate, fit, reconstruct, infer, sweep, joint-vs-individual,
report.  Exit codes: 0 success, 2 configuration/parse errors, 3 numerical
failures (a diagnostic dump path is printed).  The SGKL_LOG environment
variable sets the log level.
"""

import argparse
import json
import logging
import os
import sys
from dataclasses import replace

import numpy as np

from . import io
from .errors import ConfigError, DataFormatError, NumericalError
from .experiments import (
    emit_report,
    load_report_json,
    run_joint_vs_individual,
    run_sensitivity_sweep,
)
from .graphs import ObservedSignalSet
from .learner import fit as fit_model
from .learner import infer_inductive, reconstruct
from .synthetic import apply_mask, generate_synthetic

log = logging.getLogger("sgkl")


def _float_list(text):
    return [float(v) for v in text.split(",") if v.strip()]


def _int_list(text):
    return [int(v) for v in text.split(",") if v.strip()]


def build_parser():
    parser = argparse.ArgumentParser(prog="sgkl", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, fmt=False):
        p.add_argument("--config", help="JSON config file with 'model'/'synthetic' sections")
        p.add_argument("--seed", type=int, help="override the configured seed")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--jobs", type=int, default=1, help="parallel grid cells")
        if fmt:
            p.add_argument("--format", choices=("csv", "json"), default="csv")

    p = sub.add_parser("generate", help="synthesize a data set and write it as CSV")
    common(p)
    p.add_argument("--missing-ratio", type=float, default=0.2)

    p = sub.add_parser("fit", help="fit a model on observed signals")
    common(p)
    p.add_argument("--data", help="directory produced by 'generate'")
    p.add_argument("--graph", action="append", default=[], help="graph CSV (repeatable)")
    p.add_argument("--signals", action="append", default=[], help="signal CSV (repeatable)")
    p.add_argument("--resume", help="checkpoint directory to resume from")
    p.add_argument("--diagnostics", action="store_true",
                   help="also write the kernel-descent trace CSV")

    p = sub.add_parser("reconstruct", help="transductive reconstruction from a checkpoint")
    common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--graph-index", type=int, default=0)

    p = sub.add_parser("infer", help="inductive inference on new signals")
    common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--new-signals", required=True)
    p.add_argument("--graph-index", type=int, default=0)

    p = sub.add_parser("sweep", help="sensitivity sweep over one parameter")
    common(p, fmt=True)
    p.add_argument("--param", required=True)
    p.add_argument("--grid", required=True, help="comma-separated values")
    p.add_argument("--seeds", default="0", help="comma-separated seeds")
    p.add_argument("--missing-ratio", type=float, default=0.2)

    p = sub.add_parser("joint-vs-individual", help="joint/individual threshold study")
    common(p, fmt=True)
    p.add_argument("--deltas", required=True, help="comma-separated spectrum discrepancies")
    p.add_argument("--ks", required=True, help="comma-separated signal counts")
    p.add_argument("--seeds", default="0")
    p.add_argument("--missing-ratio", type=float, default=0.4)

    p = sub.add_parser("report", help="convert or summarize a saved JSON report")
    common(p, fmt=True)
    p.add_argument("--input", required=True, help="report JSON file")
    return parser


def _load_configs(args):
    if args.config:
        cfg, spec = io.load_config_file(args.config)
    else:
        cfg, spec = io.model_config_from_dict({}), io.synthetic_spec_from_dict({})
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
        spec = replace(spec, seed=args.seed)
    return cfg, spec


def _cmd_generate(args):
    _, spec = _load_configs(args)
    data = generate_synthetic(spec)
    os.makedirs(args.out, exist_ok=True)
    meta = {"graph_count": data.graph_count, "seed": spec.seed,
            "missing_ratio": args.missing_ratio,
            "noise_sigmas": [float(s) for s in data.noise_sigmas]}
    for m in range(data.graph_count):
        io.save_graph_csv(data.graphs[m], os.path.join(args.out, f"graph_g{m}.csv"))
        mask = apply_mask(data.noisy[m], args.missing_ratio, seed=spec.seed + 1000 + m)
        io.save_signals_csv(data.noisy[m], mask, os.path.join(args.out, f"signals_g{m}.csv"))
        io.save_signals_csv(
            data.clean[m], np.ones_like(mask, dtype=bool),
            os.path.join(args.out, f"clean_g{m}.csv"),
        )
    io.save_psi_json(data.psi_gt[0], os.path.join(args.out, "psi_gt.json"))
    with open(os.path.join(args.out, "meta.json"), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2)
        fh.write("\n")
    print(f"wrote {data.graph_count} graph(s) to {args.out}")
    return 0


def _collect_datasets(args):
    if args.data:
        meta_path = os.path.join(args.data, "meta.json")
        try:
            with open(meta_path, "r", encoding="utf-8") as fh:
                meta = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read {meta_path}: {exc}") from exc
        return [
            io.load_dataset(
                os.path.join(args.data, f"graph_g{m}.csv"),
                os.path.join(args.data, f"signals_g{m}.csv"),
            )
            for m in range(int(meta["graph_count"]))
        ]
    if not args.graph or len(args.graph) != len(args.signals):
        raise ConfigError("provide --data or matching --graph/--signals pairs")
    return [io.load_dataset(g, s) for g, s in zip(args.graph, args.signals)]


def _cmd_fit(args):
    cfg, _ = _load_configs(args)
    datasets = _collect_datasets(args)
    init_psi = init_coeffs = None
    if args.resume:
        checkpoint = io.load_model(args.resume)
        init_psi = checkpoint.psi
        init_coeffs = checkpoint.coefficients
    for m, ds in enumerate(datasets):
        signals = ds.signals
        log.info("graph %d: %d nodes, %d signals, %.1f%% observed",
                 m, signals.node_count, signals.signal_count, 100 * signals.mask.mean())
    model = fit_model(datasets, cfg, init_psi=init_psi, init_coefficients=init_coeffs)
    path = io.save_model(model, args.out)
    if args.diagnostics:
        rows = [
            {"iter": it, "f": f, "grad_norm": gn, "step": st}
            for trace in model.descent_traces
            for (it, f, gn, st) in trace
        ]
        io.save_descent_trace_csv(rows, os.path.join(args.out, "descent_trace.csv"))
    print(f"fit {'converged' if model.converged else 'stopped'} after "
          f"{model.outer_iterations} outer iteration(s); objective "
          f"{model.objective_trace[-1][1]:.6g}; checkpoint at {path}")
    return 0


def _cmd_reconstruct(args):
    model = io.load_model(args.model)
    recon = reconstruct(model, args.graph_index)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, f"reconstruction_g{args.graph_index}.csv")
    io.save_signals_csv(recon, np.ones(recon.shape, dtype=bool), path)
    print(f"wrote {path}")
    return 0


def _cmd_infer(args):
    model = io.load_model(args.model)
    new_signals = io.load_signals_csv(args.new_signals)
    result = infer_inductive(model, new_signals, args.graph_index)
    os.makedirs(args.out, exist_ok=True)
    coeff_path = os.path.join(args.out, "coefficients_test.csv")
    np.savetxt(coeff_path, result.coefficients, delimiter=",", fmt="%.17g")
    recon_path = os.path.join(args.out, "reconstruction_test.csv")
    io.save_signals_csv(result.reconstruction,
                        np.ones(result.reconstruction.shape, dtype=bool), recon_path)
    print(f"coded {result.coefficients.shape[1]} signal(s) in {result.sweeps} sweep(s); "
          f"wrote {coeff_path} and {recon_path}")
    return 0


def _cmd_sweep(args):
    cfg, spec = _load_configs(args)
    report = run_sensitivity_sweep(
        args.param, _float_list(args.grid), spec, cfg, _int_list(args.seeds),
        missing_ratio=args.missing_ratio, jobs=args.jobs,
    )
    path = emit_report(report, args.format, args.out)
    print(f"wrote {path}")
    return 0


def _cmd_joint(args):
    cfg, spec = _load_configs(args)
    report = run_joint_vs_individual(
        _float_list(args.deltas), _int_list(args.ks), spec, cfg, _int_list(args.seeds),
        missing_ratio=args.missing_ratio, jobs=args.jobs,
    )
    path = emit_report(report, args.format, args.out)
    print(f"wrote {path}; thresholds {report.meta['thresholds']}")
    return 0


def _cmd_report(args):
    report = load_report_json(args.input)
    path = emit_report(report, args.format, args.out)
    aggregates = [r for r in report.rows if r["kind"] == "aggregate"]
    print(f"wrote {path} ({len(report.rows)} rows, {len(aggregates)} aggregates)")
    return 0


_COMMANDS = {
    "generate": _cmd_generate,
    "fit": _cmd_fit,
    "reconstruct": _cmd_reconstruct,
    "infer": _cmd_infer,
    "sweep": _cmd_sweep,
    "joint-vs-individual": _cmd_joint,
    "report": _cmd_report,
}


def main(argv=None):
    level = os.environ.get("SGKL_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, DataFormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        dump = os.path.join(getattr(args, "out", "."), "numerical_failure.json")
        try:
            os.makedirs(os.path.dirname(dump) or ".", exist_ok=True)
            with open(dump, "w", encoding="utf-8") as fh:
                json.dump({"error": str(exc), "payload": _jsonable(exc.payload)}, fh, indent=2)
            where = dump
        except OSError:
            where = "(dump failed)"
        print(f"numerical failure: {exc}; diagnostics at {where}", file=sys.stderr)
        return 3


def _jsonable(payload):
    if payload is None:
        return None
    out = {}
    for key, value in dict(payload).items():
        if isinstance(value, np.ndarray):
            out[key] = value.tolist()
        elif isinstance(value, (list, tuple)):
            out[key] = [v if not isinstance(v, np.ndarray) else v.tolist() for v in value]
        else:
            out[key] = value
    return out


if __name__ == "__main__":
    sys.exit(main())
