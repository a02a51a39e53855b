"""Command-line front end: ``cfacar build-network | fit | select | diagnose | bench``.

Every command writes its results plus a ``manifest.json`` (inputs, config
hash, seed, version, output hashes, timestamps) into ``--out``.  Logs and
errors go to standard error; failures exit with a nonzero status.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, io, kernels
from .inference import (
    RHAT_FIELDS,
    RHAT_LIMIT,
    centroid_select,
    loo_control_validation,
    model_fit_standardize,
    per_experiment_bfdr,
    rhat_rows,
    rhat_table,
    summarize,
    threshold_for_bfdr,
)
from .model import Hyperparameters, Model, align_inputs
from .network import build_network, read_gmt, read_network, write_network
from .sampler import ChainFailure, SamplerConfig, read_trace, run_chains, write_trace
from .simulation import BenchSpec, run_comparison, run_robustness

logger = logging.getLogger("cfacar")

NON_CONVERGED = "NON-CONVERGED"


class CommandError(Exception):
    """User-facing failure; printed without a traceback."""


def default_jobs() -> int:
    value = os.environ.get("CFACAR_THREADS", "1")
    try:
        jobs = int(value)
    except ValueError:
        raise CommandError(f"CFACAR_THREADS must be an integer, got {value!r}") from None
    return max(jobs, 1)


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()


def _hash_inputs(inputs) -> dict:
    hashes = {}
    for p in map(Path, inputs):
        files = sorted(f for f in p.iterdir() if f.is_file() and f.name != "manifest.json") if p.is_dir() else [p]
        for f in files:
            hashes[str(f)] = io.sha256(f)
    return hashes


def write_manifest(out: Path, command: str, config: dict, inputs: list, seed, started: str) -> None:
    """Record inputs, config and output hashes; only the timestamps vary between reruns."""
    outputs = {}
    for path in sorted(p for p in out.rglob("*") if p.is_file() and p.name != "manifest.json"):
        outputs[path.relative_to(out).as_posix()] = io.sha256(path)
    manifest = {
        "command": command,
        "config": config,
        "config_hash": _config_hash(config),
        "inputs": _hash_inputs(inputs),
        "seed": seed,
        "software_version": __version__,
        "kernel_backend": kernels.BACKEND,
        "outputs": outputs,
        "started": started,
        "finished": _now(),
    }
    io.write_json(out / "manifest.json", manifest)


# ---------------------------------------------------------------------------
# build-network
# ---------------------------------------------------------------------------


def cmd_build_network(args) -> int:
    started = _now()
    pathways = read_gmt(args.pathways)
    functions = read_gmt(args.functions)
    net = build_network(pathways, functions, args.jaccard_min)
    out = io.ensure_dir(args.out)
    write_network(net, out, extra={"jaccard_min": args.jaccard_min})
    n_edges = int(np.count_nonzero(np.triu(net.W, 1)))
    logger.info("network: %d pathways, %d edges, %d dropped", net.q, n_edges, len(net.dropped))
    write_manifest(out, "build-network", {"jaccard_min": args.jaccard_min},
                   [args.pathways, args.functions], None, started)
    return 0


# ---------------------------------------------------------------------------
# fit
# ---------------------------------------------------------------------------


def resolve_fit_config(args) -> tuple[Hyperparameters, SamplerConfig, dict]:
    """Defaults, then the config file, then command-line flags."""
    hyper_d, sampler_d, rest = io.load_config(args.config)
    for flag, key in (("seed", "seed"), ("chains", "chains"), ("iterations", "iterations"), ("burn_in", "burn_in")):
        value = getattr(args, flag)
        if value is not None:
            sampler_d[key] = value
    if args.bfdr is not None:
        rest["bfdr"] = args.bfdr
    if args.efa:
        rest["efa"] = True
    rest.setdefault("bfdr", 0.05)
    rest.setdefault("efa", False)
    unknown = set(rest) - {"bfdr", "efa"}
    if unknown:
        raise CommandError(f"unknown config keys {sorted(unknown)}")
    return Hyperparameters.from_dict(hyper_d), SamplerConfig.from_dict(sampler_d), rest


def write_summary_tables(out: Path, summary, level: float) -> dict:
    """theta_post / selection / snr / rhat tables and the selection report."""
    thr = threshold_for_bfdr(summary.theta_post, level)
    selection = centroid_select(summary.theta_post, thr.t)
    pids, eids = summary.pathway_ids, summary.experiment_ids
    io.write_matrix_csv(out / "theta_post.csv", summary.theta_post, pids, eids)
    io.write_matrix_csv(out / "selection.csv", selection, pids, eids, fmt="%d")
    io.write_matrix_csv(out / "snr.csv", summary.snr, pids, eids)
    exp_bfdr = per_experiment_bfdr(summary.theta_post, selection)
    io.write_rows_csv(out / "experiment_bfdr.csv", [
        {"experiment": e, "is_control": bool(c), "n_selected": int(selection[:, i].sum()), "bfdr": float(exp_bfdr[i])}
        for i, (e, c) in enumerate(zip(eids, summary.experiment_is_control))
    ], ["experiment", "is_control", "n_selected", "bfdr"])
    return {"level": level, "threshold": thr.t, "bfdr": thr.bfdr, "n_selected": thr.n_selected,
            "empty_selection": thr.empty}


def cmd_fit(args) -> int:
    started = _now()
    hyper, config, rest = resolve_fit_config(args)
    data = io.load_dataset(args.expr, args.samples)
    network = read_network(args.network)
    catalog = read_gmt(args.pathways)
    data, mask = align_inputs(data, catalog, network)
    model = Model(data, mask, network, hyper, efa=rest["efa"])
    jobs = args.jobs if args.jobs is not None else default_jobs()
    out = io.ensure_dir(args.out)
    logger.info("fitting %d genes x %d samples, %d pathways, %d chains (%s kernels)",
                data.p, data.n, model.q, config.chains, kernels.BACKEND)
    try:
        traces = run_chains(model, config, jobs=jobs)
    except ChainFailure as exc:
        io.write_json(out / "failure.json", {"error": str(exc), "state": exc.dump})
        raise CommandError(str(exc)) from None
    for t in traces:
        write_trace(t, out / "chains" / f"chain_{t.chain}")
    summary = summarize(traces, data.experiment_is_control)
    selection = write_summary_tables(out, summary, rest["bfdr"])
    if summary.rhat is not None:
        io.write_rows_csv(out / "rhat.csv", summary.rhat_rows(), RHAT_FIELDS)
    converged = summary.converged
    report = {
        "status": "OK" if converged else (NON_CONVERGED if converged is False else "UNCHECKED"),
        "converged": converged,
        "max_rhat": summary.max_rhat if summary.rhat else None,
        "rhat_limit": RHAT_LIMIT,
        "selection": selection,
        "parameters": summary.param_summaries,
        "gamma_acceptance": [t.gamma_accept for t in traces],
        "gamma_support": list(model.support),
        "model": "efa" if rest["efa"] else "cfa-car",
        "n_genes": data.p,
        "n_genes_excluded": len(mask.excluded_genes),
        "n_samples": data.n,
        "pathway_ids": summary.pathway_ids,
        "experiment_ids": summary.experiment_ids,
        "experiment_is_control": [bool(c) for c in summary.experiment_is_control],
        "cache_audits": [t.audit_log for t in traces],
        "notes": summary.notes,
    }
    io.write_json(out / "report.json", report)
    resolved = {"hyper": hyper.to_dict(), "sampler": config.to_dict(), **rest}
    io.write_json(out / "config.json", resolved)
    io.write_json(out / "fit_inputs.json", {"expr": str(args.expr), "samples": str(args.samples),
                                            "network": str(args.network), "pathways": str(args.pathways)})
    if converged is False:
        logger.warning("%s: max R-hat %.3f >= %.2f", NON_CONVERGED, summary.max_rhat, RHAT_LIMIT)
    write_manifest(out, "fit", resolved, [args.expr, args.samples, Path(args.network), args.pathways],
                   config.seed, started)
    print(json.dumps({"status": report["status"], **selection}, sort_keys=True))
    return 0


# ---------------------------------------------------------------------------
# select
# ---------------------------------------------------------------------------


def cmd_select(args) -> int:
    started = _now()
    src = Path(args.summary)
    path = src / "theta_post.csv" if src.is_dir() else src
    if not path.exists():
        raise CommandError(f"no theta_post.csv in {src}")
    theta, pids, eids = io.read_matrix_csv(path)
    if theta.size == 0:
        raise CommandError(f"{path} is empty")
    if np.any((theta < 0) | (theta > 1)):
        raise CommandError(f"{path}: posterior probabilities outside [0, 1]")
    thr = threshold_for_bfdr(theta, args.bfdr)
    selection = centroid_select(theta, thr.t)
    out = io.ensure_dir(args.out)
    io.write_matrix_csv(out / "selection.csv", selection, pids, eids, fmt="%d")
    result = {"level": args.bfdr, "threshold": thr.t, "bfdr": thr.bfdr, "n_selected": thr.n_selected,
              "empty_selection": thr.empty}
    io.write_json(out / "selection.json", result)
    write_manifest(out, "select", {"bfdr": args.bfdr}, [path], None, started)
    print(json.dumps(result, sort_keys=True))
    return 0


# ---------------------------------------------------------------------------
# diagnose
# ---------------------------------------------------------------------------


def _trace_dirs(paths) -> list[Path]:
    dirs = []
    for p in map(Path, paths):
        if (p / "chain.json").exists():
            dirs.append(p)
        elif (p / "chains").is_dir():
            dirs.extend(sorted(d for d in (p / "chains").iterdir() if (d / "chain.json").exists()))
        else:
            raise CommandError(f"{p}: neither a chain directory nor a fit directory")
    if not dirs:
        raise CommandError("no chains found")
    return dirs


def _fit_inputs(args) -> dict:
    """Input paths for model-fit/LOO: explicit flags, else the fit manifest."""
    keys = ("expr", "samples", "network", "pathways")
    found = {k: getattr(args, k) for k in keys}
    if not all(found.values()):
        for p in map(Path, args.traces):
            if (p / "fit_inputs.json").exists():
                recorded = io.read_json(p / "fit_inputs.json")
                for k in keys:
                    found[k] = found[k] or recorded.get(k)
                break
    missing = [k for k in keys if not found[k]]
    if missing:
        raise CommandError(f"model fit / LOO need --{' --'.join(missing)}")
    return found


def cmd_diagnose(args) -> int:
    started = _now()
    dirs = _trace_dirs(args.traces)
    traces = [read_trace(d) for d in dirs]
    out = io.ensure_dir(args.out)
    report = {"chains": [str(d) for d in dirs]}
    if len(traces) < 2:
        report["rhat"] = None
        report["rhat_note"] = "R-hat unavailable with a single chain"
        logger.warning("single chain: R-hat unavailable")
    else:
        rows = rhat_rows(rhat_table(traces))
        io.write_rows_csv(out / "rhat.csv", rows, RHAT_FIELDS)
        max_rhat = max(r["max_rhat"] for r in rows)
        report["rhat"] = {"max": max_rhat, "converged": bool(max_rhat < RHAT_LIMIT)}
        report["status"] = "OK" if max_rhat < RHAT_LIMIT else NON_CONVERGED

    inputs = []
    if args.model_fit or args.loo:
        paths = _fit_inputs(args)
        inputs = [paths["expr"], paths["samples"], Path(paths["network"]), paths["pathways"]]
        data = io.load_dataset(paths["expr"], paths["samples"])
        network = read_network(paths["network"])
        data, mask = align_inputs(data, read_gmt(paths["pathways"]), network)
        cfg = traces[0].config
        hyper_d = {}
        fit_cfg = dirs[0].parent.parent / "config.json"
        efa = False
        if fit_cfg.exists():
            resolved = io.read_json(fit_cfg)
            hyper_d, efa = resolved.get("hyper", {}), resolved.get("efa", False)
        hyper = Hyperparameters.from_dict(hyper_d)
        model = Model(data, mask, network, hyper, efa=efa)
        if args.model_fit:
            fit = model_fit_standardize(model, traces)
            io.write_matrix_csv(out / "standardized.csv", fit.standardized, data.gene_ids,
                                [s.sample_id for s in data.samples], row_label="gene")
            io.write_rows_csv(out / "gene_means.csv",
                              [{"gene": g, "mean": float(m)} for g, m in zip(data.gene_ids, fit.gene_means)])
            io.write_rows_csv(out / "qq.csv", [{"theoretical": float(a), "empirical": float(b)}
                                               for a, b in zip(fit.qq_theoretical, fit.qq_empirical)])
            report["model_fit"] = fit.to_dict()
        if args.loo:
            config = SamplerConfig.from_dict({**cfg, "chains": args.loo_chains or cfg["chains"]})
            folds = loo_control_validation(data, mask, network, config, hyper, level=args.bfdr, efa=efa)
            io.write_matrix_csv(out / "loo_theta.csv", np.array([f.theta_post for f in folds]).T,
                                network.pathway_ids, [f.control_id for f in folds])
            report["loo"] = [{"control": f.control_id, "threshold": f.threshold.t, "n_selected": f.n_selected}
                             for f in folds]
            report["loo_folds_without_selection"] = sum(f.n_selected == 0 for f in folds)
    io.write_json(out / "diagnose.json", report)
    write_manifest(out, "diagnose", {"model_fit": bool(args.model_fit), "loo": bool(args.loo), "bfdr": args.bfdr},
                   inputs, None, started)
    print(json.dumps({k: report[k] for k in ("rhat", "status") if k in report}, sort_keys=True))
    return 0


# ---------------------------------------------------------------------------
# bench
# ---------------------------------------------------------------------------


def cmd_bench(args) -> int:
    started = _now()
    raw = io.read_json(args.scenario)
    if not isinstance(raw, dict):
        raise CommandError(f"{args.scenario}: scenario must be a JSON object")
    try:
        spec = BenchSpec.from_dict(raw)
    except (TypeError, ValueError) as exc:
        raise CommandError(f"{args.scenario}: {exc}") from None
    jobs = args.jobs if args.jobs is not None else default_jobs()
    table = run_comparison(spec, jobs) if spec.kind == "snr" else run_robustness(spec, jobs)
    key = "snr" if spec.kind == "snr" else "corruption"
    out = io.ensure_dir(args.out)
    io.write_rows_csv(out / "auc_table.csv", table, [key, "model", "mean_auc", "stderr", "n_ok", "n_failed"])
    reps = [{key: row[key], "model": row["model"], "replicate": r, "auc": auc}
            for row in table for r, auc in enumerate(row["aucs"])]
    io.write_rows_csv(out / "replicate_aucs.csv", reps, [key, "model", "replicate", "auc"])
    for row in table:
        logger.info("%s=%g %s: AUC %.3f +/- %.3f (%d ok, %d failed)", key, row[key], row["model"],
                    row["mean_auc"], row["stderr"], row["n_ok"], row["n_failed"])
    import dataclasses

    write_manifest(out, "bench", dataclasses.asdict(spec), [args.scenario], spec.seed, started)
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cfacar", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-network", help="pathway network from pathway and function GMT files")
    p.add_argument("pathways")
    p.add_argument("functions")
    p.add_argument("--jaccard-min", type=float, default=0.03)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_network)

    p = sub.add_parser("fit", help="run the sampler and summarize the posterior")
    p.add_argument("expr", help="genes x samples TSV")
    p.add_argument("samples", help="sample sheet TSV")
    p.add_argument("network", help="network directory or network.json")
    p.add_argument("pathways", help="pathway GMT")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--chains", type=int)
    p.add_argument("--iterations", type=int)
    p.add_argument("--burn-in", type=int, dest="burn_in")
    p.add_argument("--bfdr", type=float)
    p.add_argument("--efa", action="store_true", help="network-free baseline (W = 0, gamma = 0)")
    p.add_argument("--jobs", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("select", help="re-threshold a fitted posterior at a BFDR level")
    p.add_argument("summary", help="fit directory or theta_post.csv")
    p.add_argument("--bfdr", type=float, default=0.05)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("diagnose", help="R-hat, model fit and leave-one-out control checks")
    p.add_argument("traces", nargs="+", help="fit directory or chain directories")
    p.add_argument("--model-fit", action="store_true")
    p.add_argument("--loo", action="store_true")
    p.add_argument("--loo-chains", type=int)
    p.add_argument("--bfdr", type=float, default=0.05)
    p.add_argument("--expr")
    p.add_argument("--samples")
    p.add_argument("--network")
    p.add_argument("--pathways")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("bench", help="simulation study from a scenario JSON")
    p.add_argument("scenario")
    p.add_argument("--jobs", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CommandError, ValueError, OSError, KeyError) as exc:
        print(f"cfacar {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
