"""Command-line front end: simulate | estimate | robustness | normality | apply.

Every run writes its outputs plus a manifest.json (resolved config, master
seed, input digests, tool version, kernel backend) into --out; reruns with
the same manifest inputs reproduce the outputs. Exit codes: 0 success,
1 I/O or schema error, 2 config validation error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import replace
from datetime import date, timedelta
from pathlib import Path

import numpy as np

from . import __version__, kernels, viz
from .core import (
    CovariateDesign,
    ODMatrix,
    ObservationSet,
    read_matrix_csv,
    row_col_margins,
    spectral_decompose,
    symmetrize,
    write_matrix_csv,
)
from .errors import ConfigError, EstimationError, NumericError, SchemaError
from .estim import (
    estimate_adhoc,
    estimate_lambda_gaussian,
    estimate_lambda_mle,
    estimate_lambda_poisson,
    estimate_lambda_regression,
)
from .sim import SimConfig, parse_kv_file, sample_counts
from .stats import (
    normality_experiment,
    results_to_csv,
    robustness_sweep,
)

CLI_METHODS = ("gaussian", "poisson_prop1", "poisson_appendix", "mle", "regression", "adhoc")


# --- plumbing ----------------------------------------------------------------


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _prepare_out(args) -> Path:
    out = Path(args.out)
    if out.exists() and any(out.iterdir()) and not args.force:
        raise SchemaError(
            f"output directory {out} exists and is not empty (use --force to overwrite)"
        )
    out.mkdir(parents=True, exist_ok=True)
    return out


def _require_file(path_str: str, what: str) -> Path:
    p = Path(path_str)
    if not p.is_file():
        raise SchemaError(f"{what} file not found: {p}")
    return p


def _write_manifest(out: Path, subcommand: str, config: dict, seed, inputs: dict,
                    outputs: list[str]) -> None:
    manifest = {
        "subcommand": subcommand,
        "config": config,
        "seed": seed,
        "input_digests": {str(k): _sha256(Path(v)) for k, v in inputs.items()},
        "tool_version": __version__,
        "kernel_backend": kernels.BACKEND,
        "outputs": sorted(outputs),
    }
    tmp = out / "manifest.json.tmp"
    tmp.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    os.replace(tmp, out / "manifest.json")


def _write_margins_csv(path: Path, ids, departures, arrivals) -> None:
    with path.open("w", newline="") as fh:
        fh.write("station_id,departures,arrivals\n")
        for sid, d, a in zip(ids, departures, arrivals):
            fh.write(f"{sid},{d:.12g},{a:.12g}\n")


def _load_design(path: Path, days: int) -> CovariateDesign:
    import csv as _csv

    with path.open(newline="") as fh:
        rows = list(_csv.reader(fh))
    if not rows:
        raise SchemaError(f"{path}: empty design file")
    labels = tuple(x.strip() for x in rows[0])
    try:
        X = np.array([[float(v) for v in row] for row in rows[1:]])
    except ValueError as exc:
        raise SchemaError(f"{path}: non-numeric design entry ({exc})") from exc
    if X.shape[0] != days:
        raise SchemaError(f"{path}: design has {X.shape[0]} rows, counts have {days} days")
    return CovariateDesign(X, labels=labels)


def _run_estimator(method, prior, obs, design, family, ids):
    if method == "gaussian":
        return [estimate_lambda_gaussian(prior, obs.y_bar, station_ids=ids)]
    if method in ("poisson_prop1", "poisson_appendix"):
        return [
            estimate_lambda_poisson(
                prior, obs.y_bar, variant=method.removeprefix("poisson_"), station_ids=ids
            )
        ]
    if method == "mle":
        return [estimate_lambda_mle(prior, obs, family=family, station_ids=ids)]
    if method == "adhoc":
        lam_n = estimate_lambda_gaussian(prior, obs.y_bar).lambda_hat
        return [estimate_adhoc(prior, lam_n, obs, station_ids=ids)]
    if method == "regression":
        if design is None:
            design = CovariateDesign(np.ones((obs.days, 1)), labels=("intercept",))
        return estimate_lambda_regression(prior, obs.y_dep, design, station_ids=ids)
    raise ConfigError(f"method must be one of {CLI_METHODS}, got {method!r}")


def _emit_estimate(out: Path, reports, ids, truth: ODMatrix | None) -> list[str]:
    outputs = []
    main = reports[0]
    payload = [r.to_dict() for r in reports]
    if truth is not None and main.R_z_hat is not None:
        err = main.R_z_hat.entries - truth.entries
        payload[0]["matrix_mse_vs_truth"] = float(np.mean(err**2))
    (out / "report.json").write_text(json.dumps(payload if len(payload) > 1 else payload[0], indent=2) + "\n")
    outputs.append("report.json")
    if main.R_z_hat is not None:
        write_matrix_csv(out / "matrix.csv", main.R_z_hat)
        outputs.append("matrix.csv")
        dep, arr = row_col_margins(main.R_z_hat)
        _write_margins_csv(out / "margins.csv", ids, dep, arr)
        outputs.append("margins.csv")
        viz.heatmap_svg(main.R_z_hat, ids, out / "heatmap.svg", title="estimated OD matrix")
        outputs.append("heatmap.svg")
        viz.margins_svg(dep, arr, ids, out / "margins.svg", title="expected entries/exits")
        outputs.append("margins.svg")
    for rep in reports[1:]:
        name = f"effect_{rep.label or 'x'}.csv"
        write_matrix_csv(out / name, rep.R_z_raw, station_ids=ids)
        outputs.append(name)
    return outputs


# --- subcommands -------------------------------------------------------------


def cmd_simulate(args) -> None:
    cfg_path = _require_file(args.config, "config")
    config = SimConfig.from_file(cfg_path)
    if args.seed is not None:
        config = replace(config, seed=args.seed).validate()
    out = _prepare_out(args)
    rng = np.random.default_rng(config.seed)
    counts, obs = sample_counts(
        config.truth, config.days, rng, family=config.family, nb_p=config.nb_p
    )
    ids = config.truth.station_ids
    outputs = []
    for t in range(config.days):
        name = f"counts_{t + 1:04d}.csv"
        write_matrix_csv(out / name, counts[t], station_ids=ids)
        outputs.append(name)
    day0 = date(2000, 1, 1)
    with (out / "barriers.csv").open("w", newline="") as fh:
        fh.write("date,station_id,departures,arrivals\n")
        for t in range(config.days):
            d = (day0 + timedelta(days=t)).isoformat()
            for i, sid in enumerate(ids):
                fh.write(f"{d},{sid},{obs.y_dep[t, i]:.12g},{obs.y_arr[t, i]:.12g}\n")
    outputs.append("barriers.csv")
    # survey prior: window mean of subsample days (or one contamination draw)
    from .stats import survey_window_estimate

    survey = survey_window_estimate(
        config.truth.entries,
        np.random.default_rng(config.seed + 1),
        survey_kind=config.survey_kind,
        survey_scale=config.survey_scale,
        survey_days=config.survey_days,
        noise_level=config.noise_level,
        noise_kind=config.noise_kind,
        family=config.family,
        nb_p=config.nb_p,
    )
    write_matrix_csv(out / "survey.csv", survey, station_ids=ids)
    outputs.append("survey.csv")
    write_matrix_csv(out / "truth.csv", config.truth)
    outputs.append("truth.csv")
    _write_manifest(
        out, "simulate",
        {k: v for k, v in vars(args).items() if k not in ("func",)} | {"resolved_seed": config.seed},
        config.seed, {"config": cfg_path}, outputs,
    )
    print(f"simulated {config.days} day(s) for {config.truth.n} stations -> {out}")


def cmd_estimate(args) -> None:
    survey_path = _require_file(args.survey, "survey")
    counts_path = _require_file(args.counts, "counts")
    survey = read_matrix_csv(survey_path)
    from .data import load_barrier_counts

    obs = load_barrier_counts(counts_path, station_ids=survey.station_ids)
    out = _prepare_out(args)
    prior = spectral_decompose(symmetrize(survey))
    design = None
    inputs = {"survey": survey_path, "counts": counts_path}
    if args.design:
        design_path = _require_file(args.design, "design")
        design = _load_design(design_path, obs.days)
        inputs["design"] = design_path
    truth = None
    if args.truth:
        truth_path = _require_file(args.truth, "truth")
        truth = read_matrix_csv(truth_path)
        inputs["truth"] = truth_path
    reports = _run_estimator(args.method, prior, obs, design, args.family, survey.station_ids)
    outputs = _emit_estimate(out, reports, survey.station_ids, truth)
    _write_manifest(
        out, "estimate",
        {k: v for k, v in vars(args).items() if k != "func"},
        args.seed, inputs, outputs,
    )
    print(f"estimate ({args.method}) -> {out}")


def _grid_config(kv: dict, base_dir: Path, *, defaults: dict) -> dict:
    sim_keys = {
        "truth", "truth_inline", "station_ids", "family", "nb_p", "survey_scale",
        "survey_days", "noise_level", "noise_kind", "survey_kind", "seed", "days",
    }
    sim_kv = {k: v for k, v in kv.items() if k in sim_keys}
    sim_kv.setdefault("days", "100")
    config = SimConfig.from_mapping(sim_kv, base_dir=base_dir)
    extra = dict(defaults)
    for key, value in kv.items():
        if key in sim_keys:
            continue
        if key not in extra:
            raise ConfigError(f"unknown config key {key!r}")
        if isinstance(extra[key], tuple):
            kind = type(extra[key][0])
            extra[key] = tuple(kind(v.strip()) for v in value.split(",") if v.strip())
        elif isinstance(extra[key], int):
            extra[key] = int(value)
        else:
            extra[key] = value
    return {"config": config, **extra}


def cmd_robustness(args) -> None:
    cfg_path = _require_file(args.config, "config")
    kv = parse_kv_file(cfg_path)
    parsed = _grid_config(
        kv, cfg_path.parent,
        defaults={
            "etas": (0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0),
            "alphas": (1.0,),
            "Ts": (30, 200, 300, 2000),
            "methods": ("gaussian", "adhoc"),
            "noise_kinds": ("absolute", "proportional"),
            "replications": 200,
        },
    )
    config: SimConfig = parsed["config"]
    alphas = parsed["alphas"]
    replications = 2000 if args.full else parsed["replications"]
    out = _prepare_out(args)
    results = robustness_sweep(
        config.truth,
        etas=parsed["etas"],
        Ts=parsed["Ts"],
        methods=parsed["methods"],
        replications=replications,
        alphas=alphas,
        noise_kinds=parsed["noise_kinds"],
        seed=args.seed if args.seed is not None else config.seed,
        family=config.family,
        nb_p=config.nb_p,
        jobs=args.jobs,
    )
    outputs = []
    if args.format == "json":
        rows = [
            {k: getattr(r, k) for k in (
                "method", "noise_kind", "alpha", "eta", "T", "replications",
                "mse", "mse_var", "matrix_mse", "matrix_mse_var")}
            for r in results
        ]
        (out / "robustness.json").write_text(json.dumps(rows, indent=2) + "\n")
        outputs.append("robustness.json")
    else:
        results_to_csv(results, out / "robustness.csv")
        outputs.append("robustness.csv")
    for kind in parsed["noise_kinds"]:
        name = f"curves_{kind}.svg"
        viz.robustness_curves_svg(results, out / name, kind)
        outputs.append(name)
    summary = {
        "cells": len(results),
        "replications": replications,
        "methods": list(parsed["methods"]),
        "noise_kinds": list(parsed["noise_kinds"]),
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    outputs.append("summary.json")
    _write_manifest(
        out, "robustness",
        {k: v for k, v in vars(args).items() if k != "func"},
        args.seed if args.seed is not None else config.seed,
        {"config": cfg_path}, outputs,
    )
    print(f"robustness sweep ({len(results)} cells) -> {out}")


def cmd_normality(args) -> None:
    cfg_path = _require_file(args.config, "config")
    kv = parse_kv_file(cfg_path)
    parsed = _grid_config(
        kv, cfg_path.parent,
        defaults={
            "Ts": (10, 50, 500, 10000),
            "replications": 200,
            "method": "gaussian",
        },
    )
    config: SimConfig = parsed["config"]
    replications = 1000 if args.full else parsed["replications"]
    out = _prepare_out(args)
    rows = normality_experiment(
        config, parsed["Ts"], replications, parsed["method"], jobs=args.jobs
    )
    outputs = []
    if args.format == "json":
        (out / "normality.json").write_text(json.dumps(rows, indent=2) + "\n")
        outputs.append("normality.json")
    else:
        with (out / "normality.csv").open("w", newline="") as fh:
            fh.write("component,T,statistic,p_value\n")
            for r in sorted(rows, key=lambda r: (r["component"], r["T"])):
                fh.write(
                    f"{r['component']},{r['T']},{r['statistic']:.6g},{r['p_value']:.6g}\n"
                )
        outputs.append("normality.csv")
    viz.normality_curves_svg(rows, out / "normality.svg")
    outputs.append("normality.svg")
    _write_manifest(
        out, "normality",
        {k: v for k, v in vars(args).items() if k != "func"},
        args.seed if args.seed is not None else config.seed,
        {"config": cfg_path}, outputs,
    )
    print(f"normality experiment ({len(rows)} rows) -> {out}")


def cmd_apply(args) -> None:
    from .data import build_survey_od, load_barrier_counts, load_journeys, load_stations

    stations_path = _require_file(args.stations, "stations")
    journeys_path = _require_file(args.journeys, "journeys")
    barriers_path = _require_file(args.barriers, "barriers")
    stations = load_stations(stations_path)
    ids = tuple(s.id for s in stations)
    records = load_journeys(journeys_path)
    build = build_survey_od(records, stations)
    if build.total == 0:
        raise EstimationError("survey OD matrix is empty (all journeys dropped)")
    obs = load_barrier_counts(barriers_path, station_ids=ids)
    inputs = {"stations": stations_path, "journeys": journeys_path, "barriers": barriers_path}
    known = {}
    for key in ("casual", "specific", "events"):
        path_str = getattr(args, key)
        if path_str:
            p = _require_file(path_str, key)
            known[key] = read_matrix_csv(p)
            inputs[key] = p
    if known:
        from .core import residual_margins

        yd, ya, _ = residual_margins(
            obs.y_dep, obs.y_arr,
            x_casual=known.get("casual"),
            x_specific=known.get("specific"),
            x_event=known.get("events"),
        )
        obs = ObservationSet(y_dep=yd, y_arr=ya, station_ids=ids)
    out = _prepare_out(args)
    prior = spectral_decompose(build.matrix)
    design = None
    if args.design:
        design_path = _require_file(args.design, "design")
        design = _load_design(design_path, obs.days)
        inputs["design"] = design_path
    reports = _run_estimator(args.method, prior, obs, design, args.family, ids)
    outputs = _emit_estimate(out, reports, ids, None)
    write_matrix_csv(out / "survey_od.csv", build.counts.astype(float), station_ids=ids)
    outputs.append("survey_od.csv")
    viz.heatmap_svg(build.matrix, ids, out / "heatmap_survey.svg", title="survey OD matrix")
    outputs.append("heatmap_survey.svg")
    payload = json.loads((out / "report.json").read_text())
    extra = {"dropped_same_station": build.dropped, "survey_total": build.total}
    if isinstance(payload, dict):
        payload.update(extra)
    else:
        payload[0].update(extra)
    (out / "report.json").write_text(json.dumps(payload, indent=2) + "\n")
    _write_manifest(
        out, "apply",
        {k: v for k, v in vars(args).items() if k != "func"},
        args.seed, inputs, outputs,
    )
    print(f"apply ({args.method}) on {len(ids)} stations, {obs.days} day(s) -> {out}")


# --- parser ------------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser, default_out: str) -> None:
    p.add_argument("--out", default=default_out, help="output directory")
    p.add_argument("--seed", type=int, default=None, help="master seed override")
    p.add_argument("--jobs", type=int, default=1, help="parallel replication workers")
    p.add_argument("--force", action="store_true", help="overwrite an existing run directory")
    p.add_argument("--format", choices=("csv", "json"), default="csv",
                   help="tabular output format")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="odflow",
        description="estimate origin-destination matrices from margin counts and surveys",
    )
    ap.add_argument("--version", action="version", version=f"odflow {__version__}")
    sub = ap.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic dataset from a config")
    p.add_argument("--config", required=True, help="key=value simulation config")
    _add_common(p, "odflow_simulate")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="run one estimator on survey + margin files")
    p.add_argument("--survey", required=True, help="survey OD matrix csv")
    p.add_argument("--counts", required=True, help="barrier counts csv")
    p.add_argument("--method", required=True, choices=CLI_METHODS)
    p.add_argument("--family", choices=("poisson", "negbin"), default="poisson")
    p.add_argument("--design", default=None, help="covariate design csv (regression)")
    p.add_argument("--truth", default=None, help="optional truth matrix csv for MSE")
    _add_common(p, "odflow_estimate")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("robustness", help="survey-bias robustness sweep")
    p.add_argument("--config", required=True)
    p.add_argument("--full", action="store_true", help="2000 replications per cell")
    _add_common(p, "odflow_robustness")
    p.set_defaults(func=cmd_robustness)

    p = sub.add_parser("normality", help="eigenvalue-estimator normality diagnostics")
    p.add_argument("--config", required=True)
    p.add_argument("--full", action="store_true", help="1000 replications")
    _add_common(p, "odflow_normality")
    p.set_defaults(func=cmd_normality)

    p = sub.add_parser("apply", help="full pipeline on stations/journeys/barriers files")
    p.add_argument("--stations", required=True)
    p.add_argument("--journeys", required=True)
    p.add_argument("--barriers", required=True)
    p.add_argument("--method", required=True, choices=CLI_METHODS)
    p.add_argument("--family", choices=("poisson", "negbin"), default="poisson")
    p.add_argument("--casual", default=None, help="known casual-journey matrix csv")
    p.add_argument("--specific", default=None, help="known specific-ticket matrix csv")
    p.add_argument("--events", default=None, help="known big-event matrix csv")
    p.add_argument("--design", default=None, help="covariate design csv (regression)")
    _add_common(p, "odflow_apply")
    p.set_defaults(func=cmd_apply)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
        return 0
    except (SchemaError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (NumericError, np.linalg.LinAlgError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
