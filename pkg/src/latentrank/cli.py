"""Command-line front end.

Subcommands: ``validate`` (parse and check a model), ``fit`` (estimate from
raw data or covariance input), ``diagnose`` (Jacobian rank / nullspace /
information report at a parameter point), ``rank-scan`` (rank along a
one-parameter family), ``simulate`` (Monte Carlo experiments), and
``shapiro`` (the three-indicator experiment with its default settings).

Exit codes: 0 success (fit: converged and admissible), 2 fit did not
converge, 3 fit converged to an inadmissible solution, 64 input/parse
errors, 65 covariance input not positive-definite.
"""

from __future__ import annotations

import argparse
import csv
import json
import re
import sys
from pathlib import Path

import numpy as np

from . import presets, reports
from .dsl import parse_model
from .estimation import (
    FISHER_SCORING,
    FitConfig,
    GRADIENT_DESCENT,
    ITERATIVE,
    NEWTON_RAPHSON,
    NonPositiveDefiniteError,
    SAMPLE,
    WeightMatrix,
    fit,
    ml_weight,
)
from .identification import (
    affected_params,
    fisher_information,
    jacobian_report,
    rank_scan,
)
from .model import ModelSpec, SampleMoments, Theta, build_matrices, validate
from .simulation import (
    SBMTMM,
    SHAPIRO,
    SimConfig,
    default_workers,
    run_experiment,
    shapiro_experiment,
)

EXIT_OK = 0
EXIT_NONCONVERGED = 2
EXIT_INADMISSIBLE = 3
EXIT_USAGE = 64
EXIT_NOT_PD = 65

_OPTIMIZERS = {"gd": GRADIENT_DESCENT, "fisher": FISHER_SCORING,
               "newton": NEWTON_RAPHSON}


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_USAGE):
        super().__init__(message)
        self.code = code


def _infer_group_count(text: str) -> int:
    best = 1
    for m in re.finditer(r"^\s*group\s*:\s*(\d+)\s*$", text, re.MULTILINE):
        best = max(best, int(m.group(1)))
    return best


def load_model(token: str) -> ModelSpec:
    """Resolve a --model value: a built-in preset name (optionally
    ``name:delta``) or a path to a model text file."""
    if presets.is_preset(token):
        text, n_groups = presets.resolve_preset(token)
    else:
        path = Path(token)
        if not path.exists():
            raise CliError(f"model {token!r} is neither a preset "
                           f"({', '.join(presets.preset_names())}) nor a file")
        text = path.read_text(encoding="utf-8")
        n_groups = _infer_group_count(text)
    result = parse_model(text, n_groups=n_groups)
    for d in result.diagnostics:
        print(f"{token}:{d}", file=sys.stderr)
    if not result.ok:
        raise CliError(f"model {token!r} failed to parse")
    return result.spec


def read_covariance_file(path: str | Path) -> tuple[list[list[str]], SampleMoments]:
    """Covariance input: per group a header of variable names, the matrix
    rows, and a line ``n=<int>``; groups separated by blank lines."""
    text = Path(path).read_text(encoding="utf-8")
    names_per_group: list[list[str]] = []
    covs, ns = [], []
    for block in re.split(r"\n\s*\n", text.strip()):
        lines = [ln.strip() for ln in block.strip().splitlines() if ln.strip()]
        if len(lines) < 3:
            raise CliError(f"{path}: covariance block needs a header, "
                           "matrix rows, and an n=<int> line")
        names = lines[0].split()
        q = len(names)
        m = re.fullmatch(r"n\s*=\s*(\d+)", lines[-1])
        if m is None:
            raise CliError(f"{path}: last line of a block must be n=<int>, "
                           f"got {lines[-1]!r}")
        rows = lines[1:-1]
        if len(rows) != q:
            raise CliError(f"{path}: expected {q} matrix rows, got {len(rows)}")
        try:
            mat = np.array([[float(v) for v in row.split()] for row in rows])
        except ValueError as err:
            raise CliError(f"{path}: bad matrix value ({err})")
        if mat.shape != (q, q):
            raise CliError(f"{path}: matrix block is {mat.shape}, expected "
                           f"{q}x{q}")
        if np.max(np.abs(mat - mat.T)) > 1e-8:
            raise CliError(f"{path}: covariance matrix is not symmetric")
        names_per_group.append(names)
        covs.append(mat)
        ns.append(int(m.group(1)))
    return names_per_group, SampleMoments(tuple(covs), tuple(ns))


def read_data_csv(path: str | Path) -> tuple[list[str], np.ndarray]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CliError(f"{path}: empty data file")
        names = [h.strip() for h in header]
        try:
            data = np.array([[float(v) for v in row] for row in reader])
        except ValueError as err:
            raise CliError(f"{path}: bad data value ({err})")
    if data.ndim != 2 or data.shape[1] != len(names):
        raise CliError(f"{path}: rows do not match the header width")
    return names, data


def _align_to_spec(spec: ModelSpec, names_per_group, covs, ns) -> SampleMoments:
    if len(covs) != spec.n_groups:
        raise CliError(f"model has {spec.n_groups} group(s), input has "
                       f"{len(covs)}")
    aligned = []
    for g, (names, cov) in enumerate(zip(names_per_group, covs)):
        want = list(spec.groups[g].observed)
        if sorted(names) != sorted(want):
            raise CliError(f"group {g + 1} variables {names} do not match "
                           f"the model's {want}")
        perm = [names.index(v) for v in want]
        aligned.append(cov[np.ix_(perm, perm)])
    return SampleMoments(tuple(aligned), tuple(ns))


def _moments_from_args(spec: ModelSpec, args) -> SampleMoments:
    if args.cov and args.data:
        raise CliError("give either --cov or --data, not both")
    if args.cov:
        names_per_group, moments = read_covariance_file(args.cov)
        return _align_to_spec(spec, names_per_group, moments.covs, moments.ns)
    if args.data:
        names_per_group, covs, ns = [], [], []
        for path in args.data:
            names, data = read_data_csv(path)
            centered = data - data.mean(axis=0)
            covs.append(centered.T @ centered / data.shape[0])
            ns.append(data.shape[0])
            names_per_group.append(names)
        return _align_to_spec(spec, names_per_group, covs, ns)
    raise CliError("fit needs --cov or --data input")


def _fit_config(args) -> FitConfig:
    kwargs = {}
    if args.optimizer:
        kwargs["optimizer"] = _OPTIMIZERS[args.optimizer]
    if args.tol is not None:
        kwargs["tol"] = args.tol
    if getattr(args, "max_iter", None) is not None:
        kwargs["max_iter"] = args.max_iter
    if getattr(args, "gamma", None) is not None:
        kwargs["gamma"] = args.gamma
    if getattr(args, "weights", None):
        kwargs["weights"] = args.weights
    return FitConfig(**kwargs)


def _final_weight(spec: ModelSpec, theta: Theta, moments: SampleMoments,
                  config: FitConfig) -> WeightMatrix | None:
    try:
        if config.weights == SAMPLE:
            return WeightMatrix(tuple(ml_weight(s) for s in moments.covs))
        sigmas = [lam @ phi @ lam.T + psi
                  for lam, phi, psi in build_matrices(spec, theta)]
        return WeightMatrix(tuple(ml_weight(s) for s in sigmas))
    except NonPositiveDefiniteError:
        return None


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


# -- subcommands --------------------------------------------------------------


def cmd_validate(args) -> int:
    token = args.model
    if presets.is_preset(token):
        text, n_groups = presets.resolve_preset(token)
    else:
        text = Path(token).read_text(encoding="utf-8")
        n_groups = _infer_group_count(text)
    result = parse_model(text, n_groups=n_groups)
    for d in result.diagnostics:
        print(str(d))
    if not result.ok:
        return EXIT_USAGE
    issues = validate(result.spec)
    for issue in issues:
        print(f"violation: {issue}")
    spec = result.spec
    print(f"ok: {spec.n_groups} group(s), p = {spec.n_free} free parameters, "
          f"p* = {spec.n_moments} moments, df = {spec.n_moments - spec.n_free}")
    return EXIT_OK if not issues else EXIT_USAGE


def cmd_fit(args) -> int:
    spec = load_model(args.model)
    moments = _moments_from_args(spec, args)
    config = _fit_config(args)
    for cov in moments.covs:
        ev = np.linalg.eigvalsh(cov)[0]
        if ev <= 0:
            raise CliError("covariance input is not positive-definite "
                           f"(smallest eigenvalue {ev:.6e})", EXIT_NOT_PD)
    result = fit(spec, moments, config)

    ses = None
    weight = _final_weight(spec, result.theta_hat, moments, config)
    if weight is not None:
        info = fisher_information(
            jacobian_report(spec, result.theta_hat).delta, weight,
            moments.ns, labels=spec.free_labels,
            singular_cond=config.singular_cond)
        ses = info.standard_errors

    if result.converged and result.admissible:
        code = EXIT_OK
    elif not result.converged:
        code = EXIT_NONCONVERGED
    else:
        code = EXIT_INADMISSIBLE

    out = _out_dir(args)
    payload = {
        "model": args.model,
        "optimizer": config.optimizer,
        "weights": config.weights,
        "n": list(moments.ns),
        "converged": result.converged,
        "stop_reason": result.stop_reason,
        "iterations": result.iterations,
        "loss": result.loss,
        "gradient_norm": result.gradient_norm,
        "admissible": result.admissible,
        "admissibility_issues": list(result.admissibility_issues),
        "theta": result.theta_hat.as_dict(),
        "standard_errors": ses,
        "warnings": list(result.warnings),
        "exit_code": code,
    }
    (out / "fit.json").write_text(json.dumps(payload, indent=2) + "\n",
                                  encoding="utf-8")

    lines = [f"model: {args.model}",
             f"converged: {result.converged} ({result.stop_reason}, "
             f"{result.iterations} iterations)",
             f"loss: {result.loss:.6e}   max |gradient|: "
             f"{result.gradient_norm:.3e}",
             f"admissible: {result.admissible}"]
    lines += [f"  issue: {msg}" for msg in result.admissibility_issues]
    lines.append("")
    lines.append(f"{'parameter':<16}{'estimate':>14}{'std.err':>14}")
    for lab in spec.free_labels:
        est = result.theta_hat.as_dict()[lab]
        se = "unavailable" if ses is None else f"{ses[lab]:.6g}"
        lines.append(f"{lab:<16}{est:>14.6g}{se:>14}")
    report_text = "\n".join(lines) + "\n"
    (out / "fit.txt").write_text(report_text, encoding="utf-8")
    print(report_text, end="")
    return code


def _theta_from_file(spec: ModelSpec, path: str | Path) -> Theta:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    if isinstance(payload, dict) and "theta" in payload \
            and isinstance(payload["theta"], dict):
        payload = payload["theta"]
    if not isinstance(payload, dict):
        raise CliError(f"{path}: expected a JSON object of parameter values")
    try:
        return spec.theta_from({k: float(v) for k, v in payload.items()})
    except KeyError as err:
        raise CliError(f"{path}: {err.args[0]}")


def cmd_diagnose(args) -> int:
    spec = load_model(args.model)
    theta = (_theta_from_file(spec, args.theta) if args.theta
             else spec.start_theta())
    report = jacobian_report(spec, theta, tol=args.rank_tol)
    affected = affected_params(report)

    sigmas = [lam @ phi @ lam.T + psi
              for lam, phi, psi in build_matrices(spec, theta)]
    ses_available = False
    info_payload = None
    try:
        weight = WeightMatrix(tuple(ml_weight(s) for s in sigmas))
        ns = [args.n // spec.n_groups] * spec.n_groups
        info = fisher_information(report.delta, weight, ns,
                                  labels=spec.free_labels)
        ses_available = info.available
        info_payload = {
            "condition_number": info.condition_number,
            "standard_errors": info.standard_errors,
        }
    except NonPositiveDefiniteError as err:
        info_payload = {"error": str(err)}

    out = _out_dir(args)
    payload = {
        "model": args.model,
        "theta": theta.as_dict(),
        "rank": report.rank,
        "n_parameters": len(report.col_labels),
        "deficiency": report.deficiency,
        "tolerance": report.tolerance,
        "singular_values": report.singular_values.tolist(),
        "nullspace": {
            "basis": report.nullspace.T.tolist(),
            "labels": list(report.col_labels),
        },
        "affected": list(affected.affected),
        "orthogonal": list(affected.orthogonal),
        "components": affected.components,
        "information": info_payload,
    }
    (out / "diagnose.json").write_text(json.dumps(payload, indent=2) + "\n",
                                       encoding="utf-8")

    lines = [f"model: {args.model}",
             f"rank: {report.rank} of {len(report.col_labels)} "
             f"(tolerance {report.tolerance:.3e})"]
    if report.deficiency == 0:
        lines.append("no deficiency detected")
    else:
        lines.append(f"deficiency: {report.deficiency}")
        lines.append("affected by the deficiency: "
                     + (", ".join(affected.affected) or "(none)"))
        lines.append("unaffected by the deficiency: "
                     + (", ".join(affected.orthogonal) or "(none)"))
        if not ses_available:
            lines.append("standard errors: unavailable "
                         "(information numerically singular)")
    text = "\n".join(lines) + "\n"
    (out / "diagnose.txt").write_text(text, encoding="utf-8")
    print(text, end="")
    return EXIT_OK


def _parse_grid(text: str, cast=float) -> tuple:
    try:
        return tuple(cast(v.strip()) for v in text.split(",") if v.strip())
    except ValueError as err:
        raise CliError(f"bad grid value: {err}")


def cmd_rank_scan(args) -> int:
    name = args.model.split(":", 1)[0]
    grid = _parse_grid(args.grid)
    if not grid:
        raise CliError("empty grid")
    if name == "sbmtmm":
        spec = presets.sbmtmm_spec()
        rows = rank_scan(spec,
                         lambda d: presets.sbmtmm_population_theta(d, spec),
                         grid, tol=args.rank_tol)
    elif name == "shapiro-squared":
        spec = presets.shapiro_squared_spec()
        rows = rank_scan(spec, lambda d: presets.shapiro_squared_theta(d, spec),
                         grid, tol=args.rank_tol)
    else:
        raise CliError("rank-scan needs a preset family: sbmtmm or "
                       "shapiro-squared")

    out = _out_dir(args)
    path = out / "rank_scan.csv"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["delta", "smallest_singular_value", "rank",
                         "condition_number"])
        for row in rows:
            writer.writerow([repr(row.delta_value),
                             repr(row.smallest_singular_value),
                             row.rank, repr(row.condition_number)])
    print(f"{'delta':>10} {'sigma_min':>14} {'rank':>6} {'cond':>14}")
    for row in rows:
        print(f"{row.delta_value:>10.4g} {row.smallest_singular_value:>14.6e} "
              f"{row.rank:>6d} {row.condition_number:>14.6e}")
    print(f"wrote {path}")
    return EXIT_OK


_CONFIG_KEYS = {"experiment", "n_grid", "delta_grid", "nsim", "seed",
                "optimizer", "tol", "max_iter", "svg"}


def read_sim_config(path: str | Path) -> dict:
    values: dict = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8")
                                 .splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError(f"{path}:{lineno}: expected key = value")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key not in _CONFIG_KEYS:
            raise CliError(f"{path}:{lineno}: unknown key {key!r} "
                           f"(known: {', '.join(sorted(_CONFIG_KEYS))})")
        values[key] = val
    return values


def _sim_config_from_args(args, defaults: dict | None = None) -> tuple[SimConfig, bool]:
    raw = dict(defaults or {})
    if getattr(args, "config", None):
        raw.update(read_sim_config(args.config))

    experiment = raw.get("experiment", SBMTMM)
    if experiment not in (SBMTMM, SHAPIRO):
        raise CliError(f"unknown experiment {experiment!r}")
    try:
        n_grid = (_parse_grid(raw["n_grid"], int) if "n_grid" in raw
                  else SimConfig().n_grid)
        delta_grid = (_parse_grid(raw["delta_grid"]) if "delta_grid" in raw
                      else SimConfig().delta_grid)
        nsim = args.nsim if args.nsim is not None else int(raw.get("nsim", 200))
        seed = args.seed if args.seed is not None else int(raw.get("seed", 3452))
        fit_kwargs = {}
        opt = args.optimizer or raw.get("optimizer")
        if opt:
            if opt not in _OPTIMIZERS:
                raise CliError(f"unknown optimizer {opt!r}")
            fit_kwargs["optimizer"] = _OPTIMIZERS[opt]
        tol = args.tol if args.tol is not None else raw.get("tol")
        if tol is not None:
            fit_kwargs["tol"] = float(tol)
        if raw.get("max_iter"):
            fit_kwargs["max_iter"] = int(raw["max_iter"])
        config = SimConfig(experiment=experiment, n_grid=n_grid,
                           delta_grid=delta_grid, nsim=nsim, seed=seed,
                           fit=FitConfig(**fit_kwargs))
    except (ValueError, TypeError) as err:
        raise CliError(f"bad simulation config: {err}")
    svg = bool(args.svg) or str(raw.get("svg", "")).lower() in ("1", "true",
                                                                "yes")
    return config, svg


def _run_simulation(args, config: SimConfig, svg: bool) -> int:
    workers = args.threads if args.threads else default_workers()
    out = _out_dir(args)
    if config.experiment == SHAPIRO:
        result, summary = shapiro_experiment(config, workers=workers)
        reports.write_records_csv(result, out / "records.csv")
        reports.write_summary_csv(result, out / "summary.csv")
        reports.write_summary_json(result, out / "summary.json")
        reports.write_shapiro_hist_csv(summary, out / "psi3_hist.csv")
        if svg:
            reports.shapiro_figure(summary, out / "figure2.svg")
        print(f"{len(result.records)} replicates; fraction with negative "
              f"residual variance estimate: {summary.fraction_negative:.4f}")
    else:
        result = run_experiment(config, workers=workers)
        reports.write_records_csv(result, out / "records.csv")
        reports.write_summary_csv(result, out / "summary.csv")
        reports.write_summary_json(result, out / "summary.json")
        if svg:
            reports.experiment_figure(result, out / "figure3.svg")
        print(f"{len(result.records)} replicates over "
              f"{len(result.summaries)} conditions")
    print(f"reports written to {out}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    config, svg = _sim_config_from_args(args)
    return _run_simulation(args, config, svg)


def cmd_shapiro(args) -> int:
    defaults = {"experiment": SHAPIRO, "n_grid": "10000", "delta_grid": "0"}
    config, svg = _sim_config_from_args(args, defaults)
    return _run_simulation(args, config, svg)


# -- argument parsing ---------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="latentrank",
        description="Factor-model estimation with identification diagnostics")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--out-dir", default=".", help="report directory")

    p = sub.add_parser("validate", help="parse and validate a model")
    p.add_argument("--model", required=True)

    p = sub.add_parser("fit", help="fit a model to data or covariances")
    p.add_argument("--model", required=True,
                   help="model file or preset (e.g. sbmtmm:0.2)")
    p.add_argument("--cov", help="covariance input file")
    p.add_argument("--data", action="append",
                   help="raw data CSV, one per group (repeatable)")
    p.add_argument("--optimizer", choices=sorted(_OPTIMIZERS))
    p.add_argument("--tol", type=float)
    p.add_argument("--max-iter", dest="max_iter", type=int)
    p.add_argument("--gamma", type=float)
    p.add_argument("--weights", choices=(SAMPLE, ITERATIVE))
    add_common(p)

    p = sub.add_parser("diagnose", help="rank/nullspace/information report")
    p.add_argument("--model", required=True)
    p.add_argument("--theta", help="JSON file of parameter values "
                                   "(a fit.json works)")
    p.add_argument("--rank-tol", dest="rank_tol", type=float)
    p.add_argument("--n", type=int, default=1000,
                   help="total sample size used for standard errors")
    add_common(p)

    p = sub.add_parser("rank-scan", help="Jacobian rank along a delta grid")
    p.add_argument("--model", required=True,
                   help="preset family: sbmtmm or shapiro-squared")
    p.add_argument("--grid", default="0,0.01,0.05,0.1,0.2,0.3")
    p.add_argument("--rank-tol", dest="rank_tol", type=float)
    add_common(p)

    for name, help_text in (("simulate", "run a Monte Carlo experiment"),
                            ("shapiro", "three-indicator experiment")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--nsim", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--tol", type=float)
        p.add_argument("--optimizer", choices=sorted(_OPTIMIZERS))
        p.add_argument("--svg", action="store_true",
                       help="also render figures")
        p.add_argument("--threads", type=int,
                       help="worker cap (default: LATENT_RANK_THREADS or "
                            "the CPU count)")
        add_common(p)

    return parser


_HANDLERS = {
    "validate": cmd_validate,
    "fit": cmd_fit,
    "diagnose": cmd_diagnose,
    "rank-scan": cmd_rank_scan,
    "simulate": cmd_simulate,
    "shapiro": cmd_shapiro,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _HANDLERS[args.command](args)
    except CliError as err:
        print(f"error: {err}", file=sys.stderr)
        return err.code
    except NonPositiveDefiniteError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_NOT_PD
    except FileNotFoundError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
