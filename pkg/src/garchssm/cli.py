"""Command-line batch interface: ``simulate``, ``fit``, ``compare`` and ``diagnose``."""
from __future__ import annotations

import argparse
import json
import logging
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .diagnostics import (
    compare_models,
    dynamic_variance_path,
    ergodic_means,
    residual_analysis,
    summarize,
    waic,
)
from .io import (
    OUTPUT_DIR_ENV,
    ConfigError,
    CsvFormatError,
    RunConfig,
    file_hash,
    format_float,
    load_config,
    read_csv,
    read_table,
    simulation_truth_params,
    write_csv,
    write_gzip_csv,
    write_table,
)
from .model import GarchParams, SeriesData, apply_missingness, simulate
from .sampling import ChainError, PosteriorDraws, run_chains_parallel

__all__ = ["cmd_simulate", "cmd_fit", "cmd_compare", "cmd_diagnose", "main", "FitArtifactError"]

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_CHAIN_FAILURE = 2


class FitArtifactError(FileNotFoundError):
    """A fit directory lacks a file that a downstream command needs."""


def _json_dump(obj, path):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _sig4(x) -> str:
    return format(float(x), ".4g")


# --------------------------------------------------------------------------- simulate


def cmd_simulate(cfg: RunConfig, output_dir=None) -> dict:
    """Write ``data.csv`` and ``truth.csv`` from the ``simulate.*`` settings.

    Returns the written paths. The seed is recorded in a header comment.
    """
    spec, garch, R, W, T = simulation_truth_params(cfg)
    out = Path(output_dir) if output_dir is not None else cfg.output_dir()
    out.mkdir(parents=True, exist_ok=True)
    theta0 = cfg.simulate.get("theta0", spec.m0)
    data, truth = simulate(spec, garch, R, W, T, seed=cfg.seed, theta0=theta0)
    rate = float(cfg.simulate.get("missing_rate", 0.0))
    if rate > 0:
        rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(2)[1])
        data = apply_missingness(data, rng.random(data.y.shape) >= rate)
    comment = f"simulated by garchssm {__version__}; seed={cfg.seed}; T={T}; n={spec.n}"
    data_path = out / "data.csv"
    write_csv(data, data_path, comment=comment)
    header = ["t"] + [f"state{j + 1}" for j in range(spec.r)] + [f"sigma{i + 1}" for i in range(spec.n)]
    rows = [[0] + list(truth.states[0]) + [float("nan")] * spec.n]
    for t in range(T):
        rows.append([t + 1] + list(truth.states[t + 1]) + list(truth.sigma[t]))
    truth_path = out / "truth.csv"
    write_table(truth_path, header, rows, comment=comment + "; row t=0 holds theta_0")
    return {"data": data_path, "truth": truth_path}


# --------------------------------------------------------------------------- fit


def _draw_rows(draws: PosteriorDraws):
    params = draws.scalar_parameters(include_raw=True)
    names = list(params)
    header = ["chain", "draw"] + names
    rows = []
    counters = {}
    for s in range(draws.n_draws):
        c = int(draws.chain_id[s])
        counters[c] = counters.get(c, 0) + 1
        rows.append([c, counters[c]] + [format_float(params[k][s]) for k in names])
    return header, rows, params


def _ergodic_rows(draws: PosteriorDraws, params):
    names = list(params)
    rows = []
    for c in np.unique(draws.chain_id):
        idx = np.flatnonzero(draws.chain_id == c)
        traces = ergodic_means(np.column_stack([params[k][idx] for k in names]))
        for k in range(idx.size):
            rows.append([int(c), k + 1] + [format_float(v) for v in traces[k]])
    return ["chain", "draw"] + names, rows


def _paths_rows(draws: PosteriorDraws, data: SeriesData, spec):
    """Per (t, series): data, level band, sd band and mean one-step forecast."""
    levels = draws.states[:, 1:] @ spec.Fprime.T
    lv_mean = levels.mean(axis=0)
    lv_lo, lv_hi = np.quantile(levels, [0.025, 0.975], axis=0)
    sd_mean, sd_lo, sd_hi = dynamic_variance_path(draws, data, spec)
    f_mean = draws.f.mean(axis=0)
    header = ["t", "time", "series", "y", "level_mean", "level_lo", "level_hi", "sd_mean", "sd_lo", "sd_hi",
              "forecast_mean"]
    rows = []
    for t in range(data.T):
        time = "" if data.time is None else str(data.time[t])
        for i in range(data.n):
            rows.append([
                t + 1, time, data.columns[i], format_float(data.y[t, i]),
                format_float(lv_mean[t, i]), format_float(lv_lo[t, i]), format_float(lv_hi[t, i]),
                format_float(sd_mean[t, i]), format_float(sd_lo[t, i]), format_float(sd_hi[t, i]),
                format_float(f_mean[t, i]),
            ])
    return header, rows


def _versions():
    import numba
    import scipy

    return {
        "garchssm": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "numba": numba.__version__,
        "python": platform.python_version(),
    }


def cmd_fit(cfg: RunConfig, output_dir=None, n_jobs=None) -> int:
    """Fit the configured model and write every artefact; returns an exit status.

    Status is 0 when all chains finished, 2 when some failed (the outputs then
    hold the surviving chains and ``manifest.json`` sets ``partial``).
    """
    if cfg.input is None:
        raise ConfigError("io.input", "required for fit")
    data = read_csv(cfg.input, time_column=cfg.time_column)
    if cfg.n is not None and cfg.n != data.n:
        raise ConfigError("model.n", f"data have {data.n} series")
    spec = cfg.build_spec(data.n)
    out = Path(output_dir) if output_dir is not None else cfg.output_dir()
    out.mkdir(parents=True, exist_ok=True)
    model = "garch" if cfg.garch_enabled else "dlm"
    draws = run_chains_parallel(data, spec, cfg.priors, cfg.mcmc, model=model, orders=(cfg.p, cfg.q),
                                n_jobs=n_jobs)

    header, rows, params = _draw_rows(draws)
    write_table(out / "draws.csv", header, rows)
    write_table(out / "ergodic_means.csv", *_ergodic_rows(draws, params))

    summ = summarize(params)
    write_table(out / "summary.csv", ["parameter", "mean", "median", "sd", "ci_lo", "ci_hi"],
                [[k, v.mean, v.median, v.sd, v.ci95[0], v.ci95[1]] for k, v in summ.items()])
    lines = [f"{'parameter':<14}{'mean':>11}{'median':>11}{'sd':>11}{'ci_lo':>11}{'ci_hi':>11}"]
    for k, v in summ.items():
        lines.append(f"{k:<14}" + "".join(f"{_sig4(x):>11}" for x in (v.mean, v.median, v.sd, *v.ci95)))
    (out / "summary.txt").write_text("\n".join(lines) + "\n")

    lp = draws.pointwise_lp
    write_gzip_csv(out / "pointwise_lp.csv.gz", [f"t{t + 1}" for t in range(data.T)],
                   [[format_float(v) for v in row] for row in lp])
    rep = waic(lp)
    _json_dump({"model": cfg.model_name, "lppd": rep.lppd, "p_waic": rep.p_waic, "waic": rep.waic,
                "T": rep.T, "n_draws": draws.n_draws}, out / "waic.json")

    if draws.states is not None:
        write_table(out / "paths.csv", *_paths_rows(draws, data, spec))
        st = draws.states.mean(axis=0)
        write_table(out / "state_mean.csv", ["t"] + [f"state{j + 1}" for j in range(spec.r)],
                    [[t] + [format_float(v) for v in st[t]] for t in range(data.T + 1)])

    manifest = {
        "config_hash": cfg.config_hash(),
        "data_hash": file_hash(cfg.input),
        "data_file": str(cfg.input),
        "seed": cfg.seed,
        "model": cfg.model_name,
        "kind": model,
        "model_kind": cfg.model_kind,
        "orders": [cfg.p, cfg.q],
        "n": data.n,
        "r": spec.r,
        "T": data.T,
        "n_draws": draws.n_draws,
        "acceptance_rates": draws.acceptance_rates,
        "failed_chains": {str(k): v for k, v in draws.failures.items()},
        "partial": bool(draws.failures),
        "states_written": draws.states is not None,
        "versions": _versions(),
    }
    _json_dump(manifest, out / "manifest.json")
    return EXIT_CHAIN_FAILURE if draws.failures else EXIT_OK


# --------------------------------------------------------------------------- compare


def _load_fit(fit_dir):
    fit_dir = Path(fit_dir)
    for name in ("manifest.json", "pointwise_lp.csv.gz"):
        if not (fit_dir / name).exists():
            raise FitArtifactError(f"{fit_dir / name} not found")
    manifest = json.loads((fit_dir / "manifest.json").read_text())
    _, rows = read_table(fit_dir / "pointwise_lp.csv.gz")
    lp = np.array(rows, dtype=float)
    return manifest, lp


def cmd_compare(fit_a, fit_b, output=None) -> dict:
    """Rank two fits of the same data by WAIC and write ``comparison.json``."""
    man_a, lp_a = _load_fit(fit_a)
    man_b, lp_b = _load_fit(fit_b)
    if man_a["data_hash"] != man_b["data_hash"]:
        raise ValueError("the two fits were run on different data (data_hash mismatch)")
    name_a, name_b = Path(fit_a).name or str(fit_a), Path(fit_b).name or str(fit_b)
    if name_a == name_b:
        name_a, name_b = str(fit_a), str(fit_b)
    ra, rb = waic(lp_a), waic(lp_b)
    ranking = compare_models([(name_a, ra), (name_b, rb)])
    result = {
        "models": {
            name_a: {"model": man_a["model"], "waic": ra.waic, "lppd": ra.lppd, "p_waic": ra.p_waic},
            name_b: {"model": man_b["model"], "waic": rb.waic, "lppd": rb.lppd, "p_waic": rb.p_waic},
        },
        "ranking": ranking.names,
        "difference": ra.waic - rb.waic,
        "selected": "tie" if ranking.tie else ranking.best,
    }
    if output is None:
        output = Path(_default_dir()) / "comparison.json"
    Path(output).parent.mkdir(parents=True, exist_ok=True)
    _json_dump(result, output)
    return result


# --------------------------------------------------------------------------- diagnose


def _median_params(fit_dir, manifest):
    header, rows = read_table(Path(fit_dir) / "draws.csv")
    table = np.array([[float(v) for v in row[2:]] for row in rows])
    med = dict(zip(header[2:], np.median(table, axis=0)))
    n, r = manifest["n"], manifest["r"]
    p, q = manifest["orders"]
    if manifest["kind"] == "garch":
        alpha0 = np.array([med[f"alpha0[{i + 1}]"] for i in range(n)])
        alpha = np.array([[med[f"alpha{j + 1}[{i + 1}]"] for j in range(p)] for i in range(n)]).reshape(n, p)
        beta = np.array([[med[f"beta{j + 1}[{i + 1}]"] for j in range(q)] for i in range(n)]).reshape(n, q)
        rho_name = "rho"
    else:
        alpha0 = np.array([med[f"V[{i + 1},{i + 1}]"] for i in range(n)])
        alpha, beta = np.zeros((n, 0)), np.zeros((n, 0))
        rho_name = "rho_obs"
    R = np.eye(n)
    for i in range(n):
        for j in range(i + 1, n):
            R[i, j] = R[j, i] = med[f"{rho_name}[{i + 1},{j + 1}]"]
    W = np.empty((r, r))
    for i in range(r):
        for j in range(i, r):
            W[i, j] = W[j, i] = med[f"W[{i + 1},{j + 1}]"]
    return GarchParams(alpha0, alpha, beta), R, W


def cmd_diagnose(fit_dir, data_path, output_dir=None) -> dict:
    """Residual and QQ tables for a finished fit.

    Point estimates are posterior medians of the parameters and the posterior
    mean state path. Writes ``residuals.csv`` (missing cells as ``NA``),
    ``qq.csv`` and ``ks.csv``.
    """
    fit_dir = Path(fit_dir)
    for name in ("manifest.json", "draws.csv", "state_mean.csv"):
        if not (fit_dir / name).exists():
            raise FitArtifactError(f"{fit_dir / name} not found")
    manifest = json.loads((fit_dir / "manifest.json").read_text())
    data = read_csv(data_path)
    if data.n != manifest["n"] or data.T != manifest["T"]:
        raise ValueError(f"data shape ({data.T}, {data.n}) does not match the fit "
                         f"({manifest['T']}, {manifest['n']})")
    cfg = RunConfig(model_kind=manifest["model_kind"])
    spec = cfg.build_spec(data.n)
    garch, R, W = _median_params(fit_dir, manifest)
    _, rows = read_table(fit_dir / "state_mean.csv")
    states = np.array([[float(v) for v in row[1:]] for row in rows])
    rep = residual_analysis(data, spec, garch, R, W, states)

    out = Path(output_dir) if output_dir is not None else fit_dir
    out.mkdir(parents=True, exist_ok=True)
    cols = data.columns
    header = ["t"] + [f"{c}_raw" for c in cols] + [f"{c}_std" for c in cols]
    write_table(out / "residuals.csv", header, [
        [t + 1] + [format_float(v) for v in rep.raw[t]] + [format_float(v) for v in rep.standardized[t]]
        for t in range(data.T)
    ])
    qq_rows = []
    for i, (theo, emp) in enumerate(rep.qq):
        qq_rows.extend([cols[i], format_float(a), format_float(b)] for a, b in zip(theo, emp))
    write_table(out / "qq.csv", ["series", "theoretical", "empirical"], qq_rows)
    write_table(out / "ks.csv", ["series", "statistic", "pvalue"],
                [[cols[i], format_float(s), format_float(pv)] for i, (s, pv) in enumerate(rep.ks)])
    return {"residuals": out / "residuals.csv", "qq": out / "qq.csv", "ks": out / "ks.csv", "report": rep}


# --------------------------------------------------------------------------- entry point


def _default_dir():
    import os

    return os.environ.get(OUTPUT_DIR_ENV) or "garchssm_out"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="garchssm", description=__doc__)
    parser.add_argument("--verbose", "-v", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate data from true parameter values")
    p.add_argument("--config", required=True)
    p.add_argument("--output", help=f"output directory (default: io.output, ${OUTPUT_DIR_ENV} or ./garchssm_out)")

    p = sub.add_parser("fit", help="run the MCMC sampler and write draws, summaries and WAIC")
    p.add_argument("--config", required=True)
    p.add_argument("--output")
    p.add_argument("--n-jobs", type=int, default=None, help="worker threads (results do not depend on it)")

    p = sub.add_parser("compare", help="rank two fits of the same data by WAIC")
    p.add_argument("fit_a")
    p.add_argument("fit_b")
    p.add_argument("--output", help="path of the comparison JSON")

    p = sub.add_parser("diagnose", help="residuals, QQ pairs and KS tests for a fit")
    p.add_argument("fit")
    p.add_argument("--data", required=True)
    p.add_argument("--output")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "simulate":
            paths = cmd_simulate(load_config(args.config), args.output)
            print(f"wrote {paths['data']} and {paths['truth']}")
            return EXIT_OK
        if args.command == "fit":
            cfg = load_config(args.config)
            out = Path(args.output) if args.output else cfg.output_dir()
            status = cmd_fit(cfg, out, n_jobs=args.n_jobs)
            print((out / "summary.txt").read_text(), end="")
            if status != EXIT_OK:
                print(f"warning: some chains failed; see {out / 'manifest.json'}", file=sys.stderr)
            return status
        if args.command == "compare":
            res = cmd_compare(args.fit_a, args.fit_b, args.output)
            for name in res["ranking"]:
                print(f"{name}: waic = {res['models'][name]['waic']:.2f}")
            print(f"difference = {res['difference']:.2f}; selected: {res['selected']}")
            return EXIT_OK
        if args.command == "diagnose":
            res = cmd_diagnose(args.fit, args.data, args.output)
            for i, (stat, pv) in enumerate(res["report"].ks):
                print(f"series {i + 1}: KS = {stat:.4f}, p = {pv:.4g}")
            return EXIT_OK
    except (ConfigError, CsvFormatError, FitArtifactError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ChainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CHAIN_FAILURE
    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
