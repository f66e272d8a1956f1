"""Command-line interface.

Exit status is 0 on success, 1 for invalid input or usage and 2 when a
numerical procedure fails.
"""
from __future__ import annotations

import argparse
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import io
from .combine import combine_domains, rubin_combine
from .errors import NumericalError, SchemaError, ValidationError
from .fayherriot import METHODS, fit_fay_herriot, fit_quality
from .irt import EMConfig, calibrate_em, draw_plausible_values
from .simulation import SimConfig, SimGrid, run_simulation
from .survey import SampleDomain, composite_mean, greg_mean, ht_mean, synthetic_ols


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _common():
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS, help=f"random seed (default: ${io.SEED_ENV} or 0)")
    p.add_argument("--method", choices=METHODS, default=argparse.SUPPRESS, help="between-area variance estimator")
    p.add_argument("--format", choices=("csv", "md", "text"), default=argparse.SUPPRESS, help="output format")
    return p


def build_parser():
    common = _common()
    parser = _Parser(prog="irtsae", description=__doc__.splitlines()[0], parents=[common])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, required=True)

    p = sub.add_parser("calibrate", parents=[common], help="fit item parameters by EM")
    p.add_argument("--responses", required=True)
    p.add_argument("--covariates", help="person_id,z_1..z_q")
    p.add_argument("--out", required=True)
    p.add_argument("--max-iter", type=int, default=500)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--estimate-guessing", action="store_true")

    p = sub.add_parser("pv", parents=[common], help="draw plausible values")
    p.add_argument("--responses", required=True)
    p.add_argument("--bank", required=True)
    p.add_argument("--covariates")
    p.add_argument("--L", type=int, default=5)
    p.add_argument("--burn-in", type=int, default=500)
    p.add_argument("--thin", type=int, default=50)
    p.add_argument("--out", required=True)

    p = sub.add_parser("combine", parents=[common], help="pool plausible values into domain estimates")
    p.add_argument("--pv", required=True)
    p.add_argument("--sizes", help="domain_id,N_d for the finite population correction")
    p.add_argument("--offset", type=float, default=0.0, help="report offset + factor * pv")
    p.add_argument("--factor", type=float, default=1.0)
    p.add_argument("--out", default="-")

    p = sub.add_parser("fit-fh", parents=[common], help="fit the area-level model and estimate MSE")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", default="-")
    p.add_argument("--no-intercept", action="store_true")
    p.add_argument("--sigma2-u", type=float, help="evaluate at this between-area variance instead of estimating it")

    p = sub.add_parser("estimate", parents=[common], help="direct, calibration and composite estimates")
    p.add_argument("--pv", required=True)
    p.add_argument("--population", required=True, help="domain_id,N_d,t_1..t_q (auxiliary totals)")
    p.add_argument("--person-covariates", required=True, help="person_id,z_1..z_q")
    p.add_argument("--area-covariates", required=True, help="domain_id,x_1..x_p")
    p.add_argument("--out", default="-")

    p = sub.add_parser("simulate", parents=[common], help="run the Monte Carlo comparison")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--emit-plots", action="store_true", help="also write per-cell long-format CSVs")
    p.add_argument("--n-jobs", type=int, default=1)

    p = sub.add_parser("replay-pisa", parents=[common], help="recompute the PISA 2015 country table")
    p.add_argument("--out", default="-")
    p.add_argument("--export-areas", help="write the fixture as a fit-fh input file")

    p = sub.add_parser("report", parents=[common], help="render a CSV output as a table")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", default="-")
    return parser


def _seed(args, config=None):
    if hasattr(args, "seed"):
        return args.seed
    if config and "seed" in config:
        return int(config["seed"])
    return io.default_seed()


def _emit(args, out, columns, rows, manifest, extra=(), default_fmt="csv"):
    fmt = getattr(args, "format", default_fmt)
    comments = list(extra)
    if out != "-":
        comments.insert(0, manifest.reference(out))
    io.write_table(out, columns, rows, fmt, comments)
    if out != "-":
        manifest.write(out)


def _covariates(path, ids):
    if path is None:
        return None
    cov_ids, mat = io.read_person_table(path, "z")
    lookup = dict(zip(cov_ids, mat))
    missing = [p for p in ids if str(p) not in lookup]
    if missing:
        raise ValidationError(f"{path}: no covariates for person {missing[0]!r}")
    return np.array([lookup[str(p)] for p in ids])


def cmd_calibrate(args):
    responses = io.read_responses(args.responses)
    cov = _covariates(args.covariates, responses.person_ids)
    cfg = EMConfig(max_iter=args.max_iter, tol=args.tol, estimate_guessing=args.estimate_guessing)
    result = calibrate_em(responses, cov, cfg)
    manifest = io.RunManifest("calibrate", _seed(args), {"max_iter": args.max_iter, "tol": args.tol})
    comments = [manifest.reference(args.out), f"converged: {result.converged}", f"iterations: {result.n_iter}"]
    io.write_item_bank(args.out, result.bank, result.regression, comments)
    manifest.write(args.out)


def cmd_pv(args):
    responses = io.read_responses(args.responses)
    bank, reg = io.read_item_bank(args.bank)
    cov = _covariates(args.covariates, responses.person_ids)
    seed = _seed(args)
    pvs = draw_plausible_values(responses, bank, reg, L=args.L, seed=seed, covariates=cov,
                                burn_in=args.burn_in, thin=args.thin)
    manifest = io.RunManifest("pv", seed, {"L": args.L, "burn_in": args.burn_in, "thin": args.thin})
    io.write_pvs(args.out, pvs, [manifest.reference(args.out)])
    manifest.write(args.out)


def cmd_combine(args):
    pvs = io.read_pvs(args.pv).transformed(args.offset, args.factor)
    sizes = None
    if args.sizes:
        _, header, rows = io.read_table(args.sizes)
        if header != ["domain_id", "N_d"]:
            raise SchemaError(f"{args.sizes}: header must be domain_id,N_d")
        sizes = {r[0]: io._float(r[1], i, "N_d", args.sizes) for i, r in enumerate(rows, start=1)}
    estimates = combine_domains(pvs, N_sizes=sizes)
    manifest = io.RunManifest("combine", _seed(args), {"offset": args.offset, "factor": args.factor})
    rows = [[e.domain, e.gamma_hat, e.sigma2_d, e.within, e.between, e.L, e.n_d] for e in estimates]
    _emit(args, args.out, io.AREA_OUT_COLUMNS, rows, manifest)


def cmd_fit_fh(args):
    design = io.ingest_area_csv(args.input, intercept=not args.no_intercept)
    method = getattr(args, "method", "reml")
    fit = fit_fay_herriot(design, method, sigma2_u=args.sigma2_u)
    eer, dif = fit_quality(fit, design)
    manifest = io.RunManifest("fit-fh", _seed(args), {"input": Path(args.input).name, "method": method})
    _emit(args, args.out, io.FIT_COLUMNS, io.fit_rows(design, fit, eer, dif), manifest, io.fit_header(fit))


def cmd_estimate(args):
    pvs = io.read_pvs(args.pv)
    _, header, rows = io.read_table(args.population)
    tcols = io._numbered(header, "t")
    if header[:2] != ["domain_id", "N_d"] or not tcols:
        raise SchemaError(f"{args.population}: header must be domain_id,N_d,t_1..t_q")
    pop = {r[0]: (io._float(r[1], i, "N_d", args.population),
                  np.array([io._float(r[header.index(c)], i, c, args.population) for c in tcols]))
           for i, r in enumerate(rows, start=1)}
    z = _covariates(args.person_covariates, pvs.person_ids)
    area_ids, X = io.read_person_table(args.area_covariates, "x")
    X = dict(zip(area_ids, X))

    domains = [d for d in dict.fromkeys(pvs.domain_of.tolist())]
    missing = [d for d in domains if str(d) not in pop or str(d) not in X]
    if missing:
        raise ValidationError(f"domain {missing[0]!r} lacks population totals or area covariates")
    doms, ht, greg = [], [], []
    for d in domains:
        rows_d = np.flatnonzero(pvs.domain_of == d)
        N_d, totals = pop[str(d)]
        dom = SampleDomain(pvs.draws[rows_d], N_d=N_d, aux_sample=z[rows_d], aux_totals=totals)
        doms.append(dom)
        ht.append(ht_mean(dom))
        greg.append(greg_mean(dom))
    Xs = np.array([np.r_[1.0, X[str(d)]] for d in domains])
    synth = Xs @ synthetic_ols(np.array([h[0] for h in ht]), Xs)
    n_bar = float(np.mean([dom.n_d for dom in doms]))
    comp = [composite_mean(dom, synth[k], n_bar) for k, dom in enumerate(doms)]

    out_rows = []
    for k, d in enumerate(domains):
        row = [d]
        for est in (ht[k], greg[k], comp[k]):
            pooled = rubin_combine(np.column_stack(est))
            row += [pooled.gamma_hat, pooled.sigma2_d]
        out_rows.append(row)
    manifest = io.RunManifest("estimate", _seed(args), {"pv": Path(args.pv).name})
    _emit(args, args.out, io.ESTIMATE_COLUMNS, out_rows, manifest)


GRID_KEYS = {"missing_rate": "missing_rates", "corr_level": "corr_levels", "f_d": "f_d", "f_n": "f_n"}


def grid_from_config(config: dict, seed: int) -> SimGrid:
    """Build the cell grid; ``missing_rate``, ``corr_level``, ``f_d`` and ``f_n`` may be lists."""
    names = {f.name for f in fields(SimConfig)}
    unknown = sorted(set(config) - names)
    if unknown:
        raise SchemaError(f"unknown simulation setting(s): {', '.join(unknown)}")
    scalars, grid = {}, {}
    for k, v in config.items():
        if k in GRID_KEYS:
            vals = tuple(v) if isinstance(v, list) else (v,)
            grid[GRID_KEYS[k]] = vals
            scalars[k] = vals[0]
        else:
            scalars[k] = tuple(v) if isinstance(v, list) else v
    scalars["seed"] = seed
    # the base cell only seeds the population, so pick a valid corner of the grid
    scalars["f_n"] = min(grid.get("f_n", (scalars.get("f_n", 0.05),)))
    scalars["f_d"] = max(grid.get("f_d", (scalars.get("f_d", 0.30),)))
    return SimGrid(SimConfig(**scalars), **grid)


def cmd_simulate(args):
    config = io.load_config(args.config)
    seed = _seed(args, config)
    grid = grid_from_config(config, seed)
    long_rows = [] if args.emit_plots else None
    rows = run_simulation(grid, n_jobs=args.n_jobs, long_rows=long_rows)
    manifest = io.RunManifest("simulate", seed, {k: v for k, v in config.items() if k != "seed"})
    columns = list(rows[0])
    _emit(args, args.out, columns, [[r[c] for c in columns] for r in rows], manifest)
    if long_rows is not None:
        plot_dir = Path(args.out).with_name(Path(args.out).stem + "_plots")
        plot_dir.mkdir(exist_ok=True)
        keys = ("missing_rate", "corr_level", "f_d", "f_n")
        cells = {}
        for r in long_rows:
            cells.setdefault(tuple(r[k] for k in keys), []).append(r)
        for (m, c, fd, fn), recs in cells.items():
            path = plot_dir / f"cell_m{m:g}_{c}_fd{fd:g}_fn{fn:g}.csv"
            long = [[r["replicate"], est, metric, r[f"{metric}_{est}"]]
                    for r in recs for est in ("dir", "cal", "comp", "p") for metric in ("sbp", "eerp", "eerp_est")]
            io.write_table(path, ["replicate", "estimator", "metric", "value"], long,
                           comments=[manifest.reference(args.out)])
            manifest.outputs.append(str(path))
        manifest.write(args.out)


def cmd_replay_pisa(args):
    rows = io.replay_pisa_fixture()
    manifest = io.RunManifest("replay-pisa", _seed(args), {"sigma2_u": io.PISA_SIGMA2_U})
    if args.export_areas:
        io.write_area_csv(args.export_areas, io.pisa_area_design(), [manifest.reference(args.export_areas)])
        manifest.write(args.export_areas)
    columns = ["country"] + [f"{f}{s}" for f in io.REPLAY_FIELDS for s in ("", "_printed", "_delta")]
    fmt_default = "text" if args.out == "-" else "csv"
    _emit(args, args.out, columns, [[r[c] for c in columns] for r in rows], manifest,
          [f"sigma2_u: {io.PISA_SIGMA2_U!r}"], default_fmt=fmt_default)


def cmd_report(args):
    comments, header, rows = io.read_table(args.input)
    io.write_table(args.out, header, rows, getattr(args, "format", "text"), comments)


COMMANDS = {
    "calibrate": cmd_calibrate,
    "pv": cmd_pv,
    "combine": cmd_combine,
    "fit-fh": cmd_fit_fh,
    "estimate": cmd_estimate,
    "simulate": cmd_simulate,
    "replay-pisa": cmd_replay_pisa,
    "report": cmd_report,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        COMMANDS[args.command](args)
    except (UsageError, ValidationError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
