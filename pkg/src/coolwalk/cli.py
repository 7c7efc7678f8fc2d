"""Command-line entry point.

Usage::

    coolwalk [SUBCOMMAND] --config run.yaml [--seed N] [--threads N] [--out DIR]

The config is YAML; unknown keys are rejected.  ``COOLWALK_SEED`` overrides
the config seed, ``--seed`` overrides both.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import os
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import fields
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .cet import DisplacementProvider, IIDSumProvider, LogMGFProvider, convergence_report
from .env import CoolingMap, rho_moments, solve_s, speed, validate_alpha
from .errors import CoolwalkError, ParseError, PreconditionError, ValidationError
from .experiments import (
    DEFAULT_TOLERANCES,
    ExperimentConfig,
    _chain,
    annealed_tail_run,
    concentration_run,
    ldp_cumulant_run,
    slln_run,
)
from .rng import CELL_TAG, derive_seed
from .walk import rwcre_pmf

SUBCOMMANDS = ("rates", "slln", "ldp", "conc", "tail", "cet", "pmf")

CSV_HELP = """\
output files (CSV, '#'-prefixed metadata header):
  rates  jstar.csv, J.csv, I.csv, istar.csv   columns x,y,is_infinite
  slln   slln.csv     n,speed,mean_x_over_n,median_abs_dev,fraction_within_eps
         slln_replicas.csv   replica,x_over_n@<n>...
  ldp    ldp.csv      n,lambda,interval_cumulant,istar,deviation
  conc   conc.csv     statistic,n,lambda,reference,median_abs_dev,iqr,exceed@<eps>...
  tail   tail.csv     n,annealed_prob,std_error,median_quenched_prob
  cet    cet.csv      n,seed,total,R,B,D,deviation
  pmf    pmf.csv      site,mass
every run also writes manifest.json (config echo, seed, version, timings)
seed precedence: --seed, then COOLWALK_SEED, then the config's 'seed'
exit codes: 0 success, 1 acceptance band failed (outputs written), 2 error
"""

_CONFIG_FIELDS = {f.name for f in fields(ExperimentConfig)}


def _yaml_load(text):
    try:
        return yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark or exc.context_mark
        line = mark.line + 1 if mark else None
        col = mark.column + 1 if mark else None
        raise ParseError(f"invalid config: {exc.problem or exc}", line, col) from exc
    except yaml.YAMLError as exc:
        raise ParseError(f"invalid config: {exc}") from exc


def parse_config(source):
    """Build an :class:`ExperimentConfig` from a YAML file path or inline text."""
    text = source
    if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source and os.path.exists(source)):
        text = Path(source).read_text()
    data = _yaml_load(text)
    if not isinstance(data, dict):
        raise ParseError("config must be a mapping at top level", 1, 1)
    unknown = sorted(set(data) - _CONFIG_FIELDS)
    if unknown:
        raise ValidationError(f"unknown config keys: {unknown}", field=unknown[0])
    for key in ("dist", "map"):
        if key not in data:
            raise ValidationError(f"missing required key '{key}'", field=key)
    data = dict(data)
    dist = data.pop("dist")
    if not isinstance(dist, dict) or set(dist) - {"atoms", "c"} or "atoms" not in dist or "c" not in dist:
        raise ValidationError("dist needs exactly 'atoms' and 'c'", field="dist")
    data["dist"] = validate_alpha([tuple(a) for a in dist["atoms"]], dist["c"])
    if not isinstance(data["map"], dict):
        raise ValidationError("map must be a mapping", field="map")
    data["map"] = CoolingMap.from_spec(data["map"])
    if "subcommand" in data and data["subcommand"] not in SUBCOMMANDS:
        raise ValidationError(f"unknown subcommand {data['subcommand']!r}", field="subcommand")
    tol = data.get("tolerances", {})
    if not isinstance(tol, dict) or set(tol) - set(DEFAULT_TOLERANCES):
        raise ValidationError(f"unknown tolerance keys: {sorted(set(tol) - set(DEFAULT_TOLERANCES))}",
                              field="tolerances")
    try:
        return ExperimentConfig(**data)
    except TypeError as exc:
        raise ValidationError(str(exc), field="config") from exc


def config_to_dict(cfg):
    out = {}
    for f in fields(ExperimentConfig):
        value = getattr(cfg, f.name)
        if f.name in ("dist", "map"):
            value = value.to_spec()
        out[f.name] = value
    return out


def emit_config(cfg):
    """Canonical YAML text of the effective config (round-trips exactly)."""
    return yaml.safe_dump(config_to_dict(cfg), sort_keys=True, default_flow_style=None)


def _write_atomic(path, text):
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-" + path.name)
    with os.fdopen(fd, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _pmap_factory(threads):
    if threads <= 1:
        return map, None
    pool = ThreadPoolExecutor(max_workers=threads)
    return pool.map, pool


def _cet_provider(cfg):
    if cfg.provider == "displacement":
        return DisplacementProvider(cfg.dist)
    if cfg.provider == "iid":
        return IIDSumProvider(0.0, 1.0)
    if cfg.provider == "logmgf":
        lam = cfg.lambda_grid[0]
        return LogMGFProvider(cfg.dist, lam, limit=float(_chain(cfg).istar(lam)))
    raise ValidationError(f"unknown provider {cfg.provider!r}", field="provider")


def _run(sub, cfg, out, pmap):
    """Run one subcommand; returns (written files, results dict, passed)."""
    written, results, passed = [], {}, None

    def save(obj, name):
        path = out / name
        obj.to_csv(path)
        written.append(name)

    header = {"seed": cfg.seed, "dist_id": cfg.dist.dist_id, "map": repr(cfg.map)}
    if sub == "rates":
        chain = _chain(cfg)
        for name, g in (("jstar", chain.jstar), ("J", chain.J), ("I", chain.I), ("istar", chain.istar)):
            g.meta.update(header)
            g.meta["curve"] = name
            save(g, f"{name}.csv")
        results["speed"] = speed(cfg.dist)
        try:
            results["s"] = solve_s(cfg.dist)
        except PreconditionError:
            results["s"] = None
        results["mean_log_rho"] = chain.mean_log_rho
        results["regime"] = rho_moments(cfg.dist).regime
        results["lambda_c"] = chain.jstar.meta.get("lambda_c")
    elif sub == "pmf":
        pmf = rwcre_pmf(cfg.dist, cfg.map, cfg.n, cfg.seed, cfg.frame)
        pmf.to_csv(out / "pmf.csv", header=f"seed={cfg.seed} n={cfg.n} frame={cfg.frame} "
                                          f"dist_id={cfg.dist.dist_id} map={cfg.map!r}")
        written.append("pmf.csv")
        results["mean"] = pmf.mean()
    elif sub == "cet":
        provider = _cet_provider(cfg)
        seeds = [derive_seed(cfg.seed, CELL_TAG, r) for r in range(cfg.replicas)]
        report = convergence_report(provider, cfg.map, cfg.n_grid, seeds, pmap=pmap)
        report.to_csv(out / "cet.csv", header=header)
        written.append("cet.csv")
        final = [abs(r.deviation) for r in report.rows if r.n == cfg.n_grid[-1]]
        frac = sum(d < cfg.tol("eps") for d in final) / len(final)
        passed = frac >= cfg.tol("min_fraction")
        results.update(limit=report.limit, fraction_within=frac, inversions=report.inversions,
                       decay_exponent=report.decay_exponent, no_cooling=report.no_cooling)
    else:
        runner = {"slln": slln_run, "ldp": ldp_cumulant_run, "conc": concentration_run,
                  "tail": annealed_tail_run}[sub]
        table = runner(cfg, pmap=pmap)
        table.meta.update(header)
        save(table, f"{sub}.csv")
        for suffix, extra in table.extra.items():
            save(extra, f"{sub}_{suffix}.csv")
        passed = table.passed
        results = {k: v for k, v in table.meta.items() if k not in header}
    return written, results, passed


def dispatch(subcommand, cfg, seed=None, out_dir=None, threads=1):
    """Run ``subcommand`` and write its outputs plus ``manifest.json``.

    Returns the process exit code (0 ok, 1 band failure, 2 error).
    """
    if subcommand not in SUBCOMMANDS:
        print(f"error: unknown subcommand {subcommand!r}", file=sys.stderr)
        return 2
    if seed is not None:
        cfg.seed = int(seed)
    out = Path(out_dir or cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    start = _dt.datetime.now(_dt.timezone.utc)
    pmap, pool = _pmap_factory(threads)
    try:
        written, results, passed = _run(subcommand, cfg, out, pmap)
    except CoolwalkError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    finally:
        if pool is not None:
            pool.shutdown()
    manifest = {
        "subcommand": subcommand,
        "config": config_to_dict(cfg),
        "seed": cfg.seed,
        "version": __version__,
        "numpy": np.__version__,
        "started": start.isoformat(),
        "finished": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "outputs": written,
        "results": results,
        "passed": passed,
    }
    _write_atomic(out / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
    return 1 if passed is False else 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="coolwalk",
        description="Random walks in static and cooling random environments.",
        epilog=CSV_HELP,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("subcommand", nargs="?", choices=SUBCOMMANDS,
                        help="defaults to the config's 'subcommand'")
    parser.add_argument("--config", required=True, help="YAML config file")
    parser.add_argument("--seed", type=int, default=None, help="master seed (u64)")
    parser.add_argument("--threads", type=int, default=1, help="worker threads")
    parser.add_argument("--out", default=None, help="output directory")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = parse_config(Path(args.config))
    except (CoolwalkError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    seed = args.seed
    if seed is None and os.environ.get("COOLWALK_SEED"):
        try:
            seed = int(os.environ["COOLWALK_SEED"])
        except ValueError:
            print("error: COOLWALK_SEED must be an integer", file=sys.stderr)
            return 2
    if seed is not None and not 0 <= seed < 2**64:
        print("error: seed must be an unsigned 64-bit integer", file=sys.stderr)
        return 2
    return dispatch(args.subcommand or cfg.subcommand, cfg, seed, args.out, max(1, args.threads))


if __name__ == "__main__":
    sys.exit(main())
