"""Command-line front end.

Three subcommands: ``run`` drives configured chains and writes samples,
diagnostics, map snapshots, figures and a summary; ``fitmap`` fits a map
to a sample file offline; ``compare`` merges diagnostics from several run
directories into one efficiency table.
"""

from __future__ import annotations

import argparse
import configparser
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import diagnostics as diag
from . import map_optimizer as mopt
from . import mcmc, problems, report
from . import transport_map as tmod
from .polybasis import BasisSpec
from .proposals import (
    DelayedRejectionGlobal,
    DelayedRejectionLocal,
    Mala,
    Mixture,
    RandomWalk,
)

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2

_RUN_KEYS = {
    "name", "problem", "steps", "burn_in", "adapt_interval", "adapt_start",
    "seed", "replicates", "sampler",
}
_PROPOSAL_KEYS = {"kind", "sigma", "dtau", "sigma1", "sigma2", "w_max", "w_scale"}
_BASIS_KEYS = {"family", "set_type", "degree", "diag_degree"}
_OPTIMIZER_KEYS = {"reg_weight", "deriv_floor", "radius"}
_SECTIONS = {"run", "proposal", "basis", "optimizer", "problem"}


class ConfigError(Exception):
    pass


def _check_keys(cfg: configparser.ConfigParser, section: str, allowed: set[str]) -> None:
    if not cfg.has_section(section):
        return
    for key in cfg[section]:
        if key not in allowed:
            raise ConfigError(f"[{section}] has unknown key {key!r}")


def _build_proposal(cfg: configparser.ConfigParser):
    if not cfg.has_section("proposal"):
        return RandomWalk()
    sec = cfg["proposal"]
    kind = sec.get("kind", "random_walk").lower()
    try:
        if kind in ("random_walk", "rw"):
            return RandomWalk(sigma=sec.getfloat("sigma", 0.5))
        if kind in ("mala", "langevin"):
            return Mala(dtau=sec.getfloat("dtau", 0.5))
        if kind in ("drg", "delayed_rejection_global"):
            return DelayedRejectionGlobal(sigma2=sec.getfloat("sigma2", 0.5))
        if kind in ("drl", "delayed_rejection_local"):
            return DelayedRejectionLocal(
                sigma1=sec.getfloat("sigma1", 1.0), sigma2=sec.getfloat("sigma2", 0.25)
            )
        if kind in ("mixture", "mix"):
            return Mixture(
                w_max=sec.getfloat("w_max", 0.9),
                w_scale=sec.getfloat("w_scale", 1.0),
                sigma=sec.getfloat("sigma", 0.5),
            )
    except ValueError as exc:
        raise ConfigError(f"[proposal] {exc}") from exc
    raise ConfigError(f"[proposal] unknown kind {kind!r}")


def _build_basis(cfg: configparser.ConfigParser) -> BasisSpec:
    if not cfg.has_section("basis"):
        return BasisSpec()
    sec = cfg["basis"]
    try:
        return BasisSpec(
            family=sec.get("family", "hermite"),
            set_type=sec.get("set_type", "total_order"),
            degree=sec.getint("degree", 3),
            diag_degree=sec.getint("diag_degree") if sec.get("diag_degree") else None,
        )
    except ValueError as exc:
        raise ConfigError(f"[basis] {exc}") from exc


def _parse_radius(token: str):
    if token in ("", "inf", "none"):
        return None
    if token == "auto":
        return "auto"
    return float(token)


def parse_run_config(path: Path) -> dict:
    """Parse and validate a run configuration, rejecting unknown keys."""
    cfg = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        read = cfg.read(path)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    if not read:
        raise ConfigError(f"cannot read config file {path}")
    for section in cfg.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
    _check_keys(cfg, "run", _RUN_KEYS)
    _check_keys(cfg, "proposal", _PROPOSAL_KEYS)
    _check_keys(cfg, "basis", _BASIS_KEYS)
    _check_keys(cfg, "optimizer", _OPTIMIZER_KEYS)
    if not cfg.has_section("run"):
        raise ConfigError("config needs a [run] section")
    run = cfg["run"]
    if "problem" not in run:
        raise ConfigError("[run] needs problem")
    try:
        steps = run.getint("steps")
        spec = {
            "problem": run.get("problem"),
            "problem_params": dict(cfg["problem"]) if cfg.has_section("problem") else {},
            "sampler": run.get("sampler", "tm").lower(),
            "name": run.get("name", ""),
            "steps": steps,
            "burn_in": run.getint("burn_in", max(steps // 5, 0)),
            "adapt_interval": run.getint("adapt_interval", 500),
            "adapt_start": run.getint("adapt_start", -1),
            "seed": run.getint("seed", 0),
            "replicates": run.getint("replicates", 1),
        }
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"[run] {exc}") from exc
    if spec["steps"] is None:
        raise ConfigError("[run] needs steps")
    if spec["sampler"] not in ("tm", "rwm"):
        raise ConfigError(f"[run] unknown sampler {spec['sampler']!r}")
    if spec["sampler"] == "rwm" and cfg.has_section("proposal"):
        raise ConfigError("the rwm baseline takes no [proposal] section")
    spec["proposal"] = _build_proposal(cfg)
    spec["basis"] = _build_basis(cfg)
    if cfg.has_section("optimizer"):
        sec = cfg["optimizer"]
        try:
            spec["reg_weight"] = sec.getfloat("reg_weight", 1e-4)
            spec["deriv_floor"] = sec.getfloat("deriv_floor", 1e-8)
            spec["radius"] = _parse_radius(sec.get("radius", "inf").lower())
        except ValueError as exc:
            raise ConfigError(f"[optimizer] {exc}") from exc
    else:
        spec["reg_weight"], spec["deriv_floor"], spec["radius"] = 1e-4, 1e-8, None
    if not spec["name"]:
        spec["name"] = f"{spec['sampler']}-{spec['problem']}"
    return spec


def _chain_config(spec: dict, seed: int) -> mcmc.ChainConfig:
    adapt_start = spec["adapt_start"]
    return mcmc.ChainConfig(
        total_steps=spec["steps"],
        burn_in=spec["burn_in"],
        adapt_interval=spec["adapt_interval"],
        adapt_start=None if adapt_start < 0 else adapt_start,
        seed=seed,
        proposal=spec["proposal"],
        basis=spec["basis"],
        reg_weight=spec["reg_weight"],
        deriv_floor=spec["deriv_floor"],
        radius=spec["radius"],
        name=spec["name"],
    )


def _run_replicate(spec: dict, seed: int) -> mcmc.ChainResult:
    params = {k: v for k, v in spec["problem_params"].items()}
    target = problems.make_target(spec["problem"], **params)
    cfg = _chain_config(spec, seed)
    if spec["sampler"] == "rwm":
        return mcmc.run_baseline_rwm(cfg, target, target.start)
    return mcmc.run_adaptive(cfg, target, target.start)


def write_samples(path: Path, result: mcmc.ChainResult) -> None:
    header = f"dim={result.dim} steps={result.n_steps} seed={result.seed}"
    np.savetxt(path, result.samples, fmt="%.17g", header=header, comments="# ")


def read_samples(path: Path) -> np.ndarray:
    if not any(line.strip() and not line.startswith("#") for line in Path(path).open()):
        raise ValueError(f"sample file {path} is empty")
    return np.loadtxt(path, ndmin=2)


def cmd_run(args: argparse.Namespace) -> int:
    try:
        spec = parse_run_config(Path(args.config))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.seed is not None:
        spec["seed"] = args.seed
    out_dir = Path(args.output or f"{spec['name']}-results")
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        seeds = [spec["seed"] + i for i in range(spec["replicates"])]
        if args.jobs > 1 and len(seeds) > 1:
            with ProcessPoolExecutor(max_workers=args.jobs) as pool:
                results = list(pool.map(_run_replicate, [spec] * len(seeds), seeds))
        else:
            results = [_run_replicate(spec, s) for s in seeds]

        reports = []
        summary_lines = [f"method: {spec['name']}", f"problem: {spec['problem']}", ""]
        for i, res in enumerate(results):
            write_samples(out_dir / f"samples_rep{i}.txt", res)
            if res.map_snapshots:
                tmod.save_map(res.map_snapshots[-1][1], out_dir / f"map_rep{i}.txt")
            report.trace_figure(res, out_dir / f"trace_rep{i}.png")
            report.scatter_figure(res, out_dir / f"scatter_rep{i}.png")
            if res.discrepancy_history:
                report.discrepancy_figure(res, out_dir / f"discrepancy_rep{i}.png")
            rep = diag.ess_report(res)
            reports.append(rep)
            summary_lines.append(
                f"replicate {i}: seed={res.seed} acceptance={rep.acceptance_rate:.3f} "
                f"tau_max={rep.tau_max:.2f} min_ess={rep.min_ess:.0f} "
                f"evals={rep.total_evals} seconds={rep.duration_seconds:.2f}"
            )
            if res.discrepancy_history:
                summary_lines.append(
                    f"  final discrepancy: {res.discrepancy_history[-1][1]:.6g}"
                )
        table = diag.efficiency_table({spec["name"]: reports})
        payload = {
            "method": spec["name"],
            "problem": spec["problem"],
            "replicates": [rep.to_record() for rep in reports],
            "aggregate": table.rows[0].to_record(),
        }
        (out_dir / "diagnostics.json").write_text(json.dumps(payload, indent=2))
        summary_lines += ["", "aggregate:", table.to_text()]
        (out_dir / "summary.txt").write_text("\n".join(summary_lines) + "\n")
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"run failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"wrote {spec['replicates']} replicate(s) to {out_dir}")
    return EXIT_OK


def cmd_fitmap(args: argparse.Namespace) -> int:
    try:
        samples = read_samples(Path(args.samples))
    except (OSError, ValueError) as exc:
        print(f"cannot read samples: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        basis = BasisSpec(
            family=args.family,
            set_type=args.set_type,
            degree=args.degree,
            diag_degree=args.diag_degree,
        )
    except ValueError as exc:
        print(f"bad basis spec: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        sets = basis.build_sets(samples.shape[1])
        cfg = mopt.OptimizerConfig(
            reg_weight=args.reg_weight,
            deriv_floor=args.deriv_floor,
            radius=_parse_radius(args.radius.lower()),
        )
        tmap, rep = mopt.fit_map(samples, sets, cfg, family=basis.family, return_report=True)
        tmod.save_map(tmap, args.output)
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"fit failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"fitted map on {samples.shape[0]} samples in {samples.shape[1]} dimensions")
    for i, (iters, obj) in enumerate(zip(rep.iterations, rep.objectives), start=1):
        print(f"component {i}: {iters} Newton iterations, objective {obj:.17g}")
    print(f"wrote {args.output}")
    return EXIT_OK


def cmd_compare(args: argparse.Namespace) -> int:
    grouped: dict[str, list[diag.EssReport]] = {}
    for d in args.results:
        path = Path(d) / "diagnostics.json"
        if not path.exists():
            print(f"missing diagnostics in {d}", file=sys.stderr)
            return EXIT_CONFIG
        try:
            payload = json.loads(path.read_text())
            reps = [diag.EssReport.from_record(rec) for rec in payload["replicates"]]
        except (json.JSONDecodeError, KeyError) as exc:
            print(f"malformed diagnostics in {d}: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        grouped.setdefault(payload["method"], []).extend(reps)
    try:
        table = diag.efficiency_table(grouped, baseline=args.baseline)
    except ValueError as exc:
        print(f"comparison failed: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out_dir = Path(args.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "comparison.txt").write_text(table.to_text() + "\n")
    (out_dir / "comparison.json").write_text(table.to_json())
    report.comparison_figure(table, out_dir / "comparison.png")
    print(table.to_text())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tmmcmc", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run configured chains")
    p_run.add_argument("--config", required=True, help="run configuration file")
    p_run.add_argument("--output", default=None, help="output directory")
    p_run.add_argument("--jobs", type=int, default=1, help="concurrent replicates")
    p_run.add_argument("--seed", type=int, default=None, help="override the config seed")
    p_run.set_defaults(func=cmd_run)

    p_fit = sub.add_parser("fitmap", help="fit a map to a sample file")
    p_fit.add_argument("samples", help="whitespace-delimited sample file")
    p_fit.add_argument("--output", required=True, help="where to write the map")
    p_fit.add_argument("--family", default="hermite")
    p_fit.add_argument("--set-type", dest="set_type", default="total_order")
    p_fit.add_argument("--degree", type=int, default=3)
    p_fit.add_argument("--diag-degree", dest="diag_degree", type=int, default=None)
    p_fit.add_argument("--reg-weight", dest="reg_weight", type=float, default=1e-4)
    p_fit.add_argument("--deriv-floor", dest="deriv_floor", type=float, default=1e-8)
    p_fit.add_argument("--radius", default="inf")
    p_fit.set_defaults(func=cmd_fitmap)

    p_cmp = sub.add_parser("compare", help="merge run diagnostics into one table")
    p_cmp.add_argument("results", nargs="+", help="run output directories")
    p_cmp.add_argument("--baseline", default=None, help="method used as reference")
    p_cmp.add_argument("--output", default=".", help="where to write the table")
    p_cmp.set_defaults(func=cmd_compare)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
