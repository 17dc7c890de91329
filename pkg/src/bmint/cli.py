"""Command-line front end.

Every run resolves a configuration (built-in defaults, then the YAML file given
by ``--config``, then command-line flags), writes it to
``<out>/<subcommand>-<hash12>-s<seed>/`` together with a manifest and the
results, and exits with 0 (success), 1 (invalid input) or 2 (numerical
failure: non-convergence, cost cap, empty ensemble).
"""
from __future__ import annotations

import argparse
import copy
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, _accel
from .counting import CostCapError
from .geometry import NAMED_DOMAINS, CompactSubset, DomainSpec, GridMeasure, make_grid
from .io import (ConfigError, cached_basis, cache_dir, config_hash, dump_config, field_rows, load_config,
                 run_directory, write_csv, write_json)
from .moments import QuadratureError
from .simulate import EmptyEnsembleError
from .spectral import ConvergenceError

SUBCOMMANDS = ("spectral", "simulate", "moments", "minimize", "counting", "gamma", "experiment")

DEFAULTS = {
    "spectral": {"domain": "unit-square", "p": 2, "n": 64, "N": 50, "method": "tensor"},
    "simulate": {"domain": "unit-square", "p": 2, "n": 32, "dt": 1e-4, "t": 0.2, "b": None,
                 "start": "center", "n_samples": 1000, "test_functions": []},
    "moments": {"domain": "unit-square", "n": 32, "n_fine": 64, "dt": 1e-4, "n_paths": 20000, "chunk": 4000,
                "configs": [{"p": 1, "t": 0.3, "eps": 0.1, "k": 1,
                             "f": {"kind": "sine", "amplitude": 1.0}}]},
    "minimize": {"functional": "dv", "domain": "unit-square", "p": 2, "n": 64, "U": None, "b": None,
                 "target": "ground_power", "method": "inverse"},
    "counting": {"k": 4, "p": 2, "R": 2},
    "gamma": {"domain": "unit-square", "p": 2, "n": 48, "target": "ground", "b": None,
              "eps": [0.2, 0.1], "delta": [0.05, 0.05]},
    "experiment": {"name": "heuristic", "params": {}},
}

FUNCTIONALS = ("dv", "I", "J", "theta", "chi")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _domain(spec, p: int) -> DomainSpec:
    if isinstance(spec, str):
        if spec not in NAMED_DOMAINS:
            raise ConfigError(f"unknown domain {spec!r}; use {sorted(NAMED_DOMAINS)} or lower/upper bounds")
        return NAMED_DOMAINS[spec](p)
    if isinstance(spec, dict):
        return DomainSpec(tuple(spec["lower"]), tuple(spec["upper"]), int(spec.get("p", p)))
    raise ConfigError("domain must be a name or a mapping with lower/upper")


def _default_U(dom: DomainSpec) -> CompactSubset:
    lo, hi = np.asarray(dom.lower), np.asarray(dom.upper)
    L = hi - lo
    return CompactSubset(tuple(lo + 0.25 * L), tuple(lo + 0.75 * L))


def _subset(spec, dom: DomainSpec) -> CompactSubset:
    if spec is None:
        return _default_U(dom)
    return CompactSubset(tuple(spec["lower"]), tuple(spec["upper"]))


def _test_function(spec):
    from .experiments import TestFunction

    return TestFunction.from_dict(dict(spec))


# ---------------------------------------------------------------------------
# subcommands; each returns a dict of outputs {filename: (kind, payload)}


def run_spectral(cfg: dict, ctx: dict) -> dict:
    from .spectral import weyl_slope

    dom = _domain(cfg["domain"], cfg["p"])
    grid = make_grid(dom, int(cfg["n"]))
    basis, hit = cached_basis(grid, int(cfg["N"]), cfg["method"], ctx["cache"])
    rows = [[k + 1, float(lam)] for k, lam in enumerate(basis.eigenvalues)]
    summary = {"N": basis.N, "lambda_1": float(basis.eigenvalues[0])}
    if basis.N >= 200:
        summary["weyl_slope"] = weyl_slope(basis)
    header, frows = field_rows(grid, {"psi_1": basis.fields[0]})
    return {"eigenvalues.csv": ("csv", (["index", "eigenvalue"], rows)),
            "ground_state.csv": ("csv", (header, frows)),
            "summary.json": ("json", summary)}


def run_simulate(cfg: dict, ctx: dict) -> dict:
    from .simulate import PathConfig, run_ensemble

    dom = _domain(cfg["domain"], cfg["p"])
    grid = make_grid(dom, int(cfg["n"]))
    pc = PathConfig(float(cfg["dt"]), float(cfg["t"]), cfg["b"], cfg["start"], ctx["seed"])
    funcs = [_test_function(f).on_grid(grid).values for f in cfg["test_functions"]]
    ens = run_ensemble(dom, grid, pc, int(cfg["n_samples"]), functionals=funcs or None, keep_occupations=False)
    header, rows = ens.csv_rows()
    summary = {"n_sampled": ens.n_sampled, "accepted": ens.accepted, "acceptance": ens.acceptance}
    return {"ensemble.csv": ("csv", (header, rows)), "summary.json": ("json", summary)}


def run_moments(cfg: dict, ctx: dict) -> dict:
    from .mollify import MollifierSpec
    from .moments import exact_moment_k1, exact_moment_k2, jackknife, streamed_samples
    from .simulate import PathConfig

    rows = []
    for j, c in enumerate(cfg["configs"]):
        p, t, eps, k = int(c["p"]), float(c["t"]), float(c["eps"]), int(c.get("k", 1))
        dom = _domain(cfg["domain"], p)
        coarse = make_grid(dom, int(cfg["n"]))
        fine = make_grid(dom, int(cfg["n_fine"]))
        basis, _ = cached_basis(fine, fine.n_interior, "tensor", ctx["cache"])
        f = _test_function(c["f"]).on_grid(coarse)
        if k == 1:
            exact, err = exact_moment_k1(f, t, eps, basis=basis, return_error=True)
        elif k == 2:
            exact, err = exact_moment_k2(f, t, eps, basis=basis, return_error=True)
        else:
            raise ConfigError("moments: k must be 1 or 2")
        pc = PathConfig(float(cfg["dt"]), t, None, "center", ctx["seed"] + 1000003 * j)
        vals = streamed_samples(dom, coarse, pc, int(cfg["n_paths"]), [(f, MollifierSpec(eps))],
                                chunk=int(cfg["chunk"]))[0]
        mc, se = jackknife(vals**k)
        rows.append([j, p, t, eps, k, exact, err, mc, se, (mc - exact) / se if se > 0 else float("nan")])
    header = ["config", "p", "t", "eps", "k", "exact", "quad_error", "mc", "se", "z"]
    return {"moments.csv": ("csv", (header, rows))}


def _target_measure(kind: str, grid, p: int):
    from .spectral import schroedinger_ground_state

    w = grid.weights
    psi = schroedinger_ground_state(grid, np.zeros(grid.shape))[1].values
    if kind == "ground_power":
        # density psi_1^{2p}: the symmetric split psi_i = psi_1 is admissible
        psi = psi / math.sqrt(float(np.sum(psi**2 * w)))
        return GridMeasure(psi ** (2 * p) * w, grid)
    if kind == "uniform":
        return GridMeasure(w / w.sum(), grid)
    raise ConfigError(f"unknown target {kind!r}; use ground_power or uniform")


def run_minimize(cfg: dict, ctx: dict) -> dict:
    from . import variational as va

    fn = cfg["functional"]
    if fn not in FUNCTIONALS:
        raise ConfigError(f"unknown functional {fn!r}; choose from {FUNCTIONALS}")
    p = int(cfg["p"])
    dom = _domain(cfg["domain"], p)
    grid = make_grid(dom, int(cfg["n"]))
    seed = ctx["seed"]
    if fn == "dv":
        res = va.minimize_dv(grid, method=cfg["method"], seed=seed)
    elif fn == "theta":
        res = va.theta(dom, _subset(cfg["U"], dom), p, grid=grid)
    elif fn == "chi":
        res = va.chi_B(dom, p, grid=grid)
    elif fn == "I":
        b = np.ones(p) if cfg["b"] is None else np.asarray(cfg["b"], dtype=float)
        res = va.rate_I(_target_measure(cfg["target"], grid, p), b, p, seed=seed)
    else:
        U = _subset(cfg["U"], dom)
        if cfg["target"] == "uniform":
            w = grid.weights
            mu = GridMeasure(w / float(np.sum(grid.box_weights(U))), grid)
        else:
            th = va.theta(dom, U, p, grid=grid)
            mu = GridMeasure(th.phi.values ** (2 * p) * grid.weights, grid)
        res = va.rate_J(mu, U, p, seed=seed)
    out = {"result.json": ("json", dict(res.to_record(), functional=fn))}
    if res.minimizer is not None:
        fields = {f"psi_{i + 1}": f.values for i, f in enumerate(res.minimizer.fields)}
        out["minimizer.csv"] = ("csv", field_rows(grid, fields))
    return out


def run_counting(cfg: dict, ctx: dict) -> dict:
    from .counting import audit

    rows = audit(int(cfg["k"]), int(cfg["p"]), int(cfg["R"]))
    header = ["k", "p", "R", "K", "m1", "a_hash", "formula", "enum_min", "enum_max", "n_sequences", "equal"]
    table = [[r.k, r.p, r.R, r.K, r.m1, r.a_hash, r.formula, r.enum_min, r.enum_max, r.n_sequences, r.equal]
             for r in rows]
    summary = {"rows": len(rows), "all_equal": all(r.equal for r in rows),
               "sequences_checked": int(sum(r.n_sequences for r in rows))}
    ctx["failed"] = not summary["all_equal"]
    return {"audit.csv": ("csv", (header, table)), "summary.json": ("json", summary)}


def run_gamma(cfg: dict, ctx: dict) -> dict:
    from .spectral import schroedinger_ground_state
    from .variational import gamma_probe

    p = int(cfg["p"])
    dom = _domain(cfg["domain"], p)
    grid = make_grid(dom, int(cfg["n"]))
    w = grid.weights
    if cfg["target"] == "ground":
        psi = schroedinger_ground_state(grid, np.zeros(grid.shape))[1].values
        mus = [GridMeasure(psi**2 * w, grid) for _ in range(p)]
    elif cfg["target"] == "uniform":
        mus = [GridMeasure(w / w.sum(), grid) for _ in range(p)]
    else:
        raise ConfigError("gamma: target must be ground or uniform")
    b = np.ones(p) if cfg["b"] is None else np.asarray(cfg["b"], dtype=float)
    rows = gamma_probe(mus, b, cfg["eps"], cfg["delta"])
    table = [[r.eps, r.delta, float(r.value), r.n_candidates, r.n_admissible] for r in rows]
    return {"gamma.csv": ("csv", (["eps", "delta", "value", "n_candidates", "n_admissible"], table))}


def run_experiment(cfg: dict, ctx: dict) -> dict:
    from dataclasses import asdict

    from . import experiments as ex

    name = cfg["name"]
    params = dict(cfg.get("params") or {})
    known = {k: v for k, v in cfg.items() if k not in ("name", "params")}
    if name == "scaling":
        rep = ex.scaling_check_isl_mass(seed=ctx["seed"], **params)
        return {"scaling.json": ("json", asdict(rep))}
    if name == "heuristic":
        dom = _domain(params.pop("domain", "unit-square"), int(params.pop("p", 2)))
        U = _subset(params.pop("U", None), dom)
        rep = ex.heuristic_audit(dom, U, seed=ctx["seed"], **params)
        ctx["failed"] = not rep.ok and rep.perturbation == 0
        return {"heuristic.json": ("json", dict(asdict(rep), ok=rep.ok))}
    if "domain" in known or "p" in known:
        known["domain"] = _domain(known.get("domain", "unit-square"), int(known.pop("p", 2)))
    ecfg = ex.ExperimentConfig.from_dict(dict(known, name=name, seed=ctx["seed"]))
    if name == "gartner_ellis":
        rep = ex.gartner_ellis_p1(ecfg)
        header, rows = ex.rows_to_table(rep.rows)
        summary = {"limits": rep.limits, "spectral": rep.spectral, "intercepts": rep.intercepts,
                   "relative_errors": rep.relative_errors()}
        return {"gartner_ellis.csv": ("csv", (header, rows)), "summary.json": ("json", summary)}
    if name == "ldp_tuple":
        header, rows = ex.rows_to_table(ex.ldp_tuple_probe(ecfg))
        return {"ldp_tuple.csv": ("csv", (header, rows))}
    if name == "eps_contraction":
        header, rows = ex.rows_to_table(ex.eps_contraction(ecfg, **params))
        return {"eps_contraction.csv": ("csv", (header, rows))}
    raise ConfigError(f"unknown experiment {name!r}")


RUNNERS = {"spectral": run_spectral, "simulate": run_simulate, "moments": run_moments,
           "minimize": run_minimize, "counting": run_counting, "gamma": run_gamma,
           "experiment": run_experiment}


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="bmint", description="Intersection-measure laboratory")
    parser.add_argument("--version", action="version", version=f"bmint {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML configuration file")
    common.add_argument("--seed", type=int, help="base seed (default: config value or 0)")
    common.add_argument("--workers", type=int, help="numba threads (results do not depend on it)")
    common.add_argument("--out", default="out", help="root of the output directories")
    common.add_argument("--force", action="store_true", help="reuse an existing output directory")
    common.add_argument("--cache-dir", help="spectral cache directory (else $BMINT_CACHE_DIR; none if unset)")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def add(name, help_):
        return sub.add_parser(name, parents=[common], help=help_)

    for name, help_ in (("spectral", "Dirichlet eigenpairs"), ("simulate", "killed Brownian ensembles"),
                        ("moments", "exact vs Monte Carlo moment tables"), ("gamma", "Gamma-convergence probe")):
        sp_ = add(name, help_)
        sp_.add_argument("--domain")
        sp_.add_argument("--n", type=int)
        sp_.add_argument("--p", type=int)
    sub.choices["spectral"].add_argument("--N", type=int)
    sub.choices["spectral"].add_argument("--method", choices=("tensor", "sparse"))
    sub.choices["simulate"].add_argument("--t", type=float)
    sub.choices["simulate"].add_argument("--dt", type=float)
    sub.choices["simulate"].add_argument("--n-samples", dest="n_samples", type=int)
    sub.choices["moments"].add_argument("--n-paths", dest="n_paths", type=int)
    mn = add("minimize", "rate functionals (dv | I | J | theta | chi)")
    mn.add_argument("functional", nargs="?", choices=FUNCTIONALS)
    mn.add_argument("--domain")
    mn.add_argument("--n", type=int)
    mn.add_argument("--p", type=int)
    mn.add_argument("--target")
    mn.add_argument("--method", choices=("inverse", "l2"))
    ct = add("counting", "exhaustive audit of the cardinality formula")
    ct.add_argument("--k", type=int)
    ct.add_argument("--p", type=int)
    ct.add_argument("--R", type=int)
    ex = add("experiment", "end-to-end studies")
    ex.add_argument("name", nargs="?", choices=("gartner_ellis", "ldp_tuple", "heuristic", "scaling",
                                                 "eps_contraction"))
    return parser


_FLAG_KEYS = ("domain", "n", "p", "N", "method", "t", "dt", "n_samples", "n_paths", "functional", "target",
              "k", "R", "name")


def _experiment_defaults(name: str) -> dict:
    from .experiments import EXPERIMENTS, ExperimentConfig

    if name not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {name!r}; choose from {EXPERIMENTS}")
    if name == "scaling":
        return {"name": name, "params": {"p": 2, "d": 2, "s": 0.05, "factor": 2.0, "eps": 0.02, "dt": None,
                                         "n_samples": 2000}}
    if name == "heuristic":
        return {"name": name, "params": {"domain": "unit-square", "p": 2, "U": None, "n": 64, "perturb": 0.0}}
    base = ExperimentConfig(name).to_dict()
    base.pop("seed")
    base["params"] = {"t": 0.2} if name == "eps_contraction" else {}
    return base


def resolve_config(command: str, args: argparse.Namespace) -> tuple:
    """``(config, seed)`` with defaults, file values and flags applied in that order.

    Every default is materialised, so the resolved config describes the run fully.
    """
    file_cfg = load_config(args.config)
    seed = file_cfg.pop("seed", 0)
    if command == "experiment":
        name = getattr(args, "name", None) or file_cfg.get("name") or DEFAULTS["experiment"]["name"]
        defaults = _experiment_defaults(name)
        file_cfg["name"] = name
    else:
        defaults = DEFAULTS[command]
    cfg = _merge(defaults, file_cfg)
    for key in _FLAG_KEYS:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    if args.seed is not None:
        seed = args.seed
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ConfigError("seed must be a nonnegative integer")
    unknown = set(cfg) - set(defaults)
    if "params" in defaults:
        unknown |= {f"params.{k}" for k in set(cfg["params"] or {}) - set(defaults["params"])}
    if unknown:
        raise ConfigError(f"unknown {command} config keys: {sorted(unknown)}")
    return cfg, seed


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 1
    t0 = time.perf_counter()
    try:
        cfg, seed = resolve_config(args.command, args)
        out = run_directory(args.out, args.command, cfg, seed, args.force)
        _accel.set_workers(args.workers)
        ctx = {"seed": seed, "cache": cache_dir(args.cache_dir), "failed": False}
        outputs = RUNNERS[args.command](cfg, ctx)
    except (ConfigError, ValueError, KeyError, TypeError) as exc:
        print(f"bmint {args.command}: invalid input: {exc}", file=sys.stderr)
        return 1
    except (ConvergenceError, QuadratureError, CostCapError, EmptyEnsembleError, FloatingPointError) as exc:
        print(f"bmint {args.command}: numerical failure: {exc}", file=sys.stderr)
        return 2
    for name, (kind, payload) in outputs.items():
        if kind == "csv":
            write_csv(out / name, *payload)
        else:
            write_json(out / name, payload)
    (out / "config.yaml").write_text(dump_config(dict(cfg, seed=seed)))
    manifest = {"subcommand": args.command, "config_path": args.config, "config_hash": config_hash(cfg),
                "seed": seed, "output_dir": out.name, "version": __version__,
                "files": sorted(outputs), "config": cfg}
    write_json(out / "manifest.json", manifest)
    (out / "timing.txt").write_text(f"wall_seconds {time.perf_counter() - t0:.3f}\n"
                                    f"workers {args.workers if args.workers else 'default'}\n"
                                    f"backend {_accel.default_backend()}\n")
    print(str(out))
    return 2 if ctx["failed"] else 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
