"""Command-line interface: search, simulate, evaluate, report, sweep.

Exit codes: 0 success, 2 configuration or input error, 3 runtime failure.
``FOCKGA_RUN_DIR`` and ``FOCKGA_WORKERS`` override the config file; command
line flags override both.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from dataclasses import replace
from typing import Optional

import numpy as np

from . import __version__
from .circuit import _with, decode, simulate, simulate_adaptive
from .circuitfile import CircuitParseError, read_circuit
from .config import ConfigError, RunConfig, dump_config, load_config
from .fitness import FitnessKind, FitnessSpec, FitnessUndefined, evaluate_result, reference_values
from .fock import HeraldImpossible
from .report import (RunReport, baseline_block, consolidate, fitness_block, persisted_config,
                     provenance, report_from_search, runtime_block, simulation_summary, write_report)
from .search import run_three_stage
from .toolbox import LossModel

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

ENV_RUN_DIR = "FOCKGA_RUN_DIR"
ENV_WORKERS = "FOCKGA_WORKERS"

log = logging.getLogger("fockga")


class InputError(Exception):
    """Bad user input that is not a config-file problem (maps to exit code 2)."""


def _env_int(name):
    raw = os.environ.get(name)
    if raw is None or raw == "":
        return None
    try:
        value = int(raw)
    except ValueError:
        raise InputError(f"{name}={raw!r} is not an integer") from None
    if value < 1:
        raise InputError(f"{name} must be >= 1")
    return value


def resolve_config(args) -> RunConfig:
    """Config file, then environment, then command-line flags."""
    cfg = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    env_dir = os.environ.get(ENV_RUN_DIR)
    if env_dir:
        cfg = replace(cfg, output=replace(cfg.output, run_dir=env_dir))
    env_workers = _env_int(ENV_WORKERS)
    if env_workers:
        cfg = replace(cfg, workers=env_workers)
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed, search=replace(cfg.search, seed=args.seed))
    if getattr(args, "workers", None) is not None:
        cfg = replace(cfg, workers=args.workers)
    if getattr(args, "t_max", None) is not None:
        if args.t_max < max(cfg.search.truncations):
            t1, t2 = (min(t, args.t_max) for t in cfg.search.truncations)
            cfg = replace(cfg, search=replace(cfg.search, truncations=(t1, t2)))
        cfg = replace(cfg, limits=replace(cfg.limits, t_max=args.t_max))
    if getattr(args, "out", None):
        cfg = replace(cfg, output=replace(cfg.output, run_dir=args.out))
    return cfg


# --------------------------------------------------------------------------
# search / sweep


def _final_simulation(plan, cfg: RunConfig, spec: FitnessSpec):
    s = cfg.search
    probe = None
    if spec.kind in (FitnessKind.PURE_QFI_SCALED, FitnessKind.MIXED_QFI_SCALED):
        def probe(r):
            return evaluate_result(r, spec).value
    return simulate_adaptive(plan, min(s.adaptive_start, cfg.limits.t_max), s.adaptive_step,
                             cfg.limits.t_max, cfg.loss, fitness_probe=probe, rel_tol=s.adaptive_rel_tol)


def run_search(cfg: RunConfig, fresh: bool = False) -> RunReport:
    run_dir = cfg.output.run_dir
    os.makedirs(run_dir, exist_ok=True)
    ckpt = os.path.join(run_dir, "checkpoint.json")
    if fresh and os.path.exists(ckpt):
        os.remove(ckpt)
    with open(os.path.join(run_dir, "config.yaml"), "w") as fh:
        fh.write(dump_config(cfg))
    t0 = time.perf_counter()
    outcome = run_three_stage(cfg.toolbox, cfg.fitness, cfg.search, cfg.loss, cfg.limits,
                              workers=cfg.workers, checkpoint=ckpt)
    plan = decode(outcome.best.genome)
    final = _final_simulation(plan, cfg, cfg.fitness)
    refs = None
    if cfg.fitness.kind in (FitnessKind.BMSE_FIXED_POVM, FitnessKind.BMSE_SINGLE_SHOT_OPTIMAL):
        refs = reference_values(cfg.fitness)
    elapsed = dict(outcome.elapsed, total=time.perf_counter() - t0)
    report = report_from_search(outcome, cfg, cfg.fitness, refs, elapsed, final)
    write_report(report, run_dir, cfg.output.formats)
    return report


def cmd_search(args) -> int:
    cfg = resolve_config(args)
    report = run_search(cfg, fresh=args.fresh)
    _print_summary(report)
    print(f"report written to {cfg.output.run_dir}")
    return EXIT_OK


def _gamma_dir(gamma):
    return f"gamma_{gamma:g}"


def cmd_sweep(args) -> int:
    cfg = resolve_config(args)
    if not cfg.sweep.gammas:
        raise ConfigError("sweep.gammas is empty; list the loss rates to sweep", path=args.config)
    root = cfg.output.run_dir
    for gamma in cfg.sweep.gammas:
        point = replace(cfg, loss=cfg.sweep.loss_for(gamma),
                        output=replace(cfg.output, run_dir=os.path.join(root, _gamma_dir(gamma))))
        log.info("sweep point gamma=%g", gamma)
        report = run_search(point, fresh=args.fresh)
        _print_summary(report)
    consolidate(root)
    print(f"sweep reports and summary written to {root}")
    return EXIT_OK


# --------------------------------------------------------------------------
# simulate / evaluate


def _loss_from(args, cfg: RunConfig) -> LossModel:
    return LossModel(cfg.loss.gamma_out if args.gamma_out is None else args.gamma_out,
                     cfg.loss.gamma_det if args.gamma_det is None else args.gamma_det)


def _simulate_circuit(args, cfg, probe=None):
    plan = read_circuit(args.circuit)
    loss = _loss_from(args, cfg)
    t_max = args.t_max if args.t_max is not None else cfg.limits.t_max
    if args.fixed:
        res = simulate(plan, t_max, loss)
        if probe is not None:
            res = _with(res, probe_value=float(probe(res)))
    else:
        res = simulate_adaptive(plan, min(args.t_start, t_max), args.t_step, t_max, loss,
                                fitness_probe=probe)
    return plan, loss, res


def _simple_report(kind, cfg, plan, res, fitness=None, baseline=None, elapsed=None):
    return RunReport(kind=kind, provenance=provenance(cfg.config_hash(), cfg.seed),
                     config=persisted_config(cfg), result=simulation_summary(plan, res),
                     fitness=fitness or {}, baseline=baseline or {},
                     runtime=runtime_block(cfg, elapsed))


def cmd_simulate(args) -> int:
    cfg = resolve_config(args)
    t0 = time.perf_counter()
    try:
        plan, loss, res = _simulate_circuit(args, cfg)
    except HeraldImpossible as exc:
        print(f"heralding impossible: {exc}")
        return EXIT_OK
    report = _simple_report("simulate", cfg, plan, res, elapsed={"total": time.perf_counter() - t0})
    print(report.to_text(), end="")
    if args.out:
        write_report(report, args.out, cfg.output.formats)
    return EXIT_OK


def _fitness_spec(args, cfg) -> FitnessSpec:
    spec = cfg.fitness
    changes = {}
    if args.fitness is not None:
        changes["kind"] = FitnessKind(args.fitness)
    if args.mu is not None:
        changes["mu"] = args.mu
    if args.mc_samples is not None:
        changes["mc_samples"] = args.mc_samples
    if args.seed is not None:
        changes["mc_seed"] = args.seed
    return replace(spec, **changes) if changes else spec


def cmd_evaluate(args) -> int:
    cfg = resolve_config(args)
    spec = _fitness_spec(args, cfg)
    cfg = replace(cfg, fitness=spec)
    t0 = time.perf_counter()
    qfi = spec.kind in (FitnessKind.PURE_QFI_SCALED, FitnessKind.MIXED_QFI_SCALED)
    probe = (lambda r: evaluate_result(r, spec).value) if qfi else None
    try:
        plan, loss, res = _simulate_circuit(args, cfg, probe)
        fv = evaluate_result(res, spec, np.random.default_rng(spec.mc_seed))
    except HeraldImpossible as exc:
        print(f"heralding impossible: {exc}")
        return EXIT_OK
    except FitnessUndefined as exc:
        raise InputError(f"fitness undefined for this circuit: {exc}") from None
    cfg = replace(cfg, loss=loss)
    refs = None
    if not qfi and not args.no_references:
        refs = reference_values(spec)
    report = _simple_report("evaluate", cfg, plan, res, fitness_block(spec, fv.value, fv.details),
                            baseline_block(spec, fv.value, res.mean_photons, loss.gamma_out, refs),
                            elapsed={"total": time.perf_counter() - t0})
    print(report.to_text(), end="")
    if args.out:
        write_report(report, args.out, cfg.output.formats)
    return EXIT_OK


def cmd_report(args) -> int:
    root = args.run_dir or os.environ.get(ENV_RUN_DIR)
    if not root:
        raise InputError("give a run directory (or set FOCKGA_RUN_DIR)")
    if not os.path.isdir(root):
        raise InputError(f"{root} is not a directory")
    try:
        summary = consolidate(root)
    except FileNotFoundError as exc:
        raise InputError(str(exc)) from None
    with open(os.path.join(root, "summary.txt")) as fh:
        print(fh.read(), end="")
    print(f"{len(summary['reports'])} report(s) consolidated in {root}")
    return EXIT_OK


def _print_summary(report: RunReport):
    d = report.to_dict()
    r, f = d["result"], d["fitness"]
    base = d.get("baseline", {})
    line = f"{f['kind']} = {f['value']}  herald {r['herald_percent']:.4f} %  n-bar {r['nbar']:.4g}"
    if "ratio" in base and base["ratio"] is not None:
        line += f"  vs squeezed vacuum x{base['ratio']:.3g}"
    print(line)
    print(r["row"])


# --------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fockga", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"fockga {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required=False):
        sp.add_argument("--config", required=config_required, help="YAML run configuration")
        sp.add_argument("--seed", type=int, help="master seed (overrides the config)")
        sp.add_argument("--workers", type=int, help=f"worker processes (env {ENV_WORKERS})")
        sp.add_argument("--t-max", type=int, dest="t_max", help="maximum truncation")
        sp.add_argument("--out", help=f"run/output directory (env {ENV_RUN_DIR})")

    s = sub.add_parser("search", help="run the three-stage genetic search")
    common(s, config_required=True)
    s.add_argument("--fresh", action="store_true", help="ignore an existing checkpoint")
    s.set_defaults(func=cmd_search)

    s = sub.add_parser("sweep", help="run one search per loss rate in the sweep section")
    common(s, config_required=True)
    s.add_argument("--fresh", action="store_true", help="ignore existing checkpoints")
    s.set_defaults(func=cmd_sweep)

    for name, func, helptext in (("simulate", cmd_simulate, "simulate a circuit file"),
                                 ("evaluate", cmd_evaluate, "evaluate a fitness on a circuit file")):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("circuit", help="circuit file")
        common(s)
        s.add_argument("--t-start", type=int, default=20, dest="t_start")
        s.add_argument("--t-step", type=int, default=10, dest="t_step")
        s.add_argument("--fixed", action="store_true", help="simulate at --t-max only")
        s.add_argument("--gamma-out", type=float, dest="gamma_out", help="output loss rate")
        s.add_argument("--gamma-det", type=float, dest="gamma_det", help="detector loss rate")
        if name == "evaluate":
            s.add_argument("--fitness", choices=[k.value for k in FitnessKind])
            s.add_argument("--mu", type=int, help="number of repetitions (BMSE)")
            s.add_argument("--mc-samples", type=int, dest="mc_samples")
            s.add_argument("--no-references", action="store_true", dest="no_references",
                           help="skip the benchmark-probe BMSE values")
        s.set_defaults(func=func)

    s = sub.add_parser("report", help="consolidate reports below a run directory")
    s.add_argument("run_dir", nargs="?")
    s.set_defaults(func=cmd_report)
    return p


def main(argv: Optional[list] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, CircuitParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (InputError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except KeyboardInterrupt:
        print("interrupted: checkpoint flushed; rerun the same command to resume", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # runtime failure
        log.debug("runtime failure", exc_info=True)
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
