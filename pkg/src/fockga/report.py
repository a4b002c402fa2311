"""Run reports (text plus a JSON mirror), plot-data files and consolidation.

JSON reports use sorted keys and keep wall-clock data, the run directory and
the worker count under ``runtime``, so two runs of the same configuration
differ only there.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
import platform
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import __version__, kernels
from .circuit import ExperimentPlan, SimulationResult, decode
from .circuitfile import format_circuit, format_row
from .fitness import (FitnessKind, FitnessSpec, improvement_factor,
                      lossy_squeezed_vacuum_qfi_scaled, squeezed_vacuum_qfi_scaled)

REPORT_FORMAT = "fockga-report"
REPORT_VERSION = 1
PLOT_VERSION = 1
DIST_FLOOR = 1e-300


def provenance(config_hash: Optional[str] = None, seed: Optional[int] = None) -> dict:
    return {"config_hash": config_hash, "seed": seed, "code_version": __version__,
            "python": platform.python_version(), "numpy": np.__version__,
            "kernel_backend": kernels.BACKEND}


def number_distribution(result: SimulationResult) -> list:
    """(n, p_n) pairs of the output mode, renormalized to sum to one."""
    p = result.number_distribution()
    p = p / p.sum()
    return [[int(n), float(v)] for n, v in enumerate(p)]


def sv_baseline(nbar: float, gamma_out: float = 0.0) -> float:
    """Equal-n-bar squeezed-vacuum F/n-bar, through the same output loss."""
    if gamma_out > 0:
        return lossy_squeezed_vacuum_qfi_scaled(nbar, gamma_out)
    return squeezed_vacuum_qfi_scaled(nbar)


def simulation_summary(plan: ExperimentPlan, result: SimulationResult) -> dict:
    return {
        "circuit": format_circuit(plan),
        "row": format_row(plan),
        "herald_probability": result.herald_probability,
        "herald_percent": 100.0 * result.herald_probability,
        "nbar": result.mean_photons,
        "purity": result.purity(),
        "truncation": result.truncation_used,
        "leakage": result.leakage,
        "converged": bool(result.converged),
        "herald_is_density": bool(result.herald_is_density),
        "number_distribution": number_distribution(result),
    }


@dataclass
class RunReport:
    """Outcome of one search (or one evaluation), self-contained and re-runnable."""

    kind: str
    provenance: dict
    config: dict
    result: dict
    fitness: dict
    baseline: dict = field(default_factory=dict)
    genome: Optional[list] = None
    trace: list = field(default_factory=list)
    evaluations: dict = field(default_factory=dict)
    runtime: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"format": REPORT_FORMAT, "version": REPORT_VERSION, "kind": self.kind,
                "provenance": self.provenance, "config": self.config, "result": self.result,
                "fitness": self.fitness, "baseline": self.baseline, "genome": self.genome,
                "trace": self.trace, "evaluations": self.evaluations, "runtime": self.runtime}

    @classmethod
    def from_dict(cls, d: dict) -> "RunReport":
        if d.get("format") != REPORT_FORMAT:
            raise ValueError("not a fockga report")
        if d.get("version") != REPORT_VERSION:
            raise ValueError(f"unsupported report version {d.get('version')}")
        return cls(d["kind"], d["provenance"], d["config"], d["result"], d["fitness"],
                   d.get("baseline", {}), d.get("genome"), d.get("trace", []),
                   d.get("evaluations", {}), d.get("runtime", {}))

    def to_json(self) -> str:
        return json.dumps(_clean(self.to_dict()), sort_keys=True, indent=1) + "\n"

    def to_text(self) -> str:
        return render_text(self.to_dict())


def _clean(obj):
    """JSON-safe copy: non-finite floats become null."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def fitness_block(spec: FitnessSpec, value: Optional[float], details: Optional[dict] = None) -> dict:
    d = {"kind": spec.kind.value, "sense": spec.sense, "value": value}
    if spec.kind in (FitnessKind.BMSE_FIXED_POVM, FitnessKind.BMSE_SINGLE_SHOT_OPTIMAL):
        d["mu"] = spec.mu
        d["prior_variance"] = spec.prior.variance
    if details:
        d["details"] = {k: v for k, v in details.items() if k != "nbar"}
    return d


def baseline_block(spec: FitnessSpec, value: Optional[float], nbar: float, gamma_out: float,
                   references: Optional[dict] = None) -> dict:
    """Equal-n-bar squeezed vacuum for QFI fitnesses, improvement factors for BMSE."""
    if spec.kind in (FitnessKind.PURE_QFI_SCALED, FitnessKind.MIXED_QFI_SCALED):
        base = sv_baseline(nbar, gamma_out)
        return {"squeezed_vacuum": base, "gamma_out": gamma_out,
                "ratio": value / base if value is not None else None}
    out = {"references": references or {}}
    if references and value is not None:
        out["improvement"] = {k: improvement_factor(r["value"], value) for k, r in references.items()}
    return out


# --------------------------------------------------------------------------
# text rendering


def _fmt(v, digits=6):
    if v is None:
        return "n/a"
    if isinstance(v, float):
        return f"{v:.{digits}g}"
    return str(v)


def render_text(d: dict) -> str:
    prov, res, fit, base = d["provenance"], d["result"], d["fitness"], d.get("baseline", {})
    lines = [f"fockga {d['kind']} report (format v{d['version']})",
             f"code {prov['code_version']}  config {prov['config_hash']}  seed {prov['seed']}  "
             f"kernels {prov['kernel_backend']}", ""]
    lines.append("circuit:")
    lines += ["  " + ln for ln in res["circuit"].splitlines()]
    lines.append(f"table row: {res['row']}")
    lines.append("")
    lines.append(f"heralding probability  {res['herald_percent']:.4f} %")
    lines.append(f"mean photon number     {_fmt(res['nbar'])}")
    lines.append(f"purity                 {_fmt(res['purity'])}")
    lines.append(f"truncation             {res['truncation']} (leakage {res['leakage']:.2e}, "
                 f"{'converged' if res['converged'] else 'NOT converged'})")
    if fit:
        lines.append(f"fitness {fit['kind']} = {_fmt(fit['value'])} ({fit['sense']})")
    if "squeezed_vacuum" in base:
        lines.append(f"squeezed vacuum at equal n-bar: {_fmt(base['squeezed_vacuum'])}"
                     f"  ratio {_fmt(base['ratio'], 4)}")
    for k, r in base.get("references", {}).items():
        lines.append(f"reference {k}: {_fmt(r['value'])} (std err {_fmt(r.get('std_error'), 2)})"
                     f"  I = {_fmt(base.get('improvement', {}).get(k), 4)}")
    ev = d.get("evaluations") or {}
    if ev:
        lines.append(f"evaluations {ev.get('total')} (per stage {ev.get('per_stage')}), "
                     f"simulations {ev.get('simulations')}")
    if d.get("trace"):
        lines += ["", "stage  gen  best score      mean score      failed"]
        for r in d["trace"]:
            lines.append(f"{r['stage']:>5}  {r['generation']:>3}  {_fmt(r['best_score']):<14}  "
                         f"{_fmt(r['mean_score']):<14}  {r['failed']}")
    dist = res["number_distribution"]
    top = sorted(dist, key=lambda x: -x[1])[:8]
    lines += ["", "largest number-state populations:"]
    lines += [f"  n={n:<4} p={p:.6g}" for n, p in sorted(top)]
    elapsed = (d.get("runtime") or {}).get("elapsed")
    if elapsed:
        lines += ["", "timing (s): " + ", ".join(f"{k} {v:.2f}" for k, v in sorted(elapsed.items()))]
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# files


def _write(path, text):
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def write_tsv(path: str, columns, rows, title: str):
    """Plot-data file: a versioned comment header, a column line, then rows."""
    buf = io.StringIO()
    buf.write(f"# fockga-plot v{PLOT_VERSION}: {title}\n")
    w = csv.writer(buf, delimiter="\t", lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow(["" if v is None else (repr(float(v)) if isinstance(v, float) else v) for v in r])
    _write(path, buf.getvalue())


def read_tsv(path: str):
    with open(path) as fh:
        lines = [ln for ln in fh.read().splitlines() if not ln.startswith("#")]
    rows = list(csv.reader(lines, delimiter="\t"))
    return rows[0], rows[1:]


def write_report(report: RunReport, run_dir: str, formats=("text", "json")) -> dict:
    os.makedirs(run_dir, exist_ok=True)
    paths = {}
    if "json" in formats:
        paths["json"] = os.path.join(run_dir, "report.json")
        _write(paths["json"], report.to_json())
    if "text" in formats:
        paths["text"] = os.path.join(run_dir, "report.txt")
        _write(paths["text"], report.to_text())
    paths.update(write_plot_data(report.to_dict(), run_dir))
    return paths


def write_plot_data(d: dict, run_dir: str) -> dict:
    paths = {}
    dist = d["result"]["number_distribution"]
    p = os.path.join(run_dir, "number_distribution.tsv")
    write_tsv(p, ["n", "probability", "log10_probability"],
              [[n, v, math.log10(max(v, DIST_FLOOR))] for n, v in dist],
              "output number distribution")
    paths["number_distribution"] = p
    if d.get("trace"):
        p = os.path.join(run_dir, "trace.tsv")
        write_tsv(p, ["stage", "generation", "best_score", "mean_score", "failed", "evaluations"],
                  [[r["stage"], r["generation"], r["best_score"], r["mean_score"], r["failed"],
                    r["evaluations"]] for r in d["trace"]],
                  "per-generation best fitness")
        paths["trace"] = p
    return paths


def load_report(path: str) -> dict:
    with open(path) as fh:
        d = json.load(fh)
    RunReport.from_dict(d)
    return d


# --------------------------------------------------------------------------
# consolidation


def find_reports(root: str) -> list:
    found = []
    for dirpath, dirnames, filenames in os.walk(root):
        dirnames.sort()
        if "report.json" in filenames:
            found.append(os.path.join(dirpath, "report.json"))
    return sorted(found)


def _label(root, path):
    rel = os.path.relpath(os.path.dirname(path), root)
    return "." if rel == "." else rel


def consolidate(root: str) -> dict:
    """Comparison table over every report below ``root``; writes summary files."""
    paths = find_reports(root)
    if not paths:
        raise FileNotFoundError(f"no report.json found under {root}")
    rows = []
    for p in paths:
        d = load_report(p)
        res, fit, base = d["result"], d["fitness"], d.get("baseline", {})
        loss = d["config"].get("loss", {})
        row = {"label": _label(root, p), "fitness_kind": fit["kind"], "value": fit["value"],
               "herald_percent": res["herald_percent"], "nbar": res["nbar"],
               "gamma_out": loss.get("gamma_out", 0.0), "gamma_det": loss.get("gamma_det", 0.0),
               "converged": res["converged"], "config_hash": d["provenance"]["config_hash"]}
        if "squeezed_vacuum" in base:
            row["squeezed_vacuum"] = base["squeezed_vacuum"]
            row["ratio"] = (fit["value"] / base["squeezed_vacuum"]
                            if fit["value"] is not None else None)
        for k, r in base.get("references", {}).items():
            row[f"ref_{k}"] = r["value"]
            row[f"I_{k}"] = (improvement_factor(r["value"], fit["value"])
                             if fit["value"] is not None else None)
        rows.append(row)
    columns = ["label", "fitness_kind", "value", "herald_percent", "nbar", "gamma_out", "gamma_det"]
    extra = sorted({k for r in rows for k in r} - set(columns) - {"converged", "config_hash"})
    columns += extra + ["converged", "config_hash"]
    write_tsv(os.path.join(root, "summary.tsv"), columns,
              [[r.get(c) for c in columns] for r in rows], "consolidated run summary")
    summary = {"format": "fockga-summary", "version": REPORT_VERSION, "reports": rows}
    _write(os.path.join(root, "summary.json"), json.dumps(_clean(summary), sort_keys=True, indent=1) + "\n")
    _write(os.path.join(root, "summary.txt"), render_summary(rows, columns))
    lossy = [r for r in rows if "squeezed_vacuum" in r]
    if len({r["gamma_out"] for r in lossy}) > 1:
        lossy.sort(key=lambda r: r["gamma_out"])
        write_tsv(os.path.join(root, "loss_sweep.tsv"),
                  ["gamma", "transmission", "F_over_nbar", "squeezed_vacuum", "herald_percent", "nbar"],
                  [[r["gamma_out"], 1.0 - r["gamma_out"], r["value"], r["squeezed_vacuum"],
                    r["herald_percent"], r["nbar"]] for r in lossy],
                  "F/n-bar against transmission with the lossy squeezed-vacuum baseline")
    return summary


def render_summary(rows, columns) -> str:
    shown = [c for c in columns if c != "config_hash"]
    cells = [[_fmt(r.get(c), 5) for c in shown] for r in rows]
    widths = [max(len(c), *(len(x[i]) for x in cells)) for i, c in enumerate(shown)]
    out = ["  ".join(c.ljust(w) for c, w in zip(shown, widths))]
    out += ["  ".join(x.ljust(w) for x, w in zip(line, widths)) for line in cells]
    return "\n".join(out) + "\n"


def persisted_config(run_config) -> dict:
    """Resolved config without machine-local settings (run directory, workers)."""
    d = run_config.to_dict()
    d.pop("runtime")
    d["output"].pop("run_dir")
    return d


def runtime_block(run_config, elapsed: Optional[dict] = None) -> dict:
    return {"run_dir": run_config.output.run_dir, "workers": run_config.workers,
            "elapsed": dict(elapsed or {})}


def report_from_search(outcome, run_config, spec: FitnessSpec, references: Optional[dict] = None,
                       elapsed: Optional[dict] = None, final: Optional[SimulationResult] = None) -> RunReport:
    """Build the report of a finished search; ``final`` is the best plan's simulation."""
    best = outcome.best
    plan = decode(best.genome)
    if final is None:
        raise ValueError("the final simulation of the best plan is required")
    value = best.meta.get("value")
    result = simulation_summary(plan, final)
    result["best_failed"] = best.failed
    return RunReport(
        kind="search",
        provenance=provenance(run_config.config_hash(), run_config.seed),
        config=persisted_config(run_config),
        result=result,
        fitness=fitness_block(spec, value),
        baseline=baseline_block(spec, value, final.mean_photons, run_config.loss.gamma_out, references),
        genome=best.genome.to_list(),
        trace=outcome.trace,
        evaluations=outcome.evaluation_counts(),
        runtime=runtime_block(run_config, elapsed),
    )
