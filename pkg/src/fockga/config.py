"""YAML run configuration with named sections and line-precise validation.

Every key is checked against a schema; unknown keys, wrong types and out of
range values are reported as ``file:line:column: message``.  The resolved
configuration (every default filled in) round-trips through :meth:`RunConfig.to_dict`.
"""
from __future__ import annotations

import hashlib
import json
import math
import re
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any, Optional

import yaml

from .fitness import FitnessKind, FitnessSpec, Prior
from .search import CROSSOVER_KINDS, MUTATION_KINDS, GA_PRESETS, GaConfig, Limits
from .toolbox import (BOUND_NAMES, MEASUREMENT_KINDS, OPERATOR_KINDS, PRESETS, STATE_KINDS,
                      LossModel, ToolboxBounds, ToolboxSpec)

REPORT_FORMATS = ("text", "json")
SWEEP_TARGETS = ("both", "output", "detection")


class ConfigError(ValueError):
    def __init__(self, message, line=None, column=None, path=None):
        self.message = message
        self.line = line
        self.column = column
        self.path = path
        super().__init__(str(self))

    def __str__(self):
        where = self.path or "<config>"
        if self.line is not None:
            where += f":{self.line}"
            if self.column is not None:
                where += f":{self.column}"
        return f"{where}: {self.message}"


@dataclass(frozen=True)
class OutputConfig:
    run_dir: str = "runs/default"
    formats: tuple = REPORT_FORMATS


@dataclass(frozen=True)
class SweepConfig:
    gammas: tuple = ()
    apply_to: str = "both"

    def loss_for(self, gamma: float) -> LossModel:
        out = gamma if self.apply_to in ("both", "output") else 0.0
        det = gamma if self.apply_to in ("both", "detection") else 0.0
        return LossModel(out, det)


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    toolbox: ToolboxSpec = field(default_factory=lambda: PRESETS["tool1"])
    toolbox_preset: Optional[str] = "tool1"
    loss: LossModel = LossModel()
    fitness: FitnessSpec = FitnessSpec()
    search: GaConfig = GaConfig()
    search_preset: Optional[str] = None
    limits: Limits = Limits()
    output: OutputConfig = OutputConfig()
    sweep: SweepConfig = SweepConfig()
    workers: int = 1

    def to_dict(self) -> dict:
        """Fully resolved configuration; loading it back gives an equal config."""
        tb = self.toolbox.to_dict()
        if self.toolbox_preset:
            tb = {"preset": self.toolbox_preset, **tb}
        fit = self.fitness.to_dict()
        search = self.search.to_dict()
        search.pop("seed")
        if self.search_preset:
            search = {"preset": self.search_preset, **search}
        return {
            "seed": self.seed,
            "toolbox": tb,
            "loss": asdict(self.loss),
            "fitness": fit,
            "search": search,
            "limits": asdict(self.limits),
            "output": {"run_dir": self.output.run_dir, "formats": list(self.output.formats)},
            "sweep": {"gammas": list(self.sweep.gammas), "apply_to": self.sweep.apply_to},
            "runtime": {"workers": self.workers},
        }

    def config_hash(self) -> str:
        """Hash of everything that can change results (not run_dir or workers)."""
        d = self.to_dict()
        d.pop("runtime")
        d.pop("output")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]

    def with_loss(self, loss: LossModel) -> "RunConfig":
        return replace(self, loss=loss)


# --------------------------------------------------------------------------
# YAML -> python values with source marks

class _Loader(yaml.SafeLoader):
    """SafeLoader that also reads exponent floats without a dot (``1e-6``)."""


_Loader.yaml_implicit_resolvers = {k: list(v) for k, v in yaml.SafeLoader.yaml_implicit_resolvers.items()}
_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"""^[-+]?(?:[0-9][0-9_]*)(?:\.[0-9_]*)?[eE][-+]?[0-9]+$"""),
    list("-+0123456789"),
)
_LOADER_CLS = _Loader


class _Marks(dict):
    """path tuple -> (line, column) of the value; ('key',) + path for keys."""


def _mark(m):
    return (m.line + 1, m.column + 1)


def _to_python(node, path, marks, loader, src):
    marks[path] = _mark(node.start_mark)
    if isinstance(node, yaml.MappingNode):
        out = {}
        for knode, vnode in node.value:
            if not isinstance(knode, yaml.ScalarNode):
                raise ConfigError("mapping keys must be plain names", *_mark(knode.start_mark), src)
            key = loader.construct_object(knode)
            if not isinstance(key, str):
                key = str(key)
            if key in out:
                raise ConfigError(f"duplicate key {key!r}", *_mark(knode.start_mark), src)
            marks[("key",) + path + (key,)] = _mark(knode.start_mark)
            out[key] = _to_python(vnode, path + (key,), marks, loader, src)
        return out
    if isinstance(node, yaml.SequenceNode):
        return [_to_python(v, path + (i,), marks, loader, src) for i, v in enumerate(node.value)]
    return loader.construct_object(node)


def _compose(text: str, src):
    loader = _LOADER_CLS(text)
    try:
        node = loader.get_single_node()
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark or exc.context_mark
        line, col = _mark(mark) if mark else (None, None)
        raise ConfigError(f"YAML syntax error: {exc.problem or exc}", line, col, src) from None
    finally:
        loader.dispose()
    marks = _Marks()
    if node is None:
        return {}, marks
    if not isinstance(node, yaml.MappingNode):
        raise ConfigError("top level must be a mapping of sections", *_mark(node.start_mark), src)
    return _to_python(node, (), marks, _LOADER_CLS(""), src), marks


# --------------------------------------------------------------------------
# schema


class _V:
    """Validator context: raises ConfigError located at a value or key."""

    def __init__(self, marks, src):
        self.marks = marks
        self.src = src

    def fail(self, path, message, key=False):
        loc = self.marks.get((("key",) + path) if key else path)
        if loc is None:
            loc = self.marks.get(("key",) + path) or self.marks.get(path[:-1]) or (None, None)
        raise ConfigError(message, loc[0], loc[1], self.src)

    def name(self, path):
        return ".".join(str(p) for p in path)

    def section(self, data, path, allowed):
        if data is None:
            return {}
        if not isinstance(data, dict):
            self.fail(path, f"{self.name(path)} must be a mapping")
        for k in data:
            if k not in allowed:
                hint = ", ".join(sorted(allowed))
                self.fail(path + (k,), f"unknown key {self.name(path + (k,))!r} (allowed: {hint})", key=True)
        return data

    def integer(self, v, path, lo=None, hi=None):
        if isinstance(v, bool) or not isinstance(v, int):
            if isinstance(v, float) and v.is_integer():
                v = int(v)
            else:
                self.fail(path, f"{self.name(path)} must be an integer, got {v!r}")
        self._range(v, path, lo, hi)
        return v

    def real(self, v, path, lo=None, hi=None, allow_none=False, positive=False):
        if v is None and allow_none:
            return None
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            self.fail(path, f"{self.name(path)} must be a finite number, got {v!r}")
        v = float(v)
        if positive and not v > 0:
            self.fail(path, f"{self.name(path)} must be positive, got {v}")
        self._range(v, path, lo, hi)
        return v

    def _range(self, v, path, lo, hi):
        if lo is not None and v < lo:
            self.fail(path, f"{self.name(path)} = {v} is below the minimum {lo}")
        if hi is not None and v > hi:
            self.fail(path, f"{self.name(path)} = {v} is above the maximum {hi}")

    def boolean(self, v, path):
        if not isinstance(v, bool):
            self.fail(path, f"{self.name(path)} must be true or false, got {v!r}")
        return v

    def choice(self, v, path, choices):
        if v not in choices:
            self.fail(path, f"{self.name(path)} = {v!r} is not one of {list(choices)}")
        return v

    def seq(self, v, path, length=None):
        if not isinstance(v, list):
            self.fail(path, f"{self.name(path)} must be a list")
        if length is not None and len(v) != length:
            self.fail(path, f"{self.name(path)} needs exactly {length} entries, got {len(v)}")
        return v


_BOUND_TYPES = {f.name: f.type for f in fields(ToolboxBounds)}


def _toolbox(v: _V, data, path=("toolbox",)):
    d = v.section(data, path, {"preset", "states", "operators", "measurements", "bounds"})
    name = d.get("preset", "tool1")
    if name is not None:
        v.choice(name, path + ("preset",), sorted(PRESETS))
        base = PRESETS[name]
    else:
        base = ToolboxSpec()
    kinds = {}
    for cat, allowed in (("states", STATE_KINDS), ("operators", OPERATOR_KINDS),
                         ("measurements", MEASUREMENT_KINDS)):
        if cat in d:
            names = [k.value for k in allowed]
            vals = v.seq(d[cat], path + (cat,))
            if not vals:
                v.fail(path + (cat,), f"toolbox.{cat} must not be empty")
            for i, k in enumerate(vals):
                v.choice(k, path + (cat, i), names)
            if len(set(vals)) != len(vals):
                v.fail(path + (cat,), f"toolbox.{cat} has duplicate entries")
            kinds[cat] = tuple(vals)
    bounds = asdict(base.bounds)
    bd = v.section(d.get("bounds"), path + ("bounds",), set(BOUND_NAMES))
    for k, val in bd.items():
        p = path + ("bounds", k)
        bounds[k] = v.integer(val, p, lo=0) if _BOUND_TYPES[k] in ("int", int) else v.real(val, p, lo=0)
    try:
        tb = ToolboxSpec(kinds.get("states", base.states), kinds.get("operators", base.operators),
                         kinds.get("measurements", base.measurements), ToolboxBounds(**bounds))
    except ValueError as exc:
        v.fail(path, f"toolbox: {exc}")
    if name is not None and tb != base:
        name = None  # customized: no longer a named preset
    return tb, name


def _loss(v: _V, data, path=("loss",)):
    d = v.section(data, path, {"gamma_out", "gamma_det"})
    return LossModel(**{k: v.real(d[k], path + (k,), 0.0, 1.0) for k in d})


def _fitness(v: _V, data, path=("fitness",)):
    names = {f.name for f in fields(FitnessSpec)}
    d = v.section(data, path, names)
    kw: dict[str, Any] = {}
    for k, val in d.items():
        p = path + (k,)
        if k == "kind":
            kw[k] = v.choice(val, p, [x.value for x in FitnessKind])
        elif k == "prior":
            pd = v.section(val, p, {"center", "width"})
            kw[k] = Prior(**{kk: v.real(pd[kk], p + (kk,), positive=kk == "width") for kk in pd})
        elif k in ("mu", "grid_nodes", "mc_samples", "enum_cap"):
            kw[k] = v.integer(val, p, lo=2 if k == "grid_nodes" else 1)
        elif k == "mc_seed":
            kw[k] = v.integer(val, p, lo=0)
        elif k == "refine_grid":
            kw[k] = v.boolean(val, p)
        elif k == "correction":
            kw[k] = v.choice(val, p, ["fixed", "optimize"])
        elif k == "nbar_cap":
            kw[k] = v.real(val, p, lo=0.0, allow_none=True)
        elif k == "herald_min":
            kw[k] = v.real(val, p, lo=0.0, hi=1.0, allow_none=True)
        elif k in ("nbar_floor", "outcome_tol"):
            kw[k] = v.real(val, p, lo=0.0)
        else:
            kw[k] = v.real(val, p)
    return FitnessSpec(**kw)


def _search(v: _V, data, seed, path=("search",)):
    names = {f.name for f in fields(GaConfig)} - {"seed"}
    d = v.section(data, path, names | {"preset", "scale"})
    name = d.get("preset")
    if name is not None:
        v.choice(name, path + ("preset",), sorted(GA_PRESETS))
    scale = v.choice(d.get("scale", "desk"), path + ("scale",), ["desk", "paper"])
    base = GaConfig.from_preset(name, scale) if name else (
        GaConfig.from_preset("tool1", scale) if scale == "paper" else GaConfig())
    kw: dict[str, Any] = {}
    for k, val in d.items():
        p = path + (k,)
        if k in ("preset", "scale"):
            continue
        if k in ("populations", "generations"):
            kw[k] = tuple(v.integer(x, p + (i,), lo=0) for i, x in enumerate(v.seq(val, p, 3)))
        elif k == "truncations":
            kw[k] = tuple(v.integer(x, p + (i,), lo=1) for i, x in enumerate(v.seq(val, p, 2)))
        elif k == "crossover":
            kw[k] = v.choice(val, p, CROSSOVER_KINDS)
        elif k == "mutation":
            kw[k] = v.choice(val, p, MUTATION_KINDS)
        elif k == "crossover_fraction":
            kw[k] = v.real(val, p, 0.0, 1.0)
        elif k == "rate":
            kw[k] = v.real(val, p, 0.0, 1.0, positive=True)
        elif k == "power":
            kw[k] = v.real(val, p, lo=1.0)
        elif k in ("adaptive_rel_tol", "stall_tol"):
            kw[k] = v.real(val, p, lo=0.0)
        else:
            kw[k] = v.integer(val, p, lo=0)
    try:
        cfg = replace(base, seed=seed, **kw)
    except ValueError as exc:
        v.fail(path, f"search: {exc}")
    return cfg, name


def _limits(v: _V, data, path=("limits",)):
    d = v.section(data, path, {"t_max", "n_modes", "m_ops"})
    kw = {"t_max": 1, "n_modes": 2, "m_ops": 1}
    return Limits(**{k: v.integer(d[k], path + (k,), lo=kw[k]) for k in d})


def _output(v: _V, data, path=("output",)):
    d = v.section(data, path, {"run_dir", "formats"})
    kw = {}
    if "run_dir" in d:
        if not isinstance(d["run_dir"], str) or not d["run_dir"]:
            v.fail(path + ("run_dir",), "output.run_dir must be a non-empty path")
        kw["run_dir"] = d["run_dir"]
    if "formats" in d:
        vals = v.seq(d["formats"], path + ("formats",))
        for i, f in enumerate(vals):
            v.choice(f, path + ("formats", i), REPORT_FORMATS)
        if "json" not in vals:
            v.fail(path + ("formats",), "output.formats must include json (the machine-readable mirror)")
        kw["formats"] = tuple(vals)
    return OutputConfig(**kw)


def _sweep(v: _V, data, path=("sweep",)):
    d = v.section(data, path, {"gammas", "apply_to"})
    kw = {}
    if "gammas" in d:
        kw["gammas"] = tuple(v.real(g, path + ("gammas", i), 0.0, 1.0)
                             for i, g in enumerate(v.seq(d["gammas"], path + ("gammas",))))
    if "apply_to" in d:
        kw["apply_to"] = v.choice(d["apply_to"], path + ("apply_to",), SWEEP_TARGETS)
    return SweepConfig(**kw)


SECTIONS = ("seed", "toolbox", "loss", "fitness", "search", "limits", "output", "sweep", "runtime")


def config_from_dict(data: dict, marks=None, src=None) -> RunConfig:
    v = _V(marks or _Marks(), src)
    d = v.section(data, (), set(SECTIONS))
    seed = v.integer(d.get("seed", 0), ("seed",), lo=0)
    toolbox, tb_name = _toolbox(v, d.get("toolbox") or {})
    search, ga_name = _search(v, d.get("search"), seed)
    rt = v.section(d.get("runtime"), ("runtime",), {"workers"})
    workers = v.integer(rt.get("workers", 1), ("runtime", "workers"), lo=1)
    limits = _limits(v, d.get("limits"))
    if limits.t_max < max(search.truncations):
        v.fail(("limits", "t_max"), f"limits.t_max = {limits.t_max} is below the stage truncations "
                                     f"{list(search.truncations)}")
    return RunConfig(seed=seed, toolbox=toolbox, toolbox_preset=tb_name, loss=_loss(v, d.get("loss")),
                     fitness=_fitness(v, d.get("fitness")), search=search, search_preset=ga_name,
                     limits=limits, output=_output(v, d.get("output")), sweep=_sweep(v, d.get("sweep")),
                     workers=workers)


def parse_config(text: str, path: Optional[str] = None) -> RunConfig:
    data, marks = _compose(text, path)
    return config_from_dict(data, marks, path)


def load_config(path: str) -> RunConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", path=path) from None
    return parse_config(text, path)


def dump_config(config: RunConfig) -> str:
    return yaml.safe_dump(config.to_dict(), sort_keys=False, default_flow_style=None)
