"""Genomes, experiment plans and the heralded-circuit simulation pipeline.

A plan prepares N modes, applies up to m operators, heralds N-1 modes and
keeps the last mode as the output.  A genome is one float vector; integer
genes (element choices, wirings, herald outcomes) are flagged in the layout
and real genes live in [0, 1] and are mapped onto each decoded element's
parameter range.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import fock
from .fock import HeraldImpossible, KetState, MixedState, TruncationInsufficient, as_truncation
from .toolbox import (
    TWO_PI, Kind, LossModel, ToolboxSpec, apply_beamsplitter, apply_displacement, apply_loss,
    apply_phase, apply_squeeze1, apply_squeeze2, arity, make_coherent, make_fock,
    make_squeezed_vac, make_two_mode_squeezed_vac, measurement_element, tensor_product,
)

LEAKAGE_THRESHOLD = 1e-6


# --------------------------------------------------------------------------
# plans


@dataclass(frozen=True)
class Element:
    """One placed element; ``modes`` are 0-based."""

    kind: Kind
    modes: tuple = ()
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        object.__setattr__(self, "modes", tuple(int(m) for m in self.modes))
        object.__setattr__(self, "params", dict(self.params))

    def complex_param(self) -> complex:
        return self.params["mag"] * np.exp(1j * self.params["phase"])

    def isclose(self, other: "Element", atol=1e-9) -> bool:
        if self.kind != other.kind or self.modes != other.modes:
            return False
        if set(self.params) != set(other.params):
            return False
        for k, v in self.params.items():
            w = other.params[k]
            if k in ("phase", "angle"):
                diff = abs((v - w + math.pi) % TWO_PI - math.pi)
                if diff > atol and not (k == "phase" and self.params.get("mag", 1.0) < atol):
                    return False
            elif abs(v - w) > atol:
                return False
        return True


@dataclass(frozen=True)
class ExperimentPlan:
    n_modes: int
    inputs: tuple
    ops: tuple
    heralds: tuple

    def __post_init__(self):
        object.__setattr__(self, "inputs", tuple(self.inputs))
        object.__setattr__(self, "ops", tuple(self.ops))
        object.__setattr__(self, "heralds", tuple(self.heralds))
        self.validate()

    def validate(self):
        n = self.n_modes
        if n < 1:
            raise ValueError("a plan needs at least one mode")
        covered = [m for e in self.inputs for m in e.modes]
        if sorted(covered) != list(range(n)):
            raise ValueError(f"inputs must cover modes 0..{n - 1} exactly once, got {covered}")
        for e in self.inputs:
            if e.kind not in (Kind.FOCK, Kind.COHERENT, Kind.SQUEEZED_VAC1, Kind.SQUEEZED_VAC2):
                raise ValueError(f"{e.kind} is not an input state")
            if len(e.modes) != arity(e.kind):
                raise ValueError(f"{e.kind} acts on {arity(e.kind)} mode(s)")
        for e in self.ops:
            want = 0 if e.kind is Kind.IDENTITY else arity(e.kind)
            if len(e.modes) != want or len(set(e.modes)) != want:
                raise ValueError(f"{e.kind} needs {want} distinct mode(s), got {e.modes}")
            if any(not 0 <= m < n for m in e.modes):
                raise ValueError(f"operator mode out of range in {e}")
        measured = [e.modes[0] for e in self.heralds]
        if len(measured) != n - 1 or len(set(measured)) != n - 1:
            raise ValueError(f"need heralds on {n - 1} distinct modes, got {measured}")
        if any(not 0 <= m < n for m in measured):
            raise ValueError("herald mode out of range")

    @property
    def output_mode(self) -> int:
        measured = {e.modes[0] for e in self.heralds}
        return next(m for m in range(self.n_modes) if m not in measured)

    def active_ops(self):
        return tuple(e for e in self.ops if e.kind is not Kind.IDENTITY)

    def isclose(self, other: "ExperimentPlan", atol=1e-9) -> bool:
        if self.n_modes != other.n_modes:
            return False
        pairs = [(self.inputs, other.inputs), (self.ops, other.ops), (self.heralds, other.heralds)]
        return all(len(a) == len(b) and all(x.isclose(y, atol) for x, y in zip(a, b))
                   for a, b in pairs)


# --------------------------------------------------------------------------
# genome layout


@dataclass(frozen=True)
class Gene:
    name: str
    is_int: bool
    lo: float
    hi: float


@dataclass(frozen=True, eq=False)
class GenomeLayout:
    toolbox: ToolboxSpec
    n_modes: int
    m_ops: int
    genes: tuple
    input_slots: tuple
    op_slots: tuple
    herald_slots: tuple

    @property
    def size(self) -> int:
        return len(self.genes)

    @property
    def lo(self) -> np.ndarray:
        return np.array([g.lo for g in self.genes], dtype=float)

    @property
    def hi(self) -> np.ndarray:
        return np.array([g.hi for g in self.genes], dtype=float)

    @property
    def is_int(self) -> np.ndarray:
        return np.array([g.is_int for g in self.genes], dtype=bool)

    def signature(self) -> tuple:
        return tuple((g.name, g.is_int, g.lo, g.hi) for g in self.genes)

    def pairs(self):
        n = self.n_modes
        return [(i, j) for i in range(n) for j in range(n) if i != j]

    def outcome_range(self, kind: Kind):
        spec = self.toolbox.element_spec(kind)
        return spec.integer_bounds.get("n", (0, 0))


def genome_layout(toolbox: ToolboxSpec, n_modes: int, m_ops: int) -> GenomeLayout:
    """Fixed gene layout for a toolbox, mode count and operator count."""
    if n_modes < 2:
        raise ValueError("n_modes must be >= 2")
    if m_ops < 1:
        raise ValueError("m_ops must be >= 1")
    for name in ("states", "operators", "measurements"):
        if not getattr(toolbox, name):
            raise ValueError(f"toolbox category {name!r} is empty")
    if n_modes % 2 and all(arity(k) == 2 for k in toolbox.states):
        raise ValueError("an odd number of modes needs a single-mode input state")
    genes = []

    def add(name, is_int, lo, hi):
        genes.append(Gene(name, is_int, float(lo), float(hi)))
        return len(genes) - 1

    fock_hi = toolbox.bounds.fock_max if Kind.FOCK in toolbox.states else 0
    inputs = []
    for p in range(n_modes):
        inputs.append({
            "kind": add(f"input{p}.kind", True, 0, len(toolbox.states) - 1),
            "n": add(f"input{p}.n", True, 0, fock_hi),
            "a": add(f"input{p}.a", False, 0, 1),
            "b": add(f"input{p}.b", False, 0, 1),
        })
    n_pairs = n_modes * (n_modes - 1)
    ops = []
    for k in range(m_ops):
        ops.append({
            "kind": add(f"op{k}.kind", True, 0, len(toolbox.operators) - 1),
            "wiring": add(f"op{k}.wiring", True, 0, n_pairs - 1),
            "a": add(f"op{k}.a", False, 0, 1),
            "b": add(f"op{k}.b", False, 0, 1),
        })
    ranges = [toolbox.element_spec(k).integer_bounds.get("n", (0, 0)) for k in toolbox.measurements]
    out_lo = min(r[0] for r in ranges)
    out_hi = max(r[1] for r in ranges)
    heralds = []
    for h in range(n_modes - 1):
        heralds.append({
            "kind": add(f"herald{h}.kind", True, 0, len(toolbox.measurements) - 1),
            "n": add(f"herald{h}.n", True, out_lo, out_hi),
            "a": add(f"herald{h}.a", False, 0, 1),
            "b": add(f"herald{h}.b", False, 0, 1),
        })
    return GenomeLayout(toolbox, n_modes, m_ops, tuple(genes), tuple(inputs), tuple(ops),
                        tuple(heralds))


@dataclass(frozen=True, eq=False)
class Genome:
    values: np.ndarray
    layout: GenomeLayout

    def __post_init__(self):
        v = np.array(self.values, dtype=float, copy=True)
        if v.shape != (self.layout.size,):
            raise ValueError(f"genome has {v.size} genes, layout needs {self.layout.size}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def int_genes(self) -> np.ndarray:
        return self.values[self.layout.is_int].astype(np.int64)

    @property
    def real_genes(self) -> np.ndarray:
        return self.values[~self.layout.is_int]

    def check_bounds(self):
        lay = self.layout
        bad = np.flatnonzero((self.values < lay.lo) | (self.values > lay.hi)
                             | (lay.is_int & (self.values != np.round(self.values)))
                             | ~np.isfinite(self.values))
        if bad.size:
            i = int(bad[0])
            g = lay.genes[i]
            raise ValueError(f"gene {i} ({g.name}) = {self.values[i]!r} outside [{g.lo}, {g.hi}]"
                             + (" or not an integer" if g.is_int else ""))

    def __eq__(self, other):
        return (isinstance(other, Genome) and self.layout.signature() == other.layout.signature()
                and np.array_equal(self.values, other.values))

    def to_list(self):
        return [int(v) if i else float(v) for v, i in zip(self.values, self.layout.is_int)]


def _wrap_int(value, lo, hi):
    """Map an integer onto lo..hi, identity inside the range, modulo outside."""
    size = hi - lo + 1
    return lo + (int(value) - lo) % size


def _scale(x, lo, hi):
    return lo + x * (hi - lo)


def _unscale(v, lo, hi, name):
    if hi == lo:
        return 0.0
    x = (v - lo) / (hi - lo)
    if x < -1e-9 or x > 1 + 1e-9:
        raise ValueError(f"{name} = {v} outside the toolbox bound [{lo}, {hi}]")
    return min(max(x, 0.0), 1.0)


def _decode_params(spec, ints, a, b):
    """Real/integer parameters of a decoded element from its slot genes."""
    params = {}
    for name, (lo, hi) in spec.integer_bounds.items():
        params[name] = _wrap_int(ints[name], lo, hi)
    real = spec.param_bounds
    if "mag" in real:
        params["mag"] = _scale(a, *real["mag"])
        params["phase"] = _scale(b, *real["phase"])
    elif "transmissivity" in real:
        params["transmissivity"] = _scale(a, *real["transmissivity"])
    elif "x" in real:
        params["x"] = _scale(a, *real["x"])
        params["angle"] = _scale(b, *real["angle"])
    elif "phase" in real:
        params["phase"] = _scale(b, *real["phase"])
    return params


def decode(genome: Genome) -> ExperimentPlan:
    """Total map from in-bounds genomes to valid plans."""
    genome.check_bounds()
    lay = genome.layout
    tb = lay.toolbox
    g = genome.values
    n = lay.n_modes
    one_mode_states = [k for k in tb.states if arity(k) == 1]

    inputs = []
    p = 0
    while p < n:
        slot = lay.input_slots[p]
        kg = int(g[slot["kind"]])
        kind = tb.states[kg % len(tb.states)]
        if arity(kind) == 2 and p == n - 1:
            kind = one_mode_states[kg % len(one_mode_states)]
        spec = tb.element_spec(kind)
        params = _decode_params(spec, {"n": g[slot["n"]]}, g[slot["a"]], g[slot["b"]])
        modes = (p, p + 1) if arity(kind) == 2 else (p,)
        inputs.append(Element(kind, modes, params))
        p += len(modes)

    pairs = lay.pairs()
    ops = []
    for slot in lay.op_slots:
        kind = tb.operators[int(g[slot["kind"]]) % len(tb.operators)]
        if kind is Kind.IDENTITY:
            ops.append(Element(kind))
            continue
        w = int(g[slot["wiring"]])
        modes = pairs[w % len(pairs)] if arity(kind) == 2 else (w % n,)
        params = _decode_params(tb.element_spec(kind), {}, g[slot["a"]], g[slot["b"]])
        ops.append(Element(kind, modes, params))

    heralds = []
    for h, slot in enumerate(lay.herald_slots):
        kind = tb.measurements[int(g[slot["kind"]]) % len(tb.measurements)]
        params = _decode_params(tb.element_spec(kind), {"n": g[slot["n"]]}, g[slot["a"]], g[slot["b"]])
        if kind is Kind.MULTIPLEX:
            params["detectors"] = tb.bounds.multiplex_detectors
        heralds.append(Element(kind, (h,), params))
    return ExperimentPlan(n, tuple(inputs), tuple(ops), tuple(heralds))


def encode(plan: ExperimentPlan, layout: GenomeLayout) -> Genome:
    """Inverse of :func:`decode` for plans expressible in ``layout``."""
    tb = layout.toolbox
    if plan.n_modes != layout.n_modes:
        raise ValueError("plan and layout have different mode counts")
    if len(plan.ops) > layout.m_ops:
        raise ValueError(f"plan has {len(plan.ops)} operators, layout allows {layout.m_ops}")
    g = np.zeros(layout.size)

    def index_of(kinds, kind, what):
        try:
            return kinds.index(kind)
        except ValueError:
            raise ValueError(f"{kind} is not in the toolbox {what}") from None

    def put_params(slot, spec, params):
        for name, (lo, hi) in spec.integer_bounds.items():
            v = int(params[name])
            if not lo <= v <= hi:
                raise ValueError(f"{spec.kind} {name} = {v} outside [{lo}, {hi}]")
            g[slot["n"]] = v
        real = spec.param_bounds
        if "mag" in real:
            g[slot["a"]] = _unscale(params["mag"], *real["mag"], "magnitude")
            g[slot["b"]] = (params["phase"] % TWO_PI) / TWO_PI
        elif "transmissivity" in real:
            g[slot["a"]] = _unscale(params["transmissivity"], *real["transmissivity"], "transmissivity")
        elif "x" in real:
            g[slot["a"]] = _unscale(params["x"], *real["x"], "homodyne x")
            g[slot["b"]] = (params["angle"] % TWO_PI) / TWO_PI
        elif "phase" in real:
            g[slot["b"]] = (params["phase"] % TWO_PI) / TWO_PI

    for e in plan.inputs:
        p = e.modes[0]
        if len(e.modes) == 2 and e.modes[1] != p + 1:
            raise ValueError("two-mode inputs must act on neighbouring modes")
        slot = layout.input_slots[p]
        g[slot["kind"]] = index_of(tb.states, e.kind, "states")
        put_params(slot, tb.element_spec(e.kind), e.params)

    pairs = layout.pairs()
    ops = list(plan.ops) + [Element(Kind.IDENTITY)] * (layout.m_ops - len(plan.ops))
    for slot, e in zip(layout.op_slots, ops):
        g[slot["kind"]] = index_of(tb.operators, e.kind, "operators")
        if e.kind is Kind.IDENTITY:
            continue
        g[slot["wiring"]] = pairs.index(e.modes) if len(e.modes) == 2 else e.modes[0]
        put_params(slot, tb.element_spec(e.kind), e.params)

    for h, e in enumerate(sorted(plan.heralds, key=lambda x: x.modes[0])):
        if e.modes != (h,):
            raise ValueError("genomes herald modes 1..N-1 and keep the last mode as output")
        slot = layout.herald_slots[h]
        g[slot["kind"]] = index_of(tb.measurements, e.kind, "measurements")
        spec = tb.element_spec(e.kind)
        if "n" not in spec.integer_bounds:
            g[slot["n"]] = layout.genes[slot["n"]].lo
        put_params(slot, spec, e.params)
    genome = Genome(g, layout)
    genome.check_bounds()
    return genome


def random_genome(layout: GenomeLayout, rng: np.random.Generator) -> Genome:
    """Uniform draw within the gene bounds."""
    lo, hi, is_int = layout.lo, layout.hi, layout.is_int
    u = rng.random(layout.size)
    vals = lo + u * (hi - lo)
    vals[is_int] = np.floor(lo[is_int] + u[is_int] * (hi[is_int] - lo[is_int] + 1))
    vals = np.minimum(vals, hi)
    return Genome(vals, layout)


# --------------------------------------------------------------------------
# simulation


@dataclass(frozen=True, eq=False)
class SimulationResult:
    output_state: object
    herald_probability: float
    mean_photons: float
    truncation_used: int
    leakage: float
    converged: bool
    herald_is_density: bool = False
    simulations: int = 1
    probe_value: Optional[float] = None

    @property
    def is_pure(self) -> bool:
        return isinstance(self.output_state, KetState)

    def purity(self) -> float:
        if isinstance(self.output_state, KetState):
            return 1.0
        return self.output_state.purity()

    def number_distribution(self) -> np.ndarray:
        return np.clip(self.output_state.probabilities(), 0.0, None)


def _input_state(e: Element, t, options):
    if e.kind is Kind.FOCK:
        return make_fock(int(e.params["n"]), t, n_limit=None)
    z = (e.params["mag"], e.params["phase"])
    if e.kind is Kind.COHERENT:
        return make_coherent(z, t, bound=None)
    if e.kind is Kind.SQUEEZED_VAC1:
        return make_squeezed_vac(z, t, bound=None, **options)
    if e.kind is Kind.SQUEEZED_VAC2:
        return make_two_mode_squeezed_vac(z, t, bound=None, **options)
    raise ValueError(f"{e.kind} is not an input state")


def prepare(plan: ExperimentPlan, truncation, *, leakage_threshold=None, **options) -> KetState:
    """Input block followed by all operators (before heralding)."""
    t = as_truncation(truncation)
    state = tensor_product(*[_input_state(e, t, options) for e in plan.inputs])
    if leakage_threshold is not None and state.leakage > leakage_threshold:
        raise TruncationInsufficient(state.leakage, leakage_threshold)
    kw = dict(options, leakage_threshold=leakage_threshold)
    for e in plan.ops:
        k = e.kind
        if k is Kind.IDENTITY:
            continue
        if k is Kind.DISPLACEMENT:
            state = apply_displacement(state, (e.params["mag"], e.params["phase"]), e.modes[0], **kw)
        elif k is Kind.SQUEEZE1:
            state = apply_squeeze1(state, (e.params["mag"], e.params["phase"]), e.modes[0], **kw)
        elif k is Kind.SQUEEZE2:
            state = apply_squeeze2(state, (e.params["mag"], e.params["phase"]), e.modes, **kw)
        elif k is Kind.PHASE_SHIFT:
            state = apply_phase(state, e.params["phase"], e.modes[0])
        elif k is Kind.BEAM_SPLITTER:
            state = apply_beamsplitter(state, e.params["transmissivity"], e.modes, **options)
        else:
            raise ValueError(f"{k} is not an operator")
    return state


def simulate(plan: ExperimentPlan, truncation, loss: LossModel = LossModel(), *,
             leakage_threshold: Optional[float] = None, herald_floor: float = fock.DEFAULT_HERALD_FLOOR,
             homodyne_bin: Optional[float] = None, **options) -> SimulationResult:
    """Run the plan at a fixed truncation.

    ``converged`` reports whether the boundary leakage stayed below
    ``LEAKAGE_THRESHOLD``; with ``leakage_threshold`` set, exceeding it raises
    :class:`TruncationInsufficient` instead.
    """
    t = as_truncation(truncation)
    state = prepare(plan, t, leakage_threshold=leakage_threshold, **options)
    alive = list(range(plan.n_modes))
    prob = 1.0
    density = False
    for e in plan.heralds:
        elem = measurement_element(e.kind, int(e.params.get("n", 0)), e.params, loss, t)
        pos = alive.index(e.modes[0])
        state, p = fock.herald_project(state, elem, [pos], floor=herald_floor)
        prob *= p
        alive.remove(e.modes[0])
        if e.kind is Kind.HOMODYNE:
            if homodyne_bin is None:
                density = True
            else:
                prob *= homodyne_bin
    if prob < herald_floor:
        raise HeraldImpossible(prob, herald_floor)
    if loss.gamma_out > 0:
        state = apply_loss(state, loss.gamma_out)
    if isinstance(state, MixedState):
        state = state.normalize()
    nbar = fock.mean_photon_number(state)
    leak = float(state.leakage)
    return SimulationResult(state, float(prob), nbar, t.t_max, leak,
                            converged=leak <= LEAKAGE_THRESHOLD, herald_is_density=density)


def truncation_schedule(t_start: int, t_step: int, t_max: int):
    if t_start > t_max:
        raise ValueError(f"t_start {t_start} exceeds t_max {t_max}")
    if t_step < 1:
        raise ValueError("t_step must be >= 1")
    ts = list(range(t_start, t_max + 1, t_step))
    if ts[-1] != t_max:
        ts.append(t_max)
    return ts


def simulate_adaptive(plan: ExperimentPlan, t_start: int = 20, t_step: int = 10, t_max: int = 150,
                      loss: LossModel = LossModel(), fitness_probe: Optional[Callable] = None, *,
                      rel_tol: float = 1e-3, leakage_threshold: float = LEAKAGE_THRESHOLD,
                      **options) -> SimulationResult:
    """Raise the truncation until n-bar and the probe value settle.

    Converged means consecutive truncations agree to ``rel_tol`` in both
    quantities and the boundary leakage is below ``leakage_threshold``.
    """
    prev = None
    count = 0
    res = None
    for t in truncation_schedule(t_start, t_step, t_max):
        res = simulate(plan, t, loss, **options)
        count += 1
        f = float(fitness_probe(res)) if fitness_probe is not None else 0.0
        if prev is not None:
            dn = abs(res.mean_photons - prev[0]) / max(res.mean_photons, 1.0)
            if math.isfinite(f) and math.isfinite(prev[1]):
                df = abs(f - prev[1]) / max(abs(f), 1.0)
            else:
                df = 0.0 if f == prev[1] else math.inf
            if dn <= rel_tol and df <= rel_tol and res.leakage <= leakage_threshold:
                return _with(res, converged=True, simulations=count, probe_value=f)
        prev = (res.mean_photons, f)
    return _with(res, converged=False, simulations=count, probe_value=prev[1] if prev else None)


def _with(res: SimulationResult, **changes) -> SimulationResult:
    data = {k: getattr(res, k) for k in res.__dataclass_fields__}
    data.update(changes)
    return SimulationResult(**data)
