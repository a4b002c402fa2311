"""Three-stage genetic search over circuit genomes.

Stage 1 samples random genomes at a low truncation and keeps the best;
stage 2 runs a genetic algorithm at a fixed medium truncation; stage 3 runs
it again with adaptive-truncation evaluation.  Every random draw is derived
from the master seed plus (stage, generation, slot) counters, so results do
not depend on the number of worker processes or on evaluation order.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .circuit import Genome, GenomeLayout, decode, genome_layout, simulate, simulate_adaptive
from .fitness import FitnessSpec, evaluate_result
from .toolbox import LossModel, ToolboxSpec

log = logging.getLogger(__name__)

SENTINEL = -math.inf
CHECKPOINT_VERSION = 1
CROSSOVER_KINDS = ("scattered", "single_point", "two_point")
MUTATION_KINDS = ("power_mutation", "power_selection")

_DESK_POPS = (10_000, 1_000, 200)
_PAPER_POPS = (10_000_000, 100_000, 20_000)


@dataclass(frozen=True)
class GaConfig:
    populations: tuple = _DESK_POPS
    generations: tuple = (1, 10, 40)
    crossover: str = "scattered"
    crossover_fraction: float = 0.3
    tournament_size: int = 8
    elite_count: int = 10
    mutation: str = "power_mutation"
    power: float = 10.0
    rate: float = 1.0
    truncations: tuple = (30, 80)
    adaptive_start: int = 20
    adaptive_step: int = 10
    adaptive_rel_tol: float = 1e-3
    stall_generations: int = 15
    stall_tol: float = 1e-6
    stage1_chunk: int = 10_000
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "populations", tuple(int(p) for p in self.populations))
        object.__setattr__(self, "generations", tuple(int(g) for g in self.generations))
        object.__setattr__(self, "truncations", tuple(int(t) for t in self.truncations))
        for name in ("crossover_fraction", "power", "rate", "adaptive_rel_tol", "stall_tol"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if len(self.populations) != 3 or len(self.generations) != 3:
            raise ValueError("populations and generations need one entry per stage (3)")
        if len(self.truncations) != 2:
            raise ValueError("truncations lists the fixed stage-1 and stage-2 values")
        if self.crossover not in CROSSOVER_KINDS:
            raise ValueError(f"crossover must be one of {CROSSOVER_KINDS}")
        if self.mutation not in MUTATION_KINDS:
            raise ValueError(f"mutation must be one of {MUTATION_KINDS}")
        if not 0.0 <= self.crossover_fraction <= 1.0:
            raise ValueError("crossover_fraction must lie in [0, 1]")
        if not 0.0 < self.rate <= 1.0:
            raise ValueError("rate must lie in (0, 1]")
        if not self.power >= 1.0:
            raise ValueError("power must be >= 1")
        if self.elite_count < 0 or self.tournament_size < 1:
            raise ValueError("elite_count must be >= 0 and tournament_size >= 1")
        if self.populations[0] < self.populations[1]:
            raise ValueError("stage-1 population must be at least the stage-2 population")
        for p in self.populations[1:]:
            if p < self.elite_count + 2:
                raise ValueError(f"GA population {p} must be >= elite_count + 2")
        if any(g < 0 for g in self.generations):
            raise ValueError("generations must be non-negative")
        if self.stall_generations < 1 or self.stage1_chunk < 1:
            raise ValueError("stall_generations and stage1_chunk must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("populations", "generations", "truncations"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_preset(cls, name: str, scale: str = "desk", **overrides) -> "GaConfig":
        try:
            base = GA_PRESETS[name]
        except KeyError:
            raise ValueError(f"unknown GA preset {name!r}; choose from {sorted(GA_PRESETS)}") from None
        overrides.setdefault("populations", {"desk": _DESK_POPS, "paper": _PAPER_POPS}[scale])
        return replace(base, **overrides)


GA_PRESETS = {
    "tool1": GaConfig(crossover="scattered", mutation="power_mutation", power=10),
    "tool2": GaConfig(crossover="single_point", mutation="power_selection", power=4, rate=0.2),
    "full": GaConfig(crossover="two_point", mutation="power_mutation", power=10),
    "no_pnrd": GaConfig(crossover="two_point", mutation="power_mutation", power=10),
    "loss0.05": GaConfig(crossover="single_point", mutation="power_selection", power=10, rate=0.5),
    "loss0.1": GaConfig(crossover="two_point", mutation="power_selection", power=20, rate=0.1),
    "loss0.2": GaConfig(crossover="scattered", mutation="power_mutation", power=5),
    "loss0.3": GaConfig(crossover="scattered", mutation="power_mutation", power=5),
    "bmse_mu1": GaConfig(crossover="scattered", mutation="power_mutation", power=10),
}


@dataclass
class Individual:
    genome: Genome
    fitness: float = SENTINEL
    meta: dict = field(default_factory=dict)

    @property
    def failed(self) -> bool:
        return self.fitness == SENTINEL


# --------------------------------------------------------------------------
# random streams


def stream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for a (seed, key...) counter."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, key)]))


_REPRODUCE = 0
_EVALUATE = 1
_SAMPLE = 2


# --------------------------------------------------------------------------
# operators


def random_population(layout: GenomeLayout, rng: np.random.Generator, n: int) -> np.ndarray:
    """``n`` genomes drawn uniformly within bounds (integers uniform over their range)."""
    lo, hi, is_int = layout.lo, layout.hi, layout.is_int
    u = rng.random((n, layout.size))
    vals = lo + u * (hi - lo)
    ints = np.floor(lo + u * (hi - lo + 1))
    vals = np.where(is_int, ints, vals)
    return np.minimum(vals, hi)


def tournament_select(population: Sequence[Individual], k: int, rng: np.random.Generator) -> Individual:
    """Best of ``k`` uniform draws (with replacement); ties go to the earlier draw."""
    if not population:
        raise ValueError("cannot select from an empty population")
    if not 1 <= k <= len(population):
        raise ValueError(f"tournament size {k} must lie in 1..{len(population)}")
    idx = rng.integers(0, len(population), size=k)
    best = idx[0]
    for i in idx[1:]:
        if population[i].fitness > population[best].fitness:
            best = i
    return population[best]


def crossover(parent_a: Genome, parent_b: Genome, kind: str, rng: np.random.Generator,
              cuts: Optional[Sequence[int]] = None) -> Genome:
    """Child whose genes each come from ``parent_a`` or ``parent_b``.

    ``cuts`` fixes the cut point(s) for the single/two-point kinds; genes with
    index < cut come from ``a`` (single point), and the segment between the two
    cuts comes from ``b`` (two point).
    """
    if parent_a.layout.signature() != parent_b.layout.signature():
        raise ValueError("parents have different genome layouts")
    a, b = parent_a.values, parent_b.values
    n = a.size
    if kind == "scattered":
        mask = rng.random(n) < 0.5
        child = np.where(mask, a, b)
    elif kind == "single_point":
        cut = int(cuts[0]) if cuts is not None else int(rng.integers(1, n)) if n > 1 else 0
        child = np.concatenate([a[:cut], b[cut:]])
    elif kind == "two_point":
        if cuts is not None:
            c1, c2 = sorted(int(c) for c in cuts)
        else:
            c1, c2 = np.sort(rng.integers(0, n + 1, size=2))
        child = a.copy()
        child[c1:c2] = b[c1:c2]
    else:
        raise ValueError(f"unknown crossover kind {kind!r}")
    return Genome(child, parent_a.layout)


def _power_step(x, lo, hi, power, rng):
    u = rng.random(x.shape)
    r = rng.random(x.shape)
    s = u ** power
    span = hi - lo
    t = np.divide(x - lo, span, out=np.zeros_like(x), where=span > 0)
    down = r < t
    return np.where(down, x - s * (x - lo), x + s * (hi - x))


def _mutate(genome: Genome, power: float, rng: np.random.Generator, mask=None) -> Genome:
    lay = genome.layout
    lo, hi, is_int = lay.lo, lay.hi, lay.is_int
    # integers move in the relaxation [lo - 1/2, hi + 1/2] and round half down
    rlo = np.where(is_int, lo - 0.5, lo)
    rhi = np.where(is_int, hi + 0.5, hi)
    x = genome.values
    y = _power_step(x, rlo, rhi, power, rng)
    y = np.where(is_int, np.clip(np.ceil(y - 0.5), lo, hi), np.clip(y, lo, hi))
    if mask is not None:
        y = np.where(mask, y, x)
    return Genome(y, lay)


def mutate_power(genome: Genome, power: float, rng: np.random.Generator) -> Genome:
    """Move every gene toward one of its bounds by a fraction s = u**power of
    the room available on that side; the side is lo with probability equal to
    the gene's relative position.  power=1 is a uniform redraw over the range."""
    if not power >= 1:
        raise ValueError("power must be >= 1")
    return _mutate(genome, power, rng)


def mutate_power_selection(genome: Genome, power: float, rate: float,
                           rng: np.random.Generator) -> Genome:
    """Power mutation applied to each gene independently with probability ``rate``."""
    if not power >= 1:
        raise ValueError("power must be >= 1")
    if not 0 < rate <= 1:
        raise ValueError("rate must lie in (0, 1]")
    mask = rng.random(genome.layout.size) < rate
    return _mutate(genome, power, rng, mask)


def mutate(genome: Genome, config: GaConfig, rng: np.random.Generator) -> Genome:
    if config.mutation == "power_mutation":
        return mutate_power(genome, config.power, rng)
    return mutate_power_selection(genome, config.power, config.rate, rng)


# --------------------------------------------------------------------------
# evaluation


@dataclass(frozen=True)
class Evaluator:
    """Picklable fitness evaluation of raw genome values.

    ``truncation`` set: fixed-truncation simulation.  ``None``: adaptive
    truncation up to ``t_max``; runs that do not settle get the sentinel.
    """

    layout: GenomeLayout
    spec: FitnessSpec
    loss: LossModel = LossModel()
    truncation: Optional[int] = 30
    t_max: int = 150
    t_start: int = 20
    t_step: int = 10
    rel_tol: float = 1e-3
    seed: int = 0

    def rng_for(self, key):
        return stream(self.seed, _EVALUATE, *key)

    def __call__(self, job):
        values, key = job
        meta = {"truncation": self.truncation}
        try:
            plan = decode(Genome(values, self.layout))
            rng = self.rng_for(key)
            if self.truncation is not None:
                res = simulate(plan, self.truncation, self.loss)
                value = evaluate_result(res, self.spec, rng).value
                sims = 1
            else:
                def probe(r):
                    return evaluate_result(r, self.spec, self.rng_for(key)).value
                res = simulate_adaptive(plan, min(self.t_start, self.t_max), self.t_step, self.t_max,
                                        self.loss, fitness_probe=probe, rel_tol=self.rel_tol)
                value = res.probe_value
                sims = res.simulations
                meta["simulations"] = sims
                if not res.converged:
                    meta.update(truncation=res.truncation_used, error="NotConverged",
                                herald_probability=res.herald_probability)
                    return SENTINEL, meta
            meta.update(truncation=res.truncation_used, herald_probability=res.herald_probability,
                        nbar=res.mean_photons, value=value, converged=bool(res.converged))
            if value is None or not math.isfinite(value):
                meta["error"] = "NonFinite"
                return SENTINEL, meta
            return float(self.spec.score(value)), meta
        except Exception as exc:  # any failed simulation maps to the sentinel
            meta["error"] = type(exc).__name__
            return SENTINEL, meta


class Pool:
    """Order-preserving map over evaluation jobs, in-process for one worker."""

    def __init__(self, workers: int = 1):
        self.workers = max(1, int(workers))
        self._ex = ProcessPoolExecutor(self.workers) if self.workers > 1 else None

    def map(self, fn, jobs):
        jobs = list(jobs)
        if self._ex is None:
            return [fn(j) for j in jobs]
        chunk = max(1, len(jobs) // (4 * self.workers))
        return list(self._ex.map(fn, jobs, chunksize=chunk))

    def close(self):
        if self._ex is not None:
            self._ex.shutdown(cancel_futures=True)
            self._ex = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def evaluate_population(values: np.ndarray, evaluator: Callable, keys, pool: Pool,
                        layout: GenomeLayout):
    out = pool.map(evaluator, list(zip(values, keys)))
    return [Individual(Genome(v, layout), f, m) for v, (f, m) in zip(values, out)]


def rank(population: Sequence[Individual]) -> list:
    """Sorted copy, best first; ties keep their original order."""
    scores = np.array([ind.fitness for ind in population])
    order = np.argsort(-scores, kind="stable")
    return [population[i] for i in order]


def _simulation_count(individuals):
    return sum(int(ind.meta.get("simulations", 1)) for ind in individuals)


# --------------------------------------------------------------------------
# stages


@dataclass
class StageState:
    """Progress of one GA stage; everything needed to resume it."""

    stage: int
    generation: int
    population: list
    history: list = field(default_factory=list)
    stall: int = 0
    evaluations: int = 0
    simulations: int = 0
    done: bool = False


def stage1_random(layout: GenomeLayout, evaluator: Callable, config: GaConfig,
                  pool: Optional[Pool] = None, progress: Optional[Callable] = None) -> StageState:
    """Uniform random sampling; keeps the stage-2-population best, sorted."""
    pool = pool or Pool(1)
    n_total, keep = config.populations[0], config.populations[1]
    best: list = []
    evaluations = simulations = 0
    for c, start in enumerate(range(0, n_total, config.stage1_chunk)):
        n = min(config.stage1_chunk, n_total - start)
        vals = random_population(layout, stream(config.seed, _SAMPLE, 1, c), n)
        keys = [(1, 0, start + i) for i in range(n)]
        inds = evaluate_population(vals, evaluator, keys, pool, layout)
        evaluations += n
        simulations += _simulation_count(inds)
        best = rank(best + inds)[:keep]
        if progress is not None:
            progress(start + n, n_total)
    state = StageState(1, 0, best, evaluations=evaluations, simulations=simulations, done=True)
    state.history.append(_trace_row(1, 0, best, evaluations))
    return state


def _trace_row(stage, generation, population, evaluations):
    scores = np.array([ind.fitness for ind in population])
    ok = scores[np.isfinite(scores)]
    top = population[0] if population else None
    return {
        "stage": stage,
        "generation": generation,
        "best_score": float(ok.max()) if ok.size else None,
        "best_value": top.meta.get("value") if top is not None and not top.failed else None,
        "mean_score": float(ok.mean()) if ok.size else None,
        "failed": int((~np.isfinite(scores)).sum()),
        "evaluations": int(evaluations),
    }


def next_generation(ranked: Sequence[Individual], config: GaConfig, rng: np.random.Generator):
    """Elites (unchanged) plus crossover and mutation children of tournament winners."""
    pop = len(ranked)
    elite = min(config.elite_count, pop)
    n_cross = int(round(config.crossover_fraction * (pop - elite)))
    n_mut = pop - elite - n_cross
    k = min(config.tournament_size, pop)
    children = []
    for _ in range(n_cross):
        a = tournament_select(ranked, k, rng)
        b = tournament_select(ranked, k, rng)
        children.append(crossover(a.genome, b.genome, config.crossover, rng).values)
    for _ in range(n_mut):
        p = tournament_select(ranked, k, rng)
        children.append(mutate(p.genome, config, rng).values)
    return list(ranked[:elite]), children


def run_stage_ga(state: StageState, config: GaConfig, evaluator: Callable, layout: GenomeLayout,
                 pool: Optional[Pool] = None, generations: Optional[int] = None,
                 on_generation: Optional[Callable] = None) -> StageState:
    """Advance a GA stage until its generation or stall limit.

    ``state.population`` must already be evaluated under ``evaluator``.
    Elites are carried without re-evaluation, so the best score never drops.
    """
    pool = pool or Pool(1)
    limit = config.generations[state.stage - 1] if generations is None else generations
    if len(state.population) < config.elite_count + 2:
        raise ValueError("population must be >= elite_count + 2")
    ranked = rank(state.population)
    state.population = ranked
    if not state.history:
        state.history.append(_trace_row(state.stage, 0, ranked, state.evaluations))
    while not state.done and state.generation < limit:
        g = state.generation + 1
        rng = stream(config.seed, _REPRODUCE, state.stage, g)
        elites, children = next_generation(ranked, config, rng)
        keys = [(state.stage, g, len(elites) + i) for i in range(len(children))]
        fresh = evaluate_population(np.array(children).reshape(len(children), layout.size),
                                    evaluator, keys, pool, layout)
        prev_best = ranked[0].fitness
        ranked = rank(elites + fresh)
        evaluations = state.evaluations + len(fresh)
        row = _trace_row(state.stage, g, ranked, evaluations)
        new_best = ranked[0].fitness
        improved = math.isfinite(new_best) and (
            not math.isfinite(prev_best)
            or new_best - prev_best > config.stall_tol * max(abs(prev_best), 1e-300))
        stall = 0 if improved else state.stall + 1
        # commit the generation in one step so an interrupt never sees a partial update
        state.population, state.generation, state.stall = ranked, g, stall
        state.evaluations, state.simulations = evaluations, state.simulations + _simulation_count(fresh)
        state.history.append(row)
        if stall >= config.stall_generations:
            state.done = True
        if on_generation is not None:
            on_generation(state)
    state.done = True
    return state


def reevaluate(population: Sequence[Individual], evaluator: Callable, stage: int, pool: Pool,
               layout: GenomeLayout) -> StageState:
    """Start a stage by evaluating the carried population under its own evaluator."""
    vals = np.array([ind.genome.values for ind in population]).reshape(len(population), layout.size)
    keys = [(stage, 0, i) for i in range(len(population))]
    inds = evaluate_population(vals, evaluator, keys, pool, layout)
    return StageState(stage, 0, rank(inds), evaluations=len(inds), simulations=_simulation_count(inds))


# --------------------------------------------------------------------------
# checkpoints


def _individual_to_json(ind: Individual):
    return {"genome": [float(v) for v in ind.genome.values],
            "fitness": None if ind.failed else float(ind.fitness),
            "meta": ind.meta}


def _individual_from_json(d, layout):
    f = SENTINEL if d["fitness"] is None else float(d["fitness"])
    return Individual(Genome(np.array(d["genome"], dtype=float), layout), f, d["meta"])


def state_to_json(state: StageState) -> dict:
    return {
        "stage": state.stage, "generation": state.generation, "stall": state.stall,
        "evaluations": state.evaluations, "simulations": state.simulations, "done": state.done,
        "history": state.history,
        "population": [_individual_to_json(i) for i in state.population],
    }


def state_from_json(d: dict, layout: GenomeLayout) -> StageState:
    return StageState(d["stage"], d["generation"],
                      [_individual_from_json(i, layout) for i in d["population"]],
                      history=list(d["history"]), stall=d["stall"], evaluations=d["evaluations"],
                      simulations=d["simulations"], done=d["done"])


class CheckpointError(RuntimeError):
    pass


def write_checkpoint(path: str, run_key: str, stages: list):
    data = {"format": "fockga-checkpoint", "version": CHECKPOINT_VERSION, "run_key": run_key,
            "stages": [state_to_json(s) for s in stages]}
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(data, fh)
    os.replace(tmp, path)


def read_checkpoint(path: str, run_key: str, layout: GenomeLayout) -> list:
    with open(path) as fh:
        data = json.load(fh)
    if data.get("format") != "fockga-checkpoint":
        raise CheckpointError(f"{path} is not a checkpoint")
    if data.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: checkpoint version {data.get('version')} "
                              f"is not supported (expected {CHECKPOINT_VERSION})")
    if data.get("run_key") != run_key:
        raise CheckpointError(f"{path} belongs to a different configuration or seed")
    return [state_from_json(s, layout) for s in data["stages"]]


# --------------------------------------------------------------------------
# the full pipeline


@dataclass(frozen=True)
class Limits:
    t_max: int = 150
    n_modes: int = 2
    m_ops: int = 4

    def __post_init__(self):
        if self.t_max < 1 or self.n_modes < 2 or self.m_ops < 1:
            raise ValueError("limits need t_max >= 1, n_modes >= 2, m_ops >= 1")


@dataclass
class SearchOutcome:
    layout: GenomeLayout
    stages: list
    best: Individual
    elapsed: dict

    @property
    def trace(self) -> list:
        return [row for s in self.stages for row in s.history]

    @property
    def evaluations(self) -> int:
        return sum(s.evaluations for s in self.stages)

    @property
    def simulations(self) -> int:
        return sum(s.simulations for s in self.stages)

    def evaluation_counts(self) -> dict:
        return {"per_stage": [s.evaluations for s in self.stages],
                "simulations_per_stage": [s.simulations for s in self.stages],
                "total": self.evaluations, "simulations": self.simulations}


def run_key(toolbox: ToolboxSpec, spec: FitnessSpec, config: GaConfig, loss: LossModel,
            limits: Limits) -> str:
    payload = json.dumps({"toolbox": toolbox.to_dict(), "fitness": spec.to_dict(),
                          "search": config.to_dict(), "loss": asdict(loss), "limits": asdict(limits)},
                         sort_keys=True, default=str)
    return hashlib.sha256(payload.encode()).hexdigest()


def expected_evaluations(config: GaConfig, generations_run: Sequence[int]) -> int:
    """Evaluator calls: every stage-1 sample, each GA stage's initial population,
    and (population - elites) fresh children per generation actually run."""
    p1, p2, p3 = config.populations
    total = p1
    for pop, g in zip((p2, p3), generations_run):
        total += pop + g * (pop - min(config.elite_count, pop))
    return total


def run_three_stage(toolbox: ToolboxSpec, spec: FitnessSpec, config: GaConfig,
                    loss: LossModel = LossModel(), limits: Limits = Limits(), *,
                    workers: int = 1, checkpoint: Optional[str] = None,
                    skip_stage1: bool = False) -> SearchOutcome:
    """Random sampling, fixed-truncation GA, then adaptive-truncation GA.

    With ``checkpoint`` set, progress is written after every generation and an
    existing compatible checkpoint is resumed.  ``skip_stage1`` seeds stage 2
    with uniform random genomes instead (an ablation).
    """
    layout = genome_layout(toolbox, limits.n_modes, limits.m_ops)
    key = run_key(toolbox, spec, config, loss, limits) + (":no-stage1" if skip_stage1 else "")
    t1, t2 = (min(t, limits.t_max) for t in config.truncations)
    evals = [
        Evaluator(layout, spec, loss, t1, seed=config.seed),
        Evaluator(layout, spec, loss, t2, seed=config.seed),
        Evaluator(layout, spec, loss, None, t_max=limits.t_max, t_start=config.adaptive_start,
                  t_step=config.adaptive_step, rel_tol=config.adaptive_rel_tol, seed=config.seed),
    ]
    stages: list = []
    if checkpoint and os.path.exists(checkpoint):
        stages = read_checkpoint(checkpoint, key, layout)
        log.info("resuming from %s at stage %d", checkpoint, len(stages))
    elapsed = {}

    def flush(_state=None):
        if checkpoint:
            write_checkpoint(checkpoint, key, stages)

    try:
        with Pool(workers) as pool:
            _run_stages(stages, layout, evals, config, pool, skip_stage1, flush, elapsed)
    except KeyboardInterrupt:
        flush()
        raise
    best = rank(stages[-1].population)[0]
    return SearchOutcome(layout, stages, best, elapsed)


def _run_stages(stages, layout, evals, config, pool, skip_stage1, flush, elapsed):
    t0 = time.perf_counter()
    if not stages:
        if skip_stage1:
            vals = random_population(layout, stream(config.seed, _SAMPLE, 1, 0), config.populations[1])
            s1 = StageState(1, 0, [Individual(Genome(v, layout)) for v in vals], done=True)
        else:
            s1 = stage1_random(layout, evals[0], config, pool)
        stages.append(s1)
        flush()
    elapsed["stage1"] = time.perf_counter() - t0
    for stage in (2, 3):
        t0 = time.perf_counter()
        if len(stages) < stage:
            carried = stages[-1].population[:config.populations[stage - 1]]
            stages.append(reevaluate(carried, evals[stage - 1], stage, pool, layout))
            flush()
        st = stages[stage - 1]
        if not st.done:
            run_stage_ga(st, config, evals[stage - 1], layout, pool, on_generation=flush)
            flush()
        elapsed[f"stage{stage}"] = time.perf_counter() - t0
