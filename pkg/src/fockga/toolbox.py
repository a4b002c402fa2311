"""Catalog of circuit elements: input states, operators, measurements and loss.

Complex parameters are carried as (magnitude, phase) pairs.  Every unitary
element is applied as ``R exp(r B) R^dagger`` with a real, phase-free
generator ``B`` and a diagonal rotation ``R = exp(i phi n)``, which is an
exact identity in the truncated space and lets eigendecompositions of ``B``
be reused across parameter values.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, asdict
from enum import Enum
from functools import lru_cache
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.special import gammaln

from .fock import (
    KetState, MixedState, SparseOperator, Truncation, TruncationInsufficient,
    _Cache, as_truncation, boundary_population, expm_action,
)

TWO_PI = 2.0 * math.pi


class Kind(str, Enum):
    FOCK = "FockState"
    COHERENT = "CoherentState"
    SQUEEZED_VAC1 = "SqueezedVac1"
    SQUEEZED_VAC2 = "SqueezedVac2"
    DISPLACEMENT = "Displacement"
    SQUEEZE1 = "Squeeze1"
    SQUEEZE2 = "Squeeze2"
    PHASE_SHIFT = "PhaseShift"
    BEAM_SPLITTER = "BeamSplitter"
    IDENTITY = "Identity"
    PNRD = "PNRD"
    BUCKET = "Bucket"
    MULTIPLEX = "Multiplex"
    HOMODYNE = "Homodyne"

    def __str__(self):
        return self.value


STATE_KINDS = (Kind.FOCK, Kind.COHERENT, Kind.SQUEEZED_VAC1, Kind.SQUEEZED_VAC2)
OPERATOR_KINDS = (Kind.IDENTITY, Kind.DISPLACEMENT, Kind.SQUEEZE1, Kind.SQUEEZE2,
                  Kind.PHASE_SHIFT, Kind.BEAM_SPLITTER)
MEASUREMENT_KINDS = (Kind.PNRD, Kind.BUCKET, Kind.MULTIPLEX, Kind.HOMODYNE)
TWO_MODE_KINDS = frozenset({Kind.SQUEEZED_VAC2, Kind.SQUEEZE2, Kind.BEAM_SPLITTER})


def arity(kind: Kind) -> int:
    return 2 if kind in TWO_MODE_KINDS else 1


@dataclass(frozen=True)
class ElementSpec:
    """Parameter layout of one element kind.

    ``param_bounds`` maps real parameter names to closed intervals (phases use
    [0, 2*pi) and wrap), ``integer_bounds`` maps integer parameters to ranges.
    """

    kind: Kind
    arity: int
    param_bounds: dict
    integer_bounds: dict

    def __post_init__(self):
        for name, (lo, hi) in {**self.param_bounds, **self.integer_bounds}.items():
            if lo > hi:
                raise ValueError(f"{self.kind}: empty bound for {name}")


@dataclass(frozen=True)
class LossModel:
    gamma_out: float = 0.0
    gamma_det: float = 0.0

    def __post_init__(self):
        for name in ("gamma_out", "gamma_det"):
            v = float(getattr(self, name))
            object.__setattr__(self, name, v)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")

    @property
    def lossless(self) -> bool:
        return self.gamma_out == 0 and self.gamma_det == 0


@dataclass(frozen=True)
class ToolboxBounds:
    fock_max: int = 5
    alpha_max: float = 5.0
    zeta_max: float = 1.4
    squeeze_op_max: float = 1.4
    pnrd_min: int = 0
    pnrd_max: int = 6
    multiplex_detectors: int = 16
    multiplex_max: int = 6
    homodyne_x_max: float = 3.0
    homodyne_bin: float = 0.1

    def __post_init__(self):
        if self.fock_max < 0 or self.pnrd_min < 0 or self.pnrd_max < self.pnrd_min:
            raise ValueError("integer bounds must be non-empty and non-negative")
        if min(self.alpha_max, self.zeta_max, self.squeeze_op_max, self.homodyne_x_max) < 0:
            raise ValueError("magnitude bounds must be >= 0")
        if self.multiplex_detectors < 1 or self.multiplex_max < 0:
            raise ValueError("multiplex detector count must be >= 1")
        if self.homodyne_bin <= 0:
            raise ValueError("homodyne bin width must be positive")


@dataclass(frozen=True)
class ToolboxSpec:
    """Enabled elements per category plus their parameter bounds."""

    states: tuple = STATE_KINDS
    operators: tuple = (Kind.IDENTITY, Kind.DISPLACEMENT, Kind.PHASE_SHIFT, Kind.BEAM_SPLITTER)
    measurements: tuple = (Kind.PNRD,)
    bounds: ToolboxBounds = field(default_factory=ToolboxBounds)

    def __post_init__(self):
        states = tuple(Kind(k) for k in self.states)
        ops = tuple(Kind(k) for k in self.operators)
        meas = tuple(Kind(k) for k in self.measurements)
        # The identity is always available and always first.
        ops = (Kind.IDENTITY,) + tuple(k for k in ops if k is not Kind.IDENTITY)
        for name, kinds, allowed in (("states", states, STATE_KINDS),
                                     ("operators", ops, OPERATOR_KINDS),
                                     ("measurements", meas, MEASUREMENT_KINDS)):
            if not kinds:
                raise ValueError(f"toolbox category {name!r} is empty")
            bad = [k for k in kinds if k not in allowed]
            if bad:
                raise ValueError(f"{bad[0]} is not a valid entry for {name!r}")
            if len(set(kinds)) != len(kinds):
                raise ValueError(f"duplicate entries in {name!r}")
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "operators", ops)
        object.__setattr__(self, "measurements", meas)

    def element_spec(self, kind: Kind) -> ElementSpec:
        b = self.bounds
        phase = (0.0, TWO_PI)
        real, ints = {}, {}
        if kind is Kind.FOCK:
            ints["n"] = (0, b.fock_max)
        elif kind in (Kind.COHERENT, Kind.DISPLACEMENT):
            real.update(mag=(0.0, b.alpha_max), phase=phase)
        elif kind in (Kind.SQUEEZED_VAC1, Kind.SQUEEZED_VAC2):
            real.update(mag=(0.0, b.zeta_max), phase=phase)
        elif kind in (Kind.SQUEEZE1, Kind.SQUEEZE2):
            real.update(mag=(0.0, b.squeeze_op_max), phase=phase)
        elif kind is Kind.PHASE_SHIFT:
            real["phase"] = phase
        elif kind is Kind.BEAM_SPLITTER:
            real["transmissivity"] = (0.0, 1.0)
        elif kind is Kind.PNRD:
            ints["n"] = (b.pnrd_min, b.pnrd_max)
        elif kind is Kind.BUCKET:
            ints["n"] = (0, 1)
        elif kind is Kind.MULTIPLEX:
            ints["n"] = (0, min(b.multiplex_max, b.multiplex_detectors))
        elif kind is Kind.HOMODYNE:
            real.update(x=(-b.homodyne_x_max, b.homodyne_x_max), angle=phase)
        return ElementSpec(kind, arity(kind), real, ints)

    def to_dict(self) -> dict:
        return {
            "states": [k.value for k in self.states],
            "operators": [k.value for k in self.operators],
            "measurements": [k.value for k in self.measurements],
            "bounds": asdict(self.bounds),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ToolboxSpec":
        data = dict(data)
        bounds = ToolboxBounds(**data.pop("bounds", {}))
        return cls(bounds=bounds, **data)


BOUND_NAMES = tuple(f.name for f in fields(ToolboxBounds))

_FULL_OPS = (Kind.IDENTITY, Kind.DISPLACEMENT, Kind.SQUEEZE1, Kind.SQUEEZE2,
             Kind.PHASE_SHIFT, Kind.BEAM_SPLITTER)
_NO_SQUEEZE_OPS = (Kind.IDENTITY, Kind.DISPLACEMENT, Kind.PHASE_SHIFT, Kind.BEAM_SPLITTER)

PRESETS = {
    "tool1": ToolboxSpec(STATE_KINDS, _NO_SQUEEZE_OPS, (Kind.PNRD,), ToolboxBounds(pnrd_max=6)),
    "tool2": ToolboxSpec(STATE_KINDS, _NO_SQUEEZE_OPS, (Kind.PNRD,), ToolboxBounds(pnrd_max=10)),
    "full": ToolboxSpec(STATE_KINDS, _FULL_OPS, (Kind.PNRD, Kind.BUCKET, Kind.MULTIPLEX),
                        ToolboxBounds(pnrd_max=10)),
    "no_pnrd": ToolboxSpec(STATE_KINDS, _FULL_OPS, (Kind.BUCKET, Kind.MULTIPLEX),
                           ToolboxBounds(multiplex_max=6, multiplex_detectors=16)),
    "lossy": ToolboxSpec(STATE_KINDS, _NO_SQUEEZE_OPS, (Kind.PNRD,),
                         ToolboxBounds(fock_max=4, zeta_max=1.0, squeeze_op_max=1.0, pnrd_max=6)),
    # two single-mode squeezed vacua, one beam splitter, a 2-photon herald
    "sv_pair": ToolboxSpec((Kind.SQUEEZED_VAC1,), (Kind.IDENTITY, Kind.BEAM_SPLITTER), (Kind.PNRD,),
                           ToolboxBounds(fock_max=0, zeta_max=1.0, pnrd_min=2, pnrd_max=2)),
}


def preset(name: str) -> ToolboxSpec:
    try:
        return PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown toolbox preset {name!r}; choose from {sorted(PRESETS)}") from None


# --------------------------------------------------------------------------
# generators


@lru_cache(maxsize=64)
def _ladder(d):
    sq = np.sqrt(np.arange(1, d, dtype=float))
    a = sp.diags(sq, 1, shape=(d, d), format="csr")
    return a, a.T.tocsr()


@lru_cache(maxsize=64)
def generator(kind: Kind, t_max: int) -> SparseOperator:
    """Real, phase-free generator B of a unitary element, on its local modes."""
    d = t_max + 1
    a, ad = _ladder(d)
    n = np.arange(d)
    if kind is Kind.DISPLACEMENT:
        mat, modes, labels = ad - a, (0,), None
    elif kind is Kind.SQUEEZE1:
        mat, modes, labels = 0.5 * (a @ a - ad @ ad), (0,), None
    elif kind is Kind.SQUEEZE2:
        mat = sp.kron(a, a) - sp.kron(ad, ad)
        modes, labels = (0, 1), np.subtract.outer(n, n).ravel()
    elif kind is Kind.BEAM_SPLITTER:
        mat = sp.kron(a, ad) - sp.kron(ad, a)
        modes, labels = (0, 1), np.add.outer(n, n).ravel()
    else:
        raise ValueError(f"{kind} has no generator")
    n_modes = len(modes)
    return SparseOperator(sp.csr_matrix(mat, dtype=complex), modes, n_modes, Truncation(t_max),
                          spectral_key=(kind.value, t_max), block_labels=labels)


def _local(gen: SparseOperator, modes, n_modes) -> SparseOperator:
    return SparseOperator(gen.matrix, tuple(modes), n_modes, gen.truncation,
                          spectral_key=gen.spectral_key, block_labels=gen.block_labels)


def _rotate(state: KetState, mode: int, phi: float) -> KetState:
    if phi == 0:
        return state
    d = state.truncation.dim
    shape = [1] * state.n_modes
    shape[mode] = d
    rot = np.exp(1j * phi * np.arange(d)).reshape(shape)
    return state.with_amplitudes((state.tensor() * rot).ravel())


def _check_leakage(state: KetState, modes, threshold):
    leak = boundary_population(state, modes)
    if threshold is not None and leak > threshold:
        raise TruncationInsufficient(leak, threshold)
    return state.with_amplitudes(state.amplitudes, leakage=leak)


def _evolve(state, kind, mag, modes, options):
    if mag == 0:
        return state
    gen = _local(generator(kind, state.truncation.t_max), modes, state.n_modes)
    return expm_action(gen, state, mag, **options)


def _mag_phase(value):
    if isinstance(value, tuple):
        mag, phase = value
    else:
        mag, phase = abs(complex(value)), float(np.angle(complex(value)))
    if mag < 0:
        raise ValueError("magnitude must be >= 0")
    return float(mag), float(phase)


def apply_displacement(state: KetState, alpha, mode: int = 0, *, leakage_threshold=None,
                       **options) -> KetState:
    """D(alpha) = exp(alpha a^dagger - alpha^* a) on ``mode``."""
    r, phi = _mag_phase(alpha)
    state = _rotate(state, mode, -phi)
    state = _evolve(state, Kind.DISPLACEMENT, r, (mode,), options)
    state = _rotate(state, mode, phi)
    return _check_leakage(state, [mode], leakage_threshold)


def apply_squeeze1(state: KetState, zeta, mode: int = 0, *, leakage_threshold=None,
                   **options) -> KetState:
    """S(zeta) = exp[(zeta^* a^2 - zeta a^dagger^2) / 2] on ``mode``."""
    r, phi = _mag_phase(zeta)
    state = _rotate(state, mode, -phi / 2)
    state = _evolve(state, Kind.SQUEEZE1, r, (mode,), options)
    state = _rotate(state, mode, phi / 2)
    return _check_leakage(state, [mode], leakage_threshold)


def apply_squeeze2(state: KetState, zeta, modes=(0, 1), *, leakage_threshold=None,
                   **options) -> KetState:
    """S_12(zeta) = exp[zeta^* a_1 a_2 - zeta a_1^dagger a_2^dagger]."""
    r, phi = _mag_phase(zeta)
    m1 = modes[0]
    state = _rotate(state, m1, -phi)
    state = _evolve(state, Kind.SQUEEZE2, r, modes, options)
    state = _rotate(state, m1, phi)
    return _check_leakage(state, list(modes), leakage_threshold)


def apply_phase(state: KetState, phi: float, mode: int = 0) -> KetState:
    """exp(i n phi) on ``mode``."""
    return _rotate(state, mode, float(phi))


def beamsplitter_angle(transmissivity: float) -> float:
    if not 0.0 <= transmissivity <= 1.0:
        raise ValueError(f"transmissivity must lie in [0, 1], got {transmissivity}")
    return math.acos(math.sqrt(transmissivity))


def apply_beamsplitter(state: KetState, transmissivity: float, modes=(0, 1), **options) -> KetState:
    """U = exp[theta (a_i a_j^dagger - a_i^dagger a_j)], theta = arccos sqrt(T)."""
    options.pop("leakage_threshold", None)
    return _evolve(state, Kind.BEAM_SPLITTER, beamsplitter_angle(transmissivity), modes, options)


# --------------------------------------------------------------------------
# input states


def _vacuum(n_modes, t):
    amps = np.zeros(t.dim ** n_modes, complex)
    amps[0] = 1.0
    return KetState(amps, n_modes, t)


def make_fock(n: int, truncation, n_limit: Optional[int] = 5) -> KetState:
    t = as_truncation(truncation)
    if n < 0 or n > t.t_max:
        raise ValueError(f"Fock level {n} outside 0..{t.t_max}")
    if n_limit is not None and n > n_limit:
        raise ValueError(f"Fock level {n} above the limit {n_limit}")
    amps = np.zeros(t.dim, complex)
    amps[n] = 1.0
    return KetState(amps, 1, t)


def make_coherent(alpha, truncation, bound: Optional[float] = 5.0) -> KetState:
    """Closed-form coherent state, renormalized after truncation."""
    t = as_truncation(truncation)
    r, phi = _mag_phase(alpha)
    if bound is not None and r > bound + 1e-12:
        raise ValueError(f"|alpha| = {r} above the bound {bound}")
    n = np.arange(t.dim)
    if r == 0:
        return _vacuum(1, t)
    log_mag = -0.5 * r * r + n * math.log(r) - 0.5 * gammaln(n + 1)
    amps = np.exp(log_mag + 1j * phi * n)
    kept = float(np.sum(np.exp(2 * log_mag)))
    return KetState(amps / math.sqrt(kept), 1, t, leakage=max(0.0, 1.0 - kept))


def make_squeezed_vac(zeta, truncation, bound: Optional[float] = 1.4, **options) -> KetState:
    """S(zeta)|0>."""
    t = as_truncation(truncation)
    r, phi = _mag_phase(zeta)
    if bound is not None and r > bound + 1e-12:
        raise ValueError(f"|zeta| = {r} above the bound {bound}")
    return apply_squeeze1(_vacuum(1, t), (r, phi), 0, **options).normalize()


def make_two_mode_squeezed_vac(zeta, truncation, bound: Optional[float] = 1.4, **options) -> KetState:
    """S_12(zeta)|0, 0>."""
    t = as_truncation(truncation)
    r, phi = _mag_phase(zeta)
    if bound is not None and r > bound + 1e-12:
        raise ValueError(f"|zeta| = {r} above the bound {bound}")
    return apply_squeeze2(_vacuum(2, t), (r, phi), (0, 1), **options).normalize()


def tensor_product(*states: KetState) -> KetState:
    t = states[0].truncation
    amps = states[0].amplitudes
    for s in states[1:]:
        if s.truncation != t:
            raise ValueError("states have different truncations")
        amps = np.kron(amps, s.amplitudes)
    return KetState(amps, sum(s.n_modes for s in states), t,
                    leakage=max(s.leakage for s in states))


# --------------------------------------------------------------------------
# measurements


@dataclass(frozen=True, eq=False)
class Povm:
    elements: tuple  # of (label, SparseOperator)
    completeness_defect: float

    def __iter__(self):
        return iter(self.elements)

    def __len__(self):
        return len(self.elements)

    def element(self, label):
        for lab, op in self.elements:
            if lab == label:
                return op
        raise KeyError(label)


povm_cache = _Cache(maxsize=256)


def _diag_element(diag, t, key=None):
    def build():
        return SparseOperator(sp.diags(np.asarray(diag, dtype=complex), 0, format="csr"), (0,), 1, t)

    return build() if key is None else povm_cache.get(key, build)


def _binomial_loss_matrix(gamma, d):
    """B[k, c] = C(k, c) (1-gamma)^c gamma^(k-c): probability that c of k photons survive."""
    k = np.arange(d)[:, None]
    c = np.arange(d)[None, :]
    mask = c <= k
    if gamma == 0:
        return np.eye(d)
    if gamma == 1:
        out = np.zeros((d, d))
        out[:, 0] = 1.0
        return out
    kk, cc = np.broadcast_arrays(k, c)
    logb = np.full((d, d), -np.inf)
    km, cm = kk[mask], cc[mask]
    logb[mask] = (gammaln(km + 1) - gammaln(cm + 1) - gammaln(km - cm + 1)
                  + cm * math.log1p(-gamma) + (km - cm) * math.log(gamma))
    return np.exp(logb)


def povm_pnrd(n: int, gamma_det: float, truncation) -> SparseOperator:
    """Photon-number-resolving detector element for outcome ``n``."""
    t = as_truncation(truncation)
    if not 0 <= n <= t.t_max:
        raise ValueError(f"PNRD outcome {n} outside 0..{t.t_max}")
    key = ("pnrd", n, float(gamma_det), t.t_max)
    return _diag_element(_binomial_loss_matrix(gamma_det, t.dim)[:, n], t, key)


def povm_pnrd_all(gamma_det: float, truncation) -> Povm:
    t = as_truncation(truncation)
    elems = tuple((n, povm_pnrd(n, gamma_det, t)) for n in range(t.dim))
    return _finish_povm(elems, t)


def povm_bucket(gamma_det: float, truncation) -> Povm:
    """No-click E0 = sum gamma^n |n><n| and click E1 = I - E0."""
    t = as_truncation(truncation)
    e0 = np.power(float(gamma_det), np.arange(t.dim)) if gamma_det > 0 else np.eye(t.dim)[0]
    elems = ((0, _diag_element(e0, t, ("bucket0", float(gamma_det), t.t_max))),
             (1, _diag_element(1.0 - e0, t, ("bucket1", float(gamma_det), t.t_max))))
    return _finish_povm(elems, t)


def bucket_element(click: int, gamma_det: float, truncation) -> SparseOperator:
    return povm_bucket(gamma_det, truncation).element(int(click))


@lru_cache(maxsize=32)
def stirling2_table(c_max: int, r_max: int):
    """Exact Stirling numbers of the second kind S(c, r) as Python ints."""
    s = [[0] * (r_max + 1) for _ in range(c_max + 1)]
    s[0][0] = 1
    for c in range(1, c_max + 1):
        for r in range(1, min(c, r_max) + 1):
            s[c][r] = r * s[c - 1][r] + s[c - 1][r - 1]
    return s


def multiplex_weights(d: int, c_max: int) -> np.ndarray:
    """w[r, c] = d! S(c, r) / ((d - r)! d^c), the chance that c photons fire r of d detectors."""
    s = stirling2_table(c_max, d)
    w = np.zeros((d + 1, c_max + 1))
    log_d = math.log(d)
    for c in range(c_max + 1):
        for r in range(min(c, d) + 1):
            if s[c][r]:
                w[r, c] = math.exp(math.lgamma(d + 1) - math.lgamma(d - r + 1)
                                   + math.log(s[c][r]) - c * log_d)
    return w


def povm_multiplex(d: int, gamma_det: float, truncation) -> Povm:
    """Elements E_r, r = 0..d, of a d-detector multiplexed click counter."""
    t = as_truncation(truncation)
    if d < 1:
        raise ValueError("need at least one detector")
    w = multiplex_weights(d, t.t_max)
    lossy = _binomial_loss_matrix(gamma_det, t.dim)
    elems = tuple(
        (r, _diag_element(lossy @ w[r], t, ("multiplex", d, r, float(gamma_det), t.t_max)))
        for r in range(d + 1))
    return _finish_povm(elems, t)


def multiplex_element(r: int, d: int, gamma_det: float, truncation) -> SparseOperator:
    if not 0 <= r <= d:
        raise ValueError(f"multiplex outcome {r} outside 0..{d}")
    return povm_multiplex(d, gamma_det, truncation).element(r)


def quadrature_eigenstate(x: float, angle: float, truncation, **options) -> np.ndarray:
    """Delta-normalized |x_lambda> = pi^(-1/4) exp[-x^2/2 + sqrt2 x e^{i l} a^dag - e^{2il} a^dag^2 / 2]|0>."""
    t = as_truncation(truncation)
    a, ad = _ladder(t.dim)
    gen = (math.sqrt(2) * x * np.exp(1j * angle)) * ad - 0.5 * np.exp(2j * angle) * (ad @ ad)
    op = SparseOperator(sp.csr_matrix(gen, dtype=complex), (0,), 1, t)
    options.setdefault("method", "taylor")
    vac = _vacuum(1, t)
    out = expm_action(op, vac, 1.0, **options).amplitudes
    return out * (math.pi ** -0.25 * math.exp(-0.5 * x * x))


def povm_homodyne(x: float, angle: float, truncation, **options) -> SparseOperator:
    """Rank-1 element |x_lambda><x_lambda|; heralding with it yields a density."""
    if not (np.isfinite(x) and np.isfinite(angle)):
        raise ValueError("homodyne parameters must be finite")
    t = as_truncation(truncation)
    key = ("homodyne", float(x), float(angle), t.t_max)

    def build():
        v = quadrature_eigenstate(x, angle, t, **options)
        return SparseOperator(sp.csr_matrix(np.outer(v, v.conj())), (0,), 1, t, factor=v)

    return povm_cache.get(key, build)


def quadrature_operator(angle: float, truncation) -> sp.csr_matrix:
    """x_lambda = (a e^{-i lambda} + a^dagger e^{i lambda}) / sqrt 2."""
    a, ad = _ladder(as_truncation(truncation).dim)
    return ((np.exp(-1j * angle) * a + np.exp(1j * angle) * ad) / math.sqrt(2)).tocsr()


def _finish_povm(elems, t):
    total = sum(op.matrix.diagonal().real for _, op in elems)
    defect = float(np.max(np.abs(total - 1.0)))
    return Povm(tuple(elems), defect)


def measurement_element(kind: Kind, outcome: int, params: dict, loss: LossModel, truncation,
                        bounds: ToolboxBounds = ToolboxBounds()) -> SparseOperator:
    """POVM element for a decoded herald."""
    kind = Kind(kind)
    g = loss.gamma_det
    if kind is Kind.PNRD:
        return povm_pnrd(outcome, g, truncation)
    if kind is Kind.BUCKET:
        return bucket_element(outcome, g, truncation)
    if kind is Kind.MULTIPLEX:
        return multiplex_element(outcome, params.get("detectors", bounds.multiplex_detectors), g,
                                 truncation)
    if kind is Kind.HOMODYNE:
        return povm_homodyne(params["x"], params.get("angle", 0.0), truncation)
    if kind is Kind.IDENTITY:
        t = as_truncation(truncation)
        return SparseOperator(sp.identity(t.dim, format="csr", dtype=complex), (0,), 1, t)
    raise ValueError(f"{kind} is not a measurement")


# --------------------------------------------------------------------------
# loss


def loss_kraus(gamma: float, truncation) -> list:
    """Kraus operators K_k = sum_n sqrt(C(n,k) (1-gamma)^(n-k) gamma^k) |n-k><n|."""
    t = as_truncation(truncation)
    b = np.sqrt(_binomial_loss_matrix(gamma, t.dim))  # b[n, n-k]
    ops = []
    for k in range(t.dim):
        n = np.arange(k, t.dim)
        coeff = b[n, n - k]
        ops.append(sp.csr_matrix((coeff, (n - k, n)), shape=(t.dim, t.dim)))
    return ops


def apply_loss(state, gamma: float, truncation=None, mode: int = 0) -> MixedState:
    """Pass ``mode`` through a pure-loss channel with loss rate ``gamma``."""
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"loss rate must lie in [0, 1], got {gamma}")
    if truncation is not None and as_truncation(truncation) != state.truncation:
        raise ValueError("truncation does not match the state")
    if isinstance(state, KetState):
        state = state.to_mixed()
    if gamma == 0:
        return state
    t = state.truncation
    d = t.dim
    n = state.n_modes
    rho = state.matrix.reshape((d,) * (2 * n))
    rho = np.moveaxis(rho, [mode, n + mode], [0, 1])
    shape = rho.shape
    rho = rho.reshape(d, d, -1)
    # amplitude for n -> n-k is b[n, n-k]; vectorized over k with shifted slices
    b = np.sqrt(_binomial_loss_matrix(gamma, d))
    out = np.zeros_like(rho)
    for k in range(d):
        c = b[np.arange(k, d), np.arange(d - k)]
        out[: d - k, : d - k] += (c[:, None] * c[None, :])[:, :, None] * rho[k:, k:]
    out = np.moveaxis(out.reshape(shape), [0, 1], [mode, n + mode])
    dim = d ** n
    return MixedState(out.reshape(dim, dim), n, t, state.leakage)
