"""Truncated Fock-basis states, operators and the exponential-action kernel.

Basis convention: an N-mode basis vector |n_1, ..., n_N> sits at the
row-major index with base (T+1) digits, mode 1 most significant.  In code
modes are numbered from 0.
"""
from __future__ import annotations

import math
import threading
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from . import kernels

# Largest step size theta_m per Taylor order m keeping the backward error
# below 2**-53 (Al-Mohy & Higham, 2011).
_THETA = {
    1: 2.29e-16, 2: 2.58e-8, 3: 1.39e-5, 4: 3.40e-4, 5: 2.40e-3,
    6: 9.07e-3, 7: 2.38e-2, 8: 5.00e-2, 9: 8.96e-2, 10: 1.44e-1,
    11: 2.14e-1, 12: 3.00e-1, 13: 4.00e-1, 14: 5.14e-1, 15: 6.41e-1,
    16: 7.81e-1, 17: 9.31e-1, 18: 1.09, 19: 1.26, 20: 1.44,
    21: 1.62, 22: 1.82, 23: 2.01, 24: 2.22, 25: 2.43,
    26: 2.64, 27: 2.86, 28: 3.08, 29: 3.31, 30: 3.54,
    35: 4.7, 40: 6.0, 45: 7.2, 50: 8.5, 55: 9.9,
}

DEFAULT_DENSE_THRESHOLD = 64
DEFAULT_MAX_STEPS = 100_000
DEFAULT_HERALD_FLOOR = 1e-12


class ExpmActionError(RuntimeError):
    """The exponential action did not converge within the step budget."""

    def __init__(self, message, residual):
        super().__init__(f"{message} (residual estimate {residual:.3e})")
        self.residual = residual


class HeraldImpossible(RuntimeError):
    """A heralding outcome has probability below the configured floor."""

    def __init__(self, probability, floor=DEFAULT_HERALD_FLOOR):
        super().__init__(f"herald probability {probability:.3e} below floor {floor:.1e}")
        self.probability = probability


class TruncationInsufficient(RuntimeError):
    """Too much population reached the truncation boundary."""

    def __init__(self, leakage, threshold):
        super().__init__(f"leakage {leakage:.3e} exceeds threshold {threshold:.1e}")
        self.leakage = leakage
        self.threshold = threshold


@dataclass(frozen=True)
class Truncation:
    t_max: int

    def __post_init__(self):
        if int(self.t_max) != self.t_max or self.t_max < 1:
            raise ValueError(f"truncation must be an integer >= 1, got {self.t_max!r}")
        object.__setattr__(self, "t_max", int(self.t_max))

    @property
    def dim(self) -> int:
        return self.t_max + 1


def as_truncation(t) -> Truncation:
    return t if isinstance(t, Truncation) else Truncation(int(t))


def basis_index(occupations: Sequence[int], truncation) -> int:
    """Index of |n_1, ..., n_N> in the flattened amplitude vector."""
    d = as_truncation(truncation).dim
    idx = 0
    for n in occupations:
        if not 0 <= n < d:
            raise ValueError(f"occupation {n} outside 0..{d - 1}")
        idx = idx * d + int(n)
    return idx


def basis_occupations(index: int, n_modes: int, truncation) -> tuple:
    """Inverse of :func:`basis_index`."""
    d = as_truncation(truncation).dim
    if not 0 <= index < d ** n_modes:
        raise ValueError(f"index {index} outside the {n_modes}-mode basis")
    digits = []
    for _ in range(n_modes):
        index, r = divmod(index, d)
        digits.append(r)
    return tuple(reversed(digits))


def _readonly(a):
    a = np.array(a, dtype=np.complex128, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class KetState:
    """Pure state on ``n_modes`` modes; ``leakage`` is the largest population
    seen at the truncation boundary while the state was built."""

    amplitudes: np.ndarray
    n_modes: int
    truncation: Truncation
    leakage: float = 0.0

    def __post_init__(self):
        t = as_truncation(self.truncation)
        object.__setattr__(self, "truncation", t)
        amps = _readonly(np.ravel(self.amplitudes))
        if amps.size != t.dim ** self.n_modes:
            raise ValueError(f"expected {t.dim ** self.n_modes} amplitudes, got {amps.size}")
        if not np.all(np.isfinite(amps)):
            raise ValueError("non-finite amplitudes")
        object.__setattr__(self, "amplitudes", amps)

    @property
    def dim(self) -> int:
        return self.amplitudes.size

    def tensor(self) -> np.ndarray:
        return self.amplitudes.reshape((self.truncation.dim,) * self.n_modes)

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def normalize(self) -> "KetState":
        nrm = self.norm()
        if nrm == 0:
            raise ValueError("cannot normalize the zero vector")
        return KetState(self.amplitudes / nrm, self.n_modes, self.truncation, self.leakage)

    def with_amplitudes(self, amplitudes, leakage=None) -> "KetState":
        leak = self.leakage if leakage is None else max(self.leakage, leakage)
        return KetState(amplitudes, self.n_modes, self.truncation, leak)

    def probabilities(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    def to_mixed(self) -> "MixedState":
        a = self.amplitudes
        return MixedState(np.outer(a, a.conj()), self.n_modes, self.truncation, self.leakage)


@dataclass(frozen=True, eq=False)
class MixedState:
    matrix: np.ndarray
    n_modes: int
    truncation: Truncation
    leakage: float = 0.0

    def __post_init__(self):
        t = as_truncation(self.truncation)
        object.__setattr__(self, "truncation", t)
        m = _readonly(self.matrix)
        dim = t.dim ** self.n_modes
        if m.shape != (dim, dim):
            raise ValueError(f"expected a {dim}x{dim} matrix, got {m.shape}")
        object.__setattr__(self, "matrix", m)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def trace(self) -> float:
        return float(np.trace(self.matrix).real)

    def normalize(self) -> "MixedState":
        tr = self.trace()
        if tr <= 0:
            raise ValueError("cannot normalize a state with non-positive trace")
        return MixedState(self.matrix / tr, self.n_modes, self.truncation, self.leakage)

    def purity(self) -> float:
        m = self.matrix
        return float(np.vdot(m, m).real)

    def probabilities(self) -> np.ndarray:
        return np.real(np.diag(self.matrix)).copy()

    def is_hermitian(self, atol=1e-10) -> bool:
        return bool(np.allclose(self.matrix, self.matrix.conj().T, atol=atol))


@dataclass(frozen=True, eq=False)
class SparseOperator:
    """Operator acting on ``modes`` of an ``n_modes`` system.

    ``matrix`` is the local matrix on the listed modes (in listed order).
    ``spectral_key`` names a cached eigendecomposition, ``block_labels``
    holds a conserved quantity on the local basis, and ``factor`` marks a
    rank-1 operator ``factor factor^dagger``.
    """

    matrix: sp.csr_matrix
    modes: tuple
    n_modes: int
    truncation: Truncation
    spectral_key: Optional[tuple] = None
    block_labels: Optional[np.ndarray] = None
    factor: Optional[np.ndarray] = None

    def __post_init__(self):
        t = as_truncation(self.truncation)
        object.__setattr__(self, "truncation", t)
        modes = tuple(int(m) for m in self.modes)
        if len(set(modes)) != len(modes):
            raise ValueError(f"repeated mode in {modes}")
        for m in modes:
            if not 0 <= m < self.n_modes:
                raise ValueError(f"mode index {m} out of range for {self.n_modes} modes")
        object.__setattr__(self, "modes", modes)
        mat = sp.csr_matrix(self.matrix, dtype=np.complex128)
        local = t.dim ** len(modes)
        if mat.shape != (local, local):
            raise ValueError(f"local matrix shape {mat.shape} does not match {len(modes)} modes")
        if not np.all(np.isfinite(mat.data)):
            raise ValueError("non-finite operator entries")
        object.__setattr__(self, "matrix", mat)

    @property
    def local_dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def dim(self) -> int:
        return self.truncation.dim ** self.n_modes

    def entries(self):
        coo = self.matrix.tocoo()
        return coo.row, coo.col, coo.data

    def to_global(self) -> sp.csr_matrix:
        """Kronecker-embedded matrix on the full space."""
        d = self.truncation.dim
        if self.modes == tuple(range(self.n_modes)):
            return self.matrix.copy()
        # Build on the permuted order (targets first), then permute back.
        rest = [m for m in range(self.n_modes) if m not in self.modes]
        full = sp.kron(self.matrix, sp.identity(d ** len(rest), format="csr"), format="csr")
        order = list(self.modes) + rest
        if order == list(range(self.n_modes)):
            return full
        idx = np.arange(self.dim).reshape((d,) * self.n_modes)
        perm = np.transpose(idx, order).ravel()
        inv = np.empty_like(perm)
        inv[perm] = np.arange(perm.size)
        return full[inv][:, inv].tocsr()

    def apply(self, state: KetState) -> KetState:
        out = apply_local(self.matrix, state.tensor(), self.modes)
        return state.with_amplitudes(out.ravel())

    def expectation(self, state: KetState) -> complex:
        return complex(np.vdot(state.amplitudes, self.apply(state).amplitudes))


def build_ladder_ops(truncation):
    """Single-mode annihilation, creation and number operators."""
    t = as_truncation(truncation)
    d = t.dim
    sq = np.sqrt(np.arange(1, d, dtype=float))
    a = sp.diags(sq, 1, shape=(d, d), format="csr", dtype=np.complex128)
    adag = sp.diags(sq, -1, shape=(d, d), format="csr", dtype=np.complex128)
    n = sp.diags(np.arange(d, dtype=float), 0, shape=(d, d), format="csr", dtype=np.complex128)
    wrap = lambda m: SparseOperator(m, (0,), 1, t)  # noqa: E731
    return wrap(a), wrap(adag), wrap(n)


def embed_on_modes(op: SparseOperator, modes, n_modes, truncation) -> SparseOperator:
    """Place a k-mode operator on ``modes`` of an ``n_modes`` system."""
    modes = tuple(modes)
    if len(modes) != len(op.modes):
        raise ValueError(f"operator acts on {len(op.modes)} modes, {len(modes)} given")
    for m in modes:
        if not 0 <= m < n_modes:
            raise IndexError(f"mode index {m} out of range for {n_modes} modes")
    return SparseOperator(op.matrix, modes, n_modes, as_truncation(truncation),
                          spectral_key=op.spectral_key, block_labels=op.block_labels,
                          factor=op.factor)


def apply_local(matrix, tensor: np.ndarray, modes) -> np.ndarray:
    """Apply a local (dense or sparse) matrix to ``modes`` of a state tensor."""
    front, shape = _to_front(tensor, modes)
    out = matrix @ front
    return _from_front(np.asarray(out), shape, modes)


def _to_front(tensor, modes):
    modes = list(modes)
    moved = np.moveaxis(tensor, modes, list(range(len(modes))))
    shape = moved.shape
    local = int(np.prod(shape[: len(modes)]))
    return np.ascontiguousarray(moved.reshape(local, -1)), shape


def _from_front(block, shape, modes):
    modes = list(modes)
    return np.moveaxis(block.reshape(shape), list(range(len(modes))), modes)


class _Cache:
    """Small lock-protected memo table that can be switched off."""

    def __init__(self, maxsize=64):
        self._data = {}
        self._lock = threading.Lock()
        self.maxsize = maxsize
        self.enabled = True

    def get(self, key, build):
        if not self.enabled:
            return build()
        with self._lock:
            if key in self._data:
                return self._data[key]
        value = build()
        with self._lock:
            if len(self._data) >= self.maxsize:
                self._data.pop(next(iter(self._data)))
            self._data[key] = value
        return value

    def clear(self):
        with self._lock:
            self._data.clear()


spectral_cache = _Cache(maxsize=48)


def _spectral_factors(op: SparseOperator):
    """Eigendecomposition of an anti-Hermitian (or Hermitian) local matrix,
    block by block along ``block_labels``."""

    def build():
        m = op.matrix
        anti = abs(m + m.conj().T).max() < 1e-14
        herm = abs(m - m.conj().T).max() < 1e-14
        if not (anti or herm):
            raise ValueError("spectral method needs a normal (Hermitian or anti-Hermitian) generator")
        labels = op.block_labels if op.block_labels is not None else np.zeros(m.shape[0])
        blocks = []
        dense = m.tocsc()
        for lab in np.unique(labels):
            idx = np.flatnonzero(labels == lab)
            sub = dense[idx][:, idx].toarray()
            h = 1j * sub if anti else sub
            w, v = np.linalg.eigh(h)
            # generator restricted to block = v diag(lam) v^dagger
            lam = -1j * w if anti else w.astype(complex)
            blocks.append((idx, lam, v))
        return blocks

    key = op.spectral_key if op.spectral_key is not None else None
    if key is None:
        return build()
    return spectral_cache.get(key, build)


def _choose_taylor(norm1: float, max_steps: int):
    if norm1 == 0:
        return 0, 0
    best = None
    for m, theta in _THETA.items():
        s = max(1, math.ceil(norm1 / theta))
        cost = m * s
        if best is None or cost < best[0]:
            best = (cost, m, s)
    _, m, s = best
    if s > max_steps:
        raise ExpmActionError(f"Taylor scheme needs {s} steps, budget is {max_steps}", residual=float("inf"))
    return m, s


def expm_block(op: SparseOperator, block: np.ndarray, scale=1.0, *, method="auto",
               tol=2.0 ** -53, max_steps=DEFAULT_MAX_STEPS,
               dense_threshold=DEFAULT_DENSE_THRESHOLD, backend=None) -> np.ndarray:
    """exp(scale * op.matrix) applied to the columns of a 2-d block."""
    scale = complex(scale)
    block = np.ascontiguousarray(block, dtype=np.complex128)
    if scale == 0:
        return block.copy()
    n = op.local_dim
    if method == "auto":
        if n < dense_threshold:
            method = "dense"
        elif op.spectral_key is not None:
            method = "spectral"
        else:
            method = "taylor"
    if method == "dense":
        return sla.expm(scale * op.matrix.toarray()) @ block
    if method == "spectral":
        out = np.empty_like(block)
        for idx, lam, v in _spectral_factors(op):
            sub = block[idx]
            out[idx] = v @ (np.exp(scale * lam)[:, None] * (v.conj().T @ sub))
        return out
    if method != "taylor":
        raise ValueError(f"unknown expm method {method!r}")
    mat = op.matrix
    norm1 = abs(scale) * float(abs(mat).sum(axis=0).max())
    m, s = _choose_taylor(norm1, max_steps)
    kern = kernels.get_backend(backend)
    result, _, residual = kern.taylor_expm_csr(
        mat.indptr.astype(np.int32), mat.indices.astype(np.int32),
        mat.data.astype(np.complex128), block, scale / s, s, m, tol)
    if not np.all(np.isfinite(result)) or residual > 1e-8:
        raise ExpmActionError("Taylor series did not converge", residual=residual)
    return result


def expm_action(generator: SparseOperator, state: KetState, scale=1.0, **options) -> KetState:
    """Return exp(scale * A)|psi> without forming the exponential of A."""
    if generator.n_modes != state.n_modes or generator.truncation != state.truncation:
        raise ValueError("generator and state live on different spaces")
    if not np.isfinite(complex(scale)):
        raise ValueError("scale must be finite")
    front, shape = _to_front(state.tensor(), generator.modes)
    out = expm_block(generator, front, scale, **options)
    return state.with_amplitudes(_from_front(out, shape, generator.modes).ravel())


def _check_normalized(norm_sq: float):
    if abs(norm_sq - 1.0) > 1e-6:
        raise ValueError(f"state is not normalized (norm^2 = {norm_sq:.8f})")


def marginal_distribution(state, mode: int) -> np.ndarray:
    """Photon-number distribution of one mode."""
    d = state.truncation.dim
    if isinstance(state, KetState):
        p = np.abs(state.tensor()) ** 2
    else:
        p = np.real(np.diag(state.matrix)).reshape((d,) * state.n_modes)
    axes = tuple(a for a in range(state.n_modes) if a != mode)
    return p.sum(axis=axes) if axes else p


def mean_photon_number(state, mode: Optional[int] = None) -> float:
    """<n> of one mode, or summed over all modes when ``mode`` is None."""
    probs = state.probabilities()
    _check_normalized(float(probs.sum()))
    n = np.arange(state.truncation.dim)
    modes = range(state.n_modes) if mode is None else [mode]
    return float(sum(marginal_distribution(state, m) @ n for m in modes))


def boundary_population(state: KetState, modes=None) -> float:
    """Largest single-mode population in the top Fock level."""
    modes = range(state.n_modes) if modes is None else modes
    return float(max(marginal_distribution(state, m)[-1] for m in modes))


def _is_rank_one(op: SparseOperator):
    if op.factor is not None:
        return np.asarray(op.factor, dtype=complex)
    m = op.matrix.tocoo()
    nz = m.data != 0
    if np.count_nonzero(nz) == 1:
        r, c, v = m.row[nz][0], m.col[nz][0], m.data[nz][0]
        if r == c and v.real > 0 and abs(v.imag) < 1e-15:
            f = np.zeros(op.local_dim, complex)
            f[r] = math.sqrt(v.real)
            return f
    return None


def herald_project(state, element: SparseOperator, measured_modes=None,
                   floor: float = DEFAULT_HERALD_FLOOR):
    """Condition on a measurement outcome and discard the measured modes.

    Returns ``(conditional_state, probability)``.  The result is a
    :class:`KetState` when ``state`` is pure and ``element`` is rank one,
    otherwise a :class:`MixedState`.
    """
    modes = tuple(element.modes if measured_modes is None else measured_modes)
    if len(modes) != len(element.modes):
        raise ValueError("measured_modes does not match the element arity")
    n = state.n_modes
    rest = [m for m in range(n) if m not in modes]
    if not rest:
        raise ValueError("at least one mode must remain unmeasured")
    t = state.truncation
    d = t.dim
    k_loc = d ** len(modes)
    if isinstance(state, KetState):
        psi, _ = _to_front(state.tensor(), modes)  # (k_loc, rest_dim), rest in original order
        vec = _is_rank_one(element)
        if vec is not None:
            out = vec.conj() @ psi
            prob = float(np.vdot(out, out).real)
            if prob < floor:
                raise HeraldImpossible(prob, floor)
            return KetState(out / math.sqrt(prob), len(rest), t, state.leakage), prob
        e = element.matrix
        rho = psi.T @ (e.T @ psi.conj())
    else:
        r = state.matrix.reshape((d,) * (2 * n))
        rows = list(modes) + rest
        cols = [n + m for m in rows]
        r = np.transpose(r, rows + cols).reshape(k_loc, -1, k_loc, d ** len(rest))
        e = element.matrix.toarray()
        rho = np.einsum("lk,kalb->ab", e, r, optimize=True)
    prob = float(np.trace(rho).real)
    if prob < floor:
        raise HeraldImpossible(prob, floor)
    rho = 0.5 * (rho + rho.conj().T) / prob
    return MixedState(rho, len(rest), t, state.leakage), prob


def partial_trace(state, traced_modes) -> MixedState:
    """Trace out ``traced_modes``."""
    t = state.truncation
    k = len(traced_modes)
    ident = SparseOperator(sp.identity(t.dim ** k, format="csr"), tuple(traced_modes), state.n_modes, t)
    if isinstance(state, KetState):
        psi, _ = _to_front(state.tensor(), traced_modes)
        rho = psi.T @ psi.conj()
        return MixedState(rho, state.n_modes - k, t, state.leakage)
    out, _ = herald_project(state, ident, traced_modes, floor=0.0)
    return out


__all__ = [
    "Truncation", "KetState", "MixedState", "SparseOperator", "ExpmActionError",
    "HeraldImpossible", "TruncationInsufficient", "build_ladder_ops", "embed_on_modes",
    "expm_action", "expm_block", "mean_photon_number", "herald_project", "partial_trace",
    "basis_index", "basis_occupations", "marginal_distribution", "boundary_population",
    "apply_local", "spectral_cache",
]
