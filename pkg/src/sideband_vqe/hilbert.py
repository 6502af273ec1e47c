"""States, density operators and observables on the hybrid boson-qubit space.

The simulator works on H = H_boson(d_max) (x) (C^2)^(x)N with a fixed index
layout that every module relies on:

* amplitude index = n * 2**n_qubits + j  (Fock level major, bitstring minor),
* the bitstring j reads left to right as ion 1 ... ion N (ion 1 = most
  significant bit), bit value 1 = excited |1>,
* sigma_z = |1><1| - |0><0|, i.e. the excited state has eigenvalue +1.  With
  this choice the sideband dynamics conserves (1/2) sum_k sigma_z^k - n_boson.

Ion/site indices are 1-based throughout the public API.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    ConfigError,
    DimensionError,
    NumericalError,
    TruncationError,
)

# Pauli matrices in basis order (|0>, |1>) with sigma_z|1> = +|1>.
PAULI = {
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, 1j], [-1j, 0]], dtype=complex),
    "Z": np.array([[-1, 0], [0, 1]], dtype=complex),
    "I": np.eye(2, dtype=complex),
}

DEFAULT_LEAK_TOL = 1e-6

_NORM_TOL = 1e-10
_HERM_TOL = 1e-10
_TRACE_TOL = 1e-9
_EIG_TOL = 1e-9
_IMAG_TOL = 1e-6


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class HybridState:
    """Pure state on the truncated boson mode tensor N qubits."""

    n_qubits: int
    d_max: int
    amplitudes: np.ndarray
    leak_tol: float = DEFAULT_LEAK_TOL

    def __post_init__(self):
        if self.n_qubits < 1 or self.d_max < 1:
            raise DimensionError("n_qubits and d_max must be positive")
        amps = np.asarray(self.amplitudes, dtype=complex)
        if amps.shape != (self.dim,):
            raise DimensionError(
                f"amplitude vector has shape {amps.shape}, expected ({self.dim},)"
            )
        norm = np.linalg.norm(amps)
        if abs(norm - 1.0) > _NORM_TOL:
            raise NumericalError(f"state norm {norm} deviates from 1 beyond {_NORM_TOL}")
        object.__setattr__(self, "amplitudes", _readonly(amps))

    @property
    def qubit_dim(self) -> int:
        return 2**self.n_qubits

    @property
    def dim(self) -> int:
        return self.d_max * 2**self.n_qubits

    def as_grid(self) -> np.ndarray:
        """View of the amplitudes with shape (d_max, 2**n_qubits)."""
        return self.amplitudes.reshape(self.d_max, self.qubit_dim)

    def top_fock_population(self) -> float:
        """Probability in the highest retained Fock level d_max - 1."""
        top = self.as_grid()[-1]
        return float(np.vdot(top, top).real)

    def replace_amplitudes(self, amps: np.ndarray) -> "HybridState":
        return HybridState(self.n_qubits, self.d_max, amps, self.leak_tol)


@dataclass(frozen=True)
class HybridDensity:
    """Mixed state on the full boson-qubit space (density-mode propagation)."""

    n_qubits: int
    d_max: int
    matrix: np.ndarray
    leak_tol: float = DEFAULT_LEAK_TOL

    def __post_init__(self):
        dim = self.d_max * 2**self.n_qubits
        mat = np.asarray(self.matrix, dtype=complex)
        if mat.shape != (dim, dim):
            raise DimensionError(f"matrix shape {mat.shape}, expected ({dim}, {dim})")
        tr = np.trace(mat)
        if abs(tr - 1.0) > _TRACE_TOL:
            raise NumericalError(f"hybrid density trace {tr} deviates from 1")
        object.__setattr__(self, "matrix", _readonly(mat))

    @property
    def qubit_dim(self) -> int:
        return 2**self.n_qubits

    def top_fock_population(self) -> float:
        m = self.qubit_dim
        top = slice((self.d_max - 1) * m, self.d_max * m)
        return float(np.trace(self.matrix[top, top]).real)


@dataclass(frozen=True)
class StateEnsemble:
    """Weighted ensemble of pure hybrid states (trajectory / thermal mixtures)."""

    weights: np.ndarray
    states: tuple

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if len(w) != len(self.states) or len(w) == 0:
            raise DimensionError("weights and states must have equal nonzero length")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise NumericalError("ensemble weights must be nonnegative and sum to 1")
        object.__setattr__(self, "weights", _readonly(w))
        object.__setattr__(self, "states", tuple(self.states))


@dataclass(frozen=True)
class DensityOperator:
    """Hermitian, PSD, unit-trace operator on an ordered subset of qubits.

    Construction enforces the invariants: Hermiticity within 1e-10,
    eigenvalues >= -1e-9 (tiny negatives are clipped and the trace is
    renormalized, larger violations raise), trace within 1e-9 of one.
    """

    sites: tuple
    matrix: np.ndarray

    def __post_init__(self):
        sites = tuple(int(s) for s in self.sites)
        if len(sites) == 0 or len(set(sites)) != len(sites):
            raise DimensionError("sites must be a nonempty list of distinct indices")
        dim = 2 ** len(sites)
        mat = np.asarray(self.matrix, dtype=complex)
        if mat.shape != (dim, dim):
            raise DimensionError(f"matrix shape {mat.shape}, expected ({dim}, {dim})")
        herm_residue = np.abs(mat - mat.conj().T).max()
        if herm_residue > _HERM_TOL:
            raise NumericalError(f"Hermiticity residue {herm_residue} above {_HERM_TOL}")
        mat = 0.5 * (mat + mat.conj().T)
        tr = np.trace(mat).real
        if abs(tr - 1.0) > _TRACE_TOL:
            raise NumericalError(f"trace {tr} deviates from 1 beyond {_TRACE_TOL}")
        evals, evecs = np.linalg.eigh(mat)
        if evals.min() < -_EIG_TOL:
            raise NumericalError(f"eigenvalue {evals.min()} below -{_EIG_TOL}")
        if evals.min() < 0.0:
            clipped = np.clip(evals, 0.0, None)
            mat = (evecs * clipped) @ evecs.conj().T
            mat = mat / np.trace(mat).real
        object.__setattr__(self, "sites", sites)
        object.__setattr__(self, "matrix", _readonly(mat))

    @property
    def n_sites(self) -> int:
        return len(self.sites)

    @property
    def dim(self) -> int:
        return 2 ** len(self.sites)


@dataclass(frozen=True)
class ObservableSpec:
    """Weighted sum of Pauli strings; terms are (coefficient, {site: 'X'|'Y'|'Z'})."""

    terms: tuple

    def __post_init__(self):
        norm_terms = []
        for coeff, paulis in self.terms:
            c = float(coeff)
            if not np.isfinite(c):
                raise ConfigError("observable coefficients must be finite")
            if isinstance(paulis, Mapping):
                items = paulis.items()
            else:
                items = paulis
            ops = tuple(sorted((int(site), str(p)) for site, p in items))
            for site, p in ops:
                if site < 1:
                    raise DimensionError(f"site index {site} out of range (1-based)")
                if p not in ("X", "Y", "Z"):
                    raise ConfigError(f"unknown Pauli label {p!r}")
            norm_terms.append((c, ops))
        object.__setattr__(self, "terms", tuple(norm_terms))

    def max_site(self) -> int:
        return max((site for _, ops in self.terms for site, _ in ops), default=1)


def bit_position(n_qubits: int, site: int) -> int:
    """Shift of `site` in the bitstring integer (ion 1 = most significant bit)."""
    if not 1 <= site <= n_qubits:
        raise DimensionError(f"site {site} outside 1..{n_qubits}")
    return n_qubits - site


def basis_state(n_qubits: int, d_max: int, bits: str, fock_n: int,
                leak_tol: float = DEFAULT_LEAK_TOL) -> HybridState:
    """Computational basis state |bits> (x) |fock_n>."""
    if len(bits) != n_qubits or any(b not in "01" for b in bits):
        raise DimensionError(f"bitstring {bits!r} does not match n_qubits={n_qubits}")
    if not 0 <= fock_n < d_max:
        raise TruncationError(f"Fock level {fock_n} outside truncation d_max={d_max}")
    amps = np.zeros(d_max * 2**n_qubits, dtype=complex)
    j = int(bits, 2)
    amps[fock_n * 2**n_qubits + j] = 1.0
    return HybridState(n_qubits, d_max, amps, leak_tol)


def neel_bits(n_qubits: int) -> str:
    """Alternating input pattern 0101... (even sites excited)."""
    return ("01" * ((n_qubits + 1) // 2))[:n_qubits]


def partial_trace_boson(state) -> DensityOperator:
    """Trace out the boson mode, returning the qubit density operator.

    Accepts a HybridState, HybridDensity, or StateEnsemble.
    """
    if isinstance(state, HybridState):
        grid = state.as_grid()
        rho = grid.T @ grid.conj()
        n = state.n_qubits
    elif isinstance(state, HybridDensity):
        m = state.qubit_dim
        t = state.matrix.reshape(state.d_max, m, state.d_max, m)
        rho = np.einsum("ajak->jk", t)
        n = state.n_qubits
    elif isinstance(state, StateEnsemble):
        n = state.states[0].n_qubits
        rho = np.zeros((2**n, 2**n), dtype=complex)
        for w, s in zip(state.weights, state.states):
            grid = s.as_grid()
            rho += w * (grid.T @ grid.conj())
    else:
        raise DimensionError(f"cannot trace boson from {type(state).__name__}")
    return DensityOperator(tuple(range(1, n + 1)), rho)


def reduce_qubits(rho: DensityOperator, keep: Sequence[int]) -> DensityOperator:
    """Partial trace over all sites not in `keep` (order follows rho.sites)."""
    keep = [int(k) for k in keep]
    if len(keep) == 0:
        raise DimensionError("keep list must be nonempty")
    missing = [k for k in keep if k not in rho.sites]
    if missing:
        raise DimensionError(f"sites {missing} not present in operator over {rho.sites}")
    n = rho.n_sites
    positions = {s: i for i, s in enumerate(rho.sites)}
    keep_pos = sorted(positions[k] for k in keep)
    out_sites = tuple(rho.sites[i] for i in keep_pos)
    trace_pos = [i for i in range(n) if i not in keep_pos]
    t = rho.matrix.reshape([2] * (2 * n))
    perm = keep_pos + trace_pos + [n + i for i in keep_pos] + [n + i for i in trace_pos]
    t = t.transpose(perm)
    dk = 2 ** len(keep_pos)
    dt = 2 ** len(trace_pos)
    t = t.reshape(dk, dt, dk, dt)
    reduced = np.trace(t, axis1=1, axis2=3)
    return DensityOperator(out_sites, reduced)


def _apply_pauli_string_to_grid(grid: np.ndarray, n_qubits: int, ops) -> np.ndarray:
    """Apply a product of single-site Paulis to amplitudes shaped (d, 2**n)."""
    t = grid.reshape((grid.shape[0],) + (2,) * n_qubits)
    for site, p in ops:
        axis = 1 + (site - 1)
        if p == "X":
            t = np.flip(t, axis=axis)
        elif p == "Y":
            t = np.flip(t, axis=axis).copy()
            sl0 = [slice(None)] * t.ndim
            sl1 = [slice(None)] * t.ndim
            sl0[axis] = 0
            sl1[axis] = 1
            t[tuple(sl0)] *= 1j
            t[tuple(sl1)] *= -1j
        elif p == "Z":
            t = t.copy()
            sl0 = [slice(None)] * t.ndim
            sl0[axis] = 0
            t[tuple(sl0)] *= -1.0
    return t.reshape(grid.shape)


def pauli_string_matrix(sites: Sequence[int], ops) -> np.ndarray:
    """Dense matrix of a Pauli string on the ordered `sites` register."""
    labels = dict(ops)
    mat = np.array([[1.0 + 0j]])
    for s in sites:
        mat = np.kron(mat, PAULI[labels.get(s, "I")])
    return mat


def expectation(obj, obs: ObservableSpec) -> float:
    """Expectation value sum_terms c * <P> for a state, density, or ensemble.

    Raises NumericalError if the accumulated imaginary residue exceeds 1e-6;
    smaller residues are discarded.
    """
    if isinstance(obj, StateEnsemble):
        vals = [expectation(s, obs) for s in obj.states]
        return float(np.dot(obj.weights, vals))

    total = 0.0 + 0.0j
    if isinstance(obj, HybridState):
        for _, ops in obs.terms:
            for site, _ in ops:
                if site > obj.n_qubits:
                    raise DimensionError(f"observable site {site} beyond n_qubits={obj.n_qubits}")
        grid = obj.as_grid()
        for coeff, ops in obs.terms:
            acted = _apply_pauli_string_to_grid(grid, obj.n_qubits, ops)
            total += coeff * np.vdot(grid, acted)
    elif isinstance(obj, HybridDensity):
        m = obj.qubit_dim
        t = obj.matrix.reshape(obj.d_max, m, obj.d_max, m)
        rho_q = np.einsum("ajak->jk", t)
        for coeff, ops in obs.terms:
            pmat = pauli_string_matrix(range(1, obj.n_qubits + 1), ops)
            total += coeff * np.trace(rho_q @ pmat)
    elif isinstance(obj, DensityOperator):
        site_set = set(obj.sites)
        for _, ops in obs.terms:
            for site, _ in ops:
                if site not in site_set:
                    raise DimensionError(f"observable site {site} not in {obj.sites}")
        for coeff, ops in obs.terms:
            pmat = pauli_string_matrix(obj.sites, ops)
            total += coeff * np.trace(obj.matrix @ pmat)
    else:
        raise DimensionError(f"cannot take expectation on {type(obj).__name__}")

    if abs(total.imag) > _IMAG_TOL:
        raise NumericalError(f"imaginary residue {total.imag} above {_IMAG_TOL}")
    return float(total.real)


def purity(rho: DensityOperator) -> float:
    """Tr[rho^2], in [1/dim, 1]."""
    return float(np.trace(rho.matrix @ rho.matrix).real)


def _dominant_eigvec(mat: np.ndarray):
    evals, evecs = np.linalg.eigh(mat)
    return evals[-1], evecs[:, -1]


def fidelity(rho: DensityOperator, sigma: DensityOperator) -> float:
    """Uhlmann fidelity (Tr sqrt(sqrt(rho) sigma sqrt(rho)))^2.

    Pure inputs short-circuit to the overlap form <psi|sigma|psi>.
    """
    if rho.matrix.shape != sigma.matrix.shape:
        raise DimensionError("fidelity requires operators of equal dimension")
    if purity(rho) >= 1.0 - 1e-10:
        _, psi = _dominant_eigvec(rho.matrix)
        return float(np.real(psi.conj() @ sigma.matrix @ psi))
    if purity(sigma) >= 1.0 - 1e-10:
        _, psi = _dominant_eigvec(sigma.matrix)
        return float(np.real(psi.conj() @ rho.matrix @ psi))
    evals, evecs = np.linalg.eigh(rho.matrix)
    if evals.min() < -_EIG_TOL:
        raise NumericalError("fidelity input not PSD within tolerance")
    sqrt_rho = (evecs * np.sqrt(np.clip(evals, 0.0, None))) @ evecs.conj().T
    inner = sqrt_rho @ sigma.matrix @ sqrt_rho
    w = np.linalg.eigvalsh(inner)
    return float(np.sum(np.sqrt(np.clip(w, 0.0, None))) ** 2)
