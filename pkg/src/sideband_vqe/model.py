"""Extended SSH spin chain: Hamiltonian builder and dense exact ground states.

H = sum_{k=1}^{N-1} [1 + (-1)^(k-1) t_minus] (XX + YY + delta ZZ)
    + B (sigma_1^z - sigma_N^z)

in dimensionless units with Pauli (not spin-1/2) operators.  The optional
boundary field B pins one of the two antiferromagnetic patterns and is used
to emulate spontaneous symmetry breaking at finite size.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import CapabilityError, ConfigError, DegenerateInputError, DimensionError, NumericalError
from .hilbert import DensityOperator, ObservableSpec, expectation, pauli_string_matrix

MAX_DENSE_SITES = 12


@dataclass(frozen=True)
class ModelSpec:
    """(N, t_minus, delta, B) defining the chain Hamiltonian."""

    n_sites: int
    t_minus: float = 0.0
    delta: float = 0.0
    b_field: float = 0.0

    def __post_init__(self):
        if self.n_sites < 2:
            raise ConfigError("n_sites must be >= 2")
        for name in ("t_minus", "delta", "b_field"):
            if not np.isfinite(getattr(self, name)):
                raise ConfigError(f"{name} must be finite")
        if not -1.0 <= self.t_minus <= 1.0:
            raise ConfigError("t_minus must lie in [-1, 1]")
        if self.delta < 0:
            raise ConfigError("delta must be >= 0")


@dataclass(frozen=True)
class SpectrumResult:
    """Lowest part of the spectrum and the (phase-fixed) ground vector."""

    energies: np.ndarray
    ground_state: np.ndarray
    degeneracy_gap: float

    @property
    def ground_energy(self) -> float:
        return float(self.energies[0])


def build_hamiltonian(spec: ModelSpec) -> ObservableSpec:
    """Pauli-term list of the chain Hamiltonian; exactly-zero terms are dropped."""
    terms = []
    for k in range(1, spec.n_sites):
        c = 1.0 + (-1.0) ** (k - 1) * spec.t_minus
        if c != 0.0:
            terms.append((c, {k: "X", k + 1: "X"}))
            terms.append((c, {k: "Y", k + 1: "Y"}))
            if spec.delta != 0.0:
                terms.append((c * spec.delta, {k: "Z", k + 1: "Z"}))
    if spec.b_field != 0.0:
        terms.append((spec.b_field, {1: "Z"}))
        terms.append((-spec.b_field, {spec.n_sites: "Z"}))
    return ObservableSpec(tuple(terms))


def dense_hamiltonian(spec: ModelSpec) -> np.ndarray:
    """Dense real-symmetric matrix of the Hamiltonian on 2**N dimensions."""
    n = spec.n_sites
    dim = 2**n
    ham = np.zeros((dim, dim))
    for coeff, ops in build_hamiltonian(spec).terms:
        ham += coeff * pauli_string_matrix(range(1, n + 1), ops).real
    return ham


def _fix_phase(vec: np.ndarray) -> np.ndarray:
    """Rotate the global phase so the largest-magnitude amplitude is real positive."""
    k = int(np.argmax(np.abs(vec)))
    phase = vec[k] / abs(vec[k])
    out = vec / phase
    if np.abs(out.imag).max() < 1e-10:
        out = out.real.astype(float)
    return out


@lru_cache(maxsize=128)
def exact_ground_state(spec: ModelSpec, n_energies: int = 8,
                       sector: str = "full") -> SpectrumResult:
    """Dense eigensolve of the chain; N is limited to 12 sites.

    `sector='sz0'` restricts the diagonalization to the zero-magnetization
    sector (valid for even N, where a zero-magnetization ground state always
    exists); `'full'` solves the complete matrix.
    """
    if spec.n_sites > MAX_DENSE_SITES:
        raise CapabilityError(
            f"dense solve limited to {MAX_DENSE_SITES} sites, got {spec.n_sites}"
        )
    if sector not in ("full", "sz0"):
        raise ConfigError(f"unknown sector {sector!r}")

    ham = dense_hamiltonian(spec)
    n = spec.n_sites
    if sector == "sz0":
        if n % 2 != 0:
            raise ConfigError("sz0 sector requires an even number of sites")
        popcount = np.array([bin(j).count("1") for j in range(2**n)])
        keep = np.where(popcount == n // 2)[0]
        sub = ham[np.ix_(keep, keep)]
        evals, evecs = np.linalg.eigh(sub)
        ground = np.zeros(2**n)
        ground[keep] = evecs[:, 0]
    else:
        evals, evecs = np.linalg.eigh(ham)
        ground = evecs[:, 0]

    ground = _fix_phase(ground.astype(complex))
    residual = np.linalg.norm(ham @ ground - evals[0] * ground)
    if residual > 1e-8:
        raise NumericalError(f"eigensolver residual {residual} above 1e-8")
    k = min(n_energies, len(evals))
    energies = np.array(evals[:k], dtype=float)
    energies.flags.writeable = False
    if isinstance(ground, np.ndarray):
        ground.flags.writeable = False
    gap = float(evals[1] - evals[0]) if len(evals) > 1 else float("inf")
    return SpectrumResult(energies, ground, gap)


def ground_state_density(spec: ModelSpec, **kwargs) -> DensityOperator:
    """Ground state as a DensityOperator over all sites."""
    result = exact_ground_state(spec, **kwargs)
    vec = result.ground_state.astype(complex)
    return DensityOperator(tuple(range(1, spec.n_sites + 1)), np.outer(vec, vec.conj()))


def energy_of(rho, spec: ModelSpec) -> float:
    """Tr[rho H] for a density operator covering all N sites (or a pure state)."""
    if isinstance(rho, DensityOperator) and rho.sites != tuple(range(1, spec.n_sites + 1)):
        raise DimensionError(
            f"density operator sites {rho.sites} do not cover 1..{spec.n_sites}"
        )
    return expectation(rho, build_hamiltonian(spec))


def relative_energy_error(energy: float, spec: ModelSpec) -> float:
    """(E_target - E) / E_target against the exact ground energy."""
    target = exact_ground_state(spec).ground_energy
    if target == 0.0:
        raise DegenerateInputError("relative error undefined for zero target energy")
    return (target - energy) / target
