"""Many-body topological invariants from a bulk density matrix, plus RSS.

The partial-reflection invariant divides Tr[rho_I R_I] by the mean purity of
the two halves (square root); the partial-time-reversal invariant conjugates
the partial transpose on the left half with u_T = prod_{i in I1} sigma_i^y
and normalizes by the mean purity to the power 3/2.  Both approach +1 / -1 /
0 in the trivial / topological / symmetry-broken phases.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, DegenerateInputError, DimensionError, NumericalError
from .hilbert import DensityOperator, PAULI, purity, reduce_qubits

_IMAG_TOL = 1e-9


@dataclass(frozen=True)
class MBTIResult:
    """Both invariants together with the half-subsystem purities."""

    z_r: float
    z_t: float
    purity_i1: float
    purity_i2: float
    n_sites: int


def _check_even(rho: DensityOperator):
    if rho.n_sites % 2 != 0:
        raise ConfigError(f"MBTI needs an even subsystem, got {rho.n_sites} sites")


def _halves(rho: DensityOperator):
    half = rho.n_sites // 2
    rho1 = reduce_qubits(rho, rho.sites[:half])
    rho2 = reduce_qubits(rho, rho.sites[half:])
    return rho1, rho2


def reflection_expectation(rho_i: DensityOperator) -> float:
    """Tr[rho R] with R reversing the site order (product of symmetric swaps)."""
    _check_even(rho_i)
    n = rho_i.n_sites
    dim = rho_i.dim
    # R|b_1 .. b_n> = |b_n .. b_1>; Tr[rho R] = sum_b rho[b, reverse(b)]
    rev = np.empty(dim, dtype=int)
    for b in range(dim):
        bits = format(b, f"0{n}b")
        rev[b] = int(bits[::-1], 2)
    val = rho_i.matrix[np.arange(dim), rev].sum()
    if abs(val.imag) > _IMAG_TOL:
        raise NumericalError(f"reflection expectation has imaginary residue {val.imag}")
    return float(val.real)


def partial_transpose_first_half(rho_i: DensityOperator) -> np.ndarray:
    """Matrix of rho^{T_1}, transposing the first half of the site register."""
    _check_even(rho_i)
    half = rho_i.n_sites // 2
    d1 = 2**half
    d2 = rho_i.dim // d1
    t = rho_i.matrix.reshape(d1, d2, d1, d2)
    return t.transpose(2, 1, 0, 3).reshape(rho_i.dim, rho_i.dim)


def _u_time_reversal(n_sites: int) -> np.ndarray:
    half = n_sites // 2
    mat = np.array([[1.0 + 0j]])
    for _ in range(half):
        mat = np.kron(mat, PAULI["Y"])
    return np.kron(mat, np.eye(2 ** (n_sites - half)))


def _purity_pair(rho_i, rho_i1, rho_i2):
    if rho_i1 is None or rho_i2 is None:
        rho_i1, rho_i2 = _halves(rho_i)
    return purity(rho_i1), purity(rho_i2)


def z_r(rho_i: DensityOperator, rho_i1: Optional[DensityOperator] = None,
        rho_i2: Optional[DensityOperator] = None) -> float:
    """Partial-reflection invariant Tr[rho R] / sqrt((Tr rho_1^2 + Tr rho_2^2)/2)."""
    _check_even(rho_i)
    p1, p2 = _purity_pair(rho_i, rho_i1, rho_i2)
    denom = np.sqrt((p1 + p2) / 2.0)
    if denom < 1e-12:
        raise DegenerateInputError("vanishing purity denominator in z_r")
    return reflection_expectation(rho_i) / denom


def z_t(rho_i: DensityOperator, rho_i1: Optional[DensityOperator] = None,
        rho_i2: Optional[DensityOperator] = None) -> float:
    """Partial-time-reversal invariant with denominator exponent 3/2."""
    _check_even(rho_i)
    p1, p2 = _purity_pair(rho_i, rho_i1, rho_i2)
    denom = ((p1 + p2) / 2.0) ** 1.5
    if denom < 1e-12:
        raise DegenerateInputError("vanishing purity denominator in z_t")
    u = _u_time_reversal(rho_i.n_sites)
    rho_t1 = partial_transpose_first_half(rho_i)
    val = np.trace(rho_i.matrix @ u @ rho_t1 @ u.conj().T)
    if abs(val.imag) > _IMAG_TOL:
        raise NumericalError(f"z_t numerator has imaginary residue {val.imag}")
    return float(val.real) / denom


def mbti_of(rho_i: DensityOperator) -> MBTIResult:
    """Evaluate both invariants on a bulk density operator."""
    _check_even(rho_i)
    rho_i1, rho_i2 = _halves(rho_i)
    return MBTIResult(
        z_r(rho_i, rho_i1, rho_i2),
        z_t(rho_i, rho_i1, rho_i2),
        purity(rho_i1),
        purity(rho_i2),
        rho_i.n_sites,
    )


def bulk_sites(n_sites: int, n_bulk: int = 4) -> tuple:
    """The central `n_bulk` sites of an N-site chain (e.g. 3..6 for N=8)."""
    if n_bulk > n_sites or (n_sites - n_bulk) % 2 != 0:
        raise ConfigError(f"cannot center {n_bulk} sites in a chain of {n_sites}")
    start = (n_sites - n_bulk) // 2 + 1
    return tuple(range(start, start + n_bulk))


def rss(data: Sequence[float], model: Sequence[float]) -> float:
    """Residual sum of squares between two equal-length value vectors."""
    data = np.asarray(data, dtype=float)
    model = np.asarray(model, dtype=float)
    if data.shape != model.shape:
        raise DimensionError(f"length mismatch {data.shape} vs {model.shape}")
    return float(np.sum((data - model) ** 2))


def rss_with_bootstrap_error(record_sets, statistic, model: Sequence[float],
                             resamples: int = 1000, seed: Optional[int] = None):
    """RSS of data MBTIs against model values, with a bootstrap spread.

    `record_sets` holds one record collection per sweep point and `statistic`
    maps a record collection to the data value (e.g. MLE reconstruction
    followed by z_r).  Every bootstrap pass resamples all points and
    recomputes the full RSS.
    """
    from .measurement import _resample_record, MeasurementRecord

    model = np.asarray(model, dtype=float)
    if len(record_sets) != len(model):
        raise DimensionError("one record set per model value required")
    point_values = np.array([float(statistic(rs)) for rs in record_sets])
    base = rss(point_values, model)

    rng = np.random.default_rng(seed)

    def resample(obj):
        if isinstance(obj, MeasurementRecord):
            return _resample_record(obj, rng)
        if isinstance(obj, dict):
            return {k: resample(v) for k, v in obj.items()}
        return [resample(v) for v in obj]

    draws = []
    for _ in range(resamples):
        vals = [float(statistic(resample(rs))) for rs in record_sets]
        draws.append(rss(np.array(vals), model))
    sigma = float(np.std(draws, ddof=1)) if len(draws) > 1 else 0.0
    return base, sigma
