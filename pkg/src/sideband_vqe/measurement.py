"""Projective readout simulation, energy estimation, MLE tomography, bootstrap.

Measurement outcomes are bitstrings in the rotated basis with the convention
bit 1 <-> eigenvalue +1 (matching sigma_z = |1><1| - |0><0|).  Records store
counts per observed bitstring and serialize to JSON lines.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .errors import ConfigError, DimensionError, NonConvergenceError
from .hilbert import (
    DensityOperator,
    HybridDensity,
    HybridState,
    StateEnsemble,
    partial_trace_boson,
)
from .model import ModelSpec, build_hamiltonian

# Rows are eigen-bras: row b of _BASIS_ROT[P] is <e_b^P| with eigenvalue 2b-1.
_SQ2 = 1.0 / math.sqrt(2.0)
_BASIS_ROT = {
    "X": np.array([[_SQ2, -_SQ2], [_SQ2, _SQ2]], dtype=complex),
    "Y": np.array([[_SQ2, -1j * _SQ2], [_SQ2, 1j * _SQ2]], dtype=complex),
    "Z": np.eye(2, dtype=complex),
}


@dataclass(frozen=True)
class MeasurementRecord:
    """Counts of measured bitstrings for one per-site Pauli setting."""

    basis: tuple
    counts: dict
    shots: int
    sites: tuple

    def __post_init__(self):
        basis = tuple(str(b) for b in self.basis)
        if any(b not in "XYZ" for b in basis):
            raise ConfigError(f"invalid basis labels {basis}")
        sites = tuple(int(s) for s in self.sites)
        if len(sites) != len(basis):
            raise DimensionError("basis and sites must have equal length")
        total = 0.0
        for bits, c in self.counts.items():
            if len(bits) != len(sites) or any(ch not in "01" for ch in bits):
                raise DimensionError(f"bad outcome bitstring {bits!r}")
            if c < 0:
                raise ConfigError("counts must be nonnegative")
            total += c
        if abs(total - self.shots) > 1e-6 * max(1, self.shots):
            raise ConfigError(f"counts sum {total} != shots {self.shots}")
        object.__setattr__(self, "basis", basis)
        object.__setattr__(self, "sites", sites)
        object.__setattr__(self, "counts", dict(self.counts))


@dataclass(frozen=True)
class EnergyEstimate:
    """Shot-based energy value with a propagated standard error."""

    value: float
    std_error: float
    shots_per_basis: int


def _normalize_basis(basis, n_sites: int):
    if isinstance(basis, str) and len(basis) == 1:
        return (basis,) * n_sites
    basis = tuple(str(b) for b in basis)
    if len(basis) != n_sites:
        raise DimensionError(f"basis length {len(basis)} != {n_sites} sites")
    return basis


def _rotation_matrix(basis) -> np.ndarray:
    mat = np.array([[1.0 + 0j]])
    for b in basis:
        if b not in _BASIS_ROT:
            raise ConfigError(f"invalid basis label {b!r}")
        mat = np.kron(mat, _BASIS_ROT[b])
    return mat


def born_distribution(obj, basis) -> np.ndarray:
    """Exact outcome probabilities for a per-site Pauli measurement.

    Works on HybridState / HybridDensity (all qubits; boson traced out),
    DensityOperator (its sites), and StateEnsemble (weighted mixture).
    """
    if isinstance(obj, StateEnsemble):
        probs = None
        for w, s in zip(obj.weights, obj.states):
            p = born_distribution(s, basis)
            probs = w * p if probs is None else probs + w * p
        return probs
    if isinstance(obj, HybridState):
        n = obj.n_qubits
        basis = _normalize_basis(basis, n)
        t = obj.as_grid().reshape((obj.d_max,) + (2,) * n)
        for site, b in enumerate(basis, start=1):
            if b == "Z":
                continue
            axis = site  # axis 0 is the Fock index
            t = np.moveaxis(np.tensordot(_BASIS_ROT[b], t, axes=([1], [axis])), 0, axis)
        flat = t.reshape(obj.d_max, 2**n)
        return np.einsum("nj,nj->j", flat, flat.conj()).real
    if isinstance(obj, HybridDensity):
        return born_distribution(partial_trace_boson(obj), basis)
    if isinstance(obj, DensityOperator):
        basis = _normalize_basis(basis, obj.n_sites)
        rot = _rotation_matrix(basis)
        probs = np.real(np.diag(rot @ obj.matrix @ rot.conj().T))
        probs = np.clip(probs, 0.0, None)
        return probs / probs.sum()
    raise DimensionError(f"cannot sample from {type(obj).__name__}")


def _sites_of(obj) -> tuple:
    if isinstance(obj, DensityOperator):
        return obj.sites
    if isinstance(obj, StateEnsemble):
        return tuple(range(1, obj.states[0].n_qubits + 1))
    return tuple(range(1, obj.n_qubits + 1))


def sample_measurements(obj, basis, shots: int, rng) -> MeasurementRecord:
    """Draw i.i.d. projective outcomes; deterministic for a seeded generator."""
    if shots < 1:
        raise ConfigError("shots must be >= 1")
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    sites = _sites_of(obj)
    basis = _normalize_basis(basis, len(sites))
    probs = born_distribution(obj, basis)
    draws = rng.multinomial(shots, probs)
    n = len(sites)
    counts = {
        format(j, f"0{n}b"): int(c) for j, c in enumerate(draws) if c > 0
    }
    return MeasurementRecord(basis, counts, shots, sites)


def expected_record(obj, basis, shots: int) -> MeasurementRecord:
    """Infinite-shot limit: counts proportional to the exact Born distribution."""
    sites = _sites_of(obj)
    basis = _normalize_basis(basis, len(sites))
    probs = born_distribution(obj, basis)
    n = len(sites)
    counts = {
        format(j, f"0{n}b"): float(shots * p) for j, p in enumerate(probs) if p > 0
    }
    return MeasurementRecord(basis, counts, shots, sites)


def _eigenvalue_columns(bits: str) -> np.ndarray:
    return np.array([1.0 if ch == "1" else -1.0 for ch in bits])


def estimate_energy(records: Mapping[str, MeasurementRecord], spec: ModelSpec) -> EnergyEstimate:
    """Energy from collective X/Y/Z records via per-shot correlator averages.

    Terms sharing a record are summed per shot before taking mean/variance,
    so their sampling covariance propagates into the error bar; independent
    bases contribute in quadrature.
    """
    for key in ("X", "Y", "Z"):
        if key not in records:
            raise ConfigError(f"missing collective basis record {key!r}")
    groups = {"X": [], "Y": [], "Z": []}
    for coeff, ops in build_hamiltonian(spec).terms:
        labels = {p for _, p in ops}
        if len(labels) != 1:
            raise ConfigError("estimator supports uniform Pauli strings only")
        groups[labels.pop()].append((coeff, [s for s, _ in ops]))

    value = 0.0
    variance = 0.0
    shots_seen = []
    n_sites = spec.n_sites
    for label, terms in groups.items():
        if not terms:
            continue
        rec = records[label]
        if rec.sites != tuple(range(1, n_sites + 1)):
            raise DimensionError(f"{label} record does not cover sites 1..{n_sites}")
        if any(b != label for b in rec.basis):
            raise ConfigError(f"record registered under {label!r} has basis {rec.basis}")
        shots_seen.append(rec.shots)
        mean_y = 0.0
        mean_y2 = 0.0
        for bits, c in rec.counts.items():
            eig = _eigenvalue_columns(bits)
            y = 0.0
            for coeff, term_sites in terms:
                prod = 1.0
                for s in term_sites:
                    prod *= eig[s - 1]
                y += coeff * prod
            w = c / rec.shots
            mean_y += w * y
            mean_y2 += w * y * y
        value += mean_y
        variance += max(0.0, mean_y2 - mean_y**2) / rec.shots
    shots_per_basis = int(min(shots_seen)) if shots_seen else 0
    return EnergyEstimate(float(value), float(math.sqrt(variance)), shots_per_basis)


def tomography_settings(n_sites: int):
    """All 3**n per-site Pauli settings, in lexicographic X<Y<Z order."""
    if n_sites < 1:
        raise ConfigError("n_sites must be >= 1")
    return list(itertools.product("XYZ", repeat=n_sites))


def _records_to_arrays(records: Sequence[MeasurementRecord]):
    n = len(records[0].sites)
    dim = 2**n
    settings = []
    freqs = []
    for rec in records:
        settings.append(rec.basis)
        row = np.zeros(dim)
        for bits, c in rec.counts.items():
            row[int(bits, 2)] = c
        freqs.append(row)
    return settings, np.array(freqs)


def mle_reconstruct(records: Sequence[MeasurementRecord], max_iter: int = 5000,
                    tol: float = 1e-10, return_info: bool = False):
    """Iterative maximum-likelihood reconstruction (R rho R fixed point).

    Starts from the maximally mixed state; the log-likelihood is required to
    be non-decreasing (a diluted step is substituted when the plain update
    would decrease it).  Stops at `tol` log-likelihood gain or `max_iter`.
    """
    if not records:
        raise ConfigError("no records supplied")
    sites = records[0].sites
    n = len(sites)
    expected = set(tomography_settings(n))
    seen = {rec.basis for rec in records}
    if seen != expected:
        raise ConfigError(
            f"records must cover all {len(expected)} settings, got {len(seen)}"
        )
    if any(rec.shots < 1 for rec in records):
        raise ConfigError("every setting needs shots >= 1")
    if any(rec.sites != sites for rec in records):
        raise DimensionError("all records must share the same site register")

    settings, freqs = _records_to_arrays(records)
    total = freqs.sum()
    dim = 2**n
    rot_stack = np.stack([_rotation_matrix(b) for b in settings])
    rot_dag = np.ascontiguousarray(rot_stack.conj().transpose(0, 2, 1))
    mask = freqs > 0

    def probs_of(rho):
        v = rot_stack @ rho  # batched (settings, dim, dim)
        p = np.einsum("sbk,sbk->sb", v, rot_stack.conj())
        return np.clip(p.real, 1e-300, None)

    def log_likelihood(p):
        return float(np.sum(freqs[mask] * np.log(p[mask])))

    def r_operator(p):
        ratio = freqs / p
        r = (rot_dag * ratio[:, None, :]) @ rot_stack
        return r.sum(axis=0) / total

    rho = np.eye(dim, dtype=complex) / dim
    p = probs_of(rho)
    ll = log_likelihood(p)
    history = [ll]
    converged = False
    for _ in range(max_iter):
        r = r_operator(p)
        cand = r @ rho @ r
        cand /= np.trace(cand).real
        p_cand = probs_of(cand)
        ll_cand = log_likelihood(p_cand)
        if ll_cand < ll - 1e-9:
            lam = 0.5
            eye = np.eye(dim)
            while lam >= 1e-6:
                r_lam = (1 - lam) * eye + lam * r
                cand = r_lam @ rho @ r_lam
                cand /= np.trace(cand).real
                p_cand = probs_of(cand)
                ll_cand = log_likelihood(p_cand)
                if ll_cand >= ll - 1e-12:
                    break
                lam *= 0.5
            else:
                raise NonConvergenceError(
                    "MLE iteration cannot maintain likelihood ascent",
                    last_iterate=DensityOperator(sites, rho),
                )
        gain = ll_cand - ll
        rho, p, ll = cand, p_cand, ll_cand
        history.append(ll)
        if gain < tol:
            converged = True
            break

    result = DensityOperator(sites, rho)
    if return_info:
        return result, {
            "log_likelihood": history,
            "iterations": len(history) - 1,
            "converged": converged,
        }
    return result


@dataclass(frozen=True)
class BootstrapResult:
    """Summary of a nonparametric bootstrap of a record statistic."""

    mean: float
    std: float
    ci_low: float
    ci_high: float
    n_failures: int
    n_resamples: int


def _resample_record(rec: MeasurementRecord, rng: np.random.Generator) -> MeasurementRecord:
    keys = sorted(rec.counts)
    weights = np.array([rec.counts[k] for k in keys], dtype=float)
    draws = rng.multinomial(int(round(rec.shots)), weights / weights.sum())
    counts = {k: int(c) for k, c in zip(keys, draws) if c > 0}
    return MeasurementRecord(rec.basis, counts, rec.shots, rec.sites)


def bootstrap_ci(records, statistic: Callable, resamples: int = 1000,
                 seed: Optional[int] = None, ci=(2.5, 97.5)) -> BootstrapResult:
    """Multinomial bootstrap of `statistic` over resampled measurement records.

    `records` may be a single record, a sequence, or a mapping; the statistic
    receives the same shape.  Failing resamples are skipped and counted.
    """
    if resamples < 100:
        raise ConfigError("need at least 100 bootstrap resamples")
    rng = np.random.default_rng(seed)

    def resample(obj):
        if isinstance(obj, MeasurementRecord):
            return _resample_record(obj, rng)
        if isinstance(obj, Mapping):
            return {k: resample(v) for k, v in obj.items()}
        return [resample(v) for v in obj]

    values = []
    failures = 0
    for _ in range(resamples):
        new = resample(records)
        try:
            values.append(float(statistic(new)))
        except Exception:
            failures += 1
    if not values:
        raise NonConvergenceError("statistic failed on every bootstrap resample")
    arr = np.array(values)
    lo, hi = np.percentile(arr, ci)
    return BootstrapResult(
        float(arr.mean()), float(arr.std(ddof=1)) if len(arr) > 1 else 0.0,
        float(lo), float(hi), failures, len(values),
    )


# --- serialization -----------------------------------------------------------

def record_to_json(rec: MeasurementRecord) -> str:
    doc = {
        "basis": "".join(rec.basis),
        "sites": list(rec.sites),
        "shots": rec.shots,
        "counts": {k: rec.counts[k] for k in sorted(rec.counts)},
    }
    return json.dumps(doc, sort_keys=True)


def record_from_json(line: str) -> MeasurementRecord:
    doc = json.loads(line)
    return MeasurementRecord(
        tuple(doc["basis"]), dict(doc["counts"]), doc["shots"], tuple(doc["sites"])
    )
