"""Hardware-noise models: thermal boson input, heating, weighted Pauli errors.

Errors are inserted discretely after each sideband pulse (no continuous-time
integration).  The heating map acts with probability p per insertion,
p = Gamma_H * t(theta) with the pulse duration proportional to |theta|; the
jump branch applies the raising operator renormalized to unit weight, so the
map is trace preserving even though the verbatim (1-p) rho + p a'rho a form
is not.  Both channels exist in density-operator form and as per-trajectory
stochastic insertions; trajectories propagate in vectorized batches.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np

from .circuit import TranspiledCircuit, apply_sideband_batch, rotate_last_axis
from .errors import ConfigError, DimensionError, TruncationError
from .hilbert import (
    DEFAULT_LEAK_TOL,
    HybridDensity,
    HybridState,
    PAULI,
    StateEnsemble,
    basis_state,
)

DEFAULT_HEATING_RATE = 27.0      # phonons per second in the 8-ion crystal
DEFAULT_PULSE_TIME = 125e-6      # seconds for a theta = pi pulse


@dataclass(frozen=True)
class NoiseConfig:
    """Error-model parameters; rates in SI units, probabilities dimensionless."""

    nbar: float = 0.0
    heating_rate: float = DEFAULT_HEATING_RATE
    pulse_time: float = DEFAULT_PULSE_TIME
    pauli_pxy: float = 0.0
    pauli_pz: float = 0.0
    pauli_scope: str = "addressed"      # 'addressed' or 'all'
    mode: str = "density"               # 'density' or 'trajectories'
    n_trajectories: int = 1000

    def __post_init__(self):
        if self.nbar < 0 or self.heating_rate < 0:
            raise ConfigError("nbar and heating_rate must be >= 0")
        if self.pulse_time <= 0:
            raise ConfigError("pulse_time must be > 0")
        if self.pauli_pxy < 0 or self.pauli_pz < 0:
            raise ConfigError("Pauli probabilities must be >= 0")
        if 2 * self.pauli_pxy + self.pauli_pz > 1.0:
            raise ConfigError("2*p_xy + p_z must not exceed 1")
        if self.pauli_scope not in ("addressed", "all"):
            raise ConfigError(f"unknown pauli_scope {self.pauli_scope!r}")
        if self.mode not in ("density", "trajectories"):
            raise ConfigError(f"unknown noise mode {self.mode!r}")
        if self.mode == "trajectories" and self.n_trajectories < 1:
            raise ConfigError("n_trajectories must be >= 1")

    @property
    def has_channels(self) -> bool:
        return self.heating_rate > 0 or self.pauli_pxy > 0 or self.pauli_pz > 0


def thermal_boson_weights(nbar: float, d_max: int) -> np.ndarray:
    """Truncated geometric distribution p_n ~ nbar^n / (1+nbar)^(n+1), renormalized."""
    if nbar < 0:
        raise ConfigError("nbar must be >= 0")
    if nbar == 0.0:
        w = np.zeros(d_max)
        w[0] = 1.0
        return w
    n = np.arange(d_max)
    w = nbar**n / (1.0 + nbar) ** (n + 1)
    return w / w.sum()


def pulse_duration(theta: float, t_pi: float = DEFAULT_PULSE_TIME) -> float:
    """Laser-pulse length |theta|/pi * t_pi in seconds."""
    if t_pi <= 0:
        raise ConfigError("t_pi must be > 0")
    return abs(theta) / math.pi * t_pi


def circuit_duration(circuit: TranspiledCircuit, t_pi: float = DEFAULT_PULSE_TIME) -> float:
    """Total sequence length, the sum of individual pulse durations."""
    return sum(pulse_duration(p.theta, t_pi) for p in circuit.pulses)


def _raising_matrix(d_max: int) -> np.ndarray:
    """Truncated a^dagger: |n> -> sqrt(n+1) |n+1>, annihilating the top level."""
    a_dag = np.zeros((d_max, d_max))
    for n in range(d_max - 1):
        a_dag[n + 1, n] = math.sqrt(n + 1)
    return a_dag


def heating_channel(rho, p: float, d_max: Optional[int] = None,
                    leak_tol: float = DEFAULT_LEAK_TOL):
    """Density form of the heating map: (1-p) rho + p * (a' rho a)/Tr[a' rho a].

    `rho` is either a HybridDensity or a raw boson(-major) matrix whose
    dimension is d_max * m; the raising operator acts on the Fock index.
    """
    if not 0.0 <= p <= 1.0:
        raise ConfigError(f"heating probability {p} outside [0, 1]")
    if isinstance(rho, HybridDensity):
        out = heating_channel(np.array(rho.matrix), p, rho.d_max, rho.leak_tol)
        return HybridDensity(rho.n_qubits, rho.d_max, out, rho.leak_tol)
    if d_max is None:
        d_max = rho.shape[0]
    mat = np.asarray(rho, dtype=complex)
    if p == 0.0:
        return mat
    m = mat.shape[0] // d_max
    t = mat.reshape(d_max, m, d_max, m)
    top_weight = float(np.einsum("jj->", t[d_max - 1, :, d_max - 1, :]).real)
    if top_weight > leak_tol:
        raise TruncationError(
            f"heating jump from occupied top Fock level (weight {top_weight:.3e})"
        )
    root = np.sqrt(np.arange(1, d_max))
    jump = np.zeros_like(t)
    # a' rho a : shift both Fock indices up by one with sqrt(n+1) weights
    jump[1:, :, 1:, :] = (
        t[:-1, :, :-1, :] * root[:, None, None, None] * root[None, None, :, None]
    )
    jump = jump.reshape(mat.shape)
    norm = np.trace(jump).real
    return (1.0 - p) * mat + p * jump / norm


def heating_jump_state(state: HybridState) -> HybridState:
    """Normalized raising jump a'|psi> / ||a'|psi>|| on a pure hybrid state."""
    grid = state.as_grid()
    pre_top = float(np.vdot(grid[-1], grid[-1]).real)
    if pre_top > state.leak_tol:
        raise TruncationError(
            f"heating jump from occupied top Fock level (weight {pre_top:.3e})"
        )
    root = np.sqrt(np.arange(1, state.d_max))
    out = np.zeros_like(grid)
    out[1:] = grid[:-1] * root[:, None]
    nrm = np.linalg.norm(out)
    return state.replace_amplitudes((out / nrm).reshape(-1))


def _pauli_site_inplace(mat: np.ndarray, site: int, p_xy: float, p_z: float,
                        d_max: int) -> np.ndarray:
    """In-place weighted Pauli channel via its block action (p_x = p_y = p_xy).

    Matrix elements whose bit at `site` differs between row and column scale
    by 1 - 2 p_xy - 2 p_z; bit-diagonal blocks mix convexly with weight
    2 p_xy (population transfer by the X/Y branches).
    """
    dim = mat.shape[0]
    lead = d_max * 2 ** (site - 1)
    tail = dim // (lead * 2)
    view = mat.reshape(lead, 2, tail, lead, 2, tail)
    off = 1.0 - 2.0 * p_xy - 2.0 * p_z
    view[:, 0, :, :, 1, :] *= off
    view[:, 1, :, :, 0, :] *= off
    if p_xy > 0.0:
        q = 2.0 * p_xy
        b00 = view[:, 0, :, :, 0, :].copy()
        b11 = view[:, 1, :, :, 1, :]
        view[:, 0, :, :, 0, :] = (1.0 - q) * b00 + q * b11
        view[:, 1, :, :, 1, :] = q * b00 + (1.0 - q) * b11
    return mat


def weighted_pauli_channel(rho, site: int, p_xy: float, p_z: float,
                           n_qubits: Optional[int] = None,
                           d_max: int = 1):
    """Single-site channel (1 - 2p_xy - p_z) rho + sum_j p_j sigma_j rho sigma_j.

    Accepts a HybridDensity or a raw matrix over d_max x 2**n_qubits indices
    (use d_max=1 for qubit-only operators).
    """
    if p_xy < 0 or p_z < 0 or 2 * p_xy + p_z > 1.0:
        raise ConfigError("require p_xy, p_z >= 0 and 2 p_xy + p_z <= 1")
    if isinstance(rho, HybridDensity):
        out = weighted_pauli_channel(
            np.array(rho.matrix), site, p_xy, p_z, rho.n_qubits, rho.d_max
        )
        return HybridDensity(rho.n_qubits, rho.d_max, out, rho.leak_tol)
    mat = np.asarray(rho, dtype=complex)
    if n_qubits is None:
        n_qubits = int(round(math.log2(mat.shape[0] // d_max)))
    if not 1 <= site <= n_qubits:
        raise DimensionError(f"site {site} outside 1..{n_qubits}")
    if p_xy == 0.0 and p_z == 0.0:
        return mat
    return _pauli_site_inplace(np.array(mat), site, p_xy, p_z, d_max)


def pauli_kraus(p_xy: float, p_z: float) -> list:
    """Single-qubit Kraus operators of the weighted Pauli channel."""
    if p_xy < 0 or p_z < 0 or 2 * p_xy + p_z > 1.0:
        raise ConfigError("require p_xy, p_z >= 0 and 2 p_xy + p_z <= 1")
    ops = [math.sqrt(1.0 - 2 * p_xy - p_z) * PAULI["I"]]
    if p_xy > 0:
        ops.append(math.sqrt(p_xy) * PAULI["X"])
        ops.append(math.sqrt(p_xy) * PAULI["Y"])
    if p_z > 0:
        ops.append(math.sqrt(p_z) * PAULI["Z"])
    return ops


def heating_kraus(p: float, d_max: int, jump_norm: float) -> list:
    """Kraus pair of the heating map at a fixed jump normalization constant."""
    if not 0.0 <= p <= 1.0:
        raise ConfigError(f"heating probability {p} outside [0, 1]")
    return [
        math.sqrt(1.0 - p) * np.eye(d_max),
        math.sqrt(p / jump_norm) * _raising_matrix(d_max),
    ]


def choi_matrix(kraus: Sequence[np.ndarray]) -> np.ndarray:
    """Choi matrix sum_k vec(K_k) vec(K_k)^dagger (column-stacking convention)."""
    vecs = [np.asarray(k, dtype=complex).reshape(-1) for k in kraus]
    dim = vecs[0].shape[0]
    choi = np.zeros((dim, dim), dtype=complex)
    for v in vecs:
        choi += np.outer(v, v.conj())
    return choi


# --- propagation engines ------------------------------------------------------

def _pauli_sites(pulse_ion: int, n_qubits: int, scope: str):
    return [pulse_ion] if scope == "addressed" else list(range(1, n_qubits + 1))


def rotate_density(mat: np.ndarray, n_qubits: int, d_max: int, pulse) -> np.ndarray:
    """In-place U rho U^dagger for one pulse, via contiguous block-slice updates.

    The real rotation (phase 0) acts identically on rows and columns; a
    nonzero optical phase falls back to the generic per-axis kernel.  Rows
    and columns are addressed through reshape views so every update streams
    over contiguous memory runs instead of gathered index lists.
    """
    if pulse.phase != 0.0:
        rotate_last_axis(mat.T, n_qubits, d_max, pulse)
        rotate_last_axis(mat, n_qubits, d_max, pulse, conj=True)
        return mat
    dim = mat.shape[0]
    lead = 2 ** (pulse.ion - 1)
    tail = 2 ** (n_qubits - pulse.ion)
    # axis grouping (fock, lead, bit, tail) on rows, then on columns
    rows = mat.reshape(d_max, lead, 2, tail, dim)
    cols = mat.reshape(dim, d_max, lead, 2, tail)
    for n in range(d_max - 1):
        half = 0.5 * pulse.theta * math.sqrt(n + 1)
        c, s = math.cos(half), math.sin(half)
        a = rows[n, :, 0, :, :].copy()
        b = rows[n + 1, :, 1, :, :]
        rows[n, :, 0, :, :] = c * a + s * b
        rows[n + 1, :, 1, :, :] = -s * a + c * b
    for n in range(d_max - 1):
        half = 0.5 * pulse.theta * math.sqrt(n + 1)
        c, s = math.cos(half), math.sin(half)
        a = cols[:, n, :, 0, :].copy()
        b = cols[:, n + 1, :, 1, :]
        cols[:, n, :, 0, :] = c * a + s * b
        cols[:, n + 1, :, 1, :] = -s * a + c * b
    return mat


def run_density(initial, circuit: TranspiledCircuit, noise: NoiseConfig) -> HybridDensity:
    """Deterministic density-operator propagation through the noisy circuit."""
    if isinstance(initial, HybridState):
        amps = initial.amplitudes
        mat = np.outer(amps, amps.conj())
        initial = HybridDensity(initial.n_qubits, initial.d_max, mat, initial.leak_tol)
    n_qubits, d_max, leak_tol = initial.n_qubits, initial.d_max, initial.leak_tol
    mat = np.array(initial.matrix)
    m = 2**n_qubits
    top = slice((d_max - 1) * m, d_max * m)
    for pulse in circuit.pulses:
        rotate_density(mat, n_qubits, d_max, pulse)
        top_pop = float(np.trace(mat[top, top]).real)
        if top_pop > leak_tol:
            raise TruncationError(
                f"top Fock level population {top_pop:.3e} exceeds leak_tol={leak_tol:.1e}"
            )
        if noise.heating_rate > 0:
            p = noise.heating_rate * pulse_duration(pulse.theta, noise.pulse_time)
            mat = heating_channel(mat, p, d_max, leak_tol)
        if noise.pauli_pxy > 0 or noise.pauli_pz > 0:
            for site in _pauli_sites(pulse.ion, n_qubits, noise.pauli_scope):
                _pauli_site_inplace(mat, site, noise.pauli_pxy, noise.pauli_pz, d_max)
    return HybridDensity(n_qubits, d_max, mat, leak_tol)


def _apply_pauli_batch(batch: np.ndarray, n_qubits: int, d_max: int,
                       site: int, which: np.ndarray):
    """Apply X/Y/Z (codes 1/2/3 in `which`, 0 = identity) to selected rows."""
    rows = batch.shape[0]
    lead = d_max * 2 ** (site - 1)
    tail = batch.shape[1] // (lead * 2)
    t = batch.reshape(rows, lead, 2, tail)
    for code in (1, 2, 3):
        sel = which == code
        if not np.any(sel):
            continue
        sub = t[sel]
        if code == 1:      # X: flip
            sub = sub[:, :, ::-1, :]
        elif code == 2:    # Y: flip with +i on new |0>, -i on new |1>
            sub = sub[:, :, ::-1, :].copy()
            sub[:, :, 0, :] *= 1j
            sub[:, :, 1, :] *= -1j
        else:              # Z: sign on |0> (sigma_z = diag(-1, +1))
            sub = sub.copy()
            sub[:, :, 0, :] *= -1.0
        t[sel] = sub
    return batch


def _heating_jump_batch(batch: np.ndarray, n_qubits: int, d_max: int,
                        sel: np.ndarray, leak_tol: float):
    """Apply the normalized raising jump to rows selected by boolean `sel`."""
    if not np.any(sel):
        return batch
    m = 2**n_qubits
    sub = batch[sel].reshape(-1, d_max, m)
    pre_top = np.einsum("rj,rj->r", sub[:, -1, :], sub[:, -1, :].conj()).real
    if pre_top.max() > leak_tol:
        raise TruncationError(
            f"heating jump from occupied top Fock level (weight {pre_top.max():.3e})"
        )
    root = np.sqrt(np.arange(1, d_max))
    out = np.zeros_like(sub)
    out[:, 1:, :] = sub[:, :-1, :] * root[None, :, None]
    out = out.reshape(sel.sum(), -1)
    norms = np.linalg.norm(out, axis=1, keepdims=True)
    batch[sel] = out / norms
    return batch


def run_trajectories(initial_bits: str, circuit: TranspiledCircuit, noise: NoiseConfig,
                     d_max: int, rng: np.random.Generator,
                     n_trajectories: Optional[int] = None,
                     leak_tol: float = DEFAULT_LEAK_TOL) -> StateEnsemble:
    """Stochastic-trajectory propagation; returns the final pure-state ensemble.

    The initial Fock level of each trajectory is drawn from the thermal
    distribution; heating jumps and Pauli errors are inserted after each
    pulse.  All trajectories advance together as one (n_traj, dim) batch.
    """
    n_traj = noise.n_trajectories if n_trajectories is None else n_trajectories
    n_qubits = circuit.n_qubits
    m = 2**n_qubits
    dim = d_max * m
    weights = truncated_thermal_weights(noise.nbar, d_max, n_qubits)
    fock0 = rng.choice(d_max, size=n_traj, p=weights)
    j = int(initial_bits, 2)
    batch = np.zeros((n_traj, dim), dtype=complex)
    batch[np.arange(n_traj), fock0 * m + j] = 1.0

    p_err = 2 * noise.pauli_pxy + noise.pauli_pz
    for pulse in circuit.pulses:
        apply_sideband_batch(batch, n_qubits, d_max, pulse, leak_tol)
        if noise.heating_rate > 0:
            p = noise.heating_rate * pulse_duration(pulse.theta, noise.pulse_time)
            sel = rng.random(n_traj) < p
            _heating_jump_batch(batch, n_qubits, d_max, sel, leak_tol)
        if p_err > 0:
            for site in _pauli_sites(pulse.ion, n_qubits, noise.pauli_scope):
                u = rng.random(n_traj)
                which = np.zeros(n_traj, dtype=int)
                which[u < noise.pauli_pxy] = 1
                which[(u >= noise.pauli_pxy) & (u < 2 * noise.pauli_pxy)] = 2
                which[(u >= 2 * noise.pauli_pxy) & (u < p_err)] = 3
                _apply_pauli_batch(batch, n_qubits, d_max, site, which)

    states = tuple(
        HybridState(n_qubits, d_max, batch[i], leak_tol) for i in range(n_traj)
    )
    return StateEnsemble(np.full(n_traj, 1.0 / n_traj), states)


def thermal_ensemble_run(initial_bits: str, circuit: TranspiledCircuit, nbar: float,
                         d_max: int, leak_tol: float = DEFAULT_LEAK_TOL) -> StateEnsemble:
    """Exact unitary run over the thermal mixture of initial Fock levels.

    Valid when no per-pulse channels act (heating and Pauli rates zero); the
    output mixes the per-Fock-level pure runs with the (truncated) thermal
    weights.
    """
    n_qubits = circuit.n_qubits
    weights = truncated_thermal_weights(nbar, d_max, n_qubits)
    keep = weights > 1e-14
    states = []
    kept_weights = weights[keep] / weights[keep].sum()
    for n in np.nonzero(keep)[0]:
        state = basis_state(n_qubits, d_max, initial_bits, int(n), leak_tol)
        for pulse in circuit.pulses:
            amps = state.amplitudes.copy()
            rotate_last_axis(amps, n_qubits, d_max, pulse)
            state = state.replace_amplitudes(amps)
        top = state.top_fock_population()
        if top > leak_tol:
            raise TruncationError(
                f"top Fock level population {top:.3e} exceeds leak_tol={leak_tol:.1e}"
            )
        states.append(state)
    return StateEnsemble(kept_weights, tuple(states))


def truncated_thermal_weights(nbar: float, d_max: int, n_qubits: int,
                              max_dropped: float = 1e-3) -> np.ndarray:
    """Thermal weights cut at the highest level whose excursion fits d_max.

    A charge-conserving circuit can raise an initial level k to k + N/2, so
    levels above d_max - 1 - N/2 would overrun the truncation; their weight
    is dropped and the rest renormalized.  Raises if the dropped mass exceeds
    `max_dropped` (increase d_max in that case).
    """
    weights = thermal_boson_weights(nbar, d_max)
    top_init = max(0, d_max - 1 - n_qubits // 2)
    dropped = float(weights[top_init + 1:].sum())
    if dropped > max_dropped:
        raise ConfigError(
            f"thermal tail {dropped:.2e} beyond initial level {top_init} "
            f"exceeds {max_dropped:.0e}; increase d_max"
        )
    out = np.zeros(d_max)
    out[: top_init + 1] = weights[: top_init + 1]
    return out / out.sum()


def thermal_initial_density(bits: str, nbar: float, d_max: int,
                            leak_tol: float = DEFAULT_LEAK_TOL) -> HybridDensity:
    """Truncated thermal boson mixture tensored with the pattern |bits>."""
    n_qubits = len(bits)
    m = 2**n_qubits
    j = int(bits, 2)
    weights = truncated_thermal_weights(nbar, d_max, n_qubits)
    mat = np.zeros((d_max * m, d_max * m), dtype=complex)
    for n, w in enumerate(weights):
        mat[n * m + j, n * m + j] = w
    return HybridDensity(n_qubits, d_max, mat, leak_tol)


def run_noisy_circuit(initial: HybridState, circuit: TranspiledCircuit,
                      noise: NoiseConfig, rng: Optional[np.random.Generator] = None):
    """Dispatch a noisy circuit run per NoiseConfig.mode.

    Density mode starts from the thermal mixture of the initial qubit
    pattern; trajectory mode needs an `rng` and returns a StateEnsemble.
    """
    if noise.mode == "density":
        bits = _bits_of_basis_state(initial)
        hybrid = thermal_initial_density(bits, noise.nbar, initial.d_max, initial.leak_tol)
        return run_density(hybrid, circuit, noise)
    if rng is None:
        raise ConfigError("trajectory mode requires a seeded random generator")
    bits = _bits_of_basis_state(initial)
    return run_trajectories(bits, circuit, noise, initial.d_max, rng,
                            leak_tol=initial.leak_tol)


def _bits_of_basis_state(state: HybridState) -> str:
    grid = state.as_grid()
    flat = np.abs(state.amplitudes)
    k = int(np.argmax(flat))
    if abs(flat[k] - 1.0) > 1e-9:
        raise ConfigError("noisy runs start from a computational basis state")
    j = k % state.qubit_dim
    return format(j, f"0{state.n_qubits}b")
