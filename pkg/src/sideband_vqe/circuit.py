"""Blue-sideband pulses, the staircase circuit template, and transpilation.

A pulse with angle theta on ion k rotates every pair (|0_k, n>, |1_k, n+1>)
by the mixing angle theta*sqrt(n+1)/2, i.e. it is exp(-i (theta/2) G_k) with
G_k = i(a sigma_k^- - a^dagger sigma_k^+).  theta is normalized so that
theta = pi fully transfers |0, n=0> -> |1, n=1> (a "pi pulse"); population
transfer from |0, n> is sin^2(theta sqrt(n+1) / 2).  Amplitudes on unpaired
basis states (|1_k, 0> and |0_k, d_max-1>) are left untouched; weight
accumulating in the top Fock level trips the leakage guard.

Angles are radians everywhere in this module; serialization divides by pi.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Sequence, Union

import numpy as np

from .errors import ConfigError, DimensionError, TruncationError
from .hilbert import DEFAULT_LEAK_TOL, HybridState, StateEnsemble, basis_state, neel_bits

PRUNE_THRESHOLD = 0.03 * math.pi


@dataclass(frozen=True)
class SidebandPulse:
    """One addressed blue-sideband pulse: ion index, angle (rad), optical phase."""

    ion: int
    theta: float
    phase: float = 0.0

    def __post_init__(self):
        if not (np.isfinite(self.theta) and np.isfinite(self.phase)):
            raise ConfigError("pulse angle and phase must be finite")


@dataclass(frozen=True)
class Block:
    """A parameter box: label, the ion pair it acts on, its slot ids, start side."""

    label: str
    ions: tuple
    slots: tuple
    start: str = "left"

    def pulse_ions(self):
        """Pulse-to-ion assignment, alternating from the configured start ion."""
        left, right = self.ions
        first, second = (left, right) if self.start == "left" else (right, left)
        return [first if i % 2 == 0 else second for i in range(len(self.slots))]


@dataclass(frozen=True)
class CircuitTemplate:
    """Block-structured pulse layout with parameter-slot sharing."""

    n_qubits: int
    blocks: tuple
    n_parameters: int

    def slot_sharing(self) -> dict:
        """Map block label -> slot ids (blocks sharing a label share slots)."""
        sharing = {}
        for b in self.blocks:
            if b.label in sharing and sharing[b.label] != b.slots:
                raise ConfigError(f"inconsistent slot sharing for label {b.label}")
            sharing[b.label] = b.slots
        return sharing


@dataclass(frozen=True)
class TranspiledCircuit:
    """Flat pulse sequence after slot expansion and small-angle pruning."""

    n_qubits: int
    pulses: tuple
    dropped: tuple  # (slot id, raw angle) pairs removed by pruning


def default_template(n_qubits: int, ordering: Union[str, dict] = "left") -> CircuitTemplate:
    """Staircase template with 2-slot edge boxes and two shared 5-slot bulk labels.

    For n_qubits=4 the boxes are A(1,2), B(2,3), C(3,4), D(3,4) with
    (2,5,5,2) slots; for larger even sizes the bulk alternates the shared
    labels B and C down the chain and D closes on the last pair.  Any even
    size >= 4 has exactly 14 independent parameter slots.

    `ordering` selects the within-box starting ion ('left' or 'right'),
    either globally or per label via a dict.
    """
    if n_qubits < 4 or n_qubits % 2 != 0:
        raise ConfigError(f"template requires even n_qubits >= 4, got {n_qubits}")

    def start_for(label):
        if isinstance(ordering, dict):
            side = ordering.get(label, "left")
        else:
            side = ordering
        if side not in ("left", "right"):
            raise ConfigError(f"ordering must be 'left' or 'right', got {side!r}")
        return side

    slots_a = (0, 1)
    slots_b = (2, 3, 4, 5, 6)
    slots_c = (7, 8, 9, 10, 11)
    slots_d = (12, 13)
    blocks = [Block("A", (1, 2), slots_a, start_for("A"))]
    for k in range(2, n_qubits):
        label = "B" if k % 2 == 0 else "C"
        slots = slots_b if label == "B" else slots_c
        blocks.append(Block(label, (k, k + 1), slots, start_for(label)))
    blocks.append(Block("D", (n_qubits - 1, n_qubits), slots_d, start_for("D")))
    return CircuitTemplate(n_qubits, tuple(blocks), 14)


def transpile(template: CircuitTemplate, theta: Sequence[float],
              prune_threshold: float = PRUNE_THRESHOLD) -> TranspiledCircuit:
    """Expand slot sharing into a pulse list, dropping angles below threshold."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (template.n_parameters,):
        raise DimensionError(
            f"expected {template.n_parameters} angles, got shape {theta.shape}"
        )
    if not np.all(np.isfinite(theta)):
        raise ConfigError("angles must be finite")
    pulses = []
    dropped = []
    for block in template.blocks:
        ions = block.pulse_ions()
        for slot, ion in zip(block.slots, ions):
            angle = float(theta[slot])
            if abs(angle) < prune_threshold:
                dropped.append((slot, angle))
            else:
                pulses.append(SidebandPulse(ion, angle))
    return TranspiledCircuit(template.n_qubits, tuple(pulses), tuple(dropped))


@lru_cache(maxsize=None)
def _pair_indices(n_qubits: int, d_max: int, ion: int):
    """Index pairs coupled by a sideband on `ion`, plus sqrt(n+1) factors.

    Returns (idx0, idx1, root) where idx0 enumerates |0_ion, n> and idx1 the
    partner |1_ion, n+1> for n = 0 .. d_max-2.
    """
    m = 2**n_qubits
    shift = n_qubits - ion
    mask = 1 << shift
    j_all = np.arange(m)
    j0 = j_all[(j_all & mask) == 0]
    idx0_list = []
    idx1_list = []
    root_list = []
    for n in range(d_max - 1):
        idx0_list.append(n * m + j0)
        idx1_list.append((n + 1) * m + (j0 | mask))
        root_list.append(np.full(len(j0), math.sqrt(n + 1)))
    return (
        np.concatenate(idx0_list),
        np.concatenate(idx1_list),
        np.concatenate(root_list),
    )


def rotate_last_axis(arr: np.ndarray, n_qubits: int, d_max: int,
                     pulse: SidebandPulse, conj: bool = False) -> np.ndarray:
    """In-place sideband rotation U (or its complex conjugate) on the last axis.

    The pulse acts as arr'[..., i] = sum_a U[i, a] arr[..., a] over the
    coupled index pairs; used directly for state vectors and, via views and
    the `conj` flag, for the two sides of U rho U^dagger.
    """
    idx0, idx1, root = _pair_indices(n_qubits, d_max, pulse.ion)
    half = 0.5 * pulse.theta * root
    c = np.cos(half)
    s = np.sin(half)
    a = arr[..., idx0]
    b = arr[..., idx1]
    if pulse.phase == 0.0:
        arr[..., idx0] = c * a + s * b
        arr[..., idx1] = -s * a + c * b
    else:
        ph = np.exp(-1j * pulse.phase if conj else 1j * pulse.phase)
        arr[..., idx0] = c * a + s / ph * b
        arr[..., idx1] = -s * ph * a + c * b
    return arr


def apply_sideband(state: HybridState, pulse: SidebandPulse) -> HybridState:
    """Apply one sideband pulse; raises TruncationError on Fock-space leakage."""
    if not 1 <= pulse.ion <= state.n_qubits:
        raise DimensionError(f"ion {pulse.ion} outside 1..{state.n_qubits}")
    amps = state.amplitudes.copy()
    rotate_last_axis(amps, state.n_qubits, state.d_max, pulse)
    new = state.replace_amplitudes(amps)
    top = new.top_fock_population()
    if top > state.leak_tol:
        raise TruncationError(
            f"top Fock level population {top:.3e} exceeds leak_tol={state.leak_tol:.1e}"
        )
    return new


def apply_sideband_batch(batch: np.ndarray, n_qubits: int, d_max: int,
                         pulse: SidebandPulse, leak_tol: float) -> np.ndarray:
    """Vectorized pulse on a (n_states, dim) array of amplitude rows (in place)."""
    rotate_last_axis(batch, n_qubits, d_max, pulse)
    m = 2**n_qubits
    top = batch[:, (d_max - 1) * m:]
    top_pop = np.einsum("ij,ij->i", top, top.conj()).real
    worst = top_pop.max() if len(top_pop) else 0.0
    if worst > leak_tol:
        raise TruncationError(
            f"top Fock level population {worst:.3e} exceeds leak_tol={leak_tol:.1e}"
        )
    return batch


def run_circuit(initial: HybridState, circuit: TranspiledCircuit, noise=None,
                rng: Optional[np.random.Generator] = None):
    """Run the pulse sequence from `initial`.

    Without noise this is plain unitary propagation returning a HybridState.
    With a NoiseConfig the run is delegated to the noise engine and returns a
    HybridDensity (density mode) or StateEnsemble (trajectory mode); the
    caller traces out the boson.
    """
    if circuit.n_qubits != initial.n_qubits:
        raise DimensionError(
            f"circuit is for {circuit.n_qubits} qubits, state has {initial.n_qubits}"
        )
    if noise is None:
        state = initial
        for pulse in circuit.pulses:
            state = apply_sideband(state, pulse)
        return state
    from . import noise as noise_mod

    return noise_mod.run_noisy_circuit(initial, circuit, noise, rng=rng)


def conserved_charge(state) -> float:
    """Expectation of the protected charge (1/2) sum_k sigma_z^k - n_boson."""
    if isinstance(state, StateEnsemble):
        vals = [conserved_charge(s) for s in state.states]
        return float(np.dot(state.weights, vals))
    n = state.n_qubits
    m = 2**n
    popcount = np.array([bin(j).count("1") for j in range(m)], dtype=float)
    fock = np.arange(state.d_max, dtype=float)
    charge_grid = (popcount[None, :] - n / 2.0) - fock[:, None]
    if isinstance(state, HybridState):
        probs = np.abs(state.as_grid()) ** 2
        return float(np.sum(probs * charge_grid))
    diag = np.real(np.diagonal(state.matrix)).reshape(state.d_max, m)
    return float(np.sum(diag * charge_grid))


def neel_input(n_qubits: int, d_max: int, fock_n: int = 0,
               leak_tol: float = DEFAULT_LEAK_TOL) -> HybridState:
    """Circuit input state |0101...> (x) |fock_n>."""
    return basis_state(n_qubits, d_max, neel_bits(n_qubits), fock_n, leak_tol)


# --- serialization -----------------------------------------------------------

def template_to_dict(template: CircuitTemplate) -> dict:
    return {
        "n_qubits": template.n_qubits,
        "n_parameters": template.n_parameters,
        "blocks": [
            {
                "label": b.label,
                "ions": list(b.ions),
                "slots": list(b.slots),
                "start": b.start,
            }
            for b in template.blocks
        ],
    }


def template_from_dict(doc: dict) -> CircuitTemplate:
    blocks = tuple(
        Block(b["label"], tuple(b["ions"]), tuple(b["slots"]), b.get("start", "left"))
        for b in doc["blocks"]
    )
    return CircuitTemplate(int(doc["n_qubits"]), blocks, int(doc["n_parameters"]))


def transpiled_to_dict(circuit: TranspiledCircuit) -> dict:
    """JSON document with angles in units of pi."""
    return {
        "n_qubits": circuit.n_qubits,
        "pulses": [
            {"ion": p.ion, "theta_pi": p.theta / math.pi, "phase": p.phase}
            for p in circuit.pulses
        ],
        "dropped": [
            {"slot": slot, "theta_pi": angle / math.pi} for slot, angle in circuit.dropped
        ],
    }


def transpiled_from_dict(doc: dict) -> TranspiledCircuit:
    pulses = tuple(
        SidebandPulse(int(p["ion"]), float(p["theta_pi"]) * math.pi, float(p.get("phase", 0.0)))
        for p in doc["pulses"]
    )
    dropped = tuple((int(d["slot"]), float(d["theta_pi"]) * math.pi) for d in doc["dropped"])
    return TranspiledCircuit(int(doc["n_qubits"]), pulses, dropped)


def dump_circuit_json(circuit, path):
    doc = transpiled_to_dict(circuit) if isinstance(circuit, TranspiledCircuit) else template_to_dict(circuit)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
