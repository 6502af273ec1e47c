"""Trapped-ion sideband-circuit VQE simulator with bosonic data bus.

Simulates blue-sideband pulse circuits coupling a qubit chain to a truncated
phonon mode, optimizes the pulse angles against shot-sampled chain energies
with a noise-aware pattern search, and characterizes the prepared states via
many-body topological invariants under configurable hardware-noise models.
"""

__version__ = "0.1.0"

from .circuit import (
    CircuitTemplate,
    SidebandPulse,
    TranspiledCircuit,
    apply_sideband,
    conserved_charge,
    default_template,
    neel_input,
    run_circuit,
    transpile,
)
from .errors import (
    CapabilityError,
    ConfigError,
    DegenerateInputError,
    DimensionError,
    NonConvergenceError,
    NumericalError,
    SimulationError,
    TruncationError,
)
from .hilbert import (
    DensityOperator,
    HybridDensity,
    HybridState,
    ObservableSpec,
    StateEnsemble,
    basis_state,
    expectation,
    fidelity,
    partial_trace_boson,
    purity,
    reduce_qubits,
)
from .mbti import MBTIResult, bulk_sites, mbti_of, reflection_expectation, rss, z_r, z_t
from .measurement import (
    EnergyEstimate,
    MeasurementRecord,
    bootstrap_ci,
    estimate_energy,
    mle_reconstruct,
    sample_measurements,
    tomography_settings,
)
from .model import (
    ModelSpec,
    SpectrumResult,
    build_hamiltonian,
    energy_of,
    exact_ground_state,
    relative_energy_error,
)
from .noise import (
    NoiseConfig,
    heating_channel,
    pulse_duration,
    thermal_boson_weights,
    weighted_pauli_channel,
)
from .optimizer import (
    OptimizerConfig,
    OptimizerTrace,
    VqeResult,
    gp_fit,
    gp_predict,
    make_stencil,
    ocba_allocate,
    pattern_search,
    vqe_run,
)
