"""Experiment configuration, sweep orchestration, and result emission.

A single JSON config document drives every command; angles and stencil sizes
in the file are in units of pi.  All stochastic steps derive their seeds from
the config seed through stable labels, so reruns with the same manifest
reproduce primary outputs byte for byte.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import os
import platform
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import __version__
from .circuit import (
    PRUNE_THRESHOLD,
    default_template,
    dump_circuit_json,
    conserved_charge,
    neel_input,
    run_circuit,
    transpile,
)
from .errors import ConfigError, SimulationError
from .hilbert import (
    DensityOperator,
    expectation,
    partial_trace_boson,
    purity,
    reduce_qubits,
)
from .measurement import (
    mle_reconstruct,
    record_to_json,
    sample_measurements,
    tomography_settings,
)
from .mbti import bulk_sites, mbti_of, rss, z_r, z_t
from .model import ModelSpec, build_hamiltonian, exact_ground_state, ground_state_density, relative_energy_error
from .noise import NoiseConfig
from .optimizer import OptimizerConfig, prepare_state, vqe_run

TABLE_A1_PI = {
    "A": (1.2036, -0.3984),
    "B": (0.1526, 0.9366, -1.1738, 0.067, -0.0562),
    "C": (-0.9232, 1.5904, -0.1288, -1.0344, -2.8254),
    "D": (0.1792, 3.8938),
}

DEFAULT_SWEEP_GRID = (-1.0, -2.0 / 3.0, -1.0 / 3.0, 0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0)
NOISE_GRID = (0.0, 0.001, 0.005, 0.01, 0.02, 0.03, 0.04)


# --- configuration ---------------------------------------------------------------

@dataclass(frozen=True)
class CircuitConfig:
    n_qubits: Optional[int] = None        # defaults to model.n_sites
    d_max: Optional[int] = None           # defaults to n_sites // 2 + 2
    ordering: object = "left"
    prune_threshold_pi: float = 0.03
    leak_tol: float = 1e-6

    def resolve_d_max(self, n_sites: int) -> int:
        return self.d_max if self.d_max is not None else n_sites // 2 + 2


@dataclass(frozen=True)
class MeasurementConfig:
    shots_per_basis: int = 500
    use_exact_cost: bool = False
    tomography_shots: int = 10000
    bootstrap_resamples: int = 1000
    bootstrap_mle_max_iter: int = 500


@dataclass(frozen=True)
class SweepConfig:
    t_minus: tuple = DEFAULT_SWEEP_GRID
    delta: Optional[float] = None         # defaults to model.delta


@dataclass(frozen=True)
class InterpConfig:
    theta_a_file: Optional[str] = None
    theta_b_file: Optional[str] = None
    alphas: tuple = tuple(np.round(np.linspace(0.0, 1.0, 11), 6))
    nbars: tuple = (0.0, 0.05)


@dataclass(frozen=True)
class NoiseStudyConfig:
    theta_file: Optional[str] = None
    reference_csv: Optional[str] = None
    pxy_grid: tuple = NOISE_GRID
    pz_grid: tuple = NOISE_GRID
    data_pxy: float = 0.0
    data_pz: float = 0.03
    data_nbar: float = 0.0
    tomography_shots: int = 10000
    leak_tol: float = 0.02
    bootstrap_resamples: int = 200


@dataclass(frozen=True)
class ExperimentConfig:
    model: ModelSpec = field(default_factory=lambda: ModelSpec(8))
    circuit: CircuitConfig = field(default_factory=CircuitConfig)
    noise: Optional[NoiseConfig] = None
    measurement: MeasurementConfig = field(default_factory=MeasurementConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    interp: InterpConfig = field(default_factory=InterpConfig)
    noise_study: NoiseStudyConfig = field(default_factory=NoiseStudyConfig)
    seed: Optional[int] = None
    out_dir: str = "out"

    def __post_init__(self):
        if self.circuit.n_qubits is not None and self.circuit.n_qubits != self.model.n_sites:
            raise ConfigError(
                f"circuit.n_qubits={self.circuit.n_qubits} disagrees with "
                f"model.n_sites={self.model.n_sites}"
            )

    @property
    def is_stochastic(self) -> bool:
        if not self.measurement.use_exact_cost:
            return True
        if self.noise is not None and self.noise.has_channels and self.noise.mode == "trajectories":
            return True
        return False

    def require_seed(self):
        if self.is_stochastic and self.seed is None:
            raise ConfigError("a seed is mandatory for stochastic runs")


def _build(cls, doc: dict, where: str):
    allowed = {f.name for f in dataclasses.fields(cls)}
    unknown = set(doc) - allowed
    if unknown:
        raise ConfigError(f"unknown keys {sorted(unknown)} in config section {where!r}")
    listy = {f.name for f in dataclasses.fields(cls) if f.type == "tuple"}
    clean = {k: (tuple(v) if k in listy and isinstance(v, list) else v) for k, v in doc.items()}
    try:
        return cls(**clean)
    except TypeError as exc:
        raise ConfigError(f"bad config section {where!r}: {exc}") from None


def _optimizer_from_dict(doc: dict) -> OptimizerConfig:
    doc = dict(doc)
    conv = {}
    if "initial_stencil_pi" in doc:
        conv["initial_stencil"] = float(doc.pop("initial_stencil_pi")) * math.pi
    if "min_stencil_pi" in doc:
        conv["min_stencil"] = float(doc.pop("min_stencil_pi")) * math.pi
    allowed = {f.name for f in dataclasses.fields(OptimizerConfig)}
    unknown = set(doc) - allowed
    if unknown:
        raise ConfigError(f"unknown keys {sorted(unknown)} in config section 'optimizer'")
    doc.update(conv)
    try:
        return OptimizerConfig(**doc)
    except TypeError as exc:
        raise ConfigError(f"bad config section 'optimizer': {exc}") from None


def config_from_dict(doc: dict) -> ExperimentConfig:
    allowed = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = set(doc) - allowed
    if unknown:
        raise ConfigError(f"unknown top-level config keys {sorted(unknown)}")
    kwargs = {}
    if "model" in doc:
        kwargs["model"] = _build(ModelSpec, doc["model"], "model")
    if "circuit" in doc:
        circ = dict(doc["circuit"])
        if isinstance(circ.get("ordering"), dict):
            circ["ordering"] = dict(circ["ordering"])
        kwargs["circuit"] = _build(CircuitConfig, circ, "circuit")
    if doc.get("noise") is not None:
        kwargs["noise"] = _build(NoiseConfig, doc["noise"], "noise")
    if "measurement" in doc:
        kwargs["measurement"] = _build(MeasurementConfig, doc["measurement"], "measurement")
    if "optimizer" in doc:
        kwargs["optimizer"] = _optimizer_from_dict(doc["optimizer"])
    if "sweep" in doc:
        kwargs["sweep"] = _build(SweepConfig, doc["sweep"], "sweep")
    if "interp" in doc:
        kwargs["interp"] = _build(InterpConfig, doc["interp"], "interp")
    if "noise_study" in doc:
        kwargs["noise_study"] = _build(NoiseStudyConfig, doc["noise_study"], "noise_study")
    for key in ("seed", "out_dir"):
        if key in doc:
            kwargs[key] = doc[key]
    return ExperimentConfig(**kwargs)


def config_to_dict(config: ExperimentConfig) -> dict:
    doc = dataclasses.asdict(config)
    opt = doc["optimizer"]
    opt["initial_stencil_pi"] = opt.pop("initial_stencil") / math.pi
    opt["min_stencil_pi"] = opt.pop("min_stencil") / math.pi
    return doc


def load_config(path: str) -> ExperimentConfig:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return config_from_dict(doc)


def child_seed(seed: Optional[int], label: str) -> int:
    """Stable per-task seed derived from the run seed and a label."""
    digest = hashlib.sha256(f"{seed}:{label}".encode()).digest()
    return int.from_bytes(digest[:8], "big") % (2**63)


# --- canonical emission -----------------------------------------------------------

def fmt_cell(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(path, header, rows):
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(fmt_cell(v) for v in row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_csv(path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    header = lines[0].split(",")
    rows = []
    for line in lines[1:]:
        row = []
        for cell in line.split(","):
            try:
                row.append(int(cell))
            except ValueError:
                try:
                    row.append(float(cell))
                except ValueError:
                    row.append(cell)
        rows.append(row)
    return header, rows


def write_json(path, doc):
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_jsonl(path, docs):
    with open(path, "w") as fh:
        for doc in docs:
            fh.write(json.dumps(doc, sort_keys=True) + "\n")


def config_hash(config: ExperimentConfig) -> str:
    canon = json.dumps(config_to_dict(config), sort_keys=True)
    return hashlib.sha256(canon.encode()).hexdigest()


def write_manifest(config: ExperimentConfig, command: str, out_dir: str):
    doc = {
        "command": command,
        "config": config_to_dict(config),
        "config_hash": config_hash(config),
        "seed": config.seed,
        "versions": {
            "sideband_vqe": __version__,
            "numpy": np.__version__,
            "python": platform.python_version(),
        },
    }
    write_json(os.path.join(out_dir, "manifest.json"), doc)


def _ensure_out(config: ExperimentConfig) -> str:
    os.makedirs(config.out_dir, exist_ok=True)
    return config.out_dir


def density_to_doc(rho: DensityOperator) -> dict:
    """Row-major [re, im] pair encoding of a density operator."""
    mat = rho.matrix.reshape(-1)
    return {
        "sites": list(rho.sites),
        "dim": rho.dim,
        "matrix": [[float(x.real), float(x.imag)] for x in mat],
    }


def density_from_doc(doc: dict) -> DensityOperator:
    dim = int(doc["dim"])
    flat = np.array([complex(re, im) for re, im in doc["matrix"]])
    return DensityOperator(tuple(doc["sites"]), flat.reshape(dim, dim))


# --- shared pipeline pieces --------------------------------------------------------

def bulk_density(rho_out: DensityOperator, n_sites: int) -> DensityOperator:
    return reduce_qubits(rho_out, bulk_sites(n_sites, min(4, n_sites)))


def tomography_records(rho_bulk: DensityOperator, shots: int, seed: int):
    rng = np.random.default_rng(seed)
    return [
        sample_measurements(rho_bulk, basis, shots, rng)
        for basis in tomography_settings(rho_bulk.n_sites)
    ]


def mbti_from_records(records, max_iter: int = 500):
    rho = mle_reconstruct(records, max_iter=max_iter, tol=1e-8)
    res = mbti_of(rho)
    return res, rho


def exact_reference(model: ModelSpec) -> dict:
    spectrum = exact_ground_state(model)
    rho_gs = ground_state_density(model)
    res = mbti_of(bulk_density(rho_gs, model.n_sites))
    return {
        "e0": spectrum.ground_energy,
        "degeneracy_gap": spectrum.degeneracy_gap,
        "z_r": res.z_r,
        "z_t": res.z_t,
    }


def run_point(config: ExperimentConfig, t_minus: Optional[float] = None,
              delta: Optional[float] = None, label: str = "point") -> dict:
    """Full VQE -> tomography -> MBTI pipeline for one parameter point."""
    model = config.model
    if t_minus is not None:
        model = replace(model, t_minus=t_minus)
    if delta is not None:
        model = replace(model, delta=delta)
    config.require_seed()
    meas = config.measurement
    template = default_template(model.n_sites, config.circuit.ordering)
    shots = None if meas.use_exact_cost else meas.shots_per_basis
    result = vqe_run(
        model,
        template=template,
        noise=config.noise,
        shots=shots,
        config=config.optimizer,
        seed=child_seed(config.seed, f"vqe:{label}"),
        d_max=config.circuit.resolve_d_max(model.n_sites),
        prune_threshold=config.circuit.prune_threshold_pi * math.pi,
        leak_tol=config.circuit.leak_tol,
    )
    rho_bulk = bulk_density(result.rho_out, model.n_sites)
    sim = mbti_of(rho_bulk)

    records = tomography_records(
        rho_bulk, meas.tomography_shots, child_seed(config.seed, f"tomo:{label}")
    )
    tomo, rho_mle = mbti_from_records(records, meas.bootstrap_mle_max_iter)

    from .measurement import bootstrap_ci

    def stat_factory(fn):
        return lambda recs: fn(mle_reconstruct(recs, max_iter=meas.bootstrap_mle_max_iter, tol=1e-8))

    boot_zr = bootstrap_ci(
        records, stat_factory(z_r), resamples=meas.bootstrap_resamples,
        seed=child_seed(config.seed, f"boot-zr:{label}"),
    )
    boot_zt = bootstrap_ci(
        records, stat_factory(z_t), resamples=meas.bootstrap_resamples,
        seed=child_seed(config.seed, f"boot-zt:{label}"),
    )
    ref = exact_reference(model)
    row = {
        "t_minus": model.t_minus,
        "delta": model.delta,
        "theta_opt_pi": [v / math.pi for v in result.theta_opt],
        "e_opt": result.trace.best_value,
        "e_opt_sigma": result.trace.best_sigma,
        "e_final_exact": result.energy_exact,
        "e_exact_gs": ref["e0"],
        "rel_error": relative_energy_error(result.energy_exact, model),
        "evaluations": result.trace.evaluations,
        "zr_circuit": sim.z_r,
        "zt_circuit": sim.z_t,
        "zr_tomo": tomo.z_r,
        "zr_tomo_err": boot_zr.std,
        "zt_tomo": tomo.z_t,
        "zt_tomo_err": boot_zt.std,
        "zr_exact": ref["z_r"],
        "zt_exact": ref["z_t"],
    }
    artifacts = {
        "result": result,
        "records": records,
        "rho_bulk": rho_bulk,
        "rho_mle": rho_mle,
        "row": row,
    }
    return artifacts


SWEEP_CSV_COLUMNS = [
    "t_minus", "delta", "e_opt", "e_opt_sigma", "e_final_exact", "e_exact_gs",
    "rel_error", "evaluations", "zr_circuit", "zt_circuit", "zr_tomo",
    "zr_tomo_err", "zt_tomo", "zt_tomo_err", "zr_exact", "zt_exact",
]

MBTI_CSV_COLUMNS = ["t_minus", "delta", "z_r", "z_r_err", "z_t", "z_t_err", "source"]


def mbti_rows_of(row: dict):
    t, d = row["t_minus"], row["delta"]
    return [
        [t, d, row["zr_exact"], 0.0, row["zt_exact"], 0.0, "exact"],
        [t, d, row["zr_circuit"], 0.0, row["zt_circuit"], 0.0, "circuit-sim"],
        [t, d, row["zr_tomo"], row["zr_tomo_err"], row["zt_tomo"], row["zt_tomo_err"], "tomography"],
    ]


# --- commands ----------------------------------------------------------------------

def cmd_exact_gs(config: ExperimentConfig) -> dict:
    """Exact ground energy, gap, and bulk MBTIs of the configured model."""
    out = _ensure_out(config)
    model = config.model
    spectrum = exact_ground_state(model)
    rho_gs = ground_state_density(model)
    res = mbti_of(bulk_density(rho_gs, model.n_sites))
    report = {
        "model": dataclasses.asdict(model),
        "e0": spectrum.ground_energy,
        "energies": [float(e) for e in spectrum.energies],
        "degeneracy_gap": spectrum.degeneracy_gap,
        "bulk_z_r": res.z_r,
        "bulk_z_t": res.z_t,
        "bulk_purity_i1": res.purity_i1,
        "bulk_purity_i2": res.purity_i2,
    }
    write_json(os.path.join(out, "exact_gs.json"), report)
    write_manifest(config, "exact-gs", out)
    return report


def cmd_vqe(config: ExperimentConfig, dump_circuit: bool = False,
            save_shots: Optional[str] = None, stream=None) -> dict:
    """One full VQE pipeline run at the configured model point."""
    out = _ensure_out(config)
    artifacts = run_point(config, label="single")
    result = artifacts["result"]
    if stream is not None:
        for rec in result.trace.iterations:
            stream.write(f"{rec.index} {fmt_cell(rec.best_value)} {fmt_cell(rec.best_sigma)}\n")
    trace_docs = [
        {
            "iteration": rec.index,
            "decision": rec.decision,
            "stencil_size": rec.stencil_size,
            "center_pi": [v / math.pi for v in rec.center],
            "best_value": rec.best_value,
            "best_sigma": rec.best_sigma,
            "evaluations_used": rec.evaluations_used,
            "n_polled": len(rec.polled),
        }
        for rec in result.trace.iterations
    ]
    write_jsonl(os.path.join(out, "trace.jsonl"), trace_docs)
    write_json(os.path.join(out, "rho_bulk.json"), density_to_doc(artifacts["rho_bulk"]))
    write_json(os.path.join(out, "result.json"), artifacts["row"])
    write_csv(
        os.path.join(out, "mbti.csv"), MBTI_CSV_COLUMNS, mbti_rows_of(artifacts["row"])
    )
    if dump_circuit:
        template = default_template(config.model.n_sites, config.circuit.ordering)
        circ = transpile(
            template, result.theta_opt, config.circuit.prune_threshold_pi * math.pi
        )
        dump_circuit_json(circ, os.path.join(out, "circuit.json"))
    if save_shots:
        with open(save_shots, "w") as fh:
            for rec in artifacts["records"]:
                fh.write(record_to_json(rec) + "\n")
    write_manifest(config, "vqe", out)
    return artifacts["row"]


def _sweep_worker(args):
    doc, t_minus, delta, label = args
    config = config_from_dict(doc)
    try:
        return t_minus, run_point(config, t_minus=t_minus, delta=delta, label=label)["row"], None
    except SimulationError as exc:
        return t_minus, None, f"{type(exc).__name__}: {exc}"


def cmd_sweep(config: ExperimentConfig, workers: int = 1) -> dict:
    """VQE + MBTI rows over the t_minus grid at fixed delta."""
    out = _ensure_out(config)
    delta = config.sweep.delta if config.sweep.delta is not None else config.model.delta
    grid = list(config.sweep.t_minus)
    doc = config_to_dict(config)
    tasks = [(doc, t, delta, f"sweep:{i}") for i, t in enumerate(grid)]
    results = []
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_worker, tasks))
    else:
        results = [_sweep_worker(t) for t in tasks]

    rows = []
    failures = []
    for t_minus, row, err in results:
        if err is None:
            rows.append(row)
        else:
            failures.append({"t_minus": t_minus, "error": err})
    write_json(os.path.join(out, "sweep.json"), {"rows": rows, "failures": failures})
    write_csv(
        os.path.join(out, "sweep.csv"),
        SWEEP_CSV_COLUMNS,
        [[row[c] for c in SWEEP_CSV_COLUMNS] for row in rows],
    )
    mbti_rows = [r for row in rows for r in mbti_rows_of(row)]
    write_csv(os.path.join(out, "mbti.csv"), MBTI_CSV_COLUMNS, mbti_rows)
    write_manifest(config, "sweep", out)
    return {"rows": rows, "failures": failures}


def simulate_theta_mbti(config: ExperimentConfig, theta: np.ndarray, noise: Optional[NoiseConfig],
                        leak_tol: Optional[float] = None) -> dict:
    """Deterministic circuit simulation of one angle set; bulk MBTIs and energy.

    Uses the exact pure/ensemble path without channels and density-operator
    propagation with them.
    """
    model = config.model
    template = default_template(model.n_sites, config.circuit.ordering)
    d_max = config.circuit.resolve_d_max(model.n_sites)
    tol = leak_tol if leak_tol is not None else config.circuit.leak_tol
    prune = config.circuit.prune_threshold_pi * math.pi
    if noise is not None and noise.has_channels and noise.mode != "density":
        noise = replace(noise, mode="density")
    state = prepare_state(theta, template, noise, d_max, prune, leak_tol=tol)
    rho_out = partial_trace_boson(state)
    res = mbti_of(bulk_density(rho_out, model.n_sites))
    energy = expectation(state, build_hamiltonian(model))
    return {"z_r": res.z_r, "z_t": res.z_t, "energy": energy, "rho_out": rho_out}


def load_theta_file(path: str) -> np.ndarray:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read theta file {path}: {exc}") from None
    if "theta_pi" not in doc:
        raise ConfigError(f"theta file {path} missing 'theta_pi'")
    return np.asarray(doc["theta_pi"], dtype=float) * math.pi


def cmd_interp(config: ExperimentConfig, theta_a: Optional[np.ndarray] = None,
               theta_b: Optional[np.ndarray] = None) -> dict:
    """Energy error and Z_R along the line between two angle sets, per nbar."""
    out = _ensure_out(config)
    interp = config.interp
    if theta_a is None:
        if interp.theta_a_file is None:
            raise ConfigError("interp requires theta_a (file or CLI)")
        theta_a = load_theta_file(interp.theta_a_file)
    if theta_b is None:
        if interp.theta_b_file is None:
            raise ConfigError("interp requires theta_b (file or CLI)")
        theta_b = load_theta_file(interp.theta_b_file)
    if theta_a.shape != theta_b.shape:
        raise ConfigError("theta_a and theta_b must have equal length")
    rows = []
    for alpha in interp.alphas:
        theta = (1.0 - alpha) * theta_a + alpha * theta_b
        for nbar in interp.nbars:
            noise = NoiseConfig(nbar=nbar, heating_rate=0.0) if nbar > 0 else None
            sim = simulate_theta_mbti(config, theta, noise)
            rows.append([
                float(alpha), float(nbar),
                relative_energy_error(sim["energy"], config.model),
                sim["z_r"],
            ])
    write_csv(os.path.join(out, "interp.csv"), ["alpha", "nbar", "delta_rel", "z_r"], rows)
    write_manifest(config, "interp", out)
    return {"rows": rows}


def load_theta_sets(path: str):
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read theta sets {path}: {exc}") from None
    points = doc.get("points")
    if not points:
        raise ConfigError(f"theta set file {path} missing 'points'")
    return [
        (float(p["t_minus"]), np.asarray(p["theta_pi"], dtype=float) * math.pi)
        for p in points
    ]


def generate_noise_study_data(config: ExperimentConfig, theta_sets) -> dict:
    """Synthetic 'experimental' MBTIs: noisy sims + tomography + MLE per point."""
    ns = config.noise_study
    config.require_seed()
    data_noise = NoiseConfig(
        nbar=ns.data_nbar, heating_rate=0.0, pauli_pxy=ns.data_pxy,
        pauli_pz=ns.data_pz, mode="density",
    )
    points = []
    for i, (t_minus, theta) in enumerate(theta_sets):
        point_config = replace(config, model=replace(config.model, t_minus=t_minus))
        sim = simulate_theta_mbti(point_config, theta, data_noise, leak_tol=ns.leak_tol)
        rho_bulk = bulk_density(sim["rho_out"], config.model.n_sites)
        records = tomography_records(
            rho_bulk, ns.tomography_shots, child_seed(config.seed, f"nsdata:{i}")
        )
        res, _ = mbti_from_records(records)
        points.append({
            "t_minus": t_minus, "z_r": res.z_r, "z_t": res.z_t, "records": records,
        })
    return {"points": points}


def cmd_noise_study(config: ExperimentConfig, workers: int = 1) -> dict:
    """RSS of data MBTIs against the weighted-Pauli model grid; reports argmin."""
    out = _ensure_out(config)
    ns = config.noise_study
    if ns.theta_file is None:
        raise ConfigError("noise-study requires noise_study.theta_file")
    theta_sets = load_theta_sets(ns.theta_file)

    if ns.reference_csv is not None:
        header, ref_rows = read_csv(ns.reference_csv)
        idx = {name: k for k, name in enumerate(header)}
        for col in ("t_minus", "z_r", "z_t"):
            if col not in idx:
                raise ConfigError(f"reference csv missing column {col!r}")
        by_t = {}
        for row in ref_rows:
            src = row[idx["source"]] if "source" in idx else "tomography"
            if src in ("tomography", "circuit-sim"):
                by_t.setdefault(row[idx["t_minus"]], row)
        data_points = [
            {"t_minus": t, "z_r": by_t[t][idx["z_r"]], "z_t": by_t[t][idx["z_t"]], "records": None}
            for t, _ in ((t, th) for t, th in theta_sets)
            if t in by_t
        ]
        if len(data_points) != len(theta_sets):
            raise ConfigError("reference csv does not cover every theta-set point")
    else:
        data_points = generate_noise_study_data(config, theta_sets)["points"]

    data_zr = np.array([p["z_r"] for p in data_points])
    data_zt = np.array([p["z_t"] for p in data_points])

    def model_cell(pxy, pz):
        zr, zt = [], []
        for t_minus, theta in theta_sets:
            point_config = replace(config, model=replace(config.model, t_minus=t_minus))
            if pxy == 0.0 and pz == 0.0:
                noise = None
            else:
                noise = NoiseConfig(
                    nbar=ns.data_nbar, heating_rate=0.0, pauli_pxy=pxy,
                    pauli_pz=pz, mode="density",
                )
            sim = simulate_theta_mbti(point_config, theta, noise, leak_tol=ns.leak_tol)
            zr.append(sim["z_r"])
            zt.append(sim["z_t"])
        return np.array(zr), np.array(zt)

    rows = []
    best = None
    cells = {}
    for pxy in ns.pxy_grid:
        for pz in ns.pz_grid:
            if 2 * pxy + pz > 1.0:
                continue
            model_zr, model_zt = model_cell(pxy, pz)
            cells[(pxy, pz)] = (model_zr, model_zt)
            rss_r = rss(data_zr, model_zr)
            rss_t = rss(data_zt, model_zt)
            avg = 0.5 * (rss_r + rss_t)
            rows.append([pxy, pz, rss_r, rss_t, avg])
            if best is None or avg < best[2]:
                best = (pxy, pz, avg)

    sigma_rows = []
    if data_points[0]["records"] is not None and ns.bootstrap_resamples > 0:
        from .measurement import _resample_record

        rng = np.random.default_rng(child_seed(config.seed, "nsboot"))
        draws_zr, draws_zt = [], []
        for _ in range(ns.bootstrap_resamples):
            zr_b, zt_b = [], []
            for p in data_points:
                resampled = [_resample_record(r, rng) for r in p["records"]]
                res, _ = mbti_from_records(resampled)
                zr_b.append(res.z_r)
                zt_b.append(res.z_t)
            draws_zr.append(zr_b)
            draws_zt.append(zt_b)
        draws_zr = np.array(draws_zr)
        draws_zt = np.array(draws_zt)
        for row in rows:
            pxy, pz = row[0], row[1]
            model_zr, model_zt = cells[(pxy, pz)]
            rss_draws = 0.5 * (
                ((draws_zr - model_zr) ** 2).sum(axis=1)
                + ((draws_zt - model_zt) ** 2).sum(axis=1)
            )
            sigma_rows.append(float(rss_draws.std(ddof=1)))
    else:
        sigma_rows = [float("nan")] * len(rows)

    table = [row + [sig] for row, sig in zip(rows, sigma_rows)]
    write_csv(
        os.path.join(out, "noise_study.csv"),
        ["p_xy", "p_z", "rss_z_r", "rss_z_t", "rss_avg", "rss_sigma"],
        table,
    )
    report = {
        "argmin": {"p_xy": best[0], "p_z": best[1], "rss_avg": best[2]},
        "data": [
            {"t_minus": p["t_minus"], "z_r": p["z_r"], "z_t": p["z_t"]}
            for p in data_points
        ],
    }
    write_json(os.path.join(out, "noise_study.json"), report)
    write_manifest(config, "noise-study", out)
    return report


def table_a1_theta() -> np.ndarray:
    flat = [a for label in ("A", "B", "C", "D") for a in TABLE_A1_PI[label]]
    return np.array(flat) * math.pi


def cmd_fixture_a1(fidelity_target: float = 0.897, n_operations: int = 14,
                   out_dir: Optional[str] = None) -> dict:
    """Run the embedded 4-qubit test-bed circuit over ordering variants.

    Reports per variant the boson-traced qubit purity, charge conservation,
    realness residue, and energies against candidate chain parameters, plus
    the per-pulse fidelity implied by F = F_BSB ** M.
    """
    theta = table_a1_theta()
    d_max = 4
    candidates = [
        (t, d) for d in (0.0, 4.0) for t in DEFAULT_SWEEP_GRID
    ]
    variants = []
    import itertools

    for combo in itertools.product(("left", "right"), repeat=4):
        ordering = dict(zip("ABCD", combo))
        template = default_template(4, ordering)
        circ = transpile(template, theta)
        init = neel_input(4, d_max)
        q_before = conserved_charge(init)
        final = run_circuit(init, circ)
        q_after = conserved_charge(final)
        realness = float(np.abs(final.amplitudes.imag).max())
        rho = partial_trace_boson(final)
        energies = {}
        for t_minus, delta in candidates:
            spec = ModelSpec(4, t_minus, delta)
            e = expectation(rho, build_hamiltonian(spec))
            e0 = exact_ground_state(spec).ground_energy
            energies[f"t{t_minus:+.3f}_d{delta:g}"] = {
                "energy": e, "e0": e0, "rel_error": (e0 - e) / e0,
            }
        best_fit = min(energies.values(), key=lambda v: abs(v["rel_error"]))
        variants.append({
            "ordering": ordering,
            "purity": purity(rho),
            "charge_before": q_before,
            "charge_after": q_after,
            "charge_drift": abs(q_after - q_before),
            "realness_residue": realness,
            "pulse_count": len(circ.pulses),
            "dropped": len(circ.dropped),
            "best_candidate_rel_error": best_fit["rel_error"],
            "energies": energies,
        })
    variants.sort(key=lambda v: -v["purity"])
    best = variants[0]
    report = {
        "f_bsb": fidelity_target ** (1.0 / n_operations),
        "fidelity_target": fidelity_target,
        "n_operations": n_operations,
        "best_ordering": best["ordering"],
        "best_purity": best["purity"],
        "purity_success": bool(best["purity"] >= 0.99),
        "variants": variants,
    }
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        write_json(os.path.join(out_dir, "fixture_a1.json"), report)
    return report
