"""Noise-aware pattern search with a GP surrogate and OCBA resampling.

The search polls a stencil of 2d orthogonal directions around the incumbent,
moves to a measured improvement (growing the stencil and rotating its first
axis onto the move direction), and shrinks otherwise.  Under shot noise a
squared-exponential Gaussian process ranks candidate polls, and when the
leading poll's error bar overlaps the incumbent's, additional samples are
requested and distributed by optimal-computing-budget-allocation ratios.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ConfigError, DimensionError, NumericalError

_ORTHO_TOL = 1e-8


@dataclass(frozen=True)
class OptimizerConfig:
    """Pattern-search and surrogate knobs; angles in radians."""

    initial_stencil: float = 0.25 * math.pi
    expand_factor: float = 1.5
    shrink_factor: float = 0.5
    min_stencil: float = 0.01 * math.pi
    max_evaluations: float = 2000.0
    poll_strategy: str = "complete"      # 'complete' or 'opportunistic'
    gp_enabled: bool = True
    gp_lengthscale: Optional[float] = None   # None -> median heuristic
    gp_prior_mean: float = 0.0
    gp_noise_floor: float = 1e-12
    gp_window: int = 200
    gp_refit_every: int = 25
    ocba_batch: int = 10
    resample_trigger: float = 2.0
    max_resample_rounds: int = 3

    def __post_init__(self):
        if self.initial_stencil <= 0 or self.min_stencil <= 0:
            raise ConfigError("stencil sizes must be positive")
        if self.expand_factor <= 1.0:
            raise ConfigError("expand_factor must exceed 1")
        if not 0.0 < self.shrink_factor < 1.0:
            raise ConfigError("shrink_factor must lie in (0, 1)")
        if self.max_evaluations < 0:
            raise ConfigError("max_evaluations must be >= 0")
        if self.poll_strategy not in ("complete", "opportunistic"):
            raise ConfigError(f"unknown poll strategy {self.poll_strategy!r}")
        if self.ocba_batch < 1 or self.max_resample_rounds < 0:
            raise ConfigError("ocba_batch must be >= 1, max_resample_rounds >= 0")
        if self.resample_trigger < 0:
            raise ConfigError("resample_trigger must be >= 0")


@dataclass
class IterationRecord:
    """One pattern-search step: the stencil polled and the decision taken."""

    index: int
    center: np.ndarray
    stencil_size: float
    polled: list                 # (theta, mean, sigma, n_evals) tuples
    decision: str                # 'expand' | 'shrink' | 'resample'
    best_theta: np.ndarray
    best_value: float
    best_sigma: float
    evaluations_used: float


@dataclass
class OptimizerTrace:
    """Full record of an optimization run."""

    iterations: list
    best_theta: np.ndarray
    best_value: float
    best_sigma: float
    evaluations: float
    termination: str             # 'stencil' | 'budget' | 'empty-budget'

    def best_curve(self):
        """(iteration, best value, best sigma) rows for convergence plots."""
        return [
            (rec.index, rec.best_value, rec.best_sigma) for rec in self.iterations
        ]


def make_stencil(center: np.ndarray, size: float, orientation: np.ndarray) -> list:
    """Poll points center +/- size * b_i for each orientation column b_i."""
    center = np.asarray(center, dtype=float)
    d = center.shape[0]
    orientation = np.asarray(orientation, dtype=float)
    if orientation.shape != (d, d):
        raise DimensionError(f"orientation must be {d}x{d}")
    residue = np.abs(orientation.T @ orientation - np.eye(d)).max()
    if residue > _ORTHO_TOL:
        raise ConfigError(f"orientation not orthonormal (residue {residue:.2e})")
    points = []
    for i in range(d):
        direction = orientation[:, i]
        points.append(center + size * direction)
        points.append(center - size * direction)
    return points


def _householder_to(v: np.ndarray) -> np.ndarray:
    """Orthogonal matrix whose first column is the unit vector v."""
    d = v.shape[0]
    e1 = np.zeros(d)
    e1[0] = 1.0
    u = e1 - v
    nrm2 = u @ u
    if nrm2 < 1e-24:
        return np.eye(d)
    return np.eye(d) - 2.0 * np.outer(u, u) / nrm2


# --- Gaussian process surrogate ------------------------------------------------

@dataclass
class GPModel:
    """Squared-exponential GP with per-point noise; empty model = prior only."""

    x: Optional[np.ndarray]
    y: Optional[np.ndarray]
    prior_mean: float
    signal_var: float
    lengthscale: float
    alpha: Optional[np.ndarray] = None
    chol: Optional[np.ndarray] = None

    @property
    def n_obs(self) -> int:
        return 0 if self.x is None else self.x.shape[0]


def _sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    diff = a[:, None, :] - b[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def median_heuristic_lengthscale(x: np.ndarray) -> float:
    """Median pairwise distance of the inputs (1.0 when degenerate)."""
    if x.shape[0] < 2:
        return 1.0
    d2 = _sq_dists(x, x)
    vals = np.sqrt(d2[np.triu_indices(x.shape[0], k=1)])
    med = float(np.median(vals))
    return med if med > 1e-12 else 1.0


def gp_fit(observations: Sequence, config: OptimizerConfig) -> GPModel:
    """Fit the surrogate to (theta, value, sigma) observations."""
    if len(observations) == 0:
        return GPModel(None, None, config.gp_prior_mean, 1.0, 1.0)
    x = np.array([np.asarray(o[0], dtype=float) for o in observations])
    y = np.array([float(o[1]) for o in observations])
    sig = np.array([float(o[2]) for o in observations])
    ell = config.gp_lengthscale or median_heuristic_lengthscale(x)
    prior_mean = float(y.mean())
    signal_var = float(max(y.var(), 1e-12))
    k = signal_var * np.exp(-_sq_dists(x, x) / (2.0 * ell**2))
    noise = sig**2 + config.gp_noise_floor
    jitter = 1e-12 * signal_var
    for _ in range(8):
        try:
            chol = np.linalg.cholesky(k + np.diag(noise + jitter))
            break
        except np.linalg.LinAlgError:
            jitter *= 10.0
    else:
        raise NumericalError("GP kernel matrix not positive definite after jitter escalation")
    alpha = np.linalg.solve(chol.T, np.linalg.solve(chol, y - prior_mean))
    return GPModel(x, y, prior_mean, signal_var, ell, alpha, chol)


def gp_predict(model: GPModel, theta: np.ndarray):
    """Posterior mean and variance at theta (prior values for an empty model)."""
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    if model.n_obs == 0:
        mean = np.full(theta.shape[0], model.prior_mean)
        var = np.full(theta.shape[0], model.signal_var)
    else:
        ks = model.signal_var * np.exp(
            -_sq_dists(theta, model.x) / (2.0 * model.lengthscale**2)
        )
        mean = model.prior_mean + ks @ model.alpha
        v = np.linalg.solve(model.chol, ks.T)
        var = np.clip(model.signal_var - np.einsum("ij,ij->j", v, v), 0.0, None)
    if mean.shape[0] == 1:
        return float(mean[0]), float(var[0])
    return mean, var


# --- optimal computing budget allocation ---------------------------------------

def ocba_allocate(candidates: Sequence, extra_budget: int) -> np.ndarray:
    """Distribute extra samples across candidates by OCBA ratios.

    Candidates are (mean, sigma, n_samples) triples; the returned integer
    vector sums to extra_budget.  Competitors are weighted by (sigma/gap)^2
    relative to the best mean; candidates exactly tied with the best split
    the best's share equally.
    """
    if len(candidates) < 2:
        raise ConfigError("OCBA needs at least two candidates")
    if extra_budget < 0:
        raise ConfigError("extra_budget must be >= 0")
    means = np.array([float(c[0]) for c in candidates])
    sigmas = np.array([max(float(c[1]), 0.0) for c in candidates])
    counts = np.array([max(float(c[2]), 0.0) for c in candidates])
    k = len(candidates)
    if extra_budget == 0:
        return np.zeros(k, dtype=int)

    best = means.min()
    tied = means == best
    ratios = np.zeros(k)
    if tied.all():
        ratios[:] = 1.0
    else:
        comp = ~tied
        gaps = means[comp] - best
        w = (sigmas[comp] / gaps) ** 2
        ratios[comp] = w
        sigma_best = sigmas[tied].mean()
        inner = np.where(
            sigmas[comp] > 0, w**2 / np.maximum(sigmas[comp] ** 2, 1e-300), 0.0
        )
        best_share = sigma_best * math.sqrt(float(inner.sum()))
        ratios[tied] = best_share / tied.sum()
    total_ratio = ratios.sum()
    if total_ratio <= 0:
        ratios[tied] = 1.0
        total_ratio = ratios.sum()

    target_total = counts.sum() + extra_budget
    targets = ratios / total_ratio * target_total
    wanted = np.clip(targets - counts, 0.0, None)
    if wanted.sum() <= 0:
        wanted = ratios.copy()
    alloc = wanted / wanted.sum() * extra_budget
    floor = np.floor(alloc).astype(int)
    remainder = extra_budget - floor.sum()
    if remainder > 0:
        order = np.argsort(-(alloc - floor), kind="stable")
        floor[order[:remainder]] += 1
    return floor


# --- pattern search -------------------------------------------------------------

class _Point:
    """Aggregated evaluations of the cost at a fixed parameter vector."""

    __slots__ = ("theta", "mean", "sigma", "n_evals", "_ivw", "_wv", "exact")

    def __init__(self, theta: np.ndarray):
        self.theta = theta
        self.mean = math.nan
        self.sigma = math.inf
        self.n_evals = 0
        self._ivw = 0.0
        self._wv = 0.0
        self.exact = False

    def add(self, value: float, sigma: float):
        self.n_evals += 1
        if sigma <= 0.0:
            self.exact = True
            self.mean = value
            self.sigma = 0.0
            return
        if self.exact:
            return
        w = 1.0 / sigma**2
        self._ivw += w
        self._wv += w * value
        self.mean = self._wv / self._ivw
        self.sigma = 1.0 / math.sqrt(self._ivw)


class _Search:
    """Internal driver carrying budget, cache, observations and the GP."""

    def __init__(self, cost, config, eval_cost):
        self.cost = cost
        self.config = config
        self.eval_cost = eval_cost
        self.spent = 0.0
        self.points = {}
        self.observations = []
        self.gp = None
        self.obs_at_fit = -1
        self.noisy_seen = False
        self.failures = []

    def budget_left(self) -> bool:
        return self.spent + self.eval_cost <= self.config.max_evaluations

    def point_for(self, theta: np.ndarray) -> _Point:
        key = theta.tobytes()
        if key not in self.points:
            self.points[key] = _Point(theta.copy())
        return self.points[key]

    def evaluate(self, theta: np.ndarray) -> Optional[_Point]:
        """One cost call at theta (reusing exact cached values for free)."""
        pt = self.point_for(theta)
        if pt.exact:
            return pt
        if not self.budget_left():
            return pt if pt.n_evals > 0 else None
        try:
            value, sigma = self.cost(theta)
        except Exception as exc:  # cost failure: record and skip this point
            self.spent += self.eval_cost
            self.failures.append((theta.copy(), repr(exc)))
            return pt if pt.n_evals > 0 else None
        self.spent += self.eval_cost
        value, sigma = float(value), float(sigma)
        if sigma > 0:
            self.noisy_seen = True
        pt.add(value, sigma)
        self.observations.append((theta.copy(), value, sigma))
        return pt

    def ranking_values(self, pts):
        """GP posterior means when the surrogate is active, else measured means."""
        if not (self.config.gp_enabled and self.noisy_seen):
            return [pt.mean for pt in pts]
        if self.gp is None or len(self.observations) - self.obs_at_fit >= self.config.gp_refit_every:
            window = self.observations[-self.config.gp_window:]
            self.gp = gp_fit(window, self.config)
            self.obs_at_fit = len(self.observations)
        return [gp_predict(self.gp, pt.theta)[0] for pt in pts]


def pattern_search(cost: Callable, theta0: Sequence[float], config: OptimizerConfig,
                   seed: Optional[int] = None, eval_cost: float = 1.0) -> OptimizerTrace:
    """Minimize a noisy cost theta -> (value, sigma) by rotating-stencil search.

    A seed randomizes the initial stencil orientation (runs are otherwise
    deterministic); identical seed and config reproduce the trace exactly.
    """
    theta0 = np.asarray(theta0, dtype=float)
    if not np.all(np.isfinite(theta0)):
        raise ConfigError("theta0 must be finite")
    d = theta0.shape[0]
    if config.max_evaluations > 0 and config.max_evaluations < d + 1:
        raise ConfigError("max_evaluations must be at least dimension + 1")

    search = _Search(cost, config, eval_cost)
    if seed is None:
        orientation = np.eye(d)
    else:
        rng = np.random.default_rng(seed)
        q, r = np.linalg.qr(rng.normal(size=(d, d)))
        orientation = q * np.sign(np.diag(r))

    iterations = []
    center_pt = None
    if config.max_evaluations <= 0:
        return OptimizerTrace([], theta0.copy(), math.nan, math.nan, 0.0, "empty-budget")

    center_pt = search.evaluate(theta0)
    if center_pt is None or center_pt.n_evals == 0:
        return OptimizerTrace([], theta0.copy(), math.nan, math.nan, search.spent, "budget")

    best_pt = center_pt
    size = config.initial_stencil
    termination = "budget"

    def record(decision, polled):
        iterations.append(
            IterationRecord(
                index=len(iterations),
                center=center_pt.theta.copy(),
                stencil_size=size,
                polled=[(p.theta.copy(), p.mean, p.sigma, p.n_evals) for p in polled],
                decision=decision,
                best_theta=best_pt.theta.copy(),
                best_value=best_pt.mean,
                best_sigma=best_pt.sigma,
                evaluations_used=search.spent,
            )
        )

    while search.budget_left():
        residue = np.abs(orientation.T @ orientation - np.eye(d)).max()
        if residue > _ORTHO_TOL:
            raise NumericalError(f"stencil orientation drifted (residue {residue:.2e})")
        polls = make_stencil(center_pt.theta, size, orientation)

        polled_pts = []
        improved_early = None
        if config.poll_strategy == "opportunistic":
            order = polls
            if config.gp_enabled and search.noisy_seen and search.gp is not None:
                preds = [gp_predict(search.gp, th)[0] for th in polls]
                order = [polls[i] for i in np.argsort(preds, kind="stable")]
            for th in order:
                if not search.budget_left():
                    break
                pt = search.evaluate(th)
                if pt is None:
                    continue
                polled_pts.append(pt)
                if pt.mean < center_pt.mean:
                    improved_early = pt
                    break
        else:
            for th in polls:
                if not search.budget_left():
                    break
                pt = search.evaluate(th)
                if pt is not None:
                    polled_pts.append(pt)

        if not polled_pts:
            break

        def pick_best(pts):
            vals = search.ranking_values(pts)
            return pts[int(np.argmin(vals))]

        cand = improved_early if improved_early is not None else pick_best(polled_pts)

        # Resample when the leading poll is statistically indistinguishable.
        rounds = 0
        while (
            search.noisy_seen
            and cand.sigma + center_pt.sigma > 0
            and abs(cand.mean - center_pt.mean)
            < config.resample_trigger * (cand.sigma + center_pt.sigma)
            and rounds < config.max_resample_rounds
            and search.budget_left()
        ):
            group = [center_pt] + polled_pts
            alloc = ocba_allocate(
                [(p.mean, p.sigma, p.n_evals) for p in group], config.ocba_batch
            )
            for p, extra in zip(group, alloc):
                for _ in range(int(extra)):
                    if not search.budget_left():
                        break
                    search.evaluate(p.theta)
            cand = pick_best(polled_pts)
            rounds += 1
            record("resample", polled_pts)

        if cand.mean < center_pt.mean:
            move = cand.theta - center_pt.theta
            nrm = np.linalg.norm(move)
            if nrm > 0:
                orientation = _householder_to(move / nrm)
            center_pt = cand
            size *= config.expand_factor
            decision = "expand"
        else:
            size *= config.shrink_factor
            decision = "shrink"

        for p in polled_pts + [center_pt]:
            if p.mean < best_pt.mean or (p.mean == best_pt.mean and p.sigma < best_pt.sigma):
                best_pt = p
        record(decision, polled_pts)

        if size < config.min_stencil:
            termination = "stencil"
            break

    return OptimizerTrace(
        iterations,
        best_pt.theta.copy(),
        best_pt.mean,
        best_pt.sigma,
        search.spent,
        termination,
    )


# --- full VQE wiring -------------------------------------------------------------

@dataclass
class VqeResult:
    """Optimized parameters plus the state and energies prepared at them."""

    theta_opt: np.ndarray
    trace: OptimizerTrace
    rho_out: object                  # DensityOperator over the qubits
    energy_exact: float              # exact expectation at theta_opt
    energy_estimate: object          # EnergyEstimate when shots were used, else None
    model: object


def prepare_state(theta, template, noise, d_max, prune_threshold, rng=None,
                  leak_tol=1e-6):
    """Transpile and run the circuit from the alternating input pattern.

    Returns a HybridState (noiseless), StateEnsemble (thermal-only or
    trajectory noise), or HybridDensity (density-mode noise).
    """
    from .circuit import neel_input, run_circuit, transpile
    from .hilbert import neel_bits
    from .noise import thermal_ensemble_run

    circ = transpile(template, theta, prune_threshold)
    if noise is None:
        return run_circuit(neel_input(template.n_qubits, d_max, leak_tol=leak_tol), circ)
    if not noise.has_channels:
        return thermal_ensemble_run(
            neel_bits(template.n_qubits), circ, noise.nbar, d_max, leak_tol
        )
    init = neel_input(template.n_qubits, d_max, leak_tol=leak_tol)
    return run_circuit(init, circ, noise=noise, rng=rng)


def vqe_run(model, template=None, noise=None, shots=None,
            config: Optional[OptimizerConfig] = None, seed: int = 0,
            d_max: Optional[int] = None, prune_threshold: Optional[float] = None,
            leak_tol: float = 1e-6, theta0: Optional[np.ndarray] = None,
            progress: Optional[Callable] = None) -> VqeResult:
    """Optimize the circuit angles against the chain energy and prepare the result.

    The cost is the measured energy of the transpiled circuit: exact
    expectation when `shots` is None (sigma = 0), otherwise a three-basis
    shot estimate whose error bar feeds the noise-aware search.  Budget
    accounting uses shots when sampling (eval_cost = 3 * shots per call) and
    cost calls otherwise.  All randomness descends from `seed`.
    """
    from .circuit import PRUNE_THRESHOLD, default_template
    from .hilbert import StateEnsemble, expectation, partial_trace_boson
    from .measurement import estimate_energy, sample_measurements
    from .model import build_hamiltonian

    config = config or OptimizerConfig()
    template = template or default_template(model.n_sites)
    if template.n_qubits != model.n_sites:
        raise DimensionError(
            f"template has {template.n_qubits} qubits, model has {model.n_sites} sites"
        )
    d_max = d_max if d_max is not None else model.n_sites // 2 + 2
    prune = PRUNE_THRESHOLD if prune_threshold is None else prune_threshold
    master = np.random.default_rng(seed)
    orientation_seed = int(master.integers(2**31))
    ham = build_hamiltonian(model)
    trajectory_mode = noise is not None and noise.has_channels and noise.mode == "trajectories"

    def child_rng():
        return np.random.default_rng(int(master.integers(2**63)))

    def measured_energy(state, rng):
        if shots:
            records = {
                b: sample_measurements(state, b, shots, rng) for b in ("X", "Y", "Z")
            }
            est = estimate_energy(records, model)
            return est.value, est.std_error, est
        if trajectory_mode and isinstance(state, StateEnsemble):
            vals = np.array([expectation(s, ham) for s in state.states])
            sem = vals.std(ddof=1) / math.sqrt(len(vals)) if len(vals) > 1 else 0.0
            return float(np.dot(state.weights, vals)), float(sem), None
        return expectation(state, ham), 0.0, None

    def cost(theta):
        rng = child_rng() if (trajectory_mode or shots) else None
        state = prepare_state(theta, template, noise, d_max, prune, rng, leak_tol)
        value, sigma, _ = measured_energy(state, rng)
        if progress is not None:
            progress(theta, value, sigma)
        return value, sigma

    theta0 = np.zeros(template.n_parameters) if theta0 is None else np.asarray(theta0, float)
    eval_cost = 3.0 * shots if shots else 1.0
    trace = pattern_search(cost, theta0, config, seed=orientation_seed, eval_cost=eval_cost)

    theta_opt = trace.best_theta
    final_rng = child_rng() if (trajectory_mode or shots) else None
    final_state = prepare_state(theta_opt, template, noise, d_max, prune, final_rng, leak_tol)
    energy_exact = expectation(final_state, ham)
    estimate = None
    if shots:
        sample_rng = child_rng()
        records = {
            b: sample_measurements(final_state, b, shots, sample_rng) for b in ("X", "Y", "Z")
        }
        estimate = estimate_energy(records, model)
    rho_out = partial_trace_boson(final_state)
    return VqeResult(theta_opt, trace, rho_out, energy_exact, estimate, model)
