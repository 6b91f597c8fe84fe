"""Repeated noise -> GP -> spectral-decomposition trials and their summary.

One clean snapshot sequence is perturbed by many independent, seeded noise
realizations.  Each trial re-runs the full decomposition and its modes are
matched to the modes of a reference (noise-free) decomposition by nearest
Ritz value in the complex plane.  The summary reports mean, standard
deviation, and 95% intervals (mean +/- 1.96 sigma, plus empirical 2.5/97.5
percentiles) per tracked statistic; phases are summarized with circular
statistics so wrap-around at +/-pi does not corrupt the mean.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .embedding import SnapshotSequence, build_training_set
from .errors import DegenerateSpectrumError, DivergenceError, FitError
from .gp import KernelParams, default_hyper_grid, diag_task_covariance, fit, loocv_select
from .koopman import FREQ_TOL, REFERENCE_TOL, decompose, mode_table
from .swingsim import add_noise

#: A trial mode farther than this from its reference Ritz value is unmatched.
MATCH_RADIUS = 0.1

#: Mean amplitude below this fraction of the largest task amplitude marks the
#: task's phase statistics as unreliable.
PHASE_AMPLITUDE_FLOOR = 0.05


@dataclass(frozen=True)
class Scenario:
    """Everything a noise study needs besides the trial count and noise level.

    ``hyper_policy`` chooses where hyperparameters come from: ``"fixed"``
    uses ``fixed_params``/``fixed_noise_variance`` verbatim; ``"reference"``
    selects once by LOO-CV on the clean data; ``"first-trial"`` selects once
    on the first noisy realization; ``"per-trial"`` re-selects inside every
    trial.  Everything except per-trial re-selection freezes the
    hyperparameters so that the trial spread isolates the noise effect.
    """

    clean: SnapshotSequence
    embedding_order: int
    track_modes: int = 2
    reference_task: int | None = None
    hyper_policy: str = "first-trial"
    hyper_grid: tuple | None = None
    fixed_params: KernelParams | None = None
    fixed_noise_variance: float | None = None
    loocv_objective: str = "squared_error"
    match_radius: float = MATCH_RADIUS

    def __post_init__(self):
        if self.hyper_policy not in ("fixed", "reference", "first-trial", "per-trial"):
            raise ValueError(f"unknown hyper policy {self.hyper_policy!r}")
        if self.hyper_policy == "fixed" and (
            self.fixed_params is None or self.fixed_noise_variance is None
        ):
            raise ValueError("fixed policy requires fixed_params and fixed_noise_variance")
        if self.track_modes < 1:
            raise ValueError("track_modes must be >= 1")

    def grid(self):
        return list(self.hyper_grid) if self.hyper_grid is not None else default_hyper_grid()


@dataclass(frozen=True)
class ModeSample:
    """One tracked mode in one trial (NaNs when unmatched)."""

    matched: bool
    reference_eigenvalue: complex
    eigenvalue: complex
    distance: float
    growth_rate: float
    period: float
    amplitudes: np.ndarray
    phases: np.ndarray


@dataclass(frozen=True)
class TrialResult:
    trial: int
    seed: int
    ok: bool
    error: str | None
    modes: tuple = ()
    signal_variance: float = math.nan
    length_scale: float = math.nan
    noise_variance: float = math.nan
    max_residual_norm: float = math.nan


def trial_seed(base_seed: int, trial: int) -> int:
    """Deterministic per-trial noise seed derived from (base_seed, trial)."""
    return int(np.random.SeedSequence((base_seed, trial)).generate_state(1, np.uint64)[0])


def select_hyper(scenario: Scenario, sigma: float, base_seed: int):
    """Resolve the scenario's hyperparameter policy to concrete values.

    Returns ``(KernelParams, noise_variance)``; for the per-trial policy
    these are the reference values (clean-data selection) that the
    reference decomposition uses.
    """
    if scenario.hyper_policy == "fixed":
        return scenario.fixed_params, float(scenario.fixed_noise_variance)
    if scenario.hyper_policy == "first-trial" and sigma > 0:
        data = add_noise(scenario.clean, sigma, trial_seed(base_seed, 0))
    else:
        data = scenario.clean
    ts = build_training_set(data, scenario.embedding_order)
    params, tasks = loocv_select(ts, scenario.grid(), objective=scenario.loocv_objective)
    return params, float(tasks.noise_variances[0])


def reference_modes(scenario: Scenario, params: KernelParams, noise_variance: float):
    """Decompose the clean data and return (decomposition, tracked ModeStats)."""
    ts = build_training_set(scenario.clean, scenario.embedding_order)
    model = fit(ts, params, diag_task_covariance(ts, noise_variance))
    dec = decompose(model)
    table = mode_table(dec, reference_task=scenario.reference_task)
    return dec, table[: scenario.track_modes]


def _mode_samples(dec, refs, reference_task, match_radius):
    samples = []
    for ref in refs:
        dists = np.abs(dec.ritz_values - ref.eigenvalue)
        j = int(dists.argmin())
        dist = float(dists[j])
        if dist > match_radius:
            nan_v = np.full(dec.n_tasks, np.nan)
            samples.append(ModeSample(False, complex(ref.eigenvalue), complex(np.nan, np.nan),
                                      dist, math.nan, math.nan, nan_v, nan_v.copy()))
            continue
        lam = dec.ritz_values[j]
        v = dec.ritz_vectors[:, j]
        freq = float(np.angle(lam))
        period = (
            2.0 * math.pi * dec.sample_period / freq if abs(freq) >= FREQ_TOL else math.nan
        )
        amplitudes = np.abs(v)
        ref_task = reference_task if reference_task is not None else dec.n_tasks - 1
        if amplitudes[ref_task] >= REFERENCE_TOL:
            phases = np.angle(v / v[ref_task])
            phases[ref_task] = 0.0
        else:
            phases = np.full(dec.n_tasks, np.nan)
        samples.append(ModeSample(True, complex(ref.eigenvalue), complex(lam), dist,
                                  float(np.abs(lam)), period, amplitudes, phases))
    return tuple(samples)


def _run_one(scenario, sigma, base_seed, t, params, noise_variance, refs):
    seed = trial_seed(base_seed, t)
    try:
        noisy = add_noise(scenario.clean, sigma, seed)
        ts = build_training_set(noisy, scenario.embedding_order)
        if scenario.hyper_policy == "per-trial":
            params, tasks = loocv_select(
                ts, scenario.grid(), objective=scenario.loocv_objective
            )
            noise_variance = float(tasks.noise_variances[0])
        model = fit(ts, params, diag_task_covariance(ts, noise_variance))
        dec = decompose(model)
        samples = _mode_samples(dec, refs, scenario.reference_task, scenario.match_radius)
        return TrialResult(
            trial=t,
            seed=seed,
            ok=True,
            error=None,
            modes=samples,
            signal_variance=params.signal_variance,
            length_scale=params.length_scale,
            noise_variance=noise_variance,
            max_residual_norm=float(np.linalg.norm(dec.residuals, axis=1).max()),
        )
    except (FitError, DegenerateSpectrumError, DivergenceError, ValueError) as exc:
        return TrialResult(trial=t, seed=seed, ok=False, error=str(exc))


def run_trials(
    scenario: Scenario,
    n_trials: int,
    sigma: float,
    base_seed: int,
    n_jobs: int = 1,
):
    """Run ``n_trials`` seeded noise realizations through the pipeline.

    Trial t perturbs the clean data with noise seeded from
    ``(base_seed, t)``, so results are reproducible and independent of
    execution order.  Individual trial failures are recorded in their
    TrialResult; only a fully failed ensemble raises.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    if sigma < 0:
        raise ValueError("noise standard deviation must be >= 0")
    params, noise_variance = select_hyper(scenario, sigma, base_seed)
    _, refs = reference_modes(scenario, params, noise_variance)

    args = [(scenario, sigma, base_seed, t, params, noise_variance, refs)
            for t in range(n_trials)]
    if n_jobs == 1:
        results = [_run_one(*a) for a in args]
    else:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(_run_one, *zip(*args)))
    if not any(r.ok for r in results):
        raise RuntimeError(
            f"all {n_trials} trials failed; first error: {results[0].error}"
        )
    return results


@dataclass(frozen=True)
class Stat:
    """Location/spread summary of one scalar statistic across trials."""

    mean: float
    std: float
    lower: float
    upper: float
    q025: float
    q975: float
    count: int

    @classmethod
    def of(cls, values) -> "Stat":
        values = np.asarray([v for v in values if math.isfinite(v)], dtype=float)
        if values.size == 0:
            return cls(math.nan, math.nan, math.nan, math.nan, math.nan, math.nan, 0)
        mean = float(values.mean())
        std = float(values.std())
        return cls(
            mean=mean,
            std=std,
            lower=mean - 1.96 * std,
            upper=mean + 1.96 * std,
            q025=float(np.percentile(values, 2.5)),
            q975=float(np.percentile(values, 97.5)),
            count=int(values.size),
        )

    @property
    def half_width(self) -> float:
        return 1.96 * self.std


@dataclass(frozen=True)
class CircularStat:
    """Direction/spread of an angular statistic (radians)."""

    mean: float
    std: float
    lower: float
    upper: float
    count: int
    reliable: bool = True

    @classmethod
    def of(cls, angles, reliable=True) -> "CircularStat":
        angles = np.asarray([a for a in angles if math.isfinite(a)], dtype=float)
        if angles.size == 0:
            return cls(math.nan, math.nan, math.nan, math.nan, 0, reliable)
        z = np.exp(1j * angles).mean()
        rbar = min(float(np.abs(z)), 1.0)
        mean = float(np.angle(z))
        std = math.sqrt(max(-2.0 * math.log(rbar), 0.0)) if rbar > 0 else math.inf
        return cls(mean, std, mean - 1.96 * std, mean + 1.96 * std, int(angles.size),
                   reliable)


@dataclass(frozen=True)
class ModeSummary:
    reference_eigenvalue: complex
    matched_count: int
    growth_rate: Stat
    period: Stat
    amplitudes: tuple
    phases: tuple


@dataclass(frozen=True)
class McSummary:
    trial_count: int
    failure_count: int
    modes: tuple = field(default=())


def summarize(trials) -> McSummary:
    """Aggregate trial results into per-mode statistics with 95% intervals."""
    ok = [t for t in trials if t.ok]
    if not ok:
        raise ValueError("no successful trials to summarize")
    n_modes = len(ok[0].modes)
    mode_summaries = []
    for j in range(n_modes):
        samples = [t.modes[j] for t in ok]
        matched = [s for s in samples if s.matched]
        growth = Stat.of([s.growth_rate for s in matched])
        period = Stat.of([s.period for s in matched])
        if matched:
            n_tasks = matched[0].amplitudes.shape[0]
            amp_stats = tuple(
                Stat.of([s.amplitudes[i] for s in matched]) for i in range(n_tasks)
            )
            amp_means = np.array([a.mean for a in amp_stats])
            floor = PHASE_AMPLITUDE_FLOOR * np.nanmax(amp_means)
            phase_stats = tuple(
                CircularStat.of(
                    [s.phases[i] for s in matched],
                    reliable=bool(amp_means[i] >= floor),
                )
                for i in range(n_tasks)
            )
        else:
            amp_stats, phase_stats = (), ()
        ref_eig = samples[0].reference_eigenvalue
        mode_summaries.append(
            ModeSummary(
                reference_eigenvalue=ref_eig,
                matched_count=len(matched),
                growth_rate=growth,
                period=period,
                amplitudes=amp_stats,
                phases=phase_stats,
            )
        )
    return McSummary(
        trial_count=len(trials),
        failure_count=len(trials) - len(ok),
        modes=tuple(mode_summaries),
    )
