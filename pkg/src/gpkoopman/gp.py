"""Multi-task Gaussian-process regression with Kronecker-structured covariance.

The prior over the M latent functions is separable: the covariance between
task i at input z_k and task j at input z_l is ``Kg[i, j] * kappa(z_k, z_l)``
with a Gaussian kernel kappa acting on scale-normalized inputs.  Observation
noise is independent per task, so the joint covariance of all stacked
training outputs is ``kron(K, Kg) + kron(I, D)``.  Fitting solves that dense
system once by Cholesky factorization; predictions then reduce to small
matrix products through the weight matrices H and B = Kg @ H.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.spatial.distance import cdist

from .embedding import TrainingSet, scaled_input
from .errors import FitError

#: Jitter ladder for the big Cholesky: first retry adds JITTER_BASE times the
#: signal variance to the diagonal, each further retry multiplies by 10.
JITTER_BASE = 1e-12
MAX_JITTER_RETRIES = 4

DEFAULT_SIGNAL_VARIANCES = (0.25, 0.5, 1.0, 2.0, 4.0)
DEFAULT_LENGTH_SCALES = (0.5, 1.0, 2.0, 4.0, 8.0)
DEFAULT_NOISE_VARIANCES = (1e-4, 1e-3, 1e-2, 1e-1)


@dataclass(frozen=True)
class KernelParams:
    """Gaussian-kernel hyperparameters: signal variance and length scale."""

    signal_variance: float
    length_scale: float

    def __post_init__(self):
        for name in ("signal_variance", "length_scale"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise ValueError(f"{name} must be positive and finite, got {v}")


@dataclass(frozen=True)
class TaskCovariance:
    """Inter-task covariance matrix plus per-task observation-noise variances."""

    matrix: np.ndarray
    noise_variances: np.ndarray

    def __post_init__(self):
        kg = np.asarray(self.matrix, dtype=float)
        nv = np.atleast_1d(np.asarray(self.noise_variances, dtype=float))
        if kg.ndim != 2 or kg.shape[0] != kg.shape[1]:
            raise ValueError(f"task matrix must be square, got shape {kg.shape}")
        if nv.shape != (kg.shape[0],):
            raise ValueError("noise_variances length must equal the task count")
        if not np.allclose(kg, kg.T, rtol=0, atol=1e-12 * max(1.0, np.abs(kg).max())):
            raise ValueError("task matrix must be symmetric")
        eigs = np.linalg.eigvalsh(kg)
        if eigs.min() < -1e-10 * max(1.0, eigs.max()):
            raise ValueError(f"task matrix must be PSD, min eigenvalue {eigs.min():g}")
        if np.any(nv < 0):
            raise ValueError("noise variances must be non-negative")
        kg = kg.copy()
        kg.setflags(write=False)
        nv = nv.copy()
        nv.setflags(write=False)
        object.__setattr__(self, "matrix", kg)
        object.__setattr__(self, "noise_variances", nv)

    @property
    def n_tasks(self) -> int:
        return self.matrix.shape[0]


def diag_task_covariance(ts: TrainingSet, noise_variance: float) -> TaskCovariance:
    """The fixed inter-task covariance diag(1/ss_1, ..., 1/ss_M) with one
    shared noise variance for all tasks."""
    return TaskCovariance(
        matrix=np.diag(1.0 / ts.output_scales),
        noise_variances=np.full(ts.n_tasks, float(noise_variance)),
    )


def kernel_eval(z_a, z_b, params: KernelParams, scales) -> float:
    """Gaussian kernel on scale-normalized inputs.

    Returns ``sv * exp(-sum(((z_a - z_b)/s)**2) / (2*l**2))``.
    """
    da = scaled_input(z_a, scales)
    db = scaled_input(z_b, scales)
    if da.shape != db.shape:
        raise ValueError(f"input dimensions disagree: {da.shape} vs {db.shape}")
    sq = float(np.sum((da - db) ** 2))
    return params.signal_variance * math.exp(-sq / (2.0 * params.length_scale**2))


def _scaled_inputs(ts: TrainingSet) -> np.ndarray:
    return ts.inputs / ts.input_scales


def gram_matrix(ts: TrainingSet, params: KernelParams) -> np.ndarray:
    """Kernel Gram matrix over all training inputs (symmetric, diagonal
    pinned to the signal variance)."""
    if ts.n_pairs == 0:
        raise ValueError("training set is empty")
    zs = _scaled_inputs(ts)
    d2 = cdist(zs, zs, metric="sqeuclidean")
    k = params.signal_variance * np.exp(-d2 / (2.0 * params.length_scale**2))
    k = 0.5 * (k + k.T)
    np.fill_diagonal(k, params.signal_variance)
    return k


def kernel_vector(ts: TrainingSet, params: KernelParams, z_star) -> np.ndarray:
    """Vector of kernel evaluations of every training input against z_star."""
    z_star = np.asarray(z_star, dtype=float)
    if z_star.shape != (ts.inputs.shape[1],):
        raise ValueError(
            f"test input has dimension {z_star.shape}, expected ({ts.inputs.shape[1]},)"
        )
    zs = _scaled_inputs(ts)
    d2 = np.sum((zs - z_star / ts.input_scales) ** 2, axis=1)
    return params.signal_variance * np.exp(-d2 / (2.0 * params.length_scale**2))


@dataclass(frozen=True)
class GpModel:
    """A fitted multi-task GP.

    ``weight_H`` is the M x (N-p+1) matrix whose vectorization solves
    ``[kron(K, Kg) + kron(I, D)] vec(H) = y``; ``weight_B = Kg @ H`` maps
    kernel vectors to predictive means.  The Cholesky factor of the big
    system matrix (including any jitter that was needed) is kept so that
    predictive covariances reuse the factorization.
    """

    training: TrainingSet
    kernel: KernelParams
    tasks: TaskCovariance
    gram: np.ndarray
    weight_H: np.ndarray
    weight_B: np.ndarray
    _chol: tuple = field(repr=False)
    jitter: float = 0.0

    @property
    def n_tasks(self) -> int:
        return self.tasks.n_tasks

    @property
    def outputs_vec(self) -> np.ndarray:
        """Stacked training outputs [y_p; ...; y_N]."""
        return self.training.outputs.ravel()


def _chol_with_jitter(a: np.ndarray):
    """Cholesky with a geometric jitter ladder; returns (factor, jitter).

    The base jitter is relative to the matrix's own diagonal scale, which
    for a unit task covariance is simply the signal variance.
    """
    scale = float(np.abs(np.diag(a)).max())
    jitter = 0.0
    for attempt in range(MAX_JITTER_RETRIES + 1):
        try:
            mat = a if jitter == 0.0 else a + jitter * np.eye(a.shape[0])
            return cho_factor(mat, lower=True), jitter
        except np.linalg.LinAlgError:
            jitter = JITTER_BASE * scale * 10.0**attempt
    cond = float(np.linalg.cond(a))
    raise FitError(
        f"system matrix not positive definite after jitter up to {jitter:g} "
        f"(condition estimate {cond:.3g})",
        condition=cond,
    )


def fit(ts: TrainingSet, params: KernelParams, tasks: TaskCovariance) -> GpModel:
    """Fit the multi-task GP by one dense Cholesky solve.

    The system matrix has dimension M*(N-p+1); at the scales this package
    targets (a few hundred) a dense factorization is cheap and exact.
    """
    if tasks.n_tasks != ts.n_tasks:
        raise ValueError(
            f"task covariance is {tasks.n_tasks}-dimensional but the training "
            f"set has {ts.n_tasks} tasks"
        )
    k = gram_matrix(ts, params)
    a = np.kron(k, tasks.matrix)
    a[np.diag_indices_from(a)] += np.tile(tasks.noise_variances, ts.n_pairs)
    chol, jitter = _chol_with_jitter(a)

    y = ts.outputs.ravel()
    vec_h = cho_solve(chol, y)
    h = vec_h.reshape(ts.n_pairs, ts.n_tasks).T
    b = tasks.matrix @ h
    return GpModel(
        training=ts,
        kernel=params,
        tasks=tasks,
        gram=k,
        weight_H=h,
        weight_B=b,
        _chol=chol,
        jitter=jitter,
    )


def predict_mean(model: GpModel, z_star) -> np.ndarray:
    """Predictive mean of the latent functions at a new embedded input."""
    kappa = kernel_vector(model.training, model.kernel, z_star)
    return model.weight_B @ kappa


def predict_cov(model: GpModel, z_star) -> np.ndarray:
    """Predictive covariance (M x M) of the latent functions at z_star.

    95% confidence intervals are mean +/- 1.96 * sqrt(diagonal).
    """
    kappa = kernel_vector(model.training, model.kernel, z_star)
    kg = model.tasks.matrix
    cross = np.kron(kappa[:, None], kg)  # (n*M, M)
    solved = cho_solve(model._chol, cross)
    cov = model.kernel.signal_variance * kg - cross.T @ solved
    return 0.5 * (cov + cov.T)


def default_hyper_grid(
    signal_variances=DEFAULT_SIGNAL_VARIANCES,
    length_scales=DEFAULT_LENGTH_SCALES,
    noise_variances=DEFAULT_NOISE_VARIANCES,
):
    """Cartesian candidate grid of (KernelParams, noise variance) pairs."""
    return [
        (KernelParams(sv, ls), nv)
        for sv in signal_variances
        for ls in length_scales
        for nv in noise_variances
    ]


def _loo_objective(ts: TrainingSet, params: KernelParams, noise_variance: float,
                   objective: str) -> float:
    """Leave-one-out score for one candidate, lower is better.

    Held-out blocks are whole snapshots (all M tasks of one training pair at
    once).  With A the big system matrix, the LOO residual of block b is
    ``inv(inv(A)[b, b]) @ (inv(A) y)[b]`` -- the block form of the classic
    closed-form LOO identity, so no refits are needed.
    """
    m = ts.n_tasks
    n = ts.n_pairs
    tasks = diag_task_covariance(ts, noise_variance)
    k = gram_matrix(ts, params)
    a = np.kron(k, tasks.matrix)
    a[np.diag_indices_from(a)] += np.tile(tasks.noise_variances, n)
    try:
        chol, _ = _chol_with_jitter(a)
    except FitError:
        return math.inf
    a_inv = cho_solve(chol, np.eye(m * n))
    alpha = cho_solve(chol, ts.outputs.ravel())

    total = 0.0
    for b in range(n):
        sl = slice(b * m, (b + 1) * m)
        prec = a_inv[sl, sl]  # inverse of the held-out predictive covariance
        resid = np.linalg.solve(prec, alpha[sl])
        if objective == "squared_error":
            total += float(resid @ resid)
        else:  # negative log predictive density
            sign, logdet = np.linalg.slogdet(prec)
            if sign <= 0:
                return math.inf
            total += 0.5 * (float(resid @ prec @ resid) - logdet + m * math.log(2 * math.pi))
    if objective == "squared_error":
        return total / (n * m)
    return total / n


def loocv_select(ts: TrainingSet, grid=None, objective: str = "squared_error"):
    """Pick kernel hyperparameters and the shared noise variance by LOO-CV.

    ``grid`` is a list of (KernelParams, noise_variance) candidates; ties on
    the objective are broken toward larger length scale, then smaller signal
    variance, then smaller noise variance so the result never depends on
    evaluation order.  Returns the winning ``(KernelParams, TaskCovariance)``.
    """
    if grid is None:
        grid = default_hyper_grid()
    if len(grid) == 0:
        raise ValueError("hyperparameter grid is empty")
    if objective not in ("squared_error", "nlpd"):
        raise ValueError(f"unknown LOO-CV objective {objective!r}")

    scored = []
    for params, nv in grid:
        score = _loo_objective(ts, params, float(nv), objective)
        scored.append((score, -params.length_scale, params.signal_variance, nv, params))
    scored.sort(key=lambda t: t[:4])
    best = scored[0]
    if not math.isfinite(best[0]):
        raise FitError("every grid candidate failed to factorize")
    params = best[4]
    return params, diag_task_covariance(ts, best[3])
