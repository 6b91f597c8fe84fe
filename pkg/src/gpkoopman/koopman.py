"""Ritz values, Ritz vectors, and mode statistics from a fitted GP model.

The latent-mean matrix plays the role of the denoised snapshot sequence.
Fitting its one-step-ahead prediction as a linear combination of the latent
means yields a companion matrix; its eigenvalues estimate the Koopman
eigenvalues and the Vandermonde solve against those eigenvalues turns the
latent means into the per-task mode vectors.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import DegenerateSpectrumError
from .gp import GpModel, kernel_vector

#: Switch from direct solves to SVD-based pseudo-inverse / least squares
#: when a Gram or Vandermonde matrix is worse conditioned than this.
COND_LIMIT = 1e12

#: Relative singular-value cutoff for the pseudo-inverse path.
PINV_RCOND = 1e-12

#: Ritz values closer than this are treated as a degenerate spectrum.
DISTINCT_TOL = 1e-10

#: |Im ln lambda| below this marks a mode as non-oscillatory.
FREQ_TOL = 1e-10

#: Reference components smaller than this cannot anchor relative phases.
REFERENCE_TOL = 1e-12


def latent_mean_matrix(model: GpModel) -> np.ndarray:
    """Latent means at every training input, as columns: B @ K(z, z)."""
    return model.weight_B @ model.gram


def companion_vector(model: GpModel) -> np.ndarray:
    """Regression coefficients c expressing the one-step-ahead prediction in
    terms of the latent means: solves K(z, z) c = kappa(z, z_next).

    The direct solve is attempted first and kept whenever it actually
    solves the system (LU is backward stable, so ill conditioning alone
    does not invalidate it); a Moore-Penrose pseudo-inverse (truncated
    SVD, minimum-norm solution) covers genuinely singular Gram matrices
    such as duplicated training inputs.
    """
    kappa = kernel_vector(model.training, model.kernel, model.training.next_input)
    k = model.gram
    scale = np.linalg.norm(kappa) + np.linalg.norm(k)
    try:
        c = np.linalg.solve(k, kappa)
        if np.all(np.isfinite(c)) and np.linalg.norm(k @ c - kappa) <= 1e-8 * scale:
            return c
    except np.linalg.LinAlgError:
        pass
    return np.linalg.pinv(k, rcond=PINV_RCOND) @ kappa


def companion_matrix(c: np.ndarray) -> np.ndarray:
    """The n x n companion matrix with ones on the subdiagonal and c as the
    last column."""
    c = np.asarray(c, dtype=float)
    n = c.shape[0]
    mat = np.zeros((n, n))
    if n > 1:
        mat[np.arange(1, n), np.arange(n - 1)] = 1.0
    mat[:, -1] = c
    return mat


def ritz_values(c: np.ndarray) -> np.ndarray:
    """Eigenvalues of the companion matrix of ``c``, sorted by descending
    magnitude, then descending real part, then descending imaginary part."""
    c = np.asarray(c, dtype=float)
    if c.ndim != 1 or c.shape[0] < 1:
        raise ValueError("companion coefficients must be a non-empty vector")
    lam = np.linalg.eigvals(companion_matrix(c))
    order = np.lexsort((-lam.imag, -lam.real, -np.abs(lam)))
    return lam[order]


def vandermonde(lam: np.ndarray, n_powers: int) -> np.ndarray:
    """Rows [1, lam_j, lam_j^2, ..., lam_j^(n_powers-1)]."""
    return np.vander(np.asarray(lam, dtype=complex), N=n_powers, increasing=True)


def ritz_vectors(latent_means: np.ndarray, lam: np.ndarray) -> np.ndarray:
    """Mode vectors V with V @ T = latent_means, T the Vandermonde matrix
    of the Ritz values.

    Solved as a scaled linear system rather than by explicit inversion;
    falls back to SVD least squares when T is too ill conditioned.  Raises
    :class:`DegenerateSpectrumError` when two Ritz values coincide to
    within 1e-10, since the Vandermonde matrix is then singular.
    """
    lam = np.asarray(lam, dtype=complex)
    n = lam.shape[0]
    if latent_means.shape[1] != n:
        raise ValueError("latent means and Ritz values disagree on mode count")
    if n > 1:
        gaps = np.abs(lam[:, None] - lam[None, :])
        gaps[np.diag_indices(n)] = np.inf
        if gaps.min() < DISTINCT_TOL:
            pair = np.unravel_index(np.argmin(gaps), gaps.shape)
            raise DegenerateSpectrumError(
                f"Ritz values {pair[0]} and {pair[1]} are within {gaps.min():.3g}; "
                "perturb the data or shrink the analysis window"
            )

    t = vandermonde(lam, n)
    # Solve T^T V^T = G^T with the columns of T^T balanced to unit max-abs.
    s = t.T.copy()
    col_scale = np.abs(s).max(axis=0)
    col_scale[col_scale == 0.0] = 1.0
    s_scaled = s / col_scale
    rhs = latent_means.T.astype(complex)
    if np.linalg.cond(s_scaled) <= COND_LIMIT:
        w = np.linalg.solve(s_scaled, rhs)
    else:
        w, *_ = np.linalg.lstsq(s_scaled, rhs, rcond=None)
    return (w / col_scale[:, None]).T


@dataclass(frozen=True)
class KoopmanDecomposition:
    """The spectral decomposition of one fitted model.

    ``latent_means[:, k]`` reconstructs as ``sum_j ritz_values[j]**k *
    ritz_vectors[:, j]``; ``residuals[k]`` is the gap between the raw
    output y_{k+p} and the latent mean.  ``next_prediction`` is the
    one-step-ahead predictive mean (the expansion evaluated one step past
    the data), exposed separately because no observation exists to form a
    residual there.
    """

    ritz_values: np.ndarray
    ritz_vectors: np.ndarray
    latent_means: np.ndarray
    companion_coeffs: np.ndarray
    residuals: np.ndarray
    sample_period: float
    next_prediction: np.ndarray

    @property
    def n_modes(self) -> int:
        return self.ritz_values.shape[0]

    @property
    def n_tasks(self) -> int:
        return self.ritz_vectors.shape[0]


def decompose(model: GpModel) -> KoopmanDecomposition:
    """Run the full spectral extraction on a fitted model."""
    g = latent_mean_matrix(model)
    c = companion_vector(model)
    lam = ritz_values(c)
    v = ritz_vectors(g, lam)
    residuals = model.training.outputs - g.T
    return KoopmanDecomposition(
        ritz_values=lam,
        ritz_vectors=v,
        latent_means=g,
        companion_coeffs=c,
        residuals=residuals,
        sample_period=model.training.sample_period,
        next_prediction=g @ c,
    )


def reconstruct(dec: KoopmanDecomposition, k: int):
    """Evaluate the mode expansion sum_j lambda_j^k v_j at step k.

    Returns ``(value, residual)`` where ``value`` is the real part of the
    expansion and ``residual`` the stored regression error at k.
    """
    if not 0 <= k < dec.n_modes:
        raise ValueError(f"step k={k} outside 0..{dec.n_modes - 1}")
    value = dec.ritz_vectors @ dec.ritz_values**k
    return value.real, dec.residuals[k]


@dataclass(frozen=True)
class ModeStats:
    """Summary of one (conjugate-collapsed) mode.

    ``period`` is in seconds and ``None`` for non-oscillatory or decayed
    modes; ``character`` says which.  ``phases`` are relative to
    ``reference_task`` and are NaN when that component is too small to
    anchor them.  ``column`` indexes back into the decomposition arrays.
    """

    index: int
    column: int
    eigenvalue: complex
    norm: float
    growth_rate: float
    period: float | None
    character: str
    amplitudes: np.ndarray
    phases: np.ndarray
    reference_task: int


def mode_shape(dec: KoopmanDecomposition, j: int, reference_task: int):
    """Per-task amplitudes and phases of mode ``j`` (a column index).

    Phases are principal arguments of v_i / v_ref, so the reference task
    has phase exactly 0.  Raises ``ValueError`` when the reference
    component is numerically zero.
    """
    v = dec.ritz_vectors[:, j]
    ref = v[reference_task]
    if np.abs(ref) < REFERENCE_TOL:
        raise ValueError(
            f"reference task {reference_task} has amplitude {np.abs(ref):.3g} "
            "in this mode; choose a task with non-vanishing participation"
        )
    amplitudes = np.abs(v)
    phases = np.angle(v / ref)
    phases[reference_task] = 0.0
    return amplitudes, phases


def _conjugate_pairs(lam: np.ndarray):
    """Indices of the modes to keep: one representative per conjugate pair
    (the positive-imaginary one) plus every real mode."""
    n = lam.shape[0]
    consumed = np.zeros(n, dtype=bool)
    # Visit positive-imag members first so they represent their pairs.
    order = sorted(range(n), key=lambda i: (-np.abs(lam[i]), -lam[i].real, -lam[i].imag))
    keep = []
    for j in order:
        if consumed[j]:
            continue
        consumed[j] = True
        keep.append(j)
        if lam[j].imag != 0:
            tol = 1e-8 * max(1.0, np.abs(lam[j]))
            partners = [
                i for i in range(n)
                if not consumed[i] and np.abs(lam[i] - np.conj(lam[j])) <= tol
            ]
            if partners:
                consumed[min(partners, key=lambda i: np.abs(lam[i] - np.conj(lam[j])))] = True
    keep.sort()
    return keep


def mode_table(dec: KoopmanDecomposition, reference_task: int | None = None):
    """Mode statistics sorted by descending vector norm.

    Conjugate pairs are collapsed to the positive-frequency representative.
    The period is 2*pi*T / Im[ln lambda] with the principal logarithm;
    modes with |Im ln lambda| below 1e-10 are marked non-oscillatory and a
    zero eigenvalue marks a fully decayed mode.
    """
    if reference_task is None:
        reference_task = dec.n_tasks - 1
    rows = []
    for j in _conjugate_pairs(dec.ritz_values):
        lam = dec.ritz_values[j]
        v = dec.ritz_vectors[:, j]
        amplitudes = np.abs(v)
        if amplitudes[reference_task] >= REFERENCE_TOL:
            phases = np.angle(v / v[reference_task])
            phases[reference_task] = 0.0
        else:
            phases = np.full(dec.n_tasks, np.nan)
        if lam == 0:
            character, period, growth = "decayed", None, 0.0
        else:
            growth = float(np.abs(lam))
            freq = float(np.angle(lam))
            if abs(freq) < FREQ_TOL:
                character, period = "non-oscillatory", None
            else:
                character = "oscillatory"
                period = 2.0 * np.pi * dec.sample_period / freq
        rows.append(
            ModeStats(
                index=0,
                column=j,
                eigenvalue=complex(lam),
                norm=float(np.linalg.norm(v)),
                growth_rate=growth,
                period=period,
                character=character,
                amplitudes=amplitudes,
                phases=phases,
                reference_task=reference_task,
            )
        )
    rows.sort(key=lambda r: -r.norm)
    return [replace(row, index=rank + 1) for rank, row in enumerate(rows)]
