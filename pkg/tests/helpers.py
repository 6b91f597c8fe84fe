"""Shared builders and independent oracles for the test suite.

The oracles here are deliberately written from scratch against the
defining formulas (dense Kronecker products, plain least-squares companion
DMD, scalar loops) so they share no code path with the package internals
they check.
"""

import numpy as np

from gpkoopman.embedding import SnapshotSequence, TrainingSet


def rotation_block(rho, theta):
    return rho * np.array([[np.cos(theta), -np.sin(theta)],
                           [np.sin(theta), np.cos(theta)]])


def planted_linear(seed, n_steps=60, m=4, rho=(0.98, 0.95), theta=(0.5, 1.1),
                   extra=0):
    """Noise-free output of a 4-eigenvalue real linear system.

    Two rotation-scaling blocks drive 4 modal coordinates that are mixed
    into ``m`` channels by a seeded orthonormal matrix.  Returns the
    (m, n_steps+1+extra) snapshot matrix and the 4 true eigenvalues.
    """
    rng = np.random.default_rng(seed)
    lam_true = np.array([
        rho[0] * np.exp(1j * theta[0]), rho[0] * np.exp(-1j * theta[0]),
        rho[1] * np.exp(1j * theta[1]), rho[1] * np.exp(-1j * theta[1]),
    ])
    a = np.zeros((4, 4))
    a[:2, :2] = rotation_block(rho[0], theta[0])
    a[2:, 2:] = rotation_block(rho[1], theta[1])
    w, _ = np.linalg.qr(rng.normal(size=(m, 4)))
    s = np.array([1.0, 0.0, 1.0, 0.0])
    cols = []
    for _ in range(n_steps + 1 + extra):
        cols.append(w @ s)
        s = a @ s
    return np.array(cols).T, lam_true


def periodic_sequence(seed, period=16, m=3, p=6):
    """Exactly periodic multichannel data with every harmonic excited.

    Built by tiling one period bit-exactly, so the embedded input one step
    past the data coincides with the first training input and companion
    DMD is exact.  Returns (values incl. one extra column, N, p).
    """
    rng = np.random.default_rng(seed)
    n_steps = p + period - 1
    k = np.arange(period)
    block = np.zeros((m, period))
    for ch in range(m):
        block[ch] += rng.uniform(0.3, 1.0)  # DC
        for h in range(1, period // 2):
            amp, phase = rng.uniform(0.3, 1.0), rng.uniform(0, 2 * np.pi)
            block[ch] += amp * np.cos(2 * np.pi * h * k / period + phase)
        block[ch] += rng.uniform(0.3, 1.0) * np.cos(np.pi * k)  # Nyquist
    reps = (n_steps + 2) // period + 1
    values = np.tile(block, (1, reps))[:, : n_steps + 2]
    return values, n_steps, p


def plain_companion_dmd(values, p):
    """Independent Arnoldi-type companion DMD oracle.

    Least-squares fit of the one-past-the-end delay-embedded snapshot as a
    combination of the previous embedded snapshots; eigenvalues from the
    fitted polynomial's roots; modes from a Vandermonde least-squares on
    the raw outputs.  Pure numpy, no package code.
    """
    m, ncols = values.shape
    n_steps = ncols - 1
    z = np.array([values[:, k - p:k].T.ravel() for k in range(p, n_steps + 2)])
    c = np.linalg.lstsq(z[:-1].T, z[-1], rcond=None)[0]
    lam = np.roots(np.concatenate(([1.0], -c[::-1])))
    order = np.lexsort((-lam.imag, -lam.real, -np.abs(lam)))
    lam = lam[order]
    t = np.vander(lam, N=n_steps - p + 1, increasing=True)
    v = np.linalg.lstsq(t.T, values[:, p:n_steps + 1].T, rcond=None)[0].T
    return lam, v


def dense_gp_oracle(ts, params, tasks, z_star):
    """Predictive mean and covariance via the raw joint-covariance formulas.

    Builds the full Kronecker matrices explicitly and solves with plain
    ``np.linalg.solve``; no reshaping tricks, no Cholesky reuse.
    """
    sv, ls = params.signal_variance, params.length_scale
    zs = ts.inputs / ts.input_scales
    zq = np.asarray(z_star, dtype=float) / ts.input_scales

    def kappa(a, b):
        return sv * np.exp(-np.sum((a - b) ** 2) / (2 * ls**2))

    n = ts.n_pairs
    k_mat = np.array([[kappa(zs[i], zs[j]) for j in range(n)] for i in range(n)])
    k_vec = np.array([kappa(zs[i], zq) for i in range(n)])
    kg = tasks.matrix
    d = np.diag(tasks.noise_variances)
    big = np.kron(k_mat, kg) + np.kron(np.eye(n), d)
    y = ts.outputs.ravel()
    mean = np.kron(k_vec[None, :], kg) @ np.linalg.solve(big, y)
    cross = np.kron(k_vec[:, None], kg)
    cov = kappa(zq, zq) * kg - cross.T @ np.linalg.solve(big, cross)
    return mean, cov


def gp_draw_training_set(seed, n=40, ell_true=0.5, sv_true=1.0, noise=0.05):
    """A 1-task training set drawn from a known GP (for LOO-CV recovery)."""
    from gpkoopman.gp import KernelParams, gram_matrix

    rng = np.random.default_rng(seed)
    inputs = rng.uniform(-1.0, 1.0, size=(n, 1))
    scales = np.abs(inputs).max(axis=0)
    shell = TrainingSet(inputs=inputs, outputs=np.zeros((n, 1)), embedding_order=1,
                        input_scales=scales, output_scales=np.ones(1),
                        sample_period=1.0)
    k_true = gram_matrix(shell, KernelParams(sv_true, ell_true))
    latent = rng.multivariate_normal(np.zeros(n), k_true)
    y = latent + noise * rng.standard_normal(n)
    return TrainingSet(inputs=inputs, outputs=y[:, None], embedding_order=1,
                       input_scales=scales,
                       output_scales=np.abs(y).max(keepdims=True),
                       sample_period=1.0), latent


def as_sequence(values, sample_period=1.0):
    return SnapshotSequence(values=np.asarray(values, dtype=float),
                            sample_period=sample_period)
