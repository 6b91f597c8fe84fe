"""Coupled swing dynamics of a reduced multi-machine grid (classical model).

Each machine is a second-order rotor: the angle advances with the speed
deviation, and the speed deviation responds to the imbalance between
mechanical input, damping, and the electrical power exchanged over the
reduced admittance network.  One machine is the infinite bus: its angle is
pinned and it only enters through the network coupling.  Machine labels are
1-based (label = array index + 1) so that the conventional numbering of the
ten-machine benchmark, with machine 1 as the reference, reads literally.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from .embedding import SnapshotSequence
from .errors import DivergenceError, EquilibriumError


@dataclass(frozen=True)
class GridModel:
    """Classical-model parameters of a reduced grid.

    All per-machine arrays (including the admittance matrices) cover every
    machine, reference included.  ``inertia`` and ``damping`` are in
    seconds, powers and voltages in per unit, ``base_frequency`` in Hz.
    """

    inertia: np.ndarray
    damping: np.ndarray
    mech_power: np.ndarray
    voltage: np.ndarray
    conductance: np.ndarray
    susceptance: np.ndarray
    base_frequency: float
    reference: int = 0
    reference_angle: float = 0.0
    name: str = ""

    def __post_init__(self):
        arrays = {}
        for attr in ("inertia", "damping", "mech_power", "voltage"):
            arrays[attr] = np.asarray(getattr(self, attr), dtype=float)
        for attr in ("conductance", "susceptance"):
            arrays[attr] = np.asarray(getattr(self, attr), dtype=float)
        n = arrays["inertia"].shape[0]
        for attr, a in arrays.items():
            if not np.all(np.isfinite(a)):
                raise ValueError(f"{attr} contains non-finite entries")
        for attr in ("damping", "mech_power", "voltage"):
            if arrays[attr].shape != (n,):
                raise ValueError(f"{attr} must have length {n}")
        for attr in ("conductance", "susceptance"):
            if arrays[attr].shape != (n, n):
                raise ValueError(f"{attr} must be {n}x{n}")
        if np.any(arrays["inertia"] <= 0):
            raise ValueError("inertia constants must be positive")
        if np.any(arrays["damping"] < 0):
            raise ValueError("damping coefficients must be non-negative")
        if not (self.base_frequency > 0 and np.isfinite(self.base_frequency)):
            raise ValueError(f"base frequency must be positive, got {self.base_frequency}")
        if not 0 <= self.reference < n:
            raise ValueError(f"reference index {self.reference} outside 0..{n - 1}")
        for attr, a in arrays.items():
            a = a.copy()
            a.setflags(write=False)
            object.__setattr__(self, attr, a)

    @property
    def n_machines(self) -> int:
        return self.inertia.shape[0]

    @property
    def n_gen(self) -> int:
        """Number of modeled generators (machines excluding the reference)."""
        return self.n_machines - 1

    @property
    def free(self) -> np.ndarray:
        """Indices of the non-reference machines."""
        return np.array([i for i in range(self.n_machines) if i != self.reference])

    def labels(self):
        return tuple(f"gen{i + 1}" for i in range(self.n_machines))


def load_grid(source) -> GridModel:
    """Build a GridModel from a JSON file path, file object, or dict."""
    if isinstance(source, dict):
        doc = source
    elif hasattr(source, "read"):
        doc = json.load(source)
    else:
        with open(source, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    return GridModel(
        inertia=doc["inertia_s"],
        damping=doc["damping_s"],
        mech_power=doc["mech_power_pu"],
        voltage=doc["voltage_pu"],
        conductance=doc["conductance_pu"],
        susceptance=doc["susceptance_pu"],
        base_frequency=doc["base_frequency_hz"],
        reference=doc.get("reference", 0),
        reference_angle=doc.get("reference_angle_rad", 0.0),
        name=doc.get("name", ""),
    )


def electrical_power(delta: np.ndarray, grid: GridModel) -> np.ndarray:
    """Injected electrical power of every machine at angles ``delta``:
    P_i = sum_j E_i E_j (G_ij cos(d_i - d_j) + B_ij sin(d_i - d_j))."""
    delta = np.asarray(delta, dtype=float)
    if delta.shape != (grid.n_machines,):
        raise ValueError(f"expected {grid.n_machines} angles, got shape {delta.shape}")
    diff = delta[:, None] - delta[None, :]
    e = grid.voltage
    coupling = grid.conductance * np.cos(diff) + grid.susceptance * np.sin(diff)
    return e * ((e[None, :] * coupling).sum(axis=1))


def power_jacobian(delta: np.ndarray, grid: GridModel) -> np.ndarray:
    """d P_e / d delta, used by the equilibrium Newton iteration."""
    delta = np.asarray(delta, dtype=float)
    diff = delta[:, None] - delta[None, :]
    e = grid.voltage
    s = (e[:, None] * e[None, :]) * (
        grid.conductance * np.sin(diff) - grid.susceptance * np.cos(diff)
    )
    np.fill_diagonal(s, 0.0)
    jac = s.copy()
    jac[np.diag_indices_from(jac)] = -s.sum(axis=1)
    return jac


def rhs(delta: np.ndarray, omega: np.ndarray, grid: GridModel):
    """Time derivatives (d delta/dt, d omega/dt) of the classical model.

    The reference machine's derivatives are pinned to zero.
    """
    delta = np.asarray(delta, dtype=float)
    omega = np.asarray(omega, dtype=float)
    if not (np.all(np.isfinite(delta)) and np.all(np.isfinite(omega))):
        raise DivergenceError("non-finite state passed to the swing equations")
    p_e = electrical_power(delta, grid)
    d_delta = omega.copy()
    d_omega = (np.pi * grid.base_frequency / grid.inertia) * (
        grid.mech_power - grid.damping * omega - p_e
    )
    d_delta[grid.reference] = 0.0
    d_omega[grid.reference] = 0.0
    return d_delta, d_omega


@dataclass(frozen=True)
class Trajectory:
    """Sampled swing trajectory: times, rotor angles, and speed deviations."""

    times: np.ndarray
    angles: np.ndarray
    speeds: np.ndarray
    reference: int
    machine_labels: tuple = field(default=())

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        a = np.asarray(self.angles, dtype=float)
        w = np.asarray(self.speeds, dtype=float)
        if a.shape != w.shape or a.shape[0] != t.shape[0]:
            raise ValueError("inconsistent trajectory array shapes")
        if np.any(np.diff(t) <= 0):
            raise ValueError("times must be strictly increasing")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(a)) and np.all(np.isfinite(w))):
            raise DivergenceError("trajectory contains non-finite values")
        for name, arr in (("times", t), ("angles", a), ("speeds", w)):
            arr = arr.copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)


def simulate(
    grid: GridModel,
    init,
    t_end: float,
    output_period: float,
    rtol: float = 1e-8,
    atol: float = 1e-10,
) -> Trajectory:
    """Integrate the swing equations with an adaptive Dormand-Prince 4(5)
    scheme and sample the dense solution at multiples of ``output_period``.
    """
    if t_end <= 0:
        raise ValueError(f"t_end must be positive, got {t_end}")
    if output_period <= 0:
        raise ValueError(f"output_period must be positive, got {output_period}")
    delta0, omega0 = (np.asarray(x, dtype=float) for x in init)
    n = grid.n_machines
    if delta0.shape != (n,) or omega0.shape != (n,):
        raise ValueError(f"initial state must have {n} angles and {n} speeds")
    if not (np.all(np.isfinite(delta0)) and np.all(np.isfinite(omega0))):
        raise DivergenceError("non-finite initial state", last_valid_time=0.0)

    def f(_t, x):
        dd, dw = rhs(x[:n], x[n:], grid)
        return np.concatenate([dd, dw])

    # Guard against 4/(1/15) = 59.999... style round-off when counting samples.
    n_out = int(np.floor(t_end / output_period + 1e-9))
    times = np.minimum(np.arange(n_out + 1) * output_period, t_end)

    sol = solve_ivp(
        f,
        (0.0, float(t_end)),
        np.concatenate([delta0, omega0]),
        method="RK45",
        t_eval=times,
        rtol=rtol,
        atol=atol,
    )
    if not sol.success:
        last = float(sol.t[-1]) if sol.t.size else 0.0
        raise DivergenceError(
            f"integration failed at t={last:g}: {sol.message}", last_valid_time=last
        )
    return Trajectory(
        times=times,
        angles=sol.y[:n].T,
        speeds=sol.y[n:].T,
        reference=grid.reference,
        machine_labels=grid.labels(),
    )


def find_equilibrium(grid: GridModel, max_iter: int = 100, tol: float = 1e-10):
    """Solve P_m = P_e(delta) for the free machines by damped Newton from
    delta = 0, with the reference machine pinned at its configured angle.

    Returns ``(delta_star, omega_star)`` with zero speed deviations.
    """
    free = grid.free
    delta = np.zeros(grid.n_machines)
    delta[grid.reference] = grid.reference_angle

    def residual(d):
        return grid.mech_power[free] - electrical_power(d, grid)[free]

    r = residual(delta)
    for _ in range(max_iter):
        if np.abs(r).max() < tol:
            return delta, np.zeros(grid.n_machines)
        jac = -power_jacobian(delta, grid)[np.ix_(free, free)]
        try:
            step = np.linalg.solve(jac, -r)
        except np.linalg.LinAlgError:
            raise EquilibriumError(
                f"singular Jacobian at residual {np.abs(r).max():.3g}",
                residual=float(np.abs(r).max()),
            ) from None
        # Backtracking: halve the step until the residual norm decreases.
        lam = 1.0
        norm0 = np.linalg.norm(r)
        for _ in range(40):
            trial = delta.copy()
            trial[free] += lam * step
            r_trial = residual(trial)
            if np.linalg.norm(r_trial) < norm0:
                delta, r = trial, r_trial
                break
            lam *= 0.5
        else:
            raise EquilibriumError(
                f"line search stalled at residual {norm0:.3g}", residual=float(norm0)
            )
    raise EquilibriumError(
        f"no convergence after {max_iter} iterations, residual {np.abs(r).max():.3g}",
        residual=float(np.abs(r).max()),
    )


def disturbed_init(grid: GridModel, equilibrium, gen: int, d_delta: float, d_omega: float):
    """Equilibrium state with an angle/speed offset added at one machine.

    ``gen`` is the 1-based machine label; disturbing the reference machine
    is rejected.
    """
    delta_star, omega_star = (np.asarray(x, dtype=float).copy() for x in equilibrium)
    idx = gen - 1
    if not 0 <= idx < grid.n_machines:
        raise ValueError(f"machine label {gen} outside 1..{grid.n_machines}")
    if idx == grid.reference:
        raise ValueError(f"machine {gen} is the reference; it cannot be disturbed")
    delta_star[idx] += d_delta
    omega_star[idx] += d_omega
    return delta_star, omega_star


def observe(traj: Trajectory) -> SnapshotSequence:
    """Rotor speed deviations of the non-reference machines as a snapshot
    sequence (the observable used throughout this package)."""
    n = traj.angles.shape[1]
    free = [i for i in range(n) if i != traj.reference]
    labels = None
    if traj.machine_labels:
        labels = tuple(traj.machine_labels[i] for i in free)
    return SnapshotSequence(
        values=traj.speeds[:, free].T,
        sample_period=float(traj.times[1] - traj.times[0]),
        labels=labels,
    )


def seeded_rng(*key) -> np.random.Generator:
    """Counter-based generator keyed by one or more integers; the same key
    always yields the same stream, independent of call order."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))


def add_noise(seq: SnapshotSequence, sigma: float, seed: int) -> SnapshotSequence:
    """A copy of ``seq`` with i.i.d. Gaussian perturbations of standard
    deviation ``sigma`` on every entry; deterministic in ``seed``."""
    if sigma < 0:
        raise ValueError(f"noise standard deviation must be >= 0, got {sigma}")
    if sigma == 0:
        return seq
    rng = seeded_rng(seed)
    noisy = seq.values + sigma * rng.standard_normal(seq.values.shape)
    return SnapshotSequence(values=noisy, sample_period=seq.sample_period, labels=seq.labels)
