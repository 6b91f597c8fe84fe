"""Command-line pipeline: simulate, decompose, select-hyper, assess.

Every run takes a JSON configuration (all fields optional, flags win over
the file) and writes its outputs plus an echo of the fully resolved
configuration into the output directory, so a run can be reproduced from
the echo alone.  Exit codes: 0 success, 1 computational failure, 2
configuration or I/O error.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .embedding import build_training_set, load_timeseries
from .errors import (
    DegenerateSpectrumError,
    DivergenceError,
    EquilibriumError,
    FitError,
    InsufficientDataError,
    ParseError,
)
from .gp import KernelParams, default_hyper_grid, diag_task_covariance, fit, loocv_select
from .koopman import decompose, mode_table
from .montecarlo import Scenario, run_trials, summarize
from .swingsim import add_noise, disturbed_init, find_equilibrium, load_grid, observe, simulate

BUILTIN_GRIDS = ("ne10", "three-machine")

_CONFIG_ERRORS = (ParseError, InsufficientDataError, ValueError, KeyError, OSError,
                  json.JSONDecodeError)
_COMPUTE_ERRORS = (FitError, DegenerateSpectrumError, DivergenceError, EquilibriumError,
                   RuntimeError)


@dataclass
class PipelineConfig:
    """Resolved run configuration; mirrors the JSON schema one to one."""

    grid: str = "ne10"
    disturbance: dict = field(default_factory=lambda: {
        "gen": 8, "delta_rad": 1.5, "omega_rad_s": 3.0,
    })
    sampling: dict = field(default_factory=lambda: {"rate_hz": 15.0, "window_s": 4.0})
    embedding_order: int = 15
    hyper: dict = field(default_factory=lambda: {
        "policy": "first-trial",
        "objective": "squared_error",
        "signal_variances": [0.25, 0.5, 1.0, 2.0, 4.0],
        "length_scales": [0.5, 1.0, 2.0, 4.0, 8.0],
        "noise_variances": [1e-4, 1e-3, 1e-2, 1e-1],
        "fixed": None,
    })
    noise_sigma: float = 0.1
    seed: int = 0
    trials: int = 100
    track_modes: int = 2
    output_dir: str = "out"
    integrator: dict = field(default_factory=lambda: {"rtol": 1e-8, "atol": 1e-10})
    plots: bool = False

    def validate(self):
        if self.embedding_order < 1:
            raise ValueError(f"embedding_order must be >= 1, got {self.embedding_order}")
        if self.sampling["rate_hz"] <= 0:
            raise ValueError("sampling.rate_hz must be positive")
        if self.sampling["window_s"] <= 0:
            raise ValueError("sampling.window_s must be positive")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.track_modes < 1:
            raise ValueError("track_modes must be >= 1")
        if self.hyper.get("policy", "first-trial") not in (
            "fixed", "reference", "first-trial", "per-trial"
        ):
            raise ValueError(f"unknown hyper.policy {self.hyper.get('policy')!r}")
        self.resolve_grid_path()

    def resolve_grid_path(self) -> str:
        if self.grid in BUILTIN_GRIDS:
            return self.grid
        path = Path(self.grid)
        if not path.is_file():
            raise FileNotFoundError(f"grid config not found: {path}")
        return str(path.resolve())

    def hyper_grid(self):
        return tuple(
            default_hyper_grid(
                signal_variances=self.hyper.get("signal_variances", (0.25, 0.5, 1.0, 2.0, 4.0)),
                length_scales=self.hyper.get("length_scales", (0.5, 1.0, 2.0, 4.0, 8.0)),
                noise_variances=self.hyper.get("noise_variances", (1e-4, 1e-3, 1e-2, 1e-1)),
            )
        )

    def fixed_hyper(self):
        fx = self.hyper.get("fixed")
        if fx is None:
            return None, None
        return (
            KernelParams(fx["signal_variance"], fx["length_scale"]),
            float(fx["noise_variance"]),
        )


def load_config(path=None, overrides=None) -> PipelineConfig:
    cfg = PipelineConfig()
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        for key, value in doc.items():
            if not hasattr(cfg, key):
                raise ValueError(f"unknown configuration key {key!r}")
            if isinstance(getattr(cfg, key), dict) and isinstance(value, dict):
                merged = dict(getattr(cfg, key))
                merged.update(value)
                setattr(cfg, key, merged)
            else:
                setattr(cfg, key, value)
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if "." in key:
            section, sub = key.split(".", 1)
            getattr(cfg, section)[sub] = value
        else:
            setattr(cfg, key, value)
    cfg.validate()
    return cfg


def resolve_grid(name_or_path: str):
    if name_or_path in BUILTIN_GRIDS:
        fname = name_or_path.replace("-", "_") + ".json"
        with resources.files("gpkoopman.grids").joinpath(fname).open("r") as fh:
            return load_grid(fh)
    return load_grid(name_or_path)


def _echo_config(cfg: PipelineConfig, outdir: Path):
    doc = asdict(cfg)
    doc["grid"] = cfg.resolve_grid_path()
    with open(outdir / "config.json", "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _fmt(v):
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        return repr(v)
    return v


def _json_stat(stat):
    return {
        "mean": stat.mean, "std": stat.std,
        "lower": stat.lower, "upper": stat.upper,
        "q025": getattr(stat, "q025", None), "q975": getattr(stat, "q975", None),
        "count": stat.count,
    }


def _simulate_clean(cfg: PipelineConfig):
    grid = resolve_grid(cfg.grid)
    equilibrium = find_equilibrium(grid)
    dist = cfg.disturbance
    init = disturbed_init(
        grid, equilibrium, int(dist["gen"]),
        float(dist["delta_rad"]), float(dist["omega_rad_s"]),
    )
    traj = simulate(
        grid, init,
        t_end=float(cfg.sampling["window_s"]),
        output_period=1.0 / float(cfg.sampling["rate_hz"]),
        rtol=float(cfg.integrator["rtol"]),
        atol=float(cfg.integrator["atol"]),
    )
    return grid, traj, observe(traj)


def cmd_simulate(args) -> int:
    cfg = load_config(args.config, _overrides(args))
    outdir = Path(cfg.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    grid, traj, clean = _simulate_clean(cfg)

    labels = grid.labels()
    header = ["t_s"] + [f"delta_{l}" for l in labels] + [f"omega_{l}" for l in labels]
    rows = [
        [traj.times[i]] + list(traj.angles[i]) + list(traj.speeds[i])
        for i in range(traj.times.shape[0])
    ]
    _write_csv(outdir / "trajectory.csv", header, rows)

    observed = clean
    if cfg.noise_sigma > 0:
        observed = add_noise(clean, cfg.noise_sigma, cfg.seed)
    _write_csv(
        outdir / "observed.csv",
        list(observed.labels),
        observed.values.T.tolist(),
    )
    _echo_config(cfg, outdir)

    peaks = np.abs(traj.speeds).max(axis=0)
    peak_str = " ".join(f"{l}={peaks[i]:.3f}" for i, l in enumerate(labels))
    print(f"simulated {traj.times.shape[0]} samples over {traj.times[-1]:g} s; "
          f"peak |domega| (rad/s): {peak_str}")
    print(f"wrote {outdir / 'trajectory.csv'} and {outdir / 'observed.csv'}")
    return 0


def _select_for_series(cfg: PipelineConfig, ts):
    policy = cfg.hyper.get("policy", "first-trial")
    if policy == "fixed":
        params, nv = cfg.fixed_hyper()
        if params is None:
            raise ValueError("hyper.policy is 'fixed' but hyper.fixed is missing")
        return params, nv
    params, tasks = loocv_select(
        ts, cfg.hyper_grid(), objective=cfg.hyper.get("objective", "squared_error")
    )
    return params, float(tasks.noise_variances[0])


def cmd_decompose(args) -> int:
    cfg = load_config(args.config, _overrides(args))
    outdir = Path(cfg.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    sample_period = 1.0 / float(cfg.sampling["rate_hz"])
    with open(args.series, "rb") as fh:
        seq = load_timeseries(fh, sample_period)
    if seq.n_steps < cfg.embedding_order + 1:
        raise InsufficientDataError(
            f"series has {seq.n_steps + 1} snapshots; embedding order "
            f"{cfg.embedding_order} needs at least {cfg.embedding_order + 2}"
        )
    ts = build_training_set(seq, cfg.embedding_order)
    params, nv = _select_for_series(cfg, ts)
    model = fit(ts, params, diag_task_covariance(ts, nv))
    dec = decompose(model)
    table = mode_table(dec)

    labels = seq.labels
    header = (["j", "norm", "growth_rate", "period_s", "character"]
              + [f"amp_{l}" for l in labels] + [f"phase_{l}" for l in labels])
    rows = []
    for ms in table:
        rows.append(
            [ms.index, ms.norm, ms.growth_rate,
             ms.period if ms.period is not None else "", ms.character]
            + list(ms.amplitudes) + list(ms.phases)
        )
    _write_csv(outdir / "modes.csv", header, rows)

    spectrum = {
        "sample_period_s": dec.sample_period,
        "task_labels": list(labels),
        "hyperparameters": {
            "signal_variance": params.signal_variance,
            "length_scale": params.length_scale,
            "noise_variance": nv,
        },
        "ritz_values": [{"real": z.real, "imag": z.imag} for z in dec.ritz_values],
        "companion_coeffs": dec.companion_coeffs.tolist(),
        "ritz_vectors_real": dec.ritz_vectors.real.tolist(),
        "ritz_vectors_imag": dec.ritz_vectors.imag.tolist(),
    }
    with open(outdir / "spectrum.json", "w", encoding="utf-8") as fh:
        json.dump(spectrum, fh, indent=2)
        fh.write("\n")

    res_norms = np.linalg.norm(dec.residuals, axis=1)
    _write_csv(
        outdir / "residuals.csv",
        ["k", "t_s", "residual_norm"],
        [[k, (k + cfg.embedding_order) * sample_period, res_norms[k]]
         for k in range(res_norms.shape[0])],
    )
    _echo_config(cfg, outdir)

    print(f"hyperparameters: signal_variance={params.signal_variance:g} "
          f"length_scale={params.length_scale:g} noise_variance={nv:g}")
    for ms in table[: cfg.track_modes]:
        period = "non-oscillatory" if ms.period is None else f"{ms.period:.3f} s"
        print(f"mode {ms.index}: norm={ms.norm:.3f} growth_rate={ms.growth_rate:.4f} "
              f"period={period}")
    print(f"max residual norm: {res_norms.max():.4g}")
    print(f"wrote {outdir / 'modes.csv'}, {outdir / 'spectrum.json'}, "
          f"{outdir / 'residuals.csv'}")
    return 0


def cmd_select_hyper(args) -> int:
    cfg = load_config(args.config, _overrides(args))
    outdir = Path(cfg.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    sample_period = 1.0 / float(cfg.sampling["rate_hz"])
    with open(args.series, "rb") as fh:
        seq = load_timeseries(fh, sample_period)
    ts = build_training_set(seq, cfg.embedding_order)
    objective = cfg.hyper.get("objective", "squared_error")
    params, tasks = loocv_select(ts, cfg.hyper_grid(), objective=objective)
    doc = {
        "signal_variance": params.signal_variance,
        "length_scale": params.length_scale,
        "noise_variance": float(tasks.noise_variances[0]),
        "objective": objective,
    }
    with open(outdir / "hyperparameters.json", "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
    _echo_config(cfg, outdir)
    print(f"selected: signal_variance={doc['signal_variance']:g} "
          f"length_scale={doc['length_scale']:g} "
          f"noise_variance={doc['noise_variance']:g} (objective: {objective})")
    return 0


def _scenario(cfg: PipelineConfig, clean) -> Scenario:
    fixed_params, fixed_nv = cfg.fixed_hyper()
    return Scenario(
        clean=clean,
        embedding_order=cfg.embedding_order,
        track_modes=cfg.track_modes,
        hyper_policy=cfg.hyper.get("policy", "first-trial"),
        hyper_grid=cfg.hyper_grid(),
        fixed_params=fixed_params,
        fixed_noise_variance=fixed_nv,
        loocv_objective=cfg.hyper.get("objective", "squared_error"),
    )


def cmd_assess(args) -> int:
    cfg = load_config(args.config, _overrides(args))
    outdir = Path(cfg.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    _, _, clean = _simulate_clean(cfg)
    scenario = _scenario(cfg, clean)
    trials = run_trials(scenario, cfg.trials, cfg.noise_sigma, cfg.seed,
                        n_jobs=args.jobs)
    summary = summarize(trials)

    labels = clean.labels
    header = ["trial", "seed", "ok", "error", "signal_variance", "length_scale",
              "noise_variance", "max_residual_norm"]
    for j in range(cfg.track_modes):
        header += [f"m{j + 1}_matched", f"m{j + 1}_growth_rate", f"m{j + 1}_period_s"]
        header += [f"m{j + 1}_amp_{l}" for l in labels]
        header += [f"m{j + 1}_phase_{l}" for l in labels]
    rows = []
    for t in trials:
        row = [t.trial, t.seed, int(t.ok), t.error or "", t.signal_variance,
               t.length_scale, t.noise_variance, t.max_residual_norm]
        for j in range(cfg.track_modes):
            if t.ok and j < len(t.modes):
                m = t.modes[j]
                row += [int(m.matched), m.growth_rate, m.period]
                row += list(m.amplitudes) + list(m.phases)
            else:
                row += [0, math.nan, math.nan]
                row += [math.nan] * (2 * len(labels))
        rows.append(row)
    _write_csv(outdir / "trials.csv", header, rows)

    doc = {
        "trial_count": summary.trial_count,
        "failure_count": summary.failure_count,
        "noise_sigma": cfg.noise_sigma,
        "task_labels": list(labels),
        "modes": [],
    }
    for ms in summary.modes:
        doc["modes"].append({
            "reference_eigenvalue": {
                "real": ms.reference_eigenvalue.real,
                "imag": ms.reference_eigenvalue.imag,
            },
            "matched_count": ms.matched_count,
            "growth_rate": _json_stat(ms.growth_rate),
            "period_s": _json_stat(ms.period),
            "amplitudes": [_json_stat(s) for s in ms.amplitudes],
            "phases": [
                {**_json_stat(s), "reliable": s.reliable} for s in ms.phases
            ],
        })
    with open(outdir / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")

    if cfg.plots or args.plots:
        _write_plots(trials, cfg.track_modes, outdir)
    _echo_config(cfg, outdir)

    print(f"{summary.trial_count} trials, {summary.failure_count} failures")
    for j, ms in enumerate(summary.modes):
        g = ms.growth_rate
        print(f"mode {j + 1}: |lambda| = {g.mean:.4f} +/- {g.half_width:.4f} "
              f"(95% interval [{g.lower:.4f}, {g.upper:.4f}], "
              f"matched {ms.matched_count}/{summary.trial_count - summary.failure_count})")
    print(f"wrote {outdir / 'trials.csv'} and {outdir / 'summary.json'}")
    return 0


def _write_plots(trials, n_modes, outdir: Path):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    plt.rcParams["svg.hashsalt"] = "gpkoopman"

    ok = [t for t in trials if t.ok]
    for stat, fname, ylabel in (
        ("growth_rate", "growth_rate.svg", "growth rate |lambda|"),
        ("period", "period.svg", "period [s]"),
    ):
        fig, ax = plt.subplots(figsize=(7, 3.2))
        for j in range(n_modes):
            xs = [t.trial for t in ok if t.modes[j].matched]
            ys = [getattr(t.modes[j], stat) for t in ok if t.modes[j].matched]
            ax.plot(xs, ys, ".", markersize=3, label=f"mode {j + 1}")
        ax.set_xlabel("trial")
        ax.set_ylabel(ylabel)
        ax.legend(loc="best", fontsize=8)
        fig.tight_layout()
        fig.savefig(outdir / fname, format="svg", metadata={"Date": None})
        plt.close(fig)


def _overrides(args) -> dict:
    out = {
        "grid": getattr(args, "grid", None),
        "seed": getattr(args, "seed", None),
        "noise_sigma": getattr(args, "noise_sigma", None),
        "embedding_order": getattr(args, "embedding_order", None),
        "trials": getattr(args, "trials", None),
        "track_modes": getattr(args, "track_modes", None),
        "output_dir": getattr(args, "output_dir", None),
    }
    if getattr(args, "t_end", None) is not None:
        out["sampling.window_s"] = args.t_end
    if getattr(args, "sample_hz", None) is not None:
        out["sampling.rate_hz"] = args.sample_hz
    if getattr(args, "disturb_gen", None) is not None:
        out["disturbance.gen"] = args.disturb_gen
    if getattr(args, "disturb_delta", None) is not None:
        out["disturbance.delta_rad"] = args.disturb_delta
    if getattr(args, "disturb_omega", None) is not None:
        out["disturbance.omega_rad_s"] = args.disturb_omega
    return out


def _add_common(sub):
    sub.add_argument("--config", help="JSON configuration file")
    sub.add_argument("--grid", help="grid JSON path or builtin name "
                                    f"({', '.join(BUILTIN_GRIDS)})")
    sub.add_argument("--seed", type=int, help="base RNG seed")
    sub.add_argument("--noise-sigma", type=float, dest="noise_sigma",
                     help="observation noise standard deviation")
    sub.add_argument("--t-end", type=float, dest="t_end", help="window length [s]")
    sub.add_argument("--sample-hz", type=float, dest="sample_hz", help="sampling rate [Hz]")
    sub.add_argument("-p", "--embedding-order", type=int, dest="embedding_order",
                     help="delay-embedding order (default 15)")
    sub.add_argument("--trials", type=int, help="Monte-Carlo trial count")
    sub.add_argument("--track-modes", type=int, dest="track_modes",
                     help="number of dominant modes to track")
    sub.add_argument("-o", "--output-dir", dest="output_dir", help="output directory")
    sub.add_argument("--disturb-gen", type=int, dest="disturb_gen",
                     help="machine label receiving the initial disturbance")
    sub.add_argument("--disturb-delta", type=float, dest="disturb_delta",
                     help="angle offset of the disturbance [rad]")
    sub.add_argument("--disturb-omega", type=float, dest="disturb_omega",
                     help="speed offset of the disturbance [rad/s]")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gpkoopman",
        description="GP-regression Koopman mode decomposition pipeline",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    sim = subs.add_parser("simulate", help="simulate swing dynamics, write time series")
    _add_common(sim)
    sim.set_defaults(func=cmd_simulate)

    dec = subs.add_parser("decompose", help="decompose a series CSV into modes")
    dec.add_argument("series", help="input time-series CSV (rows = snapshots)")
    _add_common(dec)
    dec.set_defaults(func=cmd_decompose)

    sel = subs.add_parser("select-hyper", help="LOO-CV hyperparameter selection")
    sel.add_argument("series", help="input time-series CSV (rows = snapshots)")
    _add_common(sel)
    sel.set_defaults(func=cmd_select_hyper)

    ass = subs.add_parser("assess", help="Monte-Carlo noise-robustness study")
    _add_common(ass)
    ass.add_argument("--plots", action="store_true", help="write SVG scatter plots")
    ass.add_argument("--jobs", type=int, default=1, help="parallel trial workers")
    ass.set_defaults(func=cmd_assess)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _COMPUTE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except _CONFIG_ERRORS as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
