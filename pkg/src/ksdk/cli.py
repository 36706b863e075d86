"""Command line front end.

Every subcommand resolves its knobs as defaults < config file < flags,
echoes the resolved values and the package version into the output
directory, then runs.  Exit codes: 0 on success, 2 when a statistical or
structural verdict fails, 1 on any error.  Outputs are deterministic:
identical (config, seed, workers) produce byte-identical files, and the
worker count only sets FFT threading, never results.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from ksdk import __version__
from ksdk.config import CONFIG_KEYS, load_config, resolve
from ksdk.deterministic import EvolutionParams, build_baseline, solve
from ksdk.experiments import (
    ExperimentReport,
    _csv_cell,
    cosine_background,
    run_blowup,
    run_clt,
    run_convolution_scaling,
    run_enhancement_scan,
    run_lln,
    run_negativity,
    run_particle_comparison,
)
from ksdk.noise import sample_increment
from ksdk.particles import mean_field_gap, simulate_particles, uniform_cloud
from ksdk.spectral import FourierField, from_grid, set_fft_workers, to_grid
from ksdk.stochastic import skeleton_solve, solve_ou, solve_spde

_COMMANDS = (
    "simulate-det",
    "simulate-spde",
    "simulate-ou",
    "simulate-particles",
    "skeleton",
    "enhancement-scan",
    "experiment-lln",
    "experiment-clt",
    "experiment-negativity",
    "experiment-blowup",
    "experiment-particles",
    "selftest",
)

# extra value flags per subcommand, beyond --config/--seed/--workers/--out
_EXTRA_FLAGS = {
    "simulate-det": ("modes", "chi"),
    "simulate-spde": ("eps", "delta", "chi", "modes"),
    "simulate-ou": ("chi", "modes"),
    "simulate-particles": ("samples", "chi"),
    "skeleton": ("chi", "modes"),
    "enhancement-scan": ("modes", "samples"),
    "experiment-lln": ("chi", "modes", "samples"),
    "experiment-clt": ("eps", "delta", "chi", "modes", "samples"),
    "experiment-negativity": ("chi", "modes", "samples"),
    "experiment-blowup": ("delta", "chi", "modes", "samples"),
    "experiment-particles": ("chi", "modes", "samples"),
    "selftest": (),
}

# CLI-owned defaults for the direct simulation commands; experiment
# commands inherit their defaults from the experiment functions instead
_SIM_DEFAULTS = {
    "simulate-det": {"modes": 32, "dt": 2.5e-4, "horizon": 0.25, "chi": 1.0},
    "simulate-spde": {
        "modes": 15, "dt": 1e-3, "horizon": 0.1, "chi": 1.0,
        "eps": 1e-2, "delta": 0.2,
    },
    "simulate-ou": {"modes": 15, "dt": 1e-3, "horizon": 0.1, "chi": 1.0},
    "simulate-particles": {
        "samples": 1000, "dt": 5e-4, "horizon": 0.01, "chi": 0.0,
    },
    "skeleton": {"modes": 15, "dt": 1e-3, "horizon": 0.05, "chi": 1.0},
}

_BACKGROUND_AMPLITUDE = 0.2  # initial state of the direct simulations


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad usage; here 2 is reserved for
    # verdict failures, so usage problems are routed to the error path
    def error(self, message):
        raise _UsageError(message)


def build_parser() -> _Parser:
    parser = _Parser(prog="ksdk", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="flat TOML config file")
        p.add_argument("--seed", type=int, help=CONFIG_KEYS["seed"][1])
        p.add_argument("--workers", type=int, help=CONFIG_KEYS["workers"][1])
        p.add_argument("--out", help=CONFIG_KEYS["out"][1])
        for flag in _EXTRA_FLAGS[name]:
            kind, desc = CONFIG_KEYS[flag]
            p.add_argument(f"--{flag}", type=kind, help=desc)
        if name == "enhancement-scan":
            p.add_argument(
                "--target", choices=("hierarchy", "convolution"),
                help=CONFIG_KEYS["target"][1],
            )
    return parser


def _resolve_outdir(cfg: dict, command: str) -> Path:
    if cfg.get("out"):
        return Path(cfg["out"])
    env = os.environ.get("KSDK_OUT")
    if env:
        return Path(env) / command
    return Path("ksdk-out") / command


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(
        json.dumps(payload, sort_keys=True, indent=2, allow_nan=False) + "\n"
    )


def _echo_config(outdir: Path, command: str, cfg: dict, knobs) -> None:
    """Resolved configuration and version, the reproducibility contract."""
    payload = {
        "command": command,
        "version": __version__,
        "seed": cfg["seed"],
        "workers": cfg["workers"],
    }
    for key in knobs:
        payload[key] = cfg.get(key)
    _write_json(outdir / "config.json", payload)


def _write_trace(path: Path, columns: dict) -> None:
    cols = list(columns)
    lines = [",".join(cols)]
    for row in zip(*(columns[c] for c in cols)):
        lines.append(",".join(_csv_cell(float(v)) for v in row))
    path.write_text("\n".join(lines) + "\n")


def _params(cfg: dict) -> EvolutionParams:
    return EvolutionParams(
        M=cfg["modes"], dt=cfg["dt"], horizon=cfg["horizon"], chi=cfg["chi"]
    )


# ---------------------------------------------------------------------------
# Direct simulation commands


def _cmd_simulate_det(cfg: dict, outdir: Path) -> int:
    params = _params(cfg)
    traj = solve(cosine_background(params.M, _BACKGROUND_AMPLITUDE), params)
    _write_trace(outdir / "trace.csv", {
        "time": traj.times,
        "l2": traj.l2_path,
        "mass": traj.mass_path,
        "min_value": traj.min_path,
    })
    np.save(outdir / "final.npy", traj.stored_fields[-1].coeffs)
    _write_json(outdir / "summary.json", {
        "version": __version__,
        "blew_up_at": traj.blew_up_at,
        "final_l2": float(traj.l2_path[-1]),
        "final_mass": float(traj.mass_path[-1]),
    })
    return 0


def _cmd_simulate_spde(cfg: dict, outdir: Path) -> int:
    params = _params(cfg)
    rho0 = cosine_background(params.M, _BACKGROUND_AMPLITUDE)
    baseline = build_baseline(rho0, params, keep_coeffs=True)
    path = solve_spde(
        rho0, params, cfg["eps"], cfg["delta"], baseline, cfg["seed"]
    )
    _write_trace(outdir / "trace.csv", {
        "time": path.times,
        "l2": path.l2_path,
        "min_value": path.min_path,
        "negative_part_l2": path.neg_l2_path,
        "mass": path.mass_path,
    })
    np.save(outdir / "final.npy", path.final.coeffs)
    _write_json(outdir / "summary.json", {
        "version": __version__,
        "crossed": path.crossed,
        "stopped_at": path.stopped_at,
        "sup_gap_to_deterministic": path.sup_gap,
        "final_l2": float(path.l2_path[-1]),
    })
    return 0


def _cmd_simulate_ou(cfg: dict, outdir: Path) -> int:
    params = _params(cfg)
    rho0 = cosine_background(params.M, _BACKGROUND_AMPLITUDE)
    baseline = build_baseline(rho0, params, need_drift=True)
    final = solve_ou(params, baseline, cfg["seed"])
    np.save(outdir / "final.npy", final.coeffs)
    _write_json(outdir / "summary.json", {
        "version": __version__,
        "final_l2": float(np.sqrt(np.sum(np.abs(final.coeffs) ** 2))),
    })
    return 0


def _cmd_simulate_particles(cfg: dict, outdir: Path) -> int:
    n = cfg["samples"]
    n_steps = round(cfg["horizon"] / cfg["dt"])
    cloud = uniform_cloud(n, cfg["seed"])
    final, _ = simulate_particles(
        cloud, cfg["dt"], n_steps, cfg["chi"], cfg["seed"]
    )
    np.save(outdir / "positions.npy", final)
    gap = mean_field_gap(
        final, FourierField.constant(32, 1.0), delta=0.05, gamma=-1.0
    )
    _write_json(outdir / "summary.json", {
        "version": __version__,
        "n_particles": n,
        "gap_to_flat_profile": gap,
    })
    return 0


def _cmd_skeleton(cfg: dict, outdir: Path) -> int:
    # the unforced skeleton must reproduce the deterministic flow bit for
    # bit; this doubles as an end-to-end structural check
    params = _params(cfg)
    rho0 = cosine_background(params.M, _BACKGROUND_AMPLITUDE)
    det = solve(rho0, params)
    out = skeleton_solve(rho0, params, build_baseline(rho0, params))
    identical = bool(
        np.array_equal(out.coeffs, det.stored_fields[-1].coeffs)
    )
    np.save(outdir / "final.npy", out.coeffs)
    _write_json(outdir / "summary.json", {
        "version": __version__,
        "identical_to_deterministic": identical,
    })
    print(f"skeleton identical to deterministic: {identical}")
    return 0 if identical else 2


# ---------------------------------------------------------------------------
# Experiment commands


def _experiment_kwargs(cfg: dict, mapping: dict) -> dict:
    out = {}
    for key, name in mapping.items():
        if cfg.get(key) is not None:
            out[name] = cfg[key]
    return out


def _finish_experiment(rep: ExperimentReport, outdir: Path) -> int:
    rep.write(outdir)
    for name, ok in rep.verdicts.items():
        print(f"verdict {name}: {'pass' if ok else 'FAIL'}")
    if not rep.verdicts:
        print("no verdicts; estimates recorded")
    return 0 if rep.passed else 2


_SHARED_MAP = {"modes": "M", "dt": "dt", "horizon": "horizon", "chi": "chi"}


def _cmd_experiment_lln(cfg: dict, outdir: Path) -> int:
    kw = _experiment_kwargs(cfg, {**_SHARED_MAP, "samples": "n_samples"})
    return _finish_experiment(run_lln(seed=cfg["seed"], **kw), outdir)


def _cmd_experiment_clt(cfg: dict, outdir: Path) -> int:
    kw = _experiment_kwargs(cfg, {
        **_SHARED_MAP, "samples": "n_samples", "eps": "eps", "delta": "delta",
    })
    return _finish_experiment(run_clt(seed=cfg["seed"], **kw), outdir)


def _cmd_experiment_negativity(cfg: dict, outdir: Path) -> int:
    kw = _experiment_kwargs(cfg, {**_SHARED_MAP, "samples": "n_samples"})
    return _finish_experiment(run_negativity(seed=cfg["seed"], **kw), outdir)


def _cmd_experiment_blowup(cfg: dict, outdir: Path) -> int:
    kw = _experiment_kwargs(cfg, {
        **_SHARED_MAP, "samples": "n_samples", "delta": "delta",
    })
    return _finish_experiment(run_blowup(seed=cfg["seed"], **kw), outdir)


def _cmd_experiment_particles(cfg: dict, outdir: Path) -> int:
    kw = _experiment_kwargs(cfg, {
        **_SHARED_MAP, "samples": "n_repeats",
    })
    return _finish_experiment(
        run_particle_comparison(seed=cfg["seed"], **kw), outdir
    )


def _cmd_enhancement_scan(cfg: dict, outdir: Path) -> int:
    target = cfg.get("target") or "hierarchy"
    kw = _experiment_kwargs(cfg, {
        "modes": "M", "dt": "dt", "horizon": "horizon",
        "samples": "n_samples",
    })
    if target == "hierarchy":
        rep = run_enhancement_scan(seed=cfg["seed"], **kw)
    elif target == "convolution":
        rep = run_convolution_scaling(seed=cfg["seed"], **kw)
    else:
        raise ValueError("target must be 'hierarchy' or 'convolution'")
    return _finish_experiment(rep, outdir)


# ---------------------------------------------------------------------------
# Self test


def _cmd_selftest(cfg: dict, outdir: Path) -> int:
    """Fast structural identities; seconds, not minutes."""
    checks: dict[str, bool] = {}

    f = cosine_background(8, 0.3)
    f.coeffs += FourierField.harmonic(8, (2, 1), 0.1).coeffs
    back = from_grid(to_grid(f), 8)
    checks["grid_round_trip"] = bool(
        np.max(np.abs(back.coeffs - f.coeffs)) < 1e-12
    )

    inc = sample_increment(cfg["seed"], 0, 0, 6, 1e-3)
    checks["increment_hermitian"] = bool(
        np.allclose(inc, np.conj(inc[..., ::-1, ::-1]), atol=0.0)
    )

    params = EvolutionParams(M=8, dt=1e-3, horizon=0.02, chi=1.3)
    rho0 = cosine_background(8, _BACKGROUND_AMPLITUDE)
    det = solve(rho0, params)
    checks["mass_conserved"] = bool(
        np.max(np.abs(det.mass_path - det.mass_path[0])) < 1e-13
    )

    baseline = build_baseline(rho0, params, keep_coeffs=True)
    quiet = solve_spde(rho0, params, 0.0, 0.2, baseline, cfg["seed"])
    checks["zero_noise_reduction"] = bool(
        np.array_equal(quiet.final.coeffs, det.stored_fields[-1].coeffs)
    )

    out = skeleton_solve(rho0, params, baseline)
    checks["skeleton_reduction"] = bool(
        np.array_equal(out.coeffs, det.stored_fields[-1].coeffs)
    )

    _write_json(outdir / "selftest.json", {
        "version": __version__,
        "checks": checks,
        "passed": all(checks.values()),
    })
    for name, ok in checks.items():
        print(f"check {name}: {'pass' if ok else 'FAIL'}")
    return 0 if all(checks.values()) else 2


_HANDLERS = {
    "simulate-det": _cmd_simulate_det,
    "simulate-spde": _cmd_simulate_spde,
    "simulate-ou": _cmd_simulate_ou,
    "simulate-particles": _cmd_simulate_particles,
    "skeleton": _cmd_skeleton,
    "enhancement-scan": _cmd_enhancement_scan,
    "experiment-lln": _cmd_experiment_lln,
    "experiment-clt": _cmd_experiment_clt,
    "experiment-negativity": _cmd_experiment_negativity,
    "experiment-blowup": _cmd_experiment_blowup,
    "experiment-particles": _cmd_experiment_particles,
    "selftest": _cmd_selftest,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise _UsageError("a subcommand is required")

        file_cfg = load_config(args.config) if args.config else {}
        flag_cfg = {
            key: getattr(args, key, None)
            for key in CONFIG_KEYS
            if hasattr(args, key)
        }
        defaults = {"seed": 0, "workers": 1}
        defaults.update(_SIM_DEFAULTS.get(args.command, {}))
        cfg = resolve(file_cfg, flag_cfg, defaults)

        set_fft_workers(cfg["workers"])
        outdir = _resolve_outdir(cfg, args.command)
        outdir.mkdir(parents=True, exist_ok=True)
        knobs = sorted(
            set(_EXTRA_FLAGS[args.command])
            | (set(_SIM_DEFAULTS.get(args.command, {})))
            | ({"target"} if args.command == "enhancement-scan" else set())
            | ({"dt", "horizon"} if args.command != "selftest" else set())
        )
        _echo_config(outdir, args.command, cfg, knobs)
        code = _HANDLERS[args.command](cfg, outdir)
        if code == 0:
            print(f"ok: outputs in {outdir}")
        return code
    except _UsageError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except Exception as err:  # config, numerics, io: all exit 1
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
