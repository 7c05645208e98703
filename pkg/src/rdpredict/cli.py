"""Command-line pipeline: eig, certify, simulate, and sweep subcommands.

Every command reads one YAML config, writes its artifacts into --out-dir, and
records a manifest with the resolved-config hash, output paths, versions, and
per-stage wall-clock times.  All floating-point output uses 17 significant
digits so reruns are byte-identical.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .backend import backend_name
from .config import (build_basis, build_delay, build_problem,
                     build_y0_samples, config_hash, load_config)
from .design import certify, make_design
from .errors import ConfigError, RdpredictError
from .sim import SimulationConfig, run, write_run_csv
from .spectral import export_basis_csv

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def _versions():
    return {"rdpredict": __version__, "numpy": np.__version__,
            "scipy": scipy.__version__, "backend": backend_name}


def _write_manifest(out_dir, command, resolved, outputs, timing):
    manifest = {
        "command": command,
        "config_hash": config_hash(resolved),
        "outputs": [str(p) for p in outputs],
        "versions": _versions(),
        "timing": timing,
    }
    path = out_dir / f"{command}_manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON-serializable: {type(o)}")


def cmd_eig(args):
    resolved = load_config(args.config, require=("problem", "basis"))
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    timing = {}
    t0 = time.perf_counter()
    basis = build_basis(resolved)
    timing["eigensolve"] = time.perf_counter() - t0

    basis_csv = out_dir / "basis.csv"
    export_basis_csv(basis, basis_csv)
    spectrum = {
        "eigenvalues": [float(v) for v in basis.eigenvalues],
        "oscillation_indices": [int(v) for v in basis.oscillation_indices()],
        "n_modes": basis.n_modes,
        "n_nodes": basis.grid.n_nodes,
    }
    spectrum_json = out_dir / "spectrum.json"
    spectrum_json.write_text(json.dumps(spectrum, indent=2, sort_keys=True))
    _write_manifest(out_dir, "eig", resolved, [basis_csv, spectrum_json], timing)
    print(f"wrote {basis_csv} and {spectrum_json}")
    return EXIT_OK


def cmd_certify(args):
    resolved = load_config(args.config, require=("problem", "basis", "design"))
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    timing = {}
    t0 = time.perf_counter()
    basis = build_basis(resolved)
    timing["eigensolve"] = time.perf_counter() - t0

    d = resolved["design"]
    design = make_design(basis, d["D0"], d["poles"], d["t0"], margin=d["margin"])
    t0 = time.perf_counter()
    delta_eval = None
    if "delay" in resolved:
        delta_eval = resolved["delay"].get("delta_claimed")
    cert = certify(design, sigma_search=bool(d["sigma_search"]), delta=delta_eval)
    timing["certificate"] = time.perf_counter() - t0

    cert_json = out_dir / "certificate.json"
    cert_json.write_text(cert.to_json(design))
    _write_manifest(out_dir, "certify", resolved, [cert_json], timing)
    print(f"delta_max = {cert.delta_max:.6f} with (M, sigma) = "
          f"({cert.M:.6g}, {cert.sigma:.6g}); wrote {cert_json}")
    return EXIT_OK


def _build_sim(resolved, args):
    basis_cfg = resolved["basis"]
    sim_cfg = resolved["sim"]
    if args.modes is not None:
        sim_cfg["n_sim_modes"] = args.modes
    if args.dt is not None:
        sim_cfg["dt"] = args.dt
    if args.rule is not None:
        sim_cfg["rule"] = args.rule

    n_basis = max(int(basis_cfg["n_modes"]), int(sim_cfg["n_sim_modes"]))
    basis = build_basis(resolved, n_modes=n_basis)
    d = resolved["design"]
    design = make_design(basis, d["D0"], d["poles"], d["t0"], margin=d["margin"])
    delay = build_delay(resolved, design.D0)
    y0 = build_y0_samples(resolved, basis.grid)
    cfg = SimulationConfig(
        problem=build_problem(resolved),
        basis=basis, design=design, delay=delay, y0_samples=y0,
        t_end=float(sim_cfg["t_end"]), dt=float(sim_cfg["dt"]),
        n_sim_modes=int(sim_cfg["n_sim_modes"]), rule=sim_cfg["rule"],
        open_loop=bool(getattr(args, "open_loop", False)),
        output_decimation=int(sim_cfg["output_decimation"]))
    return cfg, resolved


def cmd_simulate(args):
    resolved = load_config(args.config,
                           require=("problem", "basis", "design", "delay", "sim"))
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    timing = {}

    t0 = time.perf_counter()
    cfg, resolved = _build_sim(resolved, args)
    timing["setup"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    result = run(cfg)
    timing["simulate"] = time.perf_counter() - t0

    run_csv = out_dir / "run.csv"
    write_run_csv(result, run_csv, decimation=cfg.output_decimation)
    delay_csv = out_dir / "delay.csv"
    _write_delay_lattice(cfg, result, delay_csv)

    meta = dict(result.metadata)
    meta["config"] = resolved
    meta["config_hash"] = config_hash(resolved)
    cert_path = out_dir / "certificate.json"
    meta["certificate_reference"] = str(cert_path) if cert_path.exists() else None
    meta_json = out_dir / "run_meta.json"
    meta_json.write_text(json.dumps(meta, indent=2, sort_keys=True,
                                    default=_json_default))
    _write_manifest(out_dir, "simulate", resolved,
                    [run_csv, delay_csv, meta_json], timing)
    status = "diverged" if result.diverged else "completed"
    print(f"run {status}: normX {result.normX[0]:.6g} -> {result.normX[-1]:.6g}, "
          f"kappa_est = {result.kappa_est:.6g}; wrote {run_csv}")
    return EXIT_OK


def _write_delay_lattice(cfg, result, path, n_xi=101):
    """Delay surface on (output times) x (uniform xi); same schema that
    custom_sampled fields load."""
    xis = np.linspace(0.0, 1.0, n_xi)
    dec = max(cfg.output_decimation, 1)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "xi", "D"])
        for i in range(0, len(result.times), dec):
            t = result.times[i]
            D = cfg.delay.evaluate(t, xis)
            for x, dv in zip(xis, D):
                writer.writerow([f"{t:.17g}", f"{x:.17g}", f"{dv:.17g}"])


def _sweep_deltas(spec):
    if ":" in spec:
        parts = spec.split(":")
        if len(parts) != 3:
            raise ConfigError("--deltas expects 'start:stop:count' or a comma list")
        start, stop, count = float(parts[0]), float(parts[1]), int(parts[2])
        return np.linspace(start, stop, count)
    return np.array([float(v) for v in spec.split(",")])


def cmd_sweep(args):
    resolved = load_config(args.config,
                           require=("problem", "basis", "design", "delay", "sim"))
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    deltas = _sweep_deltas(args.deltas)
    timing = {}

    t0 = time.perf_counter()
    cfg, resolved = _build_sim(resolved, args)
    timing["setup"] = time.perf_counter() - t0

    def one(delta):
        from .delayfield import DelayField
        field = DelayField(kind="paper_example", D0=cfg.design.D0,
                           delta_claimed=float(delta),
                           params={"amplitude": float(delta)})
        local = SimulationConfig(
            problem=cfg.problem, basis=cfg.basis, design=cfg.design, delay=field,
            y0_samples=cfg.y0_samples, t_end=cfg.t_end, dt=cfg.dt,
            n_sim_modes=cfg.n_sim_modes, rule=cfg.rule)
        res = run(local)
        return float(delta), res.kappa_est, res.diverged

    t0 = time.perf_counter()
    with ThreadPoolExecutor() as pool:
        rows = sorted(pool.map(one, deltas), key=lambda r: r[0])
    timing["sweep"] = time.perf_counter() - t0

    sweep_csv = out_dir / "sweep.csv"
    with open(sweep_csv, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["delta", "kappa_est", "diverged"])
        for delta, kappa, diverged in rows:
            writer.writerow([f"{delta:.17g}", f"{kappa:.17g}", int(diverged)])
    _write_manifest(out_dir, "sweep", resolved, [sweep_csv], timing)
    print(f"swept {len(rows)} deviation values; wrote {sweep_csv}")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="rdpredict",
        description="Spectral predictor-feedback design and simulation for "
                    "reaction-diffusion systems with varying input delay")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="YAML configuration file")
        p.add_argument("--out-dir", default="out", help="artifact directory")

    p_eig = sub.add_parser("eig", help="solve the eigensystem; write basis CSV + spectrum JSON")
    common(p_eig)
    p_eig.set_defaults(func=cmd_eig)

    p_cert = sub.add_parser("certify", help="design the controller and emit the robustness certificate")
    common(p_cert)
    p_cert.set_defaults(func=cmd_certify)

    p_sim = sub.add_parser("simulate", help="run the closed-loop simulation; write run CSV + metadata")
    common(p_sim)
    p_sim.add_argument("--open-loop", action="store_true", help="disable the controller")
    p_sim.add_argument("--dt", type=float, default=None, help="override sim.dt")
    p_sim.add_argument("--modes", type=int, default=None, help="override sim.n_sim_modes")
    p_sim.add_argument("--rule", choices=("left_riemann", "trapezoid"), default=None,
                       help="override the predictor quadrature rule")
    p_sim.set_defaults(func=cmd_simulate)

    p_sweep = sub.add_parser("sweep", help="simulate across delay deviation amplitudes")
    common(p_sweep)
    p_sweep.add_argument("--deltas", required=True,
                         help="comma list or 'start:stop:count' grid of deviations")
    p_sweep.add_argument("--dt", type=float, default=None)
    p_sweep.add_argument("--modes", type=int, default=None)
    p_sweep.add_argument("--rule", choices=("left_riemann", "trapezoid"), default=None)
    p_sweep.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except RdpredictError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
