"""Closed-loop simulation of the modal system and its finite-difference oracle.

The modal path advances x_n' = lambda_n x_n + v_n(t) for all simulated modes
with RK4, where v_n(t) is the grid quadrature of the delayed distributed input
against mode n.  The control vector is refreshed once per step by the
predictor.  ``fd_oracle`` solves the original PDE by the method of lines on an
independent uniform grid, driven by the same stored control samples, and is
the cross-check that the modal truncation and the quadrature are faithful.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from .backend import backend_name, kernels
from .control import RULES, PredictorState, predictor_output
from .delayfield import ControlHistory
from .errors import DivergenceError, FitError, StepSizeError
from .spectral import project

RK4_STABILITY_LIMIT = 2.5   # |lam| dt bound for the real axis (true limit ~2.785)


@dataclass
class SimulationConfig:
    problem: object
    basis: object
    design: object
    delay: object
    y0_samples: np.ndarray
    t_end: float
    dt: float
    n_sim_modes: int = 20
    rule: str = "left_riemann"
    open_loop: bool = False
    output_decimation: int = 1

    def validate(self):
        if self.rule not in RULES:
            raise ValueError(f"rule must be one of {RULES}")
        if self.n_sim_modes <= self.design.N:
            raise ValueError(
                f"n_sim_modes={self.n_sim_modes} must exceed the truncation "
                f"order N={self.design.N}")
        if self.n_sim_modes > self.basis.n_modes:
            raise ValueError(
                f"n_sim_modes={self.n_sim_modes} exceeds the {self.basis.n_modes}-mode basis")
        shortest = self.design.D0 - self.delay.delta_claimed
        if self.dt > shortest / 10.0:
            raise StepSizeError(
                f"dt={self.dt} too coarse: need dt <= (D0 - delta)/10 = {shortest / 10.0:.6g} "
                "to resolve the shortest effective delay")
        lam_fast = float(np.abs(self.basis.eigenvalues[:self.n_sim_modes]).max())
        if lam_fast * self.dt > RK4_STABILITY_LIMIT:
            raise StepSizeError(
                f"dt={self.dt} unstable for the fastest retained mode "
                f"(|lambda| dt = {lam_fast * self.dt:.3g} > {RK4_STABILITY_LIMIT})")
        m = self.design.D0 / self.dt
        if abs(m - round(m)) > 1e-9 * max(m, 1.0):
            raise StepSizeError(
                f"dt={self.dt} does not divide D0={self.design.D0}; predictor "
                "quadrature nodes must align with history samples")


@dataclass
class SimulationRun:
    times: np.ndarray
    x: np.ndarray            # (n_instants, n_sim_modes)
    w: np.ndarray            # (n_instants, N)
    v_proj: np.ndarray       # (n_instants, n_sim_modes)
    delta_norm: np.ndarray
    normX: np.ndarray
    normU: np.ndarray
    z: np.ndarray            # delay-free diagnostic states (n_instants, N)
    kappa_est: float
    diverged: bool
    metadata: dict = field(default_factory=dict)


def run(config) -> SimulationRun:
    """Full closed-loop (or open-loop) trajectory for ``config``."""
    config.validate()
    basis, design, delay = config.basis, config.design, config.delay
    n = config.n_sim_modes
    lam = basis.eigenvalues[:n].astype(float)
    nodes = basis.grid.nodes
    rw = basis.grid.weights * basis.rho_samples
    Erw = basis.functions[:n] * rw
    EN = basis.functions[:design.N]

    x0 = project(config.y0_samples, basis, n)
    nsteps = int(round(config.t_end / config.dt))
    m = int(round(design.D0 / config.dt))
    family, fparams, tab_t, tab_xi, tab_D = delay.kernel_args()
    rule_code = 0 if config.rule == "left_riemann" else 1

    X, W, V, DN, Z, status = kernels.run_modal_loop(
        lam, Erw, EN, nodes, design.K, design.D0, design.t0, config.dt,
        nsteps, m, rule_code, family, fparams, tab_t, tab_xi, tab_D,
        x0, config.open_loop)

    diverged = status != 0
    last = (status - 1) if diverged else nsteps + 1
    times = np.arange(nsteps + 1) * config.dt
    times, X, W, V, DN, Z = (a[:last] for a in (times, X, W, V, DN, Z))

    normX = np.linalg.norm(X, axis=1)
    normU = np.linalg.norm(W, axis=1)
    try:
        kappa = fit_decay(times, normX)
    except FitError:
        kappa = float("nan")

    meta = {
        "backend": backend_name,
        "rule": config.rule,
        "dt": config.dt,
        "t_end": config.t_end,
        "n_sim_modes": n,
        "N": design.N,
        "D0": design.D0,
        "t0": design.t0,
        "open_loop": config.open_loop,
        "kappa_est": kappa,
        "diverged": diverged,
        "divergence_time": float(times[-1]) if diverged else None,
        "delay_kind": delay.kind,
    }
    return SimulationRun(times=times, x=X, w=W, v_proj=V, delta_norm=DN,
                         normX=normX, normU=normU, z=Z, kappa_est=kappa,
                         diverged=diverged, metadata=meta)


def project_delayed_input(basis, design, delay, history, t, n_sim_modes):
    """Reference quadrature of the delayed input projections at time ``t``.

    Returns (v, delta): v_n = <sum_k w_k(t - D(t, .)) e_k, e_n> for the first
    ``n_sim_modes`` modes, and the first-N residual against the nominally
    delayed control w(t - D0).
    """
    nodes = basis.grid.nodes
    s = t - delay.evaluate(t, nodes)
    wv = history.lookup(s)
    u_del = np.einsum("jk,kj->j", wv, basis.functions[:design.N])
    rw = basis.grid.weights * basis.rho_samples
    v = basis.functions[:n_sim_modes] @ (rw * u_del)
    w_nominal = history.lookup(t - design.D0)
    return v, v[:design.N] - w_nominal


def step(basis, design, delay, history, predictor, x, t, dt, n_sim_modes):
    """One RK4 step of the modal system; appends the fresh control sample.

    Single-step reference for the batched kernel loop: identical stage
    structure, with the midpoint input evaluation shared by both middle
    stages.
    """
    lam = basis.eigenvalues[:n_sim_modes]
    v1, _ = project_delayed_input(basis, design, delay, history, t, n_sim_modes)
    v2, _ = project_delayed_input(basis, design, delay, history, t + 0.5 * dt, n_sim_modes)
    v4, _ = project_delayed_input(basis, design, delay, history, t + dt, n_sim_modes)
    k1 = lam * x + v1
    k2 = lam * (x + 0.5 * dt * k1) + v2
    k3 = lam * (x + 0.5 * dt * k2) + v2
    k4 = lam * (x + dt * k3) + v4
    x_next = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(x_next)):
        raise DivergenceError(f"state diverged at t={t + dt:.6g}", t_blowup=t + dt)
    w_next = predictor_output(predictor, t + dt, x_next[:design.N])
    history.append(w_next)
    return x_next, w_next


def fit_decay(times, norms, window_fraction=1.0 / 3.0):
    """Exponential rate from a least-squares line through log(norm).

    Fits the trailing ``window_fraction`` of the horizon; positive values
    mean decay.
    """
    times = np.asarray(times, dtype=float)
    norms = np.asarray(norms, dtype=float)
    t_cut = times[-1] - window_fraction * (times[-1] - times[0])
    mask = times >= t_cut
    if np.count_nonzero(mask) < 10:
        raise FitError(f"only {np.count_nonzero(mask)} samples in the fit window")
    if np.any(norms[mask] <= 0.0) or not np.all(np.isfinite(norms[mask])):
        raise FitError("norms must be positive and finite in the fit window")
    A = np.vstack([times[mask], np.ones(np.count_nonzero(mask))]).T
    slope, _ = np.linalg.lstsq(A, np.log(norms[mask]), rcond=None)[0]
    return float(-slope)


@dataclass
class OracleResult:
    xi: np.ndarray
    times: np.ndarray
    snapshots: np.ndarray    # (len(times), len(xi))
    dt_used: float
    n_substeps: int


def fd_oracle(problem, basis, design, delay, w_times, w_series, y0_func,
              t_end, n_fd_nodes=201, snapshot_times=(), stability_safety=2.5):
    """Method-of-lines solution of the PDE driven by stored control samples.

    Second-order conservative differencing of (p y')' with ghost-node Robin
    boundary conditions; RK4 in time with the step bounded by the diffusion
    stability limit.  The distributed input is u(t - D(t, xi), xi) =
    sum_k w_k(t - D(t, xi)) e_k(xi), with w interpolated from ``w_series``
    and zero before the loop closes.
    """
    xi = np.linspace(0.0, 1.0, n_fd_nodes)
    h = xi[1] - xi[0]
    rho = problem.rho(xi)
    q = problem.q(xi)
    p_half = problem.p(np.concatenate(([-0.5 * h], 0.5 * (xi[:-1] + xi[1:]), [1.0 + 0.5 * h])))

    # eigenfunctions on the oracle grid, spline-interpolated from the basis grid
    EN_fd = np.vstack([
        CubicSpline(basis.grid.nodes, basis.functions[k])(xi)
        for k in range(design.N)])

    ct1, st1 = np.cos(problem.theta1), np.sin(problem.theta1)
    ct2, st2 = np.cos(problem.theta2), np.sin(problem.theta2)
    dirichlet_left = abs(st1) < 1e-14
    dirichlet_right = abs(st2) < 1e-14

    dt_ctrl = w_times[1] - w_times[0]
    lam_max = 4.0 * problem.p(xi).max() / (rho.min() * h * h) + np.abs(q / rho).max()
    n_sub = max(1, int(np.ceil(dt_ctrl * lam_max / stability_safety)))
    dt = dt_ctrl / n_sub
    n_ctrl = int(round(t_end / dt_ctrl))
    if n_ctrl >= len(w_times):
        raise ValueError("stored control history shorter than the requested horizon")

    n_w = len(w_times) - 1
    inv_dtc = 1.0 / dt_ctrl

    def u_delayed(t):
        s = t - delay.evaluate(t, xi)
        idx = np.clip((s * inv_dtc).astype(np.int64), 0, n_w - 1)
        frac = s * inv_dtc - idx
        wv = w_series[idx] * (1.0 - frac)[:, None] + w_series[idx + 1] * frac[:, None]
        wv[s <= 0.0] = 0.0
        out = wv[:, 0] * EN_fd[0]
        for k in range(1, design.N):
            out += wv[:, k] * EN_fd[k]
        return out

    def rhs(t, y):
        yy = np.empty(len(y) + 2)
        yy[1:-1] = y
        yy[0] = 0.0 if dirichlet_left else y[1] - 2.0 * h * (ct1 / st1) * y[0]
        yy[-1] = 0.0 if dirichlet_right else y[-2] - 2.0 * h * (ct2 / st2) * y[-1]
        flux = p_half * np.diff(yy)
        out = (np.diff(flux) / (h * h) + q * y) / rho + u_delayed(t)
        if dirichlet_left:
            out[0] = 0.0
        if dirichlet_right:
            out[-1] = 0.0
        return out

    y = y0_func(xi).astype(float)
    if dirichlet_left:
        y[0] = 0.0
    if dirichlet_right:
        y[-1] = 0.0

    snap_steps = sorted({int(round(ts / dt_ctrl)) for ts in snapshot_times}
                        | {0, n_ctrl})
    snaps = [y.copy()]
    snap_t = [0.0]
    snap_steps.remove(0)

    t = 0.0
    for kc in range(n_ctrl):
        for _ in range(n_sub):
            k1 = rhs(t, y)
            k2 = rhs(t + 0.5 * dt, y + 0.5 * dt * k1)
            k3 = rhs(t + 0.5 * dt, y + 0.5 * dt * k2)
            k4 = rhs(t + dt, y + dt * k3)
            y = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            t += dt
        if not np.all(np.isfinite(y)):
            raise DivergenceError(f"oracle diverged at t={t:.6g}", t_blowup=t)
        if kc + 1 in snap_steps:
            snaps.append(y.copy())
            snap_t.append((kc + 1) * dt_ctrl)

    return OracleResult(xi=xi, times=np.array(snap_t), snapshots=np.array(snaps),
                        dt_used=dt, n_substeps=n_sub)


def write_run_csv(run, path, decimation=1):
    """Run CSV: t, x_1..x_n, w_1..w_N, normX, normU, delta_norm per instant."""
    dec = max(int(decimation), 1)
    n_modes = run.x.shape[1]
    n_ctrl = run.w.shape[1]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["t"] + [f"x_{i + 1}" for i in range(n_modes)]
            + [f"w_{i + 1}" for i in range(n_ctrl)]
            + ["normX", "normU", "delta_norm"])
        for i in range(0, len(run.times), dec):
            row = ([run.times[i]] + list(run.x[i]) + list(run.w[i])
                   + [run.normX[i], run.normU[i], run.delta_norm[i]])
            writer.writerow([f"{v:.17g}" for v in row])
