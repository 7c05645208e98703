import numpy as np
import pytest

from rdpredict.control import PredictorState, predictor_output
from rdpredict.delayfield import ControlHistory, DelayField
from rdpredict.design import make_design, max_delta
from rdpredict.errors import FitError, StepSizeError
from rdpredict.sim import (SimulationConfig, fd_oracle, fit_decay,
                           project_delayed_input, run, step)
from rdpredict.spectral import (Coefficient, Grid, SturmLiouvilleProblem,
                                solve_eigensystem, synthesize)

from conftest import THETA1, THETA2


def make_cfg(problem, basis, design, delay, y0, **kw):
    defaults = dict(t_end=5.0, dt=1e-3, n_sim_modes=20)
    defaults.update(kw)
    return SimulationConfig(problem=problem, basis=basis, design=design,
                            delay=delay, y0_samples=y0, **defaults)


# --- fit_decay --------------------------------------------------------------

def test_fit_decay_pure_exponential():
    t = np.linspace(0.0, 10.0, 200)
    assert fit_decay(t, np.exp(-0.5 * t)) == pytest.approx(0.5, abs=1e-12)


def test_fit_decay_with_prefactor():
    t = np.linspace(0.0, 10.0, 200)
    assert fit_decay(t, 3.0 * np.exp(-0.2 * t)) == pytest.approx(0.2, abs=1e-12)


def test_fit_decay_errors():
    t = np.linspace(0.0, 1.0, 12)
    with pytest.raises(FitError):
        fit_decay(t[:6], np.exp(-t[:6]))
    vals = np.exp(-t)
    vals[-1] = 0.0
    with pytest.raises(FitError):
        fit_decay(t, vals)


# --- config validation ------------------------------------------------------

def test_config_rejects_coarse_dt(robin_problem, basis20, design20, paper_delay, y0_samples):
    cfg = make_cfg(robin_problem, basis20, design20, paper_delay, y0_samples, dt=0.1)
    with pytest.raises(StepSizeError):
        cfg.validate()


def test_config_rejects_too_few_modes(robin_problem, basis20, design20, paper_delay, y0_samples):
    cfg = make_cfg(robin_problem, basis20, design20, paper_delay, y0_samples,
                   n_sim_modes=2)
    with pytest.raises(ValueError):
        cfg.validate()


# --- open-loop behavior -----------------------------------------------------

def test_open_loop_dominant_mode_growth(robin_problem, basis20, design20,
                                        paper_delay, y0_samples):
    cfg = make_cfg(robin_problem, basis20, design20, paper_delay, y0_samples,
                   t_end=10.0, open_loop=True)
    res = run(cfg)
    lam1 = basis20.eigenvalues[0]
    expected = res.x[0, 0] * np.exp(lam1 * res.times)
    rel = np.abs(res.x[:, 0] - expected) / np.abs(expected)
    assert rel.max() < 1e-3


def test_residual_modes_decay_at_gamma(robin_problem, basis20, design20,
                                       paper_delay, y0_samples):
    """With no control every mode beyond N decays at least at rate gamma."""
    cfg = make_cfg(robin_problem, basis20, design20, paper_delay, y0_samples,
                   t_end=10.0, open_loop=True)
    res = run(cfg)
    rate = fit_decay(res.times, np.abs(res.x[:, design20.N]))
    assert rate >= design20.gamma * 0.99


def test_zero_eigenvalue_mode_stays_constant():
    """A plant tuned so lambda_1 = 0 keeps its first mode frozen without input."""
    problem = SturmLiouvilleProblem(
        rho=Coefficient.constant(1.0), p=Coefficient.constant(1.0),
        q=Coefficient.constant(np.pi ** 2), theta1=0.0, theta2=0.0)
    basis = solve_eigensystem(problem, 4, grid=Grid.simpson(801))
    assert abs(basis.eigenvalues[0]) < 1e-9
    design = make_design(basis, 1.0, [-0.3], 0.2)
    delay = DelayField(kind="constant", D0=1.0, delta_claimed=0.0)
    y0 = basis.functions[0] + 0.5 * basis.functions[1]
    cfg = SimulationConfig(problem=problem, basis=basis, design=design,
                           delay=delay, y0_samples=y0, t_end=2.0, dt=1e-3,
                           n_sim_modes=4, open_loop=True)
    res = run(cfg)
    assert np.abs(res.x[:, 0] - res.x[0, 0]).max() < 1e-9


# --- delayed-input projection ----------------------------------------------

def sin_history(dt, horizon, N):
    hist = ControlHistory(dt=dt, window=horizon + 1.0, dim=N)
    for k in range(int(round(horizon / dt)) + 1):
        t = k * dt
        hist.append(np.array([np.sin(t) * (j + 1) for j in range(N)]))
    return hist


def test_projection_nominal_delay_kills_residual(basis20, design20):
    delay0 = DelayField(kind="constant", D0=1.0, delta_claimed=0.0)
    hist = sin_history(1e-3, 6.0, design20.N)
    v, delta = project_delayed_input(basis20, design20, delay0, hist, 5.0, 20)
    assert np.abs(delta).max() < 1e-8
    assert np.abs(v[design20.N:]).max() < 1e-8


def test_projection_zero_history(basis20, design20, paper_delay):
    hist = ControlHistory(dt=1e-3, window=3.0, dim=design20.N)
    hist.append(np.zeros(design20.N))
    v, delta = project_delayed_input(basis20, design20, paper_delay, hist, 0.0, 20)
    assert np.all(v == 0.0) and np.all(delta == 0.0)


def test_projection_against_fine_quadrature(basis20, fine_basis20, design20,
                                            paper_delay):
    """Synthetic sinusoid history: projections vs the 10x-resolution grid."""
    t = 5.0
    hist_c = sin_history(1e-3, 6.0, design20.N)
    v, _ = project_delayed_input(basis20, design20, paper_delay, hist_c, t, 20)
    v_fine, _ = project_delayed_input(fine_basis20, design20, paper_delay,
                                      hist_c, t, 20)
    assert np.abs(v - v_fine).max() < 1e-6


# --- single step vs kernel loop --------------------------------------------

def test_step_matches_kernel_loop(robin_problem, basis20, design20, paper_delay,
                                  y0_samples):
    dt = 1e-3
    cfg = make_cfg(robin_problem, basis20, design20, paper_delay, y0_samples,
                   t_end=0.05, dt=dt)
    res = run(cfg)

    hist = ControlHistory(dt=dt, window=design20.D0 + 0.5, dim=design20.N)
    hist.append(np.zeros(design20.N))
    predictor = PredictorState(design20, hist)
    from rdpredict.spectral import project
    x = project(y0_samples, basis20, 20)
    for k in range(50):
        x, w = step(basis20, design20, paper_delay, hist, predictor, x,
                    k * dt, dt, 20)
        np.testing.assert_allclose(x, res.x[k + 1], rtol=1e-12, atol=1e-14)
        np.testing.assert_allclose(w, res.w[k + 1], rtol=1e-12, atol=1e-14)


# --- full runs --------------------------------------------------------------

def test_closed_loop_invariants(run5):
    assert np.allclose(run5.normX ** 2, np.sum(run5.x ** 2, axis=1), rtol=1e-12)
    assert np.allclose(run5.normU, np.linalg.norm(run5.w, axis=1), rtol=1e-12)
    assert not run5.diverged


def test_nominal_delay_exactness(robin_problem, basis20, design20, y0_samples):
    delay0 = DelayField(kind="constant", D0=1.0, delta_claimed=0.0)
    cfg = make_cfg(robin_problem, basis20, design20, delay0, y0_samples,
                   t_end=4.0)
    res = run(cfg)
    assert res.delta_norm.max() < 1e-6


def test_trapezoid_rule_runs(robin_problem, basis20, design20, paper_delay,
                             y0_samples):
    cfg = make_cfg(robin_problem, basis20, design20, paper_delay, y0_samples,
                   t_end=3.0, rule="trapezoid")
    res = run(cfg)
    assert not res.diverged
    assert res.normX[-1] < res.normX[0] * 2.0


def test_divergence_reported(robin_problem, basis20, design20, paper_delay,
                             y0_samples):
    cfg = make_cfg(robin_problem, basis20, design20, paper_delay,
                   y0_samples * 3e11, t_end=12.0, open_loop=True)
    res = run(cfg)
    assert res.diverged
    assert res.metadata["divergence_time"] < 12.0
    assert len(res.times) == len(res.x)


def test_convergence_order_open_loop(robin_problem, basis20, design20,
                                     paper_delay, y0_samples):
    """Without the predictor in the loop the integrator error is O(dt^4)."""
    errs = []
    for dt in (4e-3, 2e-3):
        cfg = make_cfg(robin_problem, basis20, design20, paper_delay, y0_samples,
                       t_end=2.0, dt=dt, open_loop=True)
        res = run(cfg)
        exact = res.x[0] * np.exp(basis20.eigenvalues[:20] * 2.0)
        errs.append(np.abs(res.x[-1] - exact).max())
    assert errs[0] / errs[1] > 12.0


def test_convergence_at_least_first_order_closed_loop(robin_problem, basis20,
                                                      design20, paper_delay,
                                                      y0_samples):
    finals = []
    for dt in (4e-3, 2e-3, 1e-3):
        cfg = make_cfg(robin_problem, basis20, design20, paper_delay, y0_samples,
                       t_end=3.0, dt=dt)
        finals.append(run(cfg).normX[-1])
    d1 = abs(finals[0] - finals[1])
    d2 = abs(finals[1] - finals[2])
    assert d1 / d2 > 1.7


# --- finite-difference oracle ----------------------------------------------

def test_oracle_single_mode_rate(robin_problem, basis20, design20):
    """Zero input, first eigenfunction: the PDE decays/grows at lambda_1."""
    lam1 = basis20.eigenvalues[0]
    w_times = np.arange(0, 5001) * 1e-3
    w_series = np.zeros((5001, design20.N))
    delay0 = DelayField(kind="constant", D0=1.0, delta_claimed=0.0)

    from scipy.interpolate import CubicSpline
    e1 = CubicSpline(basis20.grid.nodes, basis20.functions[0])
    orc = fd_oracle(robin_problem, basis20, design20, delay0, w_times, w_series,
                    e1, 5.0, n_fd_nodes=201)
    growth = np.log(np.linalg.norm(orc.snapshots[-1]) /
                    np.linalg.norm(orc.snapshots[0])) / 5.0
    assert growth == pytest.approx(lam1, rel=5e-3)


def test_oracle_dirichlet_heat_mode(dirichlet_problem):
    """Classical solution: y = exp(-pi^2 t) sin(pi x) with zero input."""
    basis = solve_eigensystem(dirichlet_problem, 2, grid=Grid.simpson(401))
    design = make_design(basis, 1.0, [-0.5], 0.2)
    delay0 = DelayField(kind="constant", D0=1.0, delta_claimed=0.0)
    w_times = np.arange(0, 201) * 1e-3
    w_series = np.zeros((201, 1))
    orc = fd_oracle(dirichlet_problem, basis, design, delay0, w_times, w_series,
                    lambda x: np.sin(np.pi * x), 0.2, n_fd_nodes=201)
    exact = np.exp(-np.pi ** 2 * 0.2) * np.sin(np.pi * orc.xi)
    assert np.abs(orc.snapshots[-1] - exact).max() < 2e-4


def test_oracle_matches_modal_run(robin_problem, basis20, design20, paper_delay,
                                  y0_func, run5):
    orc = fd_oracle(robin_problem, basis20, design20, paper_delay, run5.times,
                    run5.w, y0_func, 5.0, n_fd_nodes=201)
    y_modal = np.interp(orc.xi, basis20.grid.nodes, synthesize(run5.x[-1], basis20))
    num = np.sqrt(np.trapezoid((orc.snapshots[-1] - y_modal) ** 2, orc.xi))
    den = np.sqrt(np.trapezoid(y_modal ** 2, orc.xi))
    assert num / den < 0.01


# --- certificate coherence --------------------------------------------------

def test_certified_deviations_all_decay(robin_problem, basis20, design20,
                                        y0_samples):
    """Random fields inside the certified deviation bound never destabilize."""
    d_max, _, _ = max_delta(design20.Acl, design20.K, design20.N, design20.D0)
    rng = np.random.default_rng(12345)
    for _ in range(5):
        amp = float(rng.uniform(0.3, 1.0) * d_max)
        field = DelayField(kind="uniform_sinusoid", D0=1.0, delta_claimed=amp,
                           params={"amplitude": amp,
                                   "omega": float(rng.uniform(0.5, 3.0)),
                                   "phase": float(rng.uniform(0.0, 2 * np.pi))})
        cfg = make_cfg(robin_problem, basis20, design20, field, y0_samples,
                       t_end=30.0, dt=2e-3)
        res = run(cfg)
        assert not res.diverged
        assert res.kappa_est > 0.0
