"""Transition signal and the constant-delay predictor feedback update.

The control vector solves

    w(t) = phi(t) K { x(t) + integral_{t-D0}^{t} e^{(t-D0-s) L} w(s) ds }

discretized on the simulator step h.  The left-Riemann rule uses only strictly
past samples, so the update is explicit; the trapezoid rule includes the s = t
node and requires one small linear solve per call.  The same discretized
integral defines the delay-free diagnostic state z(t) = x(t) + integral, which
obeys dz/dt = A_cl z (+ residual forcing) once the transition completes.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import StepSizeError

RULES = ("left_riemann", "trapezoid")


@dataclass(frozen=True)
class TransitionSignal:
    """Continuous ramp from 0 to 1 over [0, t0]."""

    t0: float
    shape: str = "linear"

    def __post_init__(self):
        if self.t0 <= 0.0:
            raise ValueError("transition time t0 must be positive")
        if self.shape != "linear":
            raise ValueError(f"unknown transition shape {self.shape!r}")

    def __call__(self, t):
        return float(np.clip(t / self.t0, 0.0, 1.0))


class PredictorState:
    """Precomputed kernel tables binding a design to a control history."""

    def __init__(self, design, history, rule="left_riemann", dt=None):
        if rule not in RULES:
            raise ValueError(f"rule must be one of {RULES}, got {rule!r}")
        self.design = design
        self.history = history
        self.rule = rule
        self.dt = float(dt if dt is not None else history.dt)
        m = design.D0 / self.dt
        self.m = int(round(m))
        if self.m < 1 or abs(m - self.m) > 1e-9 * max(m, 1.0):
            raise StepSizeError(
                f"step {self.dt} does not divide the nominal delay {design.D0}; "
                "pick h = D0 / integer so history samples align with quadrature nodes")
        # e^{-j h lam_n} for j = 0..m; row m equals e^{-D0 lam}
        self.kernel = np.exp(-np.outer(np.arange(self.m + 1) * self.dt, design.lam))
        self.phi = TransitionSignal(design.t0)


def _discrete_integral(state, t):
    """Quadrature of e^{(t-D0-s) L} w(s) over [t-D0, t] from stored samples.

    Returns (value, needs_head) where ``needs_head`` marks the trapezoid
    endpoint share that multiplies the yet-unknown w(t).
    """
    m, dt = state.m, state.dt
    sample_times = t - state.design.D0 + dt * np.arange(m + 1)
    if state.rule == "left_riemann":
        w_past = state.history.lookup(sample_times[:m])
        value = dt * np.einsum("jn,jn->n", state.kernel[:m], w_past)
        return value, None
    w_past = state.history.lookup(sample_times[:m])
    value = dt * (0.5 * state.kernel[0] * w_past[0]
                  + np.einsum("jn,jn->n", state.kernel[1:m], w_past[1:m]))
    head_weight = 0.5 * dt * state.kernel[m]
    return value, head_weight


def predictor_output(state, t, x):
    """Control vector w(t) from the current modal state and stored history."""
    x = np.asarray(x, dtype=float)
    phi = state.phi(t)
    if phi == 0.0:
        return np.zeros(state.design.N)
    K = state.design.K
    integral, head_weight = _discrete_integral(state, t)
    if head_weight is None:
        return phi * (K @ (x + integral))
    A_imp = np.eye(state.design.N) - phi * (K * head_weight[None, :])
    rhs = phi * (K @ (x + integral))
    try:
        return np.linalg.solve(A_imp, rhs)
    except np.linalg.LinAlgError as exc:
        raise StepSizeError(
            f"implicit trapezoid system singular at t={t}; reduce the step "
            f"size from h={state.dt}") from exc


def artstein_state(state, t, x):
    """Diagnostic delay-free state z(t) = x(t) + discretized integral.

    With the trapezoid rule the s = t endpoint uses the stored head sample,
    so call this after the control at time t has been appended.
    """
    x = np.asarray(x, dtype=float)
    integral, head_weight = _discrete_integral(state, t)
    if head_weight is None:
        return x + integral
    w_head = state.history.lookup(t)
    return x + integral + head_weight * w_head
