"""Pure-Python backend for the hot kernels.

Two entry points mirror the compiled extension exactly:

* ``shoot_endpoint`` / ``shoot_profile`` — adaptive integration of the
  characteristic ODE (p y')' + (q - lam rho) y = 0 written in the variables
  (y, u) with u = p y', so variable p never needs differentiating.
* ``run_modal_loop`` — the closed-loop time stepper: RK4 on the modal ODEs
  driven by the delayed distributed input, with the predictor update and the
  delay-free diagnostic state computed once per step.

The compiled module ``_kernels_c`` implements the same contracts in C; either
module can serve as ``rdpredict.backend.kernels``.
"""
from __future__ import annotations

import numpy as np
from scipy.integrate import solve_ivp

# Delay family codes shared with the compiled backend.
FAMILY_CONSTANT = 0
FAMILY_UNIFORM_SINUSOID = 1
FAMILY_SPATIAL_SINUSOID = 2
FAMILY_TABLE = 3

DIVERGENCE_BOUND = 1e12


def _polyval(coeffs, x):
    """Horner evaluation, ascending coefficients."""
    acc = np.zeros_like(np.asarray(x, dtype=float))
    for c in coeffs[::-1]:
        acc = acc * x + c
    return acc


def _shoot_rhs(rho_c, p_c, q_c, lam):
    def rhs(x, state):
        y, u = state
        p = _polyval(p_c, x)
        return (u / p, (lam * _polyval(rho_c, x) - _polyval(q_c, x)) * y)

    return rhs


def shoot_endpoint(lam, rho_c, p_c, q_c, theta1, theta2, rtol, atol):
    """Characteristic value F(lam) = cos(theta2) y(1) + sin(theta2) y'(1).

    Initial data (y, y')(0) = (sin(theta1), cos(theta1)) satisfies the left
    boundary condition identically.
    """
    p0 = float(_polyval(p_c, 0.0))
    sol = solve_ivp(
        _shoot_rhs(rho_c, p_c, q_c, lam),
        (0.0, 1.0),
        [np.sin(theta1), p0 * np.cos(theta1)],
        method="RK45",
        rtol=rtol,
        atol=atol,
    )
    if not sol.success:  # pragma: no cover - solve_ivp is robust here
        raise RuntimeError(f"characteristic integration failed: {sol.message}")
    y1, u1 = sol.y[0, -1], sol.y[1, -1]
    p1 = float(_polyval(p_c, 1.0))
    return float(np.cos(theta2) * y1 + np.sin(theta2) * u1 / p1)


def shoot_profile(lam, rho_c, p_c, q_c, theta1, nodes, rtol, atol):
    """Shooting solution sampled on ``nodes``; returns (y, y') arrays."""
    p0 = float(_polyval(p_c, 0.0))
    sol = solve_ivp(
        _shoot_rhs(rho_c, p_c, q_c, lam),
        (0.0, 1.0),
        [np.sin(theta1), p0 * np.cos(theta1)],
        method="RK45",
        rtol=rtol,
        atol=atol,
        t_eval=nodes,
    )
    if not sol.success:  # pragma: no cover
        raise RuntimeError(f"profile integration failed: {sol.message}")
    y = sol.y[0]
    yp = sol.y[1] / _polyval(p_c, nodes)
    return y, yp


class _DelayEval:
    """Per-run vectorized evaluation of D(t, xi) on the fixed node set."""

    def __init__(self, family, fparams, nodes, table_t, table_xi, table_D):
        self.family = family
        self.nodes = nodes
        self.fparams = fparams
        if family == FAMILY_SPATIAL_SINUSOID:
            d0, amp = fparams[0], fparams[1]
            self._base = d0 - amp
            self._absfac = amp * np.abs(2.0 * nodes - 1.0)
            self._freq = 1.5 + nodes
            self._phase = 11.0 * nodes - 3.0
        elif family == FAMILY_TABLE:
            self.table_t = table_t
            # bilinear: precompute xi brackets for the fixed nodes
            ix = np.clip(np.searchsorted(table_xi, nodes, side="right") - 1,
                         0, len(table_xi) - 2)
            self._ix = ix
            self._fx = (nodes - table_xi[ix]) / (table_xi[ix + 1] - table_xi[ix])
            self.table_D = table_D

    def __call__(self, t):
        f = self.family
        if f == FAMILY_CONSTANT:
            return np.full(self.nodes.shape, self.fparams[0])
        if f == FAMILY_UNIFORM_SINUSOID:
            d0, amp, omega, phase = self.fparams[:4]
            return np.full(self.nodes.shape,
                           d0 + amp * np.sin(omega * t + phase))
        if f == FAMILY_SPATIAL_SINUSOID:
            return self._base + self._absfac * (1.0 + np.sin(self._freq * t + self._phase))
        # FAMILY_TABLE: clamp t to the tabulated range, then bilinear
        tt = self.table_t
        tcl = min(max(t, tt[0]), tt[-1])
        it = min(max(int(np.searchsorted(tt, tcl, side="right")) - 1, 0), len(tt) - 2)
        ft = (tcl - tt[it]) / (tt[it + 1] - tt[it])
        row0 = self.table_D[it]
        row1 = self.table_D[it + 1]
        d_at_t0 = row0[self._ix] * (1.0 - self._fx) + row0[self._ix + 1] * self._fx
        d_at_t1 = row1[self._ix] * (1.0 - self._fx) + row1[self._ix + 1] * self._fx
        return d_at_t0 * (1.0 - ft) + d_at_t1 * ft


def run_modal_loop(lam, Erw, EN, nodes, K, D0, t0, dt, nsteps, m, rule,
                   family, fparams, table_t, table_xi, table_D, x0, open_loop):
    """Advance the closed-loop modal system over ``nsteps`` RK4 steps.

    Returns (X, W, V, DN, Z, status): modal states, control samples, delayed
    input projections, residual norms ||Delta(t)||, delay-free diagnostic
    states, and 0 on success or 1 + the index of the first diverged step.
    """
    n_modes = len(lam)
    N = K.shape[0]
    X = np.zeros((nsteps + 1, n_modes))
    W = np.zeros((nsteps + 1, N))
    V = np.zeros((nsteps + 1, n_modes))
    DN = np.zeros(nsteps + 1)
    Z = np.zeros((nsteps + 1, N))

    X[0] = x0
    Z[0] = x0[:N]

    lamN = lam[:N]
    # e^{-j dt lam_n} for j = 0..m: row m is the full-window kernel e^{-D0 lam}
    exp_tab = np.exp(-np.outer(np.arange(m + 1) * dt, lamN))
    delay_at = _DelayEval(family, fparams, nodes, table_t, table_xi, table_D)
    inv_dt = 1.0 / dt

    def v_of(tau, khead):
        s = tau - delay_at(tau)
        idx = np.clip((s * inv_dt).astype(np.int64), 0, khead - 1)
        frac = s * inv_dt - idx
        wv = W[idx] * (1.0 - frac)[:, None] + W[idx + 1] * frac[:, None]
        wv[s <= 0.0] = 0.0
        u_del = wv[:, 0] * EN[0]
        for k in range(1, N):
            u_del += wv[:, k] * EN[k]
        return Erw @ u_del

    def history_sum(lo, hi, row0):
        # sum_{j} exp_tab[row0 + j] * W[lo + j] for W indices in [max(lo,0), hi)
        if hi <= 0:
            return np.zeros(N)
        start = max(lo, 0)
        rows = exp_tab[row0 + (start - lo):row0 + (hi - lo)]
        return np.einsum("jn,jn->n", rows, W[start:hi])

    x = x0.copy()
    status = 0
    for k in range(nsteps):
        t = k * dt
        if open_loop:
            v1 = np.zeros(n_modes)
            v2 = v1
            v4 = v1
        else:
            v1 = v_of(t, max(k, 1))
            v2 = v_of(t + 0.5 * dt, max(k, 1))
            v4 = v_of(t + dt, max(k, 1))
        V[k] = v1
        lag = k - m
        DN[k] = float(np.linalg.norm(v1[:N] - (W[lag] if lag >= 0 else 0.0)))

        k1 = lam * x + v1
        k2 = lam * (x + 0.5 * dt * k1) + v2
        k3 = lam * (x + 0.5 * dt * k2) + v2
        k4 = lam * (x + dt * k3) + v4
        x = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        X[k + 1] = x

        if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > DIVERGENCE_BOUND:
            status = k + 2  # 1 + index of the diverged step
            break

        tc = (k + 1) * dt
        phi = 0.0 if tc <= 0.0 else min(tc / t0, 1.0)
        lo = k + 1 - m
        if rule == 0:  # left Riemann over [tc - D0, tc)
            integ = dt * history_sum(lo, k + 1, 0)
            w_new = np.zeros(N) if open_loop else phi * (K @ (x[:N] + integ))
            Z[k + 1] = x[:N] + integ
        else:  # trapezoid over [tc - D0, tc], implicit in w(tc)
            interior = history_sum(lo + 1, k + 1, 1)
            first = exp_tab[0] * (W[lo] if lo >= 0 else 0.0)
            S = dt * (0.5 * first + interior)
            if open_loop:
                w_new = np.zeros(N)
            else:
                A_imp = np.eye(N) - phi * (0.5 * dt) * (K * exp_tab[m][None, :])
                w_new = np.linalg.solve(A_imp, phi * (K @ (x[:N] + S)))
            Z[k + 1] = x[:N] + S + 0.5 * dt * exp_tab[m] * w_new
        W[k + 1] = w_new

    if status == 0:
        V[nsteps] = v_of(nsteps * dt, nsteps) if not open_loop else np.zeros(n_modes)
        lag = nsteps - m
        DN[nsteps] = float(np.linalg.norm(V[nsteps][:N] - (W[lag] if lag >= 0 else 0.0)))
    return X, W, V, DN, Z, status
