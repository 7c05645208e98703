# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled backend for the hot kernels.

Mirrors ``_kernels_py`` exactly: an adaptive Cash-Karp 4/5 integrator for the
characteristic ODE of the shooting eigensolver, and the closed-loop modal RK4
stepper with the predictor update.  See the pure-Python module for the
contract documentation.
"""
import numpy as np

cimport numpy as cnp
from libc.math cimport exp, fabs, floor, fmax, fmin, isfinite, sin, sqrt

cnp.import_array()

FAMILY_CONSTANT = 0
FAMILY_UNIFORM_SINUSOID = 1
FAMILY_SPATIAL_SINUSOID = 2
FAMILY_TABLE = 3

DIVERGENCE_BOUND = 1e12

cdef long MAX_SHOOT_STEPS = 2000000
cdef double _DIV_BOUND = 1e12


cdef inline double _poly(const double[:] c, double x) nogil:
    cdef Py_ssize_t i = c.shape[0] - 1
    cdef double acc = c[i]
    while i > 0:
        i -= 1
        acc = acc * x + c[i]
    return acc


cdef inline void _slp_rhs(const double[:] rho_c, const double[:] p_c,
                          const double[:] q_c, double lam, double x,
                          double y, double u, double * dy, double * du) nogil:
    dy[0] = u / _poly(p_c, x)
    du[0] = (lam * _poly(rho_c, x) - _poly(q_c, x)) * y


# Cash-Karp embedded Runge-Kutta 4(5) coefficients
cdef double A2 = 0.2, A3 = 0.3, A4 = 0.6, A5 = 1.0, A6 = 0.875
cdef double B21 = 0.2
cdef double B31 = 3.0 / 40.0, B32 = 9.0 / 40.0
cdef double B41 = 0.3, B42 = -0.9, B43 = 1.2
cdef double B51 = -11.0 / 54.0, B52 = 2.5, B53 = -70.0 / 27.0, B54 = 35.0 / 27.0
cdef double B61 = 1631.0 / 55296.0, B62 = 175.0 / 512.0, B63 = 575.0 / 13824.0
cdef double B64 = 44275.0 / 110592.0, B65 = 253.0 / 4096.0
cdef double C1 = 37.0 / 378.0, C3 = 250.0 / 621.0, C4 = 125.0 / 594.0, C6 = 512.0 / 1771.0
cdef double DC1 = C1 - 2825.0 / 27648.0
cdef double DC3 = C3 - 18575.0 / 48384.0
cdef double DC4 = C4 - 13525.0 / 55296.0
cdef double DC5 = -277.0 / 14336.0
cdef double DC6 = C6 - 0.25


cdef int _advance(const double[:] rho_c, const double[:] p_c, const double[:] q_c,
                  double lam, double x_from, double x_to,
                  double * y_io, double * u_io, double rtol, double atol) nogil:
    """Adaptive integration from x_from to x_to; returns 0 on success."""
    cdef double x = x_from
    cdef double y = y_io[0], u = u_io[0]
    cdef double h = (x_to - x_from)
    cdef double k1y, k1u, k2y, k2u, k3y, k3u, k4y, k4u, k5y, k5u, k6y, k6u
    cdef double ty, tu, y5, u5, ey, eu, err, scale_y, scale_u
    cdef long steps = 0
    if h <= 0.0:
        return 0
    h = fmin(h, 0.05)
    while x < x_to:
        if steps > MAX_SHOOT_STEPS:
            return 1
        steps += 1
        if x + h > x_to:
            h = x_to - x
        _slp_rhs(rho_c, p_c, q_c, lam, x, y, u, &k1y, &k1u)
        ty = y + h * B21 * k1y
        tu = u + h * B21 * k1u
        _slp_rhs(rho_c, p_c, q_c, lam, x + A2 * h, ty, tu, &k2y, &k2u)
        ty = y + h * (B31 * k1y + B32 * k2y)
        tu = u + h * (B31 * k1u + B32 * k2u)
        _slp_rhs(rho_c, p_c, q_c, lam, x + A3 * h, ty, tu, &k3y, &k3u)
        ty = y + h * (B41 * k1y + B42 * k2y + B43 * k3y)
        tu = u + h * (B41 * k1u + B42 * k2u + B43 * k3u)
        _slp_rhs(rho_c, p_c, q_c, lam, x + A4 * h, ty, tu, &k4y, &k4u)
        ty = y + h * (B51 * k1y + B52 * k2y + B53 * k3y + B54 * k4y)
        tu = u + h * (B51 * k1u + B52 * k2u + B53 * k3u + B54 * k4u)
        _slp_rhs(rho_c, p_c, q_c, lam, x + A5 * h, ty, tu, &k5y, &k5u)
        ty = y + h * (B61 * k1y + B62 * k2y + B63 * k3y + B64 * k4y + B65 * k5y)
        tu = u + h * (B61 * k1u + B62 * k2u + B63 * k3u + B64 * k4u + B65 * k5u)
        _slp_rhs(rho_c, p_c, q_c, lam, x + A6 * h, ty, tu, &k6y, &k6u)

        y5 = y + h * (C1 * k1y + C3 * k3y + C4 * k4y + C6 * k6y)
        u5 = u + h * (C1 * k1u + C3 * k3u + C4 * k4u + C6 * k6u)
        ey = h * (DC1 * k1y + DC3 * k3y + DC4 * k4y + DC5 * k5y + DC6 * k6y)
        eu = h * (DC1 * k1u + DC3 * k3u + DC4 * k4u + DC5 * k5u + DC6 * k6u)
        scale_y = atol + rtol * fmax(fabs(y), fabs(y5))
        scale_u = atol + rtol * fmax(fabs(u), fabs(u5))
        err = fmax(fabs(ey) / scale_y, fabs(eu) / scale_u)
        if err <= 1.0:
            x += h
            y = y5
            u = u5
            if err > 1e-30:
                h *= fmin(0.9 * err ** -0.2, 5.0)
            else:
                h *= 5.0
        else:
            h *= fmax(0.9 * err ** -0.25, 0.2)
        if h < 1e-14:
            return 2
    y_io[0] = y
    u_io[0] = u
    return 0


def shoot_endpoint(double lam, const double[:] rho_c, const double[:] p_c,
                   const double[:] q_c, double theta1, double theta2,
                   double rtol, double atol):
    """Characteristic value F(lam); see the pure-Python twin."""
    cdef double y = sin(theta1)
    cdef double u = _poly(p_c, 0.0) * np.cos(theta1)
    cdef int status
    with nogil:
        status = _advance(rho_c, p_c, q_c, lam, 0.0, 1.0, &y, &u, rtol, atol)
    if status != 0:
        raise RuntimeError(f"characteristic integration failed (status {status}) at lam={lam}")
    return float(np.cos(theta2) * y + np.sin(theta2) * u / _poly(p_c, 1.0))


def shoot_profile(double lam, const double[:] rho_c, const double[:] p_c,
                  const double[:] q_c, double theta1, const double[:] nodes,
                  double rtol, double atol):
    """Shooting solution sampled on ``nodes``; returns (y, y') arrays."""
    cdef Py_ssize_t n = nodes.shape[0]
    y_arr = np.empty(n)
    yp_arr = np.empty(n)
    cdef double[:] yv = y_arr
    cdef double[:] ypv = yp_arr
    cdef double y = sin(theta1)
    cdef double u = _poly(p_c, 0.0) * np.cos(theta1)
    cdef Py_ssize_t i
    cdef int status = 0
    with nogil:
        yv[0] = y
        ypv[0] = u / _poly(p_c, nodes[0])
        for i in range(1, n):
            status = _advance(rho_c, p_c, q_c, lam, nodes[i - 1], nodes[i],
                              &y, &u, rtol, atol)
            if status != 0:
                break
            yv[i] = y
            ypv[i] = u / _poly(p_c, nodes[i])
    if status != 0:
        raise RuntimeError(f"profile integration failed (status {status}) at lam={lam}")
    return y_arr, yp_arr


cdef inline Py_ssize_t _bracket(const double[:] table, double v) nogil:
    """Index i with table[i] <= v < table[i+1], clamped to valid cells."""
    cdef Py_ssize_t lo = 0, hi = table.shape[0] - 1, mid
    if v <= table[0]:
        return 0
    if v >= table[hi]:
        return hi - 1
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if table[mid] <= v:
            lo = mid
        else:
            hi = mid
    return lo


cdef void _delay_values(int family, const double[:] fparams, const double[:] nodes,
                        const double[:] tab_t, const double[:] tab_xi,
                        const double[:, :] tab_D, double t, double[:] out) nogil:
    cdef Py_ssize_t j, it, ix
    cdef Py_ssize_t n = nodes.shape[0]
    cdef double d0 = fparams[0]
    cdef double amp, val, ft, fx, tcl, xi
    if family == 0:
        for j in range(n):
            out[j] = d0
    elif family == 1:
        val = d0 + fparams[1] * sin(fparams[2] * t + fparams[3])
        for j in range(n):
            out[j] = val
    elif family == 2:
        amp = fparams[1]
        for j in range(n):
            xi = nodes[j]
            out[j] = (d0 - amp) + amp * fabs(2.0 * xi - 1.0) * (
                1.0 + sin((1.5 + xi) * t + (11.0 * xi - 3.0)))
    else:
        tcl = fmin(fmax(t, tab_t[0]), tab_t[tab_t.shape[0] - 1])
        it = _bracket(tab_t, tcl)
        ft = (tcl - tab_t[it]) / (tab_t[it + 1] - tab_t[it])
        for j in range(n):
            xi = nodes[j]
            ix = _bracket(tab_xi, xi)
            fx = (xi - tab_xi[ix]) / (tab_xi[ix + 1] - tab_xi[ix])
            val = (tab_D[it, ix] * (1.0 - fx) + tab_D[it, ix + 1] * fx) * (1.0 - ft) \
                + (tab_D[it + 1, ix] * (1.0 - fx) + tab_D[it + 1, ix + 1] * fx) * ft
            out[j] = val


cdef void _v_of(double tau, Py_ssize_t khead, double inv_dt,
                const double[:, :] W, const double[:, :] EN,
                const double[:, :] Erw, const double[:] nodes,
                int family, const double[:] fparams, const double[:] tab_t,
                const double[:] tab_xi, const double[:, :] tab_D,
                double[:] dbuf, double[:] ubuf, double[:] out) nogil:
    """Delayed-input projections v_n(tau) from the history written through
    sample ``khead``."""
    cdef Py_ssize_t n_nodes = nodes.shape[0]
    cdef Py_ssize_t N = EN.shape[0]
    cdef Py_ssize_t n_modes = Erw.shape[0]
    cdef Py_ssize_t j, k, n, idx
    cdef double s, frac, acc, wk
    _delay_values(family, fparams, nodes, tab_t, tab_xi, tab_D, tau, dbuf)
    for j in range(n_nodes):
        s = tau - dbuf[j]
        if s <= 0.0:
            ubuf[j] = 0.0
            continue
        idx = <Py_ssize_t> floor(s * inv_dt)
        if idx > khead - 1:
            idx = khead - 1
        if idx < 0:
            idx = 0
        frac = s * inv_dt - idx
        if frac < 0.0:
            frac = 0.0
        elif frac > 1.0:
            frac = 1.0
        acc = 0.0
        for k in range(N):
            wk = W[idx, k] * (1.0 - frac) + W[idx + 1, k] * frac
            acc += wk * EN[k, j]
        ubuf[j] = acc
    for n in range(n_modes):
        acc = 0.0
        for j in range(n_nodes):
            acc += Erw[n, j] * ubuf[j]
        out[n] = acc


cdef int _solve_small(double[:, :] A, double[:] b, double[:] x, Py_ssize_t n) nogil:
    """Gaussian elimination with partial pivoting for the implicit trapezoid
    system; returns nonzero when singular."""
    cdef Py_ssize_t i, j, k, piv
    cdef double best, factor, tmp
    for i in range(n):
        x[i] = b[i]
    for k in range(n):
        piv = k
        best = fabs(A[k, k])
        for i in range(k + 1, n):
            if fabs(A[i, k]) > best:
                best = fabs(A[i, k])
                piv = i
        if best < 1e-300:
            return 1
        if piv != k:
            for j in range(n):
                tmp = A[k, j]
                A[k, j] = A[piv, j]
                A[piv, j] = tmp
            tmp = x[k]
            x[k] = x[piv]
            x[piv] = tmp
        for i in range(k + 1, n):
            factor = A[i, k] / A[k, k]
            for j in range(k, n):
                A[i, j] -= factor * A[k, j]
            x[i] -= factor * x[k]
    for k in range(n - 1, -1, -1):
        for j in range(k + 1, n):
            x[k] -= A[k, j] * x[j]
        x[k] /= A[k, k]
    return 0


def run_modal_loop(const double[:] lam, const double[:, :] Erw, const double[:, :] EN,
                   const double[:] nodes, const double[:, :] K, double D0, double t0,
                   double dt, Py_ssize_t nsteps, Py_ssize_t m, int rule,
                   int family, const double[:] fparams, const double[:] tab_t,
                   const double[:] tab_xi, const double[:, :] tab_D,
                   const double[:] x0, bint open_loop):
    """Closed-loop modal RK4 loop; see the pure-Python twin for the contract."""
    cdef Py_ssize_t n_modes = lam.shape[0]
    cdef Py_ssize_t N = K.shape[0]
    X_arr = np.zeros((nsteps + 1, n_modes))
    W_arr = np.zeros((nsteps + 1, N))
    V_arr = np.zeros((nsteps + 1, n_modes))
    DN_arr = np.zeros(nsteps + 1)
    Z_arr = np.zeros((nsteps + 1, N))
    exp_arr = np.exp(-np.outer(np.arange(m + 1) * dt, np.asarray(lam)[:N]))

    cdef double[:, :] X = X_arr
    cdef double[:, :] W = W_arr
    cdef double[:, :] V = V_arr
    cdef double[:] DN = DN_arr
    cdef double[:, :] Z = Z_arr
    cdef double[:, :] exp_tab = exp_arr

    buf = np.zeros((7, n_modes))
    cdef double[:] v1 = buf[0]
    cdef double[:] v2 = buf[1]
    cdef double[:] v4 = buf[2]
    cdef double[:] x = buf[3]
    cdef double[:] xs = buf[4]
    cdef double[:] k_acc = buf[5]
    cdef double[:] k_cur = buf[6]
    dbuf_arr = np.zeros(nodes.shape[0])
    ubuf_arr = np.zeros(nodes.shape[0])
    cdef double[:] dbuf = dbuf_arr
    cdef double[:] ubuf = ubuf_arr
    small = np.zeros((3, N))
    cdef double[:] integ = small[0]
    cdef double[:] rhsv = small[1]
    cdef double[:] wnew = small[2]
    A_arr = np.zeros((N, N))
    cdef double[:, :] A_imp = A_arr

    cdef double inv_dt = 1.0 / dt
    cdef Py_ssize_t k, i, n, j, lo, khead, start
    cdef double t, tc, phi, acc, bad
    cdef int status = 0
    cdef bint diverged = False

    for i in range(n_modes):
        x[i] = x0[i]
        X[0, i] = x0[i]
    for i in range(N):
        Z[0, i] = x0[i]

    with nogil:
        for k in range(nsteps):
            t = k * dt
            khead = k if k > 1 else 1
            if not open_loop:
                _v_of(t, khead, inv_dt, W, EN, Erw, nodes, family, fparams,
                      tab_t, tab_xi, tab_D, dbuf, ubuf, v1)
                _v_of(t + 0.5 * dt, khead, inv_dt, W, EN, Erw, nodes, family,
                      fparams, tab_t, tab_xi, tab_D, dbuf, ubuf, v2)
                _v_of(t + dt, khead, inv_dt, W, EN, Erw, nodes, family,
                      fparams, tab_t, tab_xi, tab_D, dbuf, ubuf, v4)
                for n in range(n_modes):
                    V[k, n] = v1[n]
                acc = 0.0
                lo = k - m
                for i in range(N):
                    bad = v1[i] - (W[lo, i] if lo >= 0 else 0.0)
                    acc += bad * bad
                DN[k] = sqrt(acc)
            else:
                for n in range(n_modes):
                    v1[n] = 0.0
                    v2[n] = 0.0
                    v4[n] = 0.0

            # RK4: k1..k4 accumulated into k_acc with classic weights
            for n in range(n_modes):
                k_cur[n] = lam[n] * x[n] + v1[n]     # k1
                k_acc[n] = k_cur[n]
            for n in range(n_modes):
                xs[n] = x[n] + 0.5 * dt * k_cur[n]
            for n in range(n_modes):
                k_cur[n] = lam[n] * xs[n] + v2[n]    # k2
                k_acc[n] += 2.0 * k_cur[n]
            for n in range(n_modes):
                xs[n] = x[n] + 0.5 * dt * k_cur[n]
            for n in range(n_modes):
                k_cur[n] = lam[n] * xs[n] + v2[n]    # k3
                k_acc[n] += 2.0 * k_cur[n]
            for n in range(n_modes):
                xs[n] = x[n] + dt * k_cur[n]
            for n in range(n_modes):
                k_cur[n] = lam[n] * xs[n] + v4[n]    # k4
                k_acc[n] += k_cur[n]
            for n in range(n_modes):
                x[n] += (dt / 6.0) * k_acc[n]
                X[k + 1, n] = x[n]

            bad = 0.0
            for n in range(n_modes):
                if not isfinite(x[n]) or fabs(x[n]) > _DIV_BOUND:
                    bad = 1.0
                    break
            if bad > 0.0:
                status = <int> (k + 2)
                diverged = True
                break

            tc = (k + 1) * dt
            phi = 0.0 if tc <= 0.0 else fmin(tc / t0, 1.0)
            lo = k + 1 - m
            if rule == 0:
                # left Riemann over [tc - D0, tc)
                start = lo if lo >= 0 else 0
                for i in range(N):
                    acc = 0.0
                    for j in range(start, k + 1):
                        acc += exp_tab[j - lo, i] * W[j, i]
                    integ[i] = dt * acc
                if open_loop:
                    for i in range(N):
                        W[k + 1, i] = 0.0
                        Z[k + 1, i] = x[i] + integ[i]
                else:
                    for i in range(N):
                        acc = 0.0
                        for j in range(N):
                            acc += K[i, j] * (x[j] + integ[j])
                        W[k + 1, i] = phi * acc
                        Z[k + 1, i] = x[i] + integ[i]
            else:
                # trapezoid over [tc - D0, tc]; implicit in w(tc)
                start = lo + 1 if lo + 1 > 0 else 0
                for i in range(N):
                    acc = 0.0
                    for j in range(start, k + 1):
                        acc += exp_tab[j - lo, i] * W[j, i]
                    integ[i] = dt * (acc + (0.5 * exp_tab[0, i] * W[lo, i] if lo >= 0 else 0.0))
                if open_loop:
                    for i in range(N):
                        W[k + 1, i] = 0.0
                        Z[k + 1, i] = x[i] + integ[i]
                else:
                    for i in range(N):
                        for j in range(N):
                            A_imp[i, j] = (1.0 if i == j else 0.0) \
                                - phi * 0.5 * dt * K[i, j] * exp_tab[m, j]
                        acc = 0.0
                        for j in range(N):
                            acc += K[i, j] * (x[j] + integ[j])
                        rhsv[i] = phi * acc
                    if _solve_small(A_imp, rhsv, wnew, N) != 0:
                        status = -1
                        break
                    for i in range(N):
                        W[k + 1, i] = wnew[i]
                        Z[k + 1, i] = x[i] + integ[i] + 0.5 * dt * exp_tab[m, i] * wnew[i]

    if status == -1:
        raise RuntimeError("implicit trapezoid system singular; reduce the step size")
    if status == 0 and not open_loop:
        with nogil:
            _v_of(nsteps * dt, nsteps, inv_dt, W, EN, Erw, nodes, family,
                  fparams, tab_t, tab_xi, tab_D, dbuf, ubuf, v1)
        for n in range(n_modes):
            V_arr[nsteps, n] = v1[n]
        lag = nsteps - m
        w_nom = W_arr[lag] if lag >= 0 else np.zeros(N)
        DN_arr[nsteps] = float(np.linalg.norm(V_arr[nsteps, :N] - w_nom))
    return X_arr, W_arr, V_arr, DN_arr, Z_arr, status
