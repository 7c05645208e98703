"""Weighted Sturm-Liouville eigenproblem and modal projection/synthesis.

The operator is f -> (1/rho) (p f')' + (q/rho) f on [0, 1] with separated
boundary conditions

    cos(theta1) f(0) - sin(theta1) f'(0) = 0
    cos(theta2) f(1) + sin(theta2) f'(1) = 0

Eigenpairs are found by shooting: integrate (p y')' + (q - lam rho) y = 0 from
the left endpoint with data satisfying the first condition, and locate the
zeros of the characteristic value F(lam) = cos(theta2) y(1) + sin(theta2) y'(1)
by a downward scan plus bisection.  The n-th eigenfunction has exactly n-1
interior sign changes, which is used to detect and repair skipped roots when
two eigenvalues fall inside one scan step.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .backend import kernels
from .errors import BracketingError, InvalidProblemError

DEFAULT_NODES = 1201
DEFAULT_TOL = 1e-10
DEFAULT_SCAN_STEP = 0.25

_SHOOT_RTOL = 1e-11
_SHOOT_ATOL = 1e-13


@dataclass(frozen=True)
class Coefficient:
    """Polynomial coefficient function on [0, 1] (ascending coefficients).

    The two config built-ins are both polynomials: "constant" is degree 0.
    """

    coeffs: tuple

    @classmethod
    def constant(cls, value):
        return cls((float(value),))

    @classmethod
    def polynomial(cls, coeffs):
        if len(coeffs) == 0:
            raise InvalidProblemError("polynomial coefficient list is empty")
        return cls(tuple(float(c) for c in coeffs))

    def __call__(self, x):
        acc = np.zeros_like(np.asarray(x, dtype=float))
        for c in self.coeffs[::-1]:
            acc = acc * x + c
        return acc

    def array(self):
        return np.asarray(self.coeffs, dtype=float)


@dataclass(frozen=True)
class SturmLiouvilleProblem:
    rho: Coefficient
    p: Coefficient
    q: Coefficient
    theta1: float
    theta2: float

    def __post_init__(self):
        for name, th in (("theta1", self.theta1), ("theta2", self.theta2)):
            if not 0.0 <= th < 2.0 * np.pi:
                raise InvalidProblemError(f"{name} must lie in [0, 2*pi), got {th}")

    def validate_on(self, nodes):
        """Positivity of rho and p at every sample."""
        for name, coef in (("rho", self.rho), ("p", self.p)):
            vals = coef(nodes)
            if not np.all(vals > 0.0):
                bad = nodes[np.argmin(vals)]
                raise InvalidProblemError(
                    f"{name} must be positive on [0,1]; {name}({bad:.6g}) = {vals.min():.6g}")


@dataclass(frozen=True)
class Grid:
    """Uniform grid with composite-Simpson quadrature weights for [0, 1]."""

    nodes: np.ndarray
    weights: np.ndarray

    @classmethod
    def simpson(cls, n_nodes=DEFAULT_NODES):
        if n_nodes < 3 or n_nodes % 2 == 0:
            raise ValueError(f"Simpson grid needs an odd node count >= 3, got {n_nodes}")
        nodes = np.linspace(0.0, 1.0, n_nodes)
        h = nodes[1] - nodes[0]
        w = np.ones(n_nodes)
        w[1:-1:2] = 4.0
        w[2:-1:2] = 2.0
        w *= h / 3.0
        return cls(nodes=nodes, weights=w)

    @property
    def n_nodes(self):
        return len(self.nodes)

    def integrate(self, samples):
        return float(self.weights @ samples)


@dataclass
class SpectralBasis:
    """Sorted eigenvalues with rho-orthonormal eigenfunctions sampled on a grid.

    ``functions[n]`` holds the n-th eigenfunction, normalized so that its
    first nonzero grid sample is positive; ``derivatives[n]`` its derivative.
    """

    eigenvalues: np.ndarray
    functions: np.ndarray
    derivatives: np.ndarray
    grid: Grid
    problem: SturmLiouvilleProblem
    rho_samples: np.ndarray = field(init=False)

    def __post_init__(self):
        self.rho_samples = self.problem.rho(self.grid.nodes)

    @property
    def n_modes(self):
        return len(self.eigenvalues)

    def inner(self, f, g):
        """Weighted inner product <f, g> = int rho f g by grid quadrature."""
        return float(np.sum(self.grid.weights * self.rho_samples * f * g))

    def norm(self, f):
        return float(np.sqrt(max(self.inner(f, f), 0.0)))

    def gram(self, n=None):
        E = self.functions[: (n or self.n_modes)]
        return E @ (self.grid.weights * self.rho_samples * E).T

    def oscillation_indices(self):
        return np.array([_sign_changes(f) for f in self.functions])


def _sign_changes(samples):
    """Interior sign changes, ignoring samples indistinguishable from zero."""
    mags = np.abs(samples)
    keep = mags > 1e-9 * mags.max()
    signs = np.sign(samples[keep])
    return int(np.count_nonzero(np.diff(signs) != 0))


def _characteristic(problem, lam, rtol=_SHOOT_RTOL, atol=_SHOOT_ATOL):
    return kernels.shoot_endpoint(
        lam, problem.rho.array(), problem.p.array(), problem.q.array(),
        problem.theta1, problem.theta2, rtol, atol)


def _profile(problem, lam, nodes, rtol=_SHOOT_RTOL, atol=_SHOOT_ATOL):
    return kernels.shoot_profile(
        lam, problem.rho.array(), problem.p.array(), problem.q.array(),
        problem.theta1, nodes, rtol, atol)


def _bisect_root(problem, lo, hi, f_lo, f_hi, tol):
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        f_mid = _characteristic(problem, mid)
        if f_mid == 0.0:
            return mid
        if np.sign(f_mid) == np.sign(f_lo):
            lo, f_lo = mid, f_mid
        else:
            hi, f_hi = mid, f_mid
    return 0.5 * (lo + hi)


def _scan_roots(problem, lam_hi, lam_floor, step, tol, needed, max_bisections=None):
    """Roots of the characteristic in (lam_floor, lam_hi], scanning downward."""
    roots = []
    hi = lam_hi
    f_hi = _characteristic(problem, hi)
    while len(roots) < needed and hi > lam_floor:
        lo = hi - step
        f_lo = _characteristic(problem, lo)
        if f_lo == 0.0:
            roots.append(lo)
        elif np.sign(f_lo) != np.sign(f_hi):
            roots.append(_bisect_root(problem, lo, hi, f_lo, f_hi, tol))
        hi, f_hi = lo, f_lo
    return roots


def solve_eigensystem(problem, n_modes, grid=None, tol=DEFAULT_TOL,
                      scan_step=DEFAULT_SCAN_STEP, lam_floor=None):
    """Largest ``n_modes`` eigenvalues with rho-orthonormal eigenfunctions.

    The scan starts at max(q/rho) + 1 (all eigenvalues lie below, by the
    Rayleigh quotient) and walks down in ``scan_step`` increments, bisecting
    each sign change of the characteristic.  Whenever the oscillation count of
    a converged eigenfunction exceeds its expected index, the interval above
    it is rescanned with a 5x finer step until the indices come out contiguous.
    """
    if n_modes < 1:
        raise ValueError("n_modes must be >= 1")
    if tol <= 0.0:
        raise ValueError("tol must be positive")
    grid = grid or Grid.simpson()
    problem.validate_on(grid.nodes)

    qr = problem.q(grid.nodes) / problem.rho(grid.nodes)
    lam_start = float(qr.max()) + 1.0
    if lam_floor is None:
        # generous Weyl-type floor: lam_n ~ -max(p/rho) (n pi)^2 + max(q/rho)
        pr = problem.p(grid.nodes) / problem.rho(grid.nodes)
        lam_floor = lam_start - 2.0 * float(pr.max()) * ((n_modes + 3) * np.pi) ** 2 \
            - (float(qr.max()) - float(qr.min())) - 10.0

    accepted = []   # (lam, y, yp), ordered by oscillation index
    hi = lam_start
    f_hi = _characteristic(problem, hi)
    step = scan_step
    while len(accepted) < n_modes:
        if hi <= lam_floor:
            raise BracketingError(
                f"characteristic scan exhausted: found {len(accepted)} of {n_modes} "
                f"eigenvalues in [{lam_floor:.6g}, {lam_start:.6g}]",
                lam_lo=lam_floor, lam_hi=lam_start)
        lo = hi - step
        f_lo = _characteristic(problem, lo)
        if f_lo != 0.0 and np.sign(f_lo) == np.sign(f_hi):
            hi, f_hi = lo, f_lo
            continue
        lam = lo if f_lo == 0.0 else _bisect_root(problem, lo, hi, f_lo, f_hi, tol)
        y, yp = _profile(problem, lam, grid.nodes)
        osc = _sign_changes(y)
        expected = len(accepted)
        if osc == expected:
            accepted.append((lam, y, yp))
        elif osc > expected:
            # skipped root(s) somewhere between this root and the last accepted
            # eigenvalue (or the scan start): rescan that window finer
            upper = accepted[-1][0] if accepted else lam_start
            missing = _repair_scan(problem, grid, lam, upper, step, tol, expected, osc)
            accepted.extend(missing)
            accepted.append((lam, y, yp))
        else:
            raise BracketingError(
                f"oscillation index {osc} at lam={lam:.9g} below expected {expected}: "
                "duplicate root or quadrature failure", lam_lo=lo, lam_hi=hi)
        hi, f_hi = lo, f_lo

    accepted = accepted[:n_modes]
    lams = np.array([a[0] for a in accepted])
    funcs = np.array([a[1] for a in accepted])
    derivs = np.array([a[2] for a in accepted])
    if np.any(np.diff(lams) >= 0.0):
        raise BracketingError("eigenvalues not strictly decreasing after repair; "
                              "quadrature or bracketing failure")

    rho_s = problem.rho(grid.nodes)
    for i in range(n_modes):
        nrm = np.sqrt(np.sum(grid.weights * rho_s * funcs[i] ** 2))
        funcs[i] /= nrm
        derivs[i] /= nrm
        mags = np.abs(funcs[i])
        first = np.nonzero(mags > 1e-9 * mags.max())[0][0]
        if funcs[i][first] < 0.0:
            funcs[i] = -funcs[i]
            derivs[i] = -derivs[i]

    return SpectralBasis(eigenvalues=lams, functions=funcs, derivatives=derivs,
                         grid=grid, problem=problem)


def _repair_scan(problem, grid, lam_below, lam_above, step, tol, expected, osc,
                 max_depth=8):
    """Recover roots missed between ``lam_below`` and ``lam_above``.

    The eigenfunction at ``lam_below`` has ``osc`` sign changes, so exactly
    ``osc - expected`` simple roots lie in the open interval above it.
    """
    want = osc - expected
    # keep clear of lam_above itself in case it is a root of the characteristic
    top = lam_above - max(10.0 * tol, 1e-12)
    fine = step
    for _ in range(max_depth):
        fine /= 5.0
        found = _scan_roots(problem, top, lam_below + tol, fine, tol, want)
        if len(found) == want:
            out = []
            for pos, lam in enumerate(sorted(found, reverse=True)):
                y, yp = _profile(problem, lam, grid.nodes)
                if _sign_changes(y) != expected + pos:
                    break
                out.append((lam, y, yp))
            else:
                return out
    raise BracketingError(
        f"failed to recover {want} skipped eigenvalue(s) in "
        f"({lam_below:.9g}, {lam_above:.9g}) after {max_depth} refinements",
        lam_lo=lam_below, lam_hi=lam_above)


def project(f, basis, n=None):
    """First ``n`` modal coefficients <f, e_k> of a sampled function."""
    f = np.asarray(f, dtype=float)
    if f.shape != basis.grid.nodes.shape:
        raise ValueError(
            f"sample length {f.shape} does not match grid {basis.grid.nodes.shape}")
    n = basis.n_modes if n is None else n
    if n > basis.n_modes:
        raise ValueError(f"requested {n} coefficients from a {basis.n_modes}-mode basis")
    E = basis.functions[:n]
    return E @ (basis.grid.weights * basis.rho_samples * f)


def synthesize(coeffs, basis):
    """Pointwise sum of modes weighted by ``coeffs`` on the basis grid."""
    coeffs = np.asarray(coeffs, dtype=float)
    if len(coeffs) > basis.n_modes:
        raise ValueError(
            f"{len(coeffs)} coefficients exceed the {basis.n_modes}-mode basis")
    return coeffs @ basis.functions[:len(coeffs)]


def export_basis_csv(basis, path):
    """One row per grid node: xi, e_1(xi), ..., e_M(xi).

    Each eigenfunction column header carries its eigenvalue.
    """
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        header = ["xi"] + [
            f"e{n + 1};lambda={lam:.17g}"
            for n, lam in enumerate(basis.eigenvalues)
        ]
        writer.writerow(header)
        for j, xi in enumerate(basis.grid.nodes):
            writer.writerow([f"{xi:.17g}"] + [f"{v:.17g}" for v in basis.functions[:, j]])


def load_basis_csv(path):
    """Inverse of :func:`export_basis_csv`: (eigenvalues, nodes, functions)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        lams = np.array([float(col.split("lambda=")[1]) for col in header[1:]])
        rows = [[float(v) for v in row] for row in reader]
    data = np.array(rows)
    return lams, data[:, 0], data[:, 1:].T
