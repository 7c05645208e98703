"""Time- and space-varying delay fields and the control-history ring buffer.

Four delay families, all continuous in (t, xi) by construction:

* ``constant``          — D = D0 everywhere.
* ``uniform_sinusoid``  — D(t) = D0 + amplitude * sin(omega t + phase),
                          uniform across the domain.
* ``paper_example``     — D(t, xi) = (D0 - a) + a |2 xi - 1| (1 + sin((3/2 + xi) t
                          + 11 xi - 3)) with a = amplitude; the deviation from
                          D0 never exceeds a.
* ``custom_sampled``    — bilinear interpolation of a tabulated (t, xi, D)
                          rectangular lattice loaded from CSV.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import _kernels_py as _codes
from .errors import ConfigError, OutOfWindowError

FAMILIES = ("constant", "uniform_sinusoid", "paper_example", "custom_sampled")

_FAMILY_CODES = {
    "constant": _codes.FAMILY_CONSTANT,
    "uniform_sinusoid": _codes.FAMILY_UNIFORM_SINUSOID,
    "paper_example": _codes.FAMILY_SPATIAL_SINUSOID,
    "custom_sampled": _codes.FAMILY_TABLE,
}


@dataclass
class DelayField:
    kind: str
    D0: float
    delta_claimed: float
    params: dict = field(default_factory=dict)
    table_t: np.ndarray = None
    table_xi: np.ndarray = None
    table_D: np.ndarray = None

    def __post_init__(self):
        if self.kind not in FAMILIES:
            raise ConfigError(f"unknown delay kind {self.kind!r}; expected one of {FAMILIES}")
        if not 0.0 <= self.delta_claimed < self.D0:
            raise ConfigError(
                f"delta_claimed must lie in [0, D0); got {self.delta_claimed} vs D0={self.D0}")
        if self.kind == "custom_sampled" and self.table_D is None:
            raise ConfigError("custom_sampled delay needs a (t, xi, D) lattice")

    def evaluate(self, t, xi):
        """D(t, xi) for scalar t and scalar/array xi in [0, 1]."""
        xi = np.asarray(xi, dtype=float)
        if np.any(xi < 0.0) or np.any(xi > 1.0):
            raise ValueError("xi outside [0, 1]")
        if self.kind == "constant":
            return np.broadcast_to(self.D0, xi.shape).copy() if xi.ndim else float(self.D0)
        if self.kind == "uniform_sinusoid":
            val = self.D0 + self.params["amplitude"] * np.sin(
                self.params["omega"] * t + self.params.get("phase", 0.0))
            return np.broadcast_to(val, xi.shape).copy() if xi.ndim else float(val)
        if self.kind == "paper_example":
            a = self.params["amplitude"]
            out = (self.D0 - a) + a * np.abs(2.0 * xi - 1.0) * (
                1.0 + np.sin((1.5 + xi) * t + (11.0 * xi - 3.0)))
            return out if xi.ndim else float(out)
        # custom_sampled: bilinear with clamped extrapolation
        tt, xx, DD = self.table_t, self.table_xi, self.table_D
        tcl = float(np.clip(t, tt[0], tt[-1]))
        it = int(np.clip(np.searchsorted(tt, tcl, side="right") - 1, 0, len(tt) - 2))
        ft = (tcl - tt[it]) / (tt[it + 1] - tt[it])
        ix = np.clip(np.searchsorted(xx, xi, side="right") - 1, 0, len(xx) - 2)
        fx = (xi - xx[ix]) / (xx[ix + 1] - xx[ix])
        row = DD[it] * (1.0 - ft) + DD[it + 1] * ft
        out = row[ix] * (1.0 - fx) + row[ix + 1] * fx
        return out if xi.ndim else float(out)

    def kernel_args(self):
        """(family_code, params_vector, table arrays) for the compute backends."""
        code = _FAMILY_CODES[self.kind]
        empty = np.zeros(0)
        empty2 = np.zeros((0, 0))
        if self.kind == "constant":
            return code, np.array([self.D0]), empty, empty, empty2
        if self.kind == "uniform_sinusoid":
            return code, np.array([self.D0, self.params["amplitude"],
                                   self.params["omega"], self.params.get("phase", 0.0)]), \
                empty, empty, empty2
        if self.kind == "paper_example":
            return code, np.array([self.D0, self.params["amplitude"]]), empty, empty, empty2
        return code, np.array([self.D0]), self.table_t, self.table_xi, self.table_D


@dataclass
class DeviationReport:
    max_deviation: float
    passed: bool
    delta_claimed: float
    min_delay: float
    lattice_shape: tuple
    t_to_lookup_monotone: bool


def validate_deviation(field_, t_max=40.0, n_t=1001, n_xi=101):
    """Scan |D - D0| on a (t, xi) lattice and compare against the claimed bound.

    Also flags whether the lookup time t - D(t, xi) is monotone in t on the
    lattice; non-monotone fields are legal but worth surfacing in run reports.
    """
    if n_t < 64 or n_xi < 64:
        raise ValueError("validation lattice needs at least 64 points per axis")
    ts = np.linspace(0.0, t_max, n_t)
    xis = np.linspace(0.0, 1.0, n_xi)
    D = np.empty((n_t, n_xi))
    for i, t in enumerate(ts):
        D[i] = field_.evaluate(t, xis)
    dev = float(np.abs(D - field_.D0).max())
    lookup = ts[:, None] - D
    monotone = bool(np.all(np.diff(lookup, axis=0) > 0.0))
    return DeviationReport(
        max_deviation=dev,
        passed=bool(dev <= field_.delta_claimed + 1e-12),
        delta_claimed=field_.delta_claimed,
        min_delay=float(D.min()),
        lattice_shape=(n_t, n_xi),
        t_to_lookup_monotone=monotone,
    )


def load_delay_table(path):
    """CSV of rows (t, xi, D) on a full rectangular lattice -> sorted arrays."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if [c.strip().lower() for c in header[:3]] != ["t", "xi", "d"]:
            raise ConfigError(f"delay table header must be t,xi,D; got {header}")
        for row in reader:
            rows.append((float(row[0]), float(row[1]), float(row[2])))
    ts = np.array(sorted({r[0] for r in rows}))
    xis = np.array(sorted({r[1] for r in rows}))
    if len(rows) != len(ts) * len(xis):
        raise ConfigError(
            f"delay table is not a full lattice: {len(rows)} rows vs "
            f"{len(ts)} x {len(xis)} grid")
    D = np.empty((len(ts), len(xis)))
    t_index = {t: i for i, t in enumerate(ts)}
    x_index = {x: j for j, x in enumerate(xis)}
    for t, x, d in rows:
        D[t_index[t], x_index[x]] = d
    return ts, xis, D


class ControlHistory:
    """Ring buffer of control vectors sampled every ``dt`` seconds.

    Lookups at s <= 0 return zeros (the system is uncontrolled before the
    loop closes); lookups inside the retention window interpolate linearly
    and are exact at sample times.  The writer appends whole rows, so
    concurrent readers never observe a partially written sample.
    """

    def __init__(self, dt, window, dim):
        if window < dt:
            raise ValueError("retention window shorter than one sample interval")
        self.dt = float(dt)
        self.window = float(window)
        self.dim = int(dim)
        self.capacity = int(np.ceil(window / dt)) + 2
        self._buf = np.zeros((self.capacity, dim))
        self._head = -1  # index of the newest sample; time = head * dt

    @property
    def t_head(self):
        return self._head * self.dt if self._head >= 0 else None

    def append(self, w):
        w = np.asarray(w, dtype=float)
        if w.shape != (self.dim,):
            raise ValueError(f"expected a length-{self.dim} control vector")
        self._head += 1
        self._buf[self._head % self.capacity] = w

    def lookup(self, s):
        """Control vector(s) at time(s) ``s``; vectorized over arrays."""
        if self._head < 0:
            raise OutOfWindowError("history is empty")
        scalar = np.isscalar(s)
        s = np.atleast_1d(np.asarray(s, dtype=float))
        oldest = max(self._head * self.dt - self.window, 0.0)
        if np.any((s > 0.0) & (s < oldest - 1e-12)):
            raise OutOfWindowError(
                f"lookup at {s.min():.6g} s older than retention window "
                f"[{oldest:.6g}, {self._head * self.dt:.6g}]")
        idx = np.clip((s / self.dt).astype(np.int64), 0, max(self._head - 1, 0))
        frac = np.clip(s / self.dt - idx, 0.0, 1.0)
        lo = self._buf[idx % self.capacity]
        # clamp to the newest sample for lookups at or beyond the head
        hi = self._buf[np.minimum(idx + 1, self._head) % self.capacity]
        out = lo * (1.0 - frac)[:, None] + hi * frac[:, None]
        out[s <= 0.0] = 0.0
        return out[0] if scalar else out
