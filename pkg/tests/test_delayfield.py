import numpy as np
import pytest

from rdpredict.delayfield import (ControlHistory, DelayField, load_delay_table,
                                  validate_deviation)
from rdpredict.errors import ConfigError, OutOfWindowError


def test_paper_family_center_node(paper_delay):
    for t in (0.0, 1.7, 12.3):
        assert paper_delay.evaluate(t, 0.5) == pytest.approx(0.77, abs=1e-15)


def test_constant_family():
    f = DelayField(kind="constant", D0=1.0, delta_claimed=0.0)
    assert f.evaluate(3.0, 0.25) == 1.0
    xs = np.linspace(0, 1, 11)
    assert np.all(f.evaluate(0.0, xs) == 1.0)


def test_paper_family_lattice_bounds(paper_delay):
    """Extremes over a 101 x 1001 lattice stay inside [0.77, 1.23]."""
    ts = np.linspace(0.0, 40.0, 1001)
    xs = np.linspace(0.0, 1.0, 101)
    D = np.array([paper_delay.evaluate(t, xs) for t in ts])
    assert D.min() >= 0.77 - 1e-12
    assert D.max() <= 1.23 + 1e-12
    assert np.abs(D - 1.0).max() <= 0.23 + 1e-12


def test_validate_deviation_pass(paper_delay):
    report = validate_deviation(paper_delay)
    assert report.passed
    assert report.max_deviation <= 0.23 + 1e-12
    assert report.min_delay > 0.0


def test_validate_deviation_fail_with_tight_claim():
    f = DelayField(kind="paper_example", D0=1.0, delta_claimed=0.20,
                   params={"amplitude": 0.23})
    report = validate_deviation(f)
    assert not report.passed
    assert report.max_deviation == pytest.approx(0.23, abs=1e-3)


def test_validate_deviation_lattice_minimum():
    f = DelayField(kind="constant", D0=1.0, delta_claimed=0.0)
    with pytest.raises(ValueError):
        validate_deviation(f, n_t=32, n_xi=101)


def test_monotonicity_flag():
    slow = DelayField(kind="uniform_sinusoid", D0=1.0, delta_claimed=0.1,
                      params={"amplitude": 0.1, "omega": 1.0, "phase": 0.0})
    fast = DelayField(kind="uniform_sinusoid", D0=1.0, delta_claimed=0.3,
                      params={"amplitude": 0.3, "omega": 5.0, "phase": 0.0})
    assert validate_deviation(slow).t_to_lookup_monotone
    assert not validate_deviation(fast).t_to_lookup_monotone


def test_domain_error(paper_delay):
    with pytest.raises(ValueError):
        paper_delay.evaluate(1.0, 1.5)


def test_claim_must_stay_below_nominal():
    with pytest.raises(ConfigError):
        DelayField(kind="constant", D0=1.0, delta_claimed=1.0)


def test_custom_sampled_matches_table(tmp_path):
    ts = np.linspace(0.0, 2.0, 21)
    xs = np.linspace(0.0, 1.0, 11)
    path = tmp_path / "table.csv"
    with open(path, "w") as fh:
        fh.write("t,xi,D\n")
        for t in ts:
            for x in xs:
                fh.write(f"{t},{x},{1.0 + 0.1 * t * x}\n")
    tab_t, tab_xi, tab_D = load_delay_table(path)
    f = DelayField(kind="custom_sampled", D0=1.0, delta_claimed=0.25,
                   table_t=tab_t, table_xi=tab_xi, table_D=tab_D)
    # exact at lattice points, bilinear in between
    assert f.evaluate(1.0, 0.5) == pytest.approx(1.05, abs=1e-12)
    assert f.evaluate(0.95, 0.55) == pytest.approx(1.0 + 0.1 * 0.95 * 0.55, abs=1e-3)


def test_custom_sampled_rejects_ragged_table(tmp_path):
    path = tmp_path / "bad.csv"
    with open(path, "w") as fh:
        fh.write("t,xi,D\n0,0,1\n0,1,1\n1,0,1\n")
    with pytest.raises(ConfigError):
        load_delay_table(path)


# --- control history -------------------------------------------------------

def make_history(dt=0.1, window=2.0, dim=2, n=25, fn=None):
    hist = ControlHistory(dt=dt, window=window, dim=dim)
    for k in range(n):
        t = k * dt
        hist.append(fn(t) if fn else np.array([t, -t]))
    return hist


def test_history_zero_past():
    hist = make_history()
    assert np.all(hist.lookup(-0.5) == 0.0)
    assert np.all(hist.lookup(0.0) == 0.0)


def test_history_exact_at_samples():
    hist = make_history()
    np.testing.assert_array_equal(hist.lookup(0.5), np.array([0.5, -0.5]))


def test_history_midpoint_average():
    hist = make_history()
    got = hist.lookup(0.55)
    np.testing.assert_allclose(got, [0.55, -0.55], atol=1e-15)


def test_history_out_of_window():
    hist = make_history(dt=0.1, window=0.5, n=30)
    with pytest.raises(OutOfWindowError):
        hist.lookup(0.2)   # head at 2.9, window keeps [2.4, 2.9]


def test_history_interpolation_second_order():
    """Halving dt shrinks the interpolation error of sin(s) by ~4x."""
    errs = []
    for dt in (0.02, 0.01):
        n = int(round(4.0 / dt)) + 1
        hist = ControlHistory(dt=dt, window=5.0, dim=1)
        for k in range(n):
            hist.append(np.array([np.sin(k * dt)]))
        s = np.linspace(0.5, 3.5, 301)
        vals = hist.lookup(s)[:, 0]
        errs.append(np.abs(vals - np.sin(s)).max())
    assert errs[0] / errs[1] > 3.0


def test_zero_past_contract(paper_delay):
    """Lookups through s = t - D(t, xi) vanish while t <= D0 - delta."""
    hist = make_history(dt=0.01, window=3.0, n=200, fn=lambda t: np.array([1.0, 1.0]))
    xs = np.linspace(0.0, 1.0, 51)
    for t in (0.0, 0.3, 0.7699):
        s = t - paper_delay.evaluate(t, xs)
        assert np.all(s <= 0.0)
        assert np.all(hist.lookup(s) == 0.0)
