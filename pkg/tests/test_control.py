import numpy as np
import pytest

from rdpredict.control import (PredictorState, TransitionSignal, artstein_state,
                               predictor_output)
from rdpredict.delayfield import ControlHistory
from rdpredict.design import ControllerDesign
from rdpredict.errors import StepSizeError
from rdpredict.spectral import project, synthesize


def scalar_design(lam=0.317, D0=1.0, pole=-0.3, t0=0.2):
    lam_v = np.array([lam])
    Acl = np.array([[pole]])
    K = np.array([[np.exp(D0 * lam) * (pole - lam)]])
    return ControllerDesign(N=1, lam=lam_v, gamma=0.342, D0=D0,
                            poles=np.array([pole]), Acl=Acl, K=K, t0=t0)


def constant_history(dt, horizon, value, dim=1):
    hist = ControlHistory(dt=dt, window=horizon + 1.0, dim=dim)
    n = int(round(horizon / dt))
    for _ in range(n + 1):
        hist.append(np.full(dim, value))
    return hist


def test_transition_signal_values():
    phi = TransitionSignal(t0=0.2)
    assert phi(-1.0) == 0.0
    assert phi(0.1) == pytest.approx(0.5)
    assert phi(0.2) == 1.0
    assert phi(5.0) == 1.0


def test_transition_signal_validation():
    with pytest.raises(ValueError):
        TransitionSignal(t0=0.0)
    with pytest.raises(ValueError):
        TransitionSignal(t0=0.2, shape="smoothstep")


def test_predictor_zero_gain():
    design = scalar_design()
    design.K[:] = 0.0
    hist = constant_history(0.01, 3.0, 1.0)
    state = PredictorState(design, hist)
    assert predictor_output(state, 3.0, np.array([2.0])) == pytest.approx(0.0)


def test_predictor_zero_before_start():
    design = scalar_design()
    hist = constant_history(0.01, 3.0, 1.0)
    state = PredictorState(design, hist)
    assert np.all(predictor_output(state, -0.5, np.array([2.0])) == 0.0)


def test_predictor_misaligned_step_rejected():
    design = scalar_design(D0=1.0)
    hist = ControlHistory(dt=0.3, window=2.0, dim=1)
    hist.append(np.zeros(1))
    with pytest.raises(StepSizeError):
        PredictorState(design, hist)


def closed_form_integral(c, lam, D0):
    return c * (1.0 - np.exp(-lam * D0)) / lam


@pytest.mark.parametrize("rule,order", [("left_riemann", 1), ("trapezoid", 2)])
def test_predictor_constant_history_convergence(rule, order):
    """Discrete integral vs the closed form: O(h) left rule, O(h^2) trapezoid."""
    lam, D0, c = 0.317, 1.0, 0.8
    design = scalar_design(lam=lam, D0=D0)
    exact = closed_form_integral(c, lam, D0)
    errs = []
    for h in (1e-2, 5e-3, 2.5e-3):
        hist = constant_history(h, 3.0, c)
        state = PredictorState(design, hist, rule=rule)
        x = np.array([0.4])
        # the artstein integral is exactly the discretized kernel quadrature
        integral = artstein_state(state, 3.0, x)[0] - x[0]
        errs.append(abs(integral - exact))
    ratio1 = errs[0] / errs[1]
    ratio2 = errs[1] / errs[2]
    expected = 2.0 ** order
    assert ratio1 > expected * 0.85
    assert ratio2 > expected * 0.85


def test_explicitness_left_rule_ignores_head():
    """The left rule must not read the newest sample."""
    design = scalar_design()
    h = 0.01
    hist_a = constant_history(h, 2.0, 0.5)
    hist_b = constant_history(h, 2.0 - h, 0.5)
    hist_b.append(np.array([99.0]))   # corrupt only the head sample
    state_a = PredictorState(design, hist_a)
    state_b = PredictorState(design, hist_b)
    x = np.array([1.0])
    assert predictor_output(state_a, 2.0, x) == pytest.approx(
        predictor_output(state_b, 2.0, x))


def test_artstein_zero_history_returns_state():
    design = scalar_design()
    hist = constant_history(0.01, 3.0, 0.0)
    state = PredictorState(design, hist)
    x = np.array([0.7])
    assert artstein_state(state, 3.0, x) == pytest.approx(x)


def test_artstein_initial_condition():
    """At t = 0 the transformed state equals the modal state."""
    design = scalar_design()
    hist = ControlHistory(dt=0.01, window=2.0, dim=1)
    hist.append(np.zeros(1))
    state = PredictorState(design, hist)
    x0 = np.array([-0.3])
    assert artstein_state(state, 0.0, x0) == pytest.approx(x0)


def test_control_norm_identity(basis20, design20):
    """The synthesized input has weighted norm equal to ||w||."""
    rng = np.random.default_rng(3)
    for _ in range(5):
        w = rng.normal(size=design20.N)
        u = synthesize(w, basis20)
        assert basis20.norm(u) == pytest.approx(np.linalg.norm(w), abs=1e-8)
