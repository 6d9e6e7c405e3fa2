import numpy as np
import pytest

from stylerecon import optim
from stylerecon.errors import NumericalFailure, ParameterError


def quadratic(target):
    def f(x):
        r = x - target
        return float(r @ r), 2.0 * r, {}

    return f


def test_converges_on_quadratic():
    target = np.array([1.0, -2.0, 0.5, 3.0])
    cfg = optim.AdamConfig(step=0.1, iters=600, restarts=1, seed=0)
    run = optim.adam_minimize(quadratic(target), np.zeros(4), cfg)
    assert np.linalg.norm(run.best_x - target) < 1e-6
    assert run.best_value < 1e-10


def test_trace_length_is_iters_plus_one():
    cfg = optim.AdamConfig(step=0.1, iters=37, restarts=1)
    run = optim.adam_minimize(quadratic(np.ones(3)), np.zeros(3), cfg)
    assert len(run.trace) == 38
    assert len(run.aux_trace) == 38


def test_zero_iters_returns_start():
    x0 = np.array([4.0, 5.0])
    cfg = optim.AdamConfig(step=0.1, iters=0, restarts=1)
    run = optim.adam_minimize(quadratic(np.zeros(2)), x0, cfg)
    np.testing.assert_array_equal(run.final_x, x0)
    np.testing.assert_array_equal(run.best_x, x0)
    assert run.trace == [float(x0 @ x0)]


def test_determinism():
    cfg = optim.AdamConfig(step=0.05, iters=100, restarts=1)
    a = optim.adam_minimize(quadratic(np.ones(5)), np.full(5, -1.0), cfg)
    b = optim.adam_minimize(quadratic(np.ones(5)), np.full(5, -1.0), cfg)
    np.testing.assert_array_equal(a.final_x, b.final_x)
    assert a.trace == b.trace


def test_free_mask_keeps_constrained_coordinates_bitwise():
    x0 = np.array([0.123456, 7.0, -3.0, 0.5])
    mask = np.array([False, True, True, False])
    cfg = optim.AdamConfig(step=0.3, iters=500, restarts=1)
    run = optim.adam_minimize(quadratic(np.zeros(4)), x0, cfg, free_mask=mask)
    assert run.final_x[0] == x0[0] and run.final_x[3] == x0[3]
    assert abs(run.best_x[1]) < 1e-5 and abs(run.best_x[2]) < 1e-5


def test_free_mask_equals_projected_reference():
    # Reference: full-vector Adam that projects by resetting constrained
    # coordinates after each step and zeroing their moments.
    target = np.array([2.0, -1.0, 0.3, 1.4, -0.7])
    x0 = np.array([0.1, 0.2, 0.3, 0.4, 0.5])
    mask = np.array([False, True, True, True, False])
    cfg = optim.AdamConfig(step=0.07, iters=50, restarts=1)

    iterates = []
    optim.adam_minimize(
        quadratic(target), x0, cfg, free_mask=mask,
        iterate_hook=lambda t, x: iterates.append(x.copy()),
    )

    f = quadratic(target)
    x = x0.copy()
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    ref = [x.copy()]
    for t in range(cfg.iters):
        _, g, _ = f(x)
        m = cfg.beta1 * m + (1 - cfg.beta1) * g
        v = cfg.beta2 * v + (1 - cfg.beta2) * g * g
        m[~mask] = 0.0
        v[~mask] = 0.0
        m_hat = m / (1 - cfg.beta1 ** (t + 1))
        v_hat = v / (1 - cfg.beta2 ** (t + 1))
        x = x - cfg.step * optim.cosine_step_scale(t, cfg.iters) * m_hat / (np.sqrt(v_hat) + cfg.eps)
        x[~mask] = x0[~mask]
        ref.append(x.copy())

    assert len(iterates) == len(ref)
    for a, b in zip(iterates, ref):
        np.testing.assert_allclose(a, b, atol=1e-12)


def test_nonfinite_objective_raises_with_trace():
    def into_nan(x):
        with np.errstate(invalid="ignore"):
            val = float(np.sqrt(x[0]))  # NaN once Adam steps x below zero
        grad = np.array([0.5 / val if val > 0 else 0.0])
        return val, grad, {}

    cfg = optim.AdamConfig(step=10.0, iters=500, restarts=1)
    with pytest.raises(NumericalFailure) as excinfo:
        optim.adam_minimize(into_nan, np.array([1.0]), cfg)
    assert len(excinfo.value.trace) >= 1


def test_config_validation():
    with pytest.raises(ParameterError):
        optim.AdamConfig(step=0.0)
    with pytest.raises(ParameterError):
        optim.AdamConfig(beta1=1.0)
    with pytest.raises(ParameterError):
        optim.AdamConfig(iters=-1)
    with pytest.raises(ParameterError):
        optim.AdamConfig(restarts=0)


def test_aux_trace_recorded():
    def f(x):
        return float(x @ x), 2 * x, {"fid": float(x @ x)}

    cfg = optim.AdamConfig(step=0.1, iters=5, restarts=1)
    run = optim.adam_minimize(f, np.ones(2), cfg)
    assert all("fid" in a for a in run.aux_trace)
