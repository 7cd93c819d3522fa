"""Kernel lanes: compiled and numpy implementations must agree."""
import numpy as np
import pytest

from lnln.diffcore.kernels import BACKEND, available_backends, get_lane

HAVE_COMPILED = "compiled" in available_backends()
needs_compiled = pytest.mark.skipif(
    not HAVE_COMPILED, reason="compiled extension not built"
)


def test_backend_is_an_available_lane():
    assert BACKEND in available_backends()
    with pytest.raises(ValueError):
        get_lane("fortran")


def _rows(rng, dtype, rows=37, width=19):
    return rng.standard_normal((rows, width)).astype(dtype) * 3


@needs_compiled
@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_lanes_agree_elementwise(dtype):
    py, cc = get_lane("python"), get_lane("compiled")
    rng = np.random.default_rng(21)
    x = _rows(rng, dtype)
    g = _rows(rng, dtype)

    y_py, y_cc = py.relu_fwd(x), cc.relu_fwd(x)
    assert np.array_equal(y_py, y_cc)
    assert y_cc.dtype == dtype
    # relu backward is a pure bit-select, so exact equality is required
    assert np.array_equal(py.relu_bwd(g, y_py), cc.relu_bwd(g, y_cc))

    s = py.sigmoid_fwd(x)
    tol = 1e-6 if dtype == np.float32 else 1e-14
    assert np.allclose(py.sigmoid_bwd(g, s), cc.sigmoid_bwd(g, s),
                       rtol=tol, atol=tol)


@needs_compiled
@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_lanes_agree_rowwise(dtype):
    py, cc = get_lane("python"), get_lane("compiled")
    rng = np.random.default_rng(22)
    x = _rows(rng, dtype)
    g = _rows(rng, dtype)
    tol = 2e-5 if dtype == np.float32 else 1e-12

    y = py.softmax_fwd(x)
    assert np.allclose(py.softmax_bwd(g, y), cc.softmax_bwd(g, y),
                       rtol=tol, atol=tol)

    eps = 1e-5
    y_py, inv_py = py.layer_norm_fwd(x, eps)
    y_cc, inv_cc = cc.layer_norm_fwd(x, eps)
    assert np.allclose(y_py, y_cc, rtol=tol, atol=tol)
    assert np.allclose(inv_py, inv_cc, rtol=tol, atol=tol)
    assert np.allclose(py.layer_norm_bwd(g, y_py, inv_py),
                       cc.layer_norm_bwd(g, y_cc, inv_cc),
                       rtol=tol, atol=tol)


@needs_compiled
@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_lanes_agree_on_empty_input(dtype):
    py, cc = get_lane("python"), get_lane("compiled")
    x = np.empty(0, dtype=dtype)
    assert np.array_equal(py.relu_bwd(x, x), cc.relu_bwd(x, x))
    assert cc.relu_fwd(x).shape == (0,)


@needs_compiled
@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_lanes_agree_on_adamw(dtype):
    rng = np.random.default_rng(23)
    n = 257
    p0 = rng.standard_normal(n).astype(dtype)
    g = rng.standard_normal(n).astype(dtype)
    m0 = (0.1 * rng.standard_normal(n)).astype(dtype)
    v0 = np.abs(0.1 * rng.standard_normal(n)).astype(dtype)

    states = {}
    for lane_name in ("python", "compiled"):
        lane = get_lane(lane_name)
        p, m, v = p0.copy(), m0.copy(), v0.copy()
        for t in (1, 2, 3):
            lane.adamw_step(p, g, m, v, t, 1e-3, 0.9, 0.999, 1e-8, 0.01)
        states[lane_name] = (p, m, v)
    tol = 1e-6 if dtype == np.float32 else 1e-14
    for a, b in zip(states["python"], states["compiled"]):
        assert np.allclose(a, b, rtol=tol, atol=tol)


@pytest.mark.parametrize("lane_name", ["python", "compiled"])
def test_adamw_first_step_analytic(lane_name):
    if lane_name == "compiled" and not HAVE_COMPILED:
        pytest.skip("compiled extension not built")
    lane = get_lane(lane_name)
    lr, eps = 0.1, 1e-8
    p = np.array([1.0])
    g = np.array([1.0])
    m = np.zeros(1)
    v = np.zeros(1)
    lane.adamw_step(p, g, m, v, 1, lr, 0.9, 0.999, eps, 0.0)
    # bias correction makes the first step exactly lr / (1 + eps)
    assert p[0] == pytest.approx(1.0 - lr / (1.0 + eps), abs=1e-12)
    assert m[0] == pytest.approx(0.1)
    assert v[0] == pytest.approx(0.001)


@pytest.mark.parametrize("lane_name", ["python", "compiled"])
def test_adamw_decay_applies_before_moment_update(lane_name):
    if lane_name == "compiled" and not HAVE_COMPILED:
        pytest.skip("compiled extension not built")
    lane = get_lane(lane_name)
    lr, wd, eps = 0.1, 0.5, 1e-8
    p = np.array([2.0])
    g = np.array([1.0])
    m = np.zeros(1)
    v = np.zeros(1)
    lane.adamw_step(p, g, m, v, 1, lr, 0.9, 0.999, eps, wd)
    expected = 2.0 * (1.0 - lr * wd) - lr / (1.0 + eps)
    assert p[0] == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize("lane_name", ["python", "compiled"])
def test_adamw_zero_grad_zero_decay_is_identity(lane_name):
    if lane_name == "compiled" and not HAVE_COMPILED:
        pytest.skip("compiled extension not built")
    lane = get_lane(lane_name)
    p = np.array([1.5, -2.5])
    g = np.zeros(2)
    m = np.zeros(2)
    v = np.zeros(2)
    lane.adamw_step(p, g, m, v, 1, 0.1, 0.9, 0.999, 1e-8, 0.0)
    assert np.array_equal(p, np.array([1.5, -2.5]))
    assert np.array_equal(m, np.zeros(2))
    assert np.array_equal(v, np.zeros(2))
