import numpy as np
import pytest

from ambipose.autodiff import (
    OptimizerConfig,
    ParamStore,
    Tensor,
    adamw_step,
    finite_difference_check,
    init_mlp,
    layer_names,
    mlp_forward,
    value_and_grad,
)
from ambipose.errors import NonFiniteValue, ShapeMismatch


def store(**arrays):
    p = ParamStore()
    for k, v in arrays.items():
        p.add(k, np.asarray(v, dtype=np.float64))
    return p


def test_square_value_and_grad():
    p = store(x=3.0)
    loss, g = value_and_grad(lambda t: t["x"].square(), p)
    assert loss == 9.0
    assert g["x"] == 6.0


def test_linear_matmul_grad():
    p = store(W=np.eye(2))
    v = np.ones(2)
    _, g = value_and_grad(lambda t: (t["W"] @ Tensor(v).reshape(2, 1)).sum(), p)
    np.testing.assert_array_equal(g["W"], [[1, 1], [1, 1]])


def test_nonfinite_detected():
    p = store(x=-1.0)
    with pytest.raises(NonFiniteValue):
        value_and_grad(lambda t: t["x"].log(), p)


def test_unused_param_has_zero_grad():
    p = store(x=2.0, y=np.ones(3))
    _, g = value_and_grad(lambda t: t["x"] * 2.0, p)
    np.testing.assert_array_equal(g["y"], np.zeros(3))


OPS = {
    "add_broadcast": lambda t: (t["A"] + t["b"]).square().sum(),
    "sub_mul": lambda t: ((t["A"] - t["b"]) * t["A"]).sum(),
    "matmul": lambda t: (t["A"] @ t["B"]).square().mean(),
    "relu": lambda t: (t["A"] @ t["B"]).relu().sum(),
    "exp_log": lambda t: (t["A"].exp() + 1.0).log().sum(),
    "norm": lambda t: t["A"].norm(axis=-1).sum(),
    "frobenius": lambda t: t["A"].norm(axis=(0, 1)),
    "normalize": lambda t: (t["A"].normalize() * t["b"]).sum(),
    "cross": lambda t: (t["A"][:, :3].cross(t["A"][:, 1:]) * t["b"][:3]).sum(),
    "clamp": lambda t: (t["A"].clamp(-0.5, 0.5) * t["A"]).sum(),
    "mean_axis": lambda t: t["A"].mean(axis=0).square().sum(),
    "reshape_getitem": lambda t: t["A"].reshape(-1)[2:7].square().sum(),
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_ops_match_finite_differences(name):
    rng = np.random.default_rng(7)
    A = rng.uniform(-1.5, 1.5, (3, 4))
    # keep entries away from kinks of relu / clamp
    A[np.abs(A) < 0.05] += 0.2
    A[np.abs(np.abs(A) - 0.5) < 0.05] += 0.2
    p = store(A=A, b=rng.standard_normal(4), B=rng.standard_normal((4, 2)))
    assert finite_difference_check(OPS[name], p) <= 1e-6


def test_gradcheck_linear_is_exact():
    p = store(w=np.array([0.3, -1.2, 2.0]))
    c = np.array([1.0, 2.0, 3.0])
    assert finite_difference_check(lambda t: (t["w"] * c).sum(), p) <= 1e-10


def test_gradcheck_relu_away_from_kink():
    p = store(w=np.array([0.7, -0.4, 1.3]))
    step = 1e-5
    assert np.all(np.abs(p["w"]) > 10 * step)
    assert finite_difference_check(lambda t: (t["w"].relu() * 3.0).sum(), p, step=step) <= 1e-6


def test_gradcheck_detects_corruption():
    p = store(w=np.array([0.5, 1.5]))
    f = lambda t: t["w"].square().sum()
    _, g = value_and_grad(f, p)
    bad = {k: 2 * v for k, v in g.items()}
    assert finite_difference_check(f, p, analytic=bad) == pytest.approx(0.5, abs=1e-6)


def test_gradcheck_restores_params():
    p = store(w=np.array([0.5, 1.5]))
    finite_difference_check(lambda t: t["w"].square().sum(), p)
    np.testing.assert_array_equal(p["w"], [0.5, 1.5])


# ------------------------------------------------------------------ AdamW


def test_adamw_first_step_closed_form():
    p = store(theta=np.array([1.0]))
    adamw_step(p, {"theta": np.array([0.5])}, OptimizerConfig(lr=0.1, weight_decay=0.0))
    assert p["theta"][0] == pytest.approx(1.0 - 0.1 * 0.5 / (0.5 + 1e-8), abs=1e-12)
    assert p.step == 1


def test_adamw_zero_grad_no_decay():
    p = store(theta=np.array([[1.0, -2.0]]))
    adamw_step(p, {"theta": np.zeros((1, 2))}, OptimizerConfig(lr=0.1, weight_decay=0.0))
    np.testing.assert_array_equal(p["theta"], [[1.0, -2.0]])


def test_adamw_pure_decay():
    p = ParamStore()
    p.add("theta", np.array([[1.0]]))
    adamw_step(p, {"theta": np.zeros((1, 1))}, OptimizerConfig(lr=0.1, weight_decay=0.01))
    assert p["theta"][0, 0] == pytest.approx(0.999, abs=1e-15)


def test_adamw_bias_not_decayed():
    p = ParamStore()
    p.add("layer.bias", np.array([1.0]))
    adamw_step(p, {"layer.bias": np.zeros(1)}, OptimizerConfig(lr=0.1, weight_decay=0.5))
    assert p["layer.bias"][0] == 1.0


def test_adamw_zero_betas_is_normalized_descent(rng):
    g = rng.standard_normal(5)
    theta0 = rng.standard_normal(5)
    p = store(theta=theta0.copy())
    cfg = OptimizerConfig(lr=0.05, weight_decay=0.0, beta1=0.0, beta2=0.0)
    for _ in range(3):
        before = p["theta"].copy()
        adamw_step(p, {"theta": g}, cfg)
        np.testing.assert_allclose(p["theta"] - before, -0.05 * g / (np.sqrt(g * g) + 1e-8), atol=1e-15)


def test_adamw_rejects_nonfinite():
    p = store(theta=np.array([1.0]))
    with pytest.raises(NonFiniteValue):
        adamw_step(p, {"theta": np.array([np.nan])}, OptimizerConfig())


@pytest.mark.parametrize("kw", [dict(lr=0), dict(beta1=1.0), dict(eps=-1)])
def test_optimizer_config_validation(kw):
    with pytest.raises(ValueError):
        OptimizerConfig(**kw)


# -------------------------------------------------------------------- MLP


def test_mlp_zero_weights():
    p = ParamStore()
    init_mlp(p, "net", [3, 5, 2], np.random.default_rng(0), np.float64)
    for k in p:
        p[k] = np.zeros_like(p[k])
    out = mlp_forward(p.constants(), layer_names(p, "net"), np.ones((4, 3)))
    np.testing.assert_array_equal(out.data, np.zeros((4, 2)))


def test_mlp_identity_layer():
    p = store(**{"l.0.weight": np.eye(3), "l.0.bias": np.zeros(3)})
    x = np.array([[1.0, -2.0, 3.0]])
    np.testing.assert_array_equal(mlp_forward(p.constants(), ["l.0"], x).data, x)


def test_mlp_matches_matrix_oracle(rng):
    p = ParamStore()
    init_mlp(p, "net", [4, 6, 3], rng, np.float64)
    p["net.0.bias"] = rng.standard_normal(6)
    p["net.1.bias"] = rng.standard_normal(3)
    x = rng.standard_normal((5, 4))
    h = np.maximum(x @ p["net.0.weight"] + p["net.0.bias"], 0)
    expected = h @ p["net.1.weight"] + p["net.1.bias"]
    out = mlp_forward(p.constants(), layer_names(p, "net"), x).data
    np.testing.assert_allclose(out, expected, atol=1e-12)


def test_mlp_shape_mismatch():
    p = ParamStore()
    init_mlp(p, "net", [4, 2], np.random.default_rng(0), np.float64)
    with pytest.raises(ShapeMismatch):
        mlp_forward(p.constants(), ["net.0"], np.ones((1, 3)))


def test_glorot_bounds():
    p = ParamStore()
    init_mlp(p, "net", [100, 50], np.random.default_rng(0))
    assert np.abs(p["net.0.weight"]).max() <= np.sqrt(6 / 150)
    assert p["net.0.weight"].dtype == np.float32
