import numpy as np
import pytest

from exceptions import ContractError, DimensionError
from numerics import (AdamW, OptimizerState, Tensor, adamw_step, backward, default_dtype, gelu,
                      gradient_check, im2col3x3, layer_norm, matmul, no_grad, relative_error,
                      rms_normalize, rope_rotate, softmax, vector_norm)


def test_matmul_hand_example():
    out = matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[5.0], [6.0]]))
    assert out.data.tolist() == [[17.0], [39.0]]


def test_matmul_identity_and_zero():
    m = Tensor(np.arange(9, dtype=np.float32).reshape(3, 3))
    assert np.array_equal(matmul(Tensor(np.eye(3, dtype=np.float32)), m).data, m.data)
    assert not matmul(Tensor(np.zeros((3, 3), np.float32)), m).data.any()


def test_matmul_shape_mismatch():
    with pytest.raises(DimensionError):
        matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
    with pytest.raises(DimensionError):
        matmul(Tensor(np.ones(3)), Tensor(np.ones((3, 1))))


def test_softmax_examples():
    assert softmax(Tensor([0.0, 0.0])).data == pytest.approx([0.5, 0.5])
    assert softmax(Tensor([1000.0, 1000.0])).data == pytest.approx([0.5, 0.5])
    assert softmax(Tensor(np.array([0.0, np.log(3.0)]))).data == pytest.approx([0.25, 0.75])


def test_softmax_mask_gives_exact_zero():
    out = softmax(Tensor([1.0, 2.0, 3.0]), mask=np.array([True, False, True]))
    assert out.data[1] == 0.0
    assert out.data.sum() == pytest.approx(1.0)


def test_backward_square():
    x = Tensor(3.0, requires_grad=True)
    backward(x * x)
    assert x.grad == pytest.approx(6.0)


def test_backward_needs_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ContractError):
        backward(x * 2.0)


def test_detached_tensor_gets_no_gradient():
    x = Tensor(2.0, requires_grad=True)
    y = x.detach()
    backward(x * y)
    assert y.grad is None
    assert x.grad == pytest.approx(2.0)


def test_shared_node_accumulates():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    y = x * 3.0
    backward((y + y * y).sum())
    assert x.grad == pytest.approx(3.0 + 2 * 9.0 * x.data)


def test_no_grad_records_nothing():
    x = Tensor(1.0, requires_grad=True)
    with no_grad():
        y = x * 2.0
    assert not y.requires_grad


def test_vector_norm_zero_gradient_at_origin():
    x = Tensor(np.zeros((2, 3)), requires_grad=True)
    backward(vector_norm(x).sum())
    assert not x.grad.any()


def test_rope_rotation_preserves_norm(rng):
    x = Tensor(rng.normal(size=(5, 8)))
    angles = rng.uniform(-3, 3, size=(5, 4))
    cos = np.repeat(np.cos(angles), 2, axis=-1)
    sin = np.repeat(np.sin(angles), 2, axis=-1)
    out = rope_rotate(x, cos, sin)
    assert np.linalg.norm(out.data, axis=-1) == pytest.approx(np.linalg.norm(x.data, axis=-1))


@pytest.mark.parametrize("op", ["gelu", "layer_norm", "rms", "softmax", "im2col", "rope", "matmul"])
def test_primitive_gradients_match_finite_differences(op, rng):
    with default_dtype(np.float64):
        a = Tensor(rng.normal(size=(2, 4, 4, 2)) if op == "im2col" else rng.normal(size=(3, 4)),
                   requires_grad=True, name="a")
        gamma = Tensor(rng.normal(size=4), requires_grad=True, name="gamma")
        beta = Tensor(rng.normal(size=4), requires_grad=True, name="beta")
        w = Tensor(rng.normal(size=(4, 5)), requires_grad=True, name="w")
        target = rng.normal(size=(3, 4))
        angles = rng.uniform(-3, 3, size=(3, 2))
        cos, sin = np.repeat(np.cos(angles), 2, -1), np.repeat(np.sin(angles), 2, -1)

        fns = {
            "gelu": (lambda: (gelu(a) * target).sum(), {"a": a}),
            "layer_norm": (lambda: (layer_norm(a, gamma, beta) * target).sum(),
                           {"a": a, "gamma": gamma, "beta": beta}),
            "rms": (lambda: (rms_normalize(a) * target).sum(), {"a": a}),
            "softmax": (lambda: (softmax(a, axis=-1) * target).sum(), {"a": a}),
            "im2col": (lambda: (im2col3x3(a) ** 2).sum(), {"a": a}),
            "rope": (lambda: (rope_rotate(a, cos, sin) * target).sum(), {"a": a}),
            "matmul": (lambda: (matmul(a, w) ** 2).mean(), {"a": a, "w": w}),
        }
        fn, params = fns[op]
        errors = gradient_check(fn, params, h=1e-6)
    assert max(errors.values()) < 1e-6


def test_relative_error_of_identical_arrays_is_zero():
    assert relative_error(np.ones(3), np.ones(3)) == 0.0


def test_adamw_zero_gradient_no_decay_leaves_params():
    p = Tensor(np.array([1.5, -2.0], np.float32), requires_grad=True)
    state = OptimizerState.for_params({"p": p}, lr=0.1)
    adamw_step({"p": p}, {"p": np.zeros(2, np.float32)}, state)
    assert p.data.tolist() == [1.5, -2.0]


def test_adamw_single_step_hand_computed():
    p = Tensor(np.array([0.0]), requires_grad=True)
    state = OptimizerState.for_params({"p": p}, lr=0.1, betas=(0.9, 0.999), eps=1e-8)
    adamw_step({"p": p}, {"p": np.array([1.0])}, state)
    assert p.data[0] == pytest.approx(-0.1, rel=1e-6)
    assert state.step == 1


def test_adamw_decoupled_decay_shrinks_params():
    p = Tensor(np.array([2.0]), requires_grad=True)
    state = OptimizerState.for_params({"p": p}, lr=0.1, weight_decay=0.5)
    adamw_step({"p": p}, {"p": np.array([0.0])}, state)
    assert p.data[0] == pytest.approx(2.0 - 0.1 * 0.5 * 2.0)


def test_adamw_shape_mismatch():
    p = Tensor(np.zeros(2), requires_grad=True)
    state = OptimizerState.for_params({"p": p})
    with pytest.raises(DimensionError):
        adamw_step({"p": p}, {"p": np.zeros(3)}, state)


def test_adamw_wrapper_minimizes_quadratic():
    x = Tensor(np.array([3.0, -4.0]), requires_grad=True)
    opt = AdamW({"x": x}, lr=0.1)
    for _ in range(300):
        opt.zero_grad()
        backward((x * x).sum())
        opt.step()
    assert np.abs(x.data).max() < 0.3
