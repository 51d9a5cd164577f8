import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sketchparam import autodiff as ad
from sketchparam.autodiff import (
    MissingGradientError,
    NonScalarLossError,
    ParameterStore,
    ShapeMismatchError,
    Tape,
    TapeConsumedError,
    Tensor,
    adam_step,
    backward,
    grad_check,
)

rng = np.random.default_rng(0)
A = rng.normal(0, 1, (4, 8, 8)).astype(np.float32)
B = rng.normal(0, 1, (4, 8, 8)).astype(np.float32)
C = rng.normal(0, 1, (8, 8)).astype(np.float32)


def _check(f, *arrays, tol=1e-2, max_coords=None):
    tensors = [Tensor(a, requires_grad=True) for a in arrays]
    report = grad_check(f, tensors, max_coords=max_coords)
    assert report.max_rel_error < tol, report
    return report


# ---------------------------------------------------------------------------
# gradient checks per op (finite-difference oracle)
# ---------------------------------------------------------------------------

def test_grad_add_broadcast():
    _check(lambda a, b: (a + b).sum(), A, C)


def test_grad_sub():
    _check(lambda a, b: (a - b).mean(), A, B)


def test_grad_mul():
    _check(lambda a, b: (a * b).sum(), A, C)


def test_grad_neg():
    _check(lambda a: (-a).sum(), A)


def test_grad_scalar_ops():
    _check(lambda a: ((a * 3.0) + 1.5).mean(), A)


def test_grad_matmul():
    _check(lambda a, b: ad.matmul(a, b).sum(), A, C)


def test_grad_matmul_batched():
    _check(lambda a, b: ad.matmul(a, b).mean(), A, B)


def test_grad_reshape_transpose():
    _check(lambda a: ad.mul(ad.reshape(a, (8, 32)), 2.0).sum(), A)
    _check(lambda a: ad.mul(ad.transpose(a, (2, 0, 1)), 0.5).sum(), A)


def test_grad_concat():
    _check(lambda a, b: ad.mul(ad.concat([a, b], axis=1), 1.5).mean(), A, B)


def test_grad_slice():
    _check(lambda a: a[1:3, :, 2:5].sum(), A)


def test_grad_softmax():
    _check(lambda a: ad.mul(ad.softmax(a), C).sum(), A)


def test_grad_sigmoid():
    _check(lambda a: ad.sigmoid(a).mean(), A)


def test_grad_gelu():
    _check(lambda a: ad.gelu(a).mean(), A)


def test_grad_log():
    _check(lambda a: ad.log(a).mean(), np.abs(A) + 0.5)


def test_grad_clip():
    safe = A.copy()
    safe[np.abs(np.abs(safe) - 0.5) < 0.01] += 0.05  # stay off the kinks
    _check(lambda a: ad.clip(a, -0.5, 0.5).sum(), safe)


def test_grad_layer_norm():
    gain = np.ones(8, dtype=np.float32)
    bias = np.zeros(8, dtype=np.float32)
    _check(lambda x, g, b: ad.mul(ad.layer_norm(x, g, b), C).sum(), A, gain, bias)


def test_grad_conv2d():
    x = rng.normal(0, 1, (2, 3, 8, 8)).astype(np.float32)
    w = rng.normal(0, 0.5, (4, 3, 3, 3)).astype(np.float32)
    b = rng.normal(0, 0.5, 4).astype(np.float32)
    _check(lambda x_, w_, b_: ad.conv2d(x_, w_, b_).mean(), x, w, b)


def test_grad_avgpool2():
    _check(lambda a: ad.mul(ad.avgpool2(a), 3.0).sum(), A)


def test_grad_reductions():
    _check(lambda a: a.sum(), A)
    _check(lambda a: a.mean(), A)
    _check(lambda a, b: ad.mse(a, b), A, B)


def test_grad_cross_entropy():
    probs = rng.dirichlet(np.ones(8), size=(4,)).astype(np.float32)
    target = np.eye(8, dtype=np.float32)[rng.integers(0, 8, 4)]
    _check(lambda p: ad.cross_entropy(p, target), probs)


def test_grad_check_constant_and_linear():
    const = grad_check(lambda a: ad.mul(a, 0.0).sum(),
                       [Tensor(A, requires_grad=True)])
    assert const.max_rel_error < 1e-6
    linear = grad_check(lambda a: ad.mul(a, C[None]).sum(),
                        [Tensor(A, requires_grad=True)])
    assert linear.max_rel_error < 1e-3  # float32 forward, exact analytic


# ---------------------------------------------------------------------------
# forward values
# ---------------------------------------------------------------------------

@given(st.lists(st.floats(min_value=-20, max_value=20), min_size=2, max_size=16))
def test_softmax_rows_sum_to_one(vals):
    out = ad.softmax(Tensor(np.array(vals, dtype=np.float32))).data
    assert abs(out.sum() - 1.0) < 1e-6
    assert np.all(out >= 0)


def test_matmul_identity():
    eye = np.eye(8, dtype=np.float32)
    assert np.array_equal(ad.matmul(Tensor(eye), Tensor(C)).data, C)


def test_matmul_shape_errors():
    with pytest.raises(ShapeMismatchError):
        ad.matmul(Tensor(np.zeros((3, 4))), Tensor(np.zeros((5, 3))))
    with pytest.raises(ShapeMismatchError):
        ad.matmul(Tensor(np.zeros(4)), Tensor(np.zeros((4, 2))))


def test_broadcast_shape_error_names_shapes():
    with pytest.raises(ShapeMismatchError, match=r"\(3, 4\).*\(2, 5\)"):
        ad.add(Tensor(np.zeros((3, 4))), Tensor(np.zeros((2, 5))))


def test_forward_determinism():
    x = Tensor(A)
    w = Tensor(C)
    one = ad.matmul(ad.gelu(x), w).data
    two = ad.matmul(ad.gelu(Tensor(A.copy())), Tensor(C.copy())).data
    assert np.array_equal(one, two)


# ---------------------------------------------------------------------------
# backward contracts
# ---------------------------------------------------------------------------

def test_backward_sum_gives_ones():
    p = Tensor(np.ones((3, 3)), requires_grad=True)
    with Tape():
        loss = p.sum()
    backward(loss)
    assert np.array_equal(p.grad, np.ones((3, 3), np.float32))


def test_backward_unreachable_param_zero():
    p = Tensor(np.ones((3, 3)), requires_grad=True)
    q = Tensor(np.ones(4), requires_grad=True)
    with Tape():
        loss = p.mean()
    backward(loss)
    assert np.array_equal(q.grad, np.zeros(4, np.float32))


def test_backward_twice_errors():
    p = Tensor(np.ones(3), requires_grad=True)
    with Tape():
        loss = p.sum()
    backward(loss)
    with pytest.raises(TapeConsumedError):
        backward(loss)


def test_backward_non_scalar():
    p = Tensor(np.ones(3), requires_grad=True)
    with Tape():
        out = p * 2.0
    with pytest.raises(NonScalarLossError):
        backward(out)


def test_backward_requires_tape():
    p = Tensor(np.ones(3), requires_grad=True)
    loss = p.sum()  # no tape active
    with pytest.raises(RuntimeError):
        backward(loss)


def test_tapes_do_not_nest():
    with Tape():
        with pytest.raises(RuntimeError):
            with Tape():
                pass


def test_repeated_input_accumulates():
    p = Tensor(np.array([3.0]), requires_grad=True)
    with Tape():
        loss = (p * p).sum()
    backward(loss)
    assert np.allclose(p.grad, [6.0])


def test_frozen_params_skip_gradients_but_pass_through():
    w = Tensor(C, requires_grad=True)
    w.requires_grad = False
    w.grad = None
    x = Tensor(A[0], requires_grad=True)
    with Tape():
        loss = ad.matmul(x, w).sum()
    backward(loss)
    assert w.grad is None
    assert np.abs(x.grad).max() > 0


def test_inference_outside_tape_not_tracked():
    p = Tensor(np.ones(3), requires_grad=True)
    out = p * 2.0
    assert out.requires_grad is False
    assert out.tape is None


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

def test_adam_descends_quadratic():
    store = ParameterStore()
    x = store.add("x", [1.0])
    with Tape():
        loss = (x * x).sum()
    backward(loss)
    adam_step(store, lr=0.1)
    assert x.data[0] < 1.0


def test_adam_zero_gradient_fresh_store():
    store = ParameterStore()
    y = store.add("y", [2.0])
    adam_step(store, lr=0.1)  # zero gradient buffer
    assert y.data[0] == 2.0
    assert store.step_count("y") == 1


def test_adam_converges_2d_quadratic():
    store = ParameterStore()
    z = store.add("z", [3.0, -2.0])
    hess = Tensor(np.diag([1.0, 10.0]).astype(np.float32))
    grad_norm = None
    for _ in range(500):
        with Tape():
            v = ad.matmul(ad.reshape(z, (1, 2)), hess)
            loss = ad.mul(ad.matmul(v, ad.reshape(z, (2, 1))), 0.5).sum()
        backward(loss)
        grad_norm = float(np.abs(z.grad).max())
        adam_step(store, lr=0.05)
    assert grad_norm < 1e-3


def test_adam_clears_gradients():
    store = ParameterStore()
    x = store.add("x", [1.0, 2.0])
    with Tape():
        loss = (x * x).sum()
    backward(loss)
    adam_step(store, lr=0.01)
    assert np.array_equal(x.grad, np.zeros(2, np.float32))


def test_adam_missing_gradient():
    store = ParameterStore()
    x = store.add("x", [1.0])
    store.freeze()
    with pytest.raises(MissingGradientError, match="x"):
        adam_step(store, lr=0.01)


def test_store_duplicate_name():
    store = ParameterStore()
    store.add("w", [1.0])
    with pytest.raises(ValueError):
        store.add("w", [2.0])


def test_store_state_bytes_change_detection():
    store = ParameterStore()
    x = store.add("x", [1.0, 2.0])
    before = store.state_bytes()
    assert store.state_bytes() == before
    x.data[0] = 5.0
    assert store.state_bytes() != before
