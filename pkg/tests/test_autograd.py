import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from promptseg import autograd as ag
from promptseg.autograd import Tensor
from promptseg.optim import AdamW

from helpers import check_grad, finite_diff_grad, rel_err


@pytest.fixture(autouse=True)
def f64():
    # gradient verification runs the same ops in 64-bit to keep FD noise
    # below the 1e-3 tolerance; the artifact default stays float32
    with ag.default_dtype(np.float64):
        yield


def test_default_dtype_is_float32():
    with ag.default_dtype(np.float32):
        t = Tensor([1.0, 2.0])
    assert t.data.dtype == np.float32


def test_matmul_identity():
    out = Tensor([[1.0, 0.0], [0.0, 1.0]]) @ Tensor([[3.0], [4.0]])
    assert np.allclose(out.data, [[3.0], [4.0]])


def test_matmul_1x1_grads():
    a = Tensor([[2.0]], requires_grad=True)
    b = Tensor([[3.0]], requires_grad=True)
    out = a @ b
    assert out.data[0, 0] == 6.0
    out.sum().backward()
    assert a.grad[0, 0] == 3.0
    assert b.grad[0, 0] == 2.0


def test_matmul_shape_mismatch():
    with pytest.raises(ValueError):
        Tensor(np.ones((2, 3))) @ Tensor(np.ones((2, 3)))


def test_matmul_grad_fd(rng):
    check_grad(ag.matmul, [(4, 5), (5, 3)], rng)


def test_elementwise_trivia():
    assert ag.sigmoid(Tensor(0.0)).item() == pytest.approx(0.5)
    s = ag.sum_over(Tensor(np.ones((3, 4))), axis=1)
    assert np.allclose(s.data, [4.0, 4.0, 4.0])


def test_gelu_grad_at_07():
    x = Tensor(np.array(0.7), requires_grad=True)
    ag.gelu(x).backward()
    fd = finite_diff_grad(lambda v: float(ag.gelu(Tensor(v)).data), np.array(0.7))
    assert rel_err(x.grad, fd) < 1e-3


OP_CASES = [
    ("add", lambda a, b: ag.add(a, b), [(3, 4), (3, 4)], {}),
    ("add_broadcast", lambda a, b: ag.add(a, b), [(3, 4), (4,)], {}),
    ("sub", lambda a, b: ag.sub(a, b), [(2, 5), (2, 5)], {}),
    ("mul", lambda a, b: ag.mul(a, b), [(3, 4), (3, 4)], {}),
    ("mul_broadcast", lambda a, b: ag.mul(a, b), [(2, 3, 4), (4,)], {}),
    ("div", lambda a, b: ag.div(a, b), [(3, 4), (3, 4)], {"positive": True}),
    ("scale", lambda a: ag.scale(a, -2.5), [(3, 4)], {}),
    ("matmul", ag.matmul, [(4, 5), (5, 3)], {}),
    ("pow", lambda a: ag.pow_(a, 3.0), [(3, 3)], {"positive": True}),
    ("exp", ag.exp, [(3, 4)], {}),
    ("log", ag.log, [(3, 4)], {"positive": True}),
    ("sqrt", ag.sqrt, [(3, 4)], {"positive": True}),
    ("sigmoid", ag.sigmoid, [(3, 4)], {}),
    ("softplus", ag.softplus, [(3, 4)], {}),
    ("relu", ag.relu, [(3, 4)], {"positive": True}),
    ("gelu", ag.gelu, [(3, 4)], {}),
    ("softmax", lambda a: ag.softmax(a, axis=-1), [(3, 5)], {}),
    ("sum", lambda a: ag.sum_over(a, axis=1), [(3, 4)], {}),
    ("sum_all", lambda a: ag.sum_over(a), [(3, 4)], {}),
    ("mean", lambda a: ag.mean_over(a, axis=0), [(3, 4)], {}),
    ("max", lambda a: ag.max_over(a, axis=1), [(3, 4)], {}),
    ("concat", lambda a, b: ag.concat([a, b], axis=1), [(3, 2), (3, 4)], {}),
    ("stack", lambda a, b: ag.stack([a, b], axis=0), [(3,), (3,)], {}),
    ("slice", lambda a: a[1:3, :2], [(4, 5)], {}),
    ("reshape", lambda a: ag.reshape(a, (6, 2)), [(3, 4)], {}),
    ("transpose", lambda a: ag.transpose(a), [(3, 4)], {}),
    ("broadcast_to", lambda a: ag.broadcast_to(a, (5, 3, 4)), [(3, 4)], {}),
]


@pytest.mark.parametrize("name,op,shapes,kw", OP_CASES, ids=[c[0] for c in OP_CASES])
def test_registered_op_gradients(name, op, shapes, kw, rng):
    check_grad(op, shapes, rng, **kw)


def test_layernorm_grad_fd(rng):
    check_grad(lambda x, g, b: ag.layernorm(x, g, b), [(4, 6), (6,), (6,)], rng)


def test_take_rows_grad_fd(rng):
    idx = np.array([0, 2, 2, 1])
    check_grad(lambda a: ag.take_rows(a, idx), [(3, 4)], rng)


def test_weighted_gather_grad_fd(rng):
    idx = rng.integers(0, 5, size=(6, 3))
    w = rng.random((6, 3))
    check_grad(lambda f: ag.weighted_gather(f, idx, w), [(5, 4)], rng)


def test_softmax_symmetry_and_stability():
    out = ag.softmax(Tensor([0.0, 0.0, 0.0]), axis=0)
    assert np.allclose(out.data, 1.0 / 3.0)
    out = ag.softmax(Tensor([1000.0, 0.0]), axis=0)
    assert np.isfinite(out.data).all()
    assert np.allclose(out.data, [1.0, 0.0])


@given(st.lists(st.floats(-50, 50), min_size=2, max_size=8))
def test_softmax_rows_sum_to_one(vals):
    out = ag.softmax(Tensor(np.array(vals)), axis=0)
    assert abs(out.data.sum() - 1.0) < 1e-6
    assert (out.data >= 0).all()


def test_softmax_jacobian_fd(rng):
    x = rng.standard_normal((2, 5))
    for r in range(2):
        for c in range(5):
            t = Tensor(x, requires_grad=True)
            ag.softmax(t, axis=1)[r, c].backward()
            fd = finite_diff_grad(lambda v: float(ag.softmax(Tensor(v), axis=1).data[r, c]), x)
            assert rel_err(t.grad, fd, floor=1e-4) < 1e-3


def test_layernorm_constant_row_is_zero():
    x = Tensor(np.full((2, 5), 3.7))
    out = ag.layernorm(x, Tensor(np.ones(5)), Tensor(np.zeros(5)))
    assert np.allclose(out.data, 0.0, atol=1e-6)


def test_layernorm_mean_equals_bias(rng):
    x = Tensor(rng.standard_normal((6, 8)))
    bias = rng.standard_normal(8)
    out = ag.layernorm(x, Tensor(np.ones(8)), Tensor(bias))
    assert np.abs(out.data.mean(axis=-1) - bias.mean()).max() < 1e-5


def test_backward_linear_leaf():
    w = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    x = np.array([4.0, 5.0, 6.0])
    loss = ag.sum_over(w * Tensor(x))
    loss.backward()
    assert np.allclose(w.grad, x)


def test_backward_requires_scalar():
    t = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError):
        t.backward()


def test_backward_zero_loss_constant_graph():
    w = Tensor(np.ones(3), requires_grad=True)
    loss = ag.sum_over(w * Tensor(np.zeros(3)))
    loss.backward()
    assert loss.item() == 0.0
    assert np.allclose(w.grad, 0.0)


def test_backward_two_layer_mlp_fd(rng):
    x = rng.standard_normal((4, 3))
    w1 = rng.standard_normal((3, 5))
    w2 = rng.standard_normal((5, 2))

    def forward(w1_a, w2_a):
        h = ag.gelu(Tensor(x) @ w1_a)
        return ag.sum_over(h @ w2_a)

    t1, t2 = Tensor(w1, requires_grad=True), Tensor(w2, requires_grad=True)
    forward(t1, t2).backward()
    fd1 = finite_diff_grad(lambda v: forward(Tensor(v), Tensor(w2)).item(), w1)
    fd2 = finite_diff_grad(lambda v: forward(Tensor(w1), Tensor(v)).item(), w2)
    assert rel_err(t1.grad, fd1) < 1e-3
    assert rel_err(t2.grad, fd2) < 1e-3


def test_backward_accumulates_and_visits_once():
    # diamond: y = x*x + x*x reuses the same intermediate node twice
    x = Tensor(np.array(3.0), requires_grad=True)
    sq = x * x
    calls = []
    orig = sq._bwd

    def counting(g):
        calls.append(1)
        orig(g)

    sq._bwd = counting
    loss = sq + sq
    loss.backward()
    assert len(calls) == 1
    assert x.grad == pytest.approx(12.0)
    loss.backward()  # second call accumulates
    assert x.grad == pytest.approx(24.0)


def test_no_grad_builds_no_graph():
    w = Tensor(np.ones(3), requires_grad=True)
    with ag.no_grad():
        out = w * Tensor(np.ones(3))
    assert out._parents == ()
    assert not out.requires_grad


def test_forward_bitwise_deterministic(rng):
    x = rng.standard_normal((16, 16))
    a = ag.softmax(ag.gelu(Tensor(x) @ Tensor(x)), axis=1).data
    b = ag.softmax(ag.gelu(Tensor(x) @ Tensor(x)), axis=1).data
    assert a.tobytes() == b.tobytes()


def test_rank_limit():
    with pytest.raises(ValueError):
        Tensor(np.ones((2, 2, 2, 2, 2)))


# -- AdamW -------------------------------------------------------------------


def test_adamw_zero_grad_no_decay_unchanged():
    p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    opt = AdamW({"p": p}, lr=0.1)
    opt.step()
    assert np.allclose(p.data, [1.0, -2.0])


def test_adamw_first_step_hand_computed():
    # grad=1, lr=0.1, betas=(0.9, 0.999), wd=0: bias correction makes the
    # first update exactly lr * 1 / (1 + eps) ~= 0.1
    p = Tensor(np.array([0.5]), requires_grad=True)
    opt = AdamW({"p": p}, lr=0.1)
    p.grad = np.array([1.0])
    opt.step()
    assert p.data[0] == pytest.approx(0.5 - 0.1, abs=1e-6)


def test_adamw_decoupled_decay():
    p = Tensor(np.array([2.0]), requires_grad=True)
    opt = AdamW({"p": p}, lr=0.1, weight_decay=0.01)
    opt.step()  # zero grad: only decay is applied
    assert p.data[0] == pytest.approx(2.0 * (1 - 0.1 * 0.01))


def test_adamw_shape_mismatch():
    p = Tensor(np.ones(3), requires_grad=True)
    opt = AdamW({"p": p}, lr=0.1)
    p.grad = np.ones(4)
    with pytest.raises(ValueError):
        opt.step()
