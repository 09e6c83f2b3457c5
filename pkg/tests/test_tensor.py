import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adatrans import tensor as T
from adatrans.tensor import ShapeError, grad_check

# one scalar-valued program per primitive; the bool marks linear primitives
PRIMITIVE_PROGRAMS = {
    "matmul": (lambda a, b: T.sum(T.mul(T.matmul(a, b), [[1.0, -2.0], [0.5, 3.0], [1.5, 0.2]])),
               [(3, 4), (4, 2)], True),
    "add": (lambda a, b: T.sum(T.mul(T.add(a, b), [1.0, 2.0, -1.0])), [(2, 3), (3,)], True),
    "sub": (lambda a, b: T.sum(T.mul(T.sub(a, b), [1.0, 2.0, -1.0])), [(2, 3), (2, 3)], True),
    "mul": (lambda a, b: T.sum(T.mul(a, b)), [(2, 3), (2, 1)], False),
    "sigmoid": (lambda a: T.sum(T.mul(T.sigmoid(a), a)), [(5,)], False),
    "tanh": (lambda a: T.sum(T.mul(T.tanh(a), a)), [(5,)], False),
    "relu": (lambda a: T.sum(T.mul(T.relu(a), a)), [(5,)], False),
    "exp": (lambda a: T.sum(T.exp(a)), [(5,)], False),
    "log": (lambda a: T.sum(T.log(T.add(T.mul(a, a), 0.5))), [(5,)], False),
    "sum": (lambda a: T.sum(T.mul(T.sum(a, axis=0), [1.0, -1.0, 2.0])), [(4, 3)], True),
    "mean": (lambda a: T.sum(T.mul(T.mean(a, axis=1), [1.0, -1.0, 2.0, 0.3])), [(4, 3)], True),
    "l2_norm": (lambda a: T.sum(T.l2_norm(a)), [(3, 4)], False),
    "unit_normalize": (lambda a: T.sum(T.mul(T.unit_normalize(a), [1.0, 2.0, 3.0, -1.0])),
                       [(3, 4)], False),
    "concat": (lambda a, b: T.sum(T.mul(T.concat([a, b], axis=-1), [1.0, 2.0, 3.0, 4.0, 5.0])),
               [(2, 2), (2, 3)], True),
    "slice": (lambda a: T.sum(T.mul(T.slice_(a, 1, 3), [2.0, -1.0])), [(3, 4)], True),
    "sq_l2_distance": (lambda a, b: T.sum(T.sq_l2_distance(a, b)), [(3, 4), (3, 4)], False),
    "logsumexp": (lambda a: T.sum(T.mul(T.logsumexp(a, axis=-1), [1.0, 2.0])), [(2, 5)], False),
}


def test_every_primitive_has_a_program():
    assert set(PRIMITIVE_PROGRAMS) == set(T.PRIMITIVES)


@pytest.mark.parametrize("name", sorted(PRIMITIVE_PROGRAMS))
def test_primitive_gradients_at_random_points(name):
    program, shapes, linear = PRIMITIVE_PROGRAMS[name]
    rng = np.random.default_rng(abs(hash(name)) % 2**32)
    tol = 1e-8 if linear else 1e-4
    for _ in range(10):
        point = [rng.normal(size=s) for s in shapes]
        assert grad_check(program, point) < tol


def test_forward_examples():
    out = T.eval_graph([np.eye(3), np.array([1.0, 2.0, 3.0])], T.matmul)
    np.testing.assert_array_equal(out.value, [1.0, 2.0, 3.0])
    assert T.sigmoid(0.0).item() == 0.5
    np.testing.assert_allclose(T.unit_normalize(np.array([3.0, 4.0])).value, [0.6, 0.8])


def test_backward_square():
    x = T.parameter([1.0, 2.0])
    T.sum(T.mul(x, x)).backward()
    np.testing.assert_array_equal(x.grad, [2.0, 4.0])


def test_backward_sigmoid_at_zero():
    x = T.parameter([0.0])
    T.sum(T.sigmoid(x)).backward()
    np.testing.assert_allclose(x.grad, [0.25])


def test_two_layer_mlp_against_finite_differences():
    rng = np.random.default_rng(7)

    def mlp(x, w1, b1, w2):
        return T.sum(T.tanh(T.matmul(T.tanh(T.add(T.matmul(x, w1), b1)), w2)))

    point = [rng.normal(size=(4, 6)), rng.normal(size=(6, 8)), rng.normal(size=8),
             rng.normal(size=(8, 3))]
    assert grad_check(mlp, point, epsilon=1e-5, n_coords=20, rng=rng) < 1e-4


def test_grad_check_examples():
    rng = np.random.default_rng(3)
    A = rng.normal(size=(3, 3))
    assert grad_check(lambda x: T.sum(T.matmul(x, A)), [rng.normal(size=(2, 3))]) < 1e-8
    assert grad_check(lambda x, w: T.sum(T.sigmoid(T.matmul(x, w))),
                      [rng.normal(size=(2, 3)), rng.normal(size=(3, 2))]) < 1e-4
    assert grad_check(lambda x: T.sum(T.mul(T.unit_normalize(x), [0.3, -0.7])), [[3.0, 4.0]]) < 1e-4


def test_grad_check_rejects_bad_epsilon():
    with pytest.raises(ValueError):
        grad_check(lambda x: T.sum(x), [[1.0]], epsilon=0.01)


def test_backward_twice_doubles_gradients():
    rng = np.random.default_rng(0)
    x = T.parameter(rng.normal(size=(3, 4)))
    w = T.parameter(rng.normal(size=(4, 2)))
    h = T.tanh(T.matmul(x, w))
    out = T.sum(T.mul(h, h))
    out.backward()
    gx, gw, gh = x.grad.copy(), w.grad.copy(), h.grad.copy()
    out.backward()
    np.testing.assert_allclose(x.grad, 2 * gx, rtol=0, atol=0)
    np.testing.assert_allclose(w.grad, 2 * gw, rtol=0, atol=0)
    np.testing.assert_allclose(h.grad, 2 * gh, rtol=0, atol=0)


def test_fan_out_accumulates():
    x = T.parameter([3.0])
    y = T.add(T.mul(x, 2.0), T.mul(x, x))  # 2x + x^2
    T.sum(y).backward()
    np.testing.assert_allclose(x.grad, [8.0])


def test_backward_requires_scalar():
    x = T.parameter([1.0, 2.0])
    with pytest.raises(ValueError):
        T.mul(x, 2.0).backward()


@pytest.mark.parametrize("build", [
    lambda: T.matmul(np.ones((2, 3)), np.ones((2, 3))),
    lambda: T.add(np.ones((2, 3)), np.ones((3, 2))),
    lambda: T.mul(np.ones(4), np.ones(3)),
    lambda: T.sq_l2_distance(np.ones(4), np.ones(3)),
    lambda: T.concat([np.ones((2, 3)), np.ones((3, 3))], axis=-1),
])
def test_shape_errors_name_the_primitive(build):
    with pytest.raises(ShapeError) as err:
        build()
    assert err.value.op in str(err.value)
    assert "(" in str(err.value)


def test_unit_normalize_of_zero_is_finite():
    x = T.parameter(np.zeros(3))
    out = T.unit_normalize(x)
    T.sum(out).backward()
    assert np.all(out.value == 0) and np.all(np.isfinite(x.grad))


def test_sigmoid_saturates_without_overflow():
    out = T.sigmoid(np.array([-800.0, 800.0])).value
    assert out[0] == 0.0 and out[1] == 1.0


def test_value_and_grad_shapes_agree():
    t = T.parameter(np.arange(6.0).reshape(2, 3))
    assert t.value.size == t.grad.size == int(np.prod(t.shape))


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=2, max_size=6))
def test_forward_is_deterministic(xs):
    x = np.array(xs)

    def f():
        return T.logsumexp(T.mul(T.unit_normalize(T.tanh(x)), T.sigmoid(x))).value

    assert f().tobytes() == f().tobytes()


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=2, max_size=5).filter(lambda v: np.linalg.norm(v) > 0.1))
def test_unit_normalize_has_unit_norm(xs):
    out = T.unit_normalize(np.array(xs)).value
    assert abs(np.linalg.norm(out) - 1.0) < 1e-12
