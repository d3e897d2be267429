import numpy as np
import pytest

from starctr.errors import NumericError, ShapeError
from starctr.layers import sigmoid
from starctr.tensor import add, grad_check, hadamard, make_rng, matmul


def naive_matmul(a, b):
    """O(n^3) triple-loop reference."""
    n, k = a.shape
    k2, m = b.shape
    assert k == k2
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            acc = 0.0
            for t in range(k):
                acc += a[i, t] * b[t, j]
            out[i, j] = acc
    return out


class TestMatmul:
    def test_identity(self):
        eye = np.array([[1.0, 0.0], [0.0, 1.0]])
        v = np.array([[3.0], [4.0]])
        assert np.array_equal(matmul(eye, v), v)

    def test_hand_arithmetic(self):
        out = matmul(np.array([[1.0, 2.0]]), np.array([[3.0], [4.0]]))
        assert out.shape == (1, 1)
        assert out[0, 0] == 11.0

    def test_matches_triple_loop_oracle(self):
        rng = make_rng(42)
        a = rng.normal(size=(5, 4))
        b = rng.normal(size=(4, 3))
        assert np.array_equal(matmul(a, b), naive_matmul(a, b))

    @pytest.mark.parametrize("seed", range(8))
    def test_random_shapes_match_oracle(self, seed):
        rng = make_rng(seed, stream=99)
        n, k, m = (int(v) for v in rng.integers(1, 17, size=3))
        a = rng.normal(size=(n, k))
        b = rng.normal(size=(k, m))
        assert np.array_equal(matmul(a, b), naive_matmul(a, b))

    def test_shape_error_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 2\)"):
            matmul(np.zeros((2, 3)), np.zeros((2, 2)))


class TestHadamard:
    def test_multiplicative_identity(self):
        rng = make_rng(1)
        a = rng.normal(size=(3, 4))
        assert np.array_equal(hadamard(a, np.ones((3, 4))), a)

    def test_annihilator(self):
        rng = make_rng(2)
        a = rng.normal(size=(3, 4))
        assert np.array_equal(hadamard(a, np.zeros((3, 4))), np.zeros((3, 4)))

    def test_hand_arithmetic(self):
        out = hadamard(np.array([[2.0, 3.0]]), np.array([[4.0, 5.0]]))
        assert np.array_equal(out, np.array([[8.0, 15.0]]))

    def test_commutative(self):
        rng = make_rng(3)
        a = rng.normal(size=(4, 4))
        b = rng.normal(size=(4, 4))
        assert np.array_equal(hadamard(a, b), hadamard(b, a))

    def test_shape_error(self):
        with pytest.raises(ShapeError):
            hadamard(np.zeros((2, 2)), np.zeros((2, 3)))


class TestAdd:
    def test_commutative(self):
        rng = make_rng(4)
        a = rng.normal(size=(5,))
        b = rng.normal(size=(5,))
        assert np.array_equal(add(a, b), add(b, a))

    def test_zero_identity(self):
        a = np.array([1.0, -2.0, 3.5])
        assert np.array_equal(add(a, np.zeros(3)), a)

    def test_shape_error(self):
        with pytest.raises(ShapeError):
            add(np.zeros(2), np.zeros(3))


class TestRng:
    def test_equal_seeds_equal_sequences(self):
        a = make_rng(1234).uniform(size=1_000_000)
        b = make_rng(1234).uniform(size=1_000_000)
        assert np.array_equal(a, b)

    def test_different_seeds_differ(self):
        a = make_rng(1).uniform(size=100)
        b = make_rng(2).uniform(size=100)
        assert not np.array_equal(a, b)

    def test_streams_differ(self):
        a = make_rng(7, stream=0).uniform(size=100)
        b = make_rng(7, stream=1).uniform(size=100)
        assert not np.array_equal(a, b)


class TestGradCheck:
    def test_quadratic_exact_under_central_differences(self):
        err = grad_check(lambda t: float(t[0] ** 2), np.array([3.0]),
                         np.array([6.0]), h=1e-5)
        assert err < 1e-9

    def test_one_layer_sigmoid_ce(self):
        rng = make_rng(5)
        x = rng.normal(size=4)
        y = 1.0

        def f(theta):
            w, b = theta[:4], theta[4]
            p = sigmoid(np.array([x @ w + b]))[0]
            return -np.log(p) if y else -np.log1p(-p)

        theta = rng.normal(size=5)
        p = sigmoid(np.array([x @ theta[:4] + theta[4]]))[0]
        grad = np.concatenate([(p - y) * x, [p - y]])
        assert grad_check(f, theta, grad, h=1e-5) < 1e-6

    def test_detects_scaled_gradient(self):
        err = grad_check(lambda t: float(t[0] ** 2), np.array([3.0]),
                         np.array([12.0]), h=1e-5)
        assert err > 0.3

    def test_non_finite_raises(self):
        with pytest.raises(NumericError), np.errstate(invalid="ignore"):
            grad_check(lambda t: float(np.log(t[0])), np.array([0.0]),
                       np.array([1.0]))

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            grad_check(lambda t: 0.0, np.zeros(3), np.zeros(2))


class TestAssociativity:
    def test_hadamard_associative_up_to_rounding(self):
        rng = make_rng(6)
        a, b, c = (rng.normal(size=(4, 4)) for _ in range(3))
        left = hadamard(hadamard(a, b), c)
        right = hadamard(a, hadamard(b, c))
        assert np.allclose(left, right, rtol=1e-15)

    def test_add_associative_up_to_rounding(self):
        rng = make_rng(7)
        a, b, c = (rng.normal(size=(8,)) for _ in range(3))
        assert np.allclose(add(add(a, b), c), add(a, add(b, c)), rtol=1e-14)
