import numpy as np
import pytest

from mmrisk.mm_exceptions import ConfigurationError, NonFiniteError, ShapeError
from mmrisk.mm_numeric import SeededRng, bce_logit_gradient, bce_loss, bce_loss_from_logits, glorot_bound, \
    glorot_uniform, grad_check, matmul, relu, sigmoid, tanh_act


@pytest.fixture
def rng() -> SeededRng:
    return SeededRng(7)


@pytest.mark.numeric
def test_matmul_examples():
    a = [[1, 2], [3, 4]]
    assert np.array_equal(matmul(np.eye(2), a), np.array(a, dtype=float)), "Identity product is incorrect!"
    assert np.array_equal(matmul(a, [[0], [1]]), np.array([[2.0], [4.0]])), "Column selection is incorrect!"
    assert np.array_equal(matmul(a, [[5, 6], [7, 8]]), np.array([[19.0, 22.0], [43.0, 50.0]])), \
        "2x2 product is incorrect!"


@pytest.mark.numeric
def test_matmul_shape_mismatch():
    with pytest.raises(ShapeError) as err:
        matmul(np.ones((2, 3)), np.ones((2, 3)))
    assert '(2, 3)' in str(err.value), "Shape error does not name the shapes!"


@pytest.mark.numeric
def test_matmul_associativity(rng: SeededRng):
    a, b, c = rng.normal(0, 1, (4, 5)), rng.normal(0, 1, (5, 3)), rng.normal(0, 1, (3, 6))
    left = matmul(matmul(a, b), c)
    right = matmul(a, matmul(b, c))
    assert np.allclose(left, right, rtol=1e-9, atol=1e-12), "Product is not associative!"


@pytest.mark.numeric
def test_activations():
    assert sigmoid(0.0) == 0.5, "sigmoid(0) is incorrect!"
    assert abs(sigmoid(36.0) - 1.0) < 1e-15, "sigmoid does not saturate!"
    assert np.isclose(sigmoid(-1.7), 1.0 - sigmoid(1.7)), "sigmoid symmetry is incorrect!"
    assert np.all(np.isfinite(sigmoid(np.array([-1000.0, 1000.0])))), "sigmoid overflows!"
    assert np.array_equal(relu(np.array([-1.0, 2.5, 0.0])), np.array([0.0, 2.5, 0.0])), "relu is incorrect!"
    assert tanh_act(0.0) == 0.0, "tanh(0) is incorrect!"
    assert np.isclose(tanh_act(-0.3), -tanh_act(0.3)), "tanh is not odd!"
    x = np.zeros((3, 4, 5))
    for act in (sigmoid, relu, tanh_act):
        assert act(x).shape == x.shape, f"{act.__name__} changes the shape!"


@pytest.mark.numeric
def test_glorot_uniform(rng: SeededRng):
    assert abs(glorot_bound(100, 100) - 0.1732) < 1e-4, "Glorot bound is incorrect!"
    w = glorot_uniform(500, 64, rng)
    assert w.shape == (500, 64), "Glorot shape is incorrect!"
    assert np.all(np.abs(w) <= glorot_bound(500, 64)), "Glorot sample outside of its bound!"
    assert np.array_equal(glorot_uniform(3, 4, SeededRng(1)), glorot_uniform(3, 4, SeededRng(1))), \
        "Glorot initialization is not deterministic!"
    big = glorot_uniform(500, 500, rng)
    assert abs(big.mean()) < glorot_bound(500, 500) / 10, "Glorot mean is not centered!"


@pytest.mark.numeric
def test_seeded_rng():
    assert np.array_equal(SeededRng(3).random(10), SeededRng(3).random(10)), "Same seed gives different streams!"
    assert SeededRng(3).spawn(2).seed == 5, "Spawned seed is incorrect!"
    with pytest.raises(ConfigurationError):
        SeededRng(-1)


@pytest.mark.numeric
def test_keep_mask(rng: SeededRng):
    assert np.array_equal(rng.keep_mask((4, 4), 0.0), np.ones((4, 4))), "Zero-rate mask is incorrect!"
    mask = rng.keep_mask((200, 200), 0.2)
    assert set(np.unique(mask)) <= {0.0, 1.25}, "Mask values are incorrect!"
    assert abs(np.mean(mask == 0.0) - 0.2) < 0.01, "Dropout rate is incorrect!"
    assert abs(mask.mean() - 1.0) < 0.02, "Inverted dropout is not unbiased!"


@pytest.mark.numeric
def test_bce_loss():
    assert np.isclose(bce_loss([0.5], [1]), np.log(2.0)), "BCE at 0.5 is incorrect!"
    assert np.isclose(bce_loss([0.9, 0.1], [1, 0]), -np.log(0.9), atol=1e-5), "BCE example is incorrect!"
    assert 0.0 <= bce_loss([1.0, 0.0], [1, 0]) < 1e-6, "BCE of perfect predictions is incorrect!"
    assert np.isfinite(bce_loss([0.0], [1])), "BCE is not clipped!"
    with pytest.raises(ShapeError):
        bce_loss([0.5, 0.5], [1])


@pytest.mark.numeric
def test_bce_loss_from_logits():
    assert np.isclose(bce_loss_from_logits([0.0], [1]), np.log(2.0)), "Logit BCE at 0 is incorrect!"
    z, y = np.array([2.0, -1.0, 0.3]), np.array([1.0, 0.0, 0.0])
    assert np.isclose(bce_loss_from_logits(z, y), bce_loss(sigmoid(z), y), rtol=1e-10), \
        "Logit BCE disagrees with probability BCE!"
    # sigmoid(40) rounds to 1.0, so the probability form can only report the clipped loss
    assert np.isclose(bce_loss_from_logits([40.0], [0]), 40.0, rtol=1e-12), "Saturated logit BCE is incorrect!"
    assert bce_loss([sigmoid(40.0)], [0]) < 16.2, "Clipped probability BCE is incorrect!"
    assert bce_loss_from_logits([-800.0, 800.0], [0, 1]) == 0.0, "Logit BCE of confident hits is incorrect!"
    assert bce_loss_from_logits([], []) == 0.0, "Empty logit BCE is incorrect!"
    with pytest.raises(ShapeError):
        bce_loss_from_logits([0.5, 0.5], [1])


@pytest.mark.numeric
def test_bce_logit_gradient():
    grad = bce_logit_gradient(np.array([0.75, 0.25]), np.array([1.0, 0.0]))
    assert np.allclose(grad, [-0.125, 0.125]), "Logit gradient is incorrect!"


@pytest.mark.numeric
def test_grad_check_square():
    err = grad_check(lambda t: float(t[0] ** 2), np.array([6.0]), np.array([3.0]), 1e-5)
    assert err < 1e-9, "Gradient check of a square is incorrect!"


@pytest.mark.numeric
def test_grad_check_bce_sigmoid():
    x, y = 0.3, 1.0
    err = grad_check(lambda t: bce_loss(sigmoid(t), [y]), np.array([sigmoid(x) - y]), np.array([x]), 1e-5)
    assert err < 1e-6, "Gradient check of BCE through sigmoid is incorrect!"


@pytest.mark.numeric
def test_grad_check_detects_wrong_gradient():
    err = grad_check(lambda t: float(np.sum(t ** 2)), np.array([1.0, 1.0]), np.array([1.0, 2.0]), 1e-5)
    assert err > 0.1, "Wrong gradient is not detected!"


@pytest.mark.numeric
def test_grad_check_non_finite():
    with pytest.raises(NonFiniteError) as err:
        grad_check(lambda t: float('inf') if t[1] > 0.5 else 0.0, np.zeros(2), np.array([0.0, 0.5]), 1e-5)
    assert 'coordinate 1' in str(err.value), "Diagnostic does not name the coordinate!"
