import numpy as np
import pytest

from mmrisk.mm_exceptions import ConfigurationError, ContractViolation, ShapeError
from mmrisk.mm_gradcheck import GRADCHECK_TOLERANCE, check_layers
from mmrisk.mm_layers import BiLstmEncoder, Conv1dEncoder, DenseLayer, DropoutSpec, EmbeddingLayer, LstmCell, \
    LstmEncoder, bilstm_encode, concat_backward, concat_fuse, conv1d_maxpool, dense_forward, dropout_forward, \
    embed_forward, layer_backward, lstm_forward, reverse_index, substitute_empty_reports
from mmrisk.mm_numeric import SeededRng, sigmoid
from mmrisk.mm_text import EncodedReport

NO_DROPOUT = DropoutSpec()


@pytest.fixture
def rng() -> SeededRng:
    return SeededRng(11)


def saturated_cell() -> LstmCell:
    # H = d = 1, only the candidate sees the input, every gate is pushed open
    W_x = np.array([[0.0], [0.0], [0.0], [1.0]])
    W_h = np.zeros((4, 1))
    b = np.array([10.0, 10.0, 10.0, 0.0])
    return LstmCell(W_x, W_h, b)


@pytest.mark.layers
def test_embed_forward(rng: SeededRng):
    layer = EmbeddingLayer.create(5, 3, rng)
    assert np.all(layer.E[0] == 0.0), "PAD row is not zero!"
    seq = embed_forward(EncodedReport(ids=np.array([2, 2, 0]), length=2), layer)
    assert seq.shape == (2, 3), "Embedded sequence shape is incorrect!"
    assert np.array_equal(seq[0], layer.E[2]) and np.array_equal(seq[0], seq[1]), "Embedding lookup is incorrect!"
    assert embed_forward(EncodedReport(ids=np.zeros(3, dtype=np.int64), length=0), layer).shape == (0, 3), \
        "Empty report embedding is incorrect!"
    with pytest.raises(IndexError):
        embed_forward(EncodedReport(ids=np.array([7]), length=1), layer)


@pytest.mark.layers
def test_embedding_backward_pad_row(rng: SeededRng):
    layer = EmbeddingLayer.create(6, 2, rng)
    ids = np.array([[3, 0, 3], [0, 0, 0]])
    lengths = np.array([3, 1])
    X, cache = layer.forward(ids, lengths)
    grads, dX = layer.backward(cache, np.ones_like(X))
    assert dX is None, "Embedding input gradient must be None!"
    assert np.all(grads['E'][0] == 0.0), "PAD row received a gradient!"
    assert np.allclose(grads['E'][3], 2.0), "Repeated token gradients are not accumulated!"
    assert np.all(grads['E'][[1, 2, 4, 5]] == 0.0), "Untouched rows received a gradient!"


@pytest.mark.layers
def test_lstm_saturated_gates_example():
    hs, _ = lstm_forward(np.array([[1.0]]), saturated_cell(), NO_DROPOUT, SeededRng(0), False)
    gate = sigmoid(10.0)
    expected = gate * np.tanh(gate * np.tanh(1.0))
    assert abs(hs[0, 0] - expected) < 1e-12, "Saturated LSTM step is incorrect!"
    assert abs(hs[0, 0] - np.tanh(np.tanh(1.0))) < 1e-3, "Saturated LSTM step is not tanh(tanh(1))!"


@pytest.mark.layers
def test_lstm_zero_weights():
    cell = LstmCell(np.zeros((8, 3)), np.zeros((8, 2)), np.zeros(8))
    hs, _ = lstm_forward(np.ones((4, 3)), cell, NO_DROPOUT, SeededRng(0), False)
    assert np.all(hs == 0.0), "Zero-weight LSTM output is not zero!"


@pytest.mark.layers
def test_lstm_inference_deterministic(rng: SeededRng):
    cell = LstmCell.create(3, 4, rng)
    seq = rng.normal(0, 1, (5, 3))
    dropout = DropoutSpec(0.5, 0.5)
    first, _ = lstm_forward(seq, cell, dropout, SeededRng(1), False)
    second, _ = lstm_forward(seq, cell, dropout, SeededRng(2), False)
    assert np.array_equal(first, second), "Inference forward pass is not deterministic!"
    assert np.all(cell.b[4:8] == 1.0), "Forget gate bias initialization is incorrect!"
    with pytest.raises(ShapeError):
        lstm_forward(np.ones((5, 2)), cell, NO_DROPOUT, SeededRng(0), False)


@pytest.mark.layers
def test_reverse_index_is_involution():
    rev = reverse_index(np.array([3, 5, 1]), 5)
    assert rev[0].tolist() == [2, 1, 0, 3, 4], "Reverse index is incorrect!"
    rows = np.arange(3)[:, None]
    assert np.array_equal(rev[rows, rev], np.tile(np.arange(5), (3, 1))), "Reverse index is not an involution!"


@pytest.mark.layers
def test_bilstm_output_width(rng: SeededRng):
    enc = BiLstmEncoder.create(4, 100, rng)
    out, _ = bilstm_encode(rng.normal(0, 1, (3, 4)), enc, NO_DROPOUT, rng, False)
    assert out.shape == (200,), "BiLSTM output width is incorrect!"


@pytest.mark.layers
def test_bilstm_single_step_and_palindrome(rng: SeededRng):
    cell = LstmCell.create(3, 2, rng)
    twin = LstmCell(cell.W_x.copy(), cell.W_h.copy(), cell.b.copy())
    enc = BiLstmEncoder(cell, twin)
    single, _ = bilstm_encode(rng.normal(0, 1, (1, 3)), enc, NO_DROPOUT, rng, False)
    assert np.allclose(single[:2], single[2:]), "Length-1 halves differ with shared parameters!"
    a, b = rng.normal(0, 1, 3), rng.normal(0, 1, 3)
    palindrome = np.stack([a, b, a])
    out, _ = bilstm_encode(palindrome, enc, NO_DROPOUT, rng, False)
    assert np.allclose(out[:2], out[2:], atol=1e-14), "Palindrome halves differ!"


@pytest.mark.layers
def test_bilstm_pad_invariance(rng: SeededRng):
    enc = BiLstmEncoder.create(3, 2, rng)
    X = rng.normal(0, 1, (1, 4, 3))
    padded = np.concatenate([X, np.zeros((1, 6, 3))], axis=1)
    lengths = np.array([4])
    short, _ = enc.forward(X, lengths, NO_DROPOUT, rng, False)
    long, _ = enc.forward(padded, lengths, NO_DROPOUT, rng, False)
    assert np.allclose(short, long, rtol=0.0, atol=1e-14), "Padding leaks into the BiLSTM output!"


@pytest.mark.layers
def test_bilstm_empty_sequence(rng: SeededRng):
    enc = BiLstmEncoder.create(3, 2, rng)
    out, _ = bilstm_encode(np.zeros((0, 3)), enc, NO_DROPOUT, rng, False)
    assert out.shape == (4,) and np.all(np.isfinite(out)), "Empty sequence encoding is incorrect!"
    with pytest.raises(ShapeError):
        enc.forward(np.zeros((1, 2, 3)), np.array([0]), NO_DROPOUT, rng, False)


@pytest.mark.layers
def test_substitute_empty_reports():
    ids, lengths, n_empty = substitute_empty_reports(np.array([[3, 4], [5, 0]]), np.array([2, 0]))
    assert n_empty == 1, "Empty report count is incorrect!"
    assert lengths.tolist() == [2, 1] and ids[1, 0] == 0, "Empty report substitution is incorrect!"


@pytest.mark.layers
def test_conv1d_zero_weights(rng: SeededRng):
    enc = Conv1dEncoder(np.zeros((128, 5 * 4)), np.zeros(128), 5)
    out, _ = conv1d_maxpool(rng.normal(0, 1, (7, 4)), enc)
    assert out.shape == (128,) and np.all(out == 0.0), "Zero-weight conv output is incorrect!"


@pytest.mark.layers
def test_conv1d_max_pooling_example():
    # one filter, window 3, weight 1 on coordinate 0 of the middle position
    W = np.zeros((1, 3 * 2))
    W[0, 2] = 1.0
    enc = Conv1dEncoder(W, np.zeros(1), 3)
    seq = np.array([[9.0, 0.0], [1.0, 0.0], [4.0, 0.0], [2.0, 0.0], [7.0, 5.0]])
    out, cache = conv1d_maxpool(seq, enc)
    assert out.tolist() == [4.0], "Max pooling is incorrect!"
    assert cache['argmax'].tolist() == [[1]], "Argmax position is incorrect!"
    grads, dX = enc.backward(cache, np.array([[1.0]]))
    assert dX[0, 2, 0] == 1.0 and np.count_nonzero(dX) == 1, "Gradient is not routed to the argmax window!"


@pytest.mark.layers
def test_conv1d_short_sequence_and_ties():
    W = np.zeros((1, 2))
    W[0, 0] = 1.0
    enc = Conv1dEncoder(W, np.zeros(1), 2)
    out, _ = conv1d_maxpool(np.array([[3.0]]), enc)
    assert out.tolist() == [3.0], "Short sequence is not zero-padded to the window!"
    _, cache = conv1d_maxpool(np.array([[2.0], [2.0], [2.0]]), enc)
    assert cache['argmax'].tolist() == [[0]], "Tie-break is not the first index!"
    with pytest.raises(ShapeError):
        conv1d_maxpool(np.zeros((0, 1)), enc)


@pytest.mark.layers
def test_conv1d_pad_invariance(rng: SeededRng):
    enc = Conv1dEncoder.create(4, 3, 6, rng)
    X = rng.normal(0, 1, (3, 5, 4))
    lengths = np.array([5, 3, 1])
    X[1, 3:] = 0.0
    X[2, 1:] = 0.0
    short, _ = enc.forward(X, lengths)
    for extra in (1, 4, 9):
        padded = np.concatenate([X, np.zeros((3, extra, 4))], axis=1)
        long, _ = enc.forward(padded, lengths)
        assert np.allclose(short, long, rtol=0.0, atol=1e-14), f"{extra} PAD columns change the conv output!"


@pytest.mark.layers
def test_lstm_recurrent_mask_shared_across_steps(rng: SeededRng):
    class CountingRng(SeededRng):
        draws = 0

        def keep_mask(self, shape, rate):
            self.draws += 1
            return super().keep_mask(shape, rate)

    B, T, D, H = 4, 7, 3, 16
    cell = LstmCell.create(D, H, rng)
    X = rng.normal(0, 1, (B, T, D))
    counting = CountingRng(3)
    hs, _, cache = cell.forward(X, np.full(B, T), DropoutSpec(0.0, 0.5), counting, True)
    mh = cache['mh']
    assert counting.draws == 2, "Dropout masks are drawn per time step!"
    assert mh.shape == (B, H) and np.any(mh == 0.0) and np.any(mh == 2.0), "Recurrent mask is incorrect!"
    # replay the recurrence with the one cached mask
    h, c = np.zeros((B, H)), np.zeros((B, H))
    for t in range(T):
        z = X[:, t] @ cell.W_x.T + cell.b + (h * mh) @ cell.W_h.T
        i, f, o, g = sigmoid(z[:, :H]), sigmoid(z[:, H:2 * H]), sigmoid(z[:, 2 * H:3 * H]), np.tanh(z[:, 3 * H:])
        c = f * c + i * g
        h = o * np.tanh(c)
        assert np.allclose(hs[:, t], h, rtol=0.0, atol=1e-12), f"Step {t} does not reuse the recurrent mask!"


@pytest.mark.layers
def test_dropout_forward(rng: SeededRng):
    x = np.ones(10000)
    out, _ = dropout_forward(x, DropoutSpec(0.0), rng, True)
    assert np.array_equal(out, x), "Zero-rate dropout is not the identity!"
    out, _ = dropout_forward(x, DropoutSpec(0.2), rng, False)
    assert np.array_equal(out, x), "Inference dropout is not the identity!"
    out, mask = dropout_forward(x, DropoutSpec(0.2), rng, True)
    assert abs(np.mean(mask > 0) - 0.8) < 0.05, "Survival fraction is incorrect!"
    assert abs(out.mean() - 1.0) < 0.05, "Dropout does not preserve the expectation!"
    with pytest.raises(ConfigurationError):
        DropoutSpec(1.0)


@pytest.mark.layers
def test_concat_fuse():
    assert concat_fuse([1.0, 2.0], [3.0]).tolist() == [1.0, 2.0, 3.0], "Concatenation is incorrect!"
    assert concat_fuse(np.zeros((2, 200)), np.zeros((2, 13))).shape == (2, 213), "Fused width is incorrect!"
    assert concat_fuse([1.0, 2.0], []).tolist() == [1.0, 2.0], "Empty clinical concatenation is incorrect!"
    text, clinical = concat_backward(np.arange(5.0)[None], 3)
    assert text.tolist() == [[0.0, 1.0, 2.0]] and clinical.tolist() == [[3.0, 4.0]], "Gradient split is incorrect!"


@pytest.mark.layers
def test_dense_forward():
    identity = DenseLayer(np.eye(3), np.zeros(3), 'linear')
    out, _ = dense_forward(np.array([1.0, -2.0, 3.0]), identity)
    assert out.tolist() == [1.0, -2.0, 3.0], "Identity dense layer is incorrect!"
    clipped = DenseLayer(np.array([[1.0, 1.0]]), np.array([-1.0]), 'relu')
    out, _ = dense_forward(np.array([0.5, 0.4]), clipped)
    assert out.tolist() == [0.0], "ReLU clipping is incorrect!"
    sig = DenseLayer.create(4, 1, 'sigmoid', SeededRng(0))
    out, _ = dense_forward(SeededRng(1).normal(0, 5, (50, 4)), sig)
    assert np.all((out > 0.0) & (out < 1.0)), "Sigmoid output outside (0, 1)!"
    with pytest.raises(ShapeError):
        dense_forward(np.ones(3), clipped)
    with pytest.raises(ConfigurationError):
        DenseLayer(np.eye(2), np.zeros(2), 'softmax')


@pytest.mark.layers
def test_dense_linear_backward():
    W = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
    layer = DenseLayer(W, np.zeros(3), 'linear')
    _, cache = layer.forward(np.array([[1.0, 1.0]]))
    upstream = np.array([[1.0, 0.0, -1.0]])
    grads, dx = layer_backward(layer, cache, upstream)
    assert np.array_equal(dx, upstream @ W), "Input gradient is not W^T upstream!"
    assert np.array_equal(grads['b'], upstream[0]), "Bias gradient is incorrect!"


@pytest.mark.layers
def test_mismatched_cache(rng: SeededRng):
    first = DenseLayer.create(2, 2, 'relu', rng)
    second = DenseLayer.create(2, 2, 'relu', rng)
    _, cache = first.forward(np.ones((1, 2)))
    with pytest.raises(ContractViolation):
        layer_backward(second, cache, np.ones((1, 2)))
    with pytest.raises(ContractViolation):
        layer_backward(first, None, np.ones((1, 2)))
    enc = LstmEncoder.create(2, 2, rng)
    with pytest.raises(ContractViolation):
        enc.backward(cache, np.ones((1, 2)))


@pytest.mark.layers
def test_every_layer_gradient_check():
    results = check_layers(seed=3)
    names = {r.name for r in results}
    assert names == {'embedding', 'lstm', 'bilstm', 'lstm_encoder', 'conv1d', 'dense_relu', 'dense_sigmoid',
                     'dense_linear'}, "Layer gradient check coverage is incorrect!"
    for result in results:
        assert result.passed(GRADCHECK_TOLERANCE), f"Gradient check of {result.name} failed: {result.errors}"
