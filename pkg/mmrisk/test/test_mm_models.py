import numpy as np
import pytest

from mmrisk.mm_config import TrainingConfig
from mmrisk.mm_exceptions import ConfigurationError, ContractViolation, ShapeError
from mmrisk.mm_gradcheck import GRADCHECK_TOLERANCE, check_scenario
from mmrisk.mm_models import Batch, ScenarioTag, backward_batch, build_model, expected_parameter_count, \
    forward_batch, predict
from mmrisk.mm_numeric import SeededRng, bce_loss, bce_loss_from_logits, sigmoid
from mmrisk.mm_training import train

VOCAB = 20
N_CLINICAL = 13


@pytest.fixture
def micro() -> TrainingConfig:
    return TrainingConfig.micro()


def random_batch(rng: SeededRng, n: int = 6, steps: int = 6, n_clinical: int = N_CLINICAL) -> Batch:
    lengths = rng.generator.integers(1, steps + 1, size=n)
    ids = np.zeros((n, steps), dtype=np.int64)
    for row, length in enumerate(lengths):
        ids[row, :length] = rng.generator.integers(1, VOCAB, size=length)
    return Batch(ids=ids, lengths=lengths, clinical=rng.normal(0, 1, (n, n_clinical)))


@pytest.mark.models
def test_scenario_enumeration():
    assert [t.value for t in ScenarioTag] == ['v-nn', 't-bilstm', 'mi-cnn', 'mi-lstm', 'mi-bilstm'], \
        "Scenario set is incorrect!"
    assert ScenarioTag.from_name('MI_BILSTM') is ScenarioTag.MI_BILSTM, "Scenario name parsing is incorrect!"
    assert all(ScenarioTag.from_index(t.index) is t for t in ScenarioTag), "Scenario index is incorrect!"
    with pytest.raises(ConfigurationError):
        ScenarioTag.from_name('mi-gru')


@pytest.mark.models
@pytest.mark.parametrize('tag', list(ScenarioTag))
def test_parameter_count_closed_form(tag: ScenarioTag):
    config = TrainingConfig()
    n_clinical = N_CLINICAL if tag.uses_clinical else 0
    model = build_model(tag, VOCAB, n_clinical, config, SeededRng(0))
    assert model.parameter_count() == expected_parameter_count(tag, VOCAB, n_clinical, config), \
        f"Parameter count of {tag.value} is incorrect!"


@pytest.mark.models
def test_parameter_count_defaults():
    config = TrainingConfig()
    expected = {ScenarioTag.V_NN: 5121, ScenarioTag.T_BILSTM: 500 * VOCAB + 481001,
                ScenarioTag.MI_CNN: 500 * VOCAB + 333441, ScenarioTag.MI_LSTM: 500 * VOCAB + 251921,
                ScenarioTag.MI_BILSTM: 500 * VOCAB + 498721}
    for tag, count in expected.items():
        assert expected_parameter_count(tag, VOCAB, N_CLINICAL, config) == count, \
            f"Documented parameter count of {tag.value} is incorrect!"


@pytest.mark.models
def test_fusion_widths():
    config = TrainingConfig()
    bilstm = build_model(ScenarioTag.MI_BILSTM, VOCAB, N_CLINICAL, config, SeededRng(0))
    lstm = build_model(ScenarioTag.MI_LSTM, VOCAB, N_CLINICAL, config, SeededRng(0))
    assert bilstm.head[0].in_size == 213, "MI-BiLSTM fusion width is incorrect!"
    assert lstm.head[0].in_size == 113, "MI-LSTM fusion width is incorrect!"
    assert bilstm.dropout.rate == 0.2 and bilstm.dropout.recurrent_rate == 0.2, "BiLSTM dropout is incorrect!"
    cnn = build_model(ScenarioTag.MI_CNN, VOCAB, N_CLINICAL, config, SeededRng(0))
    assert cnn.dropout.rate == 0.0, "MI-CNN must not use dropout!"


@pytest.mark.models
def test_build_model_errors(micro: TrainingConfig):
    with pytest.raises(ConfigurationError):
        build_model(ScenarioTag.MI_BILSTM, VOCAB, 0, micro, SeededRng(0))
    with pytest.raises(ConfigurationError):
        build_model(ScenarioTag.T_BILSTM, 1, 0, micro, SeededRng(0))
    model = build_model(ScenarioTag.T_BILSTM, VOCAB, 5, micro, SeededRng(0))
    assert model.n_clinical == 0, "T-BiLSTM must ignore clinical inputs!"


@pytest.mark.models
def test_build_model_deterministic(micro: TrainingConfig):
    first = build_model(ScenarioTag.MI_BILSTM, VOCAB, N_CLINICAL, micro, SeededRng(4))
    second = build_model(ScenarioTag.MI_BILSTM, VOCAB, N_CLINICAL, micro, SeededRng(4))
    for name, value in first.parameters().items():
        assert np.array_equal(value, second.parameters()[name]), f"Initialization of {name} is not deterministic!"


@pytest.mark.models
@pytest.mark.parametrize('tag', list(ScenarioTag))
def test_forward_probabilities(tag: ScenarioTag, micro: TrainingConfig):
    rng = SeededRng(5)
    n_clinical = N_CLINICAL if tag.uses_clinical else 0
    model = build_model(tag, VOCAB, n_clinical, micro, rng)
    batch = random_batch(rng, n_clinical=n_clinical)
    probabilities, cache = forward_batch(model, batch, training=False, rng=rng)
    assert cache is None, "Inference must not retain a cache!"
    assert probabilities.shape == (6,) and np.all((probabilities > 0) & (probabilities < 1)), \
        f"{tag.value} probabilities are incorrect!"
    duplicated = batch.take(np.array([0, 0]))
    p_dup, _ = forward_batch(model, duplicated, training=False, rng=rng)
    assert abs(p_dup[0] - p_dup[1]) < 1e-15, "Duplicate examples get different probabilities!"
    scores = predict(model, batch, batch_size=4)
    for row in range(len(batch)):
        single = predict(model, batch.take(np.array([row])))
        assert abs(single[0] - scores[row]) < 1e-12, f"Batch of one differs from row {row}!"


@pytest.mark.models
def test_forward_shape_mismatch(micro: TrainingConfig):
    rng = SeededRng(0)
    model = build_model(ScenarioTag.MI_LSTM, VOCAB, N_CLINICAL, micro, rng)
    with pytest.raises(ShapeError):
        forward_batch(model, random_batch(rng, n_clinical=3), training=False, rng=rng)


@pytest.mark.models
def test_vnn_ignores_text(micro: TrainingConfig):
    rng = SeededRng(2)
    model = build_model(ScenarioTag.V_NN, VOCAB, N_CLINICAL, micro, rng)
    batch = random_batch(rng)
    other = Batch(ids=np.roll(batch.ids, 1, axis=1), lengths=np.ones(len(batch)), clinical=batch.clinical)
    assert np.array_equal(predict(model, batch), predict(model, other)), "V-NN depends on the report text!"
    labels = np.array([1, 0, 1, 0, 1, 0])
    _, cache = forward_batch(model, batch, training=True, rng=SeededRng(1))
    _, cache_other = forward_batch(model, other, training=True, rng=SeededRng(1))
    grads, grads_other = backward_batch(model, cache, labels), backward_batch(model, cache_other, labels)
    assert all(np.array_equal(grads[k], grads_other[k]) for k in grads), "V-NN gradients depend on the text!"
    assert not any(k.startswith('embedding') for k in grads), "V-NN must not have a text path!"


@pytest.mark.models
def test_backward_contract(micro: TrainingConfig):
    rng = SeededRng(3)
    model = build_model(ScenarioTag.MI_BILSTM, VOCAB, N_CLINICAL, micro, rng)
    other = build_model(ScenarioTag.MI_BILSTM, VOCAB, N_CLINICAL, micro, rng)
    batch = random_batch(rng)
    labels = np.ones(len(batch))
    with pytest.raises(ContractViolation):
        backward_batch(model, None, labels)
    _, cache = forward_batch(model, batch, training=True, rng=rng)
    with pytest.raises(ContractViolation):
        backward_batch(other, cache, labels)
    grads = backward_batch(model, cache, labels)
    assert set(grads) == set(model.parameters()), "Gradient blocks do not match the parameters!"
    assert np.all(grads['embedding.E'][0] == 0.0), "PAD embedding row received a gradient!"
    model.mark_updated()
    with pytest.raises(ContractViolation):
        backward_batch(model, cache, labels)


@pytest.mark.models
def test_saturated_predictions_have_small_gradients(micro: TrainingConfig):
    rng = SeededRng(6)
    model = build_model(ScenarioTag.V_NN, VOCAB, N_CLINICAL, micro, rng)
    model.head[-1].b[...] = 40.0
    batch = random_batch(rng)
    _, cache = forward_batch(model, batch, training=True, rng=rng)
    grads = backward_batch(model, cache, np.ones(len(batch)))
    norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    assert norm < 1e-3, "Gradient of saturated correct predictions is not small!"


@pytest.mark.models
def test_loss_from_saturated_logits(micro: TrainingConfig):
    rng = SeededRng(6)
    model = build_model(ScenarioTag.V_NN, VOCAB, N_CLINICAL, micro, rng)
    model.head[-1].b[...] = 40.0
    batch = random_batch(rng)
    probabilities, cache = forward_batch(model, batch, training=True, rng=rng)
    assert np.allclose(sigmoid(cache.logits), probabilities, rtol=0.0, atol=1e-15), "Cached logits are incorrect!"
    negatives = np.zeros(len(batch))
    loss = bce_loss_from_logits(cache.logits, negatives)
    assert np.isclose(loss, cache.logits.mean(), rtol=1e-12), "Loss of confident misses is not the logit!"
    assert loss > 25.0 and bce_loss(probabilities, negatives) < 16.2, "Loss is bounded by probability clipping!"


@pytest.mark.models
@pytest.mark.parametrize('tag', list(ScenarioTag))
def test_scenario_gradient_check(tag: ScenarioTag):
    result = check_scenario(tag, seed=1)
    assert result.passed(GRADCHECK_TOLERANCE), f"Gradient check of {tag.value} failed: {result.errors}"


@pytest.mark.models
def test_empty_reports_still_train():
    rng = SeededRng(8)
    n = 64
    clinical = rng.normal(0, 1, (n, 2))
    labels = (clinical[:, 0] + clinical[:, 1] > 0).astype(np.float64)
    batch = Batch(ids=np.zeros((n, 4), dtype=np.int64), lengths=np.zeros(n, dtype=np.int64), clinical=clinical)
    config = TrainingConfig.micro(epochs=5, batch_size=8, learning_rate=0.01)
    model = build_model(ScenarioTag.MI_BILSTM, VOCAB, 2, config, rng)
    _, logs = train(model, batch, labels, config, rng)
    assert len(logs) == 5, "Epoch log count is incorrect!"
    assert logs[-1].train_loss < logs[0].train_loss, "Loss does not decrease with empty reports!"
