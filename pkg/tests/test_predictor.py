import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adabort.circuit import build_memory_circuit
from adabort.frame_sim import sample_arrays
from adabort.predictor import (
    PAD,
    CircuitFamily,
    FailureEstimate,
    PaddedPrefix,
    PrefixDataset,
    TrainConfig,
    TrainingDiverged,
    auc_standard_error,
    checkpoint_bytes,
    checkpoint_from_bytes,
    class_weights,
    cnn1d,
    evaluate,
    forward,
    load_checkpoint,
    loss_curve_csv,
    make_osla_dataset,
    make_prefix_dataset,
    roc_auc,
    save_checkpoint,
    train,
    two_head_mlp,
)
from adabort.surface_code import build_layout


def test_mlp_parameter_count():
    assert two_head_mlp(8).n_parameters == 128 * (2 * 8) + 128 + 8256 + 65 + 65 == 10_562


@pytest.mark.parametrize("T,C", [(3, 8), (5, 24)])
def test_cnn_parameter_count(T, C):
    conv1 = 3 * T * 64 + 64
    conv2 = 3 * 64 * 64 + 64
    bn = 2 * 64
    assert cnn1d(T, C).n_parameters == conv1 + bn + conv2 + bn + 65


def test_prefix_dataset_single_shot(circuit3):
    b = sample_arrays(circuit3, 1, 0)
    ds = make_prefix_dataset(b, [1])
    assert len(ds) == 3
    assert ds.true_rounds.tolist() == [1, 2, 3]
    assert ds.labels.tolist() == [1, 1, 1]
    for t in range(3):
        ex = ds[t]
        assert ex.label == 1 and ex.head_tag is None
        assert np.array_equal(ex.input.matrix[: t + 1], b.events[0, : t + 1])
        assert np.all(ex.input.matrix[t + 1:] == -1)
    assert PAD == -1


def test_prefix_dataset_from_records(circuit3):
    b = sample_arrays(circuit3, 4, 1)
    a = make_prefix_dataset(b.records(), [0, 1, 1, 0])
    c = make_prefix_dataset(b, [0, 1, 1, 0])
    assert np.array_equal(a.inputs, c.inputs) and np.array_equal(a.labels, c.labels)
    assert a.labels.tolist() == [0] * 3 + [1] * 6 + [0] * 3
    with pytest.raises(ValueError):
        make_prefix_dataset(b, [1, 0])


def test_osla_dataset_properties():
    ds = make_osla_dataset(CircuitFamily(build_layout(3), 0.0), 10_000, 3)
    one = ds.heads == 0
    assert abs(one.sum() - 5000) < 3 * 50
    assert np.all(ds.inputs[one, 1] == PAD)
    assert np.all(ds.true_rounds[one] == 1) and np.all(ds.true_rounds[~one] == 2)
    assert np.all(ds.labels == 1), "noiseless shots always succeed"
    assert {ds[0].head_tag, ds[1].head_tag} <= {"stop_now", "one_more"}


def test_osla_dataset_noisy_labels():
    ds = make_osla_dataset(CircuitFamily(build_layout(3), 0.01), 4000, 5)
    assert 0.8 < ds.labels.mean() < 1.0
    again = make_osla_dataset(CircuitFamily(build_layout(3), 0.01), 4000, 5)
    assert np.array_equal(ds.inputs, again.inputs)


def test_forward_range_and_determinism(rng):
    cnn = cnn1d(3, 8, seed=1)
    x = rng.integers(-1, 2, size=(3, 8))
    e = forward(cnn, PaddedPrefix(x, 3))
    assert isinstance(e, FailureEstimate) and 0 < e.p_fail < 1
    assert forward(cnn, x) == e
    mlp = two_head_mlp(8, seed=1)
    g, m = forward(mlp, rng.integers(0, 2, size=(2, 8)))
    assert 0 < g.p_fail < 1 and 0 < m.p_fail < 1
    with pytest.raises(ValueError):
        forward(cnn, np.zeros((2, 8)))


def test_success_and_failure_are_complementary(rng):
    model = cnn1d(3, 8)
    x = rng.integers(-1, 2, size=(10, 3, 8))
    assert np.allclose(model.p_fail(x), 1 - model.predict_success(x))


def test_hide_lookahead(rng):
    x = rng.integers(0, 2, size=(5, 2, 8)).astype(np.int8)
    y = x.copy()
    y[:, 1] = 1 - y[:, 1]
    hidden = two_head_mlp(8, seed=2)
    assert np.array_equal(hidden.p_fail(x), hidden.p_fail(y))
    seen = two_head_mlp(8, seed=2, hide_lookahead=False)
    assert not np.allclose(seen.p_fail(x), seen.p_fail(y))


def test_roc_auc_hand_example():
    # positives {0.8, 0.4}, negatives {0.4, 0.3, 0.1}: U = 3 + (1 + 0.5 + 1) = 5.5 over 6 pairs
    assert roc_auc([0.8, 0.4, 0.4, 0.3, 0.1], [1, 1, 0, 0, 0]) == pytest.approx(5.5 / 6)
    assert roc_auc([0.1, 0.9], [0, 1]) == 1.0
    assert roc_auc([0.9, 0.1], [0, 1]) == 0.0
    with pytest.raises(ValueError):
        roc_auc([0.1, 0.2], [1, 1])


@given(st.lists(st.tuples(st.integers(0, 5), st.integers(0, 1)), min_size=2, max_size=40), st.randoms())
@settings(max_examples=80)
def test_roc_auc_matches_pair_count(items, rnd):
    labels = [y for _, y in items]
    if len(set(labels)) < 2:
        return
    scores = [s for s, _ in items]
    pos = [s for s, y in items if y]
    neg = [s for s, y in items if not y]
    u = sum((a > b) + 0.5 * (a == b) for a in pos for b in neg)
    auc = roc_auc(scores, labels)
    assert auc == pytest.approx(u / (len(pos) * len(neg)))
    rnd.shuffle(items)
    assert roc_auc([s for s, _ in items], [y for _, y in items]) == pytest.approx(auc)


def test_auc_standard_error():
    # Hanley-McNeil at AUC 0.5 with 50/50 reduces to sqrt((0.25 + 49 * (1/3 - 1/4) * 2) / 2500)
    want = np.sqrt((0.25 + 49 * (1 / 3 - 0.25) * 2) / 2500)
    assert auc_standard_error(0.5, 50, 50) == pytest.approx(want)
    assert auc_standard_error(0.9, 1000, 1000) < auc_standard_error(0.9, 100, 100)


def test_class_weights():
    y = np.array([[1], [1], [1], [0]], dtype=float)
    w = class_weights(y, np.ones_like(y), cap=100)
    assert w[:, 0].tolist() == [1, 1, 1, 3]
    assert class_weights(y, np.ones_like(y), cap=2)[3, 0] == 2
    y = np.array([[1, 1], [0, 1]], dtype=float)
    mask = np.array([[1, 0], [1, 0]], dtype=float)
    assert class_weights(y, mask, 100).tolist() == [[1, 0], [1, 0]]


def toy_dataset(n, seed, T=3, C=8, noise=False):
    rng = np.random.default_rng(seed)
    x = rng.integers(0, 2, size=(n, T, C)).astype(np.int8)
    x[rng.random(n) < 0.5, 0] = 0
    labels = (x[:, 0].sum(axis=1) == 0).astype(np.uint8)
    if noise:
        labels = rng.permutation(labels)
    return PrefixDataset(x, np.full(n, T), labels, np.arange(n))


def test_training_separable_toy():
    ds = toy_dataset(2000, 0)
    model = cnn1d(3, 8, seed=0)
    res = train(model, ds, TrainConfig(epochs=50, patience=50, seed=0))
    acc = ((model.predict_success(ds.inputs)[:, 0] > 0.5) == ds.labels).mean()
    assert acc >= 0.99
    assert res.metrics["auc"] > 0.99
    assert len(res.curve) <= 50 and res.best_epoch >= 1


def test_training_shuffled_labels_has_no_signal():
    ds = toy_dataset(6000, 1, noise=True)
    res = train(cnn1d(3, 8, seed=0), ds, TrainConfig(epochs=5, seed=0))
    assert 0.45 <= res.metrics["auc"] <= 0.55


def test_training_deterministic():
    ds = toy_dataset(600, 2)
    a = train(cnn1d(3, 8, seed=4), ds, TrainConfig(epochs=3, seed=4))
    b = train(cnn1d(3, 8, seed=4), ds, TrainConfig(epochs=3, seed=4))
    assert np.array_equal(a.model.parameter_vector(), b.model.parameter_vector())
    assert a.curve == b.curve


def test_osla_heads_train_separately():
    ds = make_osla_dataset(CircuitFamily(build_layout(3), 0.02), 3000, 2)
    res = train(two_head_mlp(8, seed=0), ds, TrainConfig(epochs=3, seed=0))
    assert {"auc_stop_now", "auc_one_more", "loss"} <= set(res.metrics)
    shared = train(two_head_mlp(8, seed=0), ds, TrainConfig(epochs=1, seed=0, osla_loss="shared"))
    assert np.isfinite(shared.metrics["loss"])


def test_divergence_raises():
    model = cnn1d(3, 8)
    model.params[0][0, 0] = np.nan
    with pytest.raises(TrainingDiverged):
        train(model, toy_dataset(300, 0), TrainConfig(epochs=1))


def test_shape_mismatch_rejected():
    with pytest.raises(ValueError):
        train(cnn1d(4, 8), toy_dataset(100, 0), TrainConfig(epochs=1))


def test_checkpoint_roundtrip(tmp_path, rng):
    model = cnn1d(3, 8, seed=3)
    train(model, toy_dataset(300, 0), TrainConfig(epochs=1))
    data = save_checkpoint(model, tmp_path / "m.ckpt")
    assert data[:8] == b"ADABCKPT"
    back = load_checkpoint(tmp_path / "m.ckpt")
    assert np.array_equal(back.parameter_vector(), model.parameter_vector())
    for a, b in zip(back.buffers, model.buffers):
        assert np.array_equal(a, b)
    x = rng.integers(-1, 2, size=(7, 3, 8))
    assert np.array_equal(back.p_fail(x), model.p_fail(x))
    assert checkpoint_bytes(back) == data
    mlp = two_head_mlp(8, seed=1, hide_lookahead=False)
    assert checkpoint_from_bytes(checkpoint_bytes(mlp)).hide_lookahead is False
    with pytest.raises(ValueError):
        checkpoint_from_bytes(b"XXXXXXXX" + data[8:])


def test_loss_curve_csv():
    text = loss_curve_csv([{"epoch": 1, "train_loss": 0.5, "val_loss": 0.25, "val_auc": 0.75}])
    assert text == "epoch,train_loss,val_loss,val_auc\n1,0.5,0.25,0.75\n"


def test_evaluate_on_memory_data(circuit3, graph3):
    from adabort.mwpm import predict_flips

    b = sample_arrays(circuit3, 3000, 4)
    ok = (predict_flips(graph3, b.detector_matrix()) == b.flips).astype(np.uint8)
    ds = make_prefix_dataset(b, ok)
    out = evaluate(cnn1d(3, 8), ds)
    assert 0 <= out["auc"] <= 1 and out["loss"] > 0


def test_split_by_shot_keeps_prefixes_together(circuit3):
    b = sample_arrays(circuit3, 100, 0)
    ds = make_prefix_dataset(b, np.ones(100))
    tr, va = ds.split_by_shot(0.2, 0)
    assert len(va) == 60 and len(tr) == 240
    assert not set(tr.shots) & set(va.shots)


def test_circuit_family_caches(layout3):
    fam = CircuitFamily(layout3, 0.01)
    assert fam.circuit(2) is fam.circuit(2)
    assert fam.circuit(2).rounds == 2
    assert build_memory_circuit(layout3, 2, 0.01).to_text() == fam.circuit(2).to_text()
