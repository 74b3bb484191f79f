import numpy as np
import pytest

from wordocr import ctc, dataset as D, network as N, trainer as T
from wordocr.imageproc import preprocess

TINY_NET = dict(conv_channels=(2, 3, 4), hidden=5)


@pytest.fixture(scope="module")
def corpus():
    samples, cs = D.synth_corpus(D.SynthConfig(alphabet_size=4, word_count=20, max_len=4))
    return samples, cs


def tiny_state(cs, cell="gru", seed=0):
    return T.new_checkpoint(N.NetworkConfig(num_classes=cs.num_classes, cell=cell, **TINY_NET), cs, seed)


def test_adam_single_step_by_hand():
    params = {"w": np.array(0.5)}
    state = T.AdamState.zeros_like(params)
    new, st = T.adam_step(params, {"w": np.array(1.0)}, state)
    assert st.m["w"] == pytest.approx(0.1, abs=1e-15)
    assert st.v["w"] == pytest.approx(0.001, abs=1e-15)
    assert st.step == 1
    assert new["w"] - 0.5 == pytest.approx(-0.000999999990, abs=1e-15)
    assert params["w"] == 0.5  # inputs untouched


def test_adam_zero_gradient_is_identity_on_params():
    rng = np.random.default_rng(0)
    params = {"a": rng.normal(size=(3, 2)), "b": rng.normal(size=4)}
    new, st = T.adam_step(params, {k: np.zeros_like(v) for k, v in params.items()},
                          T.AdamState.zeros_like(params))
    assert all(np.array_equal(new[k], params[k]) for k in params)
    assert st.step == 1


def test_adam_errors():
    params = {"a": np.zeros(3)}
    state = T.AdamState.zeros_like(params)
    with pytest.raises(ValueError):
        T.adam_step(params, {"a": np.zeros(2)}, state)
    with pytest.raises(ValueError):
        T.adam_step(params, {"b": np.zeros(3)}, state)
    with pytest.raises(N.NonFiniteError, match="a"):
        T.adam_step(params, {"a": np.array([0.0, np.nan, 0.0])}, state)


def test_adam_deterministic():
    rng = np.random.default_rng(1)
    params = {"a": rng.normal(size=5)}
    grads = {"a": rng.normal(size=5)}
    s = T.AdamState.zeros_like(params)
    x1, s1 = T.adam_step(params, grads, s)
    x2, s2 = T.adam_step(params, grads, s)
    assert np.array_equal(x1["a"], x2["a"]) and np.array_equal(s1.v["a"], s2.v["a"])


def test_config_validation():
    with pytest.raises(ValueError):
        T.TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        T.TrainConfig(learning_rate=0.0)
    assert T.TrainConfig().batch_size == 16 and T.TrainConfig().learning_rate == 0.001


def test_batch_loss_is_mean_of_sample_losses(corpus):
    samples, cs = corpus
    state = tiny_state(cs)
    images = np.stack([preprocess(s.image) for s in samples[:6]])
    labels = [cs.encode(s.transcript) for s in samples[:6]]
    loss, grads, losses = T.batch_loss_and_grads(state.params, images, labels)
    singles = [ctc.ctc_loss(N.forward(state.params, im), lab) for im, lab in zip(images, labels)]
    assert abs(loss - np.mean(singles)) < 1e-12
    np.testing.assert_allclose(losses, singles, atol=1e-12)
    # gradient of the mean equals the mean of per-sample gradients
    per = [T.batch_loss_and_grads(state.params, images[i:i + 1], labels[i:i + 1])[1]
           for i in range(6)]
    for k in grads:
        np.testing.assert_allclose(grads[k], sum(p[k] for p in per) / 6, atol=1e-12)


def test_one_step_per_16_samples(corpus):
    samples, cs = corpus
    state = tiny_state(cs)
    log = T.train_epoch(state, samples[:16], 1, T.TrainConfig(augment=False))
    assert log.steps == 1 and state.adam.step == 1
    log = T.train_epoch(state, samples[:17], 2, T.TrainConfig(augment=False))
    assert log.steps == 2  # partial last batch kept


@pytest.mark.parametrize("augment", [False, True])
def test_epoch_replay_is_bitwise(corpus, augment):
    samples, cs = corpus
    cfg = T.TrainConfig(augment=augment, batch_size=8, seed=3)
    a, b = tiny_state(cs), tiny_state(cs)
    la = T.train_epoch(a, samples, 4, cfg)
    lb = T.train_epoch(b, samples, 4, cfg)
    assert la == lb
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)


def test_sample_seed_depends_on_all_parts():
    base = T.sample_seed(0, "p#1", 1).generate_state(2).tolist()
    assert T.sample_seed(0, "p#1", 1).generate_state(2).tolist() == base
    for other in (T.sample_seed(1, "p#1", 1), T.sample_seed(0, "p#2", 1), T.sample_seed(0, "p#1", 2)):
        assert other.generate_state(2).tolist() != base


def test_unproducible_target_rejected(corpus):
    _, cs = corpus
    state = tiny_state(cs)
    bad = D.WordSample(np.full((20, 60), 255, np.uint8), "a" * 26, "x#0")
    with pytest.raises(ctc.UnproducibleTargetError):
        T.train_epoch(state, [bad], 1, T.TrainConfig(augment=False))


def test_non_finite_loss_names_batch(corpus, monkeypatch):
    samples, cs = corpus
    state = tiny_state(cs)
    monkeypatch.setattr(T, "batch_loss_and_grads",
                        lambda p, im, lab: (float("nan"), None, np.full(len(lab), np.nan)))
    with pytest.raises(T.TrainingError, match="batch 0"):
        T.train_epoch(state, samples, 1, T.TrainConfig(augment=False))


def test_evaluate_charset_mismatch(corpus):
    samples, cs = corpus
    state = tiny_state(cs)
    alien = D.WordSample(samples[0].image, "zz", "x#0")
    with pytest.raises(T.CharsetMismatchError):
        T.evaluate_split(state, [alien])


def test_untrained_uniform_model_has_wer_one(corpus):
    samples, cs = corpus
    state = tiny_state(cs)
    state.params = {k: np.zeros_like(v) for k, v in state.params.items()}
    rep = T.evaluate_split(state, samples, "test")
    assert rep.wer == 1.0
    assert rep.samples[0].hyp == cs.decode([0])  # uniform rows: ties go to the lowest id


def test_evaluate_deterministic_and_decoder_names(corpus):
    samples, cs = corpus
    state = tiny_state(cs)
    a = T.evaluate_split(state, samples, "val")
    b = T.evaluate_split(state, samples, "val")
    assert a.to_json() == b.to_json() and a.decoder == "greedy"
    assert T.evaluate_split(state, samples[:3], "val", "beam", beam_width=4).decoder == "beam4"
    with pytest.raises(ValueError):
        T.decode(np.full((2, 3), 1 / 3), "viterbi")


def test_checkpoint_round_trip_is_bitwise(tmp_path, corpus):
    samples, cs = corpus
    state = tiny_state(cs, cell="lstm")
    T.train_epoch(state, samples, 1, T.TrainConfig(augment=False, batch_size=10))
    state.epoch, state.best_val_loss = 1, 3.25
    path = tmp_path / "m.ckpt"
    cid = state.save(path)
    raw = path.read_bytes()
    assert raw[:8] == b"OCRFCKPT"
    back = T.Checkpoint.load(path)
    assert back.to_bytes() == raw and back.checkpoint_id == cid
    assert back.config == state.config and back.charset == cs
    assert back.epoch == 1 and back.best_val_loss == 3.25 and back.adam.step == state.adam.step
    assert all(np.array_equal(back.params[k], state.params[k]) for k in state.params)
    ra = T.evaluate_split(state, samples, "test", seed=0)
    rb = T.evaluate_split(back, samples, "test", seed=0)
    assert ra.to_json() == rb.to_json()


def test_checkpoint_rejects_garbage():
    with pytest.raises(ValueError):
        T.Checkpoint.from_bytes(b"NOTACKPT" + bytes(16))


def test_new_checkpoint_checks_width(corpus):
    _, cs = corpus
    with pytest.raises(ValueError):
        T.new_checkpoint(N.NetworkConfig(num_classes=cs.num_classes + 1, **TINY_NET), cs)


def test_fit_zero_epochs_returns_init(corpus):
    samples, cs = corpus
    net = N.NetworkConfig(num_classes=cs.num_classes, **TINY_NET)
    res = T.fit(samples[:10], samples[10:], cs, net, T.TrainConfig(max_epochs=0))
    assert res.curve == []
    init = T.new_checkpoint(net, cs, 0)
    assert res.best.to_bytes() == init.to_bytes()
    assert res.curve_csv() == T.CURVE_HEADER + "\n"


def test_fit_keeps_min_val_loss(corpus):
    samples, cs = corpus
    net = N.NetworkConfig(num_classes=cs.num_classes, **TINY_NET)
    res = T.fit(samples[:12], samples[12:], cs, net, T.TrainConfig(max_epochs=4, augment=False))
    assert len(res.curve) == 4
    val = [row[2] for row in res.curve]
    assert res.best.best_val_loss == min(val)
    assert res.best.epoch == 1 + int(np.argmin(val))
    assert res.last.epoch == 4
    lines = res.curve_csv().splitlines()
    assert lines[0] == "epoch,train_loss,val_loss,val_cer,val_wer" and len(lines) == 5


def test_fit_patience_stops_early(corpus, monkeypatch):
    samples, cs = corpus
    net = N.NetworkConfig(num_classes=cs.num_classes, **TINY_NET)
    losses = iter([5.0, 4.0, 4.5, 4.5, 4.5, 1.0])
    real = T.evaluate_split

    def fake(*args, **kwargs):
        rep = real(*args, **kwargs)
        rep.loss = next(losses)
        return rep

    monkeypatch.setattr(T, "evaluate_split", fake)
    res = T.fit(samples[:8], samples[8:12], cs, net,
                T.TrainConfig(max_epochs=6, augment=False, patience=2))
    assert len(res.curve) == 4 and res.best.epoch == 2


def test_fit_resumes_from_checkpoint(corpus):
    samples, cs = corpus
    net = N.NetworkConfig(num_classes=cs.num_classes, **TINY_NET)
    cfg = T.TrainConfig(max_epochs=2, augment=False, batch_size=6)
    full = T.fit(samples[:12], samples[12:], cs, net, T.TrainConfig(max_epochs=4, augment=False,
                                                                     batch_size=6))
    half = T.fit(samples[:12], samples[12:], cs, net, cfg)
    rest = T.fit(samples[:12], samples[12:], cs, net, cfg, init=half.last)
    assert [r[0] for r in rest.curve] == [3, 4]
    assert rest.curve == full.curve[2:]


def test_reference_loss_decreases_over_first_epochs():
    samples, cs = D.synth_corpus(D.SynthConfig(word_count=10))
    state = T.new_checkpoint(N.NetworkConfig(num_classes=cs.num_classes), cs, 0)
    cfg = T.TrainConfig(seed=0)
    losses = [T.train_epoch(state, samples, e, cfg).mean_loss for e in range(1, 6)]
    assert all(b < a for a, b in zip(losses, losses[1:])), losses
