import numpy as np
import pytest

from sleepstage.autodiff import AdamHyper, adam_step, ops, step_lr
from sleepstage.model import ModelConfig, SleepStager
from sleepstage.signal_io import Hypnogram, SynthConfig, synth_dataset
from sleepstage.training import (
    TrainConfig,
    ablation_suite,
    ablation_variants,
    cross_validate,
    evaluate,
    export_hypnogram,
    load_model,
    make_folds,
    predict_proba,
    prepare_subject,
    read_hypnogram_table,
    save_model,
    split_validation,
    train,
)
from sleepstage.training.trainer import merge_runs, training_runs

SMALL = dict(d_cnn=4, d_tr=8, num_heads=2, d_ff=8, transformer_layers=1, context_window=3, cnn_branch_channels=1, dropout=0.0)


def small(**kw) -> ModelConfig:
    return ModelConfig(**{**SMALL, **kw})


@pytest.fixture(scope="module")
def subjects():
    raw = synth_dataset(SynthConfig(seed=3, num_subjects=4, epochs_per_subject=14, context_coupled=True))
    return [prepare_subject(s) for s in raw]


def test_prepared_shapes(subjects):
    s = subjects[0]
    assert s.num_epochs == 14
    assert set(s.tokens) == {"EEG1", "EEG2", "EOG"}
    assert s.tokens["EOG"].shape == (14, 13, 300)


def test_prepare_rejects_other_rates():
    sub = synth_dataset(SynthConfig(seed=0, num_subjects=1, epochs_per_subject=7, sample_rate_hz=200))[0]
    with pytest.raises(ValueError, match="200 Hz"):
        prepare_subject(sub)


def test_training_runs_cover_each_epoch_once(subjects):
    runs = training_runs(subjects, 5, np.random.default_rng(0))
    seen = {}
    for si, a, b in runs:
        assert 0 < b - a <= 5
        for e in range(a, b):
            seen[(si, e)] = seen.get((si, e), 0) + 1
    assert len(seen) == sum(s.num_epochs for s in subjects)
    assert set(seen.values()) == {1}


def test_merged_windows_end_at_their_target(subjects):
    model = SleepStager(small(), seed=0)
    tokens, windows, labels = merge_runs(model, [(subjects[0], 0, 4), (subjects[1], 9, 12)])
    # second run starts 2 context epochs early, so it occupies rows 4..10
    assert tokens["EEG1"].shape[0] == 4 + 5
    assert windows[:, -1].tolist() == [0, 1, 2, 3, 6, 7, 8]
    assert windows[0].tolist() == [0, 0, 0]
    np.testing.assert_array_equal(labels, np.concatenate([subjects[0].labels[:4], subjects[1].labels[9:12]]))
    np.testing.assert_array_equal(tokens["EEG1"][4], subjects[1].tokens["EEG1"][7])


def test_learning_rate_trace_over_12_epochs(subjects):
    _, hist = train(subjects[:1], [], small(), TrainConfig(epochs=12, batch_size=16), seed=0)
    assert hist.learning_rate == pytest.approx([1e-3] * 5 + [1e-4] * 5 + [1e-5] * 2, rel=1e-12)
    assert hist.learning_rate == [step_lr(e, 1e-3, 5, 0.1) for e in range(12)]
    assert len(hist.train_loss) == 12 and hist.best_epoch == 11


def test_overfit_one_batch_within_200_steps(subjects):
    model = SleepStager(small(dropout=0.0), seed=1)
    tokens, windows, labels = merge_runs(model, [(subjects[0], 0, 8)])
    hyper = AdamHyper(1e-3, 0.0)
    losses = []
    for _ in range(200):
        model.store.zero_grad()
        loss = ops.cross_entropy(model.forward_chunk(tokens, windows, training=True), labels)
        loss.backward()
        adam_step(model.store, hyper, hyper.learning_rate)
        losses.append(float(loss.data))
        if losses[-1] < 0.05:
            break
    assert min(losses) < 0.05, losses[-5:]


def test_identical_seeds_identical_weights(subjects):
    cfg = TrainConfig(epochs=2, batch_size=8)
    a, _ = train(subjects[:2], subjects[2:3], small(dropout=0.2), cfg, seed=5, key=(1,))
    b, _ = train(subjects[:2], subjects[2:3], small(dropout=0.2), cfg, seed=5, key=(1,))
    c, _ = train(subjects[:2], subjects[2:3], small(dropout=0.2), cfg, seed=5, key=(2,))
    assert a.store.checksum() == b.store.checksum()
    assert a.store.checksum() != c.store.checksum()


def test_train_split_errors(subjects):
    with pytest.raises(ValueError, match="empty training"):
        train([], subjects[:1], small(), TrainConfig(epochs=1))
    with pytest.raises(AssertionError, match="both training and validation"):
        train(subjects[:2], subjects[1:2], small(), TrainConfig(epochs=1))


def test_best_validation_weights_are_returned(subjects):
    model, hist = train(subjects[:2], subjects[2:], small(), TrainConfig(epochs=3, batch_size=8), seed=0)
    report, _, _ = evaluate(model, subjects[2:])
    assert report.accuracy == max(hist.val_accuracy)
    assert hist.val_accuracy[hist.best_epoch] == report.accuracy


def test_split_validation():
    rng = np.random.default_rng(0)
    tr, va = split_validation([f"s{i}" for i in range(10)], 0.1, rng)
    assert len(va) == 1 and len(tr) == 9 and not set(tr) & set(va)
    assert split_validation(["a"], 0.5, rng) == (["a"], [])


def test_predict_and_evaluate(subjects):
    model = SleepStager(small(), seed=0)
    p = predict_proba(model, subjects[0], chunk=5)
    assert p.shape == (14, 5)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-5)
    # chunking does not change the result
    np.testing.assert_allclose(p, predict_proba(model, subjects[0], chunk=128), atol=1e-6)
    report, preds, nll = evaluate(model, subjects[:2])
    assert report.num_scored == 28 and set(preds) == {subjects[0].subject_id, subjects[1].subject_id}
    assert nll > 0
    with pytest.raises(ValueError, match="empty"):
        evaluate(model, [])


def test_save_load_round_trip(subjects, tmp_path):
    model, _ = train(subjects[:1], [], small(), TrainConfig(epochs=1), seed=0)
    save_model(model, tmp_path / "m")
    back = load_model(tmp_path / "m")
    assert back.config == model.config
    np.testing.assert_array_equal(predict_proba(back, subjects[1]), predict_proba(model, subjects[1]))


@pytest.fixture(scope="module")
def crossval(subjects):
    plan = make_folds([s.subject_id for s in subjects], 2, seed=0)
    return cross_validate(subjects, small(), TrainConfig(epochs=1, batch_size=8, val_fraction=0.5), plan, seed=0)


def test_crossval_aggregation(crossval):
    accs = [f.metrics.accuracy for f in crossval.folds]
    s = crossval.summary()
    assert s["accuracy_mean"] == pytest.approx(sum(accs) / len(accs), abs=1e-15)
    assert s["accuracy_std"] == pytest.approx(np.std(accs), abs=1e-15)
    np.testing.assert_array_equal(crossval.pooled.confusion, crossval.folds[0].metrics.confusion + crossval.folds[1].metrics.confusion)
    assert s["kappa_pooled"] == crossval.pooled.kappa


def test_crossval_covers_every_subject_once(crossval, subjects):
    held = [sid for f in crossval.folds for sid in f.test_subjects]
    assert sorted(held) == sorted(s.subject_id for s in subjects)
    for f in crossval.folds:
        assert not set(f.train_subjects) & set(f.test_subjects)
        assert not set(f.val_subjects) & set(f.test_subjects)
        assert not set(f.train_subjects) & set(f.val_subjects)
    assert set(crossval.predictions()) == set(held)


def test_crossval_parallel_matches_serial(crossval, subjects):
    par = cross_validate(subjects, small(), TrainConfig(epochs=1, batch_size=8, val_fraction=0.5), crossval.plan, seed=0, parallel=2)
    assert [f.checksum for f in par.folds] == [f.checksum for f in crossval.folds]
    assert par.to_dict() == crossval.to_dict()


def test_crossval_rejects_mismatched_plan(subjects):
    plan = make_folds(["x", "y"], 2, 0)
    with pytest.raises(ValueError, match="fold plan"):
        cross_validate(subjects, small(), TrainConfig(epochs=1), plan)


def test_hypnogram_export(crossval, subjects, tmp_path):
    by_id = {s.subject_id: s for s in subjects}
    for f in crossval.folds:
        matched = total = 0
        for sid in f.test_subjects:
            truth = Hypnogram(by_id[sid].labels)
            path = tmp_path / f"{sid}.tsv"
            agree = export_hypnogram(truth, Hypnogram(f.predictions[sid]), path)
            lines = path.read_text().splitlines()
            assert len(lines) == by_id[sid].num_epochs + 2
            assert lines[-1].startswith(f"# agreement={agree:.6f}")
            t, p = read_hypnogram_table(path)
            np.testing.assert_array_equal(t.labels, truth.labels)
            matched += round(agree * truth.labels.size)
            total += truth.labels.size
        assert matched / total == pytest.approx(f.metrics.accuracy, abs=1e-12)


def test_hypnogram_identical_and_mismatched(tmp_path):
    h = Hypnogram(np.array([0, 2, 2, 4]))
    assert export_hypnogram(h, h, tmp_path / "a.tsv") == 1.0
    with pytest.raises(ValueError, match="lengths differ"):
        export_hypnogram(h, Hypnogram(np.array([0])), tmp_path / "b.tsv")


def test_ablation_variant_grid():
    names = [n for n, _ in ablation_variants(small())]
    assert len(names) == len(set(names)) == 16
    for fusion in ("gcn", "concat"):
        for temporal in ("full", "cnn_only"):
            for mods in ("EEG1+EEG2+EOG", "EEG1", "EEG2", "EOG"):
                assert f"{fusion}/{temporal}/{mods}" in names


def test_ablation_rows_share_plan_and_differ_only_where_named(subjects):
    plan = make_folds([s.subject_id for s in subjects], 2, seed=0)
    picked = ["gcn/full/EOG", "gcn/cnn_only/EOG", "concat/full/EEG1+EEG2+EOG"]
    rows = ablation_suite(subjects, small(), TrainConfig(epochs=1, batch_size=8, val_fraction=0.0), plan, variants=picked)
    assert [r.name for r in rows] == [n for n, _ in ablation_variants(small()) if n in picked]
    assert all(r.result.plan == plan for r in rows)
    full, cnn = rows[0].result.model_config.to_dict(), rows[1].result.model_config.to_dict()
    assert {k for k in full if full[k] != cnn[k]} == {"temporal"}
    eog = rows[0]
    assert eog.result.model_config.modalities == ("EOG",)
    assert eog.result.pooled.num_scored == sum(s.num_epochs for s in subjects)
    assert eog.to_dict()["modalities"] == ["EOG"]
