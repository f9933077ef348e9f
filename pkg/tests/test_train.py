import pytest

from fewcap import train as train_mod
from fewcap.config import EncoderConfig, TrainConfig
from fewcap.checkpoint import ModelCheckpoint
from fewcap.errors import FormatError, InputError
from fewcap.model import CaptionModel
from fewcap.text import RESERVED, Vocabulary
from fewcap.train import (EarlyStopper, TrainingAborted, directory_lock, evaluate,
                          load_features, make_checkpoint, train)


def small_cfg(**kw):
    base = dict(encoder=EncoderConfig(d=32, heads=2, L_decoder=1), max_epochs=3, patience=3)
    base.update(kw)
    return TrainConfig.desk(**base)


@pytest.fixture(scope="module")
def corpus60(toy_corpus):
    records, directory = toy_corpus
    return records[:60], directory


def features(corpus, cfg):
    records, directory = corpus
    return load_features(directory / "features", records, cfg.encoder)[0]


# -- early stopping ---------------------------------------------------------------

@pytest.mark.parametrize("patience", [1, 3, 5])
def test_stops_after_patience_stagnant_evaluations(patience):
    stopper = EarlyStopper(patience)
    scores = [0.1, 0.4, 0.9] + [0.9, 0.5] * 10
    evals_after_best = None
    for i, s in enumerate(scores):
        if stopper.update(s, i):
            evals_after_best = i - stopper.best_epoch + 1
            break
    assert stopper.best_epoch == 2
    assert evals_after_best == patience + 1


def test_stopper_resets_on_improvement():
    stopper = EarlyStopper(2)
    assert not stopper.update(1.0, 0) and not stopper.update(0.5, 1)
    assert not stopper.update(2.0, 2) and stopper.improved
    assert not stopper.update(1.0, 3) and stopper.update(1.0, 4)


# -- training ---------------------------------------------------------------------

def test_seeded_runs_have_identical_trajectories(corpus60, grammar):
    cfg = small_cfg(max_epochs=2, patience=2)
    feats = features(corpus60, cfg)
    a = train(corpus60[0], {}, feats, grammar.lexicon(), cfg)
    b = train(corpus60[0], {}, feats, grammar.lexicon(), cfg)
    assert a.history == b.history
    assert a.checkpoint.to_bytes() == b.checkpoint.to_bytes()
    for entry in a.history:
        assert {"loss", "sentence_loss", "word_loss", "val_cider", "lr"} <= set(entry)
        assert entry["loss"] == pytest.approx(entry["sentence_loss"] + entry["word_loss"])


def test_trained_model_beats_untrained(corpus60, grammar):
    cfg = small_cfg(max_epochs=15, patience=15)
    records, _ = corpus60
    feats = features(corpus60, cfg)
    result = train(records, {}, feats, grammar.lexicon(), cfg)
    untrained = CaptionModel(cfg.encoder, len(result.vocab), seed=cfg.seed)
    blank = make_checkpoint(untrained, result.vocab, cfg, 0, 0.0)
    before = evaluate(blank, records, feats).scores["CIDEr-D"]
    after = evaluate(result.checkpoint, records, feats).scores["CIDEr-D"]
    assert after > before
    again = evaluate(result.checkpoint, records, feats)
    assert again.to_json() == evaluate(result.checkpoint, records, feats).to_json()


def test_plateau_decays_learning_rate(corpus60, grammar, monkeypatch):
    cfg = small_cfg(max_epochs=5, patience=4, decay_interval=1)
    monkeypatch.setattr(train_mod, "validation_cider", lambda *a: 0.0)
    result = train(corpus60[0], {}, features(corpus60, cfg), grammar.lexicon(), cfg)
    lrs = [e["lr"] for e in result.history]
    assert lrs[0] == cfg.lr and lrs[1:] == [cfg.lr * 0.5 ** k for k in range(1, len(lrs))]
    assert len(lrs) == 5 and result.best_epoch == 1


def test_nan_loss_aborts_and_keeps_last_good_checkpoint(corpus60, grammar, monkeypatch, tmp_path):
    cfg = small_cfg(max_epochs=3)
    real = train_mod.batch_loss
    calls = {"n": 0}
    n_batches = -(-sum(r.split == "train" for r in corpus60[0]) // cfg.batch_size)

    def flaky(*args, **kw):
        calls["n"] += 1
        total, sen, word = real(*args, **kw)
        if calls["n"] > n_batches:
            total = total * float("nan")
        return total, sen, word

    monkeypatch.setattr(train_mod, "batch_loss", flaky)
    path = tmp_path / "model.pkgc"
    with pytest.raises(TrainingAborted, match="non-finite loss at epoch 2"):
        train(corpus60[0], {}, features(corpus60, cfg), grammar.lexicon(), cfg,
              checkpoint_path=path)
    assert ModelCheckpoint.load(path).metadata["epoch"] == 1


def test_no_instances_is_an_input_error(corpus60, grammar):
    with pytest.raises(InputError):
        train(corpus60[0], {}, {}, grammar.lexicon(), small_cfg())


def test_evaluate_rejects_empty_split(corpus60, grammar):
    cfg = small_cfg(max_epochs=1, patience=1)
    result = train(corpus60[0], {}, features(corpus60, cfg), grammar.lexicon(), cfg)
    with pytest.raises(InputError):
        evaluate(result.checkpoint, corpus60[0], {}, split="test")


def test_checkpoint_version_mismatch_rejected_at_load(tmp_path):
    cfg = small_cfg()
    vocab = Vocabulary(list(RESERVED) + ["a", "b"])
    model = CaptionModel(cfg.encoder, len(vocab))
    blob = bytearray(make_checkpoint(model, vocab, cfg, 1, 0.5).to_bytes())
    blob[4] = 2
    (tmp_path / "m.pkgc").write_bytes(bytes(blob))
    with pytest.raises(FormatError):
        ModelCheckpoint.load(tmp_path / "m.pkgc")


def test_directory_lock_is_exclusive(tmp_path):
    with directory_lock(tmp_path):
        with pytest.raises(InputError, match="locked"):
            with directory_lock(tmp_path):
                pass
    with directory_lock(tmp_path):
        assert (tmp_path / ".lock").exists()
    assert not (tmp_path / ".lock").exists()
