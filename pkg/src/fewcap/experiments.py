"""Desk-scale experiments shared by the acceptance suite and ``scripts/``.

Each runner builds its own toy corpus in a temporary directory and returns
plain numbers, so callers decide how to report them.
"""

from __future__ import annotations

import tempfile
import time
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .classifier import accuracy, create_synthetic_pairs
from .config import TrainConfig
from .data import ToyGrammar, synth_data
from .pipeline import fit_scorers, few_shot_vocabulary, run_pseudo_label, train_records
from .pseudo import generate_candidates, repetition_rate
from .text import decode, encode, extract_keywords, few_shot, tokenize
from .train import captions_for, evaluate, load_features, train


# -- overfitting ----------------------------------------------------------------

@dataclass
class OverfitResult:
    epochs: int
    sentence_loss: float
    exact: int
    total: int
    seconds: float
    mismatches: dict = field(default_factory=dict)


def overfit(n_videos=16, seed=0, max_epochs=200, cfg=None, grammar=None, log=None):
    """Train on ``n_videos`` training videos, validating on the same videos.

    The target caption of a video is its visible GT sentence after the
    vocabulary round trip (``decode(encode(gt))``). Training stops early once
    the sentence loss is below 0.1 and every caption is reproduced.
    """
    grammar = grammar or ToyGrammar.default()
    cfg = cfg or TrainConfig.desk(seed=seed, n_pse=0, max_epochs=max_epochs, patience=max_epochs,
                                  early_stopping=False)
    start = time.perf_counter()
    with tempfile.TemporaryDirectory() as tmp:
        records = synth_data(grammar, n_videos, seed, tmp, fractions=(1.0, 0.0, 0.0))
        feats, _ = load_features(Path(tmp) / "features", records, cfg.encoder)
    vids = [r.video_id for r in records]
    state = {}

    def on_epoch(entry, model):
        caps = captions_for(model, vids, feats, state["vocab"])
        wrong = {v: caps[v] for v in vids if caps[v] != state["targets"][v]}
        state.update(entry=entry, wrong=wrong)
        if log:
            log(f"epoch {entry['epoch']} sentence {entry['sentence_loss']:.4f} "
                f"exact {len(vids) - len(wrong)}/{len(vids)}")
        return entry["sentence_loss"] < 0.1 and not wrong

    vocab = few_shot_vocabulary(records, cfg.gt_per_video)
    state["vocab"] = vocab
    state["targets"] = {r.video_id: decode(encode(tokenize(few_shot(r, 1)[0]), vocab,
                                                  cfg.encoder.len_s), vocab) for r in records}
    train(records, {}, feats, grammar.lexicon(), cfg, val_records=records, on_epoch=on_epoch)
    entry, wrong = state["entry"], state["wrong"]
    return OverfitResult(entry["epoch"], entry["sentence_loss"], len(vids) - len(wrong),
                         len(vids), time.perf_counter() - start, wrong)


# -- few supervision ------------------------------------------------------------

def few_supervision(seed, n_videos=200, n_pse=2, cfg=None, grammar=None):
    """Held-out test CIDEr-D for GT-only training and for GT plus ``n_pse`` pseudo labels."""
    grammar = grammar or ToyGrammar.default()
    base = cfg or TrainConfig.desk(seed=seed)
    scores = {}
    with tempfile.TemporaryDirectory() as tmp:
        records = synth_data(grammar, n_videos, seed, tmp)
        feats, _ = load_features(Path(tmp) / "features", records, base.encoder)
    for k in (0, n_pse):
        run_cfg = TrainConfig.from_dict({**base.to_dict(), "n_pse": k})
        items, _, _ = run_pseudo_label(records, grammar.lexicon(), run_cfg, set(feats))
        pseudo = {it.video_id: it.sentences for it in items}
        result = train(records, pseudo, feats, grammar.lexicon(), run_cfg)
        scores[k] = evaluate(result.checkpoint, records, feats).scores["CIDEr-D"]
    return scores[0], scores[n_pse]


# -- pseudo-labeler -------------------------------------------------------------

def repetition_rates(penalties=(1.0, 1.2), n_videos=100, seed=1, corpus_size=200, cfg=None,
                     grammar=None):
    """Mean repeated-content-token rate of generated candidates per penalty.

    Candidates come from the visible GT keywords of the first ``n_videos``
    training videos with fixed seeds.
    """
    grammar = grammar or ToyGrammar.default()
    cfg = cfg or TrainConfig.desk(seed=seed)
    lexicon = grammar.lexicon()
    with tempfile.TemporaryDirectory() as tmp:
        records = synth_data(grammar, corpus_size, seed, tmp)
    scorers = fit_scorers(records, lexicon, cfg)
    chosen = train_records(records)[:n_videos]
    rates = {}
    for penalty in penalties:
        per = []
        for rec in chosen:
            kw = extract_keywords(tokenize(few_shot(rec, 1)[0]), lexicon, scorers.vocab,
                                  cfg.encoder.n_word)
            cands = generate_candidates(kw, scorers.flm, scorers.blm, scorers.clf, T=cfg.T,
                                        penalty=penalty, rng_seed=cfg.seed,
                                        len_s=cfg.encoder.len_s)
            per += [repetition_rate(c) for c in cands]
        rates[penalty] = float(np.mean(per))
    return rates


@dataclass
class ClassifierScore:
    train_accuracy: float
    heldout_accuracy: float
    majority: float

    @property
    def margin(self):
        return self.heldout_accuracy - self.majority


def classifier_heldout(seed=1, corpus_size=200, cfg=None, grammar=None):
    """Action-classifier accuracy on synthetic pairs built from unseen test sentences.

    The majority baseline always predicts the most frequent held-out label.
    """
    grammar = grammar or ToyGrammar.default()
    cfg = cfg or TrainConfig.desk(seed=seed)
    with tempfile.TemporaryDirectory() as tmp:
        records = synth_data(grammar, corpus_size, seed, tmp)
    scorers = fit_scorers(records, grammar.lexicon(), cfg)
    len_s = cfg.encoder.len_s
    held = [encode(tokenize(r.sentences[1]), scorers.vocab, len_s)
            for r in records if r.split == "test"]
    pairs = create_synthetic_pairs(held, scorers.vocab, seed + 1000, flm=scorers.flm,
                                   max_content=len_s - 2)
    labels = Counter(a for p in pairs for a in p.actions)
    majority = max(labels.values()) / sum(labels.values())
    return ClassifierScore(accuracy(scorers.clf, scorers.pairs), accuracy(scorers.clf, pairs),
                           majority)
