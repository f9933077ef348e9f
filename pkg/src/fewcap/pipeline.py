"""End-to-end pseudo-labeling over a corpus.

Only the first ``gt_per_video`` sentences of each training video are ever
read (through :func:`fewcap.text.few_shot`); scorers are fitted on those.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

from .checkpoint import ModelCheckpoint, load_state, state_dict
from .classifier import ActionClassifier, create_synthetic_pairs, train_action_classifier
from .errors import FormatError, InputError
from .lm import BACKWARD, FORWARD, NGramLM, train_ngram_lm
from .pseudo import generate_candidates, select_pseudo_labels
from .scorer import ConceptOverlapScorer
from .text import Vocabulary, build_vocabulary, decode, encode, extract_keywords, few_shot, tokenize

log = logging.getLogger(__name__)


def train_records(records):
    return [r for r in records if r.split == "train"]


def few_shot_vocabulary(records, g):
    """Vocabulary over the ``g`` visible sentences of every training video."""
    return build_vocabulary([s for r in train_records(records) for s in few_shot(r, g)])


@dataclass
class Scorers:
    vocab: object
    flm: object
    blm: object
    clf: object
    scorer: object
    pairs: list = field(default_factory=list)


def fit_scorers(records, lexicon, cfg):
    g = cfg.gt_per_video
    vocab = few_shot_vocabulary(records, g)
    len_s = cfg.encoder.len_s
    encoded = [encode(tokenize(s), vocab, len_s)
               for r in train_records(records) for s in few_shot(r, g)]
    flm = train_ngram_lm(encoded, len(vocab), cfg.lm_order, cfg.lm_k, FORWARD)
    blm = train_ngram_lm(encoded, len(vocab), cfg.lm_order, cfg.lm_k, BACKWARD)
    pairs = create_synthetic_pairs(encoded, vocab, cfg.seed, flm=flm,
                                   pairs_per_sentence=cfg.clf_pairs, max_content=len_s - 2)
    clf = train_action_classifier(pairs, len(vocab), epochs=cfg.clf_epochs, seed=cfg.seed)
    scorer = ConceptOverlapScorer({r.video_id: r.concepts for r in records}, lexicon, vocab)
    return Scorers(vocab, flm, blm, clf, scorer, pairs)


@dataclass
class PseudoLabelRecord:
    video_id: str
    sentences: list
    scores: list
    params: dict

    def to_json(self):
        return json.dumps({"video_id": self.video_id, "sentences": self.sentences,
                           "scores": self.scores, "params": self.params}, sort_keys=True)


def pseudo_label_video(record, scorers, lexicon, cfg):
    g, len_s = cfg.gt_per_video, cfg.encoder.len_s
    candidates = []
    for sent in few_shot(record, g):
        kw = extract_keywords(tokenize(sent), lexicon, scorers.vocab, cfg.encoder.n_word)
        candidates += generate_candidates(kw, scorers.flm, scorers.blm, scorers.clf, T=cfg.T,
                                          penalty=cfg.penalty, rng_seed=cfg.seed, len_s=len_s)
    return select_pseudo_labels(candidates, record.video_id, scorers.scorer, cfg.n_pse)


def run_pseudo_label(records, lexicon, cfg, available=None, scorers=None):
    """Pseudo labels for every training video.

    ``available`` is the set of video ids with features; videos outside it are
    reported in the returned error map and skipped.
    """
    out, errors = [], {}
    if cfg.n_pse == 0:
        return out, errors, scorers
    scorers = scorers or fit_scorers(records, lexicon, cfg)
    params = {"T": cfg.T, "penalty": cfg.penalty, "seed": cfg.seed, "n_pse": cfg.n_pse,
              "gt_per_video": cfg.gt_per_video}
    for rec in train_records(records):
        if available is not None and rec.video_id not in available:
            errors[rec.video_id] = "missing features"
            log.warning("pseudo-label: %s has no features, skipped", rec.video_id)
            continue
        chosen = pseudo_label_video(rec, scorers, lexicon, cfg)
        out.append(PseudoLabelRecord(rec.video_id,
                                     [decode(ids, scorers.vocab) for ids in chosen.sentences],
                                     [round(s, 12) for s in chosen.scores], params))
    return out, errors, scorers


def write_pseudo_labels(items, path):
    Path(path).write_text("".join(it.to_json() + "\n" for it in items), encoding="utf-8")


def read_pseudo_labels(path):
    """video_id -> list of raw pseudo sentences."""
    result = {}
    with open(path, "rb") as fh:
        offset = 0
        for line in fh:
            if line.strip():
                try:
                    obj = json.loads(line.decode("utf-8"))
                    result[str(obj["video_id"])] = list(obj["sentences"])
                except (ValueError, KeyError) as exc:
                    raise FormatError(f"bad pseudo-label record: {exc}", offset) from None
            offset += len(line)
    return result


def check_splits(records):
    train = {r.video_id for r in records if r.split == "train"}
    if not train:
        raise InputError("corpus has no training videos")
    return train


# -- scorer persistence ---------------------------------------------------------

SCORER_FILES = {"vocab": "vocab.txt", "flm": "flm.txt", "blm": "blm.txt",
                "clf": "classifier.pkgc"}


def save_scorers(scorers, directory):
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    scorers.vocab.save(out / SCORER_FILES["vocab"])
    scorers.flm.save(out / SCORER_FILES["flm"])
    scorers.blm.save(out / SCORER_FILES["blm"])
    ModelCheckpoint({"classifier": scorers.clf.config()}, state_dict(scorers.clf),
                    {"kind": "action-classifier"}).save(out / SCORER_FILES["clf"])


def load_scorers(directory, records, lexicon):
    src = Path(directory)
    vocab = Vocabulary.load(src / SCORER_FILES["vocab"])
    flm = NGramLM.load(src / SCORER_FILES["flm"])
    blm = NGramLM.load(src / SCORER_FILES["blm"])
    ckpt = ModelCheckpoint.load(src / SCORER_FILES["clf"])
    clf = ActionClassifier(**ckpt.config["classifier"])
    load_state(clf, ckpt.tensors)
    scorer = ConceptOverlapScorer({r.video_id: r.concepts for r in records}, lexicon, vocab)
    return Scorers(vocab, flm, blm, clf, scorer)
