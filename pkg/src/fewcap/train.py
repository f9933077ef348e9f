"""Training loop, early stopping, evaluation."""

from __future__ import annotations

import logging
import math
import os
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import nn
from . import tensor as T
from .checkpoint import ModelCheckpoint, load_state, state_dict
from .config import EncoderConfig, TrainConfig
from .data import ingest_features, read_feature_file
from .errors import FewcapError, InputError
from .metrics import cider_d, evaluate_captions
from .model import (CaptionModel, empty_keywords, greedy_decode, sentence_loss, shift_targets,
                    total_loss, word_loss)
from .pipeline import few_shot_vocabulary, train_records
from .text import Vocabulary, decode, encode, extract_keywords, few_shot, tokenize

log = logging.getLogger(__name__)


class TrainingAborted(FewcapError):
    kind = "nan"


# -- data ---------------------------------------------------------------------

def load_features(feature_dir, records, enc: EncoderConfig):
    """video_id -> resampled VideoFeatures; unreadable videos are left out."""
    feats, errors = {}, {}
    widths = (enc.d_a, enc.d_m, enc.d_o)
    for rec in records:
        path = Path(feature_dir) / f"{rec.video_id}.pkgf"
        try:
            raw = read_feature_file(path, widths)
        except FileNotFoundError:
            errors[rec.video_id] = "missing features"
            continue
        except FewcapError as exc:
            errors[rec.video_id] = str(exc)
            continue
        feats[rec.video_id] = ingest_features(raw, enc.N, enc.N_obj, rec.video_id)
    return feats, errors


@dataclass
class Instance:
    video_id: str
    gt: np.ndarray            # framed ids (len_s,)
    pseudo: np.ndarray
    keywords: np.ndarray      # refiner input, from the pseudo sentence
    gt_keywords: np.ndarray   # word-loss reference side


def build_instances(records, pseudo, features, vocab, lexicon, cfg):
    """Round-robin (gt, pseudo) pairs for every training video with features.

    Without pseudo sentences a video contributes ``(gt, gt)`` pairs.
    """
    enc, g = cfg.encoder, cfg.gt_per_video
    out = []
    for rec in train_records(records):
        if rec.video_id not in features:
            continue
        gts = [tokenize(s) for s in few_shot(rec, g)]
        pses = [tokenize(s) for s in pseudo.get(rec.video_id, [])]
        for i in range(max(len(gts), len(pses))):
            gt = gts[i % len(gts)]
            ps = pses[i % len(pses)] if pses else gt
            out.append(Instance(
                rec.video_id, encode(gt, vocab, enc.len_s), encode(ps, vocab, enc.len_s),
                extract_keywords(ps, lexicon, vocab, enc.n_word).array(),
                extract_keywords(gt, lexicon, vocab, enc.n_word).array()))
    return out


def video_batch(video_ids, features, keywords=None, n_word=4):
    feats = [features[v] for v in video_ids]
    kw = empty_keywords(n_word, len(feats)) if keywords is None else np.asarray(keywords)
    return {"appearance": np.stack([f.appearance for f in feats]),
            "motion": np.stack([f.motion for f in feats]),
            "object": np.stack([f.object for f in feats]), "keywords": kw}


# -- loss ---------------------------------------------------------------------

def batch_loss(model, instances, features, cfg, rng=None):
    """(total, sentence, word) for a list of instances.

    Keywords are replaced by the empty sequence with probability
    ``keyword_dropout`` (needs ``rng``) so the model also learns to caption
    from video alone, which is how it is used at inference.
    """
    enc = cfg.encoder
    kws = np.stack([ins.keywords for ins in instances])
    if rng is not None and cfg.keyword_dropout > 0:
        drop = rng.random(len(instances)) < cfg.keyword_dropout
        kws[drop] = empty_keywords(enc.n_word, int(drop.sum()))
    batch = video_batch([ins.video_id for ins in instances], features, kws, enc.n_word)
    gt = np.stack([ins.gt for ins in instances])
    ps = np.stack([ins.pseudo for ins in instances])
    same = np.array_equal(gt, ps)
    outs, refined = model.forward(batch, [gt] if same else [gt, ps])
    logp_gt = T.log_softmax(outs[0], axis=-1)
    logp_ps = logp_gt if same else T.log_softmax(outs[1], axis=-1)
    sen = sentence_loss(logp_gt, shift_targets(gt), shift_targets(ps), exclude_pad=cfg.exclude_pad,
                        P_pseudo=logp_ps, log_probs=True)
    ref, _ = model.reference_keywords(np.stack([ins.gt_keywords for ins in instances]))
    word, _ = word_loss(model.pooled_keywords(refined), ref)
    return total_loss(sen, word), sen, word


# -- early stopping -----------------------------------------------------------

class EarlyStopper:
    """Tracks the best score; ``update`` returns True when training should stop."""

    def __init__(self, patience):
        self.patience = patience
        self.best = -math.inf
        self.best_epoch = -1
        self.bad = 0

    def update(self, score, epoch):
        if score > self.best:
            self.best, self.best_epoch, self.bad = score, epoch, 0
            return False
        self.bad += 1
        return self.bad >= self.patience

    @property
    def improved(self):
        return self.bad == 0


# -- training -----------------------------------------------------------------

def captions_for(model, video_ids, features, vocab, batch_size=64):
    out = {}
    for start in range(0, len(video_ids), batch_size):
        ids = video_ids[start:start + batch_size]
        decoded = greedy_decode(model, video_batch(ids, features, n_word=model.cfg.n_word))
        for vid, row in zip(ids, decoded):
            out[vid] = decode(row, vocab)
    return out


def validation_cider(model, records, features, vocab, g):
    vids = [r.video_id for r in records if r.video_id in features]
    if not vids:
        return 0.0
    caps = captions_for(model, vids, features, vocab)
    refs = {r.video_id: [tokenize(s) for s in few_shot(r, g)]
            for r in records if r.video_id in features}
    return cider_d([caps[v].split() for v in vids], [refs[v] for v in vids]).score


@dataclass
class TrainResult:
    model: CaptionModel
    vocab: Vocabulary
    checkpoint: ModelCheckpoint
    history: list = field(default_factory=list)
    best_epoch: int = -1
    best_cider: float = 0.0


def make_checkpoint(model, vocab, cfg, epoch, best_cider):
    config = {"train": cfg.to_dict(), "vocab": vocab.tokens, "vocab_min_freq": vocab.min_freq}
    meta = {"epoch": epoch, "best_cider": round(float(best_cider), 12), "seed": cfg.seed}
    return ModelCheckpoint(config, state_dict(model), meta)


def model_from_checkpoint(ckpt):
    cfg = TrainConfig.from_dict(ckpt.config["train"])
    vocab = Vocabulary(ckpt.config["vocab"], ckpt.config.get("vocab_min_freq", 2))
    model = CaptionModel(cfg.encoder, len(vocab), seed=cfg.seed)
    load_state(model, ckpt.tensors)
    return model, vocab, cfg


def train(records, pseudo, features, lexicon, cfg: TrainConfig, val_records=None,
          checkpoint_path=None, on_epoch=None):
    """Fit a captioning model; returns the best-epoch model and checkpoint.

    ``val_records`` defaults to the corpus ``val`` split. Early stopping and
    learning-rate decay are driven by validation CIDEr-D.
    """
    g = cfg.gt_per_video
    vocab = few_shot_vocabulary(records, g)
    val_records = [r for r in records if r.split == "val"] if val_records is None else val_records
    instances = build_instances(records, pseudo, features, vocab, lexicon, cfg)
    if not instances:
        raise InputError("no training instances (missing features?)")
    model = CaptionModel(cfg.encoder, len(vocab), seed=cfg.seed)
    opt = nn.Adam(model.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    rng = np.random.default_rng([cfg.seed, 1])
    stopper = EarlyStopper(cfg.patience)
    best_state = state_dict(model)
    result = TrainResult(model, vocab, None)

    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(len(instances))
        sums = np.zeros(3)
        for start in range(0, len(order), cfg.batch_size):
            chunk = [instances[i] for i in order[start:start + cfg.batch_size]]
            total, sen, word = batch_loss(model, chunk, features, cfg, rng)
            if not np.isfinite(total.item()):
                if checkpoint_path is not None and result.checkpoint is not None:
                    result.checkpoint.save(checkpoint_path)
                raise TrainingAborted(f"non-finite loss at epoch {epoch} "
                                      f"(sentence={sen.item()}, word={word.item()}); "
                                      "last good checkpoint kept")
            opt.zero_grad()
            T.backward(total)
            opt.step()
            sums += np.array([total.item(), sen.item(), word.item()]) * len(chunk)
        sums /= len(instances)
        cider = validation_cider(model, val_records, features, vocab, g)
        stop = stopper.update(cider, epoch) if cfg.early_stopping else False
        if cfg.early_stopping and not stopper.improved and stopper.bad % cfg.plateau_interval == 0:
            opt.lr *= cfg.lr_decay
        if not cfg.early_stopping or stopper.improved:
            best_state = state_dict(model)
            result.best_epoch, result.best_cider = epoch, cider
            result.checkpoint = make_checkpoint(model, vocab, cfg, epoch, cider)
            if checkpoint_path is not None:
                result.checkpoint.save(checkpoint_path)
        entry = {"epoch": epoch, "loss": sums[0], "sentence_loss": sums[1], "word_loss": sums[2],
                 "val_cider": cider, "lr": opt.lr}
        result.history.append(entry)
        log.info("epoch %d loss %.4f sentence %.4f word %.4f val CIDEr-D %.4f lr %.2e",
                 epoch, *sums, cider, opt.lr)
        if on_epoch is not None and on_epoch(entry, model):
            break
        if stop:
            break

    load_state(model, best_state)
    return result


# -- evaluation ---------------------------------------------------------------

def evaluate(ckpt, records, features, split="test"):
    model, vocab, _ = model_from_checkpoint(ckpt)
    pool = [r for r in records if r.split == split and r.video_id in features]
    if not pool:
        raise InputError(f"no {split} videos with features")
    caps = captions_for(model, [r.video_id for r in pool], features, vocab)
    refs = {r.video_id: [" ".join(tokenize(s)) for s in r.sentences] for r in pool}
    return evaluate_captions(caps, refs)


@contextmanager
def directory_lock(directory):
    """Exclusive ownership of an output directory for one training run."""
    path = Path(directory) / ".lock"
    Path(directory).mkdir(parents=True, exist_ok=True)
    try:
        fd = os.open(path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise InputError(f"{directory} is locked by another run ({path})") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        path.unlink(missing_ok=True)
