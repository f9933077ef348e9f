"""Synthetic edit pairs and the token-level action classifier.

The classifier sees each token together with a +-2 token window and
predicts one of four edit actions for it. It is trained on sentences that
were deliberately corrupted so that the gold action of each token is known.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import nn
from . import tensor as T
from .errors import InputError
from .lm import train_ngram_lm
from .text import BOS_ID, EOS_ID, PAD_ID, RESERVED, content_ids


class EditAction(enum.IntEnum):
    COPY = 0
    REPLACE = 1
    INSERT = 2
    DELETE = 3


N_ACTIONS = len(EditAction)
DEFAULT_MIXTURE = {EditAction.COPY: 0.55, EditAction.REPLACE: 0.15,
                   EditAction.INSERT: 0.15, EditAction.DELETE: 0.15}


@dataclass(frozen=True)
class SyntheticPair:
    """A corrupted framed sentence and the gold action of every position."""

    ids: tuple
    actions: tuple

    def __post_init__(self):
        if len(self.ids) != len(self.actions):
            raise InputError("SyntheticPair needs one action per token")


def _best_filler(flm, prefix, exclude):
    probs = flm.next_token_distribution(prefix).copy()
    probs[list(exclude)] = -1.0
    return int(np.argmax(probs))


def corrupt_sentence(content, flm, rng, mixture=DEFAULT_MIXTURE, max_content=18):
    """One synthetic pair from a clean content-id list.

    Each content slot draws its label independently from ``mixture``:

    * copy    -> emit the next original token
    * replace -> emit the forward LM's best token other than the original
    * insert  -> drop the next original token and emit the one after it
    * delete  -> emit a spurious token (forward LM's best guess) before the
                 next original

    The walk stops once fewer than two originals remain, or the content
    budget is used up; any original left over is truncated and EOS is then
    labelled insert. Because stopping only depends on earlier draws, the
    label frequencies over content slots match ``mixture`` in expectation.
    """
    labels = np.array(list(mixture.keys()), dtype=np.int64)
    weights = np.array(list(mixture.values()), dtype=np.float64)
    weights = weights / weights.sum()
    reserved = set(range(len(RESERVED)))

    out, acts = [BOS_ID], [EditAction.COPY]
    i, n = 0, len(content)
    while n - i >= 2 and len(out) - 1 < max_content:
        act = EditAction(int(rng.choice(labels, p=weights)))
        if act == EditAction.COPY:
            out.append(content[i])
            i += 1
        elif act == EditAction.REPLACE:
            out.append(_best_filler(flm, out, reserved | {content[i]}))
            i += 1
        elif act == EditAction.INSERT:
            out.append(content[i + 1])
            i += 2
        else:
            out.append(_best_filler(flm, out, reserved | {content[i]}))
        acts.append(act)
    truncated = i < n
    out.append(EOS_ID)
    acts.append(EditAction.INSERT if truncated else EditAction.COPY)
    return SyntheticPair(tuple(int(x) for x in out), tuple(int(a) for a in acts))


def create_synthetic_pairs(sentences, vocab, rng_seed, flm=None, pairs_per_sentence=4,
                           mixture=DEFAULT_MIXTURE, max_content=18):
    """Corrupted copies of every sentence with >= 3 content tokens.

    ``sentences`` are id sequences. Fillers for replace/delete come from
    ``flm`` (an LM trained on ``sentences`` when not supplied).
    """
    sentences = [content_ids(s) for s in sentences]
    if not sentences:
        raise InputError("cannot create synthetic pairs from an empty corpus")
    if flm is None:
        flm = train_ngram_lm(sentences, len(vocab))
    rng = np.random.default_rng(rng_seed)
    pairs = []
    for content in sentences:
        if len(content) < 3:
            continue
        for _ in range(pairs_per_sentence):
            pairs.append(corrupt_sentence(content, flm, rng, mixture, max_content))
    return pairs


# -- classifier ---------------------------------------------------------------

WINDOW = 2


def window_ids(ids):
    """``(len, 2*WINDOW+1)`` ids of each position's neighbourhood, PAD outside."""
    ids = np.asarray(ids, dtype=np.int64)
    padded = np.concatenate([np.full(WINDOW, PAD_ID), ids, np.full(WINDOW, PAD_ID)])
    return np.stack([padded[j: j + len(ids)] for j in range(2 * WINDOW + 1)], axis=1)


class ActionClassifier(nn.Module):
    """Two-layer perceptron over concatenated window embeddings."""

    def __init__(self, vocab_size, emb_dim=16, hidden=64, seed=0):
        rng = np.random.default_rng(seed)
        self.vocab_size = vocab_size
        self.emb_dim = emb_dim
        self.hidden_dim = hidden
        self.embedding = nn.uniform_init(rng, (vocab_size, emb_dim), emb_dim)
        self.hidden = nn.Linear(rng, (2 * WINDOW + 1) * emb_dim, hidden)
        self.out = nn.Linear(rng, hidden, N_ACTIONS)

    def logits(self, windows):
        x = T.embedding(self.embedding, windows)
        x = x.reshape(windows.shape[0], -1)
        return self.out(T.relu(self.hidden(x)))

    def predict_proba(self, ids):
        """``(4, len)`` action probabilities for one framed sequence."""
        with T.no_grad():
            probs = T.softmax(self.logits(window_ids(ids)), axis=-1).data
        return probs.T

    def config(self):
        return {"vocab_size": self.vocab_size, "emb_dim": self.emb_dim, "hidden": self.hidden_dim}


def _pairs_to_arrays(pairs):
    windows = np.concatenate([window_ids(p.ids) for p in pairs])
    labels = np.concatenate([np.asarray(p.actions, dtype=np.int64) for p in pairs])
    return windows, labels


def accuracy(clf, pairs):
    windows, labels = _pairs_to_arrays(pairs)
    with T.no_grad():
        pred = clf.logits(windows).data.argmax(axis=-1)
    return float((pred == labels).mean())


def train_action_classifier(pairs, vocab_size, epochs=30, lr=1e-2, batch_size=256, seed=0,
                            emb_dim=16, hidden=64, history=None):
    """Cross-entropy training on per-token labels. Appends epoch losses to ``history``."""
    if len(pairs) < 100:
        raise InputError(f"need at least 100 synthetic pairs, got {len(pairs)}")
    clf = ActionClassifier(vocab_size, emb_dim, hidden, seed=seed)
    windows, labels = _pairs_to_arrays(pairs)
    opt = nn.Adam(clf.parameters(), lr=lr)
    rng = np.random.default_rng(seed)
    for _ in range(epochs):
        order = rng.permutation(len(labels))
        total = 0.0
        for start in range(0, len(order), batch_size):
            idx = order[start: start + batch_size]
            logp = T.log_softmax(clf.logits(windows[idx]), axis=-1)
            loss = -logp[np.arange(len(idx)), labels[idx]].mean()
            opt.zero_grad()
            T.backward(loss)
            opt.step()
            total += loss.item() * len(idx)
        if history is not None:
            history.append(total / len(labels))
    return clf


@dataclass
class ActionProbMatrix:
    """Per-position action probabilities; ``probs[r, t]`` = P(action r at t)."""

    probs: np.ndarray

    @property
    def row_sums(self):
        return self.probs.sum(axis=1)

    def masked(self, legal):
        """Zero out illegal (action, position) cells; ``legal`` is a bool (4, len) mask."""
        return ActionProbMatrix(np.where(legal, self.probs, 0.0))

    def best_action(self):
        return EditAction(int(np.argmax(self.row_sums)))


def action_probabilities(clf, ids):
    return ActionProbMatrix(clf.predict_proba(ids))
