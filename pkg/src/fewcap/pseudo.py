"""Lexically constrained candidate generation and pseudo-label selection.

Starting from a keyword sequence, the generator repeatedly asks the action
classifier what to do, applies the strongest legal edit that the classifier
prefers to copying (see :func:`choose_edit`), fills replace/insert slots with the token favoured by both the forward and
the backward LM, and snapshots the sentence after every step. Keyword,
BOS and EOS positions are protected: they may be shifted by insertions but
never replaced or deleted, so every snapshot keeps the keywords in order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .classifier import EditAction, action_probabilities
from .errors import ConstraintError, InputError, OverflowEdit
from .text import BOS_ID, EOS_ID, RESERVED, content_ids, frame

RESERVED_IDS = tuple(range(len(RESERVED)))


@dataclass(frozen=True)
class EditState:
    ids: tuple
    protected: frozenset
    len_s: int
    min_len: int
    history: tuple = ()

    @classmethod
    def from_keywords(cls, keywords, len_s):
        kw = list(keywords.keywords) if hasattr(keywords, "keywords") else list(keywords)
        ids = tuple([BOS_ID] + [int(k) for k in kw] + [EOS_ID])
        if len(ids) > len_s:
            raise InputError(f"{len(kw)} keywords do not fit in len_s={len_s}")
        return cls(ids, frozenset(range(len(ids))), len_s, len(ids))

    def __len__(self):
        return len(self.ids)

    @property
    def keyword_ids(self):
        return [self.ids[p] for p in sorted(self.protected) if 0 < p < len(self.ids) - 1]

    def sentence(self):
        return frame(self.ids[1:-1], self.len_s)


def _penalized(dist, present, penalty, forbidden):
    scores = np.asarray(dist, dtype=np.float64).copy()
    if len(present):
        scores[present] /= penalty
    if len(forbidden):
        scores[forbidden] = 0.0
    return scores / scores.sum()


def replacement_distribution(flm, blm, state, t, penalty=1.2, insert=False,
                             forbidden=RESERVED_IDS):
    """Distribution of the token to put at position ``t``.

    Forward factor: p_FLM(j | ids[:t]); backward factor: p_BLM(j | reversed
    suffix). Each factor is divided by ``penalty`` for tokens already in the
    sentence, renormalised, and the product is renormalised. With
    ``insert=True`` the new token goes *before* ``ids[t]`` so the suffix
    starts at ``t``.
    """
    if penalty < 1:
        raise InputError("repetition penalty must be >= 1")
    ids = state.ids
    if insert:
        if not 1 <= t <= len(ids) - 1:
            raise ConstraintError(f"cannot insert before position {t}")
        prefix, suffix = ids[:t], ids[t:]
    else:
        if t in state.protected or not 0 < t < len(ids) - 1:
            raise ConstraintError(f"position {t} is protected")
        prefix, suffix = ids[:t], ids[t + 1:]
    present = np.unique(np.asarray(ids, dtype=np.int64))
    forbidden = np.asarray(forbidden, dtype=np.int64)
    fwd = _penalized(flm.next_token_distribution(prefix), present, penalty, forbidden)
    bwd = _penalized(blm.next_token_distribution(suffix[::-1]), present, penalty, forbidden)
    prod = fwd * bwd
    return prod / prod.sum()


def apply_edit(state, action, position, token=None):
    action = EditAction(action)
    ids = list(state.ids)
    needs_token = action in (EditAction.REPLACE, EditAction.INSERT)
    if needs_token != (token is not None):
        raise InputError(f"{action.name.lower()} {'needs' if needs_token else 'takes no'} token")
    record = state.history + ((int(action), int(position), None if token is None else int(token)),)

    if action == EditAction.COPY:
        return EditState(state.ids, state.protected, state.len_s, state.min_len, record)

    if action == EditAction.INSERT:
        if not 1 <= position <= len(ids) - 1:
            raise ConstraintError(f"cannot insert before position {position}")
        if len(ids) + 1 > state.len_s:
            raise OverflowEdit(f"insert would exceed len_s={state.len_s}")
        ids.insert(position, int(token))
        protected = frozenset(p + 1 if p >= position else p for p in state.protected)
        return EditState(tuple(ids), protected, state.len_s, state.min_len, record)

    if position in state.protected or not 0 < position < len(ids) - 1:
        raise ConstraintError(f"position {position} is protected")
    if action == EditAction.REPLACE:
        ids[position] = int(token)
        return EditState(tuple(ids), state.protected, state.len_s, state.min_len, record)

    if len(ids) - 1 < state.min_len:
        raise ConstraintError("delete would shrink the sentence below its keyword length")
    del ids[position]
    protected = frozenset(p - 1 if p > position else p for p in state.protected)
    return EditState(tuple(ids), protected, state.len_s, state.min_len, record)


def legal_mask(state):
    """``(4, len)`` bool mask of the edits allowed in ``state``.

    A state built from zero keywords only ever grows by insertion.
    """
    n = len(state)
    mask = np.zeros((len(EditAction), n), dtype=bool)
    mask[EditAction.COPY] = n > 2
    free = [p for p in range(1, n - 1) if p not in state.protected] if state.min_len > 2 else []
    mask[EditAction.REPLACE, free] = True
    if n - 1 >= state.min_len:
        mask[EditAction.DELETE, free] = True
    if n < state.len_s:
        mask[EditAction.INSERT, 1:] = True
    if not mask.any():
        mask[EditAction.COPY] = True
    return mask


def choose_edit(probs, state):
    """Pick ``(action, position)`` from a ``(4, len)`` action probability matrix.

    Copy is the no-op outcome. A replace/insert/delete cell is eligible when
    it is legal and the classifier prefers it to copying at that position;
    among eligible cells the action with the largest row sum wins, then its
    most probable position. No eligible cell means copy (the sentence is
    considered finished), except for a bare ``[BOS, EOS]`` which always
    gets an insert.
    """
    legal = legal_mask(state)
    edits = legal.copy()
    edits[EditAction.COPY] = False
    if legal[EditAction.COPY].any():
        edits &= probs > probs[EditAction.COPY]
    if not edits.any():
        if legal[EditAction.COPY].any():
            return EditAction.COPY, 0
        edits = legal
    masked = np.where(edits, probs, -np.inf)
    sums = np.where(edits.any(axis=1), np.where(edits, probs, 0.0).sum(axis=1), -np.inf)
    action = EditAction(int(np.argmax(sums)))
    return action, int(np.argmax(masked[action]))


def generate_candidates(keywords, flm, blm, clf, T=10, penalty=1.2, rng_seed=0, len_s=20,
                        temperature=0.0, forbidden=RESERVED_IDS):
    """``T`` snapshots of a cumulatively edited keyword sentence.

    ``clf`` is anything accepted by :func:`action_probabilities`. Tokens are
    chosen by argmax unless ``temperature`` > 0, in which case they are
    sampled from the sharpened distribution with ``rng_seed``.
    """
    if T < 1:
        raise InputError("T must be >= 1")
    rng = np.random.default_rng(rng_seed)
    state = EditState.from_keywords(keywords, len_s)
    snapshots = []
    for _ in range(T):
        probs = action_probabilities(clf, state.ids).probs
        action, position = choose_edit(probs, state)
        token = None
        if action in (EditAction.REPLACE, EditAction.INSERT):
            dist = replacement_distribution(flm, blm, state, position, penalty,
                                            insert=action == EditAction.INSERT,
                                            forbidden=forbidden)
            if temperature > 0:
                with np.errstate(divide="ignore", over="ignore"):
                    logp = np.log(dist)
                    w = np.exp((logp - logp.max()) / temperature)
                token = int(rng.choice(len(w), p=w / w.sum()))
            else:
                token = int(np.argmax(dist))
        state = apply_edit(state, action, position, token)
        snapshots.append(state.sentence())
    return snapshots


def repetition_rate(ids):
    """Share of content tokens that repeat an earlier token of the same sentence."""
    content = content_ids(ids)
    if not content:
        return 0.0
    return (len(content) - len(set(content))) / len(content)


def is_subsequence(needle, haystack):
    it = iter(haystack)
    return all(any(x == y for y in it) for x in needle)


# -- selection ----------------------------------------------------------------

@dataclass
class PseudoLabelSet:
    video_id: str
    selected: list
    candidates: list = field(default_factory=list)

    @property
    def sentences(self):
        return [ids for ids, _ in self.selected]

    @property
    def scores(self):
        return [s for _, s in self.selected]


def rank_key(ids, score):
    """Descending score, then shorter sentence, then smaller token ids."""
    content = content_ids(ids)
    return (-score, len(content), tuple(content))


def select_pseudo_labels(candidates, video, scorer, n_pse):
    candidates = list(candidates)
    if n_pse > len(candidates):
        raise InputError(f"asked for {n_pse} pseudo labels from {len(candidates)} candidates")
    scored = [(np.asarray(c), float(scorer.similarity(video, c).score)) for c in candidates]
    ranked = sorted(scored, key=lambda cs: rank_key(*cs))
    vid = video if isinstance(video, str) else video.video_id
    return PseudoLabelSet(vid, ranked[:n_pse], ranked)
