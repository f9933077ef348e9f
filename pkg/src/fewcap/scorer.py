"""Video-text relevance via concept overlap.

The video embedding is the indicator vector of the concepts that generated
the video; the text embedding is the indicator of the sentence's nouns and
verbs. Their cosine reduces to ``|A & B| / sqrt(|A| |B|)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .text import content_ids


@dataclass(frozen=True)
class Similarity:
    score: float
    degenerate: bool = False

    def __float__(self):
        return self.score


class ConceptOverlapScorer:
    def __init__(self, concepts, lexicon, vocab):
        """``concepts`` maps video_id -> iterable of concept words."""
        self.concepts = {vid: frozenset(c) for vid, c in concepts.items()}
        self.lexicon = lexicon
        self.vocab = vocab

    def video_embedding(self, video):
        vid = video if isinstance(video, str) else video.video_id
        return self.concepts.get(vid, frozenset())

    def text_embedding(self, ids):
        words = (self.vocab.token(i) for i in content_ids(ids))
        return frozenset(w for w in words if self.lexicon.is_keyword(w))

    def similarity(self, video, ids):
        fv, ft = self.video_embedding(video), self.text_embedding(ids)
        if not fv or not ft:
            return Similarity(0.0, degenerate=True)
        return Similarity(len(fv & ft) / math.sqrt(len(fv) * len(ft)))


def video_text_similarity(video, sentence, scorer):
    return scorer.similarity(video, sentence)
