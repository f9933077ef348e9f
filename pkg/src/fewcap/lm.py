"""Add-k smoothed n-gram language models (forward and backward).

Both directions expose ``next_token_distribution(context)`` so the
pseudo-labeler never needs to know what kind of LM it is talking to. A
backward LM is trained on reversed framed sentences, i.e. it reads
``[EOS, w_n, ..., w_1, BOS]`` and is queried with a reversed suffix.
"""

from __future__ import annotations

from collections import Counter, defaultdict
from pathlib import Path

import numpy as np

from .errors import FormatError, InputError
from .text import BOS_ID, EOS_ID, content_ids

FORWARD, BACKWARD = "forward", "backward"


class NGramLM:
    def __init__(self, order, k, vocab_size, direction=FORWARD):
        if order < 2:
            raise InputError("n-gram order must be >= 2")
        if k <= 0:
            raise InputError("smoothing constant k must be positive")
        if direction not in (FORWARD, BACKWARD):
            raise InputError(f"unknown direction {direction!r}")
        self.order = order
        self.k = float(k)
        self.vocab_size = vocab_size
        self.direction = direction
        # context tuple (length 0..order-1) -> Counter(next token)
        self.counts = defaultdict(Counter)

    def fit_sequence(self, seq):
        for i in range(1, len(seq)):
            for n in range(0, self.order):
                if i - n < 0:
                    break
                self.counts[tuple(seq[i - n:i])][seq[i]] += 1

    def next_token_distribution(self, context):
        """Smoothed p(. | last order-1 tokens of ``context``) as a length-V vector."""
        ctx = tuple(int(c) for c in context)[-(self.order - 1):] if context else ()
        probs = np.full(self.vocab_size, self.k)
        table = self.counts.get(ctx)
        if table:
            for tok, c in table.items():
                probs[tok] += c
        return probs / probs.sum()

    def prob(self, token, context):
        return float(self.next_token_distribution(context)[token])

    # -- serialization -----------------------------------------------------

    def dumps(self):
        lines = [f"# order {self.order}", f"# k {self.k!r}", f"# direction {self.direction}",
                 f"# vocab_size {self.vocab_size}"]
        for ctx in sorted(self.counts):
            for tok in sorted(self.counts[ctx]):
                lines.append(f"{' '.join(map(str, ctx))}\t{tok}\t{self.counts[ctx][tok]}")
        return "\n".join(lines) + "\n"

    def save(self, path):
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def loads(cls, text):
        header, body = {}, []
        for line in text.splitlines():
            if line.startswith("# "):
                key, _, val = line[2:].partition(" ")
                header[key] = val
            elif line:
                body.append(line)
        try:
            lm = cls(int(header["order"]), float(header["k"]), int(header["vocab_size"]),
                     header["direction"])
            for line in body:
                ctx, tok, count = line.split("\t")
                key = tuple(int(c) for c in ctx.split()) if ctx else ()
                lm.counts[key][int(tok)] = int(count)
        except (KeyError, ValueError) as exc:
            raise FormatError(f"bad LM counts file: {exc}") from None
        return lm

    @classmethod
    def load(cls, path):
        return cls.loads(Path(path).read_text(encoding="utf-8"))


def _framed(ids):
    return [BOS_ID] + content_ids(ids) + [EOS_ID]


def train_ngram_lm(sentences, vocab_size, order=3, k=0.1, direction=FORWARD):
    """Fit on id sequences (encoded sentences or bare content-id lists)."""
    sentences = list(sentences)
    if not sentences:
        raise InputError("cannot train a language model on an empty corpus")
    lm = NGramLM(order, k, vocab_size, direction)
    for ids in sentences:
        seq = _framed(ids)
        if direction == BACKWARD:
            seq = seq[::-1]
        lm.fit_sequence(seq)
    return lm


def next_token_distribution(lm, context):
    return lm.next_token_distribution(context)
