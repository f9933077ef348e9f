"""Vocabulary, tokenization, keyword extraction and corpus files."""

from __future__ import annotations

import json
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, InputError

PAD, BOS, EOS, UNK, MASK = "<pad>", "<bos>", "<eos>", "<unk>", "<mask>"
RESERVED = (PAD, BOS, EOS, UNK, MASK)
PAD_ID, BOS_ID, EOS_ID, UNK_ID, MASK_ID = range(len(RESERVED))

VOCAB_MAGIC = "#fewcap-vocab"
VOCAB_VERSION = 1
SPLITS = ("train", "val", "test")
TAGS = ("noun", "verb", "other")


class Vocabulary:
    """Token <-> index table with reserved tokens at the front."""

    def __init__(self, tokens, min_freq=2):
        tokens = list(tokens)
        if tuple(tokens[: len(RESERVED)]) != RESERVED:
            raise InputError("vocabulary must start with the reserved tokens")
        if len(set(tokens)) != len(tokens):
            raise InputError("vocabulary contains duplicate tokens")
        self.tokens = tokens
        self.index = {t: i for i, t in enumerate(tokens)}
        self.min_freq = min_freq

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self.index

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.tokens == other.tokens

    def id(self, token):
        return self.index.get(token, UNK_ID)

    def token(self, idx):
        return self.tokens[idx]

    @property
    def special_ids(self):
        return tuple(range(len(RESERVED)))

    def dumps(self):
        header = [VOCAB_MAGIC, f"version {VOCAB_VERSION}", f"min_freq {self.min_freq}",
                  f"size {len(self)}"]
        return "\n".join(header + self.tokens) + "\n"

    def save(self, path):
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def loads(cls, text):
        lines = text.split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        if len(lines) < 4 or lines[0] != VOCAB_MAGIC:
            raise FormatError("not a vocabulary file")
        try:
            version = int(lines[1].split()[1])
            min_freq = int(lines[2].split()[1])
            size = int(lines[3].split()[1])
        except (IndexError, ValueError) as exc:
            raise FormatError(f"bad vocabulary header: {exc}") from None
        if version != VOCAB_VERSION:
            raise FormatError(f"vocabulary version {version} unsupported")
        tokens = lines[4:]
        if len(tokens) != size:
            raise FormatError(f"vocabulary declares {size} tokens, found {len(tokens)}")
        return cls(tokens, min_freq=min_freq)

    @classmethod
    def load(cls, path):
        return cls.loads(Path(path).read_text(encoding="utf-8"))


def tokenize(text):
    """Lower-case, drop punctuation characters, split on whitespace.

    Punctuation is removed rather than treated as a separator, so
    ``"High-five"`` becomes ``"highfive"``.
    """
    kept = "".join(ch for ch in text.lower() if not unicodedata.category(ch).startswith("P"))
    return kept.split()


def build_vocabulary(sentences, min_freq=2):
    """Vocabulary from raw sentences (or CorpusRecords).

    Reserved tokens first, then tokens with count >= ``min_freq`` by
    descending count, ties in lexicographic order.
    """
    counts = Counter()
    n = 0
    for item in sentences:
        texts = item.sentences if isinstance(item, CorpusRecord) else [item]
        for text in texts:
            counts.update(tokenize(text))
            n += 1
    if n == 0:
        raise InputError("cannot build a vocabulary from an empty corpus")
    kept = sorted((t for t, c in counts.items() if c >= min_freq and t not in RESERVED),
                  key=lambda t: (-counts[t], t))
    return Vocabulary(list(RESERVED) + kept, min_freq=min_freq)


# -- sentences ----------------------------------------------------------------

def encode(tokens, vocab, len_s):
    """Token strings -> fixed-length id array ``[BOS, w..., EOS, PAD...]``.

    Content is truncated to ``len_s - 2`` tokens.
    """
    if len_s < 2:
        raise InputError("len_s must leave room for BOS and EOS")
    ids = [vocab.id(t) for t in tokens][: len_s - 2]
    out = np.full(len_s, PAD_ID, dtype=np.int64)
    out[0] = BOS_ID
    out[1: 1 + len(ids)] = ids
    out[1 + len(ids)] = EOS_ID
    return out


def content_ids(ids):
    """Ids strictly between BOS and the first EOS (PAD and BOS skipped)."""
    out = []
    for i in ids:
        i = int(i)
        if i == EOS_ID:
            break
        if i in (BOS_ID, PAD_ID):
            continue
        out.append(i)
    return out


def decode(ids, vocab):
    return " ".join(vocab.token(i) for i in content_ids(ids))


def frame(ids, len_s=None):
    """Content ids -> ``[BOS, ..., EOS]`` optionally padded to ``len_s``."""
    out = [BOS_ID] + [int(i) for i in ids] + [EOS_ID]
    if len_s is not None:
        if len(out) > len_s:
            raise InputError(f"framed sentence of length {len(out)} exceeds len_s={len_s}")
        out += [PAD_ID] * (len_s - len(out))
    return np.asarray(out, dtype=np.int64)


# -- keywords -----------------------------------------------------------------

class KeywordLexicon(dict):
    """word -> tag in {noun, verb, other}; unknown words are ``other``."""

    def tag(self, word):
        return self.get(word, "other")

    def is_keyword(self, word):
        return self.tag(word) in ("noun", "verb")

    def dumps(self):
        return "".join(f"{w}\t{t}\n" for w, t in sorted(self.items()))

    def save(self, path):
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def loads(cls, text):
        lex = cls()
        offset = 0
        for lineno, line in enumerate(text.splitlines(keepends=True), 1):
            stripped = line.rstrip("\n")
            if stripped.strip():
                parts = stripped.split("\t")
                if len(parts) != 2 or parts[1] not in TAGS:
                    raise FormatError(f"lexicon line {lineno}: expected word<TAB>tag", offset)
                lex[parts[0]] = parts[1]
            offset += len(line.encode("utf-8"))
        return lex

    @classmethod
    def load(cls, path):
        return cls.loads(Path(path).read_text(encoding="utf-8"))


@dataclass(frozen=True)
class KeywordSequence:
    """Framed keyword ids ``[BOS, k1..kn, PAD..., EOS]`` with ``n_word`` slots."""

    ids: tuple
    n_word: int

    @property
    def keywords(self):
        return [i for i in self.ids[1:-1] if i != PAD_ID]

    @property
    def degenerate(self):
        return not self.keywords

    def array(self):
        return np.asarray(self.ids, dtype=np.int64)


def extract_keywords(tokens, lexicon, vocab, n_word=4):
    """Nouns and verbs of ``tokens`` in order, truncated or padded to ``n_word``.

    Keywords missing from the vocabulary are skipped, so every kept id is a
    real vocabulary entry and the result stays a subsequence of the input.
    """
    picked = [vocab.index[t] for t in tokens if lexicon.is_keyword(t) and t in vocab.index]
    picked = picked[:n_word]
    ids = [BOS_ID] + picked + [PAD_ID] * (n_word - len(picked)) + [EOS_ID]
    return KeywordSequence(tuple(ids), n_word)


# -- corpus files -------------------------------------------------------------

@dataclass
class CorpusRecord:
    video_id: str
    sentences: list
    split: str = "train"
    concepts: list = field(default_factory=list)

    def __post_init__(self):
        if not self.sentences:
            raise InputError(f"video {self.video_id!r} has no sentences")
        if self.split not in SPLITS:
            raise InputError(f"video {self.video_id!r}: unknown split {self.split!r}")

    def to_json(self):
        obj = {"video_id": self.video_id, "sentences": list(self.sentences), "split": self.split}
        if self.concepts:
            obj["concepts"] = list(self.concepts)
        return json.dumps(obj, sort_keys=True, ensure_ascii=False)


def few_shot(record, g):
    """The first ``g`` ground-truth sentences: the only ones training may read."""
    return list(record.sentences[:g])


def write_corpus(records, path):
    ids = [r.video_id for r in records]
    if len(set(ids)) != len(ids):
        raise InputError("duplicate video_id in corpus")
    Path(path).write_text("".join(r.to_json() + "\n" for r in records), encoding="utf-8")


def read_corpus(path):
    records, seen = [], set()
    offset = 0
    with open(path, "rb") as fh:
        for line in fh:
            if line.strip():
                try:
                    obj = json.loads(line.decode("utf-8"))
                    rec = CorpusRecord(str(obj["video_id"]), list(obj["sentences"]),
                                       obj.get("split", "train"), list(obj.get("concepts", [])))
                except (ValueError, KeyError, TypeError) as exc:
                    raise FormatError(f"bad corpus record: {exc}", offset) from None
                if rec.video_id in seen:
                    raise FormatError(f"duplicate video_id {rec.video_id!r}", offset)
                seen.add(rec.video_id)
                records.append(rec)
            offset += len(line)
    return records
