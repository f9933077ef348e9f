"""Toy video corpus: grammar, feature synthesis, feature files, resampling."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import FormatError, InputError, ShapeError
from .text import CorpusRecord, KeywordLexicon, write_corpus

FEATURE_MAGIC = b"PKGF"
FEATURE_VERSION = 1
_HEADER = struct.Struct("<4sI6I")
STREAMS = ("appearance", "motion", "object")


# -- grammar ------------------------------------------------------------------

@dataclass
class ToyGrammar:
    subjects: list
    actions: dict          # verb -> list of objects it takes
    templates: list        # with {S} {A} {O} slots
    function_words: list
    noise: float = 0.3
    d_a: int = 24
    d_m: int = 16
    d_o: int = 16

    def __post_init__(self):
        if not self.subjects or not self.actions:
            raise InputError("grammar inventory is empty")
        for verb, objs in self.actions.items():
            if not objs:
                raise InputError(f"action {verb!r} takes no objects")
        if not self.templates:
            raise InputError("grammar has no templates")
        for tpl in self.templates:
            if "{A}" not in tpl:
                raise InputError(f"template {tpl!r} lacks an action slot")

    @property
    def objects(self):
        seen = []
        for objs in self.actions.values():
            seen.extend(o for o in objs if o not in seen)
        return seen

    @property
    def concepts(self):
        return list(self.subjects) + list(self.actions) + self.objects

    def lexicon(self):
        lex = KeywordLexicon()
        for w in self.function_words:
            lex[w] = "other"
        for w in self.subjects + self.objects:
            lex[w] = "noun"
        for w in self.actions:
            lex[w] = "verb"
        return lex

    def to_json(self):
        return json.dumps({"subjects": self.subjects, "actions": self.actions,
                           "templates": self.templates, "function_words": self.function_words,
                           "noise": self.noise, "d_a": self.d_a, "d_m": self.d_m,
                           "d_o": self.d_o}, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        try:
            obj = json.loads(text)
            return cls(**obj)
        except (ValueError, TypeError) as exc:
            raise InputError(f"bad grammar file: {exc}") from None

    @classmethod
    def load(cls, path):
        return cls.from_json(Path(path).read_text(encoding="utf-8"))

    @classmethod
    def default(cls):
        text = resources.files("fewcap").joinpath("toy_grammar.json").read_text(encoding="utf-8")
        return cls.from_json(text)


def prototypes(grammar, seed):
    """One unit-scale gaussian prototype per concept and stream."""
    rng = np.random.default_rng([seed, 7919])
    widths = {"appearance": grammar.d_a, "motion": grammar.d_m, "object": grammar.d_o}
    return {stream: {c: rng.standard_normal(widths[stream]) for c in grammar.concepts}
            for stream in STREAMS}


@dataclass
class RawFeatures:
    appearance: np.ndarray
    motion: np.ndarray
    object: np.ndarray

    @property
    def widths(self):
        return self.appearance.shape[1], self.motion.shape[1], self.object.shape[1]


@dataclass
class ToyVideo:
    video_id: str
    subject: str
    action: str
    obj: str
    sentences: list
    features: RawFeatures

    @property
    def concepts(self):
        return [self.subject, self.action, self.obj]


def _fill(template, s, a, o):
    return template.replace("{S}", s).replace("{A}", a).replace("{O}", o)


def synth_videos(grammar, count, seed, n_sentences=5, rows=(6, 24), noise=None):
    """``count`` toy videos; everything is a function of (grammar, count, seed).

    Appearance rows alternate subject/object prototypes, motion rows carry the
    action prototype, object rows alternate subject/object; gaussian noise of
    scale ``noise`` is added to every row.
    """
    if count < 1:
        raise InputError("video count must be positive")
    noise = grammar.noise if noise is None else noise
    protos = prototypes(grammar, seed)
    rng = np.random.default_rng(seed)
    verbs = list(grammar.actions)
    videos = []
    for v in range(count):
        s = grammar.subjects[rng.integers(len(grammar.subjects))]
        a = verbs[rng.integers(len(verbs))]
        objs = grammar.actions[a]
        o = objs[rng.integers(len(objs))]
        k = min(n_sentences, len(grammar.templates))
        tpl_idx = rng.choice(len(grammar.templates), size=k, replace=False)
        sentences = [_fill(grammar.templates[i], s, a, o) for i in tpl_idx]
        while len(sentences) < n_sentences:
            sentences.append(_fill(grammar.templates[rng.integers(len(grammar.templates))], s, a, o))

        def stream(name, cycle):
            n = int(rng.integers(rows[0], rows[1] + 1))
            base = np.stack([protos[name][cycle[r % len(cycle)]] for r in range(n)])
            return base + noise * rng.standard_normal(base.shape) if noise else base

        feats = RawFeatures(stream("appearance", [s, o]), stream("motion", [a]),
                            stream("object", [s, o]))
        videos.append(ToyVideo(f"video{v:04d}", s, a, o, sentences, feats))
    return videos


def assign_splits(count, seed, fractions=(0.7, 0.1, 0.2)):
    order = np.random.default_rng([seed, 104729]).permutation(count)
    n_train = int(round(fractions[0] * count))
    n_val = int(round(fractions[1] * count))
    split = np.empty(count, dtype=object)
    split[order[:n_train]] = "train"
    split[order[n_train:n_train + n_val]] = "val"
    split[order[n_train + n_val:]] = "test"
    return list(split)


def synth_data(grammar, count, seed, out_dir, n_sentences=5, noise=None, fractions=(0.7, 0.1, 0.2)):
    """Write ``corpus.jsonl``, ``lexicon.tsv`` and ``features/<id>.pkgf`` under ``out_dir``."""
    out = Path(out_dir)
    (out / "features").mkdir(parents=True, exist_ok=True)
    videos = synth_videos(grammar, count, seed, n_sentences=n_sentences, noise=noise)
    splits = assign_splits(count, seed, fractions)
    records = [CorpusRecord(v.video_id, v.sentences, sp, v.concepts)
               for v, sp in zip(videos, splits)]
    write_corpus(records, out / "corpus.jsonl")
    grammar.lexicon().save(out / "lexicon.tsv")
    for v in videos:
        write_feature_file(out / "features" / f"{v.video_id}.pkgf", v.features)
    return records


# -- feature files ------------------------------------------------------------

def write_feature_file(path, feats):
    arrays = [np.ascontiguousarray(getattr(feats, s), dtype="<f4") for s in STREAMS]
    dims = [x for a in arrays for x in a.shape]
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(FEATURE_MAGIC, FEATURE_VERSION, *dims))
        for a in arrays:
            fh.write(a.tobytes())


def parse_feature_bytes(blob, expected_widths=None):
    if len(blob) < _HEADER.size:
        raise FormatError("feature file shorter than its header", len(blob))
    magic, version, *dims = _HEADER.unpack_from(blob, 0)
    if magic != FEATURE_MAGIC:
        raise FormatError(f"bad magic {magic!r}", 0)
    if version != FEATURE_VERSION:
        raise FormatError(f"unsupported feature version {version}", 4)
    offset = _HEADER.size
    arrays = []
    for i, name in enumerate(STREAMS):
        r, c = dims[2 * i], dims[2 * i + 1]
        if r == 0 or c == 0:
            raise FormatError(f"{name} stream is empty", 8 + 8 * i)
        nbytes = 4 * r * c
        if offset + nbytes > len(blob):
            raise FormatError(f"{name} stream truncated: need {nbytes} bytes", offset)
        arrays.append(np.frombuffer(blob, dtype="<f4", count=r * c, offset=offset)
                      .reshape(r, c).astype(np.float64))
        offset += nbytes
    if offset != len(blob):
        raise FormatError(f"{len(blob) - offset} trailing bytes", offset)
    feats = RawFeatures(*arrays)
    if expected_widths is not None and tuple(expected_widths) != feats.widths:
        raise ShapeError("feature widths (d_a, d_m, d_o): expected "
                         f"{tuple(expected_widths)}, found {feats.widths}")
    return feats


def read_feature_file(path, expected_widths=None):
    return parse_feature_bytes(Path(path).read_bytes(), expected_widths)


# -- resampling ---------------------------------------------------------------

@dataclass
class VideoFeatures:
    """Resampled streams: ``N`` appearance/motion rows and ``N_obj`` object rows."""

    video_id: str
    appearance: np.ndarray
    motion: np.ndarray
    object: np.ndarray


def resample_rows(x, target):
    """Even-stride pick of ``target`` rows: ``floor(i * n / target)``.

    With fewer rows than ``target`` the rows repeat cyclically (``i mod n``).
    """
    x = np.asarray(x)
    n = x.shape[0]
    if n == 0:
        raise InputError("cannot resample an empty feature sequence")
    if n >= target:
        idx = (np.arange(target) * n) // target
    else:
        idx = np.arange(target) % n
    return x[idx]


def ingest_features(raw, N, N_obj, video_id=""):
    return VideoFeatures(video_id, resample_rows(raw.appearance, N),
                         resample_rows(raw.motion, N), resample_rows(raw.object, N_obj))
