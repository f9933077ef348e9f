"""Caption metrics: BLEU@1-4, ROUGE-L, CIDEr-D and an exact-match METEOR.

Inputs are token lists or whitespace-separated strings. ``references`` is
aligned with ``candidates`` and holds one or more sentences per item.
``meteor_simple`` only aligns identical unigrams; it is not comparable to
official METEOR scores.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError

ROUGE_BETA = 1.2
CIDER_SIGMA = 6.0
METEOR_ALPHA, METEOR_BETA, METEOR_GAMMA = 0.9, 3.0, 0.5

VARIANTS = {
    "BLEU": "corpus-level, closest reference length, +1 smoothing for n>=2",
    "ROUGE-L": f"LCS F-measure beta={ROUGE_BETA}, max over references",
    "CIDEr-D": f"n=1..4, sigma={CIDER_SIGMA}, clipped tf-idf, x10, corpus document frequency",
    "METEOR-simple": "exact unigram matches only; NOT comparable to official METEOR",
}


def _toks(s):
    return s.split() if isinstance(s, str) else list(s)


def _refs(refs):
    return [_toks(r) for r in ([refs] if isinstance(refs, str) else refs)]


def ngrams(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def _check(candidates, references):
    if len(candidates) != len(references):
        raise InputError(f"{len(candidates)} candidates but {len(references)} reference sets")
    if not candidates:
        raise InputError("empty corpus")


# -- BLEU ---------------------------------------------------------------------

def bleu(candidates, references, max_n=4):
    _check(candidates, references)
    correct, guess = [0] * max_n, [0] * max_n
    c_len = r_len = 0
    for cand, refs in zip(candidates, references):
        cand, refs = _toks(cand), _refs(refs)
        c_len += len(cand)
        r_len += min((abs(len(r) - len(cand)), len(r)) for r in refs)[1]
        for n in range(1, max_n + 1):
            counts = ngrams(cand, n)
            max_ref = Counter()
            for r in refs:
                max_ref |= ngrams(r, n)
            correct[n - 1] += sum(min(c, max_ref[g]) for g, c in counts.items())
            guess[n - 1] += max(len(cand) - n + 1, 0)
    precisions = []
    for n in range(max_n):
        if n == 0:
            p = correct[0] / guess[0] if guess[0] else 0.0
        else:
            p = (correct[n] + 1) / (guess[n] + 1)
        if p == 0:
            return 0.0
        precisions.append(p)
    if c_len == 0:
        return 0.0
    bp = 1.0 if c_len > r_len else math.exp(1.0 - r_len / c_len)
    return bp * math.exp(sum(math.log(p) for p in precisions) / max_n)


# -- ROUGE-L ------------------------------------------------------------------

def lcs_length(a, b):
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l(candidate, references, beta=ROUGE_BETA):
    cand = _toks(candidate)
    if not cand:
        raise InputError("ROUGE-L needs a nonempty candidate")
    best = 0.0
    for ref in _refs(references):
        lcs = lcs_length(cand, ref)
        if lcs == 0:
            continue
        p, r = lcs / len(cand), lcs / len(ref)
        best = max(best, (1 + beta ** 2) * p * r / (r + beta ** 2 * p))
    return best


# -- CIDEr-D ------------------------------------------------------------------

@dataclass
class CiderResult:
    score: float
    per_video: list
    degenerate: bool = False

    def __float__(self):
        return self.score


def cider_d(candidates, references, n=4, sigma=CIDER_SIGMA):
    _check(candidates, references)
    cands = [_toks(c) for c in candidates]
    refsets = [_refs(r) for r in references]
    doc_freq = Counter()
    for refs in refsets:
        doc_freq.update({g for r in refs for k in range(1, n + 1) for g in ngrams(r, k)})
    log_docs = math.log(float(len(refsets)))

    def vectorize(tokens):
        vec = [{} for _ in range(n)]
        norm = [0.0] * n
        for k in range(1, n + 1):
            for g, tf in ngrams(tokens, k).items():
                w = tf * (log_docs - math.log(max(1.0, doc_freq[g])))
                vec[k - 1][g] = w
                norm[k - 1] += w * w
        return vec, [math.sqrt(x) for x in norm], len(tokens)

    scores = []
    for cand, refs in zip(cands, refsets):
        vh, nh, lh = vectorize(cand)
        acc = np.zeros(n)
        for ref in refs:
            vr, nr, lr = vectorize(ref)
            penalty = math.exp(-((lh - lr) ** 2) / (2 * sigma ** 2))
            for k in range(n):
                val = sum(min(w, vr[k].get(g, 0.0)) * vr[k].get(g, 0.0) for g, w in vh[k].items())
                if nh[k] and nr[k]:
                    val /= nh[k] * nr[k]
                acc[k] += val * penalty
        scores.append(float(acc.mean() / len(refs) * 10.0))
    return CiderResult(float(np.mean(scores)), scores, degenerate=len(refsets) < 2)


# -- METEOR (exact match) -------------------------------------------------------

def _align(cand, ref):
    """Exact-match alignment that extends the running chunk when it can."""
    used = [False] * len(ref)
    pairs, prev = [], None
    for i, tok in enumerate(cand):
        options = [j for j, r in enumerate(ref) if r == tok and not used[j]]
        if not options:
            continue
        j = prev + 1 if prev is not None and prev + 1 in options else options[0]
        used[j] = True
        pairs.append((i, j))
        prev = j
    return pairs


def count_chunks(pairs):
    chunks = 0
    for k, (i, j) in enumerate(pairs):
        if k == 0 or i != pairs[k - 1][0] + 1 or j != pairs[k - 1][1] + 1:
            chunks += 1
    return chunks


def meteor_simple(candidate, references, alpha=METEOR_ALPHA, beta=METEOR_BETA,
                  gamma=METEOR_GAMMA):
    cand = _toks(candidate)
    best = 0.0
    for ref in _refs(references):
        pairs = _align(cand, ref)
        m = len(pairs)
        if m == 0:
            continue
        p, r = m / len(cand), m / len(ref)
        fmean = p * r / (alpha * p + (1 - alpha) * r)
        penalty = gamma * (count_chunks(pairs) / m) ** beta
        best = max(best, fmean * (1 - penalty))
    return best


# -- report -------------------------------------------------------------------

@dataclass
class MetricReport:
    scores: dict
    size: int
    per_video: dict = field(default_factory=dict)
    variants: dict = field(default_factory=lambda: dict(VARIANTS))

    def to_json(self):
        return json.dumps({"scores": self.scores, "size": self.size, "per_video": self.per_video,
                           "variants": self.variants}, sort_keys=True)


def evaluate_captions(candidates, references):
    """``candidates``: video_id -> sentence; ``references``: video_id -> sentences."""
    vids = sorted(candidates)
    cands = [_toks(candidates[v]) for v in vids]
    refs = [_refs(references[v]) for v in vids]
    scores = {f"BLEU-{n}": bleu(cands, refs, n) for n in range(1, 5)}
    cider = cider_d(cands, refs)
    scores["CIDEr-D"] = cider.score
    rl = [rouge_l(c, r) if c else 0.0 for c, r in zip(cands, refs)]
    mt = [meteor_simple(c, r) for c, r in zip(cands, refs)]
    scores["ROUGE-L"] = float(np.mean(rl))
    scores["METEOR-simple"] = float(np.mean(mt))
    per_video = {v: {"caption": " ".join(c), "CIDEr-D": cs, "ROUGE-L": r, "METEOR-simple": m}
                 for v, c, cs, r, m in zip(vids, cands, cider.per_video, rl, mt)}
    return MetricReport(scores, len(vids), per_video)
