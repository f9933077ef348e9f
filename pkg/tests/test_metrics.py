import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import bleu_oracle, cider_d_oracle, lcs_oracle, meteor_oracle, rouge_l_oracle
from fewcap.errors import InputError
from fewcap.metrics import (bleu, cider_d, evaluate_captions, lcs_length, meteor_simple,
                            rouge_l)

WORDS = list("abcdefghij")
sentences = st.lists(st.sampled_from(WORDS), min_size=1, max_size=8)


def suite(n=20, seed=0):
    """Hand-built style pairs: partial copies, reorderings, and unrelated sentences."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        base = list(rng.choice(WORDS, size=int(rng.integers(3, 9))))
        refs = [base]
        for _ in range(int(rng.integers(0, 3))):
            alt = base.copy()
            alt[int(rng.integers(len(alt)))] = str(rng.choice(WORDS))
            refs.append(alt + list(rng.choice(WORDS, size=int(rng.integers(0, 3)))))
        kind = i % 4
        if kind == 0:
            cand = base.copy()
        elif kind == 1:
            cand = base[: max(1, len(base) - 2)]
        elif kind == 2:
            cand = list(rng.permutation(base))
        else:
            cand = list(rng.choice(WORDS, size=int(rng.integers(2, 7))))
        out.append((cand, refs))
    return out


# -- BLEU -------------------------------------------------------------------------

def test_bleu_identity_and_disjoint():
    assert bleu(["a man is playing"], [["a man is playing"]]) == 1.0
    assert bleu(["x y z"], [["a b c"]]) == 0.0


def test_bleu_hand_counted():
    # 1..4-gram precisions 3/3, (2+1)/(2+1), (1+1)/(1+1), (0+1)/(0+1); c=3, r=4.
    assert bleu(["the cat sat"], [["the cat sat down"]]) == pytest.approx(math.exp(1 - 4 / 3),
                                                                          rel=1e-15)


def test_bleu_closest_reference_prefers_shorter_on_tie():
    # refs of length 2 and 4 are both 1 away from the 3-word candidate: r=2, no penalty.
    assert bleu(["a b c"], [["a b", "a b c d"]]) == pytest.approx(1.0)


def test_bleu_empty_corpus_raises():
    with pytest.raises(InputError):
        bleu([], [])
    with pytest.raises(InputError):
        bleu(["a"], [])


def test_bleu_matches_oracle_on_suite():
    cands, refs = zip(*suite())
    for n in range(1, 5):
        assert bleu(cands, refs, n) == pytest.approx(bleu_oracle(cands, refs, n), abs=1e-9)


@given(sentences)
def test_bleu_self_is_one(c):
    assert bleu([c], [[c]]) == 1.0


# -- ROUGE-L ----------------------------------------------------------------------

def test_rouge_examples():
    assert rouge_l("a b c", ["a b c"]) == 1.0
    assert rouge_l("a b c", ["d e f"]) == 0.0
    assert rouge_l("a b c d", ["a c d e"]) == pytest.approx(0.75, rel=1e-15)


def test_rouge_max_over_references():
    assert rouge_l("a b c d", ["x y", "a c d e"]) == pytest.approx(0.75)


@given(sentences, sentences)
def test_lcs_matches_table_oracle(a, b):
    assert lcs_length(a, b) == lcs_oracle(a, b)


@given(sentences)
def test_rouge_self_is_one(c):
    assert rouge_l(c, [c]) == 1.0


def test_rouge_matches_oracle_on_suite():
    for cand, refs in suite():
        assert rouge_l(cand, refs) == pytest.approx(rouge_l_oracle(cand, refs), abs=1e-9)


# -- CIDEr-D ----------------------------------------------------------------------

def test_cider_maximal_when_candidates_equal_distinct_references():
    refs = ["a man is playing guitar", "the dog eats some food", "one cat jumps over fences"]
    res = cider_d(refs, [[r] for r in refs])
    np.testing.assert_allclose(res.per_video, 10.0, rtol=1e-12)
    assert not res.degenerate


def test_cider_zero_without_shared_ngrams():
    res = cider_d(["x y z", "a b c d"], [["p q r"], ["a b c d"]])
    assert res.per_video[0] == 0.0


def test_cider_single_video_flagged():
    assert cider_d(["a b"], [["a b"]]).degenerate


def test_cider_three_video_toy_matches_oracle():
    cands = [["a", "man", "plays"], ["dog", "runs", "fast", "now"], ["a", "cat"]]
    refs = [[["a", "man", "plays", "guitar"], ["man", "plays"]],
            [["dog", "runs", "fast"]],
            [["a", "cat", "sleeps"], ["the", "cat"]]]
    mean, per = cider_d_oracle(cands, refs)
    res = cider_d(cands, refs)
    assert res.score == pytest.approx(mean, abs=1e-9)
    np.testing.assert_allclose(res.per_video, per, atol=1e-9)


def test_cider_matches_oracle_on_suite():
    cands, refs = zip(*suite())
    mean, per = cider_d_oracle(cands, refs)
    res = cider_d(cands, refs)
    assert res.score == pytest.approx(mean, abs=1e-9)
    np.testing.assert_allclose(res.per_video, per, atol=1e-9)


# -- METEOR -----------------------------------------------------------------------

def test_meteor_identical_closed_form():
    for m in (1, 4, 7):
        s = " ".join(WORDS[:m])
        assert meteor_simple(s, [s]) == pytest.approx(1 - 0.5 * (1 / m) ** 3, rel=1e-15)


def test_meteor_no_match_and_reorder():
    assert meteor_simple("a b", ["c d"]) == 0.0
    assert meteor_simple("d c b a", ["a b c d"]) < meteor_simple("a b c d", ["a b c d"])


@given(st.permutations(WORDS).map(lambda p: p[:5]), st.permutations(WORDS).map(lambda p: p[:6]))
def test_meteor_matches_oracle_without_repeats(cand, ref):
    assert meteor_simple(cand, [ref]) == pytest.approx(meteor_oracle(cand, [ref]), abs=1e-12)


# -- invariants -------------------------------------------------------------------

@given(st.randoms(use_true_random=False))
def test_corpus_permutation_invariance(rnd):
    pairs = suite(8, seed=3)
    shuffled = pairs[:]
    rnd.shuffle(shuffled)
    a_c, a_r = zip(*pairs)
    b_c, b_r = zip(*shuffled)
    assert bleu(a_c, a_r) == pytest.approx(bleu(b_c, b_r), abs=1e-12)
    assert cider_d(a_c, a_r).score == pytest.approx(cider_d(b_c, b_r).score, abs=1e-12)


@given(sentences, st.lists(sentences, min_size=1, max_size=3))
def test_adding_matching_reference_never_hurts(cand, refs):
    assert rouge_l(cand, refs + [cand]) >= rouge_l(cand, refs)
    assert meteor_simple(cand, refs + [cand]) >= meteor_simple(cand, refs)


def test_report_is_deterministic_and_in_range():
    cands = {"v1": "a man plays", "v2": "dog runs", "v3": "cat"}
    refs = {"v1": ["a man plays guitar"], "v2": ["the dog runs", "dog runs fast"], "v3": ["a cat"]}
    a, b = evaluate_captions(cands, refs), evaluate_captions(cands, refs)
    assert a.to_json() == b.to_json()
    assert a.size == 3 and set(a.per_video) == {"v1", "v2", "v3"}
    for name, val in a.scores.items():
        assert 0.0 <= val <= (10.0 if name == "CIDEr-D" else 1.0)
    assert "NOT comparable" in a.variants["METEOR-simple"]


def test_report_gt_against_itself_bleu4_is_one():
    refs = {"v1": ["a man plays guitar"], "v2": ["the dog runs fast"]}
    rep = evaluate_captions({v: r[0] for v, r in refs.items()}, refs)
    assert rep.scores["BLEU-4"] == 1.0 and rep.scores["ROUGE-L"] == 1.0
