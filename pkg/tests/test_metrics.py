import math
import random
import warnings

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dgcap.errors import ContractError
from dgcap.metrics import EvalCorpus, bleu4, cider, evaluate_corpus, lcs_length, ngrams, rouge_l, rouge_l_sentence


def corpus(hyps, refs):
    return EvalCorpus({k: v.split() for k, v in hyps.items()}, {k: [r.split() for r in rs] for k, rs in refs.items()})


def same(*sents):
    return corpus({f"v{i}": s for i, s in enumerate(sents)}, {f"v{i}": [s] for i, s in enumerate(sents)})


# -- BLEU -------------------------------------------------------------------
def test_bleu_identical_is_one():
    assert bleu4(same("a man is running fast", "the cat sat on a mat")) == 1.0


def test_bleu_no_four_gram_overlap_is_zero():
    assert bleu4(corpus({"v": "a b c d e"}, {"v": ["a b c x e"]})) == 0.0


def test_bleu_hand_counted_example():
    # clipped precisions 5/6, 3/5, 2/4, 1/3; equal lengths so no brevity penalty
    value = bleu4(corpus({"v": "the cat sat on the mat"}, {"v": ["the cat sat on a mat"]}))
    assert abs(value - (5 / 6 * 3 / 5 * 2 / 4 * 1 / 3) ** 0.25) < 1e-9


def test_bleu_brevity_penalty_uses_closest_reference():
    c = corpus({"v": "a b c d"}, {"v": ["a b c d e f", "a b c d e f g h"]})
    assert abs(bleu4(c) - math.exp(1 - 6 / 4)) < 1e-12


def test_bleu_clips_by_max_reference_count():
    c = corpus({"v": "the the the the the"}, {"v": ["the cat", "the the dog"]})
    # "the" clips at 2 (its max count in any one reference); hypothesis is longer so BP=1
    assert abs(bleu4(c, max_n=1) - 2 / 5) < 1e-12


# -- ROUGE-L --------------------------------------------------------------
def test_rouge_identical_and_disjoint():
    assert rouge_l(same("a man runs", "the dog sat")) == 1.0
    assert rouge_l(corpus({"v": "a b"}, {"v": ["c d"]})) == 0.0


def test_rouge_hand_lcs_example():
    c = corpus({"v": "the cat sat"}, {"v": ["the dog sat"]})
    p = r = 2 / 3
    b2 = 1.2 ** 2
    assert abs(rouge_l(c) - (1 + b2) * p * r / (r + b2 * p)) < 1e-9


def test_rouge_beta_weights_recall():
    # LCS 2, P=1, R=1/2
    b2 = 1.2 ** 2
    assert abs(rouge_l_sentence("a b".split(), ["a b c d".split()]) - (1 + b2) * 0.5 / (0.5 + b2)) < 1e-12


def test_lcs_examples():
    assert lcs_length("a b c d".split(), "b d".split()) == 2
    assert lcs_length([], ["a"]) == 0


# -- CIDEr ------------------------------------------------------------------
def test_cider_single_video_is_zero_with_warning():
    with pytest.warns(RuntimeWarning):
        assert cider(same("a man runs")) == 0.0


def test_cider_hand_tfidf_example():
    # every n-gram has df=1 of N=2, so all idf weights are log 2 and each
    # present order contributes cosine 1; "the dog sat" has no 4-grams
    c = same("a man runs fast", "the dog sat")
    assert abs(cider(c) - 10 * (4 / 4 + 3 / 4) / 2) < 1e-9


def test_cider_ngram_counts():
    assert ngrams("a b a b".split(), 2) == {("a", "b"): 2, ("b", "a"): 1}


# -- corpus-wide properties -------------------------------------------------
WORDS = "a b c d e".split()
sentence = st.lists(st.sampled_from(WORDS), min_size=1, max_size=6)


@st.composite
def corpora(draw):
    n = draw(st.integers(2, 4))
    hyps = {f"v{i}": draw(sentence) for i in range(n)}
    refs = {v: draw(st.lists(sentence, min_size=1, max_size=3)) for v in hyps}
    return hyps, refs


@settings(max_examples=60, deadline=None)
@given(corpora(), st.randoms(use_true_random=False))
def test_metrics_invariant_to_video_order(data, rnd):
    hyps, refs = data
    keys = list(hyps)
    rnd.shuffle(keys)
    a = evaluate_corpus(EvalCorpus(hyps, refs))
    b = evaluate_corpus(EvalCorpus({k: hyps[k] for k in keys}, {k: refs[k] for k in reversed(keys)}))
    assert a == b


@settings(max_examples=60, deadline=None)
@given(corpora())
def test_metric_ranges(data):
    m = evaluate_corpus(EvalCorpus(*data))
    assert 0.0 <= m["BLEU4"] <= 1.0 and 0.0 <= m["ROUGEL"] <= 1.0 and m["CIDER"] >= 0.0


@settings(max_examples=60, deadline=None)
@given(sentence, st.lists(sentence, min_size=1, max_size=3), st.data())
def test_duplicate_reference_never_lowers_bleu_or_rouge(hyp, refs, data):
    c1 = EvalCorpus({"v": hyp}, {"v": refs})
    for extra in (list(hyp), list(data.draw(st.sampled_from(refs)))):
        c2 = EvalCorpus({"v": hyp}, {"v": refs + [extra]})
        assert bleu4(c2) >= bleu4(c1)
        assert rouge_l(c2) >= rouge_l(c1)


@pytest.mark.xfail(strict=True, reason="plain CIDEr averages over references, so a duplicated "
                                       "low-similarity reference pulls the mean down")
def test_duplicate_reference_never_lowers_cider():
    hyps = {"v0": "e b c e d".split(), "v1": "e a e a d c".split()}
    refs = {"v0": ["b d".split(), "e d d b b".split(), "b e d a a b".split()],
            "v1": ["c".split(), "c".split(), "e d d d".split()]}
    dup = {**refs, "v0": refs["v0"] + [refs["v0"][2]]}
    assert cider(EvalCorpus(hyps, dup)) >= cider(EvalCorpus(hyps, refs))


# -- errors -----------------------------------------------------------------
def test_empty_corpus_is_contract_error():
    with pytest.raises(ContractError):
        EvalCorpus({}, {})


def test_missing_hypothesis_names_video():
    with pytest.raises(ContractError, match="v2"):
        EvalCorpus.from_text({"v1": "a"}, {"v1": ["a"], "v2": ["b"]})


def test_video_without_references():
    with pytest.raises(ContractError):
        EvalCorpus({"v": ["a"]}, {"v": []})


def test_from_text_cleans_tokens():
    c = EvalCorpus.from_text({"v": "A Man, runs!"}, {"v": ["a man runs"]})
    assert c.hypotheses["v"] == ["a", "man", "runs"]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        assert evaluate_corpus(c)["ROUGEL"] == 1.0


def test_random_corpus_smoke():
    rnd = random.Random(0)
    hyps = {f"v{i}": [rnd.choice(WORDS) for _ in range(5)] for i in range(10)}
    refs = {v: [[rnd.choice(WORDS) for _ in range(5)] for _ in range(3)] for v in hyps}
    assert set(evaluate_corpus(EvalCorpus(hyps, refs))) == {"BLEU4", "ROUGEL", "CIDER"}
