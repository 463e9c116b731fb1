"""Corpus-level BLEU-4, ROUGE-L and CIDEr over tokenised captions."""
from __future__ import annotations

import math
import warnings
from collections import Counter
from dataclasses import dataclass
from typing import Mapping, Sequence

from .errors import ContractError

Tokens = Sequence[str]


@dataclass
class EvalCorpus:
    hypotheses: dict[str, list[str]]
    references: dict[str, list[list[str]]]

    def __post_init__(self):
        if not self.hypotheses:
            raise ContractError("empty evaluation corpus")
        missing = [v for v in self.hypotheses if v not in self.references]
        if missing:
            raise ContractError(f"no references for video {missing[0]!r}")
        for v in self.hypotheses:
            if not self.references[v]:
                raise ContractError(f"video {v!r} has no references")

    @property
    def ids(self) -> list[str]:
        return sorted(self.hypotheses)

    @classmethod
    def from_text(cls, hyps: Mapping[str, str], refs: Mapping[str, Sequence[str]], clean=None) -> "EvalCorpus":
        if clean is None:
            from .data import tokenize as clean
        missing = [v for v in refs if v not in hyps]
        if missing:
            raise ContractError(f"missing hypothesis for video {missing[0]!r}")
        return cls({v: clean(h) for v, h in hyps.items()},
                   {v: [clean(r) for r in refs[v]] for v in hyps if v in refs})


def ngrams(tokens: Tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu4(corpus: EvalCorpus, max_n: int = 4) -> float:
    """Corpus BLEU with clipped n-gram counts, closest-reference brevity penalty, no smoothing."""
    match = [0] * max_n
    total = [0] * max_n
    hyp_len = ref_len = 0
    for v in corpus.ids:
        hyp, refs = corpus.hypotheses[v], corpus.references[v]
        hyp_len += len(hyp)
        ref_len += min((abs(len(r) - len(hyp)), len(r)) for r in refs)[1]
        for n in range(1, max_n + 1):
            h = ngrams(hyp, n)
            best: Counter = Counter()
            for r in refs:
                best |= ngrams(r, n)
            match[n - 1] += sum(min(c, best[g]) for g, c in h.items())
            total[n - 1] += max(0, len(hyp) - n + 1)
    if min(match) == 0:
        return 0.0
    log_p = sum(math.log(m / t) for m, t in zip(match, total)) / max_n
    bp = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / hyp_len)
    return bp * math.exp(log_p)


def lcs_length(a: Tokens, b: Tokens) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l_sentence(hyp: Tokens, refs: Sequence[Tokens], beta: float = 1.2) -> float:
    best = 0.0
    for r in refs:
        lcs = lcs_length(hyp, r)
        if lcs == 0:
            continue
        p, rec = lcs / len(hyp), lcs / len(r)
        best = max(best, (1 + beta ** 2) * p * rec / (rec + beta ** 2 * p))
    return best


def rouge_l(corpus: EvalCorpus, beta: float = 1.2) -> float:
    """Mean over videos of the best LCS F-measure against any reference."""
    ids = corpus.ids
    return sum(rouge_l_sentence(corpus.hypotheses[v], corpus.references[v], beta) for v in ids) / len(ids)


def _tfidf(counts: Counter, df: Counter, log_n: float) -> tuple[dict, float]:
    vec = {g: c * (log_n - math.log(max(1.0, df[g]))) for g, c in counts.items()}
    return vec, math.sqrt(sum(x * x for x in vec.values()))


def _cosine(a: dict, na: float, b: dict, nb: float) -> float:
    if na == 0 or nb == 0:
        return 0.0
    return sum(x * b.get(g, 0.0) for g, x in a.items()) / (na * nb)


def cider(corpus: EvalCorpus, max_n: int = 4, scale: float = 10.0) -> float:
    """Plain CIDEr: tf-idf n-gram cosine averaged over n=1..4 and references, times ``scale``.

    Document frequencies come from the references; no length penalty.
    """
    ids = corpus.ids
    if len(ids) < 2:
        warnings.warn("CIDEr on a single-video corpus: every idf is zero", RuntimeWarning, stacklevel=2)
    log_n = math.log(len(ids))
    df = [Counter() for _ in range(max_n)]
    for v in ids:
        for n in range(1, max_n + 1):
            seen = set()
            for r in corpus.references[v]:
                seen.update(ngrams(r, n))
            df[n - 1].update(seen)
    total = 0.0
    for v in ids:
        refs = corpus.references[v]
        score = 0.0
        for n in range(1, max_n + 1):
            hv, hn = _tfidf(ngrams(corpus.hypotheses[v], n), df[n - 1], log_n)
            score += sum(_cosine(hv, hn, *_tfidf(ngrams(r, n), df[n - 1], log_n)) for r in refs) / len(refs)
        total += score / max_n
    return scale * total / len(ids)


def evaluate_corpus(corpus: EvalCorpus) -> dict[str, float]:
    return {"BLEU4": bleu4(corpus), "ROUGEL": rouge_l(corpus), "CIDER": cider(corpus)}
