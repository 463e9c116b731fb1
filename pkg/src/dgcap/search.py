"""Greedy and beam-search caption decoding."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import no_grad
from .data import BOS, EOS, PAD, FeatureBundle
from .errors import ContractError

BANNED = (PAD, BOS)


@dataclass
class Hypothesis:
    tokens: tuple[int, ...]
    logp: float
    row: int = -1           # row of the decoder state batch holding this hypothesis
    finished: bool = False

    @property
    def score(self) -> float:
        """Length-normalised log-probability."""
        return self.logp / max(1, len(self.tokens))


def _masked(logp: np.ndarray, banned) -> np.ndarray:
    logp = logp.copy()
    if banned:
        logp[:, list(banned)] = -np.inf
    return logp


def greedy_decode(model, bundle: FeatureBundle, max_len: int = 26, banned=BANNED) -> list[int]:
    with no_grad():
        enc = model.encode_bundles([bundle])
        state = model.init_state(1)
        prev, out = BOS, []
        for _ in range(max_len):
            state, logp = model.step_log_probs(state, [prev], enc)
            prev = int(np.argmax(_masked(logp, banned)[0]))
            out.append(prev)
            if prev == EOS:
                break
    return out


def beam_search_hypotheses(model, bundle: FeatureBundle, beam: int = 5, max_len: int = 26,
                           banned=BANNED) -> list[Hypothesis]:
    """All retired hypotheses, best first.

    Each step keeps the ``beam`` best extensions by cumulative log-prob; the
    ones ending in EOS (or hitting ``max_len``) retire, which shrinks the live
    beam. Final ranking is by length-normalised score, ties going to the
    lexicographically smaller id sequence.
    """
    if beam < 1:
        raise ContractError(f"beam size must be >= 1, got {beam}")
    if max_len < 1:
        raise ContractError(f"max_len must be >= 1, got {max_len}")
    finished: list[Hypothesis] = []
    with no_grad():
        enc1 = model.encode_bundles([bundle])
        cache = {1: enc1}
        state = model.init_state(1)
        live = [Hypothesis((), 0.0, 0)]
        while live:
            n = len(live)
            if n not in cache:
                cache[n] = enc1.expand(n)
            prev = [h.tokens[-1] if h.tokens else BOS for h in live]
            state, logp = model.step_log_probs(state, prev, cache[n])
            logp = _masked(logp, banned)
            cands = []
            for r, h in enumerate(live):
                for w in np.flatnonzero(np.isfinite(logp[r])):
                    cands.append((h.logp + float(logp[r, w]), h.tokens + (int(w),), r))
            cands.sort(key=lambda c: (-c[0], c[1]))
            rows, nxt = [], []
            for score, toks, r in cands[:beam]:
                if toks[-1] == EOS or len(toks) >= max_len:
                    finished.append(Hypothesis(toks, score, finished=toks[-1] == EOS))
                else:
                    nxt.append(Hypothesis(toks, score, len(rows)))
                    rows.append(r)
            live = nxt
            if live:
                state = state.select(rows)
    finished.sort(key=lambda h: (-h.score, h.tokens))
    return finished


def beam_search(model, bundle: FeatureBundle, beam: int = 5, max_len: int = 26, banned=BANNED) -> list[int]:
    return list(beam_search_hypotheses(model, bundle, beam, max_len, banned)[0].tokens)
