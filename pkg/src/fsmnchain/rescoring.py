"""N-best rescoring: combined = am_score + lmwt * lm_score, re-sorted
stably so equal combined scores keep their decoder order."""

from __future__ import annotations

from dataclasses import replace
from typing import Sequence

from .decoding import Hypothesis
from .lm import LmScorer
from .training import levenshtein


def rescore(
    hyps: Sequence[Hypothesis], scorer: LmScorer, lmwt: float
) -> list[Hypothesis]:
    """New hypotheses with lm_score/combined/lmwt filled, best first."""
    scored = [
        replace(
            h,
            lm_score=scorer.score(h.phones),
            lmwt=float(lmwt),
        )
        for h in hyps
    ]
    for h in scored:
        h.combined = h.am_score + lmwt * h.lm_score
    return sorted(scored, key=lambda h: -h.combined)


def oracle_accuracy(
    nbest_lists: Sequence[Sequence[Hypothesis]], refs: Sequence[Sequence[int]]
) -> float:
    """Fraction of utterances whose reference appears anywhere in the list."""
    hits = sum(
        1
        for hyps, ref in zip(nbest_lists, refs)
        if any(h.phones == tuple(ref) for h in hyps)
    )
    return hits / len(refs) if refs else float("nan")


def top1_accuracy(
    nbest_lists: Sequence[Sequence[Hypothesis]], refs: Sequence[Sequence[int]]
) -> float:
    hits = sum(
        1
        for hyps, ref in zip(nbest_lists, refs)
        if hyps and hyps[0].phones == tuple(ref)
    )
    return hits / len(refs) if refs else float("nan")


def phone_error_rate(
    top_phones: Sequence[Sequence[int]], refs: Sequence[Sequence[int]]
) -> float:
    edits = 0
    tokens = 0
    for hyp, ref in zip(top_phones, refs):
        edits += levenshtein(hyp, ref)
        tokens += len(ref)
    return edits / tokens if tokens else float("nan")


def sweep_lm_weight(
    nbest_lists: Sequence[Sequence[Hypothesis]],
    refs: Sequence[Sequence[int]],
    scorer: LmScorer,
    weights: Sequence[float],
) -> list[dict]:
    """Phone error of the rescored top-1 at each LM weight.

    LM scores are computed once per distinct hypothesis; each grid point
    re-ranks with its own weight. Returns one record per weight in the
    given order: {"lmwt", "phone_error", "top1_accuracy"}.
    """
    cached = [rescore(hyps, scorer, 0.0) for hyps in nbest_lists]
    results = []
    for w in weights:
        tops = []
        reranked_lists = []
        for hyps in cached:
            reranked = sorted(
                (
                    replace(h, combined=h.am_score + w * h.lm_score, lmwt=float(w))
                    for h in hyps
                ),
                key=lambda h: -h.combined,
            )
            reranked_lists.append(reranked)
            tops.append(reranked[0].phones if reranked else ())
        results.append(
            {
                "lmwt": float(w),
                "phone_error": phone_error_rate(tops, refs),
                "top1_accuracy": top1_accuracy(reranked_lists, refs),
            }
        )
    return results
