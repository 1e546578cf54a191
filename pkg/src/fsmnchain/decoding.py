"""Viterbi and n-best decoding over unrolled phone-loop graphs.

Path scores are sum over arcs of (arc weight + acoustic_scale * loglik) plus
the stopping state's final weight, the same scoring forward-backward uses.
Exact score ties in Viterbi resolve to the path whose original arc-index
sequence is lexicographically smallest, which pins the result for tests and
reruns. N-best returns distinct phone sequences (read off the arc phone
marks), each scored by its best alignment.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError
from .graphs import Graph
from .loss import _check_loglik


@dataclass
class Hypothesis:
    phones: tuple[int, ...]
    am_score: float
    lm_score: float = 0.0
    combined: float = 0.0
    lmwt: float | None = None

    def to_dict(self) -> dict:
        return {
            "phones": list(self.phones),
            "am_score": self.am_score,
            "lm_score": self.lm_score,
            "combined": self.combined,
            "lmwt": self.lmwt,
        }


def _arc_trail(bp, t: int, local: int) -> list[int]:
    """Original arc indices of the partial path into (frame t, state local)."""
    trail = []
    while t > 0:
        prev_local, arc_idx = bp[t][local]
        trail.append(arc_idx)
        local = prev_local
        t -= 1
    trail.reverse()
    return trail


def viterbi(unrolled: Graph, loglik, acoustic_scale: float = 1.0) -> Hypothesis:
    """Single best path; deterministic under exact score ties."""
    ll = _check_loglik(loglik)
    layout = unrolled.frame_layout()
    if layout.T != ll.shape[0]:
        raise ConfigurationError(
            f"graph spans {layout.T} frames but log-likelihoods span {ll.shape[0]}"
        )
    k = float(acoustic_scale)

    best = [np.zeros(1)]
    bp: list[list[tuple[int, int]] | None] = [None]
    for t in range(layout.T):
        f = layout.fwd[t]
        scores = best[t][f["src"]] + f["w"] + k * ll[t, f["pdf"]]
        n_next = layout.states[t + 1].size
        vals = np.empty(n_next)
        pointers: list[tuple[int, int]] = [(-1, -1)] * n_next
        seg = f["seg"]
        bounds = np.append(seg, scores.size)
        for s in range(n_next):
            lo, hi = bounds[s], bounds[s + 1]
            seg_scores = scores[lo:hi]
            m = float(seg_scores.max())
            vals[s] = m
            ties = lo + np.flatnonzero(seg_scores == m)
            if ties.size == 1:
                ai = int(ties[0])
            else:
                # Break exact ties by the lexicographically smallest
                # arc-index sequence over the whole prefix.
                ai = int(ties[0])
                best_trail = None
                for cand in ties:
                    cand = int(cand)
                    trail = _arc_trail(bp, t, int(f["src"][cand])) + [
                        int(f["arc_index"][cand])
                    ]
                    if best_trail is None or trail < best_trail:
                        best_trail = trail
                        ai = cand
            pointers[s] = (int(f["src"][ai]), int(f["arc_index"][ai]))
        best.append(vals)
        bp.append(pointers)

    totals = best[layout.T] + layout.finals
    top = float(totals.max())
    ties = np.flatnonzero(totals == top)
    if ties.size == 1:
        stop = int(ties[0])
    else:
        stop = int(ties[0])
        best_trail = None
        for cand in ties:
            trail = _arc_trail(bp, layout.T, int(cand))
            if best_trail is None or trail < best_trail:
                best_trail = trail
                stop = int(cand)
    trail = _arc_trail(bp, layout.T, stop)
    marks = unrolled.arc_phone[trail]
    phones = tuple(int(m) for m in marks if m >= 0)
    return Hypothesis(phones=phones, am_score=top, combined=top)


def nbest(
    unrolled: Graph,
    loglik,
    acoustic_scale: float = 1.0,
    n: int = 20,
    beam: int = 200,
) -> list[Hypothesis]:
    """Top-n distinct phone sequences under best-alignment scoring.

    Frame-synchronous beam over (state, phone prefix) pairs with max-merge
    of rescored duplicates; ``beam`` bounds the surviving pairs per frame.
    Results are ordered by score, then lexicographically by phones, so the
    ranking is total and deterministic.
    """
    ll = _check_loglik(loglik)
    layout = unrolled.frame_layout()
    if layout.T != ll.shape[0]:
        raise ConfigurationError(
            f"graph spans {layout.T} frames but log-likelihoods span {ll.shape[0]}"
        )
    if n < 1 or beam < 1:
        raise ConfigurationError("n and beam must be >= 1")
    k = float(acoustic_scale)

    hyps: dict[tuple[int, tuple[int, ...]], float] = {
        (layout.start_local, ()): 0.0
    }
    for t in range(layout.T):
        b = layout.bwd[t]  # sorted by source state
        bounds = np.append(b["seg"], b["src"].size)
        arc_scores = b["w"] + k * ll[t, b["pdf"]]
        nxt: dict[tuple[int, tuple[int, ...]], float] = {}
        for (src_local, prefix), score in hyps.items():
            lo, hi = bounds[src_local], bounds[src_local + 1]
            for ai in range(lo, hi):
                mark = int(b["phone"][ai])
                key = (
                    int(b["dst"][ai]),
                    prefix + (mark,) if mark >= 0 else prefix,
                )
                cand = score + float(arc_scores[ai])
                old = nxt.get(key)
                if old is None or cand > old:
                    nxt[key] = cand
        if len(nxt) > beam:
            ranked = sorted(nxt.items(), key=lambda kv: (-kv[1], kv[0][1], kv[0][0]))
            nxt = dict(ranked[:beam])
        hyps = nxt

    seqs: dict[tuple[int, ...], float] = {}
    for (local, prefix), score in hyps.items():
        fw = float(layout.finals[local])
        if not np.isfinite(fw):
            continue
        total = score + fw
        old = seqs.get(prefix)
        if old is None or total > old:
            seqs[prefix] = total
    ranked = sorted(seqs.items(), key=lambda kv: (-kv[1], kv[0]))
    return [
        Hypothesis(phones=ph, am_score=sc, combined=sc) for ph, sc in ranked[:n]
    ]
