"""Sequence graphs for chain training: phone HMMs, numerator and
denominator acceptors, unrolling, trimming, and exhaustive enumeration.

Graphs are finite-state acceptors with arc-emitting semantics: every arc
consumes exactly one frame and emits one pdf id, so a complete path through
a graph unrolled to T frames traverses exactly T arcs and then pays the
final weight of the state it stops in. There are no epsilon arcs in built
graphs. Arcs optionally carry a phone mark (the phone id on token-entry
arcs, -1 elsewhere) so decoded paths can be read back as phone sequences;
marks are in-memory metadata and are not serialized by the text format.

Each phone expands to a 2-state left-to-right HMM. State A (pdf 2*phone)
is reached by the entry arc and loops; state B (pdf 2*phone+1) is optional
and loops. Transition weights are uniform over each state's options, where
"exit" counts as one option: A has {self, to-B, exit} at log(1/3) each and
B has {self, exit} at log(1/2) each. Exit mass is carried both by the
final weight and by outgoing cross arcs (scaled by the phone LM), which
keeps every numerator path present in the denominator at identical weight.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import BinaryIO, Iterable, Sequence, TextIO

import numpy as np

from .errors import (
    ConfigurationError,
    EmptyGraphError,
    FormatError,
    GraphError,
    InfeasibleGraphError,
    NumeratorInfeasibleError,
    TooManyPathsError,
)

LOG_THIRD = -math.log(3.0)
LOG_HALF = -math.log(2.0)

_TEXT_MAGIC = "PFG1"


class Graph:
    """Immutable acceptor stored as parallel numpy arc arrays."""

    __slots__ = (
        "num_states",
        "start",
        "arc_src",
        "arc_dst",
        "arc_pdf",
        "arc_weight",
        "arc_phone",
        "final_states",
        "final_weights",
        "state_time",
        "_layout",
    )

    def __init__(
        self,
        num_states: int,
        start: int,
        arc_src,
        arc_dst,
        arc_pdf,
        arc_weight,
        final_states,
        final_weights,
        arc_phone=None,
        state_time=None,
        validate: bool = True,
    ):
        self.num_states = int(num_states)
        self.start = int(start)
        self.arc_src = np.asarray(arc_src, dtype=np.int64).reshape(-1)
        self.arc_dst = np.asarray(arc_dst, dtype=np.int64).reshape(-1)
        self.arc_pdf = np.asarray(arc_pdf, dtype=np.int64).reshape(-1)
        self.arc_weight = np.asarray(arc_weight, dtype=np.float64).reshape(-1)
        if arc_phone is None:
            self.arc_phone = np.full(self.arc_src.shape, -1, dtype=np.int64)
        else:
            self.arc_phone = np.asarray(arc_phone, dtype=np.int64).reshape(-1)
        self.final_states = np.asarray(final_states, dtype=np.int64).reshape(-1)
        self.final_weights = np.asarray(final_weights, dtype=np.float64).reshape(-1)
        self.state_time = (
            None if state_time is None else np.asarray(state_time, dtype=np.int64)
        )
        self._layout = None
        if validate:
            self._validate()

    def _validate(self) -> None:
        n = self.num_states
        a = self.arc_src.size
        if not (0 <= self.start < n):
            raise GraphError(f"start state {self.start} out of range for {n} states")
        for name, arr in (("src", self.arc_src), ("dst", self.arc_dst)):
            if arr.size != a:
                raise GraphError("arc arrays have inconsistent lengths")
            if a and (arr.min() < 0 or arr.max() >= n):
                raise GraphError(f"arc {name} state out of range")
        if self.arc_pdf.size != a or self.arc_weight.size != a or self.arc_phone.size != a:
            raise GraphError("arc arrays have inconsistent lengths")
        if a and self.arc_pdf.min() < 0:
            raise GraphError("arc pdf ids must be >= 0 in built graphs")
        if a and not np.all(np.isfinite(self.arc_weight)):
            raise GraphError("arc weights must be finite")
        if self.final_states.size != self.final_weights.size:
            raise GraphError("final state/weight arrays differ in length")
        if self.final_states.size:
            if self.final_states.min() < 0 or self.final_states.max() >= n:
                raise GraphError("final state out of range")
            if not np.all(np.isfinite(self.final_weights)):
                raise GraphError("final weights must be finite")
            if np.unique(self.final_states).size != self.final_states.size:
                raise GraphError("duplicate final states")
        if a and np.any(self.arc_dst == self.start):
            raise GraphError("start state must have no incoming arcs")
        if self.state_time is not None and self.state_time.size != n:
            raise GraphError("state_time length does not match state count")

    @property
    def num_arcs(self) -> int:
        return int(self.arc_src.size)

    def final_weight_map(self) -> dict[int, float]:
        return {int(s): float(w) for s, w in zip(self.final_states, self.final_weights)}

    def frame_layout(self) -> "FrameLayout":
        """Layout for time-synchronous DAGs, cached on the instance."""
        if self._layout is None:
            self._layout = _build_frame_layout(self)
        return self._layout


@dataclass(frozen=True)
class Path:
    """One complete path: per-frame pdf ids, phone marks collected in
    order, and the summed log weight including the final weight."""

    pdfs: tuple[int, ...]
    phones: tuple[int, ...]
    log_weight: float


def _reach_forward(g: Graph) -> np.ndarray:
    acc = np.zeros(g.num_states, dtype=bool)
    acc[g.start] = True
    while True:
        fresh = acc[g.arc_src] & ~acc[g.arc_dst]
        if not fresh.any():
            return acc
        acc[g.arc_dst[fresh]] = True


def _reach_backward(g: Graph) -> np.ndarray:
    co = np.zeros(g.num_states, dtype=bool)
    co[g.final_states] = True
    while True:
        fresh = co[g.arc_dst] & ~co[g.arc_src]
        if not fresh.any():
            return co
        co[g.arc_src[fresh]] = True


def trim(g: Graph) -> Graph:
    """Drop states that are unreachable or cannot reach a final state.

    The accepted language and all path weights are unchanged. Raises
    EmptyGraphError when nothing survives.
    """
    keep = _reach_forward(g) & _reach_backward(g)
    if not keep[g.start]:
        raise EmptyGraphError("start state cannot reach any final state")
    new_id = np.cumsum(keep) - 1
    arc_keep = keep[g.arc_src] & keep[g.arc_dst]
    fin_keep = keep[g.final_states]
    if not fin_keep.any():
        raise EmptyGraphError("no final state is reachable")
    return Graph(
        num_states=int(keep.sum()),
        start=int(new_id[g.start]),
        arc_src=new_id[g.arc_src[arc_keep]],
        arc_dst=new_id[g.arc_dst[arc_keep]],
        arc_pdf=g.arc_pdf[arc_keep],
        arc_weight=g.arc_weight[arc_keep],
        arc_phone=g.arc_phone[arc_keep],
        final_states=new_id[g.final_states[fin_keep]],
        final_weights=g.final_weights[fin_keep],
        state_time=None if g.state_time is None else g.state_time[keep],
        validate=False,
    )


def unroll_to_frames(g: Graph, num_frames: int) -> Graph:
    """Expand a (possibly cyclic) graph into the time-state product over
    exactly ``num_frames`` frames, with finals attached at the last frame,
    then trim."""
    if num_frames < 1:
        raise ConfigurationError(f"cannot unroll to {num_frames} frames")
    s, a, t = g.num_states, g.num_arcs, num_frames
    offsets = np.arange(t, dtype=np.int64) * s
    src = (g.arc_src[None, :] + offsets[:, None]).reshape(-1)
    dst = (g.arc_dst[None, :] + offsets[:, None] + s).reshape(-1)
    unrolled = Graph(
        num_states=(t + 1) * s,
        start=g.start,
        arc_src=src,
        arc_dst=dst,
        arc_pdf=np.tile(g.arc_pdf, t),
        arc_weight=np.tile(g.arc_weight, t),
        arc_phone=np.tile(g.arc_phone, t),
        final_states=g.final_states + t * s,
        final_weights=g.final_weights,
        state_time=np.repeat(np.arange(t + 1, dtype=np.int64), s),
        validate=False,
    )
    try:
        return trim(unrolled)
    except EmptyGraphError as e:
        raise InfeasibleGraphError(
            f"graph accepts no path of length {num_frames}"
        ) from e


def enumerate_paths(g: Graph, num_frames: int, limit: int = 10000) -> list[Path]:
    """Exhaustively list complete paths of exactly ``num_frames`` arcs.

    Serves as the brute-force oracle for forward-backward and decoding
    tests. Works on rolled (cyclic) and unrolled graphs alike. Raises
    TooManyPathsError beyond ``limit`` complete paths (or a generous
    expansion budget), with the instruction to shrink the test case.
    """
    out_arcs: list[list[int]] = [[] for _ in range(g.num_states)]
    for i in range(g.num_arcs):
        out_arcs[int(g.arc_src[i])].append(i)
    finals = g.final_weight_map()
    paths: list[Path] = []
    budget = max(2_000_000, limit * (num_frames + 1) * 4)
    expansions = 0
    # Depth-first walk; stack entries are (state, depth, weight, pdfs, phones).
    stack = [(g.start, 0, 0.0, (), ())]
    while stack:
        state, depth, weight, pdfs, phones = stack.pop()
        if depth == num_frames:
            if state in finals:
                paths.append(Path(pdfs, phones, weight + finals[state]))
                if len(paths) > limit:
                    raise TooManyPathsError(
                        f"more than {limit} complete paths; shrink the test case"
                    )
            continue
        for ai in reversed(out_arcs[state]):
            expansions += 1
            if expansions > budget:
                raise TooManyPathsError(
                    f"path enumeration exceeded its expansion budget; shrink the test case"
                )
            mark = int(g.arc_phone[ai])
            stack.append(
                (
                    int(g.arc_dst[ai]),
                    depth + 1,
                    weight + float(g.arc_weight[ai]),
                    pdfs + (int(g.arc_pdf[ai]),),
                    phones + ((mark,) if mark >= 0 else ()),
                )
            )
    return paths


class FrameLayout:
    """Per-frame view of a time-synchronous DAG.

    ``states[t]`` lists the global ids alive at frame boundary t after
    depth-aware pruning (reachable from the start at depth t and able to
    reach a depth-T final). Arcs between boundaries t and t+1 are stored
    twice: sorted by destination (``fwd``) with reduceat segment starts for
    the forward pass, and sorted by source (``bwd``) for the backward pass
    and for out-arc iteration during beam search. Local indices refer to
    positions within the per-frame state lists. ``arc_index`` columns keep
    the original arc ids for decode tie-breaking.
    """

    __slots__ = ("T", "states", "finals", "fwd", "bwd", "start_local")

    def __init__(self, T, states, finals, fwd, bwd, start_local):
        self.T = T
        self.states = states
        self.finals = finals
        self.fwd = fwd
        self.bwd = bwd
        self.start_local = start_local


def _state_depths(g: Graph) -> np.ndarray:
    if g.state_time is not None:
        depth = g.state_time.copy()
        src_ok = depth[g.arc_dst] == depth[g.arc_src] + 1
        if not np.all(src_ok):
            raise GraphError("state_time metadata is not time-synchronous")
        return depth
    depth = np.full(g.num_states, -1, dtype=np.int64)
    depth[g.start] = 0
    while True:
        known = depth[g.arc_src] >= 0
        want = depth[g.arc_src] + 1
        have = depth[g.arc_dst]
        clash = known & (have >= 0) & (have != want)
        if np.any(clash):
            raise GraphError(
                "graph is not time-synchronous: a state is reachable at two depths"
            )
        fresh = known & (have < 0)
        if not fresh.any():
            return depth
        depth[g.arc_dst[fresh]] = want[fresh]


def _build_frame_layout(g: Graph) -> FrameLayout:
    depth = _state_depths(g)
    if g.final_states.size == 0:
        raise InfeasibleGraphError("graph has no final states")
    T = int(depth[g.final_states].max()) if g.final_states.size else 0
    if T < 1:
        raise InfeasibleGraphError("graph accepts no path of positive length")

    # Depth-aware reachability: R[state] at its own depth, then prune to
    # states that can still reach a depth-T final.
    reach = depth >= 0
    keep_back = np.zeros(g.num_states, dtype=bool)
    keep_back[g.final_states[depth[g.final_states] == T]] = True
    while True:
        fresh = keep_back[g.arc_dst] & ~keep_back[g.arc_src]
        if not fresh.any():
            break
        keep_back[g.arc_src[fresh]] = True
    keep = reach & keep_back
    if not keep[g.start] or depth[g.start] != 0:
        raise InfeasibleGraphError("start state cannot reach a last-frame final state")

    local = np.full(g.num_states, -1, dtype=np.int64)
    states: list[np.ndarray] = []
    for t in range(T + 1):
        ids = np.flatnonzero(keep & (depth == t))
        if ids.size == 0:
            raise InfeasibleGraphError(f"no surviving states at frame boundary {t}")
        local[ids] = np.arange(ids.size)
        states.append(ids)

    arc_keep = keep[g.arc_src] & keep[g.arc_dst]
    arc_ids = np.flatnonzero(arc_keep)
    arc_t = depth[g.arc_src[arc_ids]]

    fwd = []
    bwd = []
    for t in range(T):
        ids = arc_ids[arc_t == t]
        src_l = local[g.arc_src[ids]]
        dst_l = local[g.arc_dst[ids]]
        w = g.arc_weight[ids]
        pdf = g.arc_pdf[ids]
        phone = g.arc_phone[ids]

        order = np.argsort(dst_l, kind="stable")
        d_sorted = dst_l[order]
        seg = np.concatenate(([0], np.flatnonzero(np.diff(d_sorted)) + 1))
        if not np.array_equal(d_sorted[seg], np.arange(states[t + 1].size)):
            raise GraphError(f"frame {t + 1} has a state with no incoming arc")
        fwd.append(
            {
                "src": src_l[order],
                "dst": d_sorted,
                "pdf": pdf[order],
                "w": w[order],
                "phone": phone[order],
                "arc_index": ids[order],
                "seg": seg,
            }
        )

        order_b = np.argsort(src_l, kind="stable")
        s_sorted = src_l[order_b]
        seg_b = np.concatenate(([0], np.flatnonzero(np.diff(s_sorted)) + 1))
        if not np.array_equal(s_sorted[seg_b], np.arange(states[t].size)):
            raise GraphError(f"frame {t} has a state with no outgoing arc")
        bwd.append(
            {
                "src": s_sorted,
                "dst": dst_l[order_b],
                "pdf": pdf[order_b],
                "w": w[order_b],
                "phone": phone[order_b],
                "arc_index": ids[order_b],
                "seg": seg_b,
            }
        )

    fw = np.full(states[T].size, -np.inf, dtype=np.float64)
    fmap = g.final_weight_map()
    for pos, sid in enumerate(states[T]):
        if int(sid) in fmap:
            fw[pos] = fmap[int(sid)]
    if not np.any(np.isfinite(fw)):
        raise InfeasibleGraphError("no final state survives at the last frame")
    return FrameLayout(
        T=T,
        states=states,
        finals=fw,
        fwd=fwd,
        bwd=bwd,
        start_local=int(local[g.start]),
    )


# ---------------------------------------------------------------------------
# Phone language model (n-gram with add-k smoothing, no backoff).


class PhoneLm:
    """Add-k smoothed n-gram model over phone ids 0..V-1.

    Contexts are tuples of the most recent min(len(history), order-1)
    phones, so early positions in a sequence use genuinely shorter
    contexts. Smoothing keeps every continuation probability positive,
    which makes the composed denominator graph epsilon-free and keeps
    every numerator path inside it.
    """

    def __init__(self, order: int, vocab_size: int, add_k: float = 0.1):
        if order < 1:
            raise ConfigurationError(f"LM order must be >= 1, got {order}")
        if vocab_size < 1:
            raise ConfigurationError(f"vocab size must be >= 1, got {vocab_size}")
        if add_k <= 0:
            raise ConfigurationError(f"add-k constant must be positive, got {add_k}")
        self.order = order
        self.vocab_size = vocab_size
        self.add_k = add_k
        self._counts: dict[tuple[int, ...], np.ndarray] = {}

    @classmethod
    def estimate(
        cls,
        transcripts: Iterable[Sequence[int]],
        vocab_size: int,
        order: int = 4,
        add_k: float = 0.1,
    ) -> "PhoneLm":
        lm = cls(order=order, vocab_size=vocab_size, add_k=add_k)
        for seq in transcripts:
            ctx: tuple[int, ...] = ()
            for p in seq:
                p = int(p)
                if not (0 <= p < vocab_size):
                    raise ConfigurationError(
                        f"phone id {p} outside vocabulary of size {vocab_size}"
                    )
                counts = lm._counts.get(ctx)
                if counts is None:
                    counts = np.zeros(vocab_size, dtype=np.float64)
                    lm._counts[ctx] = counts
                counts[p] += 1.0
                ctx = lm.advance(ctx, p)
        return lm

    def advance(self, ctx: tuple[int, ...], phone: int) -> tuple[int, ...]:
        if self.order == 1:
            return ()
        return (ctx + (int(phone),))[-(self.order - 1):]

    def distribution(self, ctx: tuple[int, ...]) -> np.ndarray:
        """Log continuation probabilities over the whole vocabulary."""
        ctx = tuple(int(p) for p in ctx)[-(self.order - 1):] if self.order > 1 else ()
        counts = self._counts.get(ctx)
        v = self.vocab_size
        if counts is None:
            counts = np.zeros(v, dtype=np.float64)
        return np.log(counts + self.add_k) - math.log(counts.sum() + self.add_k * v)

    def logprob(self, ctx: tuple[int, ...], phone: int) -> float:
        return float(self.distribution(ctx)[int(phone)])


# ---------------------------------------------------------------------------
# Graph builders.


def build_phone_hmm(phone: int) -> Graph:
    """Rolled 2-state HMM for one phone (states: entry, A, B)."""
    if phone < 0:
        raise ConfigurationError(f"phone id must be >= 0, got {phone}")
    a_pdf, b_pdf = 2 * phone, 2 * phone + 1
    return Graph(
        num_states=3,
        start=0,
        arc_src=[0, 1, 1, 2],
        arc_dst=[1, 1, 2, 2],
        arc_pdf=[a_pdf, a_pdf, b_pdf, b_pdf],
        arc_weight=[0.0, LOG_THIRD, LOG_THIRD, LOG_HALF],
        arc_phone=[phone, -1, -1, -1],
        final_states=[1, 2],
        final_weights=[LOG_THIRD, LOG_HALF],
    )


def build_numerator_graph(
    phones: Sequence[int], num_frames: int, lm: PhoneLm | None = None
) -> Graph:
    """Unrolled acceptor for one reference transcript over ``num_frames``.

    Concatenates the per-phone HMMs (cross arcs fuse exit + entry) and, when
    an LM is given, folds the same LM scores the denominator uses onto entry
    and cross arcs. The LM contribution is constant across alignments of a
    fixed transcript, so gradients are unaffected; its presence makes every
    numerator path weight-identical to the corresponding denominator path.
    """
    phones = [int(p) for p in phones]
    if not phones:
        raise NumeratorInfeasibleError("empty transcript cannot emit any frame")
    if any(p < 0 for p in phones):
        raise ConfigurationError("phone ids must be >= 0")
    if lm is not None and any(p >= lm.vocab_size for p in phones):
        raise ConfigurationError("transcript contains a phone outside the LM vocabulary")
    if len(phones) > num_frames:
        raise NumeratorInfeasibleError(
            f"{len(phones)} phones cannot align to {num_frames} frames"
        )

    lm_scores = []
    ctx: tuple[int, ...] = ()
    for p in phones:
        if lm is None:
            lm_scores.append(0.0)
        else:
            lm_scores.append(lm.logprob(ctx, p))
            ctx = lm.advance(ctx, p)

    src, dst, pdf, weight, mark = [], [], [], [], []

    def add(s, d, e, w, m=-1):
        src.append(s)
        dst.append(d)
        pdf.append(e)
        weight.append(w)
        mark.append(m)

    def a_state(i):
        return 1 + 2 * i

    def b_state(i):
        return 2 + 2 * i

    add(0, a_state(0), 2 * phones[0], lm_scores[0], phones[0])
    for i, p in enumerate(phones):
        add(a_state(i), a_state(i), 2 * p, LOG_THIRD)
        add(a_state(i), b_state(i), 2 * p + 1, LOG_THIRD)
        add(b_state(i), b_state(i), 2 * p + 1, LOG_HALF)
        if i + 1 < len(phones):
            q = phones[i + 1]
            add(a_state(i), a_state(i + 1), 2 * q, LOG_THIRD + lm_scores[i + 1], q)
            add(b_state(i), a_state(i + 1), 2 * q, LOG_HALF + lm_scores[i + 1], q)
    last = len(phones) - 1
    rolled = Graph(
        num_states=1 + 2 * len(phones),
        start=0,
        arc_src=src,
        arc_dst=dst,
        arc_pdf=pdf,
        arc_weight=weight,
        arc_phone=mark,
        final_states=[a_state(last), b_state(last)],
        final_weights=[LOG_THIRD, LOG_HALF],
    )
    try:
        return unroll_to_frames(rolled, num_frames)
    except InfeasibleGraphError as e:
        raise NumeratorInfeasibleError(str(e)) from e


def denominator_rolled(lm: PhoneLm) -> Graph:
    """Rolled phone-loop acceptor: the n-gram LM composed with the HMMs.

    States are keyed by (LM context after entering the phone, phone). Cross
    arcs fuse the exit share of the source HMM state, the LM continuation
    probability, and entry into the next phone's A state, so the result is
    epsilon-free.
    """
    v = lm.vocab_size
    key_state: dict[tuple[tuple[int, ...], int], int] = {}
    keys: list[tuple[tuple[int, ...], int]] = []

    def state_for(key) -> int:
        got = key_state.get(key)
        if got is None:
            got = 1 + 2 * len(keys)
            key_state[key] = got
            keys.append(key)
        return got

    src, dst, pdf, weight, mark = [], [], [], [], []

    def add(s, d, e, w, m=-1):
        src.append(s)
        dst.append(d)
        pdf.append(e)
        weight.append(w)
        mark.append(m)

    start_dist = lm.distribution(())
    for p in range(v):
        a = state_for((lm.advance((), p), p))
        add(0, a, 2 * p, float(start_dist[p]), p)

    fin_states: list[int] = []
    fin_weights: list[float] = []
    i = 0
    while i < len(keys):
        ctx, p = keys[i]
        a = 1 + 2 * i
        b = a + 1
        cont = lm.distribution(ctx)
        add(a, a, 2 * p, LOG_THIRD)
        add(a, b, 2 * p + 1, LOG_THIRD)
        add(b, b, 2 * p + 1, LOG_HALF)
        for q in range(v):
            nxt = state_for((lm.advance(ctx, q), q))
            add(a, nxt, 2 * q, LOG_THIRD + float(cont[q]), q)
            add(b, nxt, 2 * q, LOG_HALF + float(cont[q]), q)
        fin_states.extend([a, b])
        fin_weights.extend([LOG_THIRD, LOG_HALF])
        i += 1

    return Graph(
        num_states=1 + 2 * len(keys),
        start=0,
        arc_src=src,
        arc_dst=dst,
        arc_pdf=pdf,
        arc_weight=weight,
        arc_phone=mark,
        final_states=fin_states,
        final_weights=fin_weights,
    )


def build_denominator_graph(lm: PhoneLm, num_frames: int) -> Graph:
    """Phone-loop denominator unrolled to exactly ``num_frames`` frames."""
    return unroll_to_frames(denominator_rolled(lm), num_frames)


# ---------------------------------------------------------------------------
# Text serialization.


def write_graph_text(dest: str | TextIO, g: Graph) -> None:
    """Plain-text layout: one header line, one line per arc, then finals.

    Phone marks are construction metadata and are not serialized.
    """
    if isinstance(dest, str):
        with open(dest, "w", encoding="ascii") as f:
            write_graph_text(f, g)
        return
    dest.write(f"{_TEXT_MAGIC} {g.num_states} {g.start}\n")
    for i in range(g.num_arcs):
        dest.write(
            f"{g.arc_src[i]} {g.arc_dst[i]} {g.arc_pdf[i]} {float(g.arc_weight[i])!r}\n"
        )
    for s, w in zip(g.final_states, g.final_weights):
        dest.write(f"F {s} {float(w)!r}\n")


def read_graph_text(src: str | TextIO) -> Graph:
    if isinstance(src, str):
        with open(src, "r", encoding="ascii") as f:
            return read_graph_text(f)
    header = src.readline().split()
    if len(header) != 3 or header[0] != _TEXT_MAGIC:
        raise FormatError(f"bad graph header {header!r}")
    try:
        num_states, start = int(header[1]), int(header[2])
    except ValueError as e:
        raise FormatError(f"bad graph header {header!r}") from e
    asrc, adst, apdf, aw = [], [], [], []
    fs, fw = [], []
    for line in src:
        parts = line.split()
        if not parts:
            continue
        try:
            if parts[0] == "F":
                if len(parts) != 3:
                    raise FormatError(f"bad final line {line!r}")
                fs.append(int(parts[1]))
                fw.append(float(parts[2]))
            else:
                if len(parts) != 4:
                    raise FormatError(f"bad arc line {line!r}")
                asrc.append(int(parts[0]))
                adst.append(int(parts[1]))
                apdf.append(int(parts[2]))
                aw.append(float(parts[3]))
        except ValueError as e:
            raise FormatError(f"unparsable graph line {line!r}") from e
    try:
        return Graph(
            num_states=num_states,
            start=start,
            arc_src=asrc,
            arc_dst=adst,
            arc_pdf=apdf,
            arc_weight=aw,
            final_states=fs,
            final_weights=fw,
        )
    except GraphError as e:
        raise FormatError(f"invalid graph data: {e}") from e
