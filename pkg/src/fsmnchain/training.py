"""Joint sequence + CE training loop and evaluation.

The minimized objective per batch is

    -(1/N) * sum_u lfmmi_u + alpha * (1/N) * sum_u ce_u + l2 * ||theta||^2

with N the total frame count of the batch, so learning rates transfer
across utterance lengths. Plain SGD with classical momentum; the learning
rate halves on a fixed epoch schedule. Batches are buckets of
length-sorted utterances whose processing order is reshuffled each epoch
from the run's seed, so a rerun with the same inputs is bit-identical.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .corpus import Utterance
from .errors import (
    ConfigurationError,
    InfeasibleGraphError,
    NumeratorInfeasibleError,
    TrainingDivergedError,
)
from .graphs import PhoneLm, build_denominator_graph, build_numerator_graph
from .loss import joint_loss, l2_penalty
from .network import Network, NetworkConfig
from .rng import Rng


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 16
    learning_rate: float = 0.05
    lr_decay: float = 0.5
    lr_decay_epochs: int = 8
    momentum: float = 0.9
    alpha: float = 0.1
    acoustic_scale: float = 1.0
    l2: float | None = None  # None: use the network config's coefficient
    max_grad_norm: float | None = 1.0
    lm_order: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigurationError("epochs must be >= 0 and batch_size >= 1")
        if self.learning_rate <= 0 or not (0 < self.lr_decay <= 1):
            raise ConfigurationError("bad learning-rate schedule")
        if self.lr_decay_epochs < 1:
            raise ConfigurationError("lr_decay_epochs must be >= 1")
        if not (0 <= self.momentum < 1):
            raise ConfigurationError("momentum must be in [0, 1)")
        if self.alpha < 0:
            raise ConfigurationError("alpha must be >= 0")
        if self.max_grad_norm is not None and self.max_grad_norm <= 0:
            raise ConfigurationError("max_grad_norm must be positive or None")
        if self.lm_order < 1:
            raise ConfigurationError("lm_order must be >= 1")

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "lr_decay": self.lr_decay,
            "lr_decay_epochs": self.lr_decay_epochs,
            "momentum": self.momentum,
            "alpha": self.alpha,
            "acoustic_scale": self.acoustic_scale,
            "l2": self.l2,
            "max_grad_norm": self.max_grad_norm,
            "lm_order": self.lm_order,
            "seed": self.seed,
        }


@dataclass
class TrainResult:
    network: Network
    lm: PhoneLm
    history: list[dict] = field(default_factory=list)
    skipped_utterances: int = 0


def _length_buckets(utts: list[Utterance], batch_size: int) -> list[list[int]]:
    order = sorted(range(len(utts)), key=lambda i: (utts[i].num_frames, i))
    return [order[i:i + batch_size] for i in range(0, len(order), batch_size)]


def train(
    cfg: NetworkConfig,
    train_utts: list[Utterance],
    tcfg: TrainConfig,
    log=None,
) -> TrainResult:
    if not train_utts:
        raise ConfigurationError("training corpus is empty")
    num_phones = cfg.output_dim // 2
    if cfg.output_dim != 2 * num_phones or any(
        p >= num_phones for u in train_utts for p in u.phones
    ):
        raise ConfigurationError(
            f"corpus phone ids exceed the {num_phones} phones implied by "
            f"output_dim={cfg.output_dim}"
        )
    if tcfg.alpha > 0 and any(u.alignment is None for u in train_utts):
        raise ConfigurationError(
            "alpha > 0 requires frame alignments on every training utterance"
        )

    rng = Rng(tcfg.seed)
    net = Network(cfg, rng)
    lm = PhoneLm.estimate(
        [u.phones for u in train_utts], vocab_size=num_phones, order=tcfg.lm_order
    )

    num_graphs: dict[int, object] = {}
    skipped = 0
    usable: list[int] = []
    for i, u in enumerate(train_utts):
        try:
            num_graphs[i] = build_numerator_graph(u.phones, u.num_frames, lm)
            usable.append(i)
        except NumeratorInfeasibleError:
            skipped += 1
    if not usable:
        raise ConfigurationError("every training utterance was infeasible")
    den_graphs: dict[int, object] = {}
    for i in usable:
        t = train_utts[i].num_frames
        if t not in den_graphs:
            den_graphs[t] = build_denominator_graph(lm, t)

    l2_c = cfg.l2_coefficient if tcfg.l2 is None else tcfg.l2
    params = net.params()
    velocity = {name: np.zeros_like(t.values) for name, t in params}
    local = _length_buckets([train_utts[i] for i in usable], tcfg.batch_size)
    buckets = [[usable[j] for j in b] for b in local]

    history: list[dict] = []
    result = TrainResult(network=net, lm=lm, skipped_utterances=skipped)
    for epoch in range(tcfg.epochs):
        lr = tcfg.learning_rate * (tcfg.lr_decay ** (epoch // tcfg.lr_decay_epochs))
        batch_order = list(range(len(buckets)))
        rng.shuffle(batch_order)
        ep_frames = 0
        ep_lfmmi = 0.0
        ep_ce = 0.0
        ep_correct = 0
        for bi in batch_order:
            net.zero_grad()
            batch_frames = 0
            batch_value = 0.0
            for ui in buckets[bi]:
                u = train_utts[ui]
                out = net.forward(u.features)
                if not np.all(np.isfinite(out.chain)):
                    raise TrainingDivergedError(
                        f"non-finite network output in epoch {epoch}, batch {bi}"
                    )
                try:
                    rep = joint_loss(
                        num_graphs[ui],
                        den_graphs[u.num_frames],
                        out.chain,
                        out.ce_logits if tcfg.alpha > 0 else out.chain,
                        u.alignment if u.alignment is not None else [],
                        acoustic_scale=tcfg.acoustic_scale,
                        alpha=tcfg.alpha,
                    )
                except InfeasibleGraphError as e:
                    # Feasibility was settled when the graphs were built, so
                    # a dead path here means the scores collapsed, not that
                    # the utterance is bad.
                    raise TrainingDivergedError(
                        f"acoustic scores collapsed in epoch {epoch}, "
                        f"batch {bi}: {e}"
                    ) from e
                d_ce = None if rep.ce_grad is None else tcfg.alpha * rep.ce_grad
                net.backward(-rep.grad, d_ce)
                batch_frames += u.num_frames
                batch_value += -rep.lfmmi_value + tcfg.alpha * rep.ce_value
                ep_lfmmi += rep.lfmmi_value
                ep_ce += rep.ce_value
                if u.alignment is not None:
                    ep_correct += int(
                        (np.argmax(out.ce_logits, axis=1) == u.alignment).sum()
                    )
            if not math.isfinite(batch_value):
                raise TrainingDivergedError(
                    f"non-finite loss in epoch {epoch}, batch {bi}"
                )
            ep_frames += batch_frames
            for _, t in params:
                t.ensure_grad()
                t.grad /= batch_frames
            l2_penalty([t for _, t in params], l2_c)
            if tcfg.max_grad_norm is not None:
                sq = 0.0
                for _, t in params:
                    sq += float(np.dot(t.grad.ravel(), t.grad.ravel()))
                norm = math.sqrt(sq)
                if norm > tcfg.max_grad_norm:
                    scale = tcfg.max_grad_norm / norm
                    for _, t in params:
                        t.grad *= scale
            for name, t in params:
                v = velocity[name]
                v *= tcfg.momentum
                v += t.grad
                t.values -= lr * v
        record = {
            "epoch": epoch,
            "joint_loss": (-ep_lfmmi + tcfg.alpha * ep_ce) / ep_frames,
            "lfmmi": ep_lfmmi / ep_frames,
            "ce": ep_ce / ep_frames,
            "frame_accuracy": ep_correct / ep_frames,
            "learning_rate": lr,
        }
        history.append(record)
        if log is not None:
            log(record)
    result.history = history
    return result


@dataclass
class EvalMetrics:
    frame_error_rate: float
    phone_error_rate: float
    frames: int
    phones: int
    utterances: int

    def to_dict(self) -> dict:
        return {
            "frame_error_rate": self.frame_error_rate,
            "phone_error_rate": self.phone_error_rate,
            "frames": self.frames,
            "phones": self.phones,
            "utterances": self.utterances,
        }


def levenshtein(a, b) -> int:
    """Edit distance with unit insert/delete/substitute costs."""
    a, b = list(a), list(b)
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, start=1):
        cur = [i] + [0] * len(b)
        for j, y in enumerate(b, start=1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y))
        prev = cur
    return prev[len(b)]


def evaluate(
    net: Network,
    utts: list[Utterance],
    lm: PhoneLm,
    acoustic_scale: float = 1.0,
) -> EvalMetrics:
    """Frame error from the CE head's argmax against the stored alignment
    (utterances without alignments are excluded from the frame tally) and
    phone error from Viterbi decoding over the phone-loop denominator."""
    from .decoding import viterbi

    if not utts:
        raise ConfigurationError("evaluation corpus is empty")
    den_graphs: dict[int, object] = {}
    frames = 0
    frame_err = 0
    phones = 0
    edits = 0
    for u in utts:
        out = net.forward(u.features)
        if u.alignment is not None:
            frames += u.num_frames
            frame_err += int((np.argmax(out.ce_logits, axis=1) != u.alignment).sum())
        t = u.num_frames
        if t not in den_graphs:
            den_graphs[t] = build_denominator_graph(lm, t)
        hyp = viterbi(den_graphs[t], out.chain, acoustic_scale)
        phones += len(u.phones)
        edits += levenshtein(hyp.phones, u.phones)
    return EvalMetrics(
        frame_error_rate=frame_err / frames if frames else float("nan"),
        phone_error_rate=edits / phones if phones else float("nan"),
        frames=frames,
        phones=phones,
        utterances=len(utts),
    )


def alpha_ablation(
    cfg: NetworkConfig,
    train_utts: list[Utterance],
    test_utts: list[Utterance],
    seeds: Sequence[int] = (1, 2, 3),
    alphas: Sequence[float] = (0.1, 0.0),
    base: TrainConfig | None = None,
    log=None,
) -> list[dict]:
    """Train one model per (seed, CE weight) pair and evaluate each.

    Returns one row per run with the final test errors, for judging what
    the frame-level CE term buys on top of the sequence criterion. Rows
    come out in (seed, alpha) order, so the table is deterministic.
    """
    if base is None:
        base = TrainConfig()
    rows = []
    for seed in seeds:
        for alpha in alphas:
            tcfg = replace(base, seed=int(seed), alpha=float(alpha))
            result = train(cfg, train_utts, tcfg)
            m = evaluate(result.network, test_utts, result.lm, tcfg.acoustic_scale)
            row = {
                "seed": int(seed),
                "alpha": float(alpha),
                "frame_error": m.frame_error_rate,
                "phone_error": m.phone_error_rate,
                "final_lfmmi": result.history[-1]["lfmmi"] if result.history else None,
            }
            rows.append(row)
            if log is not None:
                log(row)
    return rows


def format_ablation_table(rows: Sequence[dict]) -> str:
    lines = [f"{'seed':>4}  {'alpha':>5}  {'frame_err':>9}  {'phone_err':>9}"]
    for r in rows:
        lines.append(
            f"{r['seed']:>4}  {r['alpha']:>5.2f}  {r['frame_error']:>9.4f}  "
            f"{r['phone_error']:>9.4f}"
        )
    return "\n".join(lines)
