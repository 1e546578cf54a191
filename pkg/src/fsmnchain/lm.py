"""Language models for n-best rescoring.

A scorer maps a phone sequence to a log-probability-like score (higher is
better). The n-gram scorer reuses the denominator's PhoneLm; the tiny
recurrent scorer is a single-layer tanh RNN trained by truncated-free BPTT
written out by hand. Both exclude any end-of-sequence factor from
``score`` so their magnitudes are comparable.
"""

from __future__ import annotations

import math
from typing import Iterable, Protocol, Sequence

import numpy as np

from .errors import ConfigurationError
from .graphs import PhoneLm
from .ops import log_softmax
from .rng import Rng
from .tensor import Tensor


class LmScorer(Protocol):
    def score(self, phones: Sequence[int]) -> float: ...


class NGramScorer:
    """Sum of n-gram continuation log-probs under a PhoneLm."""

    def __init__(self, lm: PhoneLm):
        self.lm = lm

    def score(self, phones: Sequence[int]) -> float:
        total = 0.0
        ctx: tuple[int, ...] = ()
        for p in phones:
            total += self.lm.logprob(ctx, int(p))
            ctx = self.lm.advance(ctx, int(p))
        return total


class OraclePenaltyLm:
    """Assigns 0 to one reference sequence and a dominating penalty to all
    others; used to verify that rescoring can recover whatever the n-best
    list contains."""

    def __init__(self, reference: Sequence[int], penalty: float = -1e9):
        self.reference = tuple(int(p) for p in reference)
        self.penalty = float(penalty)

    def score(self, phones: Sequence[int]) -> float:
        return 0.0 if tuple(int(p) for p in phones) == self.reference else self.penalty


class TinyRnnLm:
    """Embedding -> tanh RNN -> softmax over phones plus end-of-sequence.

    Token v (== vocab_size) doubles as begin-of-sequence on the input side
    and end-of-sequence on the output side.
    """

    def __init__(self, vocab_size: int, embed_dim: int = 8, hidden_dim: int = 16,
                 rng: Rng | None = None):
        if vocab_size < 1:
            raise ConfigurationError("vocab_size must be >= 1")
        if rng is None:
            rng = Rng(0)
        v = vocab_size
        self.vocab_size = v
        self.embed_dim = embed_dim
        self.hidden_dim = hidden_dim
        s = 0.5
        self.emb = Tensor(rng.uniform_array((v + 1, embed_dim), -s, s), copy=False)
        self.wx = Tensor(rng.uniform_array((embed_dim, hidden_dim), -s, s), copy=False)
        self.wh = Tensor(rng.uniform_array((hidden_dim, hidden_dim), -s, s), copy=False)
        self.bh = Tensor.zeros((hidden_dim,))
        self.wo = Tensor(rng.uniform_array((hidden_dim, v + 1), -s, s), copy=False)
        self.bo = Tensor.zeros((v + 1,))
        self.held_out_perplexity: float | None = None

    def params(self) -> list[Tensor]:
        return [self.emb, self.wx, self.wh, self.bh, self.wo, self.bo]

    def _run(self, tokens_in: list[int]) -> tuple[np.ndarray, np.ndarray]:
        """Hidden states (T, H) and per-step log-probs (T, V+1)."""
        t = len(tokens_in)
        hs = np.zeros((t, self.hidden_dim))
        h = np.zeros(self.hidden_dim)
        for i, tok in enumerate(tokens_in):
            pre = self.emb.values[tok] @ self.wx.values + h @ self.wh.values + self.bh.values
            h = np.tanh(pre)
            hs[i] = h
        logits = hs @ self.wo.values + self.bo.values
        return hs, log_softmax(logits)

    def score(self, phones: Sequence[int]) -> float:
        """Sum of log p(phone_t | prefix); the EOS factor is excluded."""
        phones = [int(p) for p in phones]
        if not phones:
            return 0.0
        if any(not (0 <= p < self.vocab_size) for p in phones):
            raise ConfigurationError("phone id outside the LM vocabulary")
        tokens_in = [self.vocab_size] + phones[:-1]
        _, logp = self._run(tokens_in)
        return float(logp[np.arange(len(phones)), phones].sum())

    def _seq_loss_and_grads(self, phones: list[int]) -> float:
        """NLL of phones + EOS; accumulates parameter gradients."""
        bos = self.vocab_size
        tokens_in = [bos] + phones
        targets = phones + [bos]
        t = len(tokens_in)
        hs, logp = self._run(tokens_in)
        loss = -float(logp[np.arange(t), targets].sum())

        dlogits = np.exp(logp)
        dlogits[np.arange(t), targets] -= 1.0
        self.wo.add_grad(hs.T @ dlogits)
        self.bo.add_grad(dlogits.sum(axis=0))
        dh_chain = np.zeros(self.hidden_dim)
        demb = self.emb.ensure_grad()
        dwx = self.wx.ensure_grad()
        dwh = self.wh.ensure_grad()
        dbh = self.bh.ensure_grad()
        for i in range(t - 1, -1, -1):
            dh = dlogits[i] @ self.wo.values.T + dh_chain
            dpre = dh * (1.0 - hs[i] * hs[i])
            h_prev = hs[i - 1] if i > 0 else np.zeros(self.hidden_dim)
            dwx += np.outer(self.emb.values[tokens_in[i]], dpre)
            dwh += np.outer(h_prev, dpre)
            dbh += dpre
            demb[tokens_in[i]] += dpre @ self.wx.values.T
            dh_chain = dpre @ self.wh.values.T
        return loss


def perplexity(scorer: LmScorer, transcripts: Iterable[Sequence[int]]) -> float:
    """exp of the mean per-token negative score over all phone tokens."""
    total = 0.0
    tokens = 0
    for seq in transcripts:
        seq = list(seq)
        if not seq:
            continue
        total += scorer.score(seq)
        tokens += len(seq)
    if tokens == 0:
        raise ConfigurationError("no tokens to compute perplexity over")
    return math.exp(-total / tokens)


def train_tiny_rnnlm(
    transcripts: Sequence[Sequence[int]],
    vocab_size: int,
    epochs: int = 30,
    embed_dim: int = 8,
    hidden_dim: int = 16,
    learning_rate: float = 0.1,
    seed: int = 0,
    held_out_every: int = 10,
) -> TinyRnnLm:
    """SGD training with per-sequence updates and gradient norm clipping.

    Every ``held_out_every``-th transcript is held out; the trained model's
    perplexity on that slice is stored on ``held_out_perplexity`` (falls
    back to training perplexity when the corpus is too small to split).
    """
    seqs = [[int(p) for p in t] for t in transcripts if len(t) > 0]
    if not seqs:
        raise ConfigurationError("no non-empty transcripts to train on")
    if held_out_every > 1 and len(seqs) >= 2 * held_out_every:
        held = [s for i, s in enumerate(seqs) if i % held_out_every == 0]
        kept = [s for i, s in enumerate(seqs) if i % held_out_every != 0]
    else:
        held, kept = seqs, seqs
    rng = Rng(seed)
    model = TinyRnnLm(vocab_size, embed_dim=embed_dim, hidden_dim=hidden_dim, rng=rng)
    order = list(range(len(kept)))
    for _ in range(epochs):
        rng.shuffle(order)
        for i in order:
            seq = kept[i]
            for p in model.params():
                p.zero_grad()
            model._seq_loss_and_grads(seq)
            norm2 = sum(float(np.sum(p.grad * p.grad)) for p in model.params())
            scale = learning_rate / (len(seq) + 1)
            clip = 5.0
            norm = math.sqrt(norm2)
            if norm > clip:
                scale *= clip / norm
            for p in model.params():
                p.values -= scale * p.grad
    model.held_out_perplexity = perplexity(model, held)
    return model
