"""Scikit-learn style facade over the training and decoding pipeline.

X is a list of (T_i, F) float arrays, y a list of phone-id sequences.
Frame-level state alignments are optional; without them the CE branch is
disabled (alpha is forced to 0) and only the sequence criterion trains the
model. ``predict`` returns Viterbi phone sequences decoded over the
phone-loop graph; ``score`` is 1 - phone error rate.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from .corpus import Utterance
from .errors import ConfigurationError
from .network import desk_config
from .training import TrainConfig, evaluate, train


def check_feature_arrays(X, feature_dim: int | None = None) -> list[np.ndarray]:
    """Validate a list of per-utterance feature matrices.

    Each element must be a finite 2-D float array; all must agree on the
    feature dimension (and match ``feature_dim`` when given).
    """
    if not isinstance(X, (list, tuple)) or len(X) == 0:
        raise ConfigurationError("X must be a non-empty list of (T, F) arrays")
    out = []
    dim = feature_dim
    for i, x in enumerate(X):
        arr = np.asarray(x, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] < 1:
            raise ConfigurationError(
                f"X[{i}] must be a 2-D array with at least one frame, got shape {arr.shape}"
            )
        if not np.all(np.isfinite(arr)):
            raise ConfigurationError(f"X[{i}] contains non-finite values")
        if dim is None:
            dim = arr.shape[1]
        elif arr.shape[1] != dim:
            raise ConfigurationError(
                f"X[{i}] has {arr.shape[1]} features, expected {dim}"
            )
        out.append(arr)
    return out


def check_phone_sequences(y, count: int, num_phones: int | None = None) -> list[list[int]]:
    if not isinstance(y, (list, tuple)) or len(y) != count:
        raise ConfigurationError(f"y must be a list of {count} phone sequences")
    out = []
    for i, seq in enumerate(y):
        phones = [int(p) for p in seq]
        if not phones:
            raise ConfigurationError(f"y[{i}] is empty")
        if any(p < 0 for p in phones):
            raise ConfigurationError(f"y[{i}] contains a negative phone id")
        if num_phones is not None and any(p >= num_phones for p in phones):
            raise ConfigurationError(
                f"y[{i}] contains a phone id >= num_phones ({num_phones})"
            )
        out.append(phones)
    return out


def check_alignments(alignments, X: list[np.ndarray], num_pdfs: int) -> list[np.ndarray]:
    if not isinstance(alignments, (list, tuple)) or len(alignments) != len(X):
        raise ConfigurationError("alignments must parallel X")
    out = []
    for i, (a, x) in enumerate(zip(alignments, X)):
        arr = np.asarray(a, dtype=np.int64).reshape(-1)
        if arr.size != x.shape[0]:
            raise ConfigurationError(
                f"alignments[{i}] has {arr.size} frames, features have {x.shape[0]}"
            )
        if arr.size and (arr.min() < 0 or arr.max() >= num_pdfs):
            raise ConfigurationError(
                f"alignments[{i}] contains a pdf id outside [0, {num_pdfs})"
            )
        out.append(arr)
    return out


class PyramidalFsmnRecognizer(BaseEstimator):
    """Desk-scale phone recognizer with the fit/predict/score surface."""

    def __init__(
        self,
        num_phones: int | None = None,
        num_blocks: int = 4,
        hidden_dim: int = 96,
        bottleneck_dim: int = 32,
        use_front_end: bool = True,
        variant: str = "pyramidal",
        epochs: int = 10,
        batch_size: int = 16,
        learning_rate: float = 0.05,
        momentum: float = 0.9,
        max_grad_norm: float | None = 1.0,
        ce_weight: float = 0.1,
        acoustic_scale: float = 1.0,
        l2: float = 1e-4,
        lm_order: int = 2,
        seed: int = 0,
    ):
        self.num_phones = num_phones
        self.num_blocks = num_blocks
        self.hidden_dim = hidden_dim
        self.bottleneck_dim = bottleneck_dim
        self.use_front_end = use_front_end
        self.variant = variant
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.max_grad_norm = max_grad_norm
        self.ce_weight = ce_weight
        self.acoustic_scale = acoustic_scale
        self.l2 = l2
        self.lm_order = lm_order
        self.seed = seed

    def fit(self, X, y, alignments=None):
        feats = check_feature_arrays(X)
        n_phones = self.num_phones
        if n_phones is None:
            n_phones = 1 + max(max(seq) for seq in y if len(seq))
        phones = check_phone_sequences(y, len(feats), n_phones)
        aligns: list[np.ndarray | None]
        if alignments is None:
            aligns = [None] * len(feats)
            alpha = 0.0
        else:
            aligns = check_alignments(alignments, feats, 2 * n_phones)
            alpha = self.ce_weight
        utts = [
            Utterance(utt_id=f"fit{i:05d}", features=f, phones=p, alignment=a)
            for i, (f, p, a) in enumerate(zip(feats, phones, aligns))
        ]
        cfg = desk_config(
            feature_dim=feats[0].shape[1],
            num_phones=n_phones,
            num_blocks=self.num_blocks,
            hidden_dim=self.hidden_dim,
            bottleneck_dim=self.bottleneck_dim,
            use_front_end=self.use_front_end,
            variant=self.variant,
            l2_coefficient=self.l2,
        )
        tcfg = TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            momentum=self.momentum,
            max_grad_norm=self.max_grad_norm,
            alpha=alpha,
            acoustic_scale=self.acoustic_scale,
            l2=self.l2,
            lm_order=self.lm_order,
            seed=self.seed,
        )
        result = train(cfg, utts, tcfg)
        self.network_ = result.network
        self.lm_ = result.lm
        self.history_ = result.history
        self.n_phones_ = n_phones
        self.feature_dim_ = feats[0].shape[1]
        return self

    def _check_fitted(self):
        if not hasattr(self, "network_"):
            raise ConfigurationError("estimator is not fitted; call fit first")

    def predict(self, X) -> list[list[int]]:
        from .decoding import viterbi
        from .graphs import build_denominator_graph

        self._check_fitted()
        feats = check_feature_arrays(X, self.feature_dim_)
        dens: dict[int, object] = {}
        out = []
        for f in feats:
            t = f.shape[0]
            if t not in dens:
                dens[t] = build_denominator_graph(self.lm_, t)
            hyp = viterbi(dens[t], self.network_.forward(f).chain, self.acoustic_scale)
            out.append(list(hyp.phones))
        return out

    def predict_frames(self, X) -> list[np.ndarray]:
        """Per-frame pdf ids from the CE head's argmax."""
        self._check_fitted()
        feats = check_feature_arrays(X, self.feature_dim_)
        return [
            np.argmax(self.network_.forward(f).ce_logits, axis=1) for f in feats
        ]

    def score(self, X, y) -> float:
        """1 - phone error rate of Viterbi decodes against y."""
        from .training import levenshtein

        self._check_fitted()
        feats = check_feature_arrays(X, self.feature_dim_)
        refs = check_phone_sequences(y, len(feats), self.n_phones_)
        hyps = self.predict(feats)
        edits = sum(levenshtein(h, r) for h, r in zip(hyps, refs))
        tokens = sum(len(r) for r in refs)
        return 1.0 - edits / tokens

    def evaluate(self, X, y, alignments=None):
        """Full metrics object over a labeled corpus."""
        self._check_fitted()
        feats = check_feature_arrays(X, self.feature_dim_)
        refs = check_phone_sequences(y, len(feats), self.n_phones_)
        if alignments is not None:
            aligns = check_alignments(alignments, feats, 2 * self.n_phones_)
        else:
            aligns = [None] * len(feats)
        utts = [
            Utterance(utt_id=f"eval{i:05d}", features=f, phones=p, alignment=a)
            for i, (f, p, a) in enumerate(zip(feats, refs, aligns))
        ]
        return evaluate(self.network_, utts, self.lm_, self.acoustic_scale)
