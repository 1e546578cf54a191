"""Chain losses: log-semiring forward-backward, LF-MMI, CE, joint, L2.

Sign conventions: ``lfmmi`` value is the criterion numerator minus
denominator log-probability (a log-probability ratio, larger is better,
<= 0 whenever the numerator is a weight-matched subset of the
denominator). ``ce`` value is a negative log-likelihood (smaller is
better). The trainer therefore descends on ``alpha * ce - lfmmi`` plus the
L2 penalty. All gradients here are exact derivatives of the reported
values with respect to the stated inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, InfeasibleGraphError, NumeratorInfeasibleError
from .graphs import Graph
from .ops import log_softmax
from .tensor import Tensor


@dataclass
class Occupancy:
    """Per-frame pdf posteriors; each row sums to one."""

    gamma: np.ndarray
    total_forward: float
    total_backward: float


@dataclass
class LossReport:
    value: float
    grad: np.ndarray
    num_logprob: float | None = None
    den_logprob: float | None = None


@dataclass
class JointLossReport(LossReport):
    lfmmi_value: float = 0.0
    ce_value: float = 0.0
    ce_grad: np.ndarray | None = None


def _check_loglik(loglik) -> np.ndarray:
    arr = loglik.values if isinstance(loglik, Tensor) else np.asarray(loglik, dtype=np.float64)
    if arr.ndim != 2:
        raise ConfigurationError(f"log-likelihood matrix must be rank 2, got {arr.shape}")
    return arr


def forward_backward(
    unrolled: Graph, loglik, acoustic_scale: float = 1.0
) -> tuple[float, Occupancy]:
    """Log-semiring forward-backward over a time-synchronous graph.

    Arc scores are ``arc_weight + acoustic_scale * loglik[t, pdf]``; the
    final weight of the stopping state joins at the last frame. Returns the
    total log-probability (forward recursion) together with per-frame pdf
    occupancies; the independently computed backward total is carried in
    the Occupancy for cross-checking.
    """
    ll = _check_loglik(loglik)
    layout = unrolled.frame_layout()
    t_frames, n_pdfs = ll.shape
    if layout.T != t_frames:
        raise ConfigurationError(
            f"graph spans {layout.T} frames but log-likelihoods span {t_frames}"
        )
    k = float(acoustic_scale)

    alphas: list[np.ndarray] = [np.zeros(1)]
    for t in range(t_frames):
        f = layout.fwd[t]
        if f["pdf"].size and int(f["pdf"].max()) >= n_pdfs:
            raise ConfigurationError(
                f"graph pdf id {int(f['pdf'].max())} outside {n_pdfs} outputs"
            )
        scores = alphas[t][f["src"]] + f["w"] + k * ll[t, f["pdf"]]
        alphas.append(np.logaddexp.reduceat(scores, f["seg"]))
    total_f = _logsumexp_1d(alphas[t_frames] + layout.finals)

    betas: list[np.ndarray | None] = [None] * (t_frames + 1)
    betas[t_frames] = layout.finals.copy()
    for t in range(t_frames - 1, -1, -1):
        b = layout.bwd[t]
        scores = betas[t + 1][b["dst"]] + b["w"] + k * ll[t, b["pdf"]]
        betas[t] = np.logaddexp.reduceat(scores, b["seg"])
    total_b = float(betas[0][layout.start_local])

    if not np.isfinite(total_f):
        raise InfeasibleGraphError("forward total log-probability is -inf")

    gamma = np.zeros((t_frames, n_pdfs), dtype=np.float64)
    for t in range(t_frames):
        f = layout.fwd[t]
        post = np.exp(
            alphas[t][f["src"]] + f["w"] + k * ll[t, f["pdf"]]
            + betas[t + 1][f["dst"]] - total_f
        )
        gamma[t] = np.bincount(f["pdf"], weights=post, minlength=n_pdfs)
    return float(total_f), Occupancy(gamma=gamma, total_forward=float(total_f), total_backward=total_b)


def _logsumexp_1d(x: np.ndarray) -> float:
    m = float(np.max(x))
    if not np.isfinite(m):
        return m
    return m + float(np.log(np.sum(np.exp(x - m))))


def lfmmi_loss(
    num: Graph, den: Graph, loglik, acoustic_scale: float = 1.0
) -> LossReport:
    """Sequence criterion value and its gradient with respect to loglik.

    value = num_logprob - den_logprob; grad = k * (gamma_num - gamma_den).
    An infeasible numerator raises NumeratorInfeasibleError so the trainer
    can skip the utterance.
    """
    ll = _check_loglik(loglik)
    k = float(acoustic_scale)
    try:
        num_total, num_occ = forward_backward(num, ll, k)
    except InfeasibleGraphError as e:
        raise NumeratorInfeasibleError(str(e)) from e
    den_total, den_occ = forward_backward(den, ll, k)
    grad = k * (num_occ.gamma - den_occ.gamma)
    return LossReport(
        value=num_total - den_total,
        grad=grad,
        num_logprob=num_total,
        den_logprob=den_total,
    )


def ce_loss(logits, targets) -> LossReport:
    """Frame-level cross entropy: value = -sum_t log_softmax(logits)[t, y_t].

    grad is with respect to the logits: softmax - one_hot.
    """
    x = _check_loglik(logits)
    y = np.asarray(targets, dtype=np.int64).reshape(-1)
    t_frames, n_out = x.shape
    if y.size != t_frames:
        raise ConfigurationError(
            f"{y.size} targets do not match {t_frames} logit rows"
        )
    if y.size and (y.min() < 0 or y.max() >= n_out):
        raise ConfigurationError(f"target id outside [0, {n_out})")
    logp = log_softmax(x)
    value = -float(logp[np.arange(t_frames), y].sum())
    grad = np.exp(logp)
    grad[np.arange(t_frames), y] -= 1.0
    return LossReport(value=value, grad=grad)


def joint_loss(
    num: Graph,
    den: Graph,
    loglik,
    ce_logits,
    targets,
    acoustic_scale: float = 1.0,
    alpha: float = 0.1,
) -> JointLossReport:
    """Bookkeeping combination value = lfmmi.value + alpha * ce.value.

    ``grad`` is d(lfmmi value)/d loglik and ``ce_grad`` is
    d(ce value)/d ce_logits; the trainer weights and signs them for
    descent. With alpha = 0 the CE branch is skipped entirely and the
    report reduces to the sequence criterion.
    """
    mmi = lfmmi_loss(num, den, loglik, acoustic_scale)
    if alpha == 0.0:
        return JointLossReport(
            value=mmi.value,
            grad=mmi.grad,
            num_logprob=mmi.num_logprob,
            den_logprob=mmi.den_logprob,
            lfmmi_value=mmi.value,
            ce_value=0.0,
            ce_grad=None,
        )
    ce = ce_loss(ce_logits, targets)
    return JointLossReport(
        value=mmi.value + alpha * ce.value,
        grad=mmi.grad,
        num_logprob=mmi.num_logprob,
        den_logprob=mmi.den_logprob,
        lfmmi_value=mmi.value,
        ce_value=ce.value,
        ce_grad=ce.grad,
    )


def l2_penalty(params, coefficient: float) -> float:
    """c * sum(theta^2) over all parameters; accumulates 2*c*theta grads."""
    c = float(coefficient)
    total = 0.0
    for p in params:
        total += float(np.sum(p.values * p.values))
        if c != 0.0:
            p.add_grad(2.0 * c * p.values)
    return c * total
