"""Losses checked against path enumeration and finite differences.

The brute-force oracle scores every complete path explicitly:
total = logsumexp_p(weight_p + k * sum_t ll[t, pdf_p[t]]) and the frame
occupancy of pdf j at frame t is the posterior mass of paths emitting j
there. Forward-backward must reproduce both to near machine precision.
"""

import math

import numpy as np
import pytest

from fsmnchain.errors import (
    ConfigurationError,
    InfeasibleGraphError,
    NumeratorInfeasibleError,
)
from fsmnchain.gradcheck import grad_check
from fsmnchain.graphs import (
    PhoneLm,
    build_denominator_graph,
    build_numerator_graph,
    build_phone_hmm,
    denominator_rolled,
    enumerate_paths,
    unroll_to_frames,
)
from fsmnchain.loss import ce_loss, forward_backward, joint_loss, l2_penalty, lfmmi_loss
from fsmnchain.rng import Rng
from fsmnchain.tensor import Tensor


def fb_by_enumeration(rolled, num_frames, loglik, acoustic_scale=1.0):
    """Exhaustive reference for the forward-backward total and occupancies."""
    paths = enumerate_paths(rolled, num_frames)
    scores = np.array(
        [
            p.log_weight
            + acoustic_scale * sum(loglik[t, p.pdfs[t]] for t in range(num_frames))
            for p in paths
        ]
    )
    m = scores.max()
    total = m + math.log(np.exp(scores - m).sum())
    gamma = np.zeros_like(loglik)
    for p, s in zip(paths, scores):
        post = math.exp(s - total)
        for t in range(num_frames):
            gamma[t, p.pdfs[t]] += post
    return total, gamma


def random_loglik(rng, num_frames, num_pdfs, scale=1.5):
    return np.array(
        [[scale * rng.gauss() for _ in range(num_pdfs)] for _ in range(num_frames)]
    )


def test_single_phone_total_matches_enumeration():
    rolled = build_phone_hmm(0)
    rng = Rng(11)
    ll = random_loglik(rng, 3, 2)
    unrolled = unroll_to_frames(rolled, 3)
    total, occ = forward_backward(unrolled, ll)
    ref_total, ref_gamma = fb_by_enumeration(rolled, 3, ll)
    assert abs(total - ref_total) < 1e-12
    assert np.max(np.abs(occ.gamma - ref_gamma)) < 1e-12


def test_forward_backward_matches_enumeration_across_graphs():
    # Mix of numerator and denominator graphs, orders, scales, and lengths.
    cases = 0
    for seed in range(6):
        rng = Rng(1000 + seed)
        vocab = 2 + seed % 2
        order = 1 + seed % 2
        lm = PhoneLm.estimate([[0, 1], [1, 0, 1 % vocab]], vocab_size=vocab, order=order)
        num_frames = 2 + seed % 3
        k = (0.4, 1.0, 1.7)[seed % 3]
        den_rolled = denominator_rolled(lm)
        graphs = [
            (den_rolled, build_denominator_graph(lm, num_frames)),
        ]
        if num_frames >= 2:
            num_rolled, num_unrolled = _numerator_pair(lm, [0, 1], num_frames)
            graphs.append((num_rolled, num_unrolled))
        for rolled, unrolled in graphs:
            ll = random_loglik(rng, num_frames, 2 * vocab)
            total, occ = forward_backward(unrolled, ll, acoustic_scale=k)
            ref_total, ref_gamma = fb_by_enumeration(rolled, num_frames, ll, k)
            assert abs(total - ref_total) < 1e-9
            assert np.max(np.abs(occ.gamma - ref_gamma)) < 1e-9
            assert abs(occ.total_forward - occ.total_backward) < 1e-10
            cases += 1
    assert cases >= 10


def _numerator_pair(lm, transcript, num_frames):
    """Rolled reference via a fresh numerator unroll (already frame-exact)."""
    unrolled = build_numerator_graph(transcript, num_frames, lm)
    # The numerator graph is itself time-synchronous; enumeration over it
    # with the same frame count is an independent path walk.
    return unrolled, unrolled


def test_occupancy_rows_sum_to_one():
    lm = PhoneLm.estimate([[0, 1, 2]], vocab_size=3, order=2)
    g = build_denominator_graph(lm, 4)
    rng = Rng(5)
    ll = random_loglik(rng, 4, 6)
    _, occ = forward_backward(g, ll, acoustic_scale=0.8)
    assert np.max(np.abs(occ.gamma.sum(axis=1) - 1.0)) < 1e-12


def test_acoustic_scale_zero_ignores_loglik():
    lm = PhoneLm.estimate([[0, 1]], vocab_size=2, order=1)
    g = build_denominator_graph(lm, 3)
    rng = Rng(9)
    total_a, _ = forward_backward(g, random_loglik(rng, 3, 4), acoustic_scale=0.0)
    total_b, _ = forward_backward(g, random_loglik(rng, 3, 4), acoustic_scale=0.0)
    assert total_a == total_b
    ref_total, _ = fb_by_enumeration(denominator_rolled(lm), 3, np.zeros((3, 4)), 0.0)
    assert abs(total_a - ref_total) < 1e-12


def test_forward_backward_validation():
    lm = PhoneLm.estimate([[0, 1]], vocab_size=2, order=1)
    g = build_denominator_graph(lm, 3)
    with pytest.raises(ConfigurationError):
        forward_backward(g, np.zeros((2, 4)))  # frame count mismatch
    with pytest.raises(ConfigurationError):
        forward_backward(g, np.zeros((3, 2)))  # pdf ids reach 3
    with pytest.raises(ConfigurationError):
        forward_backward(g, np.zeros(6))  # rank 1


def test_forward_backward_infeasible_when_frame_blocked():
    lm = PhoneLm.estimate([[0, 1]], vocab_size=2, order=1)
    g = build_denominator_graph(lm, 3)
    ll = np.zeros((3, 4))
    ll[1, :] = -np.inf
    with pytest.raises(InfeasibleGraphError):
        forward_backward(g, ll)


def test_lfmmi_numerator_equals_denominator_is_exactly_zero():
    lm = PhoneLm.estimate([[0, 1]], vocab_size=2, order=1)
    g = build_denominator_graph(lm, 4)
    rng = Rng(3)
    ll = random_loglik(rng, 4, 4)
    rep = lfmmi_loss(g, g, ll)
    assert rep.value == 0.0
    assert np.all(rep.grad == 0.0)


def test_lfmmi_zero_scale_zeroes_gradient():
    lm = PhoneLm.estimate([[0, 1]], vocab_size=2, order=1)
    num = build_numerator_graph([0, 1], 4, lm)
    den = build_denominator_graph(lm, 4)
    rng = Rng(4)
    rep = lfmmi_loss(num, den, random_loglik(rng, 4, 4), acoustic_scale=0.0)
    assert np.all(rep.grad == 0.0)


def test_lfmmi_value_nonpositive_for_subset_numerator():
    lm = PhoneLm.estimate([[0, 1], [1, 1, 0]], vocab_size=2, order=2)
    den = build_denominator_graph(lm, 5)
    for seed, transcript in [(0, [0, 1]), (1, [1, 1, 0]), (2, [0, 0])]:
        num = build_numerator_graph(transcript, 5, lm)
        rng = Rng(40 + seed)
        rep = lfmmi_loss(num, den, random_loglik(rng, 5, 4))
        assert rep.value <= 0.0
        assert rep.value == pytest.approx(rep.num_logprob - rep.den_logprob)


def test_lfmmi_gradient_rows_sum_to_zero():
    lm = PhoneLm.estimate([[0, 1, 0]], vocab_size=2, order=2)
    num = build_numerator_graph([0, 1, 0], 6, lm)
    den = build_denominator_graph(lm, 6)
    rng = Rng(6)
    rep = lfmmi_loss(num, den, random_loglik(rng, 6, 4), acoustic_scale=1.3)
    assert np.max(np.abs(rep.grad.sum(axis=1))) < 1e-10


def test_lfmmi_gradient_matches_finite_differences():
    lm = PhoneLm.estimate([[0, 1], [1, 0]], vocab_size=2, order=2)
    num = build_numerator_graph([0, 1], 4, lm)
    den = build_denominator_graph(lm, 4)
    rng = Rng(7)
    ll = Tensor(random_loglik(rng, 4, 4))

    def run():
        rep = lfmmi_loss(num, den, ll.values, acoustic_scale=0.7)
        ll.add_grad(rep.grad)
        return rep.value

    report = grad_check(run, [ll], eps=(1e-4, 1e-5), tol=1e-5, atol=1e-10)
    assert report.passed, report.worst


def test_lfmmi_infeasible_numerator_is_distinguished():
    lm = PhoneLm.estimate([[0, 1]], vocab_size=2, order=1)
    num = build_numerator_graph([0, 1], 4, lm)
    den = build_denominator_graph(lm, 4)
    ll = np.zeros((4, 4))
    ll[0, :] = -np.inf
    with pytest.raises(NumeratorInfeasibleError):
        lfmmi_loss(num, den, ll)


def test_ce_uniform_logits_hand_value():
    logits = np.zeros((3, 4))
    rep = ce_loss(logits, [0, 3, 1])
    assert rep.value == pytest.approx(3.0 * math.log(4.0), abs=1e-12)
    expected = np.full((3, 4), 0.25)
    expected[0, 0] -= 1.0
    expected[1, 3] -= 1.0
    expected[2, 1] -= 1.0
    assert np.max(np.abs(rep.grad - expected)) < 1e-12


def test_ce_gradient_matches_finite_differences():
    rng = Rng(8)
    logits = Tensor(random_loglik(rng, 5, 6))
    targets = [rng.randint(0, 5) for _ in range(5)]

    def run():
        rep = ce_loss(logits.values, targets)
        logits.add_grad(rep.grad)
        return rep.value

    report = grad_check(run, [logits], eps=(1e-4, 1e-5), tol=1e-5, atol=1e-10)
    assert report.passed, report.worst


def test_ce_validation():
    with pytest.raises(ConfigurationError):
        ce_loss(np.zeros((3, 4)), [0, 1])  # count mismatch
    with pytest.raises(ConfigurationError):
        ce_loss(np.zeros((3, 4)), [0, 1, 4])  # out of range
    with pytest.raises(ConfigurationError):
        ce_loss(np.zeros(4), [0])  # rank 1


def test_joint_alpha_zero_reduces_to_sequence_loss():
    lm = PhoneLm.estimate([[0, 1]], vocab_size=2, order=1)
    num = build_numerator_graph([0, 1], 4, lm)
    den = build_denominator_graph(lm, 4)
    rng = Rng(10)
    ll = random_loglik(rng, 4, 4)
    logits = random_loglik(rng, 4, 4)
    plain = lfmmi_loss(num, den, ll)
    rep = joint_loss(num, den, ll, logits, [0, 0, 1, 1], alpha=0.0)
    assert rep.value == plain.value
    assert np.array_equal(rep.grad, plain.grad)
    assert rep.ce_value == 0.0
    assert rep.ce_grad is None


def test_joint_combines_both_terms():
    lm = PhoneLm.estimate([[0, 1]], vocab_size=2, order=1)
    num = build_numerator_graph([0, 1], 4, lm)
    den = build_denominator_graph(lm, 4)
    rng = Rng(12)
    ll = random_loglik(rng, 4, 4)
    logits = random_loglik(rng, 4, 4)
    targets = [0, 1, 2, 3]
    rep = joint_loss(num, den, ll, logits, targets, acoustic_scale=0.9, alpha=0.1)
    mmi = lfmmi_loss(num, den, ll, acoustic_scale=0.9)
    ce = ce_loss(logits, targets)
    assert rep.value == mmi.value + 0.1 * ce.value
    assert rep.lfmmi_value == mmi.value
    assert rep.ce_value == ce.value
    assert np.array_equal(rep.grad, mmi.grad)
    assert np.array_equal(rep.ce_grad, ce.grad)


def test_l2_penalty_value_and_grad():
    p = Tensor([1.0, 2.0])
    q = Tensor([[3.0]])
    p.ensure_grad()
    q.ensure_grad()
    total = l2_penalty([p, q], 0.5)
    assert total == pytest.approx(0.5 * (1 + 4 + 9), abs=1e-12)
    assert np.allclose(p.grad, [1.0, 2.0])
    assert np.allclose(q.grad, [[3.0]])


def test_l2_penalty_zero_coefficient_leaves_grads_alone():
    p = Tensor([1.0, 2.0])
    p.ensure_grad()
    assert l2_penalty([p], 0.0) == 0.0
    assert np.all(p.grad == 0.0)
