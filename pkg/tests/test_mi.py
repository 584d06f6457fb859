import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dribo import ndgrad as G
from dribo.joint import JointTable
from dribo.mi import BilinearCritic, infonce, score_matrix
from dribo.ndgrad import Node
from dribo.nn import Adam
from dribo.oracle import mutual_info


def critic_with(W):
    c = BilinearCritic(np.shape(W)[0])
    c.W.value = np.asarray(W, float)
    return c


def lse_oracle(scores):
    """Plain-loop reference using math.fsum over exp(s - max)."""
    m = len(scores)
    total = 0.0
    for i in range(m):
        mx = max(scores[i])
        lme = mx + math.log(math.fsum(math.exp(s - mx) for s in scores[i]) / m)
        total += scores[i][i] - lme
    return total / m


def test_score_matrix_cases():
    out = score_matrix(Node(np.eye(2)), Node(np.array([[2.0, 0.0], [0.0, 3.0]])), critic_with(np.eye(2)))
    assert np.array_equal(out.value, [[2.0, 0.0], [0.0, 3.0]])
    q = np.linalg.qr(np.random.default_rng(0).normal(size=(3, 3)))[0]
    assert np.allclose(score_matrix(Node(q), Node(q), critic_with(np.eye(3))).value, np.eye(3), atol=1e-12)
    assert np.array_equal(score_matrix(Node(q), Node(q), critic_with(np.zeros((3, 3)))).value, np.zeros((3, 3)))


def test_score_matrix_shape_errors():
    with pytest.raises(G.InvalidShapeError):
        score_matrix(Node(np.ones((2, 3))), Node(np.ones((3, 3))), critic_with(np.eye(3)))
    with pytest.raises(G.InvalidShapeError):
        score_matrix(Node(np.ones((2, 2))), Node(np.ones((2, 2))), critic_with(np.eye(3)))


def test_infonce_uniform_is_exactly_zero():
    for m in (2, 3, 7, 64):
        assert infonce(Node(np.full((m, m), 0.37))).item() == 0.0


def test_infonce_saturation():
    s = np.full((4, 4), -40.0)
    np.fill_diagonal(s, 40.0)
    assert abs(infonce(Node(s)).item() - np.log(4)) < 1e-10


def test_infonce_hand_case():
    got = infonce(Node(np.array([[1.0, 0.0], [0.0, 1.0]]))).item()
    assert got == pytest.approx(1.0 - np.log((np.e + 1) / 2), abs=1e-14)
    assert got == pytest.approx(0.379885, abs=1e-6)


def test_infonce_needs_two_pairs():
    with pytest.raises(G.ContractError):
        infonce(Node(np.ones((1, 1))))
    with pytest.raises(G.InvalidShapeError):
        infonce(Node(np.ones((2, 3))))


def test_infonce_no_overflow_at_large_scores():
    s = np.array([[1000.0, -1000.0], [999.0, 1000.0]])
    v = infonce(Node(s)).item()
    assert np.isfinite(v) and v <= np.log(2)


def test_bound_holds_on_ten_thousand_random_matrices():
    rng = np.random.default_rng(0)
    violations = 0
    for _ in range(10_000):
        m = int(rng.integers(2, 9))
        s = rng.normal(scale=rng.choice([0.1, 1.0, 10.0, 100.0]), size=(m, m))
        violations += infonce(Node(s)).item() > np.log(m)
    assert violations == 0


@settings(max_examples=200, deadline=None)
@given(st.integers(2, 6).flatmap(lambda m: arrays(np.float64, (m, m), elements=st.floats(-50, 50))))
def test_matches_reference_and_bound(s):
    v = infonce(Node(s)).item()
    assert v <= np.log(len(s))
    assert v == pytest.approx(lse_oracle(s.tolist()), abs=1e-10)


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 6).flatmap(lambda m: arrays(np.float64, (m, m), elements=st.floats(-20, 20))),
       st.integers(0, 5), st.floats(-30, 30))
def test_row_shift_is_exactly_invariant(s, row, c):
    row = row % len(s)
    t = s.copy()
    t[row] += c
    assert infonce(Node(t)).item() == pytest.approx(infonce(Node(s)).item(), abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 6).flatmap(lambda m: arrays(np.float64, (m, m), elements=st.floats(-5, 5))),
       st.integers(0, 5))
def test_monotone_in_positive_score(s, i):
    i = i % len(s)
    x = G.param(s)
    G.backward(infonce(x))
    assert x.grad[i, i] >= 0.0
    bumped = s.copy()
    bumped[i, i] += 1e-3
    assert infonce(Node(bumped)).item() >= infonce(Node(s)).item() - 1e-15


def test_trained_estimate_approaches_one_bit_from_below():
    # X uniform on {0, 1}; each view embeds X in R^4 plus small noise
    rng = np.random.default_rng(0)
    d, m = 4, 64
    codes = np.array([[1.0, 0.0, 0.5, -0.5], [-1.0, 0.5, 0.0, 0.5]])

    def batch():
        x = rng.integers(0, 2, m)
        return codes[x] + 0.05 * rng.standard_normal((m, d)), codes[x] + 0.05 * rng.standard_normal((m, d))

    critic = BilinearCritic(d, seed=0)
    opt = Adam(critic.params.nodes(), lr=0.05)
    for _ in range(300):
        a, b = batch()
        opt.zero_grad()
        G.backward(G.neg(infonce(score_matrix(Node(a), Node(b), critic))))
        opt.step()
    est = np.mean([infonce(score_matrix(Node(a), Node(b), critic)).item() for a, b in (batch() for _ in range(200))])

    j = JointTable(["v1", "v2"], [2, 2], np.array([[0, 0], [1, 1]]), np.array([0.5, 0.5]))
    true_mi = mutual_info(j, ["v1"], ["v2"])
    assert true_mi == pytest.approx(np.log(2), abs=1e-12)
    assert est <= true_mi
    assert est > true_mi - 0.1


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(1)
    for m in (2, 5):
        assert G.finite_diff_check(infonce, rng.normal(size=(m, m))) < 1e-6
    W = rng.normal(size=(3, 3))
    s1, s2 = Node(rng.normal(size=(4, 3))), Node(rng.normal(size=(4, 3)))
    assert G.finite_diff_check(lambda w: infonce(score_matrix(s1, s2, critic_with_node(w))), W) < 1e-6


def critic_with_node(w):
    c = BilinearCritic(w.shape[0])
    c.W = w
    return c
