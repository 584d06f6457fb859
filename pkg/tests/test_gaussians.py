import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate
from scipy.stats import norm

from dribo import ndgrad as G
from dribo.gaussians import STDDEV_FLOOR, DiagGaussian, kl, log_prob, rsample, skl
from dribo.ndgrad import Node


def gauss(mean, std):
    return DiagGaussian(Node(np.atleast_1d(np.asarray(mean, float))), Node(np.atleast_1d(np.asarray(std, float))))


def quad_kl(mp, sp, mq, sq):
    """Independent oracle: integrate p log(p/q) numerically."""
    f = lambda x: norm.pdf(x, mp, sp) * (norm.logpdf(x, mp, sp) - norm.logpdf(x, mq, sq))
    return integrate.quad(f, -40, 40, limit=200, epsabs=1e-13, epsrel=1e-13)[0]


def test_kl_identical_is_zero():
    p = gauss([0.3, -1.0], [0.5, 2.0])
    assert kl(p, p).item() == 0.0


def test_kl_unit_shift():
    assert kl(gauss(1.0, 1.0), gauss(0.0, 1.0)).item() == pytest.approx(0.5, abs=1e-12)


def test_kl_scale_case_closed_form():
    # log(sq/sp) + (sp^2 + dmu^2) / (2 sq^2) - 1/2 with sp = 2, sq = 1
    want = np.log(1.0 / 2.0) + 4.0 / 2.0 - 0.5
    assert want == pytest.approx(0.8068528194400546, abs=1e-15)
    got = kl(gauss(0.0, 2.0), gauss(0.0, 1.0)).item()
    assert got == pytest.approx(want, abs=1e-12)
    assert got == pytest.approx(quad_kl(0.0, 2.0, 0.0, 1.0), abs=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.floats(-2, 2), st.floats(0.3, 3), st.floats(-2, 2), st.floats(0.3, 3))
def test_kl_matches_quadrature(mp, sp, mq, sq):
    assert kl(gauss(mp, sp), gauss(mq, sq)).item() == pytest.approx(quad_kl(mp, sp, mq, sq), abs=1e-8)


def test_kl_nonnegative_on_random_pairs():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        d = int(rng.integers(1, 5))
        p = gauss(rng.normal(size=d), rng.uniform(0.05, 3, d))
        q = gauss(rng.normal(size=d), rng.uniform(0.05, 3, d))
        assert kl(p, q).item() >= 0.0


def test_skl_cases():
    p, q = gauss(1.0, 1.0), gauss(0.0, 1.0)
    assert skl(p, q).item() == pytest.approx(0.5, abs=1e-12)
    assert skl(p, p).item() == 0.0


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(-3, 3), st.floats(0.01, 4), st.floats(-3, 3), st.floats(0.01, 4)),
                min_size=1, max_size=4))
def test_skl_symmetric_and_mean_of_directions(rows):
    a = np.array(rows)
    p, q = gauss(a[:, 0], a[:, 1]), gauss(a[:, 2], a[:, 3])
    s = skl(p, q).item()
    assert s == skl(q, p).item()
    assert s >= 0.0
    assert s == pytest.approx(0.5 * (kl(p, q).item() + kl(q, p).item()), rel=1e-14, abs=1e-15)


def test_kl_shape_mismatch():
    with pytest.raises(G.InvalidShapeError):
        kl(gauss([0.0, 1.0], [1.0, 1.0]), gauss(0.0, 1.0))


def test_rsample_cases():
    assert np.array_equal(rsample(gauss([1.5, -2.0], [3.0, 0.1]), np.zeros(2)).value, [1.5, -2.0])
    assert rsample(gauss(0.0, 2.0), np.ones(1)).item() == 2.0
    mean = G.param(np.array([0.2, 0.4, -1.0]))
    G.backward(G.sum_(rsample(DiagGaussian(mean, Node(np.ones(3))), np.array([0.3, -1.0, 2.0]))))
    assert np.array_equal(mean.grad, np.ones(3))
    with pytest.raises(G.InvalidShapeError):
        rsample(gauss([0.0, 1.0], [1.0, 1.0]), np.zeros(3))


def test_log_prob_cases():
    half_log_2pi = 0.5 * np.log(2 * np.pi)
    assert log_prob(gauss(0.7, 1.0), np.array([0.7])).item() == pytest.approx(-half_log_2pi, abs=1e-12)
    assert log_prob(gauss(0.7, 1.0), np.array([0.7])).item() == pytest.approx(-0.918938533204673, abs=1e-12)
    assert log_prob(gauss(0.7, 2.0), np.array([2.7])).item() == pytest.approx(
        log_prob(gauss(0.7, 2.0), np.array([0.7])).item() - 0.5, abs=1e-12)
    two = log_prob(gauss([0.0, 1.0], [1.0, 3.0]), np.array([0.5, -1.0])).item()
    parts = log_prob(gauss(0.0, 1.0), np.array([0.5])).item() + log_prob(gauss(1.0, 3.0), np.array([-1.0])).item()
    assert two == pytest.approx(parts, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.floats(-3, 3), st.floats(0.05, 4), st.floats(-5, 5))
def test_log_prob_matches_scipy(m, s, x):
    assert log_prob(gauss(m, s), np.array([x])).item() == pytest.approx(norm.logpdf(x, m, s), abs=1e-10)


def test_monte_carlo_kl_within_three_standard_errors():
    rng = np.random.default_rng(0)
    p, q = gauss([0.3, -0.5], [0.8, 1.7]), gauss([-0.2, 0.4], [1.1, 0.9])
    n = 100_000
    noise = rng.standard_normal((n, 2))
    bp = DiagGaussian(Node(np.broadcast_to(p.mean.value, (n, 2)).copy()), Node(np.broadcast_to(p.stddev.value, (n, 2)).copy()))
    bq = DiagGaussian(Node(np.broadcast_to(q.mean.value, (n, 2)).copy()), Node(np.broadcast_to(q.stddev.value, (n, 2)).copy()))
    x = rsample(bp, noise).value
    diff = log_prob(bp, x).value - log_prob(bq, x).value
    se = diff.std(ddof=1) / np.sqrt(n)
    assert abs(diff.mean() - kl(p, q).item()) < 3 * se


def test_from_raw_respects_floor():
    d = DiagGaussian.from_raw(Node(np.zeros(3)), Node(np.array([-1e3, 0.0, 5.0])))
    assert np.all(d.stddev.value >= STDDEV_FLOOR)
    assert d.stddev.value[0] == STDDEV_FLOOR


def test_gradients_match_finite_differences():
    from dribo.gradsuite import check_layers

    recs = {r.name: r for r in check_layers(seed=3)}
    for name in ("gaussian.kl", "gaussian.skl", "gaussian.log_prob"):
        assert recs[name].error < 1e-4, name
