"""Acceptance criteria, one PASS/FAIL line per criterion.

The lines are written past pytest's capture so they land in the test log.
The learning criteria train real agents and take most of an hour on one core.
"""

import math
import time

import numpy as np
import pytest

from conftest import tiny_config
from dribo import ndgrad as G
from dribo.agents.training import train
from dribo.gaussians import DiagGaussian, kl, log_prob, rsample, skl
from dribo.gradsuite import run_gradient_suite
from dribo.harness.experiments import ablation_config, ppo_learning_seeds, run_ablation, sac_learning_smoke
from dribo.loss import BetaSchedule, beta_at, kl_balanced
from dribo.mi import infonce
from dribo.ndgrad import Node
from dribo.oracle import run_suite


@pytest.fixture
def report(capsys):
    def emit(name, ok, detail=""):
        with capsys.disabled():
            print(f"\nACCEPTANCE {name}: {'PASS' if ok else 'FAIL'} {detail}".rstrip())
        return ok
    return emit


def gauss(mean, std):
    return DiagGaussian(Node(np.atleast_1d(np.asarray(mean, float))), Node(np.atleast_1d(np.asarray(std, float))))


def test_gradient_suite(report):
    t0 = time.process_time()
    records = run_gradient_suite(seed=0)
    cpu = time.process_time() - t0
    worst = max(r.error for r in records)
    failed = [r.line() for r in records if not r.passed]
    names = {r.name.split("[")[0] for r in records}
    composite = any("dribo_loss" in n for n in names) and any("sac" in n for n in names) \
        and any("ppo" in n for n in names)
    ok = not failed and composite and worst < 1e-4 and cpu < 300
    assert report("gradient-suite", ok, f"checks={len(records)} max_rel_err={worst:.3e} cpu_s={cpu:.1f}"), failed


def test_gaussian_analytics(report):
    # hand values of the closed forms
    cases = [
        (kl(gauss(1.0, 1.0), gauss(0.0, 1.0)).item(), 0.5),
        (kl(gauss(0.0, 2.0), gauss(0.0, 1.0)).item(), math.log(0.5) + 2.0 - 0.5),
        (skl(gauss(1.0, 1.0), gauss(0.0, 1.0)).item(), 0.5),
        (skl(gauss(0.0, 1.0), gauss(1.0, 1.0)).item(), 0.5),
        (log_prob(gauss(0.7, 1.0), np.array([0.7])).item(), -0.5 * math.log(2 * math.pi)),
        (log_prob(gauss(0.7, 2.0), np.array([2.7])).item(), -0.5 * math.log(2 * math.pi) - math.log(2.0) - 0.5),
        (kl(gauss([0.3, -1.0], [0.5, 2.0]), gauss([0.3, -1.0], [0.5, 2.0])).item(), 0.0),
    ]
    worst = max(abs(a - b) for a, b in cases)

    rng = np.random.default_rng(0)
    n = 100_000
    p = DiagGaussian(Node(np.tile([0.3, -0.5], (n, 1))), Node(np.tile([0.8, 1.7], (n, 1))))
    q = DiagGaussian(Node(np.tile([-0.2, 0.4], (n, 1))), Node(np.tile([1.1, 0.9], (n, 1))))
    x = rsample(p, rng.standard_normal((n, 2))).value
    diff = log_prob(p, x).value - log_prob(q, x).value
    se = diff.std(ddof=1) / math.sqrt(n)
    dev = abs(diff.mean() - kl(p, q).value[0])
    ok = worst < 1e-12 and dev < 3 * se
    assert report("gaussian-analytics", ok, f"max_hand_err={worst:.1e} mc_dev={dev:.2e} 3se={3 * se:.2e}")


def test_infonce_bound(report):
    rng = np.random.default_rng(0)
    violations = 0
    for _ in range(10_000):
        m = int(rng.integers(2, 33))
        s = rng.normal(0, rng.uniform(0.1, 30), (m, m))
        if infonce(Node(s)).item() > math.log(m):
            violations += 1
    s = np.full((4, 4), -40.0)
    np.fill_diagonal(s, 40.0)
    sat = abs(infonce(Node(s)).item() - math.log(4))
    uniform = infonce(Node(np.full((5, 5), 0.37))).item()
    ok = violations == 0 and sat < 1e-10 and uniform == 0.0
    assert report("infonce-bound", ok, f"violations={violations}/10000 saturation_err={sat:.1e} uniform={uniform!r}")


def test_oracle_suite(report):
    t0 = time.process_time()
    records = run_suite(seed=0)
    cpu = time.process_time() - t0
    asserted = [r for r in records if r.passed is not None]
    failed = [r.line() for r in asserted if not r.passed]
    split = [r for r in records if r.name.startswith("two-view-split")]
    bound = [r for r in records if r.name.startswith("factorized-bound[")]
    verdicts = [r for r in records if r.name.startswith("sufficiency[")]
    cross = [r for r in records if r.name.startswith("cross-view-bound")]
    ok = (not failed and len(split) == 50 and max(r.gap for r in split) < 1e-9 and len(bound) == 20
          and len(verdicts) == 3 and cross and cpu < 600)
    detail = (f"split_max_gap={max(r.gap for r in split):.1e} bound_instances={len(bound)} "
              f"verdicts={len(verdicts)} cross_view={len(cross)} cpu_s={cpu:.1f}")
    assert report("oracle-suite", ok, detail), failed


def test_kl_balancing(report):
    rng = np.random.default_rng(0)
    args = [rng.normal(size=4), rng.uniform(0.5, 2, 4), rng.normal(size=4), rng.uniform(0.5, 2, 4)]

    def grads(fn):
        nodes = [G.param(v) for v in args]
        G.backward(G.sum_(fn(DiagGaussian(nodes[0], nodes[1]), DiagGaussian(nodes[2], nodes[3]))))
        return [n.grad for n in nodes]

    post, prior = gauss(args[0], args[1]), gauss(args[2], args[3])
    same = kl_balanced(post, prior).item() == kl(post, prior).item()
    bal, plain = grads(kl_balanced), grads(kl)
    w_post = max(np.max(np.abs(bal[i] / plain[i] - 0.2)) for i in (0, 1))
    w_prior = max(np.max(np.abs(bal[i] / plain[i] - 0.8)) for i in (2, 3))
    ok = same and w_post < 1e-6 and w_prior < 1e-6
    assert report("kl-balancing", ok, f"forward_exact={same} prior_err={w_prior:.1e} posterior_err={w_post:.1e}")


def test_beta_schedule(report):
    sched = BetaSchedule()
    ok = (beta_at(sched, 10) == 1e-4 and beta_at(sched, 60) == 1e-3 and beta_at(sched, 0) == 1e-4
          and beta_at(sched, 1000) == 1e-3 and (sched.start_episode, sched.end_episode) == (10, 60))
    assert report("beta-schedule", ok, f"beta(10)={beta_at(sched, 10)!r} beta(60)={beta_at(sched, 60)!r}")


def test_determinism(report, tmp_path):
    same = {}
    for agent in ("sac", "ppo"):
        cfg = tiny_config(agent, run={"episodes": 4})
        train(cfg, tmp_path / f"{agent}-a")
        train(cfg, tmp_path / f"{agent}-b")
        same[agent] = ((tmp_path / f"{agent}-a" / "metrics.tsv").read_bytes()
                       == (tmp_path / f"{agent}-b" / "metrics.tsv").read_bytes())
    cfg = ablation_config(3, 1.0, episodes=3)
    train(cfg, tmp_path / "abl-a")
    train(cfg, tmp_path / "abl-b")
    same["ablation"] = (tmp_path / "abl-a" / "metrics.tsv").read_bytes() == (tmp_path / "abl-b" / "metrics.tsv").read_bytes()
    assert report("determinism", all(same.values()), " ".join(f"{k}={v}" for k, v in same.items()))


@pytest.mark.slow
def test_learning_smoke(report, tmp_path):
    sac = sac_learning_smoke(seed=0, output_dir=tmp_path)
    report("learning-smoke-sac", sac.passed, sac.line("sac").rsplit(" ", 1)[0])
    ppo_ok, runs = ppo_learning_seeds(output_dir=tmp_path)
    rhos = " ".join(f"{r.summary['spearman']:.3f}" for r in runs)
    report("learning-smoke-ppo", ppo_ok, f"spearman_by_seed=[{rhos}] need>0.5 in >=4/5")
    ok = report("learning-smoke", sac.passed and ppo_ok)
    assert ok


@pytest.mark.slow
def test_ablation(report, tmp_path):
    seeds = run_ablation(seeds=(0, 1, 2, 3, 4), output_dir=tmp_path)
    with_report = [s.line() for s in seeds]
    a = sum(s.skl_lower for s in seeds)
    b = sum(s.test_not_worse for s in seeds)
    budget = max(s.seconds for s in seeds) <= 2 * 3600
    report("ablation-skl", a >= 4, f"lower_skl_seeds={a}/5")
    report("ablation-test-return", b >= 4, f"test_return_not_worse_seeds={b}/5")
    report("ablation-budget", budget, f"max_cpu_s_per_seed={max(s.seconds for s in seeds):.0f}")
    ok = report("ablation", a >= 4 and b >= 4 and budget, "; ".join(with_report))
    assert ok
