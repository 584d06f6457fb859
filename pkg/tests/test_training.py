import numpy as np
import pytest

from dribo import checkpoint
from dribo import ndgrad as G
from dribo.agents import sac as sac_mod
from dribo.agents.training import (STREAMS, TrainingAborted, build_learner, evaluate_returns, read_metrics,
                                   rng_streams, train)
from dribo.loss import METRIC_KEYS as DRIBO_KEYS
from dribo.loss import beta_at
from dribo.nn import ParamRegistry


def test_sac_smoke_emits_every_metric(tiny, tmp_path):
    res = train(tiny("sac"), tmp_path / "run")
    keys = {k for _, k, _ in res.metrics}
    want = set(sac_mod.METRIC_KEYS) | set(DRIBO_KEYS) | {
        "train/return", "train/episode", "train/beta", "eval/return_train", "eval/return_test",
        "eval/return_train_std", "eval/return_test_std", "eval/skl_probe"}
    assert want <= keys
    assert (tmp_path / "run" / "config.ini").exists() and (tmp_path / "run" / "checkpoint.bin").exists()
    assert read_metrics(tmp_path / "run" / "metrics.tsv") == res.metrics
    steps = res.series("train/return")[0]
    assert list(steps) == [20, 40, 60]


def test_ppo_smoke_emits_every_metric(tiny, tmp_path):
    from dribo.agents import ppo as ppo_mod

    res = train(tiny("ppo"), tmp_path / "run")
    keys = {k for _, k, _ in res.metrics}
    assert set(ppo_mod.METRIC_KEYS) | set(DRIBO_KEYS) | {"train/return", "eval/skl_probe"} <= keys


def test_beta_trace_follows_schedule(tiny, tmp_path):
    cfg = tiny("sac", run={"episodes": 4}, beta={"start_episode": 1, "end_episode": 3})
    res = train(cfg, tmp_path / "run")
    trace = res.series("train/beta")[1]
    sched = cfg.beta_schedule()
    assert list(trace) == [beta_at(sched, e) for e in range(4)]
    assert list(res.series("dribo/beta")[1]) == list(trace)


def test_beta_scale_zero_is_ablation(tiny, tmp_path):
    res = train(tiny("sac", beta={"scale": 0.0}), tmp_path / "run")
    assert np.all(res.series("train/beta")[1] == 0.0)
    assert np.all(res.series("dribo/total")[1] == -res.series("dribo/infonce")[1])


def test_runs_are_bit_identical(tiny, tmp_path):
    for agent in ("sac", "ppo"):
        a = train(tiny(agent), tmp_path / f"{agent}-a")
        b = train(tiny(agent), tmp_path / f"{agent}-b")
        assert (tmp_path / f"{agent}-a" / "metrics.tsv").read_bytes() == (tmp_path / f"{agent}-b" / "metrics.tsv").read_bytes()
        assert a.checkpoint.read_bytes() == b.checkpoint.read_bytes()
    train(tiny("sac", run={"seed": 1}), tmp_path / "sac-c")
    assert (tmp_path / "sac-c" / "metrics.tsv").read_bytes() != (tmp_path / "sac-a" / "metrics.tsv").read_bytes()


def test_nan_guard_restores_last_good_checkpoint(tiny, tmp_path, monkeypatch):
    calls = {"n": 0}
    original = sac_mod.sac_update

    def poisoned(agent, batch, rng):
        calls["n"] += 1
        if calls["n"] == 5:  # third episode, first update
            w = agent.critic["q1.0.w"]
            w.value = np.full_like(w.value, np.nan)
        return original(agent, batch, rng)

    monkeypatch.setattr(sac_mod, "sac_update", poisoned)
    cfg = tiny("sac", run={"episodes": 4})
    out = tmp_path / "run"
    with pytest.raises(TrainingAborted) as info:
        train(cfg, out)
    assert info.value.checkpoint == out / "checkpoint.bin"
    rows = read_metrics(out / "metrics.tsv")
    assert rows[-1][1] == "train/aborted"
    _, groups = checkpoint.read(out / "checkpoint.bin")
    assert all(np.all(np.isfinite(v)) for g in groups.values() for v in g.values())


def test_rng_streams_are_independent():
    a, b = rng_streams(0), rng_streams(0)
    assert set(a) == set(STREAMS)
    draws = {k: a[k].random() for k in STREAMS}
    assert len(set(draws.values())) == len(STREAMS)
    assert draws == {k: b[k].random() for k in STREAMS}


def test_untrained_policy_is_roughly_random(tiny):
    cfg = tiny("sac")
    lr = build_learner(cfg)
    pol = evaluate_returns(lr, "train", 20, np.random.default_rng(0))
    rnd = evaluate_returns(lr, "train", 20, np.random.default_rng(1), random_policy=True)
    assert abs(pol.mean() - rnd.mean()) < 2 * rnd.std() + 1e-9


# -- checkpoints -------------------------------------------------------------------


def registry(rng):
    reg = ParamRegistry()
    reg.add("w", rng.normal(size=(3, 2)))
    reg.add("b", np.array(rng.normal()))
    reg.add("odd", np.array([np.pi, -0.0, 5e-324, 1e308]))
    return reg


def test_checkpoint_roundtrip_is_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    reg = registry(rng)
    checkpoint.save(tmp_path / "c.bin", {"g": reg}, {"run": {"seed": 3}})
    other = registry(np.random.default_rng(1))
    cfg = checkpoint.load_into(tmp_path / "c.bin", {"g": other})
    assert cfg == {"run": {"seed": 3}}
    for name, p in reg.items():
        assert other[name].value.tobytes() == p.value.tobytes()


def test_checkpoint_corruption_detected(tmp_path):
    reg = registry(np.random.default_rng(0))
    path = tmp_path / "c.bin"
    checkpoint.save(path, {"g": reg})
    data = bytearray(path.read_bytes())
    bad = tmp_path / "bad.bin"
    for mutate in (lambda d: d.__setitem__(0, ord("X")), lambda d: d.__setitem__(-20, d[-20] ^ 1),
                   lambda d: d.__setitem__(30, d[30] ^ 1), lambda d: d.__setitem__(8, 2)):
        d = bytearray(data)
        mutate(d)
        bad.write_bytes(bytes(d))
        with pytest.raises(checkpoint.CheckpointError):
            checkpoint.read(bad)
    bad.write_bytes(bytes(data[:12]))
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.read(bad)
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.read(tmp_path / "missing.bin")
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.load_into(path, {"other": reg})


def test_checkpoint_shape_mismatch(tmp_path):
    reg = registry(np.random.default_rng(0))
    checkpoint.save(tmp_path / "c.bin", {"g": reg})
    wrong = ParamRegistry()
    wrong.add("w", np.zeros((2, 3)))
    wrong.add("b", np.zeros(()))
    wrong.add("odd", np.zeros(4))
    with pytest.raises(G.InvalidShapeError):
        checkpoint.load_into(tmp_path / "c.bin", {"g": wrong})
