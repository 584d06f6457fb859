import pytest

from dribo.harness.config import RunConfig

TINY_MODEL = {"deter": 8, "stoch": 4, "embed": 8, "embed_hidden": 16, "hidden": 16, "action_hidden": 8}


def tiny_config(agent="sac", **sections):
    base = {
        "run": {"agent": agent, "seed": 0, "episodes": 3, "updates_per_episode": 2, "batch_size": 2,
                "seq_len": 4, "init_episodes": 1, "eval_episodes": 2},
        "env": {"size": 8, "episode_length": 10, "background": "pool", "pool_size": 2,
                "discrete_actions": 4 if agent == "ppo" else 0},
        "model": dict(TINY_MODEL),
        "augment": {"target_size": 7},
        "sac": {"hidden": 16},
        "ppo": {"hidden": 16},
    }
    for name, values in sections.items():
        base.setdefault(name, {}).update(values)
    return RunConfig.from_dict(base)


@pytest.fixture
def tiny():
    return tiny_config
