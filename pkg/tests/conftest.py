import os

import numpy as np
import pytest

from config import settings
from services.mdp_core import SoftmaxPolicy, TabularMdp, random_mdp, random_policy, visitation


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: Four Rooms reproduction runs (set ALGAE_RUN_SLOW=1)")


def pytest_collection_modifyitems(config, items):
    if os.getenv("ALGAE_RUN_SLOW") == "1":
        return
    skip_slow = pytest.mark.skip(reason="set ALGAE_RUN_SLOW=1 to run")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(autouse=True)
def isolated_storage(tmp_path, monkeypatch):
    """Keeps logs, the run registry and run directories inside tmp_path."""
    monkeypatch.setattr(settings, "STORAGE_DIR", str(tmp_path / "storage"))
    monkeypatch.setattr(settings, "LOG_FILE", str(tmp_path / "storage" / "logs" / "algae.log"))
    monkeypatch.setattr(settings, "DB_PATH", str(tmp_path / "storage" / "db" / "runs.sqlite"))
    monkeypatch.setattr(settings, "RUNS_DIR", str(tmp_path / "storage" / "runs"))


@pytest.fixture
def one_state():
    """Single state, single action, r = 1, gamma = 0.5."""
    return TabularMdp(reward=[[1.0]], transition=[[[1.0]]], initial_dist=[1.0], discount=0.5)


@pytest.fixture
def one_state_policy():
    return SoftmaxPolicy.uniform(1, 1)


@pytest.fixture
def small_problem():
    """5-state, 3-action random MDP with a target policy and the behavior's exact d^D."""
    rng = np.random.default_rng(7)
    mdp = random_mdp(rng, 5, 3, 0.9)
    pi = random_policy(rng, 5, 3)
    behavior = random_policy(rng, 5, 3)
    return mdp, pi, behavior, visitation(mdp, behavior)


@pytest.fixture
def absorbing_pair():
    """Two absorbing states: every policy has two recurrent classes."""
    transition = np.zeros((2, 2, 2))
    transition[0, :, 0] = 1.0
    transition[1, :, 1] = 1.0
    return TabularMdp(reward=[[0.0, 1.0], [1.0, 0.0]], transition=transition, initial_dist=[0.5, 0.5], discount=1.0)
