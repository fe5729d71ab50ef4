import itertools

import numpy as np
import pytest

from msm2.config import reset_settings
from msm2.models import ChainInitialization, FirstOrderMatrix, StateSpace, Trajectory, TransitionTensor


def pytest_configure(config):
    """Configure pytest with custom markers and settings"""
    config.addinivalue_line(
        "markers", "slow: marks tests as slow (deselect with '-m \"not slow\"')"
    )
    config.addinivalue_line(
        "markers", "integration: marks tests as integration tests"
    )
    config.addinivalue_line(
        "markers", "unit: marks tests as unit tests"
    )


@pytest.fixture(autouse=True)
def clean_settings(monkeypatch):
    """Every test starts from default settings"""
    for name in ("MSM2_N_JOBS", "MSM2_LOG_LEVEL", "MSM2_STRICT_VALIDATION", "MSM2_BOOTSTRAP_RESAMPLES"):
        monkeypatch.delenv(name, raising=False)
    reset_settings()
    yield
    reset_settings()


@pytest.fixture
def divine_space():
    return StateSpace.divine()


@pytest.fixture
def complete_space():
    """Factory: m states, every move allowed, nothing absorbing"""
    def make(m):
        labels = [f"S{i}" for i in range(1, m + 1)]
        edges = [(h, j) for h in range(1, m + 1) for j in range(1, m + 1) if h != j]
        return StateSpace.from_edges(labels, edges)
    return make


def make_random_tensor(m, rng, zero_fraction=0.0):
    """Dirichlet rows for every pair; some cells zeroed when zero_fraction > 0"""
    values = rng.dirichlet(np.ones(m), size=(m, m))
    if zero_fraction:
        mask = rng.random((m, m, m)) < zero_fraction
        # keep at least one cell per row
        mask[np.arange(m)[:, None], np.arange(m)[None, :], values.argmax(axis=2)] = False
        values = np.where(mask, 0.0, values)
        values /= values.sum(axis=2, keepdims=True)
    return TransitionTensor(values=values, support=np.ones((m, m), dtype=bool))


@pytest.fixture
def random_tensors():
    """Fifty tensors with m in {2, 3, 4}, fixed seed"""
    rng = np.random.default_rng(20240601)
    return [make_random_tensor(m, rng, zero_fraction=0.2 if i % 3 == 0 else 0.0)
            for i, m in zip(range(50), itertools.cycle([2, 3, 4]))]


@pytest.fixture
def uniform_init():
    def make(m):
        return ChainInitialization(
            initial_dist=np.full(m, 1.0 / m),
            first_step=FirstOrderMatrix(values=np.full((m, m), 1.0 / m)),
        )
    return make


def _divine_paths():
    """
    State sequences of a 2076-subject cohort shaped like the hospital data:
    NSP=1, SP=2, Recov=3, NIMV=4, IMV=5, Disch=6, Death=7.
    """
    tails = {
        3: iter([[3, 3, 6]] * 207 + [[3, 6]] * 16),
        4: iter([[4, 3, 6]] * 6 + [[4, 4, 3, 6]] * 159 + [[4, 5, 3, 6]] * 45 + [[4, 7]] * 4),
        5: iter([[5, 3, 6]] * 3 + [[5, 5, 3, 6]] * 160 + [[5, 7]] * 3),
        7: itertools.repeat([7]),
    }
    # SP runs of at least two days: 141 of 9 days, the rest of 8
    sp_runs = iter([9] * 141 + [8] * 220)
    paths = []

    # admitted NSP, staying 7 or 8 days
    nsp_runs = [8] * 629 + [7] * 1029
    nsp_exits = [6] * 1369 + [7] * 32 + [2] * 257
    via_nsp = []
    for run, exit_state in zip(nsp_runs, nsp_exits):
        if exit_state == 2:
            via_nsp.append([1] * run)
        else:
            paths.append([1] * run + [exit_state])
    via_nsp += [[1]] * 154

    # NSP -> SP, then the day after the first SP day
    after_first_sp = [2] * 253 + [3] * 3 + [4] * 92 + [5] * 62 + [7]
    long_exits = iter([3] * 168 + [4] * 42 + [5] * 30 + [7] * 13)
    for prefix, nxt in zip(via_nsp, after_first_sp):
        if nxt == 2:
            exit_state = next(long_exits)
            paths.append(prefix + [2] * next(sp_runs) + next(tails[exit_state]))
        else:
            paths.append(prefix + [2] + next(tails[nxt]))

    # admitted SP
    for exit_state in [3] * 52 + [4] * 26 + [5] * 19 + [7] * 11:
        paths.append([2] * next(sp_runs) + next(tails[exit_state]))
    for exit_state in [4] * 54 + [5] * 55 + [7] * 4:
        paths.append([2] + next(tails[exit_state]))

    paths += [[1, 6]] * 43
    return paths


@pytest.fixture(scope="session")
def divine_cohort():
    paths = _divine_paths()
    width = len(str(len(paths)))
    return [
        Trajectory(subject_id=str(i + 1).zfill(width), start_day=1, states=tuple(states))
        for i, states in enumerate(paths)
    ]


def _four_state_chain():
    """Three transient states and one absorbing state; rows depend on the previous state"""
    rng = np.random.default_rng(11)
    labels = ("A", "B", "C", "Out")
    edges = [(h, j) for h in (1, 2, 3) for j in (1, 2, 3, 4) if h != j]
    space = StateSpace.from_edges(labels, edges, absorbing=[4])

    values = np.zeros((4, 4, 4))
    support = np.zeros((4, 4), dtype=bool)
    for h in (1, 2, 3):
        for j in (1, 2, 3):
            values[h - 1, j - 1, :3] = 0.9 * rng.dirichlet(np.full(3, 2.0))
            values[h - 1, j - 1, 3] = 1.0 - values[h - 1, j - 1, :3].sum()
            support[h - 1, j - 1] = True
        values[h - 1, 3, 3] = 1.0
        support[h - 1, 3] = True
    values[3, 3, 3] = 1.0
    support[3, 3] = True

    first_step = np.zeros((4, 4))
    first_step[:3, :3] = 0.9 * rng.dirichlet(np.full(3, 2.0), size=3)
    first_step[:3, 3] = 1.0 - first_step[:3, :3].sum(axis=1)
    first_step[3, 3] = 1.0
    init = ChainInitialization(initial_dist=[0.5, 0.3, 0.2, 0.0], first_step=FirstOrderMatrix(values=first_step))
    return space, TransitionTensor(values=values, support=support, labels=labels), init


@pytest.fixture(scope="session")
def four_state_chain():
    return _four_state_chain()


@pytest.fixture
def four_state_config(four_state_chain):
    """Factory for simulation configs of the four-state chain"""
    from msm2.services.sim import SimulationConfig

    space, tensor, init = four_state_chain

    def make(n_subjects=500, seed=1, order="second", t_max=30):
        return SimulationConfig(
            space=space, tensor=tensor, init=init, n_subjects=n_subjects, t_max=t_max, seed=seed, order=order
        )
    return make
