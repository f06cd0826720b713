import numpy as np
import pytest

from cfba.baselines import Policy, PolicySpec, Session
from cfba.bandits import top_slate
from cfba.evaluation import report_from_trajectory
from cfba.simulation import (OraclePolicy, closed_loop, demographic_blocks, gen_linear,
                             gen_nonlinear, generate, run_simulation, split_users)
from cfba.types import HyperParams


@pytest.mark.parametrize("p, blocks", [(50, (1, 5, 44)), (3, (1, 1, 1)), (12, (1, 2, 9))])
def test_demographic_blocks(p, blocks):
    assert demographic_blocks(p) == blocks


def test_demographic_blocks_too_small():
    with pytest.raises(ValueError, match="need p >= 3"):
        demographic_blocks(2)


def test_linear_world_structure():
    world = gen_linear(i=200, j=150, p=20, q=30, seed=1)
    d, a = world.d.matrix, world.a.matrix
    assert world.utility.shape == (200, 150) and d.shape == (200, 20) and a.shape == (150, 30)
    assert set(d[:, 0]) <= {0.0, 1.0}
    np.testing.assert_array_equal(d[:, 1:3].sum(1), 1)
    np.testing.assert_array_equal(d[:, 3:].sum(1), 1)
    assert set(d.sum(1)) <= {2.0, 3.0}
    # every item sits in one slot; items in the baseline slot have all-zero attributes
    np.testing.assert_array_equal(world.truth["a_ext"].sum(1), 1)
    assert a.sum(1).max() == 1


def test_noiseless_linear_world_is_exactly_bilinear():
    world = gen_linear(i=40, j=30, p=10, q=6, seed=2, noise=False)
    t = world.truth
    np.testing.assert_allclose(world.utility, world.d.matrix @ t["gamma"] @ t["a_ext"].T,
                               rtol=0, atol=1e-12)


def test_noiseless_nonlinear_world_has_rank_k():
    world = gen_nonlinear(i=60, j=50, p=8, q=9, k=3, seed=0, noise=False)
    assert np.linalg.matrix_rank(world.utility) == 3
    t = world.truth
    np.testing.assert_allclose(world.d.matrix, t["u"] @ t["w"].T)
    np.testing.assert_allclose(world.a.matrix, t["v"] @ t["psi"].T)


def test_nonlinear_moments():
    world = gen_nonlinear(i=1000, j=1000, p=5, q=5, k=5, seed=3)
    assert abs(world.utility.mean()) < 0.05
    assert world.utility.std() == pytest.approx(np.sqrt(6), abs=0.1)


def test_generators_are_seed_deterministic():
    for setting in ("linear", "nonlinear"):
        a = generate(setting, seed=5, i=30, j=20, p=10, q=8)
        b = generate(setting, seed=5, i=30, j=20, p=10, q=8)
        np.testing.assert_array_equal(a.utility, b.utility)
        np.testing.assert_array_equal(a.d.matrix, b.d.matrix)
    with pytest.raises(ValueError, match="setting must be one of"):
        generate("cubic")


def test_split_users_partitions():
    train, new = split_users(50, 10, seed=0)
    assert new.size == 10 and train.size == 40
    assert sorted(np.concatenate([train, new]).tolist()) == list(range(50))
    with pytest.raises(ValueError, match="new_user_count"):
        split_users(5, 5, 0)


class _TruthPolicy(Policy):
    """Ranks items by the true taste vector of the noiseless linear world."""

    def __init__(self, world):
        super().__init__()
        self.world = world

    def new_session(self, context=None, seed=None, user=None):
        t = self.world.truth
        scores = context @ t["gamma"] @ t["a_ext"].T

        class _S(Session):
            def select(self, slate_size=1, exclude=None):
                idx = np.array([j for j in range(scores.size) if not exclude or j not in exclude])
                return top_slate(idx, scores[idx], slate_size)

        return _S()


def test_true_taste_policy_attains_oracle_car():
    world = gen_linear(i=80, j=60, p=10, q=8, seed=4, noise=False)
    truth = run_simulation(world, _TruthPolicy(world), new_user_count=20, t=5, seed=1)
    oracle = run_simulation(world, "oracle", new_user_count=20, t=5, seed=1)
    np.testing.assert_allclose(np.array(truth.rewards), np.array(oracle.rewards), atol=1e-12)


def test_oracle_dominates_every_period():
    world = gen_nonlinear(i=120, j=80, p=6, q=6, k=3, seed=0)
    oracle = report_from_trajectory(run_simulation(world, "oracle", 30, t=6), 6)
    for kind in ("random", "cfba", "ucb"):
        spec = PolicySpec(kind, HyperParams(k=3), sweeps=5)
        rep = report_from_trajectory(run_simulation(world, spec, 30, t=6), 6)
        assert np.all(oracle.per_period >= rep.per_period - 1e-12)


def test_closed_loop_excludes_consumed_items():
    world = gen_nonlinear(i=40, j=8, p=4, q=4, k=2, seed=1)
    traj = run_simulation(world, "oracle", new_user_count=5, t=8)
    for slates in traj.slates:
        assert sorted(s.top for s in slates) == list(range(8))


def test_random_policy_centres_on_zero():
    world = gen_nonlinear(i=600, j=300, p=6, q=6, k=5, seed=2)
    cars = [report_from_trajectory(run_simulation(world, "random", 200, t=15, seed=s), 15).car
            for s in range(3)]
    assert abs(np.mean(cars)) < 0.15


def test_run_is_deterministic_and_checks_arguments():
    world = gen_nonlinear(i=50, j=30, p=4, q=4, k=2, seed=3)
    spec = PolicySpec("cfba", HyperParams(k=2), sweeps=4, selector="ts")
    a = run_simulation(world, spec, 10, t=4, seed=9)
    b = run_simulation(world, spec, 10, t=4, seed=9)
    np.testing.assert_array_equal(np.array(a.rewards), np.array(b.rewards))
    with pytest.raises(ValueError, match="t must be >= 1"):
        run_simulation(world, "random", 10, t=0)
    with pytest.raises(ValueError, match="needs the world index"):
        OraclePolicy(world.utility).new_session()


def test_closed_loop_passes_user_indices_to_sessions():
    world = gen_nonlinear(i=20, j=10, p=4, q=4, k=2, seed=4)
    rows = np.array([3, 11])
    traj = closed_loop(OraclePolicy(world.utility), world.utility[rows], None, 2, users=rows)
    assert traj.rewards[1][0] == world.utility[11].max()
