import numpy as np
import pytest

from cfba.baselines import PolicySpec
from cfba.simulation import gen_nonlinear
from cfba.tuning import (LAMBDA_CAP, GridSpec, TuningData, default_grids, empirical_priors,
                         grid_search)
from cfba.types import HyperParams, build_feedback


def test_empirical_priors_hand_example():
    # user 0 rates 1 and 3 (variance 2), user 1 rates 2 and 6 (variance 8);
    # item 0 sees 1 and 2 (0.5), item 1 sees 3 and 6 (4.5)
    fb = build_feedback([(0, 0, 1.0), (0, 1, 3.0), (1, 0, 2.0), (1, 1, 6.0)])
    d = np.array([[0.0, 1.0], [2.0, 1.0]])
    out = empirical_priors(fb, d, None)
    assert out["lambda_u"] == pytest.approx(1 / 5)
    assert out["lambda_v"] == pytest.approx(1 / 2.5)
    # demographic column variances 2 and 0
    assert out["lambda_w"] == pytest.approx(1.0)
    assert "lambda_psi" not in out
    np.testing.assert_allclose(out["popularity"], [1.5, 4.5])


def test_singletons_are_skipped_and_zero_variance_is_capped():
    fb = build_feedback([(0, 0, 2.0), (0, 1, 2.0), (1, 2, 5.0)])
    out = empirical_priors(fb)
    assert out["lambda_u"] == LAMBDA_CAP
    assert out["lambda_v"] == LAMBDA_CAP


def test_empirical_priors_on_a_noise_world():
    rng = np.random.default_rng(0)
    values = rng.normal(0, 2.0, size=(300, 40))
    fb = build_feedback([(i, j, values[i, j]) for i in range(300) for j in range(40)])
    out = empirical_priors(fb)
    assert out["lambda_u"] == pytest.approx(0.25, rel=0.05)
    assert out["lambda_v"] == pytest.approx(0.25, rel=0.05)


def test_default_grids():
    g = default_grids(50, 300)
    assert len(g.k_values) == 8 and g.k_values[0] == 2 and g.k_values[-1] == 25
    assert g.alpha_values[0] == 0.0 and g.alpha_values[-1] == 10.0
    assert g.sigma2_values[0] == pytest.approx(0.1) and g.sigma2_values[-1] == pytest.approx(100)
    assert default_grids(6, 8).k_values == (2, 3)


def test_grid_spec_validation():
    with pytest.raises(ValueError, match="k_values must be nonempty"):
        GridSpec((), (1.0,), (1.0,))
    with pytest.raises(ValueError, match="metric must be one of"):
        GridSpec((2,), (1.0,), (1.0,), "rmse")


def _data(seed=0, k=2):
    world = gen_nonlinear(i=80, j=40, p=6, q=6, k=k, seed=seed)
    return TuningData(world.feedback(), world.d.matrix, world.a.matrix, utility=world.utility)


def test_grid_search_table_and_tie_break():
    data = _data()
    grid = GridSpec((2, 3), (0.0, 1.0), (1.0,))
    res = grid_search(data, "cfba", grid, seed=0, base=PolicySpec("cfba", sweeps=5), t=4)
    assert [(k, a) for k, a, _, _ in res.table] == [(2, 0.0), (2, 1.0), (3, 0.0), (3, 1.0)]
    best = max(r[3] for r in res.table)
    winners = [r for r in res.table if r[3] == best]
    assert (res.best.k, res.best.alpha) == winners[0][:2]
    assert res.best_score == best
    assert res.table_csv().splitlines()[0] == "k,alpha,sigma2,score"


def test_random_policy_collapses_every_axis():
    res = grid_search(_data(), "random", GridSpec((2, 3), (0.0, 1.0), (1.0, 2.0)), t=2)
    assert len(res.table) == 1


def test_pca_variant_keeps_base_component_count():
    base = PolicySpec("ucb-pca", HyperParams(k=3), pca_components=3)
    res = grid_search(_data(k=3), "ucb-pca", GridSpec((2, 4), (0.0, 1.0), (1.0,)), base=base, t=3)
    assert len(res.table) == 2
    assert res.best.k == 3


def test_grid_search_is_deterministic():
    grid = GridSpec((2,), (0.5,), (1.0, 3.0))
    base = PolicySpec("cfb", sweeps=4)
    a = grid_search(_data(1), "cfb", grid, base=base, t=3, seed=2)
    b = grid_search(_data(1), "cfb", grid, base=base, t=3, seed=2)
    assert a.table == b.table


def test_tuning_argument_errors():
    world = gen_nonlinear(i=10, j=5, p=3, q=3, k=2, seed=0)
    with pytest.raises(ValueError, match="exactly one of logs or utility"):
        TuningData(world.feedback(), None, None)
    data = TuningData(world.feedback(), None, None, utility=world.utility)
    with pytest.raises(ValueError, match="split_fraction"):
        grid_search(data, "cfb", GridSpec((2,), (1.0,), (1.0,)), split_fraction=1.0)
    with pytest.raises(ValueError, match="no feasible K"):
        grid_search(data, "cfb", GridSpec((50,), (1.0,), (1.0,)))
