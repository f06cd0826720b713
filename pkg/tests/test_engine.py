import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cfba.cfa import fit, posterior_item_cfa, posterior_user_cf, posterior_user_cfa
from cfba.engine import EngineState, ingest, init_session, refresh, snapshot_posterior, step
from cfba.types import HyperParams, build_feedback

H = HyperParams(k=3, sigma2=0.5, sigma_d2=2.0, sigma_a2=0.8, lambda_u=1.5, lambda_v=0.7,
                lambda_w=1.2, lambda_psi=3.0, alpha=1.0)


def _setup(seed=0, p=4, n_items=12):
    rng = np.random.default_rng(seed)
    return rng.standard_normal((p, 3)), rng.standard_normal(p), rng.standard_normal((n_items, 3)), rng


def test_initial_posterior_with_fixed_loadings():
    w, d, v, _ = _setup()
    state = init_session(d, h=H, loadings=w, fix_loadings=True)
    refresh(state)
    g = snapshot_posterior(state)
    batch = posterior_user_cfa([], d, w, H)
    np.testing.assert_allclose(g.mean, batch.mean, rtol=1e-10)
    np.testing.assert_allclose(g.cov, batch.cov, rtol=1e-10)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 8))
def test_consistent_session_equals_batch_conditional(seed, periods):
    w, d, v, rng = _setup(seed)
    state = init_session(d, h=H, loadings=w, fix_loadings=True)
    seen = []
    for _ in range(periods):
        j = int(rng.integers(v.shape[0]))
        mu = float(rng.standard_normal())
        ingest(state, v, [(j, mu)])
        seen.append((v[j], mu))
    g = snapshot_posterior(state)
    batch = posterior_user_cfa(seen, d, w, H)
    np.testing.assert_allclose(g.mean, batch.mean, rtol=1e-8, atol=1e-10)
    np.testing.assert_allclose(g.cov, batch.cov, rtol=1e-8, atol=1e-12)


def test_without_side_information_session_is_cf():
    _, _, v, rng = _setup(2)
    state = init_session(None, h=H, loadings=np.zeros((0, 3)))
    seen = []
    for j in (0, 5, 5, 7):
        mu = float(rng.standard_normal())
        ingest(state, v, [(j, mu)])
        seen.append((v[j], mu))
    g, batch = snapshot_posterior(state), posterior_user_cf(seen, H)
    np.testing.assert_allclose(g.mean, batch.mean, rtol=1e-10)
    np.testing.assert_allclose(g.cov, batch.cov, rtol=1e-10)


def test_new_item_mode_is_the_dual():
    psi, a, u, rng = _setup(3, p=5)
    state = init_session(a, h=H, mode="new-item", loadings=psi, fix_loadings=True)
    seen = []
    for i in (1, 4, 9):
        mu = float(rng.standard_normal())
        ingest(state, u, [(i, mu)])
        seen.append((u[i], mu))
    g, batch = snapshot_posterior(state), posterior_item_cfa(seen, a, psi, H)
    np.testing.assert_allclose(g.mean, batch.mean, rtol=1e-10)
    np.testing.assert_allclose(g.cov, batch.cov, rtol=1e-10)


def test_literal_accumulators_by_hand():
    w, d, v, _ = _setup(4)
    state = init_session(d, h=H, loadings=w, fix_loadings=True)
    lam_s2, ratio = H.lambda_u * H.sigma2, H.sigma2 / H.sigma_d2
    np.testing.assert_allclose(state.s, lam_s2 * np.eye(3))
    np.testing.assert_allclose(state.b, lam_s2 * w.T @ d)
    ingest(state, v, [(2, 1.5)], update="literal")
    np.testing.assert_allclose(state.s, lam_s2 * np.eye(3) + np.outer(v[2], v[2]) + ratio * w.T @ w)
    np.testing.assert_allclose(state.b, lam_s2 * w.T @ d + 1.5 * v[2] + ratio * w.T @ d)
    assert state.t == 1 and state.consumed == {2}


def test_loading_update_uses_point_estimate():
    w, d, v, _ = _setup(5)
    state = init_session(d, h=H, loadings=w)
    u_hat = np.array([0.3, -1.0, 2.0])
    ingest(state, v, [(0, 1.0)], user_vector=u_hat)
    s_u = H.lambda_w * H.sigma_d2 * np.eye(3) + np.outer(u_hat, u_hat)
    b_u = H.lambda_w * H.sigma_d2 * w.T + np.outer(u_hat, d)
    np.testing.assert_allclose(state.w_current, np.linalg.solve(s_u, b_u).T, rtol=1e-10)


def test_empty_period_leaves_loadings_alone():
    w, d, v, _ = _setup(6)
    state = init_session(d, h=H, loadings=w)
    out = step(state, v, feedback=None)
    assert not out.retained and state.t == 1
    np.testing.assert_allclose(state.w_current, w)


def test_first_ucb_period_is_greedy():
    w, d, v, _ = _setup(7)
    state = init_session(d, h=H, loadings=w, fix_loadings=True)
    refresh(state)
    mean = snapshot_posterior(state).mean
    out = step(state, v, feedback=lambda slate: [(slate.top, 0.0)])
    assert out.slate.top == int(np.argmax(v @ mean))


def test_step_feedback_forms_agree():
    w, d, v, _ = _setup(8)
    results = []
    for fb in ((3, 2.0), [(3, 2.0)], lambda slate: [(3, 2.0)]):
        state = init_session(d, h=H, loadings=w)
        results.append(step(state, v, fb).posterior.mean)
    np.testing.assert_allclose(results[0], results[1])
    np.testing.assert_allclose(results[0], results[2])


def test_json_round_trip_preserves_future():
    w, d, v, _ = _setup(9)
    state = init_session(d, h=H, loadings=w)
    step(state, v, (1, 0.5))
    clone = EngineState.from_json(state.to_json())
    a = step(state, v, (4, -1.0), slate_size=3)
    b = step(clone, v, (4, -1.0), slate_size=3)
    assert a.slate.items.tolist() == b.slate.items.tolist()
    np.testing.assert_allclose(a.posterior.mean, b.posterior.mean, rtol=1e-12)
    np.testing.assert_allclose(a.posterior.cov, b.posterior.cov, rtol=1e-12)


def test_pretrained_model_supplies_loadings_and_offset():
    rng = np.random.default_rng(0)
    fb = build_feedback([(i, j, float(rng.integers(1, 6))) for i in range(8) for j in range(6)
                         if rng.random() < 0.6], 8, 6)
    d = rng.standard_normal((8, 3))
    model = fit(fb, d, h=HyperParams(k=2), sweeps=3, center=True)
    state = init_session(d[0], pretrained=model)
    np.testing.assert_allclose(state.w_current, model.factors.w)
    assert state.offset == model.offset


@pytest.mark.parametrize("kwargs, message", [
    ({"mode": "new-group"}, "mode must be one of"),
    ({}, "hyper-parameters are required"),
    ({"h": H}, "pretrained factors are required"),
    ({"h": H, "loadings": np.ones((2, 3))}, "side vector has 4 entries but 2 loadings"),
])
def test_init_errors(kwargs, message):
    with pytest.raises(ValueError, match=message):
        init_session(np.ones(4), **kwargs)


def test_ingest_rejects_unknown_item():
    w, d, v, _ = _setup()
    state = init_session(d, h=H, loadings=w)
    with pytest.raises(ValueError, match="out of range"):
        ingest(state, v, [(99, 1.0)])
    with pytest.raises(ValueError, match="update must be one of"):
        ingest(state, v, [(0, 1.0)], update="lazy")
