import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cfba.types import (FeedbackMatrix, Gaussian, HyperParams, LatentFactors, build_feedback,
                        validate_hyperparams)

records = st.lists(st.tuples(st.integers(0, 6), st.integers(0, 5),
                             st.floats(-5, 5, allow_nan=False)), min_size=1, max_size=30)


def test_last_write_wins():
    fb = build_feedback([(0, 0, 1.0), (0, 0, 2.0)])
    assert fb.nnz == 1
    assert fb.dense()[0, 0] == 2.0


def test_dimensions_inferred_and_explicit():
    fb = build_feedback([(2, 1, 3.0)])
    assert fb.shape == (3, 2)
    assert build_feedback([(0, 0, 1.0)], n_users=4, n_items=7).shape == (4, 7)


def test_mask_marks_observed_cells_only():
    fb = build_feedback([(0, 1, 5.0), (1, 0, 0.0)], 2, 3)
    np.testing.assert_array_equal(fb.mask(), [[0, 1, 0], [1, 0, 0]])


@pytest.mark.parametrize("bad, message", [
    ([], "cannot infer dimensions"),
    ([(-1, 0, 1.0)], "non-negative"),
])
def test_build_feedback_errors(bad, message):
    with pytest.raises(ValueError, match=message):
        build_feedback(bad)


def test_out_of_range_index_rejected():
    with pytest.raises(ValueError, match="item index out of range"):
        FeedbackMatrix(2, 2, [0], [2], [1.0])


def test_arrays_are_read_only():
    fb = build_feedback([(0, 0, 1.0)])
    with pytest.raises(ValueError):
        fb.values[0] = 3.0


@given(records)
def test_rebuild_from_entries_is_identity(recs):
    fb = build_feedback(recs)
    again = build_feedback(fb.entries(), fb.n_users, fb.n_items)
    assert again == fb


@given(records)
def test_dense_round_trip(recs):
    fb = build_feedback(recs)
    assert FeedbackMatrix.from_dense(fb.dense(), fb.mask().astype(bool)) == fb


def test_subset_users_reindexes():
    fb = build_feedback([(0, 0, 1.0), (2, 1, 2.0), (3, 0, 4.0)])
    sub = fb.subset_users([3, 0])
    assert sub.shape == (2, 2)
    assert sorted(sub.entries()) == [(0, 0, 4.0), (1, 0, 1.0)]


def test_defaults_validate_unchanged():
    h = HyperParams()
    assert validate_hyperparams(h) is h
    assert (h.k, h.sigma2, h.lambda_u, h.alpha, h.schedule) == (5, 1.0, 1.0, 1.0, "log-t")


@pytest.mark.parametrize("change, message", [
    ({"sigma2": 0.0}, "sigma2 must be > 0"),
    ({"lambda_w": -1.0}, "lambda_w must be > 0"),
    ({"k": 0}, "k must be >= 1"),
    ({"alpha": -0.1}, "alpha must be >= 0"),
    ({"schedule": "linear"}, "schedule must be one of"),
])
def test_validation_names_the_field(change, message):
    with pytest.raises(ValueError, match=message):
        validate_hyperparams(HyperParams().replace(**change))


def test_gaussian_check():
    Gaussian(np.zeros(2), np.array([[2.0, 0.5], [0.5, 1.0]])).check()
    with pytest.raises(ValueError, match="symmetric"):
        Gaussian(np.zeros(2), np.array([[1.0, 0.5], [0.0, 1.0]])).check()
    with pytest.raises(ValueError, match="positive definite"):
        Gaussian(np.zeros(2), np.diag([1.0, -1.0])).check()
    with pytest.raises(ValueError, match="does not match"):
        Gaussian(np.zeros(3), np.eye(2))


def test_gaussian_sample_moments():
    cov = np.array([[2.0, 0.6], [0.6, 0.5]])
    g = Gaussian(np.array([1.0, -1.0]), cov)
    draws = np.array([g.sample(np.random.default_rng(s)) for s in range(4000)])
    np.testing.assert_allclose(draws.mean(0), g.mean, atol=0.08)
    np.testing.assert_allclose(np.cov(draws.T), cov, atol=0.12)


def test_latent_factors_shapes():
    f = LatentFactors(np.zeros((3, 2)), np.zeros((4, 2)))
    assert f.k == 2 and f.w.shape == (0, 2) and f.psi.shape == (0, 2)
    with pytest.raises(ValueError, match="2 columns"):
        LatentFactors(np.zeros((3, 2)), np.zeros((4, 3)))
