import numpy as np
import pytest

from forgelight import learn


@pytest.fixture(scope="module")
def images():
    rng = np.random.default_rng(3)
    basis = rng.normal(size=(4, 60))
    return rng.normal(size=(25, 4)) * [3.0, 2.0, 1.0, 0.5] @ basis + rng.normal(0, 0.01, (25, 60))


def test_pca_matches_svd(images):
    model = learn.pca_fit(images, 6)
    P = images - images.mean(axis=0)
    _, s, Vt = np.linalg.svd(P, full_matrices=False)
    assert np.allclose(model.eigenvalues, s[:6] ** 2 / len(images), rtol=1e-9)
    for k in range(6):
        assert abs(abs(model.components[:, k] @ Vt[k]) - 1) < 1e-8
    assert np.allclose(model.components.T @ model.components, np.eye(6), atol=1e-12)


def test_pca_reconstruction_error_monotone(images):
    model = learn.pca_fit(images)
    errs = []
    for k in range(model.n_components + 1):
        m = model.truncated(k)
        rec = learn.pca_reconstruct(m, learn.pca_project(m, images))
        errs.append(np.linalg.norm(rec - images))
    assert np.all(np.diff(errs) <= 1e-10)
    assert errs[-1] < 1e-8


def test_pca_validation(images):
    with pytest.raises(learn.LearnError):
        learn.pca_fit(images[:1])
    with pytest.raises(learn.LearnError):
        learn.pca_fit(images, 30)
    with pytest.raises(learn.LearnError):
        learn.pca_project(learn.pca_fit(images, 3), np.zeros(5))


def test_pca_drops_null_directions():
    T = np.outer(np.arange(5.0), np.ones(8))
    assert learn.pca_fit(T, 4).n_components == 1


def test_quadratic_feature_count():
    for d in range(1, 6):
        assert learn.quadratic_features(np.ones((2, d))).shape[1] == (d * d + 3 * d + 2) // 2


def test_linear_and_quadratic_recover_exact_maps():
    rng = np.random.default_rng(0)
    F = rng.normal(size=(40, 3))
    W_lin = 1.0 + F @ np.array([[1.0, -2.0], [0.5, 0.0], [3.0, 1.0]])
    lin = learn.fit_linear(F, W_lin)
    assert np.allclose(lin.predict(F), W_lin)
    W_q = np.column_stack([F[:, 0] * F[:, 1] - F[:, 2] ** 2, 2 + F[:, 0]])
    quad = learn.fit_quadratic(F, W_q)
    assert np.allclose(quad.predict(F), W_q)
    assert np.allclose(quad.predict(F[0]), W_q[0])


def test_rank_deficiency_warns():
    F = np.column_stack([np.linspace(0, 1, 20), np.zeros(20)])
    with pytest.warns(learn.RankDeficientWarning):
        m = learn.fit_linear(F, F[:, :1] * 2)
    assert m.info["rank_deficient"]


def test_neural_beats_linear_on_nonlinear_map():
    rng = np.random.default_rng(1)
    F = rng.uniform(-1, 1, size=(150, 2))
    W = np.column_stack([np.sin(3 * F[:, 0]) * F[:, 1], np.cos(2 * F[:, 1])])
    Ft = rng.uniform(-1, 1, size=(100, 2))
    Wt = np.column_stack([np.sin(3 * Ft[:, 0]) * Ft[:, 1], np.cos(2 * Ft[:, 1])])
    nn = learn.fit_neural(F, W, hidden=20, seed=0, max_iter=500)
    lin = learn.fit_linear(F, W)
    err = lambda m: np.mean((m.predict(Ft) - Wt) ** 2)
    assert err(nn) < 0.2 * err(lin)
    assert nn.info["loss_history"][-1] < nn.info["loss_history"][0]


def test_neural_training_is_deterministic():
    rng = np.random.default_rng(2)
    F = rng.normal(size=(10, 2))
    W = rng.normal(size=(10, 1))
    a = learn.fit_neural(F, W, hidden=4, seed=5, max_iter=50)
    b = learn.fit_neural(F, W, hidden=4, seed=5, max_iter=50)
    assert np.array_equal(a.predict(F), b.predict(F))


def test_model_persistence(tmp_path, images):
    pca = learn.pca_fit(images, 3)
    learn.save_pca(pca, tmp_path / "pca.json")
    back = learn.load_pca(tmp_path / "pca.json")
    assert np.array_equal(back.components, pca.components) and back.n_samples == pca.n_samples
    F = np.random.default_rng(0).normal(size=(12, 2))
    W = learn.pca_project(pca, images[:12])
    for mdl in (learn.fit_linear(F, W), learn.fit_neural(F, W, hidden=5, max_iter=20)):
        learn.save_mapping(mdl, tmp_path / f"{mdl.kind}.json")
        got = learn.load_mapping(tmp_path / f"{mdl.kind}.json")
        assert np.array_equal(got.predict(F), mdl.predict(F))
    with pytest.raises(learn.LearnError):
        learn.load_mapping(tmp_path / "pca.json")


def test_estimate_and_warm_start(images):
    pca = learn.pca_fit(np.clip(images / 10 + 0.5, 0, 1), 3)
    F = np.random.default_rng(0).normal(size=(25, 2))
    mdl = learn.fit_linear(F, learn.pca_project(pca, np.clip(images / 10 + 0.5, 0, 1)))
    est = learn.estimate_topology(mdl, pca, F[0], (6, 10))
    assert est.shape == (6, 10) and est.min() >= 0 and est.max() <= 1
    ws = learn.warm_start(est, 0.3)
    assert abs(ws.mean() - 0.3) < 1e-9 and ws.min() >= 0 and ws.max() <= 1
    assert np.allclose(learn.warm_start(np.zeros(4), 0.5), 0.5)


def test_l1_distance():
    a = np.zeros((2, 3))
    b = np.ones((2, 3))
    assert learn.l1_distance(a, b) == 1.0 and learn.l1_distance(a, a) == 0.0
    with pytest.raises(learn.LearnError):
        learn.l1_distance(a, np.ones(5))
