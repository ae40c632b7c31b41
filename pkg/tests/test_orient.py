import math

import numpy as np
import pytest
from scipy.interpolate import RBFInterpolator

from forgelight import fea, orient


def test_orientation_grid_size_and_range():
    G = orient.orientation_grid(30)
    assert G.shape == (1008, 3)
    assert G[:, 0].min() == -math.pi and G[:, 0].max() < math.pi
    assert G[:, 1].min() == 0 and np.isclose(G[:, 1].max(), math.pi)


def test_normalize_angles_preserves_rotation():
    rng = np.random.default_rng(0)
    for x in rng.uniform(-7, 7, size=(50, 3)):
        n = orient.normalize_angles(x)
        assert 0 <= n[1] <= math.pi
        assert -math.pi <= n[0] < math.pi and -math.pi <= n[2] < math.pi
        assert np.allclose(fea.euler_rotation(n), fea.euler_rotation(x), atol=1e-12)
    assert orient.normalize_angles([0, math.pi, 0])[1] == math.pi


def test_rbf_interpolates_and_matches_scipy():
    rng = np.random.default_rng(4)
    X = rng.uniform(-1, 1, size=(30, 3))
    y = np.sin(X[:, 0]) + X[:, 1] * X[:, 2]
    model = orient.rbf_fit(X, y)
    assert np.allclose(orient.rbf_predict(model, model.X), model.y, atol=1e-8)
    ref = RBFInterpolator(X, y, kernel="cubic", degree=1)
    P = rng.uniform(-1, 1, size=(40, 3))
    assert np.allclose(model.predict(P), ref(P), rtol=1e-7, atol=1e-9)


def test_rbf_loocv_matches_refits():
    rng = np.random.default_rng(5)
    X = rng.uniform(-1, 1, size=(12, 3))
    y = X[:, 0] ** 2 - X[:, 1]
    model = orient.rbf_fit(X, y)
    for i in range(len(model.X)):
        keep = np.arange(len(model.X)) != i
        sub = orient.rbf_fit(model.X[keep], model.y[keep])
        err = model.y[i] - sub.predict(model.X[i])[0]
        assert model.loo_errors[i] == pytest.approx(err, rel=1e-6, abs=1e-10)


def test_rbf_rejects_degenerate_points():
    with pytest.raises(orient.OrientError):
        orient.rbf_fit(np.zeros((5, 3)), np.arange(5.0))
    X = np.column_stack([np.arange(6.0), np.zeros(6), np.zeros(6)])
    with pytest.raises(orient.OrientError):
        orient.rbf_fit(X, np.arange(6.0))


def test_lhs_strata_and_seed():
    X = orient.lhs_maximin(20, seed=3)
    u = (X - orient.BOUNDS[:, 0]) / (orient.BOUNDS[:, 1] - orient.BOUNDS[:, 0])
    for d in range(3):
        assert sorted(np.floor(u[:, d] * 20).astype(int)) == list(range(20))
    assert np.array_equal(X, orient.lhs_maximin(20, seed=3))
    one = orient.lhs_maximin(20, seed=3, restarts=1)
    assert orient.maximin_score(X) >= orient.maximin_score(one)


def test_objective_helpers(ortho):
    fs = np.array([[2.0, 4.0], [1.0, 8.0]])
    assert orient.objective_from_fs(fs, 2) == pytest.approx(0.25 + 1 / 16 + 1 + 1 / 64)
    with pytest.raises(orient.OrientError):
        orient.objective_from_fs(np.array([0.0]), 6)
    s = np.array([[10.0, 0, 0, 0, 0, 0]])
    # x-axis tension in the geometry frame: quarter turn about z loads material y
    assert orient.safety_factors(s, ortho, [0, 0, 0])[0, 0] == pytest.approx(4.0)
    assert orient.safety_factors(s, ortho, [math.pi / 2, 0, 0])[0, 1] == pytest.approx(2.0)


def test_isotropic_objective_is_invariant(cantilever, iso):
    m, fixed, f = cantilever
    for mode in ("fast", "faithful"):
        prob = orient.OrientationProblem(m, fixed, f, iso, orient.OrientParams(mode=mode))
        vals = [prob.objective(x) for x in orient.lhs_maximin(6, seed=1)]
        assert np.allclose(vals, vals[0], rtol=1e-12)


def test_faithful_mode_changes_stress(cantilever, ortho):
    m, fixed, f = cantilever
    fast = orient.OrientationProblem(m, fixed, f, ortho, orient.OrientParams(mode="fast"))
    faithful = orient.OrientationProblem(m, fixed, f, ortho)
    x = [0.5, 1.0, 0.2]
    assert np.array_equal(fast.stress(x), fast.stress([0, 0, 0]))
    assert not np.allclose(faithful.stress(x), faithful.stress([0, 0, 0]))
    assert faithful.objective(x) > 0 and faithful.n_evals == 1


def test_problem_validation(cantilever, iso):
    m, fixed, f = cantilever
    with pytest.raises(orient.OrientError):
        orient.OrientationProblem(m, fixed, f[:-1], iso)
    with pytest.raises(orient.OrientError):
        orient.OrientParams(mode="quick")


def test_optimize_orientation_budget_and_determinism(cantilever, ortho):
    m, fixed, f = cantilever
    prob = lambda: orient.OrientationProblem(m, fixed, f, ortho, orient.OrientParams(mode="fast"))
    a = orient.optimize_orientation(prob(), budget=30, init_count=10, seed=2)
    b = orient.optimize_orientation(prob(), budget=30, init_count=10, seed=2)
    assert a.n_evals <= 30 and a.history == b.history
    assert a.f == min(h["f"] for h in a.history)
    assert [h["source"] for h in a.history[:10]] == ["lhs"] * 10
    assert a.loocv is not None
    assert a.min_fs_best == pytest.approx(prob().min_fs(a.x))
    doe = orient.optimize_orientation(prob(), budget=10, init_count=10, seed=2)
    assert doe.n_evals == 10 and doe.loocv is None
    with pytest.raises(orient.OrientError):
        orient.optimize_orientation(prob(), budget=5, init_count=10)


def test_surrogate_beats_random_sampling(cantilever, ortho):
    m, fixed, f = cantilever
    prob = orient.OrientationProblem(m, fixed, f, ortho, orient.OrientParams(mode="fast"))
    res = orient.optimize_orientation(prob, budget=60, init_count=12, seed=0)
    rng = np.random.default_rng(0)
    rand = [prob.objective(x) for x in orient.BOUNDS[:, 0] + rng.random((60, 3)) *
            (orient.BOUNDS[:, 1] - orient.BOUNDS[:, 0])]
    assert res.f <= min(rand)
