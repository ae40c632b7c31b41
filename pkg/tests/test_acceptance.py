"""Exit criteria, each at its stated tolerance and runtime limit.

Every test records one PASS/FAIL line through the ``criterion`` fixture; the
lines are repeated in the terminal summary. Run only these with
``pytest -m acceptance -s``.
"""
import math
import time
import warnings

import numpy as np
import pytest

from forgelight import fea, learn, mesh as M, orient, toposimp as T, uncertain as U

import test_invariants as inv
from reference_top88 import top88

pytestmark = pytest.mark.acceptance

ISO = fea.Material(kind="isotropic", E=1000.0, nu=0.3)


def _line_supports(m):
    """Bottom edge lines at both ends, all components fixed."""
    lo, hi = m.bbox
    return np.union1d(M.select_nodes(m, [{"axis": "x", "max": lo[0]}, {"axis": "z", "max": lo[2]}]),
                      M.select_nodes(m, [{"axis": "x", "min": hi[0]}, {"axis": "z", "max": lo[2]}]))


def _top(m):
    return M.select_nodes(m, {"axis": "z", "min": m.bbox[1][2]})


# --------------------------------------------------------------------------
# 1. SIMP benchmark


def test_simp_benchmark(criterion):
    t0 = time.perf_counter()
    res = T.optimize_topology(T.TopoConfig(60, 20, volfrac=0.5, penal=3.0, rmin=1.5, bc="mbb"))
    elapsed = time.perf_counter() - t0
    _, c_ref, _ = top88(60, 20, 0.5, 3.0, 1.5)
    rel = abs(res.compliance - c_ref) / c_ref
    vols = np.append(res.volume_history, res.densities.mean())
    vol_dev = float(np.max(np.abs(vols - 0.5)))
    ok = (res.status == "converged" and res.iterations <= 200 and rel <= 0.05
          and vol_dev < 1e-4 and elapsed < 60)
    criterion(1, ok, f"{res.iterations} iterations, compliance {res.compliance:.4f} vs reference "
                     f"{c_ref:.4f} ({rel:.2%}), max |mean rho - 0.5| {vol_dev:.1e}, {elapsed:.1f} s")
    assert ok


# --------------------------------------------------------------------------
# 2. adjoint gradients


def test_adjoint_gradients(criterion):
    t0 = time.perf_counter()
    m = M.box_mesh((8, 3, 3), (8.0, 3.0, 3.0))
    assert m.n_elements <= 500
    shell = M.mark_shell(m, 0.3)
    prob = U.LightweightProblem(m, shell, M.select_nodes(m, {"axis": "z", "min": 3.0}),
                                M.select_nodes(m, {"axis": "x", "max": 0.0}), 1.0, 100.0, ISO,
                                k=8, weak_modes=4, sample_fraction=0.3, top_fraction=0.2)
    basis = U.material_modes(m, shell, 8)
    alpha = np.array([0.6, -0.4, 0.3, 0.2, -0.25, 0.15, 0.1, -0.1])
    rho = U.reduced_density(basis, alpha, prob.logistic)
    rep = U.critical_instant_analysis(prob, prob.structure.factorize(rho))
    g = U.adjoint_gradient(prob, basis, alpha, rep.node, rep.weak)

    h = 1e-5
    eye = np.eye(8)

    def H(a):
        return U.stress_pnorm(prob, U.reduced_density(basis, a, prob.logistic), rep.node, rep.weak)

    fd_s = np.array([(H(alpha + h * e) - H(alpha - h * e)) / (2 * h) for e in eye])
    fd_m = np.array([(U.mass_of(prob, basis, alpha + h * e) - U.mass_of(prob, basis, alpha - h * e))
                     / (2 * h) for e in eye])
    err_s = np.abs(g.dH_dalpha - fd_s) / np.abs(fd_s)
    err_m = np.abs(g.dM_dalpha - fd_m) / np.abs(fd_m)
    elapsed = time.perf_counter() - t0
    ok = bool(err_s.max() < 1e-4 and err_m.max() < 1e-4 and elapsed < 120)
    criterion(2, ok, f"{m.n_elements} tets, k=8, worst relative error stress {err_s.max():.1e}, "
                     f"mass {err_m.max():.1e}, {elapsed:.1f} s")
    assert ok


# --------------------------------------------------------------------------
# 3. vertex supremum


def test_vertex_supremum(criterion):
    m = M.box_mesh((3, 3, 3), (3.0, 3.0, 3.0))
    contact = M.select_nodes(m, [{"axis": "z", "min": 3.0}, {"axis": "x", "max": 1.0}])
    assert m.n_elements <= 200 and len(contact) <= 10
    prob = U.LightweightProblem(m, M.mark_shell(m, 0.5), contact,
                                M.select_nodes(m, {"axis": "x", "min": 3.0}), 1.0, 1.0, ISO)
    system = prob.structure.factorize(np.ones(m.n_elements))
    F = prob.load_matrix.toarray()
    Uv = fea.solve(system, F)
    vertex_best = float(U.element_von_mises(system, Uv).max())
    rng = np.random.default_rng(0)
    W = rng.dirichlet(np.ones(F.shape[1] + 1), size=1000)[:, :-1]   # strictly inside the simplex
    interior = U.element_von_mises(system, Uv @ W.T).max(axis=1)
    excess = float(interior.max() / vertex_best - 1.0)
    ok = excess <= 1e-6
    criterion(3, ok, f"{m.n_elements} tets, {len(prob.contact)} contact nodes, max interior / best "
                     f"vertex - 1 = {excess:.3e}")
    assert ok


# --------------------------------------------------------------------------
# 4. critical-instant fidelity


def _bar():
    m = M.two_neck_bar()
    return m, _top(m), _line_supports(m)


def _beam():
    m = M.box_mesh((48, 6, 8), (48.0, 6.0, 8.0))
    return m, _top(m), _line_supports(m)


def _bracket():
    m = M.l_bracket(width=12)
    return m, _top(m), M.select_nodes(m, {"axis": "z", "max": 0.0})


@pytest.mark.parametrize("name,build", [("beam", _beam), ("two-neck bar", _bar),
                                        ("L-bracket", _bracket)])
def test_critical_instant_fidelity(criterion, name, build):
    m, contact, fixed = build()
    prob = U.LightweightProblem(m, M.mark_shell(m, 1.0), contact, fixed, 1.0, 1.0, ISO)
    assert 300 <= len(prob.contact) <= 1000
    system = prob.structure.factorize(np.ones(m.n_elements))
    rep = U.critical_instant_analysis(prob, system, seed=0)
    bf = U.brute_force_critical(prob, system)
    ratio = rep.sigma / bf.sigma
    solves = rep.n_solves / bf.n_solves
    ok = ratio >= 0.98 and solves <= 0.20
    criterion(4, ok, f"{name}: {len(prob.contact)} contact nodes, sigma ratio {ratio:.4f}, "
                     f"solves {rep.n_solves}/{bf.n_solves} ({solves:.1%})")
    assert ok


# --------------------------------------------------------------------------
# 5. lightweighting end to end

_C5_SECONDS = {}


def _quiet_lightweight(prob):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return U.optimize_lightweight(prob)


def _solid_sigma(prob):
    rho = np.full(prob.mesh.n_elements, float(prob.logistic.G(0.0)))
    return U.brute_force_critical(prob, prob.structure.factorize(rho)).sigma


def test_two_neck_bar_fill_pattern(criterion):
    """Small budget fills only the thinner neck; a larger one fills both.

    Neck 1 (x 14..18) keeps 4 of 8 cells of height, neck 2 (x 32..36)
    keeps 5. A neck counts as filled when the mean binarized density of its
    interior (non-shell) elements is at least 0.5. The yield strength puts
    the solid design at 90% of yield under the larger budget.
    """
    t0 = time.perf_counter()
    m, contact, fixed = _bar()
    shell = M.mark_shell(m, 1.0)
    probe = U.LightweightProblem(m, shell, contact, fixed, 1.0, 1.0, ISO)
    small, large = 4.0, 5.5
    sigma_y = large * _solid_sigma(probe) / 0.9
    x = m.centroids[:, 0]
    interior = ~shell.mask
    necks = {"neck1": interior & (x > 14) & (x < 18), "neck2": interior & (x > 32) & (x < 36)}
    filled, details = {}, []
    for budget in (small, large):
        prob = U.LightweightProblem(m, shell, contact, fixed, budget, sigma_y, ISO, max_iter=40)
        res = _quiet_lightweight(prob)
        fill = {k: float(res.rho_binary[sel].mean()) for k, sel in necks.items()}
        filled[budget] = {k: v >= 0.5 for k, v in fill.items()}
        details.append(f"budget {budget:g}: neck fill {fill['neck1']:.2f}/{fill['neck2']:.2f}, "
                       f"mass reduction {res.mass_reduction:.2f}, verified "
                       f"{res.verification['verified']}")
    _C5_SECONDS["necks"] = time.perf_counter() - t0
    ok = (filled[small] == {"neck1": True, "neck2": False}
          and filled[large] == {"neck1": True, "neck2": True})
    criterion(5, ok, "two-neck bar; " + "; ".join(details))
    assert ok


def test_beam_mass_reduction(criterion):
    t0 = time.perf_counter()
    m, contact, fixed = _beam()
    shell = M.mark_shell(m, 1.0)
    sigma_y = _solid_sigma(U.LightweightProblem(m, shell, contact, fixed, 1.0, 1.0, ISO)) / 0.8
    prob = U.LightweightProblem(m, shell, contact, fixed, 1.0, sigma_y, ISO, max_iter=40)
    res = _quiet_lightweight(prob)
    v = res.verification
    _C5_SECONDS["beam"] = time.perf_counter() - t0
    total = sum(_C5_SECONDS.values())
    ok = (v["verified"] and v["sigma_cr"] <= sigma_y and res.mass_reduction >= 0.30
          and total < 1800)
    criterion(5, ok, f"simply-supported beam: binarized mass reduction {res.mass_reduction:.3f}, "
                     f"verified sigma_cr {v['sigma_cr']:.4f} <= sigma_y {sigma_y:.4f} at threshold "
                     f"{v['threshold']}, criterion 5 time so far {total:.0f} s")
    assert ok


# --------------------------------------------------------------------------
# 6. data-driven estimation


# the "top" sampler always loads row 0, so the y feature is constant
@pytest.mark.filterwarnings("ignore::forgelight.learn.RankDeficientWarning")
def test_data_driven_estimation(criterion):
    t0 = time.perf_counter()
    base = T.TopoConfig(40, 20, bc="simply_supported")
    samples = T.generate_dataset(base, 500, 7, T.SamplerSpec("top"))
    train, test = samples[:400], samples[400:]
    F = np.array([s.features for s in train])
    I = np.array([s.image.vector for s in train])
    pca = learn.pca_fit(I, 80)
    W = learn.pca_project(pca, I)
    models = {"linear": learn.fit_linear(F, W), "neural": learn.fit_neural(F, W, hidden=80, seed=0)}
    shape = (base.ny, base.nx)
    l1 = {}
    for name, mdl in models.items():
        l1[name] = float(np.mean([learn.l1_distance(learn.estimate_topology(mdl, pca, s.features, shape),
                                                    s.image.densities) for s in test]))
    wins = 0
    for s in test:
        est = learn.estimate_topology(models["neural"], pca, s.features, shape)
        warm = T.optimize_topology(s.config, initial=learn.warm_start(est, s.config.volfrac))
        wins += warm.iterations < s.image.iterations
    elapsed = time.perf_counter() - t0
    ok = l1["neural"] < l1["linear"] and wins >= 50 and elapsed < 1200
    criterion(6, ok, f"held-out L1 neural {l1['neural']:.4f} < linear {l1['linear']:.4f}; warm start "
                     f"faster on {wins}/100; {elapsed:.0f} s")
    assert ok


# --------------------------------------------------------------------------
# 7. surrogate efficiency


def test_surrogate_efficiency(criterion, ortho):
    t0 = time.perf_counter()
    m = M.box_mesh((10, 2, 2), (10.0, 2.0, 2.0))
    fixed = fea.node_dofs(M.select_nodes(m, {"axis": "x", "max": 0.0}), 3)
    tip = M.select_nodes(m, {"axis": "x", "min": 10.0})
    d = np.array([0.0, math.sin(math.radians(20)), -math.cos(math.radians(20))])
    f = np.zeros(3 * m.n_nodes)
    for n in tip:
        f[3 * n:3 * n + 3] = d / len(tip)
    prob = orient.OrientationProblem(m, fixed, f, ortho, orient.OrientParams(kappa=6, mode="faithful"))
    grid = orient.orientation_grid(30.0)
    assert len(grid) == 1008
    _, f_grid, _ = orient.grid_search(prob, 30.0)
    res = orient.optimize_orientation(prob, budget=215, init_count=20, seed=0)
    elapsed = time.perf_counter() - t0
    ok = res.n_evals <= 215 and res.f <= f_grid and elapsed < 3600
    criterion(7, ok, f"surrogate best {res.f:.5e} after {res.n_evals} evaluations vs 1008-point grid "
                     f"best {f_grid:.5e}; faithful mode, {elapsed:.0f} s")
    assert ok


# --------------------------------------------------------------------------
# 8. invariant suite


def test_invariant_suite(criterion):
    checks = [inv.test_von_mises_rotation_invariant, inv.test_pca_reconstruction_monotone,
              inv.test_rbf_exact_interpolation, inv.test_logistic_shell_condition,
              inv.test_rigid_body_modes, inv.test_force_spread_conservation,
              inv.test_lhs_one_point_per_bin, inv.test_determinism_per_seed]
    t0 = time.perf_counter()
    failed = []
    for check in checks:
        try:
            check()
        except Exception as exc:   # noqa: BLE001 - each failure is reported by name
            failed.append(f"{check.__name__}: {type(exc).__name__}")
    elapsed = time.perf_counter() - t0
    ok = not failed and elapsed < 300
    criterion(8, ok, f"{len(checks) - len(failed)}/{len(checks)} invariant groups green in "
                     f"{elapsed:.0f} s" + (f"; failed {failed}" if failed else ""))
    assert ok
