import math

import numpy as np
import pytest

from forgelight import fea, mesh
from reference_top88 import lk


def _tet_b_oracle(X):
    """Strain-displacement matrix of a linear tet from the inverted coordinate matrix."""
    A = np.hstack([np.ones((4, 1)), X])
    grads = np.linalg.inv(A)[1:].T                      # (4, 3) shape-function gradients
    B = np.zeros((6, 12))
    for a, (gx, gy, gz) in enumerate(grads):
        c = 3 * a
        B[0, c], B[1, c + 1], B[2, c + 2] = gx, gy, gz
        B[3, c + 1], B[3, c + 2] = gz, gy                # yz
        B[4, c], B[4, c + 2] = gz, gx                    # xz
        B[5, c], B[5, c + 1] = gy, gx                    # xy
    return B, abs(np.linalg.det(A)) / 6.0


def test_tet_stiffness_matches_oracle(iso):
    X = np.array([[0.1, 0.0, 0.0], [1.3, 0.2, 0.1], [0.2, 1.1, -0.1], [0.3, 0.4, 0.9]])
    B, vol = _tet_b_oracle(X)
    D = iso.elasticity(3)
    assert np.allclose(fea.element_stiffness(X, iso), vol * B.T @ D @ B, rtol=1e-12, atol=1e-9)


def test_quad_stiffness_matches_closed_form():
    mat = fea.Material(kind="isotropic", E=1.0, nu=0.3)
    X = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    ke = fea.element_stiffness(X, mat)
    # same element matrix up to node ordering: compare spectra and a permuted copy
    assert np.allclose(np.linalg.eigvalsh(ke), np.linalg.eigvalsh(lk(0.3)), atol=1e-12)


def test_rigid_modes_in_kernel(small_box, iso):
    st = fea.Structure(small_box, iso, [], require_supported=False)
    K = st.full_stiffness(np.ones(small_box.n_elements))
    R = fea.rigid_modes(small_box.nodes)
    assert np.abs(K @ R).max() < 1e-9 * abs(K).max()


def test_patch_test_uniform_strain(small_box, iso):
    eps = np.array([1e-3, -2e-4, 5e-4, 3e-4, -1e-4, 2e-4])       # engineering shears
    E = np.array([[eps[0], eps[5] / 2, eps[4] / 2],
                  [eps[5] / 2, eps[1], eps[3] / 2],
                  [eps[4] / 2, eps[3] / 2, eps[2]]])
    u = (small_box.nodes @ E.T).ravel()
    st = fea.Structure(small_box, iso, [], require_supported=False)
    s = (st.stress_op @ u).reshape(-1, 6)
    assert np.allclose(s, iso.elasticity(3) @ eps, rtol=1e-10)


def test_interior_equilibrium_of_linear_field(iso):
    m = mesh.box_mesh((3, 3, 3), (3.0, 3.0, 3.0))
    st = fea.Structure(m, iso, [], require_supported=False)
    u = (m.nodes @ np.diag([1e-3, 2e-3, -1e-3])).ravel()
    r = st.full_stiffness(np.ones(m.n_elements)) @ u
    interior = np.nonzero(~m.is_boundary)[0]
    assert np.abs(r[fea.node_dofs(interior, 3)]).max() < 1e-12


def test_cantilever_energy_balance(cantilever, iso):
    m, fixed, f = cantilever
    st = fea.Structure(m, iso, fixed)
    sysf = st.factorize(np.ones(m.n_elements))
    u = fea.solve(sysf, f)
    assert np.all(u[fixed] == 0)
    assert u @ st.full_stiffness(np.ones(m.n_elements)) @ u == pytest.approx(f @ u, rel=1e-10)
    # deflection falls between the Euler-Bernoulli value and a third of it (stiff linear tets)
    eb = 1.0 * 6 ** 3 / (3 * iso.E * 2 * 2 ** 3 / 12)
    tip = -u[3 * mesh.select_nodes(m, {"axis": "x", "min": 6.0}) + 2].mean()
    assert eb / 3 < tip < eb * 1.05


def test_multiple_rhs_and_counter(cantilever, iso):
    m, fixed, f = cantilever
    sysf = fea.Structure(m, iso, fixed).factorize(np.ones(m.n_elements))
    F = np.column_stack([f, 2 * f, -f])
    U = fea.solve(sysf, F)
    assert np.allclose(U[:, 1], 2 * U[:, 0]) and np.allclose(U[:, 2], -U[:, 0])
    assert sysf.n_solves == 3


def test_insufficient_constraints(small_box, iso):
    one_node = fea.node_dofs([0], 3)
    with pytest.raises(fea.InsufficientlyConstrainedError):
        fea.Structure(small_box, iso, one_node)


def test_stale_factorization(cantilever, iso):
    m, fixed, f = cantilever
    field = fea.DensityField(np.ones(m.n_elements))
    sysf = fea.Structure(m, iso, fixed).factorize(field)
    field.assign(np.full(m.n_elements, 0.5))
    with pytest.raises(fea.StaleFactorizationError):
        fea.solve(sysf, f)


def test_simp_factor_and_stress_scaling(cantilever, iso):
    c, dc = fea.simp_factor(np.array([0.0, 0.5, 1.0]), fea.SimpParams(beta=3, eps=1e-3))
    assert np.allclose(c, [1e-3, 1e-3 + 0.125 * 0.999, 1.0])
    assert np.allclose(dc, [0.0, 3 * 0.25 * 0.999, 3 * 0.999])
    m, fixed, f = cantilever
    st = fea.Structure(m, iso, fixed)
    rho = np.full(m.n_elements, 0.5)
    sysf = st.factorize(rho)
    sf = fea.recover_stress(sysf, fea.solve(sysf, f))
    u = fea.solve(sysf, f)
    raw = (st.stress_op @ u).reshape(-1, 6)
    cf, _ = fea.simp_factor(rho, st.params)
    assert np.allclose(sf.stress, cf[:, None] * raw)


def test_von_mises_special_states():
    s = np.zeros((3, 6))
    s[0, 0] = 5.0                      # uniaxial
    s[1, 5] = 2.0                      # pure shear
    s[2, :3] = 7.0                     # hydrostatic
    assert np.allclose(fea.von_mises(s), [5.0, 2.0 * math.sqrt(3), 0.0])
    plane = np.array([[3.0, 0.0, 0.0], [1.0, -1.0, 0.0]])
    assert np.allclose(fea.von_mises(plane), [3.0, math.sqrt(3.0)])


def test_factor_of_safety(ortho):
    s = np.array([[-10.0, 4.0, 0.0, 2.0, 0.0, -1.0]])
    fs = fea.factor_of_safety(s, ortho)
    assert np.allclose(fs[0, [0, 1, 3, 5]], [50.0 / 10, 20.0 / 4, 4.0 / 2, 6.0 / 1])
    assert fs[0, 2] == fea.FS_SENTINEL and fs[0, 4] == fea.FS_SENTINEL


def test_shear_floor():
    mat = fea.Material(kind="orthotropic", E_x=3.0, E_y=1.5, E_z=1.0, G_xy=0.6, G_yz=0.4,
                       G_xz=0.5, nu_xy=0.3, nu_yz=0.3, nu_xz=0.3, tensile=(40.0, 20.0, 8.0),
                       compressive=(50.0, 30.0, 12.0))
    assert mat.with_shear_floor().shear == (4.0, 4.0, 4.0)
    assert mat.with_shear_floor("per_direction").shear == (4.0, 4.0, 10.0)


def test_material_validation_and_round_trip(tmp_path, ortho):
    with pytest.raises(ValueError):
        fea.Material(kind="isotropic", E=1.0, nu=0.5)
    with pytest.raises(ValueError):
        fea.Material.from_dict({"kind": "isotropic", "E": 1.0, "nu": 0.3, "colour": "red"})
    p = tmp_path / "m.json"
    import json
    p.write_text(json.dumps(ortho.to_dict()))
    assert fea.Material.load(p) == ortho


def test_rotated_elasticity(ortho, iso):
    assert np.allclose(fea.rotated_elasticity(ortho, [0, 0, 0]), ortho.elasticity(3))
    x = [0.3, 1.1, -0.7]
    assert np.allclose(fea.rotated_elasticity(iso, x), iso.elasticity(3), atol=1e-9)
    # quarter turn about z swaps the x and y stiffnesses
    D = fea.rotated_elasticity(ortho, [math.pi / 2, 0, 0])
    C = ortho.elasticity(3)
    assert D[0, 0] == pytest.approx(C[1, 1]) and D[1, 1] == pytest.approx(C[0, 0])


def test_transform_stress_round_trip():
    rng = np.random.default_rng(0)
    s = rng.normal(size=(5, 6))
    x = [0.4, 1.0, 2.0]
    back = fea.transform_stress(fea.transform_stress(s, x) @ np.eye(6), [0, 0, 0])
    assert np.allclose(back, fea.transform_stress(s, x))
    R = fea.euler_rotation(x)
    t = fea.voigt_to_tensor(s[0])
    assert np.allclose(fea.transform_stress(s[:1], x)[0], fea.tensor_to_voigt(R @ t @ R.T))


def _disc_shares_by_quadrature(m, node, radius, n=1000):
    """Monte-Carlo-free grid quadrature of 3 * int phi_j dA over a flat top face."""
    p0 = m.nodes[node]
    g = (np.arange(n) + 0.5) / n * 2 * radius - radius
    X, Y = np.meshgrid(g, g, indexing="ij")
    keep = X ** 2 + Y ** 2 <= radius ** 2
    pts = np.column_stack([X[keep] + p0[0], Y[keep] + p0[1]])
    dA = (2 * radius / n) ** 2
    w = np.zeros(m.n_nodes)
    tri = m.triangles
    z = m.nodes[tri][:, :, 2]
    top = np.all(np.isclose(z, p0[2]), axis=1)
    top &= np.linalg.norm(m.nodes[tri][:, :, :2] - p0[:2], axis=2).min(axis=1) < radius + 1.5
    for t in tri[top]:
        xy = m.nodes[t][:, :2]
        T = np.column_stack([xy[1] - xy[0], xy[2] - xy[0]])
        lb = np.linalg.solve(T, (pts - xy[0]).T).T
        l0 = 1 - lb.sum(axis=1)
        inside = (lb >= 0).all(axis=1) & (l0 >= 0)
        for j, phi in zip(t, (l0, lb[:, 0], lb[:, 1])):
            w[j] += phi[inside].sum() * dA
    return w / w.sum()


def test_force_spread_matches_quadrature():
    m = mesh.box_mesh((6, 6, 2), (6.0, 6.0, 2.0))
    node = int(np.nonzero(np.all(np.isclose(m.nodes, [3.0, 3.0, 2.0]), axis=1))[0][0])
    inst = fea.spread_point_force(m, node, 2.0, radius=1.3)
    assert np.allclose(inst.vectors.sum(axis=0), [0, 0, -2.0], atol=1e-12)
    ref = _disc_shares_by_quadrature(m, node, 1.3)
    got = np.zeros(m.n_nodes)
    got[inst.node_ids] = fea.nodal_area_shares(inst)
    assert np.abs(got - ref).max() < 2e-3


def test_force_spread_limits(small_box):
    b = int(np.nonzero(small_box.is_boundary)[0][5])
    pt = fea.spread_point_force(small_box, b, 1.0, radius=0.0)
    assert list(pt.node_ids) == [b]
    tiny = fea.spread_point_force(small_box, b, 1.0, radius=1e-4)
    assert tiny.node_magnitudes(small_box.n_nodes)[b] == pytest.approx(1.0, abs=1e-3)
    with pytest.raises(ValueError):
        fea.spread_point_force(mesh.box_mesh((3, 3, 3), (3.0, 3.0, 3.0)), 21, 1.0)


def test_modal_analysis_rigid_and_supported(small_box, iso, cantilever):
    st = fea.Structure(small_box, iso, [], require_supported=False)
    lam, modes = fea.modal_analysis(st, np.ones(small_box.n_elements), 8)
    assert np.all(np.abs(lam[:6]) < 1e-6 * abs(lam[6]))
    _, fixed, _ = cantilever
    st2 = fea.Structure(small_box, iso, fixed)
    lam2, modes2 = fea.modal_analysis(st2, np.ones(small_box.n_elements), 3)
    assert np.all(lam2 < 0) and np.all(np.diff(np.abs(lam2)) >= 0)
    assert np.all(modes2[fixed] == 0)


def test_lumped_mass_total(small_box, iso):
    st = fea.Structure(small_box, iso, [], require_supported=False)
    M = fea.lumped_mass(st, np.ones(small_box.n_elements))
    assert M.sum() == pytest.approx(3 * iso.density * small_box.element_volumes.sum())
