import numpy as np
import pytest

from forgelight import kernels, toposimp as T
from reference_top88 import lk, top88


def test_matches_reference_top88_small():
    cfg = T.TopoConfig(nx=30, ny=10, volfrac=0.5, penal=3.0, rmin=1.5)
    res = T.optimize_topology(cfg)
    x_ref, c_ref, it_ref = top88(30, 10, 0.5, 3.0, 1.5)
    assert res.status == "converged"
    assert res.compliance == pytest.approx(c_ref, rel=0.01)
    assert np.abs(res.densities - x_ref).mean() < 0.02


def test_element_matrix_agrees_with_closed_form():
    sysg = T.GridSystem(T.TopoConfig(nx=2, ny=2))
    assert np.allclose(np.linalg.eigvalsh(sysg.ke), np.linalg.eigvalsh(lk(0.3)), atol=1e-12)


def test_sensitivity_matches_finite_difference():
    cfg = T.TopoConfig(nx=6, ny=3, bc="cantilever", loads=(T.Load(6, 3, 0.0, -1.0),))
    sysg = T.GridSystem(cfg)
    rng = np.random.default_rng(2)
    x = rng.uniform(0.3, 0.9, 18)
    c, dc = T.compliance_and_sensitivity(sysg, x)
    h = 1e-6
    for e in (0, 7, 17):
        xp, xm = x.copy(), x.copy()
        xp[e] += h
        xm[e] -= h
        fd = (T.compliance_and_sensitivity(sysg, xp)[0] - T.compliance_and_sensitivity(sysg, xm)[0]) / (2 * h)
        assert dc[e] == pytest.approx(fd, rel=1e-5)


def test_oc_update_volume_and_move():
    rng = np.random.default_rng(0)
    x = rng.uniform(0.1, 0.9, 200)
    x *= 0.4 / x.mean()
    dc = -rng.uniform(0.01, 5.0, 200)
    xn = T.oc_update(x, dc, 0.4, move=0.2)
    assert abs(xn.mean() - 0.4) < 1e-5
    assert np.all(np.abs(xn - x) <= 0.2 + 1e-12) and xn.min() >= 0 and xn.max() <= 1
    with pytest.raises(T.TopologyError):
        T.oc_update(x, -dc, 0.4)
    with pytest.raises(T.BisectionError):
        T.oc_update(np.full(10, 0.1), -np.ones(10), 0.9, move=0.2)


def test_filter_matches_explicit_matrix():
    rng = np.random.default_rng(1)
    img = rng.normal(size=(5, 7))
    rmin = 2.2
    out = kernels.filter_grid(img, rmin)
    ny, nx = img.shape
    ref = np.zeros_like(img)
    for i in range(ny):
        for j in range(nx):
            num = den = 0.0
            for k in range(ny):
                for l in range(nx):
                    w = max(0.0, rmin - np.hypot(i - k, j - l))
                    num += w * img[k, l]
                    den += w
            ref[i, j] = num / den
    assert np.allclose(out, ref, rtol=1e-12)


def test_full_volume_short_circuit():
    res = T.optimize_topology(T.TopoConfig(nx=4, ny=2, volfrac=1.0))
    assert res.iterations == 0 and np.all(res.densities == 1.0)


def test_mirror_symmetry():
    cfg = T.TopoConfig(nx=20, ny=8, volfrac=0.4, bc="cantilever", loads=(T.Load(20, 8, 0.0, -1.0),))
    a = T.optimize_topology(cfg)
    b = T.optimize_topology(T.mirror_config(cfg))
    assert a.compliance == pytest.approx(b.compliance, rel=1e-8)
    assert np.allclose(T.mirror_image(a.densities), b.densities, atol=1e-6)


def test_warm_start_shape_checked():
    cfg = T.TopoConfig(nx=4, ny=2)
    with pytest.raises(T.TopologyError):
        T.optimize_topology(cfg, initial=np.ones((4, 2)))


@pytest.mark.parametrize("bad", [dict(volfrac=0.0), dict(rmin=0.5), dict(bc="pinned"),
                                 dict(loads=(T.Load(9, 0, 0, -1),)), dict(move=0.0),
                                 dict(filter="density")])
def test_config_validation(bad):
    with pytest.raises(T.TopologyError):
        T.TopoConfig(nx=4, ny=2, **bad)


def test_config_dict_round_trip():
    cfg = T.TopoConfig(nx=5, ny=3, loads=(T.Load(1, 0, 0.5, -1.0),))
    assert T.TopoConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(T.TopologyError):
        T.TopoConfig.from_dict({"nx": 3, "ny": 2, "extra": 1})


def test_loads_on_fixed_dofs_rejected():
    cfg = T.TopoConfig(nx=4, ny=2, bc="cantilever", loads=(T.Load(0, 1, 0.0, -1.0),))
    with pytest.raises(T.TopologyError):
        T.GridSystem(cfg)


@pytest.mark.parametrize("template", T.SAMPLER_TEMPLATES)
def test_sampler_templates(template):
    base = T.TopoConfig(nx=10, ny=5)
    spec = T.SamplerSpec(template, 0.5, 2.0)
    rng = np.random.default_rng(0)
    for _ in range(50):
        loads = spec.sample(base, rng)
        assert spec.contains(base, loads)
        assert len(T.encode_loads(loads, 10, 5)) == 4 * spec.n_forces


def test_dataset_round_trip_and_worker_independence(tmp_path):
    base = T.TopoConfig(nx=8, ny=4, volfrac=0.4, bc="simply_supported", max_iter=30)
    spec = T.SamplerSpec("top", 0.5, 1.0)
    a = T.generate_dataset(base, 3, 11, spec, workers=1)
    b = T.generate_dataset(base, 3, 11, spec, workers=2)
    for sa, sb in zip(a, b):
        assert sa.config == sb.config
        assert np.array_equal(sa.image.densities, sb.image.densities)
    T.write_dataset(a, tmp_path / "ds", spec, 11)
    F, I, cfgs, manifest = T.load_dataset(tmp_path / "ds")
    assert F.shape == (3, 4) and I.shape == (3, 32) and manifest["seed"] == 11
    assert np.allclose(I[1], a[1].image.vector)
    assert (tmp_path / "ds" / "sample_00000" / "preview.pgm").read_bytes().startswith(b"P5\n8 4\n255\n")
