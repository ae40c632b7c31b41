import numpy as np
import pytest

from forgelight import fea, mesh


@pytest.fixture(scope="session")
def small_box():
    return mesh.box_mesh((6, 2, 2), (6.0, 2.0, 2.0))


@pytest.fixture(scope="session")
def iso():
    return fea.Material(kind="isotropic", E=1000.0, nu=0.3, sigma_y=10.0)


@pytest.fixture(scope="session")
def ortho():
    return fea.Material(kind="orthotropic", E_x=3.0, E_y=1.5, E_z=1.0, G_xy=0.6, G_yz=0.4,
                        G_xz=0.5, nu_xy=0.3, nu_yz=0.3, nu_xz=0.3, tensile=(40.0, 20.0, 8.0),
                        compressive=(50.0, 30.0, 12.0), shear=(4.0, 5.0, 6.0))


@pytest.fixture(scope="session")
def cantilever(small_box):
    """Clamped at x = 0, fixed DOFs and a downward tip load vector."""
    m = small_box
    fixed = fea.node_dofs(mesh.select_nodes(m, {"axis": "x", "max": 0.0}), 3)
    tip = mesh.select_nodes(m, {"axis": "x", "min": 6.0})
    f = np.zeros(3 * m.n_nodes)
    f[3 * tip + 2] = -1.0 / len(tip)
    return m, fixed, f


_CRITERIA: list[str] = []


@pytest.fixture
def criterion():
    """``criterion(n, ok, detail)`` records one PASS/FAIL line for the summary."""
    def record(n, ok, detail=""):
        line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}"
        _CRITERIA.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in _CRITERIA:
            terminalreporter.write_line(line)
