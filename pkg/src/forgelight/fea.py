"""Linear-elasticity finite elements: element matrices, SIMP interpolation,
constrained assembly with factorization reuse, stress recovery, safety
factors, surface force spreading and lumped-mass modal analysis.

Stress vectors use Voigt order ``xx, yy, zz, yz, xz, xy`` in 3D (engineering
shear strains) and ``xx, yy, xy`` in 2D plane stress. Degrees of freedom are
numbered ``node * dim + component``.
"""
from __future__ import annotations

import copy
import json
import logging
import math
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse import csgraph

from . import kernels
from .mesh import DegenerateElementError, Mesh

log = logging.getLogger(__name__)

FS_SENTINEL = float(np.finfo(np.float64).max)


class InsufficientlyConstrainedError(ValueError):
    """Fixed DOFs do not remove every rigid-body mode."""


class StaleFactorizationError(RuntimeError):
    """A factorization was used after its density field changed."""


class SolverError(RuntimeError):
    """Linear or eigen solver failed to deliver an accurate answer."""


# --------------------------------------------------------------------------
# materials


@dataclass(frozen=True)
class Material:
    """Isotropic (``E``, ``nu``, ``sigma_y``) or orthotropic material card.

    Orthotropic strengths are ``(x, y, z)`` for tension and compression and
    ``(yz, xz, xy)`` for shear, matching the Voigt stress order.
    """

    kind: str = "isotropic"
    E: float | None = None
    nu: float | None = None
    sigma_y: float | None = None
    E_x: float | None = None
    E_y: float | None = None
    E_z: float | None = None
    G_xy: float | None = None
    G_yz: float | None = None
    G_xz: float | None = None
    nu_xy: float | None = None
    nu_yz: float | None = None
    nu_xz: float | None = None
    tensile: tuple | None = None
    compressive: tuple | None = None
    shear: tuple | None = None
    density: float = 1.0

    def __post_init__(self):
        if self.kind == "isotropic":
            if self.E is None or self.nu is None:
                raise ValueError("isotropic material needs E and nu")
            if self.E <= 0 or not -1.0 < self.nu < 0.5:
                raise ValueError(f"invalid isotropic constants E={self.E}, nu={self.nu}")
        elif self.kind == "orthotropic":
            mods = (self.E_x, self.E_y, self.E_z, self.G_xy, self.G_yz, self.G_xz)
            if any(v is None or v <= 0 for v in mods):
                raise ValueError("orthotropic moduli must all be given and positive")
            if any(v is None for v in (self.nu_xy, self.nu_yz, self.nu_xz)):
                raise ValueError("orthotropic material needs nu_xy, nu_yz, nu_xz")
            if np.linalg.eigvalsh(self.compliance()).min() <= 0:
                raise ValueError("orthotropic compliance matrix is not positive definite")
        else:
            raise ValueError(f"unknown material kind {self.kind!r}")
        for name in ("tensile", "compressive", "shear"):
            val = getattr(self, name)
            if val is not None:
                val = tuple(float(v) for v in val)
                if len(val) != 3 or min(val) <= 0:
                    raise ValueError(f"{name} strengths must be 3 positive values")
                object.__setattr__(self, name, val)
        if self.sigma_y is not None and self.sigma_y <= 0:
            raise ValueError("sigma_y must be positive")

    def compliance(self) -> np.ndarray:
        """6x6 compliance matrix (engineering shear)."""
        if self.kind == "isotropic":
            E, nu = self.E, self.nu
            G = E / (2 * (1 + nu))
            S = np.zeros((6, 6))
            S[:3, :3] = -nu / E
            np.fill_diagonal(S[:3, :3], 1.0 / E)
            S[3, 3] = S[4, 4] = S[5, 5] = 1.0 / G
            return S
        S = np.zeros((6, 6))
        S[0, 0], S[1, 1], S[2, 2] = 1 / self.E_x, 1 / self.E_y, 1 / self.E_z
        S[0, 1] = S[1, 0] = -self.nu_xy / self.E_x
        S[1, 2] = S[2, 1] = -self.nu_yz / self.E_y
        S[0, 2] = S[2, 0] = -self.nu_xz / self.E_x
        S[3, 3], S[4, 4], S[5, 5] = 1 / self.G_yz, 1 / self.G_xz, 1 / self.G_xy
        return S

    def elasticity(self, dim: int = 3) -> np.ndarray:
        """Elasticity matrix: 6x6 in 3D, 3x3 plane stress in 2D."""
        if dim == 3:
            D = np.linalg.inv(self.compliance())
            return 0.5 * (D + D.T)
        if self.kind != "isotropic":
            raise ValueError("2D elements support isotropic materials only")
        E, nu = self.E, self.nu
        return E / (1 - nu * nu) * np.array([[1, nu, 0], [nu, 1, 0], [0, 0, (1 - nu) / 2]])

    @property
    def is_isotropic(self) -> bool:
        return self.kind == "isotropic"

    def strength_vector(self):
        """``(tension(6), compression(6))`` per Voigt component; shear in both."""
        if self.tensile is not None and self.compressive is not None and self.shear is not None:
            t = np.r_[self.tensile, self.shear]
            c = np.r_[self.compressive, self.shear]
            return t, c
        if self.sigma_y is not None:
            # isotropic maximum-stress reading: shear strength from Tresca
            t = np.r_[[self.sigma_y] * 3, [0.5 * self.sigma_y] * 3]
            return t, t.copy()
        raise ValueError("material card has no strength entries")

    def with_shear_floor(self, mode: str = "global") -> "Material":
        """Shear strengths as 50% of the lowest yield strength.

        ``mode="global"`` uses the lowest of all six tensile/compressive
        values; ``"per_direction"`` uses the two axes spanning each shear plane.
        """
        if self.tensile is None or self.compressive is None:
            raise ValueError("shear floor needs tensile and compressive strengths")
        low = np.minimum(self.tensile, self.compressive)
        if mode == "global":
            shear = (0.5 * low.min(),) * 3
        elif mode == "per_direction":
            pairs = ((1, 2), (0, 2), (0, 1))     # yz, xz, xy
            shear = tuple(0.5 * min(low[a], low[b]) for a, b in pairs)
        else:
            raise ValueError(f"unknown shear floor mode {mode!r}")
        return _replace(self, shear=shear)

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v)
                for k, v in asdict(self).items() if v is not None}

    @classmethod
    def from_dict(cls, data: dict) -> "Material":
        data = dict(data)
        floor = data.pop("shear_floor", None)
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown material fields {sorted(unknown)}")
        mat = cls(**data)
        if floor:
            mat = mat.with_shear_floor(floor)
        return mat

    @classmethod
    def load(cls, path) -> "Material":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _replace(mat, **changes):
    d = asdict(mat)
    d.update(changes)
    return Material(**d)


def printed_photopolymer() -> Material:
    """Orthotropic card of an inkjet-printed photopolymer (SI units).

    Principal-direction values from tensile/compression characterization;
    shear strength is half the lowest yield strength.
    """
    GPa, MPa = 1e9, 1e6
    return Material(
        kind="orthotropic",
        E_x=1.16 * GPa, E_y=1.05 * GPa, E_z=0.52 * GPa,
        G_xy=0.51 * GPa, G_yz=0.28 * GPa, G_xz=0.30 * GPa,
        nu_xy=0.09, nu_yz=0.37, nu_xz=0.31,
        tensile=(35.86 * MPa, 25.52 * MPa, 8.77 * MPa),
        compressive=(52.46 * MPa, 37.63 * MPa, 13.58 * MPa),
        shear=(4.38 * MPa,) * 3,
        density=1175.0,
    )


# --------------------------------------------------------------------------
# rotations and stress transforms


def _rz(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _rx(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def euler_rotation(x) -> np.ndarray:
    """Intrinsic z-x-z rotation ``Rz(alpha) Rx(beta) Rz(gamma)``."""
    a, b, g = (float(v) for v in x)
    return _rz(a) @ _rx(b) @ _rz(g)


_VOIGT = ((0, 0), (1, 1), (2, 2), (1, 2), (0, 2), (0, 1))


def voigt_to_tensor(s: np.ndarray) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    t = np.empty(s.shape[:-1] + (3, 3))
    for k, (i, j) in enumerate(_VOIGT):
        t[..., i, j] = s[..., k]
        t[..., j, i] = s[..., k]
    return t


def tensor_to_voigt(t: np.ndarray) -> np.ndarray:
    return np.stack([t[..., i, j] for i, j in _VOIGT], axis=-1)


def stress_rotation_matrix(R: np.ndarray) -> np.ndarray:
    """6x6 ``T`` with ``voigt(R s R^T) = T @ voigt(s)`` for stress vectors."""
    T = np.empty((6, 6))
    for k in range(6):
        e = np.zeros(6)
        e[k] = 1.0
        T[:, k] = tensor_to_voigt(R @ voigt_to_tensor(e) @ R.T)
    return T


def transform_stress(stress, x) -> np.ndarray:
    """Stress (Voigt rows) from the geometry frame into the material frame
    given by Euler angles ``x``: ``s' = R s R^T``."""
    R = euler_rotation(x)
    return np.asarray(stress, dtype=float) @ stress_rotation_matrix(R).T


def rotated_elasticity(material: Material, x) -> np.ndarray:
    """Geometry-frame elasticity of a material whose axes are set by ``x``."""
    Tinv = stress_rotation_matrix(euler_rotation(x).T)   # material -> geometry
    D = Tinv @ material.elasticity(3) @ Tinv.T
    return 0.5 * (D + D.T)


def factor_of_safety(stress_mat, material: Material) -> np.ndarray:
    """Per-component safety factors of material-frame stresses.

    Normal components use tensile strength in tension, compressive strength
    in compression; shear uses ``|tau|``. Zero stress maps to ``FS_SENTINEL``.
    """
    s = np.asarray(stress_mat, dtype=float)
    tens, comp = material.strength_vector()
    if s.shape[-1] != 6:
        raise ValueError("factor_of_safety expects 6-component stresses")
    strength = np.where(s < 0, comp, tens)
    mag = np.abs(s)
    with np.errstate(divide="ignore"):
        fs = np.where(mag > 0, strength / np.where(mag > 0, mag, 1.0), FS_SENTINEL)
    return fs


def von_mises(stress) -> np.ndarray:
    return kernels.von_mises(stress)


# --------------------------------------------------------------------------
# SIMP


@dataclass(frozen=True)
class SimpParams:
    beta: float = 3.0
    eps: float = 1e-8
    p: float = 3.0
    E_min: float = 1e-9

    def __post_init__(self):
        if self.beta < 1 or self.p < 1:
            raise ValueError("penalization exponents must be >= 1")
        if not 0 < self.eps < 1:
            raise ValueError("void stiffness fraction must lie in (0, 1)")


def simp_factor(rho, params: SimpParams = SimpParams()):
    """Stiffness scale ``eps + rho^beta (1 - eps)`` and its derivative."""
    rho = np.asarray(rho, dtype=float)
    if np.any((rho < 0) | (rho > 1)):
        warnings.warn("densities outside [0, 1] were clamped", RuntimeWarning, stacklevel=2)
        rho = np.clip(rho, 0.0, 1.0)
    b, eps = params.beta, params.eps
    c = eps + rho ** b * (1.0 - eps)
    dc = b * rho ** (b - 1.0) * (1.0 - eps)
    return c, dc


def simp_interpolate(ke_solid, rho_e: float, params: SimpParams = SimpParams()) -> np.ndarray:
    """``K_void + rho^beta (K_solid - K_void)`` with ``K_void = eps K_solid``."""
    c, _ = simp_factor(rho_e, params)
    return float(c) * np.asarray(ke_solid, dtype=float)


# --------------------------------------------------------------------------
# element matrices


def tet_b_matrices(grads: np.ndarray) -> np.ndarray:
    """Strain-displacement matrices (m, 6, 12) from barycentric gradients."""
    m = len(grads)
    B = np.zeros((m, 6, 12))
    gx, gy, gz = grads[:, :, 0], grads[:, :, 1], grads[:, :, 2]
    B[:, 0, 0::3] = gx
    B[:, 1, 1::3] = gy
    B[:, 2, 2::3] = gz
    B[:, 3, 1::3] = gz
    B[:, 3, 2::3] = gy
    B[:, 4, 0::3] = gz
    B[:, 4, 2::3] = gx
    B[:, 5, 0::3] = gy
    B[:, 5, 1::3] = gx
    return B


_GAUSS = np.array([-1.0, 1.0]) / math.sqrt(3.0)


def _quad_shape_grads(xy, xi, eta):
    dN = 0.25 * np.array([[-(1 - eta), (1 - eta), (1 + eta), -(1 + eta)],
                          [-(1 - xi), -(1 + xi), (1 + xi), (1 - xi)]])
    J = dN @ xy                       # (2, 2) per element when xy is (4, 2)
    return J, dN


def quad_b_matrices(coords: np.ndarray, xi=0.0, eta=0.0):
    """Q4 strain-displacement matrices (m, 3, 8) and Jacobian determinants."""
    coords = np.asarray(coords, dtype=float)
    dN = 0.25 * np.array([[-(1 - eta), (1 - eta), (1 + eta), -(1 + eta)],
                          [-(1 - xi), -(1 + xi), (1 + xi), (1 - xi)]])
    J = np.einsum("ak,mkd->mad", dN, coords)
    det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
    Jinv = np.linalg.inv(J)
    dNx = np.einsum("mda,ak->mdk", Jinv, dN)   # (m, 2, 4)
    B = np.zeros((len(coords), 3, 8))
    B[:, 0, 0::2] = dNx[:, 0]
    B[:, 1, 1::2] = dNx[:, 1]
    B[:, 2, 0::2] = dNx[:, 1]
    B[:, 2, 1::2] = dNx[:, 0]
    return B, det


def quad_stiffness_stack(coords: np.ndarray, D: np.ndarray, thickness=1.0) -> np.ndarray:
    ke = np.zeros((len(coords), 8, 8))
    for xi in _GAUSS:
        for eta in _GAUSS:
            B, det = quad_b_matrices(coords, xi, eta)
            ke += thickness * det[:, None, None] * np.einsum("mji,jk,mkl->mil", B, D, B)
    return ke


def element_stiffness(coords, material: Material | np.ndarray, index: int = 0) -> np.ndarray:
    """Dense solid stiffness of one element (4 nodes: tet in 3D, quad in 2D).

    ``material`` may be a :class:`Material` or an elasticity matrix.
    """
    coords = np.asarray(coords, dtype=float)
    dim = coords.shape[1]
    D = material.elasticity(dim) if isinstance(material, Material) else np.asarray(material)
    if dim == 3:
        grads, vol = kernels.tet_geometry(coords, np.arange(4)[None])
        scale = float(np.prod(np.ptp(coords, axis=0))) or 1.0
        if abs(vol[0]) < 1e-12 * scale:
            raise DegenerateElementError(index, vol[0])
        B = tet_b_matrices(grads)[0]
        return abs(vol[0]) * B.T @ D @ B
    _, det = quad_b_matrices(coords[None])
    if det[0] <= 0:
        raise DegenerateElementError(index, det[0])
    return quad_stiffness_stack(coords[None], D)[0]


class ElementGeometry:
    """Per-element strain operators of a mesh, reused across materials."""

    def __init__(self, mesh: Mesh):
        self.mesh = mesh
        self.dim = mesh.dim
        nper = mesh.elements.shape[1]
        self.n_edof = nper * self.dim
        comps = np.arange(self.dim)
        self.edofs = (mesh.elements[:, :, None] * self.dim + comps).reshape(len(mesh.elements), -1)
        self.ndof = mesh.n_nodes * self.dim
        if self.dim == 3:
            grads, vol = kernels.tet_geometry(mesh.nodes, mesh.elements)
            self.B = tet_b_matrices(grads)
            self.volumes = np.abs(vol)
        else:
            coords = mesh.nodes[mesh.elements]
            self.B, _ = quad_b_matrices(coords)       # centroid, for stresses
            self._coords = coords
            self.volumes = mesh.element_volumes.copy()
        self.n_stress = self.B.shape[1]

    @classmethod
    def of(cls, mesh: Mesh) -> "ElementGeometry":
        geo = mesh._cache.get("element_geometry")
        if geo is None:
            geo = cls(mesh)
            mesh._cache["element_geometry"] = geo
        return geo

    def stiffness_stack(self, D: np.ndarray) -> np.ndarray:
        if self.dim == 3:
            return self.volumes[:, None, None] * np.einsum("mji,jk,mkl->mil", self.B, D, self.B)
        return quad_stiffness_stack(self._coords, D)

    def stress_operator(self, D: np.ndarray) -> sp.csr_matrix:
        """Sparse ``(n_stress * m, ndof)`` map from displacements to solid stresses."""
        DB = np.einsum("ij,mjk->mik", D, self.B)
        m, ns, ne = DB.shape
        rows = np.repeat(np.arange(m * ns), ne)
        cols = np.repeat(self.edofs[:, None, :], ns, axis=1).ravel()
        return sp.csr_matrix((DB.ravel(), (rows, cols)), shape=(m * ns, self.ndof))


# --------------------------------------------------------------------------
# densities, assembly and solves


class DensityField:
    """Per-element densities with a version stamp bumped on every change."""

    def __init__(self, values):
        self._values = np.array(values, dtype=float)
        self._values.setflags(write=False)
        self.version = 0

    @property
    def values(self) -> np.ndarray:
        return self._values

    def assign(self, values) -> None:
        new = np.array(values, dtype=float)
        if new.shape != self._values.shape:
            raise ValueError("density field shape cannot change")
        new.setflags(write=False)
        self._values = new
        self.version += 1

    def __len__(self):
        return len(self._values)


def rigid_modes(nodes: np.ndarray) -> np.ndarray:
    """Rigid-body displacement basis, shape (n * dim, 6) in 3D or (n * 2, 3) in 2D."""
    n, dim = nodes.shape
    c = nodes - nodes.mean(axis=0)
    if dim == 3:
        R = np.zeros((n, 3, 6))
        for k in range(3):
            R[:, k, k] = 1.0
        x, y, z = c[:, 0], c[:, 1], c[:, 2]
        R[:, 1, 3], R[:, 2, 3] = -z, y
        R[:, 0, 4], R[:, 2, 4] = z, -x
        R[:, 0, 5], R[:, 1, 5] = -y, x
        return R.reshape(n * 3, 6)
    R = np.zeros((n, 2, 3))
    R[:, 0, 0] = 1.0
    R[:, 1, 1] = 1.0
    R[:, 0, 2], R[:, 1, 2] = -c[:, 1], c[:, 0]
    return R.reshape(n * 2, 3)


def node_dofs(node_ids, dim: int, components=None) -> np.ndarray:
    comps = np.arange(dim) if components is None else np.atleast_1d(components)
    ids = np.asarray(node_ids, dtype=np.int64)
    return np.unique((ids[:, None] * dim + comps[None, :]).ravel())


class Structure:
    """A mesh, material and support conditions ready for repeated factorization.

    Element stiffness matrices, the stress operator and the sparse assembly
    pattern are computed once; :meth:`factorize` then only rescales element
    contributions for a density field.
    """

    def __init__(self, mesh: Mesh, material: Material, fixed_dofs, params: SimpParams = SimpParams(),
                 elasticity: np.ndarray | None = None, require_supported: bool = True):
        self.mesh = mesh
        self.material = material
        self.params = params
        self.geometry = ElementGeometry.of(mesh)
        self.dim = mesh.dim
        self.ndof = self.geometry.ndof
        self.D = material.elasticity(self.dim) if elasticity is None else np.asarray(elasticity)
        self.fixed = np.unique(np.asarray(fixed_dofs, dtype=np.int64))
        free = np.ones(self.ndof, dtype=bool)
        free[self.fixed] = False
        self.free = np.nonzero(free)[0]
        if require_supported:
            self._check_constraints()
        self.ke = self.geometry.stiffness_stack(self.D)
        self.stress_op = self.geometry.stress_operator(self.D)
        self._build_pattern()

    @property
    def n_elements(self) -> int:
        return self.mesh.n_elements

    def with_elasticity(self, D: np.ndarray) -> "Structure":
        """Same mesh, supports and sparsity pattern with a new elasticity matrix."""
        other = copy.copy(self)
        other.D = np.asarray(D, dtype=float)
        other.ke = self.geometry.stiffness_stack(other.D)
        other.stress_op = self.geometry.stress_operator(other.D)
        return other

    def _check_constraints(self):
        mesh = self.mesh
        inc = mesh.node_elements
        adj = (inc @ inc.T).tocsr()
        ncomp, labels = csgraph.connected_components(adj, directed=False)
        used = np.zeros(mesh.n_nodes, dtype=bool)
        used[mesh.elements.ravel()] = True
        fixed_mask = np.zeros(self.ndof, dtype=bool)
        fixed_mask[self.fixed] = True
        need = 6 if self.dim == 3 else 3
        for k in range(ncomp):
            nodes = np.nonzero((labels == k) & used)[0]
            if len(nodes) == 0:
                continue
            modes = rigid_modes(mesh.nodes[nodes])
            dofs = node_dofs(nodes, self.dim)
            sel = fixed_mask[dofs]
            rank = np.linalg.matrix_rank(modes[sel], tol=1e-9) if sel.any() else 0
            if rank < need:
                raise InsufficientlyConstrainedError(
                    f"fixed DOFs leave {need - rank} rigid-body mode(s) free "
                    f"in component {k} ({len(nodes)} nodes)")

    def _build_pattern(self):
        red = -np.ones(self.ndof, dtype=np.int64)
        red[self.free] = np.arange(len(self.free))
        e = red[self.geometry.edofs]                          # (m, ne)
        ne = e.shape[1]
        rows = np.repeat(e, ne, axis=1).ravel()
        cols = np.tile(e, (1, ne)).ravel()
        keep = (rows >= 0) & (cols >= 0)
        nf = len(self.free)
        key = cols[keep] * nf + rows[keep]
        uniq, inv = np.unique(key, return_inverse=True)
        self._keep = keep
        self._inv = inv
        self._nnz = len(uniq)
        self._rows = (uniq % nf).astype(np.int32)
        colcount = np.bincount(uniq // nf, minlength=nf)
        self._indptr = np.r_[0, np.cumsum(colcount)].astype(np.int32)

    def element_factors(self, rho):
        return simp_factor(rho, self.params)

    def assemble(self, rho) -> sp.csc_matrix:
        """Free-DOF stiffness ``K_ff`` for densities ``rho``."""
        c, _ = self.element_factors(rho)
        vals = (self.ke * c[:, None, None]).reshape(-1)[self._keep]
        data = np.bincount(self._inv, weights=vals, minlength=self._nnz)
        nf = len(self.free)
        return sp.csc_matrix((data, self._rows, self._indptr), shape=(nf, nf))

    def full_stiffness(self, rho) -> sp.csr_matrix:
        """Unconstrained global stiffness (for checks and modal analysis)."""
        c, _ = self.element_factors(rho)
        e = self.geometry.edofs
        ne = e.shape[1]
        rows = np.repeat(e, ne, axis=1).ravel()
        cols = np.tile(e, (1, ne)).ravel()
        vals = (self.ke * c[:, None, None]).ravel()
        return sp.csr_matrix((vals, (rows, cols)), shape=(self.ndof, self.ndof))

    def factorize(self, densities) -> "FeaSystem":
        field_ = densities if isinstance(densities, DensityField) else DensityField(densities)
        if len(field_) != self.n_elements:
            raise ValueError("density count does not match element count")
        K = self.assemble(field_.values)
        try:
            lu = spla.splu(K, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                           options={"SymmetricMode": True})
        except RuntimeError as exc:
            raise InsufficientlyConstrainedError(f"singular constrained system: {exc}") from exc
        return FeaSystem(self, field_, field_.version, K, lu)


@dataclass(eq=False)
class FeaSystem:
    structure: Structure
    densities: DensityField
    version: int
    K: sp.csc_matrix
    lu: object
    n_solves: int = field(default=0)

    @property
    def rho(self) -> np.ndarray:
        return self.densities.values

    def check_current(self):
        if self.densities.version != self.version:
            raise StaleFactorizationError(
                f"factorization built for density version {self.version}, "
                f"field is at version {self.densities.version}")

    def solve(self, f) -> np.ndarray:
        return solve(self, f)

    def solve_free(self, rhs_free) -> np.ndarray:
        self.check_current()
        x = self.lu.solve(np.ascontiguousarray(rhs_free))
        self.n_solves += 1 if np.ndim(rhs_free) == 1 else np.shape(rhs_free)[1]
        return x


def assemble_and_factorize(mesh: Mesh, densities, material: Material, params: SimpParams,
                           fixed_dofs) -> FeaSystem:
    return Structure(mesh, material, fixed_dofs, params).factorize(densities)


def solve(system: FeaSystem, f, tol: float = 1e-9) -> np.ndarray:
    """Displacements for nodal forces ``f`` (one column per load case).

    Fixed DOFs get zero displacement; loads on them are ignored. The relative
    residual on the free DOFs is verified against ``tol``.
    """
    system.check_current()
    st = system.structure
    f = np.asarray(f, dtype=float)
    ff = f[st.free]
    uf = system.solve_free(ff)
    norm_f = np.linalg.norm(ff, axis=0)
    res = np.linalg.norm(system.K @ uf - ff, axis=0)
    scale = np.where(norm_f > 0, norm_f, 1.0)
    if np.any(res / scale > tol):
        uf = uf + system.lu.solve(ff - system.K @ uf)
        res = np.linalg.norm(system.K @ uf - ff, axis=0)
        if np.any(res / scale > tol) or not np.all(np.isfinite(uf)):
            raise SolverError(f"solver residual {float(np.max(res / scale)):.2e} exceeds {tol:g}")
    u = np.zeros(f.shape)
    u[st.free] = uf
    return u


@dataclass
class StressField:
    stress: np.ndarray          # (m, ns) or (k, m, ns)
    von_mises: np.ndarray       # (m,) or (k, m)


def recover_stress(system: FeaSystem, u) -> StressField:
    """Element stresses ``C_e(rho) B_e u_e`` and their von Mises values."""
    st = system.structure
    c, _ = st.element_factors(system.rho)
    u = np.asarray(u, dtype=float)
    ns, m = st.geometry.n_stress, st.n_elements
    s = st.stress_op @ u
    if u.ndim == 1:
        s = s.reshape(m, ns) * c[:, None]
    else:
        s = np.transpose(s.reshape(m, ns, -1), (2, 0, 1)) * c[None, :, None]
    return StressField(s, kernels.von_mises(s))


# --------------------------------------------------------------------------
# surface forces


@dataclass
class ForceInstant:
    node: int
    magnitude: float
    radius: float
    node_ids: np.ndarray        # nodes carrying load
    vectors: np.ndarray         # (k, 3) nodal force vectors

    def vector(self, ndof: int) -> np.ndarray:
        f = np.zeros(ndof)
        dim = self.vectors.shape[1]
        for c in range(dim):
            np.add.at(f, self.node_ids * dim + c, self.vectors[:, c])
        return f

    def node_magnitudes(self, n_nodes: int) -> np.ndarray:
        out = np.zeros(n_nodes)
        np.add.at(out, self.node_ids, np.linalg.norm(self.vectors, axis=1))
        return out


def _tangent_basis(n):
    a = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(n, a)
    e1 /= np.linalg.norm(e1)
    return e1, np.cross(n, e1)


def default_spread_radius(mesh: Mesh) -> float:
    return 1.5 * mesh.mean_edge_length


def spread_point_force(mesh: Mesh, node: int, magnitude: float, radius: float | None = None,
                       coverage_tol: float = 1e-6) -> ForceInstant:
    """Compressive normal force at a boundary node spread over a disc.

    Surface triangles reachable from the node's fan that come within
    ``radius`` of it are projected to the tangent plane and clipped against
    the disc. Node ``j`` receives ``p_j = -P A_j / (3 A_p) n_i`` where
    ``A_p`` is the clipped area and ``A_j = 3 * int phi_j dA`` over the
    clipped pieces of its triangles (``phi_j`` the linear hat function).
    For triangles lying wholly inside the disc ``A_j`` is the plain sum of
    incident triangle areas; the weights always sum to one and collapse
    onto node ``i`` as ``radius -> 0``. ``radius == 0`` is a point force.
    """
    from .mesh import point_triangle_distance

    if not mesh.is_boundary[node]:
        raise ValueError(f"node {node} is not on the boundary")
    if radius is None:
        radius = default_spread_radius(mesh)
    if radius < 0:
        raise ValueError("spread radius must be non-negative")
    n_i = mesh.vertex_normals[node]
    P = float(magnitude)
    point = ForceInstant(int(node), P, float(radius), np.array([node]), -P * n_i[None, :])
    if radius == 0:
        return point

    tri = mesh.triangles
    x = mesh.nodes
    p0 = x[node]
    tadj = mesh.triangle_adjacency
    seeds = mesh.node_triangles[node].indices
    seen = set(int(t) for t in seeds)
    frontier = sorted(seen)
    chosen = []
    while frontier:
        t = frontier.pop()
        a, b, c = x[tri[t]]
        d = point_triangle_distance(p0[None], a[None], b[None], c[None])[0]
        if d >= radius or np.cross(b - a, c - a) @ n_i <= 0:
            continue
        chosen.append(t)
        for nb in tadj.indices[tadj.indptr[t]:tadj.indptr[t + 1]]:
            if int(nb) not in seen:
                seen.add(int(nb))
                frontier.append(int(nb))
    if not chosen:
        return point
    chosen = np.array(sorted(chosen), dtype=np.int64)
    e1, e2 = _tangent_basis(n_i)
    rel = x[tri[chosen]] - p0
    tri2d = np.stack([rel @ e1, rel @ e2], axis=-1)             # (t, 3, 2)
    mom = kernels.disc_triangle_moments(tri2d, radius)          # area, int x, int y
    A_p = float(mom[:, 0].sum())
    if A_p <= 0:
        return point
    nominal = math.pi * radius * radius
    if A_p < nominal * (1.0 - coverage_tol):
        warnings.warn(f"spread disc at node {node} is not fully covered "
                      f"({A_p / nominal:.1%} of its area); forces renormalized",
                      RuntimeWarning, stacklevel=2)
    # barycentric hat functions on the projected triangles: phi = G @ [1, x, y]
    ones = np.ones((len(chosen), 3, 1))
    G = np.linalg.inv(np.concatenate([ones, tri2d], axis=2))     # rows: coef of 1, x, y
    share = np.einsum("tkj,tk->tj", G, mom)                     # int phi_j dA
    w = np.zeros(mesh.n_nodes)
    np.add.at(w, tri[chosen].ravel(), share.ravel())
    w = np.where(w > 1e-15 * A_p, w, 0.0)
    ids = np.nonzero(w)[0]
    vecs = -P * (w[ids] / w[ids].sum())[:, None] * n_i[None, :]
    return ForceInstant(int(node), P, float(radius), ids, vecs)


def nodal_area_shares(instant: ForceInstant) -> np.ndarray:
    """``A_j / (3 A_p)`` weights of an instant, aligned with ``node_ids``."""
    return np.linalg.norm(instant.vectors, axis=1) / instant.magnitude


# --------------------------------------------------------------------------
# modal analysis


def lumped_mass(structure: Structure, rho) -> np.ndarray:
    """Diagonal of the lumped mass matrix; element mass split equally to nodes.

    Element masses are scaled by the same SIMP factor as the stiffness so
    near-void elements do not spawn spurious local modes.
    """
    c, _ = structure.element_factors(rho)
    mesh = structure.mesh
    nper = mesh.elements.shape[1]
    emass = structure.material.density * structure.geometry.volumes * c
    nodal = np.zeros(mesh.n_nodes)
    np.add.at(nodal, mesh.elements.ravel(), np.repeat(emass / nper, nper))
    return np.repeat(nodal, structure.dim)


def modal_analysis(structure: Structure, rho, count: int, shift: float | None = None,
                   maxiter: int | None = None):
    """Smallest-magnitude eigenpairs of ``lam M u = -K u`` on the free DOFs.

    Returns ``(lam, modes)`` with ``lam <= 0`` sorted by ``|lam|`` and
    ``modes`` of shape (ndof, count), zero on fixed DOFs.
    """
    K = structure.assemble(rho) if len(structure.fixed) else structure.full_stiffness(rho).tocsc()
    mdiag = lumped_mass(structure, rho)[structure.free]
    M = sp.diags(mdiag)
    if count >= K.shape[0]:
        raise ValueError("count must be smaller than the number of free DOFs")
    if shift is None:
        shift = 1e-6 * float(K.diagonal().mean() / mdiag.mean())
    try:
        # fixed start vector: degenerate pairs (symmetric sections) come back identically
        v0 = np.random.default_rng(0).random(K.shape[0])
        w, v = spla.eigsh(K, k=count, M=M, sigma=-shift, which="LM", maxiter=maxiter, v0=v0)
    except spla.ArpackNoConvergence as exc:
        raise SolverError(f"eigen-solver did not converge: {len(exc.eigenvalues)} of "
                          f"{count} pairs after maxiter={maxiter}") from exc
    lam = -w
    order = np.argsort(np.abs(lam))
    modes = np.zeros((structure.ndof, count))
    modes[structure.free] = v[:, order]
    return lam[order], modes
