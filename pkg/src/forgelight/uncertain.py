"""Lightweighting under force-location uncertainty.

A compressive force of fixed budget may act at any node of a contact
region. Because von Mises stress is convex in the load, the worst case over
the force simplex sits at a vertex: the whole budget at one node (a
*critical instant*). This module finds that instant cheaply (regressed
criticality map -> force regions -> hierarchical search restricted to weak
regions found from vibration modes) and minimizes mass subject to the
resulting critical stress, using Laplacian material modes with a logistic
density map and adjoint gradients.
"""
from __future__ import annotations

import logging
import math
import time
import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.special import expit

from . import kernels, learn
from .fea import (FeaSystem, Material, SimpParams, SolverError, Structure, modal_analysis,
                  node_dofs, simp_factor, solve, spread_point_force)
from .mesh import (Mesh, ShellMask, SurfaceRegion, connected_components, geodesic_kmeans,
                   pairwise_surface_distances, sample_contact_nodes)

log = logging.getLogger(__name__)


class LightweightError(RuntimeError):
    pass


class InfeasibleStartError(LightweightError):
    """The fully solid design already violates the stress limit."""


# --------------------------------------------------------------------------
# problem definition


@dataclass(frozen=True)
class LogisticParams:
    """``G(x) = 1 / (1 + exp(kappa (x - x0)))``; ``x0`` defaults to ``G(0) = 0.995``."""

    kappa: float = 5.0
    x0: float | None = None

    def __post_init__(self):
        if self.kappa <= 0:
            raise ValueError("logistic steepness must be positive")
        if self.x0 is None:
            object.__setattr__(self, "x0", math.log(199.0) / self.kappa)
        if self.G(0.0) < 0.99:
            raise ValueError(f"G(0) = {float(self.G(0.0)):.4f} < 0.99; shell would not be solid")

    def G(self, x):
        return expit(-self.kappa * (np.asarray(x, dtype=float) - self.x0))

    def dG(self, x):
        g = self.G(x)
        return -self.kappa * g * (1.0 - g)


@dataclass(eq=False)
class LightweightProblem:
    mesh: Mesh
    shell: ShellMask
    contact: np.ndarray                 # boundary node ids that may carry the force
    fixed_nodes: np.ndarray
    force_budget: float
    sigma_y: float
    material: Material
    simp: SimpParams = SimpParams()
    logistic: LogisticParams = LogisticParams()
    k: int = 15
    p_norm: float = 15.0
    top_fraction: float = 0.10
    sample_fraction: float = 0.05
    weak_modes: int = 15
    stressed_fraction: float = 0.025
    spread_radius: float | None = None
    max_iter: int = 100
    q: int | None = None
    ridge: float = 1e-6
    trust_radius: float = 0.5
    seed_count: int = 3
    fixed_dofs: np.ndarray | None = None   # overrides all-component fixing of fixed_nodes

    def __post_init__(self):
        self.contact = np.unique(np.asarray(getattr(self.contact, "node_ids", self.contact),
                                            dtype=np.int64))
        self.fixed_nodes = np.unique(np.asarray(getattr(self.fixed_nodes, "node_ids",
                                                        self.fixed_nodes), dtype=np.int64))
        if self.force_budget <= 0:
            raise ValueError("force budget must be positive")
        if self.sigma_y <= 0:
            raise ValueError("yield strength must be positive")
        if not self.mesh.is_boundary[self.contact].all():
            raise ValueError("contact region contains interior nodes")
        if self.fixed_dofs is not None:
            self.fixed_dofs = np.unique(np.asarray(self.fixed_dofs, dtype=np.int64))
            self.fixed_nodes = np.unique(self.fixed_dofs // 3)
        overlap = np.intersect1d(self.contact, self.fixed_nodes)
        if len(overlap):
            log.info("dropping %d fixed nodes from the contact region", len(overlap))
            self.contact = np.setdiff1d(self.contact, overlap)
        if len(self.contact) == 0:
            raise ValueError("contact region is empty")
        if not 0 < self.top_fraction <= 1 or not 0 < self.sample_fraction <= 1:
            raise ValueError("fractions must lie in (0, 1]")
        if self.k < 1:
            raise ValueError("need at least one material mode")

    @cached_property
    def structure(self) -> Structure:
        dofs = node_dofs(self.fixed_nodes, 3) if self.fixed_dofs is None else self.fixed_dofs
        return Structure(self.mesh, self.material, dofs, self.simp)

    @cached_property
    def instants(self) -> list:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", RuntimeWarning)
            out = [spread_point_force(self.mesh, int(i), self.force_budget, self.spread_radius)
                   for i in self.contact]
        partial = [w for w in caught if "not fully covered" in str(w.message)]
        if partial:
            log.info("%d of %d spread discs extend past the contact surface and were "
                     "renormalized", len(partial), len(out))
        for w in caught:
            if w not in partial:
                warnings.warn_explicit(w.message, w.category, w.filename, w.lineno)
        return out

    @cached_property
    def load_matrix(self) -> sp.csc_matrix:
        """Nodal force vectors of every contact instant, one column each."""
        ndof = self.structure.ndof
        rows, cols, vals = [], [], []
        for c, inst in enumerate(self.instants):
            for comp in range(3):
                rows.append(inst.node_ids * 3 + comp)
                vals.append(inst.vectors[:, comp])
                cols.append(np.full(len(inst.node_ids), c))
        return sp.csc_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                             shape=(ndof, len(self.instants)))

    @cached_property
    def contact_index(self) -> dict:
        return {int(n): i for i, n in enumerate(self.contact)}

    def load_vector(self, node: int) -> np.ndarray:
        return self.load_matrix[:, self.contact_index[int(node)]].toarray().ravel()

    @cached_property
    def boundary_magnitudes(self) -> sp.csr_matrix:
        """Row ``i``: nodal force magnitudes on the boundary nodes for instant ``i``."""
        bnodes = self.mesh.boundary_nodes
        pos = -np.ones(self.mesh.n_nodes, dtype=np.int64)
        pos[bnodes] = np.arange(len(bnodes))
        rows, cols, vals = [], [], []
        for r, inst in enumerate(self.instants):
            rows.append(np.full(len(inst.node_ids), r))
            cols.append(pos[inst.node_ids])
            vals.append(np.linalg.norm(inst.vectors, axis=1))
        return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                             shape=(len(self.instants), len(bnodes)))

    @property
    def volumes(self) -> np.ndarray:
        return self.structure.geometry.volumes

    @property
    def solid_mass(self) -> float:
        return float(self.volumes.sum())

    @property
    def shell_mass(self) -> float:
        return float(self.volumes[self.shell.mask].sum())


# --------------------------------------------------------------------------
# stress evaluation of instants


def element_von_mises(system: FeaSystem, U: np.ndarray) -> np.ndarray:
    """Von Mises per element for displacement columns ``U``; shape (k, m)."""
    st = system.structure
    c, _ = st.element_factors(system.rho)
    U = np.atleast_2d(np.asarray(U).T).T
    s = st.stress_op @ U                                   # (6m, k)
    m = st.n_elements
    s = s.reshape(m, 6, -1) * c[:, None, None]
    return kernels.von_mises(np.transpose(s, (2, 0, 1)))


class InstantEvaluator:
    """Solves and caches instants against one factorization.

    ``elements`` restricts the stress maximum (a weak region); ``None`` uses
    every element.
    """

    def __init__(self, problem: LightweightProblem, system: FeaSystem, elements=None,
                 batch: int = 64):
        self.problem = problem
        self.system = system
        self.elements = None if elements is None else np.asarray(elements, dtype=np.int64)
        self.batch = batch
        self.cache: dict[int, float] = {}
        self.n_solves = 0

    def vm_fields(self, nodes) -> np.ndarray:
        idx = [self.problem.contact_index[int(n)] for n in nodes]
        F = self.problem.load_matrix[:, idx].toarray()
        U = solve(self.system, F)
        self.n_solves += len(idx)
        return element_von_mises(self.system, U)

    def evaluate(self, nodes) -> np.ndarray:
        nodes = [int(n) for n in np.atleast_1d(nodes)]
        todo = [n for n in dict.fromkeys(nodes) if n not in self.cache]
        for s in range(0, len(todo), self.batch):
            chunk = todo[s:s + self.batch]
            vm = self.vm_fields(chunk)
            sub = vm if self.elements is None else vm[:, self.elements]
            for n, v in zip(chunk, sub.max(axis=1)):
                self.cache[n] = float(v)
        return np.array([self.cache[n] for n in nodes])


@dataclass
class BruteForceResult:
    node: int
    sigma: float
    per_node: np.ndarray          # max von Mises per contact node
    n_solves: int


def brute_force_critical(problem: LightweightProblem, system: FeaSystem,
                         elements=None) -> BruteForceResult:
    """Evaluate every contact instant; the reference the search must match."""
    ev = InstantEvaluator(problem, system, elements)
    vals = ev.evaluate(problem.contact)
    i = int(np.argmax(vals))
    return BruteForceResult(int(problem.contact[i]), float(vals[i]), vals, ev.n_solves)


# --------------------------------------------------------------------------
# criticality regression


def surface_laplacian_basis(mesh: Mesh, q: int) -> np.ndarray:
    """Eigenvectors 2..q+1 of the combinatorial graph Laplacian of the
    boundary vertex graph, shape (s, q), columns orthonormal.

    The constant null vector is skipped: every instant carries the same
    total magnitude, so its coefficient is identical for all of them and
    vanishes after mean-centering.
    """
    key = ("surface_laplacian", q)
    hit = mesh._cache.get(key)
    if hit is not None:
        return hit
    b = mesh.boundary_nodes
    A = (mesh.surface_adjacency[b][:, b] != 0).astype(float)
    deg = np.asarray(A.sum(axis=1)).ravel()
    L = (sp.diags(deg) - A).tocsc()
    s = L.shape[0]
    q = min(q, s - 2)
    if s <= 400:
        w, V = np.linalg.eigh(L.toarray())
        V = V[:, 1:q + 1]
    else:
        v0 = np.random.default_rng(0).random(s)
        w, V = spla.eigsh(L, k=q + 1, sigma=-1e-3, which="LM", v0=v0)
        V = V[:, np.argsort(w)[1:]]
    # deterministic signs
    piv = np.argmax(np.abs(V), axis=0)
    V = V * np.sign(V[piv, np.arange(V.shape[1])])
    mesh._cache[key] = V
    return V


def quad_size(q: int) -> int:
    return (q * q + 3 * q + 2) // 2


@dataclass
class CriticalityModel:
    psi: np.ndarray                  # (s, q) surface basis
    f_mean: np.ndarray               # (s,)
    stress_pca: learn.PcaModel       # over element von Mises vectors
    W: np.ndarray                    # (n_quad, n_pca)
    ridge: float
    q: int
    sample_nodes: np.ndarray
    sample_values: np.ndarray        # FEA criticality at the training nodes
    n_solves: int

    @property
    def n_samples(self) -> int:
        return len(self.sample_nodes)


def fit_criticality(problem: LightweightProblem, system: FeaSystem, sample_fraction=None,
                    seed: int = 0, q: int | None = None, ridge: float | None = None,
                    evaluator: InstantEvaluator | None = None) -> CriticalityModel:
    """Ridge-regularized quadratic map from Laplacian-projected force
    magnitudes to PCA weights of the element von Mises field."""
    frac = problem.sample_fraction if sample_fraction is None else sample_fraction
    if not 0 < frac <= 1:
        raise ValueError("sample fraction must lie in (0, 1]")
    n_contact = len(problem.contact)
    l = min(n_contact, max(3, int(math.ceil(frac * n_contact))))
    nodes = sample_contact_nodes(problem.mesh, problem.contact, l, seed)
    ev = evaluator or InstantEvaluator(problem, system)
    before = ev.n_solves
    T = ev.vm_fields(nodes)                                        # (l, m)
    q_req = q if q is not None else problem.q
    q_eff = min(30, l - 1) if q_req is None else int(q_req)
    q_eff = min(q_eff, l - 1)
    while q_eff > 0 and quad_size(q_eff) > l:
        q_eff -= 1
    if q_req is not None and q_eff < q_req:
        warnings.warn(f"q reduced from {q_req} to {q_eff} so {l} samples cover "
                      f"{quad_size(q_eff)} regressors", RuntimeWarning, stacklevel=2)
    psi = surface_laplacian_basis(problem.mesh, max(q_eff, 1))[:, :q_eff]
    rows = [problem.contact_index[int(n)] for n in nodes]
    Fp = problem.boundary_magnitudes[rows].toarray()
    f_mean = Fp.mean(axis=0)
    FL = (Fp - f_mean) @ psi
    pca = learn.pca_fit(T, min(l - 1, T.shape[0] - 1))
    TL = learn.pca_project(pca, T)
    Fh = learn.quadratic_features(FL)
    r_rel = problem.ridge if ridge is None else ridge
    G = Fh.T @ Fh
    r = r_rel * max(np.trace(G) / G.shape[0], 1e-300)
    W = np.linalg.solve(G + r * np.eye(G.shape[0]), Fh.T @ TL)
    return CriticalityModel(psi, f_mean, pca, W, r, q_eff, np.asarray(nodes),
                            T.max(axis=1), ev.n_solves - before)


def predict_stress(model: CriticalityModel, problem: LightweightProblem, nodes=None) -> np.ndarray:
    nodes = problem.contact if nodes is None else np.atleast_1d(nodes)
    rows = [problem.contact_index[int(n)] for n in nodes]
    Fp = problem.boundary_magnitudes[rows].toarray()
    FL = (Fp - model.f_mean) @ model.psi
    TL = learn.quadratic_features(FL) @ model.W
    return learn.pca_reconstruct(model.stress_pca, TL)


def criticality_map(model: CriticalityModel, problem: LightweightProblem) -> np.ndarray:
    """Predicted max von Mises for every contact node (aligned with ``problem.contact``)."""
    out = np.empty(len(problem.contact))
    for s in range(0, len(out), 256):
        out[s:s + 256] = predict_stress(model, problem, problem.contact[s:s + 256]).max(axis=1)
    return np.maximum(out, 0.0)


def force_regions(values, contact, mesh: Mesh, top_fraction: float = 0.10) -> list[SurfaceRegion]:
    """Connected islands of the highest-criticality contact nodes."""
    if not 0 < top_fraction <= 1:
        raise ValueError("top fraction must lie in (0, 1]")
    values = np.asarray(values, dtype=float)
    contact = np.asarray(contact, dtype=np.int64)
    count = max(1, int(math.ceil(top_fraction * len(contact) - 1e-9)))
    order = np.lexsort((contact, -values))
    top = contact[order[:count]]
    return [SurfaceRegion(c, "force") for c in connected_components(top, mesh.surface_adjacency)]


def weak_regions(problem: LightweightProblem, rho, n_modes: int | None = None,
                 stressed_fraction: float | None = None, modes=None) -> np.ndarray:
    """Elements around the most stressed nodes of the lowest vibration modes.

    For each mode, nodes are ranked by the largest von Mises stress of
    their incident elements; the top fraction of nodes is kept and all
    elements touching them join the region.
    """
    n_modes = problem.weak_modes if n_modes is None else n_modes
    frac = problem.stressed_fraction if stressed_fraction is None else stressed_fraction
    if n_modes < 1:
        raise ValueError("weak regions need at least one vibration mode")
    st = problem.structure
    mesh = problem.mesh
    if modes is None:
        _, modes = modal_analysis(st, rho, n_modes)
    c, _ = simp_factor(rho, st.params)
    s = (st.stress_op @ modes).reshape(st.n_elements, 6, -1) * c[:, None, None]
    vm = kernels.von_mises(np.transpose(s, (2, 0, 1)))     # (modes, m)
    count = max(1, int(math.ceil(frac * mesh.n_nodes - 1e-9)))
    chosen = np.zeros(mesh.n_nodes, dtype=bool)
    nper = mesh.elements.shape[1]
    for row in vm:
        nodal = np.zeros(mesh.n_nodes)
        np.maximum.at(nodal, mesh.elements.ravel(), np.repeat(row, nper))
        order = np.lexsort((np.arange(mesh.n_nodes), -nodal))
        chosen[order[:count]] = True
    touched = np.asarray(mesh.node_elements[np.nonzero(chosen)[0]].sum(axis=0)).ravel() > 0
    return np.nonzero(touched)[0]


@dataclass
class CriticalInstant:
    node: int
    sigma: float                   # max von Mises over the weak region at the instant
    n_solves: int
    evaluated: dict = field(default_factory=dict)


def hierarchical_search(problem: LightweightProblem, system: FeaSystem, islands,
                        weak=None, seed: int = 0, criticality=None,
                        evaluator: InstantEvaluator | None = None) -> CriticalInstant:
    """Greedy 4-way geodesic subdivision of each island toward the node with
    the largest weak-region stress.

    With ``criticality`` (aligned with ``problem.contact``) the
    ``problem.seed_count`` top-ranked nodes of each island are also solved,
    so a greedy descent that wanders off cannot lose the instants the map
    already points at.
    """
    ev = evaluator or InstantEvaluator(problem, system, weak)
    before = ev.n_solves
    rng = np.random.default_rng(seed)
    best_node, best_val = -1, -math.inf
    for isl in islands:
        current = np.asarray(getattr(isl, "node_ids", isl), dtype=np.int64)
        if len(current) == 0:
            continue
        if criticality is not None:
            vals = np.asarray(criticality)[[problem.contact_index[int(n)] for n in current]]
            ev.evaluate(current[np.lexsort((current, -vals))[:problem.seed_count]])
        while True:
            if len(current) <= 4:
                ev.evaluate(current)
                break
            dist = pairwise_surface_distances(problem.mesh, current)
            centres, labels = geodesic_kmeans(dist, 4, rng)
            vals = ev.evaluate(current[centres])
            k = int(np.argmax(vals))
            seg = current[labels == k]
            if len(seg) >= len(current):
                ev.evaluate(current)
                break
            current = seg
    for n, v in sorted(ev.cache.items()):
        if v > best_val:
            best_node, best_val = n, v
    if best_node < 0:
        raise LightweightError("no force region to search")
    return CriticalInstant(best_node, best_val, ev.n_solves - before, dict(ev.cache))


@dataclass
class CriticalReport:
    node: int
    sigma: float
    weak: np.ndarray
    islands: list
    criticality: np.ndarray
    model: CriticalityModel
    n_solves: int
    instant: CriticalInstant


def critical_instant_analysis(problem: LightweightProblem, system: FeaSystem, seed: int = 0,
                              weak=None) -> CriticalReport:
    """Criticality map, force regions, weak regions and hierarchical search."""
    rho = system.rho
    model = fit_criticality(problem, system, seed=seed)
    crit = criticality_map(model, problem)
    islands = force_regions(crit, problem.contact, problem.mesh, problem.top_fraction)
    if weak is None:
        weak = weak_regions(problem, rho)
    ev = InstantEvaluator(problem, system, weak)
    inst = hierarchical_search(problem, system, islands, weak, seed, crit, ev)
    return CriticalReport(inst.node, inst.sigma, weak, islands, crit, model,
                          model.n_solves + inst.n_solves, inst)


# --------------------------------------------------------------------------
# reduced material representation


@dataclass(frozen=True)
class ReducedBasis:
    gamma: np.ndarray              # (m, k)
    mu: np.ndarray                 # (k,)
    shell_zeroed: bool

    @property
    def k(self) -> int:
        return self.gamma.shape[1]


def element_laplacian(mesh: Mesh) -> sp.csr_matrix:
    """Positive semi-definite graph Laplacian ``D - A`` of face adjacency."""
    A = mesh.element_adjacency
    deg = np.asarray(A.sum(axis=1)).ravel()
    return (sp.diags(deg) - A).tocsr()


def material_modes(mesh: Mesh, shell: ShellMask | None, k: int) -> ReducedBasis:
    """Smoothest ``k`` density modes: ``L gamma = mu V gamma``.

    Columns are ``V``-orthogonal and scaled to unit root-mean-square (so
    ``gamma_1 = 1``); shell rows are zeroed afterwards.
    """
    m = mesh.n_elements
    if not 1 <= k <= m:
        raise ValueError(f"mode count {k} must lie in [1, {m}]")
    L = element_laplacian(mesh).tocsc()
    vol = mesh.element_volumes
    if k >= m - 1 or m <= 600:
        from scipy.linalg import eigh
        w, G = eigh(L.toarray(), np.diag(vol))
        w, G = w[:k], G[:, :k]
    else:
        v0 = np.random.default_rng(0).random(m)
        shift = 1e-3 * float(np.mean(L.diagonal()) / vol.mean())
        try:
            w, G = spla.eigsh(L, k=k, M=sp.diags(vol).tocsc(), sigma=-shift, which="LM", v0=v0)
        except spla.ArpackNoConvergence as exc:
            raise SolverError(f"material modes did not converge: {exc}") from exc
        order = np.argsort(w)
        w, G = w[order], G[:, order]
    total = vol.sum()
    G = G / np.sqrt(np.einsum("ij,i,ij->j", G, vol, G) / total)
    piv = np.argmax(np.abs(G), axis=0)
    G = G * np.sign(G[piv, np.arange(k)])
    # the null-space vector is constant; remove round-off so gamma_1 is exact
    if abs(w[0]) < 1e-8 * max(1.0, abs(w[-1])):
        G[:, 0] = np.sign(G[:, 0].sum()) * 1.0
        w = w.copy()
        w[0] = 0.0
    G = np.ascontiguousarray(G)
    if shell is not None:
        G[shell.mask] = 0.0
    return ReducedBasis(G, np.maximum(w, 0.0), shell is not None)


def reduced_density(basis: ReducedBasis, alpha, logistic: LogisticParams = LogisticParams()):
    """``rho = G(Gamma alpha)``."""
    x = basis.gamma @ np.asarray(alpha, dtype=float)
    return logistic.G(x)


def pnorm_max(values, p: float = 15.0) -> float:
    """``(sum v^p)^(1/p)``, factoring out the maximum to avoid overflow."""
    v = np.asarray(values, dtype=float).ravel()
    if p < 1:
        raise ValueError("p must be at least 1")
    if v.size == 0:
        return 0.0
    if np.any(v < 0):
        raise ValueError("p-norm aggregation expects non-negative values")
    vmax = float(v.max())
    if vmax == 0:
        return 0.0
    return vmax * float(np.sum((v / vmax) ** p)) ** (1.0 / p)


# --------------------------------------------------------------------------
# adjoint sensitivities


@dataclass
class GradientWorkspace:
    H: float                       # p-norm of weak-region von Mises
    sigma_max: float               # true max over the weak region
    mass: float
    dH_drho: np.ndarray
    dH_dalpha: np.ndarray
    dM_dalpha: np.ndarray
    xi: np.ndarray
    u: np.ndarray
    adjoint_residual: float


def _dvm_dsigma(s: np.ndarray, vm: np.ndarray) -> np.ndarray:
    sx, sy, sz = s[:, 0], s[:, 1], s[:, 2]
    g = np.column_stack([2 * sx - sy - sz, 2 * sy - sx - sz, 2 * sz - sx - sy,
                         6 * s[:, 3], 6 * s[:, 4], 6 * s[:, 5]]) * 0.5
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(vm[:, None] > 0, g / vm[:, None], 0.0)


def stress_pnorm(problem: LightweightProblem, rho, node: int, weak, system=None) -> float:
    system = system or problem.structure.factorize(rho)
    u = solve(system, problem.load_vector(node))
    vm = element_von_mises(system, u)[0]
    return pnorm_max(vm[np.asarray(weak)], problem.p_norm)


def adjoint_gradient(problem: LightweightProblem, basis: ReducedBasis, alpha, node: int, weak,
                     system: FeaSystem | None = None) -> GradientWorkspace:
    """``dH/dalpha`` and ``dM/dalpha`` for the instant at ``node``.

    ``H`` is the p-norm of element von Mises stresses over ``weak``. With
    ``sigma_e = c_e(rho) D B_e u`` the element derivative is
    ``-xi_e^T c'_e K_e u_e + (dH/dvm_e)(dvm_e/dsigma_e) . c'_e D B_e u_e``,
    where ``K xi = sum_e (dH/dsigma_e) c_e D B_e`` is one adjoint solve;
    the chain to ``alpha`` goes through ``G'(Gamma alpha) Gamma``.
    """
    st = problem.structure
    lg = problem.logistic
    alpha = np.asarray(alpha, dtype=float)
    x = basis.gamma @ alpha
    rho = lg.G(x)
    dG = lg.dG(x)
    if system is None:
        system = st.factorize(rho)
    elif not np.array_equal(system.rho, rho):
        raise ValueError("system was factorized for different densities")
    weak = np.asarray(weak, dtype=np.int64)
    if weak.size == 0:
        raise ValueError("weak region is empty")
    m = st.n_elements
    u = solve(system, problem.load_vector(node))
    c, dc = simp_factor(rho, st.params)
    s_solid = (st.stress_op @ u).reshape(m, 6)
    sigma = c[:, None] * s_solid
    vm = kernels.von_mises(sigma)
    vw = vm[weak]
    H = pnorm_max(vw, problem.p_norm)
    g = np.zeros((m, 6))
    if H > 0:
        dH_dvm = (vw / H) ** (problem.p_norm - 1.0)
        g[weak] = dH_dvm[:, None] * _dvm_dsigma(sigma[weak], vw)
    rhs = st.stress_op.T @ (c[:, None] * g).ravel()
    xi = solve(system, rhs)
    free = st.free
    res = np.linalg.norm(system.K @ xi[free] - rhs[free]) / max(np.linalg.norm(rhs[free]), 1e-300)
    if res > 1e-9:
        raise SolverError(f"adjoint residual {res:.2e} exceeds 1e-9")
    ed = st.geometry.edofs
    ue, xe = u[ed], xi[ed]
    term_k = -dc * np.einsum("ei,eij,ej->e", xe, st.ke, ue)
    term_s = dc * np.einsum("ei,ei->e", g, s_solid)
    dH_drho = term_k + term_s
    dH_dalpha = basis.gamma.T @ (dG * dH_drho)
    vol = problem.volumes
    dM_dalpha = basis.gamma.T @ (vol * dG)
    return GradientWorkspace(H, float(vw.max()), float(vol @ rho), dH_drho, dH_dalpha,
                             dM_dalpha, xi, u, float(res))


def mass_of(problem: LightweightProblem, basis: ReducedBasis, alpha) -> float:
    return float(problem.volumes @ reduced_density(basis, alpha, problem.logistic))


# --------------------------------------------------------------------------
# SQP lightweighting


def qp_step(gf, g, gg, B, radius):
    """Minimize ``gf.d + d.B.d / 2`` s.t. ``g + gg.d <= 0``, then cap ``|d|`` at ``radius``.

    Returns ``(d, multiplier)``.
    """
    Bi_gf = np.linalg.solve(B, gf)
    d = -Bi_gf
    lam = 0.0
    if g + gg @ d > 0:
        Bi_gg = np.linalg.solve(B, gg)
        den = float(gg @ Bi_gg)
        if den > 0:
            lam = float((g + gg @ d) / den)
            d = d - lam * Bi_gg
    n = np.linalg.norm(d)
    if n > radius:
        d = d * (radius / n)
    return d, lam


def damped_bfgs(B, s, y):
    """Powell-damped BFGS update, keeps ``B`` positive definite."""
    Bs = B @ s
    sBs = float(s @ Bs)
    if sBs <= 1e-300:
        return B
    sy = float(s @ y)
    theta = 1.0 if sy >= 0.2 * sBs else 0.8 * sBs / (sBs - sy)
    r = theta * y + (1 - theta) * Bs
    return B - np.outer(Bs, Bs) / sBs + np.outer(r, r) / float(s @ r)


@dataclass
class LightweightResult:
    alpha: np.ndarray
    rho: np.ndarray
    rho_binary: np.ndarray
    threshold: float | None
    status: str
    history: list
    verification: dict
    basis: ReducedBasis
    solid_mass: float
    solid_sigma: float

    @property
    def binary_mass(self) -> float:
        return self.verification.get("binary_mass", math.nan)

    @property
    def mass_reduction(self) -> float:
        return 1.0 - self.binary_mass / self.solid_mass


def binarize(problem: LightweightProblem, rho, threshold: float) -> np.ndarray:
    rb = (np.asarray(rho) >= threshold).astype(float)
    rb[problem.shell.mask] = 1.0
    return rb


def verify_design(problem: LightweightProblem, rho, thresholds=(0.5, 0.4, 0.3)) -> dict:
    """Binarize and confirm ``sigma_cr <= sigma_y`` by a full instant sweep,
    lowering the threshold (adding material) until the check passes."""
    tried = []
    for thr in thresholds:
        rb = binarize(problem, rho, thr)
        sys_b = problem.structure.factorize(rb)
        bf = brute_force_critical(problem, sys_b)
        mass = float(problem.volumes @ rb)
        tried.append({"threshold": thr, "sigma_cr": bf.sigma, "node": bf.node, "mass": mass,
                      "n_solves": bf.n_solves})
        if bf.sigma <= problem.sigma_y:
            return {"verified": True, "threshold": thr, "sigma_cr": bf.sigma, "node": bf.node,
                    "binary_mass": mass, "attempts": tried, "rho_binary": rb}
    return {"verified": False, "threshold": None, "sigma_cr": tried[-1]["sigma_cr"],
            "node": tried[-1]["node"], "binary_mass": tried[-1]["mass"], "attempts": tried,
            "rho_binary": rb}


def optimize_lightweight(problem: LightweightProblem, seed: int = 0, basis=None,
                         callback=None, verify: bool = True) -> LightweightResult:
    """Stress-constrained mass minimization over reduced material modes.

    One SQP update of ``alpha`` per outer iteration: critical instant
    analysis at the current design, adjoint gradients at that instant, a
    trust-region QP step and an l1-merit line search that re-evaluates the
    stress at the same instant. The stress constraint uses the p-norm over
    the weak region rescaled so it equals the true maximum at the current
    design. Designs found feasible by the next analysis and lighter than
    the incumbent are accepted.
    """
    t0 = time.perf_counter()
    st = problem.structure
    lg = problem.logistic
    basis = basis or material_modes(problem.mesh, problem.shell, problem.k)
    k = basis.k
    M0 = problem.solid_mass
    sy = problem.sigma_y

    alpha = np.zeros(k)
    sys0 = st.factorize(reduced_density(basis, alpha, lg))
    bf0 = brute_force_critical(problem, sys0)
    if bf0.sigma > sy:
        raise InfeasibleStartError(
            f"fully solid version fails: critical stress {bf0.sigma:.6g} at node {bf0.node} "
            f"exceeds yield strength {sy:.6g}")

    B = np.eye(k)
    radius = problem.trust_radius
    max_radius = 8.0 * problem.trust_radius
    mu = 1.0
    history = []
    best_alpha, best_mass = None, math.inf
    incumbents = []
    incumbent_trace = []
    status = "iteration-cap"
    prev = None
    system = sys0
    total_solves = bf0.n_solves

    for it in range(problem.max_iter):
        rho = reduced_density(basis, alpha, lg)
        if system is None or not np.array_equal(system.rho, rho):
            system = st.factorize(rho)
        rep = critical_instant_analysis(problem, system, seed=seed + it)
        grad = adjoint_gradient(problem, basis, alpha, rep.node, rep.weak, system)
        total_solves += rep.n_solves + 2
        sigma = rep.sigma
        scale = sigma / grad.H if grad.H > 0 else 1.0
        mass = grad.mass
        feasible = sigma <= sy * (1 + 1e-9)
        accepted = feasible and mass < best_mass
        if accepted:
            best_alpha, best_mass = alpha.copy(), mass
            incumbents.append(best_alpha)
        incumbent_trace.append(best_mass)
        row = {"iteration": it, "mass": mass, "mass_fraction": mass / M0, "sigma_cr": sigma,
               "H": grad.H, "critical_node": rep.node, "weak_size": int(len(rep.weak)),
               "islands": len(rep.islands), "fea_solves": rep.n_solves, "accepted": accepted,
               "incumbent_mass": best_mass, "trust_radius": radius}
        history.append(row)
        if callback:
            callback(row)
        log.info("it %d mass %.4f sigma %.4g (H %.4g) node %d solves %d %s", it, mass / M0,
                 sigma, grad.H, rep.node, rep.n_solves, "accepted" if accepted else "")
        if it >= 5 and incumbent_trace[-6] - incumbent_trace[-1] < 1e-3 * incumbent_trace[-6]:
            status = "converged"
            break

        # scaled problem: f = M / M0, c = scale * H / sigma_y - 1 <= 0
        gf = grad.dM_dalpha / M0
        c = scale * grad.H / sy - 1.0
        gc = scale * grad.dH_dalpha / sy
        if prev is not None:
            s_vec = alpha - prev[0]
            y_vec = (gf + prev[3] * gc) - (prev[1] + prev[3] * prev[2])
            B = damped_bfgs(B, s_vec, y_vec)
        d, lam = qp_step(gf, c, gc, B, radius)
        mu = max(mu, 1.5 * lam, 1.0)

        def merit(a, sys_=None):
            r = reduced_density(basis, a, lg)
            sys_ = sys_ or st.factorize(r)
            H = stress_pnorm(problem, r, rep.node, rep.weak, sys_)
            return float(problem.volumes @ r) / M0 + mu * max(0.0, scale * H / sy - 1.0), sys_

        phi0 = mass / M0 + mu * max(0.0, c)
        dphi = float(gf @ d) - mu * max(0.0, c) if c > 0 else float(gf @ d) + mu * max(0.0, c + gc @ d)
        t = 1.0
        step_ok = False
        for _retry in range(4):
            trial = alpha + t * d
            phi, sys_t = merit(trial)
            total_solves += 1
            if phi <= phi0 + 1e-4 * t * min(dphi, 0.0) and phi < phi0:
                step_ok = True
                break
            t *= 0.5
            radius = max(0.5 * radius, 1e-6)
        if not step_ok:
            status = "step-failure" if np.linalg.norm(d) > 1e-8 else "converged"
            log.info("line search failed after retries; stopping (%s)", status)
            break
        if t == 1.0 and np.linalg.norm(d) >= 0.99 * radius:
            radius = min(2.0 * radius, max_radius)
        prev = (alpha.copy(), gf, gc, lam)
        alpha = trial
        system = sys_t

    if best_alpha is None:
        best_alpha, best_mass = np.zeros(k), M0
        incumbents.append(best_alpha)
    rho = reduced_density(basis, best_alpha, lg)
    if not verify:
        rb = binarize(problem, rho, 0.5)
        verification = {"verified": None, "threshold": 0.5,
                        "binary_mass": float(problem.volumes @ rb)}
    else:
        # the pipeline may under-read a design the full sweep rejects; fall
        # back through earlier incumbents (the solid start always verifies)
        verification = None
        order = list(range(len(incumbents) - 1, -1, -1))
        order = order[:4] + ([0] if len(order) > 4 else [])
        for back, cand in enumerate(incumbents[i] for i in order):
            rho = reduced_density(basis, cand, lg)
            verification = verify_design(problem, rho)
            verification["backtracked"] = back
            if verification["verified"]:
                best_alpha = cand
                break
            log.info("incumbent failed full verification (sigma %.4g); backtracking",
                     verification["sigma_cr"])
        rb = verification.pop("rho_binary")
        if not verification["verified"]:
            status = "verification-failed"
    verification.pop("rho_binary", None)
    verification["wall_time"] = time.perf_counter() - t0
    verification["total_fea_solves"] = total_solves
    return LightweightResult(best_alpha, rho, rb, verification.get("threshold"), status, history,
                             verification, basis, M0, bf0.sigma)
