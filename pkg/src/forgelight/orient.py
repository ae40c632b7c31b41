"""Build-orientation optimization for anisotropic printed parts.

The design variable is the z-x-z Euler pose of the material frame. The
objective sums ``(1/FS)^kappa`` over every element and stress component,
so large ``kappa`` concentrates on the weakest spots. It is minimized with a
cubic RBF surrogate seeded by a maximin Latin hypercube and refined by a
randomized candidate search mixing local perturbations with global draws.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.spatial.distance import cdist, pdist
from scipy.stats import qmc

from .fea import (Material, Structure, factor_of_safety, rotated_elasticity, solve,
                  transform_stress, von_mises)
from .mesh import Mesh

log = logging.getLogger(__name__)

BOUNDS = np.array([[-math.pi, math.pi], [0.0, math.pi], [-math.pi, math.pi]])


class OrientError(ValueError):
    pass


def wrap_angle(a):
    """Map to ``[-pi, pi)``."""
    return (np.asarray(a, dtype=float) + math.pi) % (2 * math.pi) - math.pi


def normalize_angles(x) -> np.ndarray:
    """Canonical ``[alpha, beta, gamma]`` with ``beta`` in ``[0, pi]``.

    Uses ``(a, -b, g) == (a + pi, b, g + pi)`` for z-x-z angles.
    """
    a, b, g = (float(v) for v in x)
    b = float(wrap_angle(b))
    if b == -math.pi:
        b = math.pi
    if b < 0:
        a, b, g = a + math.pi, -b, g + math.pi
    return np.array([float(wrap_angle(a)), b, float(wrap_angle(g))])


def orientation_grid(step_deg: float = 30.0) -> np.ndarray:
    """Uniform Euler grid: ``alpha, gamma`` in ``[-180, 180)``, ``beta`` in ``[0, 180]``."""
    st = math.radians(step_deg)
    n_ag = int(round(2 * math.pi / st))
    n_b = int(round(math.pi / st)) + 1
    a = -math.pi + st * np.arange(n_ag)
    b = st * np.arange(n_b)
    A, B, G = np.meshgrid(a, b, a, indexing="ij")
    return np.column_stack([A.ravel(), B.ravel(), G.ravel()])


# --------------------------------------------------------------------------
# objective


@dataclass(frozen=True)
class OrientParams:
    kappa: float = 6.0
    mode: str = "faithful"           # "faithful" re-solves, "fast" reuses one stress field

    def __post_init__(self):
        if self.kappa < 1:
            raise OrientError("kappa must be at least 1")
        if self.mode not in ("faithful", "fast"):
            raise OrientError(f"unknown evaluation mode {self.mode!r}")


def safety_factors(stress_geo, material: Material, x) -> np.ndarray:
    """Per-element, per-component safety factors at orientation ``x``.

    Isotropic cards have no preferred axes, so every slot gets the von Mises
    factor ``sigma_y / vm`` and the objective is orientation invariant.
    """
    stress_geo = np.asarray(stress_geo, dtype=float)
    if material.is_isotropic:
        if material.sigma_y is None:
            raise OrientError("isotropic material needs sigma_y")
        vm = von_mises(stress_geo)
        with np.errstate(divide="ignore"):
            fs = np.where(vm > 0, material.sigma_y / np.where(vm > 0, vm, 1.0), np.inf)
        return np.repeat(fs[..., None], 6, axis=-1)
    return factor_of_safety(transform_stress(stress_geo, x), material)


def objective_from_fs(fs, kappa: float) -> float:
    fs = np.asarray(fs, dtype=float)
    if np.any(fs <= 0):
        raise OrientError("zero safety factor; check strength entries")
    return float(np.sum((1.0 / fs) ** kappa))


@dataclass(eq=False)
class OrientationProblem:
    mesh: Mesh
    fixed_dofs: np.ndarray
    loads: np.ndarray                # global force vector
    material: Material
    params: OrientParams = OrientParams()
    n_evals: int = field(default=0, init=False)

    def __post_init__(self):
        if self.mesh.dim != 3:
            raise OrientError("orientation optimization needs a 3D mesh")
        self.loads = np.asarray(self.loads, dtype=float)
        if self.loads.shape != (3 * self.mesh.n_nodes,):
            raise OrientError("load vector length must be 3 * n_nodes")
        if self.material.strength_vector() is None:
            raise OrientError("material has no strengths")

    @cached_property
    def base(self) -> Structure:
        return Structure(self.mesh, self.material, self.fixed_dofs)

    @cached_property
    def _solid(self) -> np.ndarray:
        return np.ones(self.mesh.n_elements)

    @cached_property
    def reference_stress(self) -> np.ndarray:
        """Geometry-frame stresses for the fast mode: one isotropic stand-in solve."""
        mat = self.material
        if mat.is_isotropic:
            st = self.base
        else:
            E = float(np.mean([mat.E_x, mat.E_y, mat.E_z]))
            nu = float(np.mean([mat.nu_xy, mat.nu_yz, mat.nu_xz]))
            st = Structure(self.mesh, Material(kind="isotropic", E=E, nu=nu), self.fixed_dofs)
        return self._stress(st)

    def _stress(self, st: Structure) -> np.ndarray:
        u = solve(st.factorize(self._solid), self.loads)
        return (st.stress_op @ u).reshape(self.mesh.n_elements, 6)

    def stress(self, x) -> np.ndarray:
        if self.params.mode == "fast" or self.material.is_isotropic:
            return self.reference_stress
        return self._stress(self.base.with_elasticity(rotated_elasticity(self.material, x)))

    def safety_factors(self, x) -> np.ndarray:
        return safety_factors(self.stress(x), self.material, x)

    def objective(self, x) -> float:
        x = normalize_angles(x)
        self.n_evals += 1
        return objective_from_fs(self.safety_factors(x), self.params.kappa)

    def min_fs(self, x) -> float:
        return float(self.safety_factors(normalize_angles(x)).min())


# --------------------------------------------------------------------------
# design of experiments


def lhs_maximin(count: int, bounds=BOUNDS, seed: int = 0, restarts: int = 20) -> np.ndarray:
    """Latin hypercube with the largest minimum pairwise distance of ``restarts`` draws."""
    if count < 2:
        raise ValueError("need at least 2 samples")
    bounds = np.asarray(bounds, dtype=float)
    rng = np.random.default_rng(seed)
    best, best_score = None, -1.0
    for _ in range(max(1, restarts)):
        u = qmc.LatinHypercube(d=len(bounds), seed=rng).random(count)
        score = float(pdist(u).min())
        if score > best_score:
            best, best_score = u, score
    return qmc.scale(best, bounds[:, 0], bounds[:, 1])


def maximin_score(X, bounds=BOUNDS) -> float:
    bounds = np.asarray(bounds, dtype=float)
    u = (np.asarray(X) - bounds[:, 0]) / (bounds[:, 1] - bounds[:, 0])
    return float(pdist(u).min())


# --------------------------------------------------------------------------
# cubic RBF surrogate


@dataclass
class SurrogateModel:
    X: np.ndarray
    y: np.ndarray
    lam: np.ndarray          # kernel weights
    c: np.ndarray            # linear tail [c0, c1..cd]
    loocv: float             # root-mean-square leave-one-out error
    loo_errors: np.ndarray

    def predict(self, P) -> np.ndarray:
        P = np.atleast_2d(np.asarray(P, dtype=float))
        r = cdist(P, self.X)
        return r ** 3 @ self.lam + self.c[0] + P @ self.c[1:]


def rbf_fit(X, y) -> SurrogateModel:
    """Interpolate with ``phi(r) = r^3`` plus a linear polynomial.

    Solves ``[[Phi, P], [P^T, 0]] [lam; c] = [y; 0]``; leave-one-out errors
    come from the inverse diagonal, ``e_i = a_i / (A^-1)_ii``.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    X, idx = np.unique(X, axis=0, return_index=True)
    y = y[idx]
    n, d = X.shape
    if n < d + 1:
        raise OrientError(f"need at least {d + 1} distinct points for the linear tail")
    P = np.hstack([np.ones((n, 1)), X])
    if np.linalg.matrix_rank(P) < d + 1:
        raise OrientError("sample points are degenerate (coplanar) for a linear tail")
    A = np.zeros((n + d + 1, n + d + 1))
    A[:n, :n] = cdist(X, X) ** 3
    A[:n, n:] = P
    A[n:, :n] = P.T
    rhs = np.r_[y, np.zeros(d + 1)]
    try:
        Ainv = np.linalg.inv(A)
    except np.linalg.LinAlgError as exc:
        raise OrientError(f"singular RBF system: {exc}") from exc
    sol = Ainv @ rhs
    diag = np.diag(Ainv)[:n]
    with np.errstate(divide="ignore", invalid="ignore"):
        loo = np.where(diag != 0, sol[:n] / diag, np.nan)
    return SurrogateModel(X, y, sol[:n], sol[n:], float(np.sqrt(np.nanmean(loo ** 2))), loo)


def rbf_predict(model: SurrogateModel, x) -> np.ndarray:
    return model.predict(x)


# --------------------------------------------------------------------------
# candidate search and main loop


def propose_candidates(model: SurrogateModel, best, count: int, rng, scale: float,
                       uniform_weight: float = 0.5, bounds=BOUNDS):
    """Gaussian perturbations of ``best`` (std ``scale`` times each range)
    mixed with uniform draws; returned sorted by surrogate value."""
    bounds = np.asarray(bounds, dtype=float)
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    width = bounds[:, 1] - bounds[:, 0]
    n_uni = int(round(uniform_weight * count))
    n_loc = count - n_uni
    local = np.asarray(best, dtype=float) + rng.normal(size=(n_loc, len(bounds))) * scale * width
    local = np.clip(local, bounds[:, 0], bounds[:, 1])
    uni = bounds[:, 0] + rng.random((n_uni, len(bounds))) * width
    cand = np.vstack([local, uni])
    pred = model.predict(cand)
    order = np.argsort(pred, kind="stable")
    return cand[order], pred[order]


@dataclass
class OrientationResult:
    x: np.ndarray
    f: float
    history: list
    n_evals: int
    status: str
    min_fs_initial: float
    min_fs_best: float
    loocv: float | None = None

    @property
    def degrees(self) -> np.ndarray:
        return np.degrees(self.x)


def optimize_orientation(problem: OrientationProblem, budget: int = 215, init_count: int = 20,
                         seed: int = 0, n_candidates: int = 500, stall: int = 50,
                         scale0: float = 0.3, scale_min: float = 0.005,
                         restarts: int = 20, cycle=(1.0, 0.3, 0.1, 0.03),
                         min_spacing: float = 0.3) -> OrientationResult:
    """Surrogate loop: LHS, fit RBF to ``log f``, evaluate the best
    candidate, repeat until ``budget`` evaluations or a stall.

    The local perturbation scale cycles through ``cycle`` (times ``scale0``)
    and shrinks linearly with the spent budget; candidates closer than
    ``min_spacing * scale`` to an evaluated point are skipped.
    """
    if init_count < 4 or budget < init_count:
        raise OrientError("need budget >= init count >= 4")
    rng = np.random.default_rng(seed)
    width = BOUNDS[:, 1] - BOUNDS[:, 0]
    X = [normalize_angles(x) for x in lhs_maximin(init_count, BOUNDS, seed, restarts)]
    history = []
    best_f = math.inf
    best_x = None

    def record(x, f, source):
        nonlocal best_f, best_x
        if f < best_f:
            best_f, best_x = f, np.array(x)
        history.append({"eval": len(history), "alpha": x[0], "beta": x[1], "gamma": x[2],
                        "f": f, "best_f": best_f, "source": source})

    for x in X:
        record(x, problem.objective(x), "lhs")
    status = "budget"
    last_gain = len(history)
    model = None
    while len(history) < budget:
        Xa = np.array([[h["alpha"], h["beta"], h["gamma"]] for h in history])
        fa = np.array([h["f"] for h in history])
        model = rbf_fit(Xa, np.log(np.maximum(fa, 1e-300)))
        frac = (len(history) - init_count) / max(1, budget - init_count)
        it = len(history) - init_count
        scale = max(scale_min, scale0 * cycle[it % len(cycle)] * (1.0 - frac))
        cand, _ = propose_candidates(model, best_x, n_candidates, rng, scale)
        u_c = cand / width
        u_x = Xa / width
        dmin = cdist(u_c, u_x).min(axis=1)
        ok = np.nonzero(dmin > max(1e-4, min_spacing * scale))[0]
        if len(ok) == 0:
            status = "no-new-candidate"
            break
        x_new = normalize_angles(cand[ok[0]])
        prev = best_f
        record(x_new, problem.objective(x_new), "surrogate")
        if best_f < prev * (1 - 1e-6):
            last_gain = len(history)
        if len(history) - last_gain >= stall:
            status = "stalled"
            break
    return OrientationResult(best_x, best_f, history, len(history), status,
                             problem.min_fs(np.zeros(3)), problem.min_fs(best_x),
                             None if model is None else model.loocv)


def grid_search(problem: OrientationProblem, step_deg: float = 30.0):
    """Brute-force baseline over :func:`orientation_grid`; returns ``(x, f, values)``."""
    G = orientation_grid(step_deg)
    vals = np.array([problem.objective(x) for x in G])
    i = int(np.argmin(vals))
    return G[i], float(vals[i]), vals
