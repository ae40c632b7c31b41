"""2D compliance-minimization topology optimization on a regular quad grid.

Modified SIMP interpolation ``E_e = E_min + rho_e^p (E - E_min)``, the
classic mesh-independency sensitivity filter and an optimality-criteria
update with bisection on the volume multiplier. Grid conventions follow
:func:`forgelight.mesh.grid_mesh`: node ``(x, y)`` has ``0 <= x <= nx`` and
``0 <= y <= ny`` with ``y = 0`` on the top edge, and images are ``(ny, nx)``
arrays with row 0 at the top.
"""
from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import kernels
from .fea import Material, SimpParams, Structure, node_dofs, recover_stress, solve  # noqa: F401
from .mesh import grid_mesh

log = logging.getLogger(__name__)

BC_TEMPLATES = ("mbb", "mbb_right", "cantilever", "cantilever_right", "simply_supported")
_MIRROR_BC = {"mbb": "mbb_right", "mbb_right": "mbb", "cantilever": "cantilever_right",
              "cantilever_right": "cantilever", "simply_supported": "simply_supported"}


class TopologyError(ValueError):
    """Invalid optimization setup."""


class BisectionError(RuntimeError):
    """Volume-multiplier bisection failed to reach the target volume."""


@dataclass(frozen=True)
class Load:
    x: int
    y: int
    fx: float
    fy: float


@dataclass(frozen=True)
class TopoConfig:
    nx: int
    ny: int
    volfrac: float = 0.5
    penal: float = 3.0
    rmin: float = 1.5
    max_iter: int = 200
    tol: float = 0.01
    bc: str = "mbb"
    loads: tuple = (Load(0, 0, 0.0, -1.0),)
    E: float = 1.0
    nu: float = 0.3
    E_min: float = 1e-9
    move: float = 0.2
    volume_tol: float = 1e-5
    filter: str = "sensitivity"

    def __post_init__(self):
        loads = tuple(l if isinstance(l, Load) else Load(**l) for l in self.loads)
        object.__setattr__(self, "loads", loads)
        if self.nx < 1 or self.ny < 1:
            raise TopologyError("grid must have at least one element per side")
        if not 0 < self.volfrac <= 1:
            raise TopologyError(f"volume fraction must lie in (0, 1], got {self.volfrac}")
        if self.rmin < 1:
            raise TopologyError("filter radius must be at least one cell")
        if self.bc not in BC_TEMPLATES:
            raise TopologyError(f"unknown boundary template {self.bc!r}; known {BC_TEMPLATES}")
        if self.filter != "sensitivity":
            raise TopologyError("only sensitivity filtering is implemented")
        if not 0 < self.move <= 1:
            raise TopologyError("move limit must lie in (0, 1]")
        for ld in loads:
            if not (0 <= ld.x <= self.nx and 0 <= ld.y <= self.ny) or \
                    int(ld.x) != ld.x or int(ld.y) != ld.y:
                raise TopologyError(f"load at ({ld.x}, {ld.y}) is not on a grid node")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["loads"] = [asdict(l) for l in self.loads]
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "TopoConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise TopologyError(f"unknown config fields {sorted(unknown)}")
        return cls(**data)


def mirror_config(config: TopoConfig) -> TopoConfig:
    """Reflect loads and supports about the vertical mid-line."""
    loads = tuple(Load(config.nx - l.x, l.y, -l.fx, l.fy) for l in config.loads)
    return replace(config, loads=loads, bc=_MIRROR_BC[config.bc])


def mirror_image(img: np.ndarray) -> np.ndarray:
    return np.asarray(img)[:, ::-1]


def fixed_dofs(config: TopoConfig) -> np.ndarray:
    nx, ny = config.nx, config.ny
    nid = lambda ix, iy: (ny + 1) * ix + iy
    left = np.array([nid(0, iy) for iy in range(ny + 1)])
    right = np.array([nid(nx, iy) for iy in range(ny + 1)])
    if config.bc == "mbb":
        return np.unique(np.r_[2 * left, 2 * nid(nx, ny) + 1])
    if config.bc == "mbb_right":
        return np.unique(np.r_[2 * right, 2 * nid(0, ny) + 1])
    if config.bc == "cantilever":
        return node_dofs(left, 2)
    if config.bc == "cantilever_right":
        return node_dofs(right, 2)
    bl, br = nid(0, ny), nid(nx, ny)
    return np.array(sorted([2 * bl, 2 * bl + 1, 2 * br + 1]))


def load_vector(config: TopoConfig) -> np.ndarray:
    f = np.zeros(2 * (config.nx + 1) * (config.ny + 1))
    for ld in config.loads:
        n = (config.ny + 1) * int(ld.x) + int(ld.y)
        f[2 * n] += ld.fx
        f[2 * n + 1] += ld.fy
    return f


class GridSystem:
    """Grid mesh, supports and load of one configuration, assembled lazily."""

    def __init__(self, config: TopoConfig):
        self.config = config
        self.mesh = grid_mesh(config.nx, config.ny)
        self.structure = Structure(self.mesh, Material(E=config.E, nu=config.nu), fixed_dofs(config),
                                   SimpParams(beta=config.penal, eps=config.E_min / config.E))
        self.f = load_vector(config)
        if not np.any(self.f[self.structure.free]):
            raise TopologyError("all loads act on fixed degrees of freedom")
        self.edofs = self.structure.geometry.edofs
        self.ke = self.structure.ke[0]

    def to_elements(self, img: np.ndarray) -> np.ndarray:
        """(ny, nx) image -> element vector indexed ``ex * ny + ey``."""
        return np.asarray(img).T.reshape(-1)

    def to_image(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x).reshape(self.config.nx, self.config.ny).T


def compliance_and_sensitivity(system: GridSystem, rho: np.ndarray):
    """Compliance ``f^T u`` and ``dc/drho_e = -p rho^(p-1) (E - E_min) u_e^T k0 u_e``."""
    st = system.structure
    fs = st.factorize(rho)
    u = solve(fs, system.f)
    ce = kernels.element_energy(u[system.edofs], system.ke)
    c_fac, dc_fac = st.element_factors(rho)
    c = float(np.dot(c_fac, ce))
    return c, -dc_fac * ce


def sensitivity_filter(dc_img: np.ndarray, x_img: np.ndarray, rmin: float) -> np.ndarray:
    """Mesh-independency filter ``H (x dc) / Hs / max(1e-3, x)`` on images."""
    dc_img = np.asarray(dc_img, dtype=float)
    if rmin < 1:
        return dc_img.copy()
    x_img = np.asarray(x_img, dtype=float)
    return kernels.filter_grid(x_img * dc_img, rmin) / np.maximum(1e-3, x_img)


def _volume(x) -> float:
    return math.fsum(x) / len(x)


def oc_update(x: np.ndarray, dc: np.ndarray, volfrac: float, move: float = 0.2,
              eta: float = 0.5, volume_tol: float = 1e-5, dv: np.ndarray | None = None):
    """Optimality-criteria step with bisection on the volume multiplier.

    Returns the new densities, clamped to ``[0, 1]`` and within ``move`` of
    ``x``, whose mean matches ``volfrac`` to ``volume_tol``.
    """
    x = np.asarray(x, dtype=float)
    dc = np.asarray(dc, dtype=float)
    if np.any(dc > 0):
        raise TopologyError("optimality criteria need non-positive sensitivities")
    dv = np.ones_like(x) if dv is None else np.asarray(dv, dtype=float)
    lo_b, hi_b = np.maximum(0.0, x - move), np.minimum(1.0, x + move)
    if _volume(hi_b) < volfrac - volume_tol or _volume(lo_b) > volfrac + volume_tol:
        raise BisectionError(
            f"target volume {volfrac} outside the move-limited range "
            f"[{_volume(lo_b):.6f}, {_volume(hi_b):.6f}]")
    ratio = -dc / dv
    l1, l2 = 0.0, 1e9
    xnew = x
    for _ in range(400):
        lmid = 0.5 * (l1 + l2)
        if lmid <= 0:
            break
        xnew = np.clip(x * (ratio / lmid) ** eta, lo_b, hi_b)
        vol = _volume(xnew)
        if abs(vol - volfrac) < volume_tol:
            return xnew
        if vol > volfrac:
            l1 = lmid
        else:
            l2 = lmid
        if l2 - l1 <= 1e-15 * max(l2, 1e-300):
            break
    raise BisectionError(f"bisection stalled at multiplier {0.5 * (l1 + l2):.3e} with mean "
                         f"density {_volume(xnew):.6f} (target {volfrac}, tol {volume_tol})")


@dataclass
class TopologyImage:
    densities: np.ndarray          # (ny, nx)
    config: TopoConfig
    compliance: float
    iterations: int
    status: str                    # "converged" | "cap-reached"
    history: list = field(default_factory=list)
    volume_history: list = field(default_factory=list)

    @property
    def vector(self) -> np.ndarray:
        return self.densities.reshape(-1)


def optimize_topology(config: TopoConfig, initial: np.ndarray | None = None,
                      system: GridSystem | None = None) -> TopologyImage:
    """Minimize compliance at fixed volume fraction.

    ``initial`` is an optional ``(ny, nx)`` starting field (a warm start);
    the default is the uniform field at the target volume fraction.
    """
    system = system or GridSystem(config)
    n = config.nx * config.ny
    if config.volfrac >= 1.0:
        x = np.ones(n)
        c, _ = compliance_and_sensitivity(system, x)
        return TopologyImage(system.to_image(x), config, c, 0, "converged", [c], [1.0])
    if initial is None:
        x = np.full(n, config.volfrac)
    else:
        initial = np.asarray(initial, dtype=float)
        if initial.shape != (config.ny, config.nx):
            raise TopologyError(f"initial field shape {initial.shape} != {(config.ny, config.nx)}")
        x = np.clip(system.to_elements(initial), 0.0, 1.0)
    history, vols = [], []
    best = (math.inf, x)
    status = "cap-reached"
    it = 0
    while it < config.max_iter:
        it += 1
        c, dc = compliance_and_sensitivity(system, x)
        history.append(c)
        vols.append(_volume(x))
        if c < best[0]:
            best = (c, x)
        dc_img = sensitivity_filter(system.to_image(dc), system.to_image(x), config.rmin)
        dcf = np.minimum(system.to_elements(dc_img), 0.0)
        xnew = oc_update(x, dcf, config.volfrac, config.move, 0.5, config.volume_tol)
        change = float(np.max(np.abs(xnew - x)))
        x = xnew
        log.debug("it %d c=%.6g vol=%.6f change=%.4f", it, c, _volume(x), change)
        if change < config.tol:
            status = "converged"
            break
    if status == "cap-reached":
        x = best[1]
    c, _ = compliance_and_sensitivity(system, x)
    return TopologyImage(system.to_image(x), config, c, it, status, history, vols)


# --------------------------------------------------------------------------
# load sampling and datasets

SAMPLER_TEMPLATES = ("top", "anywhere", "two-vertical")


@dataclass(frozen=True)
class SamplerSpec:
    """Random load configurations.

    ``top``: one force on a top-edge node, direction uniform on the circle.
    ``anywhere``: one force on any grid node, direction uniform.
    ``two-vertical``: two downward forces on distinct top-edge nodes.
    Magnitudes are uniform in ``[min_magnitude, max_magnitude]``.
    """

    template: str = "top"
    min_magnitude: float = 0.0
    max_magnitude: float = 1.0

    def __post_init__(self):
        if self.template not in SAMPLER_TEMPLATES:
            raise TopologyError(f"unknown sampler template {self.template!r}")
        if not 0 <= self.min_magnitude <= self.max_magnitude:
            raise TopologyError("sampler magnitudes must satisfy 0 <= min <= max")

    @property
    def n_forces(self) -> int:
        return 2 if self.template == "two-vertical" else 1

    def sample(self, base: TopoConfig, rng: np.random.Generator) -> tuple:
        nx, ny = base.nx, base.ny
        mags = rng.uniform(self.min_magnitude, self.max_magnitude, self.n_forces)
        if self.template == "two-vertical":
            xs = rng.choice(nx + 1, size=2, replace=False)
            xs.sort()
            return tuple(Load(int(x), 0, 0.0, -float(m)) for x, m in zip(xs, mags))
        x = int(rng.integers(0, nx + 1))
        y = 0 if self.template == "top" else int(rng.integers(0, ny + 1))
        th = rng.uniform(0.0, 2 * math.pi)
        return (Load(x, y, float(mags[0] * math.cos(th)), float(mags[0] * math.sin(th))),)

    def contains(self, base: TopoConfig, loads) -> bool:
        if len(loads) != self.n_forces:
            return False
        for ld in loads:
            mag = math.hypot(ld.fx, ld.fy)
            if not (0 <= ld.x <= base.nx and 0 <= ld.y <= base.ny):
                return False
            if self.template in ("top", "two-vertical") and ld.y != 0:
                return False
            if self.template == "two-vertical" and (ld.fx != 0 or ld.fy > 0):
                return False
            if not self.min_magnitude - 1e-12 <= mag <= self.max_magnitude + 1e-12:
                return False
        return True


def encode_loads(loads, nx: int, ny: int) -> np.ndarray:
    """Per-force ``(x / nx, y / ny, Fx, Fy)`` in template slot order."""
    return np.array([[l.x / nx, l.y / ny, l.fx, l.fy] for l in loads]).reshape(-1)


@dataclass
class Sample:
    index: int
    config: TopoConfig
    image: TopologyImage
    attempts: int

    @property
    def features(self) -> np.ndarray:
        return encode_loads(self.config.loads, self.config.nx, self.config.ny)


def _run_sample(args):
    base, sampler, seq, index = args
    rng = np.random.default_rng(seq)
    attempts = 0
    while True:
        attempts += 1
        cfg = replace(base, loads=sampler.sample(base, rng))
        try:
            img = optimize_topology(cfg)
        except (TopologyError, BisectionError) as exc:
            if attempts >= 50:
                raise
            log.warning("sample %d attempt %d failed (%s); resampling", index, attempts, exc)
            continue
        return Sample(index, cfg, img, attempts)


def generate_dataset(base: TopoConfig, count: int, seed: int, sampler: SamplerSpec,
                     workers: int = 1) -> list[Sample]:
    """``count`` optimized topologies for random loads drawn by ``sampler``.

    Each sample draws from its own child stream of ``seed``, so results do
    not depend on ``workers``.
    """
    if count < 0:
        raise TopologyError("count must be non-negative")
    if sampler.template == "two-vertical" and base.nx < 1:
        raise TopologyError("two-vertical template needs at least two top nodes")
    seqs = np.random.SeedSequence(seed).spawn(count)
    jobs = [(base, sampler, s, i) for i, s in enumerate(seqs)]
    if workers > 1 and count > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(_run_sample, jobs))
    return [_run_sample(j) for j in jobs]


def write_pgm(path, img: np.ndarray) -> None:
    """8-bit binary PGM, solid material dark."""
    img = np.clip(np.asarray(img, dtype=float), 0, 1)
    data = np.round(255 * (1 - img)).astype(np.uint8)
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode())
        fh.write(data.tobytes())


def write_dataset(samples: list[Sample], out_dir, sampler: SamplerSpec, seed: int) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for s in samples:
        d = out / f"sample_{s.index:05d}"
        d.mkdir(exist_ok=True)
        meta = {"config": s.config.to_dict(), "compliance": s.image.compliance,
                "iterations": s.image.iterations, "status": s.image.status,
                "attempts": s.attempts}
        (d / "config.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
        np.savetxt(d / "densities.csv", s.image.densities, delimiter=",", fmt="%.17g")
        write_pgm(d / "preview.pgm", s.image.densities)
        entries.append({"index": s.index, "dir": d.name})
    manifest = {"count": len(samples), "seed": seed, "sampler": asdict(sampler),
                "filter": "sensitivity", "samples": entries}
    path = out / "dataset.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def load_dataset(path):
    """Read a dataset directory; returns ``(features, images, configs, manifest)``."""
    root = Path(path)
    if root.is_file():
        root = root.parent
    manifest = json.loads((root / "dataset.json").read_text())
    feats, imgs, cfgs = [], [], []
    for e in manifest["samples"]:
        d = root / e["dir"]
        meta = json.loads((d / "config.json").read_text())
        cfg = TopoConfig.from_dict(meta["config"])
        img = np.loadtxt(d / "densities.csv", delimiter=",", ndmin=2)
        feats.append(encode_loads(cfg.loads, cfg.nx, cfg.ny))
        imgs.append(img.reshape(-1))
        cfgs.append(cfg)
    if not cfgs:
        return np.zeros((0, 0)), np.zeros((0, 0)), [], manifest
    return np.array(feats), np.array(imgs), cfgs, manifest
