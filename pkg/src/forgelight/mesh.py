"""Mesh container, loaders, generators and surface-region utilities.

A :class:`Mesh` is either a 3D tetrahedral volume mesh, a 2D bilinear quad
grid, or a bare triangle surface (no volume elements, e.g. loaded from OFF).
Meshes are treated as immutable once built; derived surface data is cached.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse import csgraph
from scipy.spatial import cKDTree

from . import kernels

log = logging.getLogger(__name__)

# outward faces of a positively oriented tet (0, 1, 2, 3)
_TET_FACES = np.array([[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]])


class MeshError(ValueError):
    """Malformed or inconsistent mesh input."""


class DegenerateElementError(MeshError):
    def __init__(self, index, volume):
        super().__init__(f"degenerate element {index} (volume {volume:.3e})")
        self.index = int(index)


class NoDesignSpaceError(ValueError):
    """Boundary shell swallows every element."""


@dataclass(eq=False)
class Mesh:
    """Nodes, elements and per-element volumes (areas in 2D).

    ``elements`` holds 4 node indices per element: tetrahedra in 3D, quads
    ordered counter-clockwise in 2D. A surface-only mesh has zero elements
    and carries its triangles in ``surface_triangles``.
    """

    nodes: np.ndarray
    elements: np.ndarray
    element_volumes: np.ndarray
    surface_triangles: np.ndarray | None = None
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def dim(self) -> int:
        return self.nodes.shape[1]

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    @property
    def is_volume(self) -> bool:
        return self.dim == 3 and self.n_elements > 0

    @cached_property
    def centroids(self) -> np.ndarray:
        return self.nodes[self.elements].mean(axis=1)

    @cached_property
    def bbox(self) -> tuple[np.ndarray, np.ndarray]:
        return self.nodes.min(axis=0), self.nodes.max(axis=0)

    @cached_property
    def triangles(self) -> np.ndarray:
        """Outward-oriented boundary triangles (3D only)."""
        if self.dim != 3:
            raise MeshError("surface triangles exist only for 3D meshes")
        if self.surface_triangles is not None:
            return self.surface_triangles
        faces = self.elements[:, _TET_FACES].reshape(-1, 3)
        key = np.sort(faces, axis=1)
        _, inv, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
        inv = inv.ravel()
        return faces[counts[inv] == 1]

    @cached_property
    def boundary_nodes(self) -> np.ndarray:
        if self.dim == 2:
            return self._boundary_nodes_2d()
        return np.unique(self.triangles)

    def _boundary_nodes_2d(self):
        edges = np.concatenate([self.elements[:, [i, (i + 1) % 4]] for i in range(4)])
        key = np.sort(edges, axis=1)
        _, inv, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
        return np.unique(edges[counts[inv.ravel()] == 1])

    @cached_property
    def is_boundary(self) -> np.ndarray:
        mask = np.zeros(self.n_nodes, dtype=bool)
        mask[self.boundary_nodes] = True
        return mask

    @cached_property
    def surface_edges(self) -> np.ndarray:
        tri = self.triangles
        edges = np.concatenate([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]])
        return np.unique(np.sort(edges, axis=1), axis=0)

    @cached_property
    def surface_adjacency(self) -> sp.csr_matrix:
        """Symmetric boundary-edge graph weighted by Euclidean edge length."""
        e = self.surface_edges
        w = np.linalg.norm(self.nodes[e[:, 0]] - self.nodes[e[:, 1]], axis=1)
        n = self.n_nodes
        a = sp.coo_matrix((np.r_[w, w], (np.r_[e[:, 0], e[:, 1]], np.r_[e[:, 1], e[:, 0]])),
                          shape=(n, n))
        return a.tocsr()

    @cached_property
    def triangle_areas(self) -> np.ndarray:
        x = self.nodes[self.triangles]
        return 0.5 * np.linalg.norm(np.cross(x[:, 1] - x[:, 0], x[:, 2] - x[:, 0]), axis=1)

    @cached_property
    def vertex_normals(self) -> np.ndarray:
        """Area-weighted outward unit normals; zero rows for interior nodes."""
        x = self.nodes[self.triangles]
        fn = np.cross(x[:, 1] - x[:, 0], x[:, 2] - x[:, 0])
        acc = np.zeros((self.n_nodes, 3))
        for k in range(3):
            np.add.at(acc, self.triangles[:, k], fn)
        norm = np.linalg.norm(acc, axis=1)
        ok = norm > 0
        acc[ok] /= norm[ok, None]
        return acc

    @cached_property
    def node_triangles(self) -> sp.csr_matrix:
        """Incidence (node x triangle) of the boundary surface."""
        tri = self.triangles
        rows = tri.ravel()
        cols = np.repeat(np.arange(len(tri)), 3)
        return sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(self.n_nodes, len(tri)))

    @cached_property
    def triangle_adjacency(self) -> sp.csr_matrix:
        """Boundary triangles adjacent iff they share an edge."""
        tri = self.triangles
        edges = np.sort(np.concatenate([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]]), axis=1)
        owner = np.tile(np.arange(len(tri)), 3)
        _, inv = np.unique(edges, axis=0, return_inverse=True)
        inc = sp.csr_matrix((np.ones(len(owner)), (owner, inv.ravel())))
        adj = (inc @ inc.T).tocsr()
        adj.setdiag(0)
        adj.eliminate_zeros()
        return adj

    @cached_property
    def mean_edge_length(self) -> float:
        e = self.surface_edges
        return float(np.linalg.norm(self.nodes[e[:, 0]] - self.nodes[e[:, 1]], axis=1).mean())

    @cached_property
    def element_adjacency(self) -> sp.csr_matrix:
        """Elements adjacent iff they share a face (an edge in 2D)."""
        m = self.n_elements
        if self.dim == 3:
            faces = np.sort(self.elements[:, _TET_FACES].reshape(-1, 3), axis=1)
            owner = np.repeat(np.arange(m), 4)
        else:
            faces = np.sort(np.concatenate(
                [self.elements[:, [i, (i + 1) % 4]] for i in range(4)]), axis=1)
            owner = np.tile(np.arange(m), 4)
        _, inv = np.unique(faces, axis=0, return_inverse=True)
        inv = inv.ravel()
        order = np.argsort(inv, kind="stable")
        s_inv, s_own = inv[order], owner[order]
        pair = np.nonzero(s_inv[1:] == s_inv[:-1])[0]
        a, b = s_own[pair], s_own[pair + 1]
        adj = sp.coo_matrix((np.ones(2 * len(a)), (np.r_[a, b], np.r_[b, a])), shape=(m, m))
        return adj.tocsr()

    @cached_property
    def node_elements(self) -> sp.csr_matrix:
        """Incidence (node x element)."""
        rows = self.elements.ravel()
        cols = np.repeat(np.arange(self.n_elements), self.elements.shape[1])
        return sp.csr_matrix((np.ones(len(rows)), (rows, cols)),
                             shape=(self.n_nodes, self.n_elements))


# --------------------------------------------------------------------------
# construction


def _tet_volumes(nodes, elements):
    _, vol = kernels.tet_geometry(nodes, elements)
    return vol


def _quad_areas(nodes, elements):
    x, y = nodes[elements, 0], nodes[elements, 1]
    return 0.5 * np.sum(x * np.roll(y, -1, axis=1) - np.roll(x, -1, axis=1) * y, axis=1)


def build_mesh(nodes, elements) -> Mesh:
    """Validate and canonicalize a volume mesh; volumes are computed here."""
    nodes = np.asarray(nodes, dtype=np.float64)
    elements = np.asarray(elements, dtype=np.int64).reshape(-1, 4).copy()
    if nodes.ndim != 2 or nodes.shape[1] not in (2, 3):
        raise MeshError(f"nodes must be (n, 2) or (n, 3), got {nodes.shape}")
    if elements.size and (elements.min() < 0 or elements.max() >= len(nodes)):
        bad = int(np.nonzero((elements < 0) | (elements >= len(nodes)))[0][0])
        raise MeshError(f"element {bad} references a node outside 0..{len(nodes) - 1}")
    lo, hi = nodes.min(axis=0), nodes.max(axis=0)
    scale = float(np.max(hi - lo)) ** nodes.shape[1]
    if nodes.shape[1] == 3:
        vol = _tet_volumes(nodes, elements)
        neg = vol < 0
        elements[neg, 1], elements[neg, 2] = elements[neg, 2].copy(), elements[neg, 1].copy()
        vol = np.abs(vol)
    else:
        vol = _quad_areas(nodes, elements)
        neg = vol < 0
        elements[neg] = elements[neg][:, ::-1]
        vol = np.abs(vol)
    tiny = vol < 1e-12 * scale
    if tiny.any():
        i = int(np.nonzero(tiny)[0][0])
        raise DegenerateElementError(i, vol[i])
    return Mesh(nodes=nodes, elements=elements, element_volumes=vol)


def surface_mesh(nodes, triangles) -> Mesh:
    nodes = np.asarray(nodes, dtype=np.float64)
    tri = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
    if tri.size and (tri.min() < 0 or tri.max() >= len(nodes)):
        bad = int(np.nonzero(((tri < 0) | (tri >= len(nodes))).any(axis=1))[0][0])
        raise MeshError(f"face {bad} references a node outside 0..{len(nodes) - 1}")
    return Mesh(nodes=nodes, elements=np.zeros((0, 4), dtype=np.int64),
                element_volumes=np.zeros(0), surface_triangles=tri)


def grid_mesh(nx: int, ny: int, cell_size: float = 1.0) -> Mesh:
    """Regular quad grid, node ``(ix, iy)`` -> ``(ny + 1) * ix + iy``.

    Row ``iy = 0`` is the top edge (image convention); element ``(ex, ey)``
    has index ``ex * ny + ey`` and nodes ordered bottom-left, bottom-right,
    top-right, top-left.
    """
    ix, iy = np.meshgrid(np.arange(nx + 1), np.arange(ny + 1), indexing="ij")
    nodes = np.column_stack([ix.ravel() * cell_size, (ny - iy.ravel()) * cell_size])
    ex, ey = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    ex, ey = ex.ravel(), ey.ravel()
    tl = (ny + 1) * ex + ey
    elements = np.column_stack([tl + 1, tl + ny + 2, tl + ny + 1, tl])
    area = np.full(len(elements), cell_size * cell_size)
    return Mesh(nodes=nodes.astype(float), elements=elements, element_volumes=area)


def _kuhn_tets():
    # six tets sharing the main diagonal 000-111 (conforming across cells)
    import itertools
    tets = []
    for perm in itertools.permutations(range(3)):
        corner = np.zeros(3, dtype=int)
        path = [corner.copy()]
        for ax in perm:
            corner[ax] = 1
            path.append(corner.copy())
        tets.append(path)
    return np.array(tets)  # (6, 4, 3) local corner offsets


def voxel_mesh(mask, cell_size=1.0, origin=(0.0, 0.0, 0.0)) -> Mesh:
    """Tetrahedral mesh of the active cells of a boolean (nx, ny, nz) array."""
    mask = np.asarray(mask, dtype=bool)
    nx, ny, nz = mask.shape
    cells = np.argwhere(mask)
    local = _kuhn_tets()
    corners = cells[:, None, None, :] + local[None]          # (c, 6, 4, 3)
    ids = (corners[..., 0] * (ny + 1) + corners[..., 1]) * (nz + 1) + corners[..., 2]
    ids = ids.reshape(-1, 4)
    used, elements = np.unique(ids, return_inverse=True)
    elements = elements.reshape(-1, 4)
    gx = used // ((ny + 1) * (nz + 1))
    gy = (used // (nz + 1)) % (ny + 1)
    gz = used % (nz + 1)
    nodes = np.column_stack([gx, gy, gz]).astype(float) * cell_size + np.asarray(origin)
    return build_mesh(nodes, elements)


def box_mesh(shape=(1, 1, 1), size=(1.0, 1.0, 1.0)) -> Mesh:
    """Box of ``shape`` cells split into six tets each."""
    shape = tuple(int(s) for s in shape)
    h = np.asarray(size, dtype=float) / np.asarray(shape)
    if not np.allclose(h, h[0]):
        m = voxel_mesh(np.ones(shape, dtype=bool), 1.0)
        nodes = m.nodes * h
        return build_mesh(nodes, m.elements)
    return voxel_mesh(np.ones(shape, dtype=bool), float(h[0]))


def icosphere(subdivisions: int = 3, radius: float = 1.0) -> Mesh:
    """Triangulated sphere (surface only) by repeated icosahedron subdivision."""
    t = (1.0 + 5 ** 0.5) / 2.0
    verts = [(-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0), (0, -1, t), (0, 1, t),
             (0, -1, -t), (0, 1, -t), (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1)]
    faces = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11), (1, 5, 9), (5, 11, 4),
             (11, 10, 2), (10, 7, 6), (7, 1, 8), (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8),
             (3, 8, 9), (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    verts = [np.array(v, dtype=float) / np.linalg.norm(v) for v in verts]
    for _ in range(subdivisions):
        mid = {}

        def midpoint(a, b):
            key = (min(a, b), max(a, b))
            if key not in mid:
                v = verts[a] + verts[b]
                verts.append(v / np.linalg.norm(v))
                mid[key] = len(verts) - 1
            return mid[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new
    return surface_mesh(np.array(verts) * radius, np.array(faces))


def two_neck_bar(length=48, width=6, height=8, necks=((14, 4, 4), (32, 4, 5)), cell_size=1.0):
    """Bar with bottom notches leaving two thin necks.

    ``necks`` lists ``(x_start, x_len, remaining_height)`` in cells; the
    top face stays flat so it can serve as a contact region.
    """
    mask = np.ones((length, width, height), dtype=bool)
    for x0, xl, keep in necks:
        mask[x0:x0 + xl, :, :height - keep] = False
    return voxel_mesh(mask, cell_size)


def l_bracket(arm=24, thickness=6, width=6, cell_size=1.0):
    """L-shaped bracket: a vertical leg and a horizontal arm of equal length."""
    mask = np.zeros((arm, width, arm), dtype=bool)
    mask[:thickness, :, :] = True           # vertical leg along z at x < thickness
    mask[:, :, arm - thickness:] = True     # horizontal arm along x at the top
    return voxel_mesh(mask, cell_size)


# --------------------------------------------------------------------------
# I/O


def _read_tokens(path):
    lines = []
    for raw in Path(path).read_text().splitlines():
        s = raw.split("#", 1)[0].strip()
        if s:
            lines.append(s.split())
    return lines


def load_off(path) -> Mesh:
    lines = _read_tokens(path)
    try:
        head = lines[0]
        if head[0].upper() == "OFF":
            counts = head[1:] if len(head) > 1 else lines[1]
            start = 1 if len(head) > 1 else 2
        else:
            raise MeshError("missing OFF header")
        nv, nf = int(counts[0]), int(counts[1])
        verts = np.array([[float(v) for v in ln[:3]] for ln in lines[start:start + nv]])
        tris = []
        for ln in lines[start + nv:start + nv + nf]:
            k = int(ln[0])
            idx = [int(v) for v in ln[1:1 + k]]
            if len(idx) != k:
                raise MeshError(f"face has {len(idx)} indices, header says {k}")
            tris += [(idx[0], idx[i], idx[i + 1]) for i in range(1, k - 1)]
    except (IndexError, ValueError) as exc:
        if isinstance(exc, MeshError):
            raise
        raise MeshError(f"cannot parse OFF file {path}: {exc}") from exc
    if len(verts) != nv:
        raise MeshError(f"OFF file declares {nv} vertices, found {len(verts)}")
    return surface_mesh(verts, np.array(tris, dtype=np.int64).reshape(-1, 3))


def load_tetgen(path) -> Mesh:
    """Read a TetGen ``.node``/``.ele`` pair; ``path`` may name either file or the stem."""
    p = Path(path)
    stem = p.with_suffix("") if p.suffix in (".node", ".ele") else p
    try:
        nl = _read_tokens(stem.with_suffix(".node"))
        nn, ndim = int(nl[0][0]), int(nl[0][1])
        ids = np.array([int(r[0]) for r in nl[1:1 + nn]])
        xyz = np.array([[float(v) for v in r[1:1 + ndim]] for r in nl[1:1 + nn]])
        el = _read_tokens(stem.with_suffix(".ele"))
        ne = int(el[0][0])
        tets = np.array([[int(v) for v in r[1:5]] for r in el[1:1 + ne]], dtype=np.int64)
    except (IndexError, ValueError, FileNotFoundError) as exc:
        raise MeshError(f"cannot parse TetGen mesh {stem}: {exc}") from exc
    if len(xyz) != nn or len(tets) != ne:
        raise MeshError("TetGen counts do not match header")
    base = int(ids.min()) if len(ids) else 0
    order = np.argsort(ids)
    xyz = xyz[order]
    return build_mesh(xyz, tets - base)


def load_grid(path) -> Mesh:
    try:
        spec = json.loads(Path(path).read_text())
        return grid_mesh(int(spec["nx"]), int(spec["ny"]), float(spec.get("cell_size", 1.0)))
    except (KeyError, ValueError, TypeError) as exc:
        raise MeshError(f"bad grid descriptor {path}: {exc}") from exc


_LOADERS = {"off": load_off, "off-surface": load_off, "tetgen": load_tetgen,
            "tetgen-volume": load_tetgen, "grid": load_grid, "quad-grid": load_grid}


def load_mesh(path, format: str | None = None) -> Mesh:
    """Load a mesh; ``format`` defaults from the file suffix."""
    p = Path(path)
    if format is None:
        format = {".off": "off", ".json": "grid", ".node": "tetgen", ".ele": "tetgen"}.get(
            p.suffix.lower(), "tetgen")
    try:
        loader = _LOADERS[format]
    except KeyError:
        raise MeshError(f"unknown mesh format {format!r}") from None
    return loader(p)


def write_tetgen(mesh: Mesh, stem) -> tuple[Path, Path]:
    stem = Path(stem)
    node_p, ele_p = stem.with_suffix(".node"), stem.with_suffix(".ele")
    with open(node_p, "w") as fh:
        fh.write(f"{mesh.n_nodes} 3 0 0\n")
        for i, (x, y, z) in enumerate(mesh.nodes):
            fh.write(f"{i} {float(x)!r} {float(y)!r} {float(z)!r}\n")
    with open(ele_p, "w") as fh:
        fh.write(f"{mesh.n_elements} 4 0\n")
        for i, t in enumerate(mesh.elements):
            fh.write(f"{i} {t[0]} {t[1]} {t[2]} {t[3]}\n")
    return node_p, ele_p


def write_off(mesh: Mesh, path) -> Path:
    path = Path(path)
    tri = mesh.triangles
    with open(path, "w") as fh:
        fh.write(f"OFF\n{mesh.n_nodes} {len(tri)} 0\n")
        for x, y, z in mesh.nodes:
            fh.write(f"{float(x)!r} {float(y)!r} {float(z)!r}\n")
        for a, b, c in tri:
            fh.write(f"3 {a} {b} {c}\n")
    return path


# --------------------------------------------------------------------------
# regions


@dataclass(frozen=True, eq=False)
class SurfaceRegion:
    node_ids: np.ndarray
    kind: str = "contact"

    def __len__(self):
        return len(self.node_ids)


def region(mesh: Mesh, node_ids, kind="contact") -> SurfaceRegion:
    ids = np.unique(np.asarray(node_ids, dtype=np.int64))
    if ids.size and (ids.min() < 0 or ids.max() >= mesh.n_nodes):
        raise MeshError("region references nodes outside the mesh")
    if not mesh.is_boundary[ids].all():
        raise MeshError(f"{kind} region contains non-boundary nodes")
    if kind == "fixed" and mesh.dim == 3:
        x = mesh.nodes[ids]
        if len(ids) < 3 or np.linalg.matrix_rank(x - x.mean(axis=0), tol=1e-9) < 2:
            raise MeshError("fixed region needs at least 3 non-collinear nodes")
    return SurfaceRegion(ids, kind)


def select_nodes(mesh: Mesh, selector, boundary_only=True) -> np.ndarray:
    """Resolve a JSON selector: a list of node ids, one ``{axis, min, max}``
    rule, or a list of rules (intersected)."""
    if isinstance(selector, dict):
        selector = [selector]
    selector = list(selector)
    if selector and all(isinstance(s, dict) for s in selector):
        keep = np.ones(mesh.n_nodes, dtype=bool)
        for rule in selector:
            unknown = set(rule) - {"axis", "min", "max"}
            if unknown:
                raise MeshError(f"unknown selector keys {sorted(unknown)}")
            ax = rule["axis"]
            ax = "xyz".index(ax) if isinstance(ax, str) else int(ax)
            c = mesh.nodes[:, ax]
            tol = 1e-9 * max(1.0, float(np.ptp(mesh.nodes)))
            keep &= (c >= rule.get("min", -np.inf) - tol) & (c <= rule.get("max", np.inf) + tol)
        if boundary_only:
            keep &= mesh.is_boundary
        return np.nonzero(keep)[0]
    ids = np.asarray(selector, dtype=np.int64)
    return np.unique(ids)


# --------------------------------------------------------------------------
# surface graph queries


def surface_distances(mesh: Mesh, source: int) -> np.ndarray:
    """Shortest-path distance along boundary edges from ``source``.

    Returns a length-``n_nodes`` array; unreachable and interior nodes are
    ``inf``.
    """
    if not mesh.is_boundary[source]:
        raise MeshError(f"node {source} is not on the boundary surface")
    return csgraph.dijkstra(mesh.surface_adjacency, directed=False, indices=int(source))


def pairwise_surface_distances(mesh: Mesh, node_ids) -> np.ndarray:
    ids = np.asarray(node_ids, dtype=np.int64)
    key = ("pairwise", ids.tobytes())
    hit = mesh._cache.get(key)
    if hit is not None:
        return hit
    d = csgraph.dijkstra(mesh.surface_adjacency, directed=False, indices=ids)[:, ids]
    if len(mesh._cache) > 64:
        mesh._cache.clear()
    mesh._cache[key] = d
    return d


def geodesic_kmeans(dist: np.ndarray, count: int, rng: np.random.Generator,
                    max_iter: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """k-medoids style clustering on a precomputed distance matrix.

    Farthest-first initialization from a random first centre; ties go to the
    lowest index. Returns ``(centres, labels)`` as positions into ``dist``.
    """
    n = len(dist)
    first = int(rng.integers(n))
    centres = [first]
    dmin = dist[first].copy()
    for _ in range(count - 1):
        dmin[centres] = -1.0
        nxt = int(np.argmax(np.where(np.isfinite(dmin), dmin, np.finfo(float).max)))
        centres.append(nxt)
        dmin = np.minimum(dmin, dist[nxt])
    centres = np.array(centres)
    labels = np.argmin(dist[:, centres], axis=1)
    for _ in range(max_iter):
        new = centres.copy()
        for k in range(count):
            members = np.nonzero(labels == k)[0]
            if len(members) == 0:
                continue
            cost = dist[np.ix_(members, members)].sum(axis=1)
            new[k] = members[int(np.argmin(cost))]
        if np.array_equal(new, centres):
            break
        centres = new
        labels = np.argmin(dist[:, centres], axis=1)
    return centres, labels


def sample_contact_nodes(mesh: Mesh, region: SurfaceRegion | np.ndarray, count: int,
                         seed: int = 0) -> np.ndarray:
    """Cluster centres of a geodesic k-means partition of ``region``."""
    ids = np.unique(np.asarray(getattr(region, "node_ids", region), dtype=np.int64))
    if len(ids) == 0:
        raise ValueError("cannot sample from an empty region")
    if count <= 0:
        raise ValueError("count must be positive")
    if count > len(ids):
        raise ValueError(f"count {count} exceeds region size {len(ids)}")
    if count == len(ids):
        return ids.copy()
    dist = pairwise_surface_distances(mesh, ids)
    centres, _ = geodesic_kmeans(dist, count, np.random.default_rng(seed))
    return np.sort(ids[centres])


def connected_components(node_ids, adjacency: sp.spmatrix) -> list[np.ndarray]:
    """Maximal edge-connected subsets of ``node_ids`` under ``adjacency``."""
    ids = np.unique(np.asarray(node_ids, dtype=np.int64))
    if len(ids) == 0:
        return []
    sub = adjacency.tocsr()[ids][:, ids]
    ncomp, labels = csgraph.connected_components(sub, directed=False)
    comps = [ids[labels == k] for k in range(ncomp)]
    comps.sort(key=lambda c: int(c[0]))
    return comps


# --------------------------------------------------------------------------
# boundary shell


@dataclass(frozen=True, eq=False)
class ShellMask:
    element_ids: np.ndarray
    thickness: float
    mask: np.ndarray

    def __len__(self):
        return len(self.element_ids)


def point_triangle_distance(p, a, b, c):
    """Exact Euclidean distance from points ``p`` to triangles ``(a, b, c)`` (row-wise)."""
    ab, ac, ap = b - a, c - a, p - a
    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)
    bp = p - b
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)
    cp = p - c
    d5 = np.einsum("ij,ij->i", ab, cp)
    d6 = np.einsum("ij,ij->i", ac, cp)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    with np.errstate(divide="ignore", invalid="ignore"):
        denom = va + vb + vc
        v_in = vb / denom
        w_in = vc / denom
        q = a + v_in[:, None] * ab + w_in[:, None] * ac
        v_ab = d1 / (d1 - d3)
        v_ac = d2 / (d2 - d6)
        w_bc = (d4 - d3) / ((d4 - d3) + (d5 - d6))
    cases = [
        ((d1 <= 0) & (d2 <= 0), a),
        ((d3 >= 0) & (d4 <= d3), b),
        ((vc <= 0) & (d1 >= 0) & (d3 <= 0), a + v_ab[:, None] * ab),
        ((d6 >= 0) & (d5 <= d6), c),
        ((vb <= 0) & (d2 >= 0) & (d6 <= 0), a + v_ac[:, None] * ac),
        ((va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0), b + w_bc[:, None] * (c - b)),
    ]
    done = np.zeros(len(p), dtype=bool)
    for cond, pt in cases:
        sel = cond & ~done
        q[sel] = pt[sel]
        done |= sel
    return np.linalg.norm(p - q, axis=1)


def centroid_surface_distance(mesh: Mesh, cutoff: float) -> np.ndarray:
    """Distance from element centroids to the boundary surface, exact below ``cutoff``.

    Entries beyond ``cutoff`` are reported as ``inf``.
    """
    tri = mesh.triangles
    x = mesh.nodes[tri]
    tc = x.mean(axis=1)
    reach = float(np.linalg.norm(x - tc[:, None], axis=2).max())
    tree = cKDTree(tc)
    cents = mesh.centroids
    hits = tree.query_ball_point(cents, cutoff + reach)
    lens = np.fromiter((len(h) for h in hits), dtype=np.int64, count=len(hits))
    out = np.full(mesh.n_elements, np.inf)
    if lens.sum() == 0:
        return out
    el = np.repeat(np.arange(mesh.n_elements), lens)
    tr = np.concatenate([np.asarray(h, dtype=np.int64) for h in hits if h])
    d = point_triangle_distance(cents[el], x[tr, 0], x[tr, 1], x[tr, 2])
    np.minimum.at(out, el, d)
    out[out > cutoff] = np.inf
    return out


def mark_shell(mesh: Mesh, thickness: float) -> ShellMask:
    """Solid boundary layer: boundary-touching elements plus every element
    whose centroid lies within ``thickness`` of the boundary surface."""
    if not mesh.is_volume:
        raise MeshError("shell marking needs a 3D volume mesh")
    if thickness <= 0:
        raise ValueError("shell thickness must be positive")
    lo, hi = mesh.bbox
    if thickness >= 0.5 * float(np.min(hi - lo)):
        raise NoDesignSpaceError(
            f"shell thickness {thickness} leaves no interior design space")
    touching = mesh.is_boundary[mesh.elements].any(axis=1)
    tol = 1e-9 * thickness
    near = centroid_surface_distance(mesh, thickness + tol) <= thickness + tol
    mask = touching | near
    if mask.all():
        raise NoDesignSpaceError(
            f"shell thickness {thickness} leaves no interior design space")
    return ShellMask(np.nonzero(mask)[0], float(thickness), mask)
