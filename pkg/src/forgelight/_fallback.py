"""Pure-Python/NumPy versions of the compiled kernels in ``_kernels.pyx``.

Both implementations share signatures and must agree to round-off; the
dispatcher in :mod:`forgelight.kernels` picks one at import time.
"""
import math

import numpy as np


def tet_geometry(nodes, elements):
    """Barycentric gradients and signed volumes of linear tetrahedra.

    Returns ``(grads, volumes)`` with ``grads`` of shape (m, 4, 3) and
    ``volumes`` of shape (m,). Degenerate elements get zero gradients.
    """
    nodes = np.ascontiguousarray(nodes, dtype=np.float64)
    elements = np.ascontiguousarray(elements, dtype=np.int64)
    x = nodes[elements]                       # (m, 4, 3)
    jac = np.transpose(x[:, 1:, :] - x[:, :1, :], (0, 2, 1))  # columns = edges
    det = np.linalg.det(jac)
    vol = det / 6.0
    grads = np.zeros((len(elements), 4, 3))
    ok = np.abs(det) > 0.0
    if ok.any():
        inv = np.linalg.inv(jac[ok])          # rows are grad(lambda_1..3)
        grads[ok, 1:, :] = inv
        grads[ok, 0, :] = -inv.sum(axis=1)
    return grads, vol


def von_mises(stress):
    """Von Mises scalar for Voigt stress rows.

    Accepts (m, 6) in the order xx, yy, zz, yz, xz, xy or (m, 3) plane
    stress in the order xx, yy, xy.
    """
    s = np.asarray(stress, dtype=np.float64)
    if s.shape[-1] == 6:
        sx, sy, sz, tyz, txz, txy = (s[..., i] for i in range(6))
        val = 0.5 * ((sx - sy) ** 2 + (sy - sz) ** 2 + (sz - sx) ** 2) \
            + 3.0 * (tyz * tyz + txz * txz + txy * txy)
    elif s.shape[-1] == 3:
        sx, sy, txy = s[..., 0], s[..., 1], s[..., 2]
        val = sx * sx - sx * sy + sy * sy + 3.0 * txy * txy
    else:
        raise ValueError(f"expected 3 or 6 stress components, got {s.shape[-1]}")
    return np.sqrt(np.maximum(val, 0.0))


def _segment_disc_moments(ax, ay, bx, by, r):
    # signed area and first moments of disc(0, r) intersected with triangle (0, a, b)
    dx, dy = bx - ax, by - ay
    qa = dx * dx + dy * dy
    if qa == 0.0:
        return 0.0, 0.0, 0.0
    qb = ax * dx + ay * dy
    qc = ax * ax + ay * ay - r * r
    disc = qb * qb - qa * qc
    ts = [0.0]
    if disc > 0.0:
        sq = math.sqrt(disc)
        for t in ((-qb - sq) / qa, (-qb + sq) / qa):
            if 0.0 < t < 1.0:
                ts.append(t)
    ts.append(1.0)
    area = mx = my = 0.0
    r2 = r * r
    for t0, t1 in zip(ts[:-1], ts[1:]):
        px, py = ax + t0 * dx, ay + t0 * dy
        qx, qy = ax + t1 * dx, ay + t1 * dy
        tm = 0.5 * (t0 + t1)
        cx, cy = ax + tm * dx, ay + tm * dy
        cross = px * qy - py * qx
        if cx * cx + cy * cy <= r2:
            a = 0.5 * cross
            area += a
            mx += a * (px + qx) / 3.0
            my += a * (py + qy) / 3.0
        else:
            th0 = math.atan2(py, px)
            th1 = th0 + math.atan2(cross, px * qx + py * qy)
            area += 0.5 * r2 * (th1 - th0)
            mx += r2 * r / 3.0 * (math.sin(th1) - math.sin(th0))
            my += r2 * r / 3.0 * (math.cos(th0) - math.cos(th1))
    return area, mx, my


def disc_triangle_moments(triangles, radius):
    """Area and first moments of 2D triangles clipped to the disc of ``radius`` at the origin.

    Returns an (n, 3) array ``[area, int x dA, int y dA]``; orientation of
    the input triangles does not matter.
    """
    tris = np.asarray(triangles, dtype=np.float64)
    out = np.zeros((len(tris), 3))
    r = float(radius)
    if r <= 0.0:
        return out
    for k, t in enumerate(tris):
        a = mx = my = 0.0
        for i in range(3):
            j = (i + 1) % 3
            da, dx, dy = _segment_disc_moments(t[i, 0], t[i, 1], t[j, 0], t[j, 1], r)
            a += da
            mx += dx
            my += dy
        sgn = -1.0 if a < 0 else 1.0
        out[k] = (sgn * a, sgn * mx, sgn * my)
    return out


def filter_grid(field, rmin):
    """Cone-weighted neighbourhood average on a regular grid.

    ``out[i, j] = sum_k w_ik field[k] / sum_k w_ik`` with
    ``w = max(0, rmin - dist)`` over in-domain neighbours, the weighting of
    the classic mesh-independency filter.
    """
    f = np.asarray(field, dtype=np.float64)
    ny, nx = f.shape
    reach = int(math.ceil(rmin)) - 1
    num = np.zeros_like(f)
    den = np.zeros_like(f)
    for di in range(-reach, reach + 1):
        for dj in range(-reach, reach + 1):
            w = rmin - math.sqrt(di * di + dj * dj)
            if w <= 0.0:
                continue
            i0, i1 = max(0, -di), min(ny, ny - di)
            j0, j1 = max(0, -dj), min(nx, nx - dj)
            num[i0:i1, j0:j1] += w * f[i0 + di:i1 + di, j0 + dj:j1 + dj]
            den[i0:i1, j0:j1] += w
    return num / den


def element_energy(ue, ke):
    """Per-element quadratic form ``ue[e] @ ke @ ue[e]`` for one shared element matrix."""
    ue = np.asarray(ue, dtype=np.float64)
    return np.einsum("ei,ij,ej->e", ue, np.asarray(ke, dtype=np.float64), ue)
