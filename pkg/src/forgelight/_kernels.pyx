# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops. Mirrors ``_fallback.py`` one-to-one."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, atan2, ceil, sin, cos

cnp.import_array()


def tet_geometry(nodes, elements):
    cdef double[:, ::1] X = np.ascontiguousarray(nodes, dtype=np.float64)
    cdef long[:, ::1] T = np.ascontiguousarray(elements, dtype=np.int64)
    cdef Py_ssize_t m = T.shape[0], e, a
    grads_np = np.zeros((m, 4, 3))
    vols_np = np.empty(m)
    cdef double[:, :, ::1] G = grads_np
    cdef double[::1] V = vols_np
    cdef double j00, j01, j02, j10, j11, j12, j20, j21, j22, det, inv
    cdef double c00, c01, c02, c10, c11, c12, c20, c21, c22
    cdef long n0, n1, n2, n3
    for e in range(m):
        n0 = T[e, 0]; n1 = T[e, 1]; n2 = T[e, 2]; n3 = T[e, 3]
        # jacobian columns are the edges from node 0
        j00 = X[n1, 0] - X[n0, 0]; j01 = X[n2, 0] - X[n0, 0]; j02 = X[n3, 0] - X[n0, 0]
        j10 = X[n1, 1] - X[n0, 1]; j11 = X[n2, 1] - X[n0, 1]; j12 = X[n3, 1] - X[n0, 1]
        j20 = X[n1, 2] - X[n0, 2]; j21 = X[n2, 2] - X[n0, 2]; j22 = X[n3, 2] - X[n0, 2]
        c00 = j11 * j22 - j12 * j21
        c01 = j02 * j21 - j01 * j22
        c02 = j01 * j12 - j02 * j11
        c10 = j12 * j20 - j10 * j22
        c11 = j00 * j22 - j02 * j20
        c12 = j02 * j10 - j00 * j12
        c20 = j10 * j21 - j11 * j20
        c21 = j01 * j20 - j00 * j21
        c22 = j00 * j11 - j01 * j10
        det = j00 * c00 + j01 * c10 + j02 * c20
        V[e] = det / 6.0
        if det == 0.0:
            continue
        inv = 1.0 / det
        # rows of J^-1 are the gradients of lambda_1..3
        G[e, 1, 0] = c00 * inv; G[e, 1, 1] = c01 * inv; G[e, 1, 2] = c02 * inv
        G[e, 2, 0] = c10 * inv; G[e, 2, 1] = c11 * inv; G[e, 2, 2] = c12 * inv
        G[e, 3, 0] = c20 * inv; G[e, 3, 1] = c21 * inv; G[e, 3, 2] = c22 * inv
        for a in range(3):
            G[e, 0, a] = -(G[e, 1, a] + G[e, 2, a] + G[e, 3, a])
    return grads_np, vols_np


def von_mises(stress):
    s_np = np.asarray(stress, dtype=np.float64)
    shape = s_np.shape
    cdef Py_ssize_t ncomp = shape[s_np.ndim - 1]
    if ncomp != 6 and ncomp != 3:
        raise ValueError(f"expected 3 or 6 stress components, got {ncomp}")
    cdef double[:, ::1] S = np.ascontiguousarray(s_np.reshape(-1, ncomp))
    cdef Py_ssize_t n = S.shape[0], i
    out_np = np.empty(n)
    cdef double[::1] out = out_np
    cdef double sx, sy, sz, val
    if ncomp == 6:
        for i in range(n):
            sx = S[i, 0]; sy = S[i, 1]; sz = S[i, 2]
            val = 0.5 * ((sx - sy) * (sx - sy) + (sy - sz) * (sy - sz) + (sz - sx) * (sz - sx)) \
                + 3.0 * (S[i, 3] * S[i, 3] + S[i, 4] * S[i, 4] + S[i, 5] * S[i, 5])
            out[i] = sqrt(val) if val > 0.0 else 0.0
    else:
        for i in range(n):
            sx = S[i, 0]; sy = S[i, 1]
            val = sx * sx - sx * sy + sy * sy + 3.0 * S[i, 2] * S[i, 2]
            out[i] = sqrt(val) if val > 0.0 else 0.0
    return out_np.reshape(shape[:s_np.ndim - 1])


cdef void _segment_disc_moments(double ax, double ay, double bx, double by, double r,
                                double* out) noexcept nogil:
    cdef double dx = bx - ax, dy = by - ay
    cdef double qa = dx * dx + dy * dy
    out[0] = 0.0
    out[1] = 0.0
    out[2] = 0.0
    if qa == 0.0:
        return
    cdef double qb = ax * dx + ay * dy
    cdef double qc = ax * ax + ay * ay - r * r
    cdef double disc = qb * qb - qa * qc
    cdef double ts[4]
    cdef int nt = 1, k
    cdef double sq, t, t0, t1, tm, px, py, qx, qy, cx, cy, cross, a, th0, th1
    cdef double r2 = r * r
    ts[0] = 0.0
    if disc > 0.0:
        sq = sqrt(disc)
        t = (-qb - sq) / qa
        if 0.0 < t < 1.0:
            ts[nt] = t
            nt += 1
        t = (-qb + sq) / qa
        if 0.0 < t < 1.0:
            ts[nt] = t
            nt += 1
    ts[nt] = 1.0
    nt += 1
    for k in range(nt - 1):
        t0 = ts[k]
        t1 = ts[k + 1]
        px = ax + t0 * dx; py = ay + t0 * dy
        qx = ax + t1 * dx; qy = ay + t1 * dy
        tm = 0.5 * (t0 + t1)
        cx = ax + tm * dx; cy = ay + tm * dy
        cross = px * qy - py * qx
        if cx * cx + cy * cy <= r2:
            a = 0.5 * cross
            out[0] += a
            out[1] += a * (px + qx) / 3.0
            out[2] += a * (py + qy) / 3.0
        else:
            th0 = atan2(py, px)
            th1 = th0 + atan2(cross, px * qx + py * qy)
            out[0] += 0.5 * r2 * (th1 - th0)
            out[1] += r2 * r / 3.0 * (sin(th1) - sin(th0))
            out[2] += r2 * r / 3.0 * (cos(th0) - cos(th1))


def disc_triangle_moments(triangles, double radius):
    cdef double[:, :, ::1] T = np.ascontiguousarray(triangles, dtype=np.float64)
    cdef Py_ssize_t n = T.shape[0], k, i, j
    out_np = np.zeros((n, 3))
    cdef double[:, ::1] out = out_np
    cdef double acc[3]
    cdef double piece[3]
    cdef double sgn
    if radius <= 0.0:
        return out_np
    for k in range(n):
        acc[0] = 0.0; acc[1] = 0.0; acc[2] = 0.0
        for i in range(3):
            j = (i + 1) % 3
            _segment_disc_moments(T[k, i, 0], T[k, i, 1], T[k, j, 0], T[k, j, 1], radius, piece)
            acc[0] += piece[0]; acc[1] += piece[1]; acc[2] += piece[2]
        sgn = -1.0 if acc[0] < 0.0 else 1.0
        out[k, 0] = sgn * acc[0]
        out[k, 1] = sgn * acc[1]
        out[k, 2] = sgn * acc[2]
    return out_np


def filter_grid(field, double rmin):
    cdef double[:, ::1] F = np.ascontiguousarray(field, dtype=np.float64)
    cdef Py_ssize_t ny = F.shape[0], nx = F.shape[1], i, j, di, dj, ii, jj
    cdef Py_ssize_t reach = <Py_ssize_t>ceil(rmin) - 1
    out_np = np.empty((ny, nx))
    cdef double[:, ::1] out = out_np
    cdef double num, den, w
    for i in range(ny):
        for j in range(nx):
            num = 0.0
            den = 0.0
            for di in range(-reach, reach + 1):
                ii = i + di
                if ii < 0 or ii >= ny:
                    continue
                for dj in range(-reach, reach + 1):
                    jj = j + dj
                    if jj < 0 or jj >= nx:
                        continue
                    w = rmin - sqrt(<double>(di * di + dj * dj))
                    if w > 0.0:
                        num += w * F[ii, jj]
                        den += w
            out[i, j] = num / den
    return out_np


def element_energy(ue, ke):
    cdef double[:, ::1] U = np.ascontiguousarray(ue, dtype=np.float64)
    cdef double[:, ::1] K = np.ascontiguousarray(ke, dtype=np.float64)
    cdef Py_ssize_t m = U.shape[0], d = U.shape[1], e, i, j
    out_np = np.empty(m)
    cdef double[::1] out = out_np
    cdef double acc, row
    for e in range(m):
        acc = 0.0
        for i in range(d):
            row = 0.0
            for j in range(d):
                row += K[i, j] * U[e, j]
            acc += U[e, i] * row
        out[e] = acc
    return out_np
