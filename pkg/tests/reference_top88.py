"""Independent transcription of the classic 88-line SIMP code for MBB beams.

Used only as a test oracle: closed-form element matrix, explicit filter
matrix, direct sparse solves on the full system.
"""
import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve


def lk(nu=0.3):
    k = np.array([1 / 2 - nu / 6, 1 / 8 + nu / 8, -1 / 4 - nu / 12, -1 / 8 + 3 * nu / 8,
                  -1 / 4 + nu / 12, -1 / 8 - nu / 8, nu / 6, 1 / 8 - 3 * nu / 8])
    i = [[0, 1, 2, 3, 4, 5, 6, 7], [1, 0, 7, 6, 5, 4, 3, 2], [2, 7, 0, 5, 6, 3, 4, 1],
         [3, 6, 5, 0, 7, 2, 1, 4], [4, 5, 6, 7, 0, 1, 2, 3], [5, 4, 3, 2, 1, 0, 7, 6],
         [6, 3, 4, 1, 2, 7, 0, 5], [7, 2, 1, 4, 3, 6, 5, 0]]
    return 1 / (1 - nu ** 2) * k[np.array(i)]


def top88(nelx, nely, volfrac, penal, rmin, E0=1.0, Emin=1e-9, nu=0.3, maxiter=200):
    KE = lk(nu)
    ndof = 2 * (nelx + 1) * (nely + 1)
    edof = np.zeros((nelx * nely, 8), dtype=int)
    for elx in range(nelx):
        for ely in range(nely):
            el = ely + elx * nely
            n1 = (nely + 1) * elx + ely
            n2 = (nely + 1) * (elx + 1) + ely
            edof[el] = [2 * n1 + 2, 2 * n1 + 3, 2 * n2 + 2, 2 * n2 + 3,
                        2 * n2, 2 * n2 + 1, 2 * n1, 2 * n1 + 1]
    iK = np.kron(edof, np.ones((8, 1))).flatten()
    jK = np.kron(edof, np.ones((1, 8))).flatten()
    # filter
    rows, cols, vals = [], [], []
    r = int(np.ceil(rmin))
    for i in range(nelx):
        for j in range(nely):
            e1 = i * nely + j
            for k in range(max(i - (r - 1), 0), min(i + r, nelx)):
                for l in range(max(j - (r - 1), 0), min(j + r, nely)):
                    e2 = k * nely + l
                    w = max(0.0, rmin - np.hypot(i - k, j - l))
                    rows.append(e1)
                    cols.append(e2)
                    vals.append(w)
    H = sp.csr_matrix((vals, (rows, cols)), shape=(nelx * nely, nelx * nely))
    Hs = np.asarray(H.sum(axis=1)).ravel()
    dofs = np.arange(ndof)
    fixed = np.union1d(dofs[0:2 * (nely + 1):2], np.array([ndof - 1]))
    free = np.setdiff1d(dofs, fixed)
    f = np.zeros(ndof)
    f[1] = -1.0
    x = volfrac * np.ones(nelx * nely)
    loop, change = 0, 1.0
    while change > 0.01 and loop < maxiter:
        loop += 1
        sK = (KE.flatten()[None, :] * (Emin + x[:, None] ** penal * (E0 - Emin))).flatten()
        K = sp.coo_matrix((sK, (iK, jK)), shape=(ndof, ndof)).tocsc()
        u = np.zeros(ndof)
        u[free] = spsolve(K[free, :][:, free], f[free])
        ce = np.einsum("ij,jk,ik->i", u[edof], KE, u[edof])
        dc = -penal * x ** (penal - 1) * (E0 - Emin) * ce
        dc = np.asarray(H @ (x * dc)) / Hs / np.maximum(0.001, x)
        l1, l2, move = 0.0, 1e9, 0.2
        while (l2 - l1) / (l1 + l2) > 1e-3:
            lmid = 0.5 * (l2 + l1)
            xnew = np.maximum(0.0, np.maximum(x - move, np.minimum(
                1.0, np.minimum(x + move, x * np.sqrt(-dc / lmid)))))
            if xnew.sum() > volfrac * nelx * nely:
                l1 = lmid
            else:
                l2 = lmid
        change = np.abs(xnew - x).max()
        x = xnew
    sK = (KE.flatten()[None, :] * (Emin + x[:, None] ** penal * (E0 - Emin))).flatten()
    K = sp.coo_matrix((sK, (iK, jK)), shape=(ndof, ndof)).tocsc()
    u = np.zeros(ndof)
    u[free] = spsolve(K[free, :][:, free], f[free])
    c = float(f @ u)
    return x.reshape(nelx, nely).T, c, loop
