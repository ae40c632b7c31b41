"""Eigen-image decomposition of topology corpora and load-to-weight mappings.

PCA is computed through the small ``M x M`` Gram matrix of centred images.
Three regressors map encoded load vectors to PCA weights: linear and
quadratic least squares (pseudo-inverse, bias column included) and a
single-hidden-layer tanh network trained full batch with L-BFGS.
"""
from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field
from itertools import combinations_with_replacement
from pathlib import Path

import numpy as np
from scipy.optimize import minimize

log = logging.getLogger(__name__)


class LearnError(ValueError):
    pass


class RankDeficientWarning(UserWarning):
    pass


# --------------------------------------------------------------------------
# PCA


@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray              # (l,)
    components: np.ndarray        # (l, M') orthonormal columns
    eigenvalues: np.ndarray       # (M',) descending, of the covariance P P^T / M
    n_samples: int

    @property
    def n_components(self) -> int:
        return self.components.shape[1]

    def truncated(self, k: int) -> "PcaModel":
        if not 0 <= k <= self.n_components:
            raise LearnError(f"cannot keep {k} of {self.n_components} components")
        return PcaModel(self.mean, self.components[:, :k], self.eigenvalues[:k], self.n_samples)


def pca_fit(images, n_components: int | None = None) -> PcaModel:
    """Eigen-images of ``M`` images (rows) via the ``P^T P`` Gram trick.

    Zero-variance directions are dropped, so a degenerate corpus can return
    fewer than ``n_components`` columns.
    """
    T = np.asarray(images, dtype=float)
    if T.ndim != 2 or T.shape[0] < 2:
        raise LearnError("PCA needs at least two images")
    M, l = T.shape
    k = M - 1 if n_components is None else int(n_components)
    if k > M - 1 or k < 0:
        raise LearnError(f"at most {M - 1} useful components for {M} images, asked {k}")
    mean = T.mean(axis=0)
    P = (T - mean).T                                   # (l, M)
    G = P.T @ P
    w, V = np.linalg.eigh(G)
    order = np.argsort(w)[::-1]
    w, V = w[order], V[:, order]
    scale = max(float(w[0]), 0.0)
    keep = w[:k] > max(scale, 1e-300) * 1e-12 * M
    w, V = w[:k][keep], V[:, :k][:, keep]
    C = P @ V / np.sqrt(w)
    # re-orthonormalize against round-off
    C, R = np.linalg.qr(C)
    C *= np.sign(np.diag(R))
    return PcaModel(mean, C, w / M, M)


def pca_project(model: PcaModel, image) -> np.ndarray:
    t = np.asarray(image, dtype=float)
    if t.shape[-1] != len(model.mean):
        raise LearnError(f"image length {t.shape[-1]} != model length {len(model.mean)}")
    return (t - model.mean) @ model.components


def pca_reconstruct(model: PcaModel, weights) -> np.ndarray:
    W = np.asarray(weights, dtype=float)
    if W.shape[-1] != model.n_components:
        raise LearnError(f"expected {model.n_components} weights, got {W.shape[-1]}")
    return model.mean + W @ model.components.T


def l1_distance(t1, t2) -> float:
    """Mean absolute pixel difference; 0 for identical images, 1 at most."""
    a, b = np.asarray(t1, dtype=float).ravel(), np.asarray(t2, dtype=float).ravel()
    if a.shape != b.shape:
        raise LearnError(f"image lengths differ: {a.size} vs {b.size}")
    return float(np.abs(a - b).sum() / a.size)


# --------------------------------------------------------------------------
# mappings


def quadratic_features(F) -> np.ndarray:
    """``[1, x_i, x_i x_j (i <= j)]``: ``(d^2 + 3d + 2) / 2`` columns."""
    F = np.atleast_2d(np.asarray(F, dtype=float))
    d = F.shape[1]
    cross = [F[:, i] * F[:, j] for i, j in combinations_with_replacement(range(d), 2)]
    return np.column_stack([np.ones(len(F)), F] + cross)


def linear_features(F) -> np.ndarray:
    F = np.atleast_2d(np.asarray(F, dtype=float))
    return np.column_stack([np.ones(len(F)), F])


@dataclass(frozen=True)
class MappingModel:
    kind: str                           # linear | quadratic | neural
    n_inputs: int
    n_outputs: int
    params: dict = field(default_factory=dict)
    info: dict = field(default_factory=dict)

    def predict(self, F) -> np.ndarray:
        F = np.asarray(F, dtype=float)
        single = F.ndim == 1
        F = np.atleast_2d(F)
        if F.shape[1] != self.n_inputs:
            raise LearnError(f"expected {self.n_inputs} inputs, got {F.shape[1]}")
        if self.kind == "linear":
            out = linear_features(F) @ self.params["beta"]
        elif self.kind == "quadratic":
            out = quadratic_features(F) @ self.params["beta"]
        else:
            p = self.params
            z = (F - p["x_mean"]) / p["x_scale"]
            h = np.tanh(z @ p["W1"] + p["b1"])
            out = (h @ p["W2"] + p["b2"]) * p["y_scale"] + p["y_mean"]
        return out[0] if single else out


def _lstsq_fit(X, W, kind, n_inputs):
    X = np.asarray(X, dtype=float)
    W = np.atleast_2d(np.asarray(W, dtype=float))
    if len(X) != len(W):
        raise LearnError("loads and weights have different sample counts")
    rank = np.linalg.matrix_rank(X)
    deficient = rank < X.shape[1]
    if deficient:
        warnings.warn(f"{kind} regressors are rank deficient ({rank} < {X.shape[1]}); "
                      "using the minimum-norm solution", RankDeficientWarning, stacklevel=3)
    beta = np.linalg.pinv(X) @ W
    resid = float(np.linalg.norm(X @ beta - W))
    return MappingModel(kind, n_inputs, W.shape[1], {"beta": beta},
                        {"rank": int(rank), "rank_deficient": bool(deficient), "residual": resid})


def fit_linear(F, W) -> MappingModel:
    F = np.atleast_2d(np.asarray(F, dtype=float))
    if len(F) < F.shape[1] + 1:
        raise LearnError(f"linear fit needs at least {F.shape[1] + 1} samples")
    return _lstsq_fit(linear_features(F), W, "linear", F.shape[1])


def fit_quadratic(F, W) -> MappingModel:
    F = np.atleast_2d(np.asarray(F, dtype=float))
    Q = quadratic_features(F)
    if len(F) < Q.shape[1]:
        raise LearnError(f"quadratic fit needs at least {Q.shape[1]} samples")
    return _lstsq_fit(Q, W, "quadratic", F.shape[1])


def _unpack(theta, d, h, o):
    i = 0
    W1 = theta[i:i + d * h].reshape(d, h); i += d * h
    b1 = theta[i:i + h]; i += h
    W2 = theta[i:i + h * o].reshape(h, o); i += h * o
    b2 = theta[i:i + o]
    return W1, b1, W2, b2


def fit_neural(F, W, hidden: int = 80, seed: int = 0, max_iter: int = 2000,
               tol: float = 1e-6, weight_decay: float = 1e-4) -> MappingModel:
    """Single-hidden-layer tanh network, linear output, mean-squared loss.

    Inputs and outputs are standardized; the small ``weight_decay`` penalty
    on the weights keeps the fit well posed when samples are scarce.
    Training stops once the relative loss change drops below ``tol`` or
    after ``max_iter`` L-BFGS iterations.
    """
    F = np.atleast_2d(np.asarray(F, dtype=float))
    Y = np.atleast_2d(np.asarray(W, dtype=float))
    if len(F) == 0:
        raise LearnError("empty training set")
    if hidden < 1:
        raise LearnError("hidden width must be at least 1")
    n, d = F.shape
    o = Y.shape[1]
    x_mean, x_scale = F.mean(0), F.std(0)
    x_scale = np.where(x_scale > 0, x_scale, 1.0)
    y_mean, y_scale = Y.mean(0), Y.std(0)
    y_scale = np.where(y_scale > 0, y_scale, 1.0)
    Z = (F - x_mean) / x_scale
    T = (Y - y_mean) / y_scale
    rng = np.random.default_rng(seed)
    theta0 = np.concatenate([
        rng.normal(0, 1 / np.sqrt(d), d * hidden), np.zeros(hidden),
        rng.normal(0, 1 / np.sqrt(hidden), hidden * o), np.zeros(o)])

    def loss(theta):
        W1, b1, W2, b2 = _unpack(theta, d, hidden, o)
        H = np.tanh(Z @ W1 + b1)
        E = H @ W2 + b2 - T
        L = 0.5 * np.sum(E * E) / n + 0.5 * weight_decay * (np.sum(W1 * W1) + np.sum(W2 * W2))
        gE = E / n
        gW2 = H.T @ gE + weight_decay * W2
        gb2 = gE.sum(0)
        gH = (gE @ W2.T) * (1 - H * H)
        gW1 = Z.T @ gH + weight_decay * W1
        gb1 = gH.sum(0)
        return L, np.concatenate([gW1.ravel(), gb1, gW2.ravel(), gb2])

    history = [loss(theta0)[0]]

    def callback(xk):
        history.append(loss(xk)[0])

    res = minimize(loss, theta0, jac=True, method="L-BFGS-B", callback=callback,
                   options={"maxiter": max_iter, "ftol": tol, "gtol": 1e-12, "maxcor": 20})
    if not np.isfinite(res.fun):
        raise LearnError(f"network training diverged (seed={seed}, hidden={hidden})")
    W1, b1, W2, b2 = _unpack(res.x, d, hidden, o)
    params = {"W1": W1, "b1": b1, "W2": W2, "b2": b2, "x_mean": x_mean, "x_scale": x_scale,
              "y_mean": y_mean, "y_scale": y_scale}
    info = {"seed": seed, "hidden": hidden, "activation": "tanh", "iterations": int(res.nit),
            "loss": float(res.fun), "loss_history": [float(v) for v in history],
            "tol": tol, "weight_decay": weight_decay, "message": str(res.message)}
    return MappingModel("neural", d, o, params, info)


# --------------------------------------------------------------------------
# estimation


def estimate_topology(mapping: MappingModel, pca: PcaModel, features, shape=None) -> np.ndarray:
    """Predicted image for encoded loads, clamped to ``[0, 1]``."""
    W = mapping.predict(features)
    if W.shape[-1] > pca.n_components:
        raise LearnError("mapping outputs more weights than the PCA model has components")
    img = np.clip(pca_reconstruct(pca.truncated(W.shape[-1]), W), 0.0, 1.0)
    return img.reshape(shape) if shape is not None else img


def warm_start(image, volfrac: float, tol: float = 1e-12) -> np.ndarray:
    """Scale ``image`` by a common factor (clamped to ``[0, 1]``) so its mean is ``volfrac``."""
    x = np.clip(np.asarray(image, dtype=float), 0.0, 1.0)
    if abs(x.mean() - volfrac) <= tol:
        return x
    if not np.any(x > 0):
        return np.full_like(x, volfrac)
    lo, hi = 0.0, 1.0
    while np.clip(hi * x, 0, 1).mean() < volfrac:
        hi *= 2.0
        if hi > 1e12:
            return np.full_like(x, volfrac)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if np.clip(mid * x, 0, 1).mean() < volfrac:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-16 * hi:
            break
    return np.clip(hi * x, 0.0, 1.0)


# --------------------------------------------------------------------------
# persistence


def _save_arrays(path, header: dict, arrays: dict) -> tuple[Path, Path]:
    path = Path(path)
    jpath, bpath = path.with_suffix(".json"), path.with_suffix(".bin")
    layout, offset, blobs = [], 0, []
    for name, arr in arrays.items():
        a = np.ascontiguousarray(np.asarray(arr, dtype="<f8"))
        layout.append({"name": name, "shape": list(a.shape), "offset": offset})
        offset += a.size
        blobs.append(a.ravel())
    header = dict(header, arrays=layout, dtype="float64-le", blob=bpath.name)
    bpath.write_bytes(np.concatenate(blobs).astype("<f8").tobytes() if blobs else b"")
    jpath.write_text(json.dumps(header, indent=2, sort_keys=True))
    return jpath, bpath


def _load_arrays(path):
    jpath = Path(path).with_suffix(".json")
    header = json.loads(jpath.read_text())
    flat = np.frombuffer((jpath.parent / header["blob"]).read_bytes(), dtype="<f8")
    arrays = {}
    for e in header["arrays"]:
        size = int(np.prod(e["shape"]))
        arrays[e["name"]] = flat[e["offset"]:e["offset"] + size].reshape(e["shape"]).copy()
    return header, arrays


def save_pca(model: PcaModel, path):
    return _save_arrays(path, {"type": "pca", "n_samples": model.n_samples,
                               "n_components": model.n_components, "length": len(model.mean)},
                        {"mean": model.mean, "eigenvalues": model.eigenvalues,
                         "components": model.components})


def load_pca(path) -> PcaModel:
    h, a = _load_arrays(path)
    if h.get("type") != "pca":
        raise LearnError(f"{path} is not a PCA model")
    return PcaModel(a["mean"], a["components"], a["eigenvalues"], h["n_samples"])


def save_mapping(model: MappingModel, path):
    info = {k: v for k, v in model.info.items() if k != "loss_history"}
    return _save_arrays(path, {"type": "mapping", "kind": model.kind, "n_inputs": model.n_inputs,
                               "n_outputs": model.n_outputs, "info": info}, model.params)


def load_mapping(path) -> MappingModel:
    h, a = _load_arrays(path)
    if h.get("type") != "mapping":
        raise LearnError(f"{path} is not a mapping model")
    return MappingModel(h["kind"], h["n_inputs"], h["n_outputs"], a, h.get("info", {}))
