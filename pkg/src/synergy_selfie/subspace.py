"""PCA conditioning, regularised CCA and the per-image synergy target."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SingularCovarianceError

STD_FLOOR = 1e-8
SYNERGY_EPS = 1e-10


@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray
    components: np.ndarray  # (c, p), orthonormal columns
    explained_variance: np.ndarray

    @property
    def dims(self) -> tuple[int, int]:
        return self.components.shape


@dataclass(frozen=True)
class CcaModel:
    x_mean: np.ndarray
    y_mean: np.ndarray
    A: np.ndarray  # (c', k)
    B: np.ndarray  # (d', k)
    correlations: np.ndarray
    ridge: float

    @property
    def k(self) -> int:
        return self.A.shape[1]


@dataclass(frozen=True)
class SynergyStandardizer:
    mean: np.ndarray
    std: np.ndarray


def _fix_signs_by_largest(vectors: np.ndarray) -> np.ndarray:
    """Flip each column so its largest-magnitude entry is positive."""
    idx = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[idx, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def pca_fit(X: np.ndarray, p: int) -> PcaModel:
    """Top-``p`` principal axes of the rows of ``X``."""
    X = np.asarray(X, dtype=np.float64)
    n, c = X.shape
    if n < 2:
        raise ValueError("PCA needs at least two samples")
    if not 1 <= p <= min(n - 1, c):
        raise ValueError(f"PCA dimension {p} outside [1, {min(n - 1, c)}]")
    mean = X.mean(axis=0)
    Xc = X - mean
    if n < c:
        # eigenvectors of the Gram matrix map to covariance eigenvectors via Xc'
        evals, evecs = np.linalg.eigh(Xc @ Xc.T)
        order = np.argsort(evals)[::-1][:p]
        evals = np.clip(evals[order], 0.0, None)
        comps = Xc.T @ evecs[:, order]
        norms = np.linalg.norm(comps, axis=0)
        if np.any(norms <= 1e-12 * max(norms.max(), 1.0)):
            # rank-deficient directions: complete the basis by orthogonalisation
            comps = _complete_basis(comps, norms, c)
        else:
            comps = comps / norms
    else:
        evals, evecs = np.linalg.eigh(Xc.T @ Xc)
        order = np.argsort(evals)[::-1][:p]
        evals = np.clip(evals[order], 0.0, None)
        comps = evecs[:, order]
    comps = _fix_signs_by_largest(comps)
    return PcaModel(mean=mean, components=comps, explained_variance=evals / (n - 1))


def _complete_basis(comps, norms, c):
    good = norms > 1e-12 * max(norms.max(), 1.0)
    basis = comps[:, good] / norms[good]
    out = np.empty_like(comps)
    out[:, good] = basis
    cols = [basis[:, i] for i in range(basis.shape[1])]
    for j in np.flatnonzero(~good):
        for e in range(c):
            v = np.zeros(c)
            v[e] = 1.0
            for b in cols:
                v -= (b @ v) * b
            if np.linalg.norm(v) > 1e-6:
                v /= np.linalg.norm(v)
                cols.append(v)
                out[:, j] = v
                break
    return out


def pca_project(model: PcaModel, x: np.ndarray) -> np.ndarray:
    """Coordinates of ``x`` (a vector or rows of a matrix) in the PCA basis."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != model.mean.shape[0]:
        raise ValueError(f"expected input length {model.mean.shape[0]}, got {x.shape[-1]}")
    return (x - model.mean) @ model.components


def pca_reconstruct(model: PcaModel, z: np.ndarray) -> np.ndarray:
    return z @ model.components.T + model.mean


def _inv_sqrt(S: np.ndarray, name: str, ridge: float) -> np.ndarray:
    evals, evecs = np.linalg.eigh(S)
    tol = max(evals.max(), 1.0) * S.shape[0] * np.finfo(float).eps
    if evals.min() <= tol:
        if ridge == 0:
            raise SingularCovarianceError(
                f"covariance of view {name} is singular; use a positive ridge"
            )
        raise SingularCovarianceError(f"covariance of view {name} is not positive definite")
    return (evecs / np.sqrt(evals)) @ evecs.T


def cca_fit(X: np.ndarray, Y: np.ndarray, k: int, ridge: float = 1e-3) -> CcaModel:
    """Ridge-regularised canonical correlation analysis of paired views."""
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if Y.ndim == 1:
        Y = Y[:, None]
    n = X.shape[0]
    if Y.shape[0] != n:
        raise ValueError(f"views have different sample counts: {n} vs {Y.shape[0]}")
    if n < 3:
        raise ValueError("CCA needs at least three samples")
    if ridge < 0:
        raise ValueError("ridge must be non-negative")
    if not 1 <= k <= min(X.shape[1], Y.shape[1]):
        raise ValueError(f"k={k} exceeds the smaller view dimension")
    x_mean, y_mean = X.mean(axis=0), Y.mean(axis=0)
    Xc, Yc = X - x_mean, Y - y_mean
    Sxx = Xc.T @ Xc / (n - 1) + ridge * np.eye(X.shape[1])
    Syy = Yc.T @ Yc / (n - 1) + ridge * np.eye(Y.shape[1])
    Sxy = Xc.T @ Yc / (n - 1)
    Wx = _inv_sqrt(Sxx, "X", ridge)
    Wy = _inv_sqrt(Syy, "Y", ridge)
    P, D, Qt = np.linalg.svd(Wx @ Sxy @ Wy, full_matrices=False)
    A = Wx @ P[:, :k]
    B = Wy @ Qt[:k].T
    # first nonzero entry of each A column positive; B follows so corr stays >= 0
    for j in range(k):
        nz = np.flatnonzero(np.abs(A[:, j]) > 0)
        if nz.size and A[nz[0], j] < 0:
            A[:, j] *= -1
            B[:, j] *= -1
    corr = np.clip(D[:k], 0.0, 1.0)
    return CcaModel(x_mean=x_mean, y_mean=y_mean, A=A, B=B, correlations=corr, ridge=float(ridge))


def cca_project(model: CcaModel, x: np.ndarray, y: np.ndarray):
    """Canonical variates ``U`` of view X and ``V`` of view Y."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape[-1] != model.A.shape[0] or y.shape[-1] != model.B.shape[0]:
        raise ValueError(
            f"expected lengths ({model.A.shape[0]}, {model.B.shape[0]}), "
            f"got ({x.shape[-1]}, {y.shape[-1]})"
        )
    return (x - model.x_mean) @ model.A, (y - model.y_mean) @ model.B


def synergy(U: np.ndarray, V: np.ndarray) -> np.ndarray:
    """Unit-norm difference of the two projections (zero if they coincide).

    Works row-wise on matrices.
    """
    U = np.asarray(U, dtype=np.float64)
    V = np.asarray(V, dtype=np.float64)
    if U.shape != V.shape:
        raise ValueError(f"shape mismatch {U.shape} vs {V.shape}")
    diff = U - V
    norm = np.linalg.norm(diff, axis=-1, keepdims=True)
    safe = np.where(norm < SYNERGY_EPS, 1.0, norm)
    return np.where(norm < SYNERGY_EPS, 0.0, diff / safe)


def standardizer_fit(S: np.ndarray) -> SynergyStandardizer:
    S = np.asarray(S, dtype=np.float64)
    if S.ndim != 2 or S.shape[0] < 2:
        raise ValueError("standardizer needs an n x k matrix with n >= 2")
    return SynergyStandardizer(mean=S.mean(axis=0), std=np.maximum(S.std(axis=0), STD_FLOOR))


def standardizer_apply(model: SynergyStandardizer, S: np.ndarray) -> np.ndarray:
    return (np.asarray(S, dtype=np.float64) - model.mean) / model.std
