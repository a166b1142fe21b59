"""Points of Gr(k, R^n) as orthonormal n x k bases."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SubspaceError

RANK_TOL = 1e-10
ORTHO_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class Subspace:
    basis: np.ndarray

    def __post_init__(self):
        U = np.array(self.basis, dtype=np.float64)
        if U.ndim != 2 or U.shape[1] == 0 or U.shape[1] > U.shape[0]:
            raise SubspaceError(f"basis must be n x k with 1 <= k <= n, got shape {U.shape}")
        if not np.all(np.isfinite(U)):
            raise SubspaceError("basis has non-finite entries")
        err = np.linalg.norm(U.T @ U - np.eye(U.shape[1]))
        if err > ORTHO_TOL:
            raise SubspaceError(f"basis is not orthonormal (||U^T U - I||_F = {err:.3g})")
        U.setflags(write=False)
        object.__setattr__(self, "basis", U)

    @classmethod
    def trusted(cls, basis: np.ndarray) -> "Subspace":
        """Wrap a basis that a retraction just produced, skipping the orthonormality check."""
        obj = object.__new__(cls)
        basis = np.array(basis, dtype=np.float64)
        basis.setflags(write=False)
        object.__setattr__(obj, "basis", basis)
        return obj

    @property
    def ambient(self) -> int:
        return self.basis.shape[0]

    @property
    def dim(self) -> int:
        return self.basis.shape[1]

    @property
    def projector(self) -> np.ndarray:
        return self.basis @ self.basis.T

    def to_dict(self) -> dict:
        return {"n": self.ambient, "k": self.dim, "basis": self.basis.ravel().tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Subspace":
        n, k = int(d["n"]), int(d["k"])
        flat = np.asarray(d["basis"], dtype=np.float64)
        if flat.size != n * k:
            raise SubspaceError(f"basis has {flat.size} entries, expected n*k = {n * k}")
        return cls(flat.reshape(n, k))


def _sign_fixed_qr(M: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    Q, R = np.linalg.qr(M)
    s = np.sign(np.diagonal(R, axis1=-2, axis2=-1)).copy()
    s[s == 0] = 1.0
    return Q * s[..., None, :], R * s[..., :, None]


def qr_retract_batch(M: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Retract a stack of (..., n, k) matrices.

    Returns ``(Q, ok)`` where ``ok`` marks the matrices whose smallest
    singular value exceeds the rank tolerance; Q is meaningless where not ok.
    """
    Q, R = _sign_fixed_qr(M)
    # Gershgorin lower bound on lambda_min(M^T M), discounted by the Gram
    # rounding error, certifies almost every call; the rest pay for an SVD.
    G = np.matmul(np.swapaxes(M, -1, -2), M)
    diag = np.diagonal(G, axis1=-2, axis2=-1)
    lower = 2.0 * diag - np.sum(np.abs(G), axis=-1)
    slack = M.shape[-2] * np.finfo(np.float64).eps * np.sum(diag, axis=-1)
    ok = np.min(lower, axis=-1) - slack > RANK_TOL
    if not np.all(ok):
        ok = np.array(ok, copy=True)
        flat_ok = ok.reshape(-1)
        flat_R = R.reshape((-1,) + R.shape[-2:])
        flat_ok[~flat_ok] = np.linalg.svd(flat_R[~flat_ok], compute_uv=False)[:, -1] > RANK_TOL
    return Q, ok


def qr_retract(M) -> Subspace:
    """Thin QR with the positive-diagonal-R sign convention; span(Q) = span(M)."""
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2 or M.shape[1] > M.shape[0] or M.shape[1] == 0:
        raise SubspaceError(f"expected an n x k matrix with k <= n, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise SubspaceError("rank-deficient update")
    Q, ok = qr_retract_batch(M)
    if not ok:
        raise SubspaceError("rank-deficient update")
    return Subspace(Q)


def _check_pair(A: Subspace, B: Subspace) -> None:
    if A.ambient != B.ambient or A.dim != B.dim:
        raise SubspaceError(
            f"dimension mismatch: Gr({A.dim}, R^{A.ambient}) vs Gr({B.dim}, R^{B.ambient})"
        )


def principal_angles(A: Subspace, B: Subspace) -> np.ndarray:
    """Principal angles in ascending order.

    Angles below pi/4 come from the sines (singular values of the residual
    (I - P_A) U_B), the rest from the cosines; arccos alone loses about half
    the digits near zero.
    """
    _check_pair(A, B)
    overlap = A.basis.T @ B.basis
    cos = np.clip(np.linalg.svd(overlap, compute_uv=False), 0.0, 1.0)
    residual = B.basis - A.basis @ overlap
    sin = np.clip(np.linalg.svd(residual, compute_uv=False)[: A.dim], 0.0, 1.0)
    # cos descending <-> angles ascending; sin descending <-> angles descending
    theta = np.arccos(cos)
    small = np.arcsin(sin[::-1])
    return np.where(theta < np.pi / 4, small, theta)


def grassmann_distance(A: Subspace, B: Subspace) -> float:
    """Projection (chordal) metric sqrt(sum sin^2 theta) = ||P_A - P_B||_F / sqrt(2)."""
    _check_pair(A, B)
    # ||(I - P_A) U_B||_F^2 = sum sin^2 theta, without cancellation near 0
    residual = B.basis - A.basis @ (A.basis.T @ B.basis)
    return float(np.linalg.norm(residual))


def pairwise_sq_distances(Ua: np.ndarray, Ub: np.ndarray) -> np.ndarray:
    """Squared projection distances between paired stacks of bases, shape (m, n, k) each.

    Uses k - ||A^T B||_F^2: half the work of the residual form, accurate to
    ~1e-15 absolute, which is plenty for thresholding.
    """
    overlap = np.matmul(np.swapaxes(Ua, -1, -2), Ub)
    return np.maximum(Ua.shape[-1] - np.sum(overlap * overlap, axis=(-2, -1)), 0.0)


def random_subspace(n: int, k: int, seed: int) -> Subspace:
    if not (1 <= k <= n):
        raise SubspaceError(f"need 1 <= k <= n, got k={k}, n={n}")
    rng = np.random.default_rng(seed)
    return qr_retract(rng.standard_normal((n, k)))


def redimension(U: np.ndarray, k: int, seed: int = 0) -> np.ndarray:
    """Change the column count of an orthonormal basis to ``k``.

    Truncation keeps the leading columns.  Padding appends seeded random
    directions projected onto the orthogonal complement of span(U); a
    zero pad would leave the matrix rank-deficient.
    """
    U = np.asarray(U, dtype=np.float64)
    n, k0 = U.shape
    if not (1 <= k <= n):
        raise SubspaceError(f"cannot re-dimension an n={n} basis to k={k}")
    if k <= k0:
        # leading columns of an orthonormal basis are already orthonormal
        return U[:, :k].copy()
    rng = np.random.default_rng(seed)
    extra = rng.standard_normal((n, k - k0))
    extra -= U @ (U.T @ extra)
    return qr_retract(np.hstack([U, extra])).basis
