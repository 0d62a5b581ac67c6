"""Dense complex matrix primitives.

Everything downstream works with small dense matrices (at most a few tens
of rows), stored as row-major ``numpy`` arrays of ``complex128``:
Kronecker products, the multiplicative family ``exp_matrix(lam, x, k)``
of upper-triangular exponential blocks, the Perron root of a nonnegative
matrix, and the two norms used for residual reporting.
"""

from __future__ import annotations

import numpy as np

from .errors import UsageError

#: Largest admissible exponential-block size; factorials stay exact in
#: double precision far beyond this, but block sizes are single digits in
#: any realistic model.
MAX_BLOCK = 20


def as_cmatrix(m) -> np.ndarray:
    """Validate and coerce to a 2-d complex array with finite entries."""
    a = np.asarray(m, dtype=np.complex128)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise UsageError(f"expected a 2-d matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise UsageError("matrix has non-finite entries")
    return a


def kronecker(a, b) -> np.ndarray:
    """Kronecker product: block matrix with block (i, j) equal to a[i,j]*b."""
    return np.kron(as_cmatrix(a), as_cmatrix(b))


def exp_profile(lam: complex, x: float, k: int) -> np.ndarray:
    """First row of ``exp_matrix``: entries e^(lam*x) * x^m / m!, m < k."""
    if k < 1:
        raise UsageError("block size k must be >= 1")
    if k > MAX_BLOCK:
        raise UsageError(f"block size k={k} exceeds the supported cap {MAX_BLOCK}")
    out = np.empty(k, dtype=np.complex128)
    term = np.exp(lam * x)
    out[0] = term
    for m in range(1, k):
        term = term * x / m
        out[m] = term
    return out


def upper_toeplitz(profile: np.ndarray) -> np.ndarray:
    """Upper-triangular Toeplitz matrix T with T[i, j] = profile[j - i]."""
    profile = np.asarray(profile)
    k = profile.shape[-1]
    idx = np.arange(k)
    diff = idx[None, :] - idx[:, None]
    mat = np.where(diff >= 0, profile[..., np.clip(diff, 0, k - 1)], 0.0)
    return mat.astype(np.complex128)


def exp_matrix(lam: complex, x: float, k: int) -> np.ndarray:
    """The k x k upper-triangular matrix e^(lam*x) * (x^(j-i)/(j-i)!).

    Equal to the matrix exponential of ``x`` times the Jordan block with
    eigenvalue ``lam``, hence multiplicative in ``x``.
    """
    return upper_toeplitz(exp_profile(lam, x, k))


def hs_norm(m) -> float:
    """Hilbert-Schmidt (Frobenius) norm."""
    return float(np.linalg.norm(np.asarray(m, dtype=np.complex128), "fro"))


def op_norm(m) -> float:
    """Operator (spectral) norm: the largest singular value."""
    return float(np.linalg.norm(np.asarray(m, dtype=np.complex128), 2))


def _power_iteration(m: np.ndarray, tol: float, max_iter: int = 500):
    n = m.shape[0]
    x = np.full(n, 1.0 / np.sqrt(n))
    rho = 0.0
    for _ in range(max_iter):
        y = m @ x
        norm = np.linalg.norm(y)
        if norm == 0.0:
            return None
        rho = float(x @ y)
        x = y / norm
        if np.linalg.norm(m @ x - rho * x) <= tol * max(1.0, abs(rho)):
            return max(rho, 0.0), x
    return None


def spectral_radius(m, tol: float = 1e-12):
    """Perron root of a nonnegative matrix.

    Returns ``(rho, v)`` where ``v`` is a nonnegative right eigenvector
    when one is cleanly available (always in the primitive case) and
    ``None`` otherwise.  Power iteration is tried first; reducible or
    oscillating inputs fall back to the dense eigenvalue solver.
    """
    a = np.asarray(m, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise UsageError(f"spectral_radius needs a square matrix, got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise UsageError("spectral_radius: non-finite entry")
    if np.any(a < 0):
        raise UsageError("spectral_radius: negative entry")

    res = _power_iteration(a, tol)
    if res is not None:
        rho, v = res
        # Confirm against the full spectrum; power iteration can settle on a
        # non-dominant value for reducible inputs.  The dense eigenvalue is
        # the more accurate of the two, the iteration supplies the
        # nonnegative eigenvector.
        eigs = np.linalg.eigvals(a)
        rho_eig = float(np.max(np.abs(eigs))) if eigs.size else 0.0
        if abs(rho - rho_eig) <= 1e-9 * max(1.0, rho_eig):
            return rho_eig, np.abs(v)

    eigs, vecs = np.linalg.eig(a)
    order = np.argsort(-np.abs(eigs))
    rho = float(np.abs(eigs[order[0]]))
    if rho == 0.0:
        return 0.0, None
    v = vecs[:, order[0]]
    # Rotate the phase so the dominant entry is real positive.
    pivot = v[np.argmax(np.abs(v))]
    if pivot != 0:
        v = v * (np.conj(pivot) / abs(pivot))
    v = np.real(v)
    if np.all(v >= -1e-9 * max(1.0, np.max(np.abs(v)))):
        v = np.clip(v, 0.0, None)
        norm = np.linalg.norm(v)
        return rho, (v / norm if norm > 0 else None)
    return rho, None


def is_primitive(m, tol: float = 0.0) -> bool:
    """Whether some power of the nonnegative matrix is entrywise positive.

    Powers up to the Wielandt bound p^2 - 2p + 2 suffice.
    """
    a = np.asarray(m, dtype=np.float64)
    p = a.shape[0]
    power = np.eye(p)
    limit = max(1, p * p - 2 * p + 2)
    for _ in range(limit):
        power = power @ a
        if np.all(power > tol):
            return True
    return False
