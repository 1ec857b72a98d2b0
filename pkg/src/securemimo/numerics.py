"""
Complex linear-algebra helpers shared by every other module.

Matrices are plain ``numpy`` complex arrays. Stacks of matrices (one per
base station, user or eavesdropper) are arrays with the stack index first.
"""
import numpy as np
from scipy import linalg
from scipy.linalg import lapack

__all__ = [
    "SingularMatrix",
    "hermitian_solve",
    "null_space_projector",
    "finite_diff_gradient",
    "make_rng",
    "substream",
    "herm",
    "fro2",
]

#: Reciprocal condition numbers below this are treated as singular.
RCOND_MIN = 1e-12


class SingularMatrix(np.linalg.LinAlgError):
    """Raised when a linear system is too badly conditioned to trust."""


def herm(X):
    """Conjugate transpose of the last two axes."""
    return np.conj(np.swapaxes(X, -1, -2))


def fro2(X):
    """Squared Frobenius norm over the last two axes (real)."""
    return np.sum(np.abs(X) ** 2, axis=(-2, -1))


def hermitian_solve(A, B):
    """
    Solve ``A X = B`` for square ``A``.

    An LU factorization is used so that indefinite and mildly non-Hermitian
    matrices are accepted. The 1-norm condition number is estimated with
    LAPACK ``?gecon``; above ``1 / RCOND_MIN`` a :class:`SingularMatrix` is
    raised instead of returning a meaningless solution.

    Parameters
    ----------
    A : (n, n) array_like
    B : (n,) or (n, k) array_like

    Returns
    -------
    X : ndarray with the shape of ``B``
    """
    A = np.asarray(A, dtype=complex)
    B = np.asarray(B, dtype=complex)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"A must be square, got shape {A.shape}")
    if B.shape[0] != A.shape[0]:
        raise ValueError(f"A {A.shape} and B {B.shape} are not conformable")
    if not np.all(np.isfinite(A)):
        raise SingularMatrix("matrix has non-finite entries")
    lu, piv, info = lapack.zgetrf(A)
    if info > 0:
        raise SingularMatrix("exactly singular matrix (zero pivot)")
    anorm = np.linalg.norm(A, 1)
    if anorm == 0.0:
        raise SingularMatrix("zero matrix")
    rcond, _ = lapack.zgecon(lu, anorm, norm="1")
    if not rcond > RCOND_MIN:
        raise SingularMatrix(f"condition estimate {1.0 / max(rcond, 1e-300):.3e} exceeds {1 / RCOND_MIN:.0e}")
    X = linalg.lu_solve((lu, piv), B, check_finite=False)
    return X


def null_space_projector(A, tol=1e-8):
    """
    Orthogonal projector onto the (near) right null space of ``A``.

    Right singular directions whose singular value is at most
    ``tol * sigma_max`` are treated as null. If none qualifies, the
    projector onto the single right singular vector with the smallest
    singular value is returned instead (lowest index wins ties), so the
    result is never zero.

    Parameters
    ----------
    A : (m, n) array_like
    tol : float
        Relative threshold.

    Returns
    -------
    P : (n, n) ndarray
        Hermitian, idempotent, trace >= 1.
    """
    A = np.asarray(A, dtype=complex)
    n = A.shape[1]
    _, s, Vh = np.linalg.svd(A, full_matrices=True)
    sv = np.zeros(n)
    sv[: s.size] = s
    smax = sv.max() if n else 0.0
    keep = sv <= tol * smax
    if not np.any(keep):
        smallest = sv.min()
        # first index attaining the minimum among numerically tied values
        idx = int(np.flatnonzero(sv <= smallest * (1 + 1e-12))[0])
        keep = np.zeros(n, dtype=bool)
        keep[idx] = True
    Vn = Vh[keep].conj().T
    P = Vn @ Vn.conj().T
    return 0.5 * (P + P.conj().T)


def finite_diff_gradient(f, X, h=1e-6):
    """
    Central-difference Wirtinger gradient of a real scalar function.

    Returns ``(df/dRe + 1j * df/dIm) / 2`` entrywise, i.e. the derivative
    with respect to the conjugate entries. For ``f(X) = tr(X X^H)`` this is
    ``X``.
    """
    X = np.asarray(X, dtype=complex)
    G = np.zeros_like(X)
    it = np.nditer(X, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        Xp = X.copy()
        Xp[idx] += h
        Xm = X.copy()
        Xm[idx] -= h
        d_re = (f(Xp) - f(Xm)) / (2 * h)
        Xp[idx] = X[idx] + 1j * h
        Xm[idx] = X[idx] - 1j * h
        d_im = (f(Xp) - f(Xm)) / (2 * h)
        G[idx] = 0.5 * (d_re + 1j * d_im)
    return G


def make_rng(seed, *key):
    """
    Counter-based generator (Philox) for ``seed`` and an optional substream key.

    The same ``(seed, key)`` always yields a bit-identical stream, and
    distinct keys give statistically independent streams.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def substream(rng, *key):
    """Derive an independent child generator from ``rng`` and an integer key."""
    seed = int(rng.integers(0, 2**63 - 1))
    return make_rng(seed, *key)
