"""Dense real matrix kernel.

Matrices and vectors are plain float64 numpy arrays; ``as_mat`` / ``as_vec``
validate shape and finiteness at the boundary of every public routine.
"""

import numpy as np

from .errors import InvalidInputError, UnstableSystemError

PINV_RTOL = 1e-10
LYAP_TERM_TOL = 1e-14
LYAP_MAX_TERMS = 100_000
SYMMETRY_TOL = 1e-12


def as_mat(m, name="matrix"):
    a = np.array(m, dtype=float)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise InvalidInputError(f"{name} must be a non-empty 2-D array, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidInputError(f"{name} has non-finite entries")
    return a


def as_vec(v, name="vector"):
    a = np.array(v, dtype=float)
    if a.ndim == 0:
        a = a.reshape(1)
    if a.ndim != 1 or a.shape[0] < 1:
        raise InvalidInputError(f"{name} must be a non-empty 1-D array, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidInputError(f"{name} has non-finite entries")
    return a


def as_square(m, name="matrix"):
    a = as_mat(m, name)
    if a.shape[0] != a.shape[1]:
        raise InvalidInputError(f"{name} must be square, got shape {a.shape}")
    return a


def spectral_norm(m):
    """Largest singular value (operator norm induced by the Euclidean norm)."""
    a = as_mat(m)
    return float(np.linalg.svd(a, compute_uv=False)[0])


def spectral_radius(m):
    a = as_square(m)
    return float(np.max(np.abs(np.linalg.eigvals(a))))


def pinv(m):
    """Moore-Penrose pseudoinverse with a relative singular-value cutoff.

    Singular values below ``PINV_RTOL`` times the largest one are treated
    as exact zeros.
    """
    a = as_mat(m)
    u, sv, vt = np.linalg.svd(a, full_matrices=False)
    # the absolute floor keeps 1/sv finite for subnormal inputs
    cutoff = max(PINV_RTOL * (sv[0] if sv.size else 0.0), np.finfo(float).tiny)
    inv = np.zeros_like(sv)
    keep = sv > cutoff
    inv[keep] = 1.0 / sv[keep]
    return (vt.T * inv) @ u.T


def orthogonal_decompose(w, a):
    """Split ``w`` into its component in Im(a) and the orthogonal remainder."""
    w = as_vec(w, "w")
    a = as_mat(a, "a")
    if a.shape[0] != w.shape[0]:
        raise InvalidInputError(f"a has {a.shape[0]} rows but w has dim {w.shape[0]}")
    w_par = a @ (pinv(a) @ w)
    return w_par, w - w_par


def solve_discrete_lyapunov(m, q):
    """Solve ``m.T @ P @ m - P = -q`` for symmetric P.

    Sums the series ``sum_k (m.T)^k q m^k`` by squaring (Smith doubling):
    after j rounds the partial sum covers 2^j terms. Stops when the newly
    added block is below ``LYAP_TERM_TOL`` or the term budget is spent.
    """
    m = as_square(m, "m")
    q = as_square(q, "q")
    if q.shape != m.shape:
        raise InvalidInputError(f"q shape {q.shape} does not match m shape {m.shape}")
    if np.max(np.abs(q - q.T)) > SYMMETRY_TOL:
        raise InvalidInputError("q is not symmetric")
    if np.min(np.linalg.eigvalsh(0.5 * (q + q.T))) < -SYMMETRY_TOL:
        raise InvalidInputError("q is not positive semidefinite")
    r = spectral_radius(m)
    if r >= 1.0:
        raise UnstableSystemError(f"spectral radius {r:.6g} >= 1, Lyapunov series diverges")

    p = q.copy()
    power = m.copy()
    terms = 1
    while terms < LYAP_MAX_TERMS:
        added = power.T @ p @ power
        p = p + added
        terms *= 2
        if np.linalg.norm(added, 2) < LYAP_TERM_TOL:
            break
        power = power @ power
    return 0.5 * (p + p.T)


def matrix_powers_norms(m, n):
    """Return ``[||m^0||, ..., ||m^n||]``."""
    m = as_square(m)
    out = []
    power = np.eye(m.shape[0])
    for _ in range(n + 1):
        out.append(spectral_norm(power))
        power = power @ m
    return out
