"""Shared numerical kernels: conjugate gradients, Lanczos, compensated sums."""

from __future__ import annotations

import numpy as np


class SolverError(RuntimeError):
    """Iterative solve failed to reach the requested residual."""

    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(f"{message} (residual {residual:.3e} after {iterations} iterations)")
        self.residual = residual
        self.iterations = iterations


def conjugate_gradient(apply_A, b, tol=1e-12, max_iter=10_000, x0=None, precond=None, inner=None):
    """CG for an SPD operator given as a callable.

    Stops when ||r|| <= tol * ||b|| in the chosen inner product (Euclidean by
    default).  Returns (x, relative_residual, iterations).  Raises SolverError
    on stagnation or iteration exhaustion.
    """
    dot = inner if inner is not None else lambda u, v: float(u @ v)
    b = np.asarray(b, dtype=float)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    r = b - apply_A(x) if x.any() else b.copy()
    norm_b = np.sqrt(dot(b, b))
    if norm_b == 0.0:
        return np.zeros_like(b), 0.0, 0
    z = precond(r) if precond is not None else r
    p = z.copy()
    rz = dot(r, z)
    res = np.sqrt(dot(r, r)) / norm_b
    if res <= tol:
        return x, res, 0
    for it in range(1, max_iter + 1):
        Ap = apply_A(p)
        pAp = dot(p, Ap)
        if pAp <= 0.0:
            raise SolverError("CG breakdown: operator not positive definite on this vector", res, it)
        alpha = rz / pAp
        x = x + alpha * p
        r = r - alpha * Ap
        res = np.sqrt(dot(r, r)) / norm_b
        if res <= tol:
            return x, res, it
        z = precond(r) if precond is not None else r
        rz_new = dot(r, z)
        beta = rz_new / rz
        rz = rz_new
        p = z + beta * p
    raise SolverError("CG did not converge", res, max_iter)


class KahanSum:
    """Compensated accumulator; keeps long balance sums near machine precision."""

    __slots__ = ("value", "_c")

    def __init__(self, value: float = 0.0):
        self.value = float(value)
        self._c = 0.0

    def add(self, x: float) -> float:
        y = float(x) - self._c
        t = self.value + y
        self._c = (t - self.value) - y
        self.value = t
        return self.value

    def copy(self) -> "KahanSum":
        s = KahanSum(self.value)
        s._c = self._c
        return s


class KahanVector:
    """Per-entry compensated accumulation for trajectory integrals."""

    __slots__ = ("value", "_c")

    def __init__(self, size: int):
        self.value = np.zeros(size)
        self._c = np.zeros(size)

    def add(self, x: np.ndarray) -> None:
        y = x - self._c
        t = self.value + y
        self._c = (t - self.value) - y
        self.value = t

    def copy(self) -> "KahanVector":
        out = KahanVector(self.value.size)
        out.value = self.value.copy()
        out._c = self._c.copy()
        return out


def lanczos_extreme(apply_A, inner, v0, iters, full_reorth=True, postprocess=None):
    """Lanczos in a user-supplied inner product; returns Ritz data.

    apply_A must be self-adjoint w.r.t. ``inner``.  Returns
    (ritz_values, ritz_vectors_in_basis, basis) where basis columns are
    inner-orthonormal.  Breakdown (invariant subspace found) just truncates.

    ``postprocess`` is applied to every candidate basis vector before
    normalization.  When the operator annihilates a complement subspace
    (e.g. a Gramian restricted to a constraint manifold), re-projecting each
    iterate there keeps roundoff from being amplified by the recurrence.
    """
    q = np.array(v0, dtype=float)
    if postprocess is not None:
        q = postprocess(q)
    q /= np.sqrt(inner(q, q))
    basis = [q]
    alphas, betas = [], []
    beta = 0.0
    q_prev = np.zeros_like(q)
    for _ in range(iters):
        u = apply_A(q)
        alpha = inner(q, u)
        u = u - alpha * q - beta * q_prev
        if full_reorth:
            for b in basis:
                u = u - inner(b, u) * b
        if postprocess is not None:
            u = postprocess(u)
        alphas.append(alpha)
        beta = np.sqrt(max(inner(u, u), 0.0))
        if beta < 1e-14 * max(abs(alpha), 1.0):
            break
        betas.append(beta)
        q_prev = q
        q = u / beta
        basis.append(q)
    k = len(alphas)
    T = np.zeros((k, k))
    T[np.arange(k), np.arange(k)] = alphas
    if k > 1:
        off = np.array(betas[: k - 1])
        T[np.arange(k - 1), np.arange(1, k)] = off
        T[np.arange(1, k), np.arange(k - 1)] = off
    vals, vecs = np.linalg.eigh(T)
    return vals, vecs, np.array(basis[:k]).T


def smallest_ritz_pair(apply_A, inner, v0, iters, restarts=2):
    """Smallest eigenpair of a PSD operator via restarted Lanczos.

    Deterministic for a fixed start vector.  Restarting from the current
    smallest Ritz vector sharpens the estimate without an inner solver.
    """
    v = np.array(v0, dtype=float)
    best_val, best_vec = None, None
    for _ in range(max(restarts, 1)):
        vals, vecs, basis = lanczos_extreme(apply_A, inner, v, iters)
        val = vals[0]
        vec = basis @ vecs[:, 0]
        if best_val is None or val < best_val:
            best_val, best_vec = val, vec
        v = vec
    nrm = np.sqrt(inner(best_vec, best_vec))
    return float(best_val), best_vec / nrm


def largest_ritz_value(apply_A, inner, v0, iters=20):
    vals, _, _ = lanczos_extreme(apply_A, inner, v0, iters, full_reorth=True)
    return float(vals[-1])
