"""Low-rank and non-negativity proximity measures for weight matrices.

kappa = max_i (1 - spectral/frobenius) vanishes exactly when every matrix has
rank one; rho = max_i ||negative part||_F / ||.||_F vanishes exactly when every
input is entrywise non-negative.  Spectral quantities come from deterministic
power iteration (all-ones start, one fixed fallback restart).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class PowerIterationError(RuntimeError):
    def __init__(self, message: str, last_estimate: float):
        super().__init__(f"{message} (last estimate {last_estimate:.6e})")
        self.last_estimate = last_estimate


def _power_top_singular(Z: np.ndarray, tol: float, max_iter: int):
    """Top singular triple (s, u, v) of Z via power iteration on the Gram matrix."""
    Z = np.asarray(Z, dtype=float)
    rows, cols = Z.shape
    if cols <= rows:
        B = Z.T @ Z
        m = cols
    else:
        B = Z @ Z.T
        m = rows

    starts = [
        np.ones(m) / np.sqrt(m),
        # fixed fallback, not orthogonal to anything in particular
        np.cos(0.7 * np.arange(m) + 0.3),
    ]
    lam = 0.0
    for attempt, v in enumerate(starts):
        v = v / np.linalg.norm(v)
        lam = float(v @ (B @ v))
        for _ in range(max_iter):
            w = B @ v
            wn = float(np.linalg.norm(w))
            if wn == 0.0:
                # v is in the null space; the matrix (or its deflation) is zero here
                lam = 0.0
                break
            v = w / wn
            new_lam = float(v @ (B @ v))
            if abs(new_lam - lam) <= tol * max(new_lam, np.finfo(float).tiny):
                lam = new_lam
                break
            lam = new_lam
        else:
            if attempt == len(starts) - 1:
                raise PowerIterationError(
                    f"power iteration did not converge in {max_iter} iterations",
                    np.sqrt(max(lam, 0.0)),
                )
            continue
        break

    s = float(np.sqrt(max(lam, 0.0)))
    if s == 0.0:
        u = np.zeros(rows)
        u[0] = 1.0
        vv = np.zeros(cols)
        vv[0] = 1.0
        return 0.0, u, vv
    if cols <= rows:
        right = v
        left = Z @ right / s
    else:
        left = v
        right = Z.T @ left / s
    left = left / np.linalg.norm(left)
    right = right / np.linalg.norm(right)
    return s, left, right


def spectral_norm(Z: np.ndarray, tol: float = 1e-12, max_iter: int = 10000) -> float:
    Z = np.asarray(Z, dtype=float)
    if not np.any(Z):
        raise ValueError("spectral_norm of the zero matrix is not supported")
    s, _, _ = _power_top_singular(Z, tol, max_iter)
    return s


def top2_singular(Z: np.ndarray, tol: float = 1e-12, max_iter: int = 10000):
    """Two largest singular values via power iteration plus one deflation step."""
    Z = np.asarray(Z, dtype=float)
    if min(Z.shape) < 2:
        raise ValueError("top2_singular needs min(shape) >= 2")
    s1, u, v = _power_top_singular(Z, tol, max_iter)
    deflated = Z - s1 * np.outer(u, v)
    s2, _, _ = _power_top_singular(deflated, tol, max_iter)
    return s1, s2


def factor_rank_one(Z: np.ndarray, tol: float = 1e-12, max_iter: int = 10000):
    """Best rank-one approximation a b^T with ||a|| = ||b|| = sqrt(s1).

    The sign ambiguity is fixed by making the largest-magnitude entry of a
    positive.  For an entrywise non-negative Z the returned factors are
    non-negative (the all-ones start keeps the iterates non-negative).
    """
    Z = np.asarray(Z, dtype=float)
    if not np.any(Z):
        raise ValueError("cannot factor the zero matrix")
    s, u, v = _power_top_singular(Z, tol, max_iter)
    r = np.sqrt(s)
    a = r * u
    b = r * v
    j = int(np.argmax(np.abs(a)))
    if a[j] < 0:
        a = -a
        b = -b
    return a, b


def kappa(Zs) -> float:
    """max over the inputs of 1 - spectral/frobenius (0 iff all rank one)."""
    worst = 0.0
    for Z in Zs:
        Z = np.asarray(Z, dtype=float)
        fro = float(np.linalg.norm(Z))
        if fro == 0.0:
            raise ValueError("kappa of a zero matrix is undefined")
        worst = max(worst, 1.0 - spectral_norm(Z) / fro)
    return worst


def rho(Zs) -> float:
    """max over the inputs of ||max(0, -Z)||_F / ||Z||_F (0 iff all non-negative).

    Vectors are measured in the Euclidean norm.
    """
    worst = 0.0
    for Z in Zs:
        Z = np.asarray(Z, dtype=float)
        total = float(np.linalg.norm(Z))
        if total == 0.0:
            raise ValueError("rho of a zero input is undefined")
        neg = float(np.linalg.norm(np.maximum(0.0, -Z)))
        worst = max(worst, neg / total)
    return worst


@dataclass(frozen=True)
class MatrixSummary:
    frobenius: float
    spectral: float
    top2_singular: tuple[float, float]
    kappa_term: float
    rho_term: float

    @classmethod
    def from_matrix(cls, Z: np.ndarray) -> "MatrixSummary":
        Z = np.asarray(Z, dtype=float)
        fro = float(np.linalg.norm(Z))
        if fro == 0.0:
            raise ValueError("summary of a zero matrix is undefined")
        s1, s2 = top2_singular(Z) if min(Z.shape) >= 2 else (spectral_norm(Z), 0.0)
        neg = float(np.linalg.norm(np.maximum(0.0, -Z)))
        return cls(
            frobenius=fro,
            spectral=s1,
            top2_singular=(s1, s2),
            kappa_term=1.0 - s1 / fro,
            rho_term=neg / fro,
        )
