"""
Golub-Kahan bidiagonalization with full reorthogonalization and the projected least-squares (PLS) solve.

After k iterations A W_k = Z_{k+1} B_k with orthonormal W_k, Z_{k+1} and a lower bidiagonal B_k.
The QR factorization of B_k is updated with one Givens rotation per iteration, as in LSQR, so the
projected solution at iteration k costs O(k).
"""
import logging
from dataclasses import dataclass
from math import sqrt
from typing import Callable, Optional

import numpy as np
import scipy.linalg

from operators import ShapeError

logger = logging.getLogger(__name__)

BREAKDOWN_RTOL = 1e-12


def _sym_ortho(a: float, b: float) -> tuple[float, float, float]:
    """
    Stable Givens rotation: returns (c, s, r) with [c s; s -c] [a; b] = [r; 0].
    """
    if b == 0:
        return float(np.sign(a)) if a != 0 else 1.0, 0.0, abs(a)
    if a == 0:
        return 0.0, float(np.sign(b)), abs(b)
    if abs(b) > abs(a):
        tau = a / b
        s = np.sign(b) / sqrt(1 + tau * tau)
        c = s * tau
        r = b / s
    else:
        tau = b / a
        c = np.sign(a) / sqrt(1 + tau * tau)
        s = c * tau
        r = a / c
    return float(c), float(s), float(r)


def _reorthogonalize(v: np.ndarray, basis: np.ndarray) -> np.ndarray:
    """
    Classical Gram-Schmidt against the columns of basis, repeated once if the first pass cancels
    more than 90% of the norm.
    """
    if basis.shape[1] == 0:
        return v
    before = np.linalg.norm(v)
    v = v - basis @ (basis.T @ v)
    if np.linalg.norm(v) < 0.1 * before:
        v = v - basis @ (basis.T @ v)
    return v


@dataclass
class PlsIterate:
    y: np.ndarray
    x: np.ndarray
    residual_norm: float
    k: int = 0


class BidiagFactorization:
    """
    Incrementally built GKB factorization of an operator and a right-hand side.

    :param A: Anything with matvec / rmatvec and a shape (m, n).
    :param b: Right-hand side of length m, nonzero.
    :param k_max: Number of iterations storage is reserved for, at most min(m, n).
    """

    def __init__(self, A, b: np.ndarray, k_max: int):
        b = np.asarray(b, dtype=np.float64)
        m, n = A.shape
        if b.ndim != 1 or b.size != m:
            raise ShapeError(f"Right-hand side of shape {b.shape} does not match operator shape {A.shape}.")
        if k_max < 1 or k_max > min(m, n):
            raise ValueError(f"k_max={k_max} must lie in [1, {min(m, n)}] for an operator of shape {A.shape}.")

        self.A = A
        self.k_max = k_max
        self.theta1 = float(np.linalg.norm(b))
        if self.theta1 == 0:
            raise ValueError("Right-hand side b is zero; there is nothing to solve.")

        self._W = np.zeros((n, k_max + 1))
        self._Z = np.zeros((m, k_max + 1))
        self._rho: list[float] = []
        self._theta: list[float] = []
        self.k = 0
        self.breakdown = False
        self.anorm = 0.0

        # Givens QR state of B_k: R has diagonal _qr_rho and superdiagonal _qr_theta, right side _qr_phi.
        self._qr_rho: list[float] = []
        self._qr_theta: list[float] = []
        self._qr_phi: list[float] = []
        self._rhobar = 0.0
        self._phibar = self.theta1

        self._Z[:, 0] = b / self.theta1
        q = A.rmatvec(self._Z[:, 0])
        rho1 = float(np.linalg.norm(q))
        if rho1 <= np.finfo(float).tiny:
            logger.warning("gkb: breakdown before the first iteration (A^T b = 0)")
            self.breakdown = True
            return
        self._W[:, 0] = q / rho1
        self._rho.append(rho1)
        self._rhobar = rho1
        self.anorm = rho1

    def __repr__(self):
        return f"BidiagFactorization(k={self.k}, k_max={self.k_max}, breakdown={self.breakdown})"

    @property
    def can_step(self) -> bool:
        return not self.breakdown and self.k < self.k_max

    def step(self) -> bool:
        """
        One iteration of the bidiagonalization. Returns False when no iteration could be added.
        """
        if not self.can_step:
            return False

        j = self.k
        A = self.A
        rho_j = self._rho[j]
        tol = BREAKDOWN_RTOL * self.anorm

        p = A.matvec(self._W[:, j]) - rho_j * self._Z[:, j]
        p = _reorthogonalize(p, self._Z[:, :j + 1])
        theta_next = float(np.linalg.norm(p))
        if theta_next <= tol:
            theta_next = 0.0
        else:
            self._Z[:, j + 1] = p / theta_next
        self._theta.append(theta_next)
        self.anorm = max(self.anorm, theta_next)
        self.k = j + 1

        c, s, r = _sym_ortho(self._rhobar, theta_next)
        self._qr_rho.append(r)
        self._qr_phi.append(c * self._phibar)
        self._phibar = s * self._phibar

        if theta_next == 0.0:
            logger.info(f"gkb: breakdown at step {self.k} (theta={theta_next:.1e}), data lies in the Krylov subspace")
            self.breakdown = True
            return True

        if self.k < self.k_max:
            q = A.rmatvec(self._Z[:, j + 1]) - theta_next * self._W[:, j]
            q = _reorthogonalize(q, self._W[:, :j + 1])
            rho_next = float(np.linalg.norm(q))
            if rho_next <= BREAKDOWN_RTOL * self.anorm:
                logger.info(f"gkb: breakdown at step {self.k} (rho={rho_next:.1e})")
                self.breakdown = True
                return True
            self._W[:, j + 1] = q / rho_next
            self._rho.append(rho_next)
            self.anorm = max(self.anorm, rho_next)
            self._qr_theta.append(s * rho_next)
            self._rhobar = -c * rho_next

        logger.debug(f"gkb: step {self.k}, rho={rho_j:.4e}, theta={theta_next:.4e}, residual={abs(self._phibar):.4e}")
        return True

    # --------------------- Views ---------------------

    @property
    def W(self) -> np.ndarray:
        return self._W[:, :self.k]

    @property
    def Z(self) -> np.ndarray:
        return self._Z[:, :self.k + 1]

    @property
    def rho(self) -> np.ndarray:
        return np.array(self._rho[:self.k])

    @property
    def theta(self) -> np.ndarray:
        """Subdiagonal theta_2 .. theta_{k+1}."""
        return np.array(self._theta[:self.k])

    @property
    def B(self) -> np.ndarray:
        """Dense (k+1) x k lower bidiagonal matrix."""
        k = self.k
        B = np.zeros((k + 1, k))
        idx = np.arange(k)
        B[idx, idx] = self.rho
        B[idx + 1, idx] = self.theta
        return B

    def rhs(self) -> np.ndarray:
        """theta1 e1 of length k + 1."""
        e = np.zeros(self.k + 1)
        e[0] = self.theta1
        return e

    def apply_B(self, y: np.ndarray) -> np.ndarray:
        """B_k y without forming B_k."""
        y = np.asarray(y, dtype=np.float64)
        out = np.zeros(self.k + 1)
        out[:self.k] += self.rho * y
        out[1:] += self.theta * y
        return out

    def reconstructed_data(self, y: np.ndarray) -> np.ndarray:
        """A W_k y computed as Z_{k+1} (B_k y)."""
        return self.Z @ self.apply_B(y)

    def residual(self, y: np.ndarray) -> np.ndarray:
        """b - A W_k y, computed in the projected space."""
        return self.Z @ (self.rhs() - self.apply_B(y))

    def solution(self, y: np.ndarray) -> np.ndarray:
        return self.W @ np.asarray(y, dtype=np.float64)

    # --------------------- PLS ---------------------

    def pls_coefficients(self) -> tuple[np.ndarray, float]:
        """
        Minimizer of ||theta1 e1 - B_k y|| and its residual norm, from the running QR factorization.
        """
        k = self.k
        if k == 0:
            raise ValueError("Projected least squares needs at least one completed iteration.")
        ab = np.zeros((2, k))
        ab[0, 1:] = self._qr_theta[:k - 1]
        ab[1, :] = self._qr_rho[:k]
        y = scipy.linalg.solve_banded((0, 1), ab, np.array(self._qr_phi[:k]))
        return y, abs(self._phibar)


def pls_solve(fac: BidiagFactorization) -> PlsIterate:
    y, residual_norm = fac.pls_coefficients()
    return PlsIterate(y, fac.solution(y), residual_norm, fac.k)


def gkb_run(A, b: np.ndarray, k_max: int,
            on_step: Optional[Callable[[BidiagFactorization], bool]] = None) -> BidiagFactorization:
    """
    Run the bidiagonalization until k_max, breakdown, or until on_step returns True.

    :param on_step: Called with the factorization after every completed iteration.
    """
    fac = BidiagFactorization(A, b, k_max)
    while fac.can_step:
        fac.step()
        if on_step is not None and on_step(fac):
            logger.debug(f"gkb: stopped by callback at k={fac.k}")
            break
    return fac
