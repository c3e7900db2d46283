"""
Periodic-plus-smooth decomposition B = P + S.

P is the periodic component that the DFT sees without wrap-around edge artifacts; S is a smooth,
zero-mean image that carries the boundary discontinuities.
"""
from typing import NamedTuple

import numpy as np
import scipy.fft

from operators import dft2, idft2


class PpsPair(NamedTuple):
    P: np.ndarray
    S: np.ndarray


def boundary_gap(B: np.ndarray) -> np.ndarray:
    """
    Jumps across the wrap-around boundaries of B.

    The first and last rows hold B(M, k) - B(1, k) and its negative, and likewise the first and last
    columns. An axis of length 1 contributes nothing.
    """
    B = np.asarray(B, dtype=np.float64)
    if B.ndim != 2:
        raise ValueError(f"Expected a 2D image, got shape {B.shape}.")
    M, N = B.shape
    V = np.zeros_like(B)

    if M >= 2:
        row_jump = B[-1, :] - B[0, :]
        V[0, :] += row_jump
        V[-1, :] -= row_jump
    if N >= 2:
        col_jump = B[:, -1] - B[:, 0]
        V[:, 0] += col_jump
        V[:, -1] -= col_jump
    return V


def laplacian_symbol(M: int, N: int) -> np.ndarray:
    """
    Eigenvalues 2cos(2 pi j / M) + 2cos(2 pi k / N) - 4 of the periodic discrete Laplacian.
    """
    cos_m = 2.0 * np.cos(2.0 * np.pi * np.arange(M) / M)
    cos_n = 2.0 * np.cos(2.0 * np.pi * np.arange(N) / N)
    return cos_m[:, None] + cos_n[None, :] - 4.0


def smooth_component(B: np.ndarray) -> np.ndarray:
    B = np.asarray(B, dtype=np.float64)
    V = boundary_gap(B)
    M, N = B.shape

    denom = laplacian_symbol(M, N)
    denom[0, 0] = 1.0
    S_hat = dft2(V) / denom
    S_hat[0, 0] = 0.0

    return idft2(S_hat, real=True)


def pps_decompose(B: np.ndarray) -> PpsPair:
    B = np.asarray(B, dtype=np.float64)
    if B.shape == (1, 1):
        return PpsPair(B.copy(), np.zeros_like(B))
    S = smooth_component(B)
    return PpsPair(B - S, S)


def periodic_laplacian(B: np.ndarray) -> np.ndarray:
    """
    Five-point Laplacian with wrap-around neighbors. An axis of length 1 contributes nothing.
    """
    B = np.asarray(B, dtype=np.float64)
    rows = np.roll(B, 1, axis=0) + np.roll(B, -1, axis=0) - 2.0 * B
    cols = np.roll(B, 1, axis=1) + np.roll(B, -1, axis=1) - 2.0 * B
    return rows + cols


def neumann_laplacian_symbol(M: int, N: int) -> np.ndarray:
    """
    Eigenvalues 2cos(pi j / M) + 2cos(pi k / N) - 4 of the five-point Laplacian that drops the neighbors
    outside the image. Its eigenvectors are the DCT-II basis.
    """
    cos_m = 2.0 * np.cos(np.pi * np.arange(M) / M)
    cos_n = 2.0 * np.cos(np.pi * np.arange(N) / N)
    return cos_m[:, None] + cos_n[None, :] - 4.0


def image_from_periodic(P: np.ndarray) -> np.ndarray:
    """
    Inverse of B -> P.

    The periodic component satisfies periodic_laplacian(P) = (free-boundary Laplacian of B) and has the
    mean of B, so B is recovered by a Neumann Poisson solve in the DCT-II basis. The smooth component of
    the returned image is then smooth_component(B) = B - P.
    """
    P = np.asarray(P, dtype=np.float64)
    if P.ndim != 2:
        raise ValueError(f"Expected a 2D image, got shape {P.shape}.")
    M, N = P.shape
    if M * N == 1:
        return P.copy()

    coefficients = scipy.fft.dctn(periodic_laplacian(P), type=2, norm="ortho")
    denom = neumann_laplacian_symbol(M, N)
    denom[0, 0] = 1.0
    coefficients /= denom
    coefficients[0, 0] = P.sum() / np.sqrt(M * N)
    return scipy.fft.idctn(coefficients, type=2, norm="ortho")
