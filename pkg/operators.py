"""
Matrix-free linear operators and the transforms shared by the rest of the toolkit.

Images are stored as M x N numpy arrays and vectorized by stacking columns, so every
permutation and Kronecker identity in the package is written against column-major order.
"""
from dataclasses import dataclass
from typing import Literal

import numpy as np
import scipy.fft
import scipy.linalg
import scipy.signal
from scipy.sparse.linalg import LinearOperator as ScipyLinearOperator

Boundary = Literal["zero", "periodic"]


class ShapeError(ValueError):
    """
    Raised when an operand does not match the dimensions an operator or image expects.
    """


# --------------------- Vectorization ---------------------

def vec(image: np.ndarray) -> np.ndarray:
    """
    Stack the columns of an M x N image into a vector of length MN.
    """
    image = np.asarray(image)
    if image.ndim != 2:
        raise ShapeError(f"Expected a 2D image, got an array with shape {image.shape}.")
    return image.reshape(-1, order="F")


def unvec(b: np.ndarray, M: int, N: int) -> np.ndarray:
    """
    Inverse of vec: fold a vector of length MN back into an M x N image.
    """
    b = np.asarray(b)
    if b.ndim != 1 or b.size != M * N:
        raise ShapeError(f"Cannot fold a vector of length {b.size} into a {M}x{N} image.")
    return b.reshape((M, N), order="F")


# --------------------- Unitary DFT ---------------------

def dft_matrix(m: int) -> np.ndarray:
    """
    The unitary DFT matrix with entries exp(i 2 pi j k / m) / sqrt(m), j, k = 0..m-1.
    """
    idx = np.arange(m)
    return np.exp(2j * np.pi * np.outer(idx, idx) / m) / np.sqrt(m)


def dft2(image: np.ndarray) -> np.ndarray:
    """
    Two-dimensional unitary DFT, F_M^* B conj(F_N).

    Both factors reduce to forward FFTs along their axis with orthonormal scaling, so the
    transform preserves the Frobenius norm and reduces to the 1D DFT when N = 1.
    """
    return scipy.fft.fft2(np.asarray(image, dtype=np.float64), norm="ortho")


def dft2_direct(image: np.ndarray) -> np.ndarray:
    """
    Direct O(MN(M+N)) evaluation of dft2 through explicit DFT matrices. Used as an oracle.
    """
    image = np.asarray(image, dtype=np.float64)
    M, N = image.shape
    return dft_matrix(M).conj().T @ image @ dft_matrix(N).conj()


def is_conjugate_symmetric(spectrum: np.ndarray, rtol: float = 1e-8) -> bool:
    """
    Check C[j, k] == conj(C[-j mod M, -k mod N]), the condition for a real inverse transform.
    """
    M, N = spectrum.shape
    mirrored = spectrum[np.ix_(-np.arange(M) % M, -np.arange(N) % N)].conj()
    scale = max(np.linalg.norm(spectrum), np.finfo(float).tiny)
    return np.linalg.norm(spectrum - mirrored) <= rtol * scale


def idft2(spectrum: np.ndarray, real: bool = True) -> np.ndarray:
    """
    Inverse of dft2.

    :param spectrum: Complex M x N coefficient grid.
    :param real: Demand a real image. The spectrum must then be conjugate-symmetric and
        the rounding-level imaginary residue is discarded.
    """
    spectrum = np.asarray(spectrum, dtype=np.complex128)
    if real and not is_conjugate_symmetric(spectrum):
        raise ValueError("Spectrum is not conjugate-symmetric, so its inverse transform is not real.")

    image = scipy.fft.ifft2(spectrum, norm="ortho")
    return image.real if real else image


# --------------------- Operators ---------------------

class LinearOperator(ScipyLinearOperator):
    """
    Base class for the toolkit's operators. Subclasses set `kind` and implement
    _matvec / _rmatvec on flat vectors. Instances are immutable once constructed.
    """

    kind: str = "abstract"

    def __init__(self, shape: tuple[int, int]):
        super().__init__(dtype=np.float64, shape=shape)

    def __repr__(self):
        return f"{type(self).__name__}(kind='{self.kind}', shape={self.shape})"


class DenseOperator(LinearOperator):
    """
    Wraps an explicit m x n matrix.
    """

    kind = "dense"

    def __init__(self, matrix: np.ndarray):
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.ndim != 2:
            raise ShapeError(f"Dense operator needs a 2D matrix, got shape {matrix.shape}.")
        super().__init__(matrix.shape)
        self.matrix = matrix

    def _matvec(self, x):
        return self.matrix @ np.ravel(x)

    def _rmatvec(self, y):
        return self.matrix.T @ np.ravel(y)


class KroneckerOperator(LinearOperator):
    """
    The separable operator A1 (x) A2 with A1 of size N x N and A2 of size M x M, acting on
    column-stacked M x N images as vec(A2 X A1^T).
    """

    kind = "kronecker"

    def __init__(self, A1: np.ndarray, A2: np.ndarray):
        A1 = np.asarray(A1, dtype=np.float64)
        A2 = np.asarray(A2, dtype=np.float64)
        for name, factor in (("A1", A1), ("A2", A2)):
            if factor.ndim != 2 or factor.shape[0] != factor.shape[1]:
                raise ShapeError(f"Kronecker factor {name} must be square, got shape {factor.shape}.")
        self.A1 = A1
        self.A2 = A2
        self.M = A2.shape[0]
        self.N = A1.shape[0]
        size = self.M * self.N
        super().__init__((size, size))

    def _matvec(self, x):
        X = unvec(np.ravel(x), self.M, self.N)
        return vec(self.A2 @ X @ self.A1.T)

    def _rmatvec(self, y):
        Y = unvec(np.ravel(y), self.M, self.N)
        return vec(self.A2.T @ Y @ self.A1)


class Blur2dOperator(LinearOperator):
    """
    Convolution of an M x N image with a point spread function.

    The PSF pixel at `center` is the one that maps an input pixel onto itself. With the
    periodic boundary the image wraps around (circular convolution, diagonalized by dft2);
    with the zero boundary pixels outside the image are taken as zero.
    """

    kind = "blur2d"

    def __init__(self, psf: np.ndarray, image_shape: tuple[int, int],
                 boundary: Boundary = "zero", center: tuple[int, int] | None = None):
        psf = np.asarray(psf, dtype=np.float64)
        if psf.ndim != 2:
            raise ShapeError(f"PSF must be a 2D array, got shape {psf.shape}.")
        if boundary not in ("zero", "periodic"):
            raise ValueError(f"Unsupported boundary '{boundary}'. Use 'zero' or 'periodic'.")

        M, N = image_shape
        p, q = psf.shape
        if center is None:
            center = (p // 2, q // 2)
        if not (0 <= center[0] < p and 0 <= center[1] < q):
            raise ValueError(f"PSF center {center} lies outside the {p}x{q} PSF.")
        if boundary == "periodic" and (p > M or q > N):
            raise ShapeError(f"A {p}x{q} PSF does not fit a periodic {M}x{N} image.")

        self.psf = psf
        self.M, self.N = M, N
        self.boundary = boundary
        self.center = center
        self._transfer = self._build_transfer() if boundary == "periodic" else None
        super().__init__((M * N, M * N))

    def _build_transfer(self) -> np.ndarray:
        padded = np.zeros((self.M, self.N))
        p, q = self.psf.shape
        padded[:p, :q] = self.psf
        padded = np.roll(padded, shift=(-self.center[0], -self.center[1]), axis=(0, 1))
        return scipy.fft.fft2(padded)

    def transfer_function(self) -> np.ndarray:
        """
        Eigenvalues of the periodic blur in the dft2 basis: dft2(A x) = H * dft2(x).
        """
        if self._transfer is None:
            raise ValueError("Only periodic blurs are diagonalized by the DFT.")
        return self._transfer

    def _matvec(self, x):
        X = unvec(np.ravel(x), self.M, self.N)
        if self.boundary == "periodic":
            return vec(scipy.fft.ifft2(self._transfer * scipy.fft.fft2(X)).real)

        full = scipy.signal.fftconvolve(X, self.psf, mode="full")
        r, c = self.center
        return vec(full[r:r + self.M, c:c + self.N])

    def _rmatvec(self, y):
        Y = unvec(np.ravel(y), self.M, self.N)
        if self.boundary == "periodic":
            return vec(scipy.fft.ifft2(self._transfer.conj() * scipy.fft.fft2(Y)).real)

        # Correlation with the PSF: convolve with the flipped kernel and shift the window.
        full = scipy.signal.fftconvolve(Y, self.psf[::-1, ::-1], mode="full")
        p, q = self.psf.shape
        r = p - 1 - self.center[0]
        c = q - 1 - self.center[1]
        return vec(full[r:r + self.M, c:c + self.N])


def identity_operator(M: int, N: int = 1) -> KroneckerOperator:
    """
    Identity on M x N images.
    """
    return KroneckerOperator(np.eye(N), np.eye(M))


def apply(op: ScipyLinearOperator, x: np.ndarray) -> np.ndarray:
    """
    Operator-vector product A x with a length check.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size != op.shape[1]:
        raise ShapeError(f"Operator with shape {op.shape} cannot be applied to a vector of shape {x.shape}.")
    return op.matvec(x)


def apply_adjoint(op: ScipyLinearOperator, y: np.ndarray) -> np.ndarray:
    """
    Adjoint product A^T y with a length check.
    """
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 1 or y.size != op.shape[0]:
        raise ShapeError(f"Adjoint of operator with shape {op.shape} cannot be applied to shape {y.shape}.")
    return op.rmatvec(y)


def materialize(op: ScipyLinearOperator) -> np.ndarray:
    """
    Build the dense matrix of an operator column by column. Small problems only.
    """
    m, n = op.shape
    dense = np.empty((m, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = 1.0
        dense[:, j] = op.matvec(e)
    return dense


# --------------------- SVD ---------------------

@dataclass(frozen=True)
class SvdTriple:
    U: np.ndarray
    S: np.ndarray
    V: np.ndarray

    def reconstruct(self) -> np.ndarray:
        k = self.S.size
        return (self.U[:, :k] * self.S) @ self.V[:, :k].T


class KronSvd:
    """
    SVD of A1 (x) A2 kept in factored form.

    The singular values S1 (x) S2 are sorted nonincreasing (ties by ascending Kronecker
    index) and the singular vectors are reconstructed on demand from the factor SVDs, so
    the MN x MN matrices are never formed.
    """

    def __init__(self, A1: np.ndarray, A2: np.ndarray):
        A1 = np.asarray(A1, dtype=np.float64)
        A2 = np.asarray(A2, dtype=np.float64)
        for name, factor in (("A1", A1), ("A2", A2)):
            if factor.ndim != 2 or factor.shape[0] != factor.shape[1]:
                raise ShapeError(f"Kronecker factor {name} must be square, got shape {factor.shape}.")

        self.U1, self.S1, V1t = scipy.linalg.svd(A1)
        self.U2, self.S2, V2t = scipy.linalg.svd(A2)
        self.V1, self.V2 = V1t.T, V2t.T
        self.M = A2.shape[0]

        products = np.kron(self.S1, self.S2)
        self.permutation = np.argsort(-products, kind="stable")
        self.singular_values = products[self.permutation]

    def __len__(self):
        return self.singular_values.size

    def index_pair(self, j: int) -> tuple[int, int]:
        """
        Factor indices (i1, i2) of the j-th sorted singular triple.
        """
        return divmod(int(self.permutation[j]), self.M)

    def u_column(self, j: int) -> np.ndarray:
        i1, i2 = self.index_pair(j)
        return np.kron(self.U1[:, i1], self.U2[:, i2])

    def v_column(self, j: int) -> np.ndarray:
        i1, i2 = self.index_pair(j)
        return np.kron(self.V1[:, i1], self.V2[:, i2])

    def to_triple(self) -> SvdTriple:
        """
        Materialize the sorted SVD. Only for factors small enough to hold MN x MN matrices.
        """
        U = np.kron(self.U1, self.U2)[:, self.permutation]
        V = np.kron(self.V1, self.V2)[:, self.permutation]
        return SvdTriple(U, self.singular_values.copy(), V)


def kron_svd(A1: np.ndarray, A2: np.ndarray) -> KronSvd:
    return KronSvd(A1, A2)
