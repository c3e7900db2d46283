"""
Picard-parameter detection and data filtering.

The data is expanded in an orthonormal basis (the unitary 2D DFT of its periodic component, or the left
singular vectors of a small dense operator), the coefficients are put in order of expected decay, and
everything past the index where the tail variance levels off is treated as noise and dropped.
"""
import logging
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Literal, NamedTuple, Optional

import numpy as np
import scipy.fft

from operators import dft2, idft2, unvec, vec
from pps import image_from_periodic, pps_decompose

logger = logging.getLogger(__name__)

OrderingKind = Literal["elliptic", "hyperbolic"]
ORDERINGS = ("hyperbolic", "elliptic")

DEFAULT_EPSILON = 1e-2
# largest relative gap between V(k) and the variance halfway down its tail for k to count as leveled off
PLATEAU_TOLERANCE = 0.25


def default_h(m: int) -> int:
    """
    Step size ceil(m / 100), kept inside [1, m - 1].
    """
    return int(min(max(-(-m // 100), 1), max(m - 1, 1)))


# --------------------- Orderings ---------------------

def folded_frequencies(n: int) -> np.ndarray:
    """
    Absolute integer frequencies min(i, n - i) of a length-n DFT with the zero frequency at index 0.
    """
    i = np.arange(n)
    return np.minimum(i, n - i)


def elliptic_keys(M: int, N: int) -> np.ndarray:
    """
    Squared spatial frequency (j/M)^2 + (s/N)^2 scaled by M^2 N^2 so every key is an exact integer.
    Returned in column-stacked order.
    """
    fM = folded_frequencies(M).astype(np.int64)
    fN = folded_frequencies(N).astype(np.int64)
    grid = (fM[:, None] ** 2) * N ** 2 + (fN[None, :] ** 2) * M ** 2
    return vec(grid)


def hyperbolic_keys(M: int, N: int) -> np.ndarray:
    """
    Products of the absolute frequencies along both axes, i.e. the Kronecker product of the folded
    frequency vectors, in column-stacked order. A singleton axis has only the zero frequency and is
    left out of the product, so an M x 1 signal is ordered by its own frequencies.
    """
    fM = folded_frequencies(M).astype(np.int64)
    fN = folded_frequencies(N).astype(np.int64)
    if N == 1:
        return fM.copy()
    if M == 1:
        return fN.copy()
    return np.kron(fN, fM)


def hyperbolic_keys_componentwise(M: int, N: int, floor_boundary: bool = False) -> np.ndarray:
    """
    Case-by-case evaluation of the hyperbolic keys at position M(j-1) + s, for column j and row s.

    With floor_boundary the quadrant cases switch at j <= floor(N/2) and s <= floor(M/2) as they are
    usually written. For odd sizes that folds the middle frequency one step too far, so the default
    switches one index later, which agrees with the Kronecker construction for every size.
    """
    if M == 1 or N == 1:
        return hyperbolic_keys(M, N)

    keys = np.empty(M * N, dtype=np.int64)
    offset = 0 if floor_boundary else 1
    for j in range(1, N + 1):
        col = (j - 1) if j <= N // 2 + offset else (N - j + 1)
        for s in range(1, M + 1):
            row = (s - 1) if s <= M // 2 + offset else (M - s + 1)
            keys[M * (j - 1) + s - 1] = col * row
    return keys


@dataclass(frozen=True)
class OrderingPermutation:
    """
    Stable sort of the frequency keys of an M x N grid. Hyperbolic ties are broken by the elliptic key.

    :param perm: 0-based column-stacked indices, lowest key first.
    :param keys: Integer keys in column-stacked order.
    """
    kind: str
    dims: tuple[int, int]
    perm: np.ndarray = field(repr=False)
    keys: np.ndarray = field(repr=False)

    def __len__(self):
        return self.perm.size

    def sorted_keys(self) -> np.ndarray:
        return self.keys[self.perm]


@lru_cache(maxsize=64)
def _ordering(kind: str, M: int, N: int) -> OrderingPermutation:
    if M < 1 or N < 1:
        raise ValueError(f"Image dimensions must be positive, got {M}x{N}.")
    if kind == "elliptic":
        keys = elliptic_keys(M, N)
    elif kind == "hyperbolic":
        keys = hyperbolic_keys(M, N)
    else:
        raise ValueError(f"Unknown ordering '{kind}'. Use one of {ORDERINGS}.")

    if kind == "hyperbolic":
        # equal products, e.g. the whole zero-frequency cross, go nearest the origin first
        perm = np.lexsort((elliptic_keys(M, N), keys))
    else:
        perm = np.argsort(keys, kind="stable")
    keys.setflags(write=False)
    perm.setflags(write=False)
    return OrderingPermutation(kind, (M, N), perm, keys)


def elliptic_order(M: int, N: int) -> OrderingPermutation:
    return _ordering("elliptic", int(M), int(N))


def hyperbolic_order(M: int, N: int) -> OrderingPermutation:
    return _ordering("hyperbolic", int(M), int(N))


def get_ordering(kind: str, M: int, N: int) -> OrderingPermutation:
    return _ordering(kind, int(M), int(N))


@dataclass(frozen=True)
class SpectralCoefficients:
    """
    Vectorized dft2 coefficients of a periodic component together with the ordering used to filter them.
    """
    beta: np.ndarray = field(repr=False)
    ordering: OrderingPermutation

    def ordered(self) -> np.ndarray:
        return self.beta[self.ordering.perm]


def spectral_coefficients(P: np.ndarray, kind: str = "hyperbolic") -> SpectralCoefficients:
    M, N = np.shape(P)
    return SpectralCoefficients(vec(dft2(P)), get_ordering(kind, M, N))


# --------------------- Picard parameter ---------------------

def variance_sequence(beta: np.ndarray) -> np.ndarray:
    """
    V(k) = (1 / (m - k + 1)) * sum_{j >= k} |beta_j|^2 for already ordered coefficients.
    """
    beta = np.asarray(beta)
    if beta.ndim != 1 or beta.size == 0:
        raise ValueError("Variance sequence needs a non-empty coefficient vector.")
    m = beta.size
    power = np.abs(beta) ** 2
    tail = np.cumsum(power[::-1])[::-1]
    return tail / (m - np.arange(m))


@dataclass
class PicardEstimate:
    """
    :param k0: 1-based Picard parameter. Equals m when nothing was detected.
    :param V: The variance sequence the detection ran on.
    :param noise_variance_estimate: V(k0).
    :param detected: False when no index satisfied the leveling-off condition.
    :param skipped: 1-based indices where V(k) = 0 left the condition undefined.
    """
    k0: int
    V: np.ndarray = field(repr=False)
    h: int
    eps: float
    noise_variance_estimate: float
    detected: bool = True
    skipped: list = field(default_factory=list, repr=False)

    @property
    def retained(self) -> int:
        """Number of leading ordered coefficients the filter keeps."""
        return self.V.size if not self.detected else self.k0 - 1


def picard_parameter(V: np.ndarray, h: int, eps: float = DEFAULT_EPSILON,
                     tolerance: float = PLATEAU_TOLERANCE) -> PicardEstimate:
    """
    Smallest k with |V(k + h) - V(k)| / V(k) <= eps whose level also holds halfway down the tail,
    |V(k + (m - k + 1) // 2) - V(k)| <= tolerance * V(k).

    With h close to eps * m the first condition alone also accepts any k whose next h coefficients carry
    almost no energy, even while most of the signal is still ahead. The second one rejects those.

    :param V: Variance sequence of length m.
    :param h: Look-ahead step, 1 <= h <= m - 1.
    :param eps: Relative-change bound.
    :param tolerance: Relative bound on the drop from V(k) to the middle of its tail.
    """
    V = np.asarray(V, dtype=np.float64)
    m = V.size
    if not 1 <= h <= m - 1:
        raise ValueError(f"Step h={h} must lie in [1, {m - 1}] for a sequence of length {m}.")
    if eps <= 0:
        raise ValueError(f"Relative-change bound eps={eps} must be positive.")
    if tolerance <= 0:
        raise ValueError(f"Plateau tolerance={tolerance} must be positive.")

    head = V[:m - h]
    ahead = V[h:]
    defined = head > 0
    scale = np.where(defined, head, 0.0)
    k = np.arange(m - h)
    halfway = V[k + (m - k) // 2]
    satisfied = defined & (np.abs(ahead - head) <= eps * scale) & (np.abs(halfway - head) <= tolerance * scale)
    skipped = (np.flatnonzero(~defined) + 1).tolist()

    hits = np.flatnonzero(satisfied)
    if hits.size == 0:
        logger.info(f"spectral_filter: no Picard parameter detected (h={h}, eps={eps}), keeping all {m} coefficients")
        return PicardEstimate(m, V, h, eps, float(V[m - 1]), detected=False, skipped=skipped)

    k0 = int(hits[0]) + 1
    return PicardEstimate(k0, V, h, eps, float(V[k0 - 1]), detected=True, skipped=skipped)


# --------------------- Filters ---------------------

class FilteredData(NamedTuple):
    filtered: np.ndarray
    estimate: PicardEstimate
    mask: Optional[np.ndarray] = None


def retention_mask(ordering: OrderingPermutation, retained: int) -> np.ndarray:
    """
    Boolean M x N grid of the coefficients kept when the first `retained` ordered positions survive.
    The mask is closed under conjugate symmetry so the filtered image stays real.
    """
    M, N = ordering.dims
    flat = np.zeros(M * N, dtype=bool)
    flat[ordering.perm[:max(retained, 0)]] = True
    mask = unvec(flat, M, N)
    mirrored = mask[np.ix_(-np.arange(M) % M, -np.arange(N) % N)]
    return mask | mirrored


def centered_mask_image(mask: np.ndarray) -> np.ndarray:
    """
    Mask as a float image with the zero frequency moved to the center, for display.
    """
    return scipy.fft.fftshift(mask.astype(np.float64))


def truncate_spectrum(P: np.ndarray, ordering: OrderingPermutation, retained: int) -> tuple[np.ndarray, np.ndarray]:
    """
    Zero every dft2 coefficient of P outside the retention mask and transform back.
    """
    mask = retention_mask(ordering, retained)
    spectrum = np.where(mask, dft2(P), 0.0)
    return idft2(spectrum, real=True), mask


def filter_data_2d(B: np.ndarray, kind: str = "hyperbolic", h: Optional[int] = None,
                   eps: float = DEFAULT_EPSILON, k0: Optional[int] = None) -> FilteredData:
    """
    Remove the noise-dominated Fourier coefficients of an image.

    The image is split into periodic and smooth parts, the periodic part's spectrum is ordered by `kind`,
    the Picard parameter is detected on it (or taken from `k0`) and every coefficient from position k0 on is
    zeroed. The result is the image whose periodic component is the truncated one, i.e. P_hat plus its own
    smooth part, so filtering it again with the same settings returns it unchanged.

    :param h: Look-ahead step for detection. Defaults to ceil(m / 100).
    :param k0: Force the Picard parameter instead of detecting it.
    """
    B = np.asarray(B, dtype=np.float64)
    if B.ndim != 2:
        raise ValueError(f"Expected a 2D image, got shape {B.shape}.")
    M, N = B.shape
    m = M * N

    ordering = get_ordering(kind, M, N)
    if m == 1:
        V = np.abs(B.ravel()) ** 2
        estimate = PicardEstimate(1, V, 1, eps, float(V[0]), detected=False)
        return FilteredData(B.copy(), estimate, np.ones((1, 1), dtype=bool))

    P, _ = pps_decompose(B)
    coefficients = spectral_coefficients(P, kind)
    V = variance_sequence(coefficients.ordered())

    if h is None:
        h = default_h(m)
    if k0 is None:
        estimate = picard_parameter(V, h, eps)
    else:
        if not 1 <= k0 <= m:
            raise ValueError(f"Forced Picard parameter k0={k0} must lie in [1, {m}].")
        estimate = PicardEstimate(int(k0), V, h, eps, float(V[k0 - 1]), detected=k0 < m)

    P_hat, mask = truncate_spectrum(P, ordering, estimate.retained)
    logger.info(f"spectral_filter: {kind} k0={estimate.k0} of {m}, V(k0)={estimate.noise_variance_estimate:.3e}, "
                f"kept {int(mask.sum())} coefficients")
    return FilteredData(image_from_periodic(P_hat), estimate, mask)


def filter_data_1d(b: np.ndarray, h: Optional[int] = None, eps: float = DEFAULT_EPSILON,
                   k0: Optional[int] = None) -> FilteredData:
    """
    filter_data_2d for a signal, treated as an m x 1 image.
    """
    b = np.asarray(b, dtype=np.float64).ravel()
    result = filter_data_2d(b[:, None], "hyperbolic", h, eps, k0)
    return FilteredData(result.filtered.ravel(), result.estimate, result.mask)


def filter_data_svd(U: np.ndarray, b: np.ndarray, h: Optional[int] = None,
                    eps: float = DEFAULT_EPSILON) -> FilteredData:
    """
    Filter b in the basis of the columns of a square orthogonal U (the left singular vectors of a
    small dense operator, ordered by decreasing singular value).
    """
    U = np.asarray(U, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if U.ndim != 2 or U.shape[0] != U.shape[1]:
        raise ValueError(f"U must be square, got shape {U.shape}.")
    m = U.shape[0]
    if b.shape != (m,):
        raise ValueError(f"Data vector of shape {b.shape} does not match U of shape {U.shape}.")
    if np.linalg.norm(U.T @ U - np.eye(m)) > 1e-8:
        raise ValueError("U does not have orthonormal columns (tolerance 1e-8).")

    beta = U.T @ b
    V = variance_sequence(beta)
    if m == 1:
        return FilteredData(b.copy(), PicardEstimate(1, V, 1, eps, float(V[0]), detected=False))

    estimate = picard_parameter(V, default_h(m) if h is None else h, eps)
    r = estimate.retained
    return FilteredData(U[:, :r] @ beta[:r], estimate)
