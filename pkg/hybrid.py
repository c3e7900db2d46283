"""
Hybrid regularization: Tikhonov on the projected bidiagonal problem, with the parameter chosen per
iteration by GCV or weighted GCV, and the small dense Tikhonov solver used as an oracle.
"""
import csv
import logging
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np
import scipy.linalg
import scipy.optimize

from gkb import BidiagFactorization
from operators import SvdTriple

logger = logging.getLogger(__name__)

GRID_POINTS = 50
STAGNATION_RTOL = 1e-6
STAGNATION_COUNT = 5


def svd_bidiagonal(B: np.ndarray) -> SvdTriple:
    """
    Full SVD of a (k+1) x k lower bidiagonal matrix: U is (k+1) x (k+1), V is k x k.
    """
    U, s, Vt = scipy.linalg.svd(np.asarray(B, dtype=np.float64), full_matrices=True)
    return SvdTriple(U, s, Vt.T)


@dataclass
class ProjectedTikhonovSolution:
    lam: float
    y: np.ndarray
    svd: SvdTriple = field(repr=False)
    x: Optional[np.ndarray] = field(default=None, repr=False)


def _filtered_coefficients(svd: SvdTriple, theta1: float, lam: float) -> np.ndarray:
    s = svd.S
    with np.errstate(divide="ignore", invalid="ignore"):
        coef = np.where(s > 0, s / (s ** 2 + lam ** 2), 0.0)
    return theta1 * coef * svd.U[0, :s.size]


def projected_solution(svd: SvdTriple, theta1: float, lam: float) -> np.ndarray:
    """
    y = theta1 * sum_j sigma_j u_j(1) / (sigma_j^2 + lam^2) v_j.
    """
    return svd.V @ _filtered_coefficients(svd, theta1, lam)


def projected_residual_norm(svd: SvdTriple, theta1: float, lam: float) -> float:
    """
    ||theta1 e1 - B y_lam|| from the singular values alone.
    """
    s = svd.S
    phi = s ** 2 / (s ** 2 + lam ** 2) if lam > 0 else (s > 0).astype(np.float64)
    u1 = svd.U[0, :]
    return float(theta1 * np.sqrt(np.sum(((1 - phi) * u1[:s.size]) ** 2) + np.sum(u1[s.size:] ** 2)))


def tikhonov_projected(fac: BidiagFactorization, lam: float, svd: Optional[SvdTriple] = None) -> ProjectedTikhonovSolution:
    if lam < 0:
        raise ValueError(f"Regularization parameter lambda={lam} must be nonnegative.")
    if svd is None:
        svd = svd_bidiagonal(fac.B)
    y = projected_solution(svd, fac.theta1, lam)
    return ProjectedTikhonovSolution(lam, y, svd, fac.solution(y))


# --------------------- Parameter choice ---------------------

class LambdaSelection(NamedTuple):
    lam: float
    omega: float
    flag: Optional[str] = None


def gcv_functional(svd: SvdTriple, theta1: float, lam: float, omega: float = 1.0) -> float:
    """
    (k+1) ||(I - B B_lam^+) theta1 e1||^2 / trace(I - omega B B_lam^+)^2 on the projected problem.
    """
    s = svd.S
    k1 = svd.U.shape[0]
    phi = s ** 2 / (s ** 2 + lam ** 2)
    u1 = svd.U[0, :]
    residual2 = theta1 ** 2 * (np.sum(((1 - phi) * u1[:s.size]) ** 2) + np.sum(u1[s.size:] ** 2))
    trace = k1 - omega * np.sum(phi)
    if trace <= np.finfo(float).tiny:
        return np.inf
    return float(k1 * residual2 / trace ** 2)


def _minimize_gcv(svd: SvdTriple, theta1: float, omega: float) -> LambdaSelection:
    if omega <= 0:
        return LambdaSelection(0.0, omega, "degenerate-weight")
    sigma1 = float(svd.S[0]) if svd.S.size else 0.0
    if sigma1 <= 0:
        return LambdaSelection(0.0, omega, "flat")

    log_grid = np.linspace(np.log(1e-12 * sigma1), np.log(10 * sigma1), GRID_POINTS)
    values = np.array([gcv_functional(svd, theta1, np.exp(t), omega) for t in log_grid])
    finite = np.isfinite(values)
    if not finite.any():
        return LambdaSelection(0.0, omega, "degenerate-denominator")
    top, bottom = values[finite].max(), values[finite].min()
    if top - bottom <= 1e-14 * max(abs(top), np.finfo(float).tiny):
        return LambdaSelection(0.0, omega, "flat")

    i = int(np.nanargmin(np.where(finite, values, np.nan)))
    if i == 0 or i == GRID_POINTS - 1 or not (finite[i - 1] and finite[i + 1]):
        return LambdaSelection(float(np.exp(log_grid[i])), omega)

    def objective(t):
        return gcv_functional(svd, theta1, np.exp(t), omega)

    try:
        result = scipy.optimize.minimize_scalar(objective, bracket=(log_grid[i - 1], log_grid[i], log_grid[i + 1]),
                                                method="golden")
        t_best = result.x if result.fun <= values[i] else log_grid[i]
    except ValueError:
        t_best = log_grid[i]
    return LambdaSelection(float(np.exp(t_best)), omega)


def gcv_select(fac: BidiagFactorization, svd: Optional[SvdTriple] = None) -> LambdaSelection:
    return _minimize_gcv(svd if svd is not None else svd_bidiagonal(fac.B), fac.theta1, 1.0)


def wgcv_select(fac: BidiagFactorization, omega: float, svd: Optional[SvdTriple] = None) -> LambdaSelection:
    return _minimize_gcv(svd if svd is not None else svd_bidiagonal(fac.B), fac.theta1, omega)


def adaptive_omega(svd: SvdTriple, theta1: float) -> float:
    """
    Weight that zeroes the derivative of the weighted GCV functional when lambda equals the smallest
    singular value of B_k.
    """
    s = svd.S
    k1 = svd.U.shape[0]
    k = s.size
    bhat = theta1 * svd.U[0, :]
    alpha = s[-1]
    alpha2 = alpha ** 2

    t0 = np.sum(np.abs(bhat[k:]) ** 2)
    s2 = s ** 2
    tt = 1.0 / (s2 + alpha2)
    t1 = np.sum(s2 * tt)
    t3 = np.sum(np.abs(bhat[:k] * alpha * s) ** 2 * np.abs(tt ** 3))
    t4 = np.sum((s * tt) ** 2)
    t5 = np.sum(np.abs(alpha2 * bhat[:k] * tt) ** 2)
    v2 = np.sum(np.abs(bhat[:k] * s) ** 2 * np.abs(tt ** 3))

    denom = t1 * t3 + t4 * (t5 + t0)
    if denom <= 0:
        return 1.0
    return float(k1 * alpha2 * v2 / denom)


class GcvSelector:
    """
    Standard GCV, omega = 1 at every iteration.
    """

    name = "gcv"

    def reset(self):
        pass

    def select(self, svd: SvdTriple, theta1: float) -> LambdaSelection:
        return _minimize_gcv(svd, theta1, 1.0)


class WgcvSelector:
    """
    Weighted GCV with an adaptive weight: each iteration proposes omega_k = min(1, adaptive_omega) and the
    functional is minimized with the mean of the proposals so far.
    """

    name = "wgcv"

    def __init__(self):
        self.omegas: list[float] = []

    def reset(self):
        self.omegas = []

    def select(self, svd: SvdTriple, theta1: float) -> LambdaSelection:
        self.omegas.append(min(1.0, adaptive_omega(svd, theta1)))
        return _minimize_gcv(svd, theta1, float(np.mean(self.omegas)))


SELECTORS = {"gcv": GcvSelector, "wgcv": WgcvSelector}


def make_selector(name: str):
    if name not in SELECTORS:
        raise ValueError(f"Unknown parameter selector '{name}'. Use one of {sorted(SELECTORS)}.")
    return SELECTORS[name]()


# --------------------- Hybrid iteration ---------------------

@dataclass
class HybridRun:
    """
    :param trace: Rows (k, lambda_k, regularized residual norm, solution norm).
    :param coefficients: Regularized projected solution y for every k.
    """
    fac: BidiagFactorization
    method: str = "wgcv"
    trace: list = field(default_factory=list, repr=False)
    coefficients: dict = field(default_factory=dict, repr=False)
    lambdas: dict = field(default_factory=dict, repr=False)
    stop_iteration: int = 0
    reason: str = "max-iter"
    flags: list = field(default_factory=list, repr=False)
    _count: int = field(default=0, repr=False)

    def solution_at(self, k: int) -> np.ndarray:
        if k == 0:
            return np.zeros(self.fac.A.shape[1])
        return self.fac.W[:, :k] @ self.coefficients[k]

    @property
    def solution(self) -> np.ndarray:
        return self.solution_at(self.stop_iteration)

    def advance(self, k: int, svd: SvdTriple, selector, stagnation: bool = True) -> bool:
        """
        Regularize the projected problem of iteration k. Returns True once the regularized residual has
        stagnated for five iterations in a row.
        """
        choice = selector.select(svd, self.fac.theta1)
        if choice.flag:
            self.flags.append((k, choice.flag))
            logger.debug(f"hybrid: k={k} lambda selection flagged '{choice.flag}'")

        y = projected_solution(svd, self.fac.theta1, choice.lam)
        residual = projected_residual_norm(svd, self.fac.theta1, choice.lam)
        previous = self.trace[-1][2] if self.trace else None
        self.coefficients[k] = y
        self.lambdas[k] = choice.lam
        self.trace.append((k, choice.lam, residual, float(np.linalg.norm(y))))
        self.stop_iteration = k

        if previous is not None and previous > 0 and abs(residual - previous) / previous <= STAGNATION_RTOL:
            self._count += 1
        else:
            self._count = 0
        if stagnation and self._count >= STAGNATION_COUNT:
            self.reason = "leveled-off"
            return True
        return False


def leading_svds(fac: BidiagFactorization) -> list[SvdTriple]:
    """
    SVD of every leading block B_1 .. B_k of a completed factorization.
    """
    B = fac.B
    return [svd_bidiagonal(B[:k + 1, :k]) for k in range(1, fac.k + 1)]


def hybrid_run(A, b: np.ndarray, k_max: int, selector=None, stagnation: bool = True) -> HybridRun:
    """
    Bidiagonalize and regularize the projected problem at every iteration.

    :param selector: GcvSelector or WgcvSelector instance; weighted GCV by default.
    :param stagnation: Stop on the regularized-residual stagnation rule. Otherwise run to k_max or
        breakdown.
    """
    selector = selector if selector is not None else WgcvSelector()
    selector.reset()
    fac = BidiagFactorization(A, b, k_max)
    run = HybridRun(fac, selector.name)

    while fac.can_step:
        fac.step()
        if run.advance(fac.k, svd_bidiagonal(fac.B), selector, stagnation):
            break

    if fac.breakdown and run.reason != "leveled-off":
        run.reason = "breakdown"
    logger.info(f"hybrid: {selector.name} stopped at k={run.stop_iteration} ({run.reason})")
    return run


def hybrid_replay(fac: BidiagFactorization, selector, stagnation: bool = True,
                  svds: Optional[list] = None) -> HybridRun:
    """
    The hybrid iteration over an already computed factorization, so it sees the same iterates as other
    rules observing that factorization.

    :param svds: Precomputed leading_svds(fac).
    """
    selector.reset()
    svds = svds if svds is not None else leading_svds(fac)
    run = HybridRun(fac, selector.name)
    for k in range(1, fac.k + 1):
        if run.advance(k, svds[k - 1], selector, stagnation):
            break
    else:
        run.reason = "breakdown" if fac.breakdown else "max-iter"
    return run


# --------------------- Dense oracle ---------------------

def direct_tikhonov(A: np.ndarray, b: np.ndarray, lam: float, svd: Optional[SvdTriple] = None) -> np.ndarray:
    """
    x(lam) = sum_j sigma_j / (sigma_j^2 + lam^2) (u_j^T b) v_j for a small dense A.
    """
    if svd is None:
        U, s, Vt = scipy.linalg.svd(np.asarray(A, dtype=np.float64), full_matrices=False)
        svd = SvdTriple(U, s, Vt.T)
    s = svd.S
    beta = svd.U[:, :s.size].T @ np.asarray(b, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        coef = np.where(s > 0, s / (s ** 2 + lam ** 2), 0.0)
    return svd.V[:, :s.size] @ (coef * beta)


def df_lambda_select(A: np.ndarray, b: np.ndarray, b_hat: np.ndarray, lambdas) -> tuple[float, np.ndarray]:
    """
    Tikhonov parameter whose solution from the noisy data b reproduces the filtered data b_hat best.
    Returns the chosen lambda and the squared distance for every grid value.
    """
    A = np.asarray(A, dtype=np.float64)
    U, s, Vt = scipy.linalg.svd(A, full_matrices=False)
    svd = SvdTriple(U, s, Vt.T)
    distances = np.array([np.sum((b_hat - A @ direct_tikhonov(A, b, lam, svd)) ** 2) for lam in lambdas])
    return float(np.asarray(lambdas)[int(np.argmin(distances))]), distances


def write_lambda_trace_csv(path, run: HybridRun):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["k", "lambda", "residual", "solution_norm"])
        for k, lam, residual, norm in run.trace:
            writer.writerow([k, repr(float(lam)), repr(float(residual)), repr(float(norm))])
