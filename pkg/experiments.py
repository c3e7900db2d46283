"""
Synthetic test problems, seeded noise, MSD scoring and the multi-realization comparison of stopping rules.

One experiment cell is a (problem, noise level, replicate) triple. Every cell draws its own noise, runs a
single bidiagonalization and lets all stopping rules and hybrid selectors observe that same factorization,
then scores each choice against the best iterate the factorization had to offer.
"""
import csv
import hashlib
import logging
import time
from dataclasses import dataclass, field
from math import ceil
from typing import Optional

import numpy as np
import scipy.linalg

from config import DEFAULT_IMAGE_SIZE, ExperimentConfig, parse_size
from gkb import BidiagFactorization, gkb_run
from hybrid import hybrid_replay, leading_svds, make_selector, projected_solution
from image_io import read_pgm
from operators import (Blur2dOperator, DenseOperator, KroneckerOperator, LinearOperator, identity_operator,
                       unvec, vec)
from registry import Entry, call_spec, entries_to_dict, entry, parse_spec
from stopping import DfRule, DiscrepancyRule, LCurveRule, NcpRule, StoppingRun, run_stopping_rules
from workers import Job, run_jobs

logger = logging.getLogger(__name__)

RESULTS_HEADER = ["problem", "method", "ordering", "alpha", "seed", "stop_iter", "selected_iter", "opt_iter",
                  "msd_selected", "msd_opt", "wall_time_ms"]
SUMMARY_HEADER = ["problem", "method", "ordering", "alpha", "n", "min", "q1", "median", "q3", "max"]

PLS_METHODS = ("df", "lcurve", "ncp", "discrepancy")
HYBRID_METHODS = ("wgcv", "gcv")
NO_ORDERING = "none"
TIKHONOV_GRID = np.logspace(-8, 1, 37)


# --------------------- Test problems ---------------------

@dataclass
class TestProblem:
    """
    :param dims: Image shape (M, N) of the data; (n, 1) for signals.
    :param notes: Generator parameters, for logs and reports.
    """
    name: str
    A: LinearOperator
    x_true: np.ndarray = field(repr=False)
    dims: tuple
    notes: dict = field(default_factory=dict)
    b_true: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.b_true = self.A.matvec(self.x_true)
        if not np.all(np.isfinite(self.b_true)) or not np.any(self.b_true):
            raise ValueError(f"Test problem '{self.name}' has noiseless data that is zero or not finite.")


def _dims(size) -> tuple[int, int]:
    if isinstance(size, (tuple, list)):
        return parse_size(f"{size[0]}x{size[1]}")
    return parse_size(str(size))


def procedural_image(M: int, N: int) -> np.ndarray:
    """
    Deterministic test image of rectangles, disks and point sources with values spanning [0, 1].
    """
    R, C = np.meshgrid((np.arange(M) + 0.5) / M, (np.arange(N) + 0.5) / N, indexing="ij")
    X = np.zeros((M, N))
    X[(R > 0.15) & (R < 0.45) & (C > 0.10) & (C < 0.50)] = 0.6
    X[(R > 0.60) & (R < 0.85) & (C > 0.20) & (C < 0.35)] = 0.4
    X += 0.8 * (((R - 0.65) ** 2 + (C - 0.70) ** 2) < 0.15 ** 2)
    X += 0.3 * (((R - 0.30) ** 2 + (C - 0.75) ** 2) < 0.10 ** 2)
    for r, c in ((0.10, 0.90), (0.85, 0.55), (0.50, 0.30)):
        X[min(int(r * M), M - 1), min(int(c * N), N - 1)] = 1.0

    span = X.max() - X.min()
    if span <= 0:
        return np.ones((M, N))
    return (X - X.min()) / span


def gaussian_psf(sigma: float) -> np.ndarray:
    """
    Normalized Gaussian PSF truncated at three standard deviations. sigma = 0 gives a delta.
    """
    if sigma < 0:
        raise ValueError(f"PSF standard deviation sigma={sigma} must be nonnegative.")
    half = int(ceil(3 * sigma))
    if half == 0:
        return np.ones((1, 1))
    t = np.arange(-half, half + 1)
    g = np.exp(-t ** 2 / (2 * sigma ** 2))
    psf = np.outer(g, g)
    return psf / psf.sum()


def motion_psf(length: int, angle: float = 0.0) -> np.ndarray:
    """
    Normalized line PSF of the given length in pixels, rotated by angle degrees.
    """
    if length < 1:
        raise ValueError(f"Motion length={length} must be at least 1.")
    size = length if length % 2 == 1 else length + 1
    center = size // 2
    psf = np.zeros((size, size))
    t = np.linspace(-(length - 1) / 2, (length - 1) / 2, 4 * length)
    theta = np.deg2rad(angle)
    rows = np.clip(np.rint(center - t * np.sin(theta)).astype(int), 0, size - 1)
    cols = np.clip(np.rint(center + t * np.cos(theta)).astype(int), 0, size - 1)
    psf[rows, cols] = 1.0
    return psf / psf.sum()


def gaussian_toeplitz(n: int, sigma: float) -> np.ndarray:
    """
    Banded symmetric Toeplitz matrix of a 1D Gaussian kernel with unit mass.
    """
    half = int(ceil(3 * sigma))
    if half == 0:
        return np.eye(n)
    t = np.arange(n)
    column = np.where(t <= half, np.exp(-t ** 2 / (2 * sigma ** 2)), 0.0)
    mass = 1 + 2 * np.exp(-np.arange(1, half + 1) ** 2 / (2 * sigma ** 2)).sum()
    return scipy.linalg.toeplitz(column) / mass


def _true_image(image: str, size) -> np.ndarray:
    if image == "procedural":
        return procedural_image(*_dims(size))
    return read_pgm(image)


@entry
def gaussian_blur(size=DEFAULT_IMAGE_SIZE, sigma: float = 2.0, boundary: str = "zero",
                  image: str = "procedural") -> TestProblem:
    """
    Gaussian blur of a procedural image, or of a PGM file given as image=<path>.
    """
    X = _true_image(image, size)
    A = Blur2dOperator(gaussian_psf(sigma), X.shape, boundary)
    notes = {"blur": "gaussian", "sigma": sigma, "boundary": boundary, "image": image}
    return TestProblem("gaussian_blur", A, vec(X), X.shape, notes)


@entry
def motion_blur(size=DEFAULT_IMAGE_SIZE, length: int = 9, angle: float = 0.0, boundary: str = "zero",
                image: str = "procedural") -> TestProblem:
    """
    Linear motion blur of the given length and angle.
    """
    X = _true_image(image, size)
    A = Blur2dOperator(motion_psf(length, angle), X.shape, boundary)
    notes = {"blur": "motion", "length": length, "angle": angle, "boundary": boundary, "image": image}
    return TestProblem("motion_blur", A, vec(X), X.shape, notes)


@entry
def separable_kron(size=DEFAULT_IMAGE_SIZE, sigma: float = 2.0) -> TestProblem:
    """
    Separable Gaussian blur A1 (x) A2 built from 1D Toeplitz factors.
    """
    M, N = _dims(size)
    A = KroneckerOperator(gaussian_toeplitz(N, sigma), gaussian_toeplitz(M, sigma))
    return TestProblem("separable_kron", A, vec(procedural_image(M, N)), (M, N), {"blur": "separable", "sigma": sigma})


@entry
def dense_1d(size=64, d: float = 0.25) -> TestProblem:
    """
    Dense 1D gravity-surveying kernel, severely ill-conditioned.
    """
    n = _dims(size)[0] if isinstance(size, (tuple, list)) else int(size)
    if n < 2:
        raise ValueError(f"dense_1d needs at least 2 points, got size={size}.")
    if d <= 0:
        raise ValueError(f"Depth d={d} must be positive.")
    t = (np.arange(n) + 0.5) / n
    K = d / n * (d ** 2 + (t[:, None] - t[None, :]) ** 2) ** -1.5
    x = np.sin(np.pi * t) + 0.5 * np.sin(2 * np.pi * t)
    return TestProblem("dense_1d", DenseOperator(K), x, (n, 1), {"kernel": "gravity", "d": d})


@entry
def identity(size=DEFAULT_IMAGE_SIZE) -> TestProblem:
    """
    Identity operator on a procedural image.
    """
    M, N = _dims(size)
    return TestProblem("identity", identity_operator(M, N), vec(procedural_image(M, N)), (M, N), {"blur": "none"})


PROBLEMS = entries_to_dict([
    gaussian_blur, motion_blur, separable_kron, dense_1d, identity,
    Entry(gaussian_blur.func, "gaussian"), Entry(motion_blur.func, "motion"), Entry(separable_kron.func, "separable"),
])


def gen_problem(spec: str, size=None, **params) -> TestProblem:
    """
    Build a test problem from a spec such as 'gaussian_blur:sigma=1.5,boundary=periodic'.

    :param size: Image size used when the spec does not set one.
    :param params: Parameters that override the spec's.
    """
    name, kwargs = parse_spec(spec)
    if size is not None:
        kwargs.setdefault("size", size)
    kwargs.update(params)
    problem = call_spec(name, PROBLEMS, **kwargs)
    problem.name = spec.strip()
    return problem


# --------------------- Noise ---------------------

@dataclass(frozen=True)
class NoiseSpec:
    """
    :param alpha: Noise level; the standard deviation is sqrt(alpha * max|b_true|^2).
    :param seed: 64-bit seed of the noise stream.
    """
    alpha: float
    seed: int

    def noise_std(self, b_true: np.ndarray) -> float:
        if self.alpha < 0:
            raise ValueError(f"Noise level alpha={self.alpha} must be nonnegative.")
        return float(np.sqrt(self.alpha * np.max(np.abs(b_true)) ** 2))


def gaussian_samples(seed: int, size: int) -> np.ndarray:
    """
    Standard normal samples from Box-Muller on Philox uniforms, so a seed gives the same stream on every
    platform and numpy version.
    """
    generator = np.random.Generator(np.random.Philox(seed))
    half = (size + 1) // 2
    u1 = 1.0 - generator.random(half)
    u2 = generator.random(half)
    radius = np.sqrt(-2.0 * np.log(u1))
    z = np.concatenate([radius * np.cos(2 * np.pi * u2), radius * np.sin(2 * np.pi * u2)])
    return z[:size]


def add_noise(b_true: np.ndarray, spec: NoiseSpec) -> np.ndarray:
    b_true = np.asarray(b_true, dtype=np.float64)
    s = spec.noise_std(b_true)
    if s == 0:
        return b_true.copy()
    return b_true + s * gaussian_samples(spec.seed, b_true.size)


def run_seed(master_seed: int, problem: str, alpha: float, replicate: int) -> int:
    """
    64-bit BLAKE2b digest of 'master|problem|alpha|replicate'.
    """
    key = f"{master_seed}|{problem}|{alpha!r}|{replicate}".encode()
    return int.from_bytes(hashlib.blake2b(key, digest_size=8).digest(), "little")


# --------------------- Scoring ---------------------

def msd(x: np.ndarray, x_true: np.ndarray) -> float:
    """
    ||x_true - x||^2 / ||x_true||^2.
    """
    x_true = np.asarray(x_true, dtype=np.float64)
    norm2 = float(x_true @ x_true)
    if norm2 == 0:
        raise ValueError("MSD is undefined for a zero reference solution.")
    diff = x_true - np.asarray(x, dtype=np.float64)
    return float(diff @ diff) / norm2


class ProjectedScore:
    """
    MSD of x = W_k y evaluated from the projection W^T x_true, without forming x.
    """

    def __init__(self, fac: BidiagFactorization, x_true: np.ndarray):
        x_true = np.asarray(x_true, dtype=np.float64)
        self.norm2 = float(x_true @ x_true)
        if self.norm2 == 0:
            raise ValueError("MSD is undefined for a zero reference solution.")
        self.c = fac.W.T @ x_true

    def __call__(self, y: np.ndarray) -> float:
        k = y.size
        if k == 0:
            return 1.0
        value = (self.norm2 - 2 * float(y @ self.c[:k]) + float(y @ y)) / self.norm2
        return max(value, 0.0)


def pls_msd_trace(run: StoppingRun, x_true: np.ndarray) -> dict:
    """
    MSD of every PLS iterate of a run, k = 0 included.
    """
    score = ProjectedScore(run.fac, x_true)
    trace = {0: 1.0}
    for k, y in run.coefficients.items():
        trace[k] = score(y)
    return trace


def _argmin(trace: dict) -> tuple[int, float]:
    k = min(trace, key=lambda key: (trace[key], key))
    return k, trace[k]


def tikhonov_optimum(fac: BidiagFactorization, svds: list, x_true: np.ndarray,
                     extra_lambdas: Optional[dict] = None) -> tuple[int, float, float]:
    """
    Best (k, lambda) over every projected Tikhonov problem of a factorization.

    The lambda grid at each k is 0, sigma_1(B_k) * 10^[-8, 1] and the lambda in extra_lambdas[k] if given.
    Returns (k, lambda, msd).
    """
    score = ProjectedScore(fac, x_true)
    best = (0, 0.0, 1.0)
    for k in range(1, len(svds) + 1):
        svd = svds[k - 1]
        sigma1 = float(svd.S[0]) if svd.S.size else 0.0
        grid = [0.0] + list(sigma1 * TIKHONOV_GRID)
        if extra_lambdas and k in extra_lambdas:
            grid.append(extra_lambdas[k])
        for lam in grid:
            value = score(projected_solution(svd, fac.theta1, lam))
            if value < best[2]:
                best = (k, float(lam), value)
    return best


def optimal_iteration(A, b: np.ndarray, x_true: np.ndarray, k_max: int) -> tuple[int, float]:
    """
    PLS iterate with the smallest MSD over the first k_max iterations.
    """
    run = run_stopping_rules(A, b, [], k_max, run_to_k_max=True)
    return _argmin(pls_msd_trace(run, x_true))


def optimal_tikhonov(A, b: np.ndarray, x_true: np.ndarray, k_max: int) -> tuple[int, float, float]:
    """
    Hybrid analogue of optimal_iteration: (k, lambda, msd) minimizing the MSD over k and a lambda grid.
    """
    fac = gkb_run(A, b, k_max)
    return tikhonov_optimum(fac, leading_svds(fac), x_true)


# --------------------- Protocol ---------------------

@dataclass
class RunRecord:
    problem: str
    method: str
    ordering: str
    alpha: float
    seed: int
    stop_iteration: int
    selected_iteration: int
    optimal_iteration: int
    msd_selected: float
    msd_optimal: float
    wall_time_ms: float = 0.0
    reason: str = ""
    replicate: int = 0

    def row(self) -> list:
        return [self.problem, self.method, self.ordering, repr(float(self.alpha)), self.seed, self.stop_iteration,
                self.selected_iteration, self.optimal_iteration, repr(float(self.msd_selected)),
                repr(float(self.msd_optimal)), repr(float(self.wall_time_ms))]


def expected_methods(config: ExperimentConfig) -> list[tuple[str, str]]:
    """
    (method, ordering) pairs one cell produces, in output order.
    """
    pairs = []
    for method in config.methods:
        if method == "df":
            pairs.extend(("df", kind) for kind in config.orderings)
        else:
            pairs.append((method, NO_ORDERING))
    return pairs


def _build_rules(config: ExperimentConfig, B: np.ndarray, noise_std: float) -> tuple[list, dict]:
    rules, setup_ms = [], {}
    M, N = B.shape
    for method, kind in expected_methods(config):
        if method not in PLS_METHODS:
            continue
        started = time.perf_counter()
        if method == "df":
            rule = DfRule.from_image(B, kind, config.look_ahead(M * N), config.epsilon, config.delta, config.p)
        elif method == "lcurve":
            rule = LCurveRule(config.p)
        elif method == "ncp":
            rule = NcpRule((M, N), config.p)
        else:
            rule = DiscrepancyRule(noise_std, M * N, config.tau)
        setup_ms[rule.name] = 1000 * (time.perf_counter() - started)
        rules.append(rule)
    return rules, setup_ms


def run_cell(problem: TestProblem, alpha: float, replicate: int, config: ExperimentConfig) -> list[RunRecord]:
    """
    All configured methods on one noise realization, sharing one factorization.
    """
    seed = run_seed(config.master_seed, problem.name, alpha, replicate)
    noise = NoiseSpec(alpha, seed)
    noise_std = noise.noise_std(problem.b_true)
    b = add_noise(problem.b_true, noise)
    M, N = problem.dims
    k_max = min(config.k_max, *problem.A.shape)

    rules, setup_ms = _build_rules(config, unvec(b, M, N), noise_std)
    started = time.perf_counter()
    run = run_stopping_rules(problem.A, b, rules, k_max, run_to_k_max=True)
    shared_ms = 1000 * (time.perf_counter() - started)

    pls_trace = pls_msd_trace(run, problem.x_true)
    pls_opt, pls_msd_opt = _argmin(pls_trace)
    records = []

    def record(method, kind, stop, selected, opt, msd_selected, msd_optimal, elapsed, reason):
        records.append(RunRecord(problem.name, method, kind, alpha, seed, stop, selected, opt, msd_selected,
                                 msd_optimal, elapsed if config.timing else 0.0, reason, replicate))

    svds = None
    for method, kind in expected_methods(config):
        if method in PLS_METHODS:
            name = f"df-{kind}" if method == "df" else method
            decision = run.decisions[name]
            record(method, kind, decision.stop_iteration, decision.selected_iteration, pls_opt,
                   pls_trace[decision.selected_iteration], pls_msd_opt, shared_ms + setup_ms[name], decision.reason)
            continue

        started = time.perf_counter()
        if svds is None:
            svds = leading_svds(run.fac)
        hybrid = hybrid_replay(run.fac, make_selector(method), stagnation=True, svds=svds)
        elapsed = shared_ms + 1000 * (time.perf_counter() - started)
        score = ProjectedScore(run.fac, problem.x_true)
        k = hybrid.stop_iteration
        selected_msd = score(hybrid.coefficients[k]) if k > 0 else 1.0
        opt_k, _, opt_msd = tikhonov_optimum(run.fac, svds, problem.x_true, hybrid.lambdas)
        record(method, kind, k, k, opt_k, selected_msd, opt_msd, elapsed, hybrid.reason)

    logger.debug(f"experiments: {problem.name} alpha={alpha} replicate={replicate} done ({len(records)} records)")
    return records


def _failed_records(name: str, alpha: float, replicate: int, config: ExperimentConfig, error: Exception) -> list:
    seed = run_seed(config.master_seed, name, alpha, replicate)
    logger.error(f"experiments: {name} alpha={alpha} replicate={replicate} failed: {error}")
    return [RunRecord(name, method, kind, alpha, seed, -1, -1, -1, float("nan"), float("nan"), 0.0,
                      f"error: {error}", replicate)
            for method, kind in expected_methods(config)]


def run_experiment(config: ExperimentConfig) -> list[RunRecord]:
    """
    Cross product of problems, noise levels and replicates. Failed cells are recorded, not raised, and the
    records come out in cell order whatever the number of workers.
    """
    problems = {}
    for spec in config.problems:
        try:
            problems[spec] = gen_problem(spec, size=config.image_size)
        except (ValueError, OSError) as e:
            problems[spec] = e

    jobs = []
    for pi, spec in enumerate(config.problems):
        if isinstance(problems[spec], Exception):
            continue
        for ai, alpha in enumerate(config.alphas):
            for replicate in range(config.seeds):
                jobs.append(Job((pi, ai, replicate), run_cell, problems[spec], alpha, replicate, config))

    logger.info(f"experiments: {len(jobs)} runs over {len(config.problems)} problems with {config.workers} workers")
    results, errors = run_jobs(jobs, config.workers)

    records = []
    for pi, spec in enumerate(config.problems):
        for ai, alpha in enumerate(config.alphas):
            for replicate in range(config.seeds):
                key = (pi, ai, replicate)
                if key in results:
                    records.extend(results[key])
                else:
                    error = problems[spec] if isinstance(problems[spec], Exception) else errors.get(key)
                    records.extend(_failed_records(spec.strip(), alpha, replicate, config, error))
    return records


def write_results_csv(path, records: list[RunRecord]):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(RESULTS_HEADER)
        for r in records:
            writer.writerow(r.row())


def _quartiles(values: list) -> list:
    finite = np.array([v for v in values if np.isfinite(v)])
    if finite.size == 0:
        return [0] + ["nan"] * 5
    return [finite.size] + [repr(float(q)) for q in np.quantile(finite, [0.0, 0.25, 0.5, 0.75, 1.0])]


def summarize(records: list[RunRecord]) -> list[list]:
    """
    Quartiles of msd_selected per (problem, method, ordering, alpha), followed by the pls_opt and tikh_opt
    oracle rows built from each cell's optimal MSD.
    """
    groups: dict[tuple, list] = {}
    pls_opt: dict[tuple, dict] = {}
    tikh_opt: dict[tuple, dict] = {}
    for r in records:
        groups.setdefault((r.problem, r.method, r.ordering, r.alpha), []).append(r.msd_selected)
        cell = (r.problem, NO_ORDERING, r.alpha)
        if r.method in PLS_METHODS:
            pls_opt.setdefault(cell, {}).setdefault(r.replicate, r.msd_optimal)
        elif r.method in HYBRID_METHODS:
            seen = tikh_opt.setdefault(cell, {})
            seen[r.replicate] = min(seen.get(r.replicate, np.inf), r.msd_optimal)

    rows = []
    for (problem, method, ordering, alpha), values in groups.items():
        rows.append([problem, method, ordering, repr(float(alpha))] + _quartiles(values))
    for label, table in (("pls_opt", pls_opt), ("tikh_opt", tikh_opt)):
        for (problem, ordering, alpha), per_seed in table.items():
            rows.append([problem, label, ordering, repr(float(alpha))] + _quartiles(list(per_seed.values())))
    return rows


def write_summary_csv(path, records: list[RunRecord]):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(SUMMARY_HEADER)
        writer.writerows(summarize(records))
