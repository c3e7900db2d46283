"""
Stopping rules for the bidiagonalization iterates.

Every rule consumes the iteration stream one k at a time, either online through observe(fac, iterate)
or by replaying recorded scalars through update(k, ...), and produces a StoppingDecision. All rules in
one run share a single factorization so they see identical iterates.
"""
import csv
import logging
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from gkb import BidiagFactorization, PlsIterate
from operators import dft2, unvec, vec
from spectral_filter import DEFAULT_EPSILON, filter_data_2d

logger = logging.getLogger(__name__)

DEFAULT_DELTA = 2e-3
DEFAULT_P = 5
DEFAULT_TAU = 1.01

REASONS = ("minimum-found", "leveled-off", "max-iter", "breakdown")


@dataclass
class StoppingDecision:
    """
    :param stop_iteration: Iteration at which the rule ceased the iteration.
    :param selected_iteration: Iteration whose solution is returned, never past stop_iteration.
    :param trace: (k, criterion value) pairs in observation order.
    :param reason: One of minimum-found, leveled-off, max-iter, breakdown.
    """
    method: str
    stop_iteration: int
    selected_iteration: int
    reason: str
    trace: list = field(default_factory=list, repr=False)
    flags: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "stop_iteration": self.stop_iteration,
            "selected_iteration": self.selected_iteration,
            "reason": self.reason,
            "flags": self.flags,
        }


class StopRule:
    """
    Base class for the stopping rules. Subclasses implement update() and selected().
    """

    name = "abstract"

    def __init__(self):
        self.log = logging.getLogger(__name__)
        self.trace: list[tuple[int, float]] = []
        self.decision: Optional[StoppingDecision] = None
        self.flags: dict = {}

    @property
    def done(self) -> bool:
        return self.decision is not None

    def observe(self, fac: BidiagFactorization, iterate: PlsIterate) -> Optional[StoppingDecision]:
        raise NotImplementedError

    def selected(self) -> int:
        raise NotImplementedError

    def _stop(self, k: int, reason: str) -> StoppingDecision:
        self.decision = StoppingDecision(self.name, k, self.selected(), reason, list(self.trace), dict(self.flags))
        self.log.info(f"{self.name}: stop at k={k}, selected k={self.decision.selected_iteration} ({reason})")
        return self.decision

    def finalize(self, reason: str = "max-iter") -> StoppingDecision:
        """
        Decision for a stream that ended before the rule triggered.
        """
        if self.decision is not None:
            return self.decision
        last = self.trace[-1][0] if self.trace else 0
        return self._stop(last, reason)


# --------------------- Data filtering ---------------------

class DfRule(StopRule):
    """
    Track f(k) = ||b_hat - A x_k||^2 and stop once (f(k) - f(k+1)) / f(k) <= delta for p consecutive
    iterations. The iterate with the smallest f is returned.

    :param b_hat: Filtered data vector.
    """

    name = "df"

    def __init__(self, b_hat: np.ndarray, delta: float = DEFAULT_DELTA, p: int = DEFAULT_P):
        super().__init__()
        if delta <= 0:
            raise ValueError(f"delta={delta} must be positive.")
        if p < 1:
            raise ValueError(f"p={p} must be at least 1.")
        self.b_hat = np.asarray(b_hat, dtype=np.float64)
        self.delta = delta
        self.p = p
        self._count = 0

    def __repr__(self):
        return f"DfRule(delta={self.delta}, p={self.p})"

    @classmethod
    def from_image(cls, B: np.ndarray, kind: str = "hyperbolic", h: Optional[int] = None,
                   eps: float = DEFAULT_EPSILON, delta: float = DEFAULT_DELTA, p: int = DEFAULT_P) -> "DfRule":
        """
        Build the rule from noisy image data, filtering it in the DFT basis with the given ordering.
        """
        filtered = filter_data_2d(B, kind, h, eps)
        rule = cls(vec(filtered.filtered), delta, p)
        rule.name = f"df-{kind}"
        rule.estimate = filtered.estimate
        rule.flags["k0"] = filtered.estimate.k0
        rule.flags["picard_detected"] = filtered.estimate.detected
        return rule

    def observe(self, fac, iterate):
        distance = self.b_hat - fac.reconstructed_data(iterate.y)
        return self.update(iterate.k, float(distance @ distance))

    def update(self, k: int, f: float) -> Optional[StoppingDecision]:
        if self.done:
            return self.decision
        previous = self.trace[-1][1] if self.trace else None
        self.trace.append((k, f))

        if f == 0.0:
            return self._stop(k, "minimum-found")
        if previous is not None and previous > 0:
            if (previous - f) / previous <= self.delta:
                self._count += 1
            else:
                self._count = 0
        if self._count >= self.p:
            return self._stop(k, self._shape_reason())
        return None

    def selected(self) -> int:
        values = np.array([v for _, v in self.trace])
        return self.trace[int(np.argmin(values))][0] if self.trace else 0

    def _shape_reason(self) -> str:
        values = np.array([v for _, v in self.trace])
        i = int(np.argmin(values))
        rises = values[i + 1:] > values[i] * (1 + self.delta)
        return "minimum-found" if rises.any() else "leveled-off"


# --------------------- L-curve ---------------------

class CornerResult(NamedTuple):
    index: int
    low_confidence: bool
    candidates: tuple


def menger_curvature(P1, P2, P3) -> float:
    """
    Signed curvature of the circle through three points; positive for a clockwise (right) turn.
    """
    a = np.subtract(P2, P1)
    b = np.subtract(P3, P2)
    c = np.subtract(P3, P1)
    denom = np.linalg.norm(a) * np.linalg.norm(b) * np.linalg.norm(c)
    if denom == 0:
        return 0.0
    cross = a[0] * b[1] - a[1] * b[0]
    return float(-2.0 * cross / denom)


def _angle(P0, Pc, P1) -> float:
    u = np.subtract(P0, Pc)
    v = np.subtract(P1, Pc)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        return np.pi
    return float(np.arccos(np.clip(u @ v / (nu * nv), -1.0, 1.0)))


def lcurve_corner(points) -> Optional[CornerResult]:
    """
    Corner of a discrete L-curve by pruning.

    The curve is subsampled at successively halved resolutions (always keeping both endpoints); at each
    resolution the sample of largest positive curvature is a candidate. Among the candidates the one
    seeing the two endpoints under the sharpest angle is the corner. Returns a 1-based point index, or
    None with fewer than four points.

    :param points: Sequence of (log residual norm, log solution norm) in iteration order.
    """
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    if n < 4:
        return None

    # Consecutive duplicates have no direction; keep the first of each run.
    keep = np.ones(n, dtype=bool)
    keep[1:] = np.any(points[1:] != points[:-1], axis=1)
    original = np.flatnonzero(keep)
    curve = points[keep]
    n_unique = curve.shape[0]

    # Curvature below this is rounding on a straight segment.
    diameter = max(np.ptp(curve[:, 0]), np.ptp(curve[:, 1]), np.finfo(float).tiny)
    flat = 1e-8 / diameter

    candidates = set()
    q = n_unique
    while q >= 3:
        idx = np.unique(np.rint(np.linspace(0, n_unique - 1, q)).astype(int))
        if idx.size >= 3:
            curvature = [menger_curvature(curve[idx[i - 1]], curve[idx[i]], curve[idx[i + 1]])
                         for i in range(1, idx.size - 1)]
            best = int(np.argmax(curvature))
            if curvature[best] > flat:
                candidates.add(int(idx[best + 1]))
        if q == 3:
            break
        q = max(q // 2, 3)

    if not candidates:
        return CornerResult(2, True, ())

    first, last = curve[0], curve[-1]
    ordered = sorted(candidates)
    angles = [_angle(first, curve[i], last) for i in ordered]
    corner = ordered[int(np.argmin(angles))]
    return CornerResult(int(original[corner]) + 1, False, tuple(int(original[i]) + 1 for i in ordered))


class LCurveRule(StopRule):
    """
    Recompute the L-curve corner after every iteration and stop once the chosen corner has not moved
    forward for p consecutive iterations.
    """

    name = "lcurve"

    def __init__(self, p: int = DEFAULT_P):
        super().__init__()
        self.p = p
        self.points: list[tuple[float, float]] = []
        self._corner: Optional[int] = None
        self._count = 0

    def __repr__(self):
        return f"LCurveRule(p={self.p})"

    def observe(self, fac, iterate):
        return self.update(iterate.k, iterate.residual_norm, float(np.linalg.norm(iterate.y)))

    def update(self, k: int, residual_norm: float, solution_norm: float) -> Optional[StoppingDecision]:
        if self.done:
            return self.decision
        tiny = np.finfo(float).tiny
        self.points.append((np.log(max(residual_norm, tiny)), np.log(max(solution_norm, tiny))))

        result = lcurve_corner(self.points)
        if result is None:
            self.trace.append((k, float("nan")))
            return None

        self.flags["low_confidence"] = result.low_confidence
        if self._corner is not None and result.index <= self._corner:
            self._count += 1
        else:
            self._count = 0
        self._corner = result.index
        self.trace.append((k, float(result.index)))

        if self._count >= self.p:
            return self._stop(k, "minimum-found")
        return None

    def selected(self) -> int:
        if self._corner is not None:
            return self._corner
        return self.trace[-1][0] if self.trace else 0


# --------------------- NCP ---------------------

class NcpResult(NamedTuple):
    c: np.ndarray
    degenerate: bool


def ncp_vector(R: np.ndarray, include_dc: bool = False) -> NcpResult:
    """
    Normalized cumulative periodogram of a residual image.

    The magnitudes of the first quarter of dft2(R) are read in elliptic order and accumulated; the dc
    component is left out unless include_dc is set.
    """
    R = np.asarray(R, dtype=np.float64)
    if R.ndim != 2:
        raise ValueError(f"Expected a 2D residual image, got shape {R.shape}.")
    M, N = R.shape
    q1, q2 = M // 2 + 1, N // 2 + 1

    quarter = np.abs(dft2(R))[:q1, :q2]
    j = np.arange(q1, dtype=np.int64)
    s = np.arange(q2, dtype=np.int64)
    keys = vec((j[:, None] ** 2) * N ** 2 + (s[None, :] ** 2) * M ** 2)
    t = vec(quarter)[np.argsort(keys, kind="stable")]
    if not include_dc:
        t = t[1:]

    length = t.size
    total = t.sum()
    if length == 0:
        return NcpResult(np.zeros(0), True)
    if total <= 0:
        return NcpResult(np.arange(1, length + 1) / length, True)
    return NcpResult(np.cumsum(t) / total, False)


def ncp_distance(c: np.ndarray) -> float:
    """
    1-norm distance of an NCP to the straight line of white noise.
    """
    c = np.asarray(c)
    line = np.arange(1, c.size + 1) / c.size
    return float(np.abs(line - c).sum())


class NcpRule(StopRule):
    """
    Whiteness of the residual: stop once the NCP distance has increased p times in a row and return the
    iterate with the smallest distance.
    """

    name = "ncp"

    def __init__(self, shape: tuple[int, int], p: int = DEFAULT_P, include_dc: bool = False):
        super().__init__()
        self.shape = shape
        self.p = p
        self.include_dc = include_dc
        self._count = 0

    def __repr__(self):
        return f"NcpRule(shape={self.shape}, p={self.p}, include_dc={self.include_dc})"

    def observe(self, fac, iterate):
        R = unvec(fac.residual(iterate.y), *self.shape)
        result = ncp_vector(R, self.include_dc)
        if result.degenerate:
            self.flags["degenerate"] = True
        return self.update(iterate.k, ncp_distance(result.c))

    def update(self, k: int, distance: float) -> Optional[StoppingDecision]:
        if self.done:
            return self.decision
        if self.trace and distance > self.trace[-1][1]:
            self._count += 1
        else:
            self._count = 0
        self.trace.append((k, distance))
        if self._count >= self.p:
            return self._stop(k, "minimum-found")
        return None

    def selected(self) -> int:
        if not self.trace:
            return 0
        values = np.array([v for _, v in self.trace])
        return self.trace[int(np.argmin(values))][0]


# --------------------- Discrepancy ---------------------

class DiscrepancyRule(StopRule):
    """
    Stop at the first iterate whose residual norm is at most tau * sqrt(m) * noise_std.
    """

    name = "discrepancy"

    def __init__(self, noise_std: float, m: int, tau: float = DEFAULT_TAU):
        super().__init__()
        if noise_std < 0:
            raise ValueError(f"noise_std={noise_std} must be nonnegative.")
        self.noise_std = noise_std
        self.m = m
        self.tau = tau
        self.threshold = tau * np.sqrt(m) * noise_std

    def __repr__(self):
        return f"DiscrepancyRule(noise_std={self.noise_std}, tau={self.tau})"

    def observe(self, fac, iterate):
        return self.update(iterate.k, iterate.residual_norm)

    def update(self, k: int, residual_norm: float) -> Optional[StoppingDecision]:
        if self.done:
            return self.decision
        self.trace.append((k, residual_norm))
        if residual_norm <= self.threshold:
            return self._stop(k, "minimum-found")
        return None

    def selected(self) -> int:
        return self.trace[-1][0] if self.trace else 0


# --------------------- Driver ---------------------

@dataclass
class StoppingRun:
    """
    One factorization observed by several rules, with the projected solution of every iteration kept.
    """
    fac: BidiagFactorization
    decisions: dict
    coefficients: dict = field(repr=False)

    def solution(self, method: str) -> np.ndarray:
        k = self.decisions[method].selected_iteration
        return self.solution_at(k)

    def solution_at(self, k: int) -> np.ndarray:
        if k == 0:
            return np.zeros(self.fac.A.shape[1])
        return self.fac.W[:, :k] @ self.coefficients[k]


def run_stopping_rules(A, b: np.ndarray, rules: list[StopRule], k_max: int,
                       run_to_k_max: bool = False) -> StoppingRun:
    """
    Drive one bidiagonalization and feed every iterate to each rule that is still running.

    :param run_to_k_max: Keep iterating after all rules stopped (for full traces).
    """
    names = [rule.name for rule in rules]
    if len(set(names)) != len(names):
        raise ValueError(f"Stopping rule names must be unique, got {names}.")

    fac = BidiagFactorization(A, b, k_max)
    coefficients: dict[int, np.ndarray] = {}

    def on_step(f: BidiagFactorization) -> bool:
        y, residual_norm = f.pls_coefficients()
        coefficients[f.k] = y
        iterate = PlsIterate(y, f.solution(y), residual_norm, f.k)
        active = [rule for rule in rules if not rule.done]
        for rule in active:
            rule.observe(f, iterate)
        return not run_to_k_max and all(rule.done for rule in rules)

    while fac.can_step:
        fac.step()
        if on_step(fac):
            break

    reason = "breakdown" if fac.breakdown else "max-iter"
    decisions = {rule.name: rule.finalize(reason) for rule in rules}
    return StoppingRun(fac, decisions, coefficients)


def write_trace_csv(path, decision: StoppingDecision):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["k", "criterion_value"])
        for k, value in decision.trace:
            writer.writerow([k, repr(float(value))])
