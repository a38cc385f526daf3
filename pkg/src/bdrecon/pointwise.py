"""Pointwise recovery of the boundary conductivity from (A, N, H).

At a boundary point the data satisfy

    N = sigma * (A**2 + n**2) ** ((p - 2) / 2) * n
    H = sigma * (A**2 + n**2) ** (q / 2)

with the normal derivative ``n`` and ``sigma`` unknown.  Dividing gives
``N / H = g(n)`` with ``g(n) = (A**2 + n**2) ** ((p - q - 2) / 2) * n``.
``g`` is strictly increasing when ``p - q >= 1`` and unimodal with peak at
``n* = A / sqrt(1 - (p - q))`` otherwise, so the data determine one or two
candidate pairs ``(sigma, n)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np

__all__ = [
    "MeasurementTriple",
    "ExponentPair",
    "Nothing",
    "Unique",
    "Double",
    "CandidateSet",
    "BracketError",
    "InvalidExponentError",
    "g_eval",
    "g_deriv",
    "g_roots",
    "recover_candidates",
    "cdii_closed_form",
    "aet_closed_form",
    "synthesize_triple",
    "candidate_contains",
    "DEFAULT_TOL",
]

DEFAULT_TOL = 1e-9
PEAK_RTOL = 1e-13


class BracketError(ValueError):
    """A root exists but does not lie in the search interval (0, n_max]."""


class InvalidExponentError(ValueError):
    pass


@dataclass(frozen=True)
class MeasurementTriple:
    """Tangential gradient magnitude ``A``, Neumann flux ``N``, interior data ``H``."""

    A: float
    N: float
    H: float

    def __post_init__(self):
        if not (self.A >= 0.0):
            raise ValueError(f"A must be nonnegative, got {self.A}")
        if not (self.H >= 0.0):
            raise ValueError(f"H must be nonnegative, got {self.H}")

    def is_void(self, tol: float = 0.0) -> bool:
        return self.H <= tol


@dataclass(frozen=True)
class ExponentPair:
    p: float
    q: float

    def __post_init__(self):
        if not (1.0 < self.p < math.inf):
            raise InvalidExponentError(f"p must satisfy 1 < p < inf, got {self.p}")
        if not (0.0 <= self.q < math.inf):
            raise InvalidExponentError(f"q must satisfy 0 <= q < inf, got {self.q}")

    @property
    def diff(self) -> float:
        return self.p - self.q

    def regime(self, tol: float = DEFAULT_TOL) -> str:
        """One of ``"greater"``, ``"critical"`` or ``"less"`` relative to p - q = 1."""
        d = self.diff - 1.0
        if abs(d) <= tol:
            return "critical"
        return "greater" if d > 0 else "less"


@dataclass(frozen=True)
class Nothing:
    """No conductivity value is determined by the data."""

    reason: str = ""

    @property
    def sigmas(self) -> Tuple[float, ...]:
        return ()

    @property
    def pairs(self) -> Tuple[Tuple[float, float], ...]:
        return ()


@dataclass(frozen=True)
class Unique:
    sigma: float
    n: float

    @property
    def sigmas(self) -> Tuple[float, ...]:
        return (self.sigma,)

    @property
    def pairs(self) -> Tuple[Tuple[float, float], ...]:
        return ((self.sigma, self.n),)


@dataclass(frozen=True)
class Double:
    """Two candidates; ``plus`` is the root with the larger ``|n|``.

    Hence ``sigma_plus <= sigma_minus`` and ``|n_minus| <= |n_plus|``.
    """

    sigma_plus: float
    n_plus: float
    sigma_minus: float
    n_minus: float

    @property
    def sigmas(self) -> Tuple[float, ...]:
        return (self.sigma_plus, self.sigma_minus)

    @property
    def pairs(self) -> Tuple[Tuple[float, float], ...]:
        return ((self.sigma_plus, self.n_plus), (self.sigma_minus, self.n_minus))

    @property
    def delta_n(self) -> float:
        return abs(self.n_plus) - abs(self.n_minus)


CandidateSet = Union[Nothing, Unique, Double]


def g_eval(n: float, A: float, diff: float) -> float:
    """Evaluate ``(A**2 + n**2) ** ((diff - 2) / 2) * n``; accepts arrays."""
    r2 = A * A + n * n
    if np.ndim(r2) > 0:
        r2 = np.asarray(r2, dtype=float)
        if diff < 2.0 and np.any(r2 == 0.0):
            raise ZeroDivisionError("g is singular at A = n = 0 when p - q < 2")
        safe = np.where(r2 > 0.0, r2, 1.0)
        return np.where(r2 > 0.0, safe ** ((diff - 2.0) / 2.0) * n, 0.0)
    if r2 == 0.0:
        if diff < 2.0:
            raise ZeroDivisionError("g is singular at A = n = 0 when p - q < 2")
        return 0.0
    return r2 ** ((diff - 2.0) / 2.0) * n


def g_deriv(n: float, A: float, diff: float) -> float:
    r2 = A * A + n * n
    return r2 ** ((diff - 4.0) / 2.0) * (A * A + (diff - 1.0) * n * n)


def _bisect(target, A, diff, lo, hi, increasing, maxiter=200):
    # Bisection to full double precision; g(lo) and g(hi) bracket target.
    for _ in range(maxiter):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        above = g_eval(mid, A, diff) >= target
        if above == increasing:
            hi = mid
        else:
            lo = mid
    # pick the endpoint with the smaller residual
    r_lo = abs(g_eval(lo, A, diff) - target) if lo > 0 else math.inf
    r_hi = abs(g_eval(hi, A, diff) - target)
    return (lo, r_lo) if r_lo < r_hi else (hi, r_hi)


def _polish(root, resid, target, A, diff, lo, hi, steps=5):
    for _ in range(steps):
        d = g_deriv(root, A, diff)
        if d == 0.0 or not math.isfinite(d):
            break
        cand = root - (g_eval(root, A, diff) - target) / d
        if not (lo <= cand <= hi) or cand <= 0.0:
            break
        r = abs(g_eval(cand, A, diff) - target)
        if r >= resid:
            break
        root, resid = cand, r
    return root, resid


def _solve_branch(target, A, diff, lo, hi, increasing, tol):
    root, resid = _bisect(target, A, diff, lo, hi, increasing)
    root, resid = _polish(root, resid, target, A, diff, lo, hi)
    if resid > tol * target:
        raise BracketError(
            f"root residual {resid:.3e} exceeds tolerance for target {target:.6g}"
        )
    return root


def g_roots(
    target: float,
    A: float,
    diff: float,
    n_max: float,
    tol: float = DEFAULT_TOL,
) -> list:
    """Positive solutions of ``g(n) = target`` on ``(0, n_max]``.

    Returns an empty list when no positive root exists at all (target above
    the peak of ``g`` for ``diff < 1``, or ``target >= 1`` when ``diff == 1``).
    Raises :class:`BracketError` when roots exist but none lies in
    ``(0, n_max]``.  For ``diff < 1`` the descending-branch root is omitted if
    it lies beyond ``n_max``.
    """
    if not target > 0.0:
        raise ValueError("target must be positive")
    if not A > 0.0:
        raise ValueError("A must be positive")
    if not n_max > 0.0:
        raise ValueError("n_max must be positive")

    if diff >= 1.0 - tol:
        critical = abs(diff - 1.0) <= tol
        if critical:
            diff = 1.0
        g_top = g_eval(n_max, A, diff)
        if g_top < target:
            if critical and target >= 1.0:
                return []
            raise BracketError(
                f"g(n_max)={g_top:.6g} < target={target:.6g}; root lies beyond n_max"
            )
        return [_solve_branch(target, A, diff, 0.0, n_max, True, tol)]

    n_peak = A / math.sqrt(1.0 - diff)
    if n_peak >= n_max:
        # only the ascending branch is visible
        g_top = g_eval(n_max, A, diff)
        if g_top < target:
            if target > g_eval(n_peak, A, diff) * (1.0 + tol):
                return []
            raise BracketError("ascending-branch root lies beyond n_max")
        return [_solve_branch(target, A, diff, 0.0, n_max, True, tol)]

    g_peak = g_eval(n_peak, A, diff)
    if target > g_peak * (1.0 + tol):
        return []
    # targets at or above the peak (within tol) collapse onto it; just below
    # the peak both roots are still resolvable, so the window there is narrow
    if target >= g_peak * (1.0 - min(tol, PEAK_RTOL)):
        return [n_peak]
    roots = [_solve_branch(target, A, diff, 0.0, n_peak, True, tol)]
    if g_eval(n_max, A, diff) <= target:
        roots.append(_solve_branch(target, A, diff, n_peak, n_max, False, tol))
    return roots


def _sigma_from_n(H, A, n, q):
    return H * (A * A + n * n) ** (-q / 2.0)


def _expand_bracket(target, A, diff):
    # q = 0 gives no bound on n from sigma_lo; g is increasing here (diff = p > 1).
    hi = max(1.0, A)
    for _ in range(2000):
        if g_eval(hi, A, diff) >= target:
            return hi
        hi *= 2.0
    raise BracketError("could not bracket root")


def recover_candidates(
    m: MeasurementTriple,
    e: ExponentPair,
    bounds: Tuple[float, float],
    tol: float = DEFAULT_TOL,
) -> CandidateSet:
    """Candidate ``(sigma, n)`` pairs consistent with one measured triple.

    Candidates with ``sigma < bounds[0]`` are never returned because the
    lower bound limits the search interval for ``n``.  The upper bound is not
    applied here.  Inconsistent data yields :class:`Nothing`, not an error.
    """
    sigma_lo = bounds[0]
    if not sigma_lo > 0.0:
        raise ValueError("sigma_lo must be positive")
    A, N, H = m.A, m.N, m.H
    if not all(math.isfinite(v) for v in (A, N, H)):
        raise ValueError("measurement contains non-finite values")
    p, q, diff = e.p, e.q, e.diff
    scale = max(A, abs(N), H, 1e-300)

    if H <= tol * scale:
        return Nothing("H = 0")
    a_zero = A <= tol * scale
    n_zero = abs(N) <= tol * scale
    sgn = 1.0 if N >= 0 else -1.0

    if n_zero and a_zero:
        return Nothing("A = N = 0 with H > 0 is inconsistent")
    if n_zero:
        return Unique(H * A ** (-q), 0.0)
    if a_zero:
        if abs(diff - 1.0) <= tol:
            return Nothing("A = 0 and p - q = 1")
        k = 1.0 / (diff - 1.0)
        la, lh = math.log(abs(N)), math.log(H)
        try:
            sigma = math.exp((1.0 - (p - 1.0) * k) * la + (p - 1.0) * k * lh)
            n = sgn * math.exp(k * (la - lh))
        except OverflowError:
            return Nothing("solution outside floating-point range")
        return Unique(sigma, n)

    target = abs(N) / H
    if q > 0.0:
        n_max = (H / sigma_lo) ** (1.0 / q)
    else:
        n_max = _expand_bracket(target, A, diff)
    try:
        roots = g_roots(target, A, diff, n_max, tol)
    except BracketError:
        return Nothing("all roots violate the lower conductivity bound")
    if not roots:
        return Nothing("inconsistent data: N/H exceeds the range of g")
    pairs = [(_sigma_from_n(H, A, r, q), sgn * r) for r in roots]
    if len(pairs) == 1:
        return Unique(*pairs[0])
    (s1, n1), (s2, n2) = pairs
    if abs(n1) < abs(n2):
        (s1, n1), (s2, n2) = (s2, n2), (s1, n1)
    return Double(sigma_plus=s1, n_plus=n1, sigma_minus=s2, n_minus=n2)


def cdii_closed_form(m: MeasurementTriple, tol: float = DEFAULT_TOL) -> CandidateSet:
    """Explicit solution for p - q = 1: ``sigma = sqrt(H**2 - N**2) / A``.

    A negative radicand is clamped to zero, which returns ``Unique`` with
    ``sigma = 0`` and ``n = nan`` so that downstream bound checks reject it.
    """
    A, N, H = m.A, m.N, m.H
    scale = max(A, abs(N), H, 1e-300)
    if H <= tol * scale:
        return Nothing("H = 0")
    if A <= tol * scale:
        return Nothing("A = 0 and p - q = 1")
    # factored to avoid cancellation when |N| is close to H
    rad = (H - abs(N)) * (H + abs(N))
    if rad <= 0.0:
        return Unique(0.0, math.nan)
    root = math.sqrt(rad)
    return Unique(root / A, N * A / root)


def aet_closed_form(
    m: MeasurementTriple,
    tol: float = DEFAULT_TOL,
    raw_radicand: bool = False,
) -> CandidateSet:
    """Explicit solution for p = q.

    ``n_pm = H / (2 N) * (1 +- sqrt(1 - 4 A**2 N**2 / H**2))`` and
    ``sigma_pm = N / n_pm``.  A negative discriminant is clamped to zero, which
    collapses the pair to a single candidate.

    With ``raw_radicand=True`` the square root is taken of
    ``(H**2 - 4 A**2) N**2`` instead; kept only for comparison.
    """
    A, N, H = m.A, m.N, m.H
    scale = max(A, abs(N), H, 1e-300)
    if H <= tol * scale:
        return Nothing("H = 0")
    a_zero = A <= tol * scale
    n_zero = abs(N) <= tol * scale
    if n_zero and a_zero:
        return Nothing("A = N = 0 with H > 0 is inconsistent")
    if n_zero:
        return Unique(H / (A * A), 0.0)
    if a_zero:
        return Unique(N * N / H, H / N)

    if raw_radicand:
        rad = (H * H - 4.0 * A * A) * N * N
        root = math.sqrt(max(rad, 0.0))
        s_plus = 2.0 * N * N / (H + root)
        s_minus = 2.0 * N * N / (H - root) if H - root != 0.0 else math.inf
        if rad <= 0.0:
            return Unique(s_plus, N / s_plus)
        return Double(s_plus, N / s_plus, s_minus, N / s_minus)

    two_an = 2.0 * A * abs(N)
    disc = (H - two_an) * (H + two_an) / (H * H)
    if disc <= 2.0 * min(tol, PEAK_RTOL):
        # discriminant zero within tolerance: one solution pair
        n0 = H / (2.0 * N)
        return Unique(N / n0, n0)
    root = math.sqrt(disc)
    n_plus = H / (2.0 * N) * (1.0 + root)
    # n_plus * n_minus = A**2 avoids the cancellation in 1 - root
    n_minus = A * A / n_plus
    return Double(
        sigma_plus=N / n_plus,
        n_plus=n_plus,
        sigma_minus=N / n_minus,
        n_minus=n_minus,
    )


def synthesize_triple(
    sigma: float, n: float, A: float, p: float, q: float
) -> MeasurementTriple:
    """Forward map ``(sigma, n, A) -> (A, N, H)`` at one boundary point."""
    r2 = A * A + n * n
    if r2 == 0.0:
        return MeasurementTriple(A, 0.0, 0.0)
    N = sigma * r2 ** ((p - 2.0) / 2.0) * n
    H = sigma * r2 ** (q / 2.0)
    return MeasurementTriple(A, N, H)


def candidate_contains(
    cs: CandidateSet, sigma: float, n: float, rtol: float
) -> Optional[Tuple[float, float]]:
    """Return the candidate pair matching ``(sigma, n)`` within ``rtol``, if any."""
    for s, nn in cs.pairs:
        if abs(s - sigma) <= rtol * abs(sigma) and abs(nn - n) <= rtol * max(abs(n), 1e-300):
            return (s, nn)
    return None
