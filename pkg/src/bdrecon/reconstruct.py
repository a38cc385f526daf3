"""Boundary conductivity reconstruction from sampled (A, N, H).

``algorithm1`` handles current density data (p = 2, q = 1) where every point
with nonzero tangential gradient has a unique candidate.  ``algorithm2``
handles power density data (p = q = 2) where most points carry two
candidates; it picks a branch using the a priori bounds, propagates choices
between anchors along the cyclic sample order, and linearly interpolates
whatever remains undecided.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional, Union

import numpy as np
from scipy.ndimage import gaussian_filter1d

from .pointwise import ExponentPair, MeasurementTriple, recover_candidates, Double, Unique
from .synth import SampleSet

logger = logging.getLogger(__name__)

__all__ = [
    "Bounds",
    "ReconstructionResult",
    "NoAnchorError",
    "DECIDED",
    "UNDECIDED",
    "PROPAGATED",
    "INTERPOLATED",
    "algorithm1",
    "algorithm2",
    "classify_points",
    "propagate_choices",
    "interpolate_undecided",
    "gaussian_smooth",
    "reconstruct_general",
    "evaluate",
    "write_result",
    "read_result",
]

DECIDED = "decided"
UNDECIDED = "undecided"
PROPAGATED = "propagated"
INTERPOLATED = "interpolated"
TERMINAL = (DECIDED, PROPAGATED, INTERPOLATED)

STAGES = (
    "before_double",
    "before_population",
    "before_interpolation",
    "after_interpolation",
    "after_smoothing",
)


class NoAnchorError(ValueError):
    pass


@dataclass(frozen=True)
class Bounds:
    sigma_lo: float
    sigma_hi: float
    eps_stop: Optional[float] = None
    eq_tol: float = 1e-9

    def __post_init__(self):
        if not (0.0 < self.sigma_lo < self.sigma_hi):
            raise ValueError("bounds must satisfy 0 < sigma_lo < sigma_hi")
        if self.eps_stop is not None and not self.eps_stop > 0:
            raise ValueError("eps_stop must be positive")
        if not self.eq_tol > 0:
            raise ValueError("eq_tol must be positive")

    def contains(self, s):
        s = np.asarray(s, dtype=float)
        return (s >= self.sigma_lo) & (s <= self.sigma_hi)


@dataclass
class ReconstructionResult:
    thetas: np.ndarray
    sigma_est: np.ndarray
    labels: np.ndarray
    stopping: np.ndarray
    double: np.ndarray
    undecided: np.ndarray
    sigma_plus: np.ndarray
    sigma_minus: np.ndarray
    n_plus: np.ndarray
    n_minus: np.ndarray
    bounds: Bounds
    eps_stop: float = float("nan")
    sigma_smoothed: Optional[np.ndarray] = None
    undecided_history: set = field(default_factory=set)
    stages: Dict[str, np.ndarray] = field(default_factory=dict)
    diagnostics: Dict[str, list] = field(default_factory=dict)

    @property
    def M(self) -> int:
        return len(self.thetas)

    @property
    def D(self) -> set:
        return set(np.flatnonzero(self.double).tolist())

    @property
    def S(self) -> set:
        return set(np.flatnonzero(self.stopping).tolist())

    @property
    def U(self) -> set:
        return set(np.flatnonzero(self.undecided).tolist())

    def copy(self) -> "ReconstructionResult":
        arrays = {k: (v.copy() if isinstance(v, np.ndarray) else v)
                  for k, v in self.__dict__.items()}
        arrays["undecided_history"] = set(self.undecided_history)
        arrays["stages"] = {k: v.copy() for k, v in self.stages.items()}
        arrays["diagnostics"] = {k: list(v) for k, v in self.diagnostics.items()}
        return ReconstructionResult(**arrays)


def _empty_result(s: SampleSet, b: Bounds) -> ReconstructionResult:
    M = s.M
    nan = np.full(M, np.nan)
    return ReconstructionResult(
        thetas=s.thetas.copy(),
        sigma_est=nan.copy(),
        labels=np.full(M, UNDECIDED, dtype=object),
        stopping=np.zeros(M, dtype=bool),
        double=np.zeros(M, dtype=bool),
        undecided=np.zeros(M, dtype=bool),
        sigma_plus=nan.copy(),
        sigma_minus=nan.copy(),
        n_plus=nan.copy(),
        n_minus=nan.copy(),
        bounds=b,
    )


def _aet_candidates(A, N, H, raw_radicand=False):
    """Vectorised power-density candidates; degenerate entries become inf or nan."""
    with np.errstate(divide="ignore", invalid="ignore"):
        if raw_radicand:
            root_abs = np.sqrt(np.maximum((H * H - 4 * A * A) * N * N, 0.0))
            root = np.where(H > 0, root_abs / H, 0.0)
        else:
            two_an = 2.0 * A * np.abs(N)
            root = np.sqrt(np.maximum((H - two_an) * (H + two_an) / (H * H), 0.0))
        two_n2 = 2.0 * N * N
        s_plus = two_n2 / (H * (1.0 + root))
        n_plus = H / (2.0 * N) * (1.0 + root)
        if raw_radicand:
            den = H * (1.0 - root)
            s_minus = np.where(den > 0, two_n2 / den, np.inf)
            n_minus = H / (2.0 * N) * (1.0 - root)
        else:
            # product of the roots is A**2; avoids cancellation in 1 - root
            s_minus = np.where(A > 0, H * (1.0 + root) / (2.0 * A * A), np.inf)
            n_minus = A * A / n_plus
        delta_n = np.abs(n_plus) - np.abs(n_minus)
    return s_plus, s_minus, n_plus, n_minus, delta_n


def default_eps_stop(n_plus: np.ndarray) -> float:
    vals = np.abs(n_plus[np.isfinite(n_plus)])
    if len(vals) == 0:
        return float("nan")
    return 0.05 * float(np.median(vals))


def classify_points(s: SampleSet, b: Bounds, raw_radicand: bool = False) -> ReconstructionResult:
    """First pass of the power-density algorithm (p = q = 2).

    Every sample is decided from its own data when possible, marked as a
    double candidate, and flagged as a stopping point when ``H = 0`` or when
    ``delta_n = |n+| - |n-|`` is a local minimum below ``eps_stop``.
    """
    r = _empty_result(s, b)
    A, N, H = s.A, s.N, s.H
    tol = b.eq_tol
    zero_h = H <= tol
    a_nz = A > tol
    n_nz = np.abs(N) > tol
    with np.errstate(divide="ignore", invalid="ignore"):
        s_tan = np.where(a_nz, H / (A * A), np.nan)
        s_nrm = np.where(~zero_h, N * N / H, np.nan)

    case_h = zero_h
    case_tan = ~case_h & a_nz & ~n_nz & b.contains(s_tan)
    case_nrm = ~case_h & ~case_tan & ~a_nz & n_nz & b.contains(s_nrm)
    dbl = ~(case_h | case_tan | case_nrm)

    r.undecided[case_h] = True
    r.stopping[case_h] = True
    r.sigma_est[case_tan] = s_tan[case_tan]
    r.sigma_est[case_nrm] = s_nrm[case_nrm]
    r.labels[case_tan | case_nrm] = DECIDED
    r.double[:] = dbl

    sp_, sm_, np_, nm_, dn = _aet_candidates(A, N, H, raw_radicand)
    r.sigma_plus[dbl] = sp_[dbl]
    r.sigma_minus[dbl] = sm_[dbl]
    r.n_plus[dbl] = np_[dbl]
    r.n_minus[dbl] = nm_[dbl]

    r.stages["before_double"] = r.sigma_est.copy()

    in_p = b.contains(r.sigma_plus)
    in_m = b.contains(r.sigma_minus)
    with np.errstate(invalid="ignore"):
        equal = np.abs(r.sigma_plus - r.sigma_minus) <= tol * np.maximum(
            np.abs(r.sigma_plus), np.abs(r.sigma_minus))
    take_p = dbl & ((equal & in_p) | (~in_m & in_p))
    take_m = dbl & ~take_p & ~in_p & in_m
    still = dbl & ~take_p & ~take_m
    r.sigma_est[take_p] = r.sigma_plus[take_p]
    r.sigma_est[take_m] = r.sigma_minus[take_m]
    r.labels[take_p | take_m] = DECIDED
    r.undecided[still] = True

    dn_seq = np.where(dbl & np.isfinite(dn), dn, np.inf)
    eps = b.eps_stop if b.eps_stop is not None else default_eps_stop(r.n_plus[dbl])
    r.eps_stop = eps
    if np.isfinite(eps):
        left = np.roll(dn_seq, 1)
        right = np.roll(dn_seq, -1)
        # ties count as minima so plateaus are flagged conservatively
        local_min = (dn_seq <= left) & (dn_seq <= right) & (np.abs(dn_seq) < eps)
        r.stopping |= local_min & dbl
    r.undecided_history = set(np.flatnonzero(r.undecided).tolist())
    r.stages["before_population"] = r.sigma_est.copy()
    return r


def _on_branch(r: ReconstructionResult, i: int, branch: np.ndarray) -> bool:
    v, c = r.sigma_est[i], branch[i]
    if not (np.isfinite(v) and np.isfinite(c)):
        return False
    return abs(v - c) <= r.bounds.eq_tol * abs(c)


def propagate_choices(r: ReconstructionResult) -> ReconstructionResult:
    """Carry branch choices across runs of undecided double candidates.

    For each undecided double point the nearest anchors ``k`` (backward) and
    ``l`` (forward) are located cyclically, where an anchor is a stopping
    point or a decided double point.  When the decided anchors agree on a
    branch, that branch is assigned to every undecided double point strictly
    between them.  Values that violate the bounds stay undecided.
    """
    r = r.copy()
    M = r.M
    anchor = r.stopping | (r.double & ~r.undecided)
    if not anchor.any():
        r.stages["before_interpolation"] = r.sigma_est.copy()
        return r
    todo = np.flatnonzero(r.double & r.undecided & ~r.stopping)
    anchor_idx = np.flatnonzero(anchor)
    for j in todo:
        if not r.undecided[j]:
            continue
        pos = np.searchsorted(anchor_idx, j)
        k = anchor_idx[pos - 1] if pos > 0 else anchor_idx[-1]
        l = anchor_idx[pos] if pos < len(anchor_idx) else anchor_idx[0]
        k_u, l_u = bool(r.undecided[k]), bool(r.undecided[l])
        chosen = None
        for name, branch in (("-", r.sigma_minus), ("+", r.sigma_plus)):
            if ((not k_u and not l_u and _on_branch(r, k, branch) and _on_branch(r, l, branch))
                    or (not l_u and k_u and _on_branch(r, l, branch))
                    or (not k_u and l_u and _on_branch(r, k, branch))):
                chosen = (name, branch)
                break
        if chosen is None:
            if k_u and l_u:
                r.diagnostics.setdefault("between_stopping_points", []).append(int(j))
            continue
        name, branch = chosen
        i = (k + 1) % M
        while i != l:
            if r.double[i] and r.undecided[i]:
                v = branch[i]
                if r.bounds.contains(v):
                    r.sigma_est[i] = v
                    r.undecided[i] = False
                    r.labels[i] = PROPAGATED
                else:
                    r.diagnostics.setdefault("propagated_out_of_bounds", []).append(int(i))
            i = (i + 1) % M
    r.stages["before_interpolation"] = r.sigma_est.copy()
    return r


def interpolate_undecided(r: ReconstructionResult) -> ReconstructionResult:
    """Periodic linear interpolation in angle over the undecided samples."""
    r = r.copy()
    und = r.undecided | ~np.isfinite(r.sigma_est)
    known = ~und
    if not known.any():
        raise NoAnchorError("no anchor points for interpolation")
    if und.any():
        r.sigma_est[und] = np.interp(r.thetas[und], r.thetas[known], r.sigma_est[known],
                                     period=2.0 * np.pi)
        r.labels[und] = INTERPOLATED
        r.undecided[:] = False
    r.stages["after_interpolation"] = r.sigma_est.copy()
    return r


def gaussian_smooth(values: np.ndarray, kernel_std_samples: float) -> np.ndarray:
    """Circular Gaussian filter over the sample sequence, truncated at 4 std."""
    values = np.asarray(values, dtype=float)
    if kernel_std_samples <= 0:
        return values.copy()
    return gaussian_filter1d(values, kernel_std_samples, mode="wrap", truncate=4.0)


def _finish(r: ReconstructionResult, kernel_std: Optional[float]) -> ReconstructionResult:
    r = interpolate_undecided(r)
    std = r.M / 100.0 if kernel_std is None else kernel_std
    r.sigma_smoothed = gaussian_smooth(r.sigma_est, std)
    r.stages["after_smoothing"] = r.sigma_smoothed.copy()
    return r


def algorithm1(s: SampleSet, b: Bounds, kernel_std: float = 0.0) -> ReconstructionResult:
    """Current density reconstruction (p = 2, q = 1).

    ``sigma = Re sqrt(H^2 - N^2) / A`` where defined and within bounds;
    all other samples are interpolated.  No smoothing unless ``kernel_std > 0``.
    """
    r = _empty_result(s, b)
    A, N, H = s.A, s.N, s.H
    a_nz = A > b.eq_tol
    with np.errstate(divide="ignore", invalid="ignore"):
        cand = np.where(a_nz, np.sqrt(np.maximum(H * H - N * N, 0.0)) / A, np.nan)
    ok = a_nz & b.contains(cand)
    r.sigma_est[ok] = cand[ok]
    r.labels[ok] = DECIDED
    r.undecided[~ok] = True
    r.undecided_history = set(np.flatnonzero(~ok).tolist())
    for stage in ("before_double", "before_population", "before_interpolation"):
        r.stages[stage] = r.sigma_est.copy()
    return _finish(r, kernel_std)


def algorithm2(s: SampleSet, b: Bounds, kernel_std: Optional[float] = None,
               raw_radicand: bool = False) -> ReconstructionResult:
    """Power density reconstruction (p = q = 2): classify, propagate, interpolate, smooth.

    ``kernel_std`` is in samples and defaults to ``M / 100``.  Both the raw
    and the smoothed estimates are kept on the result.
    """
    r = classify_points(s, b, raw_radicand)
    r = propagate_choices(r)
    return _finish(r, kernel_std)


def reconstruct_general(s: SampleSet, b: Bounds, p: float, q: float,
                        kernel_std: Optional[float] = None) -> ReconstructionResult:
    """Pointwise recovery for arbitrary constant exponents, without propagation.

    A sample is decided when exactly one candidate lies within the bounds
    (or both candidates coincide); everything else is interpolated.
    """
    e = ExponentPair(p, q)
    r = _empty_result(s, b)
    for j, m in enumerate(s.triples):
        cs = recover_candidates(m, e, (b.sigma_lo, b.sigma_hi), tol=b.eq_tol)
        if isinstance(cs, Double):
            r.double[j] = True
            r.sigma_plus[j], r.sigma_minus[j] = cs.sigma_plus, cs.sigma_minus
            r.n_plus[j], r.n_minus[j] = cs.n_plus, cs.n_minus
        ok = [sig for sig in cs.sigmas if b.sigma_lo <= sig <= b.sigma_hi]
        if len(ok) == 1 or (len(ok) == 2 and abs(ok[0] - ok[1]) <= b.eq_tol * max(ok)):
            r.sigma_est[j] = ok[0]
            r.labels[j] = DECIDED
        else:
            r.undecided[j] = True
    r.undecided_history = set(np.flatnonzero(r.undecided).tolist())
    for stage in ("before_double", "before_population", "before_interpolation"):
        r.stages[stage] = r.sigma_est.copy()
    return _finish(r, kernel_std)


def _errors(est, truth):
    denom = np.linalg.norm(truth)
    rel_l2 = float(np.linalg.norm(est - truth) / denom) if denom > 0 else float("nan")
    max_rel = float(np.max(np.abs(est - truth) / np.abs(truth))) if len(truth) else float("nan")
    return rel_l2, max_rel


def evaluate(r: ReconstructionResult, truth) -> dict:
    """Relative L2 and max relative errors, overall and per label."""
    truth = np.asarray(truth, dtype=float)
    if truth.shape != r.sigma_est.shape:
        raise ValueError(f"truth has {truth.size} samples, result has {r.M}")
    est = r.sigma_est
    smooth = r.sigma_smoothed if r.sigma_smoothed is not None else est
    rel_l2, max_rel = _errors(est, truth)
    rel_l2_s, max_rel_s = _errors(smooth, truth)
    per_label = {}
    for lab in TERMINAL:
        mask = r.labels == lab
        if mask.any():
            l2, mx = _errors(est[mask], truth[mask])
            per_label[lab] = {"count": int(mask.sum()), "rel_l2": l2, "max_rel": mx}
        else:
            per_label[lab] = {"count": 0, "rel_l2": None, "max_rel": None}
    return {
        "M": r.M,
        "rel_l2": rel_l2,
        "max_rel": max_rel,
        "rel_l2_smoothed": rel_l2_s,
        "max_rel_smoothed": max_rel_s,
        "decided_fraction": float(np.mean(r.labels == DECIDED)),
        "per_label": per_label,
    }


def _fmt(x) -> str:
    return format(float(x), ".17g")


RESULT_HEADER = ["theta", "sigma_est", "sigma_est_smoothed", "label",
                 "sigma_plus", "sigma_minus", "stopping"]


def write_result(r: ReconstructionResult, path: Union[str, Path],
                 metrics: Optional[dict] = None) -> None:
    """Result CSV plus, when ``metrics`` is given, a JSON sidecar next to it."""
    path = Path(path)
    smooth = r.sigma_smoothed if r.sigma_smoothed is not None else r.sigma_est
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULT_HEADER)
        for j in range(r.M):
            w.writerow([_fmt(r.thetas[j]), _fmt(r.sigma_est[j]), _fmt(smooth[j]), r.labels[j],
                        _fmt(r.sigma_plus[j]), _fmt(r.sigma_minus[j]), int(r.stopping[j])])
    if metrics is not None:
        path.with_suffix(".metrics.json").write_text(json.dumps(metrics, indent=2, sort_keys=True) + "\n")


def read_result(path: Union[str, Path]) -> Dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != RESULT_HEADER:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        rows = list(reader)
    if not rows:
        raise ValueError(f"{path}: no rows")
    out = {}
    for key in RESULT_HEADER:
        if key == "label":
            out[key] = np.array([row[key] for row in rows], dtype=object)
        else:
            try:
                out[key] = np.array([float(row[key]) for row in rows])
            except ValueError:
                raise ValueError(f"{path}: non-numeric value in column {key}") from None
    return out
