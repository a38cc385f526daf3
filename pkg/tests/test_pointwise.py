import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bdrecon.pointwise import (
    BracketError,
    Double,
    ExponentPair,
    InvalidExponentError,
    MeasurementTriple,
    Nothing,
    Unique,
    aet_closed_form,
    candidate_contains,
    cdii_closed_form,
    g_eval,
    g_roots,
    recover_candidates,
    synthesize_triple,
)

SQ3 = math.sqrt(3.0)


# --- g -----------------------------------------------------------------------

def test_g_zero():
    for diff in (-1.0, 0.0, 0.5, 1.0, 2.5):
        assert g_eval(0.0, 1.0, diff) == 0.0


def test_g_example():
    assert g_eval(3.0, 1.0, 0.0) == pytest.approx(3.0 / 10.0, rel=1e-15)


def test_g_limit_critical():
    assert abs(g_eval(1e8, 1.0, 1.0) - 1.0) <= 1e-8


def test_g_singular_origin():
    with pytest.raises(ZeroDivisionError):
        g_eval(0.0, 0.0, 0.5)
    assert g_eval(0.0, 0.0, 3.0) == 0.0


@given(st.floats(-50, 50), st.floats(0.01, 10), st.floats(-2, 4))
def test_g_odd(n, A, diff):
    assert g_eval(-n, A, diff) == -g_eval(n, A, diff)


@given(st.floats(0.01, 10), st.floats(1.0, 4.0), st.floats(1e-3, 20), st.floats(1e-3, 20))
def test_g_monotone_when_diff_at_least_one(A, diff, n1, n2):
    if n1 == n2:
        return
    lo, hi = sorted((n1, n2))
    assert g_eval(hi, A, diff) > g_eval(lo, A, diff)


# --- g_roots -----------------------------------------------------------------

def _grid_roots(target, A, diff, n_max, npts=10**6):
    # independent oracle: sign changes on a dense grid, refined by brentq
    from scipy.optimize import brentq
    n = np.linspace(n_max / npts, n_max, npts)
    f = (A * A + n * n) ** ((diff - 2) / 2) * n - target
    idx = np.flatnonzero(np.sign(f[:-1]) != np.sign(f[1:]))
    fn = lambda x: (A * A + x * x) ** ((diff - 2) / 2) * x - target
    return [brentq(fn, n[k], n[k + 1], xtol=1e-15) for k in idx]


def test_roots_quadratic():
    roots = g_roots(0.3, 1.0, 0.0, 100.0)
    assert roots == pytest.approx([1.0 / 3.0, 3.0], rel=1e-12)
    assert roots == pytest.approx(_grid_roots(0.3, 1.0, 0.0, 10.0), rel=1e-10)


def test_roots_peak():
    assert g_roots(0.5, 1.0, 0.0, 100.0) == [1.0]


def test_roots_monotone_oracle():
    # frozen from a 1e6-point grid on (0, 16] refined with brentq
    expected = 4.116342054542984
    roots = g_roots(2.0, 1.0, 1.5, 16.0)
    assert len(roots) == 1
    assert roots[0] == pytest.approx(expected, rel=1e-12)


def test_roots_above_peak_is_empty():
    assert g_roots(0.6, 1.0, 0.0, 100.0) == []


def test_roots_critical_asymptote_is_empty():
    assert g_roots(1.2, 1.0, 1.0, 1e6) == []


def test_roots_bracket_error_distinct_from_empty():
    with pytest.raises(BracketError):
        g_roots(5.0, 1.0, 1.5, 2.0)
    with pytest.raises(BracketError):
        # diff < 1, peak beyond n_max and ascending root beyond n_max too
        g_roots(0.49, 1.0, 0.0, 0.5)


def test_roots_descending_beyond_bracket_dropped():
    roots = g_roots(0.3, 1.0, 0.0, 2.0)
    assert roots == pytest.approx([1.0 / 3.0])


@settings(max_examples=200, deadline=None)
@given(st.floats(0.05, 5), st.floats(-1.5, 0.95), st.floats(0.01, 0.99))
def test_roots_residual_and_count(A, diff, frac):
    n_peak = A / math.sqrt(1 - diff)
    target = frac * g_eval(n_peak, A, diff)
    n_max = 1e3 * (1 + n_peak)
    tol = 1e-9
    try:
        roots = g_roots(target, A, diff, n_max, tol)
    except BracketError:
        return
    for r in roots:
        assert abs(g_eval(r, A, diff) - target) <= tol * target
    assert roots[0] <= n_peak
    if len(roots) == 2:
        assert roots[1] >= n_peak


# --- recover_candidates --------------------------------------------------------

def test_recover_double_aet():
    cs = recover_candidates(MeasurementTriple(0.5, SQ3 / 2, 1.0), ExponentPair(2, 2), (1e-3, 10))
    assert isinstance(cs, Double)
    assert cs.sigma_plus == pytest.approx(1.0, rel=1e-12)
    assert cs.n_plus == pytest.approx(SQ3 / 2, rel=1e-12)
    assert cs.sigma_minus == pytest.approx(3.0, rel=1e-12)
    assert cs.n_minus == pytest.approx(SQ3 / 6, rel=1e-12)


def test_recover_normal_zero():
    for p in (1.5, 2.0, 3.0):
        cs = recover_candidates(MeasurementTriple(2.0, 0.0, 8.0), ExponentPair(p, 2), (0.1, 10))
        assert cs == Unique(2.0, 0.0)


def test_recover_tangential_zero():
    cs = recover_candidates(MeasurementTriple(0.0, 6.0, 18.0), ExponentPair(2, 2), (0.1, 10))
    assert isinstance(cs, Unique)
    assert (cs.sigma, cs.n) == pytest.approx((2.0, 3.0), rel=1e-14)


def test_recover_tangential_zero_negative_flux():
    cs = recover_candidates(MeasurementTriple(0.0, -6.0, 18.0), ExponentPair(2, 2), (0.1, 10))
    assert (cs.sigma, cs.n) == pytest.approx((2.0, -3.0), rel=1e-14)


def test_recover_void_and_critical_nothing():
    assert isinstance(recover_candidates(MeasurementTriple(1, 1, 0), ExponentPair(2, 2), (0.1, 10)), Nothing)
    cs = recover_candidates(MeasurementTriple(0, 1, 1), ExponentPair(2, 1), (0.1, 10))
    assert isinstance(cs, Nothing)


def test_recover_inconsistent_is_nothing():
    # N/H above the peak 1/(2A) of g for p = q
    cs = recover_candidates(MeasurementTriple(1.0, 0.9, 1.0), ExponentPair(2, 2), (0.1, 10))
    assert isinstance(cs, Nothing)


def test_invalid_exponents():
    with pytest.raises(InvalidExponentError):
        ExponentPair(1.0, 1.0)
    with pytest.raises(InvalidExponentError):
        ExponentPair(2.0, -0.5)


def test_regime():
    assert ExponentPair(3, 1).regime() == "greater"
    assert ExponentPair(2, 1).regime() == "critical"
    assert ExponentPair(2, 2).regime() == "less"


def test_q_zero_branch():
    m = synthesize_triple(1.7, 0.8, 0.6, 2.5, 0.0)
    cs = recover_candidates(m, ExponentPair(2.5, 0.0), (0.1, 10))
    assert isinstance(cs, Unique)
    assert (cs.sigma, cs.n) == pytest.approx((1.7, 0.8), rel=1e-10)


def test_tangential_zero_formulas_agree_symbolically():
    sympy = pytest.importorskip("sympy")
    N, H, p, q = sympy.symbols("N H p q", positive=True)
    k = p - q - 1
    first = H ** (1 + q / k) * N ** (-q / k)
    second = N ** (1 - (p - 1) / k) * H ** ((p - 1) / k)
    assert sympy.simplify(sympy.powsimp(sympy.expand_power_exp(first / second), force=True)) == 1
    rng = np.random.default_rng(3)
    for _ in range(100):
        pv, qv = rng.uniform(1.1, 4), rng.uniform(0, 3)
        if abs(pv - qv - 1) < 0.05:
            continue
        nv, hv = rng.uniform(0.1, 5, 2)
        kv = pv - qv - 1
        a = hv ** (1 + qv / kv) * nv ** (-qv / kv)
        b = nv ** (1 - (pv - 1) / kv) * hv ** ((pv - 1) / kv)
        assert a == pytest.approx(b, rel=1e-10)


@settings(max_examples=300, deadline=None)
@given(st.floats(0.1, 10), st.one_of(st.just(0.0), st.floats(1e-3, 5), st.floats(-5, -1e-3)),
       st.one_of(st.just(0.0), st.floats(1e-3, 5)),
       st.floats(1.1, 4), st.floats(0.5, 3))
def test_round_trip_property(sigma, n, A, p, q):
    m = synthesize_triple(sigma, n, A, p, q)
    if m.H == 0:
        return
    e = ExponentPair(p, q)
    cs = recover_candidates(m, e, (0.1, 10), tol=1e-12)
    if A == 0 and abs(e.diff - 1) < 1e-12:
        assert isinstance(cs, Nothing)
        return
    if A == 0 and n == 0:
        return
    # near the double root the problem is ill conditioned
    if e.diff < 1 and A > 0 and n != 0:
        n_peak = A / math.sqrt(1 - e.diff)
        if abs(abs(n) - n_peak) < 1e-3 * n_peak:
            return
    assert candidate_contains(cs, sigma, n, 1e-8) is not None, cs


@settings(max_examples=300, deadline=None)
@given(st.floats(0.1, 10), st.floats(-5, 5), st.floats(0.01, 5), st.floats(1.1, 4), st.floats(0.5, 3))
def test_double_ordering(sigma, n, A, p, q):
    m = synthesize_triple(sigma, n, A, p, q)
    cs = recover_candidates(m, ExponentPair(p, q), (1e-6, 10))
    if isinstance(cs, Double):
        assert cs.sigma_plus <= cs.sigma_minus
        assert abs(cs.n_minus) <= abs(cs.n_plus)
    for s, nn in cs.pairs:
        if nn != 0:
            assert math.copysign(1, nn) == math.copysign(1, m.N)


def test_uniqueness_frontier():
    for A, diff in ((1.0, 0.0), (0.4, -0.5), (2.0, 0.5)):
        p, q = 2.0 + diff, 2.0
        n_star = A / math.sqrt(1 - diff)
        m = synthesize_triple(1.3, n_star, A, p, q)
        cs = recover_candidates(m, ExponentPair(p, q), (1e-3, 100))
        assert isinstance(cs, Unique)
        assert cs.sigma == pytest.approx(1.3, rel=1e-8)


# --- closed forms --------------------------------------------------------------

def test_cdii_example():
    cs = cdii_closed_form(MeasurementTriple(2, 3, 5))
    assert isinstance(cs, Unique)
    assert (cs.sigma, cs.n) == pytest.approx((2.0, 1.5))
    # consistency oracle: sigma = 2, n = 1.5 reproduces N = 3 and H = 5 for p = 2, q = 1
    m = synthesize_triple(2.0, 1.5, 2.0, 2.0, 1.0)
    assert (m.N, m.H) == pytest.approx((3.0, 5.0))


def test_cdii_zero_radicand():
    cs = cdii_closed_form(MeasurementTriple(1, 5, 5))
    assert cs.sigma == 0.0


def test_cdii_no_tangential():
    assert isinstance(cdii_closed_form(MeasurementTriple(0, 1, 2)), Nothing)


def test_aet_examples():
    cs = aet_closed_form(MeasurementTriple(0.5, SQ3 / 2, 1.0))
    assert (cs.sigma_plus, cs.sigma_minus) == pytest.approx((1.0, 3.0), rel=1e-12)
    r = math.sqrt(0.5)
    one = aet_closed_form(MeasurementTriple(r, r, 1.0))
    assert isinstance(one, Unique) and one.sigma == pytest.approx(1.0)
    cs = aet_closed_form(MeasurementTriple(1.0, 0.3, 1.0))
    assert (cs.n_plus, cs.n_minus) == pytest.approx((3.0, 1.0 / 3.0), rel=1e-12)
    assert (cs.sigma_plus, cs.sigma_minus) == pytest.approx((0.1, 0.9), rel=1e-12)
    disc = math.sqrt(1 - 4 * 0.09)
    assert 2 * 0.09 / (1 + disc) == pytest.approx(cs.sigma_plus, rel=1e-12)
    assert 2 * 0.09 / (1 - disc) == pytest.approx(cs.sigma_minus, rel=1e-12)


def test_aet_special_cases():
    assert isinstance(aet_closed_form(MeasurementTriple(1, 1, 0)), Nothing)
    assert aet_closed_form(MeasurementTriple(2, 0, 8)).sigma == pytest.approx(2.0)
    assert aet_closed_form(MeasurementTriple(0, 6, 18)).sigma == pytest.approx(2.0)


def test_aet_raw_radicand_variant_differs():
    m = MeasurementTriple(0.5, SQ3 / 2, 1.0)
    literal = aet_closed_form(m, raw_radicand=True)
    correct = aet_closed_form(m)
    assert literal.sigmas != pytest.approx(correct.sigmas)


@settings(max_examples=300, deadline=None)
@given(st.floats(0.1, 10), st.floats(-5, 5), st.floats(0.05, 5))
def test_closed_forms_match_root_finder(sigma, n, A):
    if abs(n) < 1e-3:
        return
    m = synthesize_triple(sigma, n, A, 2.0, 1.0)
    a = cdii_closed_form(m)
    b = recover_candidates(m, ExponentPair(2.0, 1.0), (1e-12, 1e12))
    assert a.sigma == pytest.approx(b.sigma, rel=1e-10)
    m = synthesize_triple(sigma, n, A, 2.0, 2.0)
    a = aet_closed_form(m)
    b = recover_candidates(m, ExponentPair(2.0, 2.0), (1e-12, 1e12))
    if abs(abs(n) - A) < 1e-3 * A:
        return
    assert type(a) is type(b)
    assert a.sigmas == pytest.approx(b.sigmas, rel=1e-10)
