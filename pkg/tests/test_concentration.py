from __future__ import annotations

import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from finitary.cftp import UnresolvedError, pca_coding, radius_oracle, sample_region
from finitary.chains import ChainSpec, Doeblin, multigamma_cftp
from finitary.concentration import (
    GcbBounds, InconsistencyError, InfluenceAuditError, KappaSource, PatternEvent, ThresholdEvent,
    admissible_triples, blowup_bound, blowup_check, factorization_test, influence_coefficients,
    kappa_from_moments, marton_bound_test, radius_moments, verify_gcb,
)
from finitary.fields import IsingSpec, ising_sample_block, noisy_majority_pca, symbol_copy_pca
from finitary.lattice import Box, Window, constant, single_spin
from finitary.noise import NoiseSource


def fair_bits(seed: int, n: int, m: int) -> np.ndarray:
    u = NoiseSource(seed).uniforms(np.arange(n)[:, None], np.arange(m)[:, None], 0)
    return (u < 0.5).astype(np.int64)


def geometric_radii(seed: int, n: int) -> np.ndarray:
    # P(r = j) = 2^-(j+1) on {0, 1, ...}
    u = NoiseSource(seed).uniforms(np.arange(n), [0], 0)
    return np.floor(-np.log2(1.0 - u)).astype(np.int64)


# radius moments and kappa ---------------------------------------------------------


def test_zero_radii_moment():
    rep = radius_moments(np.zeros(500, dtype=int), d=2, p=2)
    assert rep.estimate == 1.0 and rep.ci == (1.0, 1.0)


def test_geometric_radii_moments():
    r = geometric_radii(1, 100_000)
    m1 = radius_moments(r, d=1, p=1)
    assert abs(m1.estimate - 3.0) < 0.05
    assert m1.ci[0] <= m1.estimate <= m1.ci[1]
    m2 = radius_moments(r, d=1, p=2)
    sd = np.std((2 * r + 1) ** 2.0) / math.sqrt(r.size)
    assert abs(m2.estimate - 17.0) < 3 * sd
    assert m2.exponential_tail
    assert abs(m2.tail_slope - math.log(0.5)) < 0.05


def test_heavy_tail_warning():
    r = np.zeros(1000, dtype=int)
    r[:5] = 500
    assert any("heavy tail" in w for w in radius_moments(r, 1, 2).warnings)


def test_moments_refuse_unresolved():
    with pytest.raises(UnresolvedError):
        radius_moments([0, 1, 2], 1, 1, unresolved=1)


def test_kappa_examples():
    zero = radius_moments(np.zeros(100, dtype=int), d=1, p=2)
    assert kappa_from_moments(zero, "SecondMoment").kappa == 2.0
    r = geometric_radii(1, 100_000)
    rep = kappa_from_moments(radius_moments(r, 1, 2), KappaSource.SECOND_MOMENT)
    assert rep.C == 2 * rep.kappa
    assert abs(rep.kappa - 34.0) < 2.0 * 3 * np.std((2 * r + 1) ** 2.0) / math.sqrt(r.size)
    assert rep.kappa_upper >= rep.kappa
    mc = kappa_from_moments(None, "McDiarmid")
    assert mc.kappa == 0.125 and mc.C == 0.25


def test_left_finitary_kappa():
    rep = radius_moments(np.zeros(10, dtype=int), 1, 1)
    assert kappa_from_moments(rep, "LeftFinitary").kappa == 3.0
    with pytest.raises(ValueError):
        kappa_from_moments(radius_moments(np.zeros(10, dtype=int), 2, 1), "LeftFinitary")


def test_cone_requires_passed_factorization():
    rep = radius_moments(np.zeros(10, dtype=int), 1, 1)
    with pytest.raises(ValueError, match="factorization"):
        kappa_from_moments(rep, "Cone", alpha=0.5)
    sites = [(i,) for i in range(5)]
    good = factorization_test(np.zeros((50, 5), dtype=int), sites, 0.5)
    assert good.passed
    k = kappa_from_moments(rep, "Cone", alpha=0.5, factorization=good)
    assert k.kappa == pytest.approx(3 * 2.0 * 1.0)
    with pytest.raises(ValueError, match="different alpha"):
        kappa_from_moments(rep, "Cone", alpha=1.0, factorization=good)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, 6), min_size=2, max_size=30), st.lists(st.integers(0, 3), min_size=30, max_size=30))
def test_kappa_monotone_in_radii(r, extra):
    """Larger radii never give a smaller plug-in kappa."""
    r = np.array(r)
    r2 = r + np.array(extra[: r.size])
    for d in (1, 2):
        k1 = kappa_from_moments(radius_moments(r, d, 2), "SecondMoment").kappa
        k2 = kappa_from_moments(radius_moments(r2, d, 2), "SecondMoment").kappa
        assert k2 >= k1


def _symbol_reader(w):
    return lambda s: (lambda t: w.get(s, 0))


def test_kappa_from_algorithmic_radii_dominates_exact():
    code = pca_coding(symbol_copy_pca(), t_max=1, uniform_input=False)
    rng = np.random.default_rng(5)
    alg, exact = [], []
    for _ in range(30):
        x = Window({(i,): int(rng.integers(0, 4)) for i in range(-2, 1)})
        _, r = code(_symbol_reader(x), (0,))
        res = radius_oracle(lambda w: code(_symbol_reader(w), (0,))[0], x, 2, 4)
        alg.append(r)
        exact.append(res.radius)
    ka = kappa_from_moments(radius_moments(alg, 1, 2), "SecondMoment").kappa
    ke = kappa_from_moments(radius_moments(exact, 1, 2), "SecondMoment").kappa
    assert ka >= ke


@settings(max_examples=100, deadline=None)
@given(st.floats(0.0, 10.0), st.floats(0.01, 10.0), st.floats(0.0, 5.0))
def test_shared_bound_shapes(kappa, osc2, u):
    b = GcbBounds(kappa, osc2)
    assert b.C == 2 * kappa
    assert b.variance == pytest.approx(b.C * osc2)
    if 2 * b.C * osc2 > 0:
        assert float(b.tail(u)) == pytest.approx(2 * math.exp(-(u**2) / (2 * b.C * osc2)))
    else:
        assert float(b.tail(u)) == (0.0 if u > 0 else 2.0)


# verify_gcb -----------------------------------------------------------------------


def test_single_spin_log_cosh():
    s = 2 * fair_bits(2, 100_000, 1)[:, 0] - 1
    lambdas = np.round(np.arange(0.1, 3.01, 0.1), 2)
    f = single_spin((0,))
    rep = verify_gcb(s, f, 0.125, lambdas, us=[0.5, 1.5], source="McDiarmid")
    assert rep.osc2 == 4.0
    assert rep.verdict, rep.as_dict()
    assert all(m >= 0 for m in rep.mgf_margins)
    exact = np.log(np.cosh(lambdas))
    assert np.all(exact <= np.array(rep.mgf_bound))
    # the estimator itself agrees with log cosh where it is stable
    for lam, emp, ex in zip(lambdas[:10], rep.mgf_empirical, exact):
        assert abs(emp - ex) < 0.01, lam
    assert rep.as_dict()["source"] == "McDiarmid"


def test_constant_observable():
    rep = verify_gcb(np.full(1000, 3.0), constant(3.0), 0.125, [0.5, 1, 2], us=[0.1])
    assert rep.verdict and rep.osc2 == 0.0


def test_zero_oscillation_but_varying_samples():
    x = np.arange(1000, dtype=float)
    with pytest.raises(InconsistencyError):
        verify_gcb(x, constant(0.0), 0.125, [0.5])


def test_minimum_replicas():
    with pytest.raises(ValueError):
        verify_gcb(np.zeros(10), 1.0, 0.1, [0.5])


def test_block_mean_tail_matches_binomial():
    n_spins, n = 100, 20_000
    bits = fair_bits(7, n, n_spins)
    means = (2 * bits - 1).mean(axis=1)
    osc2 = n_spins * (2.0 / n_spins) ** 2
    # block means live on a 0.02 grid; u off the grid keeps centring from moving atoms across u
    us = [0.11, 0.21, 0.31, 0.5]
    rep = verify_gcb(means, osc2, 0.125, [0.5, 1.0], us=us)
    assert rep.verdict
    # u = 0.5 bound is 2 exp(-u^2 * 100 / 2)
    assert rep.tail_bound[-1] == pytest.approx(2 * math.exp(-0.25 * 100 / 2))
    for u, p_emp in zip(us, rep.tail_empirical):
        k_hi = math.floor(n_spins / 2 * (1 + u) + 1e-9)
        k_lo = math.ceil(n_spins / 2 * (1 - u) - 1e-9)
        # |2K/100 - 1| > u  <=>  K > 50(1+u) or K < 50(1-u)
        exact = stats.binom.sf(k_hi, n_spins, 0.5) + stats.binom.cdf(k_lo - 1, n_spins, 0.5)
        lo, hi = stats.binomtest(int(round(p_emp * n)), n).proportion_ci(0.999)
        assert lo <= exact <= hi, u
        assert exact <= 2 * math.exp(-(u**2) * n_spins / 2)


def test_variance_check_fails_for_undersized_kappa():
    s = 2 * fair_bits(3, 5000, 1)[:, 0] - 1
    rep = verify_gcb(s, 4.0, 0.05, [0.1])
    assert rep.variance_margin < 0 and not rep.verdict


# Marton -------------------------------------------------------------------------


def _bits_resample(rng, shape):
    return rng.integers(0, 2, size=shape)


def test_marton_linear():
    a = np.array([1.0, 0.5, 2.0, 0.25])
    X = fair_bits(11, 20_000, 4)
    rep = marton_bound_test(X, lambda x: x @ a, lambda x: np.broadcast_to(a, x.shape), [0.2, 0.5, 1.0, 2.0],
                            _bits_resample)
    assert rep.verdict and rep.sum_c2 == pytest.approx((a**2).sum())


def test_marton_max_of_uniforms():
    n = 20_000
    X = NoiseSource(12).uniforms(np.arange(n)[:, None], np.arange(5)[:, None], 0)
    lambdas = [0.5, 1.0, 2.0, 4.0]
    rep = marton_bound_test(X, lambda x: x.max(axis=1), lambda x: np.ones_like(x), lambdas,
                            lambda rng, shape: rng.random(shape))
    assert rep.verdict
    # exact law of the max: density 5 x^4 on [0, 1], mean 5/6
    for lam, emp, b in zip(lambdas, rep.empirical, rep.bound):
        mgf, _ = integrate.quad(lambda x: 5 * x**4 * math.exp(lam * (x - 5 / 6)), 0, 1)
        assert math.log(mgf) <= b
        assert abs(emp - math.log(mgf)) < 0.02


def _toboggan_truncated(coins: np.ndarray, m: int, n: int):
    """Truncated toboggan values and radii at sites 0..m-1 from a coin window of length m + n."""
    N = coins.shape[0]
    theta = np.full((N, m), n + 1)
    for j in range(m):
        for k in range(n, -1, -1):
            theta[:, j] = np.where(coins[:, j + k] == 1, k, theta[:, j])
    trunc = theta > n
    return np.where(trunc, 0, theta), np.where(trunc, n, theta)


def test_marton_truncated_toboggan():
    m, n = 6, 5
    coins = fair_bits(13, 10_000, m + n)

    def g(x):
        y, _ = _toboggan_truncated(x, m, n)
        return y.sum(axis=1) / n

    def c(x):
        _, r = _toboggan_truncated(x, m, n)
        out = np.zeros(x.shape)
        for row in range(x.shape[0]):
            ci = influence_coefficients({(j,): 1.0 for j in range(m)}, {(j,): int(r[row, j]) for j in range(m)})
            for (i,), v in ci.items():
                if 0 <= i < x.shape[1]:
                    out[row, i] = v
        return out

    rep = marton_bound_test(coins, g, c, [0.25, 0.5, 1.0, 2.0], _bits_resample, audit_pairs=1000)
    assert rep.verdict
    assert rep.audited_pairs == 1000


def test_marton_audit_witness():
    X = fair_bits(14, 2000, 4)
    g = lambda x: x.sum(axis=1).astype(float)
    c = lambda x: np.full(x.shape, 0.5)
    with pytest.raises(InfluenceAuditError) as exc:
        marton_bound_test(X, g, c, [0.5], _bits_resample)
    x, xp = exc.value.witness
    assert abs(x.sum() - xp.sum()) > 0.5 * (x != xp).sum()


def test_influence_coefficients():
    ci = influence_coefficients({(0,): 1.0, (3,): 2.0}, {(0,): 1, (3,): 0})
    assert ci == {(-1,): 1.0, (0,): 1.0, (1,): 1.0, (3,): 2.0}


# factorization ------------------------------------------------------------------


def test_admissible_triples_condition():
    sites = [(i, j) for i in range(3) for j in range(3)]
    tr = admissible_triples(sites)
    for k, l, i in tr:
        dli = max(abs(a - b) for a, b in zip(l, i))
        assert dli >= max(abs(a - b) for a, b in zip(k, i))
        assert dli >= max(abs(a - b) for a, b in zip(l, k))
    assert len(admissible_triples(sites, max_triples=50, seed=1)) == 50


def test_non_admissible_triple_refused():
    with pytest.raises(ValueError):
        factorization_test(np.zeros((10, 3), dtype=int), [(0,), (1,), (5,)], 1.0, [((5,), (0,), (1,))])


def test_pca_factorization_half():
    spec = noisy_majority_pca(1, 0.3)
    region = Box((0,), 6)
    _, tau, done = sample_region(spec, region, 11, np.arange(4000), 256)
    assert done.all()
    sites = list(region.sites())
    tr = admissible_triples(sites, max_triples=300, seed=1)
    rep = factorization_test(tau * spec.reach, sites, 0.5, tr)
    assert len(rep.triples) == 300 and rep.passed


def chain_left_radii(seed: int, n: int, times, beta: float) -> np.ndarray:
    """Left radii K_t = min{k >= 1 : regeneration coin at t-k fires} under shared noise."""
    noise = NoiseSource(seed)
    times = list(times)
    t_lo = min(times) - 64
    ts = np.arange(t_lo, max(times))
    hit = noise.uniforms(np.arange(n)[:, None], [0], ts[None, :]) < beta
    out = np.zeros((n, len(times)), dtype=np.int64)
    for c, t in enumerate(times):
        pend = np.ones(n, dtype=bool)
        for k in range(1, 64):
            h = hit[:, t - k - t_lo] & pend
            out[h, c] = k
            pend &= ~h
        assert not pend.any()
    return out


def test_chain_radii_match_multigamma():
    spec = ChainSpec(np.array([[0.5, 0.5], [0.5, 0.5]]), Doeblin(1, 0.5, (0.5, 0.5)))
    _, theta = multigamma_cftp(spec, NoiseSource(4), np.arange(2000))
    assert np.array_equal(chain_left_radii(4, 2000, [0], 0.5)[:, 0], theta)


def test_chain_factorization_forward_orientation():
    sites = [(t,) for t in range(13)]
    R = chain_left_radii(3, 20_000, range(13), 0.5)
    forward = [t for t in admissible_triples(sites) if t[2][0] < t[0][0] < t[1][0]]
    assert len(forward) >= 200
    assert factorization_test(R, sites, 1.0, forward).passed


def test_chain_factorization_mirror_counterexample():
    # l=0, k=2, i=6: both events need coin -1 silent, LHS = 1/8 > RHS = 1/16
    sites = [(t,) for t in range(7)]
    R = chain_left_radii(3, 20_000, range(7), 0.5)
    rep = factorization_test(R, sites, 1.0, [((2,), (0,), (6,))])
    assert rep.lhs[0] == pytest.approx(1 / 8, abs=0.01)
    assert rep.rhs[0] == pytest.approx(1 / 16, abs=0.01)
    assert rep.violations == [0]


def test_correlated_radii_detected():
    r = geometric_radii(9, 5000)
    R = np.repeat(r[:, None], 3, axis=1)
    # k=1, l=2, i=0: LHS = P(r >= 1) = 1/2, RHS = P(r >= 1)^2 = 1/4
    rep = factorization_test(R, [(0,), (1,), (2,)], 1.0, [((1,), (2,), (0,))])
    assert rep.lhs[0] == pytest.approx(0.5, abs=0.03)
    assert rep.rhs[0] == pytest.approx(0.25, abs=0.03)
    assert not rep.passed


def test_factorization_wide_interval_warning():
    rep = factorization_test(np.zeros((20, 3), dtype=int), [(0,), (1,), (2,)], 1.0, [((1,), (2,), (0,))])
    assert rep.warnings


# blow-up ------------------------------------------------------------------------


def test_blowup_whole_space():
    Y = fair_bits(5, 2000, 10)
    ev = ThresholdEvent((0.0, 1.0), 0.0)
    rep = blowup_check(Y, ev, 0.1, 0.125)
    assert rep.nu_E == 1.0 and rep.nu_blow == 1.0 and rep.bound == 1.0
    assert rep.status == "PASS"


def test_threshold_distance_brute_force():
    rng = np.random.default_rng(0)
    scores = (0.0, 0.5, 2.0)
    Y = rng.integers(0, 3, size=(40, 5))
    ev = ThresholdEvent(scores, 4.0)
    all_cfg = np.array(np.meshgrid(*[range(3)] * 5, indexing="ij")).reshape(5, -1).T
    inE = all_cfg[np.asarray(scores)[all_cfg].sum(axis=1) >= 4.0]
    brute = PatternEvent(inE).distance(Y)
    assert np.array_equal(ev.distance(Y), brute)


def test_threshold_unreachable():
    ev = ThresholdEvent((0.0, 1.0), 10.0)
    assert ev.distance(np.zeros((1, 3), dtype=int))[0] > 3


def test_unsupported_event():
    with pytest.raises(TypeError):
        blowup_check(np.zeros((5, 2), dtype=int), object(), 0.1, 0.1)


def test_blowup_binomial_exact():
    n_sites, kappa = 20, 0.125
    nu_E = stats.binom.sf(14, n_sites, 0.5)
    # eps = 0.2: d < 4 means at least 12 pluses (strict inequality)
    ev = ThresholdEvent((0.0, 1.0), 15.0)
    Y = fair_bits(6, 50_000, n_sites)
    d = ev.distance(Y)
    assert np.array_equal(d < 0.2 * n_sites, Y.sum(axis=1) >= 12)
    thr = math.sqrt(2 * 2 * kappa / n_sites * math.log(1 / nu_E))
    assert thr == pytest.approx(0.3113, abs=1e-3)
    assert blowup_bound(nu_E, 0.2, n_sites, kappa) is None
    assert blowup_check(Y, ev, 0.2, kappa).status == "VACUOUS"
    for eps in (0.35, 0.4, 0.5, 0.6):
        need = math.floor(15 - Fraction(str(eps)) * n_sites) + 1  # pluses k with 15 - k < eps * 20
        exact_blow = stats.binom.sf(need - 1, n_sites, 0.5)
        b = blowup_bound(nu_E, eps, n_sites, kappa)
        assert b is not None and exact_blow >= b
        rep = blowup_check(Y, ev, eps, kappa)
        assert rep.status == "PASS"
        assert rep.nu_blow_ci[0] <= exact_blow <= rep.nu_blow_ci[1] + 1e-12
        assert rep.nu_blow >= rep.nu_E


def test_blowup_status_flags_violation():
    # synthetic law with [E]_eps = E: the bound must be reported as violated
    Y = np.zeros((4000, 20), dtype=int)
    Y[:400] = 1
    rep = blowup_check(Y, PatternEvent(np.ones((1, 20), dtype=int)), 0.05, 0.001)
    assert rep.status == "FAIL" and not rep.strict_pass


def test_blowup_ising_pattern_vacuous():
    spec = IsingSpec(2, 0.2)
    box = Box((0, 0), 1)
    rows, radii = [], []
    for r in range(2000):
        s, tau, done = ising_sample_block(spec, box, 21, r)
        assert done.all()
        rows.append((s.reshape(-1) > 0).astype(int))
        radii.append(tau.reshape(-1))
    Y = np.array(rows)
    kappa = kappa_from_moments(radius_moments(np.concatenate(radii), 2, 2), "SecondMoment").kappa
    rep = blowup_check(Y, PatternEvent(np.ones((1, 9), dtype=int)), 2 / 9, kappa)
    assert 0 < rep.nu_E < rep.nu_blow
    assert rep.status == "VACUOUS"
    # the McDiarmid constant of an independent field is also too large at eps = 2/9
    assert blowup_bound(rep.nu_E, 2 / 9, 9, 0.125) is None
