from __future__ import annotations

import math
import warnings

import numpy as np
import pytest

from finitary.chains import (
    CertificateError, ChainSpec, Doeblin, PeriodicError, RenewalSpec, TobogganSpec, multigamma_cftp, renewal_cftp,
    renewal_theta_batch, return_time_tail, scum_cftp, scum_geometric_memory, scum_iid, scum_markov,
    scum_theta_mean, simulate_path, toboggan_batch, toboggan_coding, toboggan_window, verify_doeblin,
)
from finitary.noise import NoiseSource, RecordingNoise
from finitary.stats import chi2_gof, clopper_pearson, empirical_law, mean_ci, stationary_distribution, total_variation

CHAINS = [
    [[0.5, 0.3, 0.2], [0.2, 0.5, 0.3], [0.3, 0.2, 0.5]],
    [[0.1, 0.8, 0.1], [0.6, 0.2, 0.2], [0.3, 0.3, 0.4]],
    [[0.9, 0.05, 0.05], [0.1, 0.8, 0.1], [0.25, 0.25, 0.5]],
]


def _one_step_certificate(P):
    P = np.asarray(P)
    col = P.min(axis=0)
    beta = float(col.sum())
    return ChainSpec(P, Doeblin(1, beta, tuple(col / beta)))


# multigamma ----------------------------------------------------------------------


def test_certificate_checks():
    P = np.array(CHAINS[0])
    with pytest.raises(CertificateError):
        verify_doeblin(ChainSpec(P))
    with pytest.raises(CertificateError):
        verify_doeblin(ChainSpec(P, Doeblin(1, 0.9, (1 / 3, 1 / 3, 1 / 3))))
    with pytest.raises(CertificateError):
        multigamma_cftp(ChainSpec(P, Doeblin(1, 0.5, (0.5, 0.5))), NoiseSource(0), [0])


def test_rows_must_be_stochastic():
    with pytest.raises(ValueError):
        ChainSpec(np.array([[0.5, 0.4], [0.5, 0.5]]))
    spec = ChainSpec.truncated([[0.5, 0.4], [0.5, 0.5]])
    assert spec.mass_defect == pytest.approx(0.1)


def test_uniform_rows_regenerate_immediately():
    nu = (0.2, 0.3, 0.5)
    spec = ChainSpec(np.tile(nu, (3, 1)), Doeblin(1, 1.0, nu))
    states, theta = multigamma_cftp(spec, NoiseSource(0), np.arange(20_000))
    assert (theta == 1).all()
    _, p, _ = chi2_gof(np.bincount(states, minlength=3), nu)
    assert p > 0.001


def test_multigamma_theta_geometric():
    P = np.array([[0.5, 0.5], [0.5, 0.5]])
    spec = ChainSpec(P, Doeblin(1, 0.5, (0.5, 0.5)))
    _, theta = multigamma_cftp(spec, NoiseSource(1), np.arange(10**5))
    assert abs(theta.mean() - 2.0) < 0.04
    kmax = 20
    counts = np.bincount(np.minimum(theta, kmax), minlength=kmax + 1)[1:]
    probs = [0.5**k for k in range(1, kmax)] + [0.5 ** (kmax - 1)]
    _, p, _ = chi2_gof(counts, probs)
    assert p > 0.001


@pytest.mark.parametrize("P", CHAINS)
def test_multigamma_stationary_law(P):
    spec = _one_step_certificate(P)
    states, _ = multigamma_cftp(spec, NoiseSource(2), np.arange(10**5))
    assert total_variation(empirical_law(states, 3), stationary_distribution(np.array(P))) < 0.01


def test_multigamma_two_step_certificate():
    # zero entries in P but a positive two-step minorisation
    P = np.array([[0.0, 1.0, 0.0], [0.0, 0.5, 0.5], [0.5, 0.5, 0.0]])
    P2 = P @ P
    col = P2.min(axis=0)
    spec = ChainSpec(P, Doeblin(2, float(col.sum()), tuple(col / col.sum())))
    states, theta = multigamma_cftp(spec, NoiseSource(3), np.arange(50_000))
    assert (theta % 2 == 0).all()
    # the sampled state is that of P^2 at time 0; its stationary law is that of P
    assert total_variation(empirical_law(states, 3), stationary_distribution(P)) < 0.015


def test_chain_codings_read_only_the_past():
    spec = _one_step_certificate(CHAINS[1])
    rec = RecordingNoise(4)
    multigamma_cftp(spec, rec, np.arange(100))
    assert rec.max_time <= 0
    rec = RecordingNoise(4)
    renewal_cftp(RenewalSpec((0.7, 0.3)), rec, 0, start=-5, end=0)
    assert rec.max_time <= 0
    rec = RecordingNoise(4)
    scum_cftp(scum_markov(np.array([[0.6, 0.4], [0.3, 0.7]])), rec, np.arange(100), length=3)
    assert rec.max_time <= 0


def test_toboggan_reads_the_future():
    rec = RecordingNoise(4)
    x, theta = toboggan_coding(TobogganSpec.geometric(), 5, rec, 0)
    assert rec.min_time == 5 and rec.max_time == 5 + x


# toboggan ----------------------------------------------------------------------------


def test_toboggan_theta_law():
    theta = toboggan_batch(NoiseSource(5), np.arange(10**5))
    assert abs(np.mean(theta == 0) - 0.5) < 0.01
    assert abs(np.mean(theta.astype(float) ** 2) - 3.0) < 0.1


def test_toboggan_scalar_and_batch_agree():
    noise = NoiseSource(6)
    spec = TobogganSpec.geometric()
    batch = toboggan_batch(noise, np.arange(200), i=3)
    assert [toboggan_coding(spec, 3, noise, s)[1] for s in range(200)] == batch.tolist()


def test_toboggan_window_consistent_with_coding():
    noise = NoiseSource(7)
    X, theta = toboggan_window(12, noise, 2, start=-4)
    spec = TobogganSpec.geometric()
    for j in range(12):
        assert X[j] == toboggan_coding(spec, -4 + j, noise, 2)[0]
    # X is the chain: it decreases by one until it hits 0
    for a, b in zip(X[:-1], X[1:]):
        assert b == a - 1 or a == 0


def test_toboggan_stationary_formula():
    spec = TobogganSpec.geometric(40)
    pi = stationary_distribution(spec.kernel())
    assert np.allclose(pi, [2.0 ** -(j + 1) for j in range(40)] / np.sum([2.0 ** -(j + 1) for j in range(40)]))


def test_toboggan_marginal_matches_eigen_solve():
    spec = TobogganSpec.geometric(30)
    theta = toboggan_batch(NoiseSource(8), np.arange(10**5))
    pi = stationary_distribution(spec.kernel())
    assert total_variation(empirical_law(np.minimum(theta, 29), 30), pi) < 0.02


def test_toboggan_general_law_via_renewal():
    spec = TobogganSpec((0.5, 0.3, 0.2))
    noise = NoiseSource(9)
    xs = np.array([toboggan_coding(spec, 0, noise, s)[0] for s in range(20_000)])
    pi = stationary_distribution(spec.kernel())
    assert total_variation(empirical_law(xs, 3), pi) < 0.02


# renewal ---------------------------------------------------------------------------


def test_renewal_validation():
    with pytest.raises(ValueError, match="gcd"):
        RenewalSpec((0.0, 0.5, 0.0, 0.5))
    spec = RenewalSpec((0.0, 0.5, 0.5))
    assert spec.beta_star == 0
    with pytest.raises(ValueError, match="exponential"):
        renewal_cftp(spec, NoiseSource(0))


def test_renewal_constant_hazard_is_iid():
    spec = RenewalSpec.truncated([2.0**-k for k in range(1, 41)])
    w, _ = renewal_cftp(spec, NoiseSource(1), 0, start=-20_000, end=0)
    n = w.size
    assert abs(w.mean() - 0.5) < 3 * 0.5 / math.sqrt(n)
    lag = np.corrcoef(w[:-1], w[1:])[0, 1]
    assert abs(lag) < 3 / math.sqrt(n)


def test_renewal_inter_arrivals():
    w, _ = renewal_cftp(RenewalSpec((0.7, 0.3)), NoiseSource(2), 0, start=-20_000, end=0)
    gaps = np.diff(np.nonzero(w)[0])
    assert set(np.unique(gaps)) <= {1, 2}
    n = gaps.size
    p1 = np.mean(gaps == 1)
    assert n > 10_000 and abs(p1 - 0.7) < 3 * math.sqrt(0.21 / n)


def test_renewal_theta_dominated_by_geometric():
    spec = RenewalSpec((0.3, 0.2, 0.5))
    bs = spec.beta_star
    theta = renewal_theta_batch(spec, NoiseSource(3), np.arange(50_000))
    for t in range(0, 15):
        k = int((theta > t).sum())
        _, lo, _ = clopper_pearson(k, theta.size, 0.999)
        assert lo <= (1 - bs) ** t


def test_renewal_window_and_batch_theta_agree():
    spec = RenewalSpec((0.3, 0.2, 0.5))
    noise = NoiseSource(4)
    batch = renewal_theta_batch(spec, noise, np.arange(100))
    assert [renewal_cftp(spec, noise, s)[1] for s in range(100)] == batch.tolist()


def test_renewal_stationary_rate():
    spec = RenewalSpec((0.3, 0.2, 0.5))
    noise = NoiseSource(5)
    first = np.array([renewal_cftp(spec, noise, s)[0][0] for s in range(20_000)])
    p = 1 / spec.mean()
    assert abs(first.mean() - p) < 3 * math.sqrt(p * (1 - p) / first.size)


# SCUM ---------------------------------------------------------------------------------


def test_scum_iid():
    spec = scum_iid((0.2, 0.8))
    assert spec.alpha().tolist() == [1.0]
    W, theta = scum_cftp(spec, NoiseSource(0), np.arange(20_000))
    assert (theta == 0).all()
    _, p, _ = chi2_gof(np.bincount(W[:, 0], minlength=2), (0.2, 0.8))
    assert p > 0.001


def test_scum_markov_law():
    P = np.array([[0.6, 0.4], [0.3, 0.7]])
    W, _ = scum_cftp(scum_markov(P), NoiseSource(1), np.arange(10**4))
    assert total_variation(empirical_law(W[:, 0], 2), stationary_distribution(P)) < 0.02


def test_scum_markov_window_transitions():
    P = np.array([[0.6, 0.4], [0.3, 0.7]])
    W, _ = scum_cftp(scum_markov(P), NoiseSource(2), np.arange(20_000), length=2)
    pairs = np.bincount(2 * W[:, 0] + W[:, 1], minlength=4) / W.shape[0]
    pi = stationary_distribution(P)
    assert np.allclose(pairs, (pi[:, None] * P).reshape(-1), atol=0.015)


def test_scum_geometric_memory_theta():
    spec = scum_geometric_memory()
    alpha = spec.alpha()
    assert np.prod(alpha) >= 0.5
    exact = scum_theta_mean(alpha)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        _, th_small = scum_cftp(spec, NoiseSource(3), np.arange(10**4))
        _, th_big = scum_cftp(spec, NoiseSource(3), np.arange(10**5))
    m_small, m_big = th_small.mean(), th_big.mean()
    assert abs(m_small - m_big) <= 0.05 * m_big
    est, lo, hi = mean_ci(th_big, 0.999)
    assert lo <= exact <= hi


def test_scum_theta_mean_simple_cases():
    assert scum_theta_mean([1.0]) == 0.0
    # Markov with alpha_0 = a: theta is the number of consecutive steps needing one symbol
    a = 0.3
    assert scum_theta_mean([a, 1.0]) == pytest.approx((1 - a) / a)


def test_scum_binding_truncation_warns():
    with pytest.warns(UserWarning, match="binding"):
        scum_cftp(scum_geometric_memory(memory=4), NoiseSource(0), np.arange(10))


def test_scum_refuses_zero_product():
    P = np.array([[1.0, 0.0], [0.0, 1.0]])
    with pytest.raises(ValueError):
        scum_cftp(scum_markov(P), NoiseSource(0), [0])


# return times ----------------------------------------------------------------------


def test_return_rate_two_state():
    spec = ChainSpec(np.array([[0.5, 0.5], [0.5, 0.5]]))
    path = simulate_path(spec, 200_000, NoiseSource(4))
    rep = return_time_tail(path, 0)
    assert rep.exponential_compatible
    assert abs(rep.rate - math.log(2)) < 0.1 * math.log(2)


def test_return_rate_toboggan():
    spec = TobogganSpec.geometric(40)
    path = simulate_path(ChainSpec(spec.kernel()), 200_000, NoiseSource(5))
    taus = np.diff(np.nonzero(path == 0)[0])
    assert abs(np.mean(taus == 1) - 0.5) < 0.01
    rep = return_time_tail(path, 0)
    assert abs(rep.rate - math.log(2)) < 0.1 * math.log(2)


def test_periodic_chain_rejected():
    path = np.tile([0, 1], 500)
    with pytest.raises(PeriodicError):
        return_time_tail(path, 0)


def test_too_few_visits():
    with pytest.raises(ValueError, match="visited"):
        return_time_tail(np.array([0, 1, 1, 1, 0]), 0)
