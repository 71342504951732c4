"""Radius moments, concentration constants and empirical bound checks.

Every bound is expressed through one coefficient kappa with
log E exp(lambda (f - Ef)) <= kappa lambda^2 ||delta f||_2^2.  The constant C
of the two-sided form exp(C/2 ...) is C = 2 kappa.  ``GcbBounds`` is the only
place where the tail exponent, variance cap and blow-up constant are derived
from kappa.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Sequence

import numpy as np
from scipy.special import logsumexp

from .cftp import UnresolvedError
from .lattice import Box, Observable, Site, linf, osc_norm
from .stats import clopper_pearson, linear_fit, mean_ci, pairwise_sum, variance_ci, wilson, z_value


class InconsistencyError(ValueError):
    """Samples contradict the declared observable (e.g. zero oscillation but varying values)."""


class InfluenceAuditError(AssertionError):
    def __init__(self, message: str, witness: tuple[np.ndarray, np.ndarray]):
        super().__init__(message)
        self.witness = witness


class KappaSource(str, Enum):
    SECOND_MOMENT = "SecondMoment"
    CONE = "Cone"
    LEFT_FINITARY = "LeftFinitary"
    MCDIARMID = "McDiarmid"
    USER = "UserSupplied"


@dataclass(frozen=True)
class GcbBounds:
    """Bounds implied by kappa for an observable with ||delta f||_2^2 = osc2."""

    kappa: float
    osc2: float

    @property
    def C(self) -> float:
        return 2.0 * self.kappa

    def log_mgf(self, lam):
        return self.kappa * np.asarray(lam, dtype=float) ** 2 * self.osc2

    def tail(self, u):
        u = np.asarray(u, dtype=float)
        denom = 4.0 * self.kappa * self.osc2
        if denom == 0:  # also catches a tiny kappa * osc2 that underflows
            return np.where(u > 0, 0.0, 2.0)
        with np.errstate(over="ignore"):
            return 2.0 * np.exp(-(u**2) / denom)

    @property
    def variance(self) -> float:
        return 2.0 * self.kappa * self.osc2


# moments -------------------------------------------------------------------------


@dataclass
class MomentReport:
    p: int
    d: int
    n: int
    estimate: float
    ci: tuple[float, float]
    tail_slope: float | None = None
    tail_intercept: float | None = None
    tail_ci: tuple[float, float] | None = None
    unresolved_count: int = 0
    warnings: list[str] = field(default_factory=list)

    @property
    def exponential_tail(self) -> bool:
        return self.tail_ci is not None and self.tail_ci[1] < 0


def radius_moments(radii, d: int, p: int, confidence: float = 0.95, unresolved: int = 0,
                   min_tail_count: int = 10) -> MomentReport:
    """Sample mean of (2r+1)^(p d) with a CLT interval and a tail fit of log P(r > t)."""
    if unresolved:
        raise UnresolvedError(f"{unresolved} unresolved samples; moment estimates would be biased")
    r = np.asarray(radii, dtype=np.int64).reshape(-1)
    if r.size == 0:
        raise ValueError("no radius samples")
    if np.any(r < 0):
        raise ValueError("radii must be non-negative")
    vol = (2.0 * r + 1.0) ** (p * d)
    est, lo, hi = mean_ci(vol, confidence)
    if np.all(vol == vol[0]):
        lo = hi = est
    rep = MomentReport(p=p, d=d, n=int(r.size), estimate=est, ci=(lo, hi))
    total = pairwise_sum(vol)
    top = np.sort(vol)[-max(1, r.size // 10):]
    if total > 0 and r.size >= 10 and pairwise_sum(top) > 0.5 * total:
        rep.warnings.append("heavy tail: the top decile carries more than half of the moment estimate")
    ts = np.arange(0, int(r.max()) + 1)
    counts = np.array([(r > t).sum() for t in ts])
    use = counts >= min_tail_count
    if use.sum() >= 3:
        slope, icpt, s_lo, s_hi = linear_fit(ts[use], np.log(counts[use] / r.size), w=counts[use], confidence=confidence)
        rep.tail_slope, rep.tail_intercept, rep.tail_ci = slope, icpt, (s_lo, s_hi)
    return rep


# kappa ------------------------------------------------------------------------------


@dataclass(frozen=True)
class FactorizationReport:
    alpha: float
    triples: list[tuple[Site, Site, Site]]
    lhs: np.ndarray
    lhs_ci: np.ndarray
    rhs: np.ndarray
    rhs_ci: np.ndarray
    violations: list[int]
    warnings: list[str]

    @property
    def passed(self) -> bool:
        return not self.violations


@dataclass
class GcbReport:
    kappa: float
    source: KappaSource
    C: float
    kappa_upper: float | None = None
    osc2: float | None = None
    lambdas: list[float] = field(default_factory=list)
    mgf_empirical: list[float] = field(default_factory=list)
    mgf_bound: list[float] = field(default_factory=list)
    mgf_margins: list[float] = field(default_factory=list)
    mgf_unstable: list[bool] = field(default_factory=list)
    us: list[float] = field(default_factory=list)
    tail_empirical: list[float] = field(default_factory=list)
    tail_bound: list[float] = field(default_factory=list)
    tail_margins: list[float] = field(default_factory=list)
    variance: float | None = None
    variance_bound: float | None = None
    variance_margin: float | None = None
    confidence: float = 0.95
    n: int = 0

    @property
    def verdict(self) -> bool:
        margins = list(self.mgf_margins) + list(self.tail_margins)
        if self.variance_margin is not None:
            margins.append(self.variance_margin)
        return all(m >= 0 for m in margins)

    def as_dict(self) -> dict:
        out = {k: (v.value if isinstance(v, Enum) else v) for k, v in self.__dict__.items()}
        out["verdict"] = "PASS" if self.verdict else "FAIL"
        return out


def kappa_from_moments(report: MomentReport | None, source: KappaSource | str, alpha: float | None = None,
                       factorization: FactorizationReport | None = None, user_kappa: float | None = None) -> GcbReport:
    """kappa from a coding-volume moment.

    SecondMoment needs the p = 2 moment E[(2r+1)^(2d)]; Cone and LeftFinitary
    need the p = 1 moment (for LeftFinitary, of the one-sided radius in d = 1).
    The plug-in uses the point estimate; ``kappa_upper`` uses the CI upper end.
    """
    source = KappaSource(source)
    if source is KappaSource.MCDIARMID:
        return GcbReport(kappa=0.125, source=source, C=0.25, kappa_upper=0.125)
    if source is KappaSource.USER:
        if user_kappa is None or user_kappa < 0:
            raise ValueError("UserSupplied needs a non-negative kappa")
        return GcbReport(kappa=user_kappa, source=source, C=2 * user_kappa, kappa_upper=user_kappa)
    if report is None:
        raise ValueError(f"{source.value} needs a moment report")
    if report.unresolved_count:
        raise UnresolvedError("moment report contains unresolved samples")
    d = report.d
    if source is KappaSource.SECOND_MOMENT:
        if report.p != 2:
            raise ValueError("SecondMoment needs the p = 2 moment")
        k, ku = 2.0**d * report.estimate, 2.0**d * report.ci[1]
    elif source is KappaSource.CONE:
        if report.p != 1:
            raise ValueError("Cone needs the p = 1 moment")
        if alpha is None or not 0 < alpha <= 1:
            raise ValueError("Cone needs alpha in (0, 1]")
        if factorization is None or not factorization.passed:
            raise ValueError("Cone requires a passed factorization report")
        if factorization.alpha != alpha:
            raise ValueError("factorization report was run at a different alpha")
        k = 3.0 * alpha ** (-d) * report.estimate**2
        ku = 3.0 * alpha ** (-d) * report.ci[1] ** 2
    else:
        if report.p != 1 or d != 1:
            raise ValueError("LeftFinitary needs the p = 1 moment in d = 1")
        k, ku = 3.0 * report.estimate**2, 3.0 * report.ci[1] ** 2
    return GcbReport(kappa=k, source=source, C=2 * k, kappa_upper=ku)


# empirical verification ----------------------------------------------------------------


def _log_mgf_with_ci(c: np.ndarray, lam: float, z: float):
    """log mean exp(lam c) and its delta-method standard error; plus the top-1% share."""
    n = c.size
    a = lam * c
    lm = float(logsumexp(a) - math.log(n))
    w = np.exp(a - a.max())
    mean_w = w.mean()
    se = float(np.std(w, ddof=1) / (math.sqrt(n) * mean_w)) if n > 1 and mean_w > 0 else 0.0
    k = max(1, n // 100)
    share = float(np.sort(w)[-k:].sum() / w.sum()) if w.sum() > 0 else 0.0
    return lm, z * se, share


def verify_gcb(
    fsamples,
    f: Observable | float,
    kappa: float,
    lambdas: Sequence[float],
    us: Sequence[float] = (),
    confidence: float = 0.95,
    source: KappaSource | str = KappaSource.USER,
    min_replicas: int = 1000,
    check_variance: bool = True,
) -> GcbReport:
    """Check MGF, tail and variance of centred samples against the kappa bounds.

    ``f`` is the observable or directly ||delta f||_2^2.  Each margin is
    bound - empirical + one-sided CI slack, so a negative margin means the
    empirical value exceeds the bound with the given confidence.
    """
    x = np.asarray(fsamples, dtype=float).reshape(-1)
    if x.size < min_replicas:
        raise ValueError(f"need at least {min_replicas} replicas, got {x.size}")
    osc2 = osc_norm(f, 2) ** 2 if isinstance(f, Observable) else float(f)
    if osc2 == 0 and np.ptp(x) > 0:
        raise InconsistencyError("observable has zero oscillation but the samples vary")
    z = z_value(confidence, two_sided=False)
    bounds = GcbBounds(kappa, osc2)
    src = KappaSource(source)
    rep = GcbReport(kappa=kappa, source=src, C=bounds.C, osc2=osc2, confidence=confidence, n=int(x.size))
    c = x - pairwise_sum(x) / x.size
    for lam in lambdas:
        lm, slack, share = _log_mgf_with_ci(c, float(lam), z)
        b = float(bounds.log_mgf(lam))
        rep.lambdas.append(float(lam))
        rep.mgf_empirical.append(lm)
        rep.mgf_bound.append(b)
        rep.mgf_margins.append(b - lm + slack)
        rep.mgf_unstable.append(share > 0.30)
    for u in us:
        k = int(np.sum(np.abs(c) > u))
        p_hat, p_lo, _ = clopper_pearson(k, x.size, 1 - 2 * (1 - confidence))
        b = float(bounds.tail(u))
        rep.us.append(float(u))
        rep.tail_empirical.append(p_hat)
        rep.tail_bound.append(b)
        rep.tail_margins.append(b - p_lo)
    if check_variance:
        v, _, _ = variance_ci(x, confidence)
        _, v_lo, _ = variance_ci(x, 1 - 2 * (1 - confidence))
        rep.variance = v
        rep.variance_bound = bounds.variance
        rep.variance_margin = bounds.variance - v_lo
    return rep


# Marton-type bound -----------------------------------------------------------------


@dataclass
class MartonReport:
    lambdas: list[float]
    empirical: list[float]
    bound: list[float]
    margins: list[float]
    sum_c2: float
    audited_pairs: int

    @property
    def verdict(self) -> bool:
        return all(m >= 0 for m in self.margins)


def audit_influences(
    X: np.ndarray,
    g: Callable[[np.ndarray], np.ndarray],
    c: Callable[[np.ndarray], np.ndarray],
    resample: Callable[[np.random.Generator, tuple], np.ndarray],
    pairs: int,
    rng: np.random.Generator,
    tol: float = 1e-9,
) -> int:
    """Check |g(x) - g(x')| <= sum_i c_i(x) 1{x_i != x'_i} on random perturbations."""
    n, m = X.shape
    rows = rng.integers(0, n, size=pairs)
    x = X[rows]
    mask = rng.random((pairs, m)) < rng.random((pairs, 1))
    fresh = resample(rng, (pairs, m))
    xp = np.where(mask, fresh, x)
    lhs = np.abs(g(x) - g(xp))
    rhs = (c(x) * (x != xp)).sum(axis=1)
    bad = np.nonzero(lhs > rhs + tol)[0]
    if bad.size:
        i = int(bad[0])
        raise InfluenceAuditError(
            f"influence bound violated: |g(x)-g(x')| = {lhs[i]:.6g} > {rhs[i]:.6g}", (x[i], xp[i])
        )
    return pairs


def marton_bound_test(
    X: np.ndarray,
    g: Callable[[np.ndarray], np.ndarray],
    c: Callable[[np.ndarray], np.ndarray],
    lambdas: Sequence[float],
    resample: Callable[[np.random.Generator, tuple], np.ndarray],
    audit_pairs: int = 2000,
    seed: int = 0,
    confidence: float = 0.95,
) -> MartonReport:
    """Empirical log-MGF of g(X) - E g against (lambda^2 / 2) sum_i E c_i(X)^2.

    ``X`` holds i.i.d. input rows; ``resample`` draws fresh inputs of a given
    shape for the perturbation audit.
    """
    X = np.asarray(X)
    rng = np.random.default_rng(seed)
    audited = audit_influences(X, g, c, resample, audit_pairs, rng)
    gx = np.asarray(g(X), dtype=float)
    cx = np.asarray(c(X), dtype=float)
    s = (cx**2).sum(axis=1)
    s_mean, _, s_hi = mean_ci(s, 1 - 2 * (1 - confidence))
    z = z_value(confidence, two_sided=False)
    cg = gx - pairwise_sum(gx) / gx.size
    rep = MartonReport([], [], [], [], s_mean, audited)
    for lam in lambdas:
        lm, slack, _ = _log_mgf_with_ci(cg, float(lam), z)
        b = 0.5 * lam**2 * s_mean
        b_hi = 0.5 * lam**2 * s_hi
        rep.lambdas.append(float(lam))
        rep.empirical.append(lm)
        rep.bound.append(b)
        rep.margins.append(b_hi - lm + slack)
    return rep


def influence_coefficients(osc: dict[Site, float], radii: dict[Site, int]) -> dict[Site, float]:
    """c_i = sum_j delta_j f 1{||j - i|| <= r_j} for a coding with radii r_j."""
    out: dict[Site, float] = {}
    for j, dj in osc.items():
        if dj == 0:
            continue
        for i in Box(j, int(radii[j])).sites():
            out[i] = out.get(i, 0.0) + dj
    return out


# short-range factorization ----------------------------------------------------------


def admissible_triples(sites: Sequence[Site], max_triples: int | None = None, seed: int = 0,
                       require_distinct: bool = True) -> list[tuple[Site, Site, Site]]:
    """Triples (k, l, i) whose largest pairwise distance is ||l - i||."""
    sites = [tuple(s) for s in sites]
    out = []
    for k in sites:
        for l in sites:
            for i in sites:
                if require_distinct and len({k, l, i}) < 3:
                    continue
                dli = linf(l, i)
                if dli >= linf(k, i) and dli >= linf(l, k):
                    out.append((k, l, i))
    if max_triples is not None and len(out) > max_triples:
        rng = np.random.default_rng(seed)
        idx = np.sort(rng.choice(len(out), size=max_triples, replace=False))
        out = [out[j] for j in idx]
    return out


def factorization_test(
    radii: np.ndarray,
    sites: Sequence[Site],
    alpha: float,
    triples: Sequence[tuple[Site, Site, Site]] | None = None,
    confidence: float = 0.95,
    max_ci_width: float = 0.05,
) -> FactorizationReport:
    """Per triple, LHS = P(||k-i|| <= r_k, ||l-k|| <= r_l) against
    RHS = P(||k-i|| <= r_k) P(alpha ||l-k|| <= r_l), radii jointly sampled.

    ``radii`` has one row per replica and one column per entry of ``sites``.
    A violation is a triple whose LHS lower limit exceeds the RHS upper limit.
    """
    radii = np.asarray(radii)
    sites = [tuple(s) for s in sites]
    col = {s: j for j, s in enumerate(sites)}
    n = radii.shape[0]
    if triples is None:
        triples = admissible_triples(sites)
    triples = [tuple(tuple(x) for x in t) for t in triples]
    lhs, lhs_ci, rhs, rhs_ci, viol, warns = [], [], [], [], [], []
    for t, (k, l, i) in enumerate(triples):
        dli = linf(l, i)
        if dli < linf(k, i) or dli < linf(l, k):
            raise ValueError(f"triple {(k, l, i)} does not have its largest distance at ||l - i||")
        a = radii[:, col[k]] >= linf(k, i)
        b = radii[:, col[l]] >= linf(l, k)
        bb = radii[:, col[l]] >= alpha * linf(l, k)
        p_l, l_lo, l_hi = wilson(int(np.sum(a & b)), n, confidence)
        p_a, a_lo, a_hi = wilson(int(np.sum(a)), n, confidence)
        p_b, b_lo, b_hi = wilson(int(np.sum(bb)), n, confidence)
        lhs.append(p_l)
        lhs_ci.append((l_lo, l_hi))
        rhs.append(p_a * p_b)
        rhs_ci.append((a_lo * b_lo, a_hi * b_hi))
        if l_lo > a_hi * b_hi:
            viol.append(t)
        if l_hi - l_lo > max_ci_width:
            warns.append(f"triple {t}: LHS interval width {l_hi - l_lo:.3f} exceeds {max_ci_width}")
    return FactorizationReport(
        alpha=alpha, triples=list(triples), lhs=np.array(lhs), lhs_ci=np.array(lhs_ci),
        rhs=np.array(rhs), rhs_ci=np.array(rhs_ci), violations=viol, warnings=warns,
    )


# blowing up -----------------------------------------------------------------------------


@dataclass(frozen=True)
class PatternEvent:
    """E = set of listed configurations on the sites of Lambda (rows of ``patterns``)."""

    patterns: np.ndarray

    def distance(self, Y: np.ndarray) -> np.ndarray:
        P = np.asarray(self.patterns)
        return (Y[:, None, :] != P[None, :, :]).sum(axis=2).min(axis=1)


@dataclass(frozen=True)
class ThresholdEvent:
    """E = {sum_i g(y_i) >= c} for a per-symbol score table g."""

    scores: tuple[float, ...]
    c: float

    def distance(self, Y: np.ndarray) -> np.ndarray:
        g = np.asarray(self.scores, dtype=float)
        cur = g[Y]
        total = cur.sum(axis=1)
        gain = np.sort(g.max() - cur, axis=1)[:, ::-1]
        need = self.c - total
        csum = np.cumsum(gain, axis=1)
        d = np.where(need <= 1e-12, 0, 1 + (csum < need[:, None] - 1e-12).sum(axis=1))
        d = np.where(csum[:, -1] < need - 1e-12, np.iinfo(np.int64).max, d)
        return d


@dataclass
class BlowupReport:
    event: str
    eps: float
    n_sites: int
    nu_E: float
    nu_E_ci: tuple[float, float]
    nu_blow: float
    nu_blow_ci: tuple[float, float]
    bound: float | None
    vacuous: bool
    kappa: float
    bound_lo: float | None = None
    bound_hi: float | None = None

    @property
    def status(self) -> str:
        """VACUOUS, or FAIL when nu([E]_eps) is significantly below the bound."""
        if self.vacuous:
            return "VACUOUS"
        return "FAIL" if self.nu_blow_ci[1] < (self.bound_lo or 0.0) else "PASS"

    @property
    def strict_pass(self) -> bool:
        """Lower limit of nu([E]_eps) clears the bound at the upper limit of nu(E)."""
        return not self.vacuous and self.nu_blow_ci[0] >= (self.bound_hi or 0.0)


def blowup_bound(nu_E: float, eps: float, n_sites: int, kappa: float) -> float | None:
    """Lower bound on nu([E]_eps); None where eps is not above the threshold."""
    C = GcbBounds(kappa, 1.0).C
    if nu_E <= 0:
        return None
    if nu_E >= 1:
        return 1.0
    thr = math.sqrt(2 * C / n_sites * math.log(1 / nu_E))
    if eps <= thr:
        return None
    return 1 - math.exp(-(n_sites / (2 * C)) * (eps - thr) ** 2)


def blowup_check(Y: np.ndarray, event: PatternEvent | ThresholdEvent, eps: float, kappa: float,
                 confidence: float = 0.95) -> BlowupReport:
    """Monte Carlo nu(E), nu([E]_eps) from rows of Y (replicas x sites) against the bound.

    [E]_eps = {x : d(x, E) < eps |Lambda|}.  eps at or below the threshold
    for the estimated nu(E) is reported as vacuous.  The verdict fails only
    on a significant violation: the upper limit of nu([E]_eps) below the
    bound at the lower limit of nu(E).  ``strict_pass`` records the opposite
    pairing of limits.
    """
    if not isinstance(event, (PatternEvent, ThresholdEvent)):
        raise TypeError("unsupported event type; use a pattern list or a threshold event")
    Y = np.asarray(Y)
    n, m = Y.shape
    dist = event.distance(Y)
    kE = int(np.sum(dist == 0))
    lim = eps * m
    if abs(lim - round(lim)) < 1e-9:  # 0.35 * 20 must not admit d = 7
        lim = float(round(lim))
    kB = int(np.sum(dist < lim))
    pE, E_lo, E_hi = clopper_pearson(kE, n, 1 - 2 * (1 - confidence))
    pB, B_lo, B_hi = clopper_pearson(kB, n, 1 - 2 * (1 - confidence))
    bound = blowup_bound(pE, eps, m, kappa)
    return BlowupReport(
        event=type(event).__name__, eps=eps, n_sites=m, nu_E=pE, nu_E_ci=(E_lo, E_hi),
        nu_blow=pB, nu_blow_ci=(B_lo, B_hi), bound=bound, vacuous=bound is None, kappa=kappa,
        bound_lo=blowup_bound(E_lo, eps, m, kappa), bound_hi=blowup_bound(E_hi, eps, m, kappa),
    )
