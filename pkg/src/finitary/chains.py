"""One-dimensional processes coded from i.i.d. uniforms.

Chain codings index noise by channel and time: the uniform for channel c at
time t is the noise field at site (c,) and time t.  Left-finitary codings
only read times at or before the output time.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field
from functools import reduce
from typing import Callable, Sequence

import numpy as np

from .noise import NoiseSource, categorical_from_uniform
from .stats import linear_fit, stationary_distribution

ROW_TOL = 1e-12


class CertificateError(ValueError):
    """A Doeblin certificate is missing or fails verification."""


class PeriodicError(ValueError):
    """Return times share a common period > 1."""


def _chan_uniforms(noise: NoiseSource, streams, channel: int, times) -> np.ndarray:
    streams = np.asarray(streams, dtype=np.int64)
    times = np.asarray(times, dtype=np.int64)
    return noise.uniforms(streams, np.array([channel], dtype=np.int64), times)


def _inverse_cdf_rows(cdf: np.ndarray, rows: np.ndarray, u: np.ndarray) -> np.ndarray:
    c = cdf[rows]
    return np.minimum((u[..., None] >= c).sum(axis=-1), cdf.shape[1] - 1)


# Doeblin chains --------------------------------------------------------------


@dataclass(frozen=True)
class Doeblin:
    m: int
    beta: float
    nu: tuple[float, ...]


@dataclass(frozen=True)
class ChainSpec:
    P: np.ndarray = field(compare=False)
    doeblin: Doeblin | None = None
    mass_defect: float = 0.0
    labels: tuple | None = None

    def __post_init__(self) -> None:
        P = np.asarray(self.P, dtype=float)
        if P.ndim != 2 or P.shape[0] != P.shape[1]:
            raise ValueError("kernel must be a square matrix")
        if np.any(P < 0):
            raise ValueError("kernel entries must be non-negative")
        if np.max(np.abs(P.sum(axis=1) - 1.0)) > ROW_TOL:
            raise ValueError("kernel rows must sum to 1 within 1e-12")
        object.__setattr__(self, "P", P)

    @classmethod
    def truncated(cls, P_raw, doeblin: Doeblin | None = None) -> "ChainSpec":
        """Renormalise sub-stochastic rows and record the largest mass defect."""
        P = np.asarray(P_raw, dtype=float)
        sums = P.sum(axis=1)
        return cls(P / sums[:, None], doeblin=doeblin, mass_defect=float(np.max(1.0 - sums)))

    @property
    def n_states(self) -> int:
        return self.P.shape[0]

    def stationary(self) -> np.ndarray:
        return stationary_distribution(self.P)


def verify_doeblin(spec: ChainSpec) -> np.ndarray:
    """Check P^m(x, .) >= beta nu(.) pointwise; returns the residual kernel R."""
    cert = spec.doeblin
    if cert is None:
        raise CertificateError("no Doeblin certificate supplied")
    nu = np.asarray(cert.nu, dtype=float)
    if nu.shape != (spec.n_states,) or np.any(nu < 0) or abs(nu.sum() - 1) > ROW_TOL:
        raise CertificateError("nu must be a probability vector on the state space")
    if not (0 < cert.beta <= 1) or cert.m < 1:
        raise CertificateError("need m >= 1 and beta in (0, 1]")
    Pm = np.linalg.matrix_power(spec.P, cert.m)
    slack = Pm - cert.beta * nu[None, :]
    if np.min(slack) < -1e-12:
        x, j = np.unravel_index(np.argmin(slack), slack.shape)
        raise CertificateError(f"P^{cert.m}({x},{j}) = {Pm[x, j]:.6g} < beta*nu({j}) = {cert.beta * nu[j]:.6g}")
    if cert.beta == 1.0:
        return np.tile(nu, (spec.n_states, 1))
    R = np.clip(slack, 0.0, None) / (1.0 - cert.beta)
    return R / R.sum(axis=1, keepdims=True)


def multigamma_cftp(spec: ChainSpec, noise: NoiseSource, streams: Sequence[int], max_blocks: int = 10_000):
    """Multigamma coupling from the past for a batch of replicas.

    Block k (k = 1, 2, ...) covers times -k*m .. -(k-1)*m - 1 and reads two
    uniforms at time -k: channel 0 decides regeneration (U < beta), channel 1
    drives the draw, from nu when regenerating and from the residual kernel
    otherwise.  Returns (states, theta) with theta = m * K, K the depth of the
    most recent regenerating block.
    """
    R = verify_doeblin(spec)
    cert = spec.doeblin
    assert cert is not None
    streams = np.asarray(streams, dtype=np.int64)
    n = streams.size
    K = np.zeros(n, dtype=np.int64)
    pending = np.arange(n)
    k = 0
    while pending.size:
        k += 1
        if k > max_blocks:
            raise RuntimeError(f"no regeneration within {max_blocks} blocks")
        u = _chan_uniforms(noise, streams[pending], 0, -k)
        hit = u < cert.beta
        K[pending[hit]] = k
        pending = pending[~hit]
    R_cdf = np.cumsum(R, axis=1)
    R_cdf[:, -1] = 1.0
    state = np.zeros(n, dtype=np.int64)
    for k in range(int(K.max()), 0, -1):
        sel = np.nonzero(K >= k)[0]
        v = _chan_uniforms(noise, streams[sel], 1, -k)
        fresh = K[sel] == k
        new = np.empty(sel.size, dtype=np.int64)
        if fresh.any():
            new[fresh] = categorical_from_uniform(v[fresh], cert.nu / np.sum(cert.nu))
        if (~fresh).any():
            new[~fresh] = _inverse_cdf_rows(R_cdf, state[sel[~fresh]], v[~fresh])
        state[sel] = new
    return state, cert.m * K


def simulate_path(spec: ChainSpec, length: int, noise: NoiseSource, stream: int = 0, start: int = 0) -> np.ndarray:
    """Forward path X_0 = start, X_{t+1} ~ P(X_t, .) from channel-0 uniforms."""
    cdf = np.cumsum(spec.P, axis=1)
    cdf[:, -1] = 1.0
    u = _chan_uniforms(noise, stream, 0, np.arange(1, length)).reshape(-1) if length > 1 else np.empty(0)
    path = np.empty(length, dtype=np.int64)
    path[0] = start
    for t in range(1, length):
        path[t] = min(int(np.searchsorted(cdf[path[t - 1]], u[t - 1], side="right")), spec.n_states - 1)
    return path


# Toboggan ---------------------------------------------------------------------


@dataclass(frozen=True)
class TobogganSpec:
    """Jump law p on {0, 1, ..., N-1}; ``tail_mass`` is the mass cut off beyond N-1."""

    p: tuple[float, ...]
    tail_mass: float = 0.0

    def __post_init__(self) -> None:
        p = np.asarray(self.p, dtype=float)
        if p.ndim != 1 or p.size == 0 or np.any(p <= 0):
            raise ValueError("p must be positive on its declared support")
        if abs(p.sum() + self.tail_mass - 1.0) > 1e-9:
            raise ValueError("p plus the tail mass must sum to 1")

    @classmethod
    def geometric(cls, n_support: int = 60) -> "TobogganSpec":
        p = tuple(2.0 ** -(i + 1) for i in range(n_support))
        return cls(p, tail_mass=2.0**-n_support)

    def is_geometric(self, tol: float = 1e-12) -> bool:
        return all(abs(pi - 2.0 ** -(i + 1)) <= tol for i, pi in enumerate(self.p))

    def kernel(self) -> np.ndarray:
        """Truncated kernel on {0..N-1}: P(0, i) = p_i (renormalised), P(i, i-1) = 1."""
        p = np.asarray(self.p, dtype=float)
        n = p.size
        P = np.zeros((n, n))
        P[0] = p / p.sum()
        for i in range(1, n):
            P[i, i - 1] = 1.0
        return P

    def renewal(self) -> "RenewalSpec":
        """Zeros of the chain form a renewal process with f_k = p_{k-1}."""
        p = np.asarray(self.p, dtype=float)
        return RenewalSpec(tuple(p / p.sum()))


def toboggan_coding(spec: TobogganSpec, i: int, noise: NoiseSource, stream: int = 0, max_look: int = 4096):
    """(X_i, theta_i) for one replica.

    Geometric case: the renewal indicators are fair coins c_j = 1{U_j < 1/2}
    read forward from i, and X_i = theta_i is the distance to the first coin
    equal to 1.  Other jump laws go through ``renewal_cftp``.
    """
    if spec.is_geometric():
        x = 0
        while x <= max_look:
            if noise.uniform(stream, (0,), i + x) < 0.5:
                return x, x
            x += 1
        raise RuntimeError(f"no renewal within {max_look} steps")
    ren = spec.renewal()
    L = 8
    while L <= max_look:
        window, _ = renewal_cftp(ren, noise, stream=stream, start=i, end=i + L - 1)
        ones = np.nonzero(window)[0]
        if ones.size:
            x = int(ones[0])
            return x, x
        L *= 2
    raise RuntimeError(f"no renewal within {max_look} steps")


def toboggan_batch(noise: NoiseSource, streams: Sequence[int], i: int = 0, max_look: int = 256) -> np.ndarray:
    """Geometric-case theta_i (= X_i) for many replicas, vectorised."""
    streams = np.asarray(streams, dtype=np.int64)
    theta = np.full(streams.size, -1, dtype=np.int64)
    pending = np.arange(streams.size)
    for x in range(max_look + 1):
        if not pending.size:
            break
        u = _chan_uniforms(noise, streams[pending], 0, i + x)
        hit = u < 0.5
        theta[pending[hit]] = x
        pending = pending[~hit]
    if pending.size:
        raise RuntimeError(f"no renewal within {max_look} steps")
    return theta


def toboggan_window(length: int, noise: NoiseSource, stream: int = 0, start: int = 0, max_look: int = 4096):
    """(X, theta) on the sites start .. start+length-1 from one coin sequence."""
    coins = [noise.uniform(stream, (0,), start + j) < 0.5 for j in range(length)]
    extra = 0
    while not coins[-1] and extra < max_look:
        coins.append(noise.uniform(stream, (0,), start + len(coins)) < 0.5)
        extra += 1
    X = np.empty(length, dtype=np.int64)
    nxt = None
    for j in range(len(coins) - 1, -1, -1):
        if coins[j]:
            nxt = j
        if j < length:
            if nxt is None:
                raise RuntimeError(f"no renewal within {max_look} steps")
            X[j] = nxt - j
    return X, X.copy()


# renewal processes --------------------------------------------------------------


@dataclass(frozen=True)
class RenewalSpec:
    """Inter-arrival law f_1, f_2, ..., f_K (index 0 holds f_1)."""

    f: tuple[float, ...]

    def __post_init__(self) -> None:
        f = np.asarray(self.f, dtype=float)
        if f.ndim != 1 or f.size == 0 or np.any(f < 0):
            raise ValueError("f must be a non-negative vector")
        if abs(f.sum() - 1.0) > 1e-9:
            raise ValueError("f must sum to 1")
        support = [k + 1 for k in range(f.size) if f[k] > 0]
        if reduce(math.gcd, support) != 1:
            raise ValueError("inter-arrival support is lattice (gcd > 1)")

    @classmethod
    def truncated(cls, f_raw: Sequence[float]) -> "RenewalSpec":
        f = np.asarray(f_raw, dtype=float)
        return cls(tuple(f / f.sum()))

    def hazard(self) -> np.ndarray:
        """h(n) = f_n / sum_{k >= n} f_k for n = 1..K."""
        f = np.asarray(self.f, dtype=float)
        tail = np.cumsum(f[::-1])[::-1]
        with np.errstate(invalid="ignore", divide="ignore"):
            h = np.where(tail > 0, f / np.where(tail > 0, tail, 1.0), 1.0)
        h[-1] = 1.0
        return h

    @property
    def beta_star(self) -> float:
        return float(np.min(self.hazard()))

    def mean(self) -> float:
        return float(np.sum(np.arange(1, len(self.f) + 1) * np.asarray(self.f)))


def renewal_cftp(spec: RenewalSpec, noise: NoiseSource, stream: int = 0, start: int = 0, end: int = 0,
                 max_depth: int = 1 << 20):
    """Stationary renewal indicators on times start..end, and the lookback theta.

    The age chain renews at t iff U_t < h(age + 1) with U_t the channel-0
    uniform at time t.  Since h >= beta*, every age renews when U_t < beta*,
    so the most recent such time g <= start regenerates all copies; the
    window is simulated forward from g.  theta = end - g.
    """
    bs = spec.beta_star
    if bs <= 0:
        raise ValueError(
            "hazard floor beta* is 0: no uniform regeneration, and the renewal "
            "coding cannot have exponential tails"
        )
    if end < start:
        raise ValueError("end must not precede start")
    h = spec.hazard()
    g = start
    while noise.uniform(stream, (0,), g) >= bs:
        g -= 1
        if start - g > max_depth:
            raise RuntimeError("no regeneration within max_depth")
    times = np.arange(g, end + 1)
    u = noise.uniforms(np.int64(stream), np.array([0]), times)
    out = np.empty(times.size, dtype=np.int8)
    age = 0
    out[0] = 1
    for n in range(1, times.size):
        if u[n] < h[min(age, h.size - 1)]:
            out[n] = 1
            age = 0
        else:
            out[n] = 0
            age += 1
    return out[start - g:], end - g


def renewal_theta_batch(spec: RenewalSpec, noise: NoiseSource, streams: Sequence[int], max_depth: int = 1 << 16):
    """theta for the single-site window at time 0, vectorised over replicas."""
    bs = spec.beta_star
    if bs <= 0:
        raise ValueError("hazard floor beta* is 0")
    streams = np.asarray(streams, dtype=np.int64)
    theta = np.full(streams.size, -1, dtype=np.int64)
    pending = np.arange(streams.size)
    k = 0
    while pending.size:
        if k > max_depth:
            raise RuntimeError("no regeneration within max_depth")
        u = _chan_uniforms(noise, streams[pending], 0, -k)
        hit = u < bs
        theta[pending[hit]] = k
        pending = pending[~hit]
        k += 1
    return theta


# stochastic chains with unbounded memory -------------------------------------


@dataclass(frozen=True)
class ScumSpec:
    """Kernel g(b | past) on symbols 0..n_symbols-1.

    ``g`` receives the past as a tuple, most recent symbol first, of length
    ``memory``.  ``truncated`` marks kernels whose true memory is longer and
    was cut at ``memory``.
    """

    n_symbols: int
    memory: int
    g: Callable[[tuple[int, ...]], Sequence[float]] = field(compare=False)
    name: str = "scum"
    truncated: bool = False

    def tables(self) -> list[np.ndarray]:
        """m_k(b | a) = inf over completions x of g(b | x a), a of length k.

        Entry k has shape (n_symbols**k, n_symbols), rows indexed by the
        past prefix in base n_symbols, most recent symbol the least significant digit.
        """
        B, K = self.n_symbols, self.memory
        pasts = list(itertools.product(range(B), repeat=K))
        G = np.array([np.asarray(self.g(p), dtype=float) for p in pasts])
        if np.any(G < -1e-15) or np.max(np.abs(G.sum(axis=1) - 1)) > 1e-9:
            raise ValueError("g(.|past) must be a probability vector for every past")
        codes = np.array([sum(a * B**j for j, a in enumerate(p)) for p in pasts], dtype=np.int64) if K else np.zeros(1, np.int64)
        tabs = []
        for k in range(K + 1):
            idx = codes % (B**k)
            m = np.full((B**k, B), np.inf)
            np.minimum.at(m, idx, G)
            tabs.append(m)
        return tabs

    def alpha(self) -> np.ndarray:
        return np.array([float(m.sum(axis=1).min()) for m in self.tables()])


def scum_iid(weights: Sequence[float]) -> ScumSpec:
    w = tuple(float(x) for x in weights)
    return ScumSpec(len(w), 0, lambda past: w, name="iid")


def scum_markov(P) -> ScumSpec:
    P = np.asarray(P, dtype=float)
    return ScumSpec(P.shape[0], 1, lambda past: P[past[0]], name="markov")


def scum_geometric_memory(eps: float = 0.4, rho: float = 0.5, memory: int = 10) -> ScumSpec:
    """Binary kernel g(1 | x) = eps + (1 - 2 eps) sum_k w_k x_{-k} with
    w_k proportional to rho^(k-1), renormalised over the first ``memory`` lags."""
    w = rho ** np.arange(memory)
    w = w / w.sum()

    def g(past):
        p1 = eps + (1 - 2 * eps) * float(np.dot(w, past))
        return (1.0 - p1, p1)

    return ScumSpec(2, memory, g, name="geometric_memory", truncated=True)


def scum_theta_mean(alpha: Sequence[float]) -> float:
    """Exact E[theta] of the lookback walk for a single output symbol.

    The needed depth D below the current time evolves as
    D' = max(D - 1, K) with P(K <= k) = alpha_k; theta counts steps until D = 0.
    """
    a = np.maximum.accumulate(np.asarray(alpha, dtype=float))
    a[-1] = 1.0
    pk = np.diff(np.concatenate([[0.0], a]))
    n = a.size
    # h(D) = 1 + sum_j P(max(D-1, K) = j) h(j), h(0) = 0
    A = np.eye(n)
    rhs = np.zeros(n)
    for D in range(1, n):
        rhs[D] = 1.0
        for j in range(n):
            if j < D - 1:
                p = 0.0
            elif j == D - 1:
                p = a[D - 1]
            else:
                p = pk[j]
            A[D, j] -= p
    h = np.linalg.solve(A, rhs)
    return float(np.dot(pk, h))


def scum_cftp(spec: ScumSpec, noise: NoiseSource, streams: Sequence[int], length: int = 1,
              max_depth: int = 1 << 16):
    """Layered-uniform coupling from the past for a batch of replicas.

    Layer k of the unit interval at time t carries mass
    m_k(b|a) - m_{k-1}(b|a) for each b, so U_t < alpha_k pins the symbol
    through the k most recent symbols.  K_t = min{k : U_t < alpha_k} is the
    lookback; theta is the depth at which every requirement of the output
    window (times -length+1 .. 0) is met.  Returns (windows, theta).
    """
    alpha = spec.alpha()
    prod = float(np.prod(alpha))
    if prod <= 0:
        raise ValueError("product of alpha_k over the truncation is 0; the construction does not apply")
    if spec.truncated and spec.memory > 0 and alpha[-2] < 1.0 - 1e-12:
        warnings.warn(f"memory truncation at {spec.memory} is binding (alpha_{spec.memory - 1} = {alpha[-2]:.6g})")
    tabs = spec.tables()
    B, Kmem = spec.n_symbols, spec.memory
    cum_alpha = np.maximum.accumulate(alpha)
    cum_alpha[-1] = 1.0
    streams = np.asarray(streams, dtype=np.int64)
    n = streams.size

    def lookback(u):
        return np.searchsorted(cum_alpha, u, side="right")

    earliest = np.full(n, -(length - 1), dtype=np.int64)
    t = 0
    active = np.arange(n)
    while active.size:
        if -t > max_depth:
            raise RuntimeError("lookback exceeded max_depth")
        u = _chan_uniforms(noise, streams[active], 0, t)
        earliest[active] = np.minimum(earliest[active], t - lookback(u))
        t -= 1
        active = active[earliest[active] <= t]
    theta = -earliest
    depth = int(theta.max())
    span = depth + 1
    Y = np.full((n, span), -1, dtype=np.int64)
    for s in range(depth, -1, -1):
        sel = np.nonzero(theta >= s)[0]
        col = span - 1 - s
        u = _chan_uniforms(noise, streams[sel], 0, -s)
        past = np.zeros((sel.size, Kmem), dtype=np.int64)
        for j in range(Kmem):
            c = col - 1 - j
            if c >= 0:
                past[:, j] = np.maximum(Y[sel, c], 0)
        Y[sel, col] = _layered_symbol(u, past, tabs, B)
    windows = Y[:, span - length:]
    return windows, theta


def _layered_symbol(u: np.ndarray, past: np.ndarray, tabs: list[np.ndarray], B: int) -> np.ndarray:
    out = np.full(u.size, -1, dtype=np.int64)
    pos = np.zeros(u.size)
    prev = np.zeros((u.size, B))
    code = np.zeros(u.size, dtype=np.int64)
    for k, m in enumerate(tabs):
        if k > 0:
            code = code + past[:, k - 1] * B ** (k - 1)
        cur = m[code]
        seg = np.clip(cur - prev, 0.0, None)
        for b in range(B):
            hit = (out < 0) & (u < pos + seg[:, b])
            out[hit] = b
            pos = pos + seg[:, b]
        prev = cur
        if np.all(out >= 0):
            break
    out[out < 0] = B - 1
    return out


# return times -------------------------------------------------------------------


@dataclass(frozen=True)
class ReturnTimeReport:
    state: int
    visits: int
    ks: np.ndarray = field(compare=False)
    survival: np.ndarray = field(compare=False)
    rate: float = float("nan")
    rate_lo: float = float("nan")
    rate_hi: float = float("nan")

    @property
    def exponential_compatible(self) -> bool:
        return self.rate_lo > 0


def return_times(path: Sequence[int], b: int) -> np.ndarray:
    visits = np.nonzero(np.asarray(path) == b)[0]
    return np.diff(visits)


def return_time_tail(path, b: int, min_visits: int = 100, min_count: int = 20, confidence: float = 0.95) -> ReturnTimeReport:
    """Empirical P(tau_b > k | X_0 = b) and a log-linear fit of its decay rate.

    ``path`` may be one path or a list of paths.
    """
    paths = [path] if np.ndim(path[0]) == 0 else list(path)
    taus = np.concatenate([return_times(p, b) for p in paths]) if paths else np.empty(0)
    visits = sum(int(np.sum(np.asarray(p) == b)) for p in paths)
    if visits < min_visits or taus.size == 0:
        raise ValueError(f"state {b} visited {visits} times, need at least {min_visits}")
    g = reduce(math.gcd, taus.astype(int).tolist())
    if g > 1:
        raise PeriodicError(f"all return times to {b} are multiples of {g}; the chain is periodic")
    kmax = int(taus.max())
    ks = np.arange(0, kmax + 1)
    counts = np.array([(taus > k).sum() for k in ks])
    surv = counts / taus.size
    use = (ks >= 1) & (counts >= min_count)
    if use.sum() < 3:
        return ReturnTimeReport(b, visits, ks, surv)
    slope, _, lo, hi = linear_fit(ks[use], np.log(surv[use]), w=counts[use], confidence=confidence)
    return ReturnTimeReport(b, visits, ks, surv, -slope, -hi, -lo)
