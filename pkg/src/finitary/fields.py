"""Lattice models: Ising heat bath, random sequential adsorption, simple PCAs."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import _kernels
from .cftp import CodingSample, PcaSpec, Status, UnresolvedError
from .lattice import Box, Site, as_site, linf
from .noise import NoiseSource, site_prefix, uniforms_from_prefix
from .stats import mean_ci, variance_ci


# simple PCAs ----------------------------------------------------------------


def pure_noise_pca(d: int = 1, weights: Sequence[float] = (0.5, 0.5)) -> PcaSpec:
    """Output at (v, t+1) is a fresh categorical symbol; the state is ignored."""
    origin = ((0,) * d,)
    return PcaSpec(
        d=d,
        n_states=len(weights),
        F=origin,
        Fp=origin,
        update=lambda s, w, ph: np.broadcast_to(w[0], np.broadcast_shapes(s[0].shape, w[0].shape)).copy(),
        noise_weights=tuple(weights),
        monotone=True,
        top=len(weights) - 1,
        bottom=0,
        name="pure_noise",
    )


def constant_pca(d: int = 1, b0: int = 0, n_states: int = 2) -> PcaSpec:
    origin = ((0,) * d,)
    return PcaSpec(
        d=d,
        n_states=n_states,
        F=origin,
        Fp=origin,
        update=lambda s, w, ph: np.full(np.broadcast_shapes(s[0].shape, w[0].shape), b0, dtype=np.int64),
        monotone=True,
        top=n_states - 1,
        bottom=0,
        name="constant",
    )


def chain_pca(P: np.ndarray) -> PcaSpec:
    """A finite Markov chain as a one-dimensional PCA with F = F' = {0}.

    Each site runs an independent copy of the chain; the row of the current
    state is sampled by inverse CDF from the site uniform.  When the row CDFs
    are ordered (stochastically monotone chain) the update is order-preserving
    and the PcaSpec is declared monotone.
    """
    P = np.asarray(P, dtype=float)
    cdf = np.cumsum(P, axis=1)
    cdf[:, -1] = 1.0
    k = P.shape[0]
    monotone = bool(np.all(np.diff(cdf, axis=0) <= 1e-15))

    def update(s, w, ph):
        rows = cdf[s[0]]
        u = np.broadcast_to(w[0], s[0].shape)[..., None]
        return np.minimum((u >= rows).sum(axis=-1), k - 1)

    return PcaSpec(d=1, n_states=k, F=((0,),), Fp=((0,),), update=update, monotone=monotone,
                   top=k - 1, bottom=0, name="chain")


def noisy_majority_pca(d: int = 1, resample: float = 0.3) -> PcaSpec:
    """Binary PCA: with probability ``resample`` a fair fresh bit, otherwise
    the majority over the site and its 2d nearest neighbours (ties keep the
    site's own bit).  Monotone with a single uniform per site."""
    if not 0 < resample <= 1:
        raise ValueError("resample probability must lie in (0, 1]")
    F = [(0,) * d]
    for k in range(d):
        for sgn in (1, -1):
            u = [0] * d
            u[k] = sgn
            F.append(tuple(u))
    n = len(F)
    half = resample / 2.0

    def update(s, w, ph):
        tot = s.sum(axis=0)
        maj = np.where(2 * tot > n, 1, np.where(2 * tot < n, 0, s[0]))
        u = w[0]
        return np.where(u < half, 0, np.where(u < resample, 1, maj))

    return PcaSpec(d=d, n_states=2, F=tuple(F), Fp=((0,) * d,), update=update,
                   monotone=True, top=1, bottom=0, name="noisy_majority")


def noisy_copy_pca(resample: float = 0.3) -> PcaSpec:
    """d = 1 binary PCA copying the left neighbour, resampled with the given rate."""
    half = resample / 2.0

    def update(s, w, ph):
        u = w[0]
        return np.where(u < half, 0, np.where(u < resample, 1, s[0]))

    return PcaSpec(d=1, n_states=2, F=((-1,),), Fp=((0,),), update=update,
                   monotone=True, top=1, bottom=0, name="noisy_copy")


def symbol_copy_pca() -> PcaSpec:
    """d = 1 binary PCA driven by 2-bit noise symbols s: if s >> 1 the new bit
    is s & 1, otherwise the left neighbour is copied.  Used on non-uniform
    inputs such as the output of another coding."""

    def update(s, w, ph):
        w = np.asarray(w[0], dtype=np.int64)
        return np.where(w >> 1, w & 1, s[0])

    return PcaSpec(d=1, n_states=2, F=((-1,),), Fp=((0,),), update=update,
                   monotone=True, top=1, bottom=0, name="symbol_copy")


# Ising -------------------------------------------------------------------


@dataclass(frozen=True)
class IsingSpec:
    d: int
    beta: float
    field: float = 0.0

    def __post_init__(self) -> None:
        if self.d < 1:
            raise ValueError("d must be >= 1")
        if not (self.beta >= 0 and math.isfinite(self.beta)):
            raise ValueError("beta must be finite and non-negative")
        if self.field != 0.0:
            raise ValueError("only zero external field is supported")

    def probs(self) -> np.ndarray:
        """P(new spin = +1 | neighbour sum h) for h = -2d .. 2d (index h + 2d)."""
        h = np.arange(-2 * self.d, 2 * self.d + 1, dtype=float)
        return 1.0 / (1.0 + np.exp(-2.0 * self.beta * h))


def ising_offsets(d: int) -> tuple[Site, ...]:
    F = [(0,) * d]
    for k in range(d):
        for sgn in (1, -1):
            u = [0] * d
            u[k] = sgn
            F.append(tuple(u))
    return tuple(F)


def ising_heatbath_pca(spec: IsingSpec) -> PcaSpec:
    """Checkerboard heat-bath chain as a period-2 PCA on states {0: -1, 1: +1}.

    A site updates between half-steps t and t+1 iff sum(v) + t is even, and
    becomes +1 iff its uniform is below 1 / (1 + exp(-2 beta h)), h being the
    neighbour spin sum.  One time unit of the PCA is one half-step.
    """
    probs = spec.probs()
    d = spec.d

    def update(s, w, ph):
        spins = 2 * s[1:] - 1
        h = spins.sum(axis=0)
        p = probs[h + 2 * d]
        new = (w[0] < p).astype(np.int64)
        return np.where(ph == 0, new, s[0])

    return PcaSpec(
        d=d, n_states=2, F=ising_offsets(d), Fp=((0,) * d,), update=update,
        monotone=True, top=1, bottom=0, period=2, name="ising",
    )


def ising_sample_block(
    spec: IsingSpec,
    region: Box,
    seed: int,
    stream: int,
    t_max: int = 1 << 14,
    margin_floor: int = 64,
):
    """Compiled envelope CFTP on a box for one replica.

    Returns (spins in {-1,+1}, tau, done), each shaped like the box.
    """
    center = np.asarray(region.center, dtype=np.int64)
    spins, tau, done = _kernels.ising_cftp(
        np.uint64(seed), np.uint64(stream), spec.probs(), spec.d, center, region.radius, t_max, margin_floor
    )
    return spins.reshape(region.shape), tau.reshape(region.shape), done.reshape(region.shape)


def ising_samples(
    spec: IsingSpec,
    region: Box,
    seed: int,
    streams: Sequence[int],
    t_max: int = 1 << 14,
    margin_floor: int = 64,
    policy: str = "abort",
    threads: int = 1,
) -> list[list[CodingSample]]:
    """CodingSamples for every site of ``region``, one list per stream."""
    from .parallel import map_ordered

    def one(stream):
        spins, tau, done = ising_sample_block(spec, region, seed, stream, t_max, margin_floor)
        out = []
        for site, sp, ta, ok in zip(region.sites(), spins.reshape(-1), tau.reshape(-1), done.reshape(-1)):
            out.append(CodingSample(
                site=site,
                value=int(sp > 0) if ok else None,
                radius=int(ta),
                tau=int(ta),
                status=Status.COALESCED if ok else Status.UNRESOLVED,
                replica=int(stream),
            ))
        return out

    results = map_ordered(one, list(streams), threads)
    if policy == "abort":
        for res in results:
            for smp in res:
                if smp.status is Status.UNRESOLVED:
                    raise UnresolvedError(
                        f"Ising beta={spec.beta} replica {smp.replica} site {smp.site} unresolved at t_max={t_max}",
                        replica=smp.replica, site=smp.site,
                    )
    return results


@dataclass(frozen=True)
class SusceptibilityRow:
    n: int
    ratio: float
    ci_lo: float
    ci_hi: float
    replicas: int
    sums: np.ndarray | None = field(default=None, repr=False, compare=False)


def susceptibility_scan(
    spec: IsingSpec,
    sizes: Sequence[int],
    replicas: int,
    seed: int = 0,
    t_max: int = 1 << 14,
    margin_floor: int = 64,
    confidence: float = 0.95,
    threads: int = 1,
    stream_offset: int = 0,
) -> list[SusceptibilityRow]:
    """Var(S_n) / |Lambda_n| with Lambda_n = B(0, n), sampled jointly per replica."""
    from .parallel import map_ordered

    rows = []
    for n in sizes:
        region = Box.around_origin(spec.d, n)

        def one(stream, region=region):
            spins, _, done = ising_sample_block(spec, region, seed, stream, t_max, margin_floor)
            if not done.all():
                raise UnresolvedError(
                    f"Ising beta={spec.beta} n={region.radius}: replica {stream} unresolved at t_max={t_max}",
                    replica=stream,
                )
            return int(spins.astype(np.int64).sum())

        sums = np.asarray(map_ordered(one, [stream_offset + r for r in range(replicas)], threads), dtype=float)
        vol = region.volume
        v, lo, hi = variance_ci(sums, confidence)
        rows.append(SusceptibilityRow(n, v / vol, lo / vol, hi / vol, replicas, sums))
    return rows


def ising_1d_susceptibility(beta: float) -> float:
    t = math.tanh(beta)
    return (1 + t) / (1 - t)


def ising_1d_correlation(beta: float, k: int) -> float:
    return math.tanh(beta) ** abs(k)


# random sequential adsorption ------------------------------------------------


class PriorityTieError(RuntimeError):
    """Two neighbouring priorities are equal, which signals a noise defect."""


@dataclass(frozen=True)
class ParkingSpec:
    d: int

    def __post_init__(self) -> None:
        if self.d < 1:
            raise ValueError("d must be >= 1")


def _neighbours(site: Site) -> list[Site]:
    out = []
    for k in range(len(site)):
        for sgn in (-1, 1):
            s = list(site)
            s[k] += sgn
            out.append(tuple(s))
    return out


class ParkingResolver:
    """Memoised occupation recursion over a priority function.

    ``priority(site)`` returns the arrival time of the car at ``site`` or
    None when the site is outside the domain.  A site is occupied iff every
    neighbour with a strictly smaller priority is vacant.
    """

    def __init__(self, priority: Callable[[Site], float | None]):
        self.priority = priority
        self._prio: dict[Site, float | None] = {}
        self._occ: dict[Site, bool] = {}
        self._reads: dict[Site, set[Site]] = {}

    def prio(self, site: Site) -> float | None:
        if site not in self._prio:
            self._prio[site] = self.priority(site)
        return self._prio[site]

    def occupied(self, site: Site) -> bool:
        site = as_site(site)
        if site in self._occ:
            return self._occ[site]
        # iterative post-order walk over strictly decreasing priorities
        stack = [site]
        while stack:
            cur = stack[-1]
            if cur in self._occ:
                stack.pop()
                continue
            x = self.prio(cur)
            lower = []
            pending = False
            for nb in _neighbours(cur):
                y = self.prio(nb)
                if y is None:
                    continue
                if y == x:
                    raise PriorityTieError(f"equal priorities at {cur} and {nb}")
                if y < x:
                    lower.append(nb)
                    if nb not in self._occ:
                        stack.append(nb)
                        pending = True
            if pending:
                continue
            stack.pop()
            self._occ[cur] = not any(self._occ[nb] for nb in lower)
            reads = {cur, *(_neighbours(cur))}
            for nb in lower:
                reads |= self._reads[nb]
            self._reads[cur] = reads
        return self._occ[site]

    def radius(self, site: Site) -> int:
        """Largest distance from ``site`` of any priority the recursion read."""
        site = as_site(site)
        self.occupied(site)
        return max(linf(s, site) for s in self._reads[site])


def parking_occupation(
    spec: ParkingSpec,
    site: Sequence[int],
    noise: NoiseSource,
    stream: int = 0,
    domain: Box | None = None,
    resolver: ParkingResolver | None = None,
) -> CodingSample:
    """Occupation of ``site`` with priorities X_i = draw_uniform(seed, stream, i, 0).

    ``domain`` restricts the process to a finite box (sites outside carry no
    car).  The radius counts every priority read, including the neighbours
    compared at each visited site; ``tau`` reports the length of the longest
    decreasing-priority chain explored.
    """
    site = as_site(site)
    if len(site) != spec.d:
        raise ValueError("site dimension does not match the model dimension")
    if resolver is None:
        resolver = ParkingResolver(_priority_fn(noise, stream, domain))
    occ = resolver.occupied(site)
    r = resolver.radius(site)
    if domain is not None:
        r = max(linf(s, site) for s in resolver._reads[site] if domain.contains(s))
    return CodingSample(site=site, value=int(occ), radius=r, tau=_chain_depth(resolver, site), replica=stream)


def _priority_fn(noise: NoiseSource, stream: int, domain: Box | None):
    def prio(s: Site):
        if domain is not None and not domain.contains(s):
            return None
        return noise.uniform(stream, s, 0)

    return prio


def _chain_depth(res: ParkingResolver, site: Site) -> int:
    depth: dict[Site, int] = {}

    def go(s: Site) -> int:
        if s in depth:
            return depth[s]
        x = res.prio(s)
        best = 0
        for nb in _neighbours(s):
            y = res.prio(nb)
            if y is not None and y < x:
                best = max(best, 1 + go(nb))
        depth[s] = best
        return best

    return go(site)


def parking_interval(priorities: np.ndarray) -> np.ndarray:
    """Occupation vector of a finite d=1 interval with the given priorities."""
    n = len(priorities)
    res = ParkingResolver(lambda s: float(priorities[s[0]]) if 0 <= s[0] < n else None)
    return np.array([res.occupied((i,)) for i in range(n)], dtype=np.int8)


def parking_interval_batch(n_sites: int, seed: int, streams: Sequence[int]) -> np.ndarray:
    """Occupation vectors of the interval {0..n_sites-1} for many replicas."""
    streams = np.asarray(streams, dtype=np.int64)
    coords = np.arange(n_sites, dtype=np.int64)[None, :, None]
    pri = uniforms_from_prefix(site_prefix(seed, streams[:, None], coords), 0)
    return np.stack([parking_interval(row) for row in pri])


def parking_sequential(order: Sequence[int], n_sites: int) -> np.ndarray:
    """Direct sequential deposition: cars arrive in ``order`` and park if both
    neighbours are still free."""
    occ = np.zeros(n_sites, dtype=np.int8)
    for i in order:
        left = occ[i - 1] if i > 0 else 0
        right = occ[i + 1] if i + 1 < n_sites else 0
        if not left and not right:
            occ[i] = 1
    return occ


def jamming_density_1d() -> float:
    return (1.0 - math.exp(-2.0)) / 2.0
