"""Coupling from the past for probabilistic cellular automata.

States live on boxes as integer arrays with a leading batch axis.  A step
maps a box of radius R to the box of radius R - reach(F), so a run started
on the backward cone of a region never needs boundary values.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Hashable, Iterable, Protocol, Sequence

import numpy as np

from .lattice import Box, Site, Window, as_site, linf
from .noise import NoiseSource, categorical_from_uniform, site_prefix, uniforms_from_prefix


class ConeCoverageError(ValueError):
    """The initial window does not cover the backward cone of the region."""


class BudgetExceeded(RuntimeError):
    """Exhaustive enumeration would exceed the configured budget."""


class UnresolvedError(RuntimeError):
    def __init__(self, message: str, replica: int | None = None, site: Site | None = None):
        super().__init__(message)
        self.replica = replica
        self.site = site


class Status(str, Enum):
    COALESCED = "Coalesced"
    UNRESOLVED = "Unresolved"


class Strategy(str, Enum):
    MONOTONE = "monotone"
    EXHAUSTIVE = "exhaustive"


UpdateFn = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class PcaSpec:
    """A PCA: omega_{v,t+1} = update(omega_{v+F,t}, W_{v+F',t}, phase).

    ``update`` receives states of shape (|F|, *batch), noise of shape
    (|F'|, *batch) and ``phase = (sum(v) + t) mod period``; it must broadcast
    over the batch axes.  Noise is the raw uniform unless ``noise_weights``
    is set, in which case the inverse-CDF symbol index is passed.  The order
    on states, when used, is the integer order of the symbol indices.
    """

    d: int
    n_states: int
    F: tuple[Site, ...]
    Fp: tuple[Site, ...]
    update: UpdateFn = field(compare=False)
    noise_weights: tuple[float, ...] | None = None
    monotone: bool = False
    top: int | None = None
    bottom: int | None = None
    period: int = 1
    name: str = "pca"

    def __post_init__(self) -> None:
        F = tuple(as_site(u) for u in self.F)
        Fp = tuple(as_site(u) for u in self.Fp)
        if not F or not Fp:
            raise ValueError("F and F' must be non-empty")
        if any(len(u) != self.d for u in F + Fp):
            raise ValueError("offset dimension does not match d")
        if self.n_states < 1:
            raise ValueError("state alphabet must be non-empty")
        if self.period < 1:
            raise ValueError("period must be >= 1")
        object.__setattr__(self, "F", F)
        object.__setattr__(self, "Fp", Fp)
        if self.monotone:
            if self.top is None or self.bottom is None:
                raise ValueError("a monotone spec must declare top and bottom")
            if not (0 <= self.bottom <= self.top < self.n_states):
                raise ValueError("top/bottom must be ordered state indices")

    @property
    def reach_F(self) -> int:
        return max(linf(u) for u in self.F)

    @property
    def reach_noise(self) -> int:
        return max(linf(u) for u in self.Fp)

    @property
    def reach(self) -> int:
        """max ||u||_inf over F and F'; the per-step spatial reach of the cone."""
        return max(self.reach_F, self.reach_noise)


@dataclass(frozen=True)
class CoalescenceResult:
    status: Status
    tau: int
    value: int | None
    cone_radius: int


@dataclass(frozen=True)
class CodingSample:
    site: Site
    value: int | None
    radius: int
    tau: int
    status: Status = Status.COALESCED
    replica: int = 0


# noise fields -----------------------------------------------------------


class NoiseField(Protocol):
    uniform: bool

    def block(self, box: Box, t: int) -> np.ndarray: ...


class HashField:
    """Counter-based noise for a batch of streams, with cached site prefixes."""

    uniform = True

    def __init__(self, seed: int, streams: Sequence[int] | np.ndarray):
        self.seed = int(seed)
        self.streams = np.atleast_1d(np.asarray(streams, dtype=np.int64))
        self._box: Box | None = None
        self._prefix: np.ndarray | None = None

    def prepare(self, box: Box) -> None:
        if self._box is not None and self._box.center == box.center and self._box.radius >= box.radius:
            return
        coords = box.coords_array().reshape(-1, box.d)
        pre = site_prefix(self.seed, self.streams[:, None], coords[None, :, :])
        self._box = box
        self._prefix = pre.reshape((len(self.streams),) + box.shape)

    def block(self, box: Box, t: int) -> np.ndarray:
        if self._box is None or not _inside(box, self._box):
            self.prepare(box if self._box is None else _hull(box, self._box))
        assert self._box is not None and self._prefix is not None
        sl = _sub_slices(self._box, box)
        return uniforms_from_prefix(self._prefix[(slice(None),) + sl], t)


class ReaderField:
    """Noise read site by site from a callable ``reader(site) -> column``.

    A column is a callable ``t -> value``.  Used for codings whose input is
    not the hash field (composition) and for instrumented reads.
    """

    def __init__(self, reader: Callable[[Site], Callable[[int], float]], uniform: bool = True):
        self.reader = reader
        self.uniform = uniform

    def block(self, box: Box, t: int) -> np.ndarray:
        vals = [self.reader(s)(t) for s in box.sites()]
        return np.asarray(vals).reshape((1,) + box.shape)


def _inside(inner: Box, outer: Box) -> bool:
    return all(abs(a - b) + inner.radius <= outer.radius for a, b in zip(inner.center, outer.center))


def _hull(a: Box, b: Box) -> Box:
    r = max(max(abs(x - y) for x, y in zip(a.center, b.center)) + a.radius, b.radius)
    return Box(b.center, r)


def _sub_slices(outer: Box, inner: Box) -> tuple[slice, ...]:
    out = []
    for co, ci in zip(outer.center, inner.center):
        lo = ci - inner.radius - (co - outer.radius)
        out.append(slice(lo, lo + 2 * inner.radius + 1))
    return tuple(out)


# core stepping ----------------------------------------------------------


def _noise_symbols(spec: PcaSpec, field_: NoiseField, box: Box, t: int) -> np.ndarray:
    arrs = []
    for u in spec.Fp:
        shifted = Box(tuple(c + o for c, o in zip(box.center, u)), box.radius)
        vals = field_.block(shifted, t)
        if spec.noise_weights is not None and field_.uniform:
            vals = categorical_from_uniform(vals, spec.noise_weights)
        arrs.append(vals)
    return np.stack(arrs)


def _phase(box: Box, t: int, period: int) -> np.ndarray:
    if period == 1:
        return np.zeros(box.shape, dtype=np.int64)
    s = box.coords_array().sum(axis=-1)
    return np.mod(s + t, period)


def _step(spec: PcaSpec, arrays: list[np.ndarray], box: Box, t: int, field_: NoiseField) -> tuple[list[np.ndarray], Box]:
    """One step from time t to t+1; arrays are (batch, *box.shape)."""
    rF = spec.reach_F
    out = Box(box.center, box.radius - rF)
    noise = _noise_symbols(spec, field_, out, t)
    phase = _phase(out, t, spec.period)
    side = out.side
    new = []
    for arr in arrays:
        parts = []
        for u in spec.F:
            sl = tuple(slice(rF + uk, rF + uk + side) for uk in u)
            parts.append(arr[(slice(None),) + sl])
        res = spec.update(np.stack(parts), noise, phase)
        new.append(np.asarray(res, dtype=np.int64))
    return new, out


def run_arrays(
    spec: PcaSpec,
    arrays: list[np.ndarray],
    box: Box,
    t0: int,
    t1: int,
    field_: NoiseField,
    keep: bool = False,
):
    """Evolve batch arrays from t0 to t1; returns final arrays and box (and trajectory)."""
    if box.radius < (t1 - t0) * spec.reach_F:
        raise ConeCoverageError(f"box radius {box.radius} too small for {t1 - t0} steps")
    if isinstance(field_, HashField):
        field_.prepare(box.grow(spec.reach_noise))
    traj = [(arrays, box)] if keep else None
    for t in range(t0, t1):
        arrays, box = _step(spec, arrays, box, t, field_)
        if keep:
            traj.append((arrays, box))
    return arrays, box, traj


def evolve(
    spec: PcaSpec,
    initial: Window,
    t0: int,
    t1: int,
    noise: NoiseSource,
    region: Box,
    stream: int = 0,
) -> list[Window]:
    """Trajectory of windows from t0 to t1, shrinking onto ``region``.

    Entry k lives on the box of radius region.radius + (t1 - t0 - k) * reach(F).
    """
    if t1 < t0:
        raise ValueError("t0 must not exceed t1")
    base = region.grow((t1 - t0) * spec.reach_F)
    for s in base.sites():
        if s not in initial:
            raise ConeCoverageError(f"initial window does not cover site {s}")
    arr = initial.restrict(base.sites()).to_array(base)[None]
    field_ = HashField(noise.seed, [stream])
    _, _, traj = run_arrays(spec, [arr], base, t0, t1, field_, keep=True)
    return [Window.from_array(b, a[0][0]) for a, b in traj]


def depth_schedule(t_max: int) -> list[int]:
    if t_max < 1:
        raise ValueError("t_max must be positive")
    out, t = [], 1
    while t <= t_max:
        out.append(t)
        t *= 2
    return out


def envelope_run(spec: PcaSpec, region: Box, seed: int, streams: np.ndarray, T: int):
    """Top and bottom runs from time -T onto ``region`` for a batch of streams."""
    if not spec.monotone:
        raise ValueError(f"spec {spec.name!r} is not declared monotone")
    base = region.grow(T * spec.reach_F)
    n = len(streams)
    top = np.full((n,) + base.shape, spec.top, dtype=np.int64)
    bot = np.full((n,) + base.shape, spec.bottom, dtype=np.int64)
    (top, bot), _, _ = run_arrays(spec, [top, bot], base, -T, 0, HashField(seed, streams))
    return top, bot


def sample_region(
    spec: PcaSpec,
    region: Box,
    seed: int,
    streams: Sequence[int],
    t_max: int,
):
    """Monotone CFTP for every site of ``region`` and every stream.

    Returns (values, tau, coalesced) arrays of shape (len(streams), *region.shape);
    tau is t_max where unresolved and values are -1 there.
    """
    streams = np.asarray(streams, dtype=np.int64)
    n = len(streams)
    values = np.full((n,) + region.shape, -1, dtype=np.int64)
    tau = np.full((n,) + region.shape, t_max, dtype=np.int64)
    done = np.zeros((n,) + region.shape, dtype=bool)
    active = np.arange(n)
    for T in depth_schedule(t_max):
        if active.size == 0:
            break
        top, bot = envelope_run(spec, region, seed, streams[active], T)
        agree = (top == bot) & ~done[active]
        sub_v, sub_t, sub_d = values[active], tau[active], done[active]
        sub_v[agree] = top[agree]
        sub_t[agree] = T
        sub_d |= agree
        values[active], tau[active], done[active] = sub_v, sub_t, sub_d
        active = active[~done[active].reshape(len(active), -1).all(axis=1)]
    return values, tau, done


def _all_configs(n_states: int, n_sites: int, budget: int) -> np.ndarray:
    count = n_states**n_sites
    if count > budget:
        raise BudgetExceeded(f"{n_states}^{n_sites} = {count} initial configurations exceed budget {budget}")
    idx = np.arange(count, dtype=np.int64)
    powers = n_states ** np.arange(n_sites, dtype=np.int64)
    return (idx[:, None] // powers[None, :]) % n_states


def exhaustive_run(spec: PcaSpec, v: Site, field_: NoiseField, T: int, budget: int):
    """All initial configurations on the cone base of (v, 0) from depth T.

    Returns the array of outcomes at v, one per configuration.
    """
    region = Box(v, 0)
    base = region.grow(T * spec.reach_F)
    cfg = _all_configs(spec.n_states, base.volume, budget).reshape((-1,) + base.shape)
    (out,), _, _ = run_arrays(spec, [cfg], base, -T, 0, field_)
    return out.reshape(-1)


def coalescence(
    spec: PcaSpec,
    v: Site,
    strategy: Strategy | str,
    noise: NoiseSource,
    t_max: int,
    stream: int = 0,
    budget: int = 1 << 20,
) -> CoalescenceResult:
    strategy = Strategy(strategy)
    v = as_site(v)
    if strategy is Strategy.MONOTONE:
        values, tau, done = sample_region(spec, Box(v, 0), noise.seed, [stream], t_max)
        ok = bool(done.reshape(-1)[0])
        t = int(tau.reshape(-1)[0])
        val = int(values.reshape(-1)[0]) if ok else None
    else:
        field_ = HashField(noise.seed, [stream])
        ok, val, t = False, None, t_max
        for T in depth_schedule(t_max):
            outs = exhaustive_run(spec, v, field_, T, budget)
            if np.all(outs == outs[0]):
                ok, val, t = True, int(outs[0]), T
                break
    status = Status.COALESCED if ok else Status.UNRESOLVED
    return CoalescenceResult(status, t, val, t * spec.reach)


def sample_stationary(
    spec: PcaSpec,
    sites: Iterable[Sequence[int]],
    strategy: Strategy | str,
    noise: NoiseSource,
    t_max: int,
    streams: Sequence[int] = (0,),
    policy: str = "abort",
    budget: int = 1 << 20,
) -> list[CodingSample]:
    """Per-site CFTP under shared noise for each stream (replica).

    ``policy='abort'`` raises UnresolvedError on the first unresolved
    (replica, site); ``'flag'`` keeps it with status Unresolved.
    """
    sites = [as_site(s) for s in sites]
    strategy = Strategy(strategy)
    streams = [int(s) for s in streams]
    out: list[CodingSample] = []
    if strategy is Strategy.MONOTONE and sites:
        center = sites[0]
        radius = max(linf(s, center) for s in sites)
        region = Box(center, radius)
        values, tau, done = sample_region(spec, region, noise.seed, streams, t_max)
        for r, stream in enumerate(streams):
            for s in sites:
                idx = (r,) + region.index_of(s)
                out.append(_make_sample(spec, s, bool(done[idx]), int(values[idx]), int(tau[idx]), stream))
    else:
        for stream in streams:
            for s in sites:
                res = coalescence(spec, s, strategy, noise, t_max, stream=stream, budget=budget)
                out.append(_make_sample(spec, s, res.status is Status.COALESCED, res.value, res.tau, stream))
    if policy == "abort":
        for smp in out:
            if smp.status is Status.UNRESOLVED:
                raise UnresolvedError(
                    f"replica {smp.replica} site {smp.site} unresolved at t_max={t_max}",
                    replica=smp.replica,
                    site=smp.site,
                )
    elif policy != "flag":
        raise ValueError(f"unknown unresolved policy {policy!r}")
    return out


def _make_sample(spec: PcaSpec, site: Site, ok: bool, value, tau: int, stream: int) -> CodingSample:
    return CodingSample(
        site=site,
        value=int(value) if ok else None,
        radius=tau * spec.reach,
        tau=tau,
        status=Status.COALESCED if ok else Status.UNRESOLVED,
        replica=stream,
    )


def audit_monotone(spec: PcaSpec, n_samples: int = 10_000, seed: int = 0) -> int:
    """Randomized order-preservation audit; returns the number of pairs checked.

    Draws ordered pairs of neighbourhood states with shared noise and phase
    and raises AssertionError on the first violation.
    """
    if not spec.monotone:
        raise ValueError("spec is not declared monotone")
    rng = np.random.default_rng(seed)
    k = len(spec.F)
    lo = rng.integers(0, spec.n_states, size=(k, n_samples))
    hi = np.maximum(lo, rng.integers(0, spec.n_states, size=(k, n_samples)))
    u = rng.random((len(spec.Fp), n_samples))
    noise = categorical_from_uniform(u, spec.noise_weights) if spec.noise_weights is not None else u
    phase = rng.integers(0, spec.period, size=n_samples)
    a = np.asarray(spec.update(lo, noise, phase))
    b = np.asarray(spec.update(hi, noise, phase))
    bad = np.nonzero(a > b)[0]
    if bad.size:
        i = int(bad[0])
        raise AssertionError(
            f"monotonicity violated: states {lo[:, i].tolist()} <= {hi[:, i].tolist()} "
            f"map to {int(a[i])} > {int(b[i])}"
        )
    return n_samples


# codings as black boxes -------------------------------------------------


class RecordingReader:
    """Wraps ``reader(site)`` and remembers which sites were read."""

    def __init__(self, reader: Callable[[Site], object]):
        self.reader = reader
        self.read: set[Site] = set()

    def __call__(self, site) -> object:
        site = as_site(site)
        self.read.add(site)
        return self.reader(site)

    def radius_about(self, center: Site) -> int:
        return max((linf(s, center) for s in self.read), default=0)


Coding = Callable[[Callable[[Site], object], Site], tuple[Hashable, int]]
"""A coding evaluates its output at ``site`` from ``reader`` and returns (value, radius)."""


def pca_coding(spec: PcaSpec, t_max: int, uniform_input: bool = True) -> Coding:
    """CFTP at one site as a coding of the column-valued input field.

    The input symbol at site j is a column ``t -> W_{j,t}``.  The value is
    None when the run is unresolved at t_max.  Each trial depth T reads the
    columns of the whole ball B(site, T * reach), so the read radius equals
    the reported cone radius.
    """

    def code(reader, site):
        site = as_site(site)
        columns: dict[Site, object] = {}

        def column(s):
            if s not in columns:
                columns[s] = reader(s)
            return columns[s]

        field_ = ReaderField(column, uniform=uniform_input)
        for T in depth_schedule(t_max):
            for s in Box(site, T * spec.reach).sites():
                column(s)
            if spec.monotone:
                base = Box(site, T * spec.reach_F)
                top = np.full((1,) + base.shape, spec.top, dtype=np.int64)
                bot = np.full((1,) + base.shape, spec.bottom, dtype=np.int64)
                (top, bot), _, _ = run_arrays(spec, [top, bot], base, -T, 0, field_)
                a, b = int(top.reshape(-1)[0]), int(bot.reshape(-1)[0])
                if a == b:
                    return a, T * spec.reach
            else:
                outs = exhaustive_run(spec, site, field_, T, 1 << 20)
                if np.all(outs == outs[0]):
                    return int(outs[0]), T * spec.reach
        return None, t_max * spec.reach

    return code


def measured_radius(coding: Coding, reader, site: Site) -> tuple[Hashable, int, int]:
    """(value, reported radius, radius of the input sites actually read)."""
    rec = RecordingReader(reader)
    value, radius = coding(rec, as_site(site))
    return value, radius, rec.radius_about(as_site(site))


@dataclass(frozen=True)
class RadiusResult:
    radius: int | None
    exceeds: bool
    evaluations: int


def radius_oracle(
    coding: Callable[[Window], Hashable],
    x: Window,
    r_max: int,
    alphabet_size: int,
    origin: Site | None = None,
    budget: int = 1 << 18,
) -> RadiusResult:
    """Smallest r such that every x' equal to x on B(origin, r) gives the same output.

    ``coding`` maps a window over the full domain of x to the output at the
    origin.  Perturbations range over ``alphabet`` on the rest of the domain.
    Exponential cost; returns ``exceeds=True`` beyond ``r_max`` or the budget.
    """
    if origin is None:
        origin = (0,) * (x.d or 1)
    origin = as_site(origin)
    ref = coding(x)
    evals = 1
    dom = list(x.domain)
    for r in range(0, r_max + 1):
        outside = [s for s in dom if linf(s, origin) > r]
        count = alphabet_size ** len(outside)
        if evals + count > budget:
            return RadiusResult(None, True, evals)
        ok = True
        base = dict(x.items())
        for combo in itertools.product(range(alphabet_size), repeat=len(outside)):
            cfg = dict(base)
            for s, k in zip(outside, combo):
                cfg[s] = k
            evals += 1
            if coding(Window(cfg)) != ref:
                ok = False
                break
        if ok:
            return RadiusResult(r, False, evals)
    return RadiusResult(None, True, evals)


def truncate_values(values: np.ndarray, radii: np.ndarray, n: int, b0: int) -> np.ndarray:
    """Output of the truncated coding: the original value where r <= n, else b0."""
    if n < 0:
        raise ValueError("truncation level must be non-negative")
    return np.where(np.asarray(radii) <= n, values, b0)


def truncate(coding: Coding, n: int, b0: Hashable) -> Coding:
    """Truncated coding with deterministic radius <= n."""
    if n < 0:
        raise ValueError("truncation level must be non-negative")

    def code(reader, site):
        value, r = coding(reader, site)
        if r <= n:
            return value, r
        return b0, n

    return code


@dataclass(frozen=True)
class CompositeResult:
    value: Hashable
    radius: int
    bound: int
    r2: int

    @property
    def contained(self) -> bool:
        return self.radius <= self.bound


def composite_radius(c1: Coding, c2: Coding, reader, site: Sequence[int]) -> CompositeResult:
    """Measured radius of c2 after c1 at ``site`` with the union-of-balls bound.

    The measured radius is the farthest base-input site read while evaluating
    c2 on the output of c1.  The bound is max over k in B(site, r2) of
    ||k - site|| + r1(k).
    """
    site = as_site(site)
    base = RecordingReader(reader)
    cache: dict[Site, tuple[Hashable, int]] = {}

    def c1_at(k: Site):
        if k not in cache:
            cache[k] = c1(base, k)
        return cache[k][0]

    value, r2 = c2(c1_at, site)
    measured = base.radius_about(site)
    bound = 0
    for k in Box(site, r2).sites():
        if k not in cache:
            cache[k] = c1(reader, k)
        bound = max(bound, linf(k, site) + cache[k][1])
    return CompositeResult(value, measured, bound, r2)


def identity_coding(reader, site):
    return reader(as_site(site)), 0


def stacked_coding(coding: Coding, channels: int) -> Coding:
    """Run ``coding`` on ``channels`` independent input channels at once.

    The input column at j must accept (channel, t).  The output symbol is the
    tuple of per-channel values; the radius is the largest per-channel radius.
    """

    def code(reader, site):
        vals, radius = [], 0
        for c in range(channels):
            value, r = coding(lambda s, c=c: _channel_view(reader(s), c), site)
            vals.append(value)
            radius = max(radius, r)
        return tuple(vals), radius

    return code


def _channel_view(column, c):
    return lambda t: column(c, t)
