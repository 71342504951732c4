"""Counter-based i.i.d. noise indexed by (seed, stream, site, time).

The uniform attached to a key is a pure function of the key, so a coupling
from the past can re-read any past variable without storing it.

Pinned construction (all arithmetic modulo 2**64)::

    mix(z):   z ^= z >> 30; z *= 0xBF58476D1CE4E5B9
              z ^= z >> 27; z *= 0x94D049BB133111EB
              z ^= z >> 31
    absorb(h, w) = mix((h ^ w) + 0x9E3779B97F4A7C15)

    h = mix(seed + 0x9E3779B97F4A7C15)
    h = absorb(h, stream)
    for c in site coords: h = absorb(h, c + 2**31)
    h = absorb(h, time mod 2**64)
    u = (h >> 11) * 2**-53

Coordinates must satisfy |c| < 2**31 so that ``c + 2**31`` is an injective
32-bit packing.  The scalar, numpy and numba paths in this package compute
the same bits.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
M1 = 0xBF58476D1CE4E5B9
M2 = 0x94D049BB133111EB
COORD_OFFSET = 1 << 31
COORD_LIMIT = 1 << 31
INV53 = 2.0**-53

_U = np.uint64


class NoiseKeyError(ValueError):
    """Raised for keys outside the packable range."""


def mix64(z: int) -> int:
    z &= MASK64
    z ^= z >> 30
    z = (z * M1) & MASK64
    z ^= z >> 27
    z = (z * M2) & MASK64
    z ^= z >> 31
    return z


def absorb64(h: int, w: int) -> int:
    return mix64(((h ^ (w & MASK64)) + GOLDEN) & MASK64)


def _check_seed(seed: int) -> int:
    seed = int(seed)
    if not 0 <= seed <= MASK64:
        raise NoiseKeyError(f"seed {seed} is not an unsigned 64-bit value")
    return seed


def _check_stream(stream: int) -> int:
    stream = int(stream)
    if not 0 <= stream <= MASK64:
        raise NoiseKeyError(f"stream {stream} is not an unsigned 64-bit value")
    return stream


def _check_coord(c: int) -> int:
    c = int(c)
    if not -COORD_LIMIT < c < COORD_LIMIT:
        raise NoiseKeyError(f"coordinate {c} outside the packable range |c| < 2**31")
    return c


def _check_time(t: int) -> int:
    t = int(t)
    if not -(1 << 63) <= t < (1 << 63):
        raise NoiseKeyError(f"time {t} is not a signed 64-bit value")
    return t


@dataclass(frozen=True)
class NoiseKey:
    seed: int
    stream: int
    site: tuple[int, ...]
    time: int

    def __post_init__(self) -> None:
        _check_seed(self.seed)
        _check_stream(self.stream)
        object.__setattr__(self, "site", tuple(_check_coord(c) for c in self.site))
        _check_time(self.time)

    def hash64(self) -> int:
        h = mix64(self.seed + GOLDEN)
        h = absorb64(h, self.stream)
        for c in self.site:
            h = absorb64(h, c + COORD_OFFSET)
        return absorb64(h, self.time & MASK64)


def draw_uniform(key: NoiseKey) -> float:
    return (key.hash64() >> 11) * INV53


def _validate_weights(weights: Sequence[float]) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    if w.ndim != 1 or w.size == 0:
        raise ValueError("weights must be a non-empty 1-d probability vector")
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise ValueError("weights must be finite and non-negative")
    if abs(float(np.sum(w)) - 1.0) > 1e-12:
        raise ValueError(f"weights sum to {np.sum(w)!r}, not 1")
    return w


def categorical_from_uniform(u, weights: Sequence[float]):
    """Inverse CDF: smallest i with u < w_0 + ... + w_i.

    Monotone non-decreasing in ``u``; works on scalars and arrays.
    """
    w = _validate_weights(weights)
    cdf = np.cumsum(w)
    cdf[-1] = 1.0
    idx = np.searchsorted(cdf, u, side="right")
    idx = np.minimum(idx, w.size - 1)
    if np.ndim(idx) == 0:
        return int(idx)
    return idx.astype(np.int64)


def draw_categorical(key: NoiseKey, weights: Sequence[float]) -> int:
    return categorical_from_uniform(draw_uniform(key), weights)


# vectorised path --------------------------------------------------------


def mix64_np(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = z ^ (z >> _U(30))
        z = z * _U(M1)
        z = z ^ (z >> _U(27))
        z = z * _U(M2)
        z = z ^ (z >> _U(31))
    return z


def absorb64_np(h: np.ndarray, w: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        return mix64_np((np.asarray(h, dtype=np.uint64) ^ np.asarray(w, dtype=np.uint64)) + _U(GOLDEN))


def _as_u64_coords(coords) -> np.ndarray:
    c = np.asarray(coords, dtype=np.int64)
    if c.size and (c.max() >= COORD_LIMIT or c.min() <= -COORD_LIMIT):
        bad = c[(c >= COORD_LIMIT) | (c <= -COORD_LIMIT)].flat[0]
        raise NoiseKeyError(f"coordinate {int(bad)} outside the packable range |c| < 2**31")
    return (c + COORD_OFFSET).astype(np.uint64)


def site_prefix(seed: int, streams, sites) -> np.ndarray:
    """Hash state after absorbing seed, stream and site, before time.

    ``streams`` broadcasts against the leading shape of ``sites``
    (``sites[..., d]``).
    """
    seed = _check_seed(seed)
    sites = np.asarray(sites, dtype=np.int64)
    streams = np.asarray(streams)
    if streams.size and (np.any(streams < 0)):
        raise NoiseKeyError("streams must be non-negative")
    h0 = _U(mix64(seed + GOLDEN))
    h = absorb64_np(np.full(streams.shape, h0, dtype=np.uint64), streams.astype(np.uint64))
    packed = _as_u64_coords(sites)
    for k in range(sites.shape[-1]):
        h = absorb64_np(h, packed[..., k])
    return h


def uniforms_from_prefix(prefix: np.ndarray, times) -> np.ndarray:
    t = np.asarray(times, dtype=np.int64).astype(np.uint64)
    h = absorb64_np(prefix, t)
    return (h >> _U(11)).astype(np.float64) * INV53


def uniforms(seed: int, streams, sites, times) -> np.ndarray:
    """Vectorised draw_uniform; shapes broadcast (sites carry a trailing d axis)."""
    return uniforms_from_prefix(site_prefix(seed, streams, sites), times)


@dataclass(frozen=True)
class NoiseSource:
    """The input field X for one seed; ``channel`` separates independent fields.

    A channel is folded into the stream word as ``stream * n_channels + channel``
    by the callers that need several independent fields per replica.
    """

    seed: int

    def __post_init__(self) -> None:
        _check_seed(self.seed)

    def uniform(self, stream: int, site: Sequence[int], time: int) -> float:
        return draw_uniform(NoiseKey(self.seed, stream, tuple(site), time))

    def uniforms(self, streams, sites, times) -> np.ndarray:
        return uniforms(self.seed, streams, sites, times)

    def prefix(self, streams, sites) -> np.ndarray:
        return site_prefix(self.seed, streams, sites)


class RecordingNoise(NoiseSource):
    """NoiseSource that records the latest and earliest times it was asked for."""

    def __init__(self, seed: int) -> None:
        super().__init__(seed)
        object.__setattr__(self, "max_time", None)
        object.__setattr__(self, "min_time", None)
        object.__setattr__(self, "reads", 0)

    def _note(self, times) -> None:
        t = np.asarray(times, dtype=np.int64)
        if t.size == 0:
            return
        hi, lo = int(t.max()), int(t.min())
        object.__setattr__(self, "max_time", hi if self.max_time is None else max(self.max_time, hi))
        object.__setattr__(self, "min_time", lo if self.min_time is None else min(self.min_time, lo))
        object.__setattr__(self, "reads", self.reads + int(t.size))

    def uniform(self, stream, site, time):
        self._note([time])
        return super().uniform(stream, site, time)

    def uniforms(self, streams, sites, times):
        self._note(np.broadcast_to(np.asarray(times), np.broadcast_shapes(np.shape(times), np.shape(streams))))
        return super().uniforms(streams, sites, times)

    def __hash__(self):  # identity, the record fields mutate
        return id(self)
