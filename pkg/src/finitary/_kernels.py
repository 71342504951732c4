"""Compiled kernels: the pinned hash and the Ising envelope sampler."""

from __future__ import annotations

import numba as nb
import numpy as np

_G = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_OFF = np.uint64(1 << 31)
_INV53 = 2.0**-53


@nb.njit(cache=True, nogil=True)
def mix64(z):
    z = z ^ (z >> np.uint64(30))
    z = z * _M1
    z = z ^ (z >> np.uint64(27))
    z = z * _M2
    return z ^ (z >> np.uint64(31))


@nb.njit(cache=True, nogil=True)
def absorb64(h, w):
    return mix64((h ^ w) + _G)


@nb.njit(cache=True, nogil=True)
def uniform_at(seed, stream, coords, t):
    h = mix64(np.uint64(seed) + _G)
    h = absorb64(h, np.uint64(stream))
    for k in range(coords.shape[0]):
        h = absorb64(h, np.uint64(coords[k]) + _OFF)
    h = absorb64(h, np.uint64(t))
    return np.float64(h >> np.uint64(11)) * _INV53


@nb.njit(cache=True, nogil=True)
def _ising_window(seed, stream, probs, d, center, radius, T, region_radius):
    """Top/bottom heat-bath runs on a box of the given radius, from time -T.

    A one-site pad layer around the box is frozen at +1 for the top run and
    -1 for the bottom run.  Returns both runs restricted to the region.
    """
    side = 2 * radius + 3
    n_all = side**d
    strides = np.empty(d, np.int64)
    s = 1
    for k in range(d - 1, -1, -1):
        strides[k] = s
        s *= side
    up = np.ones(n_all, np.int8)
    lo = -np.ones(n_all, np.int8)

    n_in = (2 * radius + 1) ** d
    flat = np.empty(n_in, np.int64)
    parity = np.empty(n_in, np.int64)
    prefix = np.empty(n_in, np.uint64)
    h0 = absorb64(mix64(np.uint64(seed) + _G), np.uint64(stream))
    coords = np.empty(d, np.int64)
    for m in range(n_in):
        rem = m
        f = 0
        par = 0
        h = h0
        for k in range(d - 1, -1, -1):
            c = rem % (2 * radius + 1)
            rem //= 2 * radius + 1
            coords[k] = center[k] - radius + c
            f += (c + 1) * strides[k]
        for k in range(d):
            par += coords[k]
            h = absorb64(h, np.uint64(coords[k]) + _OFF)
        flat[m] = f
        parity[m] = par & 1
        prefix[m] = h

    for t in range(-T, 0):
        tt = np.uint64(t)
        tpar = t & 1
        for m in range(n_in):
            if (parity[m] + tpar) & 1:
                continue
            f = flat[m]
            su = 0
            sl = 0
            for k in range(d):
                su += up[f + strides[k]] + up[f - strides[k]]
                sl += lo[f + strides[k]] + lo[f - strides[k]]
            u = np.float64(absorb64(prefix[m], tt) >> np.uint64(11)) * _INV53
            up[f] = 1 if u < probs[su + 2 * d] else -1
            lo[f] = 1 if u < probs[sl + 2 * d] else -1

    n_reg = (2 * region_radius + 1) ** d
    out_up = np.empty(n_reg, np.int8)
    out_lo = np.empty(n_reg, np.int8)
    for m in range(n_reg):
        rem = m
        f = 0
        for k in range(d - 1, -1, -1):
            c = rem % (2 * region_radius + 1)
            rem //= 2 * region_radius + 1
            f += (c + radius - region_radius + 1) * strides[k]
        out_up[m] = up[f]
        out_lo[m] = lo[f]
    return out_up, out_lo


@nb.njit(cache=True, nogil=True)
def ising_cftp(seed, stream, probs, d, center, region_radius, t_max, margin_floor):
    """Per-site envelope CFTP for the checkerboard heat-bath chain.

    Trial depths double from 1.  At depth T the box radius is
    region_radius + min(T, max(margin_floor, T // 32)); with the frozen
    +/- pad the runs still sandwich every infinite-volume run, so agreement
    certifies the value, and the recorded depth is never below the exact
    cone coalescence depth.  Returns (spins, tau, done) over the region.
    """
    n_reg = (2 * region_radius + 1) ** d
    spins = np.zeros(n_reg, np.int8)
    tau = np.full(n_reg, t_max, np.int64)
    done = np.zeros(n_reg, np.bool_)
    remaining = n_reg
    T = 1
    while T <= t_max and remaining > 0:
        margin = min(T, max(margin_floor, T // 32))
        up, lo = _ising_window(seed, stream, probs, d, center, region_radius + margin, T, region_radius)
        for m in range(n_reg):
            if not done[m] and up[m] == lo[m]:
                done[m] = True
                spins[m] = up[m]
                tau[m] = T
                remaining -= 1
        T *= 2
    return spins, tau, done
