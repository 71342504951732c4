"""Overlap kernels of coding balls and their Toeplitz quadratic forms."""

from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.signal import convolve

from .lattice import Site, as_site, linf
from .stats import pairwise_sum

KERNEL_VERSION = 1


@dataclass(frozen=True)
class Kernel:
    values: Mapping[Site, float]
    truncated: bool = False
    l1: float = field(init=False)

    def __post_init__(self) -> None:
        vals = {as_site(k): float(v) for k, v in self.values.items()}
        if not vals:
            raise ValueError("kernel support must be non-empty")
        dims = {len(k) for k in vals}
        if len(dims) != 1:
            raise ValueError("kernel offsets must share one dimension")
        if any(v < 0 or not math.isfinite(v) for v in vals.values()):
            raise ValueError("kernel values must be finite and non-negative")
        object.__setattr__(self, "values", dict(sorted(vals.items())))
        object.__setattr__(self, "l1", pairwise_sum(np.array(list(vals.values()))))

    @property
    def d(self) -> int:
        return len(next(iter(self.values)))

    @property
    def support(self) -> tuple[Site, ...]:
        return tuple(k for k, v in self.values.items() if v != 0)

    @property
    def diameter(self) -> int:
        return max((linf(k) for k in self.support), default=0)

    def get(self, m: Site) -> float:
        return self.values.get(as_site(m), 0.0)

    def is_symmetric(self, tol: float = 0.0) -> bool:
        return all(abs(v - self.get(tuple(-x for x in k))) <= tol for k, v in self.values.items())

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["version", "offset", "value"])
        for k, v in self.values.items():
            w.writerow([KERNEL_VERSION, " ".join(str(x) for x in k), repr(v)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "Kernel":
        rows = list(csv.DictReader(io.StringIO(text)))
        for r in rows:
            if r.get("version") != str(KERNEL_VERSION):
                raise ValueError(f"unsupported kernel table version {r.get('version')}")
        return cls({tuple(int(x) for x in r["offset"].split()): float(r["value"]) for r in rows})


def ball_intersection(r0, rm, m: Sequence[int]) -> np.ndarray:
    """|B(0, r0) cap B(m, rm)| elementwise over replicas."""
    r0 = np.asarray(r0, dtype=np.int64)
    rm = np.asarray(rm, dtype=np.int64)
    out = np.ones(np.broadcast_shapes(r0.shape, rm.shape), dtype=np.int64)
    for mk in m:
        lo = np.maximum(-r0, mk - rm)
        hi = np.minimum(r0, mk + rm)
        out = out * np.clip(hi - lo + 1, 0, None)
    return out


@dataclass(frozen=True)
class JointRadii:
    """Radii measured at several sites within the same replicas."""

    sites: tuple[Site, ...]
    radii: np.ndarray
    replica_ids: np.ndarray
    seed: int

    def column(self, site: Site) -> np.ndarray:
        return self.radii[:, self.sites.index(as_site(site))]


def joint_from_columns(columns: Mapping[Site, tuple[int, np.ndarray, np.ndarray]]) -> JointRadii:
    """Assemble per-site (seed, replica_ids, radii); refuses mismatched replicas."""
    sites = tuple(sorted(as_site(s) for s in columns))
    seeds = {columns[s][0] for s in sites}
    if len(seeds) != 1:
        raise ValueError("radii come from different seeds; the joint law is not available")
    ids0 = np.asarray(columns[sites[0]][1])
    for s in sites:
        if not np.array_equal(np.asarray(columns[s][1]), ids0):
            raise ValueError(f"radii at {s} are not paired with the same replicas")
    R = np.stack([np.asarray(columns[s][2]) for s in sites], axis=1)
    return JointRadii(sites, R, ids0, seeds.pop())


def overlap_kernel(joint: JointRadii, origin: Site | None = None) -> Kernel:
    """b_m = mean over replicas of |B(origin, r_origin) cap B(origin+m, r_{origin+m})|.

    Offsets are those present in the joint sample.  The kernel is reported
    as truncated when the farthest available offset still has b_m > 0.
    """
    if not isinstance(joint, JointRadii):
        raise TypeError("overlap_kernel needs jointly sampled radii (JointRadii)")
    d = len(joint.sites[0])
    origin = (0,) * d if origin is None else as_site(origin)
    r0 = joint.column(origin)
    vals = {}
    for s in joint.sites:
        m = tuple(a - b for a, b in zip(s, origin))
        inter = ball_intersection(r0, joint.column(s), m)
        vals[m] = pairwise_sum(inter.astype(float)) / inter.size
    far = max(linf(m) for m in vals)
    truncated = any(v > 0 for m, v in vals.items() if linf(m) == far) and far > 0
    # drop trailing zero offsets beyond the largest one with a non-zero value
    reach = max((linf(m) for m, v in vals.items() if v > 0), default=0)
    vals = {m: v for m, v in vals.items() if linf(m) <= reach}
    return Kernel(vals, truncated=truncated)


def overlap_double_sum(r: np.ndarray, positions: Sequence[int], m: int, i_range: int) -> float:
    """d = 1 direct estimator of E sum_i 1{|i| <= r_0} 1{|m - i| <= r_m}."""
    pos = list(positions)
    r0 = r[:, pos.index(0)]
    rm = r[:, pos.index(m)]
    total = np.zeros(r.shape[0])
    for i in range(-i_range, i_range + 1):
        total += (abs(i) <= r0) & (abs(m - i) <= rm)
    return float(total.mean())


def _as_vector(delta: Mapping[Site, float]) -> dict[Site, float]:
    out = {as_site(k): float(v) for k, v in delta.items()}
    if any(v < 0 for v in out.values()):
        raise ValueError("delta must be non-negative")
    return out


def quadratic_form(b: Kernel, delta: Mapping[Site, float]) -> float:
    """Q(delta) = sum_{k,l} delta_k delta_l b_{l-k} by direct double sum."""
    delta = _as_vector(delta)
    terms = []
    items = list(delta.items())
    for k, dk in items:
        if dk == 0:
            continue
        for l, dl in items:
            if dl == 0:
                continue
            bm = b.get(tuple(x - y for x, y in zip(l, k)))
            if bm:
                terms.append(dk * dl * bm)
    return pairwise_sum(np.array(terms)) if terms else 0.0


def quadratic_form_conv(b: Kernel, delta: Mapping[Site, float]) -> float:
    """Same form via dense arrays: (delta * b) convolution, then a dot with delta."""
    delta = _as_vector(delta)
    if not delta:
        return 0.0
    d = b.d
    ks = np.array(list(delta.keys()))
    lo = ks.min(axis=0)
    hi = ks.max(axis=0)
    D = np.zeros(tuple(hi - lo + 1))
    for k, v in delta.items():
        D[tuple(np.array(k) - lo)] += v
    R = max(b.diameter, 0)
    Bk = np.zeros((2 * R + 1,) * d)
    for m, v in b.values.items():
        if linf(m) <= R:
            Bk[tuple(np.array(m) + R)] = v
    # (delta * b)_l = sum_k delta_k b_{l-k}
    full = convolve(D, Bk, mode="full", method="direct")
    sl = tuple(slice(R, R + n) for n in D.shape)
    return pairwise_sum((full[sl] * D).reshape(-1))


def block_indicator(d: int, L: int) -> dict[Site, float]:
    rng = range(-L, L + 1)
    return {s: 1.0 for s in itertools.product(*([rng] * d))}


def block_ratio_closed_form(b: Kernel, L: int) -> float:
    """sum_m b_m |Lambda_L cap (Lambda_L - m)| / |Lambda_L|."""
    side = 2 * L + 1
    tot = []
    for m, v in b.values.items():
        tot.append(v * np.prod([max(0, side - abs(x)) / side for x in m]))
    return pairwise_sum(np.array(tot))


@dataclass(frozen=True)
class RatioRow:
    L: int
    ratio: float
    closed_form: float
    l1: float
    error_bound: float


def block_ratio_scan(b: Kernel, L_list: Sequence[int], direct_limit: int = 4096) -> list[RatioRow]:
    """Ratios Q(delta_L) / ||delta_L||_2^2 for block indicators.

    The ratio comes from the direct double sum while the block has at most
    ``direct_limit`` sites; beyond that the closed form is used for both.
    ``error_bound`` is sum_m b_m * (1 - prod_k (1 - |m_k| / (2L+1))).
    """
    rows = []
    for L in L_list:
        if L <= 0:
            raise ValueError("L must be positive")
        side = 2 * L + 1
        closed = block_ratio_closed_form(b, L)
        if side**b.d <= direct_limit:
            ratio = quadratic_form(b, block_indicator(b.d, L)) / side**b.d
        else:
            ratio = closed
        err = sum(v * (1 - np.prod([max(0, side - abs(x)) / side for x in m])) for m, v in b.values.items())
        rows.append(RatioRow(L, ratio, closed, b.l1, float(err)))
    return rows
