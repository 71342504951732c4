"""Geometry of Z^d: boxes, windows, Hamming distance and local observables."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, Mapping, Sequence

import numpy as np

Site = tuple[int, ...]

HOST_INT_MAX = (1 << 63) - 1


def as_site(coords: Iterable[int]) -> Site:
    return tuple(int(c) for c in coords)


def linf(a: Sequence[int], b: Sequence[int] | None = None) -> int:
    if b is None:
        return max((abs(int(x)) for x in a), default=0)
    return max((abs(int(x) - int(y)) for x, y in zip(a, b)), default=0)


def ball_volume(d: int, r: int, *, checked: bool = False) -> int:
    """|B_inf(j, r)| = (2r+1)^d, exact.

    With ``checked=True`` a result that does not fit a signed 64-bit host
    integer raises ``OverflowError`` instead of being returned.
    """
    if d < 1:
        raise ValueError(f"dimension must be >= 1, got {d}")
    if r < 0:
        raise ValueError(f"radius must be >= 0, got {r}")
    vol = (2 * int(r) + 1) ** int(d)
    if checked and vol > HOST_INT_MAX:
        raise OverflowError(f"(2*{r}+1)^{d} exceeds the 64-bit host integer range")
    return vol


@dataclass(frozen=True)
class Box:
    center: Site
    radius: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "center", as_site(self.center))
        if self.radius < 0:
            raise ValueError("box radius must be non-negative")
        if len(self.center) < 1:
            raise ValueError("box dimension must be >= 1")

    @classmethod
    def around_origin(cls, d: int, radius: int) -> "Box":
        return cls((0,) * d, radius)

    @property
    def d(self) -> int:
        return len(self.center)

    @property
    def side(self) -> int:
        return 2 * self.radius + 1

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.side,) * self.d

    @property
    def volume(self) -> int:
        return ball_volume(self.d, self.radius)

    def contains(self, site: Sequence[int]) -> bool:
        return len(site) == self.d and linf(site, self.center) <= self.radius

    def __contains__(self, site) -> bool:
        return self.contains(site)

    def sites(self) -> Iterator[Site]:
        """Sites in lexicographic order (matches C-order of ``coords_array``)."""
        ranges = [range(c - self.radius, c + self.radius + 1) for c in self.center]
        return (tuple(s) for s in itertools.product(*ranges))

    def coords_array(self) -> np.ndarray:
        """Array of shape ``shape + (d,)`` holding the coordinates of every site."""
        axes = [np.arange(c - self.radius, c + self.radius + 1, dtype=np.int64) for c in self.center]
        grids = np.meshgrid(*axes, indexing="ij")
        return np.stack(grids, axis=-1)

    def index_of(self, site: Sequence[int]) -> tuple[int, ...]:
        if not self.contains(site):
            raise KeyError(f"site {tuple(site)} not in {self}")
        return tuple(int(s) - c + self.radius for s, c in zip(site, self.center))

    def grow(self, by: int) -> "Box":
        return Box(self.center, self.radius + by)


class Window:
    """Immutable configuration on a finite set of sites.

    Sites are stored in sorted order so iteration and serialization are
    deterministic.
    """

    __slots__ = ("_sites", "_values", "_index")

    def __init__(self, values: Mapping[Site, int]):
        items = sorted((as_site(s), int(v)) for s, v in values.items())
        dims = {len(s) for s, _ in items}
        if len(dims) > 1:
            raise ValueError("all sites of a window must share one dimension")
        if any(v < 0 for _, v in items):
            raise ValueError("symbols are non-negative alphabet indices")
        self._sites: tuple[Site, ...] = tuple(s for s, _ in items)
        self._values: tuple[int, ...] = tuple(v for _, v in items)
        self._index = {s: i for i, s in enumerate(self._sites)}
        if len(self._index) != len(self._sites):
            raise ValueError("duplicate sites")

    @classmethod
    def from_array(cls, box: Box, arr: np.ndarray) -> "Window":
        arr = np.asarray(arr)
        if arr.shape != box.shape:
            raise ValueError(f"array shape {arr.shape} does not match box shape {box.shape}")
        return cls(dict(zip(box.sites(), arr.reshape(-1).tolist())))

    def to_array(self, box: Box) -> np.ndarray:
        out = np.empty(box.volume, dtype=np.int64)
        for n, s in enumerate(box.sites()):
            if s not in self._index:
                raise KeyError(f"site {s} not in window domain")
            out[n] = self._values[self._index[s]]
        return out.reshape(box.shape)

    @property
    def domain(self) -> tuple[Site, ...]:
        return self._sites

    @property
    def d(self) -> int | None:
        return len(self._sites[0]) if self._sites else None

    def __len__(self) -> int:
        return len(self._sites)

    def __contains__(self, site) -> bool:
        return as_site(site) in self._index

    def __getitem__(self, site) -> int:
        return self._values[self._index[as_site(site)]]

    def get(self, site, default=None):
        i = self._index.get(as_site(site))
        return default if i is None else self._values[i]

    def items(self) -> Iterator[tuple[Site, int]]:
        return zip(self._sites, self._values)

    def with_values(self, updates: Mapping[Site, int]) -> "Window":
        merged = dict(self.items())
        merged.update({as_site(s): int(v) for s, v in updates.items()})
        return Window(merged)

    def restrict(self, sites: Iterable[Site]) -> "Window":
        return Window({as_site(s): self[s] for s in sites})

    def __eq__(self, other) -> bool:
        return isinstance(other, Window) and self._sites == other._sites and self._values == other._values

    def __hash__(self) -> int:
        return hash((self._sites, self._values))

    def __repr__(self) -> str:
        return f"Window({dict(self.items())!r})"


def hamming(x: Window, y: Window, sites: Iterable[Site]) -> int:
    n = 0
    for s in sites:
        s = as_site(s)
        if s not in x or s not in y:
            raise KeyError(f"site {s} not covered by both windows")
        n += x[s] != y[s]
    return n


@dataclass(frozen=True)
class Observable:
    """Local function f with dependence set and per-site oscillations.

    ``func`` maps a Window to a real.  ``vector`` optionally evaluates many
    replicas at once from an array of shape (replicas, len(dep)) whose columns
    follow ``dep`` order.
    """

    dep: tuple[Site, ...]
    func: Callable[[Window], float]
    osc: Mapping[Site, float]
    name: str = "observable"
    vector: Callable[[np.ndarray], np.ndarray] | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        dep = tuple(sorted(as_site(s) for s in self.dep))
        object.__setattr__(self, "dep", dep)
        osc = {as_site(s): float(v) for s, v in self.osc.items()}
        extra = [s for s, v in osc.items() if v != 0 and s not in set(dep)]
        if extra:
            raise ValueError(f"oscillation is non-zero off the dependence set at {extra[0]}")
        if any(not math.isfinite(v) or v < 0 for v in osc.values()):
            raise ValueError("oscillations must be finite and non-negative")
        object.__setattr__(self, "osc", osc)

    def __call__(self, x: Window) -> float:
        return float(self.func(x))

    def evaluate_many(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values)
        if values.ndim != 2 or values.shape[1] != len(self.dep):
            raise ValueError("expected an array of shape (replicas, len(dep))")
        if self.vector is not None:
            return np.asarray(self.vector(values), dtype=float)
        return np.array([self(Window(dict(zip(self.dep, row.tolist())))) for row in values])

    def norm(self, p: float = 2) -> float:
        return osc_norm(self, p)


def osc_norm(f: Observable, p: float = 2) -> float:
    vals = np.array([v for v in f.osc.values()], dtype=float)
    if vals.size == 0:
        return 0.0
    if math.isinf(p):
        return float(vals.max())
    if p < 1:
        raise ValueError("p must be >= 1")
    return float(np.sum(vals**p) ** (1.0 / p))


def exhaustive_oscillation(
    func: Callable[[Window], float], dep: Sequence[Site], alphabet_size: int, max_configs: int = 1 << 16
) -> dict[Site, float]:
    """delta_j f by enumerating every configuration on dep (oracle, tiny dep only)."""
    dep = [as_site(s) for s in dep]
    n = len(dep)
    if alphabet_size**n > max_configs:
        raise ValueError(f"{alphabet_size}^{n} configurations exceed the budget {max_configs}")
    table = {}
    for cfg in itertools.product(range(alphabet_size), repeat=n):
        table[cfg] = float(func(Window(dict(zip(dep, cfg)))))
    out = {}
    for j in range(n):
        best = 0.0
        for cfg, val in table.items():
            for b in range(alphabet_size):
                if b == cfg[j]:
                    continue
                alt = cfg[:j] + (b,) + cfg[j + 1 :]
                best = max(best, abs(val - table[alt]))
        out[dep[j]] = best
    return out


# built-in observables ------------------------------------------------------
# spins are stored as alphabet indices {0, 1} meaning {-1, +1}


def _spin(v):
    return 2 * np.asarray(v) - 1


def block_spin_sum(box: Box) -> Observable:
    dep = tuple(box.sites())
    return Observable(
        dep=dep,
        func=lambda x: float(sum(2 * x[s] - 1 for s in dep)),
        osc={s: 2.0 for s in dep},
        name="block_sum",
        vector=lambda a: _spin(a).sum(axis=1).astype(float),
    )


def block_spin_mean(box: Box) -> Observable:
    dep = tuple(box.sites())
    n = len(dep)
    return Observable(
        dep=dep,
        func=lambda x: float(sum(2 * x[s] - 1 for s in dep)) / n,
        osc={s: 2.0 / n for s in dep},
        name="block_mean",
        vector=lambda a: _spin(a).mean(axis=1).astype(float),
    )


def single_spin(site: Site) -> Observable:
    site = as_site(site)
    return Observable(
        dep=(site,),
        func=lambda x: float(2 * x[site] - 1),
        osc={site: 2.0},
        name="spin",
        vector=lambda a: _spin(a[:, 0]).astype(float),
    )


def indicator(site: Site, symbol: int) -> Observable:
    site = as_site(site)
    return Observable(
        dep=(site,),
        func=lambda x: float(x[site] == symbol),
        osc={site: 1.0},
        name="indicator",
        vector=lambda a: (a[:, 0] == symbol).astype(float),
    )


def block_value_sum(box: Box, max_symbol: float) -> Observable:
    """Sum of raw symbol values over a box, values in [0, max_symbol]."""
    dep = tuple(box.sites())
    return Observable(
        dep=dep,
        func=lambda x: float(sum(x[s] for s in dep)),
        osc={s: float(max_symbol) for s in dep},
        name="value_sum",
        vector=lambda a: np.asarray(a, dtype=float).sum(axis=1),
    )


def constant(value: float = 0.0) -> Observable:
    return Observable(dep=(), func=lambda x: value, osc={}, name="constant",
                      vector=lambda a: np.full(a.shape[0], float(value)))
