"""Lattice geometry, random-walk kernels, fields and pair potentials.

The model lives on a finite box Lambda = {-L..L}^d of Z^d.  Heights are
attached to interior sites, with the zero boundary condition outside the
box.  Interactions run along the edges of a finite-range symmetric
random-walk kernel p, and the energy of a height configuration phi in an
external field eta is

    H(phi) = 1/2 sum_{i,j in Lambda} p(i-j) V(phi_i - phi_j)
           + sum_{i in Lambda, j outside} p(i-j) V(phi_i)
           - sum_{i in Lambda} eta_i phi_i

for an even pair potential V that grows faster than linearly.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import cached_property
from typing import Iterator

import numpy as np

Site = tuple[int, ...]
Edge = tuple[Site, Site]

#: tolerance for the kernel normalization sum
KERNEL_NORM_TOL = 1e-12


def canonical_edge(i: Site, j: Site) -> tuple[Edge, float]:
    """Return the canonical storage key for the unordered edge {i, j}.

    Edge values are antisymmetric, stored once with the lexicographically
    smaller endpoint first.  The returned sign is +1 if (i, j) already is
    the canonical orientation and -1 if it is the reverse.
    """
    if i == j:
        raise ValueError(f"degenerate edge at site {i}")
    if i < j:
        return (i, j), 1.0
    return (j, i), -1.0


# ---------------------------------------------------------------------------
# kernel


@dataclass(frozen=True)
class Kernel:
    """Finite-range symmetric random-walk weights p(v) on Z^d offsets.

    The container itself does not enforce its invariants (so that invalid
    kernels can be built and inspected); use :func:`validate_kernel`.
    """

    d: int
    offsets: tuple[Site, ...]
    weights: tuple[float, ...]

    @classmethod
    def from_map(cls, d: int, weight_map: dict[Site, float]) -> "Kernel":
        items = sorted(weight_map.items())
        return cls(d=d, offsets=tuple(v for v, _ in items),
                   weights=tuple(w for _, w in items))

    @classmethod
    def nearest_neighbor(cls, d: int) -> "Kernel":
        """p(+-e_nu) = 1/(2d), the simple random walk kernel."""
        w = 1.0 / (2 * d)
        wmap: dict[Site, float] = {}
        for ax in range(d):
            for s in (1, -1):
                v = [0] * d
                v[ax] = s
                wmap[tuple(v)] = w
        return cls.from_map(d, wmap)

    @classmethod
    def axis_kernel(cls, d: int, reach: int) -> "Kernel":
        """Equal weights on +-k e_nu for 1 <= k <= reach (range-`reach` jumps)."""
        if reach < 1:
            raise ValueError("reach must be >= 1")
        w = 1.0 / (2 * d * reach)
        wmap: dict[Site, float] = {}
        for ax in range(d):
            for k in range(1, reach + 1):
                for s in (1, -1):
                    v = [0] * d
                    v[ax] = s * k
                    wmap[tuple(v)] = w
        return cls.from_map(d, wmap)

    @cached_property
    def range(self) -> int:
        """Maximum sup-norm of a supported offset."""
        return max((max(abs(c) for c in v) for v, w in zip(self.offsets, self.weights)
                    if w != 0.0), default=0)

    def weight(self, v: Site) -> float:
        try:
            k = self.offsets.index(v)
        except ValueError:
            return 0.0
        return self.weights[k]

    def support(self) -> list[tuple[Site, float]]:
        """Offsets with nonzero weight, in sorted order."""
        return [(v, w) for v, w in zip(self.offsets, self.weights) if w != 0.0]


def validate_kernel(k: Kernel) -> str | None:
    """Check the kernel invariants; return None if valid.

    On failure returns a short report naming the first violated invariant,
    checked in the order: offset dimension, nonnegativity, zero self-weight,
    symmetry, finite support, normalization.
    """
    for v in k.offsets:
        if len(v) != k.d:
            return f"dimension: offset {v} is not in Z^{k.d}"
    wmap = dict(zip(k.offsets, k.weights))
    for v, w in wmap.items():
        if w < 0.0:
            return f"nonnegativity: p({v}) = {w} < 0"
    if wmap.get((0,) * k.d, 0.0) != 0.0:
        return "zero self-weight: p(0) != 0"
    for v, w in wmap.items():
        neg = tuple(-c for c in v)
        if wmap.get(neg, 0.0) != w:
            return f"symmetry: p({v}) = {w} but p({neg}) = {wmap.get(neg, 0.0)}"
    support = [v for v, w in wmap.items() if w != 0.0]
    if not support:
        return "finite support: kernel has empty support"
    total = sum(wmap.values())
    if abs(total - 1.0) > KERNEL_NORM_TOL:
        return f"normalization: sum p = {total!r} != 1"
    return None


# ---------------------------------------------------------------------------
# geometry


@dataclass(frozen=True)
class BoxGeometry:
    """The box Lambda = {-L..L}^d plus a boundary shell of width `shell_width`.

    Interior sites carry a dense index in lexicographic (row-major) order;
    the shell holds every site within sup-distance `shell_width` of the box,
    which covers the kernel neighborhood of each interior site whenever
    shell_width >= kernel.range.
    """

    d: int
    L: int
    shell_width: int = 1

    def __post_init__(self) -> None:
        if self.d < 1:
            raise ValueError("dimension must be >= 1")
        if self.L < 0:
            raise ValueError("L must be >= 0")
        if self.shell_width < 1:
            raise ValueError("shell_width must be >= 1")

    @classmethod
    def for_kernel(cls, d: int, L: int, kernel: Kernel) -> "BoxGeometry":
        return cls(d=d, L=L, shell_width=max(1, kernel.range))

    @property
    def side(self) -> int:
        return 2 * self.L + 1

    @cached_property
    def n_sites(self) -> int:
        return self.side ** self.d

    @cached_property
    def shape(self) -> tuple[int, ...]:
        return (self.side,) * self.d

    @cached_property
    def _strides(self) -> tuple[int, ...]:
        s = []
        acc = 1
        for _ in range(self.d):
            s.append(acc)
            acc *= self.side
        return tuple(reversed(s))

    def contains(self, site: Site) -> bool:
        return all(-self.L <= c <= self.L for c in site)

    def in_shell(self, site: Site) -> bool:
        m = self.L + self.shell_width
        return not self.contains(site) and all(-m <= c <= m for c in site)

    def covers(self, kernel: Kernel) -> bool:
        """True if interior + shell covers every interior kernel neighborhood."""
        return kernel.range <= self.shell_width

    def index_of(self, site: Site) -> int:
        if not self.contains(site):
            raise KeyError(f"site {site} outside the interior box")
        return sum((c + self.L) * s for c, s in zip(site, self._strides))

    def site_of(self, index: int) -> Site:
        if not 0 <= index < self.n_sites:
            raise IndexError(index)
        coords = []
        for s in self._strides:
            coords.append(index // s - self.L)
            index %= s
        return tuple(coords)

    def sites(self) -> Iterator[Site]:
        """Interior sites in index order."""
        r = range(-self.L, self.L + 1)
        return itertools.product(*([r] * self.d))

    def shell_sites(self) -> Iterator[Site]:
        m = self.L + self.shell_width
        r = range(-m, m + 1)
        for site in itertools.product(*([r] * self.d)):
            if not self.contains(site):
                yield site


def add(site: Site, v: Site) -> Site:
    return tuple(a + b for a, b in zip(site, v))


# ---------------------------------------------------------------------------
# fields


class HeightField:
    """Real heights on the interior sites; zero outside (the fixed boundary
    condition of the model)."""

    __slots__ = ("geometry", "values")

    def __init__(self, geometry: BoxGeometry, values: np.ndarray):
        values = np.asarray(values, dtype=float)
        if values.shape != (geometry.n_sites,):
            raise ValueError(f"expected {geometry.n_sites} values, got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("heights must be finite")
        self.geometry = geometry
        self.values = values

    @classmethod
    def zeros(cls, geometry: BoxGeometry) -> "HeightField":
        return cls(geometry, np.zeros(geometry.n_sites))

    @classmethod
    def from_mapping(cls, geometry: BoxGeometry, mapping: dict[Site, float]) -> "HeightField":
        vals = np.zeros(geometry.n_sites)
        for site, v in mapping.items():
            vals[geometry.index_of(site)] = v
        return cls(geometry, vals)

    def height_at(self, site: Site) -> float:
        """Height at any site; sites outside the box return the boundary value 0."""
        if self.geometry.contains(site):
            return float(self.values[self.geometry.index_of(site)])
        return 0.0

    def __getitem__(self, site: Site) -> float:
        return float(self.values[self.geometry.index_of(site)])


class DisorderField(HeightField):
    """A frozen realization of the i.i.d. external field."""

    __slots__ = ("spec",)

    def __init__(self, geometry: BoxGeometry, values: np.ndarray, spec: "DisorderSpec"):
        super().__init__(geometry, values)
        self.spec = spec


@dataclass(frozen=True)
class DisorderSpec:
    """Distribution family, second moment and stream identity of the disorder.

    Supported families are all symmetric about 0 with second moment eta2:
    ``gaussian``, ``rademacher`` (values +-sqrt(eta2)) and ``uniform``
    (uniform on [-sqrt(3 eta2), sqrt(3 eta2)]).
    """

    family: str
    eta2: float = 1.0
    seed: int = 0
    realization: int = 0

    def __post_init__(self) -> None:
        if self.eta2 <= 0.0:
            raise ValueError("eta2 must be > 0")
        if self.family not in ("gaussian", "rademacher", "uniform"):
            raise ValueError(f"unknown disorder family {self.family!r}")

    def with_realization(self, realization: int) -> "DisorderSpec":
        return DisorderSpec(self.family, self.eta2, self.seed, realization)


#: spawn-key tags for the splittable seed streams (see cli module docs)
STREAM_DISORDER = 0
STREAM_CHAIN = 1


def disorder_stream(seed: int, realization: int) -> np.random.Generator:
    """Independent generator for one disorder realization.

    Streams are split off a master seed with a counter-style spawn key
    (STREAM_DISORDER, realization), so realizations may be generated in any
    order, or concurrently, with bit-identical results.
    """
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(STREAM_DISORDER, realization))
    return np.random.default_rng(ss)


def chain_stream(seed: int, chain: int) -> np.random.Generator:
    """Independent generator for one Markov chain, split like disorder_stream."""
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(STREAM_CHAIN, chain))
    return np.random.default_rng(ss)


def sample_disorder(spec: DisorderSpec, g: BoxGeometry) -> DisorderField:
    """Draw the i.i.d. field on the interior of g.

    Deterministic given (seed, realization): values are filled in site index
    order from the realization's own stream.
    """
    rng = disorder_stream(spec.seed, spec.realization)
    n = g.n_sites
    scale = np.sqrt(spec.eta2)
    if spec.family == "gaussian":
        vals = rng.normal(0.0, scale, size=n)
    elif spec.family == "rademacher":
        vals = scale * (2.0 * rng.integers(0, 2, size=n) - 1.0)
    else:  # uniform, variance (2a)^2 / 12 = eta2
        a = np.sqrt(3.0 * spec.eta2)
        vals = rng.uniform(-a, a, size=n)
    return DisorderField(g, vals, spec)


class VectorField:
    """Antisymmetric edge values w(i, j) = -w(j, i) on kernel edges.

    Values are stored once per edge under the canonical orientation
    (lexicographically smaller endpoint first); accessors apply the sign.
    """

    __slots__ = ("geometry", "_values")

    def __init__(self, geometry: BoxGeometry):
        self.geometry = geometry
        self._values: dict[Edge, float] = {}

    def set(self, i: Site, j: Site, value: float) -> None:
        key, sign = canonical_edge(i, j)
        self._values[key] = sign * value

    def get(self, i: Site, j: Site) -> float:
        key, sign = canonical_edge(i, j)
        return sign * self._values[key]

    def has_edge(self, i: Site, j: Site) -> bool:
        key, _ = canonical_edge(i, j)
        return key in self._values

    def edges(self) -> list[Edge]:
        return list(self._values.keys())

    def items(self) -> Iterator[tuple[Edge, float]]:
        return iter(self._values.items())

    def __len__(self) -> int:
        return len(self._values)

    def copy(self) -> "VectorField":
        out = VectorField(self.geometry)
        out._values = dict(self._values)
        return out


# ---------------------------------------------------------------------------
# potentials


@dataclass(frozen=True)
class Potential:
    """Even pair potential V(t) = a t^2/2 + b t^4 with superlinear growth.

    family "quadratic" has b = 0; "quartic" allows b > 0 (or b = 0 with
    a > 0, which degenerates to the quadratic case).
    """

    family: str
    a: float
    b: float = 0.0

    def __post_init__(self) -> None:
        if self.family == "quadratic":
            if self.b != 0.0:
                raise ValueError("quadratic potential has no quartic term")
            if self.a <= 0.0:
                raise ValueError("quadratic coefficient must be > 0")
        elif self.family == "quartic":
            if self.b < 0.0 or (self.b == 0.0 and self.a <= 0.0):
                raise ValueError("quartic potential requires b > 0, or b = 0 with a > 0")
        else:
            raise ValueError(f"unknown potential family {self.family!r}")

    @classmethod
    def quadratic(cls, c: float = 1.0) -> "Potential":
        return cls("quadratic", a=c)

    @classmethod
    def quartic(cls, a: float, b: float) -> "Potential":
        return cls("quartic", a=a, b=b)

    def value(self, t):
        t = np.asarray(t, dtype=float)
        t2 = t * t
        out = 0.5 * self.a * t2 + self.b * t2 * t2
        return out if out.ndim else float(out)

    def derivative(self, t):
        t = np.asarray(t, dtype=float)
        out = self.a * t + 4.0 * self.b * t * t * t
        return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# operations


def gradient_of(g: BoxGeometry, k: Kernel, phi: HeightField) -> VectorField:
    """Edge differences phi_i - phi_j on every kernel edge touching the box.

    Heights outside the box are the boundary value 0, so boundary-crossing
    edges carry the interior height itself (up to orientation).
    """
    out = VectorField(g)
    for i in g.sites():
        hi = phi.height_at(i)
        for v, _ in k.support():
            j = add(i, v)
            if g.contains(j) and j < i:
                continue  # already stored from the other endpoint
            out.set(i, j, hi - phi.height_at(j))
    return out


def loop_residuals(g: BoxGeometry, w: VectorField) -> float:
    """Maximum absolute circulation of w around interior unit plaquettes.

    A vector field is a gradient field exactly when every such circulation
    vanishes.  Requires d >= 2 and w defined on the nearest-neighbor edges
    of the interior.
    """
    if g.d < 2:
        raise ValueError("no plaquettes in dimension < 2")
    worst = 0.0
    for i in g.sites():
        for a in range(g.d):
            ea = tuple(1 if t == a else 0 for t in range(g.d))
            ia = add(i, ea)
            if not g.contains(ia):
                continue
            for b in range(a + 1, g.d):
                eb = tuple(1 if t == b else 0 for t in range(g.d))
                ib = add(i, eb)
                iab = add(ia, eb)
                if not (g.contains(ib) and g.contains(iab)):
                    continue
                circ = (w.get(i, ia) + w.get(ia, iab)
                        + w.get(iab, ib) + w.get(ib, i))
                worst = max(worst, abs(circ))
    return worst


def boundary_edges(g: BoxGeometry, k: Kernel) -> list[tuple[Site, Site, float]]:
    """Kernel edges with one endpoint inside and one outside the box.

    Each edge appears once, oriented with the interior endpoint first, as
    (i, j, p(j - i)).
    """
    out = []
    for i in g.sites():
        for v, w in k.support():
            j = add(i, v)
            if not g.contains(j):
                out.append((i, j, w))
    return out


def kernel_edges(g: BoxGeometry, k: Kernel) -> list[Edge]:
    """Every kernel edge touching the box, once each in canonical orientation."""
    out = []
    for i in g.sites():
        for v, _ in k.support():
            j = add(i, v)
            if g.contains(j) and j < i:
                continue
            key, _ = canonical_edge(i, j)
            out.append(key)
    return out


def _pad_heights(g: BoxGeometry, phi: HeightField) -> np.ndarray:
    """Heights embedded in the shell-padded array, zero outside the box."""
    m = g.shell_width
    full = np.zeros((g.side + 2 * m,) * g.d)
    core = tuple(slice(m, m + g.side) for _ in range(g.d))
    full[core] = phi.values.reshape(g.shape)
    return full


def _shifted(g: BoxGeometry, padded: np.ndarray, v: Site) -> np.ndarray:
    m = g.shell_width
    sl = tuple(slice(m + c, m + c + g.side) for c in v)
    return padded[sl]


def energy_terms(g: BoxGeometry, k: Kernel, vpot: Potential,
                 phi: HeightField, eta: HeightField) -> tuple[float, float, float]:
    """The three energy contributions (interior pair, boundary pair, field).

    interior = 1/2 sum_{i,j in Lambda} p(i-j) V(phi_i - phi_j)
    boundary = sum_{i in Lambda, j outside} p(i-j) V(phi_i)
    field    = -sum_i eta_i phi_i
    """
    if not g.covers(k):
        raise ValueError("geometry shell does not cover the kernel range")
    core = phi.values.reshape(g.shape)
    padded = _pad_heights(g, phi)
    inside = _pad_heights(g, HeightField(g, np.ones(g.n_sites)))
    interior = 0.0
    boundary = 0.0
    for v, w in k.support():
        diff = core - _shifted(g, padded, v)
        vmat = np.asarray(vpot.value(diff))
        mask = _shifted(g, inside, v)  # 1 where the neighbor is interior
        interior += w * float(np.sum(0.5 * vmat * mask))
        boundary += w * float(np.sum(vmat * (1.0 - mask)))
    field = -float(np.dot(eta.values, phi.values))
    return interior, boundary, field


def energy(g: BoxGeometry, k: Kernel, vpot: Potential,
           phi: HeightField, eta: HeightField) -> float:
    """Finite-volume energy with the zero boundary condition."""
    interior, bnd, field = energy_terms(g, k, vpot, phi, eta)
    return interior + bnd + field
