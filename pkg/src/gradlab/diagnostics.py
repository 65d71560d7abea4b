"""Measurable statements about the model: residuals, sums, scans and fits.

Everything here reduces a structural identity or a scaling law to numbers
with explicit uncertainties:

* divergence residuals eta_i - sum_j p(j-i) X_ij and their volume/surface
  (Stokes) bookkeeping;
* per-side boundary averages whose disorder mean vanishes;
* the variance of the volume-averaged field across realizations (which
  does not concentrate);
* the growth of the central-edge variance with box size (log-divergent in
  d=2, bounded in d=3);
* the decay of the edge-mean covariance with separation in d=3.

Scans return plain (control, value, uncertainty) rows; ``fit`` provides the
log-linear and power-law least squares used to summarize them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Mapping, NamedTuple

import numpy as np
from scipy.sparse.linalg import splu

from . import gaussian
from .model import (BoxGeometry, DisorderField, DisorderSpec, Edge, Kernel,
                    Site, VectorField, add, boundary_edges, sample_disorder)


@dataclass(frozen=True)
class ScanResult:
    """Rows of (control parameter, observable, uncertainty), sorted by control."""

    rows: tuple[tuple[float, float, float], ...]
    metadata: Mapping[str, Any]

    def __post_init__(self) -> None:
        controls = [r[0] for r in self.rows]
        if controls != sorted(controls):
            raise ValueError("rows must be sorted by control parameter")
        if any(r[2] < 0.0 for r in self.rows):
            raise ValueError("uncertainties must be >= 0")

    def controls(self) -> np.ndarray:
        return np.array([r[0] for r in self.rows])

    def values(self) -> np.ndarray:
        return np.array([r[1] for r in self.rows])

    def errors(self) -> np.ndarray:
        return np.array([r[2] for r in self.rows])


@dataclass(frozen=True)
class FitResult:
    model: str
    coefficients: tuple[float, ...]
    r_squared: float
    residuals: tuple[float, ...]

    def __post_init__(self) -> None:
        if not -1e-12 <= self.r_squared <= 1.0 + 1e-12:
            raise ValueError("R^2 must lie in [0, 1]")


class IntegralFormCheck(NamedTuple):
    volume_sum: float
    surface_sum: float
    difference: float


class SecondMomentCheck(NamedTuple):
    lhs: float
    rhs: float
    relative_difference: float


class DecayScan(NamedTuple):
    covariance: ScanResult
    compensated: ScanResult  # value = r * C


# ---------------------------------------------------------------------------
# divergence bookkeeping


def divergence_residual(X: VectorField, eta: DisorderField, g: BoxGeometry,
                        k: Kernel) -> tuple[np.ndarray, float]:
    """Per-site residuals r_i = eta_i - sum_j p(j-i) X_ij and their max |.|.

    X must carry every kernel edge with an interior endpoint; a missing
    edge raises KeyError.
    """
    residuals = np.zeros(g.n_sites)
    support = k.support()
    for idx, i in enumerate(g.sites()):
        flux = 0.0
        for v, w in support:
            flux += w * X.get(i, add(i, v))
        residuals[idx] = eta.values[idx] - flux
    return residuals, float(np.max(np.abs(residuals))) if g.n_sites else 0.0


def integral_form_check(X: VectorField, eta: DisorderField, g: BoxGeometry,
                        k: Kernel) -> IntegralFormCheck:
    """Volume sum of eta versus the weighted boundary-edge sum of X.

    Interior edges cancel pairwise by antisymmetry, so the difference of the
    two sums telescopes to the sum of the per-site divergence residuals.
    """
    volume = float(np.sum(eta.values))
    surface = 0.0
    for i, j, w in boundary_edges(g, k):
        surface += w * X.get(i, j)
    return IntegralFormCheck(volume, surface, volume - surface)


def boundary_ergodic_average(X: VectorField, g: BoxGeometry, k: Kernel,
                             side: int) -> float:
    """Normalized boundary sum (1/L) sum p(i-j) X_ij over one side of the square.

    Sides 1..4 are the faces crossed in the +e1, +e2, -e1, -e2 directions;
    edges are assigned to the dominant component of their jump (ties to the
    lower axis), which partitions the boundary edges exactly.  d = 2 only.
    """
    if g.d != 2:
        raise ValueError("boundary sides are defined for d = 2 only")
    if side not in (1, 2, 3, 4):
        raise ValueError("side must be in {1, 2, 3, 4}")
    if g.L < 1:
        raise ValueError("L must be >= 1")
    total = 0.0
    for i, j, w in boundary_edges(g, k):
        delta = tuple(b - a for a, b in zip(i, j))
        axis = 0 if abs(delta[0]) >= abs(delta[1]) else 1
        edge_side = (1 + axis) if delta[axis] > 0 else (3 + axis)
        if edge_side == side:
            total += w * X.get(i, j)
    return total / g.L


# ---------------------------------------------------------------------------
# disorder statistics


def _jackknife_variance_err(samples: np.ndarray) -> float:
    """Delete-one jackknife standard error of the sample variance."""
    n = len(samples)
    if n < 3:
        return 0.0
    total = samples.sum()
    total_sq = (samples ** 2).sum()
    leave_mean = (total - samples) / (n - 1)
    leave_var = (total_sq - samples ** 2 - (n - 1) * leave_mean ** 2) / (n - 2)
    return float(np.sqrt((n - 1) / n * np.sum((leave_var - leave_var.mean()) ** 2)))


def clt_scan(L_list: list[int], n_realizations: int,
             spec: DisorderSpec) -> ScanResult:
    """Sample variance of (1/L) sum_Lambda eta across realizations, per L.

    For i.i.d. disorder the population value is eta2 (2L+1)^d / L^2, which
    stays above 4 eta2 in d = 2: the volume average scales to a genuine
    Gaussian limit rather than concentrating.
    """
    if n_realizations < 100:
        raise ValueError("need at least 100 realizations")
    rows = []
    for L in sorted(L_list):
        g = BoxGeometry(d=2, L=L)
        stats = np.empty(n_realizations)
        for r in range(n_realizations):
            eta = sample_disorder(spec.with_realization(spec.realization + r), g)
            stats[r] = eta.values.sum() / L
        rows.append((float(L), float(stats.var(ddof=1)),
                     _jackknife_variance_err(stats)))
    return ScanResult(tuple(rows), {
        "observable": "variance of (1/L) sum eta",
        "n_realizations": n_realizations,
        "family": spec.family, "eta2": spec.eta2, "seed": spec.seed,
    })


def clt_population_value(L: int, d: int, eta2: float) -> float:
    """Exact variance of (1/L) sum_Lambda eta for i.i.d. disorder."""
    return eta2 * (2 * L + 1) ** d / L ** 2


# ---------------------------------------------------------------------------
# Gaussian-model scans


def central_edge(d: int) -> Edge:
    origin = (0,) * d
    return (origin, (1,) + (0,) * (d - 1))


def variance_scaling_scan(d: int, L_list: list[int], eta2: float,
                          kernel: Kernel | None = None,
                          cfg: gaussian.SolverConfig = gaussian.DEFAULT_SOLVER
                          ) -> ScanResult:
    """Variance of the central-edge mean gradient versus box size.

    The reported uncertainty is the solver tolerance times the value (the
    quantity is deterministic given the box).
    """
    k = kernel if kernel is not None else Kernel.nearest_neighbor(d)
    edge = central_edge(d)
    rows = []
    for L in sorted(L_list):
        if L < 1:
            raise ValueError("L must be >= 1 for the scaling scan")
        g = BoxGeometry.for_kernel(d, L, k)
        A = gaussian.DirichletLaplacian(g, k)
        v = gaussian.variance(A, edge, eta2, cfg)
        rows.append((float(L), v, cfg.rel_tolerance * abs(v)))
    return ScanResult(tuple(rows), {
        "observable": "central edge variance", "d": d, "eta2": eta2,
        "kernel": "nearest-neighbor" if kernel is None else "custom",
        "rel_tolerance": cfg.rel_tolerance,
    })


def decay_scan_d3(L: int, r_list: list[int], eta2: float,
                  cfg: gaussian.SolverConfig = gaussian.DEFAULT_SOLVER
                  ) -> DecayScan:
    """Covariance of the edge mean between edges separated by r in d = 3.

    The pair sits symmetrically about the center: base sites at -(r/2) e1
    and +(r/2) e1, both edges oriented along e2, transverse to the
    separation axis.  (For co-oriented edges the transverse arrangement is
    the one that carries the slow 1/r decay; edges oriented along the
    separation axis see only the much smaller curvature of the site-pair
    overlap kernel, which changes sign at finite volume.)  Separations are
    limited to r <= L/2 to keep the boundary distortion subdominant.

    Green columns are shared across separations, two per distinct site.
    """
    if max(r_list) > L // 2:
        raise ValueError("separations must satisfy r <= L/2")
    if min(r_list) < 0:
        raise ValueError("separations must be >= 0")
    if any(r % 2 for r in r_list):
        raise ValueError("separations must be even (edges straddle the center)")
    k = Kernel.nearest_neighbor(3)
    g = BoxGeometry.for_kernel(3, L, k)
    A = gaussian.DirichletLaplacian(g, k)
    columns: dict[Site, np.ndarray] = {}

    def response(base: Site) -> np.ndarray:
        tip = (base[0], base[1] + 1, base[2])
        for s in (base, tip):
            if s not in columns:
                columns[s] = gaussian.green_column(A, s, cfg)
        return columns[base] - columns[tip]

    rows = []
    comp = []
    for r in sorted(r_list):
        g0 = response((-(r // 2), 0, 0))
        g1 = g0 if r == 0 else response((r // 2, 0, 0))
        c = eta2 * float(np.dot(g0, g1))
        err = cfg.rel_tolerance * abs(c)
        rows.append((float(r), c, err))
        comp.append((float(r), r * c, r * err))
    meta = {"observable": "edge-mean covariance", "L": L, "eta2": eta2,
            "orientation": "transverse", "rel_tolerance": cfg.rel_tolerance}
    return DecayScan(ScanResult(tuple(rows), meta),
                     ScanResult(tuple(comp), {**meta, "compensated": True}))


def second_moment_identity(g: BoxGeometry, k: Kernel,
                           eta2: float) -> SecondMomentCheck:
    """eta2 |Lambda| versus the double boundary sum of the edge covariance.

    The right-hand side is the literal double sum over boundary-edge pairs
    (a, b) of p_a p_b C(a, b), evaluated from one Green column per distinct
    boundary-adjacent interior site (the exterior endpoints contribute
    nothing).  Columns come from a direct sparse factorization; the tests
    pin individual entries against the iterative-solver covariance op.
    """
    edges = boundary_edges(g, k)
    lhs = eta2 * g.n_sites
    sites = sorted({i for i, _, _ in edges})
    site_row = {s: r for r, s in enumerate(sites)}

    A = gaussian.DirichletLaplacian(g, k)
    lu = splu(gaussian.sparse_operator(A).tocsc())
    rhs_cols = np.zeros((g.n_sites, len(sites)))
    for s, r in site_row.items():
        rhs_cols[g.index_of(s), r] = 1.0
    cols = lu.solve(rhs_cols)  # n_sites x n_distinct

    weights = np.array([w for _, _, w in edges])
    rows = np.array([site_row[i] for i, _, _ in edges])
    # response matrix of all boundary edges (exterior endpoint has G = 0)
    resp = cols[:, rows]  # n_sites x n_edges
    gram = resp.T @ resp
    rhs = eta2 * float(weights @ gram @ weights)
    denom = max(abs(lhs), abs(rhs))
    return SecondMomentCheck(lhs, rhs, abs(lhs - rhs) / denom if denom else 0.0)


# ---------------------------------------------------------------------------
# least-squares summaries


def fit(model: str, scan: ScanResult) -> FitResult:
    """Ordinary least squares in transformed coordinates.

    "log-linear": y = a + b log2(L), fit in (log2 L, y); coefficients (a, b).
    "power-law":  y = c r^-q, fit as log y = log c - q log r; coefficients
    (c, q).  R^2 and residuals are reported in the fitted coordinates.
    """
    if len(scan.rows) < 3:
        raise ValueError("need at least 3 rows to fit")
    x = scan.controls()
    y = scan.values()
    if model == "log-linear":
        if np.any(x <= 0.0):
            raise ValueError("log-linear fit requires positive controls")
        t = np.log2(x)
        z = y
    elif model == "power-law":
        if np.any(x <= 0.0) or np.any(y <= 0.0):
            raise ValueError("power-law fit requires positive controls and values")
        t = np.log(x)
        z = np.log(y)
    else:
        raise ValueError(f"unknown fit model {model!r}")
    slope, intercept = np.polyfit(t, z, 1)
    pred = intercept + slope * t
    resid = z - pred
    ss_tot = float(np.sum((z - z.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - float(np.sum(resid ** 2)) / ss_tot
    r2 = min(max(r2, 0.0), 1.0)
    if model == "log-linear":
        coeffs = (float(intercept), float(slope))
    else:
        coeffs = (float(math.exp(intercept)), float(-slope))
    return FitResult(model=model, coefficients=coeffs, r_squared=r2,
                     residuals=tuple(float(r) for r in resid))
