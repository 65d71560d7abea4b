"""Reproducible experiment driver.

Configs are flat UTF-8 ``key=value`` files ('#' starts a comment).  Every
run writes one or more CSV result files plus ``run_manifest.json`` echoing
the config, the package version, wall time and the derived per-task seeds;
re-running the same config with the same version reproduces the CSVs byte
for byte.  Floats are serialized with 17 significant digits.

Seed discipline: a single master ``seed`` is split into independent
streams with counter-style spawn keys, (0, realization) for disorder
fields and (1, chain) for Markov chains, so execution order and thread
count never change results.

Exit codes: 0 success; 1 config error; 2 numerical failure (solver or
quadrature non-convergence); 3 invariant-check failure (an identity above
its tolerance).

Usage::

    gradlab CONFIG [--out DIR] [--threads N] [--seed S]

with environment overrides GRADLAB_OUT, GRADLAB_THREADS, GRADLAB_SEED
(flags win over the environment).
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Any, Callable, NamedTuple

import numpy as np

from . import __version__
from . import diagnostics, gaussian, mcmc, quadrature
from .model import (BoxGeometry, DisorderSpec, Kernel, Potential,
                    STREAM_CHAIN, STREAM_DISORDER, kernel_edges,
                    sample_disorder)

EXPERIMENTS = ("gaussian-exact", "mcmc", "scaling", "decay", "clt",
               "quadrature", "identities")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERICAL = 2
EXIT_INVARIANT = 3


class ConfigError(ValueError):
    """Invalid config text; carries the offending line number (1-based)."""

    def __init__(self, message: str, line: int | None = None):
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)
        self.line = line


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    d: int = 2
    L: int | None = None
    L_list: tuple[int, ...] | None = None
    r_list: tuple[int, ...] | None = None
    R_list: tuple[float, ...] | None = None
    kernel: str = "nn"
    potential: Potential = Potential.quadratic(1.0)
    disorder: str = "gaussian"
    eta2: float = 1.0
    seed: int = 0
    n_realizations: int = 1
    proposal_width: float = 1.0
    burn_in_sweeps: int = 2000
    measure_sweeps: int = 20000
    thin: int = 1
    target_acceptance: float = 0.44
    autotune: bool = True
    rel_tolerance: float = 1e-10
    max_iterations: int | None = None
    quad_abs_tolerance: float = 1e-10
    quad_rel_tolerance: float = 1e-8
    divergence_tolerance: float = 1e-8
    surface_tolerance: float = 1e-8
    second_moment_tolerance: float = 1e-6
    threads: int = 1
    corrupt_field: bool = False  # fault-injection hook for the exit-code tests

    def make_kernel(self) -> Kernel:
        if self.kernel == "nn":
            return Kernel.nearest_neighbor(self.d)
        if self.kernel == "axis2":
            return Kernel.axis_kernel(self.d, 2)
        raise ConfigError(f"unknown kernel {self.kernel!r}")

    def solver(self) -> gaussian.SolverConfig:
        return gaussian.SolverConfig(rel_tolerance=self.rel_tolerance,
                                     max_iterations=self.max_iterations)

    def sampler(self) -> mcmc.SamplerConfig:
        return mcmc.SamplerConfig(
            proposal_width=self.proposal_width,
            burn_in_sweeps=self.burn_in_sweeps,
            measure_sweeps=self.measure_sweeps, thin=self.thin,
            target_acceptance=self.target_acceptance, autotune=self.autotune)

    def quadrature_config(self) -> quadrature.QuadratureConfig:
        return quadrature.QuadratureConfig(
            abs_tolerance=self.quad_abs_tolerance,
            rel_tolerance=self.quad_rel_tolerance)

    def disorder_spec(self, realization: int = 0) -> DisorderSpec:
        return DisorderSpec(self.disorder, self.eta2, self.seed, realization)


def _parse_bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _parse_potential(raw: str) -> Potential:
    parts = raw.split(":")
    if parts[0] == "quadratic" and len(parts) == 2:
        return Potential.quadratic(float(parts[1]))
    if parts[0] == "quartic" and len(parts) == 3:
        return Potential.quartic(float(parts[1]), float(parts[2]))
    raise ValueError(f"potential must be quadratic:C or quartic:A:B, got {raw!r}")


def _int_list(raw: str) -> tuple[int, ...]:
    return tuple(int(p.strip()) for p in raw.split(",") if p.strip())


def _float_list(raw: str) -> tuple[float, ...]:
    return tuple(float(p.strip()) for p in raw.split(",") if p.strip())


_CASTERS: dict[str, Callable[[str], Any]] = {
    "experiment": str,
    "d": int,
    "L": int,
    "L_list": _int_list,
    "r_list": _int_list,
    "R_list": _float_list,
    "kernel": str,
    "potential": _parse_potential,
    "disorder": str,
    "eta2": float,
    "seed": int,
    "n_realizations": int,
    "proposal_width": float,
    "burn_in_sweeps": int,
    "measure_sweeps": int,
    "thin": int,
    "target_acceptance": float,
    "autotune": _parse_bool,
    "rel_tolerance": float,
    "max_iterations": int,
    "quad_abs_tolerance": float,
    "quad_rel_tolerance": float,
    "divergence_tolerance": float,
    "surface_tolerance": float,
    "second_moment_tolerance": float,
    "threads": int,
    "corrupt_field": _parse_bool,
}


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate a flat key=value config; raise ConfigError on the
    first problem, naming its line."""
    values: dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected key=value, got {raw!r}", lineno)
        key, _, val = line.partition("=")
        key = key.strip()
        val = val.strip()
        if key not in _CASTERS:
            raise ConfigError(f"unknown key {key!r}", lineno)
        if key in values:
            raise ConfigError(f"duplicate key {key!r}", lineno)
        try:
            values[key] = _CASTERS[key](val)
        except ConfigError:
            raise
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"bad value for {key}: {exc}", lineno) from exc
    if "experiment" not in values:
        raise ConfigError("missing required key 'experiment'")
    try:
        config = ExperimentConfig(**values)
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc
    _validate(config)
    return config


def _validate(cfg: ExperimentConfig) -> None:
    if cfg.experiment not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {cfg.experiment!r}; "
                          f"choose one of {', '.join(EXPERIMENTS)}")
    if cfg.d < 1:
        raise ConfigError("d must be >= 1")
    if cfg.eta2 <= 0:
        raise ConfigError("eta2 must be > 0")
    if cfg.threads < 1:
        raise ConfigError("threads must be >= 1")
    if cfg.disorder not in ("gaussian", "rademacher", "uniform"):
        raise ConfigError(f"unknown disorder family {cfg.disorder!r}")
    cfg.make_kernel()
    exp = cfg.experiment
    if exp == "quadrature":
        if not cfg.R_list:
            raise ConfigError("quadrature experiment requires R_list")
        if any(r <= 0 for r in cfg.R_list):
            raise ConfigError("R_list entries must be > 0")
    if exp in ("scaling", "clt"):
        ls = cfg.L_list if cfg.L_list else ((cfg.L,) if cfg.L is not None else None)
        if not ls:
            raise ConfigError(f"{exp} experiment requires L or L_list")
        if any(L < 1 for L in ls):
            raise ConfigError(f"L must be >= 1 for {exp}")
    if exp in ("gaussian-exact", "mcmc", "identities", "decay"):
        if cfg.L is None:
            raise ConfigError(f"{exp} experiment requires L")
        if cfg.L < 0:
            raise ConfigError("L must be >= 0")
    if exp == "decay":
        if cfg.d != 3:
            raise ConfigError("decay experiment requires d=3")
        if not cfg.r_list:
            raise ConfigError("decay experiment requires r_list")
    if exp == "gaussian-exact" and cfg.d != 2:
        raise ConfigError("gaussian-exact experiment requires d=2 "
                          "(per-side boundary averages)")
    if exp == "clt" and cfg.n_realizations < 100:
        raise ConfigError("clt experiment requires n_realizations >= 100")
    if exp == "mcmc":
        cfg.sampler()


# ---------------------------------------------------------------------------
# output helpers


def _fmt(x: Any) -> str:
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, float):
        return format(x, ".17g")
    return str(x)


def _site_str(site: tuple[int, ...]) -> str:
    return ":".join(str(c) for c in site)


def _write_csv(path: Path, header: list[str], rows: list[list[Any]]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(x) for x in row])


def _parallel_map(fn: Callable[[Any], Any], items: list[Any], threads: int) -> list[Any]:
    """Apply fn preserving order; results are index-assembled so thread
    scheduling cannot change the output."""
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


class RunResult(NamedTuple):
    exit_code: int
    files: list[Path]
    manifest: dict[str, Any]


# ---------------------------------------------------------------------------
# experiments


def _run_quadrature(cfg: ExperimentConfig, out: Path) -> tuple[list[Path], dict, int]:
    qcfg = cfg.quadrature_config()
    rows = []
    for R in cfg.R_list:
        j = quadrature.j_of_r(R, qcfg)
        rows.append([R, j, abs(j - quadrature.PI2) / quadrature.PI2])
    path = out / "quadrature.csv"
    _write_csv(path, ["R", "J", "rel_dev_pi2"], rows)
    summary = {"j_limit_reference": quadrature.j_limit_reference(qcfg),
               "pi_squared": quadrature.PI2}
    return [path], summary, EXIT_OK


def _run_identities(cfg: ExperimentConfig, out: Path) -> tuple[list[Path], dict, int]:
    k = cfg.make_kernel()
    g = BoxGeometry.for_kernel(cfg.d, cfg.L, k)
    A = gaussian.DirichletLaplacian(g, k)
    solver = cfg.solver()

    surface_dev = gaussian.surface_identity_check(A, solver)
    second = diagnostics.second_moment_identity(g, k, cfg.eta2)
    rows = [
        ["surface_identity_max_deviation", surface_dev, cfg.surface_tolerance,
         surface_dev <= cfg.surface_tolerance],
        ["second_moment_relative_difference", second.relative_difference,
         cfg.second_moment_tolerance,
         second.relative_difference <= cfg.second_moment_tolerance],
    ]
    worst_resid = 0.0
    for r in range(cfg.n_realizations):
        eta = sample_disorder(cfg.disorder_spec(r), g)
        X = gaussian.mean_gradient(A, eta, solver)
        if cfg.corrupt_field and r == 0:
            edge = diagnostics.central_edge(cfg.d)
            X.set(edge[0], edge[1], X.get(edge[0], edge[1]) + 1.0)
        _, mx = diagnostics.divergence_residual(X, eta, g, k)
        worst_resid = max(worst_resid, mx)
    rows.append(["divergence_max_residual", worst_resid,
                 cfg.divergence_tolerance,
                 worst_resid <= cfg.divergence_tolerance])
    path = out / "identities.csv"
    _write_csv(path, ["check", "value", "tolerance", "pass"], rows)
    ok = all(r[3] for r in rows)
    summary = {"checks": {r[0]: r[1] for r in rows}, "all_pass": ok}
    return [path], summary, EXIT_OK if ok else EXIT_INVARIANT


def _run_gaussian_exact(cfg: ExperimentConfig, out: Path) -> tuple[list[Path], dict, int]:
    k = cfg.make_kernel()
    g = BoxGeometry.for_kernel(cfg.d, cfg.L, k)
    A = gaussian.DirichletLaplacian(g, k)
    solver = cfg.solver()

    def one(r: int) -> list[Any]:
        eta = sample_disorder(cfg.disorder_spec(r), g)
        X = gaussian.mean_gradient(A, eta, solver)
        _, mx = diagnostics.divergence_residual(X, eta, g, k)
        sides = [diagnostics.boundary_ergodic_average(X, g, k, s)
                 for s in (1, 2, 3, 4)]
        return [r, mx] + sides

    rows = _parallel_map(one, list(range(cfg.n_realizations)), cfg.threads)
    path = out / "gaussian.csv"
    _write_csv(path, ["realization", "max_divergence_residual",
                      "side_1", "side_2", "side_3", "side_4"], rows)
    sides = np.array([r[2:] for r in rows], dtype=float)
    n = len(rows)
    summary = {
        "side_means": [float(m) for m in sides.mean(axis=0)],
        "side_stderrs": [float(s) for s in sides.std(axis=0, ddof=1) / math.sqrt(n)]
        if n > 1 else [0.0] * 4,
        "max_divergence_residual": max(r[1] for r in rows),
    }
    return [path], summary, EXIT_OK


def _run_mcmc(cfg: ExperimentConfig, out: Path) -> tuple[list[Path], dict, int]:
    k = cfg.make_kernel()
    g = BoxGeometry.for_kernel(cfg.d, cfg.L, k)
    eta = sample_disorder(cfg.disorder_spec(0), g)
    edges = kernel_edges(g, k)
    exact = None
    if cfg.potential.family == "quadratic":
        # X = E[V'(phi')] matches the unit-stiffness response for any c:
        # the measure's mean gradient scales by 1/c and V' by c.
        A = gaussian.DirichletLaplacian(g, k)
        exact = gaussian.mean_gradient(A, eta, cfg.solver())
    est = mcmc.estimate_gradient_mean(g, k, cfg.potential, eta, edges,
                                      cfg.sampler(), seed=cfg.seed)
    header = ["edge_i", "edge_j", "mean", "stderr", "n_eff"]
    if exact is not None:
        header.append("exact")
    rows = []
    covered = 0
    for e in est.edge_list:
        row = [_site_str(e[0]), _site_str(e[1]), est[e].mean, est[e].stderr,
               est[e].n_eff]
        if exact is not None:
            ex = exact.get(*e)
            row.append(ex)
            if abs(est[e].mean - ex) <= 3.0 * est[e].stderr:
                covered += 1
        rows.append(row)
    path = out / "edges.csv"
    _write_csv(path, header, rows)
    resid, se = mcmc.divergence_check(est, eta, g, k)
    ratio = np.abs(resid) / np.where(se > 0, se, np.inf)
    summary = {
        "acceptance_rate": est.acceptance_rate,
        "proposal_width": est.proposal_width,
        "cap_rejects": est.cap_rejects,
        "divergence_within_4se_fraction": float((ratio <= 4.0).mean()),
    }
    if exact is not None:
        summary["fraction_within_3se_of_exact"] = covered / len(est.edge_list)
    return [path], summary, EXIT_OK


def _run_scaling(cfg: ExperimentConfig, out: Path) -> tuple[list[Path], dict, int]:
    ls = list(cfg.L_list if cfg.L_list else (cfg.L,))
    scan = diagnostics.variance_scaling_scan(cfg.d, ls, cfg.eta2,
                                             kernel=cfg.make_kernel(),
                                             cfg=cfg.solver())
    path = out / "scaling.csv"
    _write_csv(path, ["L", "variance", "err"], [list(r) for r in scan.rows])
    summary: dict[str, Any] = {}
    if len(scan.rows) >= 3:
        f = diagnostics.fit("log-linear", scan)
        summary["log_linear_fit"] = {"intercept": f.coefficients[0],
                                     "slope_per_log2": f.coefficients[1],
                                     "r_squared": f.r_squared}
    return [path], summary, EXIT_OK


def _run_decay(cfg: ExperimentConfig, out: Path) -> tuple[list[Path], dict, int]:
    scan = diagnostics.decay_scan_d3(cfg.L, list(cfg.r_list), cfg.eta2,
                                     cfg.solver())
    rows = [[r, c, rc] for (r, c, _), (_, rc, _)
            in zip(scan.covariance.rows, scan.compensated.rows)]
    path = out / "decay.csv"
    _write_csv(path, ["r", "covariance", "r_times_covariance"], rows)
    summary: dict[str, Any] = {}
    positive = [r for r in scan.covariance.rows if r[0] > 0]
    if len(positive) >= 3:
        f = diagnostics.fit("power-law",
                            diagnostics.ScanResult(tuple(positive), {}))
        summary["power_law_fit"] = {"amplitude": f.coefficients[0],
                                    "exponent": f.coefficients[1],
                                    "r_squared": f.r_squared}
    return [path], summary, EXIT_OK


def _run_clt(cfg: ExperimentConfig, out: Path) -> tuple[list[Path], dict, int]:
    ls = list(cfg.L_list if cfg.L_list else (cfg.L,))
    scan = diagnostics.clt_scan(ls, cfg.n_realizations, cfg.disorder_spec(0))
    rows = [[L, v, e, diagnostics.clt_population_value(int(L), 2, cfg.eta2)]
            for L, v, e in scan.rows]
    path = out / "clt.csv"
    _write_csv(path, ["L", "variance", "jackknife_err", "analytic"], rows)
    worst = max(abs(v - a) / a for _, v, _, a in rows)
    return [path], {"max_relative_deviation": worst}, EXIT_OK


_RUNNERS = {
    "quadrature": _run_quadrature,
    "identities": _run_identities,
    "gaussian-exact": _run_gaussian_exact,
    "mcmc": _run_mcmc,
    "scaling": _run_scaling,
    "decay": _run_decay,
    "clt": _run_clt,
}


def _task_seeds(cfg: ExperimentConfig) -> dict[str, Any]:
    n = cfg.n_realizations if cfg.experiment in ("gaussian-exact", "identities") \
        else (cfg.n_realizations if cfg.experiment == "clt" else 1)
    return {
        "master": cfg.seed,
        "disorder_spawn_keys": [[STREAM_DISORDER, r] for r in range(n)],
        "chain_spawn_keys": [[STREAM_CHAIN, 0]] if cfg.experiment == "mcmc" else [],
    }


def _config_echo(cfg: ExperimentConfig) -> dict[str, Any]:
    echo: dict[str, Any] = {}
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, Potential):
            v = f"{v.family}:{v.a}" + (f":{v.b}" if v.family == "quartic" else "")
        elif isinstance(v, tuple):
            v = list(v)
        echo[f.name] = v
    return echo


def run(cfg: ExperimentConfig, out_dir: str | Path = ".") -> RunResult:
    """Execute the experiment, writing CSVs and a JSON manifest into out_dir."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    status = "ok"
    files: list[Path] = []
    summary: dict[str, Any] = {}
    try:
        files, summary, code = _RUNNERS[cfg.experiment](cfg, out)
        if code == EXIT_INVARIANT:
            status = "invariant-failure"
    except (gaussian.SolverError, quadrature.QuadratureError) as exc:
        status = "numerical-failure"
        summary = {"error": str(exc)}
        code = EXIT_NUMERICAL
    manifest = {
        "experiment": cfg.experiment,
        "version": __version__,
        "status": status,
        "partial_outputs": status != "ok",
        "wall_time_s": time.perf_counter() - t0,
        "seeds": _task_seeds(cfg),
        "config": _config_echo(cfg),
        "summaries": summary,
        "outputs": [f.name for f in files],
    }
    manifest_path = out / "run_manifest.json"
    with open(manifest_path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    files.append(manifest_path)
    return RunResult(code, files, manifest)


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="gradlab",
        description="Run a gradient-interface experiment from a config file.")
    parser.add_argument("config", help="path to a key=value config file")
    parser.add_argument("--out", default=None, help="output directory")
    parser.add_argument("--threads", type=int, default=None)
    parser.add_argument("--seed", type=int, default=None)
    args = parser.parse_args(argv)

    out = args.out or os.environ.get("GRADLAB_OUT") or "."
    threads = args.threads if args.threads is not None else \
        int(os.environ.get("GRADLAB_THREADS", "0")) or None
    seed = args.seed if args.seed is not None else \
        (int(os.environ["GRADLAB_SEED"]) if "GRADLAB_SEED" in os.environ else None)

    try:
        text = Path(args.config).read_text(encoding="utf-8")
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = parse_config(text)
        if threads is not None:
            cfg = replace(cfg, threads=threads)
        if seed is not None:
            cfg = replace(cfg, seed=seed)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    result = run(cfg, out)
    for f in result.files:
        print(f)
    if result.exit_code != EXIT_OK:
        print(f"status: {result.manifest['status']}", file=sys.stderr)
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())
