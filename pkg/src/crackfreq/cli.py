"""Command line driver: config ingestion, pipelines, artifacts and manifests.

Configs are JSON objects; unknown keys are rejected.  Every run writes into
a temporary sibling directory that is renamed into place only when all
stages finish, so a failed run leaves no partial artifacts.
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import math
import os
import shutil
import sys
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .errors import ConfigError, CrackFreqError, ScenarioMismatch

SCENARIOS = ("exact_harmonic", "exact_bessel", "fem_constant_potential", "fem_radial_potential", "sphere_spectrum")

DEFAULT_TOLERANCES = {
    "gamma_exact": 1e-6,
    "gamma_fem": 0.05,
    "n_constant": 1e-10,
    "h_ratio": 1e-6,
    "doubling": 1e-8,
    "monotone_slack": 1e-3,
    "alpha_spread_exact": 1e-8,
    "alpha_spread": 0.05,
    "alpha_series": 0.02,
    "parseval": 0.01,
    "spectrum": 0.03,
    "blowup_slope": 1.8,
    "blowup_fem_floor": 0.06,
    "fem_l2": 0.015,
}


@dataclass(frozen=True)
class MeshConfig:
    radius: float = 1.0
    base_resolution: int = 64
    levels: int = 8
    grading_ratio: float = 0.5
    sphere_resolution: int = 64
    sphere_tip_levels: int = 4


@dataclass(frozen=True)
class PotentialConfig:
    c: float = 1.0
    radial_epsilon: float = 0.75
    hypothesis_class: str = "H1"


@dataclass(frozen=True)
class ScheduleConfig:
    r_min_fraction: float = 0.05
    r_max_fraction: float = 0.8
    n_radii: int = 16
    lambda_start: float = 0.5
    lambda_ratio: float = 0.5
    n_lambdas: int = 6
    alpha_radii: tuple = (0.1, 0.2, 0.4)


@dataclass(frozen=True)
class RunConfig:
    scenario: str
    k: int = 1
    amplitude: float = 1.0
    epsilon: float = 1.0
    potential: PotentialConfig = field(default_factory=PotentialConfig)
    mesh: MeshConfig = field(default_factory=MeshConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    output_dir: str = "run_output"
    eigen_count: int = 12
    tolerances: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}; expected one of {SCENARIOS}")
        if self.k < 0:
            raise ConfigError("k must be >= 0")
        if not self.amplitude != 0:
            raise ConfigError("amplitude must be nonzero")
        if not 0 < self.epsilon <= 1:
            raise ConfigError("epsilon must lie in (0, 1]")
        if not 0 < self.potential.radial_epsilon <= 1:
            raise ConfigError("radial_epsilon must lie in (0, 1]")
        if self.potential.hypothesis_class not in ("H1", "H2"):
            raise ConfigError("hypothesis_class must be H1 or H2")
        if self.scenario == "exact_bessel" and not self.potential.c > 0:
            raise ConfigError("exact_bessel needs c > 0 (the eigenvalue)")
        if not 0 < self.mesh.radius <= 1:
            raise ConfigError("frequency runs need 0 < R <= 1")
        s = self.schedule
        if not 0 < s.r_min_fraction < s.r_max_fraction < 1:
            raise ConfigError("need 0 < r_min_fraction < r_max_fraction < 1")
        if s.n_radii < 10:
            raise ConfigError("n_radii must be >= 10 (monotonicity audit)")
        if s.n_lambdas < 6 or not 0 < s.lambda_ratio < 1 or not 0 < s.lambda_start < self.mesh.radius:
            raise ConfigError("need >= 6 lambdas, ratio in (0, 1), start inside the domain")
        if not 1 <= self.eigen_count <= 12:
            raise ConfigError("eigen_count must be in 1..12")
        unknown = set(self.tolerances) - set(DEFAULT_TOLERANCES)
        if unknown:
            raise ConfigError(f"unknown tolerance keys: {sorted(unknown)}")

    def tol(self, name: str) -> float:
        return float(self.tolerances.get(name, DEFAULT_TOLERANCES[name]))

    @property
    def radii(self) -> np.ndarray:
        s, R = self.schedule, self.mesh.radius
        return np.geomspace(s.r_min_fraction * R, s.r_max_fraction * R, s.n_radii)

    @property
    def lambdas(self) -> np.ndarray:
        s = self.schedule
        return s.lambda_start * s.lambda_ratio ** np.arange(s.n_lambdas)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["schedule"]["alpha_radii"] = list(self.schedule.alpha_radii)
        return d


def _build(cls, data, where):
    if not isinstance(data, dict):
        raise ConfigError(f"{where} must be an object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")
    return data


def config_from_dict(data: dict) -> RunConfig:
    data = dict(_build(RunConfig, data, "config"))
    if "scenario" not in data:
        raise ConfigError("config needs a scenario")
    try:
        if "potential" in data:
            data["potential"] = PotentialConfig(**_build(PotentialConfig, data["potential"], "potential"))
        if "mesh" in data:
            data["mesh"] = MeshConfig(**_build(MeshConfig, data["mesh"], "mesh"))
        if "schedule" in data:
            sch = dict(_build(ScheduleConfig, data["schedule"], "schedule"))
            if "alpha_radii" in sch:
                sch["alpha_radii"] = tuple(float(r) for r in sch["alpha_radii"])
            data["schedule"] = ScheduleConfig(**sch)
        if "tolerances" in data and not isinstance(data["tolerances"], dict):
            raise ConfigError("tolerances must be an object")
        cfg = RunConfig(**data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    _check_types(cfg)
    return cfg


def _check_types(cfg: RunConfig):
    for obj in (cfg, cfg.potential, cfg.mesh, cfg.schedule):
        for f in dataclasses.fields(obj):
            v = getattr(obj, f.name)
            if f.type in ("int",) and (not isinstance(v, int) or isinstance(v, bool)):
                raise ConfigError(f"{f.name} must be an integer")
            if f.type in ("float",) and (not isinstance(v, (int, float)) or isinstance(v, bool) or not math.isfinite(v)):
                raise ConfigError(f"{f.name} must be a finite number")


def load_config(path) -> RunConfig:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return config_from_dict(data)


def config_hash(cfg: RunConfig) -> str:
    blob = json.dumps(cfg.to_dict(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def _workers() -> int:
    raw = os.environ.get("CRACKFREQ_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError as exc:
        raise ConfigError(f"CRACKFREQ_THREADS must be an integer, got {raw!r}") from exc


# -- pipelines -----------------------------------------------------------

class _Run:
    """Collects timings, checks and files for one pipeline execution."""

    def __init__(self, cfg: RunConfig, out: Path):
        self.cfg = cfg
        self.out = out
        self.timings = {}
        self.checks = {}
        self.files = []

    def stage(self, name):
        run = self

        class _Timer:
            def __enter__(self):
                self.t = time.perf_counter()

            def __exit__(self, *exc):
                run.timings[name] = time.perf_counter() - self.t
                if exc[0] is not None:
                    exc[1].stage = name
                return False

        return _Timer()

    def check(self, name, value, passed, tolerance=None):
        self.checks[name] = {"value": _jsonable(value), "pass": bool(passed), "tolerance": tolerance}

    def write(self, name, text):
        p = self.out / name
        p.write_text(text)
        self.files.append(p)


def _jsonable(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    return v


def _source_and_potential(cfg: RunConfig):
    from .exact import BesselMode, CrackHarmonic
    from .fem import ZERO, Potential

    c = cfg.potential.c
    if cfg.scenario == "exact_harmonic":
        return CrackHarmonic(cfg.k, cfg.amplitude), ZERO
    if cfg.scenario == "exact_bessel":
        return BesselMode(cfg.k, c, cfg.amplitude), Potential("constant", c, cfg.epsilon)
    if cfg.scenario == "fem_constant_potential":
        f = Potential("constant", c, cfg.epsilon, hypothesis_class=cfg.potential.hypothesis_class)
        ref = BesselMode(cfg.k, c, cfg.amplitude) if c > 0 else CrackHarmonic(cfg.k, cfg.amplitude)
        return ref, f
    f = Potential("radial_power", c, cfg.potential.radial_epsilon, hypothesis_class=cfg.potential.hypothesis_class)
    return CrackHarmonic(cfg.k, cfg.amplitude), f


def _bessel_alpha(cfg: RunConfig) -> float:
    """Leading tip coefficient of ``a J_{k/2}(sqrt(c) r) cos(k t/2)`` from the power series."""
    nu = cfg.k / 2
    lead = (math.sqrt(cfg.potential.c) / 2) ** nu / math.gamma(nu + 1)
    norm = math.sqrt(2 * math.pi) if cfg.k == 0 else math.sqrt(math.pi)
    return cfg.amplitude * lead * norm


def _frequency_stage(run: _Run, source, f, trace):
    from .frequency import audit_H_growth, audit_monotonicity, doubling_ratios, estimate_gamma, height, monotonicity_drift

    cfg = run.cfg
    exact = cfg.scenario.startswith("exact")
    C, violations = audit_monotonicity(trace, cfg.tol("monotone_slack"))
    gamma, k0 = estimate_gamma(trace)
    # theory pins the limit exponent to k0/2; the raw estimate carries solver bias
    upper, limit = audit_H_growth(trace, k0 / 2)
    from dataclasses import replace

    trace = replace(trace, gamma_estimate=gamma, monotonicity_constant=C)
    run.write("trace.csv", trace.to_csv())
    gtol = cfg.tol("gamma_exact") if exact else cfg.tol("gamma_fem")
    run.check("gamma", gamma, abs(gamma - cfg.k / 2) <= gtol and k0 == cfg.k, gtol)
    run.check("monotonicity_violations", len(violations), not violations, cfg.tol("monotone_slack"))
    run.check("monotonicity_drift", monotonicity_drift(trace, C), True)
    run.check("monotonicity_constant", C, math.isfinite(C) and (C == 0 or cfg.scenario != "exact_harmonic"))
    run.check("H_limit_positive", limit, limit > 0)
    if cfg.scenario == "exact_harmonic":
        nconst = float(np.max(np.abs(trace.N_vals - cfg.k / 2)))
        run.check("N_constant", nconst, nconst <= cfg.tol("n_constant"), cfg.tol("n_constant"))
        ratio = trace.H_vals / trace.radii**cfg.k
        target = cfg.amplitude**2 * (2 * math.pi if cfg.k == 0 else math.pi)
        dev = float(np.max(np.abs(ratio - target)))
        run.check("H_over_r2gamma", dev, dev <= cfg.tol("h_ratio"), cfg.tol("h_ratio"))
    lam = trace.radii[trace.radii * 2 < trace.domain_radius * 0.999]
    if exact:
        q = doubling_ratios(lambda r: _exact_height(source, r), lam)
        dev = float(np.max(np.abs(q - 2.0 ** (2 * gamma))))
        if cfg.scenario == "exact_harmonic":
            run.check("doubling", dev, dev <= cfg.tol("doubling"), cfg.tol("doubling"))
        else:
            run.check("doubling_bounded", float(max(q.max(), 1 / q.min())), bool(np.all(np.isfinite(q))))
    else:
        heights = dict(zip(trace.radii, trace.H_vals))
        field_ = run.field

        def hfun(r):
            return heights.get(r) if r in heights else height(field_, r)

        q = doubling_ratios(hfun, lam)
        c1 = float(max(q.max(), 1 / q.min()))
        run.check("doubling_C1", c1, math.isfinite(c1))
    return trace, gamma, k0


def _exact_height(source, r):
    from .exact import closed_form_HEN

    return closed_form_HEN(source, r)[0]


def _blowup_stage(run: _Run, source, f, k0):
    from .blowup import alpha_coefficients, parseval_ratio, verify_blowup
    from .spectrum import basis_circle

    cfg = run.cfg
    exact = cfg.scenario.startswith("exact")
    basis = basis_circle(max(8, k0))
    rel = cfg.tol("alpha_spread_exact") if exact else cfg.tol("alpha_spread")
    radii = [r * cfg.mesh.radius for r in cfg.schedule.alpha_radii]
    alpha, spread, table = alpha_coefficients(source, None, f, basis, k0, radii, rel_tol=rel)
    scale = float(np.max(np.abs(alpha)))
    run.check("alpha_spread", float(spread.max() / scale), spread.max() <= rel * scale, rel)
    if cfg.scenario == "exact_bessel":
        target = _bessel_alpha(cfg)
        dev = abs(alpha[0] - target) / abs(target)
        run.check("alpha_series", dev, dev <= cfg.tol("alpha_series"), cfg.tol("alpha_series"))
    floor = 1e-10 if exact else cfg.tol("blowup_fem_floor")
    report = verify_blowup(source, k0, alpha, basis, run.cfg.lambdas * cfg.mesh.radius, f=f, alpha_spread=spread, floor=floor)
    for p in report.write(run.out):
        run.files.append(p)
    run.check("blowup_monotone", report.W_lambda_errors.tolist(), report.monotone)
    if cfg.scenario == "exact_bessel":
        run.check("blowup_slope", report.decay_slope, report.decay_slope >= cfg.tol("blowup_slope"), cfg.tol("blowup_slope"))
    if exact:
        pr = parseval_ratio(source, float(cfg.lambdas[0] * cfg.mesh.radius))
        run.check("parseval", pr, abs(pr - 1) <= cfg.tol("parseval"), cfg.tol("parseval"))


def _solve_stage(run: _Run, ref, f):
    from .fem import l2_error, l2_norm, interpolate, solve_problem
    from .slitmesh import make_slit_disk, write_mesh

    cfg = run.cfg
    m = cfg.mesh
    mesh = make_slit_disk(m.radius, m.levels, m.grading_ratio, m.base_resolution)
    write_mesh(mesh, run.out / "mesh.txt")
    run.files.append(run.out / "mesh.txt")
    tipq = f.kind == "radial_power" and f.exponent <= -1.5
    field_ = solve_problem(mesh, f, ref.value, method="direct", tip_quadrature=tipq)
    run.write("field.csv", field_.to_table())
    run.check("solve_residual", field_.stats.residual, field_.stats.residual <= 1e-8 * max(1.0, field_.stats.rhs_norm))
    if cfg.scenario == "fem_constant_potential":
        err = l2_error(field_, ref.value) / l2_norm(interpolate(mesh, ref.value))
        run.check("fem_l2_error", err, err <= cfg.tol("fem_l2"), cfg.tol("fem_l2"))
    run.field = field_
    return field_


def _spectrum_stage(run: _Run):
    from .slitmesh import make_slit_sphere, write_mesh
    from .spectrum import cluster_errors, eigensolve_slit_sphere, homogeneity_residual, mass_gram, trace_nonvanishing_check

    cfg = run.cfg
    mesh = make_slit_sphere(cfg.mesh.sphere_resolution, cfg.mesh.sphere_tip_levels)
    write_mesh(mesh, run.out / "sphere_mesh.txt")
    run.files.append(run.out / "sphere_mesh.txt")
    basis = eigensolve_slit_sphere(mesh, cfg.eigen_count)
    for p in basis.write(run.out / "eigenpairs"):
        run.files.append(p)
    errs = cluster_errors(basis)
    tol = cfg.tol("spectrum")
    run.check("cluster_errors", errs, all(e <= tol for e in errs.values()) and len(errs) >= min(5, len(basis.entries)), tol)
    run.check("multiplicities", basis.multiplicities(), True)
    G = mass_gram(basis)
    orth = float(np.max(np.abs(G - np.eye(len(G)))))
    run.check("mass_orthonormality", orth, orth <= 1e-8, 1e-8)
    traces = [trace_nonvanishing_check(e.functions[0]) for e in basis.entries]
    run.check("trace_nonvanishing", traces, min(traces) > 0)
    run.check("homogeneity_residual", [homogeneity_residual(basis, e) for e in basis.entries], True)


STAGES = ("solve", "frequency", "blowup", "spectrum")


def execute(cfg: RunConfig, out: Path, stages=STAGES) -> dict:
    """Run the scenario's pipeline into ``out`` (an existing empty directory)."""
    from .frequency import compute_trace, trace_from_solution

    run = _Run(cfg, out)
    run.field = None
    if cfg.scenario == "sphere_spectrum":
        if "spectrum" in stages:
            with run.stage("spectrum"):
                _spectrum_stage(run)
    else:
        ref, f = _source_and_potential(cfg)
        source = ref
        if cfg.scenario.startswith("fem"):
            with run.stage("solve"):
                source = _solve_stage(run, ref, f)
        k0 = cfg.k
        if "frequency" in stages or "blowup" in stages:
            with run.stage("frequency"):
                if cfg.scenario.startswith("fem"):
                    trace = compute_trace(source, None, f, cfg.radii, epsilon=cfg.epsilon, workers=_workers())
                else:
                    trace = trace_from_solution(source, cfg.radii, cfg.epsilon, cfg.mesh.radius)
                _, _, k0 = _frequency_stage(run, source, f, trace)
        if "blowup" in stages:
            with run.stage("blowup"):
                _blowup_stage(run, source, f, k0)
    return _manifest(run)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _manifest(run: _Run) -> dict:
    files = {str(p.relative_to(run.out)): _sha256(p) for p in sorted(run.files)}
    return {
        "scenario": run.cfg.scenario,
        "config": run.cfg.to_dict(),
        "config_sha256": config_hash(run.cfg),
        "version": __version__,
        "timings": run.timings,
        "checks": run.checks,
        "all_pass": all(c["pass"] for c in run.checks.values()),
        "files": files,
    }


def run(cfg: RunConfig, output_dir=None, stages=STAGES) -> dict:
    """Execute atomically: artifacts appear at the output path only on success."""
    target = Path(output_dir if output_dir is not None else cfg.output_dir)
    target.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{target.name}.", dir=target.parent))
    try:
        manifest = execute(cfg, tmp, stages)
        (tmp / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        if target.exists():
            shutil.rmtree(target)
        os.replace(tmp, target)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    return manifest


# -- comparison ----------------------------------------------------------

def _read_table(path: Path):
    return np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)


def compare(dir_a, dir_b) -> dict:
    """Per-metric relative differences between two runs of one scenario."""
    a, b = Path(dir_a), Path(dir_b)
    ma = json.loads((a / "manifest.json").read_text())
    mb = json.loads((b / "manifest.json").read_text())
    if ma["scenario"] != mb["scenario"]:
        raise ScenarioMismatch(f"{ma['scenario']} vs {mb['scenario']}")
    report = {"scenario": ma["scenario"], "metrics": {}}

    def rel(x, y):
        x, y = np.asarray(x, float), np.asarray(y, float)
        return float(np.max(np.abs(x - y) / np.maximum(np.abs(y), 1e-300)))

    if (a / "trace.csv").exists() and (b / "trace.csv").exists():
        ta, tb = _read_table(a / "trace.csv"), _read_table(b / "trace.csv")
        if ta.shape == tb.shape and np.array_equal(ta[:, 0], tb[:, 0]):
            for j, name in ((1, "H"), (2, "E"), (3, "N")):
                report["metrics"][f"trace_{name}"] = rel(ta[:, j], tb[:, j])
    ea, eb = a / "eigenpairs" / "eigenvalues.csv", b / "eigenpairs" / "eigenvalues.csv"
    if ea.exists() and eb.exists():
        va, vb = _read_table(ea)[:, 1], _read_table(eb)[:, 1]
        n = min(len(va), len(vb))
        report["metrics"]["eigenvalues"] = float(np.max(np.abs(va[:n] - vb[:n]) / np.maximum(np.abs(vb[:n]), 1.0)))
    sa, sb = a / "blowup_summary.json", b / "blowup_summary.json"
    if sa.exists() and sb.exists():
        aa = json.loads(sa.read_text())["alpha"]
        ab = json.loads(sb.read_text())["alpha"]
        if len(aa) == len(ab):
            report["metrics"]["alpha"] = rel(aa, ab)
    return report


# -- entry point ---------------------------------------------------------

def _error_record(exc: BaseException) -> dict:
    return {
        "error": type(exc).__name__,
        "message": str(exc),
        "stage": getattr(exc, "stage", None),
    }


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="crackfreq", description="Frequency and blow-up experiments near a crack tip.")
    sub = p.add_subparsers(dest="command", required=True)
    for name, stages, helptext in (
        ("run", STAGES, "full pipeline for the configured scenario"),
        ("solve", ("solve",), "mesh and FEM solve only"),
        ("frequency", ("solve", "frequency"), "frequency trace and audits"),
        ("spectrum", ("spectrum",), "slit-sphere eigenpairs"),
        ("blowup", STAGES[:3], "tip coefficients and blow-up convergence"),
    ):
        sp = sub.add_parser(name, help=helptext)
        sp.add_argument("config", help="JSON run configuration")
        sp.add_argument("--output", "-o", help="output directory (overrides output_dir)")
        sp.add_argument("--scenario", choices=SCENARIOS)
        sp.add_argument("--k", type=int)
        sp.add_argument("--amplitude", type=float)
        sp.add_argument("--epsilon", type=float)
        sp.add_argument("--base-resolution", type=int)
        sp.add_argument("--levels", type=int)
        sp.add_argument("--grading-ratio", type=float)
        sp.add_argument("--sphere-resolution", type=int)
        sp.set_defaults(stages=stages)
    v = sub.add_parser("validate", help="check a config and print it with defaults filled in")
    v.add_argument("config")
    c = sub.add_parser("compare", help="relative differences between two run directories")
    c.add_argument("run_a")
    c.add_argument("run_b")
    return p


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    top = {k: getattr(args, k) for k in ("scenario", "k", "amplitude", "epsilon") if getattr(args, k, None) is not None}
    mesh = {
        k: getattr(args, k)
        for k in ("base_resolution", "levels", "grading_ratio", "sphere_resolution")
        if getattr(args, k, None) is not None
    }
    d = cfg.to_dict()
    d.update(top)
    d["mesh"].update(mesh)
    return config_from_dict(d)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "compare":
            print(json.dumps(compare(args.run_a, args.run_b), indent=2, sort_keys=True))
            return 0
        cfg = load_config(args.config)
        if args.command == "validate":
            print(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
            return 0
        cfg = _apply_overrides(cfg, args)
        manifest = run(cfg, args.output, args.stages)
        print(json.dumps({"output": str(args.output or cfg.output_dir), "all_pass": manifest["all_pass"]}))
        return 0 if manifest["all_pass"] else 3
    except ConfigError as exc:
        print(json.dumps(_error_record(exc)), file=sys.stderr)
        return 2
    except (CrackFreqError, ValueError, ArithmeticError, OSError) as exc:
        print(json.dumps(_error_record(exc)), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
