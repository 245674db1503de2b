"""Command-line entry point: ``python -m gradflow {run,refine,check,demo NAME}``.

Configuration is TOML with dotted keys (``model.kappa = 0.01`` or a ``[model]``
table); every accepted key is listed in :data:`DEFAULTS`.  Outputs are
deterministic: the same config and seed give byte-identical CSV and JSON.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

from . import apps, checks, limits
from .grid import Grid, write_gdf
from .models import (ConstantMobility, ConstantWeight, FrobeniusFamily, HuberFidelity,
                     IdentityOperator, ModelSpec, PowerRegularizer, validate)
from .scheme import StepFailure, StepParams, Trajectory, run

log = logging.getLogger("gradflow")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_CHECK = 0, 2, 3, 4

MODELS = ("heat", "grains", "denoise")

# key -> (default, help)
DEFAULTS: dict[str, tuple[object, str]] = {
    "seed": (0, "RNG seed for initial data"),
    "model.name": ("grains", "heat | grains | denoise"),
    "model.kappa": (0.01, "Dirichlet coefficient, > 0"),
    "model.p": (4.0, "regularizer exponent, > 2 and >= N"),
    "model.lam": (1.0, "fidelity weight, >= 0"),
    "model.delta": (1.0, "fidelity saturation scale, > 0"),
    "model.a0": (0.05, "grains: weight floor alpha(0)"),
    "model.a1": (1.0, "grains: weight amplitude"),
    "model.mobility_amp": (0.0, "grains: mobility bump amplitude"),
    "model.alpha": (0.5, "denoise: anisotropy weight"),
    "model.coupling": ("rotation", "denoise: rotation | axis | isotropic"),
    "model.weights": ([0.25, 1.0], "denoise: (normal, tangential) weights"),
    "model.sigma": (1.5, "denoise: structure-tensor smoothing in pixels"),
    "grid.shape": ([32, 32], "nodes per axis (1 or 2 entries)"),
    "init.seeds": (5, "grains: number of Voronoi seeds"),
    "init.width": (0.03, "grains: interface blur (domain units)"),
    "init.image": ("", "denoise: P5 PGM path; empty uses synthetic stripes"),
    "init.noise": (0.1, "denoise: stripe noise level"),
    "init.period": (8.0, "denoise: stripe period in pixels"),
    "time.T": (0.01, "horizon, > 0"),
    "time.tau": (1e-4, "time step, > 0"),
    "scheme.nu": (1e-3, "regularizer weight in [0, 1)"),
    "scheme.eps": (0.05, "smoothing parameter in (0, 1)"),
    "scheme.mu": (1e-3, "pseudo-parabolic weight in [0, 1)"),
    "scheme.tol": (1e-9, "Newton residual tolerance (H-norm)"),
    "scheme.max_iter": (50, "Newton iterations per attempt"),
    "scheme.max_halvings": (12, "tau halvings per step"),
    "output.snapshot_every": (0, "GDF1 snapshot interval in steps (0: first and last)"),
    "refine.levels": (4, "schedule length"),
    "refine.start": (0.016, "first nu = eps = mu"),
    "refine.ratio": (0.5, "geometric ratio"),
    "refine.T": (0.032, "horizon of refinement runs"),
    "refine.workers": (1, "parallel processes"),
    "refine.battery": (8, "variational-inequality test directions"),
    "refine.delta": (0.1, "test-field perturbation size"),
    "check.points": (100, "random points per derivative check"),
    "check.steps": (5, "smoke-run steps for the dissipation check"),
}

DEMOS = {
    "denoise": {"model.name": "denoise", "model.kappa": 0.05, "model.delta": 0.5,
                "grid.shape": [32, 32]},
    "grains": {"model.name": "grains"},
}


class ConfigError(ValueError):
    pass


def _flatten(d: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def _coerce(key: str, value, default):
    if isinstance(default, bool) or isinstance(value, bool):
        if not isinstance(value, bool) or not isinstance(default, bool):
            raise ConfigError(f"{key}: expected {type(default).__name__}, got {value!r}")
        return value
    if isinstance(default, int):
        if not isinstance(value, int):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{key}: expected a string, got {value!r}")
        return value
    if isinstance(default, list):
        if not isinstance(value, list) or not all(isinstance(x, (int, float)) for x in value):
            raise ConfigError(f"{key}: expected a list of numbers, got {value!r}")
        return list(value)
    raise ConfigError(f"{key}: unsupported value {value!r}")


@dataclass
class RunConfig:
    values: dict = field(default_factory=lambda: {k: v for k, (v, _) in DEFAULTS.items()})

    def __getitem__(self, key: str):
        return self.values[key]

    @classmethod
    def from_mapping(cls, mapping: dict, base: dict | None = None) -> RunConfig:
        cfg = cls()
        cfg.values.update(base or {})
        for key, value in _flatten(mapping).items():
            if key not in DEFAULTS:
                raise ConfigError(f"unknown config key {key!r}")
            cfg.values[key] = _coerce(key, value, DEFAULTS[key][0])
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path: str | Path | None, base: dict | None = None,
             seed: int | None = None) -> RunConfig:
        data = {}
        if path is not None:
            try:
                with open(path, "rb") as fh:
                    data = tomllib.load(fh)
            except OSError as exc:
                raise ConfigError(f"cannot read config {path}: {exc}") from None
            except tomllib.TOMLDecodeError as exc:
                raise ConfigError(f"{path}: {exc}") from None
        if seed is not None:
            data = dict(data, seed=seed)
        return cls.from_mapping(data, base)

    def _require(self, key, ok, what):
        if not ok:
            raise ConfigError(f"{key} = {self[key]!r}: must be {what}")

    def validate(self) -> None:
        v = self.values
        self._require("seed", v["seed"] >= 0, ">= 0")
        self._require("model.name", v["model.name"] in MODELS, " | ".join(MODELS))
        self._require("model.kappa", v["model.kappa"] > 0, "> 0")
        self._require("model.p", v["model.p"] > 2, "> 2")
        self._require("model.lam", v["model.lam"] >= 0, ">= 0")
        self._require("model.delta", v["model.delta"] > 0, "> 0")
        for k in ("model.a0", "model.a1", "model.mobility_amp", "model.alpha"):
            self._require(k, v[k] >= 0, ">= 0")
        self._require("model.coupling", v["model.coupling"] in ("rotation", "axis", "isotropic"),
                      "rotation | axis | isotropic")
        self._require("model.weights", len(v["model.weights"]) == 2
                      and min(v["model.weights"]) >= 0, "two nonnegative numbers")
        shape = v["grid.shape"]
        self._require("grid.shape", len(shape) in (1, 2) and all(
            isinstance(n, int) and 2 <= n <= apps.MAX_SIDE for n in shape),
            f"1 or 2 integers in [2, {apps.MAX_SIDE}]")
        self._require("init.seeds", v["init.seeds"] >= 1, ">= 1")
        self._require("init.width", v["init.width"] >= 0, ">= 0")
        self._require("time.T", v["time.T"] > 0, "> 0")
        self._require("time.tau", v["time.tau"] > 0, "> 0")
        self._require("time.T", v["time.T"] / v["time.tau"] <= apps.MAX_STEPS * (1 + 1e-9),
                      f"at most {apps.MAX_STEPS} steps of time.tau")
        for k in ("scheme.nu", "scheme.mu"):
            self._require(k, 0 <= v[k] < 1, "in [0, 1)")
        self._require("scheme.eps", 0 < v["scheme.eps"] < 1, "in (0, 1)")
        self._require("scheme.tol", 0 < v["scheme.tol"] <= 1e-6, "in (0, 1e-6]")
        self._require("scheme.max_iter", v["scheme.max_iter"] >= 1, ">= 1")
        self._require("scheme.max_halvings", v["scheme.max_halvings"] >= 0, ">= 0")
        self._require("output.snapshot_every", v["output.snapshot_every"] >= 0, ">= 0")
        self._require("refine.levels", v["refine.levels"] >= 1, ">= 1")
        self._require("refine.start", 0 < v["refine.start"] < 1, "in (0, 1)")
        self._require("refine.ratio", 0 < v["refine.ratio"] < 1, "in (0, 1)")
        self._require("refine.T", v["refine.T"] > 0, "> 0")
        self._require("refine.workers", v["refine.workers"] >= 1, ">= 1")
        self._require("refine.battery", v["refine.battery"] >= 1, ">= 1")
        self._require("check.points", v["check.points"] >= 1, ">= 1")
        self._require("check.steps", v["check.steps"] >= 1, ">= 1")
        try:
            self.build()
            self.params()
        except ConfigError:
            raise
        except (ValueError, OSError) as exc:
            raise ConfigError(str(exc)) from None

    def params(self) -> StepParams:
        v = self.values
        return StepParams(tau=v["time.tau"], nu=v["scheme.nu"], eps=v["scheme.eps"],
                          mu=v["scheme.mu"], tol=v["scheme.tol"], max_iter=v["scheme.max_iter"],
                          max_halvings=v["scheme.max_halvings"])

    def image_problem(self) -> apps.ImageProblem:
        v = self.values
        if v["init.image"]:
            img = apps.read_pgm(v["init.image"]) / 255.0
        else:
            img = apps.stripe_image(v["grid.shape"][0], v["init.period"],
                                    noise=v["init.noise"], seed=v["seed"])
        return apps.ImageProblem(
            img, lam=v["model.lam"], coupling=v["model.coupling"], eps=v["scheme.eps"],
            T=v["time.T"], tau=v["time.tau"], nu=v["scheme.nu"], mu=v["scheme.mu"],
            kappa=v["model.kappa"], alpha=v["model.alpha"],
            weights=tuple(v["model.weights"]), delta=v["model.delta"], sigma=v["model.sigma"])

    def grain_problem(self) -> apps.GrainProblem:
        v = self.values
        return apps.GrainProblem(
            shape=tuple(v["grid.shape"]), seeds=v["init.seeds"], rng_seed=v["seed"],
            kappa=v["model.kappa"], a0=v["model.a0"], a1=v["model.a1"],
            mobility_amp=v["model.mobility_amp"], lam=v["model.lam"], T=v["time.T"],
            tau=v["time.tau"], nu=v["scheme.nu"], eps=v["scheme.eps"], mu=v["scheme.mu"],
            width=v["init.width"])

    def build(self) -> tuple[ModelSpec, Grid, np.ndarray]:
        """Model, grid and initial state described by this config."""
        v = self.values
        name = v["model.name"]
        reg = PowerRegularizer(v["model.p"])
        if name == "denoise":
            prob = self.image_problem()
            spec = apps.build_denoise_model(prob)
            spec = replace(spec, regularizer=reg)
            return spec, prob.grid, prob.initial_state()
        if name == "grains":
            prob = self.grain_problem()
            spec = replace(apps.build_grain_model(prob), regularizer=reg)
            return spec, prob.grid, prob.initial_state()
        grid = Grid.unit(*v["grid.shape"])
        n = grid.dim
        spec = ModelSpec(m=1, n=n, kappa=v["model.kappa"],
                         mobility=ConstantMobility.identity(1), weight=ConstantWeight(1, 0.0),
                         operator=IdentityOperator(1, n), anisotropy=FrobeniusFamily(1, n),
                         regularizer=reg)
        x = grid.coords
        u0 = np.prod(np.cos(np.pi * x), axis=1)[:, None]
        return spec, grid, u0


# -- output helpers --------------------------------------------------------------

def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _finish(out: Path, summary: dict, files: list[Path]) -> None:
    summary["manifest"] = {str(p.relative_to(out)): _sha256(p) for p in sorted(files)}
    _write_json(out / "summary.json", summary)


def _export_trajectory(out: Path, traj: Trajectory, every: int) -> list[Path]:
    out.mkdir(parents=True, exist_ok=True)
    files = [out / "energy.csv"]
    traj.write_csv(files[0])
    snap = out / "snapshots"
    snap.mkdir(exist_ok=True)
    idx = {0, traj.steps}
    if every:
        idx |= set(range(0, traj.steps + 1, every))
    for i in sorted(idx):
        p = snap / f"state_{i:04d}.gdf"
        write_gdf(p, traj.grid, traj.states[i])
        files.append(p)
    return files


def _trajectory_summary(traj: Trajectory) -> dict:
    E = traj.energies()
    return {
        "steps": traj.steps,
        "final_time": traj.final_time,
        "energy_initial": traj.energy0.to_dict(),
        "energy_final": traj.diagnostics[-1].energy.to_dict() if traj.steps else None,
        "energy_nonincreasing": bool(np.all(np.diff(E) <= 1e-10 * (1 + np.abs(E[:-1])))),
        "dissipation_ok": all(d.dissipation_ok for d in traj.diagnostics),
        "halvings": sum(d.halvings for d in traj.diagnostics),
        "newton_iterations": sum(d.iterations for d in traj.diagnostics),
    }


# -- commands ---------------------------------------------------------------------

def cmd_run(config: RunConfig, out: str | Path) -> int:
    out = Path(out)
    spec, grid, u0 = config.build()
    try:
        traj = run(spec, grid, u0, config["time.T"], config.params(),
                   callback=lambda i, t, u: log.info("step %d  t=%.6g", i, t))
    except StepFailure as exc:
        log.error("solver failure: %s", exc)
        if exc.trajectory is not None and exc.trajectory.steps:
            files = _export_trajectory(out, exc.trajectory, config["output.snapshot_every"])
            _finish(out, {"status": "solver failure", "error": str(exc),
                          "config": config.values,
                          "trajectory": _trajectory_summary(exc.trajectory)}, files)
        return EXIT_SOLVER
    files = _export_trajectory(out, traj, config["output.snapshot_every"])
    summary = {"status": "ok", "command": "run", "config": config.values,
               "trajectory": _trajectory_summary(traj)}
    if config["model.name"] == "grains":
        summary["theta_range"] = apps.theta_range_report(traj)
    _finish(out, summary, files)
    return EXIT_OK


def cmd_demo(name: str, config: RunConfig, out: str | Path) -> int:
    if name not in DEMOS:
        log.error("unknown demo %r (choose from %s)", name, ", ".join(DEMOS))
        return EXIT_CONFIG
    out = Path(out)
    if name == "denoise":
        prob = config.image_problem()
        try:
            traj = apps.denoise(prob, config.params(), out_dir=out / "images",
                                snapshot_every=config["output.snapshot_every"])
        except StepFailure as exc:
            log.error("solver failure: %s", exc)
            return EXIT_SOLVER
        files = sorted((out / "images").glob("*.pgm"))
    else:
        prob = config.grain_problem()
        try:
            traj = apps.grain_evolve(prob, config.params())
        except StepFailure as exc:
            log.error("solver failure: %s", exc)
            return EXIT_SOLVER
        files = []
    files += _export_trajectory(out, traj, config["output.snapshot_every"])
    summary = {"status": "ok", "command": f"demo {name}", "config": config.values,
               "trajectory": _trajectory_summary(traj)}
    if name == "grains":
        summary["theta_range"] = apps.theta_range_report(traj)
    ei = limits.energy_inequality_check(traj, regularized=True)
    summary["energy_inequality"] = {"passed": ei.passed, "worst": ei.worst,
                                    "pairs": len(ei.pairs)}
    _finish(out, summary, files)
    return EXIT_OK


def refinement_study(config: RunConfig) -> dict:
    """Run the refinement schedule of ``config`` and collect per-index metrics."""
    spec, grid, u0 = config.build()
    sched = limits.RefinementSchedule.geometric(
        config["refine.levels"], config["refine.ratio"], config["refine.start"],
        tau_base=config["time.tau"] * 2 if config["model.name"] == "heat" else 1.0)
    T = config["refine.T"]
    trajs = limits.refine(spec, grid, u0, T, sched, workers=config["refine.workers"],
                          tol=config["scheme.tol"], max_iter=config["scheme.max_iter"],
                          max_halvings=config["scheme.max_halvings"])
    battery = limits.smooth_battery(grid, spec.m, config["refine.battery"])
    t_samples = list(np.linspace(0.0, T, 9)[1:])
    rows = []
    for k, tr in enumerate(trajs):
        vi = limits.vi_residual(spec, tr, battery, t_samples, delta=config["refine.delta"])
        ei = limits.energy_inequality_check(tr)
        rows.append({
            "n": k + 1, "nu": sched.nu[k], "eps": sched.eps[k], "mu": sched.mu[k],
            "tau": sched.tau[k], "steps": tr.steps,
            "cauchy_next": limits.cauchy_metric(tr, trajs[k + 1]) if k + 1 < len(trajs) else None,
            "vi_worst": vi.worst_violation, "energy_excess": ei.excess,
            "energy_inequality_passed": ei.passed,
        })
    return {"schedule": sched.to_dict(), "rows": rows}


def cmd_refine(config: RunConfig, out: str | Path) -> int:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        report = refinement_study(config)
    except StepFailure as exc:
        log.error("solver failure: %s", exc)
        return EXIT_SOLVER
    path = out / "refine.csv"
    cols = list(report["rows"][0])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in report["rows"]:
            w.writerow(["" if r[c] is None else repr(r[c]) for c in cols])
    _finish(out, {"status": "ok", "command": "refine", "config": config.values,
                  "report": report}, [path])
    return EXIT_OK


def property_battery(config: RunConfig) -> list[dict]:
    """Model validation, Green identity, derivative checks, convex probes and a
    dissipation smoke run; returns a list of named results."""
    spec, grid, u0 = config.build()
    seed = config["seed"]
    results = [dict(c.to_dict(), group="validate") for c in validate(spec, seed=seed).checks]
    for g in (Grid.unit(17), Grid.unit(9, 7), grid):
        results.append(dict(checks.green_identity_check(g, seed=seed).to_dict(), group="grid"))
    small = Grid.unit(*([6] * grid.dim))
    small_spec = spec
    pot = spec.potential
    if isinstance(pot, HuberFidelity):
        target = pot.target_at(small.coords)
        small_spec = replace(spec, potential=HuberFidelity(small, target, pot.weights, pot.delta))
    for c in checks.derivative_battery(small_spec, small, points=config["check.points"],
                                       seed=seed, eps=config["scheme.eps"]).checks:
        results.append(dict(c.to_dict(), group="derivatives"))
    rng = np.random.default_rng(seed)
    W = rng.standard_normal((2000, spec.m, spec.n))
    X = rng.standard_normal((2000, spec.m, spec.n))
    fam = spec.anisotropy
    for name, rep in (("subdifferential membership", limits.subdiff_membership_probe(fam, W, X)),
                      ("smoothing consistency",
                       limits.gamma_consistency_probe(fam, W, (1e-1, 1e-2, 1e-3)))):
        results.append({"name": name, "passed": rep.passed, "observed": rep.worst,
                        "declared": None, "detail": f"{rep.violations} violations",
                        "group": "probes"})
    params = config.params()
    try:
        traj = run(spec, grid, u0, config["check.steps"] * params.tau, params)
        ok = all(d.dissipation_ok for d in traj.diagnostics)
        worst = max(d.lhs - d.rhs for d in traj.diagnostics)
        detail = f"{traj.steps} steps"
    except StepFailure as exc:
        ok, worst, detail = False, float("nan"), str(exc)
    results.append({"name": "dissipation smoke run", "passed": ok, "observed": worst,
                    "declared": 0.0, "detail": detail, "group": "scheme"})
    return results


def cmd_check(config: RunConfig, out: str | Path | None = None) -> int:
    results = property_battery(config)
    failed = [r for r in results if not r["passed"]]
    for r in results:
        log.info("%s  %-40s %s", "PASS" if r["passed"] else "FAIL", r["name"], r["observed"])
    for r in failed:
        print(f"check failed: {r['name']} (observed {r['observed']})", file=sys.stderr)
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "check.json", {"passed": not failed, "results": results,
                                         "config": config.values})
    return EXIT_CHECK if failed else EXIT_OK


# -- argument parsing ----------------------------------------------------------------

def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="TOML config file")
    common.add_argument("--out", metavar="DIR", default="out", help="output directory")
    common.add_argument("--seed", type=int, metavar="U64", help="override the config seed")
    common.add_argument("--quiet", action="store_true", help="only report errors")
    ap = argparse.ArgumentParser(prog="gradflow", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="run one trajectory")
    sub.add_parser("refine", parents=[common], help="refinement study")
    sub.add_parser("check", parents=[common], help="property battery")
    demo = sub.add_parser("demo", parents=[common], help="run a demo")
    demo.add_argument("name", choices=sorted(DEMOS))
    sub.add_parser("keys", help="list config keys")
    return ap


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "keys":
        for k, (v, h) in DEFAULTS.items():
            print(f"{k} = {v!r}  # {h}")
        return EXIT_OK
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr, force=True)
    if args.seed is not None and args.seed < 0:
        print("config error: seed must be >= 0", file=sys.stderr)
        return EXIT_CONFIG
    base = DEMOS[args.name] if args.command == "demo" else None
    try:
        config = RunConfig.load(args.config, base, args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.command == "run":
        return cmd_run(config, args.out)
    if args.command == "refine":
        return cmd_refine(config, args.out)
    if args.command == "check":
        return cmd_check(config, args.out)
    return cmd_demo(args.name, config, args.out)
