"""Command-line entry point: ``vortexlayers {simulate,reference,converge,jump,diagnose}``.

Each run reads one JSON config.  Outputs are CSV tables (a ``# config_sha256=``
line, then a header row) and JSON reports, written to ``--out``.
Exit codes: 0 success, 2 config error, 3 runtime halt.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import dynamics as dyn
from . import harness
from .geometry import circle, curve_from_json, ellipse
from .kernels import PV_RULES, ResolutionError, kernel_lower_bound_check
from .spectral import IndeterminateFitError, SpectralField, estimate_analyticity_radius

log = logging.getLogger("vortexlayers")

EXIT_OK, EXIT_CONFIG, EXIT_HALT = 0, 2, 3

DEFAULTS = {
    "curve": {"type": "circle"},
    "n_points": 128,
    "n_layers": 8,
    "epsilon": 0.04,
    "epsilons": [0.08, 0.04, 0.02, 0.01],
    "eta0": {"cos": [0.0]},
    "varpi0": {"cos": [1.0, 0.1]},
    "profile": "box",
    "t_end": 0.1,
    "dt": None,
    "cfl": 0.5,
    "filter_threshold": 1e-12,
    "output_times": [],
    "comparison_times": [0.05],
    "project": False,
    "speed_cap": 1e3,
    "residual_cap": 1e-3,
    "pv_rule": "alternate-point",
    "resolution_constant": 4.0,
    "upsample": None,
    "seed": 0,
    "n_samples": 1000,
    "rho": 0.05,
    "evolve_to": 0.0,
}


class ConfigError(ValueError):
    pass


def series(doc):
    """``s -> sum_k c_k cos(2 pi k s) + d_k sin(2 pi k s)`` from ``{"cos": [...], "sin": [...]}``."""
    if isinstance(doc, (int, float)):
        doc = {"cos": [float(doc)]}
    if not isinstance(doc, dict) or set(doc) - {"cos", "sin"}:
        raise ConfigError(f"a Fourier series needs 'cos'/'sin' lists, got {doc!r}")
    cos = np.asarray(doc.get("cos", []), dtype=float)
    sin = np.asarray(doc.get("sin", []), dtype=float)

    def f(s):
        s = np.asarray(s, dtype=float)
        out = np.zeros_like(s)
        for k, c in enumerate(cos):
            out = out + c * np.cos(2 * np.pi * k * s)
        for k, d in enumerate(sin):
            out = out + d * np.sin(2 * np.pi * k * s)
        return out
    return f


def build_curve(doc: dict):
    kind = doc.get("type", "fourier")
    if kind == "circle":
        return circle(doc.get("rho0", 0.5))
    if kind == "ellipse":
        return ellipse(doc["a"], doc["b"], doc.get("n_modes", 256), doc.get("rho0", 0.05))
    if kind == "fourier":
        return curve_from_json(doc)
    raise ConfigError(f"curve.type must be circle, ellipse or fourier, got {kind!r}")


def load_config(path) -> tuple[dict, str]:
    """Merged config and the SHA-256 of the document as given."""
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(raw) - set(DEFAULTS)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return {**DEFAULTS, **raw}, dyn.config_hash(raw)


def validate(cfg: dict, command: str = "") -> None:
    """Check every numeric precondition before any computation starts."""
    def need(cond, msg):
        if not cond:
            raise ConfigError(msg)
    n = cfg["n_points"]
    need(isinstance(n, int) and n >= 8 and n % 2 == 0, "n_points must be an even integer >= 8")
    need(isinstance(cfg["n_layers"], int) and cfg["n_layers"] >= 2, "n_layers must be an integer >= 2")
    need(cfg["epsilon"] > 0, "epsilon must be positive")
    eps = cfg["epsilons"]
    need(len(eps) >= 1 and all(e > 0 for e in eps), "epsilons must be positive")
    need(all(a > b for a, b in zip(eps, eps[1:])), "epsilons must be strictly decreasing")
    need(cfg["t_end"] >= 0, "t_end must be nonnegative")
    need(cfg["dt"] is None or cfg["dt"] > 0, "dt must be positive (or null for automatic)")
    need(cfg["cfl"] > 0, "cfl must be positive")
    need(cfg["filter_threshold"] >= 0, "filter_threshold must be nonnegative")
    need(cfg["speed_cap"] > 0 and cfg["residual_cap"] > 0, "speed_cap and residual_cap must be positive")
    need(all(0 <= t <= cfg["t_end"] for t in cfg["output_times"]), "output_times must lie in [0, t_end]")
    if command == "converge":
        need(all(0 <= t <= cfg["t_end"] for t in cfg["comparison_times"]),
             "comparison_times must lie in [0, t_end]")
    need(cfg["pv_rule"] in PV_RULES, f"pv_rule must be one of {PV_RULES}")
    need(cfg["resolution_constant"] > 0, "resolution_constant must be positive")
    need(cfg["upsample"] is None or (isinstance(cfg["upsample"], int) and cfg["upsample"] >= 1),
         "upsample must be a positive integer or null")
    need(cfg["profile"] in harness.PROFILES, f"profile must be one of {sorted(harness.PROFILES)}")
    need(isinstance(cfg["n_samples"], int) and cfg["n_samples"] > 0, "n_samples must be a positive integer")
    need(cfg["rho"] >= 0, "rho must be nonnegative")
    need(0 <= cfg["evolve_to"], "evolve_to must be nonnegative")


def experiment(cfg: dict, epsilons=None, threads: int = 1,
               compare: bool = False) -> harness.ExperimentSpec:
    return harness.ExperimentSpec(
        curve=build_curve(cfg["curve"]), eta0=series(cfg["eta0"]), varpi00=series(cfg["varpi0"]),
        profile=harness.PROFILES[cfg["profile"]],
        epsilons=tuple(epsilons if epsilons is not None else cfg["epsilons"]),
        n_points=cfg["n_points"], n_layers=cfg["n_layers"], t_end=cfg["t_end"],
        comparison_times=tuple(cfg["comparison_times"]) if compare else (), cfl=cfg["cfl"],
        filter_threshold=cfg["filter_threshold"], pv_rule=cfg["pv_rule"],
        resolution_constant=cfg["resolution_constant"], threads=threads)


def evolution(cfg: dict, t_end=None) -> dyn.EvolutionConfig:
    return dyn.EvolutionConfig(
        t_end=cfg["t_end"] if t_end is None else t_end, dt=cfg["dt"],
        filter_threshold=cfg["filter_threshold"], cfl=cfg["cfl"],
        output_times=tuple(cfg["output_times"]), project=cfg["project"],
        speed_cap=cfg["speed_cap"], residual_cap=cfg["residual_cap"], pv_rule=cfg["pv_rule"],
        resolution_constant=cfg["resolution_constant"], upsample=cfg["upsample"])


def _write_json(path: Path, doc: dict, digest: str) -> None:
    path.write_text(json.dumps({"config_sha256": digest, **doc}, indent=2, sort_keys=True,
                               default=float) + "\n", encoding="utf-8")


def _write_trajectory(traj: dyn.Trajectory, out: Path, digest: str, times) -> None:
    marks = sorted(set(times) | {traj.states[0].time, traj.final.time})
    for t in marks:
        try:
            st = traj.at(t)
        except KeyError:
            continue
        dyn.write_checkpoint(st, out / f"state_t{t:.6f}".replace(".", "p"), digest)
    dyn.write_diagnostics(traj, out / "diagnostics.csv", digest)


def _summary(traj: dyn.Trajectory, out: Path, digest: str, extra: dict) -> int:
    _write_json(out / "summary.json", {"halted": traj.halted, "reason": traj.reason,
                                       "t_final": traj.final.time, "n_steps": len(traj.states) - 1,
                                       **extra}, digest)
    if traj.halted:
        log.error("run halted: %s", traj.reason)
        return EXIT_HALT
    return EXIT_OK


def cmd_simulate(cfg: dict, out: Path, digest: str, threads: int) -> int:
    spec = experiment(cfg, epsilons=[cfg["epsilon"]])
    w = spec.layered_state(cfg["epsilon"])
    evo = evolution(cfg)
    kcfg = dyn.kernel_config(w, evo.pv_rule, evo.resolution_constant, evo.upsample)
    traj = dyn.integrate(w, dyn.LayeredDynamics(kcfg, evo.filter_threshold), evo)
    _write_trajectory(traj, out, digest, cfg["output_times"])
    cons = harness.conservation_monitor(traj)
    width = harness.support_width_monitor(traj)
    return _summary(traj, out, digest, {
        "upsample": kcfg.upsample, "max_circulation_drift": cons.max_drift,
        "max_admissibility": max(d.values["admissibility"] for d in traj.diagnostics),
        "max_width_ratio": width.max_ratio, "max_thickness_ratio": width.max_thickness_ratio})


def cmd_reference(cfg: dict, out: Path, digest: str, threads: int) -> int:
    spec = experiment(cfg)
    ref = spec.reference_state()
    evo = evolution(cfg)
    traj = dyn.integrate(ref, dyn.ReferenceDynamics(evo.pv_rule, 1, evo.filter_threshold), evo)
    _write_trajectory(traj, out, digest, cfg["output_times"])
    return _summary(traj, out, digest,
                    {"max_circulation_drift": harness.conservation_monitor(traj).max_drift})


def cmd_converge(cfg: dict, out: Path, digest: str, threads: int) -> int:
    spec = experiment(cfg, threads=threads, compare=True)
    report = harness.run_convergence(spec)
    _write_json(out / "convergence.json", report.to_json(), digest)
    cols = ["epsilon", "time", "e_nu", "e_varpi", "e_sum"]
    dyn.write_csv(out / "errors.csv", cols, [[r[c] for c in cols] for r in report.rows], digest)
    return EXIT_HALT if any(report.halted.values()) else EXIT_OK


def cmd_jump(cfg: dict, out: Path, digest: str, threads: int) -> int:
    spec = experiment(cfg)
    reports, slopes = harness.jump_sweep(spec)
    _write_json(out / "jump.json", {"reports": [asdict(r) for r in reports],
                                    "slopes": {k: asdict(v) for k, v in slopes.items()}}, digest)
    cols = ["epsilon", "mean_discrepancy", "corrected_discrepancy", "jump_error"]
    dyn.write_csv(out / "jump.csv", cols, [[getattr(r, c) for c in cols] for r in reports], digest)
    return EXIT_OK


def cmd_diagnose(cfg: dict, out: Path, digest: str, threads: int) -> int:
    spec = experiment(cfg, epsilons=[cfg["epsilon"]])
    w = spec.layered_state(cfg["epsilon"])
    evo = evolution(cfg, t_end=cfg["evolve_to"])
    kcfg = dyn.kernel_config(w, evo.pv_rule, evo.resolution_constant, evo.upsample)
    halted = ""
    if cfg["evolve_to"] > 0:
        traj = dyn.integrate(w, dyn.LayeredDynamics(kcfg, evo.filter_threshold), evo)
        w = traj.final
        halted = traj.reason
    bound = kernel_lower_bound_check(w, kcfg, rho=cfg["rho"], n_samples=cfg["n_samples"], seed=cfg["seed"])
    rows = []
    for name, arr in (("w1", w.w1), ("w3", w.w3), ("w4", w.w4)):
        for i, row in enumerate(arr):
            try:
                rho = estimate_analyticity_radius(SpectralField.from_values(row))
            except IndeterminateFitError:
                rho = math.nan
            rows.append([name, int(i), w.l_nodes[i], rho])
    dyn.write_csv(out / "analyticity.csv", ["field", "layer", "l", "rho_hat"],
                  [[r[0], str(r[1]), r[2], r[3]] for r in rows], digest)
    _write_json(out / "diagnose.json", {
        "time": w.time, "halted": halted, "kernel_lower_bound": asdict(bound),
        "admissibility": dyn.admissibility_residual(w)}, digest)
    return EXIT_HALT if halted else EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "reference": cmd_reference, "converge": cmd_converge,
            "jump": cmd_jump, "diagnose": cmd_diagnose}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vortexlayers", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True, help="JSON config file")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--threads", type=int, default=1, help="worker threads for independent runs (0 = auto)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.threads < 0:
            raise ConfigError("--threads must be >= 0")
        cfg, digest = load_config(args.config)
        validate(cfg, args.command)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, out, digest, args.threads)
    except (ConfigError, dyn.CFLError, dyn.SupportError, ResolutionError, KeyError, TypeError,
            ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
