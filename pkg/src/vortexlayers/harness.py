"""Convergence, jump-relation, conservation and support-width experiments."""
from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .dynamics import (EvolutionConfig, LayeredDynamics, LayeredState, ReferenceDynamics,
                       ReferenceState, Trajectory, assemble_velocity, build_initial_state,
                       integrate, kernel_config, layer_nodes)
from .geometry import CurveSpec, perp
from .kernels import KernelEvalConfig, k0
from .spectral import SpectralField, derivative

log = logging.getLogger(__name__)


def box_profile(l):
    return np.where(np.abs(l) < 0.5, 1.0, 0.0)


def cos2_profile(l):
    return np.where(np.abs(l) < 0.5, np.cos(np.pi * l) ** 2, 0.0)


PROFILES = {"box": box_profile, "cos2": cos2_profile}


@dataclass(frozen=True, eq=False)
class ExperimentSpec:
    """A family of layered runs sharing curve, perturbation and density profile.

    ``eta0`` and ``varpi00`` map grid nodes to values; ``profile`` maps layer
    abscissae to the radial weight, normalized so the layer quadrature of the
    initial densities reproduces ``varpi00`` exactly.
    """

    curve: CurveSpec
    eta0: Callable
    varpi00: Callable
    profile: Callable = box_profile
    epsilons: tuple = (0.08, 0.04, 0.02, 0.01)
    n_points: int = 128
    n_layers: int = 8
    t_end: float = 0.05
    comparison_times: tuple = (0.05,)
    cfl: float = 0.5
    filter_threshold: float = 1e-12
    pv_rule: str = "alternate-point"
    resolution_constant: float = 4.0
    threads: int = 1

    def __post_init__(self):
        eps = np.asarray(self.epsilons, dtype=float)
        if eps.size == 0 or np.any(eps <= 0) or np.any(np.diff(eps) >= 0):
            raise ValueError("epsilons must be positive and strictly decreasing")
        if any(t < 0 or t > self.t_end for t in self.comparison_times):
            raise ValueError("comparison_times must lie in [0, t_end]")

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(self.n_points) / self.n_points

    def layer_weights(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Layer nodes, weights and the normalized profile on them."""
        nodes, wts = layer_nodes(self.n_layers)
        chi = np.asarray(self.profile(nodes), dtype=float)
        total = float(np.sum(wts * chi))
        if total <= 0:
            raise ValueError("profile has no mass on the layer nodes")
        return nodes, wts, chi / total

    def layered_state(self, epsilon: float) -> LayeredState:
        nodes, wts, chi = self.layer_weights()
        s = self.nodes
        dens = chi[:, None] * np.asarray(self.varpi00(s), dtype=float)[None, :]
        return build_initial_state(self.curve, np.asarray(self.eta0(s), dtype=float),
                                   dens, epsilon, nodes, wts)

    def reference_state(self) -> ReferenceState:
        s = self.nodes
        return ReferenceState(self.curve, SpectralField.from_values(np.zeros(self.n_points)),
                              SpectralField.from_values(np.asarray(self.varpi00(s), dtype=float)))

    def evolution(self) -> EvolutionConfig:
        return EvolutionConfig(t_end=self.t_end, filter_threshold=self.filter_threshold,
                               cfl=self.cfl, output_times=tuple(self.comparison_times),
                               pv_rule=self.pv_rule, resolution_constant=self.resolution_constant)


# -- monitors -----------------------------------------------------------------------


@dataclass
class ConservationReport:
    times: np.ndarray
    layer_drift: np.ndarray
    total_drift: np.ndarray

    @property
    def max_drift(self) -> float:
        return float(np.max(np.abs(self.layer_drift))) if self.layer_drift.size else 0.0


def _circulations(state) -> np.ndarray:
    if isinstance(state, LayeredState):
        return state.circulations()
    return np.array([state.circulation()])


def conservation_monitor(traj) -> ConservationReport:
    """Drift of every layer's circulation (and of the weighted total) relative to the first state."""
    states = traj.states if isinstance(traj, Trajectory) else list(traj)
    if not states:
        return ConservationReport(np.zeros(0), np.zeros((0, 0)), np.zeros(0))
    circ = np.array([_circulations(s) for s in states])
    drift = circ - circ[0]
    first = states[0]
    wts = first.l_weights if isinstance(first, LayeredState) else np.ones(1)
    return ConservationReport(np.array([s.time for s in states]), drift, drift @ wts)


@dataclass
class WidthSeries:
    """``widths``: largest ``|nu_l|`` over layers with density (distance from the base curve).
    ``thickness``: largest spread ``max_l nu_l - min_l nu_l`` over those layers.
    """

    epsilon: float
    times: np.ndarray
    widths: np.ndarray
    thickness: np.ndarray

    @property
    def ratios(self) -> np.ndarray:
        return self.widths / self.epsilon

    @property
    def max_ratio(self) -> float:
        return float(np.max(self.ratios))

    @property
    def max_thickness_ratio(self) -> float:
        return float(np.max(self.thickness)) / self.epsilon


def support_width_monitor(traj) -> WidthSeries:
    """Per time, the largest ``|nu_l|`` over layers carrying density."""
    states = traj.states if isinstance(traj, Trajectory) else list(traj)
    widths, thick = [], []
    for st in states:
        act = st.active_layers()
        nu = st.w1[act]
        widths.append(float(np.max(np.abs(nu))) if act.size else 0.0)
        thick.append(float(np.max(nu.max(axis=0) - nu.min(axis=0))) if act.size else 0.0)
    eps = states[0].epsilon if states else float("nan")
    return WidthSeries(eps, np.array([s.time for s in states]), np.array(widths), np.array(thick))


@dataclass
class RateFit:
    slope: float
    intercept: float
    residual: float
    stderr: float


def rate_fit(pairs) -> RateFit:
    """Least-squares slope of ``log error`` against ``log eps``."""
    pairs = np.asarray(pairs, dtype=float)
    if pairs.ndim != 2 or pairs.shape[0] < 3:
        raise ValueError("need at least three (eps, error) pairs")
    if np.any(pairs <= 0):
        raise ValueError("eps and error entries must be positive")
    x, y = np.log(pairs[:, 0]), np.log(pairs[:, 1])
    A = np.column_stack([x, np.ones_like(x)])
    coef, res, _, _ = np.linalg.lstsq(A, y, rcond=None)
    r = y - A @ coef
    dof = max(1, x.size - 2)
    sxx = float(np.sum((x - x.mean()) ** 2))
    stderr = float(np.sqrt(np.sum(r ** 2) / dof / sxx)) if sxx > 0 else float("nan")
    return RateFit(float(coef[0]), float(coef[1]), float(np.linalg.norm(r)), stderr)


# -- convergence --------------------------------------------------------------------


@dataclass
class ConvergenceReport:
    rows: list = field(default_factory=list)
    slopes: dict = field(default_factory=dict)
    max_width_ratio: dict = field(default_factory=dict)
    max_thickness_ratio: dict = field(default_factory=dict)
    max_circulation_drift: dict = field(default_factory=dict)
    halted: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"rows": self.rows,
                "slopes": {k: asdict(v) for k, v in self.slopes.items()},
                "max_width_ratio": self.max_width_ratio,
                "max_thickness_ratio": self.max_thickness_ratio,
                "max_circulation_drift": self.max_circulation_drift,
                "halted": self.halted}


def layered_errors(w: LayeredState, ref: ReferenceState) -> tuple[float, float]:
    """``sup_l |nu_l - nu0|`` and ``|sum_l weight varpi_l - varpi0|`` on the shared grid."""
    e_nu = float(np.max(np.abs(w.w1 - ref.nu0.values[None, :])))
    agg = w.l_weights @ w.w4
    e_varpi = float(np.max(np.abs(agg - ref.varpi0.values)))
    return e_nu, e_varpi


def _resolve_threads(threads: int) -> int:
    return (os.cpu_count() or 1) if threads == 0 else max(1, threads)


def _run_layered(spec: ExperimentSpec, eps: float) -> Trajectory:
    w = spec.layered_state(eps)
    evo = spec.evolution()
    cfg = kernel_config(w, spec.pv_rule, spec.resolution_constant)
    return integrate(w, LayeredDynamics(cfg, spec.filter_threshold), evo)


def run_reference(spec: ExperimentSpec) -> Trajectory:
    return integrate(spec.reference_state(), ReferenceDynamics(spec.pv_rule, 1, spec.filter_threshold),
                     spec.evolution())


def run_convergence(spec: ExperimentSpec) -> ConvergenceReport:
    """Layered runs for every eps against one reference sheet, compared at the comparison times."""
    ref_traj = run_reference(spec)
    with ThreadPoolExecutor(_resolve_threads(spec.threads)) as pool:
        trajs = list(pool.map(lambda e: _run_layered(spec, e), spec.epsilons))
    report = ConvergenceReport()
    times = sorted(set(spec.comparison_times) | {0.0})
    for eps, traj in zip(spec.epsilons, trajs):
        report.halted[str(eps)] = traj.reason if traj.halted else ""
        widths = support_width_monitor(traj)
        report.max_width_ratio[str(eps)] = widths.max_ratio
        report.max_thickness_ratio[str(eps)] = widths.max_thickness_ratio
        report.max_circulation_drift[str(eps)] = conservation_monitor(traj).max_drift
        for t in times:
            try:
                w, ref = traj.at(t), ref_traj.at(t)
            except KeyError:
                log.warning("run eps=%g stopped before t=%g; comparison dropped", eps, t)
                continue
            e_nu, e_varpi = layered_errors(w, ref)
            report.rows.append({"epsilon": eps, "time": t, "e_nu": e_nu,
                                "e_varpi": e_varpi, "e_sum": e_nu + e_varpi})
    for t in spec.comparison_times:
        rows = [r for r in report.rows if r["time"] == t]
        if len(rows) < 3:
            log.warning("fewer than three runs reached t=%g; no slope fitted", t)
            continue
        for key in ("e_nu", "e_varpi", "e_sum"):
            pairs = [(r["epsilon"], r[key]) for r in rows]
            if all(p[1] > 0 for p in pairs):
                report.slopes[f"{key}@{t:g}"] = rate_fit(pairs)
    return report


# -- jump relations -----------------------------------------------------------------


@dataclass
class JumpTestReport:
    epsilon: float
    mean_discrepancy: float
    corrected_discrepancy: float
    jump_error: float


def mid_sheet(w: LayeredState) -> tuple[np.ndarray, np.ndarray]:
    """Offset of the ``l = 0`` curve (linear in l between nodes) and the aggregated density."""
    nodes = w.l_nodes
    j = int(np.clip(np.searchsorted(nodes, 0.0), 1, nodes.size - 1))
    a = (0.0 - nodes[j - 1]) / (nodes[j] - nodes[j - 1])
    nu_mid = (1 - a) * w.w1[j - 1] + a * w.w1[j]
    return nu_mid, w.l_weights @ w.w4


def jump_relation_test(w: LayeredState, cfg: KernelEvalConfig | None = None) -> JumpTestReport:
    """Compare layer velocities against the single sheet carrying the total density.

    * two-sided mean ``(U(l_min) + U(l_max)) / 2`` against the sheet's principal value;
    * every layer against the principal value plus the half-jump
      ``gamma' / (2|gamma'|^2) (sum_{mu > l} - sum_{mu < l}) weight varpi``;
    * the tangential difference ``(U(l_min) - U(l_max)) . gamma'`` against the total density.

    Layers are ordered so that larger ``l`` lies on the side ``Gamma'^perp`` points to.
    """
    if cfg is None:
        cfg = kernel_config(w)
    nu_mid, total = mid_sheet(w)
    if not np.any(total) and not np.any(w.w4):
        return JumpTestReport(w.epsilon, 0.0, 0.0, 0.0)
    U = assemble_velocity(w, cfg)
    K = k0(nu_mid, total, w.curve, cfg.pv_rule)
    g = w.curve.on_grid(w.n_points)
    tang = g[1] + nu_mid * perp(g[2]) + derivative(nu_mid) * perp(g[1])
    t2 = tang[0] ** 2 + tang[1] ** 2
    mean = 0.5 * (U[0] + U[-1])
    mean_disc = float(np.max(np.abs(mean - K)))
    mass = w.l_weights[:, None] * w.w4
    worst = 0.0
    for i in range(w.l_nodes.size):
        side = mass[i + 1:].sum(axis=0) - mass[:i].sum(axis=0)
        pred = K + tang * side / (2 * t2)
        worst = max(worst, float(np.max(np.abs(U[i] - pred))))
    jump = ((U[0] - U[-1]) * tang).sum(axis=0)
    return JumpTestReport(w.epsilon, mean_disc, worst, float(np.max(np.abs(jump - total))))


def jump_sweep(spec: ExperimentSpec, epsilons=None) -> tuple[list, dict]:
    """Jump reports on the initial states of ``spec`` and slopes of each discrepancy against eps."""
    epsilons = spec.epsilons if epsilons is None else epsilons
    reports = [jump_relation_test(spec.layered_state(e)) for e in epsilons]
    slopes = {}
    for key in ("mean_discrepancy", "corrected_discrepancy", "jump_error"):
        pairs = [(r.epsilon, getattr(r, key)) for r in reports]
        if len(pairs) >= 3 and all(p[1] > 0 for p in pairs):
            slopes[key] = rate_fit(pairs)
    return reports, slopes
