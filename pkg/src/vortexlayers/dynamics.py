"""Layered state, effective right-hand side, reference sheet and RK4 stepping."""
from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .geometry import CurveSpec, FrameDegeneracyError, frame_from_derivatives
from .kernels import (KernelEvalConfig, LayerCrossingError, NearCoincidenceError,
                      auto_upsample, k0, layer_integrals, layer_velocities)
from .spectral import (IndeterminateFitError, SpectralField, derivative,
                       estimate_analyticity_radius, filter_modes)

log = logging.getLogger(__name__)

SUPPORT_HALF_WIDTH = 0.5
MONITOR_HALF_WIDTH = 0.75


class SupportError(ValueError):
    """Initial density does not vanish outside the allowed layer range."""


class CFLError(ValueError):
    """Time step above the transport stability bound."""


def layer_nodes(n_layers: int) -> tuple[np.ndarray, np.ndarray]:
    """Composite midpoint nodes on [-1, 1] and their weights ``2/L``."""
    if n_layers < 2:
        raise ValueError("need at least two layers")
    nodes = -1.0 + (2.0 * np.arange(n_layers) + 1.0) / n_layers
    return nodes, np.full(n_layers, 2.0 / n_layers)


@dataclass(frozen=True, eq=False)
class LayeredState:
    """Fields ``w1 = nu``, ``w3 = d_l eta``, ``w4 = varpi`` as (L, N) arrays."""

    curve: CurveSpec
    epsilon: float
    l_nodes: np.ndarray
    l_weights: np.ndarray
    w1: np.ndarray
    w3: np.ndarray
    w4: np.ndarray
    time: float = 0.0

    @property
    def n_points(self) -> int:
        return self.w1.shape[-1]

    @property
    def w2(self) -> np.ndarray:
        return derivative(self.w1)

    def fields(self) -> tuple:
        return (self.w1, self.w3, self.w4)

    def advance(self, fields, time: float) -> "LayeredState":
        w1, w3, w4 = fields
        return replace(self, w1=w1, w3=w3, w4=w4, time=time)

    def circulations(self) -> np.ndarray:
        return self.w4.mean(axis=-1)

    def active_layers(self) -> np.ndarray:
        return np.nonzero(np.max(np.abs(self.w4), axis=-1) > 0)[0]


@dataclass(frozen=True, eq=False)
class ReferenceState:
    """Birkhoff-Rott sheet written as the graph ``Gamma + nu0 Gamma'^perp``."""

    curve: CurveSpec
    nu0: SpectralField
    varpi0: SpectralField
    time: float = 0.0

    @property
    def n_points(self) -> int:
        return self.nu0.grid.n_points

    def fields(self) -> tuple:
        return (self.nu0.values, self.varpi0.values)

    def advance(self, fields, time: float) -> "ReferenceState":
        nu, varpi = fields
        return replace(self, nu0=SpectralField.from_values(nu),
                       varpi0=SpectralField.from_values(varpi), time=time)

    def circulation(self) -> float:
        return float(self.varpi0.values.mean())


@dataclass(frozen=True)
class EvolutionConfig:
    """Time-stepping settings.

    ``dt=None`` picks the largest step allowed by the CFL bound at t=0.
    ``project=True`` restores the layer coupling of ``w1`` after every step.
    """

    t_end: float
    dt: float | None = None
    filter_threshold: float = 1e-12
    cfl: float = 0.5
    output_times: tuple = ()
    speed_cap: float = 1e3
    residual_cap: float = 1e-3
    project: bool = False
    pv_rule: str = "alternate-point"
    resolution_constant: float = 4.0
    upsample: int | None = None

    def __post_init__(self):
        if self.t_end < 0:
            raise ValueError("t_end must be nonnegative")
        if self.dt is not None and self.dt < 0:
            raise ValueError("dt must be positive")
        if self.filter_threshold < 0:
            raise ValueError("filter_threshold must be nonnegative")
        if self.cfl <= 0:
            raise ValueError("cfl must be positive")
        if any(t < 0 or t > self.t_end for t in self.output_times):
            raise ValueError("output_times must lie in [0, t_end]")


def build_initial_state(curve: CurveSpec, eta0, varpi0, epsilon: float,
                        l_nodes=None, l_weights=None, n_layers: int = 8) -> LayeredState:
    """Layers ``nu_l = eps (l + eta0(s))`` with flat ``w3`` and densities ``varpi0``.

    ``varpi0`` is an (L, N) array or a callable ``f(l, s)`` broadcasting over
    an (L, 1) column of layer values and an (N,) row of nodes.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    eta = eta0 if isinstance(eta0, SpectralField) else SpectralField.from_values(np.asarray(eta0, float))
    n = eta.grid.n_points
    if l_nodes is None:
        l_nodes, l_weights = layer_nodes(n_layers)
    l_nodes = np.asarray(l_nodes, dtype=float)
    if l_weights is None:
        raise ValueError("l_weights required with explicit l_nodes")
    l_weights = np.asarray(l_weights, dtype=float)
    if callable(varpi0):
        w4 = np.asarray(varpi0(l_nodes[:, None], eta.grid.nodes[None, :]), dtype=float)
        w4 = np.broadcast_to(w4, (l_nodes.size, n)).copy()
    else:
        w4 = np.array(varpi0, dtype=float)
    if w4.shape != (l_nodes.size, n):
        raise ValueError(f"varpi0 must have shape {(l_nodes.size, n)}")
    outside = np.abs(l_nodes) >= SUPPORT_HALF_WIDTH
    if np.any(w4[outside] != 0):
        bad = l_nodes[outside][np.any(w4[outside] != 0, axis=-1)]
        raise SupportError(f"density must vanish for |l| >= 1/2; nonzero on layers {bad.tolist()}")
    w1 = epsilon * (l_nodes[:, None] + eta.values[None, :])
    return LayeredState(curve, float(epsilon), l_nodes, l_weights, w1,
                        np.zeros_like(w1), w4, 0.0)


def admissibility_residual(w: LayeredState) -> float:
    """Largest violation of ``w1[l] - w1[ell] = eps int_ell^l (1 + w3)`` over layer pairs."""
    r = w.w1 - w.epsilon * layer_integrals(w.w3, w.l_nodes)
    return float(np.max(r.max(axis=0) - r.min(axis=0)))


def project_admissible(w: LayeredState) -> LayeredState:
    """Closest admissible ``w1`` (in the layer-mean sense) for the current ``w3``."""
    cum = w.epsilon * layer_integrals(w.w3, w.l_nodes)
    r = w.w1 - cum
    return replace(w, w1=cum + r.mean(axis=0))


def kernel_config(w: LayeredState, pv_rule: str = "alternate-point",
                  resolution_constant: float = 4.0, upsample: int | None = None) -> KernelEvalConfig:
    """Quadrature settings meeting the resolution guard for the layer spacing of ``w``."""
    gap = float(np.min(np.diff(w.l_nodes)))
    if upsample is None:
        upsample = auto_upsample(w.n_points, w.epsilon, gap, resolution_constant)
    cfg = KernelEvalConfig(w.n_points, w.epsilon, pv_rule, upsample, resolution_constant)
    cfg.check_resolution(gap)
    return cfg


def assemble_velocity(w: LayeredState, cfg: KernelEvalConfig, layers=None) -> np.ndarray:
    """Weighted sum over source layers of the layer kernel velocities, shape (T, 2, N)."""
    targets = list(range(w.l_nodes.size)) if layers is None else list(np.atleast_1d(layers))
    sources = w.active_layers()
    if sources.size == 0:
        return np.zeros((len(targets), 2, w.n_points))
    k = layer_velocities(w, cfg, targets, sources)
    return np.einsum("tsdn,s->tdn", k, w.l_weights[sources])


def _frame_at(curve: CurveSpec, nu: np.ndarray):
    g = curve.on_grid(nu.shape[-1])
    return frame_from_derivatives(g[1][:, None, :] if nu.ndim == 2 else g[1],
                                  g[2][:, None, :] if nu.ndim == 2 else g[2],
                                  g[3][:, None, :] if nu.ndim == 2 else g[3], nu)


def project_components(U: np.ndarray, curve: CurveSpec, nu: np.ndarray):
    """``(U^n, U^s, kappa . U)`` in the frame at offsets ``nu``.

    ``U`` has shape (2, N) or (2, L, N) matching ``nu`` of shape (N,) or (L, N).
    """
    e_s, e_n, v, kappa = _frame_at(curve, nu)
    un = (U * e_n).sum(axis=0)
    us = (U * v).sum(axis=0)
    ku = (U * kappa).sum(axis=0)
    return un, us, ku


def _dot_frame(U_tl, w: LayeredState):
    # U_tl: (L, 2, N) -> components per layer
    return project_components(np.moveaxis(U_tl, 1, 0), w.curve, w.w1)


class LayeredDynamics:
    """Callable right-hand side ``(F1, F3, F4)`` that remembers the largest speed it saw."""

    def __init__(self, cfg: KernelEvalConfig, filter_threshold: float = 1e-12):
        self.cfg = cfg
        self.filter_threshold = filter_threshold
        self.max_speed = 0.0

    def velocity(self, w: LayeredState) -> np.ndarray:
        U = assemble_velocity(w, self.cfg)
        self.max_speed = max(self.max_speed, float(np.max(np.hypot(U[:, 0], U[:, 1]))))
        return U

    def __call__(self, w: LayeredState) -> tuple:
        return rhs(w, self.cfg, self.filter_threshold, velocity=self.velocity(w))

    def guard(self, w: LayeredState) -> None:
        if np.min(1.0 + w.w3) <= 0:
            raise LayerCrossingError("1 + w3 <= 0: layers crossed")

    def diagnostics(self, w: LayeredState, w0: LayeredState) -> dict:
        rho = {}
        for name, arr in (("w1", w.w1), ("w3", w.w3), ("w4", w.w4)):
            vals = []
            for row in arr:
                try:
                    vals.append(estimate_analyticity_radius(SpectralField.from_values(row)))
                except IndeterminateFitError:
                    pass
            rho["rho_" + name] = min(vals) if vals else math.nan
        far = np.abs(w.l_nodes) > MONITOR_HALF_WIDTH
        if np.any(w.w4[far] != 0):
            log.warning("density nonzero beyond |l| = 3/4 at t=%g", w.time)
        return {**rho,
                "admissibility": admissibility_residual(w),
                "circulation_drift": float(np.max(np.abs(w.circulations() - w0.circulations())))}


def rhs(w: LayeredState, cfg: KernelEvalConfig, filter_threshold: float = 1e-12,
        velocity: np.ndarray | None = None) -> tuple:
    """``(F1, F3, F4)`` for every layer.

    F1 = U^n - U^s w2, F3 = (kappa.U)(1 + w3) - d_s(U^s (1 + w3)), F4 = -d_s(U^s w4).
    """
    if np.min(1.0 + w.w3) <= 0:
        raise LayerCrossingError("1 + w3 <= 0: layers crossed")
    U = assemble_velocity(w, cfg) if velocity is None else velocity
    un, us, ku = _dot_frame(U, w)
    stretch = 1.0 + w.w3
    f1 = un - us * w.w2
    f3 = ku * stretch - derivative(filter_modes(us * stretch, filter_threshold))
    f4 = -derivative(filter_modes(us * w.w4, filter_threshold))
    return f1, f3, f4


def reference_rhs(ref: ReferenceState, pv_rule: str = "alternate-point", upsample: int = 1,
                  filter_threshold: float = 0.0) -> tuple:
    """``(d nu0, d varpi0)`` for the graph-form Birkhoff-Rott sheet."""
    nu = ref.nu0.values
    varpi = ref.varpi0.values
    u = k0(nu, varpi, ref.curve, pv_rule, upsample)
    un, us, _ = project_components(u, ref.curve, nu)
    dnu = un - us * derivative(nu)
    dvarpi = -derivative(filter_modes(us * varpi, filter_threshold))
    return dnu, dvarpi


class ReferenceDynamics:
    def __init__(self, pv_rule: str = "alternate-point", upsample: int = 1,
                 filter_threshold: float = 1e-12):
        self.pv_rule = pv_rule
        self.upsample = upsample
        self.filter_threshold = filter_threshold
        self.max_speed = 0.0

    def __call__(self, ref: ReferenceState) -> tuple:
        u = k0(ref.nu0.values, ref.varpi0.values, ref.curve, self.pv_rule, self.upsample)
        self.max_speed = max(self.max_speed, float(np.max(np.hypot(u[0], u[1]))))
        return reference_rhs(ref, self.pv_rule, self.upsample, self.filter_threshold)

    def guard(self, ref: ReferenceState) -> None:
        pass

    def diagnostics(self, ref: ReferenceState, ref0: ReferenceState) -> dict:
        rho = {}
        for name, f in (("nu0", ref.nu0), ("varpi0", ref.varpi0)):
            try:
                rho["rho_" + name] = estimate_analyticity_radius(f)
            except IndeterminateFitError:
                rho["rho_" + name] = math.nan
        return {**rho, "circulation_drift": abs(ref.circulation() - ref0.circulation())}


def rk4_step(state, rhs_fn, dt: float):
    """Classical four-stage Runge-Kutta step for states exposing ``fields``/``advance``."""
    if dt == 0:
        return state
    y = state.fields()
    t = state.time

    def shifted(k, c):
        return state.advance(tuple(a + c * b for a, b in zip(y, k)), t + c)

    k1 = rhs_fn(state)
    k2 = rhs_fn(shifted(k1, 0.5 * dt))
    k3 = rhs_fn(shifted(k2, 0.5 * dt))
    k4 = rhs_fn(shifted(k3, dt))
    new = tuple(a + dt / 6.0 * (b1 + 2 * b2 + 2 * b3 + b4)
                for a, b1, b2, b3, b4 in zip(y, k1, k2, k3, k4))
    return state.advance(new, t + dt)


@dataclass
class StepDiagnostics:
    time: float
    dt: float
    max_speed: float
    values: dict = field(default_factory=dict)

    def row(self) -> dict:
        return {"time": self.time, "dt": self.dt, "max_speed": self.max_speed, **self.values}


@dataclass
class Trajectory:
    states: list
    diagnostics: list
    halted: bool = False
    reason: str = ""

    @property
    def times(self) -> np.ndarray:
        return np.array([s.time for s in self.states])

    @property
    def final(self):
        return self.states[-1]

    def at(self, t: float, tol: float = 1e-9):
        """State recorded at time ``t``; raises KeyError if none was."""
        for s in self.states:
            if abs(s.time - t) <= tol:
                return s
        raise KeyError(f"no state recorded at t={t}")


class GuardHalt(RuntimeError):
    """A runtime guard stopped the integration."""


def cfl_limit(n_points: int, max_speed: float, cfl: float = 0.5) -> float:
    if max_speed <= 0:
        return math.inf
    return cfl / (n_points * max_speed)


def _filter_state(state, threshold: float):
    if threshold <= 0:
        return state
    return state.advance(tuple(filter_modes(a, threshold) for a in state.fields()), state.time)


def integrate(state, dynamics, cfg: EvolutionConfig) -> Trajectory:
    """Fixed-step RK4 from ``state.time`` to ``t_end`` landing exactly on ``output_times``.

    ``dynamics`` is a :class:`LayeredDynamics` or :class:`ReferenceDynamics`.
    Guard trips (speed or admissibility caps, layer crossing, frame degeneracy,
    curve self-approach) stop the run and return the prefix with ``halted=True``.
    """
    dynamics.max_speed = 0.0
    dynamics(state)
    speed0 = dynamics.max_speed
    limit = cfl_limit(state.n_points, speed0, cfg.cfl)
    dt_max = cfg.dt if cfg.dt is not None else (limit if math.isfinite(limit) else cfg.t_end or 1.0)
    if cfg.dt is not None and cfg.dt > limit * (1 + 1e-12):
        raise CFLError(f"dt={cfg.dt} exceeds the CFL bound {limit:.4g} "
                       f"(cfl={cfg.cfl}, max|U|={speed0:.4g}, N={state.n_points})")
    state0 = state
    traj = Trajectory([state], [StepDiagnostics(state.time, 0.0, speed0, dynamics.diagnostics(state, state0))])
    marks = sorted({t for t in cfg.output_times if t > state.time} | {cfg.t_end})
    if cfg.t_end <= state.time or dt_max == 0:
        return traj
    try:
        for mark in marks:
            span = mark - state.time
            if span <= 0:
                continue
            n_steps = max(1, math.ceil(span / dt_max - 1e-9))
            dt = span / n_steps
            for i in range(n_steps):
                dynamics.max_speed = 0.0
                new = rk4_step(state, dynamics, dt)
                t_new = mark if i == n_steps - 1 else new.time
                new = _filter_state(new.advance(new.fields(), t_new), cfg.filter_threshold)
                if cfg.project and isinstance(new, LayeredState):
                    new = project_admissible(new)
                dynamics.guard(new)
                diag = StepDiagnostics(new.time, dt, dynamics.max_speed, dynamics.diagnostics(new, state0))
                state = new
                traj.states.append(state)
                traj.diagnostics.append(diag)
                if not np.all(np.isfinite(np.concatenate([a.ravel() for a in state.fields()]))):
                    raise GuardHalt(f"non-finite field at t={state.time:.6g}")
                if diag.max_speed > cfg.speed_cap:
                    raise GuardHalt(f"max|U|={diag.max_speed:.3g} exceeds cap {cfg.speed_cap:g} at t={state.time:.6g}")
                res = diag.values.get("admissibility", 0.0)
                if res > cfg.residual_cap:
                    raise GuardHalt(f"admissibility residual {res:.3g} exceeds cap {cfg.residual_cap:g} at t={state.time:.6g}")
    except (GuardHalt, LayerCrossingError, FrameDegeneracyError, NearCoincidenceError) as exc:
        log.warning("integration halted: %s", exc)
        traj.halted = True
        traj.reason = f"{type(exc).__name__}: {exc}"
    return traj


# -- checkpoints -------------------------------------------------------------------


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def fmt(x) -> str:
    return "%.17g" % x


def write_csv(path, columns: list, rows, digest: str) -> None:
    """Comma-separated table preceded by a ``# config_sha256=`` line and a header row."""
    lines = [f"# config_sha256={digest}", ",".join(columns)]
    for r in rows:
        lines.append(",".join(v if isinstance(v, str) else fmt(v) for v in r))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def state_rows(state) -> tuple[list, list]:
    if isinstance(state, LayeredState):
        nodes = np.arange(state.n_points) / state.n_points
        rows = [(int(i), state.l_nodes[i], nodes[j], state.w1[i, j], state.w3[i, j], state.w4[i, j])
                for i in range(state.l_nodes.size) for j in range(state.n_points)]
        return ["layer", "l", "s", "w1", "w3", "w4"], rows
    nodes = state.nu0.grid.nodes
    rows = [(nodes[j], state.nu0.values[j], state.varpi0.values[j]) for j in range(state.n_points)]
    return ["s", "nu0", "varpi0"], rows


def write_checkpoint(state, prefix, digest: str) -> None:
    """``prefix.json`` with metadata and ``prefix.csv`` with the fields per layer and node."""
    prefix = str(prefix)
    meta = {"config_sha256": digest, "time": state.time, "n_points": state.n_points,
            "curve": state.curve.to_json()}
    if isinstance(state, LayeredState):
        meta.update(epsilon=state.epsilon, l_nodes=state.l_nodes.tolist(),
                    l_weights=state.l_weights.tolist(),
                    admissibility=admissibility_residual(state),
                    circulations=state.circulations().tolist())
    else:
        meta.update(circulation=state.circulation())
    Path(prefix + ".json").write_text(json.dumps(meta, indent=2, sort_keys=True), encoding="utf-8")
    cols, rows = state_rows(state)
    write_csv(prefix + ".csv", cols, rows, digest)


def write_diagnostics(traj: Trajectory, path, digest: str) -> None:
    rows = [d.row() for d in traj.diagnostics]
    cols = list(rows[0].keys())
    write_csv(path, cols, [[r[c] for c in cols] for r in rows], digest)
