"""Closed analytic curves, arclength parametrization and the tubular chart.

A curve is stored as Fourier coefficients of its two components on T.  The
normal offset ``n`` is measured along ``dGamma/ds`` rotated by +90 degrees,
which points into the enclosed region for counterclockwise curves.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .spectral import fourier_eval, wavenumbers


class FrameDegeneracyError(ValueError):
    """Normal offset lies outside the admissible tube (``|e_s| < 1/2``)."""


class ChartError(ValueError):
    """Point could not be located in the tubular chart."""


def perp(v: np.ndarray) -> np.ndarray:
    """Rotate by +90 degrees: ``(v1, v2) -> (-v2, v1)`` on the leading axis."""
    return np.stack([-v[1], v[0]])


@dataclass(frozen=True, eq=False)
class CurveSpec:
    """Fourier representation of a closed plane curve Gamma: T -> R^2.

    ``x_coeffs``/``y_coeffs`` are FFT-ordered complex coefficients of
    ``exp(2 pi i k s)``.  ``rho0`` is the nominal analyticity half-width.
    """

    x_coeffs: np.ndarray
    y_coeffs: np.ndarray
    length: float = 1.0
    rho0: float = 0.1
    _cache: dict = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        x = np.asarray(self.x_coeffs, dtype=complex)
        y = np.asarray(self.y_coeffs, dtype=complex)
        if x.shape != y.shape or x.ndim != 1 or x.size % 2:
            raise ValueError("coefficient arrays must share one even length")
        object.__setattr__(self, "x_coeffs", x)
        object.__setattr__(self, "y_coeffs", y)

    @property
    def n_modes(self) -> int:
        return self.x_coeffs.size

    def derivative_coeffs(self, order: int) -> tuple[np.ndarray, np.ndarray]:
        k = wavenumbers(self.n_modes)
        mult = (2j * np.pi * k) ** order
        if order:
            mult[self.n_modes // 2] = 0.0
        return self.x_coeffs * mult, self.y_coeffs * mult

    def evaluate(self, s, order: int = 0) -> np.ndarray:
        """Gamma^{(order)}(s) as a (2, ...) array; complex ``s`` gives the complexification."""
        cx, cy = self.derivative_coeffs(order)
        s = np.asarray(s)
        out = np.stack([fourier_eval(cx, s), fourier_eval(cy, s)])
        return out.real if not np.iscomplexobj(s) else out

    def on_grid(self, n: int, shift: float = 0.0) -> np.ndarray:
        """Cached ``(4, 2, n)`` array of Gamma and its first three derivatives at ``(j + shift)/n``."""
        key = (n, shift)
        if key not in self._cache:
            s = (np.arange(n) + shift) / n
            self._cache[key] = np.stack([self.evaluate(s, m) for m in range(4)])
        return self._cache[key]

    def signed_area(self, n: int = 512) -> float:
        g = self.on_grid(n)
        return 0.5 * float(np.mean(g[0, 0] * g[1, 1] - g[0, 1] * g[1, 0]))

    def to_json(self) -> dict:
        def cs(c):
            n = c.size
            cos = [c[0].real] + [2 * c[k].real for k in range(1, n // 2)] + [c[n // 2].real]
            sin = [0.0] + [-2 * c[k].imag for k in range(1, n // 2)] + [0.0]
            return {"cos": [float(v) for v in cos], "sin": [float(v) for v in sin]}

        return {"x": cs(self.x_coeffs), "y": cs(self.y_coeffs), "rho0": self.rho0,
                "length": self.length}


def coeffs_from_cos_sin(cos, sin=(), n_modes: int | None = None) -> np.ndarray:
    """FFT-ordered coefficients for ``sum_k a_k cos(2 pi k s) + b_k sin(2 pi k s)``."""
    cos = list(cos)
    sin = list(sin)
    kmax = max(len(cos), len(sin))
    n = n_modes or max(8, 2 * kmax + 2)
    if n % 2 or n < 2 * kmax:
        raise ValueError("n_modes too small for the given coefficients")
    c = np.zeros(n, dtype=complex)
    for k in range(kmax):
        a = cos[k] if k < len(cos) else 0.0
        b = sin[k] if k < len(sin) else 0.0
        if k == 0:
            c[0] = a
        else:
            c[k] += 0.5 * (a - 1j * b)
            c[-k] += 0.5 * (a + 1j * b)
    return c


def curve_from_json(doc: dict | str | Path, n_modes: int | None = None) -> CurveSpec:
    """Build a curve from ``{"x": {"cos": [...], "sin": [...]}, "y": {...}, "rho0": r}``."""
    if not isinstance(doc, dict):
        doc = json.loads(Path(doc).read_text())
    kmax = max(len(doc[c].get(p, ())) for c in ("x", "y") for p in ("cos", "sin"))
    n = n_modes or max(8, 2 * kmax + 2)
    x = coeffs_from_cos_sin(doc["x"].get("cos", ()), doc["x"].get("sin", ()), n)
    y = coeffs_from_cos_sin(doc["y"].get("cos", ()), doc["y"].get("sin", ()), n)
    return CurveSpec(x, y, float(doc.get("length", 1.0)), float(doc.get("rho0", 0.1)))


def curve_from_samples(points: np.ndarray, rho0: float = 0.1, length: float = 1.0) -> CurveSpec:
    n = points.shape[-1]
    return CurveSpec(np.fft.fft(points[0]) / n, np.fft.fft(points[1]) / n, length, rho0)


def circle(rho0: float = 0.5) -> CurveSpec:
    """Counterclockwise circle of unit length centred at the origin."""
    r = 1.0 / (2.0 * np.pi)
    return curve_from_json({"x": {"cos": [0, r]}, "y": {"sin": [0, r]}, "rho0": rho0})


def ellipse(a: float, b: float, n_modes: int = 256, rho0: float = 0.05) -> CurveSpec:
    """Unit-length arclength-parametrized ellipse with semi-axes proportional to (a, b)."""
    raw = curve_from_json({"x": {"cos": [0, a]}, "y": {"sin": [0, b]}, "rho0": rho0})
    return reparametrize_arclength(raw, n_fit=n_modes)


def reparametrize_arclength(raw_curve: CurveSpec, n_fit: int = 256,
                            orient: bool = True) -> CurveSpec:
    """Unit-length, unit-speed reparametrization of ``raw_curve``.

    Cumulative arclength is integrated spectrally and inverted by Newton
    iteration at ``n_fit`` equispaced targets; the curve is rescaled to unit
    length and its coefficients are re-fitted on that grid.  With ``orient``
    the parameter direction is reversed when needed to make the curve
    counterclockwise.
    """
    m = max(n_fit, raw_curve.n_modes)
    if m % 2:
        m += 1
    # speed field on a fine grid for the spectral antiderivative
    n_q = 4 * m
    t = np.arange(n_q) / n_q
    d1 = raw_curve.evaluate(t, 1)
    speed = np.hypot(d1[0], d1[1])
    if np.min(speed) < 1e-12 * max(np.max(speed), 1e-300):
        j = int(np.argmin(speed))
        raise ValueError(f"vanishing tangent at node {j} (t={t[j]:.6f})")
    sp_modes = np.fft.fft(speed) / n_q
    length = sp_modes[0].real
    k = wavenumbers(n_q)
    anti = np.zeros_like(sp_modes)
    nz = k != 0
    anti[nz] = sp_modes[nz] / (2j * np.pi * k[nz])

    def arclength(tt):
        return length * tt + (fourier_eval(anti, tt) - fourier_eval(anti, 0.0)).real

    def speed_at(tt):
        return fourier_eval(sp_modes, tt).real

    sigma = np.arange(m) / m
    tt = sigma.copy()
    for _ in range(50):
        step = (arclength(tt) - length * sigma) / speed_at(tt)
        tt = tt - step
        if np.max(np.abs(step)) < 1e-15:
            break
    pts = raw_curve.evaluate(tt) / length
    curve = curve_from_samples(pts, raw_curve.rho0)
    if orient and curve.signed_area() < 0:
        flipped = np.concatenate([pts[:, :1], pts[:, :0:-1]], axis=1)
        curve = curve_from_samples(flipped, raw_curve.rho0)
    return curve


@dataclass(frozen=True)
class FrameSample:
    e_s: np.ndarray
    e_n: np.ndarray
    kappa: np.ndarray
    s: np.ndarray
    n: np.ndarray


def frame_from_derivatives(d1, d2, d3, n, check: bool = True):
    """(e_s, e_n, e_s/|e_s|^2, kappa) from curve derivatives at fixed offsets ``n``."""
    e_n = perp(d1)
    e_s = d1 + n * perp(d2)
    norm2 = e_s[0] ** 2 + e_s[1] ** 2
    if check and np.min(norm2) < 0.25:
        raise FrameDegeneracyError(
            f"|e_s| = {math.sqrt(np.min(norm2)):.3f} < 1/2: offset outside the admissible tube")
    ds_e = d2 + n * perp(d3)
    v = e_s / norm2
    kappa = ds_e / norm2 - 2.0 * e_s * (e_s[0] * ds_e[0] + e_s[1] * ds_e[1]) / norm2 ** 2
    return e_s, e_n, v, kappa


def frame(curve: CurveSpec, s, n) -> FrameSample:
    """Chart frame at ``(s, n)``: ``e_n = Gamma'^perp``, ``e_s = Gamma' + n Gamma''^perp``.

    ``kappa = d/ds (e_s / |e_s|^2)`` at fixed ``n``, from the analytic
    derivatives of the Fourier series.
    """
    s = np.asarray(s, dtype=float)
    n = np.broadcast_to(np.asarray(n, dtype=float), s.shape)
    d1, d2, d3 = (curve.evaluate(s, m) for m in (1, 2, 3))
    e_s, e_n, _, kappa = frame_from_derivatives(d1, d2, d3, n)
    return FrameSample(e_s, e_n, kappa, s, n)


@dataclass(frozen=True)
class TubularChart:
    curve: CurveSpec
    max_radius: float

    @classmethod
    def for_curve(cls, curve: CurveSpec) -> "TubularChart":
        return cls(curve, max_tube_radius(curve))


def chart_point(chart: TubularChart | CurveSpec, s, n) -> np.ndarray:
    curve = chart.curve if isinstance(chart, TubularChart) else chart
    return curve.evaluate(s) + np.asarray(n) * perp(curve.evaluate(s, 1))


def tubular_coordinates(chart: TubularChart, x, n_seed: int = 256,
                        tol: float = 1e-12, max_iter: int = 50) -> tuple[float, float]:
    """Invert ``(s, n) -> Gamma(s) + n Gamma'(s)^perp`` by Newton from the nearest node."""
    x = np.asarray(x, dtype=float)
    curve = chart.curve
    g = curve.on_grid(n_seed)
    dist = np.hypot(g[0, 0] - x[0], g[0, 1] - x[1])
    j = int(np.argmin(dist))
    if dist[j] > chart.max_radius + 1.0 / n_seed:
        raise ChartError(f"point at distance {dist[j]:.4g} exceeds tube radius {chart.max_radius:.4g}")
    s = j / n_seed
    n = float(np.dot(x - g[0, :, j], perp(g[1, :, j])))
    for _ in range(max_iter):
        p0, p1, p2 = (curve.evaluate(s, m) for m in range(3))
        res = p0 + n * perp(p1) - x
        if np.hypot(*res) < tol:
            break
        jac = np.column_stack([p1 + n * perp(p2), perp(p1)])
        ds, dn = np.linalg.solve(jac, -res)
        s, n = s + ds, n + dn
    else:
        raise ChartError("Newton iteration did not converge in the tubular chart")
    if abs(n) > chart.max_radius:
        raise ChartError(f"|n| = {abs(n):.4g} exceeds tube radius {chart.max_radius:.4g}")
    return s % 1.0, n


def _periodic_sep(n: int) -> np.ndarray:
    idx = np.arange(n)
    sep = np.abs(idx[:, None] - idx[None, :])
    return np.minimum(sep, n - sep) / n


def check_no_self_intersection(curve: CurveSpec, rho: float, delta: float,
                               n_grid: int = 200, n_beta: int = 5,
                               atol: float = 1e-12) -> tuple[bool, float]:
    """Minimum of ``Re{(Gamma1(s+ib)-Gamma1(a+ib))^2 + (Gamma2(...)-...)^2}`` over |s-a| >= delta.

    Returns ``(passed, margin)``; passes when the margin exceeds ``atol``.
    """
    if rho > curve.rho0:
        raise ValueError("rho must not exceed the curve's rho0")
    s = np.arange(n_grid) / n_grid
    mask = _periodic_sep(n_grid) >= delta - 1e-12
    betas = np.linspace(-rho, rho, n_beta) if rho > 0 else [0.0]
    margin = np.inf
    for b in betas:
        g = curve.evaluate(s + 1j * b)
        dx = g[0][:, None] - g[0][None, :]
        dy = g[1][:, None] - g[1][None, :]
        q = (dx * dx + dy * dy).real
        margin = min(margin, float(np.min(q[mask])))
    return margin > atol, margin


def max_tube_radius(curve: CurveSpec, n_grid: int = 512, safety: float = 0.9) -> float:
    """Safe chart radius: min(1/max curvature, half the bottleneck distance) times ``safety``.

    The bottleneck distance is the minimal distance between points whose
    parameters differ by at least pi/max-curvature (capped at 1/2), which
    excludes neighbouring points on the same arc.
    """
    g = curve.on_grid(n_grid)
    kmax = float(np.max(np.hypot(g[2, 0], g[2, 1])))
    r_curv = 1.0 / kmax if kmax > 0 else np.inf
    sep_min = min(0.5, np.pi / kmax) if kmax > 0 else 0.5
    sep = _periodic_sep(n_grid)
    mask = sep >= sep_min - 0.5 / n_grid
    d = np.hypot(g[0, 0][:, None] - g[0, 0][None, :], g[0, 1][:, None] - g[0, 1][None, :])
    r_glob = 0.5 * float(np.min(d[mask]))
    return safety * min(r_curv, r_glob)
