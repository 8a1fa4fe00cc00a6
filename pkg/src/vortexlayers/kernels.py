"""Biot-Savart, Birkhoff-Rott and layer-coupling kernels.

Principal values are realized by the alternate-point rule: sources are
spectrally interpolated to the half-shifted grid, so every target sits
midway between two quadrature nodes and the odd singular part cancels
symmetrically.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .geometry import CurveSpec, perp
from .spectral import derivative, fourier_eval, resample

log = logging.getLogger(__name__)

PV_RULES = ("alternate-point", "skip-diagonal-trapezoid")


class NearCoincidenceError(ValueError):
    """Two separated curve points are closer than the quadrature can resolve."""


class BranchCutError(ValueError):
    """Complexified modulus requested where Re(z1^2 + z2^2) <= 0."""


class ResolutionError(ValueError):
    """Quadrature grid too coarse for the layer separation."""


@dataclass(frozen=True)
class KernelEvalConfig:
    """Quadrature settings.

    ``n_quad`` is the state grid size; sources are evaluated on a grid
    ``upsample`` times finer.  The resolution guard requires
    ``n_quad * upsample >= resolution_constant / (epsilon * layer_gap)``.
    """

    n_quad: int
    epsilon: float
    pv_rule: str = "alternate-point"
    upsample: int = 1
    resolution_constant: float = 4.0
    smallness_bound: float = 0.1

    def __post_init__(self):
        if self.pv_rule not in PV_RULES:
            raise ValueError(f"pv_rule must be one of {PV_RULES}")
        if self.n_quad < 8 or self.n_quad % 2:
            raise ValueError("n_quad must be even and >= 8")
        if self.upsample < 1:
            raise ValueError("upsample must be >= 1")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")

    @property
    def n_sources(self) -> int:
        return self.n_quad * self.upsample

    def required_nodes(self, layer_gap: float) -> float:
        return self.resolution_constant / (self.epsilon * layer_gap)

    def check_resolution(self, layer_gap: float) -> None:
        need = self.required_nodes(layer_gap)
        if self.n_sources < need:
            raise ResolutionError(
                f"{self.n_sources} source nodes < {need:.0f} required for "
                f"epsilon={self.epsilon}, layer gap={layer_gap}")


def auto_upsample(n_quad: int, epsilon: float, layer_gap: float,
                  resolution_constant: float = 4.0) -> int:
    return max(1, math.ceil(resolution_constant / (epsilon * layer_gap * n_quad)))


def biot_savart(x) -> np.ndarray:
    """``x^perp / (2 pi |x|^2)`` for a (2, ...) array."""
    x = np.asarray(x, dtype=float)
    r2 = x[0] ** 2 + x[1] ** 2
    if np.any(r2 == 0):
        raise ValueError("Biot-Savart kernel is singular at the origin")
    return perp(x) / (2.0 * np.pi * r2)


def complexified_modulus(z1, z2) -> np.ndarray:
    """Principal square root of ``z1^2 + z2^2``; requires a positive real part."""
    q = np.asarray(z1, dtype=complex) ** 2 + np.asarray(z2, dtype=complex) ** 2
    if np.any(q.real <= 0):
        raise BranchCutError("Re(z1^2 + z2^2) must be positive")
    return np.sqrt(q)


def _velocity_sum(targets: np.ndarray, sources: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """``sum_m K(targets_j - sources_m) weights_m`` with broadcasting over leading axes.

    targets: (..., 2, N); sources: (..., 2, M); weights: (..., M).
    """
    dx = targets[..., 0, :, None] - sources[..., 0, None, :]
    dy = targets[..., 1, :, None] - sources[..., 1, None, :]
    inv = weights[..., None, :] / (2.0 * np.pi * (dx * dx + dy * dy))
    ux = -np.einsum("...nm,...nm->...n", dy, inv)
    uy = np.einsum("...nm,...nm->...n", dx, inv)
    return np.stack([ux, uy], axis=-2)


def _check_separation(gamma_values: np.ndarray) -> None:
    n = gamma_values.shape[-1]
    h = 1.0 / n
    d = np.hypot(gamma_values[0][:, None] - gamma_values[0][None, :],
                 gamma_values[1][:, None] - gamma_values[1][None, :])
    idx = np.arange(n)
    sep = np.abs(idx[:, None] - idx[None, :])
    sep = np.minimum(sep, n - sep)
    d[sep < 2] = np.inf
    if np.min(d) < 1e-3 * h:
        i, j = np.unravel_index(np.argmin(d), d.shape)
        raise NearCoincidenceError(f"curve points {i} and {j} nearly coincide (distance {d[i, j]:.2e})")


def br_operator(gamma_values, varpi, pv_rule: str = "alternate-point",
                upsample: int = 1, check: bool = True) -> np.ndarray:
    """Principal-value Birkhoff-Rott velocity ``p.v. int K(gamma(s)-gamma(t)) varpi(t) dt`` at the nodes."""
    gamma_values = np.asarray(gamma_values, dtype=float)
    varpi = np.asarray(getattr(varpi, "values", varpi), dtype=float)
    n = gamma_values.shape[-1]
    if check:
        _check_separation(gamma_values)
    if pv_rule == "alternate-point":
        m = upsample * n
        src = resample(gamma_values, upsample, 0.5)
        w = resample(varpi, upsample, 0.5) / m
        return _velocity_sum(gamma_values, src, w)
    if pv_rule == "skip-diagonal-trapezoid":
        dx = gamma_values[0][:, None] - gamma_values[0][None, :]
        dy = gamma_values[1][:, None] - gamma_values[1][None, :]
        r2 = dx * dx + dy * dy
        np.fill_diagonal(r2, np.inf)
        inv = varpi[None, :] / (2.0 * np.pi * n * r2)
        u = np.stack([-(dy * inv).sum(axis=1), (dx * inv).sum(axis=1)])
        # diagonal limit of the regular part, in complex form u1 - i u2
        z1 = derivative(gamma_values[0]) + 1j * derivative(gamma_values[1])
        z2 = derivative(gamma_values[0], 2) + 1j * derivative(gamma_values[1], 2)
        corr = (varpi * z2 / (2 * z1 ** 2) - derivative(varpi) / z1) / (2j * np.pi * n)
        return u + np.stack([corr.real, -corr.imag])
    raise ValueError(f"unknown pv_rule {pv_rule!r}")


def graph_curve(curve: CurveSpec, nu, shift: float = 0.0) -> np.ndarray:
    """Samples of ``Gamma + nu Gamma'^perp`` on a grid matching ``nu``."""
    nu = np.asarray(nu, dtype=float)
    g = curve.on_grid(nu.shape[-1], shift)
    return g[0] + nu[..., None, :] * perp(g[1])


def layer_integrals(w3: np.ndarray, l_nodes: np.ndarray) -> np.ndarray:
    """Cumulative ``int_{l_0}^{l_i} (1 + w3) dmu`` by the trapezoid rule between layer nodes.

    Returns an (L, N) array ``G``; ``int_ell^l = G[l] - G[ell]``.
    """
    f = 1.0 + np.asarray(w3)
    dl = np.diff(l_nodes)[:, None]
    steps = 0.5 * (f[1:] + f[:-1]) * dl
    return np.concatenate([np.zeros_like(f[:1]), np.cumsum(steps, axis=0)])


def k_eps(w, l: int, ell: int, cfg: KernelEvalConfig) -> np.ndarray:
    """Velocity induced on layer ``l`` by the vorticity of layer ``ell``.

    The target curve is ``Gamma + (w1[ell] - eps * int_l^ell (1 + w3)) Gamma'^perp``,
    which coincides with layer ``l`` for admissible data; for ``l == ell`` the
    integral is a principal value.
    """
    return layer_velocities(w, cfg, targets=[l], sources=[ell])[0, 0]


def layer_velocities(w, cfg: KernelEvalConfig, targets=None, sources=None) -> np.ndarray:
    """All pairwise layer contributions ``K_eps(l, ell)`` as an (T, S, 2, N) array."""
    curve = w.curve
    n = w.w1.shape[-1]
    L = w.w1.shape[0]
    targets = list(range(L)) if targets is None else list(targets)
    sources = list(range(L)) if sources is None else list(sources)
    p = cfg.upsample
    m = n * p
    if np.min(1.0 + w.w3) <= 0:
        raise LayerCrossingError("1 + w3 <= 0: layers crossed")
    g = curve.on_grid(n)
    gs = curve.on_grid(m, 0.5)
    nu_src = resample(w.w1[sources], p, 0.5)
    src = gs[0] + nu_src[:, None, :] * perp(gs[1])
    wts = resample(w.w4[sources], p, 0.5) / m
    cum = layer_integrals(w.w3, w.l_nodes)
    out = np.empty((len(targets), len(sources), 2, n))
    nperp = perp(g[1])
    for a, l in enumerate(targets):
        # target offsets per source layer: nu_ell - eps * int_l^ell (1 + w3)
        offs = w.w1[sources] - w.epsilon * (cum[sources] - cum[l])
        tgt = g[0] + offs[:, None, :] * nperp
        out[a] = _velocity_sum(tgt, src, wts)
    return out


class LayerCrossingError(ValueError):
    """Layers crossed (1 + w3 <= 0)."""


def k0(nu1, varpi, curve: CurveSpec, pv_rule: str = "alternate-point",
       upsample: int = 1) -> np.ndarray:
    """Principal-value velocity of the single sheet ``Gamma + nu1 Gamma'^perp`` with density ``varpi``."""
    nu1 = np.asarray(getattr(nu1, "values", nu1), dtype=float)
    return br_operator(graph_curve(curve, nu1), varpi, pv_rule, upsample)


@dataclass(frozen=True)
class LowerBoundReport:
    min_ratio: float
    argmin: dict
    n_samples: int


def kernel_lower_bound_check(w, cfg: KernelEvalConfig, beta_grid=None, rho: float = 0.05,
                             n_samples: int = 1000, seed: int = 0) -> LowerBoundReport:
    """Minimum of ``Re|d_{l,ell}(s+ib, t+ib)|_C^2 / (|s-t|^2 + eps^2 |l-ell|^2)`` over random samples.

    All fields are continued into the strip through their Fourier series.
    Samples with ``s == t`` and ``l == ell`` are excluded.
    """
    rng = np.random.default_rng(seed)
    L, n = w.w1.shape
    if np.max(np.abs(w.w1)) > cfg.smallness_bound or np.max(np.abs(w.w3)) > cfg.smallness_bound:
        log.warning("state outside the configured smallness regime (bound %g)", cfg.smallness_bound)
    betas = np.asarray(beta_grid) if beta_grid is not None else None
    s = rng.random(n_samples)
    t = rng.random(n_samples)
    beta = (rng.choice(betas, n_samples) if betas is not None
            else rng.uniform(-rho, rho, n_samples))
    li = rng.integers(0, L, n_samples)
    lj = rng.integers(0, L, n_samples)
    keep = ~((li == lj) & (s == t))
    s, t, beta, li, lj = s[keep], t[keep], beta[keep], li[keep], lj[keep]
    z, zeta = s + 1j * beta, t + 1j * beta
    curve = w.curve
    w1_modes = np.fft.fft(w.w1, axis=-1) / n
    cum = layer_integrals(w.w3, w.l_nodes)
    cum_modes = np.fft.fft(cum, axis=-1) / n
    ratios = np.empty(s.size)
    for j in range(s.size):
        a, b = li[j], lj[j]
        nu_z = fourier_eval(w1_modes[b], z[j])
        nu_zeta = fourier_eval(w1_modes[b], zeta[j])
        g_z = fourier_eval(cum_modes[b] - cum_modes[a], z[j])
        gz = curve.evaluate(np.array(z[j]))
        gzeta = curve.evaluate(np.array(zeta[j]))
        tz = perp(curve.evaluate(np.array(z[j]), 1))
        tzeta = perp(curve.evaluate(np.array(zeta[j]), 1))
        d = gz - gzeta + (nu_z - w.epsilon * g_z) * tz - nu_zeta * tzeta
        num = (d[0] ** 2 + d[1] ** 2).real
        ds = abs(s[j] - t[j])
        ds = min(ds, 1.0 - ds)
        den = ds ** 2 + w.epsilon ** 2 * (w.l_nodes[a] - w.l_nodes[b]) ** 2
        ratios[j] = num / den
    k = int(np.argmin(ratios))
    arg = {"s": float(s[k]), "sigma": float(t[k]), "beta": float(beta[k]),
           "l": float(w.l_nodes[li[k]]), "ell": float(w.l_nodes[lj[k]])}
    return LowerBoundReport(float(ratios[k]), arg, int(s.size))
