"""Spectral and photon-statistics models for single emitters and two-emitter
interference.

Implements pulsed autocorrelation (HBT) combs, the two-photon beamsplitter
correlation functions for indistinguishable and distinguishable photons,
window-filtered visibility, and the time-bin capture fraction.

Model conventions
-----------------
Photon wavepackets are exponential with the radiative lifetime, truncated to
the absolute acquisition window [0, tau_lim]; mass emitted past the window is
loss. The interference (cross) term carries

* decay at the mean of the two population rates,
* pure-dephasing coherence decay exp(-2 pi (G1* + G2*) |tau|),
* a polarization overlap factor cos(theta1) cos(theta2),
* a spectral-detuning factor: the expectation of cos(2 pi df tau) over the
  two emitters' independent per-shot frequency offsets.

Per-shot frequency offsets follow a two-component mixture: most shots sit on
the stable line position (narrow core), the rest have wandered broadly. The
mixture weights and widths are calibration parameters fit to measured
visibility-versus-window curves; a single Gaussian cannot reproduce both the
few-ns and the ~100 ns visibility of the devices this package models.

Correlation traces count both detector orderings, so a trace is a density in
the signed time difference between the two detectors.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

MHZ_NS = 1e-3  # MHz * ns -> dimensionless cycles
TWO_PI = 2.0 * np.pi

# Fraction of double-excitation events that yield two photons inside the
# collection window; calibrated against measured two-photon fractions.
DOUBLE_CAPTURE_FRACTION = 0.27

DEFAULT_TAU_LIM_NS = 130.0
DEFAULT_GRID_STEP_NS = 0.1


class GridError(ValueError):
    """A correlation grid violates a precondition."""


@dataclass(frozen=True)
class EmitterParams:
    """Spectral and photon-statistics parameters of one emitter."""

    lifetime_ns: float
    pure_dephasing_mhz: float = 0.0
    diffusion_sigma_mhz: float = 0.0
    diffusion_stable_fraction: float = 1.0
    diffusion_stable_sigma_mhz: float = 0.0
    mean_detuning_mhz: float = 0.0
    polarization_mismatch_deg: float = 0.0
    g2_0: float | None = None
    p_double: float = 0.0
    br_radiative: float = 0.0
    br_nonradiative: float = 0.0
    desync_ns: float = 0.0
    excitation_bandwidth_mhz: float | None = None

    def __post_init__(self):
        if self.lifetime_ns <= 0:
            raise ValueError("lifetime must be positive")
        if self.pure_dephasing_mhz < 0 or self.diffusion_sigma_mhz < 0:
            raise ValueError("rates must be non-negative")
        if not 0 <= self.diffusion_stable_fraction <= 1:
            raise ValueError("diffusion_stable_fraction must be in [0, 1]")
        if not 0 <= self.p_double < 1:
            raise ValueError("p_double must be in [0, 1)")
        if self.g2_0 is not None and not 0 <= self.g2_0 < 1:
            raise ValueError("g2_0 must be in [0, 1)")
        for br in (self.br_radiative, self.br_nonradiative):
            if not 0 <= br < 1:
                raise ValueError("branching fractions must be in [0, 1)")

    @property
    def decay_rate(self) -> float:
        return 1.0 / self.lifetime_ns

    @property
    def g2_effective(self) -> float:
        """Two-photon fraction of the emission (HBT center/outer area ratio).

        Uses the measured value when configured, otherwise derives it from
        the double-excitation probability via the window capture fraction.
        """
        if self.g2_0 is not None:
            return self.g2_0
        return DOUBLE_CAPTURE_FRACTION * self.p_double

    @property
    def pair_emission_probability(self) -> float:
        """Per-shot probability of a two-photon emission.

        The pulsed HBT ratio counts the center peak over a single outer peak;
        the center peak collects both detector orderings while an outer peak
        collects one, so the underlying pair probability is half the ratio.
        """
        return 0.5 * self.g2_effective

    def detuning_char(self, tau: np.ndarray) -> np.ndarray:
        """E[exp(i 2 pi f tau)] magnitude for the per-shot offset mixture."""
        tau = np.asarray(tau, dtype=float)
        p = self.diffusion_stable_fraction

        def gauss(sigma_mhz):
            return np.exp(-0.5 * (TWO_PI * sigma_mhz * MHZ_NS * tau) ** 2)

        return p * gauss(self.diffusion_stable_sigma_mhz) + \
            (1.0 - p) * gauss(self.diffusion_sigma_mhz)

    def sample_detuning_mhz(self, u_component: np.ndarray,
                            z_normal: np.ndarray) -> np.ndarray:
        """Per-shot frequency offsets consistent with detuning_char.

        u_component selects mixture branch, z_normal is a standard normal
        draw; both may be arrays of shot values.
        """
        sigma = np.where(u_component < self.diffusion_stable_fraction,
                         self.diffusion_stable_sigma_mhz,
                         self.diffusion_sigma_mhz)
        return self.mean_detuning_mhz + sigma * np.asarray(z_normal)


@dataclass(frozen=True)
class CorrelationTrace:
    """A sampled correlation function over a symmetric time-difference grid."""

    grid: np.ndarray
    values: np.ndarray
    normalization: str = "density"
    tau_lim_ns: float = DEFAULT_TAU_LIM_NS
    total: float | None = None

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=float)
        v = np.asarray(self.values, dtype=float)
        g.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "grid", g)
        object.__setattr__(self, "values", v)
        if g.shape != v.shape or g.ndim != 1 or g.size < 3:
            raise GridError("grid and values must be matching 1-d arrays")
        steps = np.diff(g)
        if not np.allclose(steps, steps[0], rtol=0, atol=1e-9):
            raise GridError("grid must be uniform")
        if not np.allclose(g, -g[::-1], atol=1e-9):
            raise GridError("grid must be symmetric about zero")
        if v.min() < -1e-12:
            raise GridError("correlation values must be non-negative")
        if self.normalization not in ("density", "counts"):
            raise GridError("normalization must be 'density' or 'counts'")
        if self.normalization == "density" and self.total is not None:
            integral = np.trapezoid(v, g)
            if abs(integral - self.total) > 1e-9:
                raise GridError(
                    f"declared total {self.total} != integral {integral}")

    @property
    def step(self) -> float:
        return float(self.grid[1] - self.grid[0])

    def integral(self, window_ns: float | None = None) -> float:
        """Trapezoid integral over |tau| <= window (full grid if None).

        Window edges falling between grid points are handled by linear
        interpolation so the integral is continuous in the window size.
        """
        if window_ns is None:
            return float(np.trapezoid(self.values, self.grid))
        w = min(float(window_ns), float(self.grid[-1]))
        if w <= 0:
            return 0.0
        m = np.abs(self.grid) <= w + 1e-12
        inner = float(np.trapezoid(self.values[m], self.grid[m])) if m.sum() >= 2 else 0.0
        lo = float(self.grid[m][0])
        hi = float(self.grid[m][-1])
        total = inner
        for edge, bound in ((hi, w), (-lo, w)):
            if bound > edge + 1e-12:
                v_edge = float(np.interp(edge, self.grid, self.values))
                v_bound = float(np.interp(bound if edge == hi else -bound,
                                          self.grid, self.values))
                total += 0.5 * (v_edge + v_bound) * (bound - edge)
        return total


def default_grid(tau_lim_ns: float = DEFAULT_TAU_LIM_NS,
                 step_ns: float = DEFAULT_GRID_STEP_NS) -> np.ndarray:
    n = int(round(tau_lim_ns / step_ns))
    return np.linspace(-n * step_ns, n * step_ns, 2 * n + 1)


# ---------------------------------------------------------------------------
# kernel pieces

def _exp_cross_integral(rate_sum, prefactor, t_lo, t_hi):
    """prefactor * integral_{t_lo}^{t_hi} exp(-rate_sum t) dt, clipped."""
    width = np.maximum(t_hi - t_lo, 0.0)
    return prefactor * np.exp(-rate_sum * t_lo) * \
        (1.0 - np.exp(-rate_sum * width)) / rate_sum


def _pair_product_kernel(g1, d1, g2, d2, tau, window):
    """integral over t of E1(t) E2(t + tau) with truncation to [0, window].

    E_i(t) = g_i exp(-g_i (t - d_i)) for t >= d_i, zero before.
    """
    tau = np.asarray(tau, dtype=float)
    s = g1 + g2
    pref = g1 * g2 * np.exp(g1 * d1 + g2 * d2) * np.exp(-g2 * tau)
    t_lo = np.maximum(d1, d2 - tau)
    t_lo = np.maximum(t_lo, 0.0)
    t_hi = np.minimum(window, window - tau)
    return np.where(t_hi > t_lo,
                    _exp_cross_integral(s, pref, t_lo, t_hi), 0.0)


def _symmetrized_kernel(p1: EmitterParams, p2: EmitterParams, tau, window):
    """Distinguishable two-photon kernel: both assignments of the photons."""
    g1, g2 = p1.decay_rate, p2.decay_rate
    d1, d2 = p1.desync_ns, p2.desync_ns
    return (_pair_product_kernel(g1, d1, g2, d2, tau, window) +
            _pair_product_kernel(g2, d2, g1, d1, tau, window))


def _cross_envelope(p1: EmitterParams, p2: EmitterParams, tau, window):
    """integral of sqrt(E1 E2)(t) sqrt(E1 E2)(t + tau): interference envelope."""
    tau = np.asarray(tau, dtype=float)
    g1, g2 = p1.decay_rate, p2.decay_rate
    d1, d2 = p1.desync_ns, p2.desync_ns
    s = g1 + g2
    m = max(d1, d2)
    pref = g1 * g2 * np.exp(g1 * d1 + g2 * d2) * np.exp(-s * m) * \
        np.exp(-s * tau / 2.0)
    # shift origin to t' = t - m; both detections inside [0, window]
    t_lo = np.maximum(0.0, -tau)
    t_hi = np.minimum(window - m, window - m - tau)
    return np.where(t_hi > t_lo,
                    _exp_cross_integral(s, pref, t_lo, t_hi), 0.0)


def coherence_factor(p1: EmitterParams, p2: EmitterParams, tau) -> np.ndarray:
    """Interference contrast versus detection time difference.

    Combines polarization overlap, pure dephasing of both emitters, the
    relative mean detuning beat and the per-shot detuning mixture envelopes.
    Dimensionless, equal to 1 for identical noiseless emitters.
    """
    tau = np.asarray(tau, dtype=float)
    a = np.abs(tau)
    pol = np.cos(np.radians(p1.polarization_mismatch_deg)) * \
        np.cos(np.radians(p2.polarization_mismatch_deg))
    deph = np.exp(-TWO_PI * (p1.pure_dephasing_mhz + p2.pure_dephasing_mhz)
                  * MHZ_NS * a)
    beat = np.cos(TWO_PI * (p1.mean_detuning_mhz - p2.mean_detuning_mhz)
                  * MHZ_NS * tau)
    return pol * deph * beat * p1.detuning_char(a) * p2.detuning_char(a)


def _self_pair_density(p: EmitterParams, tau, window):
    """Unit-area time-difference density of a two-photon emission event."""
    raw = _pair_product_kernel(p.decay_rate, 0.0, p.decay_rate, 0.0, tau, window)
    area = np.trapezoid(raw, tau)
    return raw / area if area > 0 else raw


# ---------------------------------------------------------------------------
# operations

def hbt_g2_trace(p: EmitterParams, rep_period_ns: float,
                 grid: np.ndarray | None = None) -> CorrelationTrace:
    """Pulsed autocorrelation comb for a single emitter.

    Peaks at multiples of the repetition period have the two-sided exponential
    shape set by the lifetime and unit area; the center peak area equals the
    emitter's effective two-photon fraction.
    """
    if rep_period_ns < 3.0 * p.lifetime_ns:
        raise ValueError("repetition period must exceed several lifetimes")
    if grid is None:
        half = 3 * rep_period_ns
        step = min(DEFAULT_GRID_STEP_NS * 5, p.lifetime_ns / 20)
        n = int(round(half / step))
        grid = np.linspace(-n * step, n * step, 2 * n + 1)
    grid = np.asarray(grid, dtype=float)
    step = grid[1] - grid[0]
    if step > p.lifetime_ns / 10:
        raise GridError("grid step coarser than lifetime/10")
    rate = p.decay_rate
    values = np.zeros_like(grid)
    k_max = int(np.floor((grid[-1] + 5 * p.lifetime_ns) / rep_period_ns))
    for k in range(-k_max, k_max + 1):
        peak = 0.5 * rate * np.exp(-rate * np.abs(grid - k * rep_period_ns))
        area = p.g2_effective if k == 0 else 1.0
        values = values + area * peak
    return CorrelationTrace(grid, values, "density", tau_lim_ns=grid[-1])


def hbt_center_area_ratio(trace: CorrelationTrace, rep_period_ns: float,
                          lifetime_ns: float | None = None) -> float:
    """Center-peak area over the mean outer-peak area of a comb trace.

    Fits the comb as a sum of two-sided exponential peaks so that tails of
    neighbouring peaks do not contaminate the window integrals. The lifetime
    defaults to a fit of the outermost peak's decay.
    """
    grid = trace.grid
    k_max = int(np.floor(grid[-1] / rep_period_ns + 0.5))
    if k_max < 1:
        raise GridError("grid does not cover any outer peak")
    centers = np.arange(-k_max, k_max + 1) * rep_period_ns

    def fit_areas(tau_life):
        rate = 1.0 / tau_life
        basis = 0.5 * rate * np.exp(-rate * np.abs(grid[None, :] - centers[:, None]))
        areas, res, *_ = np.linalg.lstsq(basis.T, trace.values, rcond=None)
        resid = trace.values - basis.T @ areas
        return areas, float(resid @ resid)

    if lifetime_ns is None:
        # half-maximum half-width of the +1 peak seeds the width, then a
        # scalar least-squares refinement pins it
        m = np.abs(grid - rep_period_ns) <= rep_period_ns / 2.0
        g, y = grid[m], trace.values[m]
        i0 = int(np.argmax(y))
        below = np.nonzero(y[i0:] <= 0.5 * y[i0])[0]
        if below.size == 0:
            raise GridError("cannot estimate peak width from trace")
        j = i0 + below[0]
        frac = (0.5 * y[i0] - y[j - 1]) / (y[j] - y[j - 1]) if y[j] != y[j - 1] else 0.0
        half_width = g[j - 1] + frac * (g[j] - g[j - 1]) - g[i0]
        seed = max(half_width / np.log(2.0), trace.step)
        from scipy.optimize import minimize_scalar
        opt = minimize_scalar(lambda t: fit_areas(t)[1],
                              bounds=(0.5 * seed, 2.0 * seed), method="bounded",
                              options={"xatol": 1e-6 * seed})
        lifetime_ns = float(opt.x)
    areas, _ = fit_areas(lifetime_ns)
    center = areas[k_max]
    outer = np.concatenate([areas[:k_max], areas[k_max + 1:]])
    return float(center / outer.mean())


def hom_correlations(p1: EmitterParams, p2: EmitterParams,
                     grid: np.ndarray | None = None,
                     tau_lim_ns: float = DEFAULT_TAU_LIM_NS):
    """Beamsplitter correlation traces for the two-emitter interference.

    Returns (indistinguishable, distinguishable) traces. Each is built as
    half the normalized two-photon kernel plus a quarter of each emitter's
    two-photon autocorrelation term; the indistinguishable kernel subtracts
    the interference envelope weighted by the coherence factor.
    """
    if grid is None:
        grid = default_grid(tau_lim_ns)
    grid = np.asarray(grid, dtype=float)
    if not np.allclose(grid, -grid[::-1], atol=1e-9):
        raise GridError("grid must be symmetric about zero")

    base = _symmetrized_kernel(p1, p2, grid, tau_lim_ns)
    norm = np.trapezoid(base, grid)
    if norm <= 0:
        raise GridError("empty distinguishable kernel; window too small")
    base = base / norm
    cross = 2.0 * _cross_envelope(p1, p2, grid, tau_lim_ns) / norm
    interference = cross * coherence_factor(p1, p2, grid)

    floor = 0.25 * (p1.g2_effective * _self_pair_density(p1, grid, tau_lim_ns) +
                    p2.g2_effective * _self_pair_density(p2, grid, tau_lim_ns))

    g_d = 0.5 * base + floor
    g_i = 0.5 * np.clip(base - interference, 0.0, None) + floor
    g_d_trace = CorrelationTrace(grid, g_d, "density", tau_lim_ns)
    g_i_trace = CorrelationTrace(grid, g_i, "density", tau_lim_ns)
    return g_i_trace, g_d_trace


def visibility(g_i: CorrelationTrace, g_d: CorrelationTrace,
               window_ns: float) -> float:
    """Two-photon visibility 1 - P_I/P_D over |tau| <= window."""
    if g_i.grid.shape != g_d.grid.shape or \
            not np.allclose(g_i.grid, g_d.grid, atol=1e-12):
        raise GridError("traces must share one grid")
    if window_ns > g_d.tau_lim_ns + 1e-9:
        raise GridError("window exceeds acquisition window")
    p_d = g_d.integral(window_ns)
    if p_d <= 0:
        raise ZeroDivisionError("distinguishable coincidences vanish in window")
    p_i = g_i.integral(window_ns)
    return 1.0 - p_i / p_d


def timebin_capture(g_d: CorrelationTrace, window_ns: float) -> float:
    """Fraction of distinguishable coincidences inside |tau| <= window."""
    if window_ns > g_d.tau_lim_ns + 1e-9:
        raise GridError("window exceeds acquisition window")
    total = g_d.integral(g_d.tau_lim_ns)
    if total <= 0:
        raise ZeroDivisionError("empty distinguishable trace")
    return g_d.integral(window_ns) / total


def invert_capture(g_d: CorrelationTrace, fraction: float,
                   resolution_ns: float = 1e-3) -> float:
    """Window T with timebin_capture(g_d, T) = fraction, by bisection."""
    if not 0 < fraction <= 1:
        raise ValueError("fraction must be in (0, 1]")
    lo, hi = 0.0, float(g_d.tau_lim_ns)
    if fraction >= timebin_capture(g_d, hi) - 1e-15:
        return hi
    while hi - lo > resolution_ns:
        mid = 0.5 * (lo + hi)
        if timebin_capture(g_d, mid) < fraction:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def mean_filtered_visibility(p1: EmitterParams, p2: EmitterParams,
                             window_ns: float,
                             tau_lim_ns: float = DEFAULT_TAU_LIM_NS) -> float:
    """Convenience: visibility of the model traces at the given window."""
    g_i, g_d = hom_correlations(p1, p2, tau_lim_ns=tau_lim_ns)
    return visibility(g_i, g_d, window_ns)


# ---------------------------------------------------------------------------
# reference devices (measured lifetimes and two-photon fractions; dephasing,
# diffusion mixture and polarization values are fit calibrations)

TC1 = EmitterParams(
    lifetime_ns=69.9,
    pure_dephasing_mhz=5.0,
    diffusion_sigma_mhz=50.0,
    diffusion_stable_fraction=0.67,
    diffusion_stable_sigma_mhz=1.0,
    polarization_mismatch_deg=12.8,
    g2_0=0.0076,
    p_double=0.028,
    br_radiative=0.025,
    br_nonradiative=0.025,
    excitation_bandwidth_mhz=22.5,
)

TC2 = EmitterParams(
    lifetime_ns=64.5,
    pure_dephasing_mhz=5.0,
    diffusion_sigma_mhz=50.0,
    diffusion_stable_fraction=0.67,
    diffusion_stable_sigma_mhz=1.0,
    polarization_mismatch_deg=12.8,
    g2_0=0.0117,
    p_double=0.03,
    br_radiative=0.025,
    br_nonradiative=0.025,
    excitation_bandwidth_mhz=22.5,
)


def projected_emitter(lifetime_ns: float = 10.0,
                      pure_dephasing_mhz: float = 0.23,
                      diffusion_sigma_mhz: float = 20.0,
                      diffusion_stable_fraction: float = 0.97,
                      p_double: float = 0.0) -> EmitterParams:
    """Best-measured material parameters used for forward projections."""
    return EmitterParams(
        lifetime_ns=lifetime_ns,
        pure_dephasing_mhz=pure_dephasing_mhz,
        diffusion_sigma_mhz=diffusion_sigma_mhz,
        diffusion_stable_fraction=diffusion_stable_fraction,
        diffusion_stable_sigma_mhz=0.0,
        polarization_mismatch_deg=0.0,
        g2_0=0.0,
        p_double=p_double,
    )


def scaled(params: EmitterParams, **changes) -> EmitterParams:
    """Copy of params with the given fields replaced."""
    return replace(params, **changes)
