"""Time-tag analysis and characterization-curve fitting.

Covers coincidence histograms from tag streams, visibility extraction,
weighted nonlinear least-squares fits of the standard characterization
models (lifetime, Rabi, Ramsey, Hahn echo, pumping decay), decay-envelope
gate fidelity, and single-shot nuclear readout simulation with threshold
analysis.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import curve_fit

from . import harness


class FitError(RuntimeError):
    """Nonlinear fit failed to converge or inputs are unusable."""


# ---------------------------------------------------------------------------
# model functions

def model_exp_decay(t, amplitude, tau, offset):
    return amplitude * np.exp(-t / tau) + offset


def model_rabi(t, amplitude, omega, phase, t_decay, offset):
    return amplitude * np.cos(omega * t + phase) * np.exp(-t / t_decay) + offset


def model_ramsey(t, amplitude, detuning, phase, t2_star, stretch, offset):
    return amplitude * np.cos(2 * np.pi * detuning * t + phase) * \
        np.exp(-((t / t2_star) ** stretch)) + offset


def model_hahn(t, amplitude, t2, stretch, offset):
    return amplitude * np.exp(-((t / t2) ** stretch)) + offset


def model_pump_decay(k, amplitude, ratio, offset):
    return amplitude * ratio ** k + offset


_MODELS = {
    "exp_decay": (model_exp_decay, ("amplitude", "tau", "offset")),
    "rabi": (model_rabi, ("amplitude", "omega", "phase", "t_decay", "offset")),
    "ramsey": (model_ramsey,
               ("amplitude", "detuning", "phase", "t2_star", "stretch", "offset")),
    "hahn": (model_hahn, ("amplitude", "t2", "stretch", "offset")),
    "pump_decay": (model_pump_decay, ("amplitude", "ratio", "offset")),
}

STRETCH_BOUNDS = (0.5, 3.0)


@dataclass(frozen=True)
class FitResult:
    """Converged weighted least-squares fit of a named model."""

    model: str
    params: dict
    std_errors: dict
    residual_norm: float
    x_max: float
    flags: tuple = ()

    def envelope(self, t: float) -> float:
        """Decay-envelope factor of the fitted model at time t."""
        p = self.params
        if self.model == "exp_decay":
            return float(np.exp(-t / p["tau"]))
        if self.model == "rabi":
            return float(np.exp(-t / p["t_decay"]))
        if self.model == "ramsey":
            return float(np.exp(-((t / p["t2_star"]) ** p["stretch"])))
        if self.model == "hahn":
            return float(np.exp(-((t / p["t2"]) ** p["stretch"])))
        raise FitError(f"model {self.model!r} has no decay envelope")


def _dominant_frequency(x, y):
    """Angular frequency of the strongest nonzero Fourier component."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = max(len(x) * 4, 256)
    xu = np.linspace(x.min(), x.max(), n)
    yu = np.interp(xu, x, y)
    yu = yu - yu.mean()
    spec = np.abs(np.fft.rfft(yu))
    freqs = np.fft.rfftfreq(n, xu[1] - xu[0])
    if len(spec) < 2:
        return 0.0
    k = 1 + int(np.argmax(spec[1:]))
    return 2 * np.pi * freqs[k]


def _log_linear_tau(x, y, offset):
    """Decay constant from a log-linear regression of y - offset."""
    z = np.asarray(y, dtype=float) - offset
    m = z > max(z.max() * 1e-3, 1e-30)
    if m.sum() < 2:
        return (x.max() - x.min()) / 2 or 1.0
    slope = np.polyfit(np.asarray(x)[m], np.log(z[m]), 1)[0]
    if slope >= 0:
        return x.max() - x.min() or 1.0
    return -1.0 / slope


def _initial_guess(model, x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    span = y.max() - y.min()
    if model == "exp_decay":
        c = y[np.argsort(x)[-max(3, len(x) // 10):]].mean()
        a = y[np.argmin(x)] - c
        tau = _log_linear_tau(x, y, c) if a > 0 else (x.max() - x.min()) / 3
        return [a if a != 0 else span, max(tau, 1e-9), c]
    if model == "rabi":
        c = y.mean()
        omega = _dominant_frequency(x, y)
        if omega == 0:
            omega = 2 * np.pi / max(x.max() - x.min(), 1e-9)
        return [span / 2 or 1e-3, omega, 0.0, (x.max() - x.min()) * 2, c]
    if model == "ramsey":
        c = y.mean()
        omega = _dominant_frequency(x, y)
        delta = omega / (2 * np.pi)
        if delta == 0:
            delta = 1.0 / max(x.max() - x.min(), 1e-9)
        return [span / 2 or 1e-3, delta, 0.0, (x.max() - x.min()) / 2, 2.0, c]
    if model == "hahn":
        c = y[np.argsort(x)[-max(3, len(x) // 10):]].mean()
        a = y[np.argmin(x)] - c
        target = c + (a / np.e if a != 0 else span / np.e)
        below = np.nonzero(y <= target)[0] if a > 0 else np.array([])
        t2 = x[below[0]] if below.size else (x.max() - x.min()) / 2
        return [a if a != 0 else span, max(t2, 1e-9), 2.0, c]
    if model == "pump_decay":
        c = y[np.argsort(x)[-max(3, len(x) // 10):]].mean()
        a = y[np.argmin(x)] - c
        tau = _log_linear_tau(x, y, c) if a > 0 else 2.0
        r = float(np.exp(-1.0 / max(tau, 1e-9)))
        return [a if a != 0 else span, min(max(r, 1e-3), 1 - 1e-6), c]
    raise FitError(f"unknown model {model!r}")


def _bounds(model):
    inf = np.inf
    if model == "exp_decay":
        return ([-inf, 1e-12, -inf], [inf, inf, inf])
    if model == "rabi":
        return ([-inf, 0.0, -np.pi, 1e-12, -inf], [inf, inf, np.pi, inf, inf])
    if model == "ramsey":
        return ([-inf, 0.0, -np.pi, 1e-12, STRETCH_BOUNDS[0], -inf],
                [inf, inf, np.pi, inf, STRETCH_BOUNDS[1], inf])
    if model == "hahn":
        return ([-inf, 1e-12, STRETCH_BOUNDS[0], -inf],
                [inf, inf, STRETCH_BOUNDS[1], inf])
    if model == "pump_decay":
        return ([-inf, 1e-9, -inf], [inf, 1 - 1e-9, inf])
    raise FitError(f"unknown model {model!r}")


def fit(model: str, x, y, sigma=None, initial=None, max_iterations=5000) -> FitResult:
    """Weighted nonlinear least squares for one of the named models.

    sigma defaults to Poisson weights sqrt(max(y, 1)), appropriate for count
    data. Initial guesses are derived deterministically from the data
    (log-linear regression for decay constants, Fourier peak for oscillation
    frequencies) unless given explicitly.
    """
    if model not in _MODELS:
        raise FitError(f"unknown model {model!r}")
    func, names = _MODELS[model]
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise FitError("x and y must be matching 1-d arrays")
    if len(x) < 3 * len(names):
        raise FitError(
            f"need at least {3 * len(names)} points to fit {len(names)} parameters")
    if sigma is None:
        sigma = np.sqrt(np.maximum(y, 1.0))
    sigma = np.asarray(sigma, dtype=float)
    p0 = list(initial) if initial is not None else _initial_guess(model, x, y)
    lo, hi = _bounds(model)
    p0 = [min(max(v, l + 0 if not np.isfinite(l) else l * (1 + 1e-12) if l else 1e-15), h)
          if np.isfinite(l) and v <= l else v for v, l, h in zip(p0, lo, hi)]
    p0 = [min(v, h) if np.isfinite(h) else v for v, h in zip(p0, hi)]
    try:
        popt, pcov = curve_fit(func, x, y, p0=p0, sigma=sigma,
                               absolute_sigma=True, bounds=(lo, hi),
                               maxfev=max_iterations)
    except RuntimeError as exc:
        raise FitError(f"fit did not converge: {exc}") from exc
    resid = (y - func(x, *popt)) / sigma
    variances = np.diag(pcov)
    flags = []
    if not np.all(np.isfinite(variances)):
        flags.append("singular_covariance")
    errs = np.sqrt(np.where(np.isfinite(variances), variances, np.inf))
    params = dict(zip(names, (float(v) for v in popt)))
    std_errors = dict(zip(names, (float(e) for e in errs)))
    if "phase" in params:
        amp, amp_err = abs(params["amplitude"]), std_errors["amplitude"]
        if not np.isfinite(std_errors["phase"]) or amp < 2 * amp_err:
            flags.append("degenerate_phase")
    return FitResult(model, params, std_errors,
                     float(np.linalg.norm(resid)), float(x.max()),
                     tuple(flags))


def gate_fidelity_from_envelope(fit_result: FitResult, t_gate: float) -> float:
    """Average gate fidelity (1 + envelope(t_gate)) / 2 from a decay fit.

    Raises on extrapolation more than a factor 2 beyond the fitted range.
    """
    if t_gate > 2.0 * fit_result.x_max:
        raise FitError(
            f"t_gate {t_gate} extrapolates past twice the fitted range "
            f"{fit_result.x_max}")
    env = fit_result.envelope(t_gate)
    return 0.5 * (1.0 + env)


# ---------------------------------------------------------------------------
# coincidence analysis

@dataclass(frozen=True)
class CoincidenceHistogram:
    """Histogram of detector time differences, bins centered on zero."""

    bin_edges: np.ndarray
    counts: np.ndarray
    total_singles: dict
    empty: bool = False

    def __post_init__(self):
        e = np.asarray(self.bin_edges, dtype=float)
        c = np.asarray(self.counts, dtype=np.int64)
        e.setflags(write=False)
        c.setflags(write=False)
        object.__setattr__(self, "bin_edges", e)
        object.__setattr__(self, "counts", c)
        if len(c) != len(e) - 1:
            raise ValueError("need len(counts) == len(bin_edges) - 1")
        if np.any(c < 0):
            raise ValueError("counts must be non-negative")

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.bin_edges[:-1] + self.bin_edges[1:])

    def counts_within(self, window_ns: float) -> int:
        m = np.abs(self.centers) <= window_ns + 1e-9
        return int(self.counts[m].sum())


def centered_edges(window_ns: float, bin_width_ns: float) -> np.ndarray:
    """Bin edges of the given width with tau = 0 at a bin center."""
    if bin_width_ns <= 0:
        raise ValueError("bin width must be positive")
    n = int(np.ceil((window_ns + bin_width_ns / 2) / bin_width_ns))
    return (np.arange(-n, n + 1) - 0.5) * bin_width_ns


def coincidences(stream: "harness.TagStream", realign_shift_ns: float,
                 window_ns: float, bin_width_ns: float,
                 realign_after_ns: float | None = None) -> CoincidenceHistogram:
    """Histogram of D2 - D1 click time differences per shot.

    Clicks with in-shot timestamps at or past realign_after_ns are shifted
    back by realign_shift_ns before pairing, undoing a deliberate excitation
    delay. With realign_shift_ns = 0 the stream is paired as recorded.
    """
    edges = centered_edges(window_ns, bin_width_ns)
    counts = np.zeros(len(edges) - 1, dtype=np.int64)
    t = stream.timestamps_ns()
    if realign_shift_ns != 0.0:
        cut = realign_after_ns if realign_after_ns is not None else realign_shift_ns
        t = np.where(t >= cut, t - realign_shift_ns, t)
    singles = {d: int(np.count_nonzero(stream.detectors == d))
               for d in (harness.D1, harness.D2)}
    if stream.size == 0:
        return CoincidenceHistogram(edges, counts,
                                    {"D1": 0, "D2": 0}, empty=True)
    order = np.lexsort((t, stream.shots))
    shots = stream.shots[order]
    dets = stream.detectors[order]
    ts = t[order]
    boundaries = np.nonzero(np.diff(shots))[0] + 1
    for seg_d, seg_t in zip(np.split(dets, boundaries), np.split(ts, boundaries)):
        t1 = seg_t[seg_d == harness.D1]
        t2 = seg_t[seg_d == harness.D2]
        if t1.size == 0 or t2.size == 0:
            continue
        diffs = (t2[:, None] - t1[None, :]).ravel()
        diffs = diffs[np.abs(diffs) <= window_ns + bin_width_ns]
        if diffs.size:
            idx = np.searchsorted(edges, diffs, side="right") - 1
            good = (idx >= 0) & (idx < len(counts))
            np.add.at(counts, idx[good], 1)
    return CoincidenceHistogram(edges, counts,
                                {"D1": singles[harness.D1],
                                 "D2": singles[harness.D2]})


def visibility_from_histograms(hist_i: CoincidenceHistogram,
                               hist_d: CoincidenceHistogram,
                               window_ns: float):
    """Visibility and its Poisson standard error from two histograms."""
    n_i = hist_i.counts_within(window_ns)
    n_d = hist_d.counts_within(window_ns)
    if n_d == 0:
        raise ZeroDivisionError("no distinguishable coincidences in window")
    v = 1.0 - n_i / n_d
    sigma = (n_i / n_d) * np.sqrt(1.0 / max(n_i, 1) + 1.0 / n_d)
    return v, sigma


# ---------------------------------------------------------------------------
# single-shot readout

@dataclass(frozen=True)
class SSROModel:
    """Poisson-mixture model of repeated nuclear-spin readout.

    Each round maps the nuclear spin onto the electron (with the map gate
    fidelity), collects a Poisson-distributed photon count whose mean depends
    on the mapped electron state, and may flip the nuclear spin. Flips are
    backaction from optical cycling, so they only occur in rounds where the
    mapped electron scatters (bright rounds).
    """

    bright_mean: float
    dark_mean: float
    flip_per_round: float
    rounds: int
    map_gate_fidelity: float = 1.0
    pulses_per_round: int = 200

    def __post_init__(self):
        if not self.bright_mean > self.dark_mean >= 0:
            raise ValueError("need bright_mean > dark_mean >= 0")
        if not 0 <= self.flip_per_round <= 1:
            raise ValueError("flip_per_round must be a probability")
        if not 0 <= self.map_gate_fidelity <= 1:
            raise ValueError("map_gate_fidelity must be a probability")
        if self.rounds < 1:
            raise ValueError("need at least one readout round")


def ssro_simulate(model: SSROModel, prepared: str, shots: int,
                  seed: int) -> np.ndarray:
    """Per-shot photon totals for a prepared nuclear spin state.

    prepared is "bright" or "dark" (nuclear up / down after preparation).
    """
    if prepared not in ("bright", "dark"):
        raise ValueError("prepared must be 'bright' or 'dark'")
    if shots < 1:
        raise ValueError("shots must be >= 1")
    rng = np.random.default_rng(seed)
    state = np.full(shots, prepared == "bright")
    totals = np.zeros(shots, dtype=np.int64)
    for _ in range(model.rounds):
        mapped = state ^ (rng.random(shots) >= model.map_gate_fidelity)
        means = np.where(mapped, model.bright_mean, model.dark_mean)
        totals += rng.poisson(means)
        state = state ^ ((rng.random(shots) < model.flip_per_round) & mapped)
    return totals


# readout calibrations reproducing the measured SPAM of the two reference
# devices (photon means and flip rate are free fit parameters)
TC1_SSRO = SSROModel(bright_mean=2.2, dark_mean=0.4, flip_per_round=0.11,
                     rounds=10, map_gate_fidelity=0.984)
TC2_SSRO = SSROModel(bright_mean=9.0, dark_mean=2.4, flip_per_round=0.105,
                     rounds=10, map_gate_fidelity=0.984)


def ssro_threshold(bright_totals, dark_totals):
    """State preparation and measurement fidelity versus photon threshold.

    Returns (thresholds, spam array, optimal threshold); SPAM(theta) averages
    the bright-above and dark-below probabilities, ties broken toward the
    smaller threshold.
    """
    bright = np.asarray(bright_totals)
    dark = np.asarray(dark_totals)
    if bright.size == 0 or dark.size == 0:
        raise ValueError("both series must be nonempty")
    hi = int(max(bright.max(), dark.max())) + 2
    thresholds = np.arange(0, hi)
    spam = np.array([
        0.5 * (np.mean(bright >= th) + np.mean(dark < th))
        for th in thresholds])
    best = int(thresholds[int(np.argmax(spam))])
    return thresholds, spam, best
