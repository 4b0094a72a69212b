import numpy as np
import pytest

from tcsim import emitter as em


# ---------------------------------------------------------------------------
# oracles

def numeric_pair_kernel(g1, d1, g2, d2, tau_grid, window, n_t=6000):
    """Quadrature oracle for the truncated envelope product integral."""
    out = np.zeros_like(tau_grid)
    for i, tau in enumerate(tau_grid):
        t_lo = max(d1, d2 - tau, 0.0)
        t_hi = min(window, window - tau)
        if t_hi <= t_lo:
            continue
        t = np.linspace(t_lo, t_hi, n_t)
        f = g1 * np.exp(-g1 * (t - d1)) * g2 * np.exp(-g2 * (t + tau - d2))
        out[i] = np.trapezoid(f, t)
    return out


def numeric_cross_envelope(p1, p2, tau_grid, window, n_t=6000):
    g1, g2 = p1.decay_rate, p2.decay_rate
    d1, d2 = p1.desync_ns, p2.desync_ns
    m = max(d1, d2)
    out = np.zeros_like(tau_grid)
    for i, tau in enumerate(tau_grid):
        t_lo = max(m, m - tau)
        t_hi = min(window, window - tau)
        if t_hi <= t_lo:
            continue
        t = np.linspace(t_lo, t_hi, n_t)
        e11 = g1 * np.exp(-g1 * (t - d1)) * g2 * np.exp(-g2 * (t - d2))
        e22 = g1 * np.exp(-g1 * (t + tau - d1)) * g2 * np.exp(-g2 * (t + tau - d2))
        out[i] = np.trapezoid(np.sqrt(e11 * e22), t)
    return out


def oracle_hom_traces(p1, p2, grid, window):
    """Rebuild the HOM traces with all envelope integrals done numerically."""
    base = (numeric_pair_kernel(p1.decay_rate, p1.desync_ns,
                                p2.decay_rate, p2.desync_ns, grid, window) +
            numeric_pair_kernel(p2.decay_rate, p2.desync_ns,
                                p1.decay_rate, p1.desync_ns, grid, window))
    norm = np.trapezoid(base, grid)
    base = base / norm
    cross = 2.0 * numeric_cross_envelope(p1, p2, grid, window) / norm
    interference = cross * em.coherence_factor(p1, p2, grid)

    def self_pair(p):
        raw = numeric_pair_kernel(p.decay_rate, 0.0, p.decay_rate, 0.0,
                                  grid, window)
        return raw / np.trapezoid(raw, grid)

    floor = 0.25 * (p1.g2_effective * self_pair(p1) +
                    p2.g2_effective * self_pair(p2))
    g_d = 0.5 * base + floor
    g_i = 0.5 * np.clip(base - interference, 0.0, None) + floor
    return g_i, g_d


def binned(grid, values, width=1.0):
    """Integrals of a trace over consecutive bins of the given width."""
    edges = np.arange(grid[0], grid[-1] + width / 2, width)
    out = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        m = (grid >= lo - 1e-12) & (grid <= hi + 1e-12)
        out.append(np.trapezoid(values[m], grid[m]))
    return np.array(out)


def mc_hbt_ratio(pair_probability, lifetime_ns, rep_ns, n_pulses, seed):
    """Monte Carlo photon-pair sampler: pulsed autocorrelation ratio.

    Emits one photon per pulse plus a second with the pair probability,
    routes each photon 50:50 and histograms detector cross-correlations in
    windows around zero and around +-1 repetition period.
    """
    rng = np.random.default_rng(seed)
    t1 = rng.exponential(lifetime_ns, n_pulses)
    has2 = rng.random(n_pulses) < pair_probability
    t2 = rng.exponential(lifetime_ns, n_pulses)
    d1 = rng.random(n_pulses) < 0.5
    d2 = rng.random(n_pulses) < 0.5

    center = np.count_nonzero(has2 & (d1 != d2))
    # outer peaks: photon of pulse k against photon of pulse k+1
    a, b = d1[:-1], d1[1:]
    outer_plus = np.count_nonzero(a & ~b)   # first -> D1, later -> D2
    outer_minus = np.count_nonzero(~a & b)
    outer = 0.5 * (outer_plus + outer_minus)
    return center / outer


# ---------------------------------------------------------------------------
# tests

class TestEmitterParams:
    def test_invariants(self):
        with pytest.raises(ValueError):
            em.EmitterParams(lifetime_ns=-1)
        with pytest.raises(ValueError):
            em.EmitterParams(lifetime_ns=10, p_double=1.5)
        with pytest.raises(ValueError):
            em.EmitterParams(lifetime_ns=10, br_radiative=1.0)

    def test_g2_derivation(self):
        p = em.EmitterParams(lifetime_ns=70, p_double=0.028)
        assert p.g2_effective == pytest.approx(em.DOUBLE_CAPTURE_FRACTION * 0.028)
        p2 = em.EmitterParams(lifetime_ns=70, p_double=0.028, g2_0=0.0076)
        assert p2.g2_effective == 0.0076

    def test_detuning_sampler_matches_char(self):
        # characteristic function of sampled detunings matches detuning_char
        p = em.TC1
        rng = np.random.default_rng(0)
        n = 200_000
        f = p.sample_detuning_mhz(rng.random(n), rng.normal(size=n))
        tau = np.array([2.0, 5.0, 20.0, 60.0])
        emp = np.array([np.mean(np.cos(2 * np.pi * f * 1e-3 * t)) for t in tau])
        ref = p.detuning_char(tau)
        assert np.max(np.abs(emp - ref)) < 5e-3


class TestCorrelationTrace:
    def test_grid_validation(self):
        with pytest.raises(em.GridError):
            em.CorrelationTrace(np.array([0.0, 1.0, 2.0]), np.zeros(3))
        g = np.linspace(-1, 1, 21)
        with pytest.raises(em.GridError):
            em.CorrelationTrace(g, -np.ones(21))

    def test_declared_total(self):
        g = np.linspace(-10, 10, 2001)
        v = np.exp(-np.abs(g)) / (2 * (1 - np.exp(-10.0)))
        tot = np.trapezoid(v, g)
        em.CorrelationTrace(g, v, "density", 10.0, total=tot)
        with pytest.raises(em.GridError):
            em.CorrelationTrace(g, v, "density", 10.0, total=tot + 1e-6)


class TestHbt:
    def test_zero_p_double_zero_center(self):
        p = em.EmitterParams(lifetime_ns=70.0, p_double=0.0)
        tr = em.hbt_g2_trace(p, rep_period_ns=500.0)
        assert em.hbt_center_area_ratio(tr, 500.0) == pytest.approx(0.0, abs=1e-9)

    def test_tc1_ratio_matches_measured_g2(self):
        tr = em.hbt_g2_trace(em.TC1, rep_period_ns=500.0)
        ratio = em.hbt_center_area_ratio(tr, 500.0)
        assert ratio == pytest.approx(0.0076, rel=0.20)

    def test_doubling_p_double_doubles_center_area(self):
        base = em.EmitterParams(lifetime_ns=70.0, p_double=0.02)
        twice = em.EmitterParams(lifetime_ns=70.0, p_double=0.04)
        r1 = em.hbt_center_area_ratio(em.hbt_g2_trace(base, 500.0), 500.0)
        r2 = em.hbt_center_area_ratio(em.hbt_g2_trace(twice, 500.0), 500.0)
        assert r2 / r1 == pytest.approx(2.0, rel=1e-6)

    def test_against_monte_carlo_pair_sampler(self):
        # the analytic ratio equals the sampled ratio for both p and 2p
        for p_double in (0.02, 0.04):
            p = em.EmitterParams(lifetime_ns=70.0, p_double=p_double)
            analytic = em.hbt_center_area_ratio(em.hbt_g2_trace(p, 500.0), 500.0)
            mc = mc_hbt_ratio(p.pair_emission_probability, 70.0, 500.0,
                              n_pulses=2_000_000, seed=42)
            # MC std on the ratio ~ ratio / sqrt(center counts)
            sigma = analytic / np.sqrt(2_000_000 * p.pair_emission_probability * 0.5)
            assert abs(mc - analytic) < 4 * sigma

    def test_rejects_coarse_grid(self):
        p = em.EmitterParams(lifetime_ns=10.0)
        grid = np.linspace(-1500, 1500, 601)  # 5 ns step > lifetime/10
        with pytest.raises(em.GridError):
            em.hbt_g2_trace(p, 500.0, grid)

    def test_rejects_short_rep_period(self):
        with pytest.raises(ValueError):
            em.hbt_g2_trace(em.TC1, rep_period_ns=100.0)


class TestHomCorrelations:
    def test_perfect_indistinguishability_full_dip(self):
        p = em.EmitterParams(lifetime_ns=70.0)
        g_i, g_d = em.hom_correlations(p, p)
        assert np.max(g_i.values) < 1e-14
        assert g_d.values.max() > 0

    def test_orthogonal_polarizations_no_interference(self):
        p = em.scaled(em.TC1, polarization_mismatch_deg=90.0)
        q = em.scaled(em.TC2, polarization_mismatch_deg=90.0)
        g_i, g_d = em.hom_correlations(p, q)
        np.testing.assert_allclose(g_i.values, g_d.values, atol=1e-12)

    def test_pointwise_dominance(self):
        g_i, g_d = em.hom_correlations(em.TC1, em.TC2)
        assert np.all(g_i.values <= g_d.values + 1e-15)

    def test_quadrature_oracle_default_params(self):
        grid = em.default_grid()
        g_i, g_d = em.hom_correlations(em.TC1, em.TC2, grid)
        oi, od = oracle_hom_traces(em.TC1, em.TC2, grid, 130.0)
        for got, ref in ((g_i.values, oi), (g_d.values, od)):
            diff = np.abs(binned(grid, got) - binned(grid, ref))
            assert diff.max() < 1e-6

    def test_quadrature_oracle_with_desync_and_detuning(self):
        p1 = em.scaled(em.TC1, desync_ns=4.0, mean_detuning_mhz=3.0)
        p2 = em.scaled(em.TC2, desync_ns=-2.0)
        grid = em.default_grid()
        g_i, g_d = em.hom_correlations(p1, p2, grid)
        oi, od = oracle_hom_traces(p1, p2, grid, 130.0)
        for got, ref in ((g_i.values, oi), (g_d.values, od)):
            diff = np.abs(binned(grid, got) - binned(grid, ref))
            assert diff.max() < 1e-6

    def test_asymmetric_grid_rejected(self):
        grid = np.linspace(-10, 20, 301)
        with pytest.raises(em.GridError):
            em.hom_correlations(em.TC1, em.TC2, grid)


class TestVisibility:
    def test_full_dip_gives_unit_visibility(self):
        p = em.EmitterParams(lifetime_ns=70.0)
        g_i, g_d = em.hom_correlations(p, p)
        for t in (1.0, 5.0, 50.0, 130.0):
            assert em.visibility(g_i, g_d, t) == pytest.approx(1.0, abs=1e-12)

    def test_reference_values_5ns_and_100ns(self):
        g_i, g_d = em.hom_correlations(em.TC1, em.TC2)
        assert em.visibility(g_i, g_d, 5.0) == pytest.approx(0.63, abs=0.08)
        assert em.visibility(g_i, g_d, 100.0) == pytest.approx(0.2, abs=0.08)

    def test_monotone_non_increasing(self):
        g_i, g_d = em.hom_correlations(em.TC1, em.TC2)
        sweep = np.linspace(0.5, 130.0, 260)
        vals = [em.visibility(g_i, g_d, t) for t in sweep]
        assert all(b <= a + 1e-12 for a, b in zip(vals, vals[1:]))

    def test_zero_imperfections_unit_visibility_everywhere(self):
        p = em.EmitterParams(lifetime_ns=64.5)
        g_i, g_d = em.hom_correlations(p, p)
        sweep = np.linspace(1.0, 130.0, 40)
        assert all(em.visibility(g_i, g_d, t) > 1 - 1e-12 for t in sweep)

    def test_scale_invariance(self):
        g_i, g_d = em.hom_correlations(em.TC1, em.TC2)
        s_i = em.CorrelationTrace(g_i.grid, 3.7 * g_i.values, "density", 130.0)
        s_d = em.CorrelationTrace(g_d.grid, 3.7 * g_d.values, "density", 130.0)
        for t in (5.0, 40.0, 100.0):
            assert em.visibility(s_i, s_d, t) == pytest.approx(
                em.visibility(g_i, g_d, t), abs=1e-12)
            assert em.timebin_capture(s_d, t) == pytest.approx(
                em.timebin_capture(g_d, t), abs=1e-12)

    def test_g2_floor_caps_small_window_visibility(self):
        g_i, g_d = em.hom_correlations(em.TC1, em.TC2)
        assert em.visibility(g_i, g_d, 0.3) < 1.0

    def test_zero_denominator_raises(self):
        grid = np.linspace(-10, 10, 201)
        z = em.CorrelationTrace(grid, np.zeros(201), "density", 10.0)
        with pytest.raises(ZeroDivisionError):
            em.visibility(z, z, 5.0)


class TestTimebinCapture:
    def test_full_window_is_one(self):
        _, g_d = em.hom_correlations(em.TC1, em.TC2)
        assert em.timebin_capture(g_d, 130.0) == pytest.approx(1.0)

    def test_zero_window_is_zero(self):
        _, g_d = em.hom_correlations(em.TC1, em.TC2)
        assert em.timebin_capture(g_d, 0.0) == pytest.approx(0.0, abs=1e-9)

    def test_monotone_non_decreasing(self):
        _, g_d = em.hom_correlations(em.TC1, em.TC2)
        sweep = np.linspace(0.0, 130.0, 131)
        vals = [em.timebin_capture(g_d, t) for t in sweep]
        assert all(b >= a - 1e-12 for a, b in zip(vals, vals[1:]))

    def test_equal_lifetimes_closed_form(self):
        # with equal lifetimes and a window >> lifetime the capture follows
        # 1 - exp(-T / lifetime); cross-check the numeric integral
        life = 20.0
        p = em.EmitterParams(lifetime_ns=life)
        grid = em.default_grid(tau_lim_ns=600.0, step_ns=0.1)
        _, g_d = em.hom_correlations(p, p, grid, tau_lim_ns=600.0)
        for t in (5.0, life * np.log(2.0), 60.0):
            expected = 1.0 - np.exp(-t / life)
            assert em.timebin_capture(g_d, t) == pytest.approx(expected, abs=2e-3)

    def test_invert_capture_round_trip(self):
        _, g_d = em.hom_correlations(em.TC1, em.TC2)
        for f in (0.125, 0.5, 0.9):
            t = em.invert_capture(g_d, f)
            assert em.timebin_capture(g_d, t) == pytest.approx(f, abs=1e-3)
