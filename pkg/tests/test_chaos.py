import math

import numpy as np
import pytest
from scipy.spatial import cKDTree

from actionchaos.chaos import (
    ChaosConfig,
    PhaseState,
    chaos_scan,
    chaotic_fraction,
    compare_potentials,
    default_threshold,
    lyapunov_divergence,
    lyapunov_exponent,
    poincare_section,
    sample_section,
)
from actionchaos.dynamics import PolynomialPotential, SystemParams, energy
from actionchaos.errors import ConfigError, DomainError

SYS = SystemParams(dim=2)


def quartic(lam):
    return PolynomialPotential.anharmonic(quartic=lam, dim=2)


def local_flatness(points, k=8):
    """Median ratio of the two local principal axes; ~0 on a curve, O(1) for area fill."""
    z = (points - points.mean(0)) / points.std(0)
    _, idx = cKDTree(z).query(z, k + 1)
    ratios = []
    for nb in idx:
        sv = np.linalg.svd(z[nb] - z[nb].mean(0), compute_uv=False)
        ratios.append(sv[1] / sv[0])
    return float(np.median(ratios))


class TestSection:
    def test_sampling_on_shell(self):
        V = quartic(1.0)
        for st in sample_section(SYS, V, 3.0, 20, 1):
            q, p = st.array
            assert q[1] == 0 and p[1] > 0
            assert energy(SYS, V, q, p) == pytest.approx(3.0, rel=1e-12)

    def test_uncoupled_invariant_circle(self):
        r = poincare_section(SYS, quartic(0.0), 1.0, 4, 1000.0, 2)
        for pts in r.points:
            rad = pts[:, 0] ** 2 + pts[:, 1] ** 2
            assert np.ptp(rad) < 1e-6

    def test_uncoupled_crossing_count(self):
        r = poincare_section(SYS, quartic(0.0), 1.0, 4, 1000.0, 2)
        expected = math.floor(1000.0 / (2 * math.pi))
        assert all(abs(len(p) - expected) <= 1 for p in r.points)

    def test_strong_coupling_fills_area(self):
        chaotic = poincare_section(SYS, quartic(10.0), 10.0, 4, 1000.0, 3)
        regular = poincare_section(SYS, quartic(0.2), 1.0, 4, 1000.0, 3)
        assert max(local_flatness(p) for p in chaotic.points) > 0.3
        assert max(local_flatness(p) for p in regular.points) < 0.1

    def test_energy_conservation(self):
        r = poincare_section(SYS, quartic(1.0), 5.0, 3, 1000.0, 4)
        assert r.max_energy_error < 1e-7

    def test_below_minimum(self):
        with pytest.raises(DomainError):
            sample_section(SYS, quartic(1.0), -1.0, 5, 0)


class TestLyapunov:
    def test_integrable_orbit(self):
        st = sample_section(SYS, quartic(0.0), 1.0, 1, 5)[0]
        assert lyapunov_exponent(SYS, quartic(0.0), st, t_total=1000.0).exponent <= 1e-3

    def test_invariant_plane(self):
        # y = p_y = 0 is invariant; an in-plane tangent sees pure 1-D motion
        st = PhaseState((1.3, 0.0), (0.4, 0.0))
        r = lyapunov_exponent(SYS, quartic(10.0), st, t_total=1000.0, tangent0=[1.0, 0, 0.3, 0])
        assert r.exponent <= 1e-3

    def test_chaotic_orbit_stable_and_matches_shadow(self):
        st = sample_section(SYS, quartic(10.0), 10.0, 1, 9)[0]
        a = lyapunov_exponent(SYS, quartic(10.0), st, t_total=500.0).exponent
        b = lyapunov_exponent(SYS, quartic(10.0), st, t_total=1000.0).exponent
        shadow = lyapunov_divergence(SYS, quartic(10.0), st, 500.0, delta0=1e-8)
        assert a > 0.1
        assert b == pytest.approx(a, rel=0.2)
        assert shadow == pytest.approx(a, rel=0.3)

    def test_time_reversed_segment(self):
        V = quartic(10.0)
        st = sample_section(SYS, V, 10.0, 1, 12)[0]
        fwd = lyapunov_exponent(SYS, V, st, t_total=500.0)
        q, p = fwd.final_state.q, fwd.final_state.p
        back = lyapunov_exponent(SYS, V, PhaseState(q, tuple(-x for x in p)), t_total=500.0)
        assert back.exponent == pytest.approx(fwd.exponent, rel=0.3)

    def test_running_average_history(self):
        st = sample_section(SYS, quartic(1.0), 2.0, 1, 1)[0]
        r = lyapunov_exponent(SYS, quartic(1.0), st, t_total=50.0, renorm_interval=1.0)
        assert len(r.times) == len(r.running) == 50
        assert r.running[-1] == r.exponent


class TestFraction:
    CFG = ChaosConfig(t_total=200.0)

    def test_integrable_zero(self):
        thr = default_threshold(SYS, quartic(0.0), 5.0, self.CFG)
        r = chaotic_fraction(SYS, quartic(0.0), 5.0, 100, thr, 1, config=self.CFG)
        assert r.fraction <= 0.02

    def test_threshold_must_be_positive(self):
        with pytest.raises(ConfigError):
            chaotic_fraction(SYS, quartic(1.0), 1.0, 10, 0.0, 1)

    def test_deterministic_and_worker_independent(self):
        args = (SYS, quartic(5.0), [1.0, 4.0], 12, 21, self.CFG)
        a = chaos_scan(*args, workers=1)
        b = chaos_scan(*args, workers=1)
        c = chaos_scan(*args, workers=3)
        assert a.to_csv() == b.to_csv() == c.to_csv()
        assert a.exponents_csv() == c.exponents_csv()

    def test_monotone_in_coupling(self):
        thr = default_threshold(SYS, quartic(0.0), 5.0, self.CFG)
        res = [chaotic_fraction(SYS, quartic(lam), 5.0, 100, thr, 3, config=self.CFG)
               for lam in (0.0, 1.0, 10.0)]
        for lo, hi in zip(res, res[1:]):
            assert hi.fraction >= lo.fraction - 2 * math.hypot(lo.stderr, hi.stderr)

    def test_csv_columns(self):
        r = chaos_scan(SYS, quartic(1.0), [2.0], 5, 1, ChaosConfig(t_total=20.0))
        header, row = r.to_csv().splitlines()
        assert header == "E,fraction,stderr,n_chaotic,n_total"
        assert row.split(",")[-1] == "5"


class TestCompare:
    CFG = ChaosConfig(t_total=200.0)

    def test_identical_potentials(self):
        p = compare_potentials(SYS, quartic(3.0), quartic(3.0), [1.0, 5.0], 10, 2, self.CFG)
        assert np.array_equal(p.classical.fractions, p.quantum.fractions)

    def test_empty_grid(self):
        with pytest.raises(ConfigError):
            compare_potentials(SYS, quartic(1.0), quartic(1.0), [], 10, 2)

    def test_weaker_coupling_not_more_chaotic(self):
        p = compare_potentials(SYS, quartic(1.0), quartic(0.9), [2.0, 5.0], 100, 5, self.CFG)
        for c, q in zip(p.classical.rows, p.quantum.rows):
            assert q.fraction <= c.fraction + 2 * math.hypot(c.stderr, q.stderr)
