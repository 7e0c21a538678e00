import math
import warnings

import numpy as np
import pytest

from actionchaos.dynamics import (
    PolynomialPotential,
    ShootingConfig,
    SystemParams,
    Trajectory,
    energy,
    evaluate_action,
    free_potential,
    harmonic_action_analytic,
    integrate_hamiltonian,
    parse_terms,
    format_terms,
    solve_trajectory_bvp,
)
from actionchaos.errors import (
    BVPFailure,
    CausticSingularityError,
    InvalidTrajectoryError,
    ParityError,
    PotentialError,
)

# Frozen oracle values (tests/oracles.py, DOP853 shooting at rtol 1e-13)
QUARTIC_ACTION = 0.5913336587353537
QUARTIC_VELOCITY = 0.5392213392782286
BVP2D_VELOCITY = (-0.6365493833968245, 1.1961413230456417)

ONE = SystemParams()
TWO = SystemParams(dim=2)
HARM = PolynomialPotential.harmonic()


def straight_line(T, q0, q1, n=512):
    t = np.linspace(0, T, n + 1)
    q = (q0 + (q1 - q0) * t / T).reshape(-1, 1)
    qd = np.full_like(q, (q1 - q0) / T)
    return Trajectory(T, np.array([q0]), np.array([q1]), t, q, qd)


class TestPotential:
    def test_parity_enforced(self):
        with pytest.raises(ParityError):
            PolynomialPotential({3: 1.0, 2: 0.5})

    def test_not_confining(self):
        with pytest.raises(PotentialError):
            PolynomialPotential({(2,): -1.0})

    def test_values_and_gradient(self):
        V = PolynomialPotential({(2, 0): 0.5, (0, 2): 0.5, (2, 2): 3.0})
        q = np.array([0.3, -1.2])
        assert V(q) == pytest.approx(0.5 * 0.09 + 0.5 * 1.44 + 3 * 0.09 * 1.44)
        h = 1e-6
        num = [(V(q + h * e) - V(q - h * e)) / (2 * h) for e in np.eye(2)]
        assert np.allclose(V.gradient(q), num, atol=1e-8)

    def test_terms_roundtrip(self):
        V = PolynomialPotential.anharmonic(quartic=0.25, dim=2)
        assert PolynomialPotential(parse_terms(format_terms(V))) == V


class TestAction:
    def test_free_particle(self):
        traj = straight_line(1.0, 0.0, 2.0)
        assert evaluate_action(ONE, free_potential(), traj).value == pytest.approx(2.0, abs=1e-13)

    def test_harmonic_quarter_period(self):
        t = np.linspace(0, math.pi / 2, 1025)
        traj = Trajectory(math.pi / 2, np.array([1.0]), np.array([0.0]), t,
                          np.cos(t).reshape(-1, 1), -np.sin(t).reshape(-1, 1))
        assert evaluate_action(ONE, HARM, traj).value == pytest.approx(0.0, abs=1e-12)

    def test_nonfinite_sample(self):
        traj = straight_line(1.0, 0.0, 1.0)
        traj.q[3, 0] = np.nan
        with pytest.raises(InvalidTrajectoryError):
            evaluate_action(ONE, HARM, traj)

    def test_quartic_against_oracle(self):
        V = PolynomialPotential.anharmonic(quartic=0.1)
        traj = solve_trajectory_bvp(ONE, V, -1.0, 1.0, 2.0)
        assert traj.initial_velocity[0] == pytest.approx(QUARTIC_VELOCITY, rel=1e-9)
        assert evaluate_action(ONE, V, traj).value == pytest.approx(QUARTIC_ACTION, rel=1e-8)

    def test_time_reversal(self):
        V = PolynomialPotential.anharmonic(quartic=0.1)
        traj = solve_trajectory_bvp(ONE, V, -0.7, 1.3, 1.0)
        fwd = evaluate_action(ONE, V, traj).value
        back = evaluate_action(ONE, V, traj.reversed()).value
        assert back == pytest.approx(fwd, rel=1e-10)

    def test_quadrature_estimate_is_honest(self):
        V = PolynomialPotential.anharmonic(quartic=0.1)
        coarse = solve_trajectory_bvp(ONE, V, -1.0, 1.5, 1.0, ShootingConfig(steps=64))
        fine = solve_trajectory_bvp(ONE, V, -1.0, 1.5, 1.0, ShootingConfig(steps=128))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            a = evaluate_action(ONE, V, coarse)
            b = evaluate_action(ONE, V, fine)
        assert abs(a.value - b.value) < 10 * a.error_estimate


class TestBVP:
    def test_harmonic_quarter_period_velocity(self):
        traj = solve_trajectory_bvp(ONE, HARM, 1.0, 0.0, math.pi / 2)
        assert traj.initial_velocity[0] == pytest.approx(0.0, abs=1e-9)
        assert np.allclose(traj.q[:, 0], np.cos(traj.times), atol=1e-9)

    def test_free_particle_velocity(self):
        traj = solve_trajectory_bvp(ONE, free_potential(), 0.0, 2.0, 1.0)
        assert traj.initial_velocity[0] == pytest.approx(2.0, abs=1e-12)

    def test_endpoints_and_times(self):
        traj = solve_trajectory_bvp(ONE, HARM, -0.4, 2.2, 0.8)
        assert np.all(np.diff(traj.times) > 0)
        assert traj.times[0] == 0 and traj.times[-1] == pytest.approx(0.8)
        assert traj.q[0, 0] == -0.4
        assert abs(traj.q[-1, 0] - 2.2) <= max(traj.residual, 1e-12)

    def test_2d_against_sweep_oracle(self):
        V = PolynomialPotential.anharmonic(quartic=0.05, dim=2)
        traj = solve_trajectory_bvp(TWO, V, (1.0, 0.0), (0.0, 1.0), 1.0)
        assert np.allclose(traj.initial_velocity, BVP2D_VELOCITY, rtol=1e-8)

    @pytest.mark.parametrize("T", [0.5, 1.0])
    def test_harmonic_pairs_match_closed_form(self, T):
        nodes = np.linspace(-3, 3, 7)
        for a in nodes:
            for b in nodes:
                traj = solve_trajectory_bvp(ONE, HARM, a, b, T)
                s = evaluate_action(ONE, HARM, traj).value
                ref = harmonic_action_analytic(ONE, 1.0, a, b, T).value
                assert s == pytest.approx(ref, rel=1e-8, abs=1e-12)

    def test_folded_branch_reports_failure(self):
        # the branch connected to the free path folds back before full strength
        V = PolynomialPotential.anharmonic(quartic=0.1)
        with pytest.raises(BVPFailure) as info:
            solve_trajectory_bvp(ONE, V, -4.50579479, 4.97380813, 1.0)
        assert info.value.best_residual > 0

    def test_caustic_flag_near_half_period(self):
        traj = solve_trajectory_bvp(ONE, HARM, 0.5, -0.5, math.pi - 1e-7)
        assert traj.caustic_warning

    def test_nonpositive_time(self):
        with pytest.raises(ValueError):
            solve_trajectory_bvp(ONE, HARM, 0.0, 1.0, 0.0)


class TestHarmonicAnalytic:
    def test_third_period(self):
        v = harmonic_action_analytic(ONE, 1.0, 1.0, 1.0, math.pi / 3).value
        assert v == pytest.approx(-1 / math.sqrt(3), rel=1e-12)

    def test_2d_quarter_period(self):
        v = harmonic_action_analytic(TWO, 1.0, (1.0, 1.0), (1.0, 0.0), math.pi / 2).value
        assert v == pytest.approx(-1.0, rel=1e-12)

    def test_caustic(self):
        with pytest.raises(CausticSingularityError):
            harmonic_action_analytic(ONE, 1.0, 1.0, 0.5, math.pi)


class TestIntegrator:
    def test_harmonic_period(self):
        path = integrate_hamiltonian(ONE, HARM, [1.0], [0.0], 2 * math.pi, 1e-3)
        assert np.allclose(path.q[-1], [1.0], atol=1e-6)
        assert np.allclose(path.p[-1], [0.0], atol=1e-6)

    def test_free_motion(self):
        path = integrate_hamiltonian(ONE, free_potential(), [0.0], [1.0], 3.0, 0.01)
        assert path.q[-1, 0] == pytest.approx(3.0, abs=1e-12)
        assert path.p[-1, 0] == 1.0

    def test_energy_drift_2d_quartic(self):
        V = PolynomialPotential.anharmonic(quartic=1.0, dim=2)
        q0, p0 = np.array([0.6, 0.0]), np.array([0.0, 0.0])
        p0[1] = math.sqrt(2 * (1.0 - V(q0)))
        path = integrate_hamiltonian(TWO, V, q0, p0, 1000.0, 1e-3, stride=1000)
        e = energy(TWO, V, path.q, path.p)
        assert np.max(np.abs(e - e[0])) / abs(e[0]) < 1e-7

    def test_energy_error_halves_as_expected(self):
        # step-halving oracle: a 4th-order scheme drops the energy error ~16x
        V = PolynomialPotential.anharmonic(quartic=0.1, dim=2)
        q0, p0 = np.array([2.0, 0.0]), np.array([0.0, 0.0])
        p0[1] = math.sqrt(2 * (10.0 - V(q0)))
        errs = []
        for dt in (0.02, 0.01):
            path = integrate_hamiltonian(TWO, V, q0, p0, 50.0, dt, order=4, stride=10)
            e = energy(TWO, V, path.q, path.p)
            errs.append(np.max(np.abs(e - 10.0)))
        assert 8 < errs[0] / errs[1] < 32
