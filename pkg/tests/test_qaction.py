import math

import numpy as np
import pytest
import sympy as sp

from actionchaos.dynamics import PolynomialPotential
from actionchaos.errors import (
    DomainError,
    ParityError,
    PerturbationDomainError,
    PotentialError,
    SmallnessWarning,
)
from actionchaos.qaction import (
    PerturbationInput,
    UCoefficients,
    WCoefficients,
    first_order_shift,
    ground_state_energy_numeric,
    loglog_slope,
    perturbative_flow_1d,
    residual_scaling,
    transform_law_residual,
    wu_from_potential,
    x4_relation_gap,
)
from oracles import ho_basis_ground

# Frozen oracle values: oscillator-basis diagonalization (tests/oracles.py)
E_GR_001 = 0.5072562045246027
E_GR_01 = 0.5591463271835196


class TestCoefficients:
    def test_harmonic_w(self):
        w = wu_from_potential({2: 0.5}, 1.0, 0.5)
        assert (w.w0, w.w2, w.w4) == (-1.0, 1.0, 0.0)

    def test_quartic_w(self):
        assert wu_from_potential({2: 0.5, 4: 0.1}, 1.0, 0.5).w4 == pytest.approx(0.2)

    def test_odd_term(self):
        with pytest.raises(ParityError):
            wu_from_potential({2: 0.5, 3: 0.1}, 1.0, 0.5)

    def test_sextic_rejected(self):
        with pytest.raises(PotentialError):
            wu_from_potential({2: 0.5, 6: 0.1}, 1.0, 0.5)


class TestTransformLaw:
    def test_harmonic_exact(self):
        W = WCoefficients(-1.0, 1.0, 0.0, 1.0)
        U = UCoefficients(1.0)
        assert transform_law_residual(W, U, 1.0, np.linspace(0.1, 3, 30)) == pytest.approx(0, abs=1e-14)

    def test_nonpositive_u(self):
        with pytest.raises(DomainError):
            transform_law_residual(WCoefficients(-1, 1, 0, 1), UCoefficients(1.0, -1.0), 1.0, [2.0])

    def test_wrong_u2_is_much_worse(self):
        r = perturbative_flow_1d(PerturbationInput(lam=1e-3))
        bad = UCoefficients(1.1 * r.u.u2, r.u.u4, r.u.u6)
        assert transform_law_residual(r.w, bad, 1.0) >= 10 * r.residual_chain

    def test_series_coefficients_symbolic(self):
        # expand U - (hbar/2) U'/sqrt(U) and compare with the relations used in the flow
        x, h = sp.symbols("x hbar", positive=True)
        u2, u4, u6 = sp.symbols("u2 u4 u6", positive=True)
        U = u2 * x**2 + u4 * x**4 + u6 * x**6
        rhs = U - h / 2 * sp.diff(U, x) / (x * sp.sqrt(u2 + u4 * x**2 + u6 * x**4))
        ser = sp.expand(sp.series(rhs, x, 0, 6).removeO())
        assert sp.simplify(ser.coeff(x, 0) + h * sp.sqrt(u2)) == 0
        assert sp.simplify(ser.coeff(x, 2) - (u2 - 3 * h * u4 / (2 * sp.sqrt(u2)))) == 0
        c4 = u4 - h / (4 * u2**sp.Rational(3, 2)) * (10 * u2 * u6 - sp.Rational(5, 2) * u4**2)
        assert sp.simplify(ser.coeff(x, 4) - c4) == 0


class TestFirstOrder:
    def test_values(self):
        assert first_order_shift(1, 1, 1, 0.02) == pytest.approx(0.0075)
        assert first_order_shift(2, 1, 1, 0.02) == pytest.approx(9.375e-4)
        assert first_order_shift(1, 1, 1, 0.0) == 0.0


class TestGroundState:
    def test_harmonic(self):
        r = ground_state_energy_numeric({2: 0.5}, 1.0, 1.0, L=10, n=4000)
        assert r.energy == pytest.approx(0.5, abs=1e-6)
        assert r.convergence < 1e-6

    def test_quartic_against_basis_oracle(self):
        r = ground_state_energy_numeric({2: 0.5, 4: 0.01}, levels=3, tol=1e-9)
        assert r.energy == pytest.approx(E_GR_001, abs=1e-9)
        r = ground_state_energy_numeric({2: 0.5, 4: 0.1}, levels=3, tol=1e-9)
        assert r.energy == pytest.approx(E_GR_01, abs=1e-9)

    def test_frozen_oracle_reproducible(self):
        assert ho_basis_ground(0.01, 120) == pytest.approx(E_GR_001, abs=1e-12)

    def test_perturbation_series(self):
        # E = 1/2 + 3l/4 - 21l^2/8 + 333l^3/16 - ...
        lam = 0.01
        series = 0.5 + 0.75 * lam - 21 / 8 * lam**2 + 333 / 16 * lam**3
        assert E_GR_001 == pytest.approx(series, abs=3e-6)

    def test_domain_too_small(self):
        with pytest.raises(DomainError):
            ground_state_energy_numeric({2: 0.5}, L=2.0, n=400)


class TestFlow:
    def test_gaussian_fixed_point(self):
        r = perturbative_flow_1d(PerturbationInput(lam=0.0))
        assert (r.u.u2, r.u.u4, r.u.u6) == (1.0, 0.0, 0.0)

    def test_u2(self):
        r = perturbative_flow_1d(PerturbationInput(lam=0.01))
        assert r.u2_final == pytest.approx(1.03, rel=1e-14)

    def test_both_candidates(self):
        r = perturbative_flow_1d(PerturbationInput(lam=0.01))
        assert r.u4_printed == pytest.approx(-0.005)
        assert r.u4_chain == pytest.approx(2 / 3 * math.sqrt(1.03) * 0.03)
        assert r.designated == "chain"
        assert r.residual_chain < r.residual_printed

    def test_chain_close_to_w4(self):
        r = perturbative_flow_1d(PerturbationInput(lam=1e-3))
        assert r.u4_chain == pytest.approx(r.w.w4, rel=5e-3)

    @pytest.mark.parametrize("lam", [1e-4, 1e-3, 1e-2])
    def test_small_lambda_bounds(self, lam):
        r = perturbative_flow_1d(PerturbationInput(lam=lam))
        assert abs(r.u.u2 / r.w.w2 - 1) <= 4 * lam
        assert abs(r.u.u4) <= 4 * lam
        assert r.u.u2 > r.w.w2

    def test_x4_relation_diagnostics(self):
        r = perturbative_flow_1d(PerturbationInput(lam=1e-3))
        assert set(r.x4_relation) == {"coefficient_4", "coefficient_5/2"}
        assert r.x4_relation["coefficient_5/2"] == x4_relation_gap(
            r.w.w4, r.u.u2, r.u.u4, r.u.u6, 1.0, 2.5)

    def test_smallness(self):
        with pytest.warns(SmallnessWarning):
            PerturbationInput(lam=0.1)
        with pytest.raises(PerturbationDomainError):
            PerturbationInput(lam=1.0)

    def test_length_scale(self):
        assert PerturbationInput(m=2.0, omega=8.0, hbar=1.0).length_scale == pytest.approx(0.25)


class TestScaling:
    def test_residual_slopes(self):
        t = residual_scaling(numeric=False)
        assert t.slope_chain == pytest.approx(2.0, abs=0.1)
        assert t.slope_printed == pytest.approx(1.0, abs=0.1)
        assert t.designated == "chain"

    def test_chain_u2_consistency(self):
        t = residual_scaling()
        assert t.slope_chain_u2 == pytest.approx(2.0, abs=0.1)

    def test_loglog_slope(self):
        x = np.array([1.0, 2.0, 4.0])
        assert loglog_slope(x, 3 * x**2) == pytest.approx(2.0)
