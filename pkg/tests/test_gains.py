import math

import numpy as np
import pytest

from qplab import (DesignParams, FeedbackSpec, GainLedger, Infeasible, InvalidDelta,
                   NotContracting, compute_gains, default_design, estimate_ges,
                   linear_plant, search_eps_nu)
from qplab.gains import _h_small_gain, small_gain_margin

from conftest import ledger_design


def reference_constants(L, D, k0):
    """Independent inline evaluation of the transform/feedback constants."""
    M3 = 1.0 + k0 * max(1.0, L * D) * math.exp(L * D)
    M4 = 1.0 / (1.0 + k0 * max(1.0, k0 * L * D) * math.exp(L * D * (1.0 + k0)))
    M5 = k0 * max(1.0, L * D) * math.exp(L * D)
    return M3, M4, M5


class TestWorkedExample:
    def test_transform_constants_unit_plant(self, catalog):
        plant, fb = catalog["linear"]  # L = 1, D = 1, kappa0 = 1
        led = compute_gains(plant, fb, ledger_design())
        assert led.M3 == pytest.approx(1.0 + math.e, rel=1e-15)
        assert led.M4 == pytest.approx(1.0 / (1.0 + math.e ** 2), rel=1e-15)
        assert led.M5 == pytest.approx(math.e, rel=1e-15)

    def test_transform_constants_sine_plant(self, catalog):
        plant, fb = catalog["sine"]  # L = 1.5, kappa0 = 0.5
        led = compute_gains(plant, fb, ledger_design())
        M3, M4, M5 = reference_constants(1.5, 1.0, 0.5)
        assert led.M3 == pytest.approx(M3, rel=1e-15)
        assert led.M4 == pytest.approx(M4, rel=1e-15)
        assert led.M5 == pytest.approx(M5, rel=1e-15)

    def test_small_gain_boundary(self):
        # b3 = 1, D = 1: feasibility needs lam > 2e - 1
        assert small_gain_margin(2 * math.e - 1, 1.0, 1.0) == pytest.approx(0.0, abs=1e-15)
        assert small_gain_margin(8.0, 1.0, 1.0) == pytest.approx(0.14565721894922012, rel=1e-12)
        assert small_gain_margin(4.4, 1.0, 1.0) < 0.0

    def test_ledger_chain(self, catalog):
        plant, fb = catalog["linear"]
        led = compute_gains(plant, fb, ledger_design())
        assert led.phi == pytest.approx(0.36717584737123077, rel=1e-13)
        assert led.phi1 == pytest.approx(0.6382395969410606, rel=1e-13)
        assert led.M0 == pytest.approx(27.55745771448317, rel=1e-13)
        assert led.MBar == pytest.approx(0.0011226000437646164, rel=1e-13)
        assert led.Omega == pytest.approx(0.8368722728008643, rel=1e-13)
        assert led.T == pytest.approx(70.600038784821, rel=1e-12)
        assert led.thm1_threshold == pytest.approx(5.9746273864061485e-06, rel=1e-13)
        assert led.Omega < 1.0
        assert led.all_ok()

    def test_margins_table(self, catalog):
        plant, fb = catalog["linear"]
        led = compute_gains(plant, fb, ledger_design())
        margins = led.margins()
        assert margins["small_gain_ok"] == pytest.approx(0.14565721894922012, rel=1e-12)
        assert all(m > 0 for m in margins.values())


class TestLedgerIdentities:
    def test_independent_reevaluation(self, rng):
        for _ in range(50):
            L = float(rng.uniform(0.5, 2.0))
            D = float(rng.uniform(0.5, 1.5))
            k0 = float(rng.uniform(0.5, 2.0))
            b3 = float(rng.uniform(0.5, 2.0))
            Msig = float(rng.uniform(1.0, 3.0))
            plant, fb0 = linear_plant(0.0, 1.0, 1.0, D=D)
            plant = type(plant)(n=1, D=D, f=lambda X, u, L=L: np.atleast_1d(L * 0.0 * X + 0.0 * u),
                                L=L, name="synthetic")
            fb = FeedbackSpec(kappa=fb0.kappa, kappa0=k0,
                              ges=type(fb0.ges)(M_sigma=Msig, sigma=1.0, b3=b3))
            lam = 1.2 * (b3 + 1.0) * math.exp(D) - 1.0
            try:
                eps, nu = search_eps_nu(lam, D, b3)
            except Infeasible:
                continue
            design = DesignParams(lam=lam, eps=eps, nu=nu, delta=0.4 * min(1.0, nu),
                                  M=float(rng.uniform(5, 20)),
                                  Delta=float(rng.uniform(1e-6, 1e-4)),
                                  mu0=float(rng.uniform(0.5, 2)), tau=1.0)
            led = compute_gains(plant, fb, design)

            M3, M4, M5 = reference_constants(L, D, k0)
            phi = (1 + eps) / (1 + lam) * math.exp(D * (nu + 1))
            phi1 = (1 + eps) * phi * b3 / (1 - phi)
            M0 = (1 / (1 - phi) / (1 - phi1) * max(math.exp(D * (nu + 1)), phi * Msig)
                  + 1 / (1 - phi1) * max(Msig, (1 + eps) / (1 - phi) * math.exp(D * (nu + 1)) * b3))
            assert led.M3 == pytest.approx(M3, rel=1e-14)
            assert led.M4 == pytest.approx(M4, rel=1e-14)
            assert led.M5 == pytest.approx(M5, rel=1e-14)
            assert led.phi == pytest.approx(phi, rel=1e-14)
            assert led.phi1 == pytest.approx(phi1, rel=1e-14)
            assert led.M0 == pytest.approx(M0, rel=1e-14)
            assert led.MBar == pytest.approx(M4 / (M3 * (1 + M0)), rel=1e-14)
            assert led.Omega == pytest.approx(
                M5 * design.Delta * (1 + lam) * (1 + M0) ** 2 / (M4 * design.M), rel=1e-14)
            assert led.T == pytest.approx(
                -math.log(led.Omega / (1 + M0)) / design.delta, rel=1e-14)
            # monotone structure and implications
            assert led.T > 0 or led.Omega >= 1 + M0
            if led.thm1_ok:
                assert led.Omega < 1.0
                assert led.positive_log_arg_ok

    def test_omega_monotone_in_range_and_error(self, catalog):
        plant, fb = catalog["linear"]
        base = compute_gains(plant, fb, ledger_design())
        bigger_err = compute_gains(plant, fb, ledger_design(Delta=1e-4))
        wider_range = compute_gains(plant, fb, ledger_design(M=20.0))
        assert bigger_err.Omega > base.Omega
        assert wider_range.Omega < base.Omega

    def test_serialization_round_trip(self, catalog):
        plant, fb = catalog["linear"]
        led = compute_gains(plant, fb, ledger_design())
        led2 = GainLedger.from_json(led.to_json())
        assert led2 == led
        assert "lambda" in led.to_dict()


class TestFlagsAndErrors:
    def test_invalid_delta_raises(self, catalog):
        plant, fb = catalog["linear"]
        with pytest.raises(InvalidDelta):
            compute_gains(plant, fb, ledger_design(delta=0.2))  # >= min(sigma, nu)
        with pytest.raises(ValueError):
            ledger_design(delta=-0.1)

    def test_failed_condition_still_returns_ledger(self, catalog):
        plant, fb = catalog["linear"]
        led = compute_gains(plant, fb, ledger_design(Delta=1e-3))
        assert not led.thm1_ok and not led.thm2_ok
        assert led.small_gain_ok  # unrelated flags unaffected
        assert led.Omega > 1.0

    def test_lambda_below_small_gain(self, catalog):
        plant, fb = catalog["linear"]
        led = compute_gains(plant, fb, ledger_design(lam=3.0))
        assert not led.small_gain_ok

    def test_missing_certificate(self, catalog):
        plant, fb = catalog["linear"]
        bare = FeedbackSpec(kappa=fb.kappa, kappa0=fb.kappa0, ges=None)
        with pytest.raises(ValueError, match="certificate"):
            compute_gains(plant, bare, ledger_design())


class TestSlackSearch:
    def test_reference_point_feasible(self):
        assert _h_small_gain(0.1, 0.1, 8.0, 1.0, 1.0) == pytest.approx(
            0.7710692794795846, rel=1e-12)
        eps, nu = search_eps_nu(8.0, 1.0, 1.0)
        assert _h_small_gain(eps, nu, 8.0, 1.0, 1.0) < 1.0

    def test_boundary_is_infeasible(self):
        with pytest.raises(Infeasible):
            search_eps_nu(2 * math.e - 1.0, 1.0, 1.0)

    def test_feasible_region_grows_with_lambda(self):
        grid = np.logspace(-4, 0, 25)
        masks = {}
        for lam in (8.0, 20.0):
            masks[lam] = {(e, n) for e in grid for n in grid
                          if _h_small_gain(e, n, lam, 1.0, 1.0) < 1.0
                          and (1 + e) / (1 + lam) * math.exp(1.0 * (n + 1)) < 1.0}
        assert masks[8.0] < masks[20.0]

    def test_default_design(self, catalog):
        plant, fb = catalog["sine"]
        design = default_design(plant, fb, M=10.0, Delta=1e-5)
        assert small_gain_margin(design.lam, plant.D, fb.ges.b3) > 0
        assert 0 < design.delta < min(fb.ges.sigma, design.nu)
        led = compute_gains(plant, fb, design)
        assert led.small_gain_ok and led.phi_ok and led.phi1_ok


class TestCertificateEstimation:
    def test_sine_plant_close_to_analytic(self, catalog):
        plant, fb = catalog["sine"]
        cert = estimate_ges(plant, fb)
        assert abs(cert.M_sigma - 1.0) <= 0.1
        assert abs(cert.sigma - 1.0) <= 0.1
        assert abs(cert.b3 - 1.0) <= 0.1

    def test_faster_linear_plant(self):
        plant, fb = linear_plant(-2.0, 1.0, 1e-9)
        cert = estimate_ges(plant, fb)
        assert abs(cert.sigma - 2.0) <= 0.2

    def test_wrong_sign_feedback_not_contracting(self, catalog):
        plant, _ = catalog["linear"]
        bad = FeedbackSpec(kappa=lambda X: float(np.atleast_1d(X)[0]), kappa0=1.0)
        with pytest.raises(NotContracting):
            estimate_ges(plant, bad)
