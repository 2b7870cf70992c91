import math
import random

import pytest

from dopplan.scaling import (CalibrationError, CalibrationSample,
                             ScalabilityModel, fit_model, op_throughput,
                             peak_dop)


def _samples(r, sigma, kappa, dops, rows=1e6, kind="TableScan"):
    model = ScalabilityModel(kind, r, sigma, kappa)
    return [CalibrationSample(kind, d, rows, rows / model.throughput(d))
            for d in dops]


def test_throughput_identity_at_dop_one():
    m = ScalabilityModel("TableScan", 1e6)
    assert op_throughput(m, 1) == 1e6


def test_throughput_perfect_linearity():
    m = ScalabilityModel("TableScan", 1e6)
    assert op_throughput(m, 100) == pytest.approx(1e8, rel=1e-12)


def test_throughput_contended():
    m = ScalabilityModel("HashProbe", 1e6, sigma=0.1, kappa=0.001)
    expected = 1e7 / (1.0 + 0.1 * 9 + 0.001 * 10 * 9)
    assert op_throughput(m, 10) == pytest.approx(expected, rel=1e-12)


def test_dop_below_one_rejected():
    m = ScalabilityModel("TableScan", 1e6)
    with pytest.raises(ValueError):
        op_throughput(m, 0)


def test_negative_coefficients_rejected():
    with pytest.raises(ValueError):
        ScalabilityModel("TableScan", 1e6, sigma=-0.1)
    with pytest.raises(ValueError):
        ScalabilityModel("TableScan", 0.0)


def test_diminishing_returns():
    # Increment shrinkage holds up to the throughput peak; past it the tail
    # decays like 1/d and the (negative) increments creep back toward zero.
    rng = random.Random(7)
    for _ in range(50):
        m = ScalabilityModel("X", rng.uniform(1e3, 1e7),
                             rng.uniform(0, 0.5), rng.uniform(0, 0.01))
        top = peak_dop(m) or 40
        gains = [m.throughput(d + 1) - m.throughput(d)
                 for d in range(1, min(top, 40))]
        for earlier, later in zip(gains, gains[1:]):
            assert later <= earlier + 1e-9 * abs(earlier)


@pytest.mark.parametrize("sigma,kappa", [(0.0, 0.01), (0.05, 0.002), (0.2, 0.0005)])
def test_retrograde_scaling_beyond_peak(sigma, kappa):
    m = ScalabilityModel("Exchange", 1e6, sigma, kappa)
    d_star = peak_dop(m)
    assert d_star == round(math.sqrt((1.0 - sigma) / kappa))
    for k in range(1, 12):
        assert m.throughput(d_star + k) < m.throughput(d_star)


def test_peak_dop_none_for_monotone():
    assert peak_dop(ScalabilityModel("TableScan", 1e6, sigma=0.3)) is None


def test_fit_recovers_linear_model():
    fitted = fit_model(_samples(1e6, 0.0, 0.0, [1, 2, 4]))
    assert fitted.r == pytest.approx(1e6, rel=1e-6)
    assert fitted.sigma == pytest.approx(0.0, abs=1e-6)
    assert fitted.kappa == pytest.approx(0.0, abs=1e-9)


def test_fit_recovers_contended_model():
    fitted = fit_model(_samples(5e5, 0.15, 0.0, [1, 2, 4, 8, 16]))
    assert fitted.r == pytest.approx(5e5, rel=1e-4)
    assert fitted.sigma == pytest.approx(0.15, rel=1e-4)
    assert fitted.kappa == pytest.approx(0.0, abs=1e-8)


def test_fit_recovers_full_model_random_draws():
    rng = random.Random(42)
    for _ in range(8):
        r = rng.uniform(1e4, 1e7)
        sigma = rng.uniform(0.01, 0.4)
        kappa = rng.uniform(1e-4, 5e-3)
        samples = _samples(r, sigma, kappa, [1, 2, 3, 4, 6, 8, 12, 16],
                           rows=rng.uniform(1e5, 1e7))
        fitted = fit_model(samples)
        assert fitted.r == pytest.approx(r, rel=1e-4)
        assert fitted.sigma == pytest.approx(sigma, rel=1e-4)
        assert fitted.kappa == pytest.approx(kappa, rel=1e-4)


def test_fit_rejects_underdetermined():
    with pytest.raises(CalibrationError):
        fit_model(_samples(1e6, 0.0, 0.0, [1, 1]))  # 2 samples, one dop
    with pytest.raises(CalibrationError, match="degenerate"):
        fit_model(_samples(1e6, 0.0, 0.0, [4, 4, 4]))


def test_fit_rejects_mixed_kinds():
    samples = _samples(1e6, 0.0, 0.0, [1, 2]) + _samples(1e6, 0.0, 0.0, [4], kind="Sort")
    with pytest.raises(CalibrationError, match="mix"):
        fit_model(samples)


def test_fit_two_distinct_dops_pins_kappa():
    fitted = fit_model(_samples(2e6, 0.1, 0.0, [1, 1, 2, 2]))
    assert fitted.kappa == 0.0
    assert fitted.r == pytest.approx(2e6, rel=1e-6)
    assert fitted.sigma == pytest.approx(0.1, rel=1e-6)
