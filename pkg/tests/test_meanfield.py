import warnings

import numpy as np
import pytest

from dipolar_squeezing import ed_oracle as ed
from dipolar_squeezing import meanfield as mf

P = mf.PAPER_CONSTANTS


def test_tc_mean_field_values():
    assert mf.tc_mean_field(1.0, P) == pytest.approx(2.2575)
    assert mf.tc_mean_field(1.0) == pytest.approx(2.25, abs=0.01)
    assert mf.tc_mean_field(0.5, P) == pytest.approx(0.5 * 9.03 / 4)
    assert mf.tc_mean_field(0.5) == pytest.approx(1.129, abs=1e-3)
    a, b = mf.tc_mean_field(1e-3), mf.tc_mean_field(2e-3)
    assert b == pytest.approx(2 * a, rel=1e-14)
    with pytest.raises(ValueError):
        mf.tc_mean_field(0.0)


def test_sum_constants_validation():
    with pytest.raises(ValueError):
        mf.SumConstants(1.0, 2.0, 0.5, 1.0)


def test_b_coefficients_simple_values():
    B = mf.b_coefficients(1.0, 0.3, P)
    assert B.B0 == 0.25
    assert B.B1 == pytest.approx(-9.03 / 16)


def test_ce1_constant_and_tc():
    assert mf.ce1_constant() == pytest.approx(0.0381, abs=5e-5)
    assert mf.ce1_constant(P) == pytest.approx(0.0381, abs=5e-5)
    assert mf.tc_ce1(1.0, 0.0, P) == pytest.approx(2.2575 / (1 + 4 * mf.ce1_constant(P)), rel=1e-14)
    assert mf.tc_ce1(1.0, 0.0, P) == pytest.approx(1.958, abs=2e-3)


@pytest.mark.parametrize("f", [0.05, 0.3, 1.0])
def test_ce1_peak_at_minus_half(f):
    grid = np.linspace(-2, 1, 3001)
    tc = [mf.tc_ce1(f, d) for d in grid]
    assert grid[int(np.argmax(tc))] == pytest.approx(-0.5, abs=1e-12)
    assert mf.delta_peak_ce1() == -0.5


def test_ce1_below_mean_field_and_scale_covariance():
    for f in [0.1, 0.5, 1.0]:
        for d in [-2.0, -0.5, 0.0, 0.9]:
            assert mf.tc_ce1(f, d) <= mf.tc_mean_field(f)
            assert mf.tc_ce1(f, d, J=3.0) == pytest.approx(3.0 * mf.tc_ce1(f, d), rel=1e-14)


def test_series_zeroth_order_is_mean_field():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        b = mf.beta_c_series_ce2(0.4, -0.3, lam=0.0)
    assert b == pytest.approx(1 / mf.tc_mean_field(0.4), rel=1e-14)


@pytest.mark.parametrize("f,d", [(1.0, 0.0), (0.5, -0.7), (0.2, 0.3)])
def test_first_order_series_is_ce1(f, d):
    B = mf.b_coefficients(f, d)
    assert mf.series_beta_c(B, 1.0, order=1) == pytest.approx(mf.beta_c_ce1(f, d), rel=1e-13)


def test_series_warns_and_rescales():
    with pytest.warns(mf.SeriesTruncationWarning):
        b1 = mf.beta_c_series_ce2(0.5, 0.2, lam=1.0)
    with pytest.warns(mf.SeriesTruncationWarning):
        b3 = mf.beta_c_series_ce2(0.5, 0.2, lam=1.0, J=3.0)
    assert b3 == pytest.approx(b1 / 3.0, rel=1e-13)


def test_series_singular_b1():
    with pytest.raises(mf.SingularCoefficientError):
        mf.series_beta_c(mf.BCoefficients(0.25, 0.0, 1.0, 1.0))


@pytest.mark.parametrize("seed", range(6))
def test_b_from_couplings_matches_trace_oracle(seed):
    rng = np.random.default_rng(seed)
    N = [4, 5, 6][seed % 3]
    A = rng.uniform(0.05, 1.0, size=(N, N))
    C = np.triu(A, 1) + np.triu(A, 1).T
    d = rng.uniform(-3, 1)
    B = mf.b_coefficients_from_couplings(C, d)
    ref = ed.b_coefficients_bruteforce(C, d)
    assert B.B1 == pytest.approx(ref[0], abs=1e-12)
    assert B.B2 == pytest.approx(ref[1], abs=1e-12)
    assert B.B3 == pytest.approx(ref[2], abs=1e-12)


def test_delta_peak_ce2_closed_form():
    assert mf.delta_peak_ce2(1.0, P) == pytest.approx(-0.476, abs=5e-4)
    synth = mf.SumConstants(9.0, 4.6, 2.0, 2.0)
    assert mf.delta_peak_ce2(1.0, synth) == pytest.approx(-0.5, abs=1e-15)
    with pytest.warns(mf.ValidityWarning):
        small = mf.delta_peak_ce2(1e-4, P)
    lead = 9 * P.s3 / (16 * 1e-4 * P.s1 * P.s2)
    assert small == pytest.approx(lead, rel=1e-3)


@pytest.mark.parametrize("f", [1.0, 0.5, 0.2])
def test_delta_peak_ce2_series_is_local_max(f):
    c = mf.default_constants()
    d0 = mf.delta_peak_ce2(f, c, "series")
    tc = lambda d: 1.0 / mf.series_beta_c(mf.b_coefficients(f, d, c), 1.0)
    assert tc(d0) > tc(d0 - 0.01) and tc(d0) > tc(d0 + 0.01)


def test_delta_peak_ce2_moves_toward_heisenberg_with_dilution():
    c = mf.default_constants()
    assert mf.delta_peak_ce2(0.5, c, "series") > mf.delta_peak_ce2(1.0, c, "series")
    assert mf.delta_peak_ce2(0.5, c, "linearized") > mf.delta_peak_ce2(1.0, c, "linearized")


def test_grid_csv(tmp_path):
    p = tmp_path / "g.csv"
    mf.write_grid_csv(p, [1.0, 0.5], [0.0, -0.5], P)
    rows = p.read_text().splitlines()
    assert rows[0] == "f,delta,Tc_MF,Tc_CE1,delta_peak_CE2"
    assert len(rows) == 5
    assert float(rows[1].split(",")[2]) == pytest.approx(2.2575)
