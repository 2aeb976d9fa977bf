import math

import numpy as np
import pytest
from scipy import integrate, optimize

from dipolar_squeezing import lattice as lat
from dipolar_squeezing import localfields as lf


def test_motif_thresholds_exact():
    t = lf.motif_thresholds()
    assert t[0] == 2.0**-1.5
    assert t[1] == 2.0 * 2.0**-1.5
    assert t[2] == 1.0
    assert t[3] == 1.0 + 2.0**-1.5
    assert t[4] == 2.0
    assert np.all(np.diff(t) > 0)


def test_local_fields_pair_and_motif():
    r = lat.from_sites([[0, 0], [1, 0]], L=50)
    assert np.allclose(lf.local_fields(lat.coupling_matrix(r, lat.OPEN)), [1.0, 1.0])
    # centre spin with two nearest neighbours, far from everything else
    r = lat.from_sites([[10, 10], [9, 10], [11, 10]], L=50)
    J = lf.local_fields(lat.coupling_matrix(r, lat.OPEN))
    assert J[0] == pytest.approx(2.0)


def test_local_fields_sum_is_double_sum():
    r = lat.dilute(lat.LatticeSpec(L=20, f=0.1, boundary=lat.PERIODIC), 1)
    C = lat.coupling_matrix(r)
    direct = sum(C[i, j] for i in range(r.N) for j in range(r.N) if i != j)
    assert lf.local_fields(C).sum() == pytest.approx(direct, rel=1e-12)


def test_nn_pdf_edges_and_normalization():
    f = 0.05
    assert lf.nn_distance_pdf(1.0, f) == pytest.approx(2 * math.pi * f)
    val, _ = integrate.quad(lambda r: lf.nn_distance_pdf(r, f), 1.0, np.inf)
    assert val == pytest.approx(1.0, abs=1e-10)
    with pytest.raises(ValueError):
        lf.nn_distance_pdf(0.5, f)
    r = np.linspace(1, 10, 7)
    for x in r:
        q, _ = integrate.quad(lambda s: lf.nn_distance_pdf(s, f), 1.0, x)
        assert lf.nn_distance_cdf(x, f) == pytest.approx(q, abs=1e-12)


@pytest.mark.parametrize("f", [0.01, 0.05, 0.2])
def test_field_pdf_normalized(f):
    jmax = lf.field_max(f)
    val, _ = integrate.quad(lambda x: lf.field_pdf(x, f), 1e-12, jmax, limit=200, points=[lf.field_mode(f)])
    assert val == pytest.approx(1.0, abs=1e-6)
    assert lf.field_pdf(1.01 * jmax, f) == 0.0


def test_field_pdf_jacobian_identity():
    f, rho = 0.03, 0.03
    for r in [1.0, 1.7, 3.2, 8.0]:
        Ji = 2 * math.pi * rho / r
        dJdr = 2 * math.pi * rho / r**2
        assert lf.field_pdf(Ji, f) * dJdr == pytest.approx(lf.nn_distance_pdf(r, f), rel=1e-12)


def test_field_cdf_is_integral_of_pdf():
    f = 0.05
    for x in [0.05, 0.1, 0.2, 0.3]:
        q, _ = integrate.quad(lambda s: lf.field_pdf(s, f), 1e-9, x, limit=200)
        assert lf.field_cdf(x, f) == pytest.approx(q, abs=1e-9)


def test_field_mode_numeric():
    f = 0.01
    K = 4 * math.pi**3 * f**2
    closed = lambda x: K / x**3 * math.exp(-f * K / x**2)
    res = optimize.minimize_scalar(lambda x: -closed(x), bounds=(1e-3, 1.0),
                                   method="bounded", options={"xatol": 1e-12})
    assert res.x == pytest.approx(lf.field_mode(f), rel=1e-6)
    res = optimize.minimize_scalar(lambda x: -lf.field_pdf(x, f), bounds=(1e-4, lf.field_max(f)),
                                   method="bounded", options={"xatol": 1e-12})
    assert res.x == pytest.approx(lf.field_mode(f), rel=1e-6)


def test_r_typ_values():
    assert lf.r_typ(0.05) == pytest.approx(1.8906, abs=5e-5)
    with pytest.warns(lf.DiluteValidityWarning):
        assert lf.r_typ(1.0) == pytest.approx(0.4228, abs=5e-5)


def test_r_typ_is_poisson_geometric_mean():
    # without the exclusion disk the Poisson nearest-neighbour law gives exactly this value
    f = 0.02
    rho = f
    pdf = lambda r: 2 * math.pi * rho * r * math.exp(-math.pi * rho * r * r)
    mlog, _ = integrate.quad(lambda r: math.log(r) * pdf(r), 0, np.inf)
    assert math.exp(mlog) == pytest.approx(lf.r_typ(f), rel=1e-9)


def test_nn_distances_periodic_vs_open():
    r = lat.from_sites([[0, 0], [9, 0], [5, 5]], L=10)
    assert np.allclose(lf.nn_distances(r, periodic=True), [1.0, 1.0, math.sqrt(41)])
    assert lf.nn_distances(r, periodic=False)[0] == pytest.approx(math.sqrt(50))


def test_lattice_nn_cdf_small_radius():
    f = 0.1
    assert lf.lattice_nn_cdf(1.0, f) == pytest.approx(1 - 0.9**4)
    assert lf.lattice_nn_cdf(math.sqrt(2), f) == pytest.approx(1 - 0.9**8)
    assert lf.lattice_nn_cdf(0.5, f) == 0.0


def test_shelve_basics():
    r = lat.dilute(lat.LatticeSpec(L=40, f=0.05, boundary=lat.PERIODIC), 2)
    C = lat.coupling_matrix(r)
    kept, frac = lf.shelve(r, C, math.inf)
    assert frac == 0.0 and np.array_equal(kept, np.arange(r.N))
    with pytest.raises(lf.AllShelvedError):
        lf.shelve(r, C, 1e-9)
    prev = None
    for J0 in lf.motif_thresholds():
        k, _ = lf.shelve(r, C, J0)
        if prev is not None:
            assert set(prev) <= set(k)
        prev = k


def test_shelve_below_diagonal_threshold_removes_close_pairs():
    r = lat.dilute(lat.LatticeSpec(L=60, f=0.05, boundary=lat.PERIODIC), 9)
    C = lat.coupling_matrix(r)
    kept, _ = lf.shelve(r, C, 2.0**-1.5 * (1 - 1e-9))
    nn = lf.nn_distances(r)
    close = np.flatnonzero(nn <= math.sqrt(2) + 1e-9)
    assert len(close) > 0
    assert not set(close) & set(kept)


def test_shelved_fraction_at_unit_threshold():
    # frozen from a 10-realization ensemble at f=0.05, L=100 (open)
    fr = []
    for k in range(10):
        r = lat.dilute(lat.LatticeSpec(L=100, f=0.05, boundary=lat.OPEN), 0, k)
        fr.append(lf.shelve(r, lat.coupling_matrix(r), 1.0)[1])
    assert np.mean(fr) == pytest.approx(0.194, abs=0.02)


def test_histogram_merge_and_density(tmp_path):
    x = np.random.default_rng(3).lognormal(size=500)
    h = lf.field_histogram(x, bins=50)
    assert h.counts.sum() == 500
    d = h.density()
    assert np.sum(d * np.diff(h.edges)) == pytest.approx(1.0)
    h2 = h.merge(lf.field_histogram(x, h.edges))
    assert h2.n_samples == 1000 and np.array_equal(h2.counts, 2 * h.counts)
    with pytest.raises(ValueError):
        h.merge(lf.field_histogram(x, bins=10))
    lf.write_histogram_csv(h, tmp_path / "h.csv")
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0] == "bin_left,bin_right,density" and len(lines) == 51
