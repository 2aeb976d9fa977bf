import numpy as np
import pytest

from dipolar_squeezing import stats


def test_control_variate_perfect_correlation():
    J = np.linspace(0, 1, 50)
    m = 2.0 + 3.0 * J
    res = stats.control_variate_adjust(m, J, 0.7)
    assert res.mean == pytest.approx(2.0 + 3.0 * 0.7, rel=1e-14)
    assert np.var(stats.control_variate_samples(m, J, 0.7)) == pytest.approx(0.0, abs=1e-20)


def test_control_variate_unchanged_when_mean_exact():
    rng = np.random.default_rng(0)
    J = rng.normal(size=40)
    J -= J.mean() - 0.3
    m = J + rng.normal(size=40)
    res = stats.control_variate_adjust(m, J, 0.3)
    assert res.mean == pytest.approx(m.mean(), abs=1e-14)


def test_control_variate_degenerate():
    res = stats.control_variate_adjust([1.0, 2.0, 3.0], [5.0, 5.0, 5.0], 4.0)
    assert res.degenerate and res.mean == 2.0


def test_control_variate_independent_adjustment_small():
    rng = np.random.default_rng(1)
    shifts = []
    for n in (100, 10000):
        J = rng.normal(size=n)
        m = rng.normal(size=n)
        r = stats.control_variate_adjust(m, J, 0.0)
        shifts.append(abs(r.mean - r.raw_mean))
    assert shifts[1] < shifts[0]
    assert shifts[1] < 1e-3


def test_control_variate_variance_reduction():
    # closed form: Var(CV) / Var(raw) -> 1 - rho^2 for large n
    rho, n, reps = 0.8, 200, 2000
    rng = np.random.default_rng(2)
    raw, adj = [], []
    for _ in range(reps):
        J = rng.normal(size=n)
        m = rho * J + np.sqrt(1 - rho**2) * rng.normal(size=n)
        r = stats.control_variate_adjust(m, J, 0.0)
        raw.append(r.raw_mean)
        adj.append(r.mean)
    ratio = np.var(adj) / np.var(raw)
    assert ratio == pytest.approx(1 - rho**2, rel=0.15)


def test_bootstrap_basics():
    est, err = stats.bootstrap_ci(np.full(30, 2.5), B=200)
    assert est == 2.5 and err == 0.0
    x = np.random.default_rng(3).normal(size=400)
    est, err = stats.bootstrap_ci(x, B=2000, seed=1)
    assert err == pytest.approx(1 / np.sqrt(400), rel=0.2)
    _, err2 = stats.bootstrap_ci(x, B=2000, seed=1, double=True)
    assert err2 == 2 * err
    assert stats.bootstrap_ci(x, B=500, seed=9) == stats.bootstrap_ci(x, B=500, seed=9)
    with pytest.raises(ValueError):
        stats.bootstrap_ci(x, B=10)


def _family(beta_star, sizes, betas, c=0.4):
    return {L: np.column_stack([betas, (c + (betas - beta_star) * np.log(L)) / L]) for L in sizes}


def test_crossing_exact_on_planted_family():
    betas = np.linspace(1, 3, 21)
    curves = _family(1.7342, [16, 32, 64], betas)
    assert stats.crossing_beta(curves, (16, 32)) == pytest.approx(1.7342, abs=1e-12)
    drift = stats.crossing_drift(curves, [16, 32, 64])
    assert [d[:2] for d in drift] == [(16, 32), (32, 64)]
    # unequal grids are interpolated onto their union
    curves[32] = curves[32][::2]
    assert stats.crossing_beta(curves, (16, 32)) == pytest.approx(1.7342, abs=1e-12)


def test_crossing_scale_invariant():
    betas = np.linspace(1, 3, 21)
    curves = _family(2.1, [10, 20], betas)
    scaled = {L: np.column_stack([c[:, 0], 7.5 * c[:, 1]]) for L, c in curves.items()}
    assert stats.crossing_beta(scaled, (10, 20)) == pytest.approx(stats.crossing_beta(curves, (10, 20)), abs=1e-12)


def test_crossing_errors():
    betas = np.linspace(0, 1, 11)
    same = {10: np.column_stack([betas, betas]), 20: np.column_stack([betas, betas + 1])}
    with pytest.raises(stats.NoCrossingError):
        stats.crossing_beta(same, (10, 20), eta=0.0)
    wiggle = {10: np.column_stack([betas, np.zeros(11)]),
              20: np.column_stack([betas, np.sin(12 * betas + 0.1)])}
    with pytest.raises(stats.AmbiguousCrossingError) as ei:
        stats.crossing_beta(wiggle, (10, 20), eta=0.0)
    assert len(ei.value.crossings) >= 3


def test_bootstrap_crossing_coverage():
    # noisy planted family: fraction of 1-sigma intervals that contain beta* should be ~68%
    rng = np.random.default_rng(5)
    betas = np.linspace(1, 3, 11)
    bstar, sizes, nreal, sigma = 2.0, (16, 32), 30, 0.02
    hits, trials = 0, 150
    for t in range(trials):
        sample_curves = {}
        for L in sizes:
            clean = 0.4 + (betas - bstar) * np.log(L) / 4
            sample_curves[L] = (betas, clean + sigma * rng.normal(size=(nreal, len(betas))))
        est, err = stats.bootstrap_crossing(sample_curves, sizes, eta=0.0, B=200, seed=t)
        hits += abs(est - bstar) <= err
    cover = hits / trials
    assert 0.55 < cover < 0.80


def test_collapse_quality():
    sizes = [8, 16, 32]
    bc = 2.0

    def fam(eta, nu):
        out = {}
        for L in sizes:
            b = np.linspace(1.5, 2.5, 41)
            x = L ** (1 / nu) * (b - bc)
            out[L] = np.column_stack([b, np.tanh(x) / L**eta])
        return out

    curves = fam(1.0, 1.0)
    # residual at the true exponents is pure interpolation error
    q0 = stats.collapse_quality(curves, bc, 1.0, 1.0)
    assert q0 < 1e-3
    assert stats.collapse_quality(curves, bc, 0.5, 1.0) > 30 * q0
    grid = [(e, n) for e in (0.5, 1.0, 1.5) for n in (0.5, 1.0, 2.0)]
    best = min(grid, key=lambda g: stats.collapse_quality(curves, bc, *g))
    assert best == (1.0, 1.0)
    shuffled = dict(zip(sizes, [curves[32], curves[8], curves[16]]))
    assert stats.collapse_quality(shuffled, bc) > stats.collapse_quality(curves, bc)


def test_gaussian_extrapolation():
    x = np.linspace(-2, 1, 9)
    y = 1.3 * np.exp(-((x + 0.4) ** 2) / (2 * 0.7**2))
    g = stats.gaussian_ratio_extrapolate(np.column_stack([x, y]), 1.0)
    assert (g.A, g.mu, g.sigma) == pytest.approx((1.3, -0.4, 0.7), abs=1e-6)
    assert np.allclose(g(x), g.fit_curve(x))
    g2 = stats.gaussian_ratio_extrapolate(np.column_stack([x, y]), 0.8)
    assert np.allclose(g2(x), 0.8 * y, atol=1e-6)


def test_gaussian_extrapolation_two_scale_workflow():
    # large size = small size times a Delta-independent ratio
    x = np.linspace(-2, 0.9, 9)
    small = 0.9 * np.exp(-((x + 0.3) ** 2) / (2 * 0.8**2))
    large = 1.15 * small
    g = stats.gaussian_ratio_extrapolate(np.column_stack([x, small]), large[4] / small[4])
    assert np.max(np.abs(g(x) / large - 1)) < 0.02


def test_interpolate_Ec():
    b = np.linspace(1, 2, 11)
    tab = np.column_stack([b, 3 * b - 1, np.full(11, 0.01)])
    assert stats.interpolate_Ec(tab, b[4])[0] == 3 * b[4] - 1
    Ec, err = stats.interpolate_Ec(tab, 1.234, 0.01)
    assert Ec == pytest.approx(3 * 1.234 - 1, rel=1e-14)
    assert err == pytest.approx(0.01 + 3 * 0.01)
    quad = np.column_stack([b, b**2])
    Ec, _ = stats.interpolate_Ec(quad, 1.234)
    assert abs(Ec - 1.234**2) <= 2 * 0.1**2 / 8
    with pytest.raises(stats.ExtrapolationError):
        stats.interpolate_Ec(tab, 2.5)


def test_linear_extrapolate_inverseL():
    L = np.array([16, 24, 32, 48])
    assert stats.linear_extrapolate_inverseL(np.column_stack([L, 2.0 + 5.0 / L]))[:2] == pytest.approx((2.0, 5.0))
    a, s, r = stats.linear_extrapolate_inverseL(np.column_stack([L, np.full(4, 1.5)]))
    assert a == pytest.approx(1.5) and s == pytest.approx(0.0, abs=1e-12) and r < 1e-12
