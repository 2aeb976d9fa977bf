"""Estimators for disorder-averaged data: control variates, bootstrap,
finite-size crossings, scaling collapse and simple extrapolations."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import optimize


class NoCrossingError(ValueError):
    pass


class AmbiguousCrossingError(ValueError):
    def __init__(self, msg, crossings):
        super().__init__(msg)
        self.crossings = crossings


class ExtrapolationError(ValueError):
    pass


class FitFailure(RuntimeError):
    def __init__(self, msg, residual=None):
        super().__init__(msg)
        self.residual = residual


@dataclass
class ControlVariateResult:
    mean: float
    raw_mean: float
    coefficient: float
    degenerate: bool = False


def control_variate_adjust(samples_m, samples_J, true_mean_J) -> ControlVariateResult:
    """Correct the sample mean of ``samples_m`` by its regression on ``samples_J``.

    ``mean(m) - Cov(m, J)/Var(J) * (mean(J) - true_mean_J)``, with 1/(n-1)
    (co)variances.  A constant control leaves the raw mean, flagged degenerate.
    """
    m = np.asarray(samples_m, dtype=float)
    J = np.asarray(samples_J, dtype=float)
    if m.shape != J.shape or m.ndim != 1:
        raise ValueError("samples must be 1-d arrays of equal length")
    if len(m) < 3:
        raise ValueError("control variates need at least 3 samples")
    raw = float(m.mean())
    var_J = float(np.var(J, ddof=1))
    if var_J == 0.0:
        return ControlVariateResult(raw, raw, 0.0, degenerate=True)
    cov = float(np.sum((m - raw) * (J - J.mean())) / (len(m) - 1))
    c = cov / var_J
    return ControlVariateResult(raw - c * (float(J.mean()) - true_mean_J), raw, c)


def control_variate_samples(samples_m, samples_J, true_mean_J) -> np.ndarray:
    """Per-sample corrected values m_k - c (J_k - true_mean_J); their mean is the CV estimate."""
    res = control_variate_adjust(samples_m, samples_J, true_mean_J)
    return np.asarray(samples_m, float) - res.coefficient * (np.asarray(samples_J, float) - true_mean_J)


def bootstrap_ci(samples, statistic=np.mean, B: int = 1000, seed: int = 0,
                 double: bool = False) -> tuple[float, float]:
    """Bootstrap standard error of ``statistic`` over resampled rows of ``samples``.

    ``double=True`` applies the x2 systematic inflation used when reporting
    crossing points.
    """
    if B < 100:
        raise ValueError("use at least 100 bootstrap replicas")
    data = np.asarray(samples)
    n = len(data)
    estimate = float(statistic(data))
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), 0xB007])))
    idx = rng.integers(0, n, size=(B, n))
    reps = np.array([statistic(data[i]) for i in idx], dtype=float)
    err = float(np.std(reps, ddof=1))
    if double:
        err *= 2.0
    return estimate, err


# ---------------------------------------------------------------------------
# finite-size crossings


def _as_curve(points):
    arr = np.asarray(points, dtype=float)
    if arr.ndim != 2 or arr.shape[1] not in (2, 3) or len(arr) < 2:
        raise ValueError("each curve needs >= 2 rows of (beta, value[, error])")
    beta = arr[:, 0]
    if np.any(np.diff(beta) <= 0):
        raise ValueError("beta must be strictly increasing along a curve")
    err = arr[:, 2] if arr.shape[1] == 3 else np.zeros(len(arr))
    return beta, arr[:, 1], err


def crossing_points(curves, pair, eta: float = 1.0) -> list[float]:
    """All zeros of y_L2 L2^eta - y_L1 L1^eta on the shared beta range."""
    L1, L2 = pair
    if not L1 < L2:
        raise ValueError("pair must be ordered L1 < L2")
    b1, y1, _ = _as_curve(curves[L1])
    b2, y2, _ = _as_curve(curves[L2])
    lo, hi = max(b1[0], b2[0]), min(b1[-1], b2[-1])
    if hi <= lo:
        raise NoCrossingError("curves share no beta range")
    grid = np.union1d(b1, b2)
    grid = grid[(grid >= lo) & (grid <= hi)]
    diff = np.interp(grid, b2, y2) * L2**eta - np.interp(grid, b1, y1) * L1**eta
    roots = []
    for k in range(len(grid) - 1):
        d0, d1 = diff[k], diff[k + 1]
        if d0 == 0.0:
            roots.append(float(grid[k]))
        elif d0 * d1 < 0:
            roots.append(float(grid[k] - d0 * (grid[k + 1] - grid[k]) / (d1 - d0)))
    if diff[-1] == 0.0:
        roots.append(float(grid[-1]))
    return sorted(set(roots))


def crossing_beta(curves, pair, eta: float = 1.0) -> float:
    """Crossing of the rescaled curves y L^eta for two sizes, by linear interpolation in beta."""
    roots = crossing_points(curves, pair, eta)
    if not roots:
        raise NoCrossingError(f"no crossing between sizes {pair}")
    if len(roots) > 1:
        raise AmbiguousCrossingError(f"{len(roots)} crossings between sizes {pair}: {roots}", roots)
    return roots[0]


def bootstrap_crossing(sample_curves, pair, eta: float = 1.0, B: int = 500, seed: int = 0,
                       double: bool = False) -> tuple[float, float]:
    """Crossing point with a bootstrap error over disorder samples.

    ``sample_curves[L]`` is (betas, samples) with samples of shape
    (n_realizations, n_beta).  Replicas without a unique crossing are dropped.
    """
    if B < 100:
        raise ValueError("use at least 100 bootstrap replicas")
    L1, L2 = pair
    means = {L: np.column_stack([b, np.mean(s, axis=0)]) for L, (b, s) in sample_curves.items()}
    estimate = crossing_beta(means, pair, eta)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), 0xC055])))
    reps = []
    for _ in range(B):
        resampled = {}
        for L in (L1, L2):
            b, s = sample_curves[L]
            s = np.asarray(s)
            pick = rng.integers(0, len(s), size=len(s))
            resampled[L] = np.column_stack([b, s[pick].mean(axis=0)])
        try:
            reps.append(crossing_beta(resampled, pair, eta))
        except ValueError:
            continue
    if len(reps) < B // 2:
        warnings.warn(f"only {len(reps)}/{B} bootstrap replicas produced a unique crossing")
    err = float(np.std(reps, ddof=1)) if len(reps) > 1 else float("nan")
    return estimate, (2.0 * err if double else err)


def crossing_drift(curves, sizes, eta: float = 1.0) -> list[tuple[int, int, float]]:
    """Crossings of successive size pairs; the last entry is the one to report."""
    sizes = sorted(sizes)
    return [(a, b, crossing_beta(curves, (a, b), eta)) for a, b in zip(sizes, sizes[1:])]


# ---------------------------------------------------------------------------
# scaling collapse


def collapse_coordinates(curves, beta_c: float, eta: float = 1.0, nu: float = 1.0) -> dict:
    """Map each curve to (L^(1/nu) (beta - beta_c), y L^eta)."""
    out = {}
    for L, pts in curves.items():
        b, y, _ = _as_curve(pts)
        out[L] = np.column_stack([L ** (1.0 / nu) * (b - beta_c), y * L**eta])
    return out


def collapse_quality(curves, beta_c: float, eta: float = 1.0, nu: float = 1.0) -> float:
    """Summed squared deviation of each size from the others' piecewise-linear interpolant.

    Only the overlap of each pair of collapsed curves contributes; mean over
    the points used, so coarser grids are not favoured.
    """
    coords = collapse_coordinates(curves, beta_c, eta, nu)
    total, count = 0.0, 0
    keys = sorted(coords)
    for i in keys:
        xi, yi = coords[i][:, 0], coords[i][:, 1]
        for j in keys:
            if i == j:
                continue
            xj, yj = coords[j][:, 0], coords[j][:, 1]
            sel = (xi >= xj[0]) & (xi <= xj[-1])
            if not np.any(sel):
                continue
            total += float(np.sum((yi[sel] - np.interp(xi[sel], xj, yj)) ** 2))
            count += int(sel.sum())
    if count == 0:
        return float("inf")
    return total / count


# ---------------------------------------------------------------------------
# extrapolations


def _gaussian(x, A, mu, sigma):
    return A * np.exp(-((x - mu) ** 2) / (2.0 * sigma**2))


@dataclass
class GaussianRatioExtrapolation:
    A: float
    mu: float
    sigma: float
    ratio: float
    residual: float

    def fit_curve(self, delta):
        return _gaussian(np.asarray(delta, float), self.A, self.mu, self.sigma)

    def __call__(self, delta):
        return self.ratio * self.fit_curve(delta)


def gaussian_ratio_extrapolate(points, ratio_at_delta0: float) -> GaussianRatioExtrapolation:
    """Fit A exp(-(Delta - mu)^2 / 2 sigma^2) to small-size beta_c(Delta), scale by the Delta=0 ratio."""
    pts = np.asarray(points, dtype=float)
    if len(pts) < 4:
        raise ValueError("need at least 4 (Delta, beta_c) points")
    if ratio_at_delta0 <= 0:
        raise ValueError("ratio must be positive")
    x, y = pts[:, 0], pts[:, 1]
    k = int(np.argmax(y))
    p0 = (y[k], x[k], max(np.std(x), 1e-3))
    try:
        popt, _ = optimize.curve_fit(_gaussian, x, y, p0=p0, maxfev=20000, xtol=1e-14, ftol=1e-14)
    except RuntimeError as exc:
        raise FitFailure(f"Gaussian fit did not converge: {exc}") from exc
    resid = float(np.sqrt(np.mean((_gaussian(x, *popt) - y) ** 2)))
    if not np.all(np.isfinite(popt)):
        raise FitFailure("Gaussian fit diverged", resid)
    A, mu, sigma = popt
    return GaussianRatioExtrapolation(float(A), float(mu), float(abs(sigma)), float(ratio_at_delta0), resid)


def interpolate_Ec(E_of_beta, beta_c: float, beta_c_err: float = 0.0) -> tuple[float, float]:
    """Linear interpolation of E(beta) at beta_c; errors propagate linearly.

    Returns (E_c, error).  The error combines the bracketing point errors with
    the slope times ``beta_c_err``.
    """
    arr = np.asarray(E_of_beta, dtype=float)
    if arr.shape[1] == 2:
        arr = np.column_stack([arr, np.zeros(len(arr))])
    order = np.argsort(arr[:, 0])
    b, E, err = arr[order].T
    if not b[0] <= beta_c <= b[-1]:
        raise ExtrapolationError(f"beta_c={beta_c} outside the sampled range [{b[0]}, {b[-1]}]")
    k = int(np.searchsorted(b, beta_c))
    if b[min(k, len(b) - 1)] == beta_c:
        k = min(k, len(b) - 1)
        return float(E[k]), float(err[k])
    w = (beta_c - b[k - 1]) / (b[k] - b[k - 1])
    Ec = (1 - w) * E[k - 1] + w * E[k]
    slope = (E[k] - E[k - 1]) / (b[k] - b[k - 1])
    stat = (1 - w) * err[k - 1] + w * err[k]
    return float(Ec), float(stat + abs(slope) * beta_c_err)


def linear_extrapolate_inverseL(points) -> tuple[float, float, float]:
    """Least-squares fit of value = intercept + slope / L; returns (intercept, slope, rms residual)."""
    pts = np.asarray(points, dtype=float)
    if len(np.unique(pts[:, 0])) < 2:
        raise ValueError("need at least two distinct sizes")
    X = np.column_stack([np.ones(len(pts)), 1.0 / pts[:, 0]])
    coef, *_ = np.linalg.lstsq(X, pts[:, 1], rcond=None)
    resid = float(np.sqrt(np.mean((X @ coef - pts[:, 1]) ** 2)))
    return float(coef[0]), float(coef[1]), resid
