"""Mean-field and high-temperature cluster-expansion estimates of T_c.

Lattice sums are per site in units of J/a^3.  The B_k are the connected
per-spin coefficients of the expansion of ln Z in powers of the transverse
field, organised so that the critical condition reads sum_k B_k beta^(k+1)
lambda^k = 0 order by order.
"""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import optimize

from . import lattice


class SingularCoefficientError(ZeroDivisionError):
    pass


class SeriesTruncationWarning(UserWarning):
    """The lambda -> 1 truncation of the second-order series is not well controlled."""


class ValidityWarning(UserWarning):
    pass


@dataclass(frozen=True)
class SumConstants:
    s1: float
    s2: float
    s3: float
    s_tri: float
    source: str = "computed"

    def __post_init__(self):
        if not (self.s1 > self.s2 > self.s3 > 0 and self.s_tri > 0):
            raise ValueError("sum constants must satisfy s1 > s2 > s3 > 0 and s_tri > 0")


# truncated values as quoted in the literature; kept for side-by-side comparison
PAPER_CONSTANTS = SumConstants(9.03, 4.658, 4.191, 2.390, source="published")

TRIANGLE_SIZES = (16, 24, 32, 48, 64)


@lru_cache(maxsize=4)
def computed_constants(tri_sizes: tuple = TRIANGLE_SIZES, rel_tol: float = 1e-8) -> SumConstants:
    s1, s2, s3 = (lattice.lattice_sum(p, rel_tol) for p in (1, 2, 3))
    _, s_tri = lattice.triangle_sum(tri_sizes)
    return SumConstants(s1, s2, s3, s_tri)


def default_constants() -> SumConstants:
    return computed_constants()


@dataclass(frozen=True)
class BCoefficients:
    B0: float
    B1: float
    B2: float
    B3: float


def _check_f(f):
    if not 0.0 < f <= 1.0:
        raise ValueError(f"filling must lie in (0, 1], got {f}")


def tc_mean_field(f: float, consts: SumConstants | None = None, J: float = 1.0) -> float:
    _check_f(f)
    consts = consts or default_constants()
    return J * f * consts.s1 / 4.0


def b_coefficients(f: float, delta: float, consts: SumConstants | None = None, J: float = 1.0) -> BCoefficients:
    """Disorder-averaged coefficients from the lattice sums.

    Products of walks are factorized, sum JJ -> (sum J)^2 and sum J^2 J -> s2 s1.
    The single-bond cubic term carries one power of f like every other
    one-bond sum.
    """
    _check_f(f)
    c = consts or default_constants()
    d = delta
    g = 4 + d + d * d
    B1 = -f * c.s1 / 16.0
    B2 = (2 * f**2 * c.s1**2 - (2.0 / 3.0) * g * f * c.s2) / 64.0
    B3 = (-6 * f**3 * c.s1**3 + 2 * (4 + d**3) * f**2 * c.s_tri
          + 4 * g * f**2 * c.s2 * c.s1 - 2 * (3 + 4 * d + d * d) * f * c.s3) / 256.0
    return BCoefficients(0.25, J * B1, J**2 * B2, J**3 * B3)


def b_coefficients_from_couplings(C, delta: float) -> BCoefficients:
    """Exact per-spin coefficients for a finite coupling matrix (no factorization)."""
    C = np.asarray(C, dtype=float)
    N = len(C)
    d = delta
    g = 4 + d + d * d
    col = C.sum(axis=0)
    C2 = C @ C
    s1 = C.sum() / N
    s2 = np.sum(C**2) / N
    s3 = np.sum(C**3) / N
    P2 = np.sum(col**2) / N
    P3 = float(col @ C @ col) / N
    Q = float(np.sum((C**2) @ col)) / N
    t = float(np.trace(C2 @ C)) / N
    B1 = -s1 / 16.0
    B2 = (2 * P2 - (2.0 / 3.0) * g * s2) / 64.0
    B3 = (-6 * P3 + 4 * g * Q + 2 * (4 + d**3) * t - 2 * (3 + 4 * d + d * d) * s3) / 256.0
    return BCoefficients(0.25, B1, B2, B3)


def ce1_constant(consts: SumConstants | None = None) -> float:
    c = consts or default_constants()
    return 2.0 * c.s2 / (3.0 * c.s1**2)


def beta_c_ce1(f: float, delta: float, consts: SumConstants | None = None, J: float = 1.0) -> float:
    c = consts or default_constants()
    beta_mf = 1.0 / tc_mean_field(f, c, J)
    return (1.0 + ce1_constant(c) * (4 + delta + delta * delta) / f) * beta_mf


def tc_ce1(f: float, delta: float, consts: SumConstants | None = None, J: float = 1.0) -> float:
    return 1.0 / beta_c_ce1(f, delta, consts, J)


def delta_peak_ce1() -> float:
    # 4 + Delta + Delta^2 is minimal at Delta = -1/2 independently of f
    return -0.5


def series_beta_c(B: BCoefficients, lam: float = 1.0, order: int = 2) -> float:
    """Solution of the critical condition in powers of lambda, truncated at ``order`` (0, 1 or 2)."""
    B1, B2, B3 = B.B1, B.B2, B.B3
    if B1 == 0:
        raise SingularCoefficientError("B1 = 0: the series for beta_c is singular")
    if order not in (0, 1, 2):
        raise ValueError("order must be 0, 1 or 2")
    out = -1.0 / (4 * B1)
    if order >= 1:
        out += lam * (-8 * B1**2 + B2) / (16 * B1**3)
    if order >= 2:
        out += lam**2 * (-128 * B1**4 + 36 * B1**2 * B2 - 4 * B2**2 + B1 * B3) / (128 * B1**5)
    return out


def beta_c_series_ce2(f: float, delta: float, consts: SumConstants | None = None,
                      lam: float = 1.0, J: float = 1.0, drop_b3: bool = False) -> float:
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lambda must lie in [0, 1]")
    B = b_coefficients(f, delta, consts, J)
    if drop_b3:
        B = BCoefficients(B.B0, B.B1, B.B2, 0.0)
    if lam > 0:
        warnings.warn("second-order series truncated at lambda -> 1 is not well controlled",
                      SeriesTruncationWarning, stacklevel=2)
    return series_beta_c(B, lam)


def delta_peak_ce2(f: float, consts: SumConstants | None = None, form: str = "closed") -> float:
    """Anisotropy at which the second-order T_c peaks.

    ``closed``: -1/2 + (9/16)(s3/f - s_tri)/(s1 s2).
    ``linearized``: the same expansion carried out on ``b_coefficients``,
    -1/2 + (9/16)(4 s3/f - s_tri)/(s1 s2).
    ``series``: numerical maximum of T_c from the full lambda = 1 series.
    """
    _check_f(f)
    c = consts or default_constants()
    if f < 0.05:
        warnings.warn("peak formula is a small-correction expansion; unreliable as f -> 0",
                      ValidityWarning, stacklevel=2)
    if form == "closed":
        return -0.5 + (9.0 / 16.0) * (c.s3 / f - c.s_tri) / (c.s1 * c.s2)
    if form == "linearized":
        return -0.5 + (9.0 / 16.0) * (4 * c.s3 / f - c.s_tri) / (c.s1 * c.s2)
    if form == "series":
        def beta(d):
            return series_beta_c(b_coefficients(f, d, c), 1.0)
        # scan for interior maxima of T_c (minima of beta_c); the series can
        # turn up again at large |Delta|, so take the interior peak closest to -1/2
        grid = np.linspace(-3.0, 1.0, 401)
        vals = np.array([beta(d) for d in grid])
        ok = np.isfinite(vals) & (vals > 0)
        peaks = [k for k in range(1, len(grid) - 1)
                 if ok[k - 1:k + 2].all() and vals[k] <= vals[k - 1] and vals[k] <= vals[k + 1]]
        if not peaks:
            return float("nan")
        k = min(peaks, key=lambda k: abs(grid[k] + 0.5))
        res = optimize.minimize_scalar(beta, bounds=(grid[k - 1], grid[k + 1]), method="bounded",
                                       options={"xatol": 1e-10})
        return float(res.x)
    raise ValueError(f"unknown form {form!r}")


def write_grid_csv(path, f_grid, delta_grid, consts: SumConstants | None = None) -> None:
    c = consts or default_constants()
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["f", "delta", "Tc_MF", "Tc_CE1", "delta_peak_CE2"])
        for f in f_grid:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", ValidityWarning)
                dp = delta_peak_ce2(f, c)
            for d in delta_grid:
                w.writerow([repr(float(f)), repr(float(d)), repr(tc_mean_field(f, c)),
                            repr(tc_ce1(f, d, c)), repr(dp)])
