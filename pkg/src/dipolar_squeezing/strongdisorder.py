"""Strong-disorder estimates of the XY/dimer phase boundary near the Heisenberg point.

Couplings are J/r^3 with r in the same length units as a, and densities
are rho = f/a^2.
"""
from __future__ import annotations

import math
import warnings

import numpy as np
from scipy import integrate, optimize, special

from .localfields import EULER_GAMMA, r_typ


class ToleranceError(RuntimeError):
    pass


class UnanchoredBoundaryError(ValueError):
    pass


ASYMPTOTIC = "asymptotic"
PREASYMPTOTIC = "preasymptotic"


def e_x(f: float, a: float = 1.0, J: float = 1.0) -> float:
    """Continuum estimate of the XY energy per spin at small filling."""
    return -math.pi * J * f / (4 * a**3)


def heisenberg_excitation(f: float, a: float = 1.0, J: float = 1.0) -> tuple[float, float]:
    """Typical excitation scale 2 pi rho J / r_typ; returns (value, prefactor of f^{3/2})."""
    rho = f / a**2
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        value = 2 * math.pi * rho * J / r_typ(f, a)
    prefactor = 2 * math.pi**1.5 * math.exp(EULER_GAMMA / 2) * J / a**3
    return value, prefactor


def freezing_radius(delta: float, Tc: float, J: float = 1.0) -> float:
    """Pair separation whose gap J(1-Delta)/(2 r^3) equals T_c; 0 when the gap is closed."""
    if Tc <= 0:
        raise ValueError("T_c must be positive")
    if delta >= 1:
        return 0.0
    return ((1 - delta) * J / (2 * Tc)) ** (1 / 3)


def dimer_gs_energy(J, delta, h):
    """Variational pair ground-state energy in a transverse field h."""
    J = np.asarray(J, dtype=float)
    out = -(J / 4 + np.sqrt(h * h + (J * (1 - delta) / 4) ** 2))
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# 2F1(-1/2, -1/3; 2/3; -z)


def hyp2f1_neg(z: float) -> float:
    """2F1(-1/2, -1/3; 2/3; -z) for z >= 0."""
    if z < 0:
        raise ValueError("z must be non-negative")
    return float(special.hyp2f1(-0.5, -1.0 / 3.0, 2.0 / 3.0, -z))


def _z_param(delta, h, a, J):
    return ((1 - delta) * J / (4 * a**3 * h)) ** 2


def delta_Ec(f: float, delta: float, h: float, a: float = 1.0, J: float = 1.0,
             method: str = "hypergeometric") -> float:
    """Energy change per spin from pairs relaxing away from the Heisenberg state."""
    if delta == 1:
        return 0.0
    if method == "hypergeometric":
        if h <= 0:
            raise ValueError("the closed form needs h > 0")
        z = _z_param(delta, h, a, J)
        return -0.5 * math.pi * f * h * (1 - hyp2f1_neg(z))
    if method == "quadrature":
        rho = f / a**2
        c = abs(1 - delta) * J / 4

        def integrand(r):
            g = c / r**3
            return -math.pi * r * rho * g * g / (h + math.sqrt(h * h + g * g))

        r_star = (c / h) ** (1 / 3) if h > 0 else a
        pieces = [(a, max(a, r_star)), (max(a, r_star), math.inf)]
        total, err = 0.0, 0.0
        for lo, hi in pieces:
            if hi <= lo:
                continue
            val, e = integrate.quad(integrand, lo, hi, epsabs=0, epsrel=1e-13, limit=400)
            total += val
            err += e
        if err > 1e-10 * abs(total) + 1e-300:
            raise ToleranceError(f"quadrature error {err:.3g} exceeds tolerance")
        return total
    raise ValueError(f"unknown method {method!r}")


def delta_Ec_small_h(f: float, delta: float, a: float = 1.0, J: float = 1.0) -> float:
    return -math.pi * J * (1 - delta) * f / (4 * a**3)


# ---------------------------------------------------------------------------
# boundary


def crossover_filling() -> float:
    """Filling where the sqrt(f) and f asymptotes of the self-consistent boundary meet."""
    return 1.0 / (8 * math.pi)


def delta_c_boundary(f: float, regime: str = ASYMPTOTIC, calibration=None):
    """1 - Delta_c scaled from an (f0, 1 - Delta_c0) anchor; returns (value, crossover filling)."""
    if calibration is None:
        raise UnanchoredBoundaryError("boundary prefactor needs an (f0, 1 - Delta_c) anchor")
    f0, anchor = calibration
    if f0 <= 0 or anchor <= 0:
        raise ValueError("anchor must be positive")
    if regime == ASYMPTOTIC:
        value = anchor * math.sqrt(f / f0)
    elif regime == PREASYMPTOTIC:
        value = anchor * f / f0
    else:
        raise ValueError(f"unknown regime {regime!r}")
    return value, crossover_filling()


def delta_c_selfconsistent(f: float, a: float = 1.0, J: float = 1.0) -> float:
    """1 - Delta at which the pair energy release matches the typical excitation scale.

    Solves |delta_Ec(f, Delta, h = E_H)| = E_H with E_H from heisenberg_excitation.
    Carries no calibrated prefactor; use for scaling only.
    """
    EH, _ = heisenberg_excitation(f, a, J)
    g = lambda x: -delta_Ec(f, 1 - x, EH, a, J) - EH
    hi = 1.0
    while g(hi) < 0:
        hi *= 2
        if hi > 1e8:
            raise RuntimeError("no boundary found")
    return float(optimize.brentq(g, 1e-300, hi, xtol=1e-300, rtol=1e-13))
