"""Local-field statistics on diluted lattices.

J_i is the sum of couplings seen by spin i in a uniformly polarized system.
The analytic densities treat spins as a continuum of density f/a^2 with an
exclusion disk of radius a.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .lattice import Realization

EULER_GAMMA = 0.5772156649015329

DIAG = 2.0**-1.5
MOTIFS = (
    ("One diagonal neighbor", DIAG),
    ("Two diagonal neighbors", 2.0 * DIAG),
    ("One horizontal/vertical neighbor", 1.0),
    ("One horizontal/vertical and one diagonal neighbor", 1.0 + DIAG),
    ("Two horizontal/vertical neighbors", 2.0),
)


class AllShelvedError(ValueError):
    pass


class DiluteValidityWarning(UserWarning):
    pass


def motif_thresholds() -> np.ndarray:
    return np.array([t for _, t in MOTIFS])


def local_fields(C) -> np.ndarray:
    C = np.asarray(C, dtype=float)
    return C.sum(axis=1) - np.diag(C)


def nn_distance_pdf(r, f: float, a: float = 1.0):
    """Density of the nearest-neighbor distance, 2 pi r rho exp(-rho pi (r^2 - a^2))."""
    r = np.asarray(r, dtype=float)
    if np.any(r < a):
        raise ValueError("nearest-neighbor distance is bounded below by the lattice constant")
    rho = f / a**2
    out = 2.0 * np.pi * r * rho * np.exp(-rho * np.pi * (r * r - a * a))
    return float(out) if out.ndim == 0 else out


def nn_distance_cdf(r, f: float, a: float = 1.0):
    r = np.maximum(np.asarray(r, dtype=float), a)
    rho = f / a**2
    out = -np.expm1(-rho * np.pi * (r * r - a * a))
    return float(out) if out.ndim == 0 else out


def field_max(f: float, a: float = 1.0, J: float = 1.0) -> float:
    """Largest field reachable in the nearest-neighbor picture (r_nn = a)."""
    return 2.0 * np.pi * (f / a**2) * J / a


def field_pdf(Ji, f: float, a: float = 1.0, J: float = 1.0):
    """Density of local fields when J_i = 2 pi rho J / r_nn.

    Vanishes above the field of a neighbor at distance a, where the
    nearest-neighbor density has no support.
    """
    Ji = np.asarray(Ji, dtype=float)
    if np.any(Ji <= 0):
        raise ValueError("local fields must be positive")
    rho = f / a**2
    K = 4.0 * np.pi**3 * rho**2 * J**2
    out = 2.0 * rho * K / Ji**3 * np.exp(-rho * (K / Ji**2 - np.pi * a * a))
    out = np.where(Ji <= field_max(f, a, J) * (1 + 1e-12), out, 0.0)
    return float(out) if out.ndim == 0 else out


def field_cdf(Ji, f: float, a: float = 1.0, J: float = 1.0):
    Ji = np.asarray(Ji, dtype=float)
    r = 2.0 * np.pi * (f / a**2) * J / np.maximum(Ji, 1e-300)
    out = 1.0 - nn_distance_cdf(np.maximum(r, a), f, a)
    out = np.where(Ji >= field_max(f, a, J), 1.0, out)
    return float(out) if np.ndim(out) == 0 else out


def field_mode(f: float, a: float = 1.0, J: float = 1.0) -> float:
    """Stationary point of the field density: sqrt(2 rho K/3) with K = 4 pi^3 rho^2 J^2.

    Inside the support (below ``field_max``) whenever 2 pi rho a^2 < 3.
    """
    rho = f / a**2
    return math.sqrt(8.0 * np.pi**3 * rho**3 * J**2 / 3.0)


def r_typ(f: float, a: float = 1.0) -> float:
    """Typical nearest-neighbor spacing exp(<log r_nn>) of a Poisson gas of density f/a^2."""
    if not 0.0 < f <= 1.0:
        raise ValueError("filling must lie in (0, 1]")
    r = math.exp(-EULER_GAMMA / 2) * a / math.sqrt(math.pi * f)
    if r < a:
        warnings.warn(f"r_typ={r:.4f} is below the lattice constant; outside the dilute regime",
                      DiluteValidityWarning, stacklevel=2)
    return r


def nn_distances(r: Realization, periodic: bool = True) -> np.ndarray:
    """Nearest-neighbor distance of every spin; minimum-image metric when ``periodic``."""
    pos = np.asarray(r.sites, dtype=float)
    L = r.spec.L
    d = pos[:, None, :] - pos[None, :, :]
    if periodic:
        d -= L * np.round(d / L)
    d2 = np.sum(d * d, axis=-1)
    np.fill_diagonal(d2, np.inf)
    return np.sqrt(d2.min(axis=1)) * r.spec.a


def lattice_nn_cdf(r, f: float, a: float = 1.0):
    """Exact CDF of r_nn for an infinite lattice with independent occupation f.

    P(r_nn <= r) = 1 - (1 - f)^n(r), n(r) = number of sites within r of the origin.
    """
    r = np.atleast_1d(np.asarray(r, dtype=float)) / a
    rmax = float(np.max(r)) if r.size else 0.0
    M = int(math.ceil(rmax)) + 1
    n = np.arange(-M, M + 1)
    d2 = (n[:, None] ** 2 + n[None, :] ** 2).ravel()
    d2 = np.sort(d2[d2 > 0])
    counts = np.searchsorted(d2, r * r * (1 + 1e-12), side="right")
    out = 1.0 - (1.0 - f) ** counts
    return out if out.size > 1 else float(out[0])


def shelve(r: Realization, C, J0: float):
    """Keep spins whose full-system field J_i <= J0; returns (kept indices, shelved fraction)."""
    if not J0 > 0:
        raise ValueError("J0 must be positive")
    Ji = local_fields(C)
    kept = np.flatnonzero(Ji <= J0)
    if kept.size == 0:
        raise AllShelvedError(f"every spin has J_i > {J0}")
    return kept, 1.0 - kept.size / len(Ji)


# ---------------------------------------------------------------------------
# histograms


@dataclass
class FieldHistogram:
    edges: np.ndarray
    counts: np.ndarray
    n_samples: int

    def density(self) -> np.ndarray:
        widths = np.diff(self.edges)
        total = self.counts.sum()
        return self.counts / (total * widths) if total > 0 else np.zeros_like(self.counts)

    def merge(self, other: "FieldHistogram") -> "FieldHistogram":
        if not np.array_equal(self.edges, other.edges):
            raise ValueError("histograms have different binning")
        return FieldHistogram(self.edges, self.counts + other.counts, self.n_samples + other.n_samples)


def log_edges(lo: float, hi: float, bins: int = 200) -> np.ndarray:
    return np.geomspace(lo, hi, bins + 1)


def field_histogram(fields, edges=None, bins: int = 200) -> FieldHistogram:
    """Per-spin weighted histogram; default log bins over [min/2, 2 max]."""
    x = np.asarray(fields, dtype=float)
    if edges is None:
        edges = log_edges(x.min() / 2, 2 * x.max(), bins)
    counts, _ = np.histogram(x, bins=edges)
    return FieldHistogram(np.asarray(edges), counts.astype(float), len(x))


def write_histogram_csv(hist: FieldHistogram, path) -> None:
    dens = hist.density()
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["bin_left", "bin_right", "density"])
        for lo, hi, d in zip(hist.edges[:-1], hist.edges[1:], dens):
            w.writerow([repr(float(lo)), repr(float(hi)), repr(float(d))])


def write_motif_csv(path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["label", "threshold"])
        for label, t in MOTIFS:
            w.writerow([label, repr(t)])
