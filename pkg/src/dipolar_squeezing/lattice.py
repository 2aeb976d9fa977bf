"""Diluted square-lattice realizations and dipolar 1/r^3 couplings."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import integrate

OPEN = "open"
PERIODIC = "periodic_images"
BOUNDARIES = (OPEN, PERIODIC)


class InvalidFillingError(ValueError):
    pass


class EmptySystemError(ValueError):
    pass


class DegenerateGeometryError(ValueError):
    pass


@dataclass(frozen=True)
class LatticeSpec:
    L: int
    f: float
    a: float = 1.0
    J: float = 1.0
    boundary: str = OPEN

    def __post_init__(self):
        if int(self.L) != self.L or self.L < 2:
            raise ValueError(f"L must be an integer >= 2, got {self.L}")
        if not 0.0 < self.f <= 1.0:
            raise ValueError(f"filling must lie in (0, 1], got {self.f}")
        if self.a <= 0 or self.J <= 0:
            raise ValueError("lattice constant and coupling scale must be positive")
        if self.boundary not in BOUNDARIES:
            raise ValueError(f"unknown boundary mode {self.boundary!r}")

    @property
    def density(self) -> float:
        return self.f / self.a**2


@dataclass(frozen=True)
class Realization:
    spec: LatticeSpec
    sites: np.ndarray = field(repr=False)
    seed: int = 0
    stream: int = 0

    @property
    def N(self) -> int:
        return len(self.sites)

    @property
    def positions(self) -> np.ndarray:
        return self.sites * self.spec.a

    def to_json(self) -> str:
        s = self.spec
        return json.dumps({
            "L": s.L, "a": s.a, "f": s.f, "J": s.J, "boundary": s.boundary,
            "seed": int(self.seed), "stream": int(self.stream),
            "sites": self.sites.tolist(),
        })

    @classmethod
    def from_json(cls, text: str) -> "Realization":
        d = json.loads(text)
        spec = LatticeSpec(L=d["L"], f=d["f"], a=d.get("a", 1.0), J=d.get("J", 1.0),
                           boundary=d.get("boundary", OPEN))
        sites = np.asarray(d["sites"], dtype=np.int64).reshape(-1, 2)
        return cls(spec, sites, d.get("seed", 0), d.get("stream", 0))

    def subset(self, keep) -> "Realization":
        return Realization(self.spec, self.sites[np.asarray(keep)], self.seed, self.stream)


def nearest_odd_count(f: float, L: int) -> int:
    """Spin count fL^2 rounded to the nearest odd integer.

    An exact even target is a tie; it rounds up unless that overflows the lattice.
    """
    n_sites = L * L
    target = f * n_sites
    nearest = round(target)
    if abs(target - nearest) < 1e-9:
        target = float(nearest)
    lo = 2 * math.floor((target - 1) / 2) + 1
    hi = lo + 2
    n = hi if (hi - target) <= (target - lo) else lo
    if n > n_sites:
        n = lo
    if n > n_sites:
        raise InvalidFillingError(f"{n} spins do not fit on {n_sites} sites")
    if n < 1:
        raise EmptySystemError(f"filling {f} on L={L} leaves no spins")
    return n


def rng_for(seed: int, stream: int, *extra: int) -> np.random.Generator:
    """Counter-based generator keyed by (seed, stream, ...); no shared state."""
    key = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, int(stream), *map(int, extra)])
    return np.random.Generator(np.random.Philox(key))


def dilute(spec: LatticeSpec, seed: int, stream: int = 0) -> Realization:
    n = nearest_odd_count(spec.f, spec.L)
    rng = rng_for(seed, stream)
    idx = np.sort(rng.choice(spec.L * spec.L, size=n, replace=False))
    sites = np.stack([idx % spec.L, idx // spec.L], axis=1).astype(np.int64)
    return Realization(spec, sites, seed, stream)


def from_sites(sites, L: int, f: float | None = None, a: float = 1.0, J: float = 1.0) -> Realization:
    """Wrap explicit integer site coordinates (mostly for tests and fixtures)."""
    sites = np.asarray(sites, dtype=np.int64).reshape(-1, 2)
    if f is None:
        f = len(sites) / (L * L)
    return Realization(LatticeSpec(L=L, f=f, a=a, J=J), sites)


# ---------------------------------------------------------------------------
# lattice sums


def _cos_power_integral(p: float) -> float:
    """int_0^{pi/4} cos(t)^p dt."""
    return integrate.quad(lambda t: math.cos(t) ** p, 0.0, math.pi / 4, epsabs=0, epsrel=1e-13)[0]


def _square_outside_integral(k: float, s: float) -> float:
    # integral of rho^-k over the plane outside the square [-s, s]^2
    return 8.0 / (k - 2.0) * s ** (2.0 - k) * _cos_power_integral(k - 2.0)


def _square_shell_norms(M: int) -> np.ndarray:
    n = np.arange(-M, M + 1, dtype=float)
    r2 = n[:, None] ** 2 + n[None, :] ** 2
    r2[M, M] = np.inf
    return r2


@lru_cache(maxsize=None)
def punctured_lattice_zeta(k: float, rel_tol: float = 1e-12) -> float:
    """Sum of |n|^-k over Z^2 without the origin, for k > 2.

    Direct summation over a square, plus the continuum integral of the
    outside region with its leading midpoint-rule correction.
    """
    if k <= 2:
        raise ValueError("lattice zeta diverges for k <= 2")
    M = max(32, int(math.ceil((40.0 / rel_tol) ** (1.0 / (k + 2)))))
    M = min(M, 3000)
    r2 = _square_shell_norms(M)
    inner = float(np.sum(r2 ** (-k / 2)))
    s = M + 0.5
    tail = _square_outside_integral(k, s) - k * k / 24.0 * _square_outside_integral(k + 2, s)
    return inner + tail


def lattice_sum(p: int, rel_tol: float = 1e-10) -> float:
    """4 * sum_{n>=1, m>=0} (n^2 + m^2)^(-3p/2): the per-site sum of J_ij^p at f=1."""
    if p not in (1, 2, 3):
        raise ValueError(f"lattice_sum is defined for p in {{1, 2, 3}}, got {p}")
    return punctured_lattice_zeta(3.0 * p, rel_tol)


# ---------------------------------------------------------------------------
# couplings


def _open_couplings(pos: np.ndarray, J: float) -> np.ndarray:
    d = np.sqrt(np.sum((pos[:, None, :] - pos[None, :, :]) ** 2, axis=-1))
    np.fill_diagonal(d, np.inf)
    if np.any(d == 0):
        raise DegenerateGeometryError("two spins share a site")
    return J / d**3


def _image_order(rel_tol: float) -> int:
    # fourth-order remainder of the tail expansion scales as M^-5
    return int(math.ceil((4.0 / rel_tol) ** 0.2)) + 2


@lru_cache(maxsize=32)
def periodic_image_table(L: int, rel_tol: float = 1e-8) -> np.ndarray:
    """Image sum T[dx, dy] = sum_n |d + L n|^-3 in lattice units, d = (dx, dy) mod L.

    Images inside the square |n|_inf <= M are summed directly; the rest is
    expanded about the bare lattice points, which leaves only the isotropic
    second-order term and a remainder of order (|d|/L)^4 M^-5.
    """
    M = _image_order(rel_tol)
    half = np.arange(L)
    half = np.where(half > L // 2, half - L, half).astype(float)
    dx, dy = np.meshgrid(half, half, indexing="ij")
    n = np.arange(-M, M + 1, dtype=float) * L
    table = np.zeros((L, L))
    for ix in range(L):
        X = dx[ix][:, None, None] + n[None, :, None]
        Y = dy[ix][:, None, None] + n[None, None, :]
        R2 = X * X + Y * Y
        with np.errstate(divide="ignore"):
            contrib = np.where(R2 > 0, R2**-1.5, 0.0)
        table[ix] = contrib.sum(axis=(1, 2))
    r2 = _square_shell_norms(M)
    tail3 = punctured_lattice_zeta(3.0) - float(np.sum(r2**-1.5))
    tail5 = punctured_lattice_zeta(5.0) - float(np.sum(r2**-2.5))
    d2 = dx * dx + dy * dy
    table += tail3 / L**3 + 9.0 * d2 / (4.0 * L**5) * tail5
    table[0, 0] = 0.0
    return table


def brute_force_image_sum(d, L: int, n_max: int) -> float:
    """Plain truncated image sum over |n|_inf <= n_max (test oracle, lattice units)."""
    n = np.arange(-n_max, n_max + 1, dtype=float) * L
    X = d[0] + n[:, None]
    Y = d[1] + n[None, :]
    R2 = X * X + Y * Y
    return float(np.sum(R2[R2 > 0] ** -1.5))


def coupling_matrix(r: Realization, mode: str | None = None, rel_tol: float = 1e-8) -> np.ndarray:
    """Symmetric dipolar coupling matrix J_ij with zero diagonal.

    ``open`` uses the true Euclidean separations; ``periodic_images`` sums
    1/r^3 over every periodic image of the L x L cell.
    """
    mode = mode or r.spec.boundary
    if not 0 < rel_tol <= 1e-3:
        raise ValueError("rel_tol must lie in (0, 1e-3]")
    sites = np.asarray(r.sites)
    if len({tuple(s) for s in sites.tolist()}) != len(sites):
        raise DegenerateGeometryError("two spins share a site")
    a, J, L = r.spec.a, r.spec.J, r.spec.L
    if mode == OPEN:
        return _open_couplings(sites * a, J)
    if mode != PERIODIC:
        raise ValueError(f"unknown boundary mode {mode!r}")
    table = periodic_image_table(L, rel_tol)
    dx = np.mod(sites[:, None, 0] - sites[None, :, 0], L)
    dy = np.mod(sites[:, None, 1] - sites[None, :, 1], L)
    C = table[dx, dy] * (J / a**3)
    np.fill_diagonal(C, 0.0)
    return C


def open_lattice_couplings(L: int) -> np.ndarray:
    """Couplings of the fully filled open L x L lattice (a = J = 1)."""
    x, y = np.meshgrid(np.arange(L), np.arange(L), indexing="ij")
    pos = np.stack([x.ravel(), y.ravel()], axis=1).astype(float)
    return _open_couplings(pos, 1.0)


def triangle_value(C: np.ndarray, L: int) -> float:
    """L^-2 * sum over ordered triples of J_ij J_jk J_ki."""
    return float(np.sum((C @ C) * C)) / L**2


def triangle_sum(sizes) -> tuple[dict[int, float], float]:
    """Per-size open-lattice triangle sums and their linear 1/L intercept."""
    from .stats import linear_extrapolate_inverseL

    sizes = [int(L) for L in sizes]
    if len(sizes) < 2:
        raise ValueError("triangle_sum needs at least two sizes to extrapolate")
    if any(b <= a for a, b in zip(sizes, sizes[1:])):
        raise ValueError("sizes must be strictly increasing")
    if sizes[0] < 8:
        raise ValueError("sizes below 8 are too far from the thermodynamic limit")
    values = {L: triangle_value(open_lattice_couplings(L), L) for L in sizes}
    intercept, _, _ = linear_extrapolate_inverseL(list(values.items()))
    return values, intercept
