"""Dimer-corrected mean-field theory.

Strongly coupled pairs are treated exactly; the rest of the system enters
through the static susceptibility of independent dimer blocks.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from . import lattice
from .stats import bootstrap_ci


class SingularAnisotropyError(ValueError):
    pass


class BracketError(RuntimeError):
    def __init__(self, msg, interval):
        super().__init__(msg)
        self.interval = interval


@dataclass(frozen=True)
class Pairing:
    pairs: tuple
    unpaired: tuple
    n: int

    def partner(self) -> np.ndarray:
        p = np.full(self.n, -1, dtype=np.int64)
        for i, j in self.pairs:
            p[i], p[j] = j, i
        return p


def _pair_distances(r: lattice.Realization, mode: str) -> np.ndarray:
    pos = np.asarray(r.sites, dtype=float)
    d = pos[:, None, :] - pos[None, :, :]
    if mode == lattice.PERIODIC:
        d -= r.spec.L * np.round(d / r.spec.L)
    return np.sqrt(np.sum(d * d, axis=-1)) * r.spec.a


def match_pairs(r, mode: str | None = None) -> Pairing:
    """Greedy matching: repeatedly pair the closest two unmatched spins.

    Ties go to the lexicographically smallest (i, j).  For a Realization the
    comparison uses row-major site labels rather than array positions, which
    is the same order for sorted realizations from ``dilute`` and makes the
    pairing independent of how the spins are listed.  Accepts a Realization
    or an array of positions (open metric, array order).
    """
    if isinstance(r, lattice.Realization):
        D = _pair_distances(r, mode or r.spec.boundary)
        sites = np.asarray(r.sites, dtype=np.int64)
        label = sites[:, 1] * r.spec.L + sites[:, 0]
    else:
        pos = np.asarray(r, dtype=float)
        D = np.sqrt(np.sum((pos[:, None, :] - pos[None, :, :]) ** 2, axis=-1))
        label = np.arange(len(pos))
    n = len(D)
    if n < 2:
        raise ValueError("matching needs at least two spins")
    iu, ju = np.triu_indices(n, 1)
    lo = np.minimum(label[iu], label[ju])
    hi = np.maximum(label[iu], label[ju])
    order = np.lexsort((hi, lo, np.round(D[iu, ju], 12)))
    used = np.zeros(n, dtype=bool)
    pairs = []
    for k in order:
        i, j = int(iu[k]), int(ju[k])
        if used[i] or used[j]:
            continue
        pairs.append((i, j))
        used[i] = used[j] = True
        if len(pairs) == n // 2:
            break
    return Pairing(tuple(pairs), tuple(np.flatnonzero(~used).tolist()), n)


# ---------------------------------------------------------------------------
# two-spin susceptibilities


def _phi(u):
    # (1 - e^-u)/u, exact at u = 0
    u = np.asarray(u, dtype=float)
    small = np.abs(u) < 1e-8
    safe = np.where(small, 1.0, u)
    return np.where(small, 1.0 - u / 2, -np.expm1(-safe) / safe)


def _dimer_levels(J, delta):
    e_t0 = -J * (2 - delta) / 4
    e_tpm = -J * delta / 4
    e_s = J * (2 + delta) / 4
    return e_t0, e_tpm, e_s


def chi_dimer_entries(beta, J, delta):
    """(offdiagonal, diagonal) static x-susceptibility of an isolated pair.

    Written through the two Kubo transitions T0 <-> T+- and S <-> T+-, which
    stays finite through the removable point Delta = 1.
    """
    beta = np.asarray(beta, dtype=float)
    J = np.asarray(J, dtype=float)
    if np.any(np.abs(np.asarray(delta) + 1.0) < 1e-12):
        raise SingularAnisotropyError("Delta = -1: pair susceptibility formula is singular")
    e_t0, e_tpm, e_s = _dimer_levels(J, delta)
    e_min = np.minimum(np.minimum(e_t0, e_tpm), e_s)
    w0 = np.exp(-beta * (e_t0 - e_min))
    wp = np.exp(-beta * (e_tpm - e_min))
    ws = np.exp(-beta * (e_s - e_min))
    Z = w0 + 2 * wp + ws

    def pair(ea, wa, eb, wb):
        lower = np.where(ea <= eb, wa, wb)
        return beta * lower * _phi(beta * np.abs(ea - eb))

    chi_plus = 2 * pair(e_t0, w0, e_tpm, wp) / Z
    chi_minus = 2 * pair(e_s, ws, e_tpm, wp) / Z
    off = (chi_plus - chi_minus) / 4
    diag = (chi_plus + chi_minus) / 4
    if off.ndim == 0:
        return float(off), float(diag)
    return off, diag


def chi_dimer_entries_closed(beta, J, delta):
    """Rational closed form in x = e^{-beta J}, y = 2 e^{-beta J (1-Delta)/2} (Delta != +-1)."""
    x = math.exp(-beta * J)
    y = 2 * math.exp(-beta * J * (1 - delta) / 2)
    den = J * (1 - delta * delta) * (1 + x + y)
    off = (delta * (1 - x) + (1 + x - y)) / den
    diag = (delta * (1 + x - y) + (1 - x)) / den
    return off, diag


def chi_dimer_heisenberg_limit(beta, J):
    """Delta -> 1 limit of the offdiagonal entry."""
    x = math.exp(-beta * J)
    return (beta * J - 1 + x) / (2 * J * (3 + x))


# ---------------------------------------------------------------------------
# criticality condition


def block_row_sums(beta, C, pairing: Pairing, delta) -> np.ndarray:
    """u = chi . 1 for the block-diagonal susceptibility."""
    u = np.full(pairing.n, beta / 4.0)
    if pairing.pairs:
        P = np.asarray(pairing.pairs)
        Jp = C[P[:, 0], P[:, 1]]
        off, diag = chi_dimer_entries(beta, Jp, delta)
        u[P[:, 0]] = off + diag
        u[P[:, 1]] = off + diag
    return u


def _strip_pairs(C, pairing: Pairing) -> np.ndarray:
    Cp = np.array(C, dtype=float, copy=True)
    for i, j in pairing.pairs:
        Cp[i, j] = Cp[j, i] = 0.0
    return Cp


def criticality_residual(beta, r, C, pairing: Pairing, delta, _stripped=None) -> float:
    """N^-1 [sum chi - u^T J' u], J' without the dimer bonds; negative in the ordered phase."""
    C = np.asarray(C, dtype=float)
    Cp = _stripped if _stripped is not None else _strip_pairs(C, pairing)
    u = block_row_sums(beta, C, pairing, delta)
    return float((u.sum() - u @ Cp @ u) / len(u))


def solve_beta_c(r, C, pairing: Pairing, delta, rel_tol: float = 1e-6, grid: int = 200,
                 tc_ref: float | None = None) -> float:
    """First sign change of the residual on a geometric beta grid, refined by bisection."""
    C = np.asarray(C, dtype=float)
    Cp = _strip_pairs(C, pairing)
    if tc_ref is None:
        tc_ref = C.sum() / (4 * len(C))
    if tc_ref <= 0:
        raise BracketError("no couplings outside the dimers", (0.0, 0.0))
    betas = np.geomspace(0.01 / tc_ref, 100 / tc_ref, grid)
    prev_b, prev_v = None, None
    for b in betas:
        v = criticality_residual(b, r, C, pairing, delta, Cp)
        if prev_v is not None and prev_v > 0 >= v:
            return float(optimize.bisect(
                lambda x: criticality_residual(x, r, C, pairing, delta, Cp),
                prev_b, b, rtol=rel_tol, xtol=1e-300, maxiter=200))
        prev_b, prev_v = b, v
    raise BracketError(f"residual has no sign change on [{betas[0]:.4g}, {betas[-1]:.4g}]",
                       (float(betas[0]), float(betas[-1])))


def _one_realization(args):
    r, delta, mode, pair = args
    C = lattice.coupling_matrix(r, mode)
    pairing = match_pairs(r, mode) if pair else Pairing((), tuple(range(r.N)), r.N)
    return solve_beta_c(r, C, pairing, delta)


def solve_beta_c_dimer(ensemble, delta, mode: str | None = None, pair: bool = True,
                       B: int = 1000, seed: int = 0, workers: int = 1, return_samples: bool = False):
    """Ensemble-mean beta_c with a bootstrap error over realizations."""
    tasks = [(r, delta, mode or r.spec.boundary, pair) for r in ensemble]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(workers) as ex:
            roots = list(ex.map(_one_realization, tasks))
    else:
        roots = [_one_realization(t) for t in tasks]
    roots = np.asarray(roots)
    if len(roots) == 1:
        out = (float(roots[0]), float("nan"))
    else:
        out = bootstrap_ci(roots, np.mean, B=max(B, 100), seed=seed)
    return (*out, roots) if return_samples else out


# ---------------------------------------------------------------------------
# isolated-dimer susceptibility


def dimer_chi(T, J, delta):
    """Uniform susceptibility of one pair: 2(1 - e^{-g/T})/g / (1 + e^{-J/T} + 2 e^{-g/T}), g = J(1-Delta)/2."""
    gap = J * (1 - delta) / 2
    u = gap / T
    return 2.0 * float(_phi(u)) / T / (1 + math.exp(-J / T) + 2 * math.exp(-u))


def chi_ratio_deep(u):
    """chi / (2/3T) for J >> T as a function of u = E_gap/T."""
    return 3.0 * float(_phi(u)) / (1 + 2 * math.exp(-u))


def chi_peak():
    """Maximizer of chi/chi_H over E_gap/T in the J >> T regime, and the maximal ratio."""
    res = optimize.minimize_scalar(lambda u: -chi_ratio_deep(u), bracket=(0.1, 1.0, 5.0),
                                   method="golden", tol=1e-10)
    return float(res.x), float(-res.fun)


def write_csv(path, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["f", "delta", "beta_c", "beta_c_err", "n_realizations", "N"])
        for row in rows:
            w.writerow([repr(x) if isinstance(x, float) else x for x in row])
