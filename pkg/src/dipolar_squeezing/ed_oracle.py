"""Dense exact diagonalization for small dipolar XXZ clusters.

Basis states are integers whose bit i is 1 when spin i points up along z.
H = -sum_{i<j} J_ij (sx sx + sy sy + Delta sz sz) - h S^x.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

MAX_THERMAL = 14
MAX_THERMAL_FIELD = 12
MAX_KUBO = 12
MAX_MOMENT = 8
MAX_QUENCH = 12


class CapacityError(ValueError):
    pass


def _check_n(N, limit, what):
    if N > limit:
        raise CapacityError(f"{what} is limited to N <= {limit}, got N = {N}")
    if N < 1:
        raise ValueError("need at least one spin")


def sector_states(N: int, n_up: int) -> np.ndarray:
    states = np.arange(2**N, dtype=np.int64)
    return states[np.bitwise_count(states) == n_up]


def xxz_block(states, C, delta: float, h: float = 0.0) -> np.ndarray:
    """Hamiltonian restricted to ``states`` (closed under H unless h != 0 on the full space)."""
    C = np.asarray(C, dtype=float)
    N = len(C)
    states = np.asarray(states, dtype=np.int64)
    dim = len(states)
    H = np.zeros((dim, dim))
    rows = np.arange(dim)
    bits = (states[:, None] >> np.arange(N)[None, :]) & 1
    for i in range(N):
        for j in range(i + 1, N):
            J = C[i, j]
            if J == 0.0:
                continue
            same = bits[:, i] == bits[:, j]
            H[rows, rows] += np.where(same, -0.25, 0.25) * J * delta
            src = rows[~same]
            tgt = np.searchsorted(states, states[src] ^ ((1 << i) | (1 << j)))
            H[tgt, src] += -0.5 * J
    if h != 0.0:
        if dim != 2**N:
            raise ValueError("a transverse field needs the full Hilbert space")
        for i in range(N):
            H[states ^ (1 << i), rows] += -0.5 * h
    return H


def full_hamiltonian(C, delta: float, h: float = 0.0) -> np.ndarray:
    N = len(C)
    return xxz_block(np.arange(2**N, dtype=np.int64), C, delta, h)


def spin_op(N: int, i: int, axis: str) -> np.ndarray:
    dim = 2**N
    s = np.arange(dim, dtype=np.int64)
    b = (s >> i) & 1
    if axis == "z":
        return np.diag(np.where(b == 1, 0.5, -0.5)).astype(complex)
    M = np.zeros((dim, dim), dtype=complex)
    t = s ^ (1 << i)
    if axis == "x":
        M[t, s] = 0.5
    elif axis == "y":
        # s^y |down> = -i/2 |up>, s^y |up> = i/2 |down>
        M[t, s] = np.where(b == 0, -0.5j, 0.5j)
    else:
        raise ValueError(axis)
    return M


def collective(N: int, axis: str) -> np.ndarray:
    return sum(spin_op(N, i, axis) for i in range(N))


# ---------------------------------------------------------------------------
# thermal


def _spectrum(C, delta, h):
    """Eigenvalues and per-eigenstate <S^x S^x + S^y S^y>, <S^x>."""
    N = len(C)
    ones = np.ones((N, N)) - np.eye(N)
    if h == 0.0:
        energies, sperp, sx = [], [], []
        for n_up in range(N + 1):
            st = sector_states(N, n_up)
            E, V = np.linalg.eigh(xxz_block(st, C, delta))
            # S^2 = 3N/4 + 2 sum_{i<j} s_i.s_j, and the all-to-all Heisenberg block is -sum s_i.s_j
            S2 = 0.75 * N * np.eye(len(st)) - 2.0 * xxz_block(st, ones, 1.0)
            sz = n_up - N / 2
            energies.append(E)
            sperp.append(np.einsum("ij,ik,kj->j", V, S2, V) - sz * sz)
            sx.append(np.zeros_like(E))
        return np.concatenate(energies), np.concatenate(sperp), np.concatenate(sx)
    H = full_hamiltonian(C, delta, h)
    E, V = np.linalg.eigh(H)
    Sx = collective(N, "x").real
    Sy = collective(N, "y")
    perp = Sx @ Sx + (Sy @ Sy).real
    return E, np.einsum("ij,ik,kj->j", V, perp, V), np.einsum("ij,ik,kj->j", V, Sx, V)


def thermal_observables(C, delta: float, h: float, beta: float, norm: str = "N2") -> dict:
    """Canonical averages: energy per spin, m_xy^2, <S^x> and ln Z."""
    C = np.asarray(C, dtype=float)
    N = len(C)
    _check_n(N, MAX_THERMAL if h == 0.0 else MAX_THERMAL_FIELD, "thermal ED")
    E, perp, sx = _spectrum(C, delta, h)
    E0 = E.min()
    w = np.exp(-beta * (E - E0))
    Z = w.sum()
    p = w / Z
    denom = {"N": N, "N2": N * N}[norm]
    return {
        "E": float(p @ E) / N,
        "mxy2": float(p @ perp) / denom,
        "Sx": float(p @ sx),
        "lnZ": float(np.log(Z) - beta * E0),
    }


# ---------------------------------------------------------------------------
# Kubo


def _kubo_weights(E, beta, tol):
    Em, En = E[:, None], E[None, :]
    wm = np.exp(-beta * (Em - E.min()))
    wn = np.exp(-beta * (En - E.min()))
    dE = En - Em
    degenerate = np.abs(dE) < tol
    with np.errstate(divide="ignore", invalid="ignore"):
        W = np.where(degenerate, beta * wm, (wm - wn) / np.where(degenerate, 1.0, dE))
    return W


def kubo_susceptibility(C, delta: float, beta: float, i: int, j: int) -> float:
    """int_0^beta <s_i^x(0) s_j^x(tau)> d tau from the spectral representation."""
    C = np.asarray(C, dtype=float)
    N = len(C)
    _check_n(N, MAX_KUBO, "Kubo ED")
    H = full_hamiltonian(C, delta)
    E, V = np.linalg.eigh(H)
    scale = max(1.0, float(np.max(np.abs(E))))
    W = _kubo_weights(E, beta, 1e-12 * scale)
    Z = float(np.sum(np.exp(-beta * (E - E.min()))))
    A = V.T @ spin_op(N, i, "x").real @ V
    B = A if j == i else V.T @ spin_op(N, j, "x").real @ V
    return float(np.sum(W * A * B.T)) / Z


# ---------------------------------------------------------------------------
# trace moments


def _distinct_orderings(n, m):
    return set(itertools.permutations("H" * n + "S" * m))


def moment_bruteforce(C, delta: float, n: int, m: int) -> float:
    """Normalized trace of n copies of H and m of S^x, averaged over all distinct orderings."""
    C = np.asarray(C, dtype=float)
    N = len(C)
    _check_n(N, MAX_MOMENT, "trace moments")
    if n < 0 or m < 0 or n + m > 5:
        raise ValueError("need n, m >= 0 and n + m <= 5")
    if n + m == 0:
        return 1.0
    if m % 2 == 1:
        return 0.0
    H = full_hamiltonian(C, delta)
    Sx = collective(N, "x").real
    ops = {"H": H, "S": Sx}
    orders = _distinct_orderings(n, m)
    total = 0.0
    for word in orders:
        M = ops[word[0]]
        for c in word[1:-1]:
            M = M @ ops[c]
        total += float(np.sum(M * ops[word[-1]].T)) if len(word) > 1 else float(np.trace(M))
    return total / len(orders) / 2**N


def b_coefficients_bruteforce(C, delta: float):
    """B1, B2, B3 per spin from connected combinations of trace moments."""
    N = len(C)
    A = {(a, b): moment_bruteforce(C, delta, a, b) for a, b in
         [(1, 2), (2, 0), (0, 2), (2, 2), (3, 0), (3, 2)]}
    B1 = A[1, 2] / N
    B2 = (A[2, 2] - A[2, 0] * A[0, 2]) / N
    B3 = (A[3, 2] - A[3, 0] * A[0, 2] - 3 * A[2, 0] * A[1, 2]) / N
    return B1, B2, B3


# ---------------------------------------------------------------------------
# quench


@dataclass
class ObservableSeries:
    times: np.ndarray
    values: dict = field(default_factory=dict)
    errors: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)


def x_product_state(N: int) -> np.ndarray:
    return np.full(2**N, 2.0 ** (-N / 2), dtype=complex)


def _apply_collective(psi, N):
    """Return S^x psi, S^y psi, S^z psi for a full-space vector."""
    s = np.arange(2**N, dtype=np.int64)
    ax = np.zeros_like(psi)
    ay = np.zeros_like(psi)
    az = np.zeros_like(psi)
    for i in range(N):
        b = (s >> i) & 1
        t = s ^ (1 << i)
        ax[t] += 0.5 * psi
        ay[t] += np.where(b == 0, -0.5j, 0.5j) * psi
        az += np.where(b == 1, 0.5, -0.5) * psi
    return ax, ay, az


def squeezing_from_moments(N, Sx, Sy, Sz, Syy, Szz, Syz):
    """Wineland parameter from first and second collective moments (Syz symmetrized)."""
    cyy = Syy - Sy * Sy
    czz = Szz - Sz * Sz
    cyz = Syz - Sy * Sz
    lam = 0.5 * (cyy + czz) - np.sqrt(0.25 * (cyy - czz) ** 2 + cyz**2)
    with np.errstate(divide="ignore", invalid="ignore"):
        xi2 = np.where(np.abs(Sx) > 1e-12, N * lam / Sx**2, np.nan)
    return xi2


def quench_dynamics(C, delta: float, times, shelved=(), norm: str = "N2") -> ObservableSeries:
    """Exact evolution of the x-polarized product state of the non-shelved spins."""
    C = np.asarray(C, dtype=float)
    keep = np.setdiff1d(np.arange(len(C)), np.asarray(list(shelved), dtype=int))
    C = C[np.ix_(keep, keep)]
    N = len(C)
    _check_n(N, MAX_QUENCH, "quench ED")
    times = np.asarray(times, dtype=float)
    psi0 = x_product_state(N)
    all_states = np.arange(2**N, dtype=np.int64)
    pc = np.bitwise_count(all_states)
    blocks = []
    for n_up in range(N + 1):
        st = all_states[pc == n_up]
        E, V = np.linalg.eigh(xxz_block(st, C, delta))
        blocks.append((st, E, V, V.T @ psi0[st]))
    out = {k: np.zeros(len(times)) for k in ("Sx", "Sy", "Sz", "Sxx", "Syy", "Szz", "Syz", "E")}
    for k, t in enumerate(times):
        psi = np.zeros(2**N, dtype=complex)
        energy = 0.0
        for st, E, V, c in blocks:
            ct = np.exp(-1j * E * t) * c
            psi[st] = V @ ct
            energy += float(np.sum(E * np.abs(ct) ** 2))
        ax, ay, az = _apply_collective(psi, N)
        out["Sx"][k] = np.vdot(psi, ax).real
        out["Sy"][k] = np.vdot(psi, ay).real
        out["Sz"][k] = np.vdot(psi, az).real
        out["Sxx"][k] = np.vdot(ax, ax).real
        out["Syy"][k] = np.vdot(ay, ay).real
        out["Szz"][k] = np.vdot(az, az).real
        out["Syz"][k] = np.vdot(ay, az).real
        out["E"][k] = energy
    xi2 = squeezing_from_moments(N, out["Sx"], out["Sy"], out["Sz"], out["Syy"], out["Szz"], out["Syz"])
    denom = {"N": N, "N2": N * N}[norm]
    values = {"xi2": xi2, "mxy2": (out["Sxx"] + out["Syy"]) / denom, "Sx": out["Sx"], "energy": out["E"],
              "Sy": out["Sy"], "Sz": out["Sz"]}
    return ObservableSeries(times, values, meta={"N": N, "delta": delta, "kept": keep.tolist()})
