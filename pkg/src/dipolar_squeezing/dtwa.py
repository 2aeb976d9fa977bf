"""Cluster discrete truncated Wigner dynamics for pair clusters.

Spins are grouped into nearest pairs (one monomer for odd N).  Each cluster
carries a phase-point matrix evolved exactly under its own Hamiltonian plus
the mean field of all other clusters.  Every spin starts from one of four
phase points 1/2 (1 + sx + a sy + b sz), a, b = +-1 (Pauli matrices), whose
average is the x-polarized state.
"""
from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from . import lattice
from .dimer_mft import match_pairs
from .ed_oracle import squeezing_from_moments

DTWA_STREAM = 0x5DA7
DT_CAP = 0.02

_PX = np.array([[0, 1], [1, 0]], dtype=complex)
_PY = np.array([[0, -1j], [1j, 0]], dtype=complex)
_PZ = np.array([[1, 0], [0, -1]], dtype=complex)
_I2 = np.eye(2, dtype=complex)
SPIN1 = np.stack([_PX, _PY, _PZ]) / 2
S_FIRST = np.stack([np.kron(s, _I2) for s in SPIN1])
S_SECOND = np.stack([np.kron(_I2, s) for s in SPIN1])


class IntegrationError(RuntimeError):
    pass


class InsufficientLengthError(ValueError):
    pass


@dataclass
class ClusterSet:
    """Pair/monomer partition of the kept spins.

    Internally spins are reordered as (first members, second members,
    monomers) so cluster data can be sliced without gathers; ``order`` maps
    internal positions back to indices into ``kept``.
    """
    n: int
    pairs: np.ndarray
    monomers: np.ndarray
    J_pair: np.ndarray
    C_inter: np.ndarray = field(repr=False)
    kept: np.ndarray = field(repr=False)
    order: np.ndarray = field(repr=False)

    @property
    def n_pairs(self) -> int:
        return len(self.pairs)

    @property
    def max_intra(self) -> float:
        return float(self.J_pair.max()) if len(self.J_pair) else 0.0


def build_clusters(positions, C, kept=None) -> ClusterSet:
    """Pair the kept spins greedily by distance and split couplings into intra and inter parts.

    ``positions`` may be a Realization (its metric is used) or an (N, 2) array.
    """
    C = np.asarray(C, dtype=float)
    N = len(C)
    kept = np.arange(N) if kept is None else np.asarray(kept, dtype=int)
    Ck = C[np.ix_(kept, kept)]
    n = len(kept)
    if n == 0:
        raise ValueError("no spins left to evolve")
    if n == 1:
        pairs = np.zeros((0, 2), dtype=int)
        monomers = np.array([0])
    else:
        if isinstance(positions, lattice.Realization):
            pairing = match_pairs(positions.subset(kept))
        else:
            pairing = match_pairs(np.asarray(positions, dtype=float)[kept])
        pairs = np.array(pairing.pairs, dtype=int).reshape(-1, 2)
        monomers = np.array(pairing.unpaired, dtype=int)
    Cin = Ck.copy()
    np.fill_diagonal(Cin, 0.0)
    if len(pairs):
        Cin[pairs[:, 0], pairs[:, 1]] = 0.0
        Cin[pairs[:, 1], pairs[:, 0]] = 0.0
    Jp = Ck[pairs[:, 0], pairs[:, 1]] if len(pairs) else np.zeros(0)
    order = np.concatenate([pairs[:, 0], pairs[:, 1], monomers]).astype(int)
    return ClusterSet(n, pairs, monomers, Jp, np.ascontiguousarray(Cin[np.ix_(order, order)]), kept, order)


# Pauli-coefficient representation: a pair matrix is rho = 1/4 sum c[mu, nu] sigma_mu x sigma_nu
# and a monomer rho = 1/2 sum c[mu] sigma_mu, with mu = 0 (identity), x, y, z.  Real coefficients
# keep every matrix Hermitian, and c[0, 0] = 1 is the unit trace.
_PAULI = np.stack([_I2, _PX, _PY, _PZ])
PAIR_BASIS = np.stack([np.kron(p, q) for p in _PAULI for q in _PAULI])


def _generator(O, basis):
    """Real matrix G with d<P_k>/dt = sum_l G[k, l] <P_l> under the Hamiltonian O."""
    d = basis.shape[-1]
    comm = np.einsum("ij,kjl->kil", O, basis) - np.einsum("kij,jl->kil", basis, O)
    A = np.einsum("lji,kij->kl", basis, comm) / d
    G = (1j * A).real
    if np.max(np.abs((1j * A).imag)) > 1e-12:
        raise AssertionError("generator is not real")
    return G


def _pair_generators(delta):
    g = np.array([1.0, 1.0, delta])
    H_unit = -np.einsum("a,aij,ajk->ik", g, S_FIRST, S_SECOND)
    gens = [_generator(H_unit, PAIR_BASIS)]
    gens += [_generator(-S_FIRST[a], PAIR_BASIS) for a in range(3)]
    gens += [_generator(-S_SECOND[a], PAIR_BASIS) for a in range(3)]
    return np.stack(gens)


MONO_GENERATORS = np.stack([_generator(-SPIN1[a], _PAULI) for a in range(3)])
_FIRST_IDX = np.array([4, 8, 12])
_SECOND_IDX = np.array([1, 2, 3])


@dataclass
class TrajectoryState:
    """Batch of cluster states, component-major.

    ``c_pair`` has shape (16, P, T) and ``c_mono`` (4, M, T) for T trajectories.
    """
    c_pair: np.ndarray
    c_mono: np.ndarray
    t: float = 0.0
    trajs: np.ndarray = None

    @property
    def n_traj(self) -> int:
        return self.c_pair.shape[2] if self.c_pair.size else self.c_mono.shape[2]

    def pair_matrices(self) -> np.ndarray:
        """(T, P, 4, 4) complex phase-point matrices."""
        return np.einsum("kpt,kij->tpij", self.c_pair, PAIR_BASIS) / 4

    def mono_matrices(self) -> np.ndarray:
        return np.einsum("kpt,kij->tpij", self.c_mono, _PAULI) / 2


def _state_from_signs(cs: ClusterSet, signs) -> TrajectoryState:
    # signs (T, n, 2) hold (a, b); phase point 1/2 (1 + sx + a sy + b sz) has <sigma> = (1, a, b)
    T = signs.shape[0]
    u = np.concatenate([np.ones((T, cs.n, 2)), signs.astype(float)], axis=-1).transpose(2, 1, 0)
    P = cs.n_pairs
    if P:
        cp = np.einsum("mpt,npt->mnpt", u[:, cs.pairs[:, 0]], u[:, cs.pairs[:, 1]]).reshape(16, P, T)
    else:
        cp = np.zeros((16, 0, T))
    cm = u[:, cs.monomers] if len(cs.monomers) else np.zeros((4, 0, T))
    return TrajectoryState(np.ascontiguousarray(cp), np.ascontiguousarray(cm))


def sample_signs(n: int, seed: int, traj: int) -> np.ndarray:
    rng = lattice.rng_for(seed, DTWA_STREAM, traj)
    return 2 * rng.integers(0, 2, size=(n, 2)) - 1


def sample_initial(cs: ClusterSet, seed: int, traj) -> TrajectoryState:
    """Phase-point state for one trajectory index or a sequence of them; depends only on (seed, traj)."""
    trajs = np.atleast_1d(np.asarray(traj, dtype=np.int64))
    signs = np.stack([sample_signs(cs.n, seed, int(k)) for k in trajs])
    st = _state_from_signs(cs, signs)
    st.trajs = trajs
    return st


def enumerate_initial(cs: ClusterSet) -> TrajectoryState:
    """All 4^n phase points with equal weight (exact Wigner average; small n only)."""
    if cs.n > 6:
        raise ValueError("exhaustive enumeration is limited to n <= 6")
    combos = np.array(list(itertools.product([-1, 1], repeat=2 * cs.n))).reshape(-1, cs.n, 2)
    st = _state_from_signs(cs, combos)
    st.trajs = np.arange(len(combos))
    return st


# ---------------------------------------------------------------------------
# dynamics


def _means_internal(cp, cm):
    """(3, n, T) single-spin <s^a> in internal spin order."""
    parts = []
    if cp.size:
        parts += [cp[_FIRST_IDX], cp[_SECOND_IDX]]
    if cm.size:
        parts.append(cm[1:])
    m = np.concatenate(parts, axis=1)
    m *= 0.5
    return m


def spin_means(cs: ClusterSet, st: TrajectoryState) -> np.ndarray:
    """Single-spin <s^a>, shape (T, n, 3), spins indexed as in ``kept``."""
    m = _means_internal(st.c_pair, st.c_mono)
    out = np.empty_like(m)
    out[:, cs.order] = m
    return out.transpose(2, 1, 0)


def _cross_into(out, X, h):
    # out[a] += (X x h)[a] for 3-vectors stored along the leading axis
    out[0] += X[1] * h[2] - X[2] * h[1]
    out[1] += X[2] * h[0] - X[0] * h[2]
    out[2] += X[0] * h[1] - X[1] * h[0]


class _Stepper:
    """Right-hand side of the coupled cluster equations in Pauli coefficients.

    A field h on a spin rotates its Pauli vector as d sigma/dt = sigma x h; the
    intra-pair coupling acts through its (sparse) generator.
    """

    def __init__(self, cs: ClusterSet, delta: float):
        self.cs = cs
        self.g = np.array([1.0, 1.0, delta])
        G = _pair_generators(delta)[0]
        k, l = np.nonzero(np.abs(G) > 1e-14)
        self.intra = [(int(a), int(b), float(G[a, b])) for a, b in zip(k, l)]

    def __call__(self, cp, cm):
        cs = self.cs
        P = cs.n_pairs
        m = _means_internal(cp, cm)
        h = np.stack([cs.C_inter @ m[a] for a in range(3)])
        h[2] *= self.g[2]
        dcp = np.zeros_like(cp)
        if P:
            J = cs.J_pair[:, None]
            Jc = [None] * 16
            for k, l, v in self.intra:
                if Jc[l] is None:
                    Jc[l] = J * cp[l]
                dcp[k] += v * Jc[l]
            c4 = cp.reshape(4, 4, P, -1)
            d4 = dcp.reshape(4, 4, P, -1)
            h1, h2 = h[:, :P], h[:, P:2 * P]
            for nu in range(4):
                _cross_into(d4[1:, nu], c4[1:, nu], h1)
                _cross_into(d4[nu, 1:], c4[nu, 1:], h2)
        dcm = np.zeros_like(cm)
        if cm.size:
            _cross_into(dcm[1:], cm[1:], h[:, 2 * P:])
        return dcp, dcm


class _ReferenceStepper:
    """Dense generator form of the same equations (test oracle)."""

    def __init__(self, cs: ClusterSet, delta: float):
        self.cs = cs
        self.g = np.array([1.0, 1.0, delta])
        self.gens = _pair_generators(delta)

    def __call__(self, cp, cm):
        cs = self.cs
        P = cs.n_pairs
        m = _means_internal(cp, cm)
        h = np.einsum("ij,ajt->ait", cs.C_inter, m) * self.g[:, None, None]
        dcp = np.einsum("kl,lpt->kpt", self.gens[0], cp) * cs.J_pair[None, :, None]
        dcp += np.einsum("apt,akl,lpt->kpt", h[:, :P], self.gens[1:4], cp)
        dcp += np.einsum("apt,akl,lpt->kpt", h[:, P:2 * P], self.gens[4:7], cp)
        if cm.size:
            dcm = np.einsum("apt,akl,lpt->kpt", h[:, 2 * P:], MONO_GENERATORS, cm)
        else:
            dcm = np.zeros_like(cm)
        return dcp, dcm


def default_dt(cs: ClusterSet) -> float:
    fields = np.abs(cs.C_inter).sum(axis=1).max() if cs.n > 1 else 0.0
    scale = max(cs.max_intra, float(fields), 1e-12)
    return DT_CAP / scale


def evolve(st: TrajectoryState, cs: ClusterSet, delta: float, dt: float | None, t_max: float,
           sample_every: int = 1, callback=None, check_every: int = 50):
    """Classic RK4 on all clusters of all trajectories at once.

    ``callback(t, state)`` is called on every sampled step (including t=0);
    returns the final state.  The step is capped at DT_CAP/max(J_intra, |h|).
    """
    cap = default_dt(cs)
    dt = cap if dt is None else dt
    if dt > cap * (1 + 1e-12):
        raise ValueError(f"dt={dt} exceeds the stability cap {cap:.4g}")
    if dt < 1e-9:
        raise IntegrationError("step size underflow")
    n_steps = int(round(t_max / dt))
    rhs = _Stepper(cs, delta)
    cp, cm = st.c_pair.copy(), st.c_mono.copy()
    t0 = st.t
    if callback is not None:
        callback(t0, TrajectoryState(cp, cm, t0, st.trajs))
    for k in range(1, n_steps + 1):
        k1 = rhs(cp, cm)
        k2 = rhs(cp + 0.5 * dt * k1[0], cm + 0.5 * dt * k1[1])
        k3 = rhs(cp + 0.5 * dt * k2[0], cm + 0.5 * dt * k2[1])
        k4 = rhs(cp + dt * k3[0], cm + dt * k3[1])
        cp = cp + dt / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        cm = cm + dt / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        if k % check_every == 0 or k == n_steps:
            drift = 0.0
            if cp.size:
                drift = max(drift, float(np.max(np.abs(cp[0] - 1))))
            if cm.size:
                drift = max(drift, float(np.max(np.abs(cm[0] - 1))))
            if drift > 1e-6 or not (np.all(np.isfinite(cp)) and np.all(np.isfinite(cm))):
                raise IntegrationError(f"trace drift {drift:.3g} at t={t0 + k * dt:.4g}")
        if callback is not None and k % sample_every == 0:
            callback(t0 + k * dt, TrajectoryState(cp, cm, t0 + k * dt, st.trajs))
    return TrajectoryState(cp, cm, t0 + n_steps * dt, st.trajs)


# ---------------------------------------------------------------------------
# observables


def collective_moments(cs: ClusterSet, st: TrajectoryState):
    """Per-trajectory total spin S^a (T, 3) and symmetrized <S^a S^b> estimator (T, 3, 3).

    Different clusters contribute products of single-spin means; partners in a
    pair contribute their exact symmetrized correlator; each spin adds 1/4 on
    the diagonal.
    """
    cp, cm = st.c_pair, st.c_mono
    m = _means_internal(cp, cm)
    tot = m.sum(axis=1).T
    G = np.einsum("ta,tb->tab", tot, tot) + 0.25 * cs.n * np.eye(3)[None]
    P = cs.n_pairs
    if P:
        Mc = m[:, :P] + m[:, P:2 * P]
        G -= np.einsum("apt,bpt->tab", Mc, Mc)
        corr = cp.reshape(4, 4, P, -1)[1:, 1:].sum(axis=2).transpose(2, 0, 1) / 4
        G += corr + corr.swapaxes(-1, -2)
    if cm.size:
        Mm = m[:, 2 * P:]
        G -= np.einsum("apt,bpt->tab", Mm, Mm)
    return tot, G


@dataclass
class SqueezeSeries:
    times: np.ndarray
    xi2: np.ndarray
    xi2_err: np.ndarray
    mxy2: np.ndarray
    mxy2_err: np.ndarray
    Sx: np.ndarray
    n_trajectories: int
    N: int
    valid: np.ndarray = None
    meta: dict = field(default_factory=dict)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "xi2", "xi2_err", "mxy2", "mxy2_err", "Sx"])
            for row in zip(self.times, self.xi2, self.xi2_err, self.mxy2, self.mxy2_err, self.Sx):
                w.writerow([repr(float(x)) for x in row])


def _estimators(N, S, G, norm):
    # S: (..., T, 3) per-trajectory totals, G: (..., T, 3, 3); averages over T
    Sm = S.mean(axis=-2)
    Gm = G.mean(axis=-3)
    xi2 = squeezing_from_moments(N, Sm[..., 0], Sm[..., 1], Sm[..., 2],
                                 Gm[..., 1, 1], Gm[..., 2, 2], Gm[..., 1, 2])
    mxy2 = (Gm[..., 0, 0] + Gm[..., 1, 1]) / norm
    return xi2, mxy2, Sm[..., 0]


def squeezing_series(times, S, G, N: int, norm: str = "N2", n_blocks: int = 20) -> SqueezeSeries:
    """Trajectory averages with blocked jackknife errors.

    ``S`` has shape (n_times, n_traj, 3) and ``G`` (n_times, n_traj, 3, 3).
    Past the first sign change of <S^x> the series is flagged invalid.
    """
    S = np.asarray(S)
    G = np.asarray(G)
    n_traj = S.shape[1]
    if n_traj < 2:
        raise ValueError("need at least two trajectories")
    denom = {"N": N, "N2": N * N}[norm]
    xi2, mxy2, Sx = _estimators(N, S, G, denom)
    nb = min(n_blocks, n_traj)
    blocks = np.array_split(np.arange(n_traj), nb)
    jx, jm = [], []
    for b in blocks:
        keep = np.setdiff1d(np.arange(n_traj), b)
        x, m, _ = _estimators(N, S[:, keep], G[:, keep], denom)
        jx.append(x)
        jm.append(m)
    jx, jm = np.array(jx), np.array(jm)
    fac = (nb - 1) / nb
    xi2_err = np.sqrt(fac * np.sum((jx - jx.mean(axis=0)) ** 2, axis=0))
    mxy2_err = np.sqrt(fac * np.sum((jm - jm.mean(axis=0)) ** 2, axis=0))
    sign = np.sign(Sx)
    flips = np.flatnonzero(sign != sign[0])
    valid = np.ones(len(Sx), dtype=bool)
    if len(flips):
        valid[flips[0]:] = False
    return SqueezeSeries(np.asarray(times), xi2, xi2_err, mxy2, mxy2_err, Sx, n_traj, N, valid)


def _run_batch(args):
    cs, delta, dt, t_max, every, n_samples, st = args
    Ss, Gs = [], []

    def record(t, state):
        s, g = collective_moments(cs, state)
        Ss.append(s)
        Gs.append(g)

    evolve(st, cs, delta, dt, t_max, sample_every=every, callback=record)
    return np.array(Ss[:n_samples]), np.array(Gs[:n_samples])


def run(positions, C, delta: float, t_max: float, n_samples: int = 201, n_traj: int = 2000,
        seed: int = 0, kept=None, dt: float | None = None, batch: int = 250,
        exhaustive: bool = False, norm: str = "N2", workers: int = 1) -> SqueezeSeries:
    """Sample, evolve and reduce; trajectories processed in fixed-size batches.

    Batches are merged by index, so results do not depend on ``workers``.
    """
    cs = build_clusters(positions, C, kept)
    cap = default_dt(cs)
    dt = cap if dt is None else dt
    out_dt = t_max / (n_samples - 1)
    every = max(1, int(math.ceil(out_dt / dt)))
    dt = out_dt / every
    times = np.arange(n_samples) * out_dt
    if exhaustive:
        states = [enumerate_initial(cs)]
    else:
        idx = np.arange(n_traj)
        states = [sample_initial(cs, seed, idx[s:s + batch]) for s in range(0, n_traj, batch)]
    tasks = [(cs, delta, dt, t_max, every, n_samples, st) for st in states]
    if workers > 1 and len(tasks) > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(workers) as ex:
            results = list(ex.map(_run_batch, tasks))
    else:
        results = [_run_batch(t) for t in tasks]
    S = np.concatenate([r[0] for r in results], axis=1)
    G = np.concatenate([r[1] for r in results], axis=1)
    series = squeezing_series(times, S, G, cs.n, norm)
    series.meta.update({"dt": dt, "delta": delta, "seed": seed, "n_pairs": len(cs.pairs),
                        "n_monomers": len(cs.monomers), "exhaustive": exhaustive})
    return series


# ---------------------------------------------------------------------------
# notch filtering


def dimer_frequencies(a: float = 1.0, J: float = 1.0, delta: float = 0.0) -> np.ndarray:
    """Oscillation frequencies of pairs at distance a, sqrt2 a, 2a: gap/(2 pi) with gap = J|1-Delta|/(2 r^3)."""
    d = np.array([1.0, math.sqrt(2.0), 2.0]) * a
    return abs(1 - delta) * J / (4 * math.pi * d**3)


def notch_filter(values, times, f: float | None = None, a: float = 1.0, J: float = 1.0,
                 delta: float = 0.0, width: float = 0.1, n_periods: float = 4.0) -> np.ndarray:
    """Remove the three fastest pair oscillations with zero-phase Gaussian notches.

    The series is mirrored before the FFT so the periodic extension has no jump.
    ``f`` is accepted for interface symmetry; the notch positions do not depend on it.
    """
    x = np.asarray(values, dtype=float)
    t = np.asarray(times, dtype=float)
    steps = np.diff(t)
    if len(t) < 3 or np.max(np.abs(steps - steps[0])) > 1e-9 * max(1.0, abs(steps[0])):
        raise ValueError("notch_filter needs a uniform time grid")
    nus = dimer_frequencies(a, J, delta)
    if nus.min() <= 0:
        raise ValueError("pairs do not oscillate at Delta = 1; nothing to filter")
    span = t[-1] - t[0]
    if span < n_periods / nus.min():
        raise InsufficientLengthError(
            f"series spans {span:.4g}, need {n_periods / nus.min():.4g} for the slowest notch")
    ext = np.concatenate([x, x[::-1]])
    nu = np.fft.rfftfreq(len(ext), d=steps[0])
    W = np.ones_like(nu)
    for nk in nus:
        W *= 1.0 - np.exp(-((nu - nk) ** 2) / (2 * (width * nk) ** 2))
    y = np.fft.irfft(np.fft.rfft(ext) * W, n=len(ext))
    return y[: len(x)]
