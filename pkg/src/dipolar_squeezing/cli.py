"""Command-line entry point: ``python -m dipolar_squeezing <command>``.

Each run writes named CSVs into ``--out`` and finishes with ``manifest.json``
(config echo, seeds, wall time, blake2b digests of every output).  The
manifest is removed at start and written atomically last, so a directory
without one holds an interrupted run.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import sys
import tempfile
import time
import warnings

import numpy as np

from . import __version__, dimer_mft, dtwa, ed_oracle, lattice, localfields, meanfield, stats, strongdisorder


class UsageError(ValueError):
    pass


# ---------------------------------------------------------------------------
# config


DEFAULTS = {
    "phase-diagram": {"f": [1.0], "delta": [0.0], "L": 16, "n_realizations": 0,
                      "boundary": lattice.PERIODIC, "B": 1000},
    "squeeze": {"f": 0.05, "delta": 0.0, "L": [71], "J0": [2.0 ** -1.5], "n_trajectories": 2000,
                "t_max": 410.0, "n_samples": 821, "boundary": lattice.PERIODIC, "norm": "N2",
                "batch": 250},
    "analyze": {"curves": None, "pairs": None, "eta": 1.0, "nu": 1.0, "B": 500,
                "energy": None, "beta_c": None, "beta_c_err": 0.0,
                "control": None, "true_mean_J": None},
    "local-fields": {"f": 0.01, "L": 200, "n_realizations": 1, "boundary": lattice.PERIODIC,
                     "bins": 100, "J0": None},
    "strong-disorder": {"f": [0.01, 0.02, 0.05, 0.1], "delta": [0.9, 0.99], "h": 0.01,
                        "anchor": None},
    "oracle": {"N": 4, "delta": 0.0, "f": 0.5, "L": 4, "beta": [1.0], "t_max": 0.0,
               "n_samples": 101, "couplings": None},
    "constants": {},
}


def _listify(x):
    return list(x) if isinstance(x, (list, tuple)) else [x]


def load_config(command: str, path, overrides: dict) -> dict:
    cfg = dict(DEFAULTS[command])
    if path:
        try:
            with open(path, encoding="utf-8") as fh:
                user = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(user, dict):
            raise UsageError("config must be a JSON object")
        unknown = set(user) - set(cfg) - {"seed", "workers"}
        if unknown:
            raise UsageError(f"unknown config keys for {command}: {sorted(unknown)}")
        cfg.update(user)
    cfg.update({k: v for k, v in overrides.items() if v is not None})
    if cfg.get("seed") is None:
        raise UsageError("a seed is required (--seed or 'seed' in the config)")
    return cfg


def _parse_values(text: str):
    # comma-separated floats; 'inf' allowed
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


# ---------------------------------------------------------------------------
# output


def _digest(path) -> str:
    h = hashlib.blake2b(digest_size=8)
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, (np.integer,)):
        return int(x)
    return x


def write_rows(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(x) for x in row])


def write_manifest(out: str, command: str, cfg: dict, files, seeds: dict, wall: float) -> None:
    doc = {
        "command": command,
        "version": __version__,
        "config": cfg,
        "seeds": seeds,
        "wall_time_s": wall,
        "outputs": {os.path.basename(p): _digest(p) for p in sorted(files)},
    }
    fd, tmp = tempfile.mkstemp(dir=out, prefix=".manifest-", suffix=".json")
    with os.fdopen(fd, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, default=_json_default)
    os.replace(tmp, os.path.join(out, "manifest.json"))


def _json_default(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(type(x))


# ---------------------------------------------------------------------------
# commands; each returns (files, seeds)


def cmd_constants(cfg, out):
    c = meanfield.computed_constants()
    p = meanfield.PAPER_CONSTANTS
    path = os.path.join(out, "constants.csv")
    write_rows(path, ["name", "computed", "published"], [
        ("s1", c.s1, p.s1), ("s2", c.s2, p.s2), ("s3", c.s3, p.s3), ("s_tri", c.s_tri, p.s_tri),
        ("Tc_MF_f1", meanfield.tc_mean_field(1.0, c), meanfield.tc_mean_field(1.0, p)),
        ("ce1_constant", meanfield.ce1_constant(c), meanfield.ce1_constant(p)),
    ])
    motifs = os.path.join(out, "motifs.csv")
    localfields.write_motif_csv(motifs)
    return [path, motifs], {"seed": cfg["seed"]}


def cmd_phase_diagram(cfg, out):
    f_grid = [float(x) for x in _listify(cfg["f"])]
    d_grid = [float(x) for x in _listify(cfg["delta"])]
    if not f_grid or not d_grid:
        raise UsageError("f and delta grids must be non-empty")
    n_real = int(cfg["n_realizations"])
    seed = int(cfg["seed"])
    consts = meanfield.default_constants()
    path = os.path.join(out, "phase_diagram.csv")
    header = ["f", "delta", "Tc_MF", "Tc_CE1", "delta_peak_CE2", "delta_peak_CE2_series",
              "Tc_dimerMFT", "Tc_dimerMFT_err"]
    rows, seeds = [], {"seed": seed, "realizations": {}}
    try:
        for fi, f in enumerate(f_grid):
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                dp = meanfield.delta_peak_ce2(f, consts, "closed")
                dps = meanfield.delta_peak_ce2(f, consts, "series")
            ensemble = []
            if n_real > 0:
                spec = lattice.LatticeSpec(L=int(cfg["L"]), f=f, boundary=cfg["boundary"])
                ensemble = [lattice.dilute(spec, seed, stream=1000 * fi + k) for k in range(n_real)]
                seeds["realizations"][repr(f)] = [[seed, 1000 * fi + k] for k in range(n_real)]
            for d in d_grid:
                try:
                    tc_d, tc_err = "", ""
                    if ensemble:
                        b, berr = dimer_mft.solve_beta_c_dimer(ensemble, d, B=int(cfg["B"]), seed=seed,
                                                               workers=int(cfg.get("workers", 1)))
                        tc_d = 1.0 / b
                        tc_err = berr / b**2 if math.isfinite(berr) else berr
                    rows.append([f, d, meanfield.tc_mean_field(f, consts), meanfield.tc_ce1(f, d, consts),
                                 dp, dps, tc_d, tc_err])
                except Exception as exc:
                    raise RuntimeError(f"failed at f={f}, delta={d}: {exc}") from exc
    finally:
        write_rows(path, header, rows)
    return [path], seeds


def _shelve_label(J0) -> str:
    return "inf" if math.isinf(J0) else f"{J0:.6g}"


def cmd_squeeze(cfg, out):
    seed = int(cfg["seed"])
    f = float(cfg["f"])
    delta = float(cfg["delta"])
    files, seeds = [], {"seed": seed, "runs": []}
    summary = []
    for L in _listify(cfg["L"]):
        spec = lattice.LatticeSpec(L=int(L), f=f, boundary=cfg["boundary"])
        r = lattice.dilute(spec, seed)
        C = lattice.coupling_matrix(r)
        for J0 in _listify(cfg["J0"]):
            J0 = float(J0)
            tag = f"L{int(L)}_N{r.N}_J0{_shelve_label(J0)}"
            try:
                kept, frac = (np.arange(r.N), 0.0) if math.isinf(J0) else localfields.shelve(r, C, J0)
            except localfields.AllShelvedError as exc:
                summary.append([int(L), r.N, J0, 1.0, "", "", "", f"error: {exc}"])
                continue
            s = dtwa.run(r, C, delta, float(cfg["t_max"]), n_samples=int(cfg["n_samples"]),
                         n_traj=int(cfg["n_trajectories"]), seed=seed, kept=kept,
                         batch=int(cfg["batch"]), norm=cfg["norm"], workers=int(cfg.get("workers", 1)))
            raw = os.path.join(out, f"squeeze_{tag}.csv")
            s.to_csv(raw)
            files.append(raw)
            seeds["runs"].append({"tag": tag, "lattice_seed": seed, "dtwa_seed": seed,
                                  "dtwa_stream": dtwa.DTWA_STREAM})
            note = ""
            try:
                fx = dtwa.notch_filter(s.xi2, s.times, f, delta=delta)
                fm = dtwa.notch_filter(s.mxy2, s.times, f, delta=delta)
                filt = os.path.join(out, f"squeeze_{tag}_filtered.csv")
                write_rows(filt, ["t", "xi2", "xi2_err", "mxy2", "mxy2_err", "Sx"],
                           zip(s.times, fx, s.xi2_err, fm, s.mxy2_err, s.Sx))
                files.append(filt)
                xmin = float(np.min(fx[s.valid]))
            except (dtwa.InsufficientLengthError, ValueError) as exc:
                note = f"unfiltered: {exc}"
                xmin = float(np.nanmin(s.xi2[s.valid]))
            summary.append([int(L), len(kept), J0, frac, xmin, s.n_trajectories, s.meta["dt"], note])
    path = os.path.join(out, "squeeze_summary.csv")
    write_rows(path, ["L", "N", "J0", "shelved_fraction", "min_xi2", "n_trajectories", "dt", "note"], summary)
    files.append(path)
    return files, seeds


def _read_csv(path, required):
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc}") from exc
    cols = set(rows[0]) if rows else set()
    missing = [c for c in required if c not in cols]
    if missing:
        raise UsageError(f"{path}: missing column(s) {missing}; have {sorted(cols)}")
    for k, row in enumerate(rows):
        for c in required:
            try:
                row[c] = float(row[c])
            except ValueError:
                raise UsageError(f"{path}: row {k + 2}, column {c!r}: not a number: {row[c]!r}")
    return rows


def cmd_analyze(cfg, out):
    """Crossings from a (L, beta, value[, realization]) table; optional E_c and control variates."""
    seed = int(cfg["seed"])
    files = []
    if cfg["curves"]:
        rows = _read_csv(cfg["curves"], ["L", "beta", "value"])
        by_L = {}
        for row in rows:
            real = int(row["realization"]) if row.get("realization") not in (None, "") else 0
            by_L.setdefault(int(row["L"]), {}).setdefault(real, []).append((row["beta"], row["value"]))
        sizes = sorted(by_L)
        pairs = cfg["pairs"] or list(zip(sizes[:-1], sizes[1:]))
        mean_curves, sample_curves = {}, {}
        for L, reals in by_L.items():
            keys = sorted(reals)
            betas = np.array(sorted(b for b, _ in reals[keys[0]]))
            samples = np.array([[v for _, v in sorted(reals[k])] for k in keys])
            sample_curves[L] = (betas, samples)
            mean_curves[L] = np.column_stack([betas, samples.mean(axis=0)])
        out_rows = []
        for a, b in pairs:
            pair = (int(a), int(b))
            try:
                bc = stats.crossing_beta(mean_curves, pair, cfg["eta"])
                err = ""
                if min(len(sample_curves[p][1]) for p in pair) > 1:
                    _, err = stats.bootstrap_crossing(sample_curves, pair, cfg["eta"], B=int(cfg["B"]), seed=seed)
                out_rows.append([pair[0], pair[1], bc, err, ""])
            except (stats.NoCrossingError, stats.AmbiguousCrossingError) as exc:
                out_rows.append([pair[0], pair[1], "", "", str(exc)])
        path = os.path.join(out, "crossings.csv")
        write_rows(path, ["L1", "L2", "beta_c", "beta_c_err", "note"], out_rows)
        files.append(path)
        found = [r[2] for r in out_rows if r[2] != ""]
        if found:
            q = stats.collapse_quality(mean_curves, float(np.mean(found)), cfg["eta"], cfg["nu"])
            qp = os.path.join(out, "collapse.csv")
            write_rows(qp, ["beta_c", "eta", "nu", "quality"], [[float(np.mean(found)), cfg["eta"], cfg["nu"], q]])
            files.append(qp)
    if cfg["energy"]:
        rows = _read_csv(cfg["energy"], ["beta", "E"])
        table = [(r["beta"], r["E"]) for r in rows]
        bc = cfg.get("beta_c")
        if bc is None:
            raise UsageError("energy interpolation needs 'beta_c' in the config")
        ec, err = stats.interpolate_Ec(table, float(bc), float(cfg.get("beta_c_err", 0.0)))
        path = os.path.join(out, "Ec.csv")
        write_rows(path, ["beta_c", "Ec", "Ec_err"], [[bc, ec, err]])
        files.append(path)
    if cfg["control"]:
        rows = _read_csv(cfg["control"], ["m", "J"])
        true_J = cfg.get("true_mean_J")
        if true_J is None:
            raise UsageError("control variates need 'true_mean_J' in the config")
        res = stats.control_variate_adjust([r["m"] for r in rows], [r["J"] for r in rows], float(true_J))
        path = os.path.join(out, "control_variate.csv")
        write_rows(path, ["raw_mean", "adjusted_mean", "coefficient", "degenerate"],
                   [[res.raw_mean, res.mean, res.coefficient, res.degenerate]])
        files.append(path)
    if not files:
        raise UsageError("nothing to analyze: give 'curves', 'energy' or 'control'")
    return files, {"seed": seed}


def cmd_local_fields(cfg, out):
    seed = int(cfg["seed"])
    f = float(cfg["f"])
    spec = lattice.LatticeSpec(L=int(cfg["L"]), f=f, boundary=cfg["boundary"])
    fields, nn, shelved = [], [], []
    thresholds = localfields.motif_thresholds()
    for k in range(int(cfg["n_realizations"])):
        r = lattice.dilute(spec, seed, stream=k)
        C = lattice.coupling_matrix(r)
        Ji = localfields.local_fields(C)
        fields.append(Ji)
        nn.append(localfields.nn_distances(r, periodic=spec.boundary == lattice.PERIODIC))
        shelved.append([(Ji > t).mean() for t in thresholds])
    fields = np.concatenate(fields)
    nn = np.concatenate(nn)
    edges = localfields.log_edges(fields.min() / 2, 2 * fields.max(), int(cfg["bins"]))
    hist = localfields.field_histogram(fields, edges)
    hp = os.path.join(out, "field_histogram.csv")
    localfields.write_histogram_csv(hist, hp)
    centers = np.sqrt(edges[:-1] * edges[1:])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        ap = os.path.join(out, "field_pdf.csv")
        write_rows(ap, ["J", "pdf"], zip(centers, localfields.field_pdf(centers, f)))
        rt = localfields.r_typ(f)
    sp = os.path.join(out, "shelving.csv")
    frac = np.mean(shelved, axis=0)
    write_rows(sp, ["label", "threshold", "shelved_fraction"],
               [(lab, t, fr) for (lab, t), fr in zip(localfields.MOTIFS, frac)])
    files = [hp, ap, sp]
    if cfg.get("J0") is not None:
        J0 = float(cfg["J0"])
        xp = os.path.join(out, "shelving_J0.csv")
        write_rows(xp, ["J0", "shelved_fraction"], [[J0, float((fields > J0).mean())]])
        files.append(xp)
    np_ = os.path.join(out, "nn_summary.csv")
    write_rows(np_, ["n_spins", "geometric_mean_rnn", "r_typ_formula", "field_mode_formula"],
               [[len(nn), float(np.exp(np.mean(np.log(nn)))), rt, localfields.field_mode(f)]])
    files.append(np_)
    return files, {"seed": seed, "streams": list(range(int(cfg["n_realizations"])))}


def cmd_strong_disorder(cfg, out):
    rows = []
    for f in _listify(cfg["f"]):
        f = float(f)
        bnd = strongdisorder.delta_c_selfconsistent(f)
        anchored = ""
        if cfg.get("anchor") is not None:
            anchored, _ = strongdisorder.delta_c_boundary(f, calibration=tuple(cfg["anchor"]))
        for d in _listify(cfg["delta"]):
            d = float(d)
            rows.append([f, d, cfg["h"], strongdisorder.delta_Ec(f, d, float(cfg["h"])),
                         strongdisorder.delta_Ec_small_h(f, d), bnd, anchored])
    path = os.path.join(out, "strong_disorder.csv")
    write_rows(path, ["f", "delta", "h", "delta_Ec", "delta_Ec_small_h", "one_minus_delta_c_selfconsistent",
                      "one_minus_delta_c_anchored"], rows)
    cp = os.path.join(out, "crossover.csv")
    write_rows(cp, ["crossover_filling"], [[strongdisorder.crossover_filling()]])
    return [path, cp], {"seed": int(cfg["seed"])}


def cmd_oracle(cfg, out):
    seed = int(cfg["seed"])
    delta = float(cfg["delta"])
    if cfg.get("couplings") is not None:
        C = np.asarray(cfg["couplings"], dtype=float)
        if C.ndim != 2 or C.shape[0] != C.shape[1] or not np.allclose(C, C.T):
            raise UsageError("couplings must be a symmetric square matrix")
        seeds = {"seed": seed}
    else:
        spec = lattice.LatticeSpec(L=int(cfg["L"]), f=float(cfg["f"]), boundary=lattice.OPEN)
        r = lattice.dilute(spec, seed)
        C = lattice.coupling_matrix(r)
        seeds = {"seed": seed, "lattice": [seed, 0]}
    files = []
    B_bf = ed_oracle.b_coefficients_bruteforce(C, delta)
    B_cf = meanfield.b_coefficients_from_couplings(C, delta)
    bp = os.path.join(out, "b_coefficients.csv")
    write_rows(bp, ["k", "bruteforce", "closed_form"],
               [(k + 1, B_bf[k], v) for k, v in enumerate((B_cf.B1, B_cf.B2, B_cf.B3))])
    files.append(bp)
    tp = os.path.join(out, "thermal.csv")
    trows = []
    for beta in _listify(cfg["beta"]):
        o = ed_oracle.thermal_observables(C, delta, 0.0, float(beta))
        trows.append([beta, o["E"], o["mxy2"], o["lnZ"]])
    write_rows(tp, ["beta", "E", "mxy2", "lnZ"], trows)
    files.append(tp)
    if float(cfg["t_max"]) > 0:
        times = np.linspace(0, float(cfg["t_max"]), int(cfg["n_samples"]))
        q = ed_oracle.quench_dynamics(C, delta, times)
        qp = os.path.join(out, "quench.csv")
        write_rows(qp, ["t", "xi2", "mxy2", "Sx"], zip(times, q.values["xi2"], q.values["mxy2"], q.values["Sx"]))
        files.append(qp)
    return files, seeds


COMMANDS = {
    "constants": cmd_constants,
    "phase-diagram": cmd_phase_diagram,
    "squeeze": cmd_squeeze,
    "analyze": cmd_analyze,
    "local-fields": cmd_local_fields,
    "strong-disorder": cmd_strong_disorder,
    "oracle": cmd_oracle,
}


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="master seed (required here or in the config)")
    common.add_argument("--workers", type=int, help="worker processes (results do not depend on it)")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--config", help="JSON config; flags override its values")

    p = argparse.ArgumentParser(prog="dipolar-squeezing", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("constants", parents=[common], help="lattice sums and shelving thresholds")

    s = sub.add_parser("phase-diagram", parents=[common], help="T_c estimates over (f, Delta) grids")
    s.add_argument("--f", type=_parse_values)
    s.add_argument("--delta", type=_parse_values)
    s.add_argument("--L", type=int)
    s.add_argument("--n-realizations", dest="n_realizations", type=int)
    s.add_argument("--boundary", choices=lattice.BOUNDARIES)

    s = sub.add_parser("squeeze", parents=[common], help="cDTWA squeezing series with shelving")
    s.add_argument("--f", type=float)
    s.add_argument("--delta", type=float)
    s.add_argument("--L", type=_parse_values)
    s.add_argument("--J0", type=_parse_values, help="shelving thresholds; 'inf' keeps every spin")
    s.add_argument("--n-trajectories", dest="n_trajectories", type=int)
    s.add_argument("--t-max", dest="t_max", type=float)
    s.add_argument("--n-samples", dest="n_samples", type=int)
    s.add_argument("--boundary", choices=lattice.BOUNDARIES)
    s.add_argument("--norm", choices=("N", "N2"))

    s = sub.add_parser("analyze", parents=[common], help="crossings, collapse, E_c, control variates")
    s.add_argument("--curves", help="CSV with columns L, beta, value[, realization]")
    s.add_argument("--energy", help="CSV with columns beta, E")
    s.add_argument("--control", help="CSV with columns m, J")
    s.add_argument("--eta", type=float)

    s = sub.add_parser("local-fields", parents=[common], help="local-field statistics and shelving fractions")
    s.add_argument("--f", type=float)
    s.add_argument("--L", type=int)
    s.add_argument("--n-realizations", dest="n_realizations", type=int)
    s.add_argument("--J0", type=float)
    s.add_argument("--boundary", choices=lattice.BOUNDARIES)

    s = sub.add_parser("strong-disorder", parents=[common], help="pair-relaxation energies and boundary")
    s.add_argument("--f", type=_parse_values)
    s.add_argument("--delta", type=_parse_values)
    s.add_argument("--h", type=float)

    s = sub.add_parser("oracle", parents=[common], help="exact diagonalization cross-checks")
    s.add_argument("--delta", type=float)
    s.add_argument("--f", type=float)
    s.add_argument("--L", type=int)
    s.add_argument("--t-max", dest="t_max", type=float)
    return p


_COMMON = ("command", "out", "config")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    out = args.out
    os.makedirs(out, exist_ok=True)
    manifest = os.path.join(out, "manifest.json")
    if os.path.exists(manifest):
        os.remove(manifest)
    overrides = {k: v for k, v in vars(args).items() if k not in _COMMON}
    t0 = time.time()
    try:
        cfg = load_config(args.command, args.config, overrides)
        files, seeds = COMMANDS[args.command](cfg, out)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    write_manifest(out, args.command, cfg, files, seeds, time.time() - t0)
    return 0


if __name__ == "__main__":
    sys.exit(main())
