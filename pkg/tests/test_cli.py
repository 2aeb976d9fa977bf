import csv
import json
import math

import numpy as np
import pytest

from dipolar_squeezing import cli
from dipolar_squeezing import localfields as lf


def _rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def _run(tmp_path, name, *args):
    out = tmp_path / name
    code = cli.main([args[0], "--out", str(out), *args[1:]])
    return code, out


def test_manifest_and_digests(tmp_path):
    code, out = _run(tmp_path, "c", "constants", "--seed", "1")
    assert code == 0
    man = json.loads((out / "manifest.json").read_text())
    assert man["command"] == "constants" and man["seeds"]["seed"] == 1
    for name, digest in man["outputs"].items():
        assert cli._digest(out / name) == digest
        assert len(digest) == 16


def test_missing_seed_and_bad_config(tmp_path):
    assert _run(tmp_path, "a", "constants")[0] == 2
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"seed": 1, "bogus": 3}))
    code, out = _run(tmp_path, "b", "phase-diagram", "--config", str(cfg))
    assert code == 2 and not (out / "manifest.json").exists()
    cfg.write_text("{not json")
    assert _run(tmp_path, "c", "constants", "--config", str(cfg))[0] == 2


def test_phase_diagram_values_and_determinism(tmp_path):
    code, out = _run(tmp_path, "p1", "phase-diagram", "--seed", "3", "--f", "1", "--delta", "0")
    assert code == 0
    row = _rows(out / "phase_diagram.csv")[0]
    assert float(row["Tc_MF"]) == pytest.approx(2.25, abs=0.01)
    args = ["phase-diagram", "--seed", "3", "--f", "0.3", "--delta=-0.5,0", "--L", "10",
            "--n-realizations", "3"]
    c1, o1 = _run(tmp_path, "p2", *args)
    c2, o2 = _run(tmp_path, "p3", *args)
    assert c1 == c2 == 0
    assert (o1 / "phase_diagram.csv").read_bytes() == (o2 / "phase_diagram.csv").read_bytes()
    rows = _rows(o1 / "phase_diagram.csv")
    assert len(rows) == 2 and all(float(r["Tc_dimerMFT"]) > 0 for r in rows)


def test_phase_diagram_config_and_flag_precedence(tmp_path):
    cfg = tmp_path / "pd.json"
    cfg.write_text(json.dumps({"seed": 2, "f": [0.5, 1.0], "delta": [0.0]}))
    code, out = _run(tmp_path, "p", "phase-diagram", "--config", str(cfg), "--f", "1")
    assert code == 0
    assert [float(r["f"]) for r in _rows(out / "phase_diagram.csv")] == [1.0]


def test_phase_diagram_empty_grid(tmp_path):
    cfg = tmp_path / "e.json"
    cfg.write_text(json.dumps({"seed": 2, "delta": []}))
    assert _run(tmp_path, "p", "phase-diagram", "--config", str(cfg))[0] == 2


def test_phase_diagram_error_keeps_partial_rows(tmp_path, capsys):
    # Delta = -1 makes the pair susceptibility singular for the second grid point
    code, out = _run(tmp_path, "p", "phase-diagram", "--seed", "1", "--f", "0.3", "--delta", "0,-1",
                     "--L", "10", "--n-realizations", "2")
    assert code == 1
    assert "delta=-1.0" in capsys.readouterr().err
    assert len(_rows(out / "phase_diagram.csv")) == 1
    assert not (out / "manifest.json").exists()


def test_squeeze_heisenberg_unshelved(tmp_path):
    code, out = _run(tmp_path, "s", "squeeze", "--seed", "4", "--f", "0.3", "--delta", "1", "--L", "8",
                     "--J0", "inf", "--n-trajectories", "20", "--t-max", "5", "--n-samples", "11")
    assert code == 0
    summ = _rows(out / "squeeze_summary.csv")[0]
    assert "unfiltered" in summ["note"] and float(summ["shelved_fraction"]) == 0.0
    raw = [r for r in out.iterdir() if r.name.startswith("squeeze_L8") and r.suffix == ".csv"]
    assert len(raw) == 1
    rows = _rows(raw[0])
    Sx = np.array([float(r["Sx"]) for r in rows])
    assert np.allclose(Sx, int(summ["N"]) / 2, atol=1e-8)


def test_squeeze_all_shelved_row(tmp_path):
    code, out = _run(tmp_path, "s", "squeeze", "--seed", "4", "--f", "0.5", "--L", "6",
                     "--J0", "1e-6,inf", "--n-trajectories", "4", "--t-max", "1", "--n-samples", "3")
    assert code == 0
    rows = _rows(out / "squeeze_summary.csv")
    assert rows[0]["note"].startswith("error") and float(rows[0]["shelved_fraction"]) == 1.0
    assert rows[1]["note"] != "" and rows[1]["note"].startswith("unfiltered")


def test_squeeze_threshold_scan(tmp_path):
    J0 = ",".join(repr(float(t)) for t in lf.motif_thresholds())
    code, out = _run(tmp_path, "s", "squeeze", "--seed", "2", "--f", "0.3", "--L", "8", "--J0", J0,
                     "--n-trajectories", "4", "--t-max", "1", "--n-samples", "3")
    assert code == 0
    assert len(_rows(out / "squeeze_summary.csv")) == len(lf.MOTIFS)


def _planted_control_set(n=200, seed=0, shift=0.01):
    # m depends linearly on J with strong correlation; the sample mean of J is
    # offset from the true mean so that the linear correction moves <m> by `shift`
    rng = np.random.default_rng(seed)
    J = rng.normal(1.0, 0.1, size=n)
    J = (J - J.mean()) / J.std(ddof=1) * 0.1
    m = 0.5 + 2.0 * J + 0.05 * rng.normal(size=n)
    m -= m.mean() - 0.5
    J += 1.0
    b = np.cov(m, J, ddof=1)[0, 1] / np.var(J, ddof=1)
    true_J = 1.0 - shift * m.mean() / b
    return m, J, true_J


def test_analyze_control_variates(tmp_path):
    m, J, true_J = _planted_control_set()
    p = tmp_path / "cv.csv"
    with open(p, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["m", "J"])
        w.writerows(zip(m, J))
    cfg = tmp_path / "a.json"
    cfg.write_text(json.dumps({"seed": 1, "control": str(p), "true_mean_J": true_J}))
    code, out = _run(tmp_path, "a", "analyze", "--config", str(cfg))
    assert code == 0
    row = _rows(out / "control_variate.csv")[0]
    rel = float(row["adjusted_mean"]) / float(row["raw_mean"]) - 1
    assert rel == pytest.approx(-0.01, abs=1e-10)


def test_analyze_crossings_and_energy(tmp_path):
    p = tmp_path / "curves.csv"
    betas = np.linspace(1, 3, 11)
    with open(p, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["L", "beta", "value", "realization"])
        rng = np.random.default_rng(0)
        for L in (16, 32):
            for k in range(5):
                for b in betas:
                    w.writerow([L, b, (0.4 + (b - 1.9) * math.log(L)) / L + 1e-4 * rng.normal(), k])
    e = tmp_path / "E.csv"
    e.write_text("beta,E\n" + "".join(f"{b},{2 * b}\n" for b in betas))
    cfg = tmp_path / "a.json"
    cfg.write_text(json.dumps({"seed": 1, "curves": str(p), "energy": str(e), "beta_c": float(betas[3]),
                               "B": 100}))
    code, out = _run(tmp_path, "a", "analyze", "--config", str(cfg))
    assert code == 0
    row = _rows(out / "crossings.csv")[0]
    assert float(row["beta_c"]) == pytest.approx(1.9, abs=0.02)
    assert float(row["beta_c_err"]) > 0
    assert float(_rows(out / "Ec.csv")[0]["Ec"]) == 2 * betas[3]
    assert (out / "collapse.csv").exists()


def test_analyze_schema_error(tmp_path, capsys):
    p = tmp_path / "bad.csv"
    p.write_text("L,beta\n16,1.0\n")
    cfg = tmp_path / "a.json"
    cfg.write_text(json.dumps({"seed": 1, "curves": str(p)}))
    assert _run(tmp_path, "a", "analyze", "--config", str(cfg))[0] == 2
    assert "value" in capsys.readouterr().err
    assert _run(tmp_path, "b", "analyze", "--seed", "1")[0] == 2


def test_other_commands_run(tmp_path):
    assert _run(tmp_path, "l", "local-fields", "--seed", "1", "--f", "0.05", "--L", "30", "--J0", "1")[0] == 0
    code, out = _run(tmp_path, "d", "strong-disorder", "--seed", "1", "--f", "0.01,0.04", "--delta", "0.9")
    assert code == 0 and len(_rows(out / "strong_disorder.csv")) == 2
    code, out = _run(tmp_path, "o", "oracle", "--seed", "5", "--f", "0.5", "--L", "3", "--t-max", "2")
    assert code == 0
    for row in _rows(out / "b_coefficients.csv"):
        assert float(row["bruteforce"]) == pytest.approx(float(row["closed_form"]), abs=1e-12)


def test_rerun_overwrites_cleanly(tmp_path):
    code, out = _run(tmp_path, "c", "constants", "--seed", "1")
    first = (out / "constants.csv").read_bytes()
    code, out = _run(tmp_path, "c", "constants", "--seed", "1")
    assert code == 0 and (out / "constants.csv").read_bytes() == first
    assert not [p for p in out.iterdir() if p.name.startswith(".manifest-")]
