import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from hyperstep.cli import main
from hyperstep.io import read_long_csv, read_snapshot

EMPTY = """\
name: empty
scenario: single
grid: {nx: 17, ne: 4, T: 1.0, n_out: 11}
controller: continuum_exact
kernels: {method: sa}
system:
  continuum: {lam: "1", mu: "2 - eta", sigma: "0", W: "0", theta: "0", psi: "0", Q: "0", R: "0"}
initial: {u: "0", v: "0"}
"""


def write(tmp_path, text, name="c.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_empty_system_gives_zero_trajectories(tmp_path):
    out = tmp_path / "out"
    assert main(["--config", write(tmp_path, EMPTY), "--out", str(out)]) == 0
    _, rows = read_long_csv(out / "norms.csv")
    assert all(float(r[1]) == 0.0 for r in rows)
    _, rows = read_long_csv(out / "controls.csv")
    assert all(float(r[2]) == 0.0 for r in rows)
    assert np.all(read_snapshot(out / "kernel_K.snap") == 0)


@pytest.mark.parametrize("text", ["scenario: [", "scenario: single\nbogus: 1",
                                  EMPTY.replace("2 - eta", "2 - eta +")])
def test_parse_errors_exit_2(tmp_path, text, capsys):
    assert main(["--config", write(tmp_path, text), "--out", str(tmp_path / "o")]) == 2
    assert "config error" in capsys.readouterr().err


def test_missing_config_exits_2(tmp_path):
    assert main(["--config", str(tmp_path / "nope.cfg")]) == 2
    assert main(["--config", "bundled:nope"]) == 2


def test_bad_flags_are_rejected():
    with pytest.raises(SystemExit):
        main(["--config", "x", "--grid", "12"])
    with pytest.raises(SystemExit):
        main(["--config", "x", "--kernel-method", "fd"])


def test_solver_failure_exits_3(tmp_path):
    text = EMPTY.replace("scenario: single", "scenario: single\nkernels: {method: sa, max_iter: 1}")
    text = text.replace("kernels: {method: sa}\n", "")
    # negative speed is a structural failure of the characteristic geometry
    text = text.replace('lam: "1"', 'lam: "-1"').replace('theta: "0"', 'theta: "1"')
    assert main(["--config", write(tmp_path, text), "--out", str(tmp_path / "o")]) == 3


def test_reruns_are_byte_identical(tmp_path, monkeypatch):
    outs = []
    for k, workers in enumerate(("1", "2")):
        out = tmp_path / f"o{k}"
        monkeypatch.setenv("HYPERSTEP_WORKERS", workers)
        assert main(["--config", "bundled:example1_sweep", "--grid", "17,50",
                     "--out", str(out)]) == 0
        outs.append(out)
    for name in ("sweep_norms.csv", "sweep_fits.csv", "kernel_K.snap", "kernel_L.snap"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes(), name
    a = json.loads((outs[0] / "manifest.json").read_text())
    b = json.loads((outs[1] / "manifest.json").read_text())
    assert a == b
    assert a["kernel_method"] == "sa"


def test_manifest_names_kernel_method(tmp_path):
    out = tmp_path / "o"
    assert main(["--config", "bundled:example1_continuum", "--grid", "17,6",
                 "--kernel-method", "sa", "--out", str(out)]) == 0
    man = json.loads((out / "manifest.json").read_text())
    assert man["kernel_method"] == "sa"
    assert set(man["files"]) == {"norms.csv", "controls.csv", "kernel_K.snap", "kernel_L.snap"}
    assert read_snapshot(out / "kernel_K.snap").shape == (17, 17, 6, 6)
    cols, rows = read_long_csv(out / "controls.csv")
    assert cols == ["t", "eta", "U"] and len(rows) == 101 * 6


def test_example2_pipeline(tmp_path):
    out = tmp_path / "o"
    assert main(["--config", "bundled:example2", "--grid", "33,10", "--out", str(out)]) == 0
    man = json.loads((out / "manifest.json").read_text())
    n = man["norms_at_T"]
    assert n["averaged_macro"] < n["autonomous"]
    assert man["averaged_control_spread"] == 0.0


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "hyperstep", "--help"], capture_output=True,
                       text=True)
    assert r.returncode == 0 and "--kernel-method" in r.stdout


@pytest.mark.slow
def test_coarse_check_fails_with_exit_4(tmp_path, capsys):
    out = tmp_path / "o"
    code = main(["--config", "bundled:example1_continuum", "--check", "--grid", "8,50",
                 "--out", str(out)])
    assert code == 4
    verdict = json.loads((out / "verdict.json").read_text())
    assert not verdict["passed"]
    assert "FAIL" in capsys.readouterr().out
