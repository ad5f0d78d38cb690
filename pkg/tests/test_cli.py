import json

import numpy as np
import pytest

from droopstab.cli import main
from droopstab.config import reference_path

REF = str(reference_path())
CASE1 = str(reference_path("case1.json"))
CASE2 = str(reference_path("case2.json"))


@pytest.fixture(scope="module")
def out(tmp_path_factory):
    return tmp_path_factory.mktemp("runs")


def run(out, *argv):
    return main([argv[0], REF, "--out", str(out), *argv[1:]])


def manifest(out, command):
    (d,) = [p for p in out.iterdir() if p.name.endswith("-" + command)]
    return d, json.loads((d / "manifest.json").read_text())


def test_validate(out, capsys):
    assert run(out, "validate") == 0
    text = capsys.readouterr().out
    assert "states: 270, droop axes: 5" in text
    d, m = manifest(out, "validate")
    assert m["exit_code"] == 0
    assert m["command"] == "validate"
    assert "validate.json" in m["outputs"]
    assert len(m["config_hash"]) == 16


def test_equilibrium_is_cached(out, capsys):
    assert run(out, "equilibrium") == 0
    first = capsys.readouterr().out
    assert run(out, "equilibrium") == 0
    second = capsys.readouterr().out
    assert "(newton)" in first or "(march+newton)" in first
    assert "(cache)" in second
    assert list((out / "cache").glob("*/equilibrium.npz"))


def test_eig_and_sens(out, capsys):
    assert run(out, "eig", "--at-case", CASE1) == 0
    assert "270 eigenvalues" in capsys.readouterr().out
    d, _ = manifest(out, "eig")
    info = json.loads((d / "eig.json").read_text())
    assert info["stable"]
    assert run(out, "sens", "--at-case", CASE1) == 0
    d, _ = manifest(out, "sens")
    data = np.load(d / "sensitivity.npz")
    assert data["first"].shape == (270, 5)


def test_sup_and_xval(out, capsys):
    assert run(out, "sup", "--at-case", CASE1, "--axis", "k2") == 0
    assert "k2: sup =" in capsys.readouterr().out
    d, _ = manifest(out, "sup")
    sup = json.loads((d / "sup.json").read_text())
    assert sup["unit"] == "MW/kV"
    assert sup["suprema"][0]["axis"] == "k2"
    assert main(["xval", REF, "--out", str(out), "--case-a", CASE1, "--case-b", CASE2]) == 0
    d, _ = manifest(out, "xval")
    rows = json.loads((d / "xval.json").read_text())["rows"]
    assert len(rows) == 10


def test_loci_and_region(out, capsys):
    assert run(out, "loci", "--at-case", CASE1, "--axis", "k2", "--range", "15:400", "--samples", "21") == 0
    assert "loci supremum" in capsys.readouterr().out
    assert run(out, "region", "--at-case", CASE1, "--axes", "k1,k2", "--range", "0:200", "--res", "6", "--method", "both") == 0
    text = capsys.readouterr().out
    assert "agreement:" in text
    d, _ = manifest(out, "region")
    lines = (d / "region_loci.csv").read_text().splitlines()
    assert len(lines) == 1 + 36


def test_dumps_and_sim(out):
    assert main(["model", "dump", REF, "--out", str(out)]) == 0
    d, _ = manifest(out, "model-dump")
    assert np.load(d / "model.npz")["A_ss"].shape == (270, 270)
    assert main(["network", "dump", REF, "--out", str(out)]) == 0
    assert run(out, "sim", "--linear", "--t-end", "0.01", "--step", "0.002,4.p_set,100") == 0
    d, _ = manifest(out, "sim")
    assert (d / "trajectory.csv").exists()


def test_config_error_exit_code(out, tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    assert main(["validate", str(bad), "--out", str(out)]) == 2
    assert "droopstab: config:" in capsys.readouterr().err
    assert main(["validate", REF, "--out", str(out), "--set", "lines.0.l=0"]) == 2
    assert main(["sup", REF, "--out", str(out), "--axis", "k99"]) == 2


def test_infeasible_expansion_exit_code(out, capsys):
    # expand at the reference slopes but ask for suprema from an unstable point
    status = main(["sup", REF, "--out", str(out), "--set", "converters.1.droop.k=5000"])
    assert status in (3, 4)
    assert "droopstab:" in capsys.readouterr().err


def test_argument_errors():
    with pytest.raises(SystemExit):
        main(["region", REF, "--axes", "k1,k2", "--range", "5:1"])
    with pytest.raises(SystemExit):
        main([])
