import json
import shutil
import subprocess

import numpy as np
import pytest

from qcrelax import cli
from qcrelax.lamination import EnvelopeTable, MatrixGrid
from qcrelax.solver import GAP_COLUMNS


def _config(tmp_path, obj, name="cfg.json"):
    path = tmp_path / name
    path.write_text(obj if isinstance(obj, str) else json.dumps(obj))
    return str(path)


def _run(tmp_path, kind, cfg, out="out", seed=None):
    out = str(tmp_path / out)
    args = [kind, "--config", _config(tmp_path, cfg), "--out", out]
    if seed is not None:
        args += ["--seed", str(seed)]
    return cli.main(args), out


def _error(out):
    with open(f"{out}/error.json") as fh:
        return json.load(fh)


@pytest.mark.parametrize("text", ["", "   \n", "not json", "[1, 2]", "{}"])
def test_bad_config_files_exit_with_config_status(tmp_path, text):
    code, out = _run(tmp_path, "translation", text)
    assert code == cli.EXIT_CONFIG
    assert _error(out)["status"] == "config"


@pytest.mark.parametrize("kind,cfg", [
    ("translation", {"params": {"count": 0}}),
    ("translation", {"params": {"radius": 0.1}}),
    ("translation", {"kind": "cover", "params": {}}),
    ("cover", {"params": {"fill": 1.5}}),
    ("envelope", {"params": {"step": 0.3, "half_width": 1.0}}),
    ("envelope", {"model": {"model": "neo-hookean"}}),
    ("laminate", {"params": {"t": 1.5}}),
    ("recovery", {"params": {"F": [[1, 0], [0, -1]]}}),
    ("recovery", {"params": {"F": {"lambda2": 1.5}}}),
    ("relax", {"params": {"ns": []}}),
    ("verify", {"model": {"model": "nematic", "n": 2, "gamma": [0.5, 2.0], "p": 2}}),
])
def test_invalid_parameters_are_config_errors(tmp_path, kind, cfg):
    code, out = _run(tmp_path, kind, cfg)
    assert code == cli.EXIT_CONFIG
    rec = _error(out)
    assert rec["status"] == "config" and rec["kind"] == kind and rec["message"]


def test_runtime_failure_is_reported(tmp_path, monkeypatch):
    def boom(W, p, seed, out):
        raise RuntimeError("solver exploded")

    monkeypatch.setitem(cli.RUNNERS, "relax", boom)
    code, out = _run(tmp_path, "relax", {"params": {"ns": [2]}})
    assert code == cli.EXIT_RUNTIME
    rec = _error(out)
    assert rec["status"] == "error" and rec["type"] == "RuntimeError"


def test_translation_outputs_are_deterministic(tmp_path):
    cfg = {"params": {"count": 3}}
    c1, o1 = _run(tmp_path, "translation", cfg, "a", seed=5)
    c2, o2 = _run(tmp_path, "translation", cfg, "b", seed=5)
    assert c1 == c2 == 0
    a = open(f"{o1}/translation.csv", "rb").read()
    assert a == open(f"{o2}/translation.csv", "rb").read()
    assert a.count(b"\r\n") == 4
    with open(f"{o1}/manifest.json") as fh:
        man = json.load(fh)
    assert man["config_hash"] == cli.config_hash(cfg)
    assert man["seed"] == 5 and man["kind"] == "translation"
    assert set(man["versions"]) >= {"qcrelax", "numpy", "scipy", "numba", "shapely"}
    assert man["summary"]["all_qualifying"]


def test_config_hash_is_canonical():
    assert cli.config_hash({"a": 1, "b": [1, 2]}) == cli.config_hash({"b": [1, 2], "a": 1})
    assert cli.config_hash({"a": 1}) != cli.config_hash({"a": 2})


def test_cover_run(tmp_path):
    code, out = _run(tmp_path, "cover", {"params": {"pixels": 256, "rounds": 3}})
    assert code == 0
    lines = open(f"{out}/cover.csv").read().splitlines()
    assert len(lines) == 5


def test_laminate_run(tmp_path):
    code, out = _run(tmp_path, "laminate", {"params": {"k": 4, "t": 0.3}})
    assert code == 0
    for name in ("laminate.csv", "laminate.json", "laminate.svg", "manifest.json"):
        assert (tmp_path / "out" / name).exists()
    assert open(f"{out}/laminate.svg").read().lstrip().startswith("<svg")


def test_envelope_run_and_table_comparison(tmp_path):
    code, out = _run(tmp_path, "envelope", {"params": {"half_width": 1.0, "step": 0.5}})
    assert code == 0
    path = f"{out}/table.bin"
    T = EnvelopeTable.load(path)
    rep = cli.compare_tables(path, T, tol=0.0)
    assert rep["passed"] and rep["max_abs"] == 0.0
    other = EnvelopeTable(T.grid, T.values + 0.25)
    rep = cli.compare_tables(T, other, tol=0.1)
    assert not rep["passed"] and rep["max_abs"] == pytest.approx(0.25)
    with pytest.raises(ValueError, match="grid mismatch"):
        cli.compare_tables(T, EnvelopeTable(MatrixGrid.box(1.0, 0.25),
                                            np.zeros(MatrixGrid.box(1.0, 0.25).shape)), tol=1.0)
    csv_path = str(tmp_path / "t.csv")
    T.to_csv(csv_path)
    assert cli.compare_tables(csv_path, csv_path, tol=0.0)["passed"]


def test_nematic_envelope_run(tmp_path):
    cfg = {"model": {"model": "nematic", "n": 2, "gamma": [0.5, 2.0], "p": 2},
           "params": {"step": 0.1}}
    code, out = _run(tmp_path, "envelope", cfg)
    assert code == 0
    rows = open(f"{out}/slice.csv").read().splitlines()
    assert rows[0].split(",") == ["lambda2", "lamination", "analytic"]


def test_relax_run(tmp_path):
    code, out = _run(tmp_path, "relax", {"params": {"ns": [2, 4]}})
    assert code == 0
    rows = open(f"{out}/gap.csv").read().splitlines()
    assert tuple(rows[0].split(",")) == GAP_COLUMNS
    assert len(rows) == 3


def test_recovery_run(tmp_path):
    code, out = _run(tmp_path, "recovery", {"params": {"mesh_n": 8, "pixels": 256, "rounds": 2}})
    assert code == 0
    with open(f"{out}/final.json") as fh:
        final = json.load(fh)
    assert "base" in final and final["patches"]
    assert open(f"{out}/trajectory.csv").readline().startswith("round,energy")


def test_verify_run(tmp_path):
    cfg = {"params": {"half_width": 2.0, "step": 0.5, "laminates": 3}}
    code, out = _run(tmp_path, "verify", cfg)
    assert code == 0
    rows = open(f"{out}/invariants.csv").read().splitlines()
    assert rows[0] == "check,passed,value"
    assert all(",true," in r for r in rows[1:])


@pytest.mark.skipif(shutil.which("qcrelax") is None, reason="console script not installed")
def test_console_script(tmp_path):
    cfg = _config(tmp_path, "")
    proc = subprocess.run(["qcrelax", "cover", "--config", cfg, "--out", str(tmp_path / "o")],
                          capture_output=True, text=True)
    assert proc.returncode == 2
    assert json.loads(proc.stderr.strip().splitlines()[-1])["status"] == "config"
