"""Smoke test of the Python bindings.

Build and install first:
    pip install --no-build-isolation -e crates/py
then run with pytest or as a script from the repository root.
"""

import json
import math
import pathlib
import tempfile

import causal_lab_py as cl

ROOT = pathlib.Path(__file__).resolve().parent.parent
SCENARIOS = ROOT / "scenarios"


def test_retarded_kernel_closed_form():
    n = 32
    fam = cl.kernel_family([1.0], 2 * math.pi, n)
    assert set(fam) == {"plus", "retarded", "feynman"}
    dt = 2 * math.pi / n
    for lag in range(1, n // 2):
        assert abs(fam["retarded"][0][0][lag] - math.sin(lag * dt)) < 1e-12
    for lag in range(n // 2 + 1, n):
        assert fam["retarded"][0][0][lag] == 0


def test_bad_band_raises():
    try:
        cl.kernel_family([1.0], 1.0, 8, band="medium")
    except ValueError as e:
        assert "medium" in str(e)
    else:
        raise AssertionError("expected ValueError")


def test_scenario_validation():
    digest, warnings, text = cl.load_scenario(str(SCENARIOS / "single_mode.toml"))
    assert len(digest) == 64 and warnings == []
    assert json.loads(text)["hbar"] == 1.0
    with tempfile.TemporaryDirectory() as tmp:
        empty = pathlib.Path(tmp) / "empty.toml"
        empty.write_text("")
        try:
            cl.load_scenario(str(empty))
        except ValueError as e:
            assert "missing field `hbar`" in str(e)
        else:
            raise AssertionError("expected ValueError")


def test_cli_round_trip():
    with tempfile.TemporaryDirectory() as tmp:
        out = pathlib.Path(tmp)
        code = cl.run_cli(["kernels", "--scenario", str(SCENARIOS / "single_mode.toml"), "--out", str(out)])
        assert code == 0
        manifest = json.loads(cl.read_manifest(str(out / "manifest.json")))
        assert manifest["passed"] and manifest["command"] == "kernels"
        header, values = cl.read_kernel(str(out / "kernels" / "broad_retarded.txt"))
        assert json.loads(header)["name"] == "retarded"
        assert values == cl.kernel_family([1.0], 2 * math.pi, 32)["retarded"]
        assert cl.run_cli(["kernels", "--scenario", str(out / "missing.toml")]) == 2


if __name__ == "__main__":
    for name, fn in list(globals().items()):
        if name.startswith("test_"):
            fn()
            print(f"ok {name}")
