import json

import numpy as np
import pytest

from spdecontrol.exceptions import ConfigError, LabError
from spdecontrol.lab.schemas import VerifyCheck
from spdecontrol.lab.services import ExperimentOutput
from spdecontrol.lab.writers import ArtifactWriter, dumps, format_number, read_table, render_csv


@pytest.mark.parametrize(
    "value, text",
    [
        (None, ""),
        (True, "1"),
        (np.bool_(False), "0"),
        (np.int64(42), "42"),
        (0.1, "0.10000000000000001"),
        (0.25, "0.25"),
        (1e20, "1e+20"),
        (float("inf"), "inf"),
        (float("nan"), "nan"),
    ],
)
def test_format_number(value, text):
    """
    Test of CSV number formatting
    """
    assert format_number(value) == text


def test_dumps_is_canonical():
    """
    Test of the canonical JSON text
    """
    document = VerifyCheck(name="x", passed=True, value=float("inf"), threshold=np.float64(0.5))
    text = dumps({"b": document, "a": np.arange(2)})
    assert text.endswith("\n")
    parsed = json.loads(text)
    assert list(parsed) == ["a", "b"]
    assert parsed["a"] == [0, 1]
    assert parsed["b"]["value"] is None
    assert parsed["b"]["threshold"] == 0.5


def test_render_and_read_table(tmp_path):
    """
    Test of rendering a table and reading it back
    """
    target = tmp_path / "table.csv"
    target.write_text(render_csv(["t", "norm"], [(0.0, 1.5), (0.5, None)]), encoding="utf-8")
    header, data = read_table(target)
    assert header == ["t", "norm"]
    assert data.shape == (2, 2)
    assert data[0, 1] == 1.5
    assert np.isnan(data[1, 1])
    with pytest.raises(ConfigError):
        read_table(tmp_path / "missing.csv")


def test_writer_records_manifest(tmp_path):
    """
    Test of the manifest of an artifact writer
    """
    output = ExperimentOutput("simulate")
    output.tables["trajectory.csv"] = (["t"], [(0.0,), (1.0,)])
    output.documents["simulation.json"] = {"terminal_l2": 0.25}
    with ArtifactWriter(tmp_path / "out", "simulate", "abc", [7]) as writer:
        writer.emit(output)
    manifest = json.loads((tmp_path / "out" / "manifest.json").read_text(encoding="utf-8"))
    assert manifest == {
        "artifacts": ["trajectory.csv", "simulation.json"],
        "command": "simulate",
        "config_hash": "abc",
        "seeds": [7],
    }
    assert (tmp_path / "out" / "trajectory.csv").read_text(encoding="utf-8") == "t\n0\n1\n"
    assert not list((tmp_path / "out").glob(".*.tmp"))


def test_writer_removes_partial_artifacts(tmp_path):
    """
    Test of an artifact writer after a failure
    """
    with pytest.raises(LabError):
        with ArtifactWriter(tmp_path, "simulate", "abc", [7]) as writer:
            writer.write_csv("trajectory.csv", ["t"], [(0.0,)])
            raise LabError("step failed")
    assert not (tmp_path / "trajectory.csv").exists()
    assert not (tmp_path / "manifest.json").exists()


def test_writer_rejects_duplicate_artifact(tmp_path):
    """
    Test of writing one artifact twice
    """
    with pytest.raises(LabError):
        with ArtifactWriter(tmp_path, "report", "abc", [7]) as writer:
            writer.write_json("a.json", {})
            writer.register("a.json")
    assert not (tmp_path / "a.json").exists()
