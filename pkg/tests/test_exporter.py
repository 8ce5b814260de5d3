import csv
import os

from configparser import ConfigParser

import pytest

from utils._certificates import certify_scenario
from utils._exporter import ArcExporter, ExporterError
from utils._simulator import simulate


@pytest.fixture
def exporter(settings):
    return ArcExporter(settings)


@pytest.fixture
def simulated(make_scenario, settings):
    scenario = make_scenario(horizon=0.5)
    return scenario, simulate(scenario), certify_scenario(scenario, settings)


def _read_csv(path):
    with open(path, "r", encoding="utf-8", newline="") as handle:
        return list(csv.reader(handle))


class TestNumbers:
    def test_round_trip_precision(self, exporter):
        assert float(exporter.number(0.1)) == 0.1
        assert float(exporter.number(1.0 / 3.0)) == 1.0 / 3.0

    def test_nan_is_empty(self, exporter):
        assert exporter.number(float("nan")) == ""


class TestArcCsv:
    def test_header(self, exporter, simulated):
        scenario, arc, _ = simulated
        assert exporter.header(arc, scenario.plant) == [
            "t", "j", "sigma", "tau", "x_0", "u_0", "y_0", "err_track", "f_gap", "V", "envelope", "diverged"]

    def test_one_row_per_sample(self, exporter, simulated, tmp_path):
        scenario, arc, certification = simulated
        path = str(tmp_path / "out" / "arc.csv")
        exporter.write_csv(arc, scenario, certification, path)
        rows = _read_csv(path)
        assert len(rows) == len(arc) + 1
        assert all(len(row) == len(rows[0]) for row in rows)
        first = dict(zip(rows[0], rows[1]))
        assert first["t"] == "0"
        assert first["tau"] == ""
        assert first["diverged"] == "0"
        assert float(first["u_0"]) == 1.0
        assert first["V"] != "" and first["envelope"] != ""

    def test_output_is_reproducible(self, exporter, simulated, tmp_path):
        scenario, arc, certification = simulated
        first, second = str(tmp_path / "first.csv"), str(tmp_path / "second.csv")
        exporter.write_csv(arc, scenario, certification, first)
        exporter.write_csv(simulate(scenario), scenario, certification, second)
        with open(first, "rb") as a, open(second, "rb") as b:
            assert a.read() == b.read()

    def test_report_next_to_the_csv(self, exporter, simulated, tmp_path):
        scenario, arc, certification = simulated
        path = str(tmp_path / "arc.csv")
        exporter.write_csv(arc, scenario, certification, path)
        report = ConfigParser()
        report.read(path + ArcExporter.REPORT_SUFFIX, encoding="utf-8")
        assert report.get("report", "passed") == "true"
        assert report.get("report", "controller") == "gradient"
        assert float(report.get("mode.1", "eps_bar")) == pytest.approx(0.25)

    def test_unwritable_path(self, exporter, simulated, tmp_path):
        scenario, arc, certification = simulated
        blocker = tmp_path / "file"
        blocker.write_text("", encoding="utf-8")
        with pytest.raises(ExporterError):
            exporter.write_csv(arc, scenario, certification, str(blocker / "arc.csv"))


class TestSummary:
    def test_sections_are_merged(self, exporter, tmp_path):
        path = str(tmp_path / "summary.ini")
        exporter.write_summary({"first": {"passed": True, "arms": 2}}, path)
        exporter.write_summary({"second": {"passed": False, "limsup": 0.5}}, path)
        exporter.write_summary({"first": {"passed": False}}, path)

        summary = ConfigParser()
        summary.read(path, encoding="utf-8")
        assert sorted(summary.sections()) == ["first", "second"]
        assert dict(summary["first"]) == {"passed": "false"}
        assert summary.get("second", "limsup") == "0.5"

    def test_logs_under_the_exporter_prefix(self, settings, exporter, tmp_path):
        exporter.write_summary({"only": {"passed": True}}, str(tmp_path / "summary.ini"))
        assert os.path.isdir(os.path.join(settings.log_dir, "exporter"))
