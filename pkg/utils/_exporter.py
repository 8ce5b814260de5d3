# ############################################################################## #
# switchopt | feedback optimization on switched linear plants                    #
# CSV arcs, certificate reports and experiment summaries                         #
# ############################################################################## #

import csv
import math
import os

from configparser import ConfigParser

from utils._certificates import analyse_arc
from utils._config import SettingsError, load_settings
from utils._logging import setup_logger


class ExporterError(Exception):
    pass


class ArcExporter:
    REPORT_SUFFIX = ".report.ini"

    def __init__(self, settings=None):
        try:
            self.settings = settings or load_settings()
            self.float_digits = self.settings.float_digits
            self.logger = setup_logger("exporter", self.settings.log_dir, self.settings.log_file)
        except SettingsError as e:
            raise ExporterError(f"Error reading configuration: {str(e)}")
        except OSError as e:
            raise ExporterError(f"Cannot prepare the log directory: {str(e)}")

    def number(self, value):
        value = float(value)
        if math.isnan(value):
            return ""
        return format(value, f".{self.float_digits}g")

    def header(self, arc, plant):
        return (["t", "j", "sigma", "tau"]
                + [f"x_{i}" for i in range(plant.n)]
                + list(arc.controller_labels)
                + [f"y_{i}" for i in range(plant.p)]
                + ["err_track", "f_gap", "V", "envelope", "diverged"])

    def rows(self, arc, scenario, analysis):
        plant = scenario.plant
        diverged = "1" if arc.diverged else "0"
        for i in range(len(arc)):
            w = scenario.disturbance.value_at(arc.t[i])
            y = plant.output(arc.x[i], w)
            row = [self.number(arc.t[i]), str(int(arc.j[i])), str(int(arc.sigma[i])), self.number(arc.tau[i])]
            row += [self.number(value) for value in arc.x[i]]
            row += [self.number(value) for value in arc.controller[i]]
            row += [self.number(value) for value in y]
            row += [
                self.number(analysis.tracking.values[i]),
                self.number(analysis.gap.values[i]),
                "" if analysis.lyapunov is None else self.number(analysis.lyapunov[i]),
                "" if analysis.envelope is None else self.number(analysis.envelope[i]),
                diverged,
            ]
            yield row

    def write_csv(self, arc, scenario, certification, path):
        """Write one record per arc sample and the certificate document next to it."""
        analysis = analyse_arc(arc, scenario, certification)
        try:
            directory = os.path.dirname(os.path.abspath(path))
            os.makedirs(directory, exist_ok=True)
            with open(path, "w", encoding="utf-8", newline="") as handle:
                writer = csv.writer(handle, delimiter=",", lineterminator="\n")
                writer.writerow(self.header(arc, scenario.plant))
                writer.writerows(self.rows(arc, scenario, analysis))
        except OSError as e:
            self.logger.error(f"I/O error while writing {path}: {str(e)}")
            raise ExporterError(f"Cannot write {path}: {str(e)}")

        self.write_report(certification.report, path + self.REPORT_SUFFIX)
        self.logger.info(f"Exported {len(arc)} samples of '{scenario.name}' to {path}")
        return analysis

    def write_report(self, report, path):
        config = ConfigParser(interpolation=None)
        config.read_dict(report.to_sections(self.float_digits))
        self._write_ini(config, path)

    def write_summary(self, results, path):
        """Merge one section per experiment into the summary document at ``path``."""
        config = ConfigParser(interpolation=None)
        if os.path.exists(path):
            config.read(path, encoding="utf-8")
        for name, values in results.items():
            if config.has_section(name):
                config.remove_section(name)
            config.add_section(name)
            for key, value in values.items():
                config.set(name, key, self._format_value(value))
        self._write_ini(config, path)
        self.logger.info(f"Summary written to {path}")

    def _format_value(self, value):
        if isinstance(value, bool):
            return str(value).lower()
        if isinstance(value, float):
            return self.number(value) if not math.isnan(value) else "nan"
        return str(value)

    def _write_ini(self, config, path):
        try:
            os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
            with open(path, "w", encoding="utf-8", newline="\n") as handle:
                config.write(handle)
        except OSError as e:
            self.logger.error(f"I/O error while writing {path}: {str(e)}")
            raise ExporterError(f"Cannot write {path}: {str(e)}")
