# ############################################################################## #
# switchopt | feedback optimization on switched linear plants                    #
# Application settings (config.ini)                                              #
# ############################################################################## #

import os

from dataclasses import dataclass
from configparser import ConfigParser, NoSectionError, NoOptionError

CONFIG_FILE = "config.ini"
OUTPUT_DIR_ENV = "SWITCHOPT_OUTPUT_DIR"


class SettingsError(Exception):
    pass


@dataclass(frozen=True)
class Settings:
    log_dir: str = "./logs"
    log_file: str = "switchopt.log"
    output_dir: str = "./results"
    float_digits: int = 17
    record_stride: int = 1
    divergence_threshold: float = 1e12
    max_steps: int = 400000
    varrho: str = "midpoint"
    flow_tolerance: float = 0.05
    envelope_tolerance: float = 1e-6
    b_fraction: float = 0.5
    alpha_varrho: float = 1.0
    seed: int = 7
    workers: int = 4
    budget: float = 30.0


# attribute -> where it lives in config.ini and how to read it
CONFIG_PARAMS = {
    "log_dir": {"section": "General", "key": "log_dir", "type": str},
    "log_file": {"section": "General", "key": "log_file", "type": str},
    "output_dir": {"section": "Output", "key": "output_dir", "type": str},
    "float_digits": {"section": "Output", "key": "float_digits", "type": int},
    "record_stride": {"section": "Simulation", "key": "record_stride", "type": int},
    "divergence_threshold": {"section": "Simulation", "key": "divergence_threshold", "type": float},
    "max_steps": {"section": "Simulation", "key": "max_steps", "type": int},
    "varrho": {"section": "Certificates", "key": "varrho", "type": str},
    "flow_tolerance": {"section": "Certificates", "key": "flow_tolerance", "type": float},
    "envelope_tolerance": {"section": "Certificates", "key": "envelope_tolerance", "type": float},
    "b_fraction": {"section": "Certificates", "key": "b_fraction", "type": float},
    "alpha_varrho": {"section": "Certificates", "key": "alpha_varrho", "type": float},
    "seed": {"section": "Experiments", "key": "seed", "type": int},
    "workers": {"section": "Experiments", "key": "workers", "type": int},
    "budget": {"section": "Experiments", "key": "budget", "type": float},
}


def load_settings(path=CONFIG_FILE):
    """Read config.ini; a missing file yields the built-in defaults."""
    values = {}

    if os.path.exists(path):
        config = ConfigParser()
        try:
            config.read(path, encoding="utf-8")
            for attribute, params in CONFIG_PARAMS.items():
                raw = config.get(params["section"], params["key"])
                values[attribute] = params["type"](raw)
        except NoSectionError as e:
            raise SettingsError(f"Error in configuration file: {str(e)}")
        except NoOptionError as e:
            raise SettingsError(f"Missing required option in configuration file: {str(e)}")
        except ValueError as e:
            raise SettingsError(f"Invalid value in configuration file: {str(e)}")
        except Exception as e:
            raise SettingsError(f"Error reading configuration: {str(e)}")

    env_output = os.environ.get(OUTPUT_DIR_ENV)
    if env_output:
        values["output_dir"] = env_output

    settings = Settings(**values)
    if settings.record_stride < 1:
        raise SettingsError("record_stride must be a positive integer")
    if settings.workers < 1:
        raise SettingsError("workers must be a positive integer")
    return settings
