# ############################################################################## #
# switchopt | feedback optimization on switched linear plants                    #
# Scenario files: INI documents with JSON-encoded matrices                       #
# ############################################################################## #

import json
import logging
import math
import os
import re
import numpy as np

from configparser import ConfigParser, Error as ConfigError

from utils._certificates import CertificateError, dwell_time_bound, epsilon_bounds
from utils._controllers import ControllerError, NesterovParams
from utils._cost import CostModelError, QuadraticCost, QuarticCost
from utils._experiments import build_ctm
from utils._plant import LtiMode, PlantModelError, SwitchedPlant, random_plant
from utils._simulator import (STIFFNESS_RATIO, CertificateOptions, ControllerConfig, DisturbanceSignal,
                              IntegratorConfig, Scenario, SimulationError, SwitchingConfig)
from utils._switching import DwellTimeParams, SwitchingError, SwitchingSignal, constant_signal, generate_signal

logger = logging.getLogger(__name__)

REQUIRED = object()
AUTO = "auto"
AUTO_STEP_RATIO = 2.0 * STIFFNESS_RATIO
MODEL_ERRORS = (PlantModelError, CostModelError, SwitchingError, ControllerError, SimulationError,
                CertificateError)


class ScenarioParseError(Exception):
    def __init__(self, message, line=None, column=None):
        self.message = message
        self.line = line
        self.column = column
        position = "" if line is None else f"line {line}, column {column}: "
        super().__init__(f"{position}{message}")


def _as_bool(raw):
    value = raw.strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"'{raw}' is not a boolean")


def _as_json(raw):
    return json.loads(raw)


def _as_matrix(raw):
    value = np.array(json.loads(raw), dtype=float)
    if value.ndim == 0:
        value = value.reshape(1, 1)
    elif value.ndim == 1:
        value = value.reshape(-1, 1)
    if value.ndim != 2:
        raise ValueError("expected a JSON matrix (list of rows)")
    return value


def _as_vector(raw):
    value = np.array(json.loads(raw), dtype=float)
    if value.ndim > 1:
        raise ValueError("expected a JSON vector")
    return value.reshape(-1)


# how each option is read
VALUE_TYPES = {
    "str": str,
    "int": int,
    "float": float,
    "bool": _as_bool,
    "json": _as_json,
    "matrix": _as_matrix,
    "vector": _as_vector,
}


class ScenarioFile:
    """One parsed scenario document, able to point at the line of any option."""

    def __init__(self, text, name=None, record_stride=1):
        self.text = text
        self.lines = text.splitlines()
        self.name = name
        self.record_stride = record_stride
        self.config = ConfigParser(interpolation=None)
        self.config.optionxform = str
        try:
            self.config.read_string(text)
        except ConfigError as e:
            line = getattr(e, "lineno", None)
            raise ScenarioParseError(str(e).splitlines()[0], line, 1 if line else None)

    def locate(self, section, key=None):
        """1-based (line, column) of ``key`` in ``section`` (or of the section header)."""
        header = re.compile(r"^\s*\[\s*" + re.escape(section) + r"\s*\]")
        option = None if key is None else re.compile(r"^(\s*)" + re.escape(key) + r"\s*[=:]\s*")
        inside = False
        for number, line in enumerate(self.lines, start=1):
            if header.match(line):
                if key is None:
                    return number, line.index("[") + 1
                inside = True
                continue
            if inside and line.lstrip().startswith("["):
                break
            if inside and option is not None:
                match = option.match(line)
                if match:
                    return number, match.end() + 1
        return None, None

    def error(self, message, section, key=None):
        line, column = self.locate(section, key)
        if line is None and key is not None:
            line, column = self.locate(section)
        return ScenarioParseError(message, line, column)

    def has(self, section, key=None):
        if key is None:
            return self.config.has_section(section)
        return self.config.has_option(section, key)

    def get(self, section, key, kind="str", default=REQUIRED):
        if not self.config.has_section(section):
            if default is REQUIRED:
                raise ScenarioParseError(f"missing section [{section}]")
            return default
        if not self.config.has_option(section, key):
            if default is REQUIRED:
                raise self.error(f"missing option '{key}' in [{section}]", section)
            return default
        raw = self.config.get(section, key)
        try:
            return VALUE_TYPES[kind](raw)
        except (ValueError, TypeError) as e:
            raise self.error(f"invalid {kind} for '{key}' in [{section}]: {str(e)}", section, key)

    def is_auto(self, section, key):
        return self.has(section, key) and self.config.get(section, key).strip().lower() == AUTO

    def mode_sections(self, prefix):
        sections = {}
        for section in self.config.sections():
            if section.startswith(prefix):
                suffix = section[len(prefix):]
                if not suffix.isdigit():
                    raise self.error(f"mode sections must end in a mode number, got [{section}]", section)
                sections[int(suffix)] = section
        return dict(sorted(sections.items()))

    # ------------------------------------------------------------------------ #

    def build(self):
        name = self.get("scenario", "name", default=self.name or "scenario")
        plant = self._guarded("plant", self._plant)
        cost = self._guarded("cost", self._cost)
        controller = self._guarded("controller", lambda: self._controller(plant))
        overrides = self._guarded("certificates", lambda: self._overrides(plant))

        epsilon = self._guarded("epsilon", lambda: self._epsilon(plant, cost, controller, overrides))
        step = self._guarded("integrator", lambda: self._step(epsilon))
        horizon = self.get("integrator", "horizon", "float")
        integrator = self._guarded("integrator", lambda: IntegratorConfig(
            step=step, horizon=horizon,
            record_stride=self.get("integrator", "record_stride", "int", default=self.record_stride)))

        switching = self._guarded("switching", lambda: self._switching(plant, cost, controller, overrides, horizon))
        disturbance = self._guarded("disturbance", lambda: self._disturbance(plant))
        certificates = CertificateOptions(
            varrho=self._varrho(),
            theta=self.get("certificates", "theta", "float", default=None),
            b_fraction=self.get("certificates", "b_fraction", "float", default=None),
            overrides=overrides,
        )
        x0 = self.get("plant", "x0", "vector", default=None)

        return self._guarded("scenario", lambda: Scenario(
            name=name, plant=plant, cost=cost, controller=controller, switching=switching,
            epsilon=epsilon, disturbance=disturbance, integrator=integrator, x0=x0,
            certificates=certificates))

    def _guarded(self, section, build):
        try:
            return build()
        except MODEL_ERRORS as e:
            raise self.error(f"[{section}] {str(e)}", section)
        except (ValueError, TypeError) as e:
            raise self.error(f"[{section}] malformed value: {str(e)}", section)

    def _plant(self):
        source = self.get("plant", "source", default="inline")
        if source == "inline":
            modes = []
            for number, section in self.mode_sections("plant.mode.").items():
                if number != len(modes) + 1:
                    raise self.error(f"mode sections must be numbered 1, 2, ... (found {number})", section)
                modes.append(self._guarded(section, lambda: LtiMode(
                    A=self.get(section, "A", "matrix"),
                    B=self.get(section, "B", "matrix"),
                    E=self.get(section, "E", "matrix"))))
            if not modes:
                raise self.error("inline plants need at least one [plant.mode.1] section", "plant")
            return SwitchedPlant(modes=tuple(modes), C=self.get("plant", "C", "matrix"),
                                 D=self.get("plant", "D", "matrix"))
        if source == "generator":
            section = "plant.generator"
            return random_plant(
                seed=self.get(section, "seed", "int"),
                n=self.get(section, "n", "int"),
                m=self.get(section, "m", "int"),
                p=self.get(section, "p", "int"),
                q=self.get(section, "q", "int"),
                S=self.get(section, "S", "int", default=2),
                margin=self.get(section, "margin", "float", default=0.5),
            )
        if source == "ctm":
            return build_ctm(self.get("plant.ctm", "controlled", "bool", default=True))
        raise self.error(f"unknown plant source '{source}'", "plant", "source")

    def _cost(self):
        kind = self.get("cost", "kind", default="quadratic")
        if kind == "quadratic":
            return QuadraticCost(R=self.get("cost", "R", "matrix"), Qy=self.get("cost", "Qy", "matrix"),
                                 y_ref=self.get("cost", "y_ref", "vector"))
        if kind == "quartic":
            return QuarticCost(y_ref=self.get("cost", "y_ref", "float"),
                               ball_radius=self.get("cost", "ball_radius", "float", default=1.0),
                               nu0=self.get("cost", "nu0", "float", default=1.0))
        raise self.error(f"unknown cost kind '{kind}'", "cost", "kind")

    def _controller(self, plant):
        kind = self.get("controller", "kind")
        params = None
        if kind == "nesterov":
            params = NesterovParams(
                kappa=self.get("controller", "kappa", "float"),
                rho=self.get("controller", "rho", "float"),
                delta=self.get("controller", "delta", "float"),
                Delta=self.get("controller", "Delta", "float"),
                r0=self.get("controller", "r0", "bool"),
                restarts=self.get("controller", "restarts", "bool", default=True),
            )
        return ControllerConfig(
            kind=kind,
            u0=self.get("controller", "u0", "vector", default=None),
            params=params,
            u2_0=self.get("controller", "u2_0", "vector", default=None),
            u3_0=self.get("controller", "u3_0", "float", default=None),
        )

    def _overrides(self, plant):
        overrides = {}
        for number, section in self.mode_sections("certificates.mode.").items():
            if number > plant.S:
                raise self.error(f"certificate override for mode {number}, plant has {plant.S}", section)
            overrides[number] = {
                "P": self.get(section, "P", "matrix", default=None),
                "Q": self.get(section, "Q", "matrix", default=None),
            }
        return overrides

    def _epsilon(self, plant, cost, controller, overrides):
        if self.is_auto("epsilon", "values"):
            fraction = self.get("epsilon", "fraction", "float", default=0.5)
            if not 0.0 < fraction < 1.0:
                raise self.error("fraction must lie in (0, 1)", "epsilon", "fraction")
            bounds = epsilon_bounds(plant, cost, controller, overrides)
            if any(math.isinf(bound) for bound in bounds):
                raise self.error("ε̄ is unbounded for some mode; give explicit values", "epsilon", "values")
            return tuple(fraction * bound for bound in bounds)
        values = self.get("epsilon", "values", "json")
        values = values if isinstance(values, list) else [values]
        if len(values) == 1 and plant.S > 1:
            values = values * plant.S
        return tuple(float(value) for value in values)

    def _step(self, epsilon):
        if self.is_auto("integrator", "step"):
            return min(epsilon) / AUTO_STEP_RATIO
        return self.get("integrator", "step", "float")

    def _dwell(self, plant, cost, controller, overrides):
        if not self.has("switching", "tau_d"):
            return None
        if self.is_auto("switching", "tau_d"):
            factor = self.get("switching", "tau_d_factor", "float", default=2.0)
            bound = dwell_time_bound(plant, cost, controller, overrides)
            tau_d = factor * max(bound, 1e-3)
        else:
            tau_d = self.get("switching", "tau_d", "float")
        return DwellTimeParams(tau_d=tau_d, N0=self.get("switching", "N0", "int", default=1))

    def _switching(self, plant, cost, controller, overrides, horizon):
        kind = self.get("switching", "kind", default="constant")
        dwell = self._dwell(plant, cost, controller, overrides)
        rate = self.get("switching", "rate", "float", default=1.0)
        tau0 = self.get("switching", "tau0", "float", default=None)
        probability = self.get("switching", "probability", "float", default=0.5)
        seed = None

        if kind == "constant":
            signal = constant_signal(horizon, self.get("switching", "mode", "int", default=1))
        elif kind == "events":
            events = self.get("switching", "events", "json")
            signal = SwitchingSignal(events=tuple(tuple(event) for event in events), horizon=horizon)
        elif kind == "generator":
            if dwell is None:
                raise self.error("the generator needs tau_d and N0", "switching", "kind")
            seed = self.get("switching", "seed", "int")
            signal = generate_signal(dwell, plant.S, horizon, seed, rate=rate, probability=probability,
                                     tau0=tau0, sigma0=self.get("switching", "mode", "int", default=1))
        else:
            raise self.error(f"unknown switching kind '{kind}'", "switching", "kind")

        return SwitchingConfig(signal=signal, dwell=dwell, rate=rate, tau0=tau0, kind=kind, seed=seed,
                               probability=probability)

    def _disturbance(self, plant):
        kind = self.get("disturbance", "kind", default="constant")
        freeze_after = self.get("disturbance", "freeze_after", "float", default=None)
        if kind == "constant":
            value = self.get("disturbance", "value", "vector", default=np.zeros(plant.q))
            return DisturbanceSignal(kind=kind, value=value, freeze_after=freeze_after)
        if kind == "sinusoid":
            return DisturbanceSignal(
                kind=kind,
                offset=self.get("disturbance", "offset", "vector", default=None),
                amplitude=self.get("disturbance", "amplitude", "vector"),
                phase=self.get("disturbance", "phase", "vector", default=None),
                frequency=self.get("disturbance", "frequency", "float"),
                freeze_after=freeze_after,
            )
        if kind == "piecewise_linear":
            return DisturbanceSignal(
                kind=kind,
                times=self.get("disturbance", "times", "vector"),
                values=self.get("disturbance", "values", "json"),
                smoothing=self.get("disturbance", "smoothing", "float"),
                freeze_after=freeze_after,
            )
        raise self.error(f"unknown disturbance kind '{kind}'", "disturbance", "kind")

    def _varrho(self):
        if not self.has("certificates", "varrho"):
            return None
        raw = self.config.get("certificates", "varrho").strip()
        if raw == "midpoint":
            return raw
        return self.get("certificates", "varrho", "float")


def parse_scenario(text, name=None, record_stride=1):
    """``record_stride`` applies when the document leaves [integrator] record_stride out."""
    return ScenarioFile(text, name=name, record_stride=record_stride).build()


def load_scenario(path, record_stride=1):
    try:
        with open(path, "r", encoding="utf-8") as handle:
            text = handle.read()
    except OSError as e:
        raise ScenarioParseError(f"cannot read scenario file '{path}': {str(e)}")
    name = os.path.splitext(os.path.basename(path))[0]
    return parse_scenario(text, name=name, record_stride=record_stride)


def _dump(value):
    if isinstance(value, np.ndarray):
        value = value.tolist()
    return json.dumps(value)


def emit_scenario(scenario):
    """Fully explicit document that loads back into the same model."""
    config = ConfigParser(interpolation=None)
    config.optionxform = str
    plant = scenario.plant

    config["scenario"] = {"name": scenario.name}
    config["plant"] = {"source": "inline", "C": _dump(plant.C), "D": _dump(plant.D)}
    if scenario.x0 is not None:
        config["plant"]["x0"] = _dump(scenario.x0)
    for sigma, mode in enumerate(plant.modes, start=1):
        config[f"plant.mode.{sigma}"] = {"A": _dump(mode.A), "B": _dump(mode.B), "E": _dump(mode.E)}

    cost = scenario.cost
    if cost.kind == "quadratic":
        config["cost"] = {"kind": "quadratic", "R": _dump(cost.R), "Qy": _dump(cost.Qy), "y_ref": _dump(cost.y_ref)}
    else:
        config["cost"] = {"kind": "quartic", "y_ref": repr(float(cost.y_ref)),
                          "ball_radius": repr(float(cost.ball_radius)), "nu0": repr(float(cost.nu0))}

    controller = scenario.controller
    config["controller"] = {"kind": controller.kind}
    for key in ("u0", "u2_0"):
        if getattr(controller, key) is not None:
            config["controller"][key] = _dump(getattr(controller, key))
    if controller.u3_0 is not None:
        config["controller"]["u3_0"] = repr(float(controller.u3_0))
    if controller.params is not None:
        params = controller.params
        for key in ("kappa", "rho", "delta", "Delta"):
            config["controller"][key] = repr(float(getattr(params, key)))
        config["controller"]["r0"] = str(bool(params.r0)).lower()
        config["controller"]["restarts"] = str(bool(params.restarts)).lower()

    switching = scenario.switching
    config["switching"] = {
        "kind": "events",
        "events": json.dumps([[t, sigma] for t, sigma in switching.signal.events]),
        "rate": repr(float(switching.rate)),
        "probability": repr(float(switching.probability)),
    }
    if switching.dwell is not None:
        config["switching"]["tau_d"] = repr(float(switching.dwell.tau_d))
        config["switching"]["N0"] = str(int(switching.dwell.N0))
    if switching.tau0 is not None:
        config["switching"]["tau0"] = repr(float(switching.tau0))

    config["disturbance"] = _emit_disturbance(scenario.disturbance)
    config["integrator"] = {
        "step": repr(float(scenario.integrator.step)),
        "horizon": repr(float(scenario.integrator.horizon)),
        "record_stride": str(int(scenario.integrator.record_stride)),
    }
    config["epsilon"] = {"values": json.dumps(list(scenario.epsilon))}

    options = scenario.certificates
    config["certificates"] = {}
    if options.varrho is not None:
        config["certificates"]["varrho"] = options.varrho if isinstance(options.varrho, str) else repr(float(options.varrho))
    for key in ("theta", "b_fraction"):
        if getattr(options, key) is not None:
            config["certificates"][key] = repr(float(getattr(options, key)))
    for sigma, override in sorted(options.overrides.items()):
        section = {key: _dump(np.asarray(value)) for key, value in override.items() if value is not None}
        config[f"certificates.mode.{sigma}"] = section

    lines = []
    for section in config.sections():
        lines.append(f"[{section}]")
        for key, value in config[section].items():
            lines.append(f"{key} = {value}")
        lines.append("")
    return "\n".join(lines)


def _emit_disturbance(disturbance):
    section = {"kind": disturbance.kind}
    if disturbance.kind == "constant":
        section["value"] = _dump(disturbance.value)
    elif disturbance.kind == "sinusoid":
        section.update({"offset": _dump(disturbance.offset), "amplitude": _dump(disturbance.amplitude),
                        "phase": _dump(disturbance.phase), "frequency": repr(float(disturbance.frequency))})
    else:
        section.update({"times": _dump(disturbance.times), "values": _dump(disturbance.values),
                        "smoothing": repr(float(disturbance.smoothing))})
    if disturbance.freeze_after is not None:
        section["freeze_after"] = repr(float(disturbance.freeze_after))
    return section


def save_scenario(scenario, path):
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        handle.write(emit_scenario(scenario))
