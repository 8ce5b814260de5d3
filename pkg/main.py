import argparse
import logging
import sys

from humanfriendly import format_timespan

from utils._certificates import CertificateError, certify_scenario
from utils._config import CONFIG_FILE, SettingsError, load_settings
from utils._controllers import ControllerError
from utils._cost import CostModelError
from utils._experiments import PRESETS, ExperimentRunner, UnknownExperimentError
from utils._exporter import ArcExporter, ExporterError
from utils._logging import configure_logging
from utils._plant import PlantModelError
from utils._scenario import ScenarioParseError, load_scenario
from utils._simulator import CONTROLLER_RESET, PLANT_SWITCH, SimulationError, simulate
from utils._switching import SwitchingError

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_INPUT_ERROR = 2
EXIT_CRASH = 3

INPUT_ERRORS = (ScenarioParseError, SettingsError, UnknownExperimentError, SimulationError, ControllerError,
                PlantModelError, CostModelError, SwitchingError)

logger = logging.getLogger("switchopt")


def build_parser():
    parser = argparse.ArgumentParser(description="Feedback optimization on switched linear plants")
    parser.add_argument("-c", "--config", type=str, default=CONFIG_FILE,
                        help="Path to the application settings file")
    parser.add_argument("--format", type=str, choices=["csv"], default="csv",
                        help="Output format for simulated arcs")
    parser.add_argument("-q", "--quiet", action="store_true",
                        help="Only log warnings and errors")
    parser.add_argument("-d", "--debug", action="store_true",
                        help="Enable debug mode (verbose logging)")
    commands = parser.add_subparsers(dest="command", required=True)

    check = commands.add_parser("check", help="Evaluate every certificate of a scenario")
    check.add_argument("scenario", type=str, help="Scenario file")

    run = commands.add_parser("simulate", help="Simulate a scenario and write its arc")
    run.add_argument("scenario", type=str, help="Scenario file")
    run.add_argument("-o", "--out", type=str, required=True, help="CSV file to write")

    experiment = commands.add_parser("experiment", help="Run a named experiment preset")
    experiment.add_argument("name", type=str, help=f"One of: {', '.join(sorted(PRESETS))}")
    experiment.add_argument("--out-dir", type=str, default=None,
                            help="Directory for CSVs and summary.ini (default: [Output] output_dir)")
    experiment.add_argument("--seed", type=int, default=None, help="Seed (default: [Experiments] seed)")
    return parser


def cmd_check(args, settings):
    scenario = load_scenario(args.scenario, settings.record_stride)
    report = certify_scenario(scenario, settings).report
    print(report.render(color=sys.stdout.isatty()))
    return EXIT_OK if report.passed else EXIT_FAILED


def cmd_simulate(args, settings):
    scenario = load_scenario(args.scenario, settings.record_stride)
    steps = scenario.integrator.horizon / scenario.integrator.step
    if steps > settings.max_steps:
        raise SimulationError(f"{steps:.0f} integration steps exceed max_steps = {settings.max_steps}")

    arc = simulate(scenario, divergence_threshold=settings.divergence_threshold)
    certification = certify_scenario(scenario, settings)
    analysis = ArcExporter(settings).write_csv(arc, scenario, certification, args.out)

    print(f"Scenario '{scenario.name}': {len(arc)} samples written to {args.out}")
    print(f"  final tracking error: {analysis.tracking.values[-1]:.6g}")
    print(f"  plant switches: {len(arc.jumps_of(PLANT_SWITCH))}, "
          f"controller resets: {len(arc.jumps_of(CONTROLLER_RESET))}")
    diverged = f"yes (t = {arc.divergence_time:.6g})" if arc.diverged else "no"
    print(f"  diverged: {diverged}")
    return EXIT_OK


def cmd_experiment(args, settings):
    out_dir = args.out_dir or settings.output_dir
    result = ExperimentRunner(settings).run(args.name, out_dir, args.seed)

    print(f"Experiment '{result.name}' (seed {result.seed}) finished in {format_timespan(result.duration)}")
    for key, value in result.metrics.items():
        print(f"  {key}: {value}")
    return EXIT_OK if result.passed else EXIT_FAILED


COMMANDS = {"check": cmd_check, "simulate": cmd_simulate, "experiment": cmd_experiment}


def main(argv=None):
    args = build_parser().parse_args(argv)
    configure_logging(args.debug, args.quiet)

    try:
        settings = load_settings(args.config)
        return COMMANDS[args.command](args, settings)
    except INPUT_ERRORS as e:
        logger.error(f"Invalid input: {str(e)}")
        return EXIT_INPUT_ERROR
    except CertificateError as e:
        logger.error(f"Certificate evaluation failed: {str(e)}")
        return EXIT_FAILED
    except ExporterError as e:
        logger.error(f"Output failed: {str(e)}")
        return EXIT_CRASH
    except Exception as e:
        print("An error occurred:", e)
        return EXIT_CRASH


if __name__ == "__main__":
    sys.exit(main())
