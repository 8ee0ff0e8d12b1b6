#!/usr/bin/env python3
"""Runs one privacy-audit experiment from a JSON config and writes its CSV/JSON artifacts.

Exit status: 0 on success, 2 on an invalid config or input (the message names the
field path), 3 on numeric divergence (the message names the run), 4 on IO
failure.
"""

import argparse
import logging
import sys
from pathlib import Path

from privaudit.config import load_config
from privaudit.errors import (
    ConfigurationError,
    DomainError,
    IncompleteSensitivityError,
    InvariantError,
    NumericError,
    ShapeError,
)
from privaudit.experiments import EXPERIMENTS
from privaudit.utils import output_dir

EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_IO = 4


def run_experiment(config: dict, out_dir: Path, jobs=1) -> list[Path]:
    experiment = EXPERIMENTS[config["experiment"]](config, out_dir, jobs)
    logging.info("Running %s experiment (master seed %d) into %s", experiment.name, config["master_seed"], out_dir)
    return experiment.run()


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="privaudit")
    parser.add_argument("-v", "--verbose", action="store_true", help="Log debug messages")
    subparsers = parser.add_subparsers(dest="experiment", required=True)

    for name, experiment_class in EXPERIMENTS.items():
        subparser = subparsers.add_parser(name.replace("_", "-"), help=(experiment_class.__doc__ or "").strip())
        subparser.add_argument("--config", required=True, help="Path to the experiment config (JSON)")
        subparser.add_argument("--out", default=None, help="Output directory (overrides PRIVAUDIT_OUT)")
        subparser.add_argument("--seed", type=int, default=None, help="Override master_seed")
        subparser.add_argument("--jobs", type=int, default=1, help="Parallel workers; results do not depend on it")

    args = parser.parse_args(argv)
    logging.basicConfig(format='%(asctime)s [%(levelname)s] <%(name)s> %(message)s',
                        level=logging.DEBUG if args.verbose else logging.INFO)

    experiment = args.experiment.replace("-", "_")

    try:
        config = load_config(args.config, args.seed, experiment)
        out_dir = output_dir(args.out, config["output_dir"])
        run_experiment(config, out_dir, args.jobs)
    except (ConfigurationError, DomainError) as e:
        logging.error("Invalid configuration: %s", e)
        return EXIT_CONFIG
    except (ShapeError, InvariantError) as e:
        logging.error("Invalid input: %s", e)
        return EXIT_CONFIG
    except IncompleteSensitivityError as e:
        logging.error("%s", e)
        return EXIT_NUMERIC
    except NumericError as e:
        logging.error("Numeric failure: %s", e)
        return EXIT_NUMERIC
    except OSError as e:
        logging.error("IO failure: %s", e)
        return EXIT_IO

    return 0


if __name__ == "__main__":
    sys.exit(main())
