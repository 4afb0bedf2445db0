"""difflab, a laboratory for the equilibrium statistical mechanics of diffusion models

Each command runs one experiment on exactly computable toy targets (point
masses, a hypersphere, a small Ising model, random spherical datasets) and
writes CSV/JSON artifacts plus a manifest into the output directory.
"""

import logging
import sys

from difflab.config import Config
from difflab.errors import ConfigError
from difflab.experiments import EXIT_CONFIG, run_experiment

log = logging.getLogger(__name__)


def main(argv=None):
    """difflab entry point"""
    try:
        config = Config(sys.argv[1:] if argv is None else argv)
    except ConfigError as e:
        log.error('configuration error: %s', e)
        return EXIT_CONFIG
    log.info('starting difflab %s', config.experiment)
    log.info('seed %d, sigma %g', config.seed, config.sigma)
    return run_experiment(config)


if __name__ == '__main__':
    sys.exit(main())
