"""The run manifest written next to every experiment's artifacts"""

import logging
import os
import time

import difflab
from difflab.io.tables import emit_json

log = logging.getLogger(__name__)

MANIFEST_NAME = 'manifest.json'
OK = 'ok'
CONFIG_ERROR = 'config-error'
NUMERICAL_FAILURE = 'numerical-failure'


class Manifest(object):
    """Collects the settings and outcome of one run"""
    def __init__(self, experiment, settings, seed):
        self.experiment = experiment
        self.settings = settings
        self.seed = seed
        self.artifacts = []
        self.status = None
        self.detail = None
        self._started = time.time()

    def add(self, path):
        self.artifacts.append(os.path.basename(path))
        return path

    @property
    def partial(self):
        return self.status not in (None, OK)

    def finish(self, status, detail=None):
        self.status = status
        self.detail = detail

    def document(self):
        # wall time is the only field that differs between reruns
        return {
            'experiment': self.experiment,
            'config': self.settings,
            'seed': self.seed,
            'version': difflab.__version__,
            'status': self.status,
            'partial': self.partial,
            'detail': self.detail,
            'artifacts': self.artifacts,
            'wall_time': round(time.time() - self._started, 3),
        }

    def write(self, out_dir):
        path = os.path.join(out_dir, MANIFEST_NAME)
        emit_json(self.document(), path)
        return path
