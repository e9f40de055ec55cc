import logging
import os
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from typing import Dict, Iterable, Optional

from data_utils.common_utils import file_digest, mkdir, read_json, write_json
from utils import __version__

logger = logging.getLogger()

MANIFEST_FILE = 'manifest.json'
STATUS_RUNNING = 'RUNNING'
STATUS_OK = 'OK'
STATUS_FAILED = 'FAILED'


def _now():
    return datetime.now(timezone.utc).isoformat(timespec='seconds')


@dataclass
class RunManifest:
    command: str
    config: Dict[str, object]
    inputs: Dict[str, str] = field(default_factory=dict)
    assets: Dict[str, str] = field(default_factory=dict)
    version: str = __version__
    status: str = STATUS_RUNNING
    started: str = field(default_factory=_now)
    finished: Optional[str] = None
    error: Optional[str] = None

    @classmethod
    def start(cls, command, config, inputs: Iterable[str] = (), assets: Iterable[str] = ()):
        return cls(
            command=command,
            config=config,
            inputs={path: file_digest(path) for path in inputs if path},
            assets={os.path.basename(path): file_digest(path) for path in assets},
        )

    def finish(self, status=STATUS_OK, error=None):
        self.status = status
        self.error = None if error is None else str(error)
        self.finished = _now()
        return self

    def to_dict(self):
        return asdict(self)

    def save(self, out_dir):
        mkdir(out_dir)
        path = os.path.join(out_dir, MANIFEST_FILE)
        write_json(self.to_dict(), path)
        logger.info(f'Wrote manifest ({self.status}) to {path}')
        return path


def load_manifest(out_dir) -> RunManifest:
    return RunManifest(**read_json(os.path.join(out_dir, MANIFEST_FILE)))
