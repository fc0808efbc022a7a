"""
Checkpoint archives on disk
"""
import json
import logging
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np

from ..engine import load_archive, save_archive
from ..exceptions import CheckpointError
from .interfaces import ICheckpointStore

logger = logging.getLogger(__name__)

SUFFIX = '.ckpt'


def write_checkpoint(path: Union[str, Path], arrays: Dict[str, np.ndarray], meta: Dict[str, Any]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    # sorted keys keep the archive byte-identical across reruns
    save_archive(path, arrays, json.dumps(meta, sort_keys=True, indent=1))
    return path


def read_checkpoint(path: Union[str, Path]) -> Tuple[Dict[str, np.ndarray], Dict[str, Any]]:
    arrays, meta_text = load_archive(path)
    if meta_text is None:
        raise CheckpointError(f"checkpoint {path} carries no metadata")
    try:
        meta = json.loads(meta_text)
    except json.JSONDecodeError as e:
        raise CheckpointError(f"checkpoint {path} has unreadable metadata: {e}") from e
    return arrays, meta


class ArchiveCheckpointStore(ICheckpointStore):
    """Named checkpoints as ``<directory>/<name>.ckpt`` zip archives"""

    def __init__(self, directory: Union[str, Path]):
        self.directory = Path(directory)

    def path(self, name: str) -> Optional[Path]:
        return self.directory / f"{name}{SUFFIX}"

    def exists(self, name: str) -> bool:
        return self.directory.joinpath(f"{name}{SUFFIX}").exists()

    def save(self, name: str, arrays: Dict[str, np.ndarray], meta: Dict[str, Any]) -> Path:
        path = write_checkpoint(self.directory / f"{name}{SUFFIX}", arrays, meta)
        logger.debug(f"Saved checkpoint {path}")
        return path

    def load(self, name: str) -> Tuple[Dict[str, np.ndarray], Dict[str, Any]]:
        return read_checkpoint(self.directory / f"{name}{SUFFIX}")
