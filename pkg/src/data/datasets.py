"""
Paired (x, y) datasets and their on-disk layout

A dataset directory holds ``x.frt`` (N, *image_shape), ``y.frt``
(N, *measurement_shape, absent for unconditional data) and
``manifest.txt`` with the count, shapes and a JSON record of how the
data was generated.
"""
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterator, Optional, Tuple, Union

import numpy as np

from ..engine import make_rng, read_frt, write_frt
from ..exceptions import CheckpointError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


@dataclass
class PairedDataset:
    """Ground-truth signals with their (optional) measurements"""
    x: np.ndarray
    y: Optional[np.ndarray] = None
    meta: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        if self.x.ndim < 2 or self.x.shape[0] < 1:
            raise ValueError("Dataset needs at least one sample with a leading batch axis")
        if self.y is not None:
            self.y = np.asarray(self.y, dtype=np.float64)
            if self.y.shape[0] != self.x.shape[0]:
                raise ValueError(f"Dataset has {self.x.shape[0]} signals but {self.y.shape[0]} measurements")

    def __len__(self) -> int:
        return int(self.x.shape[0])

    @property
    def conditional(self) -> bool:
        return self.y is not None

    def subset(self, indices: np.ndarray) -> 'PairedDataset':
        return PairedDataset(self.x[indices], None if self.y is None else self.y[indices], dict(self.meta))

    def split(self, validation_fraction: float, seed: int = 0) -> Tuple['PairedDataset', 'PairedDataset']:
        """Seeded train/validation split; a zero fraction validates on the training set"""
        if not 0 <= validation_fraction < 1:
            raise ValueError("Validation fraction must lie in [0, 1)")
        if validation_fraction == 0 or len(self) < 2:
            return self, self
        order = make_rng(seed, 'split').permutation(len(self))
        n_val = min(max(1, int(round(validation_fraction * len(self)))), len(self) - 1)
        return self.subset(np.sort(order[n_val:])), self.subset(np.sort(order[:n_val]))

    def batches(self, batch_size: int, order: Optional[np.ndarray] = None) -> Iterator[np.ndarray]:
        """Index arrays of at most ``batch_size`` entries"""
        order = np.arange(len(self)) if order is None else order
        for start in range(0, len(order), batch_size):
            yield order[start:start + batch_size]

    def save(self, directory: PathLike) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        write_frt(directory / 'x.frt', self.x)
        if self.y is not None:
            write_frt(directory / 'y.frt', self.y)
        lines = [
            f"count {len(self)}",
            f"x {'x'.join(str(n) for n in self.x.shape[1:])}",
        ]
        if self.y is not None:
            lines.append(f"y {'x'.join(str(n) for n in self.y.shape[1:])}")
        lines.append(f"meta {json.dumps(self.meta, sort_keys=True)}")
        (directory / 'manifest.txt').write_text('\n'.join(lines) + '\n')
        logger.info(f"Wrote {len(self)} samples to {directory}")
        return directory

    @classmethod
    def load(cls, directory: PathLike) -> 'PairedDataset':
        directory = Path(directory)
        manifest = directory / 'manifest.txt'
        if not manifest.exists():
            raise CheckpointError(f"dataset manifest not found: {manifest}")
        meta: Dict[str, Any] = {}
        count = None
        for line in manifest.read_text().splitlines():
            key, _, value = line.partition(' ')
            if key == 'meta':
                meta = json.loads(value)
            elif key == 'count':
                count = int(value)
        x = read_frt(directory / 'x.frt')
        y = read_frt(directory / 'y.frt') if (directory / 'y.frt').exists() else None
        if count is not None and x.shape[0] != count:
            raise CheckpointError(f"manifest lists {count} samples, x.frt holds {x.shape[0]}")
        return cls(x, y, meta)
