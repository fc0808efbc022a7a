"""
Maximum-likelihood training with plateau scheduling, early stopping,
checkpoint/resume and a round-trip stability monitor
"""
import logging
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from ..conditioning import Conditioner, conditional_loss, nll_loss
from ..data import PairedDataset
from ..engine import ParameterStore, Tape, Tensor, make_rng, no_record
from ..exceptions import NumericalError
from ..flows import FlowModel
from ..models.core import TrainConfig
from .interfaces import ICheckpointStore, IOptimizer
from .optim import Adam, PlateauScheduler

logger = logging.getLogger(__name__)

HISTORY_COLUMNS = ['epoch', 'train_nll', 'val_nll', 'lr', 'roundtrip_residual']
LAST = 'last'
BEST = 'best'


def dequantize(x: np.ndarray, variance: float, rng: np.random.Generator) -> np.ndarray:
    """x + N(0, variance) noise; zero variance returns ``x`` itself"""
    if variance == 0:
        return x
    return x + rng.normal(0.0, np.sqrt(variance), size=x.shape)


@dataclass
class TrainResult:
    """Outcome of a training run"""
    params: ParameterStore
    last_params: ParameterStore
    history: pd.DataFrame
    best_epoch: int
    best_val_nll: float
    epochs_run: int
    unstable: bool = False
    aborted: bool = False

    def to_dict(self) -> Dict[str, Any]:
        return {
            'best_epoch': self.best_epoch,
            'best_val_nll': self.best_val_nll,
            'epochs_run': self.epochs_run,
            'unstable': self.unstable,
            'aborted': self.aborted,
        }


class Trainer:
    """
    Fits a flow (and its conditioner, unless frozen) to paired data

    Batch order and dequantisation noise for epoch e come from the stream
    (seed, 'epoch', e), so a run resumed from the checkpoint written after
    epoch e-1 continues exactly as the uninterrupted run would.
    """

    def __init__(
        self,
        model: FlowModel,
        cond: Optional[Conditioner],
        config: TrainConfig,
        store: Optional[ICheckpointStore] = None,
        optimizer: Optional[IOptimizer] = None,
        experiment: Optional[Dict[str, Any]] = None,
    ):
        if model.conditional and cond is None:
            raise ValueError("Conditional flow needs a conditioner")
        if config.conditional_weight > 0 and (cond is None or not cond.has_reconstruction):
            raise ValueError("Conditional loss weight > 0 requires a unet conditioner")
        self.model = model
        self.cond = cond
        self.config = config
        self.store = store
        self.optimizer = optimizer if optimizer is not None else Adam()
        self.experiment = experiment or {}
        self.params = model.params
        model.set_memory_efficient(config.memory_efficient)

    def _inverted(self, dataset: PairedDataset) -> Optional[np.ndarray]:
        if self.cond is None:
            return None
        if dataset.y is None:
            raise ValueError("Conditional training needs measurements")
        return self.cond.invert(dataset.y)

    def evaluate(self, dataset: PairedDataset, inverted: Optional[np.ndarray] = None) -> float:
        """Mean NLL over a dataset without recording; non-finite passes give inf"""
        if self.cond is not None and inverted is None:
            inverted = self._inverted(dataset)
        total = 0.0
        try:
            with no_record():
                for idx in dataset.batches(self.config.batch_size):
                    loss = nll_loss(self.model, self.cond, dataset.x[idx], params=self.params,
                                    inverted=None if inverted is None else inverted[idx])
                    total += loss.item() * len(idx)
        except NumericalError:
            return float('inf')
        value = total / len(dataset)
        return value if np.isfinite(value) else float('inf')

    def stability_residual(self, dataset: PairedDataset, inverted: Optional[np.ndarray] = None) -> float:
        """Round-trip residual max |x - T^-1(T(x))| on the first validation batch"""
        if self.cond is not None and inverted is None:
            inverted = self._inverted(dataset)
        idx = np.arange(min(self.config.batch_size, len(dataset)))
        x = Tensor(dataset.x[idx], dtype=self.params.dtype)
        try:
            with no_record():
                features = None
                if self.cond is not None:
                    features = self.cond.condition(params=self.params, inverted=inverted[idx])
                residual = self.model.round_trip_residual(x, features, self.params)
        except NumericalError:
            return float('inf')
        return residual if np.isfinite(residual) else float('inf')

    def _train_epoch(
        self,
        epoch: int,
        train_set: PairedDataset,
        inverted: Optional[np.ndarray],
        learning_rate: float,
    ) -> float:
        config = self.config
        rng = make_rng(config.seed, 'epoch', epoch)
        order = rng.permutation(len(train_set))
        total, seen = 0.0, 0
        for step, idx in enumerate(train_set.batches(config.batch_size, order)):
            if config.max_steps_per_epoch is not None and step >= config.max_steps_per_epoch:
                break
            x = dequantize(train_set.x[idx], config.effective_noise_variance, rng)
            try:
                with Tape() as tape:
                    loss = conditional_loss(
                        self.model, self.cond, x, alpha=config.conditional_weight, params=self.params,
                        inverted=None if inverted is None else inverted[idx],
                    )
                value = loss.item()
                if not np.isfinite(value):
                    raise NumericalError(f"non-finite training loss at epoch {epoch}, step {step}")
                tape.backward(loss, store=self.params)
                if not np.isfinite(self.params.grad_norm()):
                    raise NumericalError(f"non-finite gradient at epoch {epoch}, step {step}")
                self.optimizer.step(self.params, learning_rate)
            finally:
                self.params.zero_grad()
            total += value * len(idx)
            seen += len(idx)
        return total / max(seen, 1)

    def _save(self, name: str, arrays: Dict[str, np.ndarray], meta: Dict[str, Any]) -> None:
        if self.store is not None:
            self.store.save(name, arrays, meta)

    def _resume(self) -> Optional[Tuple[Dict[str, Any], ParameterStore]]:
        if self.store is None or not self.store.exists(LAST):
            logger.info("No checkpoint to resume from, starting fresh")
            return None
        arrays, meta = self.store.load(LAST)
        self.params.load_state_dict({k: v for k, v in arrays.items() if not k.startswith('best/')})
        best = self.params.copy()
        best.load_state_dict({k[len('best/'):]: v for k, v in arrays.items() if k.startswith('best/')}, strict=False)
        logger.info(f"Resumed from epoch {meta['epoch']}")
        return meta, best

    def fit(self, dataset: PairedDataset, resume: bool = False) -> TrainResult:
        config = self.config
        train_set, val_set = dataset.split(config.validation_fraction, config.seed)
        train_inverted = self._inverted(train_set)
        val_inverted = self._inverted(val_set)

        scheduler = PlateauScheduler(config.learning_rate, config.plateau_factor, config.plateau_patience)
        start_epoch = 0
        best_params = self.params.copy()
        best_val, best_epoch, since_best = float('inf'), -1, 0
        rows: List[Dict[str, float]] = []
        unstable = aborted = False

        restored = self._resume() if resume else None
        if restored is not None:
            meta, best_params = restored
            start_epoch = int(meta['epoch']) + 1
            scheduler.load_state_dict(meta['scheduler'])
            best_val, best_epoch = float(meta['best_val_nll']), int(meta['best_epoch'])
            since_best = int(meta['since_best'])
            rows = list(meta['history'])
            unstable = bool(meta['unstable'])

        logger.info(
            f"Training on {len(train_set)} samples, validating on {len(val_set)}, "
            f"{self.params.num_parameters()} parameters ({len(self.params.trainable())} trainable arrays)"
        )
        for epoch in range(start_epoch, config.epochs):
            learning_rate = scheduler.learning_rate
            try:
                train_nll = self._train_epoch(epoch, train_set, train_inverted, learning_rate)
            except NumericalError as e:
                logger.error(f"Aborting training: {e}")
                aborted = unstable = True
                break
            val_nll = self.evaluate(val_set, val_inverted)
            residual = self.stability_residual(val_set, val_inverted)
            if residual > config.stability_threshold:
                if not unstable:
                    logger.warning(
                        f"Round-trip residual {residual:.3e} exceeds {config.stability_threshold:.1e} at epoch {epoch}"
                    )
                unstable = True
            rows.append({'epoch': epoch, 'train_nll': train_nll, 'val_nll': val_nll,
                         'lr': learning_rate, 'roundtrip_residual': residual})
            logger.info(
                f"Epoch {epoch}: train {train_nll:.4f}, val {val_nll:.4f}, "
                f"lr {learning_rate:.3e}, round-trip {residual:.2e}"
            )
            if not np.isfinite(val_nll):
                logger.error(f"Aborting training: non-finite validation NLL at epoch {epoch}")
                aborted = unstable = True
                break

            if val_nll < best_val:
                best_val, best_epoch, since_best = val_nll, epoch, 0
                best_params = self.params.copy()
                self._save(BEST, best_params.state_dict(include_optimizer=False),
                           {'epoch': epoch, 'val_nll': val_nll, 'experiment': self.experiment})
            else:
                since_best += 1
            scheduler.observe(val_nll)

            arrays = dict(self.params.state_dict(include_optimizer=True))
            arrays.update({f"best/{k}": v for k, v in best_params.state_dict(include_optimizer=False).items()})
            self._save(LAST, arrays, {
                'epoch': epoch,
                'scheduler': scheduler.state_dict(),
                'best_val_nll': best_val,
                'best_epoch': best_epoch,
                'since_best': since_best,
                'history': rows,
                'unstable': unstable,
                'train': config.to_dict(),
                'experiment': self.experiment,
            })
            if since_best >= config.early_stop_patience:
                logger.info(f"Early stopping after epoch {epoch} (best epoch {best_epoch})")
                break

        history = pd.DataFrame(rows, columns=HISTORY_COLUMNS)
        last_params = self.params.copy()
        self.params.load_state_dict(best_params.state_dict(include_optimizer=False), strict=False)
        return TrainResult(
            params=best_params,
            last_params=last_params,
            history=history,
            best_epoch=best_epoch,
            best_val_nll=best_val,
            epochs_run=len(rows),
            unstable=unstable,
            aborted=aborted,
        )


def train(
    model: FlowModel,
    cond: Optional[Conditioner],
    dataset: PairedDataset,
    config: TrainConfig,
    store: Optional[ICheckpointStore] = None,
    resume: bool = False,
    experiment: Optional[Dict[str, Any]] = None,
) -> TrainResult:
    """Train and leave the best-validation parameters installed in ``model.params``"""
    return Trainer(model, cond, config, store=store, experiment=experiment).fit(dataset, resume=resume)
