# backend/stages/network/train.py
from __future__ import annotations

import logging
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from common.errors import ConfigError, TrainingDivergedError
from stages.network.models import PoseNet, Tensor4, TrainingLog, TrainingSample
from stages.network.posenet import backward, field_arrays, forward_arrays, sgd_step, stage_loss

logger = logging.getLogger(__name__)

EpochCallback = Callable[[int, float], None]


def _as_arrays(net: PoseNet, sample: TrainingSample) -> Tuple[List[Tensor4], Optional[Tensor4], Tensor4]:
    audio, visual, target = sample
    a, v, ref = field_arrays(net, audio, visual)
    if target.grid != ref.grid:
        raise ConfigError(f"training target grid {target.grid} differs from input grid {ref.grid}")
    return a, v, target.values


def train_sgd(
    net: PoseNet,
    dataset: Sequence[TrainingSample],
    epochs: int,
    lr: Optional[float] = None,
    on_epoch: Optional[EpochCallback] = None,
) -> TrainingLog:
    """
    Plain per-sample SGD on the summed stage loss, updating `net` in place.

    Sample order is reshuffled every epoch from a generator seeded by net.rng_seed,
    so two runs from the same initial net produce identical logs. The logged epoch
    loss is the mean of the pre-update per-sample losses.
    """
    lr = net.learning_rate if lr is None else float(lr)
    if not dataset:
        raise ConfigError("train_sgd needs a nonempty dataset")
    if epochs < 1:
        raise ConfigError(f"epochs must be >= 1, got {epochs}")
    if not np.isfinite(lr) or lr < 0:
        raise ConfigError(f"learning rate must be finite and >= 0, got {lr}")

    samples = [_as_arrays(net, s) for s in dataset]
    order_rng = np.random.default_rng([net.rng_seed, 1])
    losses: List[float] = []

    logger.info("🚀 training: %d samples, %d epochs, lr=%g, %d parameters", len(samples), epochs, lr, net.n_parameters)
    for epoch in range(1, epochs + 1):
        per_sample = np.empty(len(samples))
        for i in order_rng.permutation(len(samples)):
            audio, visual, target = samples[i]
            outputs, cache = forward_arrays(net, audio, visual)
            value, grad_outputs = stage_loss(outputs, target)
            if not np.isfinite(value):
                raise TrainingDivergedError(
                    f"loss became {value} at epoch {epoch}, sample {i} (lr={lr}); lower the learning rate"
                )
            per_sample[i] = value
            sgd_step(net, backward(net, cache, grad_outputs), lr)
        epoch_loss = float(per_sample.mean())
        losses.append(epoch_loss)
        logger.debug("epoch %d loss %.6e", epoch, epoch_loss)
        if on_epoch is not None:
            on_epoch(epoch, epoch_loss)

    logger.info("✅ training done: loss %.4e → %.4e", losses[0], losses[-1])
    return TrainingLog(losses=losses, learning_rate=lr, seed=net.rng_seed)


def training_log_frame(log: TrainingLog) -> pd.DataFrame:
    return pd.DataFrame({"epoch": log.epochs, "loss": log.losses})


def write_training_log(path: Union[str, Path], log: TrainingLog) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    training_log_frame(log).to_csv(p, index=False, float_format="%.12g")
    return p
