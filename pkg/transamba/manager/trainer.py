"""Slice-label training of the encoder (SGD or AdamW) with a warmup-cosine schedule."""

from __future__ import annotations

import logging
import math
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel

from ..core.checkpoint import save_checkpoint
from ..core.config import ExperimentConfig, ModelConfig, write_model_config
from ..core.errors import DataError, NumericalError
from ..core.optim import CosineSchedule, build_optimizer
from ..core.tensor import no_grad
from ..data.sampling import sample_infer, sample_train
from ..data.synthetic import SyntheticVolume
from ..models.encoder import Encoder, compute_pos_weight, training_loss

logger = logging.getLogger(__name__)

CHECKPOINT_FINAL = "checkpoint_final.tsck"
CHECKPOINT_BEST = "checkpoint_best.tsck"
MODEL_CONF = "model.conf"
TRAIN_LOG = "train_log.tsv"


class EpochRecord(BaseModel):
    epoch: int
    loss: float
    val_accuracy: float
    lr: float


class TrainResult(BaseModel):
    epochs: List[EpochRecord]
    pos_weight: float
    best_epoch: int
    best_accuracy: float
    artifacts: List[str]


def split_volumes(
    volumes: Sequence[SyntheticVolume], val_fraction: float
) -> Tuple[List[SyntheticVolume], List[SyntheticVolume]]:
    """The last ``round(len * val_fraction)`` volumes validate; at least one trains."""
    count = len(volumes)
    if count == 0:
        raise DataError("no training volumes")
    n_val = min(int(round(count * val_fraction)), count - 1)
    return list(volumes[: count - n_val]), list(volumes[count - n_val :])


def plane_probabilities(model: Encoder, planes: np.ndarray) -> np.ndarray:
    """Mean of the two branch probabilities for every plane of (G, N, H, W)."""
    with no_grad():
        out = model(planes, capture_attention=False)
    p_class, p_patch = out.scores.probabilities()
    return 0.5 * (p_class + p_patch)


def slice_accuracy(model: Encoder, volumes: Sequence[SyntheticVolume], planes: int) -> float:
    correct = total = 0
    for volume in volumes:
        windows = sample_infer(volume, planes)
        probs = plane_probabilities(model, np.stack([w.planes for w in windows]))
        labels = np.concatenate([w.labels for w in windows])
        correct += int(((probs >= 0.5) == labels.astype(bool)).sum())
        total += labels.size
    return correct / total if total else 0.0


def _format_row(values: Sequence[object]) -> str:
    return "\t".join(format(v, ".10g") if isinstance(v, float) else str(v) for v in values)


class Trainer:
    def __init__(self, config: ExperimentConfig, out_dir: Path):
        self.config = config
        self.out_dir = Path(out_dir)
        self.model_config: ModelConfig = config.model.model_copy(update={"init_seed": config.seed})
        self.model = Encoder(self.model_config)

    def train(
        self,
        volumes: Sequence[SyntheticVolume],
        on_epoch: Optional[Callable[[EpochRecord], None]] = None,
    ) -> TrainResult:
        cfg, tcfg = self.model_config, self.config.train
        planes = cfg.planes
        for i, v in enumerate(volumes):
            if v.shape[1:] != (cfg.image_height, cfg.image_width):
                raise DataError(
                    f"volume {i} planes are {v.shape[1]}x{v.shape[2]}, model expects "
                    f"{cfg.image_height}x{cfg.image_width}"
                )
            if v.shape[0] < planes:
                raise DataError(f"volume {i} has {v.shape[0]} planes, fewer than N={planes}")
        train_set, val_set = split_volumes(volumes, tcfg.val_fraction)
        pos_weight = compute_pos_weight(
            np.concatenate([v.slice_labels for v in train_set]), cfg.pos_weight_min, cfg.pos_weight_max
        )
        logger.info(f"Training on {len(train_set)} volumes, validating on {len(val_set)}, pos_weight={pos_weight:.4f}")

        rng = np.random.default_rng(self.config.seed)
        optimizer = build_optimizer(
            tcfg.optimizer.value, self.model.parameters(), tcfg.lr, tcfg.momentum, tcfg.weight_decay
        )
        batch = min(tcfg.batch_volumes, len(train_set))
        steps_per_epoch = math.ceil(len(train_set) / batch)
        schedule = CosineSchedule(
            tcfg.lr, tcfg.epochs * steps_per_epoch, tcfg.min_lr, warmup_steps=tcfg.warmup_epochs * steps_per_epoch
        )
        eval_set = val_set or train_set

        self.out_dir.mkdir(parents=True, exist_ok=True)
        best_path = self.out_dir / CHECKPOINT_BEST
        records: List[EpochRecord] = []
        best_epoch, best_accuracy = 0, -1.0
        step = 0
        for epoch in range(1, tcfg.epochs + 1):
            order = rng.permutation(len(train_set))
            losses = []
            for start in range(0, len(order), batch):
                samples = [sample_train(train_set[i], planes, rng) for i in order[start : start + batch]]
                x = np.stack([s.planes for s in samples])
                y = np.concatenate([s.labels for s in samples]).astype(np.float64)
                lr = schedule(step) if tcfg.cosine else tcfg.lr
                optimizer.lr = lr
                optimizer.zero_grad()
                loss = training_loss(self.model(x, capture_attention=False).scores, y, pos_weight)
                value = loss.item()
                if not math.isfinite(value):
                    logger.error(f"Non-finite loss {value} at epoch {epoch}, step {step}")
                    raise NumericalError(f"non-finite loss {value} at epoch {epoch}, step {step}")
                loss.backward()
                optimizer.step()
                losses.append(value)
                step += 1
            accuracy = slice_accuracy(self.model, eval_set, planes)
            record = EpochRecord(epoch=epoch, loss=float(np.mean(losses)), val_accuracy=accuracy, lr=lr)
            records.append(record)
            logger.info(f"epoch {epoch}: loss={record.loss:.5f} val_accuracy={accuracy:.4f} lr={lr:.5f}")
            if accuracy > best_accuracy:
                best_epoch, best_accuracy = epoch, accuracy
                save_checkpoint(best_path, self.model.state_dict())
            if on_epoch is not None:
                on_epoch(record)

        final_path = save_checkpoint(self.out_dir / CHECKPOINT_FINAL, self.model.state_dict())
        conf_path = write_model_config(self.model_config, self.out_dir / MODEL_CONF)
        log_path = self.write_log(records)
        return TrainResult(
            epochs=records,
            pos_weight=pos_weight,
            best_epoch=best_epoch,
            best_accuracy=best_accuracy,
            artifacts=[str(p) for p in (final_path, best_path, conf_path, log_path)],
        )

    def write_log(self, records: Sequence[EpochRecord]) -> Path:
        path = self.out_dir / TRAIN_LOG
        lines = [_format_row(["epoch", "loss", "val_accuracy", "lr"])]
        lines += [_format_row([r.epoch, r.loss, r.val_accuracy, r.lr]) for r in records]
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return path


__all__ = [
    "CHECKPOINT_BEST",
    "CHECKPOINT_FINAL",
    "MODEL_CONF",
    "TRAIN_LOG",
    "EpochRecord",
    "TrainResult",
    "Trainer",
    "plane_probabilities",
    "slice_accuracy",
    "split_volumes",
]
