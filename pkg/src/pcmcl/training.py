"""Training loop for the two-head model.

Three switches select the ablation arm: ``concat_enabled`` (train on
two-cycle concatenations instead of single padded cycles), ``label_mode``
(``three`` = [normal, crackle, wheeze], ``two`` = [crackle, wheeze]) and
``aux_enabled`` (patient-matching head, weighted by ``alpha``).
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .augment import AugmentConfig, AugmentedSample, build_augmented_dataset, pad_or_crop
from .evaluation import icbhi_metrics, predict_cycles
from .features import apply_norm, concat_mel, fit_norm, mel_spectrogram
from .ingest import RespiratoryCycle
from .labels import label3_to_label2
from .model import Architecture, NonFiniteLossError, TrainedModel, backward, batch_losses, init_params
from .sampler import PairSpec, make_aux_samples

logger = logging.getLogger(__name__)

LABEL_MODES = ("two", "three")


@dataclass(frozen=True)
class TrainConfig:
    alpha: float = 0.1
    label_mode: str = "three"
    aux_enabled: bool = True
    concat_enabled: bool = True
    epochs: int = 30
    batch_size: int = 16
    lr: float = 0.1
    momentum: float = 0.9
    lr_schedule: str = "cosine"
    seed: int = 0
    target_len: int = 160000
    channels: int = 16
    embed_dim: int = 64
    kernel: int = 3
    input_pool: tuple[int, int] = (4, 4)

    def __post_init__(self):
        object.__setattr__(self, "input_pool", tuple(int(p) for p in self.input_pool))
        if self.alpha < 0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.label_mode not in LABEL_MODES:
            raise ValueError(f"label_mode must be one of {LABEL_MODES}, got {self.label_mode!r}")
        if self.aux_enabled and not self.concat_enabled:
            raise ValueError("the patient-matching task needs concatenated pairs (concat_enabled)")
        if self.target_len <= 0 or self.target_len % 2:
            raise ValueError("target_len must be even and positive")
        if self.lr <= 0 or not 0 <= self.momentum < 1:
            raise ValueError("need lr > 0 and 0 <= momentum < 1")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ValueError(f"lr_schedule must be 'constant' or 'cosine', got {self.lr_schedule!r}")

    def lr_at(self, epoch: int) -> float:
        """Learning rate for 1-based training epoch ``epoch``."""
        if self.lr_schedule == "constant" or self.epochs <= 1:
            return self.lr
        return 0.5 * self.lr * (1.0 + np.cos(np.pi * (epoch - 1) / self.epochs))

    @property
    def effective_alpha(self) -> float:
        return self.alpha if self.aux_enabled else 0.0

    def architecture(self) -> Architecture:
        return Architecture(input_pool=self.input_pool, kernel=self.kernel, channels=self.channels,
                            embed_dim=self.embed_dim, n_main=3 if self.label_mode == "three" else 2)


@dataclass
class EpochLog:
    epoch: int
    main: float
    aux: float
    total: float
    val_score: float | None = None


@dataclass
class TrainResult:
    model: TrainedModel
    log: list[EpochLog] = field(default_factory=list)

    @property
    def initial_loss(self) -> float:
        return self.log[0].total

    @property
    def final_loss(self) -> float:
        return self.log[-1].total


class TrainingDivergedError(RuntimeError):
    def __init__(self, epoch: int, detail: str):
        super().__init__(f"training diverged in epoch {epoch}: {detail}")
        self.epoch = epoch


class FeatureBank:
    """Spectrogram cache for the training cycles.

    Holds log-mels of each cycle at full length (for single-cycle training)
    or at half length (for concatenations, whose only new frames are the
    few straddling the junction).
    """

    def __init__(self, cycles: Sequence[RespiratoryCycle], target_len: int, halves: bool):
        self.cycles = cycles
        self.target_len = target_len
        self._index = {id(c): i for i, c in enumerate(cycles)}
        full = [mel_spectrogram(pad_or_crop(c.samples, target_len)) for c in cycles]
        self.norm = fit_norm(full)
        self.full = None if halves else full
        self.half = None
        if halves:
            h = target_len // 2
            self.half = [mel_spectrogram(pad_or_crop(c.samples, h)) for c in cycles]

    def single(self, cycle: RespiratoryCycle) -> np.ndarray:
        return apply_norm(self.full[self._index[id(cycle)]], self.norm)

    def pair(self, sample: AugmentedSample) -> np.ndarray:
        i, j = self._index[id(sample.first)], self._index[id(sample.second)]
        first, second = sample.halves
        return apply_norm(concat_mel(first, second, self.half[i], self.half[j]), self.norm)


def _targets(labels, label_mode: str) -> np.ndarray:
    if label_mode == "two":
        labels = [label3_to_label2(y) for y in labels]
    return np.asarray(labels, dtype=np.float64)


def epoch_samples(cycles: Sequence[RespiratoryCycle], cfg: TrainConfig, augment: AugmentConfig,
                  pairs: PairSpec, epoch: int) -> list:
    """The training inputs of one epoch: augmented pairs, or the cycles themselves."""
    if not cfg.concat_enabled:
        return list(cycles)
    if cfg.aux_enabled:
        return make_aux_samples(cycles, pairs, cfg.target_len, epoch)
    return build_augmented_dataset(cycles, augment, epoch)


def train(cycles: Sequence[RespiratoryCycle], cfg: TrainConfig, augment: AugmentConfig | None = None,
          pairs: PairSpec | None = None, val_cycles: Sequence[RespiratoryCycle] | None = None,
          aux_init: str = "random") -> TrainResult:
    """Train from scratch with SGD + momentum; deterministic given the seeds."""
    cycles = list(cycles)
    if not cycles:
        raise ValueError("empty training set")
    if any(c.split == "test" for c in cycles):
        raise ValueError("training cycles must not come from the test split")
    augment = augment or AugmentConfig(target_len=cfg.target_len, seed=cfg.seed)
    pairs = pairs or PairSpec(seed=cfg.seed)
    if augment.target_len != cfg.target_len:
        raise ValueError("augment and train target lengths differ")

    params = init_params(cfg.architecture(), cfg.seed, aux_init=aux_init)
    bank = FeatureBank(cycles, cfg.target_len, halves=cfg.concat_enabled)
    model = TrainedModel(params, bank.norm, cfg.label_mode, cfg.target_len)
    alpha = cfg.effective_alpha
    velocity = {k: np.zeros_like(v) for k, v in params.tensors.items()}
    shuffle_rng = np.random.default_rng([cfg.seed, 1])

    def batch_arrays(batch):
        if cfg.concat_enabled:
            specs = np.stack([bank.pair(s) for s in batch])
            y_main = _targets([s.y_main for s in batch], cfg.label_mode)
            y_aux = np.array([s.y_aux for s in batch])
        else:
            specs = np.stack([bank.single(c) for c in batch])
            y_main = _targets([c.label for c in batch], cfg.label_mode)
            y_aux = np.zeros(len(batch), dtype=np.int64)
        return specs, y_main, y_aux

    result = TrainResult(model)
    for epoch in range(cfg.epochs + 1):
        samples = epoch_samples(cycles, cfg, augment, pairs, max(epoch - 1, 0))
        sums = np.zeros(3)
        if epoch == 0:
            # loss at initialisation, on the first epoch's inputs
            for k in range(0, len(samples), cfg.batch_size):
                batch = samples[k:k + cfg.batch_size]
                sums += len(batch) * np.array(batch_losses(params, *batch_arrays(batch), alpha))
        else:
            order = shuffle_rng.permutation(len(samples))
            lr = cfg.lr_at(epoch)
            for k in range(0, len(samples), cfg.batch_size):
                batch = [samples[i] for i in order[k:k + cfg.batch_size]]
                try:
                    losses, grads = backward(params, *batch_arrays(batch), alpha)
                except NonFiniteLossError as exc:
                    raise TrainingDivergedError(epoch, str(exc)) from exc
                sums += len(batch) * np.array(losses)
                for name, g in grads.items():
                    v = velocity[name]
                    v *= cfg.momentum
                    v += g
                    params.tensors[name] -= lr * v
            if not params.is_finite():
                raise TrainingDivergedError(epoch, "parameters became non-finite")
        main, aux, total = sums / len(samples)
        row = EpochLog(epoch, float(main), float(aux), float(total))
        if val_cycles:
            row.val_score = icbhi_metrics(predict_cycles(model, list(val_cycles))).score
        result.log.append(row)
        logger.info("epoch %d: L_main=%.4f L_aux=%.4f L_total=%.4f%s", epoch, main, aux, total,
                    "" if row.val_score is None else f" val Score={row.val_score:.2f}")
    return result


def write_train_log(log: Sequence[EpochLog], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "L_main", "L_aux", "L_total", "val_score"])
        for r in log:
            w.writerow([r.epoch, repr(r.main), repr(r.aux), repr(r.total),
                        "" if r.val_score is None else repr(r.val_score)])
