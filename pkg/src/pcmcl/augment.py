"""Two-cycle concatenation augmentation.

Each original training cycle is paired with one partner; both are
length-normalised to ``T/2`` and joined into a ``T``-sample input whose
label is the OR of the two cycle labels.  ``y_aux`` records whether the two
cycles come from the same patient.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .features import SAMPLE_RATE
from .ingest import RespiratoryCycle
from .labels import Label3, format_label, label3_or

logger = logging.getLogger(__name__)

CATEGORIES = (
    "same_class_intra_patient",
    "same_class_cross_patient",
    "cross_class_intra_patient",
    "cross_class_cross_patient",
)
DEFAULT_TARGET_LEN = 10 * SAMPLE_RATE


@dataclass(frozen=True)
class AugmentConfig:
    target_len: int = DEFAULT_TARGET_LEN
    weights: tuple[float, float, float, float] = (0.25, 0.25, 0.25, 0.25)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        if self.target_len <= 0 or self.target_len % 2:
            raise ValueError(f"target_len must be even and positive, got {self.target_len}")
        if len(self.weights) != 4 or min(self.weights) < 0:
            raise ValueError("weights must be four non-negative probabilities")
        if abs(sum(self.weights) - 1.0) > 1e-9:
            raise ValueError(f"weights must sum to 1, got {sum(self.weights)!r}")


@dataclass(eq=False)
class AugmentedSample:
    """Two constituent cycles; the concatenated waveform is built on access."""

    y_main: Label3
    y_aux: int
    first: RespiratoryCycle
    second: RespiratoryCycle
    target_len: int
    category: str = ""
    strategy: str = ""

    @property
    def halves(self) -> tuple[np.ndarray, np.ndarray]:
        half = self.target_len // 2
        return pad_or_crop(self.first.samples, half), pad_or_crop(self.second.samples, half)

    @property
    def waveform(self) -> np.ndarray:
        return np.concatenate(self.halves)

    @property
    def sample_id(self) -> str:
        return f"{self.first.cycle_id}+{self.second.cycle_id}"

    @property
    def kind(self) -> str:
        """pure-normal, pure-abnormal or mixed, from the two constituent labels."""
        a, b = self.first.label.is_abnormal, self.second.label.is_abnormal
        if not a and not b:
            return "pure-normal"
        if a and b:
            return "pure-abnormal"
        return "mixed"


def pad_or_crop(x: np.ndarray, length: int) -> np.ndarray:
    """Repeat-pad (tile then truncate) or centre-crop ``x`` to ``length`` samples.

    When cropping an odd surplus, the extra sample is dropped on the right.
    """
    x = np.asarray(x)
    if len(x) == 0:
        raise ValueError("cannot pad or crop an empty waveform")
    if length <= 0:
        raise ValueError(f"target length must be positive, got {length}")
    n = len(x)
    if n == length:
        return x
    if n < length:
        return np.tile(x, -(-length // n))[:length]
    left = (n - length) // 2
    return x[left:left + length]


def concat_pair(c1: RespiratoryCycle, c2: RespiratoryCycle, cfg: AugmentConfig | int = DEFAULT_TARGET_LEN,
                category: str = "", strategy: str = "") -> AugmentedSample:
    target_len = cfg.target_len if isinstance(cfg, AugmentConfig) else int(cfg)
    if target_len % 2:
        raise ValueError(f"target length must be even, got {target_len}")
    if c1.sample_rate != SAMPLE_RATE or c2.sample_rate != SAMPLE_RATE:
        raise ValueError(f"sample-rate mismatch: {c1.sample_rate} / {c2.sample_rate}, expected {SAMPLE_RATE}")
    return AugmentedSample(
        y_main=label3_or(c1.label, c2.label),
        y_aux=int(c1.patient == c2.patient),
        first=c1,
        second=c2,
        target_len=target_len,
        category=category,
        strategy=strategy,
    )


def check_single_split(cycles: Sequence[RespiratoryCycle]) -> None:
    """Refuse pools that mix train and test cycles."""
    splits = {c.split for c in cycles} - {None}
    if len(splits) > 1:
        raise ValueError(f"cannot pair cycles across splits {sorted(splits)}")


class PartnerIndex:
    """Eligible-partner lookup by class relation and patient relation."""

    def __init__(self, cycles: Sequence[RespiratoryCycle]):
        self.labels = [c.label for c in cycles]
        label_ids = {lab: k for k, lab in enumerate(sorted(set(self.labels)))}
        patient_ids = {p: k for k, p in enumerate(sorted({c.patient for c in cycles}))}
        self.label_code = np.array([label_ids[c.label] for c in cycles])
        self.patient_code = np.array([patient_ids[c.patient] for c in cycles])
        self._cache: dict[tuple[int, int], np.ndarray] = {}

    def eligible(self, anchor: int, category: int) -> np.ndarray:
        key = (anchor, category)
        if key not in self._cache:
            same_class = self.label_code == self.label_code[anchor]
            same_patient = self.patient_code == self.patient_code[anchor]
            want_class = category in (0, 1)
            want_patient = category in (0, 2)
            mask = (same_class == want_class) & (same_patient == want_patient)
            mask[anchor] = False
            self._cache[key] = np.flatnonzero(mask)
        return self._cache[key]


# category fallback: relax the patient constraint, then the class constraint, then both
_FALLBACK = {0: (0, 1, 2, 3), 1: (1, 0, 3, 2), 2: (2, 3, 0, 1), 3: (3, 2, 1, 0)}


def draw_partners(cycles: Sequence[RespiratoryCycle], weights: Sequence[float],
                  rng: np.random.Generator) -> list[tuple[int, int, int]]:
    """(partner index, requested category, used category) for every cycle, in order."""
    if len(cycles) < 2:
        raise ValueError("need at least two cycles to form pairs")
    index = PartnerIndex(cycles)
    out = []
    fallbacks = 0
    for anchor in range(len(cycles)):
        requested = int(rng.choice(4, p=weights))
        for used in _FALLBACK[requested]:
            pool = index.eligible(anchor, used)
            if len(pool):
                break
        fallbacks += used != requested
        out.append((int(pool[rng.integers(len(pool))]), requested, used))
    if fallbacks:
        logger.info("pairing fell back to a nearby category for %d of %d cycles", fallbacks, len(cycles))
    return out


def build_augmented_dataset(cycles: Sequence[RespiratoryCycle], cfg: AugmentConfig,
                            epoch: int = 0) -> list[AugmentedSample]:
    """One augmented sample per original, seeded by ``cfg.seed + epoch``.

    The original is the first constituent.  Partners are drawn sequentially in
    dataset order from one generator.
    """
    check_single_split(cycles)
    rng = np.random.default_rng(cfg.seed + epoch)
    return [
        concat_pair(cycles[i], cycles[j], cfg, category=CATEGORIES[used])
        for i, (j, _, used) in enumerate(draw_partners(cycles, cfg.weights, rng))
    ]


def write_augmentation_manifest(samples: Iterable[AugmentedSample], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", "first", "second", "category", "strategy", "y_main", "y_aux"])
        for s in samples:
            w.writerow([s.sample_id, s.first.cycle_id, s.second.cycle_id, s.category, s.strategy,
                        format_label(s.y_main), s.y_aux])
