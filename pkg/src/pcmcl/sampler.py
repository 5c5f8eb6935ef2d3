"""Partner selection for the patient-matching auxiliary task.

A positive partner shares the anchor's patient.  A negative partner comes
from another patient: any cycle of another patient under the ``base``
strategy, or one whose label equals the anchor's under ``hard``.  When the
sampler is active it chooses the concatenation partner, so each augmented
sample carries both its pathology label and its same-patient label.
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .augment import AugmentedSample, check_single_split, concat_pair
from .ingest import RespiratoryCycle

logger = logging.getLogger(__name__)

STRATEGIES = ("base", "hard")


@dataclass(frozen=True)
class PairSpec:
    strategy: str = "hard"
    positive_fraction: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if not 0.0 <= self.positive_fraction <= 1.0:
            raise ValueError(f"positive_fraction must be in [0, 1], got {self.positive_fraction}")


class PairSampler:
    """Seeded positive/negative partner draws over a fixed pool of cycles.

    ``counts`` tracks degenerate outcomes: ``self_pair`` (patient with a
    single cycle) and ``hard_fallback`` (no other patient shares the label).
    """

    def __init__(self, cycles: Sequence[RespiratoryCycle]):
        check_single_split(cycles)
        self.cycles = cycles
        self._by_patient: dict[str, list[int]] = {}
        self._by_label: dict[tuple, list[int]] = {}
        for i, c in enumerate(cycles):
            self._by_patient.setdefault(c.patient, []).append(i)
            self._by_label.setdefault(tuple(c.label), []).append(i)
        self._arrays: dict[tuple, np.ndarray] = {}
        self.counts: Counter = Counter()

    def _pool(self, key, build) -> np.ndarray:
        if key not in self._arrays:
            self._arrays[key] = np.asarray(build(), dtype=np.int64)
        return self._arrays[key]

    def positive(self, anchor: int, rng: np.random.Generator) -> int:
        patient = self.cycles[anchor].patient
        pool = self._pool(("pos", anchor),
                          lambda: [i for i in self._by_patient[patient] if i != anchor])
        if len(pool) == 0:
            self.counts["self_pair"] += 1
            logger.warning("patient %s has a single cycle; %s paired with itself",
                           patient, self.cycles[anchor].cycle_id)
            return anchor
        return int(pool[rng.integers(len(pool))])

    def negative(self, anchor: int, strategy: str, rng: np.random.Generator) -> int:
        if strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {strategy!r}")
        anchor_cycle = self.cycles[anchor]
        if strategy == "hard":
            label = tuple(anchor_cycle.label)
            pool = self._pool(("hard", anchor), lambda: [
                i for i in self._by_label[label] if self.cycles[i].patient != anchor_cycle.patient])
            if len(pool):
                return int(pool[rng.integers(len(pool))])
            self.counts["hard_fallback"] += 1
        pool = self._pool(("base", anchor_cycle.patient), lambda: [
            i for i, c in enumerate(self.cycles) if c.patient != anchor_cycle.patient])
        if len(pool) == 0:
            raise ValueError("negative pairs need at least two patients")
        return int(pool[rng.integers(len(pool))])


def sample_positive(cycles: Sequence[RespiratoryCycle], anchor: int, rng: np.random.Generator) -> int:
    return PairSampler(cycles).positive(anchor, rng)


def sample_negative(cycles: Sequence[RespiratoryCycle], anchor: int, strategy: str,
                    rng: np.random.Generator) -> int:
    return PairSampler(cycles).negative(anchor, strategy, rng)


def draw_aux_pairs(cycles: Sequence[RespiratoryCycle], spec: PairSpec, epoch: int = 0,
                   sampler: PairSampler | None = None) -> list[tuple[int, int, int]]:
    """(anchor, partner, y_aux) for every cycle in dataset order."""
    sampler = sampler or PairSampler(cycles)
    rng = np.random.default_rng(spec.seed + epoch)
    pairs = []
    for anchor in range(len(cycles)):
        if rng.random() < spec.positive_fraction:
            partner = sampler.positive(anchor, rng)
        else:
            partner = sampler.negative(anchor, spec.strategy, rng)
        pairs.append((anchor, partner, int(cycles[anchor].patient == cycles[partner].patient)))
    if sampler.counts["hard_fallback"]:
        logger.info("hard negatives fell back to base for %d draws", sampler.counts["hard_fallback"])
    return pairs


def make_aux_samples(cycles: Sequence[RespiratoryCycle], spec: PairSpec, target_len: int,
                     epoch: int = 0) -> list[AugmentedSample]:
    """One concatenated sample per cycle, with the partner chosen for the patient-matching task."""
    out = []
    for a, b, y_aux in draw_aux_pairs(cycles, spec, epoch):
        same_class = cycles[a].label == cycles[b].label
        category = ("same_class" if same_class else "cross_class") + \
                   ("_intra_patient" if y_aux else "_cross_patient")
        out.append(concat_pair(cycles[a], cycles[b], target_len, category=category, strategy=spec.strategy))
    return out


def make_aux_batches(cycles: Sequence[RespiratoryCycle], spec: PairSpec, target_len: int,
                     batch_size: int, epoch: int = 0) -> list[list[AugmentedSample]]:
    """Seeded shuffle of ``make_aux_samples`` cut into batches."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    samples = make_aux_samples(cycles, spec, target_len, epoch)
    order = np.random.default_rng([spec.seed, epoch, 1]).permutation(len(samples))
    return [[samples[i] for i in order[k:k + batch_size]] for k in range(0, len(samples), batch_size)]
