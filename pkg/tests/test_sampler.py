import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pcmcl.ingest import RespiratoryCycle
from pcmcl.labels import IcbhiClass, Label3, class_label
from pcmcl.sampler import (PairSampler, PairSpec, draw_aux_pairs, make_aux_batches, make_aux_samples,
                           sample_negative, sample_positive)


def cycle(label, patient, index=0, split="train"):
    return RespiratoryCycle(np.ones(8), 16000, label, patient, f"{patient}_r", index, split)


def random_pool(seed, n_patients=6, max_per_patient=5, split="train"):
    rng = np.random.default_rng(seed)
    out = []
    for p in range(n_patients):
        for i in range(int(rng.integers(1, max_per_patient + 1))):
            out.append(cycle(class_label(IcbhiClass(int(rng.integers(4)))), str(200 + p), i, split))
    return out


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10**6))
def test_hard_negatives_by_construction(seed):
    cycles = random_pool(seed)
    sampler = PairSampler(cycles)
    rng = np.random.default_rng(seed)
    for _ in range(400):
        a = int(rng.integers(len(cycles)))
        feasible = any(c.patient != cycles[a].patient and c.label == cycles[a].label for c in cycles)
        j = sampler.negative(a, "hard", rng)
        assert cycles[j].patient != cycles[a].patient
        if feasible:
            assert cycles[j].label == cycles[a].label


def test_hard_fallback_is_counted():
    cycles = [cycle(Label3(1, 0, 0), "1"), cycle(Label3(0, 1, 0), "2")]
    sampler = PairSampler(cycles)
    assert sampler.negative(0, "hard", np.random.default_rng(0)) == 1
    assert sampler.counts["hard_fallback"] == 1


def test_positive_partner_and_self_pair(caplog):
    cycles = [cycle(Label3(1, 0, 0), "1", 0), cycle(Label3(0, 1, 0), "1", 1), cycle(Label3(1, 0, 0), "2")]
    rng = np.random.default_rng(0)
    assert sample_positive(cycles, 0, rng) == 1
    sampler = PairSampler(cycles)
    with caplog.at_level(logging.WARNING):
        assert sampler.positive(2, rng) == 2
    assert sampler.counts["self_pair"] == 1 and "itself" in caplog.text


def test_base_negative_needs_two_patients():
    cycles = [cycle(Label3(1, 0, 0), "1", 0), cycle(Label3(1, 0, 0), "1", 1)]
    with pytest.raises(ValueError):
        sample_negative(cycles, 0, "base", np.random.default_rng(0))
    with pytest.raises(ValueError):
        sample_negative(cycles, 0, "medium", np.random.default_rng(0))


def test_base_negatives_cover_other_patients():
    cycles = random_pool(1)
    rng = np.random.default_rng(1)
    sampler = PairSampler(cycles)
    seen = {sampler.negative(0, "base", rng) for _ in range(2000)}
    assert seen == {i for i, c in enumerate(cycles) if c.patient != cycles[0].patient}


@pytest.mark.parametrize("fraction", [0.2, 0.5, 0.8])
def test_aux_label_balance(fraction):
    cycles = random_pool(7, n_patients=20, max_per_patient=8)
    labels = []
    epoch = 0
    while len(labels) < 10000:
        labels += [y for _, _, y in draw_aux_pairs(cycles, PairSpec(positive_fraction=fraction, seed=3), epoch)]
        epoch += 1
    assert abs(np.mean(labels[:10000]) - fraction) < 0.02


def test_no_cross_split_pairs():
    train = random_pool(2, split="train")
    test = random_pool(3, split="test")
    for pool in (train, test):
        for s in make_aux_samples(pool, PairSpec(seed=1), 32, 0):
            assert s.first.split == s.second.split
    with pytest.raises(ValueError, match="splits"):
        PairSampler(train + test)


def test_samples_and_batches_are_deterministic():
    cycles = random_pool(4)
    spec = PairSpec(strategy="base", seed=9)
    a = [s.sample_id for s in make_aux_samples(cycles, spec, 32, 2)]
    assert a == [s.sample_id for s in make_aux_samples(cycles, spec, 32, 2)]
    assert a != [s.sample_id for s in make_aux_samples(cycles, spec, 32, 3)]
    batches = make_aux_batches(cycles, spec, 32, batch_size=4, epoch=2)
    assert sorted(s.sample_id for b in batches for s in b) == sorted(a)
    assert all(len(b) <= 4 for b in batches)
    for b in batches:
        for s in b:
            assert s.y_aux == int(s.first.patient == s.second.patient)
            assert s.strategy == "base"


def test_spec_validation():
    with pytest.raises(ValueError):
        PairSpec(strategy="x")
    with pytest.raises(ValueError):
        PairSpec(positive_fraction=1.5)
