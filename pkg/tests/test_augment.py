import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pcmcl.augment import (CATEGORIES, AugmentConfig, build_augmented_dataset, concat_pair, draw_partners,
                           pad_or_crop, write_augmentation_manifest)
from pcmcl.ingest import RespiratoryCycle
from pcmcl.labels import IcbhiClass, Label3, class_label, label3_or


def make_cycle(n, label, patient, index=0, split="train", sr=16000, fill=None):
    samples = np.full(n, fill, dtype=float) if fill is not None else np.arange(n, dtype=float)
    return RespiratoryCycle(samples, sr, label, patient, f"{patient}_rec", index, split)


def pool(n_patients=4, per_patient=6, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for p in range(n_patients):
        for i in range(per_patient):
            cls = IcbhiClass(int(rng.integers(4)))
            out.append(make_cycle(int(rng.integers(50, 150)), class_label(cls), str(100 + p), i))
    return out


@given(st.integers(1, 10000), st.integers(1, 10000))
@settings(max_examples=300, deadline=None)
def test_pad_or_crop_oracle(n, length):
    x = np.arange(n)
    y = pad_or_crop(x, length)
    assert len(y) == length
    idx = np.arange(length)
    if n <= length:
        np.testing.assert_array_equal(y, idx % n)
    else:
        np.testing.assert_array_equal(y, (n - length) // 2 + idx)
    np.testing.assert_array_equal(pad_or_crop(y, length), y)


def test_pad_or_crop_errors():
    with pytest.raises(ValueError):
        pad_or_crop(np.array([]), 4)
    with pytest.raises(ValueError):
        pad_or_crop(np.ones(3), 0)


def test_concat_pair_labels_and_waveform():
    a = make_cycle(30, Label3(1, 0, 0), "101", fill=1.0)
    b = make_cycle(70, Label3(0, 0, 1), "102", fill=2.0)
    s = concat_pair(a, b, 100)
    assert s.y_main == Label3(1, 0, 1) and s.y_aux == 0
    w = s.waveform
    assert len(w) == 100
    assert np.all(w[:50] == 1.0) and np.all(w[50:] == 2.0)
    assert s.kind == "mixed"
    assert concat_pair(a, a, 100).y_aux == 1


def test_concat_pair_rejects_bad_input():
    a = make_cycle(30, Label3(1, 0, 0), "101")
    with pytest.raises(ValueError, match="even"):
        concat_pair(a, a, 101)
    b = make_cycle(30, Label3(1, 0, 0), "101", sr=8000)
    with pytest.raises(ValueError, match="sample-rate"):
        concat_pair(a, b, 100)


@pytest.mark.parametrize("weights", [(1, 0, 0, 0), (0, 1, 0, 0), (0, 0, 1, 0), (0, 0, 0, 1)])
def test_partner_categories_hold_when_feasible(weights):
    cycles = pool()
    rng = np.random.default_rng(1)
    for anchor, (j, req, used) in enumerate(draw_partners(cycles, weights, rng)):
        assert j != anchor
        a, b = cycles[anchor], cycles[j]
        if used == req:
            assert (a.label == b.label) == (used in (0, 1))
            assert (a.patient == b.patient) == (used in (0, 2))


def test_fallback_relaxes_patient_first():
    # patient 101 has a single normal cycle; same-class-intra is infeasible for it
    cycles = [make_cycle(10, Label3(1, 0, 0), "101"),
              make_cycle(10, Label3(0, 1, 0), "101", 1),
              make_cycle(10, Label3(1, 0, 0), "102")]
    out = draw_partners(cycles, (1, 0, 0, 0), np.random.default_rng(0))
    assert out[0] == (2, 0, 1)


def test_dataset_is_seeded_per_epoch():
    cycles = pool()
    cfg = AugmentConfig(target_len=200, seed=5)
    ids = lambda e: [s.sample_id for s in build_augmented_dataset(cycles, cfg, e)]  # noqa: E731
    assert ids(0) == ids(0)
    assert ids(0) != ids(1)
    samples = build_augmented_dataset(cycles, cfg, 0)
    assert [s.first for s in samples] == cycles
    for s in samples:
        assert s.y_main == label3_or(s.first.label, s.second.label)
        assert s.category in CATEGORIES


def test_split_guard():
    cycles = pool()
    cycles[0].split = "test"
    with pytest.raises(ValueError, match="splits"):
        build_augmented_dataset(cycles, AugmentConfig(target_len=200))


def test_config_validation():
    with pytest.raises(ValueError):
        AugmentConfig(target_len=11)
    with pytest.raises(ValueError):
        AugmentConfig(weights=(0.5, 0.5, 0.5, 0.5))


def test_manifest(tmp_path):
    samples = build_augmented_dataset(pool(), AugmentConfig(target_len=200))
    write_augmentation_manifest(samples, tmp_path / "m.csv")
    lines = (tmp_path / "m.csv").read_text().splitlines()
    assert lines[0].startswith("sample_id,first,second")
    assert len(lines) == len(samples) + 1
