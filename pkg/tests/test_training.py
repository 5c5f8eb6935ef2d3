import numpy as np
import pytest

from pcmcl.augment import AugmentConfig, build_augmented_dataset
from pcmcl.evaluation import export_embeddings, icbhi_metrics, predict_cycles
from pcmcl.ingest import SynthConfig, split_cycles, synth_generate
from pcmcl.model import init_params
from pcmcl.sampler import PairSpec
from pcmcl.training import TrainConfig, epoch_samples, train, write_train_log

T = 16000  # 1 s inputs keep these tests quick


@pytest.fixture(scope="module")
def data():
    return split_cycles(synth_generate(SynthConfig(n_patients=6, cycles_per_patient=6, seed=11)))


def small(**kw):
    base = dict(epochs=3, target_len=T, channels=4, embed_dim=8, batch_size=8)
    base.update(kw)
    return TrainConfig(**base)


def run(train_cycles, cfg):
    return train(train_cycles, cfg, augment=AugmentConfig(target_len=T, seed=cfg.seed), pairs=PairSpec(seed=cfg.seed))


def test_training_is_deterministic_and_reduces_loss(data):
    tr, _ = data
    a, b = run(tr, small(lr=0.05)), run(tr, small(lr=0.05))
    for k in a.model.params.tensors:
        np.testing.assert_array_equal(a.model.params[k], b.model.params[k])
    assert [r.total for r in a.log] == [r.total for r in b.log]
    assert len(a.log) == 4 and a.log[0].epoch == 0
    assert a.final_loss < a.initial_loss


@pytest.mark.parametrize("concat, mode, aux", [(False, "two", False), (False, "three", False),
                                               (True, "two", False), (True, "three", True)])
def test_every_arm_trains(data, concat, mode, aux):
    tr, te = data
    res = run(tr, small(epochs=1, concat_enabled=concat, label_mode=mode, aux_enabled=aux))
    assert res.model.params.arch.n_main == (3 if mode == "three" else 2)
    recs = predict_cycles(res.model, te)
    assert len(recs[0].probabilities) == (3 if mode == "three" else 2)
    icbhi_metrics(recs)
    if not aux:
        assert all(r.total == r.main for r in res.log)


def test_aux_disabled_leaves_aux_head_untouched(data):
    tr, _ = data
    cfg = small(epochs=2, aux_enabled=False)
    res = run(tr, cfg)
    init = init_params(cfg.architecture(), cfg.seed)
    np.testing.assert_array_equal(res.model.params["aux.weight"], init["aux.weight"])
    assert not np.array_equal(res.model.params["main.weight"], init["main.weight"])


def test_config_validation():
    with pytest.raises(ValueError, match="concat"):
        TrainConfig(aux_enabled=True, concat_enabled=False)
    with pytest.raises(ValueError, match="alpha"):
        TrainConfig(alpha=-1)
    with pytest.raises(ValueError, match="label_mode"):
        TrainConfig(label_mode="four")
    cfg = TrainConfig(lr=0.1, epochs=10)
    assert cfg.lr_at(1) == pytest.approx(0.1)
    assert cfg.lr_at(6) == pytest.approx(0.05)
    assert TrainConfig(aux_enabled=False, alpha=0.3).effective_alpha == 0.0


def test_rejects_test_cycles(data):
    tr, te = data
    with pytest.raises(ValueError, match="test split"):
        run(tr[:3] + te[:3], small())


def test_epoch_samples_follow_mode(data):
    tr, _ = data
    aug, pairs = AugmentConfig(target_len=T), PairSpec()
    assert epoch_samples(tr, small(concat_enabled=False, aux_enabled=False), aug, pairs, 0) == tr
    s = epoch_samples(tr, small(aux_enabled=False), aug, pairs, 0)
    assert [x.sample_id for x in s] == [x.sample_id for x in build_augmented_dataset(tr, aug, 0)]
    s = epoch_samples(tr, small(), aug, pairs, 0)
    assert {x.strategy for x in s} == {"hard"}


def test_validation_score_and_log_file(data, tmp_path):
    tr, te = data
    res = train(tr, small(epochs=1), augment=AugmentConfig(target_len=T), val_cycles=te)
    assert all(r.val_score is not None for r in res.log)
    write_train_log(res.log, tmp_path / "log.csv")
    lines = (tmp_path / "log.csv").read_text().splitlines()
    assert lines[0] == "epoch,L_main,L_aux,L_total,val_score" and len(lines) == 3


def test_embedding_export(data, tmp_path):
    tr, te = data
    res = run(tr, small(epochs=1))
    samples = build_augmented_dataset(te, AugmentConfig(target_len=T), 0)
    rows = export_embeddings(res.model, samples, tmp_path / "emb.csv")
    assert len(rows) == len(te) and len(rows[0]) == 8 + 2
    header = (tmp_path / "emb.csv").read_text().splitlines()[0].split(",")
    assert header[0] == "sample_id" and header[-1] == "sample_type"
    assert {r[-1] for r in rows} <= {"pure-normal", "pure-abnormal", "mixed"}
