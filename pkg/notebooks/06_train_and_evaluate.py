# %% [markdown]
# Training and ICBHI evaluation
#
# Default dataset and the full method with default settings: 30 epochs,
# about two minutes on one CPU core.  Same as `pcmcl train` with no flags.

# %%
from pcmcl.augment import AugmentConfig
from pcmcl.evaluation import format_report, icbhi_metrics, predict_cycles
from pcmcl.ingest import SynthConfig, split_cycles, synth_generate
from pcmcl.sampler import PairSpec
from pcmcl.training import TrainConfig, train

train_c, test_c = split_cycles(synth_generate(SynthConfig(seed=0)))
cfg = TrainConfig(seed=0)
result = train(train_c, cfg, augment=AugmentConfig(seed=0), pairs=PairSpec(strategy="hard", seed=0))
for row in result.log:
    print(f"epoch {row.epoch:2d}  L_main {row.main:.4f}  L_aux {row.aux:.4f}  L_total {row.total:.4f}")

# %%
report = icbhi_metrics(predict_cycles(result.model, test_c))
print(format_report(report))
