# %% [markdown]
# Command-line runner
#
# Each command writes a `config.json` snapshot; re-running from it gives
# byte-identical outputs.  Shell equivalents are shown in the comments.

# %%
import filecmp
import tempfile
from pathlib import Path

from pcmcl.cli import main

tmp = Path(tempfile.mkdtemp())
tiny = ["--set", "synth.n_patients=8", "--set", "synth.cycles_per_patient=5"]
fast = ["--set", "train.epochs=2", "--set", "train.channels=4", "--set", "train.embed_dim=8",
        "--set", "train.target_len=32000", "--set", "augment.target_len=32000"]

# pcmcl synth --seed 7 --out runs/synth
main(["synth", *tiny, "--seed", "7", "--out", str(tmp / "synth")])

# %%
# pcmcl train --data runs/synth/data --concat --multi --pm --aux hard --out runs/full
main(["train", "--data", str(tmp / "synth/data"), *fast, "--concat", "--multi", "--pm", "--aux", "hard",
      "--out", str(tmp / "full")])
print((tmp / "full/train_log.csv").read_text())

# %%
# pcmcl train --config runs/full/config.json --out runs/full-again
main(["train", "--config", str(tmp / "full/config.json"), "--out", str(tmp / "again")])
print("checkpoint identical:", filecmp.cmp(tmp / "full/model.ckpt", tmp / "again/model.ckpt", shallow=False))

# %%
# pcmcl eval --checkpoint runs/full/model.ckpt --runs 2 --export-embeddings --out runs/full-eval
main(["eval", "--checkpoint", str(tmp / "full/model.ckpt"), "--runs", "2", "--export-embeddings",
      "--out", str(tmp / "eval")])
print(sorted(p.name for p in (tmp / "eval").iterdir()))
