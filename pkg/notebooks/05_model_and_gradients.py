# %% [markdown]
# Two-head CNN and its gradients
#
# A small convolutional encoder feeds a pathology head (sigmoid outputs) and a
# same-patient head (two-way softmax).  Gradients are written by hand; here
# they are compared with central finite differences.

# %%
import numpy as np

from pcmcl.model import Architecture, backward, batch_losses, forward, init_params

arch = Architecture(n_bands=16, input_pool=(2, 2), channels=3, embed_dim=4)
params = init_params(arch, seed=0)
print({k: v.shape for k, v in params.tensors.items()})

rng = np.random.default_rng(0)
x = rng.standard_normal((4, 16, 24))
y_main = rng.integers(0, 2, (4, 3))
y_aux = rng.integers(0, 2, 4)
out = forward(params, x)
print("z", out.z.shape, "main", out.main_logits.shape, "aux", out.aux_logits.shape)

# %%
losses, grads = backward(params, x, y_main, y_aux, alpha=0.1)
print(losses)
worst = 0.0
for name, tensor in params.tensors.items():
    idx = tuple(int(rng.integers(s)) for s in tensor.shape)
    orig = tensor[idx]
    tensor[idx] = orig + 1e-5
    up = batch_losses(params, x, y_main, y_aux, 0.1).total
    tensor[idx] = orig - 1e-5
    down = batch_losses(params, x, y_main, y_aux, 0.1).total
    tensor[idx] = orig
    fd = (up - down) / 2e-5
    worst = max(worst, abs(fd - grads[name][idx]) / max(abs(fd), 1e-8))
print(f"worst relative error vs finite differences: {worst:.2e}")

# %%
_, g0 = backward(params, x, y_main, y_aux, alpha=0.0)
print("alpha=0 aux-head gradient is exactly zero:", not g0["aux.weight"].any())
