# %% [markdown]
# Label algebra
#
# Cycle labels are bit vectors [normal, crackle, wheeze].  Concatenating two
# cycles ORs their labels; a 2-label model sees only [crackle, wheeze].

# %%
import itertools

from pcmcl.labels import IcbhiClass, Label3, class_label, label3_or, label3_to_label2, to_icbhi_class

normal = class_label(IcbhiClass.NORMAL)
crackle = class_label(IcbhiClass.CRACKLE)
print("normal:", normal, " crackle:", crackle)

# %% [markdown]
# Mixing a normal cycle with a crackle cycle.  In 3-label form the normal
# bit survives; in 2-label form the pair is indistinguishable from a pure
# crackle pair, so normal evidence gets trained as "abnormal".

# %%
mixed = label3_or(normal, crackle)
print("3-label OR:", tuple(mixed))
print("2-label view:", tuple(label3_to_label2(mixed)), "== crackle alone:", tuple(label3_to_label2(crackle)))

# %% [markdown]
# Decoding a binarized prediction into one ICBHI class ignores the normal bit.

# %%
for bits in itertools.product((0, 1), repeat=3):
    print(bits, "->", to_icbhi_class(bits).name)

# %%
legal = [Label3(*b) for b in itertools.product((0, 1), repeat=3) if Label3(*b).is_original()]
print("labels an unmixed cycle can carry:", [tuple(y) for y in legal])
