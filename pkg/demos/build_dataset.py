# ---
# jupyter:
#   jupytext:
#     formats: py:percent
#   kernelspec:
#     display_name: Python 3
#     language: python
#     name: python3
# ---

# %% [markdown]
# # Building a mixed scene dataset
#
# Half of each environment corpus is kept as-is and the other half is mixed
# with distinct speech clips at SNRs cycling through -10, -5, 0, 5 and 10 dB.
# Speech left over becomes the interfering_speakers class.

# %%
import collections

from scenerec.dataset import apportion, build_mixed_dataset, split_dataset
from scenerec.synthetic import REFERENCE_CORPUS_SIZES, synthetic_corpora

# %% [markdown]
# ## Reference-sized corpora
#
# The generated corpora are lazy, so planning the full 9968-clip dataset
# without writing audio takes a few seconds.

# %%
speech, envs = synthetic_corpora()
print({k.value: v for k, v in REFERENCE_CORPUS_SIZES.items()}, "speech:", len(speech))
manifest = build_mixed_dataset(speech, envs)
for label, n in sorted(manifest.label_counts().items()):
    print(f"{label:28s} {n:5d}")
print("total", len(manifest.clips))

# %%
snrs = collections.Counter(c.snr_db for c in manifest.clips if c.snr_db is not None)
print("clips per SNR:", dict(sorted(snrs.items())))

# %% [markdown]
# ## Splits
#
# Each label is shuffled with the seed and cut 70/10/20 by largest remainders.

# %%
for n in (10, 222, 1047, 1334):
    print(n, apportion(n, (0.7, 0.1, 0.2)))
split = split_dataset(manifest, seed=0)
print(split.split_counts()["music"])
