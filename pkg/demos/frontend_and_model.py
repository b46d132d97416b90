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
# # Log-mel frontend and classifier
#
# A 10 s clip is framed into 20 overlapping 960 ms windows. Each window becomes
# a 96 x 64 log-mel patch, and the depthwise-separable network scores every patch.

# %%
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from scenerec.audio import Waveform
from scenerec.features import clip_patches, frame_windows, mel_centres_hz
from scenerec.model import count_parameters, forward, init_model
from scenerec.synthetic import tone, white_noise

out_dir = Path("demo_output")
out_dir.mkdir(exist_ok=True)

# %% [markdown]
# ## Framing
#
# A chirp-like clip: a 440 Hz tone for 5 s followed by 5 s of white noise.

# %%
clip = Waveform(np.concatenate([tone(440.0, 5.0).samples, white_noise(5.0, 0.1).samples]))
windows = frame_windows(clip)
patches = clip_patches(clip)
print("windows", windows.shape, "patches", patches.shape)

# %%
fig, axes = plt.subplots(1, 3, figsize=(12, 3))
for ax, i in zip(axes, (0, 10, 19)):
    ax.imshow(patches[i].T, origin="lower", aspect="auto")
    ax.set_title(f"window {i} ({i * 0.48:.2f} s)")
fig.savefig(out_dir / "patches.png")
print("mel centres (Hz):", np.round(mel_centres_hz()[[0, 31, 63]], 1))

# %% [markdown]
# ## Network
#
# Parameter counts follow directly from the layer table; batch norm stores
# beta, moving mean and moving variance per channel.

# %%
for c in (1, 14, 521):
    print(c, "classes:", f"{count_parameters(init_model(c, scheme='zeros')):,}", "parameters")

model = init_model(14, seed=0, scheme="fan_in")
scores = forward(patches, model)
print("score rows", scores.shape, "range", float(scores.min()), float(scores.max()))
print("pre-pool tensor", forward(patches[0], model, output="prepool").shape)

# %%
half = model.astype("f16")
agree = np.mean(np.argmax(forward(patches, half), 1) == np.argmax(scores, 1))
print("f16 vs f32 argmax agreement:", agree)
