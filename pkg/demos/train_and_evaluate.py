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
# # Head-only training, evaluation and latency
#
# A frozen random backbone still separates tones from white noise well
# enough for a trained sigmoid head to classify them.

# %%
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from scenerec.bench import latency_benchmark
from scenerec.dataset import NO_AUGMENTATION
from scenerec.evaluation import evaluate_clips, gain_sweep_eval
from scenerec.model import init_model
from scenerec.synthetic import split_clips, tone_vs_noise_dataset
from scenerec.training import TrainConfig, train_head

out_dir = Path("demo_output")
out_dir.mkdir(exist_ok=True)

# %%
splits = split_clips(tone_vs_noise_dataset(200, 2.0), seed=0)
backbone = init_model(2, seed=0, scheme="fan_in")
cfg = TrainConfig(learning_rate=1e-3, max_epochs=15, augmentation=NO_AUGMENTATION)
result = train_head(splits["train"], splits["validation"], backbone, cfg, labels=("tone", "noise"))
print(result.history.to_csv())

# %%
report = evaluate_clips(splits["test"], result.model)
print("test mAP", round(report.mean_average_precision, 3), "accuracy", round(report.accuracy, 3))
print(report.confusion)
report.write(out_dir / "report")

# %% [markdown]
# ## Input gain sensitivity

# %%
rows = gain_sweep_eval(splits["test"], result.model)
fig, ax = plt.subplots()
ax.plot([r.gain_db for r in rows], [r.mean_average_precision for r in rows], marker="o")
ax.set_xlabel("gain (dB)")
ax.set_ylabel("mAP")
fig.savefig(out_dir / "gain_sweep.png")

# %% [markdown]
# ## Latency
#
# Time grows linearly with audio length; the intercept is fixed per-call overhead.

# %%
bench = latency_benchmark(result.model, [5, 10, 20, 30], repeats=3)
print(f"{bench.fit.slope:.2f} ms per second of audio + {bench.fit.intercept:.2f} ms, R^2 {bench.fit.r_squared:.4f}")
