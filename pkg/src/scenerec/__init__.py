"""Acoustic scene recognition: WAV/DSP utilities, dataset building, a log-mel
frontend, a numpy MobileNet-style classifier, head-only training, metrics and
latency benchmarking."""

__version__ = "0.1.0"

from .audio import Waveform, apply_gain, fourier_resample, mix_at_snr, read_wav, rms, write_wav
from .dataset import (LABELS, AugmentationConfig, DatasetManifest, SceneLabel, build_mixed_dataset,
                      split_dataset)
from .evaluation import EvalReport, evaluate, gain_sweep_eval, mean_average_precision
from .features import FrontendConfig, clip_patches, log_mel_spectrogram
from .model import ModelWeights, count_parameters, forward, infer_clip, init_model
from .training import TrainConfig, train_head
from .weightfile import load_weights, save_weights

__all__ = [
    "LABELS", "AugmentationConfig", "DatasetManifest", "EvalReport", "FrontendConfig", "ModelWeights",
    "SceneLabel", "TrainConfig", "Waveform", "apply_gain", "build_mixed_dataset", "clip_patches",
    "count_parameters", "evaluate", "forward", "fourier_resample", "gain_sweep_eval", "infer_clip",
    "init_model", "load_weights", "log_mel_spectrogram", "mean_average_precision", "mix_at_snr",
    "read_wav", "rms", "save_weights", "split_dataset", "train_head", "write_wav",
]
