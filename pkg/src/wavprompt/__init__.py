"""Prompt tuning and wavelet prompt tuning of a frozen transformer encoder for
all-type audio deepfake detection, at desk scale on numpy."""

from .config import ExperimentConfig, load_config, save_config
from .encoder import Encoder, EncoderConfig
from .errors import ArchiveError, ConfigError, ContractError, NumericError, ShapeError, WavPromptError
from .head import ClassWeights, Head, HeadConfig, wce_loss
from .model import Detector, load_weights, save_weights
from .prompting import Paradigm, PromptBank, count_trainable_params
from .wavelet import SubBands, build_wavelet_prompt, haar_dwt2, haar_idwt2

__version__ = "0.1.0"

__all__ = [
    "ArchiveError", "ClassWeights", "ConfigError", "ContractError", "Detector", "Encoder", "EncoderConfig",
    "ExperimentConfig", "Head", "HeadConfig", "NumericError", "Paradigm", "PromptBank", "ShapeError", "SubBands",
    "WavPromptError", "build_wavelet_prompt", "count_trainable_params", "haar_dwt2", "haar_idwt2", "load_config",
    "load_weights", "save_config", "save_weights", "wce_loss",
]
