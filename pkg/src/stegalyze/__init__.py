"""Attentional LSTM-CNN steganalysis of generated text.

The package carries its own small reverse-mode autodiff (:mod:`stegalyze.tensor`),
the network layers and model built on it, a training loop, and a Markov-chain
generator for cover/stego corpora.
"""
__version__ = "0.1.0"

from .errors import (  # noqa: E402
    ConfigError,
    DataError,
    ModelFileError,
    NumericFailure,
    StegalyzeError,
)
from .model import VARIANTS, ModelConfig  # noqa: E402

__all__ = [
    "ConfigError",
    "DataError",
    "ModelConfig",
    "ModelFileError",
    "NumericFailure",
    "StegalyzeError",
    "VARIANTS",
    "__version__",
]
