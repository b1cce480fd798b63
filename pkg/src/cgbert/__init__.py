"""Conditional text generation for generalized few-shot intent detection.

A BERT-style encoder and masked decoder share a latent space conditioned on
the intent phrase; sampling the latent prior and beam-decoding produces new
utterances for intents that only have a handful of labelled examples.
"""

from .estimators import CGBertGenerator, IntentClassifier
from .generation import GenerationConfig
from .gfsid import CopyOversampler, EpisodeSpec, GenerativeAugmenter

__all__ = [
    "CGBertGenerator",
    "IntentClassifier",
    "GenerationConfig",
    "EpisodeSpec",
    "CopyOversampler",
    "GenerativeAugmenter",
]
__version__ = "0.1.0"
