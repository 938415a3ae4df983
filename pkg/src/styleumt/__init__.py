"""Unsupervised text style transfer by word-level SMT initialization and
classifier-rewarded iterative back-translation, on numpy."""

from .corpus import Style, Vocabulary, generate_synthetic, load_corpus
from .pipeline import PipelineConfig, load_config

__all__ = ["Style", "Vocabulary", "generate_synthetic", "load_corpus", "PipelineConfig", "load_config"]
__version__ = "0.1.0"
