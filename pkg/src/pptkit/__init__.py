"""Pseudo phonetic tokens: features, k-means codebooks, token LMs and evaluation metrics."""

from .dsp import FeatureKind, FeatureMatrix, PitchTrack, Waveform
from .quantizer import Codebook
from .tokenizer import TokenSequence
from .tokenlm import NGramModel

__all__ = ["Codebook", "FeatureKind", "FeatureMatrix", "NGramModel", "PitchTrack", "TokenSequence", "Waveform"]
__version__ = "0.1.0"
