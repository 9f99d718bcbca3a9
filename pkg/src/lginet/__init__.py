"""Aspect sentiment classification over local-global interactive graphs."""

from .graphs import LGIG, ParseSample, RelationGraph, RelationVocab, SyntaxGraph, build_lgig
from .model import DigNet, ModelConfig, TokenVocab
from .training import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "LGIG",
    "DigNet",
    "ModelConfig",
    "ParseSample",
    "RelationGraph",
    "RelationVocab",
    "SyntaxGraph",
    "TokenVocab",
    "TrainConfig",
    "build_lgig",
    "train",
]
