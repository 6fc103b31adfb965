"""Persona-aware variational response generation with persona-oriented
evaluation metrics, built on a minimal numpy reverse-mode autodiff engine."""

__version__ = "0.1.0"

from .corpus import DialogueTriple, Vocabulary, UserTable  # noqa: F401
from .model import ModelConfig, GaussianParams  # noqa: F401
from .objective import LossBreakdown  # noqa: F401
