"""Desk-scale detect-then-recognize OCR pipeline kernel."""

from .types import Alphabet, BoundingBox, GrayImage, LabelSequence, ProbLattice, ScoredBox

__version__ = "0.1.0"

__all__ = ["Alphabet", "BoundingBox", "GrayImage", "LabelSequence", "ProbLattice", "ScoredBox"]
