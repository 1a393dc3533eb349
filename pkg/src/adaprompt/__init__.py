"""Relation extraction as cloze prediction with a masked language model."""

__version__ = "0.1.0"
