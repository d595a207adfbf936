"""Extraction adapters for the multimodal regression engine.

Turns raw interview response videos into the engine's feature container and
manifest formats: per-frame image embeddings (1152-d), per-segment audio
emotion embeddings (768-d), and a single 4096-d text embedding of the
transcribed speech. The engine is consumed only through those file formats;
nothing here imports it.
"""

__version__ = "0.1.0"
