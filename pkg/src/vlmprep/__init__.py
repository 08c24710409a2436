"""Data curation and training preparation toolkit for vision-language models.

Capabilities: caption fusion, perplexity-based corpus selection, bilingual
dataset construction with human verification, instruction-set filtering,
chat-template rendering, native-resolution sequence packing, and checkpoint
weight averaging.
"""

__version__ = "0.1.0"
