"""Syntactically controlled paraphrase generation toolkit.

Encode a source sentence and the pruned constituency skeleton of an
exemplar sentence, then decode a paraphrase whose syntax follows the
exemplar at a chosen granularity.  Ships the full desk-scale pipeline:
tree handling, subword text processing, a small reverse-mode autodiff
core, the encoder/decoder model, training, beam-search inference,
evaluation metrics and dataset construction.
"""

__version__ = "0.1.0"
