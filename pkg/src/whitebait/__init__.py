"""Clickbait scoring toolkit.

Per-field LSTM text regressors, an hour-of-day entity-embedding model, and a
fusion network over pretrained submodels, together with loaders for the
challenge JSONL format, training, evaluation metrics, and a CLI.
"""

__version__ = "0.1.0"
