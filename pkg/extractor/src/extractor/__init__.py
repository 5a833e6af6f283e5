"""Offline feature extraction for the popularity model: corpus-trained
word embeddings and frozen-encoder image embeddings, both emitted as
`.semb` files. The embedding files are the only interface to the core."""

__version__ = "0.1.0"
