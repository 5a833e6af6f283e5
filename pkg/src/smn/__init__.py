"""Interpretable web-event popularity prediction over a unified PMI word
graph, with additive base, self-excitation, mutual-excitation and image
heads."""

__version__ = "0.1.0"
