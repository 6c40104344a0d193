"""Blind removal of overlaid visual motifs (text, shapes, emblems) from images."""

__version__ = "0.1.0"
