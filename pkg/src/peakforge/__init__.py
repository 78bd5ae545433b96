"""Unimodal spline regression and its multimodal extensions."""

__version__ = "0.1.0"
