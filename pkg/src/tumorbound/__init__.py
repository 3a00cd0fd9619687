"""Boundary-semantics sequence labelling on polar-sampled tumour contours."""

__version__ = "0.1.0"
