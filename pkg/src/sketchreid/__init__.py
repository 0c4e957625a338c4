"""Contour-sketch identity features.

Learnable spatial polar transformation, angle-gated multistream conv
network, triplet training, and a single-shot CMC evaluation harness,
with a compiled kernel core and a pure-numpy fallback.
"""

__version__ = "0.1.0"
