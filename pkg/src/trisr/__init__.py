"""Triangular-window transformer for single-image super-resolution.

Window geometry kernels (rectangular + triangular tilings, shifts, sparse
intervals, overlapping unfold), a small reverse-mode autodiff engine on
numpy, composite attention blocks, the full upscaling model, a training /
evaluation pipeline, and an attention-cost profiler.
"""

__version__ = "0.1.0"
