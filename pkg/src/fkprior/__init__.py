"""Flow-based prior over blur kernels.

Trains an invertible flow on anisotropic Gaussian blur kernels, samples
kernels from the learned density, and estimates the unknown kernel of a
degraded image by optimizing the flow's latent variable. All gradients come
from the built-in reverse-mode engine in :mod:`fkprior.diffcore`.
"""

from ._kernels import BACKEND

__all__ = ["BACKEND"]
__version__ = "0.1.0"
