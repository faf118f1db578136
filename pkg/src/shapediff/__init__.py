"""shapediff: shape-conditioned 3D molecule generation with equivariant diffusion."""

__version__ = "0.1.0"
