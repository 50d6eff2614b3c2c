"""disgauss: interpretable single-view 3D Gaussian splatting.

A differentiable splatting renderer, a dual-branch (geometry/appearance)
generator driven by disentangled latent codes, variational + mutual-
information training constraints, procedural toy data, and tooling (CLI,
render service, browser explorer).
"""

__version__ = "0.1.0"
