"""Structural optimization toolkit for printed parts.

Submodules: ``mesh`` (meshes, regions, surface graphs), ``fea`` (linear
elasticity), ``toposimp`` (2D SIMP topology optimization and datasets),
``learn`` (PCA and load-to-topology regression), ``orient`` (build
orientation), ``uncertain`` (lightweighting under uncertain force
locations), ``io`` (CSV and VTK exports) and ``cli``.
"""
__version__ = "0.1.0"

from .kernels import BACKEND  # noqa: E402,F401
