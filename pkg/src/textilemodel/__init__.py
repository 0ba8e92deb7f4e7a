"""Descriptive modeling of woven composite textiles from sliced volumes.

Synthetic angle-interlock generation, voxel label volumes, pseudo-CT
rendering, per-slice yarn section detection, tracking and B-spline
path fitting, yarn meshing, and quantitative validation, wired into a
single reproducible pipeline behind the ``textile`` CLI.
"""

__version__ = "0.1.0"
