"""Desk-scale hierarchical stochastic world model for indoor panoramas.

Predicts semantic, depth and RGB equirectangular observations at unvisited
viewpoints from a handful of context panoramas: accumulated observations
are re-projected into the query pose as sparse guidance, a stochastic
structure stage fills in semantics and depth, and an image stage renders
RGB. Includes a procedural indoor world generator and an evaluation grid.
"""

from . import (cli, cloud, config, dataset, evaluate, geom, imggen, palette,
               structgen, synthworld, tinynn)
from .errors import (ConfigError, DataError, DomainError, GenerationError,
                     GeometryError, NoContextError, NumericError,
                     PanoworldError, ShapeError)
from .palette import CLASS_NAMES, D_MAX, NUM_CLASSES, PALETTE

__version__ = "0.1.0"
