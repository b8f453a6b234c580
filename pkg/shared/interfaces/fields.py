"""
Field contracts shared by the renderer, the grasp filter and the voxelizer.

A field answers queries for the objects of one scene. Every query carries
object-frame coordinates plus a `columns` vector holding, per point, the
position of its object in the scene's object list. Implementations may return
tape values (training) or plain arrays (inference).
"""
from abc import ABC, abstractmethod
from typing import Any, Tuple

import numpy as np


class RadianceField(ABC):
    """Density and colour of the objects of a scene."""

    @abstractmethod
    def density(self, p_obj: np.ndarray, columns: np.ndarray) -> Any:
        """(S,) non-negative densities at (S, 3) object-frame points."""

    @abstractmethod
    def radiance(self, p_obj: np.ndarray, d_obj: np.ndarray, columns: np.ndarray) -> Tuple[Any, Any]:
        """(S,) densities and (S, 3) colours in [0, 1]."""

    @property
    def is_differentiable(self) -> bool:
        return False


class GraspField(ABC):
    """Grasp score and raw orientation vectors of the objects of a scene."""

    @abstractmethod
    def grasp(self, p_obj: np.ndarray, columns: np.ndarray) -> Tuple[Any, Any, Any]:
        """(S,) scores in [0, 1], (S, 3) approach vectors a, (S, 3) raw b̂."""
