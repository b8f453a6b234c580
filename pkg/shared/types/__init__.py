"""Shared type definitions for BST nodes."""
from .node import (
    NodeLevel,
    NodeType,
    NodeConfig,
    NodeResult,
    BSTNode,
    LeafNode,
    InternalNode,
)
from .errors import (
    NeuralSceneError,
    SceneValidationError,
    DegenerateInputError,
    MarchingError,
    TapeError,
    CheckpointFormatError,
    DatasetFormatError,
    TrainingDivergedError,
    CliValidationError,
)
from .scene import (
    Pose,
    BoundingVolume,
    LatentCode,
    ObjectInstance,
    Scene,
    Camera,
    GraspAnnotation,
    world_to_object,
    object_to_world,
    direction_to_object,
)

__all__ = [
    "NodeLevel",
    "NodeType",
    "NodeConfig",
    "NodeResult",
    "BSTNode",
    "LeafNode",
    "InternalNode",
    "NeuralSceneError",
    "SceneValidationError",
    "DegenerateInputError",
    "MarchingError",
    "TapeError",
    "CheckpointFormatError",
    "DatasetFormatError",
    "TrainingDivergedError",
    "CliValidationError",
    "Pose",
    "BoundingVolume",
    "LatentCode",
    "ObjectInstance",
    "Scene",
    "Camera",
    "GraspAnnotation",
    "world_to_object",
    "object_to_world",
    "direction_to_object",
]
