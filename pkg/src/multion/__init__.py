"""Sequence-agnostic multi-object navigation in a semantic gridworld."""

from .scene import CategoryCatalog, GridScene, SceneGenSpec, generate_scene, load_scene, save_scene

__all__ = [
    "CategoryCatalog",
    "GridScene",
    "SceneGenSpec",
    "generate_scene",
    "load_scene",
    "save_scene",
]

__version__ = "0.1.0"
