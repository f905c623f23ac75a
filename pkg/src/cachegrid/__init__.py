"""cachegrid: a deterministic grid-world hide-and-seek game.

A hider explores a scene, simulates candidate hiding spots from its own map,
places a goal object, and a seeker tries to find it. The package exposes the
world geometry, the five-stage game core, reward and metric definitions,
ground-truth oracles, the perspective-simulation machinery, a small linear
policy learner, an evaluation harness with a CLI, and a play server for
human-vs-agent trials.
"""

from .world import (
    Modality,
    ObjectKind,
    ObjectStates,
    Pose,
    Resting,
    Scene,
    SceneError,
    Terrain,
    ViewWindow,
    WorldObject,
    build_scene,
    scene_text,
)

__version__ = "0.1.0"

__all__ = [
    "Modality",
    "ObjectKind",
    "ObjectStates",
    "Pose",
    "Resting",
    "Scene",
    "SceneError",
    "Terrain",
    "ViewWindow",
    "WorldObject",
    "build_scene",
    "scene_text",
    "__version__",
]
