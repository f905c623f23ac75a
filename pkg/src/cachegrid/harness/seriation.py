"""Free-space seriation data: in-place rotation sweeps with ordering labels.

At sampled reachable positions the agent is teleported with a random facing
and spun twice around in a random direction, a quarter turn at a time. The
first four viewings are habituation; each of the last four is recorded with
a label saying whether the current orientation shows strictly more free
space than the previous one. Free space is counted by ``world.free_space``:
visible window cells the agent could itself occupy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from ..world import ROTATIONS, Pose, Scene, free_space, reachable_cells

VIEWINGS = 8  # two full turns: 4 habituation viewings, then 4 recorded ones
POSITION_FRACTION = 0.15
POSITION_CAP = 20


@dataclass(frozen=True, slots=True)
class SeriationExample:
    """One recorded viewing of a rotation sweep.

    ``poses`` and ``counts`` cover the whole sweep; ``index`` points at the
    recorded viewing (4..7) and the label compares it with the one before:
    label == (counts[index] > counts[index - 1]).
    """

    scene_id: str
    poses: tuple[Pose, ...]
    counts: tuple[int, ...]
    index: int
    label: bool


def positions_per_scene(n_reachable: int) -> int:
    """How many positions a scene contributes, capped and rounded half-up."""
    return min(POSITION_CAP, int(math.floor(POSITION_FRACTION * n_reachable + 0.5)))


def _sweep(scene: Scene, cell: tuple[int, int], rng: np.random.Generator) -> list[SeriationExample]:
    start = int(ROTATIONS[rng.integers(len(ROTATIONS))])
    turn = 90 if int(rng.integers(2)) == 1 else -90
    states = scene.default_states()
    poses = tuple(
        Pose(cell[0], cell[1], (start + turn * k) % 360, True) for k in range(VIEWINGS)
    )
    counts = tuple(free_space(scene, states, pose) for pose in poses)
    return [
        SeriationExample(scene.scene_id, poses, counts, k, counts[k] > counts[k - 1])
        for k in range(VIEWINGS // 2, VIEWINGS)
    ]


def seriation_dataset(
    scenes: Iterable[Scene] | Sequence[Scene], rng: np.random.Generator
) -> list[SeriationExample]:
    """Sample sweeps over every scene; four examples per sampled position.

    Scenes too small to contribute a position are skipped. Positions are
    drawn without replacement from the reachable cells in scan order, so the
    dataset depends only on the scenes and the generator state.
    """
    examples: list[SeriationExample] = []
    for scene in scenes:
        cells = sorted(reachable_cells(scene), key=lambda c: (c[1], c[0]))
        count = positions_per_scene(len(cells))
        if count == 0:
            continue
        picks = rng.choice(len(cells), size=count, replace=False)
        for pick in sorted(int(p) for p in picks):
            examples.extend(_sweep(scene, cells[pick], rng))
    return examples
