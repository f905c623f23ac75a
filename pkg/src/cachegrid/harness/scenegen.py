"""Seeded procedural rooms: bordered floors, wall stubs, furniture to hide by.

Layouts are assembled as scene-format text and parsed through the regular
loader, so whatever this module produces is valid by construction. Every
passable cell stays reachable from the start pose; placements that would
split the floor are rejected and redrawn.
"""

from __future__ import annotations

import numpy as np

from ..world import Scene, build_scene, reachable_cells

MIN_SIDE, MAX_SIDE = 7, 15
RECEPTACLE_RANGE = (2, 6)
OCCLUDER_RANGE = (3, 10)
_MIN_OPEN_FLOOR = 8

_RECEPTACLE_NAMES = ("chest", "cabinet", "bin", "crate")
_OCCLUDER_NAMES = ("screen", "shelf", "plant", "box")

Cell = tuple[int, int]


def _connected(cells: set[Cell]) -> bool:
    if not cells:
        return False
    seen = {min(cells)}
    frontier = [min(cells)]
    while frontier:
        x, z = frontier.pop()
        for nxt in ((x + 1, z), (x - 1, z), (x, z + 1), (x, z - 1)):
            if nxt in cells and nxt not in seen:
                seen.add(nxt)
                frontier.append(nxt)
    return len(seen) == len(cells)


def _pick(cells: set[Cell], rng: np.random.Generator) -> Cell:
    ordered = sorted(cells, key=lambda c: (c[1], c[0]))
    return ordered[int(rng.integers(len(ordered)))]


def _carve_stubs(floor: set[Cell], width: int, height: int, rng: np.random.Generator) -> set[Cell]:
    for _ in range(int(rng.integers(0, 4))):
        horizontal = int(rng.integers(2)) == 1
        length = int(rng.integers(2, 5))
        x = int(rng.integers(1, width - 1))
        z = int(rng.integers(1, height - 1))
        stub = {
            (x + k, z) if horizontal else (x, z + k) for k in range(length)
        } & floor
        remaining = floor - stub
        if stub and len(remaining) >= _MIN_OPEN_FLOOR and _connected(remaining):
            floor = remaining
    return floor


def _receptacle_line(index: int, cell: Cell, rng: np.random.Generator) -> str:
    name = _RECEPTACLE_NAMES[index % len(_RECEPTACLE_NAMES)]
    capacity = ("large", "large", "medium", "small")[int(rng.integers(4))]
    height = "low" if int(rng.integers(3)) < 2 else "high"
    return (
        f"{name}{index} receptacle {cell[0]} {cell[1]} openable"
        f" height={height} slots=ContainedIn,OnTop capacity={capacity}"
    )


def _occluder_line(index: int, cell: Cell, rng: np.random.Generator) -> str:
    name = _OCCLUDER_NAMES[index % len(_OCCLUDER_NAMES)]
    height = "high" if int(rng.integers(3)) < 2 else "low"
    slots = "Behind,OnTop" if int(rng.integers(4)) < 3 else "Behind"
    return f"{name}{index} occluder {cell[0]} {cell[1]} height={height} slots={slots}"


def _attempt(rng: np.random.Generator, scene_id: str) -> Scene | None:
    width = int(rng.integers(MIN_SIDE, MAX_SIDE + 1))
    height = int(rng.integers(MIN_SIDE, MAX_SIDE + 1))
    floor = {(x, z) for x in range(1, width - 1) for z in range(1, height - 1)}
    floor = _carve_stubs(floor, width, height, rng)
    start = _pick(floor, rng)

    object_cells: set[Cell] = set()
    lines: list[str] = []
    counts = {"receptacle": 0, "occluder": 0}
    plans = [
        ("receptacle", int(rng.integers(RECEPTACLE_RANGE[0], RECEPTACLE_RANGE[1] + 1)), _receptacle_line),
        ("occluder", int(rng.integers(OCCLUDER_RANGE[0], OCCLUDER_RANGE[1] + 1)), _occluder_line),
    ]
    for kind, target, line_of in plans:
        for _ in range(target):
            for _ in range(30):
                open_cells = floor - object_cells - {start}
                if not open_cells:
                    break
                cell = _pick(open_cells, rng)
                remaining = floor - object_cells - {cell}
                if len(remaining) >= _MIN_OPEN_FLOOR and _connected(remaining):
                    object_cells.add(cell)
                    lines.append(line_of(counts[kind], cell, rng))
                    counts[kind] += 1
                    break
    if counts["receptacle"] < RECEPTACLE_RANGE[0] or counts["occluder"] < OCCLUDER_RANGE[0]:
        return None

    rows = []
    for z in range(height):
        row = []
        for x in range(width):
            if (x, z) == start:
                row.append("A")
            elif (x, z) in floor:
                row.append(".")
            else:
                row.append("#")
        rows.append("".join(row))
    text = "\n".join(
        ["cachegrid-scene v1", f"id: {scene_id}", "grid:", *rows, "objects:", *lines, "end"]
    )
    scene = build_scene(text)
    passable = frozenset(
        (x, z) for x in range(width) for z in range(height) if scene.is_passable((x, z))
    )
    if reachable_cells(scene) != passable:
        return None
    return scene


def generate_scene(rng: np.random.Generator, scene_id: str) -> Scene:
    """One seeded room; redraws layouts until the constraints hold."""
    for _ in range(64):
        scene = _attempt(rng, scene_id)
        if scene is not None:
            return scene
    raise RuntimeError("scene generation kept violating its constraints")


def generate_scenes(count: int, seed: int, prefix: str = "room") -> list[Scene]:
    """A deterministic corpus: same count and seed, same scenes."""
    rng = np.random.default_rng(seed)
    return [generate_scene(rng, f"{prefix}-{seed}-{index}") for index in range(count)]
