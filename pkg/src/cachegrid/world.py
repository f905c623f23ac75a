"""Grid world: scenes, poses, movement geometry, and occlusion-aware visibility.

Conventions used by every module in this package:

- One cell is 0.25 m of floor. ``x`` grows east (text columns left to right),
  ``z`` grows south (text rows top to bottom), so north is ``-z``.
- Rotation is one of 0, 90, 180, 270 degrees: 0 faces north (-z), 90 faces
  east (+x), 180 south, 270 west.
- A pose is ``(x, z, rotation, standing)``. Crouching lowers the eye: low
  furniture then blocks sight; standing sees over it. High furniture and
  walls block either stance.
- The view window is the 7x7 block of cells in front of the agent, indexed
  ``(i, j)`` with ``i`` = cells ahead (1..7) and ``j`` = 4 plus the lateral
  offset to the agent's right (1..7, 4 is straight ahead).
- Sight lines run between cell centers and are blocked by any intermediate
  cell whose closed unit square the segment touches (supercover walk), so
  corner-to-corner cracks do not leak visibility.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Iterator, Mapping

ROTATIONS = (0, 90, 180, 270)
CELL_METERS = 0.25
WINDOW_DEPTH = 7
WINDOW_WIDTH = 7
WINDOW_CENTER_J = 4
INTERACT_RANGE = 6  # cells; the 1.5 m interaction / claim radius
SCENE_FORMAT_HEADER = "cachegrid-scene v1"

GOAL_TYPES = ("bread", "cup", "knife", "plunger", "tomato")

# Invented size scale: every goal type has a rank and fits any container of
# equal or larger capacity. Documented in the scene format notes in README.
SIZE_RANKS = {"small": 0, "medium": 1, "large": 2}
GOAL_SIZE = {
    "bread": "large",
    "cup": "medium",
    "knife": "small",
    "plunger": "large",
    "tomato": "medium",
}


class Terrain(Enum):
    FLOOR = "floor"
    WALL = "wall"
    FURNITURE_LOW = "furniture-low"
    FURNITURE_HIGH = "furniture-high"


GLYPH_TO_TERRAIN = {
    ".": Terrain.FLOOR,
    "#": Terrain.WALL,
    "f": Terrain.FURNITURE_LOW,
    "F": Terrain.FURNITURE_HIGH,
}
TERRAIN_TO_GLYPH = {v: k for k, v in GLYPH_TO_TERRAIN.items()}
START_GLYPH = "A"


class Modality(Enum):
    """How a placed object relates to its spot. Wire codes 0, 1, 2."""

    ON_TOP = 0
    CONTAINED_IN = 1
    BEHIND = 2

    @property
    def wire(self) -> str:
        return _MODALITY_WIRE[self]

    @classmethod
    def from_wire(cls, text: str) -> "Modality":
        try:
            return _WIRE_MODALITY[text]
        except KeyError:
            raise ValueError(f"unknown modality {text!r}") from None


_MODALITY_WIRE = {
    Modality.ON_TOP: "OnTop",
    Modality.CONTAINED_IN: "ContainedIn",
    Modality.BEHIND: "Behind",
}
_WIRE_MODALITY = {v: k for k, v in _MODALITY_WIRE.items()}


class ObjectKind(Enum):
    GOAL = "goal"
    RECEPTACLE = "receptacle"
    OCCLUDER = "occluder"


class SceneError(ValueError):
    """Raised for malformed or invalid scene descriptions."""


class SceneParseError(SceneError):
    def __init__(self, message: str, line: int, column: int = 1):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


class SceneValidationError(SceneError):
    pass


_FORWARD = {0: (0, -1), 90: (1, 0), 180: (0, 1), 270: (-1, 0)}


@dataclass(frozen=True, slots=True)
class Pose:
    x: int
    z: int
    rotation: int
    standing: bool

    def __post_init__(self):
        if self.rotation not in _FORWARD:
            raise ValueError(f"rotation must be one of {ROTATIONS}, got {self.rotation}")

    @property
    def cell(self) -> tuple[int, int]:
        return (self.x, self.z)

    def forward(self) -> tuple[int, int]:
        return _FORWARD[self.rotation]

    def rightward(self) -> tuple[int, int]:
        return _FORWARD[(self.rotation + 90) % 360]

    def moved(self, ahead: int = 0, right: int = 0) -> "Pose":
        fx, fz = self.forward()
        rx, rz = self.rightward()
        return replace(self, x=self.x + fx * ahead + rx * right, z=self.z + fz * ahead + rz * right)

    def rotated(self, quarter_turns_right: int) -> "Pose":
        return replace(self, rotation=(self.rotation + 90 * quarter_turns_right) % 360)

    def with_stance(self, standing: bool) -> "Pose":
        return replace(self, standing=standing)

    def key(self) -> tuple[int, int, int, int]:
        return (self.x, self.z, self.rotation, int(self.standing))

    # Projections used throughout the metrics: drop rotation, drop stance.
    def proj_no_rotation(self) -> tuple[int, int, bool]:
        return (self.x, self.z, self.standing)

    def proj_cell(self) -> tuple[int, int]:
        return (self.x, self.z)


@dataclass(frozen=True, slots=True)
class WorldObject:
    object_id: str
    kind: ObjectKind
    cell: tuple[int, int]
    goal_type: str | None = None
    openable: bool = False
    opaque_when_closed: bool = True
    height: str = "low"  # "low" or "high"
    slots: frozenset[Modality] = frozenset()
    capacity: str = "large"

    def validate(self) -> None:
        if self.kind is ObjectKind.GOAL:
            if self.goal_type not in GOAL_TYPES:
                raise SceneValidationError(
                    f"object {self.object_id!r}: goal objects need goal_type in {GOAL_TYPES}"
                )
        elif self.goal_type is not None:
            raise SceneValidationError(f"object {self.object_id!r}: goal_type only applies to goals")
        if self.height not in ("low", "high"):
            raise SceneValidationError(f"object {self.object_id!r}: height must be low or high")
        if self.capacity not in SIZE_RANKS:
            raise SceneValidationError(f"object {self.object_id!r}: unknown capacity {self.capacity!r}")
        if Modality.CONTAINED_IN in self.slots and not self.openable:
            raise SceneValidationError(
                f"object {self.object_id!r}: a ContainedIn slot requires an openable object"
            )
        if self.kind is ObjectKind.RECEPTACLE and not self.slots:
            raise SceneValidationError(f"object {self.object_id!r}: receptacle declares no slots")


@dataclass(frozen=True, slots=True)
class Resting:
    """Where the loose (goal) object currently sits when not held."""

    object_id: str
    cell: tuple[int, int]
    modality: Modality
    container_id: str | None = None


@dataclass(slots=True)
class ObjectStates:
    """Mutable overlay on an immutable Scene: open flags plus the loose object."""

    open_flags: dict[str, bool] = field(default_factory=dict)
    resting: Resting | None = None

    def is_open(self, object_id: str) -> bool:
        return self.open_flags.get(object_id, False)

    def copy(self) -> "ObjectStates":
        return ObjectStates(dict(self.open_flags), self.resting)

    def cache_key(self) -> tuple:
        return (tuple(sorted(k for k, v in self.open_flags.items() if v)),)


@dataclass(frozen=True)
class Scene:
    scene_id: str
    width: int
    height: int
    terrain: tuple[tuple[Terrain, ...], ...]  # terrain[z][x]
    objects: tuple[WorldObject, ...]
    start_pose: Pose
    _by_id: dict = field(default_factory=dict, repr=False, compare=False)
    _by_cell: dict = field(default_factory=dict, repr=False, compare=False)
    _caches: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        for obj in self.objects:
            self._by_id[obj.object_id] = obj
            self._by_cell[obj.cell] = obj

    def in_bounds(self, cell: tuple[int, int]) -> bool:
        x, z = cell
        return 0 <= x < self.width and 0 <= z < self.height

    def terrain_at(self, cell: tuple[int, int]) -> Terrain:
        return self.terrain[cell[1]][cell[0]]

    def object_at(self, cell: tuple[int, int]) -> WorldObject | None:
        return self._by_cell.get(cell)

    def object(self, object_id: str) -> WorldObject:
        try:
            return self._by_id[object_id]
        except KeyError:
            raise KeyError(f"unknown object id {object_id!r}") from None

    def has_object(self, object_id: str) -> bool:
        return object_id in self._by_id

    def openable_ids(self) -> tuple[str, ...]:
        return tuple(o.object_id for o in self.objects if o.openable)

    def default_states(self) -> ObjectStates:
        return ObjectStates({oid: False for oid in self.openable_ids()}, None)

    def is_passable(self, cell: tuple[int, int]) -> bool:
        """Whether the agent may occupy the cell: floor with no bulky object."""
        if not self.in_bounds(cell):
            return False
        if self.terrain_at(cell) is not Terrain.FLOOR:
            return False
        obj = self.object_at(cell)
        return obj is None or obj.kind is ObjectKind.GOAL


# ---------------------------------------------------------------------------
# Scene parsing


def build_scene(text: str) -> Scene:
    """Parse the textual scene format into a validated Scene.

    The format is line oriented: a header line, ``key: value`` settings, a
    ``grid:`` block of terrain glyphs and an ``objects:`` block with one
    object per line, closed by ``end``. Errors carry line/column positions;
    validation failures name the offending object.
    """
    lines = text.splitlines()
    if not lines or lines[0].strip() != SCENE_FORMAT_HEADER:
        raise SceneParseError(f"expected header {SCENE_FORMAT_HEADER!r}", 1)
    scene_id = ""
    facing = 0
    standing = True
    rows: list[str] = []
    grid_line0 = 0
    objects: list[WorldObject] = []
    mode = "head"
    saw_end = False
    for lineno, raw in enumerate(lines[1:], start=2):
        line = raw.rstrip("\n")
        stripped = line.strip()
        if mode != "grid" and (not stripped or stripped.startswith("//")):
            continue
        if stripped == "end":
            saw_end = True
            break
        if mode == "head":
            if stripped == "grid:":
                mode = "grid"
                grid_line0 = lineno + 1
                continue
            if ":" not in stripped:
                raise SceneParseError("expected 'key: value' or 'grid:'", lineno)
            key, _, value = stripped.partition(":")
            key, value = key.strip(), value.strip()
            if key == "id":
                scene_id = value
            elif key == "facing":
                try:
                    facing = int(value)
                except ValueError:
                    raise SceneParseError("facing must be an integer", lineno) from None
                if facing not in ROTATIONS:
                    raise SceneParseError(f"facing must be one of {ROTATIONS}", lineno)
            elif key == "standing":
                if value not in ("true", "false"):
                    raise SceneParseError("standing must be true or false", lineno)
                standing = value == "true"
            else:
                raise SceneParseError(f"unknown setting {key!r}", lineno)
        elif mode == "grid":
            if stripped == "objects:":
                mode = "objects"
                continue
            if not stripped:
                continue
            rows.append(stripped)
        elif mode == "objects":
            objects.append(_parse_object_line(stripped, lineno))
    if not saw_end:
        raise SceneParseError("missing terminating 'end' line", len(lines))
    if not rows:
        raise SceneParseError("scene has no grid rows", grid_line0 or 2)
    width = len(rows[0])
    start_cell = None
    terrain_rows: list[tuple[Terrain, ...]] = []
    for dz, row in enumerate(rows):
        lineno = grid_line0 + dz
        if len(row) != width:
            raise SceneParseError(f"grid row has width {len(row)}, expected {width}", lineno, len(row) + 1)
        cells = []
        for dx, glyph in enumerate(row):
            if glyph == START_GLYPH:
                if start_cell is not None:
                    raise SceneParseError("more than one agent start glyph", lineno, dx + 1)
                start_cell = (dx, dz)
                cells.append(Terrain.FLOOR)
            elif glyph in GLYPH_TO_TERRAIN:
                cells.append(GLYPH_TO_TERRAIN[glyph])
            else:
                raise SceneParseError(f"unknown glyph {glyph!r}", lineno, dx + 1)
        terrain_rows.append(tuple(cells))
    if start_cell is None:
        raise SceneParseError("no agent start glyph in grid", grid_line0)
    scene = Scene(
        scene_id=scene_id or "unnamed",
        width=width,
        height=len(rows),
        terrain=tuple(terrain_rows),
        objects=tuple(objects),
        start_pose=Pose(start_cell[0], start_cell[1], facing, standing),
    )
    _validate_scene(scene)
    return scene


def _parse_object_line(line: str, lineno: int) -> WorldObject:
    parts = line.split()
    if len(parts) < 4:
        raise SceneParseError("object line needs: <id> <kind> <x> <z> [flags...]", lineno)
    object_id, kind_text, x_text, z_text = parts[:4]
    try:
        kind = ObjectKind(kind_text)
    except ValueError:
        raise SceneParseError(f"unknown object kind {kind_text!r}", lineno) from None
    try:
        cell = (int(x_text), int(z_text))
    except ValueError:
        raise SceneParseError("object coordinates must be integers", lineno) from None
    goal_type = None
    openable = False
    opaque = True
    height = "low"
    slots: set[Modality] = set()
    capacity = "large"
    for token in parts[4:]:
        if token == "openable":
            openable = True
        elif token == "transparent":
            opaque = False
        elif token.startswith("goal_type="):
            goal_type = token.split("=", 1)[1]
        elif token.startswith("height="):
            height = token.split("=", 1)[1]
        elif token.startswith("capacity="):
            capacity = token.split("=", 1)[1]
        elif token.startswith("slots="):
            for name in token.split("=", 1)[1].split(","):
                if not name:
                    continue
                try:
                    slots.add(Modality.from_wire(name))
                except ValueError:
                    raise SceneParseError(f"unknown slot {name!r}", lineno) from None
        else:
            raise SceneParseError(f"unknown object flag {token!r}", lineno)
    return WorldObject(
        object_id=object_id,
        kind=kind,
        cell=cell,
        goal_type=goal_type,
        openable=openable,
        opaque_when_closed=opaque,
        height=height,
        slots=frozenset(slots),
        capacity=capacity,
    )


def _validate_scene(scene: Scene) -> None:
    seen_ids: set[str] = set()
    seen_cells: set[tuple[int, int]] = set()
    for obj in scene.objects:
        obj.validate()
        if obj.object_id in seen_ids:
            raise SceneValidationError(f"duplicate object id {obj.object_id!r}")
        seen_ids.add(obj.object_id)
        if not scene.in_bounds(obj.cell):
            raise SceneValidationError(f"object {obj.object_id!r} is out of bounds at {obj.cell}")
        if obj.cell in seen_cells:
            raise SceneValidationError(f"object {obj.object_id!r} overlaps another object at {obj.cell}")
        seen_cells.add(obj.cell)
        if scene.terrain_at(obj.cell) is not Terrain.FLOOR:
            raise SceneValidationError(f"object {obj.object_id!r} must sit on floor, not {scene.terrain_at(obj.cell).value}")
        if obj.cell == scene.start_pose.cell and obj.kind is not ObjectKind.GOAL:
            raise SceneValidationError(f"object {obj.object_id!r} occupies the agent start cell")
    if not scene.is_passable(scene.start_pose.cell):
        raise SceneValidationError("agent start cell is not passable floor")


def scene_text(scene: Scene) -> str:
    """Serialize a Scene back to the textual format (inverse of build_scene)."""
    out = [SCENE_FORMAT_HEADER, f"id: {scene.scene_id}"]
    if scene.start_pose.rotation != 0:
        out.append(f"facing: {scene.start_pose.rotation}")
    if not scene.start_pose.standing:
        out.append("standing: false")
    out.append("grid:")
    for z in range(scene.height):
        row = []
        for x in range(scene.width):
            if (x, z) == scene.start_pose.cell:
                row.append(START_GLYPH)
            else:
                row.append(TERRAIN_TO_GLYPH[scene.terrain[z][x]])
        out.append("".join(row))
    out.append("objects:")
    for obj in scene.objects:
        parts = [obj.object_id, obj.kind.value, str(obj.cell[0]), str(obj.cell[1])]
        if obj.goal_type:
            parts.append(f"goal_type={obj.goal_type}")
        if obj.openable:
            parts.append("openable")
        if not obj.opaque_when_closed:
            parts.append("transparent")
        parts.append(f"height={obj.height}")
        if obj.slots:
            names = ",".join(m.wire for m in sorted(obj.slots, key=lambda m: m.value))
            parts.append(f"slots={names}")
        if obj.kind is ObjectKind.RECEPTACLE:
            parts.append(f"capacity={obj.capacity}")
        out.append(" ".join(parts))
    out.append("end")
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# Reachability


def reachable_cells(scene: Scene) -> frozenset[tuple[int, int]]:
    """Cells reachable from the start by 4-neighbor moves over passable floor."""
    cache = scene._caches.get("reachable_cells")
    if cache is not None:
        return cache
    start = scene.start_pose.cell
    seen = {start}
    frontier = [start]
    while frontier:
        x, z = frontier.pop()
        for nx, nz in ((x + 1, z), (x - 1, z), (x, z + 1), (x, z - 1)):
            if (nx, nz) not in seen and scene.is_passable((nx, nz)):
                seen.add((nx, nz))
                frontier.append((nx, nz))
    result = frozenset(seen)
    scene._caches["reachable_cells"] = result
    return result


def reachable_poses(scene: Scene) -> frozenset[Pose]:
    """Every pose the agent could occupy: reachable cells x rotations x stances."""
    cache = scene._caches.get("reachable_poses")
    if cache is not None:
        return cache
    poses = frozenset(
        Pose(x, z, r, s)
        for (x, z) in reachable_cells(scene)
        for r in ROTATIONS
        for s in (True, False)
    )
    scene._caches["reachable_poses"] = poses
    return poses


# ---------------------------------------------------------------------------
# Sight lines


def supercover_cells(a: tuple[int, int], b: tuple[int, int]) -> list[tuple[int, int]]:
    """All grid cells whose closed unit square the segment a->b touches.

    Cell squares are centered on integer coordinates. When the segment passes
    exactly through a corner both side cells are included, which keeps sight
    conservative: nothing is visible through the crack between two diagonal
    blockers. Endpoints are included.
    """
    (x0, z0), (x1, z1) = a, b
    dx, dz = x1 - x0, z1 - z0
    nx, nz = abs(dx), abs(dz)
    sx = 1 if dx > 0 else -1
    sz = 1 if dz > 0 else -1
    x, z = x0, z0
    cells = [(x, z)]
    ix = iz = 0
    while ix < nx or iz < nz:
        # Compare the parametric positions of the next vertical and horizontal
        # grid-line crossings: (1+2*ix)/(2*nx) vs (1+2*iz)/(2*nz).
        decision = (1 + 2 * ix) * nz - (1 + 2 * iz) * nx
        if decision == 0:
            # Exact corner: both side cells touch the segment at that point.
            cells.append((x + sx, z))
            cells.append((x, z + sz))
            x += sx
            z += sz
            ix += 1
            iz += 1
        elif decision < 0:
            x += sx
            ix += 1
        else:
            z += sz
            iz += 1
        cells.append((x, z))
    return cells


def _blocks_sight(
    scene: Scene,
    states: ObjectStates,
    cell: tuple[int, int],
    standing: bool,
    see_through_openables: bool,
) -> bool:
    terrain = scene.terrain_at(cell)
    if terrain is Terrain.WALL or terrain is Terrain.FURNITURE_HIGH:
        return True
    if terrain is Terrain.FURNITURE_LOW and not standing:
        return True
    obj = scene.object_at(cell)
    if obj is None or obj.kind is ObjectKind.GOAL:
        return False
    if see_through_openables and obj.openable:
        return False
    if obj.kind is ObjectKind.RECEPTACLE:
        if states.is_open(obj.object_id) or not obj.opaque_when_closed:
            return False
    # Closed opaque receptacle or occluder: blocks per height vs stance.
    return obj.height == "high" or not standing


def line_of_sight(
    scene: Scene,
    states: ObjectStates,
    pose: Pose,
    target: tuple[int, int],
    see_through_openables: bool = False,
) -> bool:
    """Whether the pose's eye reaches the target cell center unobstructed.

    The agent's own cell and the target cell never block themselves; every
    intermediate supercover cell is tested against stance-aware occlusion.
    Out-of-bounds targets are never visible.
    """
    if not scene.in_bounds(target):
        return False
    src = pose.cell
    if src == target:
        return True
    for cell in supercover_cells(src, target):
        if cell == src or cell == target:
            continue
        if not scene.in_bounds(cell):
            return False
        if _blocks_sight(scene, states, cell, pose.standing, see_through_openables):
            return False
    return True


def _cone_offsets(pose: Pose, cell: tuple[int, int]) -> tuple[int, int]:
    """(ahead, lateral-right) offsets of cell in the pose's frame."""
    fx, fz = pose.forward()
    rx, rz = pose.rightward()
    dx, dz = cell[0] - pose.x, cell[1] - pose.z
    return (dx * fx + dz * fz, dx * rx + dz * rz)


def in_view_cone(pose: Pose, cell: tuple[int, int]) -> bool:
    """The forward field of view: a 90 degree cone, widened near the agent so
    the whole 7x7 window lies inside it, plus the agent's own cell."""
    ahead, lateral = _cone_offsets(pose, cell)
    if ahead == 0 and lateral == 0:
        return True
    return ahead >= 1 and abs(lateral) <= max(ahead, 3)


def window_to_world(pose: Pose, i: int, j: int) -> tuple[int, int]:
    """World cell of window index (i, j): i cells ahead, j-4 to the right."""
    fx, fz = pose.forward()
    rx, rz = pose.rightward()
    lateral = j - WINDOW_CENTER_J
    return (pose.x + fx * i + rx * lateral, pose.z + fz * i + rz * lateral)


def world_to_window(pose: Pose, cell: tuple[int, int]) -> tuple[int, int] | None:
    ahead, lateral = _cone_offsets(pose, cell)
    if 1 <= ahead <= WINDOW_DEPTH and abs(lateral) <= (WINDOW_WIDTH // 2):
        return (ahead, WINDOW_CENTER_J + lateral)
    return None


# ---------------------------------------------------------------------------
# View window


@dataclass(frozen=True, slots=True)
class ViewCell:
    i: int
    j: int
    world: tuple[int, int]
    in_bounds: bool
    visible: bool
    terrain: Terrain | None
    passable: bool
    object_id: str | None
    openable: bool
    is_open: bool
    occupants: tuple[tuple[Modality, str], ...]  # visible loose objects by modality


@dataclass(frozen=True)
class ViewWindow:
    pose: Pose
    cells: tuple[ViewCell, ...]  # row-major: (i-1) * 7 + (j-1)

    def at(self, i: int, j: int) -> ViewCell:
        if not (1 <= i <= WINDOW_DEPTH and 1 <= j <= WINDOW_WIDTH):
            raise IndexError(f"window index ({i}, {j}) outside 1..7")
        return self.cells[(i - 1) * WINDOW_WIDTH + (j - 1)]

    def __iter__(self) -> Iterator[ViewCell]:
        return iter(self.cells)

    def visible_cells(self) -> list[ViewCell]:
        return [c for c in self.cells if c.visible]


def _window_core(scene: Scene, states: ObjectStates, pose: Pose) -> tuple:
    """Cached geometry: (in_bounds, visible) per window index for the pose and
    the scene's current open-flag configuration."""
    cache = scene._caches.setdefault("window_core", {})
    key = (pose.key(), states.cache_key())
    hit = cache.get(key)
    if hit is not None:
        return hit
    flags = []
    for i in range(1, WINDOW_DEPTH + 1):
        for j in range(1, WINDOW_WIDTH + 1):
            cell = window_to_world(pose, i, j)
            inside = scene.in_bounds(cell)
            visible = inside and line_of_sight(scene, states, pose, cell)
            flags.append((cell, inside, visible))
    result = tuple(flags)
    cache[key] = result
    return result


def view_window(scene: Scene, states: ObjectStates, pose: Pose) -> ViewWindow:
    """The 7x7 egocentric window at the pose.

    Per-cell occupancy lists the loose object's id under its modality when it
    is discernible from here: a contained object shows only while its
    container is open; on-top and behind placements show whenever the cell is
    visible.
    """
    core = _window_core(scene, states, pose)
    resting = states.resting
    cells = []
    idx = 0
    for i in range(1, WINDOW_DEPTH + 1):
        for j in range(1, WINDOW_WIDTH + 1):
            cell, inside, visible = core[idx]
            idx += 1
            terrain = scene.terrain_at(cell) if inside else None
            obj = scene.object_at(cell) if inside else None
            occupants: tuple[tuple[Modality, str], ...] = ()
            if resting is not None and visible and resting.cell == cell:
                if not resting_concealed(scene, states, resting):
                    occupants = ((resting.modality, resting.object_id),)
            cells.append(
                ViewCell(
                    i=i,
                    j=j,
                    world=cell,
                    in_bounds=inside,
                    visible=visible,
                    terrain=terrain,
                    passable=scene.is_passable(cell),
                    object_id=obj.object_id if obj else None,
                    openable=bool(obj and obj.openable),
                    is_open=bool(obj and states.is_open(obj.object_id)),
                    occupants=occupants,
                )
            )
    return ViewWindow(pose=pose, cells=tuple(cells))


def free_space(scene: Scene, states: ObjectStates, pose: Pose) -> int:
    """Number of visible window cells the agent could itself occupy."""
    core = _window_core(scene, states, pose)
    count = 0
    for cell, inside, visible in core:
        if visible and scene.is_passable(cell):
            count += 1
    return count


# ---------------------------------------------------------------------------
# Object visibility


def _target_visible(
    scene: Scene,
    states: ObjectStates,
    pose: Pose,
    cell: tuple[int, int],
    max_range: float | None,
    see_through_openables: bool,
) -> bool:
    if not scene.in_bounds(cell):
        return False
    if not in_view_cone(pose, cell):
        return False
    if max_range is not None:
        dx, dz = cell[0] - pose.x, cell[1] - pose.z
        if dx * dx + dz * dz > max_range * max_range:
            return False
    return line_of_sight(scene, states, pose, cell, see_through_openables)


def resting_concealed(scene: Scene, states: ObjectStates, resting: Resting) -> bool:
    """True when the loose object sits inside a closed opaque container."""
    if resting.modality is not Modality.CONTAINED_IN or resting.container_id is None:
        return False
    container = scene.object(resting.container_id)
    return container.opaque_when_closed and not states.is_open(resting.container_id)


def object_visible(
    scene: Scene,
    states: ObjectStates,
    pose: Pose,
    object_id: str,
    max_range: float | None = None,
    see_through_openables: bool = False,
) -> bool:
    """Whether the object can be seen from the pose.

    Applies the forward view cone, optional range bound (cell-center
    Euclidean distance), stance-aware line of sight, and containment: an
    object inside a closed opaque container is not visible unless
    ``see_through_openables`` is set (used by the search oracle).
    """
    resting = states.resting
    if resting is not None and resting.object_id == object_id:
        if resting_concealed(scene, states, resting) and not see_through_openables:
            return False
        return _target_visible(scene, states, pose, resting.cell, max_range, see_through_openables)
    obj = scene.object(object_id)
    return _target_visible(scene, states, pose, obj.cell, max_range, see_through_openables)


def pose_extrapolation(pose: Pose) -> tuple[Pose, Pose, Pose]:
    """One optimistic step from a pose: ahead, then stay or sidestep."""
    ahead = pose.moved(ahead=1)
    return ahead, ahead.moved(right=-1), ahead.moved(right=1)


def extrapolate_poses(poses: Iterable[Pose]) -> set[Pose]:
    """The visited set plus one optimistic step per pose, ignoring collisions
    and scene bounds. Supersets the input by construction."""
    out = set(poses)
    for pose in tuple(out):
        out.update(pose_extrapolation(pose))
    return out
