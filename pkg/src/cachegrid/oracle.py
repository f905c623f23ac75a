"""Ground-truth oracles: exhaustive search, spot enumeration, difficulty labels.

Everything here works on the true scene (no belief or learning): a teleporting
breadth-first seeker that looks through openable containers, the set of all
physically admissible hiding spots with their visibility fractions, nearest-rank
difficulty labeling, and shortest action paths to a pose that can claim the
object. The game's belief-world rollouts reuse the same machinery on
reconstructed scenes.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, replace

import numpy as np

from .gamecore import Action
from .world import (
    INTERACT_RANGE,
    ROTATIONS,
    GOAL_SIZE,
    SIZE_RANKS,
    Modality,
    ObjectKind,
    ObjectStates,
    Pose,
    Resting,
    Scene,
    object_visible,
    reachable_cells,
    reachable_poses,
    view_window,
    world_to_window,
)

GOAL_ID = "goal"


def _states_with(scene: Scene, resting: Resting, object_states: ObjectStates | None) -> ObjectStates:
    states = object_states.copy() if object_states is not None else scene.default_states()
    states.resting = resting
    return states


# ---------------------------------------------------------------------------
# Visibility census


def visible_from_fraction(
    scene: Scene, resting: Resting, object_states: ObjectStates | None = None
) -> float:
    """Fraction of reachable poses that can see the object, unbounded range."""
    states = _states_with(scene, resting, object_states)
    poses = reachable_poses(scene)
    seen = sum(
        1 for pose in poses if object_visible(scene, states, pose, resting.object_id)
    )
    return seen / len(poses)


# ---------------------------------------------------------------------------
# Teleporting breadth-first seeker


@dataclass(frozen=True, slots=True)
class BfsResult:
    found: bool
    steps: int
    cell: tuple[int, int] | None


def bfs_seek(
    scene: Scene,
    resting: Resting,
    seeker_start: Pose | tuple[int, int] | None = None,
    object_states: ObjectStates | None = None,
) -> BfsResult:
    """Teleporting seeker: visit reachable cells in breadth-first order from
    the start (ties within a ring broken lexicographically by (z, x)); at each
    cell try all eight rotation/stance poses with see-through-openables,
    unbounded-range visibility. Steps counts visited cells including the one
    that first sees the object; an unfindable object costs every cell.
    """
    states = _states_with(scene, resting, object_states)
    start_cell = _as_cell(seeker_start) if seeker_start is not None else scene.start_pose.cell
    order = bfs_cell_order(scene, start_cell)
    for steps, cell in enumerate(order, start=1):
        for rotation in ROTATIONS:
            for standing in (True, False):
                pose = Pose(cell[0], cell[1], rotation, standing)
                if object_visible(
                    scene, states, pose, resting.object_id, see_through_openables=True
                ):
                    return BfsResult(True, steps, cell)
    return BfsResult(False, len(order), None)


def _as_cell(value) -> tuple[int, int]:
    if isinstance(value, Pose):
        return value.cell
    return tuple(value)


def bfs_cell_order(scene: Scene, start: tuple[int, int]) -> list[tuple[int, int]]:
    """Reachable cells in hop-distance rings, (z, x)-sorted inside each ring."""
    if not scene.is_passable(start):
        raise ValueError(f"seeker start {start} is not a passable cell")
    dist = {start: 0}
    frontier = [start]
    rings = [[start]]
    while frontier:
        ring: list[tuple[int, int]] = []
        for x, z in frontier:
            for nxt in ((x + 1, z), (x - 1, z), (x, z + 1), (x, z - 1)):
                if nxt not in dist and scene.is_passable(nxt):
                    dist[nxt] = dist[(x, z)] + 1
                    ring.append(nxt)
        if ring:
            rings.append(sorted(ring, key=lambda c: (c[1], c[0])))
        frontier = ring
    order: list[tuple[int, int]] = []
    for ring in rings:
        order.extend(sorted(ring, key=lambda c: (c[1], c[0])))
    return order


# ---------------------------------------------------------------------------
# Hiding spots


@dataclass(frozen=True, slots=True)
class HidingSpot:
    cell: tuple[int, int]
    modality: Modality
    container_id: str | None
    v: float  # visible-from fraction with containers closed
    label: str | None = None

    def resting(self) -> Resting:
        return Resting(GOAL_ID, self.cell, self.modality, self.container_id)


def enumerate_spots(scene: Scene, goal_type: str) -> tuple[HidingSpot, ...]:
    """Every physically admissible (cell, modality, container) triple.

    On-top spots cover each passable floor cell and every object with an
    OnTop slot; contained spots need an openable receptacle whose capacity
    admits the goal type; behind spots are passable cells 4-adjacent to an
    object with a Behind slot. The visibility fraction v is computed with
    all containers closed.
    """
    goal_rank = SIZE_RANKS[GOAL_SIZE[goal_type]]
    triples: set[tuple[tuple[int, int], Modality, str | None]] = set()
    for z in range(scene.height):
        for x in range(scene.width):
            if scene.is_passable((x, z)):
                triples.add(((x, z), Modality.ON_TOP, None))
    for obj in scene.objects:
        if obj.kind is ObjectKind.GOAL:
            continue
        if Modality.ON_TOP in obj.slots:
            triples.add((obj.cell, Modality.ON_TOP, obj.object_id))
        if (
            Modality.CONTAINED_IN in obj.slots
            and obj.openable
            and goal_rank <= SIZE_RANKS[obj.capacity]
        ):
            triples.add((obj.cell, Modality.CONTAINED_IN, obj.object_id))
        if Modality.BEHIND in obj.slots:
            x, z = obj.cell
            for nxt in ((x + 1, z), (x - 1, z), (x, z + 1), (x, z - 1)):
                if scene.is_passable(nxt):
                    triples.add((nxt, Modality.BEHIND, obj.object_id))
    spots = []
    for cell, modality, container in sorted(
        triples, key=lambda t: (t[0][1], t[0][0], t[1].value, t[2] or "")
    ):
        resting = Resting(GOAL_ID, cell, modality, container)
        spots.append(
            HidingSpot(cell, modality, container, visible_from_fraction(scene, resting))
        )
    return tuple(spots)


# ---------------------------------------------------------------------------
# Difficulty


def nearest_rank_percentile(values, percent: float) -> float:
    """Classic nearest-rank percentile: the ceil(p/100 * n)-th smallest value."""
    ordered = sorted(values)
    if not ordered:
        raise ValueError("percentile of an empty collection")
    rank = max(1, math.ceil(percent / 100.0 * len(ordered)))
    return ordered[rank - 1]


def label_difficulty(spots) -> tuple[HidingSpot, ...]:
    """Label each spot hard, medium or easy by its visibility fraction.

    Hard: v at or below the 5th nearest-rank percentile. Medium: not hard,
    v <= 0.15 and at or below the 20th percentile. Easy: the rest. Threshold
    ties all land in the harder class.
    """
    if not spots:
        raise ValueError("no spots to label")
    values = [s.v for s in spots]
    p5 = nearest_rank_percentile(values, 5)
    p20 = nearest_rank_percentile(values, 20)
    labeled = []
    for spot in spots:
        if spot.v <= p5:
            label = "hard"
        elif spot.v <= 0.15 and spot.v <= p20:
            label = "medium"
        else:
            label = "easy"
        labeled.append(replace(spot, label=label))
    return tuple(labeled)


def sample_spot_sets(labeled_spots, rng: np.random.Generator, per_class: int = 20) -> dict:
    """Up to per_class spots per difficulty, sampled without replacement."""
    out: dict[str, list[HidingSpot]] = {"hard": [], "medium": [], "easy": []}
    for label in out:
        pool = [s for s in labeled_spots if s.label == label]
        if len(pool) <= per_class:
            out[label] = list(pool)
        else:
            picks = rng.choice(len(pool), size=per_class, replace=False)
            out[label] = [pool[i] for i in sorted(picks)]
    return out


# ---------------------------------------------------------------------------
# Shortest path to a claimable pose

_NAV_ACTIONS = (
    Action("MoveAhead"),
    Action("MoveLeft"),
    Action("MoveRight"),
    Action("RotateLeft"),
    Action("RotateRight"),
    Action("Stand"),
    Action("Crouch"),
)


def _nav_successor(scene: Scene, pose: Pose, action: Action) -> Pose | None:
    name = action.name
    if name == "MoveAhead":
        target = pose.moved(ahead=1)
    elif name == "MoveLeft":
        target = pose.moved(right=-1)
    elif name == "MoveRight":
        target = pose.moved(right=1)
    elif name == "RotateLeft":
        return pose.rotated(-1)
    elif name == "RotateRight":
        return pose.rotated(1)
    elif name == "Stand":
        return pose.with_stance(True) if not pose.standing else None
    elif name == "Crouch":
        return pose.with_stance(False) if pose.standing else None
    else:
        return None
    return target if scene.is_passable(target.cell) else None


def _pose_graph(scene: Scene) -> dict:
    """Forward navigation adjacency over every passable pose (cached)."""
    cached = scene._caches.get("pose_graph")
    if cached is not None:
        return cached
    graph: dict[Pose, tuple[tuple[Action, Pose], ...]] = {}
    for z in range(scene.height):
        for x in range(scene.width):
            if not scene.is_passable((x, z)):
                continue
            for rotation in ROTATIONS:
                for standing in (True, False):
                    pose = Pose(x, z, rotation, standing)
                    edges = []
                    for action in _NAV_ACTIONS:
                        nxt = _nav_successor(scene, pose, action)
                        if nxt is not None:
                            edges.append((action, nxt))
                    graph[pose] = tuple(edges)
    scene._caches["pose_graph"] = graph
    return graph


@dataclass(frozen=True)
class SeekField:
    """Distance-to-claim field over (pose, container-opened) search states."""

    distance: dict
    container_id: str | None  # None when opening is irrelevant
    open_action: dict  # pose -> OpenAt action that opens the container there
    claim_range: float

    def dist(self, pose: Pose, opened: bool) -> float:
        return self.distance.get((pose, opened), math.inf)


def _claim_states(scene: Scene, resting: Resting, base: ObjectStates, opened: bool) -> ObjectStates:
    states = base.copy()
    states.resting = resting
    if resting.modality is Modality.CONTAINED_IN and resting.container_id is not None:
        states.open_flags[resting.container_id] = opened or base.is_open(resting.container_id)
    return states


def seek_field(
    scene: Scene,
    resting: Resting,
    object_states: ObjectStates | None = None,
    claim_range: float = INTERACT_RANGE,
) -> SeekField:
    """Reverse BFS over (pose, opened) states toward claim-capable poses.

    ``opened`` tracks only the container concealing the object; it is the one
    open flag that changes whether the object can ever be claimed. An OpenAt
    edge exists where the container sits at a visible window cell.
    """
    base = object_states.copy() if object_states is not None else scene.default_states()
    needs_open = False
    container = resting.container_id
    if (
        resting.modality is Modality.CONTAINED_IN
        and container is not None
        and scene.object(container).opaque_when_closed
        and not base.is_open(container)
    ):
        needs_open = True
    graph = _pose_graph(scene)
    layers = (False, True) if needs_open else (False,)
    states_by_layer = {
        opened: _claim_states(scene, resting, base, opened) for opened in layers
    }
    # Goal nodes: claim succeeds right here.
    goals = []
    for pose in graph:
        for opened in layers:
            if object_visible(
                scene, states_by_layer[opened], pose, resting.object_id, max_range=claim_range
            ):
                goals.append((pose, opened))
    # Open edges: (pose, closed) -> (pose, open) where the container is at a
    # visible window cell of the pose.
    open_action: dict[Pose, Action] = {}
    if needs_open:
        container_cell = scene.object(container).cell
        for pose in graph:
            index = world_to_window(pose, container_cell)
            if index is None:
                continue
            window = view_window(scene, states_by_layer[False], pose)
            if window.at(*index).visible:
                open_action[pose] = Action("OpenAt", index)
    # Predecessor map over (pose, layer) nodes.
    preds: dict[tuple[Pose, bool], list[tuple[Pose, bool]]] = {}
    for pose, edges in graph.items():
        for opened in layers:
            for _, nxt in edges:
                preds.setdefault((nxt, opened), []).append((pose, opened))
        if pose in open_action:
            preds.setdefault((pose, True), []).append((pose, False))
    distance: dict[tuple[Pose, bool], int] = {}
    queue = deque()
    for node in goals:
        distance[node] = 0
        queue.append(node)
    while queue:
        node = queue.popleft()
        for prev in preds.get(node, ()):
            if prev not in distance:
                distance[prev] = distance[node] + 1
                queue.append(prev)
    return SeekField(distance, container if needs_open else None, open_action, claim_range)


def shortest_path_to_visibility(
    scene: Scene,
    start_pose: Pose,
    resting: Resting,
    object_states: ObjectStates | None = None,
    claim_range: float = INTERACT_RANGE,
) -> list[Action] | None:
    """Minimal action sequence after which the object is claimably visible.

    Returns [] when the start pose already qualifies, None when no sequence
    works. Deterministic: ties resolve in the fixed navigation action order,
    with OpenAt taken when it strictly shortens the remaining distance.
    """
    field = seek_field(scene, resting, object_states, claim_range)
    graph = _pose_graph(scene)
    current = start_pose
    layer = False
    if field.dist(current, layer) == math.inf:
        return None
    path: list[Action] = []
    guard = 0
    while field.dist(current, layer) > 0:
        guard += 1
        if guard > len(graph) * 4 + 8:
            raise RuntimeError("path extraction failed to make progress")
        best = None
        remaining = field.dist(current, layer)
        if not layer and current in field.open_action:
            if field.dist(current, True) == remaining - 1:
                best = (field.open_action[current], current, True)
        if best is None:
            for action, nxt in graph[current]:
                if field.dist(nxt, layer) == remaining - 1:
                    best = (action, nxt, layer)
                    break
        if best is None:
            raise RuntimeError("inconsistent seek field")
        action, current, layer = best
        path.append(action)
    return path
