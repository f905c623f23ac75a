"""Five-stage hide-and-seek game engine.

Stages run in a fixed order for one trial:

- EM: the hider explores and maps the scene (budgeted steps).
- PS: the hider picks a hiding pose with a single parametric
  ChooseHidePose action, retried up to a fixed budget; if every try
  fails it falls back to its current pose.
- OH: the hider stages the placement (stance, opening, PlaceAt,
  ReadyForSeeker) within a step budget.
- OM: each PlaceAt spawns a manipulation sub-episode where a hand
  carries the object cell to cell and drops it.
- S: the seeker, starting from the hider's start pose, searches and
  claims the object.

Failed actions never mutate poses, object states, or the resting record;
illegal actions (wrong stage, malformed parameters) raise instead of
failing. All transitions are deterministic.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from enum import Enum

from .world import (
    INTERACT_RANGE,
    ROTATIONS,
    WINDOW_DEPTH,
    WINDOW_WIDTH,
    GOAL_TYPES,
    GOAL_SIZE,
    SIZE_RANKS,
    Modality,
    ObjectKind,
    ObjectStates,
    Pose,
    Resting,
    Scene,
    Terrain,
    line_of_sight,
    object_visible,
    view_window,
    window_to_world,
    world_to_window,
)

GOAL_OBJECT_ID = "goal"


class Stage(Enum):
    EM = "EM"
    PS = "PS"
    OH = "OH"
    OM = "OM"
    S = "S"
    DONE = "DONE"


class IllegalActionError(ValueError):
    """Action cannot even be attempted: wrong stage or malformed parameters."""


# ---------------------------------------------------------------------------
# Actions

MOVE_NAMES = ("MoveAhead", "MoveLeft", "MoveRight")
ROTATE_NAMES = ("RotateLeft", "RotateRight")
STANCE_NAMES = ("Stand", "Crouch")
HAND_NAMES = (
    "MoveHandAhead",
    "MoveHandLeft",
    "MoveHandRight",
    "MoveHandBack",
    "MoveHandUp",
    "MoveHandDown",
)

_PARAM_COUNTS = {
    "OpenAt": 2,
    "PlaceAt": 3,
    "ChooseHidePose": 4,
}


@dataclass(frozen=True, slots=True)
class Action:
    name: str
    params: tuple[int, ...] = ()

    def __post_init__(self):
        expected = _PARAM_COUNTS.get(self.name, 0)
        if len(self.params) != expected:
            raise IllegalActionError(
                f"{self.name} takes {expected} parameters, got {len(self.params)}"
            )
        if self.name == "OpenAt":
            i, j = self.params
            if not (1 <= i <= WINDOW_DEPTH and 1 <= j <= WINDOW_WIDTH):
                raise IllegalActionError(f"OpenAt index ({i}, {j}) outside the 7x7 window")
        elif self.name == "PlaceAt":
            m, i, j = self.params
            if m not in (0, 1, 2):
                raise IllegalActionError(f"PlaceAt modality must be 0, 1 or 2, got {m}")
            if not (1 <= i <= WINDOW_DEPTH and 1 <= j <= WINDOW_WIDTH):
                raise IllegalActionError(f"PlaceAt index ({i}, {j}) outside the 7x7 window")
        elif self.name == "ChooseHidePose":
            _, _, rotation, standing = self.params
            if rotation not in ROTATIONS:
                raise IllegalActionError(f"ChooseHidePose rotation must be one of {ROTATIONS}")
            if standing not in (0, 1):
                raise IllegalActionError("ChooseHidePose standing flag must be 0 or 1")

    @property
    def wire(self) -> str:
        if not self.params:
            return self.name
        return self.name + "|" + ",".join(str(p) for p in self.params)

    def __str__(self) -> str:
        return self.wire


_KNOWN_NAMES = set(
    MOVE_NAMES
    + ROTATE_NAMES
    + STANCE_NAMES
    + HAND_NAMES
    + ("OpenAt", "CloseObjects", "PlaceAt", "ReadyForSeeker", "ClaimVisible", "ChooseHidePose", "DropObject")
)


def parse_action(text: str) -> Action:
    """Parse the wire form, e.g. ``PlaceAt|1,3,4`` or ``MoveAhead``."""
    name, _, raw = text.partition("|")
    if name not in _KNOWN_NAMES:
        raise IllegalActionError(f"unknown action name {name!r}")
    if not raw:
        return Action(name)
    try:
        params = tuple(int(p) for p in raw.split(","))
    except ValueError:
        raise IllegalActionError(f"non-integer parameters in {text!r}") from None
    return Action(name, params)


# ---------------------------------------------------------------------------
# Outcomes

N_OUTCOMES = 1 + 2 * 3 * WINDOW_DEPTH * WINDOW_WIDTH  # fail plus (s, m, i, j)


@dataclass(frozen=True, slots=True)
class HideOutcome:
    """Result of the object-hiding stage: fail, or (standing, m, i, j)."""

    standing: bool | None = None
    modality: int | None = None
    i: int | None = None
    j: int | None = None

    @classmethod
    def fail(cls) -> "HideOutcome":
        return cls()

    @classmethod
    def of(cls, standing: bool, modality: int, i: int, j: int) -> "HideOutcome":
        return cls(standing, modality, i, j)

    @property
    def is_fail(self) -> bool:
        return self.standing is None

    def index(self) -> int:
        """Dense index into the outcome space: 0 is fail, then (s, m, i, j)."""
        if self.is_fail:
            return 0
        flat = ((int(self.standing) * 3 + self.modality) * WINDOW_DEPTH + (self.i - 1))
        return 1 + flat * WINDOW_WIDTH + (self.j - 1)

    @property
    def wire(self) -> str:
        if self.is_fail:
            return "fail"
        return f"{int(self.standing)},{self.modality},{self.i},{self.j}"

    @classmethod
    def from_wire(cls, text: str) -> "HideOutcome":
        if text == "fail":
            return cls.fail()
        parts = text.split(",")
        if len(parts) != 4:
            raise ValueError(f"bad outcome {text!r}")
        s, m, i, j = (int(p) for p in parts)
        return cls.of(bool(s), m, i, j)


def outcome_from_index(index: int) -> HideOutcome:
    if not (0 <= index < N_OUTCOMES):
        raise ValueError(f"outcome index {index} outside 0..{N_OUTCOMES - 1}")
    if index == 0:
        return HideOutcome.fail()
    flat, j = divmod(index - 1, WINDOW_WIDTH)
    flat, i = divmod(flat, WINDOW_DEPTH)
    s, m = divmod(flat, 3)
    return HideOutcome.of(bool(s), m, i + 1, j + 1)


ALL_OUTCOMES = tuple(outcome_from_index(k) for k in range(N_OUTCOMES))


# ---------------------------------------------------------------------------
# Config, events, placement


@dataclass(frozen=True, slots=True)
class GameConfig:
    em_max_steps: int | None = 200
    oh_max_steps: int | None = 15
    om_max_steps: int | None = 50
    s_max_steps: int | None = 500
    ps_max_tries: int = 10
    hand_range: int = INTERACT_RANGE  # cells the hand may stray from the agent
    percentile_rollouts: int = 100


@dataclass(frozen=True, slots=True)
class Event:
    kind: str
    data: tuple = ()


@dataclass(frozen=True, slots=True)
class PlacementResolution:
    """Where a dropped object came to rest, seen from the OM start pose."""

    cell: tuple[int, int]
    window_index: tuple[int, int] | None  # (i, j) in the OM start window
    modalities: frozenset[Modality]
    container_id: str | None
    resting_modality: Modality
    off_window: bool
    success: bool


@dataclass(slots=True)
class HistoryStep:
    stage: Stage
    index: int  # per-episode step counter, 0-based
    action: Action
    success: bool
    pose_after: Pose
    newly_opened: bool = False
    opened_id: str | None = None
    claim_missing: bool = False  # ClaimVisible failed with the object truly out of view
    om_index: int | None = None
    place_pending: bool = False  # PlaceAt whose success resolves with its OM episode


@dataclass(slots=True)
class OmEpisode:
    index: int
    start_pose: Pose
    target: tuple[int, int, int]  # (m, i, j)
    place_step: HistoryStep
    steps: list[HistoryStep] = field(default_factory=list)
    resolution: PlacementResolution | None = None
    timed_out: bool = False

    @property
    def success(self) -> bool:
        return self.resolution is not None and self.resolution.success


@dataclass(slots=True)
class StepResult:
    success: bool
    events: tuple[Event, ...] = ()


# ---------------------------------------------------------------------------
# Game state


@dataclass(slots=True)
class GameState:
    scene: Scene
    goal_type: str
    config: GameConfig
    seed: int
    stage: Stage = Stage.EM
    states: ObjectStates = None  # type: ignore[assignment]
    hider_pose: Pose = None  # type: ignore[assignment]
    seeker_pose: Pose | None = None
    em_final_pose: Pose | None = None
    held: bool = True
    hand: tuple[tuple[int, int], str] | None = None  # (cell, "low"/"high")
    em_t: int = 0
    ps_tries: int = 0
    oh_t: int = 0
    s_t: int = 0
    found: bool | None = None
    history: list[HistoryStep] = field(default_factory=list)
    om_episodes: list[OmEpisode] = field(default_factory=list)
    em_pose_log: list[Pose] = field(default_factory=list)
    s_pose_log: list[Pose] = field(default_factory=list)
    _episode_opened: set[str] = field(default_factory=set)
    _oh_opened_saved: set[str] | None = None  # OH's set, parked while an OM sub-episode runs
    _oh_place_success: HideOutcome | None = None

    @property
    def active_pose(self) -> Pose:
        return self.seeker_pose if self.stage is Stage.S else self.hider_pose

    def hide_outcome(self) -> HideOutcome:
        """The realized outcome of the hiding phase; valid once OH has ended."""
        if self.stage in (Stage.EM, Stage.PS, Stage.OH, Stage.OM):
            raise ValueError(f"hide outcome undefined during stage {self.stage.value}")
        return self._oh_place_success if self._oh_place_success is not None else HideOutcome.fail()

    def state_hash(self) -> str:
        """Digest of everything failed actions must leave untouched."""
        resting = self.states.resting
        core = (
            self.hider_pose.key(),
            self.seeker_pose.key() if self.seeker_pose else None,
            tuple(sorted(self.states.open_flags.items())),
            (resting.object_id, resting.cell, resting.modality.value, resting.container_id)
            if resting
            else None,
            self.held,
            self.hand,
        )
        return hashlib.sha256(repr(core).encode()).hexdigest()


def start_game(scene: Scene, goal_type: str, seed: int, config: GameConfig | None = None) -> GameState:
    if goal_type not in GOAL_TYPES:
        raise ValueError(f"goal_type must be one of {GOAL_TYPES}, got {goal_type!r}")
    config = config or GameConfig()
    state = GameState(
        scene=scene,
        goal_type=goal_type,
        config=config,
        seed=seed,
        states=scene.default_states(),
        hider_pose=scene.start_pose,
    )
    state.em_pose_log.append(scene.start_pose)
    if config.em_max_steps == 0:
        state.stage = Stage.PS
        state.em_final_pose = state.hider_pose
    return state


# ---------------------------------------------------------------------------
# Legal action spaces (fixed per stage, failure decided at runtime)


def _open_at_actions() -> list[Action]:
    return [Action("OpenAt", (i, j)) for i in range(1, WINDOW_DEPTH + 1) for j in range(1, WINDOW_WIDTH + 1)]


def _place_at_actions() -> list[Action]:
    return [
        Action("PlaceAt", (m, i, j))
        for m in (0, 1, 2)
        for i in range(1, WINDOW_DEPTH + 1)
        for j in range(1, WINDOW_WIDTH + 1)
    ]


_EM_ACTIONS = (
    [Action(n) for n in MOVE_NAMES + ROTATE_NAMES + STANCE_NAMES]
    + _open_at_actions()
    + [Action("CloseObjects")]
)
_OH_ACTIONS = (
    [Action(n) for n in STANCE_NAMES]
    + _open_at_actions()
    + [Action("CloseObjects")]
    + _place_at_actions()
    + [Action("ReadyForSeeker")]
)
_OM_ACTIONS = [Action(n) for n in HAND_NAMES] + [Action("DropObject")] + _open_at_actions()
_S_ACTIONS = _EM_ACTIONS + [Action("ClaimVisible")]

_STAGE_ACTIONS = {
    Stage.EM: tuple(_EM_ACTIONS),
    Stage.PS: (Action("ChooseHidePose", (0, 0, 0, 1)),),  # template; parameters are free
    Stage.OH: tuple(_OH_ACTIONS),
    Stage.OM: tuple(_OM_ACTIONS),
    Stage.S: tuple(_S_ACTIONS),
    Stage.DONE: (),
}


def legal_actions(state: GameState) -> tuple[Action, ...]:
    """The stage's ordered action space. Parametric actions are enumerated,
    except ChooseHidePose whose offsets are unbounded (a template is listed)."""
    return _STAGE_ACTIONS[state.stage]


def action_legal_in_stage(action: Action, stage: Stage) -> bool:
    if stage is Stage.PS:
        return action.name == "ChooseHidePose"
    if stage is Stage.EM:
        names = MOVE_NAMES + ROTATE_NAMES + STANCE_NAMES + ("OpenAt", "CloseObjects")
    elif stage is Stage.OH:
        names = STANCE_NAMES + ("OpenAt", "CloseObjects", "PlaceAt", "ReadyForSeeker")
    elif stage is Stage.OM:
        names = HAND_NAMES + ("DropObject", "OpenAt")
    elif stage is Stage.S:
        names = MOVE_NAMES + ROTATE_NAMES + STANCE_NAMES + ("OpenAt", "CloseObjects", "ClaimVisible")
    else:
        return False
    return action.name in names


# ---------------------------------------------------------------------------
# Placement resolution


def _ghost_visible(scene: Scene, pose: Pose, target: tuple[int, int]) -> bool:
    """Sight test with every object and all furniture treated transparent.

    Mirrors the check for whether a dropped object could be seen at all once
    occluding objects are disregarded; only walls (and scene bounds) block.
    """
    if not scene.in_bounds(target):
        return False
    src = pose.cell
    if src == target:
        return True
    from .world import supercover_cells

    for cell in supercover_cells(src, target):
        if cell in (src, target):
            continue
        if not scene.in_bounds(cell) or scene.terrain_at(cell) is Terrain.WALL:
            return False
    return True


def _landing(scene: Scene, states: ObjectStates, goal_type: str, cell: tuple[int, int]) -> tuple[Modality, str | None]:
    """Modality and supporting object for an object coming to rest at cell."""
    obj = scene.object_at(cell)
    if obj is None or obj.kind is ObjectKind.GOAL:
        return (Modality.ON_TOP, None)
    if (
        obj.openable
        and states.is_open(obj.object_id)
        and Modality.CONTAINED_IN in obj.slots
        and SIZE_RANKS[GOAL_SIZE[goal_type]] <= SIZE_RANKS[obj.capacity]
    ):
        return (Modality.CONTAINED_IN, obj.object_id)
    if Modality.ON_TOP in obj.slots:
        return (Modality.ON_TOP, obj.object_id)
    # Hand placement rules keep the hand away from cells that accept nothing,
    # but the fallback drop can land here: the object rests beside the floor.
    return (Modality.ON_TOP, None)


def resolve_placement(state: GameState, drop_cell: tuple[int, int] | None = None) -> PlacementResolution:
    """Resolution of dropping the object at the hand cell (or drop_cell).

    Pure: does not mutate the state. Success is judged against the active OM
    episode's commanded (m, i, j): the landed window cell must match, with one
    row of slack for ContainedIn and Behind placements, and the commanded
    modality must be among the landed ones.
    """
    if state.stage is not Stage.OM or not state.om_episodes:
        raise ValueError("resolve_placement requires an active OM episode")
    episode = state.om_episodes[-1]
    origin = episode.start_pose
    cell = drop_cell if drop_cell is not None else state.hand[0]
    resting_modality, container_id = _landing(state.scene, state.states, state.goal_type, cell)
    window_index = world_to_window(origin, cell)
    raw = line_of_sight(state.scene, state.states, origin, cell) and state.scene.in_bounds(cell)
    ghost = _ghost_visible(state.scene, origin, cell)
    modalities: set[Modality] = set()
    if raw:
        modalities.add(Modality.ON_TOP)
    elif ghost:
        modalities.add(Modality.BEHIND)
    if resting_modality is Modality.CONTAINED_IN:
        modalities.add(Modality.CONTAINED_IN)
    off_window = window_index is None or not ghost
    m, i, j = episode.target
    success = False
    if not off_window and Modality(m) in modalities:
        wi, wj = window_index
        if wj == j and (wi == i or (m != 0 and abs(wi - i) == 1)):
            success = True
    return PlacementResolution(
        cell=cell,
        window_index=window_index,
        modalities=frozenset(modalities),
        container_id=container_id,
        resting_modality=resting_modality,
        off_window=off_window,
        success=success,
    )


# ---------------------------------------------------------------------------
# Step


def step(state: GameState, action: Action, rng=None) -> StepResult:
    """Apply one action. Deterministic; ``rng`` is accepted for interface
    symmetry with policies but no mechanic draws from it."""
    if state.stage is Stage.DONE:
        raise IllegalActionError("game is over")
    if not action_legal_in_stage(action, state.stage):
        raise IllegalActionError(f"{action.name} is illegal during stage {state.stage.value}")
    handler = {
        Stage.EM: _step_em,
        Stage.PS: _step_ps,
        Stage.OH: _step_oh,
        Stage.OM: _step_om,
        Stage.S: _step_s,
    }[state.stage]
    return handler(state, action)


def _try_open_at(state: GameState, pose: Pose, i: int, j: int) -> str | None:
    """The openable object id at the visible window cell (i, j), if the cell
    holds one that is currently closed."""
    window = view_window(state.scene, state.states, pose)
    cell = window.at(i, j)
    if not cell.visible or cell.object_id is None:
        return None
    obj = state.scene.object(cell.object_id)
    if not obj.openable or state.states.is_open(obj.object_id):
        return None
    return obj.object_id


def _apply_open(state: GameState, object_id: str) -> bool:
    state.states.open_flags[object_id] = True
    newly = object_id not in state._episode_opened
    state._episode_opened.add(object_id)
    return newly


def _shared_navigation(state: GameState, action: Action, pose: Pose) -> tuple[bool, Pose, str | None, bool]:
    """Movement/rotation/stance/open/close shared by EM and S.

    Returns (success, new_pose, opened_id, newly_opened).
    """
    scene = state.scene
    if action.name in MOVE_NAMES:
        delta = {"MoveAhead": (1, 0), "MoveLeft": (0, -1), "MoveRight": (0, 1)}[action.name]
        target = pose.moved(ahead=delta[0], right=delta[1])
        if scene.is_passable(target.cell):
            return True, target, None, False
        return False, pose, None, False
    if action.name in ROTATE_NAMES:
        turns = -1 if action.name == "RotateLeft" else 1
        return True, pose.rotated(turns), None, False
    if action.name in STANCE_NAMES:
        want = action.name == "Stand"
        if pose.standing == want:
            return False, pose, None, False
        return True, pose.with_stance(want), None, False
    if action.name == "OpenAt":
        object_id = _try_open_at(state, pose, *action.params)
        if object_id is None:
            return False, pose, None, False
        newly = _apply_open(state, object_id)
        return True, pose, object_id, newly
    if action.name == "CloseObjects":
        closed_any = False
        for obj in scene.objects:
            if not obj.openable or not state.states.is_open(obj.object_id):
                continue
            if object_visible(scene, state.states, pose, obj.object_id, max_range=INTERACT_RANGE):
                state.states.open_flags[obj.object_id] = False
                closed_any = True
        return closed_any, pose, None, False
    raise IllegalActionError(f"unhandled navigation action {action.name}")


def _step_em(state: GameState, action: Action) -> StepResult:
    success, new_pose, opened_id, newly = _shared_navigation(state, action, state.hider_pose)
    state.hider_pose = new_pose
    entry = HistoryStep(Stage.EM, state.em_t, action, success, new_pose, newly, opened_id)
    state.history.append(entry)
    state.em_t += 1
    state.em_pose_log.append(new_pose)
    events: list[Event] = []
    if state.config.em_max_steps is not None and state.em_t >= state.config.em_max_steps:
        _enter_ps(state, events)
    return StepResult(success, tuple(events))


def _enter_ps(state: GameState, events: list[Event]) -> None:
    state.stage = Stage.PS
    state.em_final_pose = state.hider_pose
    state._episode_opened = set()
    events.append(Event("stage", (Stage.PS.value,)))


def finish_exploring(state: GameState) -> tuple[Event, ...]:
    """Force the EM -> PS transition (used for human sessions with no
    exploration budget)."""
    if state.stage is not Stage.EM:
        raise IllegalActionError("finish_exploring only applies during EM")
    events: list[Event] = []
    _enter_ps(state, events)
    return tuple(events)


def _step_ps(state: GameState, action: Action) -> StepResult:
    dx, dz, rotation, standing = action.params
    base = state.em_final_pose
    target = Pose(base.x + dx, base.z + dz, rotation, bool(standing))
    events: list[Event] = []
    success = state.scene.is_passable(target.cell)
    entry = HistoryStep(Stage.PS, state.ps_tries, action, success, target if success else base)
    state.history.append(entry)
    if success:
        state.hider_pose = target
        _enter_oh(state, events)
    else:
        state.ps_tries += 1
        if state.ps_tries >= state.config.ps_max_tries:
            # Budget exhausted: hide from where the exploration ended.
            state.hider_pose = base
            events.append(Event("ps_fallback"))
            _enter_oh(state, events)
    return StepResult(success, tuple(events))


def _enter_oh(state: GameState, events: list[Event]) -> None:
    state.stage = Stage.OH
    state.oh_t = 0
    state._episode_opened = set()
    state._oh_opened_saved = None
    events.append(Event("stage", (Stage.OH.value,)))


def _default_hand_cell(scene: Scene, pose: Pose) -> tuple[int, int]:
    ahead = pose.moved(ahead=1).cell
    if scene.in_bounds(ahead) and scene.terrain_at(ahead) is not Terrain.WALL:
        return ahead
    return pose.cell


def _step_oh(state: GameState, action: Action) -> StepResult:
    events: list[Event] = []
    pose = state.hider_pose
    success = False
    newly = False
    opened_id = None
    place_pending = False
    if action.name in STANCE_NAMES:
        want = action.name == "Stand"
        if pose.standing != want:
            state.hider_pose = pose.with_stance(want)
            success = True
    elif action.name == "OpenAt":
        object_id = _try_open_at(state, pose, *action.params)
        if object_id is not None:
            newly = _apply_open(state, object_id)
            opened_id = object_id
            success = True
    elif action.name == "CloseObjects":
        success, _, _, _ = _shared_navigation(state, action, pose)
    elif action.name == "ReadyForSeeker":
        if state._oh_place_success is not None:
            success = True
    elif action.name == "PlaceAt":
        if state._oh_place_success is None:
            place_pending = True
            success = True  # accepted; resolved success comes from the OM episode
        # A PlaceAt after a successful one always fails outright.
    entry = HistoryStep(
        Stage.OH,
        state.oh_t,
        action,
        success,
        state.hider_pose,
        newly,
        opened_id,
        place_pending=place_pending,
    )
    state.history.append(entry)
    state.oh_t += 1
    if action.name == "ReadyForSeeker" and success:
        _enter_s(state, events)
        return StepResult(True, tuple(events))
    if place_pending:
        _start_om(state, action.params, entry, events)
        return StepResult(True, tuple(events))
    _check_oh_budget(state, events)
    return StepResult(success, tuple(events))


def _start_om(state: GameState, target: tuple[int, int, int], place_step: HistoryStep, events: list[Event]) -> None:
    # Picking the object back up if an earlier drop left it resting.
    state.states.resting = None
    state.held = True
    state.hand = (_default_hand_cell(state.scene, state.hider_pose), "low")
    episode = OmEpisode(
        index=len(state.om_episodes),
        start_pose=state.hider_pose,
        target=tuple(target),
        place_step=place_step,
    )
    place_step.om_index = episode.index
    state.om_episodes.append(episode)
    state.stage = Stage.OM
    state._oh_opened_saved = state._episode_opened
    state._episode_opened = set()
    events.append(Event("stage", (Stage.OM.value,)))
    events.append(Event("om_start", (episode.index,)))


def _hand_cell_ok(state: GameState, cell: tuple[int, int], height: str) -> bool:
    scene = state.scene
    pose = state.hider_pose
    if not scene.in_bounds(cell):
        return False
    if world_to_window(pose, cell) is None:
        return False  # the carried object would leave the viewport
    dx, dz = cell[0] - pose.x, cell[1] - pose.z
    if dx * dx + dz * dz > state.config.hand_range ** 2:
        return False
    if scene.terrain_at(cell) is not Terrain.FLOOR:
        return False
    obj = scene.object_at(cell)
    if obj is None or obj.kind is ObjectKind.GOAL:
        return True
    accepts_inside = (
        obj.openable
        and state.states.is_open(obj.object_id)
        and Modality.CONTAINED_IN in obj.slots
        and SIZE_RANKS[GOAL_SIZE[state.goal_type]] <= SIZE_RANKS[obj.capacity]
    )
    if accepts_inside:
        return True
    if Modality.ON_TOP in obj.slots:
        # Resting zone on top: reachable with a lowered hand only for low
        # objects; high ones need the hand raised above them.
        return height == "high" or obj.height == "low"
    return False


def _step_om(state: GameState, action: Action) -> StepResult:
    events: list[Event] = []
    episode = state.om_episodes[-1]
    pose = state.hider_pose
    success = False
    newly = False
    opened_id = None
    if action.name in HAND_NAMES:
        cell, height = state.hand
        if action.name == "MoveHandUp":
            new_cell, new_height = cell, "high"
        elif action.name == "MoveHandDown":
            new_cell, new_height = cell, "low"
        else:
            ahead, right = {
                "MoveHandAhead": (1, 0),
                "MoveHandBack": (-1, 0),
                "MoveHandLeft": (0, -1),
                "MoveHandRight": (0, 1),
            }[action.name]
            fx, fz = pose.forward()
            rx, rz = pose.rightward()
            new_cell = (cell[0] + fx * ahead + rx * right, cell[1] + fz * ahead + rz * right)
            new_height = height
        if (new_cell, new_height) != (cell, height) and _hand_cell_ok(state, new_cell, new_height):
            state.hand = (new_cell, new_height)
            success = True
    elif action.name == "OpenAt":
        object_id = _try_open_at(state, pose, *action.params)
        if object_id is not None:
            newly = _apply_open(state, object_id)
            opened_id = object_id
            success = True
    elif action.name == "DropObject":
        if state.held:
            success = True
    entry = HistoryStep(Stage.OM, len(episode.steps), action, success, pose, newly, opened_id,
                        om_index=episode.index)
    state.history.append(entry)
    episode.steps.append(entry)
    if action.name == "DropObject" and success:
        resolution = resolve_placement(state)
        episode.resolution = resolution
        state.held = False
        state.hand = None
        state.states.resting = Resting(
            GOAL_OBJECT_ID, resolution.cell, resolution.resting_modality, resolution.container_id
        )
        _end_om(state, episode, events)
    elif state.config.om_max_steps is not None and len(episode.steps) >= state.config.om_max_steps:
        episode.timed_out = True
        _end_om(state, episode, events)
    return StepResult(success, tuple(events))


def _end_om(state: GameState, episode: OmEpisode, events: list[Event]) -> None:
    episode.place_step.success = episode.success
    episode.place_step.place_pending = False
    if episode.success:
        m, i, j = episode.target
        state._oh_place_success = HideOutcome.of(episode.start_pose.standing, m, i, j)
    state.stage = Stage.OH
    state._episode_opened = state._oh_opened_saved or set()
    state._oh_opened_saved = None
    events.append(Event("om_end", (episode.index, episode.success)))
    events.append(Event("stage", (Stage.OH.value,)))
    _check_oh_budget(state, events)


def _check_oh_budget(state: GameState, events: list[Event]) -> None:
    limit = state.config.oh_max_steps
    if limit is None or state.oh_t < limit or state.stage is not Stage.OH:
        return
    if state._oh_place_success is None:
        _auto_drop(state, events)
    _enter_s(state, events)


def _auto_drop(state: GameState, events: list[Event]) -> None:
    """Out of budget without a successful placement: the object goes back to
    the hand's default spot and is simply dropped there."""
    cell = _default_hand_cell(state.scene, state.hider_pose)
    modality, container_id = _landing(state.scene, state.states, state.goal_type, cell)
    state.states.resting = Resting(GOAL_OBJECT_ID, cell, modality, container_id)
    state.held = False
    state.hand = None
    events.append(Event("auto_drop", (cell,)))


def _enter_s(state: GameState, events: list[Event]) -> None:
    if state.held:
        # Reaching S while still holding (budget exhaustion paths call
        # _auto_drop first, so this covers ReadyForSeeker after a successful
        # placement only when the object is already resting).
        _auto_drop(state, events)
    state.stage = Stage.S
    state.seeker_pose = state.scene.start_pose
    state.s_t = 0
    state._episode_opened = set()
    state.s_pose_log = [state.seeker_pose]
    events.append(Event("stage", (Stage.S.value,)))


def _step_s(state: GameState, action: Action) -> StepResult:
    events: list[Event] = []
    pose = state.seeker_pose
    claim_missing = False
    if action.name == "ClaimVisible":
        success = object_visible(
            state.scene, state.states, pose, GOAL_OBJECT_ID, max_range=INTERACT_RANGE
        )
        if not success:
            # Too far is forgiven; invisible is penalized harder by rewards.
            claim_missing = not object_visible(state.scene, state.states, pose, GOAL_OBJECT_ID)
        new_pose, opened_id, newly = pose, None, False
    else:
        success, new_pose, opened_id, newly = _shared_navigation(state, action, pose)
        state.seeker_pose = new_pose
    entry = HistoryStep(Stage.S, state.s_t, action, success, new_pose, newly, opened_id,
                        claim_missing=claim_missing)
    state.history.append(entry)
    state.s_t += 1
    state.s_pose_log.append(new_pose)
    if action.name == "ClaimVisible" and success:
        state.stage = Stage.DONE
        state.found = True
        events.append(Event("game_end", (True, state.s_t)))
    elif state.config.s_max_steps is not None and state.s_t >= state.config.s_max_steps:
        state.stage = Stage.DONE
        state.found = False
        events.append(Event("game_end", (False, state.s_t)))
    return StepResult(success, tuple(events))


def outcome_of_game(state: GameState) -> HideOutcome:
    """The realized outcome of the first successful PlaceAt, or fail."""
    return state.hide_outcome()


def restart_hiding(state: GameState) -> tuple[Event, ...]:
    """Begin the OH stage over: pick the object back up, reset the budget.

    Play-server affordance for human hiders; valid during OH or OM.
    """
    if state.stage not in (Stage.OH, Stage.OM):
        raise IllegalActionError("restart_hiding only applies during OH or OM")
    if state.om_episodes and state.om_episodes[-1].resolution is None and state.stage is Stage.OM:
        episode = state.om_episodes[-1]
        episode.timed_out = True
        episode.place_step.success = False
        episode.place_step.place_pending = False
    state.states.resting = None
    state.held = True
    state.hand = None
    state._oh_place_success = None
    events: list[Event] = []
    _enter_oh(state, events)
    return tuple(events)
