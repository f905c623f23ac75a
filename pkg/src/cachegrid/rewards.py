"""Per-step rewards for each stage, plus exploration and hiding metrics.

Rewards are pure functions of an immutable trace, a step index and a config,
so repeated evaluation is bit-identical. Traces are built once from a finished
(or in-progress) game; the builders here are the only pieces that touch game
state. Index convention: a trace over N actions has states 0..N, action a_t
maps state t to state t+1, and per-state flags (new location, newly opened)
live at index t+1 for the effect of a_t.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

from .gamecore import Action, GameState, HistoryStep, OmEpisode, PlacementResolution, Stage
from .oracle import bfs_cell_order, bfs_seek, visible_from_fraction
from .world import (
    Modality,
    ObjectStates,
    Pose,
    Resting,
    Scene,
    pose_extrapolation,
    reachable_poses,
)


@dataclass(frozen=True, slots=True)
class RewardConfig:
    """Every constant of the four stage reward structures, overridable only
    here. Penalties carry their sign; bonuses are positive."""

    r_step: float = -0.01
    r_fail: float = -0.02
    # Explore and map
    em_extrap_coef: float = 0.2
    em_extrap_div: float = 3.0
    em_open_bonus: float = 0.4
    em_hide_coef: float = 0.2
    em_openat_clamp: float = -0.001
    # Object hiding
    oh_ready_fail: float = -0.1
    oh_open_bonus: float = 0.2
    oh_repeat_place: float = -0.1
    oh_place_base: float = 0.02
    oh_place_half: float = 0.5
    oh_p_floor: float = 0.0001
    oh_p_cap: float = 100.0
    oh_p_div: float = 100.0
    oh_fail: float = -0.01
    oh_percentile_coef: float = 5.0
    oh_gamma: float = 0.8
    # Object manipulation
    om_open_bonus: float = 0.1
    om_dist_base: float = 0.25
    om_modality_bonus: float = 1.0
    om_exact_bonus: float = 1.0
    om_offscreen: float = -1.0
    om_timeout: float = -1.0
    # Seeking
    s_new_location: float = 0.01
    s_open_bonus: float = 0.06
    s_success: float = 1.0
    s_claim_miss: float = -0.05


DEFAULT_REWARDS = RewardConfig()

HideValueFn = Callable[[int], float]


# ---------------------------------------------------------------------------
# Traces


def _new_location_flags(poses: Sequence[Pose], ignore_rotation: bool) -> tuple[bool, ...]:
    seen: set = set()
    flags = []
    for pose in poses:
        key = pose.proj_no_rotation() if ignore_rotation else pose
        flags.append(key not in seen)
        seen.add(key)
    return tuple(flags)


def _opened_flags(entries: Sequence[HistoryStep]) -> tuple[bool, ...]:
    # State-indexed: flag at t+1 reflects action t. State 0 opened nothing.
    return (False,) + tuple(e.newly_opened for e in entries)


@dataclass(frozen=True, slots=True)
class ExplorationTrace:
    """Explore-and-map episode trace with the cumulative set sequence.

    visited[t], opened[t] and extrapolated[t] describe state t; all three are
    monotone nondecreasing and extrapolated[t] is a superset of visited[t].
    """

    poses: tuple[Pose, ...]
    actions: tuple[Action, ...]
    success: tuple[bool, ...]
    visited: tuple[frozenset, ...]
    opened: tuple[frozenset, ...]
    extrapolated: tuple[frozenset, ...]
    new_location: tuple[bool, ...]
    new_opened: tuple[bool, ...]
    hide_values: tuple[float, ...] | None = None

    def __post_init__(self):
        n = len(self.actions)
        if not (len(self.poses) == len(self.visited) == len(self.opened)
                == len(self.extrapolated) == len(self.new_location)
                == len(self.new_opened) == n + 1):
            raise ValueError("trace arrays disagree on episode length")
        if self.hide_values is not None and len(self.hide_values) != n + 1:
            raise ValueError("need one hide value per state")

    def __len__(self) -> int:
        return len(self.actions)

    def unseen(self, s: int) -> bool:
        return self.new_location[s] or self.new_opened[s]

    @classmethod
    def from_steps(
        cls,
        poses: Sequence[Pose],
        entries: Sequence[HistoryStep],
        hide_values: Sequence[float] | None = None,
    ) -> "ExplorationTrace":
        visited: list[frozenset] = []
        extrapolated: list[frozenset] = []
        opened: list[frozenset] = []
        v: set = set()
        e: set = set()
        o: set = set()
        for index, pose in enumerate(poses):
            if pose not in v:
                v.add(pose)
                e.add(pose)
                e.update(pose_extrapolation(pose))
            if index > 0 and entries[index - 1].newly_opened:
                o.add(entries[index - 1].opened_id)
            visited.append(frozenset(v))
            extrapolated.append(frozenset(e))
            opened.append(frozenset(o))
        return cls(
            poses=tuple(poses),
            actions=tuple(e_.action for e_ in entries),
            success=tuple(e_.success for e_ in entries),
            visited=tuple(visited),
            opened=tuple(opened),
            extrapolated=tuple(extrapolated),
            new_location=_new_location_flags(poses, ignore_rotation=False),
            new_opened=_opened_flags(entries),
            hide_values=None if hide_values is None else tuple(hide_values),
        )

    @classmethod
    def from_game(cls, state: GameState, hide_values: Sequence[float] | None = None) -> "ExplorationTrace":
        entries = [h for h in state.history if h.stage is Stage.EM]
        return cls.from_steps(state.em_pose_log, entries, hide_values)


@dataclass(frozen=True, slots=True)
class SeekTrace:
    """Seeking episode trace; locations ignore rotation."""

    poses: tuple[Pose, ...]
    actions: tuple[Action, ...]
    success: tuple[bool, ...]
    new_location: tuple[bool, ...]
    new_opened: tuple[bool, ...]
    claim_missing: tuple[bool, ...]

    def __len__(self) -> int:
        return len(self.actions)

    @classmethod
    def from_steps(cls, poses: Sequence[Pose], entries: Sequence[HistoryStep]) -> "SeekTrace":
        return cls(
            poses=tuple(poses),
            actions=tuple(e.action for e in entries),
            success=tuple(e.success for e in entries),
            new_location=_new_location_flags(poses, ignore_rotation=True),
            new_opened=_opened_flags(entries),
            claim_missing=tuple(e.claim_missing for e in entries),
        )

    @classmethod
    def from_game(cls, state: GameState) -> "SeekTrace":
        entries = [h for h in state.history if h.stage is Stage.S]
        return cls.from_steps(state.s_pose_log, entries)


@dataclass(frozen=True, slots=True)
class OhTrace:
    """Object-hiding episode trace (OM sub-episodes excluded)."""

    actions: tuple[Action, ...]
    success: tuple[bool, ...]
    new_opened: tuple[bool, ...]  # action-indexed: effect of a_t
    place_success_before: tuple[bool, ...]  # a successful PlaceAt strictly before t
    had_place_success: bool
    percentile_index: int | None  # last successful non-ReadyForSeeker action

    def __len__(self) -> int:
        return len(self.actions)

    @classmethod
    def from_steps(cls, entries: Sequence[HistoryStep]) -> "OhTrace":
        actions = tuple(e.action for e in entries)
        success = tuple(e.success for e in entries)
        before: list[bool] = []
        prior = False
        for e in entries:
            before.append(prior)
            if e.action.name == "PlaceAt" and e.success:
                prior = True
        percentile_index = None
        if prior:
            for index in range(len(entries) - 1, -1, -1):
                if success[index] and actions[index].name != "ReadyForSeeker":
                    percentile_index = index
                    break
        return cls(
            actions=actions,
            success=success,
            new_opened=tuple(e.newly_opened for e in entries),
            place_success_before=tuple(before),
            had_place_success=prior,
            percentile_index=percentile_index,
        )

    @classmethod
    def from_game(cls, state: GameState) -> "OhTrace":
        entries = [h for h in state.history if h.stage is Stage.OH]
        return cls.from_steps(entries)


@dataclass(frozen=True, slots=True)
class OmTrace:
    """One object-manipulation sub-episode trace."""

    actions: tuple[Action, ...]
    success: tuple[bool, ...]
    new_opened: tuple[bool, ...]

    def __len__(self) -> int:
        return len(self.actions)

    @classmethod
    def from_episode(cls, episode: OmEpisode) -> "OmTrace":
        return cls(
            actions=tuple(e.action for e in episode.steps),
            success=tuple(e.success for e in episode.steps),
            new_opened=tuple(e.newly_opened for e in episode.steps),
        )


# ---------------------------------------------------------------------------
# Stage rewards


def _hide_value(trace: ExplorationTrace, hide_value_fn: HideValueFn | None, s: int) -> float:
    if hide_value_fn is not None:
        return float(hide_value_fn(s))
    if trace.hide_values is not None:
        return trace.hide_values[s]
    return 0.0


def mean_unseen_value(trace: ExplorationTrace, t: int, hide_value_fn: HideValueFn | None = None) -> float:
    """Average hide value over unseen states s <= t; state 0 is always unseen."""
    total = 0.0
    count = 0
    for s in range(t + 1):
        if trace.unseen(s):
            total += _hide_value(trace, hide_value_fn, s)
            count += 1
    return total / count


def em_reward(
    trace: ExplorationTrace,
    t: int,
    hide_value_fn: HideValueFn | None = None,
    config: RewardConfig = DEFAULT_REWARDS,
) -> float:
    r = config.r_step
    if not trace.success[t]:
        r += config.r_fail
    else:
        grown = len(trace.extrapolated[t + 1]) - len(trace.extrapolated[t])
        r += config.em_extrap_coef * grown / config.em_extrap_div
        if trace.new_opened[t + 1]:
            r += config.em_open_bonus
        if trace.new_opened[t + 1] or trace.new_location[t + 1]:
            delta = _hide_value(trace, hide_value_fn, t + 1) - mean_unseen_value(trace, t, hide_value_fn)
            r += config.em_hide_coef * min(1.0, max(0.0, delta))
    if trace.actions[t].name == "OpenAt":
        r = max(r, config.em_openat_clamp)
    return r


def oh_reward(
    trace: OhTrace,
    t: int,
    p: float = 1.0,
    percentile_term: float = 0.0,
    config: RewardConfig = DEFAULT_REWARDS,
) -> float:
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"manipulation success probability must be in [0, 1], got {p}")
    r = config.r_step
    action = trace.actions[t]
    success = trace.success[t]
    if action.name == "ReadyForSeeker":
        if not success:
            r += config.oh_ready_fail
    elif success and action.name == "OpenAt":
        if trace.new_opened[t]:
            r += config.oh_open_bonus
    elif action.name == "PlaceAt" and trace.place_success_before[t]:
        r += config.oh_repeat_place
    elif success and action.name == "PlaceAt":
        r = r + config.oh_place_base + config.oh_place_half * min(
            max(p, config.oh_p_floor) ** -2, config.oh_p_cap
        ) / config.oh_p_div
    elif not success:
        r += config.oh_fail
    if trace.had_place_success and t == trace.percentile_index:
        r += config.oh_percentile_coef * percentile_term
    return r


def oh_percentile(seeker_steps: int, rollout_lengths: Sequence[int]) -> float:
    """Maps seeker steps onto [-1, 1] by their rank among mental rollouts."""
    if not rollout_lengths:
        raise ValueError("need at least one rollout length")
    frac = sum(1 for length in rollout_lengths if length <= seeker_steps) / len(rollout_lengths)
    return -1.0 + 2.0 * frac


def om_reward(
    trace: OmTrace,
    t: int,
    target: tuple[int, int, int],
    resolution: PlacementResolution | None,
    config: RewardConfig = DEFAULT_REWARDS,
) -> float:
    r = config.r_step
    action = trace.actions[t]
    if not trace.success[t]:
        r += config.r_fail
    elif action.name == "OpenAt":
        if trace.new_opened[t]:
            r += config.om_open_bonus
    elif action.name == "DropObject":
        if resolution is None:
            raise ValueError("DropObject step needs a placement resolution")
        if resolution.off_window:
            r += config.om_offscreen
        else:
            m, i, j = target
            bi, bj = resolution.window_index
            r += config.om_dist_base ** (abs(i - bi) + abs(j - bj))
            modality = Modality(m)
            if m != 0 and modality in resolution.modalities:
                r += config.om_modality_bonus
            if modality in resolution.modalities and (bi, bj) == (i, j):
                r += config.om_exact_bonus
    elif t == len(trace) - 1:
        # Budget ran out with the object still in hand.
        r += config.om_timeout
    return r


def s_reward(trace: SeekTrace, t: int, config: RewardConfig = DEFAULT_REWARDS) -> float:
    r = config.r_step
    action = trace.actions[t]
    if not trace.success[t]:
        if action.name == "ClaimVisible":
            if trace.claim_missing[t]:
                r += config.s_claim_miss
        else:
            r += config.r_fail
    elif trace.new_location[t + 1]:
        r += config.s_new_location
    elif trace.new_opened[t + 1]:
        r += config.s_open_bonus
    elif action.name == "ClaimVisible":
        r += config.s_success
    return r


# ---------------------------------------------------------------------------
# Episode metrics


@dataclass(frozen=True, slots=True)
class ExplorationMetrics:
    coverage: float
    coverage_plus: float
    open_pct: float


def exploration_metrics(trace: ExplorationTrace, scene: Scene) -> ExplorationMetrics:
    """Stance-aware cell coverage of the reachable set, with and without the
    one-step optimistic extrapolation, plus the fraction of openables opened."""
    reachable = {pose.proj_no_rotation() for pose in reachable_poses(scene)}
    covered = {pose.proj_no_rotation() for pose in trace.visited[-1]}
    extrapolated = {pose.proj_no_rotation() for pose in trace.extrapolated[-1]}
    openable = scene.openable_ids()
    return ExplorationMetrics(
        coverage=len(covered & reachable) / len(reachable),
        coverage_plus=len(extrapolated & reachable) / len(reachable),
        open_pct=len(trace.opened[-1]) / len(openable) if openable else 1.0,
    )


@dataclass(frozen=True, slots=True)
class HidingMetrics:
    visible_from_pct: float
    bfs_steps: int
    bfs_steps_pct: float
    bfs_found: bool


def hiding_metrics(
    scene: Scene,
    hidden: Resting,
    seeker_start: Pose | tuple[int, int] | None = None,
    object_states: ObjectStates | None = None,
) -> HidingMetrics:
    """How exposed a hidden object is: the fraction of reachable poses that
    can see it, and the cost for a breadth-first seeker to reach a cell that
    sees it (1.0 when it never does)."""
    start = seeker_start if seeker_start is not None else scene.start_pose
    start_cell = start.cell if isinstance(start, Pose) else tuple(start)
    result = bfs_seek(scene, hidden, start_cell, object_states)
    n_cells = len(bfs_cell_order(scene, start_cell))
    return HidingMetrics(
        visible_from_pct=visible_from_fraction(scene, hidden, object_states),
        bfs_steps=result.steps,
        bfs_steps_pct=result.steps / n_cells,
        bfs_found=result.found,
    )


# ---------------------------------------------------------------------------
# Whole-game convenience


@dataclass(frozen=True, slots=True)
class GameRewards:
    em: tuple[float, ...]
    oh: tuple[float, ...]
    om: tuple[tuple[float, ...], ...]  # one inner tuple per OM sub-episode
    s: tuple[float, ...]


def game_rewards(
    state: GameState,
    hide_values: Sequence[float] | None = None,
    place_p: float | Sequence[float] = 1.0,
    percentile_term: float = 0.0,
    config: RewardConfig = DEFAULT_REWARDS,
) -> GameRewards:
    """Score every step of a finished game.

    place_p may be a scalar applied to every PlaceAt or one value per OH step.
    """
    em_trace = ExplorationTrace.from_game(state, hide_values)
    oh_trace = OhTrace.from_game(state)
    s_trace = SeekTrace.from_game(state)

    def p_at(t: int) -> float:
        if isinstance(place_p, (int, float)):
            return float(place_p)
        return float(place_p[t])

    om_all = []
    for episode in state.om_episodes:
        trace = OmTrace.from_episode(episode)
        om_all.append(tuple(
            om_reward(trace, t, episode.target, episode.resolution, config)
            for t in range(len(trace))
        ))
    return GameRewards(
        em=tuple(em_reward(em_trace, t, None, config) for t in range(len(em_trace))),
        oh=tuple(
            oh_reward(oh_trace, t, p_at(t), percentile_term, config)
            for t in range(len(oh_trace))
        ),
        om=tuple(om_all),
        s=tuple(s_reward(s_trace, t, config) for t in range(len(s_trace))),
    )
