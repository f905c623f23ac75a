"""Running full games and scoring seekers over labeled spot sets.

A match report is a plain-data record of one finished game: every stage's
actions, successes and rewards, where the object ended up and how exposed it
was, plus the exploration and hiding metrics. Reports round-trip through the
text format in ``formats`` and can recompute their metrics from their own
traces, which is what the tests pin.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy import stats

from ..gamecore import (
    GOAL_OBJECT_ID,
    GameConfig,
    GameState,
    HistoryStep,
    IllegalActionError,
    Stage,
    parse_action,
    start_game,
    step,
)
from ..oracle import HidingSpot
from ..rewards import (
    DEFAULT_REWARDS,
    ExplorationMetrics,
    ExplorationTrace,
    HidingMetrics,
    RewardConfig,
    exploration_metrics,
    game_rewards,
    hiding_metrics,
)
from ..world import GOAL_TYPES, Modality, ObjectStates, Pose, Resting, Scene
from .policies import StagePolicy

# A policy wedged on illegal submissions aborts the match after this many
# consecutive rejections; anything legal resets the count.
MAX_CONSECUTIVE_ILLEGAL = 100

PoseKey = tuple[int, int, int, int]


@dataclass(frozen=True, slots=True)
class MatchReport:
    """Everything one finished game produced.

    Pose keys are (x, z, rotation, standing); per-step pose entries record
    the pose after the action, with the block's start pose kept separately.
    ``illegal`` lists (stage, action) submissions the engine rejected outright;
    they consumed no budget. Metrics are stored and recomputable: exploration
    metrics from the explore block, hiding metrics from the hidden resting
    plus the open flags captured when seeking began.
    """

    scene_id: str
    goal_type: str
    seed: int
    em_start: PoseKey
    em_actions: tuple[str, ...]
    em_success: tuple[bool, ...]
    em_opened: tuple[str | None, ...]
    em_rewards: tuple[float, ...]
    em_poses: tuple[PoseKey, ...]
    ps_actions: tuple[str, ...]
    ps_success: tuple[bool, ...]
    oh_actions: tuple[str, ...]
    oh_success: tuple[bool, ...]
    oh_opened: tuple[str | None, ...]
    oh_rewards: tuple[float, ...]
    om_actions: tuple[tuple[str, ...], ...]
    om_success: tuple[tuple[bool, ...], ...]
    om_rewards: tuple[tuple[float, ...], ...]
    s_start: PoseKey
    s_actions: tuple[str, ...]
    s_success: tuple[bool, ...]
    s_opened: tuple[str | None, ...]
    s_rewards: tuple[float, ...]
    s_poses: tuple[PoseKey, ...]
    illegal: tuple[tuple[str, str], ...]
    hide_outcome: str
    hidden_cell: tuple[int, int]
    hidden_modality: str
    hidden_container: str | None
    open_at_seek: tuple[str, ...]
    found: bool
    seeker_steps: int
    coverage: float
    coverage_plus: float
    open_pct: float
    visible_from_pct: float
    bfs_steps: int
    bfs_steps_pct: float
    bfs_found: bool

    def exploration_trace(self) -> ExplorationTrace:
        poses = [Pose(*self.em_start)] + [Pose(*key) for key in self.em_poses]
        entries = []
        seen: set[str] = set()
        for index, wire in enumerate(self.em_actions):
            opened = self.em_opened[index]
            newly = opened is not None and opened not in seen
            if opened is not None:
                seen.add(opened)
            entries.append(HistoryStep(
                Stage.EM, index, parse_action(wire), self.em_success[index],
                poses[index + 1], newly, opened,
            ))
        return ExplorationTrace.from_steps(poses, entries)

    def hidden_resting(self) -> Resting:
        return Resting(
            GOAL_OBJECT_ID, self.hidden_cell,
            Modality.from_wire(self.hidden_modality), self.hidden_container,
        )

    def seek_states(self, scene: Scene) -> ObjectStates:
        states = scene.default_states()
        for object_id in self.open_at_seek:
            states.open_flags[object_id] = True
        states.resting = self.hidden_resting()
        return states

    def recomputed_metrics(self, scene: Scene) -> tuple[ExplorationMetrics, HidingMetrics]:
        """Rebuild both metric blocks from the stored traces; equality with
        the stored fields is the report's core invariant."""
        exploration = exploration_metrics(self.exploration_trace(), scene)
        hiding = hiding_metrics(
            scene, self.hidden_resting(), scene.start_pose, self.seek_states(scene)
        )
        return exploration, hiding


def _pose_key(pose: Pose) -> PoseKey:
    return (pose.x, pose.z, pose.rotation, int(pose.standing))


def report_from_state(
    state: GameState,
    seed: int,
    open_at_seek: tuple[str, ...] = (),
    illegal: tuple[tuple[str, str], ...] = (),
    rewards_config: RewardConfig = DEFAULT_REWARDS,
) -> MatchReport:
    """Assemble the full report from a game's logs.

    open_at_seek must be the openable ids that were open when the seeking
    stage began; callers that drive games themselves snapshot it on the
    stage change, seek-only games leave it empty.
    """
    scene = state.scene
    rewards = game_rewards(state, config=rewards_config)
    by_stage = {
        stage: [h for h in state.history if h.stage is stage]
        for stage in (Stage.EM, Stage.PS, Stage.OH, Stage.S)
    }
    em, ps, oh, s = by_stage[Stage.EM], by_stage[Stage.PS], by_stage[Stage.OH], by_stage[Stage.S]
    resting = state.states.resting
    exploration = exploration_metrics(ExplorationTrace.from_game(state), scene)
    seek_states = scene.default_states()
    for object_id in open_at_seek:
        seek_states.open_flags[object_id] = True
    seek_states.resting = resting
    hiding = hiding_metrics(scene, resting, scene.start_pose, seek_states)
    return MatchReport(
        scene_id=scene.scene_id,
        goal_type=state.goal_type,
        seed=seed,
        em_start=_pose_key(state.em_pose_log[0]),
        em_actions=tuple(h.action.wire for h in em),
        em_success=tuple(h.success for h in em),
        em_opened=tuple(h.opened_id for h in em),
        em_rewards=rewards.em,
        em_poses=tuple(_pose_key(p) for p in state.em_pose_log[1:]),
        ps_actions=tuple(h.action.wire for h in ps),
        ps_success=tuple(h.success for h in ps),
        oh_actions=tuple(h.action.wire for h in oh),
        oh_success=tuple(h.success for h in oh),
        oh_opened=tuple(h.opened_id for h in oh),
        oh_rewards=rewards.oh,
        om_actions=tuple(
            tuple(h.action.wire for h in episode.steps) for episode in state.om_episodes
        ),
        om_success=tuple(
            tuple(h.success for h in episode.steps) for episode in state.om_episodes
        ),
        om_rewards=rewards.om,
        s_start=_pose_key(state.s_pose_log[0]),
        s_actions=tuple(h.action.wire for h in s),
        s_success=tuple(h.success for h in s),
        s_opened=tuple(h.opened_id for h in s),
        s_rewards=rewards.s,
        s_poses=tuple(_pose_key(p) for p in state.s_pose_log[1:]),
        illegal=illegal,
        hide_outcome=state.hide_outcome().wire,
        hidden_cell=resting.cell,
        hidden_modality=resting.modality.wire,
        hidden_container=resting.container_id,
        open_at_seek=open_at_seek,
        found=bool(state.found),
        seeker_steps=state.s_t,
        coverage=exploration.coverage,
        coverage_plus=exploration.coverage_plus,
        open_pct=exploration.open_pct,
        visible_from_pct=hiding.visible_from_pct,
        bfs_steps=hiding.bfs_steps,
        bfs_steps_pct=hiding.bfs_steps_pct,
        bfs_found=hiding.bfs_found,
    )


def run_match(
    scene: Scene,
    hider_policy: StagePolicy,
    seeker_policy: StagePolicy,
    seed: int,
    goal_type: str = GOAL_TYPES[0],
    config: GameConfig | None = None,
    rewards_config: RewardConfig = DEFAULT_REWARDS,
) -> MatchReport:
    """Play one full five-stage game and report it.

    The hider policy drives every stage before seeking; the seeker policy is
    reset when seeking begins and drives it to the end. Illegal submissions
    are recorded and skipped without consuming budget; a policy that emits
    nothing else aborts the match.
    """
    state = start_game(scene, goal_type, seed, config)
    rng = np.random.default_rng(seed)
    hider_policy.reset(state)
    seeking = False
    open_at_seek: tuple[str, ...] = ()
    illegal: list[tuple[str, str]] = []
    rejected_run = 0
    while state.stage is not Stage.DONE:
        if state.stage is Stage.S and not seeking:
            seeking = True
            open_at_seek = tuple(sorted(
                object_id for object_id in scene.openable_ids()
                if state.states.is_open(object_id)
            ))
            seeker_policy.reset(state)
        policy = seeker_policy if state.stage is Stage.S else hider_policy
        action = policy.act(state, rng)
        try:
            result = step(state, action)
        except IllegalActionError:
            illegal.append((state.stage.value, action.wire))
            rejected_run += 1
            if rejected_run >= MAX_CONSECUTIVE_ILLEGAL:
                raise RuntimeError(
                    f"policy produced {MAX_CONSECUTIVE_ILLEGAL} consecutive illegal actions"
                )
            continue
        rejected_run = 0
        policy.observe(state, result)
    return report_from_state(state, seed, open_at_seek, tuple(illegal), rewards_config)


# ---------------------------------------------------------------------------
# Seek-only games


def seek_only_game(
    scene: Scene,
    spot: HidingSpot,
    seed: int = 0,
    goal_type: str = GOAL_TYPES[0],
    config: GameConfig | None = None,
) -> GameState:
    """A game that starts at the seeking stage against a prepared spot.

    Containers start closed, matching how spot visibility is defined, and
    the seeker stands at the scene start pose.
    """
    state = start_game(scene, goal_type, seed, config)
    state.stage = Stage.S
    state.em_final_pose = state.hider_pose
    state.held = False
    state.hand = None
    state.states.resting = spot.resting()
    state.seeker_pose = scene.start_pose
    state.s_t = 0
    state.s_pose_log = [state.seeker_pose]
    state._episode_opened = set()
    return state


def run_seek(
    state: GameState,
    policy: StagePolicy,
    rng: np.random.Generator,
) -> GameState:
    """Drive a seek-stage game to the end with one policy."""
    if state.stage is not Stage.S:
        raise ValueError(f"run_seek needs a game in the seeking stage, not {state.stage.value}")
    policy.reset(state)
    rejected_run = 0
    while state.stage is not Stage.DONE:
        action = policy.act(state, rng)
        try:
            result = step(state, action)
        except IllegalActionError:
            rejected_run += 1
            if rejected_run >= MAX_CONSECUTIVE_ILLEGAL:
                raise RuntimeError(
                    f"policy produced {MAX_CONSECUTIVE_ILLEGAL} consecutive illegal actions"
                )
            continue
        rejected_run = 0
        policy.observe(state, result)
    return state


# ---------------------------------------------------------------------------
# Interval statistics


def wilson_interval(successes: int, n: int, confidence: float = 0.95) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if n <= 0:
        raise ValueError("interval over zero observations")
    if not 0 <= successes <= n:
        raise ValueError(f"successes {successes} outside 0..{n}")
    z = float(stats.norm.ppf(0.5 + confidence / 2.0))
    phat = successes / n
    denom = 1.0 + z * z / n
    center = (phat + z * z / (2.0 * n)) / denom
    half = z * math.sqrt(phat * (1.0 - phat) / n + z * z / (4.0 * n * n)) / denom
    # The exact bounds at the extremes are 0 and 1; rounding must not leave
    # the point estimate outside the interval.
    low = 0.0 if successes == 0 else max(0.0, min(phat, center - half))
    high = 1.0 if successes == n else min(1.0, max(phat, center + half))
    return (low, high)


def t_interval(values: Sequence[float], confidence: float = 0.95) -> tuple[float, float]:
    """Student-t interval for a mean; degenerate for a single observation."""
    n = len(values)
    if n == 0:
        raise ValueError("interval over zero observations")
    ordered = sorted(float(v) for v in values)
    mean = math.fsum(ordered) / n
    if n == 1:
        return (mean, mean)
    var = math.fsum((v - mean) ** 2 for v in ordered) / (n - 1)
    half = float(stats.t.ppf(0.5 + confidence / 2.0, n - 1)) * math.sqrt(var / n)
    return (mean - half, mean + half)


# ---------------------------------------------------------------------------
# Seeker evaluation over labeled spot sets


@dataclass(frozen=True, slots=True)
class EvalRow:
    """One labeled set's scores: find frequency with a Wilson 95% interval
    and mean seek steps (over all trials, budget counts as-is for misses)
    with a Student-t interval."""

    label: str
    spots: int
    trials: int
    n: int
    found: int
    find_rate: float
    wilson_low: float
    wilson_high: float
    mean_steps: float
    steps_low: float
    steps_high: float


def spot_tasks(
    scene: Scene, spot_sets: Mapping[str, Sequence[HidingSpot]]
) -> dict[str, list[tuple[Scene, HidingSpot]]]:
    """Attach one scene to every spot of its labeled sets; concatenate the
    dicts of several scenes to evaluate over a corpus."""
    return {label: [(scene, spot) for spot in spots] for label, spots in spot_sets.items()}


def _trial_seed(seed: int, scene_id: str, spot: HidingSpot, trial: int) -> int:
    key = (seed, scene_id, spot.cell, spot.modality.value, spot.container_id, trial)
    digest = hashlib.sha256(repr(key).encode()).digest()
    return int.from_bytes(digest[:8], "big")


def evaluate(
    spot_sets: Mapping[str, Sequence[tuple[Scene, HidingSpot]]],
    seeker_policy: StagePolicy,
    trials: int,
    seed: int,
    goal_type: str = GOAL_TYPES[0],
    config: GameConfig | None = None,
    confidence: float = 0.95,
) -> dict[str, EvalRow]:
    """Score a seeker policy per labeled spot set.

    Every (spot, trial) pair gets its own derived seed, so results do not
    depend on the order spots are listed in. The policy is reset for every
    run; mean steps average over all trials, found or not.
    """
    if trials <= 0:
        raise ValueError("evaluate needs at least one trial per spot")
    for label, tasks in spot_sets.items():
        if not tasks:
            raise ValueError(f"spot set {label!r} is empty")
    rows: dict[str, EvalRow] = {}
    for label, tasks in spot_sets.items():
        outcomes: list[tuple[bool, int]] = []
        for scene, spot in tasks:
            for trial in range(trials):
                run_seed = _trial_seed(seed, scene.scene_id, spot, trial)
                state = seek_only_game(scene, spot, run_seed, goal_type, config)
                run_seek(state, seeker_policy, np.random.default_rng(run_seed))
                outcomes.append((bool(state.found), state.s_t))
        n = len(outcomes)
        found = sum(1 for ok, _ in outcomes if ok)
        steps = [s for _, s in outcomes]
        wilson_low, wilson_high = wilson_interval(found, n, confidence)
        steps_low, steps_high = t_interval(steps, confidence)
        rows[label] = EvalRow(
            label=label,
            spots=len(tasks),
            trials=trials,
            n=n,
            found=found,
            find_rate=found / n,
            wilson_low=wilson_low,
            wilson_high=wilson_high,
            mean_steps=math.fsum(sorted(steps)) / n,
            steps_low=steps_low,
            steps_high=steps_high,
        )
    return rows
