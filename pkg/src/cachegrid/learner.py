"""Desk-scale learning: linear actor-critic heads over hand-built features.

Every stage with a step loop (explore, hide, manipulate, seek) gets a linear
policy and value head trained with GAE advantages and an A3C-style loss; the
hide-planning tables are linear maps from map records to outcome logits and
values, trained with the planning losses. Gradients are analytic and the
optimizer is Adam with AMSGrad. A manipulation episode that missed its
commanded spot can be relabeled as a success for whatever spot it did hit.

Training runs workers sequentially: each reads the shared parameters at a
sync point, plays one episode privately, and the deltas are averaged back.
With one worker the whole run is bit-deterministic for a fixed seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .gamecore import (
    _STAGE_ACTIONS,
    Action,
    GameConfig,
    GameState,
    HideOutcome,
    N_OUTCOMES,
    OmEpisode,
    PlacementResolution,
    Stage,
    start_game,
    step,
)
from .oracle import SeekField, _pose_graph, seek_field
from .perspective import (
    HideEvaluator,
    MetricMap,
    RECORD_WIDTH,
    RolloutEstimate,
    belief_resting,
    belief_world,
    heuristic_hide_value,
    location_pose,
    mental_rollouts,
    plan_hide,
    ps_losses,
    softmax,
)
from .rewards import (
    DEFAULT_REWARDS,
    ExplorationTrace,
    OmTrace,
    RewardConfig,
    exploration_metrics,
    game_rewards,
    oh_percentile,
    om_reward,
)
from .world import (
    GOAL_TYPES,
    INTERACT_RANGE,
    Modality,
    Pose,
    Scene,
    Terrain,
    ViewWindow,
    object_visible,
    view_window,
    world_to_window,
)

# ---------------------------------------------------------------------------
# Feature extraction

# Per-cell window flags; like the map record but with a goal marker in place
# of the generic occupant bit.
F_SEEN = 0
F_PASSABLE = 1
F_WALL = 2
F_FURNITURE_LOW = 3
F_FURNITURE_HIGH = 4
F_OPENABLE = 5
F_OPEN = 6
F_GOAL = 7
_CELL_FLAGS = 8
_WINDOW_BLOCK = 49 * _CELL_FLAGS

_STAGE_ORDER = (Stage.EM, Stage.PS, Stage.OH, Stage.OM, Stage.S)


def _global_actions() -> tuple[Action, ...]:
    seen: dict[Action, None] = {}
    for stage in _STAGE_ORDER:
        for action in _STAGE_ACTIONS[stage]:
            seen.setdefault(action, None)
    return tuple(seen)


GLOBAL_ACTIONS = _global_actions()
_GLOBAL_INDEX = {action: index for index, action in enumerate(GLOBAL_ACTIONS)}
_CHOOSE_INDEX = next(
    index for index, action in enumerate(GLOBAL_ACTIONS) if action.name == "ChooseHidePose"
)

IDX_STANCE = _WINDOW_BLOCK
IDX_STAGE = IDX_STANCE + 1
IDX_HELD = IDX_STAGE + 5
IDX_STEP_FRACTION = IDX_HELD + 1
IDX_HAND = IDX_STEP_FRACTION + 1  # present, i/7, j/7, raised
IDX_GOAL_VISIBLE = IDX_HAND + 4
IDX_LAST_ACTION = IDX_GOAL_VISIBLE + 1  # one slot per action plus "none"
IDX_LAST_SUCCESS = IDX_LAST_ACTION + len(GLOBAL_ACTIONS) + 1
IDX_BIAS = IDX_LAST_SUCCESS + 1
FEATURE_DIM = IDX_BIAS + 1


def _action_index(action: Action) -> int:
    # Pose choices carry free-form offsets; they share one slot.
    if action.name == "ChooseHidePose":
        return _CHOOSE_INDEX
    return _GLOBAL_INDEX[action]


def _step_fraction(state: GameState) -> float:
    config = state.config
    if state.stage is Stage.EM:
        return state.em_t / config.em_max_steps if config.em_max_steps else 0.0
    if state.stage is Stage.PS:
        return state.ps_tries / config.ps_max_tries
    if state.stage is Stage.OH:
        return state.oh_t / config.oh_max_steps if config.oh_max_steps else 0.0
    if state.stage is Stage.OM and state.om_episodes:
        steps = len(state.om_episodes[-1].steps)
        return steps / config.om_max_steps if config.om_max_steps else 0.0
    if state.stage is Stage.S:
        return state.s_t / config.s_max_steps if config.s_max_steps else 0.0
    return 0.0


def featurize(window: ViewWindow, state: GameState) -> np.ndarray:
    """Fixed-length observation vector for the window's pose and game state."""
    out = np.zeros(FEATURE_DIM)
    pose = window.pose
    resting = state.states.resting
    goal_seen = resting is not None and object_visible(
        state.scene, state.states, pose, resting.object_id, max_range=INTERACT_RANGE
    )
    goal_window = world_to_window(pose, resting.cell) if goal_seen else None
    for cell in window.cells:
        if not (cell.in_bounds and cell.visible):
            continue
        base = ((cell.i - 1) * 7 + (cell.j - 1)) * _CELL_FLAGS
        out[base + F_SEEN] = 1.0
        out[base + F_PASSABLE] = float(cell.passable)
        out[base + F_WALL] = float(cell.terrain is Terrain.WALL)
        out[base + F_FURNITURE_LOW] = float(cell.terrain is Terrain.FURNITURE_LOW)
        out[base + F_FURNITURE_HIGH] = float(cell.terrain is Terrain.FURNITURE_HIGH)
        out[base + F_OPENABLE] = float(cell.openable)
        out[base + F_OPEN] = float(cell.is_open)
        if goal_window == (cell.i, cell.j):
            out[base + F_GOAL] = 1.0
    out[IDX_STANCE] = float(pose.standing)
    if state.stage in _STAGE_ORDER:
        out[IDX_STAGE + _STAGE_ORDER.index(state.stage)] = 1.0
    out[IDX_HELD] = float(state.held)
    out[IDX_STEP_FRACTION] = _step_fraction(state)
    if state.hand is not None:
        cell, height = state.hand
        hand_window = world_to_window(pose, cell)
        out[IDX_HAND] = 1.0
        if hand_window is not None:
            out[IDX_HAND + 1] = hand_window[0] / 7.0
            out[IDX_HAND + 2] = hand_window[1] / 7.0
        out[IDX_HAND + 3] = float(height == "high")
    out[IDX_GOAL_VISIBLE] = float(goal_seen)
    if state.history:
        last = state.history[-1]
        out[IDX_LAST_ACTION + _action_index(last.action)] = 1.0
        out[IDX_LAST_SUCCESS] = float(last.success)
    else:
        out[IDX_LAST_ACTION + len(GLOBAL_ACTIONS)] = 1.0
    out[IDX_BIAS] = 1.0
    return out


# ---------------------------------------------------------------------------
# Linear heads


@dataclass
class LinearPolicy:
    """One stage's actor-critic head: logits = weights @ x, value = value @ x."""

    actions: tuple[Action, ...]
    weights: np.ndarray  # (|actions|, FEATURE_DIM)
    value: np.ndarray  # (FEATURE_DIM,)

    @classmethod
    def zeros(cls, actions: Sequence[Action]) -> "LinearPolicy":
        return cls(tuple(actions), np.zeros((len(actions), FEATURE_DIM)), np.zeros(FEATURE_DIM))

    def logits(self, features: np.ndarray) -> np.ndarray:
        return self.weights @ features

    def value_of(self, features: np.ndarray) -> float:
        return float(self.value @ features)

    def copy(self) -> "LinearPolicy":
        return LinearPolicy(self.actions, self.weights.copy(), self.value.copy())


PS_FEATURE_DIM = RECORD_WIDTH + 1  # map record flags plus a bias term


@dataclass
class PsHeads:
    """Linear hide-planning tables: map record -> outcome logits and values."""

    p_weights: np.ndarray  # (N_OUTCOMES, PS_FEATURE_DIM)
    v_weights: np.ndarray

    @classmethod
    def zeros(cls) -> "PsHeads":
        return cls(np.zeros((N_OUTCOMES, PS_FEATURE_DIM)), np.zeros((N_OUTCOMES, PS_FEATURE_DIM)))

    def copy(self) -> "PsHeads":
        return PsHeads(self.p_weights.copy(), self.v_weights.copy())


def ps_features(metric_map: MetricMap, pose: Pose) -> np.ndarray:
    """Bias-extended record flags of the stance-merged location pose."""
    key = location_pose(pose)
    record = metric_map.read_at(key) or metric_map.read_at(replace(key, standing=True))
    out = np.zeros(PS_FEATURE_DIM)
    if record is not None:
        out[:RECORD_WIDTH] = record.flags.reshape(-1)
    out[RECORD_WIDTH] = 1.0
    return out


def build_evaluator(
    heads: PsHeads, metric_map: MetricMap
) -> tuple[HideEvaluator, dict[Pose, np.ndarray]]:
    """Apply the linear tables to every mapped location pose."""
    logits: dict[Pose, np.ndarray] = {}
    values: dict[Pose, np.ndarray] = {}
    features: dict[Pose, np.ndarray] = {}
    for pose in metric_map.location_poses():
        feats = ps_features(metric_map, pose)
        features[pose] = feats
        logits[pose] = heads.p_weights @ feats
        values[pose] = heads.v_weights @ feats
    return HideEvaluator(logits=logits, values=values), features


@dataclass
class PolicySet:
    em: LinearPolicy
    oh: LinearPolicy
    om: LinearPolicy
    s: LinearPolicy
    ps: PsHeads

    @classmethod
    def initial(cls) -> "PolicySet":
        return cls(
            em=LinearPolicy.zeros(_STAGE_ACTIONS[Stage.EM]),
            oh=LinearPolicy.zeros(_STAGE_ACTIONS[Stage.OH]),
            om=LinearPolicy.zeros(_STAGE_ACTIONS[Stage.OM]),
            s=LinearPolicy.zeros(_STAGE_ACTIONS[Stage.S]),
            ps=PsHeads.zeros(),
        )

    def copy(self) -> "PolicySet":
        return PolicySet(
            self.em.copy(), self.oh.copy(), self.om.copy(), self.s.copy(), self.ps.copy()
        )

    def head(self, stage: Stage) -> LinearPolicy:
        return {Stage.EM: self.em, Stage.OH: self.oh, Stage.OM: self.om, Stage.S: self.s}[stage]


# ---------------------------------------------------------------------------
# Advantage estimation and losses


@dataclass(frozen=True, slots=True)
class LearnerConfig:
    gamma: float = 0.99
    oh_gamma: float = 0.8
    tau: float = 1.0
    entropy_beta: float = 0.01
    adam_beta1: float = 0.99
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    amsgrad: bool = True
    lr: float = 1e-4
    ps_lr: float = 5e-4
    # Run-scale knobs for the hide planning done inside training games.
    n_rollouts: int = 50
    rollout_cap: int = 500
    rollout_epsilon: float = 0.2
    k_outcomes: int = 3
    workers: int = 1

    def stage_gamma(self, stage: Stage) -> float:
        return self.oh_gamma if stage is Stage.OH else self.gamma


def gae(
    rewards: Sequence[float],
    values: Sequence[float],
    gamma: float,
    tau: float,
    bootstrap: float = 0.0,
) -> np.ndarray:
    """Generalized advantage estimates over one episode.

    bootstrap is the value of the state after the last step; zero when the
    episode truly ended there.
    """
    if len(rewards) != len(values):
        raise ValueError(f"{len(rewards)} rewards vs {len(values)} values")
    advantages = np.zeros(len(rewards))
    running = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        next_value = values[t + 1] if t + 1 < len(values) else bootstrap
        delta = rewards[t] + gamma * next_value - values[t]
        running = delta + gamma * tau * running
        advantages[t] = running
    return advantages


@dataclass(frozen=True, slots=True)
class A3CLoss:
    total: float
    policy: float
    value: float
    entropy: float  # sum of per-step policy entropies, before the beta weight
    d_logits: np.ndarray  # (T, |actions|)
    d_values: np.ndarray  # (T,)


def a3c_loss(
    logits: np.ndarray,
    actions: Sequence[int],
    advantages: Sequence[float],
    returns: Sequence[float],
    values: Sequence[float],
    beta: float,
) -> A3CLoss:
    """Actor-critic loss with entropy bonus and its analytic gradient.

    Gradients are with respect to the logits and value estimates; advantages
    and returns are treated as constants, as in the usual actor-critic split.
    """
    logits = np.atleast_2d(np.asarray(logits, dtype=float))
    steps = logits.shape[0]
    if not (len(actions) == len(advantages) == len(returns) == len(values) == steps):
        raise ValueError("per-step arrays disagree on episode length")
    d_logits = np.zeros_like(logits)
    d_values = np.zeros(steps)
    policy_term = 0.0
    value_term = 0.0
    entropy_term = 0.0
    for t in range(steps):
        probs = softmax(logits[t])
        shifted = logits[t] - logits[t].max()
        log_probs = shifted - math.log(np.exp(shifted).sum())
        a = actions[t]
        adv = advantages[t]
        policy_term -= log_probs[a] * adv
        entropy = float(-(probs * log_probs).sum())
        entropy_term += entropy
        diff = values[t] - returns[t]
        value_term += 0.5 * diff * diff
        d_values[t] = diff
        grad = adv * probs
        grad[a] -= adv
        grad += beta * probs * (log_probs + entropy)
        d_logits[t] = grad
    total = policy_term + value_term - beta * entropy_term
    return A3CLoss(
        float(total), float(policy_term), float(value_term), float(entropy_term),
        d_logits, d_values,
    )


def imitation_loss(logits: np.ndarray, expert_action: int) -> tuple[float, np.ndarray]:
    """Cross entropy against a point mass on the expert's action."""
    logits = np.asarray(logits, dtype=float)
    shifted = logits - logits.max()
    loss = float(math.log(np.exp(shifted).sum()) - shifted[expert_action])
    grad = softmax(logits)
    grad[expert_action] -= 1.0
    return loss, grad


# ---------------------------------------------------------------------------
# Optimizer


@dataclass
class AdamState:
    lr: float
    m: np.ndarray
    v: np.ndarray
    v_max: np.ndarray
    t: int = 0

    @classmethod
    def for_params(cls, params: np.ndarray, lr: float) -> "AdamState":
        return cls(lr, np.zeros_like(params), np.zeros_like(params), np.zeros_like(params))


def adam_step(
    params: np.ndarray,
    grads: np.ndarray,
    state: AdamState,
    config: LearnerConfig,
) -> np.ndarray:
    """One Adam update (AMSGrad per config). Mutates state, returns new params."""
    if params.shape != grads.shape:
        raise ValueError(f"parameter shape {params.shape} vs gradient shape {grads.shape}")
    state.t += 1
    b1, b2 = config.adam_beta1, config.adam_beta2
    state.m = b1 * state.m + (1.0 - b1) * grads
    state.v = b2 * state.v + (1.0 - b2) * grads * grads
    m_hat = state.m / (1.0 - b1 ** state.t)
    if config.amsgrad:
        state.v_max = np.maximum(state.v_max, state.v)
        v_hat = state.v_max / (1.0 - b2 ** state.t)
    else:
        v_hat = state.v / (1.0 - b2 ** state.t)
    return params - state.lr * m_hat / (np.sqrt(v_hat) + config.adam_eps)


# ---------------------------------------------------------------------------
# Trajectories


@dataclass(frozen=True, slots=True)
class TrajectoryStep:
    features: np.ndarray
    action: Action
    action_index: int
    reward: float
    value: float
    success: bool
    new_opened: bool = False


@dataclass(frozen=True, slots=True)
class Trajectory:
    stage: Stage
    steps: tuple[TrajectoryStep, ...]
    terminal: bool = True

    def __len__(self) -> int:
        return len(self.steps)


def hindsight_relabel(
    trajectory: Trajectory,
    resolution: PlacementResolution,
    config: RewardConfig = DEFAULT_REWARDS,
) -> Trajectory:
    """Rewrite a failed manipulation episode as a success for the spot it hit.

    The commanded target becomes the achieved (modality, i, j) and rewards
    are recomputed, so the final drop scores the exact-hit branch.
    """
    if trajectory.stage is not Stage.OM:
        raise ValueError("hindsight relabeling applies to manipulation episodes")
    if resolution.success:
        raise ValueError("episode already succeeded; nothing to relabel")
    if resolution.off_window or resolution.window_index is None:
        raise ValueError("off-window landing has no achievable target")
    if resolution.resting_modality in resolution.modalities:
        achieved = resolution.resting_modality
    elif resolution.modalities:
        # The spot's physical arrangement is not how the window sees it;
        # describe it by a modality the window supports so the relabeled
        # drop scores the exact-hit branch.
        achieved = min(resolution.modalities, key=lambda m: m.value)
    else:
        raise ValueError("landing supports no window modality; not relabelable")
    target = (achieved.value, *resolution.window_index)
    trace = OmTrace(
        actions=tuple(s.action for s in trajectory.steps),
        success=tuple(s.success for s in trajectory.steps),
        new_opened=tuple(s.new_opened for s in trajectory.steps),
    )
    relabeled = tuple(
        replace(s, reward=om_reward(trace, t, target, resolution, config))
        for t, s in enumerate(trajectory.steps)
    )
    return Trajectory(Stage.OM, relabeled, trajectory.terminal)


# ---------------------------------------------------------------------------
# Hide-planning gradients


def ps_row_gradients(
    evaluator: HideEvaluator,
    realized: tuple[Pose, HideOutcome],
    estimate: RolloutEstimate,
) -> tuple[np.ndarray, dict[Pose, np.ndarray]]:
    """Analytic gradients of ps_losses with respect to the table rows.

    Returns (d xent / d P-row at the realized pose, per-candidate
    d ranking / d V-row). Mirrors the canonical pair orientation of the loss.
    """
    pose, outcome = realized
    row = np.asarray(evaluator.p_row(pose), dtype=float)
    d_p_row = softmax(row)
    d_p_row[outcome.index()] -= 1.0

    items: list[tuple[float, float, int, int]] = []
    for i, candidate in enumerate(estimate.candidates):
        v_row = evaluator.v_row(candidate)
        for j, sampled in enumerate(estimate.outcomes[i]):
            items.append(
                (float(v_row[sampled.index()]), estimate.mean_lengths[i][j], i, sampled.index())
            )
    if len(items) < 2:
        raise ValueError("ranking needs at least two measurements")
    pairs = len(items) * (len(items) - 1) // 2
    d_v_rows: dict[Pose, np.ndarray] = {
        candidate: np.zeros(N_OUTCOMES) for candidate in estimate.candidates
    }
    for a in range(len(items)):
        for b in range(a + 1, len(items)):
            first, second = sorted((items[a], items[b]))
            diff = first[0] - second[0]
            target = 1.0 if first[1] > second[1] else 0.0
            g = (1.0 / (1.0 + math.exp(-diff)) - target) / pairs
            d_v_rows[estimate.candidates[first[2]]][first[3]] += g
            d_v_rows[estimate.candidates[second[2]]][second[3]] -= g
    return d_p_row, d_v_rows


# ---------------------------------------------------------------------------
# Episode runner


@dataclass
class EpisodeOutcome:
    state: GameState
    trajectories: dict[Stage, Trajectory]
    om_trajectories: list[tuple[Trajectory, OmEpisode]]
    metric_map: MetricMap
    estimate: RolloutEstimate | None
    evaluator: HideEvaluator | None
    ps_feats: dict[Pose, np.ndarray]
    hide_pose: Pose | None
    imitation: list[tuple[np.ndarray, int]]  # (features, expert index) for S steps
    hide_values: list[float]
    coverage: float
    coverage_plus: float


def _sample_action(
    policy: LinearPolicy, features: np.ndarray, rng: np.random.Generator
) -> tuple[int, float]:
    probs = softmax(policy.logits(features))
    return int(rng.choice(len(probs), p=probs)), policy.value_of(features)


def _expert_action(field: SeekField, graph: dict, pose: Pose, opened: bool) -> Action | None:
    """Next action on a shortest path to claiming, mirroring the rollout policy."""
    remaining = field.dist(pose, opened)
    if remaining == math.inf:
        return None
    if remaining == 0:
        return Action("ClaimVisible")
    if not opened and pose in field.open_action and field.dist(pose, True) == remaining - 1:
        return field.open_action[pose]
    for action, nxt in graph.get(pose, ()):
        if field.dist(nxt, opened) == remaining - 1:
            return action
    return None


def run_episode(
    policies: PolicySet,
    scene: Scene,
    goal_type: str,
    seed: int,
    rng: np.random.Generator,
    config: LearnerConfig,
    game_config: GameConfig | None = None,
    stop_after_em: bool = False,
) -> EpisodeOutcome:
    """Play one five-stage game with the linear heads and collect everything
    the updates need. Step rewards stay zero; the caller scores the finished
    game and attaches them."""
    state = start_game(scene, goal_type, seed=seed, config=game_config)
    metric_map = MetricMap()
    collected: dict[Stage, list[TrajectoryStep]] = {Stage.EM: [], Stage.OH: [], Stage.S: []}
    om_steps: list[list[TrajectoryStep]] = []
    hide_values: list[float] = []

    def record_pose() -> None:
        pose = state.hider_pose
        metric_map.write(pose, view_window(state.scene, state.states, pose))

    record_pose()
    hide_values.append(heuristic_hide_value(metric_map, state.hider_pose))
    while state.stage is Stage.EM:
        window = view_window(state.scene, state.states, state.active_pose)
        features = featurize(window, state)
        index, value = _sample_action(policies.em, features, rng)
        action = policies.em.actions[index]
        result = step(state, action)
        record_pose()
        hide_values.append(heuristic_hide_value(metric_map, state.hider_pose))
        collected[Stage.EM].append(TrajectoryStep(
            features, action, index, 0.0, value, result.success,
            state.history[-1].newly_opened,
        ))

    metrics = exploration_metrics(ExplorationTrace.from_game(state), scene)
    if stop_after_em:
        return EpisodeOutcome(
            state=state,
            trajectories={Stage.EM: Trajectory(Stage.EM, tuple(collected[Stage.EM]))},
            om_trajectories=[],
            metric_map=metric_map,
            estimate=None,
            evaluator=None,
            ps_feats={},
            hide_pose=None,
            imitation=[],
            hide_values=hide_values,
            coverage=metrics.coverage,
            coverage_plus=metrics.coverage_plus,
        )

    evaluator, ps_feats = build_evaluator(policies.ps, metric_map)
    estimate, chosen = plan_hide(
        metric_map, evaluator, scene.start_pose, rng,
        n_rollouts=config.n_rollouts, k=config.k_outcomes,
        epsilon=config.rollout_epsilon, cap=config.rollout_cap,
    )
    # Try the chosen pose first, then the rest by decreasing estimated worth.
    order = [chosen] + [
        int(i) for i in np.argsort([-c for c in estimate.combined], kind="stable")
        if i != chosen
    ]
    base = state.hider_pose
    for index in order:
        if state.stage is not Stage.PS:
            break
        target = estimate.candidates[index]
        step(state, Action("ChooseHidePose", (
            target.x - base.x, target.z - base.z, target.rotation, int(target.standing),
        )))

    hide_pose = location_pose(state.hider_pose)
    while state.stage in (Stage.OH, Stage.OM):
        stage = state.stage
        window = view_window(state.scene, state.states, state.active_pose)
        features = featurize(window, state)
        head = policies.head(stage)
        index, value = _sample_action(head, features, rng)
        action = head.actions[index]
        result = step(state, action)
        record_pose()
        entry = TrajectoryStep(
            features, action, index, 0.0, value, result.success,
            state.history[-1].newly_opened,
        )
        if stage is Stage.OH:
            collected[Stage.OH].append(entry)
            if state.stage is Stage.OM:
                om_steps.append([])
        else:
            om_steps[-1].append(entry)

    # Seeker imitation guidance descends the hider's belief of the world.
    realized = state.hide_outcome()
    belief = belief_world(metric_map, scene.start_pose)
    resting = belief_resting(belief, hide_pose, realized)
    closed_states = belief.states.copy()
    if resting.modality is Modality.CONTAINED_IN and resting.container_id is not None:
        closed_states.open_flags[resting.container_id] = False
    field = seek_field(belief.scene, resting, closed_states)
    graph = _pose_graph(belief.scene)
    s_action_index = {action: i for i, action in enumerate(policies.s.actions)}
    imitation: list[tuple[np.ndarray, int]] = []

    while state.stage is Stage.S:
        window = view_window(state.scene, state.states, state.active_pose)
        features = featurize(window, state)
        index, value = _sample_action(policies.s, features, rng)
        action = policies.s.actions[index]
        real = state.states.resting
        opened = real is None or real.modality is not Modality.CONTAINED_IN or (
            real.container_id is not None and state.states.is_open(real.container_id)
        )
        expert = _expert_action(field, graph, state.seeker_pose, opened)
        if expert is not None and expert in s_action_index:
            imitation.append((features, s_action_index[expert]))
        result = step(state, action)
        collected[Stage.S].append(TrajectoryStep(
            features, action, index, 0.0, value, result.success,
            state.history[-1].newly_opened,
        ))

    trajectories = {
        stage: Trajectory(stage, tuple(steps)) for stage, steps in collected.items() if steps
    }
    om_trajectories = [
        (Trajectory(Stage.OM, tuple(steps)), episode)
        for steps, episode in zip(om_steps, state.om_episodes)
    ]
    return EpisodeOutcome(
        state=state,
        trajectories=trajectories,
        om_trajectories=om_trajectories,
        metric_map=metric_map,
        estimate=estimate,
        evaluator=evaluator,
        ps_feats=ps_feats,
        hide_pose=hide_pose,
        imitation=imitation,
        hide_values=hide_values,
        coverage=metrics.coverage,
        coverage_plus=metrics.coverage_plus,
    )


# ---------------------------------------------------------------------------
# Training


@dataclass
class _Optimizers:
    """Per-worker Adam slots, one per parameter tensor."""

    slots: dict[str, AdamState] = field(default_factory=dict)

    def get(self, name: str, params: np.ndarray, lr: float) -> AdamState:
        if name not in self.slots:
            self.slots[name] = AdamState.for_params(params, lr)
        return self.slots[name]


def _with_rewards(trajectory: Trajectory, rewards: Sequence[float]) -> Trajectory:
    if len(rewards) != len(trajectory.steps):
        raise ValueError("reward sequence does not match the trajectory")
    return Trajectory(
        trajectory.stage,
        tuple(replace(s, reward=r) for s, r in zip(trajectory.steps, rewards)),
        trajectory.terminal,
    )


def _update_stage(
    policy: LinearPolicy,
    name: str,
    trajectory: Trajectory,
    config: LearnerConfig,
    optimizers: _Optimizers,
    extra_logit_grads: Sequence[tuple[np.ndarray, np.ndarray]] = (),
) -> dict[str, float]:
    """One whole-episode actor-critic update, plus any imitation gradients."""
    steps = trajectory.steps
    features = np.stack([s.features for s in steps])
    logits = features @ policy.weights.T
    values = [s.value for s in steps]
    rewards = [s.reward for s in steps]
    advantages = gae(rewards, values, config.stage_gamma(trajectory.stage), config.tau,
                     0.0 if trajectory.terminal else values[-1])
    returns = advantages + np.asarray(values)
    loss = a3c_loss(logits, [s.action_index for s in steps], advantages, returns, values,
                    config.entropy_beta)
    d_weights = loss.d_logits.T @ features
    d_value = features.T @ loss.d_values
    for feats, d_logits_row in extra_logit_grads:
        d_weights += np.outer(d_logits_row, feats)
    policy.weights = adam_step(
        policy.weights, d_weights, optimizers.get(name + ".w", policy.weights, config.lr), config,
    )
    policy.value = adam_step(
        policy.value, d_value, optimizers.get(name + ".v", policy.value, config.lr), config,
    )
    return {"total": loss.total, "policy": loss.policy, "value": loss.value,
            "entropy": loss.entropy}


def _update_ps(
    heads: PsHeads,
    evaluator: HideEvaluator,
    ps_feats: dict[Pose, np.ndarray],
    realized: tuple[Pose, HideOutcome],
    estimate: RolloutEstimate,
    config: LearnerConfig,
    optimizers: _Optimizers,
) -> dict[str, float]:
    losses = ps_losses(evaluator, realized, estimate)
    d_p_row, d_v_rows = ps_row_gradients(evaluator, realized, estimate)
    d_p = np.outer(d_p_row, ps_feats[realized[0]])
    d_v = np.zeros_like(heads.v_weights)
    for pose, row in d_v_rows.items():
        d_v += np.outer(row, ps_feats[pose])
    heads.p_weights = adam_step(
        heads.p_weights, d_p, optimizers.get("ps.p", heads.p_weights, config.ps_lr), config,
    )
    heads.v_weights = adam_step(
        heads.v_weights, d_v, optimizers.get("ps.v", heads.v_weights, config.ps_lr), config,
    )
    return losses


def _train_one(
    policies: PolicySet,
    scene: Scene,
    goal_type: str,
    episode_seed: int,
    rng: np.random.Generator,
    config: LearnerConfig,
    game_config: GameConfig | None,
    optimizers: _Optimizers,
) -> dict:
    outcome = run_episode(policies, scene, goal_type, episode_seed, rng, config, game_config)
    state = outcome.state
    realized = state.hide_outcome()

    # Percentile feedback for the hider: where the real seeker's step count
    # lands among fresh mental rollouts of the realized outcome.
    belief = belief_world(outcome.metric_map, scene.start_pose)
    rollout_lengths = mental_rollouts(
        belief, (outcome.hide_pose, realized), rng,
        n=config.n_rollouts, epsilon=config.rollout_epsilon, cap=config.rollout_cap,
    )
    percentile = oh_percentile(state.s_t, rollout_lengths) if state.s_t else 0.0
    rewards = game_rewards(state, hide_values=outcome.hide_values, percentile_term=percentile)

    record: dict = {
        "scene": scene.scene_id,
        "goal": goal_type,
        "coverage": outcome.coverage,
        "coverage_plus": outcome.coverage_plus,
        "hide_outcome": realized.wire,
        "found": bool(state.found),
        "seeker_steps": state.s_t,
        "losses": {},
    }

    stage_rewards = {Stage.EM: rewards.em, Stage.OH: rewards.oh, Stage.S: rewards.s}
    for stage, name in ((Stage.EM, "em"), (Stage.OH, "oh"), (Stage.S, "s")):
        trajectory = outcome.trajectories.get(stage)
        if trajectory is None or not trajectory.steps:
            continue
        trajectory = _with_rewards(trajectory, stage_rewards[stage])
        extra = []
        if stage is Stage.S and outcome.imitation:
            total_im = 0.0
            for feats, expert in outcome.imitation:
                im_loss, d_logits = imitation_loss(policies.s.logits(feats), expert)
                total_im += im_loss
                extra.append((feats, d_logits))
            record["losses"]["imitation"] = total_im / len(outcome.imitation)
        record["losses"][name] = _update_stage(
            policies.head(stage), name, trajectory, config, optimizers, extra,
        )

    om_losses = []
    for index, (trajectory, episode) in enumerate(outcome.om_trajectories):
        trajectory = _with_rewards(trajectory, rewards.om[index])
        om_losses.append(_update_stage(policies.om, "om", trajectory, config, optimizers))
        resolution = episode.resolution
        if resolution is not None and not resolution.success and not resolution.off_window:
            relabeled = hindsight_relabel(trajectory, resolution)
            om_losses.append(_update_stage(policies.om, "om", relabeled, config, optimizers))
    if om_losses:
        record["losses"]["om"] = {
            key: sum(loss[key] for loss in om_losses) / len(om_losses) for key in om_losses[0]
        }

    if outcome.estimate is not None and outcome.evaluator is not None:
        record["losses"]["ps"] = _update_ps(
            policies.ps, outcome.evaluator, outcome.ps_feats,
            (outcome.hide_pose, realized), outcome.estimate, config, optimizers,
        )
    return record


def _merge(snapshot: np.ndarray, locals_: list[np.ndarray]) -> np.ndarray:
    return snapshot + sum(local - snapshot for local in locals_) / len(locals_)


def train(
    config: LearnerConfig,
    scenes: Sequence[Scene],
    episodes: int,
    seed: int,
    game_config: GameConfig | None = None,
    policies: PolicySet | None = None,
) -> tuple[PolicySet, list[dict]]:
    """Run training episodes and return the updated policies plus a log.

    Workers are simulated sequentially: every round, each worker copies the
    shared parameters, trains on one episode, and the deltas are averaged
    back. One worker is the bit-deterministic reproducibility mode.
    """
    if not scenes:
        raise ValueError("need at least one scene")
    shared = policies if policies is not None else PolicySet.initial()
    if episodes <= 0:
        return shared, []
    workers = max(1, config.workers)
    rngs = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(workers)]
    optimizers = [_Optimizers() for _ in range(workers)]
    log: list[dict] = []
    episode = 0
    while episode < episodes:
        round_size = min(workers, episodes - episode)
        snapshot = shared.copy()
        locals_: list[PolicySet] = []
        for w in range(round_size):
            local = snapshot.copy()
            scene = scenes[(episode + w) % len(scenes)]
            goal_type = GOAL_TYPES[(episode + w) % len(GOAL_TYPES)]
            record = _train_one(
                local, scene, goal_type, seed + episode + w, rngs[w], config, game_config,
                optimizers[w],
            )
            record["episode"] = episode + w
            record["worker"] = w
            log.append(record)
            locals_.append(local)
        for name in ("em", "oh", "om", "s"):
            head: LinearPolicy = getattr(shared, name)
            head.weights = _merge(
                getattr(snapshot, name).weights, [getattr(p, name).weights for p in locals_]
            )
            head.value = _merge(
                getattr(snapshot, name).value, [getattr(p, name).value for p in locals_]
            )
        shared.ps.p_weights = _merge(snapshot.ps.p_weights, [p.ps.p_weights for p in locals_])
        shared.ps.v_weights = _merge(snapshot.ps.v_weights, [p.ps.v_weights for p in locals_])
        episode += round_size
    return shared, log


def evaluate_coverage(
    policies: PolicySet,
    scene: Scene,
    episodes: int,
    seed: int,
    game_config: GameConfig | None = None,
    goal_type: str = GOAL_TYPES[0],
) -> float:
    """Mean exploration coverage over sampled explore-only episodes."""
    rng = np.random.default_rng(seed)
    config = LearnerConfig()
    total = 0.0
    for index in range(episodes):
        outcome = run_episode(
            policies, scene, goal_type, seed + index, rng, config, game_config,
            stop_after_em=True,
        )
        total += outcome.coverage
    return total / episodes
