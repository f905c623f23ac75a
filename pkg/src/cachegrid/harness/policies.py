"""Stock agents for driving games: random, scripted, search-guided, learned.

Every policy implements the same three-call interface. ``reset`` is invoked
when the policy takes over a game (at game start for hiders, at seek start
for seekers), ``act`` must return the next action and ``observe`` sees the
state after every engine step the policy drove.
"""

from __future__ import annotations

import math
from collections import deque

import numpy as np

from ..gamecore import Action, GameState, Stage, StepResult, legal_actions
from ..learner import LearnerConfig, PolicySet, build_evaluator, featurize
from ..oracle import _pose_graph, seek_field, shortest_path_to_visibility
from ..perspective import MetricMap, plan_hide, softmax
from ..world import ROTATIONS, WINDOW_CENTER_J, view_window


class StagePolicy:
    """Base class; the defaults make stateless policies one method long."""

    def reset(self, state: GameState) -> None:
        pass

    def act(self, state: GameState, rng: np.random.Generator) -> Action:
        raise NotImplementedError

    def observe(self, state: GameState, result: StepResult) -> None:
        pass


class RandomPolicy(StagePolicy):
    """Uniform draws over the stage's action space.

    Works as either role. The hide pose, whose offsets are unbounded, is
    sampled from a small neighborhood of the exploration end pose.
    """

    def __init__(self, offset_range: int = 2):
        self.offset_range = offset_range

    def act(self, state: GameState, rng: np.random.Generator) -> Action:
        if state.stage is Stage.PS:
            r = self.offset_range
            return Action("ChooseHidePose", (
                int(rng.integers(-r, r + 1)),
                int(rng.integers(-r, r + 1)),
                int(ROTATIONS[rng.integers(len(ROTATIONS))]),
                int(rng.integers(2)),
            ))
        space = legal_actions(state)
        return space[int(rng.integers(len(space)))]


class DropAheadHider(StagePolicy):
    """Scripted hider that makes no effort to hide.

    It spins through the exploration budget, keeps the exploration end pose,
    places the object on the cell directly ahead and readies the seeker. The
    resulting spot is out in the open, so its visibility sits near the scene
    maximum.
    """

    def reset(self, state: GameState) -> None:
        self._placed = False

    def act(self, state: GameState, rng: np.random.Generator) -> Action:
        if state.stage is Stage.EM:
            return Action("RotateRight")
        if state.stage is Stage.PS:
            pose = state.em_final_pose
            return Action("ChooseHidePose", (0, 0, pose.rotation, int(pose.standing)))
        if state.stage is Stage.OM:
            return Action("DropObject")
        if not self._placed:
            self._placed = True
            return Action("PlaceAt", (0, 1, WINDOW_CENTER_J))
        # Succeeds when the placement landed; otherwise burns the budget and
        # the engine drops the object at the default hand cell anyway.
        return Action("ReadyForSeeker")


class OracleSeeker(StagePolicy):
    """Replays a shortest action path to a claimable pose, then claims.

    The path comes from the search oracle over the true scene and object
    states, so every step succeeds and the claim lands whenever the object
    is findable at all. Unfindable objects leave the seeker rotating in
    place until the budget runs out.
    """

    def reset(self, state: GameState) -> None:
        path = shortest_path_to_visibility(
            state.scene, state.active_pose, state.states.resting, state.states
        )
        self._path = None if path is None else deque(path)

    def act(self, state: GameState, rng: np.random.Generator) -> Action:
        if self._path is None:
            return Action("RotateRight")
        if self._path:
            return self._path.popleft()
        return Action("ClaimVisible")


class EpsilonGreedySeeker(StagePolicy):
    """Descends the true distance-to-claim field, deviating at rate epsilon.

    Each step draws once: with probability epsilon the action is uniform over
    the stage's action space, otherwise it is the first field-descending step
    (the claim once in range, the container opening when that is what shortens
    the distance). Detours compound over long approaches, so spots that need
    deeper searches are found less often within the budget.
    """

    def __init__(self, epsilon: float = 0.2):
        if not 0.0 <= epsilon <= 1.0:
            raise ValueError(f"epsilon must lie in [0, 1], got {epsilon}")
        self.epsilon = epsilon

    def reset(self, state: GameState) -> None:
        self._field = seek_field(state.scene, state.states.resting, state.states)
        self._graph = _pose_graph(state.scene)

    def act(self, state: GameState, rng: np.random.Generator) -> Action:
        if rng.random() >= self.epsilon:
            action = self._descend(state)
            if action is not None:
                return action
        space = legal_actions(state)
        return space[int(rng.integers(len(space)))]

    def _descend(self, state: GameState) -> Action | None:
        field = self._field
        # The field's second layer exists only when a concealing container
        # must be opened; without one the single False layer holds all poses.
        if field.container_id is None:
            opened = False
        else:
            opened = state.states.is_open(field.container_id)
        pose = state.active_pose
        remaining = field.dist(pose, opened)
        if math.isinf(remaining):
            return None
        if remaining == 0:
            return Action("ClaimVisible")
        if not opened and pose in field.open_action and field.dist(pose, True) == remaining - 1:
            return field.open_action[pose]
        for action, nxt in self._graph[pose]:
            if field.dist(nxt, opened) == remaining - 1:
                return action
        return None


class LearnedPolicy(StagePolicy):
    """Drives any stage by sampling from trained linear heads.

    As a hider it maintains the metric map the planner needs while moving,
    then picks the hide pose with the rollout planner; later tries walk the
    remaining candidates by estimated worth and finally fall back to the
    exploration end pose, which always succeeds.
    """

    def __init__(self, policies: PolicySet, config: LearnerConfig | None = None):
        self.policies = policies
        self.config = config or LearnerConfig()

    def reset(self, state: GameState) -> None:
        self._map = MetricMap()
        self._hide_plan: list[Action] | None = None
        if state.stage is not Stage.S:
            self._record(state)

    def _record(self, state: GameState) -> None:
        pose = state.hider_pose
        self._map.write(pose, view_window(state.scene, state.states, pose))

    def act(self, state: GameState, rng: np.random.Generator) -> Action:
        if state.stage is Stage.PS:
            if self._hide_plan is None:
                self._hide_plan = self._plan(state, rng)
            if self._hide_plan:
                return self._hide_plan.pop(0)
            pose = state.em_final_pose
            return Action("ChooseHidePose", (0, 0, pose.rotation, int(pose.standing)))
        head = self.policies.head(state.stage)
        window = view_window(state.scene, state.states, state.active_pose)
        probs = softmax(head.logits(featurize(window, state)))
        return head.actions[int(rng.choice(len(probs), p=probs))]

    def _plan(self, state: GameState, rng: np.random.Generator) -> list[Action]:
        evaluator, _ = build_evaluator(self.policies.ps, self._map)
        c = self.config
        estimate, chosen = plan_hide(
            self._map, evaluator, state.scene.start_pose, rng,
            n_rollouts=c.n_rollouts, k=c.k_outcomes,
            epsilon=c.rollout_epsilon, cap=c.rollout_cap,
        )
        order = [chosen] + [
            int(i) for i in np.argsort([-v for v in estimate.combined], kind="stable")
            if i != chosen
        ]
        base = state.em_final_pose
        return [
            Action("ChooseHidePose", (
                target.x - base.x, target.z - base.z, target.rotation, int(target.standing),
            ))
            for target in (estimate.candidates[i] for i in order)
        ]

    def observe(self, state: GameState, result: StepResult) -> None:
        if state.stage in (Stage.EM, Stage.PS, Stage.OH, Stage.OM):
            self._record(state)
