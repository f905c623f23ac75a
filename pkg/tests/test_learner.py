"""Learning-head tests.

Analytic gradients are checked against central finite differences, advantage
estimation against a brute-force double-sum oracle, the optimizer against a
hand-computed first step, and the training loop for bit determinism and for
actually improving exploration coverage over its own uniform baseline.
"""

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cachegrid.gamecore import (
    ALL_OUTCOMES,
    Action,
    GameConfig,
    N_OUTCOMES,
    PlacementResolution,
    Stage,
    start_game,
    step,
)
from cachegrid.learner import (
    FEATURE_DIM,
    IDX_BIAS,
    IDX_GOAL_VISIBLE,
    IDX_HELD,
    IDX_LAST_ACTION,
    IDX_LAST_SUCCESS,
    IDX_STAGE,
    IDX_STANCE,
    F_GOAL,
    GLOBAL_ACTIONS,
    A3CLoss,
    AdamState,
    LearnerConfig,
    LinearPolicy,
    PolicySet,
    PsHeads,
    Trajectory,
    TrajectoryStep,
    a3c_loss,
    adam_step,
    build_evaluator,
    evaluate_coverage,
    featurize,
    gae,
    hindsight_relabel,
    imitation_loss,
    ps_features,
    ps_row_gradients,
    run_episode,
    train,
)
from cachegrid.perspective import HideEvaluator, MetricMap, RolloutEstimate, ps_losses
from cachegrid.rewards import OmTrace, om_reward
from cachegrid.world import (
    INTERACT_RANGE,
    Modality,
    Pose,
    Resting,
    ROTATIONS,
    view_window,
    world_to_window,
)
from reference import empty_room, make_scene, object_visible_oracle


@pytest.fixture(scope="module")
def learn_scene():
    """9x9 bordered room with a pillar, a cabinet and an occluder."""
    return make_scene(
        [
            "#########",
            "#A......#",
            "#.......#",
            "#...#...#",
            "#.......#",
            "#.......#",
            "#.......#",
            "#.......#",
            "#########",
        ],
        objects=[
            "cab receptacle 6 2 openable height=low slots=ContainedIn,OnTop capacity=large",
            "box occluder 2 6 height=high slots=Behind,OnTop",
        ],
        scene_id="learn9",
    )


@pytest.fixture(scope="module")
def sweep_scene():
    return make_scene(
        [
            "#######",
            "#A....#",
            "#.....#",
            "#.....#",
            "#.....#",
            "#.....#",
            "#######",
        ],
        objects=[
            "cab receptacle 4 2 openable height=low slots=ContainedIn,OnTop capacity=large",
            "crate occluder 2 4 height=high slots=Behind,OnTop",
        ],
        scene_id="sweep7",
    )


SMALL_GAME = GameConfig(em_max_steps=25, oh_max_steps=8, om_max_steps=10, s_max_steps=40)
SMALL_LEARN = LearnerConfig(n_rollouts=3, rollout_cap=40)


def fd_gradient(f, x, h=1e-5):
    """Central finite differences of a scalar function over a flat array."""
    grad = np.zeros_like(x)
    for k in range(x.size):
        bumped = x.copy()
        bumped.flat[k] += h
        hi = f(bumped)
        bumped.flat[k] -= 2 * h
        lo = f(bumped)
        grad.flat[k] = (hi - lo) / (2 * h)
    return grad


# ---------------------------------------------------------------------------
# Features


class TestFeaturize:
    def test_length_and_basics(self, learn_scene):
        state = start_game(learn_scene, "bread", seed=0, config=SMALL_GAME)
        window = view_window(state.scene, state.states, state.active_pose)
        features = featurize(window, state)
        assert features.shape == (FEATURE_DIM,)
        assert features[IDX_BIAS] == 1.0
        assert features[IDX_STAGE] == 1.0  # explore slot
        assert features[IDX_HELD] == 1.0
        assert features[IDX_STANCE] == float(state.active_pose.standing)
        # Fresh game: the "no previous action" slot is set, success bit clear.
        assert features[IDX_LAST_ACTION + len(GLOBAL_ACTIONS)] == 1.0
        assert features[IDX_LAST_SUCCESS] == 0.0
        assert features[IDX_GOAL_VISIBLE] == 0.0  # object still in hand

    def test_deterministic(self, learn_scene):
        state = start_game(learn_scene, "cup", seed=3, config=SMALL_GAME)
        window = view_window(state.scene, state.states, state.active_pose)
        assert np.array_equal(featurize(window, state), featurize(window, state))

    def test_last_action_slot_tracks_history(self, learn_scene):
        state = start_game(learn_scene, "bread", seed=0, config=SMALL_GAME)
        action = Action("RotateRight")
        step(state, action)
        window = view_window(state.scene, state.states, state.active_pose)
        features = featurize(window, state)
        slot = GLOBAL_ACTIONS.index(action)
        assert features[IDX_LAST_ACTION + slot] == 1.0
        assert features[IDX_LAST_SUCCESS] == 1.0
        assert features[IDX_LAST_ACTION + len(GLOBAL_ACTIONS)] == 0.0

    def _sweep_poses(self, scene):
        for x in range(1, 6):
            for z in range(1, 6):
                if not scene.is_passable((x, z)):
                    continue
                for rotation in ROTATIONS:
                    for standing in (True, False):
                        yield Pose(x, z, rotation, standing)

    @pytest.mark.parametrize(
        "resting,opened",
        [
            (Resting("goal", (4, 2), Modality.ON_TOP, "cab"), False),
            (Resting("goal", (4, 2), Modality.CONTAINED_IN, "cab"), False),
            (Resting("goal", (4, 2), Modality.CONTAINED_IN, "cab"), True),
            (Resting("goal", (2, 4), Modality.ON_TOP, "crate"), False),
            (Resting("goal", (3, 3), Modality.ON_TOP, None), False),
        ],
    )
    def test_goal_bit_matches_visibility_oracle(self, sweep_scene, resting, opened):
        state = start_game(sweep_scene, "bread", seed=0, config=SMALL_GAME)
        state.states.resting = resting
        state.states.open_flags["cab"] = opened
        state.held = False
        for pose in self._sweep_poses(sweep_scene):
            window = view_window(sweep_scene, state.states, pose)
            features = featurize(window, state)
            expected = object_visible_oracle(
                sweep_scene, state.states, pose, "goal", max_range=INTERACT_RANGE
            )
            assert features[IDX_GOAL_VISIBLE] == float(expected), pose
            cell_bits = features[F_GOAL : 49 * 8 : 8]
            if not expected:
                assert not cell_bits.any(), pose
            else:
                spot = world_to_window(pose, resting.cell)
                if spot is None:
                    assert not cell_bits.any(), pose
                else:
                    index = (spot[0] - 1) * 7 + (spot[1] - 1)
                    assert cell_bits[index] == 1.0, pose
                    assert cell_bits.sum() == 1.0, pose

    def test_goal_visible_outside_window(self):
        # Lateral offset 4 at depth 4: inside the cone and claim range but
        # beyond the 7-wide window, so only the global bit is set.
        scene = empty_room(9, 9, start=(1, 5))
        state = start_game(scene, "bread", seed=0, config=SMALL_GAME)
        state.states.resting = Resting("goal", (5, 1), Modality.ON_TOP, None)
        state.held = False
        pose = Pose(1, 5, 0, True)
        features = featurize(view_window(scene, state.states, pose), state)
        assert world_to_window(pose, (5, 1)) is None
        assert features[IDX_GOAL_VISIBLE] == 1.0
        assert not features[F_GOAL : 49 * 8 : 8].any()

    def test_window_flags_match_map_record(self, sweep_scene):
        state = start_game(sweep_scene, "bread", seed=0, config=SMALL_GAME)
        pose = state.active_pose
        window = view_window(sweep_scene, state.states, pose)
        features = featurize(window, state)
        metric_map = MetricMap()
        metric_map.write(pose, window)
        record = metric_map.read_at(pose)
        # First seven per-cell flags share the map record layout.
        got = features[: 49 * 8].reshape(49, 8)[:, :7]
        assert np.array_equal(got, record.flags[:, :7].astype(float))


# ---------------------------------------------------------------------------
# Advantage estimation


def gae_oracle(rewards, values, gamma, tau, bootstrap):
    """Direct double-sum evaluation of the advantage definition."""
    n = len(rewards)
    deltas = []
    for t in range(n):
        next_value = values[t + 1] if t + 1 < n else bootstrap
        deltas.append(rewards[t] + gamma * next_value - values[t])
    return np.array([
        sum((gamma * tau) ** l * deltas[t + l] for l in range(n - t)) for t in range(n)
    ])


class TestGae:
    def test_single_terminal_step(self):
        assert gae([1.0], [0.5], 0.99, 1.0, 0.0) == pytest.approx([0.5])

    def test_matches_double_sum_oracle(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            n = int(rng.integers(1, 21))
            rewards = rng.normal(size=n)
            values = rng.normal(size=n)
            gamma = float(rng.uniform(0.1, 1.0))
            tau = float(rng.uniform(0.0, 1.0))
            bootstrap = float(rng.normal())
            got = gae(rewards, values, gamma, tau, bootstrap)
            want = gae_oracle(rewards, values, gamma, tau, bootstrap)
            np.testing.assert_allclose(got, want, atol=1e-12)

    def test_tau_one_return_identity(self):
        rng = np.random.default_rng(6)
        for _ in range(50):
            n = int(rng.integers(1, 15))
            rewards = rng.normal(size=n)
            values = rng.normal(size=n)
            gamma = float(rng.uniform(0.5, 1.0))
            bootstrap = float(rng.normal())
            advantages = gae(rewards, values, gamma, 1.0, bootstrap)
            for t in range(n):
                ret = sum(gamma ** (k - t) * rewards[k] for k in range(t, n))
                ret += gamma ** (n - t) * bootstrap
                assert advantages[t] + values[t] == pytest.approx(ret, abs=1e-12)

    def test_length_mismatch_raises(self):
        with pytest.raises(ValueError):
            gae([1.0, 2.0], [0.0], 0.9, 1.0)

    @given(
        rewards=st.lists(st.floats(-5, 5), min_size=1, max_size=10),
        gamma=st.floats(0.01, 1.0),
        tau=st.floats(0.0, 1.0),
        bootstrap=st.floats(-5, 5),
        seed=st.integers(0, 10_000),
    )
    @settings(max_examples=60, deadline=None)
    def test_oracle_property(self, rewards, gamma, tau, bootstrap, seed):
        values = list(np.random.default_rng(seed).normal(size=len(rewards)))
        got = gae(rewards, values, gamma, tau, bootstrap)
        want = gae_oracle(rewards, values, gamma, tau, bootstrap)
        np.testing.assert_allclose(got, want, atol=1e-10)


# ---------------------------------------------------------------------------
# Losses


def a3c_total(logits, actions, advantages, returns, values, beta):
    return a3c_loss(logits, actions, advantages, returns, values, beta).total


class TestA3CLoss:
    def test_uniform_logits_zero_advantages(self):
        steps, n_actions = 4, 6
        logits = np.zeros((steps, n_actions))
        zeros = np.zeros(steps)
        loss = a3c_loss(logits, [0] * steps, zeros, zeros, zeros, beta=0.01)
        assert loss.policy == 0.0
        assert loss.value == 0.0
        assert loss.entropy == pytest.approx(steps * math.log(n_actions), abs=1e-12)
        assert loss.total == pytest.approx(-0.01 * steps * math.log(n_actions))

    def test_value_gradient_is_residual(self):
        rng = np.random.default_rng(1)
        values = rng.normal(size=5)
        returns = rng.normal(size=5)
        loss = a3c_loss(
            np.zeros((5, 3)), [0] * 5, np.zeros(5), returns, values, beta=0.0
        )
        assert np.array_equal(loss.d_values, values - returns)

    def test_beta_zero_removes_entropy(self):
        rng = np.random.default_rng(2)
        logits = rng.normal(size=(3, 4))
        actions = [1, 0, 3]
        advantages = rng.normal(size=3)
        values = rng.normal(size=3)
        returns = rng.normal(size=3)
        loss = a3c_loss(logits, actions, advantages, returns, values, beta=0.0)
        assert loss.total == loss.policy + loss.value

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(7)
        betas = [0.0, 0.01, 0.1, 1.0]
        for case in range(100):
            steps = int(rng.integers(1, 6))
            n_actions = int(rng.integers(2, 7))
            logits = rng.normal(scale=1.5, size=(steps, n_actions))
            actions = [int(a) for a in rng.integers(0, n_actions, size=steps)]
            advantages = rng.normal(size=steps)
            values = rng.normal(size=steps)
            returns = rng.normal(size=steps)
            beta = betas[case % len(betas)]
            loss = a3c_loss(logits, actions, advantages, returns, values, beta)

            fd_logits = fd_gradient(
                lambda x: a3c_total(
                    x.reshape(steps, n_actions), actions, advantages, returns, values, beta
                ),
                logits.reshape(-1).copy(),
            ).reshape(steps, n_actions)
            np.testing.assert_allclose(loss.d_logits, fd_logits, rtol=1e-6, atol=1e-7)

            fd_values = fd_gradient(
                lambda x: a3c_total(logits, actions, advantages, returns, list(x), beta),
                np.asarray(values, dtype=float).copy(),
            )
            np.testing.assert_allclose(loss.d_values, fd_values, rtol=1e-6, atol=1e-7)

    def test_length_mismatch_raises(self):
        with pytest.raises(ValueError):
            a3c_loss(np.zeros((2, 3)), [0], [0.0, 0.0], [0.0, 0.0], [0.0, 0.0], 0.0)


class TestImitationLoss:
    def test_uniform_logits(self):
        loss, _ = imitation_loss(np.zeros(7), expert_action=3)
        assert loss == pytest.approx(math.log(7), abs=1e-12)

    def test_point_mass_on_expert(self):
        logits = np.zeros(5)
        logits[2] = 40.0
        loss, grad = imitation_loss(logits, expert_action=2)
        assert loss < 1e-15
        assert np.abs(grad).max() < 1e-15

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(8)
        for _ in range(50):
            n = int(rng.integers(2, 9))
            logits = rng.normal(scale=1.5, size=n)
            expert = int(rng.integers(0, n))
            _, grad = imitation_loss(logits, expert)
            fd = fd_gradient(lambda x: imitation_loss(x, expert)[0], logits.copy())
            np.testing.assert_allclose(grad, fd, rtol=1e-6, atol=1e-7)


# ---------------------------------------------------------------------------
# Optimizer


class TestAdamStep:
    def test_first_step_matches_hand_computation(self):
        config = LearnerConfig()
        params = np.array([0.25, 2.0])
        grads = np.array([1.0, -0.5])
        state = AdamState.for_params(params, lr=1e-4)
        new = adam_step(params, grads, state, config)
        for k in range(2):
            g = grads[k]
            m = 0.99 * 0.0 + (1.0 - 0.99) * g
            v = 0.999 * 0.0 + (1.0 - 0.999) * g * g
            m_hat = m / (1.0 - 0.99 ** 1)
            v_hat = v / (1.0 - 0.999 ** 1)
            expected = params[k] - 1e-4 * m_hat / (math.sqrt(v_hat) + 1e-8)
            assert new[k] == expected
        # Unit gradient moves by almost exactly the learning rate.
        assert new[0] - params[0] == pytest.approx(-1e-4, rel=1e-6)

    def test_zero_gradient_keeps_params(self):
        config = LearnerConfig()
        params = np.array([1.0, -3.0, 0.5])
        state = AdamState.for_params(params, lr=1e-4)
        new = adam_step(params, np.zeros(3), state, config)
        assert np.array_equal(new, params)

    def test_amsgrad_second_moment_nondecreasing(self):
        config = LearnerConfig()
        rng = np.random.default_rng(9)
        params = rng.normal(size=6)
        state = AdamState.for_params(params, lr=1e-3)
        previous = state.v_max.copy()
        for _ in range(60):
            params = adam_step(params, rng.normal(size=6), state, config)
            assert (state.v_max >= previous).all()
            previous = state.v_max.copy()

    def test_plain_adam_uses_current_second_moment(self):
        config = LearnerConfig(amsgrad=False)
        params = np.array([1.0])
        state = AdamState.for_params(params, lr=1e-2)
        adam_step(params, np.array([10.0]), state, config)
        # A later tiny gradient shrinks v; plain Adam follows it down, so the
        # step is larger than the AMSGrad version frozen at the peak.
        p_plain = adam_step(params, np.array([1e-4]), state, config)
        ams_state = AdamState.for_params(params, lr=1e-2)
        ams_config = LearnerConfig(amsgrad=True)
        adam_step(params, np.array([10.0]), ams_state, ams_config)
        p_ams = adam_step(params, np.array([1e-4]), ams_state, ams_config)
        assert abs(p_plain[0] - params[0]) > abs(p_ams[0] - params[0])

    def test_shape_mismatch_raises(self):
        config = LearnerConfig()
        params = np.zeros(3)
        state = AdamState.for_params(params, lr=1e-4)
        with pytest.raises(ValueError):
            adam_step(params, np.zeros(4), state, config)


def test_learner_config_defaults():
    config = LearnerConfig()
    assert config.gamma == 0.99
    assert config.oh_gamma == 0.8
    assert config.tau == 1.0
    assert config.entropy_beta == 0.01
    assert config.adam_beta1 == 0.99
    assert config.adam_beta2 == 0.999
    assert config.amsgrad is True
    assert config.lr == 1e-4
    assert config.ps_lr == 5e-4
    assert config.stage_gamma(Stage.OH) == 0.8
    assert config.stage_gamma(Stage.EM) == 0.99


# ---------------------------------------------------------------------------
# Hindsight relabeling


def om_trajectory(actions_and_success):
    steps = tuple(
        TrajectoryStep(
            features=np.zeros(1),
            action=action,
            action_index=0,
            reward=0.0,
            value=0.0,
            success=success,
            new_opened=False,
        )
        for action, success in actions_and_success
    )
    return Trajectory(Stage.OM, steps)


def resolution_at(window_index, resting, modalities, success=False, off_window=False):
    return PlacementResolution(
        cell=(0, 0),
        window_index=window_index,
        modalities=frozenset(modalities),
        container_id=None,
        resting_modality=resting,
        off_window=off_window,
        success=success,
    )


class TestHindsightRelabel:
    def trajectory(self):
        return om_trajectory([
            (Action("MoveHandAhead"), True),
            (Action("MoveHandRight"), False),
            (Action("DropObject"), True),
        ])

    def test_exact_hit_golden(self):
        # Commanded elsewhere, landed on-top at window (3, 4): the relabeled
        # target is (0, 3, 4) and the drop scores step + unit distance + exact.
        resolution = resolution_at((3, 4), Modality.ON_TOP, {Modality.ON_TOP})
        relabeled = hindsight_relabel(self.trajectory(), resolution)
        assert relabeled.steps[-1].reward == pytest.approx(1.99)
        assert relabeled.steps[-1].reward == -0.01 + 0.25 ** 0 + 1.0

    def test_rewards_equal_om_reward_recomputation(self):
        trajectory = self.trajectory()
        resolution = resolution_at((2, 5), Modality.ON_TOP, {Modality.ON_TOP})
        relabeled = hindsight_relabel(trajectory, resolution)
        trace = OmTrace(
            actions=tuple(s.action for s in trajectory.steps),
            success=tuple(s.success for s in trajectory.steps),
            new_opened=tuple(s.new_opened for s in trajectory.steps),
        )
        for t, entry in enumerate(relabeled.steps):
            assert entry.reward == om_reward(trace, t, (0, 2, 5), resolution)

    def test_ghost_landing_relabels_to_behind(self):
        # Physically on top but only ghost-visible from the start pose: the
        # window supports Behind alone, so that is the achieved modality.
        resolution = resolution_at((5, 3), Modality.ON_TOP, {Modality.BEHIND})
        relabeled = hindsight_relabel(self.trajectory(), resolution)
        # Step cost, exact distance, modality bonus and exact bonus.
        assert relabeled.steps[-1].reward == pytest.approx(-0.01 + 1.0 + 1.0 + 1.0)

    def test_contained_landing(self):
        resolution = resolution_at(
            (2, 4), Modality.CONTAINED_IN, {Modality.ON_TOP, Modality.CONTAINED_IN}
        )
        relabeled = hindsight_relabel(self.trajectory(), resolution)
        assert relabeled.steps[-1].reward == pytest.approx(2.99)

    def test_success_rejected(self):
        resolution = resolution_at((3, 4), Modality.ON_TOP, {Modality.ON_TOP}, success=True)
        with pytest.raises(ValueError):
            hindsight_relabel(self.trajectory(), resolution)

    def test_off_window_rejected(self):
        resolution = resolution_at(None, Modality.ON_TOP, {Modality.ON_TOP}, off_window=True)
        with pytest.raises(ValueError):
            hindsight_relabel(self.trajectory(), resolution)

    def test_wrong_stage_rejected(self):
        trajectory = Trajectory(Stage.S, self.trajectory().steps)
        resolution = resolution_at((3, 4), Modality.ON_TOP, {Modality.ON_TOP})
        with pytest.raises(ValueError):
            hindsight_relabel(trajectory, resolution)

    def test_no_supported_modality_rejected(self):
        resolution = resolution_at((3, 4), Modality.ON_TOP, set())
        with pytest.raises(ValueError):
            hindsight_relabel(self.trajectory(), resolution)


# ---------------------------------------------------------------------------
# Hide-planning gradients


def small_estimate(rng):
    p1 = Pose(1, 1, 0, False)
    p2 = Pose(2, 1, 90, False)
    evaluator = HideEvaluator(
        logits={p1: rng.normal(scale=0.5, size=N_OUTCOMES),
                p2: rng.normal(scale=0.5, size=N_OUTCOMES)},
        values={p1: rng.normal(scale=0.5, size=N_OUTCOMES),
                p2: rng.normal(scale=0.5, size=N_OUTCOMES)},
    )
    estimate = RolloutEstimate(
        candidates=(p1, p2),
        outcomes=((ALL_OUTCOMES[5], ALL_OUTCOMES[17]), (ALL_OUTCOMES[33], ALL_OUTCOMES[60])),
        mean_lengths=((3.0, 12.5), (7.25, 1.5)),
        weights=((1.0, 1.0), (1.0, 1.0)),
        combined=(7.75, 4.375),
    )
    return evaluator, estimate, p1, p2


class TestPsRowGradients:
    def test_xent_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(11)
        evaluator, estimate, p1, _ = small_estimate(rng)
        realized = (p1, ALL_OUTCOMES[7])
        d_p_row, _ = ps_row_gradients(evaluator, realized, estimate)

        def xent_of(row):
            patched = HideEvaluator(
                logits={**evaluator.logits, p1: row}, values=evaluator.values
            )
            return ps_losses(patched, realized, estimate)["xent"]

        coords = [0, 5, 7, 100, 294]
        base = evaluator.logits[p1].copy()
        for k in coords:
            bumped = base.copy()
            bumped[k] += 1e-5
            hi = xent_of(bumped)
            bumped[k] -= 2e-5
            lo = xent_of(bumped)
            fd = (hi - lo) / 2e-5
            assert d_p_row[k] == pytest.approx(fd, rel=1e-6, abs=1e-9)

    def test_ranking_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(12)
        evaluator, estimate, p1, p2 = small_estimate(rng)
        realized = (p1, ALL_OUTCOMES[7])
        _, d_v_rows = ps_row_gradients(evaluator, realized, estimate)

        def ranking_of(pose, row):
            patched = HideEvaluator(
                logits=evaluator.logits, values={**evaluator.values, pose: row}
            )
            return ps_losses(patched, realized, estimate)["ranking"]

        for pose, sampled in ((p1, (5, 17)), (p2, (33, 60))):
            base = evaluator.values[pose].copy()
            for k in sampled:
                bumped = base.copy()
                bumped[k] += 1e-5
                hi = ranking_of(pose, bumped)
                bumped[k] -= 2e-5
                lo = ranking_of(pose, bumped)
                fd = (hi - lo) / 2e-5
                assert d_v_rows[pose][k] == pytest.approx(fd, rel=1e-6, abs=1e-9)
            # Entries the planner never measured carry no gradient.
            assert d_v_rows[pose][200] == 0.0


# ---------------------------------------------------------------------------
# Episode runner and training


class TestRunEpisode:
    def test_full_game_structure(self, learn_scene):
        rng = np.random.default_rng(21)
        outcome = run_episode(
            PolicySet.initial(), learn_scene, "bread", 21, rng, SMALL_LEARN, SMALL_GAME
        )
        assert set(outcome.trajectories) <= {Stage.EM, Stage.OH, Stage.S}
        assert len(outcome.trajectories[Stage.EM]) == SMALL_GAME.em_max_steps
        assert outcome.state.stage is Stage.DONE
        assert 0.0 <= outcome.coverage <= outcome.coverage_plus <= 1.0
        assert len(outcome.hide_values) == SMALL_GAME.em_max_steps + 1
        for trajectory, episode in outcome.om_trajectories:
            assert len(trajectory.steps) == len(episode.steps)

    def test_same_seed_same_game(self, learn_scene):
        runs = []
        for _ in range(2):
            rng = np.random.default_rng(77)
            outcome = run_episode(
                PolicySet.initial(), learn_scene, "cup", 5, rng, SMALL_LEARN, SMALL_GAME
            )
            runs.append([h.action.wire for h in outcome.state.history])
        assert runs[0] == runs[1]

    def test_stop_after_em(self, learn_scene):
        rng = np.random.default_rng(3)
        outcome = run_episode(
            PolicySet.initial(), learn_scene, "bread", 3, rng, SMALL_LEARN, SMALL_GAME,
            stop_after_em=True,
        )
        assert set(outcome.trajectories) == {Stage.EM}
        assert outcome.estimate is None
        assert outcome.state.stage is Stage.PS


class TestTrain:
    def test_zero_episodes_returns_policies_unchanged(self, learn_scene):
        initial = PolicySet.initial()
        policies, log = train(SMALL_LEARN, [learn_scene], episodes=0, seed=1,
                              policies=initial)
        assert policies is initial
        assert log == []
        assert not policies.em.weights.any()

    def test_no_scenes_raises(self):
        with pytest.raises(ValueError):
            train(SMALL_LEARN, [], episodes=1, seed=0)

    def test_fixed_seed_bit_identical(self, learn_scene):
        results = []
        for _ in range(2):
            policies, log = train(
                SMALL_LEARN, [learn_scene], episodes=4, seed=99, game_config=SMALL_GAME
            )
            results.append((policies, json.dumps(log, sort_keys=True)))
        assert results[0][1] == results[1][1]
        a, b = results[0][0], results[1][0]
        for name in ("em", "oh", "om", "s"):
            assert np.array_equal(getattr(a, name).weights, getattr(b, name).weights)
            assert np.array_equal(getattr(a, name).value, getattr(b, name).value)
        assert np.array_equal(a.ps.p_weights, b.ps.p_weights)
        assert np.array_equal(a.ps.v_weights, b.ps.v_weights)

    def test_log_records_all_episodes(self, learn_scene):
        _, log = train(
            SMALL_LEARN, [learn_scene], episodes=3, seed=2, game_config=SMALL_GAME
        )
        assert [r["episode"] for r in log] == [0, 1, 2]
        for record in log:
            assert record["scene"] == "learn9"
            assert 0.0 <= record["coverage"] <= 1.0
            assert set(record["losses"]) >= {"em", "oh", "s", "ps"}
            assert math.isfinite(record["losses"]["em"]["total"])
            assert math.isfinite(record["losses"]["ps"]["xent"])

    def test_two_workers_round_robin_deterministic(self, learn_scene):
        config = LearnerConfig(n_rollouts=3, rollout_cap=40, workers=2)
        runs = []
        for _ in range(2):
            policies, log = train(
                config, [learn_scene], episodes=4, seed=11, game_config=SMALL_GAME
            )
            runs.append((policies, json.dumps(log, sort_keys=True)))
        assert [r["worker"] for r in json.loads(runs[0][1])] == [0, 1, 0, 1]
        assert runs[0][1] == runs[1][1]
        assert np.array_equal(runs[0][0].em.weights, runs[1][0].em.weights)

    def test_training_improves_exploration(self, learn_scene):
        # Compressed version of the acceptance smoke test: a boosted learning
        # rate stands in for episode count so the trend shows quickly.
        config = LearnerConfig(lr=3e-3, ps_lr=5e-3, n_rollouts=3, rollout_cap=40)
        game = GameConfig(em_max_steps=40, oh_max_steps=8, om_max_steps=10, s_max_steps=50)
        baseline = evaluate_coverage(
            PolicySet.initial(), learn_scene, episodes=40, seed=4242, game_config=game
        )
        policies, _ = train(config, [learn_scene], episodes=120, seed=1, game_config=game)
        trained = evaluate_coverage(
            policies, learn_scene, episodes=40, seed=4242, game_config=game
        )
        assert trained > baseline


class TestEvaluateCoverage:
    def test_bounds_and_determinism(self, learn_scene):
        first = evaluate_coverage(
            PolicySet.initial(), learn_scene, episodes=5, seed=8, game_config=SMALL_GAME
        )
        second = evaluate_coverage(
            PolicySet.initial(), learn_scene, episodes=5, seed=8, game_config=SMALL_GAME
        )
        assert first == second
        assert 0.0 <= first <= 1.0


# ---------------------------------------------------------------------------
# Policy containers


class TestPolicyContainers:
    def test_initial_shapes(self):
        policies = PolicySet.initial()
        assert policies.em.weights.shape == (len(policies.em.actions), FEATURE_DIM)
        assert policies.oh.weights.shape[0] > policies.em.weights.shape[0]
        assert policies.ps.p_weights.shape == (N_OUTCOMES, 393)

    def test_copy_is_deep_for_arrays(self):
        policies = PolicySet.initial()
        clone = policies.copy()
        clone.em.weights[0, 0] = 5.0
        clone.ps.p_weights[1, 1] = 5.0
        assert policies.em.weights[0, 0] == 0.0
        assert policies.ps.p_weights[1, 1] == 0.0

    def test_ps_features_layout(self, learn_scene):
        state = start_game(learn_scene, "bread", seed=0, config=SMALL_GAME)
        pose = state.active_pose
        metric_map = MetricMap()
        metric_map.write(pose, view_window(learn_scene, state.states, pose))
        features = ps_features(metric_map, pose)
        assert features.shape == (393,)
        assert features[-1] == 1.0
        record = metric_map.read_at(Pose(pose.x, pose.z, pose.rotation, False)) or \
            metric_map.read_at(pose)
        assert np.array_equal(features[:392], record.flags.reshape(-1).astype(float))

    def test_build_evaluator_covers_all_locations(self, learn_scene):
        state = start_game(learn_scene, "bread", seed=0, config=SMALL_GAME)
        metric_map = MetricMap()
        for rotation in ROTATIONS:
            pose = Pose(1, 1, rotation, True)
            metric_map.write(pose, view_window(learn_scene, state.states, pose))
        evaluator, feats = build_evaluator(PsHeads.zeros(), metric_map)
        assert set(evaluator.logits) == set(metric_map.location_poses())
        assert set(feats) == set(evaluator.logits)
        for row in evaluator.logits.values():
            assert not row.any()
