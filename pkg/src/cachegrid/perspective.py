"""Metric map, belief worlds, and the hide-planning pipeline.

The hider writes what it sees into a pose-keyed map while exploring. To pick
a hiding location it scores every mapped pose with a tabular evaluator,
samples a few hypothetical hide outcomes per candidate, estimates how long a
seeker would take by simulating rollouts inside a belief world rebuilt from
the map alone, reweights those estimates so the 3-sample mean stays unbiased,
and finally draws the pose from a softmax over the estimates. The training
losses for the evaluator tables and a deterministic map-only hiding heuristic
live here too.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .gamecore import (
    ALL_OUTCOMES,
    N_OUTCOMES,
    HideOutcome,
    outcome_from_index,
)
from .oracle import GOAL_ID, _NAV_ACTIONS, _pose_graph, seek_field
from .world import (
    ROTATIONS,
    WINDOW_DEPTH,
    WINDOW_WIDTH,
    Modality,
    ObjectKind,
    ObjectStates,
    Pose,
    Resting,
    Scene,
    Terrain,
    ViewWindow,
    WorldObject,
    window_to_world,
)

# Per window cell the map stores a row of binary flags; a record is the 7x7
# grid of those rows flattened, so unwritten poses read as all-zeros.
FLAG_SEEN = 0
FLAG_PASSABLE = 1
FLAG_WALL = 2
FLAG_FURNITURE_LOW = 3
FLAG_FURNITURE_HIGH = 4
FLAG_OPENABLE = 5
FLAG_OPEN = 6
FLAG_OCCUPANT = 7
FLAGS_PER_CELL = 8
RECORD_WIDTH = WINDOW_DEPTH * WINDOW_WIDTH * FLAGS_PER_CELL

N_TOP_CANDIDATES = 5
N_RANDOM_CANDIDATES = 5
K_OUTCOMES = 3
N_ROLLOUTS = 50
ROLLOUT_EPSILON = 0.2
ROLLOUT_CAP = 500
SELECTION_BETA = 0.04


def softmax(logits) -> np.ndarray:
    """Softmax with the max subtracted first, so shifting every entry by the
    same exactly-representable constant leaves the result bit-identical."""
    x = np.asarray(logits, dtype=float)
    if x.size == 0:
        raise ValueError("softmax of an empty row")
    shifted = x - np.max(x)
    weights = np.exp(shifted)
    return weights / weights.sum()


def _logsumexp(logits: np.ndarray) -> float:
    top = float(np.max(logits))
    if math.isinf(top) and top < 0:
        return top
    return top + math.log(float(np.exp(logits - top).sum()))


def _bce_with_logit(diff: float, target: float) -> float:
    """Binary cross entropy against sigmoid(diff), computed in logit form."""
    # softplus(-diff), branch-stable for large |diff|
    softplus = max(-diff, 0.0) + math.log1p(math.exp(-abs(diff)))
    return softplus + (1.0 - target) * diff


# ---------------------------------------------------------------------------
# Metric map


@dataclass(frozen=True, eq=False, slots=True)
class MapRecord:
    """One pose's stored observation: window flags plus bookkeeping."""

    flags: np.ndarray  # (49, FLAGS_PER_CELL) uint8, window row-major
    visit_count: int
    last_write: int

    def seen_count(self) -> int:
        return int(self.flags[:, FLAG_SEEN].sum())


def location_pose(pose: Pose) -> Pose:
    """Canonical stance-free key: planning merges the two stances of a pose."""
    return pose.with_stance(False) if pose.standing else pose


@dataclass
class MetricMap:
    """Sparse pose-keyed memory of everything the hider has observed.

    Writes are keyed by the full pose and follow last-write-wins: a repeat
    visit replaces the stored flags and bumps the visit count. The tensor
    form lays records out on the world grid so row 0 is the northmost
    written row and column 0 the westmost.
    """

    records: dict[Pose, MapRecord] = field(default_factory=dict)
    _tick: int = 0

    def write(self, pose: Pose, window: ViewWindow) -> None:
        if window.pose != pose:
            raise ValueError("window was rendered for a different pose")
        flags = np.zeros((WINDOW_DEPTH * WINDOW_WIDTH, FLAGS_PER_CELL), dtype=np.uint8)
        for idx, cell in enumerate(window.cells):
            if not (cell.in_bounds and cell.visible):
                continue
            flags[idx, FLAG_SEEN] = 1
            flags[idx, FLAG_PASSABLE] = cell.passable
            flags[idx, FLAG_WALL] = cell.terrain is Terrain.WALL
            flags[idx, FLAG_FURNITURE_LOW] = cell.terrain is Terrain.FURNITURE_LOW
            flags[idx, FLAG_FURNITURE_HIGH] = cell.terrain is Terrain.FURNITURE_HIGH
            flags[idx, FLAG_OPENABLE] = cell.openable
            flags[idx, FLAG_OPEN] = cell.is_open
            flags[idx, FLAG_OCCUPANT] = bool(cell.occupants)
        prior = self.records.get(pose)
        self._tick += 1
        self.records[pose] = MapRecord(
            flags=flags,
            visit_count=prior.visit_count + 1 if prior else 1,
            last_write=self._tick,
        )

    def read_at(self, pose: Pose) -> MapRecord | None:
        return self.records.get(pose)

    def location_poses(self) -> tuple[Pose, ...]:
        merged = {location_pose(pose) for pose in self.records}
        return tuple(sorted(merged, key=Pose.key))

    @property
    def bounds(self) -> tuple[int, int, int, int] | None:
        """(min_x, min_z, max_x, max_z) over written pose cells."""
        if not self.records:
            return None
        xs = [pose.x for pose in self.records]
        zs = [pose.z for pose in self.records]
        return (min(xs), min(zs), max(xs), max(zs))

    def tensor(self) -> np.ndarray:
        """Dense read: shape (4 rotations, 2 stances, record width, h, w).

        Row index grows southward (so decreasing it reads north) and column
        index grows eastward; stance index 1 is standing.
        """
        if not self.records:
            raise ValueError("empty map has no tensor form")
        min_x, min_z, max_x, max_z = self.bounds
        h = max_z - min_z + 1
        w = max_x - min_x + 1
        out = np.zeros((len(ROTATIONS), 2, RECORD_WIDTH, h, w))
        for pose, record in self.records.items():
            r = pose.rotation // 90
            s = int(pose.standing)
            out[r, s, :, pose.z - min_z, pose.x - min_x] = record.flags.reshape(-1)
        return out


# ---------------------------------------------------------------------------
# Belief world


@dataclass(frozen=True)
class BeliefWorld:
    """A scene rebuilt purely from the map: unmapped cells are opaque walls."""

    scene: Scene
    states: ObjectStates
    start: Pose


_BELIEF_TERRAIN = {
    FLAG_WALL: Terrain.WALL,
    FLAG_FURNITURE_LOW: Terrain.FURNITURE_LOW,
    FLAG_FURNITURE_HIGH: Terrain.FURNITURE_HIGH,
}


def belief_world(metric_map: MetricMap, start: Pose) -> BeliefWorld:
    """Reconstruct a playable scene from the map's local observations.

    Per world cell the newest observation wins. Observed furniture objects
    come back as tall belief objects (their real height is not recorded), so
    the belief is conservative about lines of sight through them.
    """
    if not metric_map.records:
        raise ValueError("cannot build a belief world from an empty map")
    latest: dict[tuple[int, int], tuple[int, np.ndarray]] = {}
    own_row = np.zeros(FLAGS_PER_CELL, dtype=np.uint8)
    own_row[FLAG_SEEN] = 1
    own_row[FLAG_PASSABLE] = 1
    for pose, record in metric_map.records.items():
        tick = record.last_write
        held = latest.get(pose.cell)
        if held is None or held[0] < tick:
            latest[pose.cell] = (tick, own_row)
        for idx in np.flatnonzero(record.flags[:, FLAG_SEEN]):
            i, j = divmod(int(idx), WINDOW_WIDTH)
            cell = window_to_world(pose, i + 1, j + 1)
            held = latest.get(cell)
            if held is None or held[0] < tick:
                latest[cell] = (tick, record.flags[idx])
    width = max(x for x, _ in latest) + 1
    height = max(z for _, z in latest) + 1
    width = max(width, start.x + 1)
    height = max(height, start.z + 1)
    grid = [[Terrain.WALL] * width for _ in range(height)]
    objects: list[WorldObject] = []
    open_flags: dict[str, bool] = {}
    for (x, z), (_, row) in latest.items():
        terrain = Terrain.FLOOR
        for flag, kind in _BELIEF_TERRAIN.items():
            if row[flag]:
                terrain = kind
                break
        grid[z][x] = terrain
        if terrain is not Terrain.FLOOR or row[FLAG_PASSABLE]:
            continue
        # Floor cell blocked by furniture: rebuild it as a belief object.
        object_id = f"belief_{x}_{z}"
        if row[FLAG_OPENABLE]:
            objects.append(
                WorldObject(
                    object_id=object_id,
                    kind=ObjectKind.RECEPTACLE,
                    cell=(x, z),
                    openable=True,
                    height="high",
                    slots=frozenset({Modality.CONTAINED_IN, Modality.ON_TOP}),
                    capacity="large",
                )
            )
            open_flags[object_id] = bool(row[FLAG_OPEN])
        else:
            objects.append(
                WorldObject(
                    object_id=object_id,
                    kind=ObjectKind.OCCLUDER,
                    cell=(x, z),
                    height="high",
                    slots=frozenset({Modality.BEHIND, Modality.ON_TOP}),
                )
            )
    scene = Scene(
        scene_id="belief",
        width=width,
        height=height,
        terrain=tuple(tuple(line) for line in grid),
        objects=tuple(objects),
        start_pose=start,
    )
    return BeliefWorld(scene=scene, states=ObjectStates(open_flags, None), start=start)


def belief_resting(belief: BeliefWorld, pose: Pose, outcome: HideOutcome) -> Resting:
    """Where the object would sit in the belief world under a hide outcome.

    A failed hide drops the object at the agent's own cell. Otherwise the
    outcome's window cell is resolved against the belief scene; a modality
    the cell cannot support degrades to an exposed on-top placement.
    """
    if outcome.is_fail:
        return Resting(GOAL_ID, pose.cell, Modality.ON_TOP, None)
    placed = Pose(pose.x, pose.z, pose.rotation, outcome.standing)
    cell = window_to_world(placed, outcome.i, outcome.j)
    obj = belief.scene.object_at(cell) if belief.scene.in_bounds(cell) else None
    if outcome.modality == 1 and obj is not None and obj.openable and Modality.CONTAINED_IN in obj.slots:
        return Resting(GOAL_ID, cell, Modality.CONTAINED_IN, obj.object_id)
    if outcome.modality == 2:
        occluder = obj.object_id if obj is not None and Modality.BEHIND in obj.slots else None
        return Resting(GOAL_ID, cell, Modality.BEHIND, occluder)
    support = obj.object_id if obj is not None and Modality.ON_TOP in obj.slots else None
    return Resting(GOAL_ID, cell, Modality.ON_TOP, support)


# ---------------------------------------------------------------------------
# Evaluator tables and the map heuristic


def _slot_concealment(row: np.ndarray, seen_count: int) -> float:
    """How well a placement at this observed window cell would hide: 1 is a
    closed container, 0 is no usable spot, open floor scales with how much
    of the window was visible."""
    if not row[FLAG_SEEN] or row[FLAG_WALL]:
        return 0.0
    if row[FLAG_OPENABLE]:
        return 1.0
    blocked = row[FLAG_FURNITURE_LOW] or row[FLAG_FURNITURE_HIGH] or not row[FLAG_PASSABLE]
    if blocked:
        return 0.75
    return 1.0 - seen_count / (WINDOW_DEPTH * WINDOW_WIDTH)


def heuristic_hide_value(metric_map: MetricMap, pose: Pose) -> float:
    """Deterministic hiding-quality guess in [0, 1] from the pose's record
    alone: the concealment of the best placement slot in view. Unmapped
    poses score 0."""
    record = metric_map.read_at(pose)
    if record is None:
        return 0.0
    seen_count = record.seen_count()
    if seen_count == 0:
        return 0.0
    return max(
        _slot_concealment(record.flags[idx], seen_count)
        for idx in np.flatnonzero(record.flags[:, FLAG_SEEN])
    )


def _outcome_value(record: MapRecord | None, outcome: HideOutcome) -> float:
    if record is None:
        return 0.0
    row = record.flags[(outcome.i - 1) * WINDOW_WIDTH + (outcome.j - 1)]
    if not row[FLAG_SEEN] or row[FLAG_WALL]:
        return 0.0
    if outcome.modality == 1 and row[FLAG_OPENABLE]:
        return 1.0
    blocked = row[FLAG_FURNITURE_LOW] or row[FLAG_FURNITURE_HIGH] or not row[FLAG_PASSABLE]
    if outcome.modality == 2 and blocked:
        return 0.75
    return 1.0 - record.seen_count() / (WINDOW_DEPTH * WINDOW_WIDTH)


@dataclass
class HideEvaluator:
    """Tabular outcome model per location pose: P holds logits over the 295
    hide outcomes, V holds their hiding-quality scores. The fail outcome is
    column 0 of both."""

    logits: dict[Pose, np.ndarray]
    values: dict[Pose, np.ndarray]

    def __post_init__(self):
        for table in (self.logits, self.values):
            for pose, row in table.items():
                if row.shape != (N_OUTCOMES,):
                    raise ValueError(f"row for {pose} has shape {row.shape}, want ({N_OUTCOMES},)")

    def p_row(self, pose: Pose) -> np.ndarray:
        return self.logits[location_pose(pose)]

    def v_row(self, pose: Pose) -> np.ndarray:
        return self.values[location_pose(pose)]

    @classmethod
    def from_map(cls, metric_map: MetricMap) -> "HideEvaluator":
        """Untrained default: uniform outcome logits and heuristic values
        read off the map records (stance-specific where both were written)."""
        logits: dict[Pose, np.ndarray] = {}
        values: dict[Pose, np.ndarray] = {}
        for loc in metric_map.location_poses():
            stance = {
                s: metric_map.read_at(Pose(loc.x, loc.z, loc.rotation, s))
                for s in (False, True)
            }
            fallback = stance[False] or stance[True]
            v = np.zeros(N_OUTCOMES)
            for index in range(1, N_OUTCOMES):
                outcome = ALL_OUTCOMES[index]
                record = stance[outcome.standing] or fallback
                v[index] = _outcome_value(record, outcome)
            logits[loc] = np.zeros(N_OUTCOMES)
            values[loc] = v
        return cls(logits=logits, values=values)


# ---------------------------------------------------------------------------
# Candidate scoring and selection


def score_locations(evaluator: HideEvaluator, metric_map: MetricMap) -> dict[Pose, float]:
    """Expected hiding value per mapped location pose: sum over outcomes of
    softmax(P) times V."""
    scores: dict[Pose, float] = {}
    for pose in metric_map.location_poses():
        probs = softmax(evaluator.p_row(pose))
        scores[pose] = float(np.dot(probs, evaluator.v_row(pose)))
    return scores


def select_candidates(scores: dict[Pose, float], rng: np.random.Generator) -> tuple[Pose, ...]:
    """The five best-scoring poses (ties broken lexicographically) plus five
    distinct uniform-random others. Fewer than ten scored poses: all of them."""
    ranked = sorted(scores, key=lambda pose: (-scores[pose], pose.key()))
    limit = N_TOP_CANDIDATES + N_RANDOM_CANDIDATES
    if len(ranked) <= limit:
        return tuple(ranked)
    top = ranked[:N_TOP_CANDIDATES]
    rest = ranked[N_TOP_CANDIDATES:]
    picks = rng.choice(len(rest), size=N_RANDOM_CANDIDATES, replace=False)
    return tuple(top) + tuple(rest[int(k)] for k in picks)


# ---------------------------------------------------------------------------
# Outcome sampling and estimator weights


def sample_outcomes(p_row, rng: np.random.Generator, k: int = K_OUTCOMES) -> tuple[int, ...]:
    """k distinct outcome indices, drawn successively without replacement
    with probabilities proportional to softmax(p_row) over the unsampled
    remainder."""
    probs = softmax(p_row)
    if k > int(np.count_nonzero(probs > 0)):
        raise ValueError(f"need {k} outcomes with positive probability")
    drawn: list[int] = []
    weights = probs.copy()
    for _ in range(k):
        weights = weights / weights.sum()
        pick = int(rng.choice(weights.size, p=weights))
        drawn.append(pick)
        weights[pick] = 0.0
    return tuple(drawn)


def inclusion_probabilities(p_row, k: int) -> np.ndarray:
    """Exact probability, per outcome, of appearing within k successive
    no-replacement draws. Closed form enumerates draw positions, so k is
    capped at 3 except in the degenerate case where every positive-probability
    outcome is always drawn."""
    probs = softmax(p_row)
    positive = int(np.count_nonzero(probs > 0))
    if not 1 <= k <= positive:
        raise ValueError(f"k={k} outside 1..{positive} positive outcomes")
    if k == positive:
        return (probs > 0).astype(float)
    if k > 3:
        raise ValueError("closed form supports at most three draws")
    # 1 - p is never formed below: once a dominant probability rounds to 1.0
    # the subtraction collapses to zero and the odds blow up. Leave-one-out
    # masses are summed over the remaining entries instead, and rows whose
    # tail mass sits near the bottom of double range move to extended
    # precision, where reciprocals that overflow a double still fit.
    spare = np.sort(probs)[::-1][k - 1:].sum()
    work = probs.astype(np.longdouble) if spare < 1e-4 else probs
    n = work.size
    pi = work.copy()
    others = np.tile(work, (n, 1))
    np.fill_diagonal(others, 0.0)
    rest = others.sum(axis=1)
    if k >= 2:
        # P(e on draw 2) = sum_a p_a * p_e / (1 - p_a), a != e
        odds = np.divide(work, rest, out=np.zeros_like(work), where=rest > 0)
        total = odds.sum()
        second = total - odds
        for e in np.nonzero(second < total * 1e-9)[0]:
            # Resum directly where subtracting odds[e] cancelled the total.
            second[e] = odds[:e].sum() + odds[e + 1:].sum()
        pi = pi + work * second
    if k == 3:
        # P(e on draw 3) sums over ordered first pairs (a, b)
        denom = rest[:, None] - others
        pair = np.divide(
            others * odds[:, None],
            denom,
            out=np.zeros_like(others),
            where=(others > 0) & (denom > 0),
        )
        total = pair.sum()
        third = total - pair.sum(axis=1) - pair.sum(axis=0)
        for e in np.nonzero(third < total * 1e-9)[0]:
            keep = np.arange(n) != e
            third[e] = pair[np.ix_(keep, keep)].sum()
        pi = pi + work * third
    return np.asarray(pi, dtype=float)


def ht_weights(p_row, sampled) -> np.ndarray:
    """Inverse-inclusion weights w_j = p_j / pi_j for the sampled outcomes,
    making sum_j w_j mu_j an unbiased estimate of the softmax-expected mu."""
    drawn = tuple(sampled)
    if len(set(drawn)) != len(drawn):
        raise ValueError("sampled outcomes must be distinct")
    probs = softmax(p_row)
    if any(probs[index] <= 0 for index in drawn):
        raise ValueError("sampled outcome has zero probability")
    pi = inclusion_probabilities(p_row, len(drawn))
    return np.array([probs[index] / pi[index] for index in drawn])


# ---------------------------------------------------------------------------
# Mental rollouts


def mental_rollouts(
    belief: BeliefWorld,
    hide_at: tuple[Pose, HideOutcome],
    rng: np.random.Generator,
    n: int = N_ROLLOUTS,
    epsilon: float = ROLLOUT_EPSILON,
    cap: int = ROLLOUT_CAP,
) -> list[int]:
    """Simulated seeker episode lengths for one hypothetical hide.

    Each rollout walks the belief world from the seeker start with an
    epsilon-greedy policy over the shortest-path field and ends with the
    claim, which counts as a step. Placements the belief seeker cannot
    reach score the cap for every rollout.
    """
    pose, outcome = hide_at
    resting = belief_resting(belief, pose, outcome)
    base = belief.states.copy()
    if resting.modality is Modality.CONTAINED_IN and resting.container_id is not None:
        # Hiding inside means the container ends up shut.
        base.open_flags[resting.container_id] = False
    field = seek_field(belief.scene, resting, base)
    graph = _pose_graph(belief.scene)
    start = belief.start
    if start not in graph or field.dist(start, False) == math.inf:
        return [cap] * n
    return [_one_rollout(field, graph, start, rng, epsilon, cap) for _ in range(n)]


def _one_rollout(field, graph, start: Pose, rng, epsilon: float, cap: int) -> int:
    pose = start
    opened = False
    steps = 0
    while steps < cap:
        remaining = field.dist(pose, opened)
        if remaining == 0:
            return steps + 1  # the claim itself
        if epsilon > 0.0 and rng.random() < epsilon:
            action = _NAV_ACTIONS[int(rng.integers(len(_NAV_ACTIONS)))]
            for act, nxt in graph[pose]:
                if act == action:
                    pose = nxt
                    break
            # An inapplicable action burns the step in place.
        elif not opened and pose in field.open_action and field.dist(pose, True) == remaining - 1:
            opened = True
        else:
            for _, nxt in graph[pose]:
                if field.dist(nxt, opened) == remaining - 1:
                    pose = nxt
                    break
        steps += 1
    return cap


# ---------------------------------------------------------------------------
# Pose choice and the full plan


def choose_hide_pose(mu, rng: np.random.Generator) -> int:
    """Index drawn from softmax(0.04 * mu); higher estimated seek length
    means a proportionally likelier hiding pose."""
    estimates = np.asarray(mu, dtype=float)
    if estimates.size < 1:
        raise ValueError("at least one estimate required")
    probs = softmax(SELECTION_BETA * (estimates - estimates.max()))
    return int(rng.choice(estimates.size, p=probs))


@dataclass(frozen=True)
class RolloutEstimate:
    """Everything the planner measured: candidates, their sampled outcomes,
    per-outcome mean rollout lengths, estimator weights, and the combined
    per-candidate estimates mu_i = sum_j w_ij * mu_ij."""

    candidates: tuple[Pose, ...]
    outcomes: tuple[tuple[HideOutcome, ...], ...]
    mean_lengths: tuple[tuple[float, ...], ...]
    weights: tuple[tuple[float, ...], ...]
    combined: tuple[float, ...]


def plan_hide(
    metric_map: MetricMap,
    evaluator: HideEvaluator,
    seeker_start: Pose,
    rng: np.random.Generator,
    n_rollouts: int = N_ROLLOUTS,
    k: int = K_OUTCOMES,
    epsilon: float = ROLLOUT_EPSILON,
    cap: int = ROLLOUT_CAP,
) -> tuple[RolloutEstimate, int]:
    """Run the whole pipeline once and pick where to hide from.

    Returns the rollout estimate plus the chosen index into its candidates.
    """
    scores = score_locations(evaluator, metric_map)
    candidates = select_candidates(scores, rng)
    belief = belief_world(metric_map, seeker_start)
    outcomes: list[tuple[HideOutcome, ...]] = []
    means: list[tuple[float, ...]] = []
    weights: list[tuple[float, ...]] = []
    combined: list[float] = []
    for pose in candidates:
        row = evaluator.p_row(pose)
        drawn = sample_outcomes(row, rng, k=k)
        w = ht_weights(row, drawn)
        mu = []
        for index in drawn:
            lengths = mental_rollouts(
                belief, (pose, outcome_from_index(index)), rng,
                n=n_rollouts, epsilon=epsilon, cap=cap,
            )
            mu.append(sum(lengths) / len(lengths))
        outcomes.append(tuple(outcome_from_index(index) for index in drawn))
        means.append(tuple(mu))
        weights.append(tuple(float(x) for x in w))
        combined.append(float(np.dot(w, mu)))
    estimate = RolloutEstimate(
        candidates=candidates,
        outcomes=tuple(outcomes),
        mean_lengths=tuple(means),
        weights=tuple(weights),
        combined=tuple(combined),
    )
    return estimate, choose_hide_pose(estimate.combined, rng)


# ---------------------------------------------------------------------------
# Training losses


def ps_losses(
    evaluator: HideEvaluator,
    realized: tuple[Pose, HideOutcome],
    estimate: RolloutEstimate,
) -> dict[str, float]:
    """Losses supervising the evaluator tables from one finished game.

    xent scores the P row of the pose actually hidden from against the
    realized outcome. ranking averages, over every unordered pair of the
    planner's (candidate, outcome) measurements, a binary cross entropy
    pushing V differences to sort the same way as the rollout means.
    """
    pose, outcome = realized
    row = np.asarray(evaluator.p_row(pose), dtype=float)
    xent = float(_logsumexp(row) - row[outcome.index()])
    items: list[tuple[float, float]] = []
    for i, candidate in enumerate(estimate.candidates):
        v_row = evaluator.v_row(candidate)
        for j, sampled in enumerate(estimate.outcomes[i]):
            items.append((float(v_row[sampled.index()]), estimate.mean_lengths[i][j]))
    if len(items) < 2:
        raise ValueError("ranking needs at least two measurements")
    # Canonical pair orientation plus exactly-rounded summation keep the
    # loss bit-identical under any reordering of the estimate.
    losses = []
    for a in range(len(items)):
        for b in range(a + 1, len(items)):
            first, second = sorted((items[a], items[b]))
            losses.append(
                _bce_with_logit(first[0] - second[0], 1.0 if first[1] > second[1] else 0.0)
            )
    return {"xent": xent, "ranking": math.fsum(losses) / len(losses)}
