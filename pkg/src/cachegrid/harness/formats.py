"""Versioned text formats plus policy and config files.

Every text format opens with a ``cachegrid-<kind> v1`` header line and closes
with ``end``; parse errors name the offending line. Serialization is
canonical, so parsing a file and re-serializing it reproduces the bytes.
Files are written atomically: a temporary sibling is renamed over the target.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import dataclass, replace, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from ..gamecore import GameConfig
from ..learner import LearnerConfig, PolicySet
from ..oracle import HidingSpot
from ..rewards import RewardConfig
from ..world import Modality, Pose, Scene, build_scene, scene_text
from .match import MatchReport
from .seriation import VIEWINGS, SeriationExample

SPOTS_HEADER = "cachegrid-spots v1"
REPORT_HEADER = "cachegrid-report v1"
SERIATION_HEADER = "cachegrid-seriation v1"


class FormatError(ValueError):
    """Malformed harness file; the message starts with the line number."""

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class FormatVersionError(FormatError):
    """The header names a version (or format) this code does not read."""


# ---------------------------------------------------------------------------
# Plumbing


def write_text_atomic(path: str | Path, text: str) -> Path:
    """Write via a temporary sibling and rename, so readers never see a
    partial file and concurrent writers land one complete version."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise
    return path


class _Cursor:
    def __init__(self, text: str):
        self.lines = text.splitlines()
        self.pos = 0  # lines consumed so far; 1-based line number of the next take

    def take(self, what: str) -> str:
        if self.pos >= len(self.lines):
            raise FormatError(f"file ends where {what} was expected", self.pos + 1)
        line = self.lines[self.pos]
        self.pos += 1
        return line

    def fail(self, message: str) -> FormatError:
        return FormatError(message, self.pos)  # the line just taken


def _check_header(cursor: _Cursor, expected: str) -> None:
    found = cursor.take("the format header").strip()
    if found != expected:
        raise FormatVersionError(f"expected header {expected!r}, found {found!r}", 1)


def _keyed(cursor: _Cursor, key: str) -> str:
    line = cursor.take(f"'{key}:'")
    prefix = key + ":"
    if not line.startswith(prefix):
        raise cursor.fail(f"expected '{key}:', found {line!r}")
    return line[len(prefix):].strip()


def _expect_end(cursor: _Cursor) -> None:
    line = cursor.take("the terminating 'end' line")
    if line.strip() != "end":
        raise cursor.fail(f"expected 'end', found {line!r}")


def _int(cursor: _Cursor, text: str, what: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise cursor.fail(f"{what} must be an integer, found {text!r}") from None


def _float(cursor: _Cursor, text: str, what: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise cursor.fail(f"{what} must be a number, found {text!r}") from None
    if math.isnan(value) or math.isinf(value):
        raise cursor.fail(f"{what} must be finite, found {text!r}")
    return value


def _bool(cursor: _Cursor, text: str, what: str) -> bool:
    if text == "true":
        return True
    if text == "false":
        return False
    raise cursor.fail(f"{what} must be true or false, found {text!r}")


def _opt(token: str) -> str | None:
    return None if token == "-" else token


def _opt_text(value: str | None) -> str:
    return "-" if value is None else value


# ---------------------------------------------------------------------------
# Scenes


def load_scene_file(path: str | Path) -> Scene:
    return build_scene(Path(path).read_text(encoding="utf-8"))


def save_scene_file(path: str | Path, scene: Scene) -> Path:
    return write_text_atomic(path, scene_text(scene) + "\n")


def load_scenes(paths: Iterable[str | Path]) -> list[Scene]:
    """Scenes from files and/or directories (non-recursive ``*.scene``)."""
    files: list[Path] = []
    for raw in paths:
        path = Path(raw)
        if path.is_dir():
            files.extend(sorted(path.glob("*.scene")))
        else:
            files.append(path)
    if not files:
        raise ValueError("no scene files found")
    return [load_scene_file(path) for path in files]


# ---------------------------------------------------------------------------
# Spot files


def spots_text(scene_id: str, goal_type: str, spots: Sequence[HidingSpot]) -> str:
    lines = [
        SPOTS_HEADER,
        f"scene: {scene_id}",
        f"goal: {goal_type}",
        f"spots: {len(spots)}",
    ]
    for spot in spots:
        lines.append(
            f"{spot.cell[0]} {spot.cell[1]} {spot.modality.wire}"
            f" {_opt_text(spot.container_id)} {repr(spot.v)} {_opt_text(spot.label)}"
        )
    lines.append("end")
    return "\n".join(lines) + "\n"


def parse_spots(text: str) -> tuple[str, str, tuple[HidingSpot, ...]]:
    cursor = _Cursor(text)
    _check_header(cursor, SPOTS_HEADER)
    scene_id = _keyed(cursor, "scene")
    goal_type = _keyed(cursor, "goal")
    count = _int(cursor, _keyed(cursor, "spots"), "the spot count")
    spots = []
    for _ in range(count):
        line = cursor.take("a spot line")
        parts = line.split()
        if len(parts) != 6:
            raise cursor.fail(f"spot lines have 6 fields, found {len(parts)}")
        try:
            modality = Modality.from_wire(parts[2])
        except ValueError as err:
            raise cursor.fail(str(err)) from None
        label = _opt(parts[5])
        if label not in (None, "hard", "medium", "easy"):
            raise cursor.fail(f"unknown difficulty label {parts[5]!r}")
        spots.append(HidingSpot(
            cell=(_int(cursor, parts[0], "x"), _int(cursor, parts[1], "z")),
            modality=modality,
            container_id=_opt(parts[3]),
            v=_float(cursor, parts[4], "the visibility fraction"),
            label=label,
        ))
    _expect_end(cursor)
    return scene_id, goal_type, tuple(spots)


def save_spots(path: str | Path, scene_id: str, goal_type: str, spots: Sequence[HidingSpot]) -> Path:
    return write_text_atomic(path, spots_text(scene_id, goal_type, spots))


def load_spots(path: str | Path) -> tuple[str, str, tuple[HidingSpot, ...]]:
    return parse_spots(Path(path).read_text(encoding="utf-8"))


# ---------------------------------------------------------------------------
# Match reports


def _pose_text(key: tuple[int, int, int, int]) -> str:
    return ",".join(str(part) for part in key)


def _parse_pose_key(cursor: _Cursor, text: str) -> tuple[int, int, int, int]:
    parts = text.split(",")
    if len(parts) != 4:
        raise cursor.fail(f"pose keys have 4 comma-separated fields, found {text!r}")
    x, z, rotation, standing = (_int(cursor, p, "a pose field") for p in parts)
    if standing not in (0, 1):
        raise cursor.fail(f"the pose stance flag must be 0 or 1, found {standing}")
    return (x, z, rotation, standing)


def _ok_text(success: bool) -> str:
    return "ok" if success else "no"


def _parse_ok(cursor: _Cursor, token: str) -> bool:
    if token == "ok":
        return True
    if token == "no":
        return False
    raise cursor.fail(f"expected ok or no, found {token!r}")


def report_text(report: MatchReport) -> str:
    lines = [
        REPORT_HEADER,
        f"scene: {report.scene_id}",
        f"goal: {report.goal_type}",
        f"seed: {report.seed}",
        f"outcome: {report.hide_outcome}",
        f"found: {str(report.found).lower()}",
        f"seeker-steps: {report.seeker_steps}",
        f"coverage: {repr(report.coverage)}",
        f"coverage-plus: {repr(report.coverage_plus)}",
        f"open-pct: {repr(report.open_pct)}",
        f"visible-from-pct: {repr(report.visible_from_pct)}",
        f"bfs-steps: {report.bfs_steps}",
        f"bfs-steps-pct: {repr(report.bfs_steps_pct)}",
        f"bfs-found: {str(report.bfs_found).lower()}",
        "hidden: {} {} {} {}".format(
            report.hidden_cell[0], report.hidden_cell[1],
            report.hidden_modality, _opt_text(report.hidden_container),
        ),
        ("open-at-seek: " + " ".join(report.open_at_seek)).rstrip(),
        f"em-start: {_pose_text(report.em_start)}",
        f"em: {len(report.em_actions)}",
    ]
    for k in range(len(report.em_actions)):
        lines.append(
            f"{report.em_actions[k]} {_ok_text(report.em_success[k])}"
            f" {_opt_text(report.em_opened[k])} {repr(report.em_rewards[k])}"
            f" {_pose_text(report.em_poses[k])}"
        )
    lines.append(f"ps: {len(report.ps_actions)}")
    for k in range(len(report.ps_actions)):
        lines.append(f"{report.ps_actions[k]} {_ok_text(report.ps_success[k])}")
    lines.append(f"oh: {len(report.oh_actions)}")
    for k in range(len(report.oh_actions)):
        lines.append(
            f"{report.oh_actions[k]} {_ok_text(report.oh_success[k])}"
            f" {_opt_text(report.oh_opened[k])} {repr(report.oh_rewards[k])}"
        )
    lines.append(f"om: {len(report.om_actions)}")
    for e in range(len(report.om_actions)):
        lines.append(f"om-episode: {len(report.om_actions[e])}")
        for k in range(len(report.om_actions[e])):
            lines.append(
                f"{report.om_actions[e][k]} {_ok_text(report.om_success[e][k])}"
                f" {repr(report.om_rewards[e][k])}"
            )
    lines.append(f"s-start: {_pose_text(report.s_start)}")
    lines.append(f"s: {len(report.s_actions)}")
    for k in range(len(report.s_actions)):
        lines.append(
            f"{report.s_actions[k]} {_ok_text(report.s_success[k])}"
            f" {_opt_text(report.s_opened[k])} {repr(report.s_rewards[k])}"
            f" {_pose_text(report.s_poses[k])}"
        )
    lines.append(f"illegal: {len(report.illegal)}")
    for stage, wire in report.illegal:
        lines.append(f"{stage} {wire}")
    lines.append("end")
    return "\n".join(lines) + "\n"


def _split(cursor: _Cursor, line: str, n: int, what: str) -> list[str]:
    parts = line.split()
    if len(parts) != n:
        raise cursor.fail(f"{what} lines have {n} fields, found {len(parts)}")
    return parts


def parse_report(text: str) -> MatchReport:
    cursor = _Cursor(text)
    _check_header(cursor, REPORT_HEADER)
    scene_id = _keyed(cursor, "scene")
    goal_type = _keyed(cursor, "goal")
    seed = _int(cursor, _keyed(cursor, "seed"), "the seed")
    outcome = _keyed(cursor, "outcome")
    found = _bool(cursor, _keyed(cursor, "found"), "found")
    seeker_steps = _int(cursor, _keyed(cursor, "seeker-steps"), "seeker-steps")
    coverage = _float(cursor, _keyed(cursor, "coverage"), "coverage")
    coverage_plus = _float(cursor, _keyed(cursor, "coverage-plus"), "coverage-plus")
    open_pct = _float(cursor, _keyed(cursor, "open-pct"), "open-pct")
    visible_from_pct = _float(cursor, _keyed(cursor, "visible-from-pct"), "visible-from-pct")
    bfs_steps = _int(cursor, _keyed(cursor, "bfs-steps"), "bfs-steps")
    bfs_steps_pct = _float(cursor, _keyed(cursor, "bfs-steps-pct"), "bfs-steps-pct")
    bfs_found = _bool(cursor, _keyed(cursor, "bfs-found"), "bfs-found")
    hidden = _split(cursor, _keyed(cursor, "hidden"), 4, "hidden")
    hidden_cell = (_int(cursor, hidden[0], "x"), _int(cursor, hidden[1], "z"))
    try:
        Modality.from_wire(hidden[2])
    except ValueError as err:
        raise cursor.fail(str(err)) from None
    open_at_seek = tuple(_keyed(cursor, "open-at-seek").split())
    em_start = _parse_pose_key(cursor, _keyed(cursor, "em-start"))

    em_actions, em_success, em_opened, em_rewards, em_poses = [], [], [], [], []
    for _ in range(_int(cursor, _keyed(cursor, "em"), "the em count")):
        parts = _split(cursor, cursor.take("an em step"), 5, "em step")
        em_actions.append(parts[0])
        em_success.append(_parse_ok(cursor, parts[1]))
        em_opened.append(_opt(parts[2]))
        em_rewards.append(_float(cursor, parts[3], "the reward"))
        em_poses.append(_parse_pose_key(cursor, parts[4]))
    ps_actions, ps_success = [], []
    for _ in range(_int(cursor, _keyed(cursor, "ps"), "the ps count")):
        parts = _split(cursor, cursor.take("a ps step"), 2, "ps step")
        ps_actions.append(parts[0])
        ps_success.append(_parse_ok(cursor, parts[1]))
    oh_actions, oh_success, oh_opened, oh_rewards = [], [], [], []
    for _ in range(_int(cursor, _keyed(cursor, "oh"), "the oh count")):
        parts = _split(cursor, cursor.take("an oh step"), 4, "oh step")
        oh_actions.append(parts[0])
        oh_success.append(_parse_ok(cursor, parts[1]))
        oh_opened.append(_opt(parts[2]))
        oh_rewards.append(_float(cursor, parts[3], "the reward"))
    om_actions, om_success, om_rewards = [], [], []
    for _ in range(_int(cursor, _keyed(cursor, "om"), "the om episode count")):
        acts, oks, rewards = [], [], []
        for _ in range(_int(cursor, _keyed(cursor, "om-episode"), "the om step count")):
            parts = _split(cursor, cursor.take("an om step"), 3, "om step")
            acts.append(parts[0])
            oks.append(_parse_ok(cursor, parts[1]))
            rewards.append(_float(cursor, parts[2], "the reward"))
        om_actions.append(tuple(acts))
        om_success.append(tuple(oks))
        om_rewards.append(tuple(rewards))
    s_start = _parse_pose_key(cursor, _keyed(cursor, "s-start"))
    s_actions, s_success, s_opened, s_rewards, s_poses = [], [], [], [], []
    for _ in range(_int(cursor, _keyed(cursor, "s"), "the s count")):
        parts = _split(cursor, cursor.take("an s step"), 5, "s step")
        s_actions.append(parts[0])
        s_success.append(_parse_ok(cursor, parts[1]))
        s_opened.append(_opt(parts[2]))
        s_rewards.append(_float(cursor, parts[3], "the reward"))
        s_poses.append(_parse_pose_key(cursor, parts[4]))
    illegal = []
    for _ in range(_int(cursor, _keyed(cursor, "illegal"), "the illegal count")):
        parts = _split(cursor, cursor.take("an illegal entry"), 2, "illegal")
        illegal.append((parts[0], parts[1]))
    _expect_end(cursor)
    return MatchReport(
        scene_id=scene_id,
        goal_type=goal_type,
        seed=seed,
        em_start=em_start,
        em_actions=tuple(em_actions),
        em_success=tuple(em_success),
        em_opened=tuple(em_opened),
        em_rewards=tuple(em_rewards),
        em_poses=tuple(em_poses),
        ps_actions=tuple(ps_actions),
        ps_success=tuple(ps_success),
        oh_actions=tuple(oh_actions),
        oh_success=tuple(oh_success),
        oh_opened=tuple(oh_opened),
        oh_rewards=tuple(oh_rewards),
        om_actions=tuple(om_actions),
        om_success=tuple(om_success),
        om_rewards=tuple(om_rewards),
        s_start=s_start,
        s_actions=tuple(s_actions),
        s_success=tuple(s_success),
        s_opened=tuple(s_opened),
        s_rewards=tuple(s_rewards),
        s_poses=tuple(s_poses),
        illegal=tuple(illegal),
        hide_outcome=outcome,
        hidden_cell=hidden_cell,
        hidden_modality=hidden[2],
        hidden_container=_opt(hidden[3]),
        open_at_seek=open_at_seek,
        found=found,
        seeker_steps=seeker_steps,
        coverage=coverage,
        coverage_plus=coverage_plus,
        open_pct=open_pct,
        visible_from_pct=visible_from_pct,
        bfs_steps=bfs_steps,
        bfs_steps_pct=bfs_steps_pct,
        bfs_found=bfs_found,
    )


def save_report(path: str | Path, report: MatchReport) -> Path:
    return write_text_atomic(path, report_text(report))


def load_report(path: str | Path) -> MatchReport:
    return parse_report(Path(path).read_text(encoding="utf-8"))


# ---------------------------------------------------------------------------
# Seriation files


def seriation_text(examples: Sequence[SeriationExample]) -> str:
    lines = [SERIATION_HEADER, f"examples: {len(examples)}"]
    for example in examples:
        cells = {pose.cell for pose in example.poses}
        stances = {pose.standing for pose in example.poses}
        if len(cells) != 1 or len(stances) != 1 or len(example.poses) != VIEWINGS:
            raise ValueError("seriation sweeps stay on one cell and stance for 8 viewings")
        pose = example.poses[0]
        rotations = ",".join(str(p.rotation) for p in example.poses)
        counts = ",".join(str(c) for c in example.counts)
        lines.append(
            f"{pose.x} {pose.z} {int(pose.standing)} {rotations} {counts}"
            f" {example.index} {str(example.label).lower()} {example.scene_id}"
        )
    lines.append("end")
    return "\n".join(lines) + "\n"


def parse_seriation(text: str) -> tuple[SeriationExample, ...]:
    cursor = _Cursor(text)
    _check_header(cursor, SERIATION_HEADER)
    examples = []
    for _ in range(_int(cursor, _keyed(cursor, "examples"), "the example count")):
        parts = cursor.take("a seriation example").split(maxsplit=7)
        if len(parts) != 8:
            raise cursor.fail(f"seriation lines have 8 fields, found {len(parts)}")
        x = _int(cursor, parts[0], "x")
        z = _int(cursor, parts[1], "z")
        standing = _int(cursor, parts[2], "the stance flag")
        if standing not in (0, 1):
            raise cursor.fail(f"the stance flag must be 0 or 1, found {standing}")
        rotations = [_int(cursor, p, "a rotation") for p in parts[3].split(",")]
        counts = [_int(cursor, p, "a count") for p in parts[4].split(",")]
        if len(rotations) != VIEWINGS or len(counts) != VIEWINGS:
            raise cursor.fail(f"sweeps list {VIEWINGS} rotations and {VIEWINGS} counts")
        index = _int(cursor, parts[5], "the viewing index")
        if not VIEWINGS // 2 <= index < VIEWINGS:
            raise cursor.fail(f"the viewing index must be in {VIEWINGS // 2}..{VIEWINGS - 1}")
        label = _bool(cursor, parts[6], "the label")
        try:
            poses = tuple(Pose(x, z, r, bool(standing)) for r in rotations)
        except ValueError as err:
            raise cursor.fail(str(err)) from None
        examples.append(SeriationExample(parts[7], poses, tuple(counts), index, label))
    _expect_end(cursor)
    return tuple(examples)


def save_seriation(path: str | Path, examples: Sequence[SeriationExample]) -> Path:
    return write_text_atomic(path, seriation_text(examples))


def load_seriation(path: str | Path) -> tuple[SeriationExample, ...]:
    return parse_seriation(Path(path).read_text(encoding="utf-8"))


# ---------------------------------------------------------------------------
# Training logs (one JSON record per line)


def save_training_log(path: str | Path, records: Sequence[Mapping]) -> Path:
    text = "".join(json.dumps(dict(record), sort_keys=True) + "\n" for record in records)
    return write_text_atomic(path, text)


def load_training_log(path: str | Path) -> list[dict]:
    records = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError as err:
            raise FormatError(f"bad training record: {err.msg}", lineno) from None
    return records


# ---------------------------------------------------------------------------
# Policy snapshots


def save_policies(path: str | Path, policies: PolicySet) -> Path:
    """All linear heads in one npz archive, written atomically."""
    path = Path(path)
    arrays = {
        "em_w": policies.em.weights, "em_v": policies.em.value,
        "oh_w": policies.oh.weights, "oh_v": policies.oh.value,
        "om_w": policies.om.weights, "om_v": policies.om.value,
        "s_w": policies.s.weights, "s_v": policies.s.value,
        "ps_p": policies.ps.p_weights, "ps_v": policies.ps.v_weights,
    }
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as handle:
            np.savez(handle, **arrays)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise
    return path


def load_policies(path: str | Path) -> PolicySet:
    out = PolicySet.initial()
    heads = {"em": out.em, "oh": out.oh, "om": out.om, "s": out.s}
    with np.load(path) as data:
        for name, head in heads.items():
            for suffix, target in (("w", head.weights), ("v", head.value)):
                key = f"{name}_{suffix}"
                if key not in data:
                    raise ValueError(f"policy file is missing array {key!r}")
                if data[key].shape != target.shape:
                    raise ValueError(
                        f"array {key!r} has shape {data[key].shape}, expected {target.shape}"
                    )
                target[...] = data[key]
        for key, target in (("ps_p", out.ps.p_weights), ("ps_v", out.ps.v_weights)):
            if key not in data:
                raise ValueError(f"policy file is missing array {key!r}")
            if data[key].shape != target.shape:
                raise ValueError(
                    f"array {key!r} has shape {data[key].shape}, expected {target.shape}"
                )
            target[...] = data[key]
    return out


# ---------------------------------------------------------------------------
# Run configuration


@dataclass(frozen=True, slots=True)
class RunConfig:
    game: GameConfig = field(default_factory=GameConfig)
    learner: LearnerConfig = field(default_factory=LearnerConfig)
    rewards: RewardConfig = field(default_factory=RewardConfig)


def parse_config(text: str) -> RunConfig:
    """JSON with optional ``game``, ``learner`` and ``rewards`` sections whose
    keys override the matching config fields."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as err:
        raise FormatError(f"bad config JSON: {err.msg}", err.lineno) from None
    if not isinstance(raw, dict):
        raise FormatError("the config must be a JSON object", 1)
    defaults = {"game": GameConfig(), "learner": LearnerConfig(), "rewards": RewardConfig()}
    unknown = set(raw) - set(defaults)
    if unknown:
        raise FormatError(f"unknown config sections: {sorted(unknown)}", 1)
    built = {}
    for section, default in defaults.items():
        overrides = raw.get(section, {})
        if not isinstance(overrides, dict):
            raise FormatError(f"section {section!r} must be a JSON object", 1)
        try:
            built[section] = replace(default, **overrides)
        except TypeError:
            bad = sorted(set(overrides) - {f for f in default.__dataclass_fields__})
            raise FormatError(f"unknown {section} settings: {bad}", 1) from None
    return RunConfig(game=built["game"], learner=built["learner"], rewards=built["rewards"])


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    return parse_config(Path(path).read_text(encoding="utf-8"))
