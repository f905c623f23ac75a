"""Play server for human-vs-agent trials.

One transport-independent service handles JSON messages; two transports
expose it:

* a polling HTTP endpoint: ``POST /message`` with one JSON message in the
  body returns a JSON array of reply messages; ``GET /hello`` and
  ``GET /state?session=ID`` poll without acting,
* a persistent stream socket carrying length-delimited JSON: each frame is
  a decimal byte count on its own line followed by that many bytes of
  UTF-8 JSON. Closing the stream abandons the sessions it created.

Message schema. Every message is a JSON object with a ``type`` field drawn
from the closed set: hello, session_created, state, action, action_result,
stage_change, trial_end, give_up, error.

Client to server:

* ``{"type": "hello"}`` lists capabilities: protocol id, scene ids, goal
  types, seeker policy names for hider sessions, spot set ids for seeker
  sessions.
* ``{"type": "hello", "role": "hider"|"seeker", "seed": int, ...}`` creates
  a session and returns ``session_created`` followed by the initial
  ``state``. Optional fields: ``opponent`` (seeker policy for hider
  sessions, spot set id for seeker sessions), ``scene``, ``goal`` (hider
  sessions), ``label`` (restrict the drawn spot to one difficulty class),
  ``familiarize`` (unscored sandbox, excluded from the trial log). The
  same fields with the same seed always produce the same scene, spot and
  initial payloads.
* ``{"type": "action", "session": id, "action": wire}`` applies one action.
  The wire form is the engine's (``MoveAhead``, ``PlaceAt|1,3,4``, ...)
  plus two server-level affordances for human hiders: ``FinishExploring``
  ends the exploration stage and ``RestartHiding`` starts the hiding stage
  over. A legal action yields exactly one ``action_result`` (whether or
  not the action succeeded), any ``stage_change`` messages, a ``trial_end``
  when the game finished, and the new ``state`` last. A stage-illegal or
  malformed action yields a single ``error`` and the session continues
  unchanged.
* ``{"type": "give_up", "session": id}`` concedes the trial. Before the
  session is GIVE_UP_AGE seconds old it is rejected with an ``error``
  carrying ``retry_after``; afterwards it yields ``trial_end``.
* ``{"type": "state", "session": id}`` re-sends the current ``state``.

Server to client:

* ``session_created``: session id, role, scene, opponent, goal, seed,
  familiarize flag, ``give_up_after`` seconds, protocol id.
* ``state``: stage, role, done flag, pose ``{x, z, rotation, standing}``,
  held flag, per-stage step counters, accepted action count,
  ``give_up_allowed``, and the 49-cell egocentric window in row-major
  order (out-of-bounds cells carry only ``i``, ``j`` and ``in_bounds``;
  the rest add world coordinates, visibility, terrain glyph, passability,
  object id, openable and open flags, and visible occupants as
  ``[modality, object]`` pairs). While the carried object is in hand the
  payload adds ``hand`` (world cell and height). Hider sessions add a
  ``map`` summary: visited cells, opened object ids, and the current
  placement.
* ``action_result``: the echoed action, ``ok``, and the engine events as
  ``{"kind", "data"}`` pairs.
* ``stage_change``: the stage entered and the stage left.
* ``trial_end``: ``found``, seek step count, ``reason`` (claimed, budget
  or gave_up), the hide outcome wire code for hider sessions, the drawn
  spot for seeker sessions, and the trial report filename when one was
  written.
* ``error``: ``code``, human-readable ``message``, and the session id when
  one applies. Errors never consume budget or mutate the session.

Sessions are handled strictly serially: a per-session lock serializes
every action, poll and give-up. Hider sessions run with unbounded
exploration and hiding budgets (the affordances above replace the step
caps), then the opponent seeker runs its seek synchronously under the
same lock with the standard 500-step budget. Seeker sessions place a
drawn spot in a fresh scene and never terminate on step count; claiming
the object or giving up are the only exits.

Completed and conceded trials append one JSON line to ``trials.jsonl`` in
the log directory (the CACHEGRID_LOG_DIR environment variable overrides
the configured path) and write the full match report alongside it when one
is constructible. Sessions abandoned by a disconnect or a server shutdown
are logged with status ``incomplete``. Storage failures are reported on
stderr and never interrupt a client mid-trial.
"""

from __future__ import annotations

import json
import sys
import threading
import time
import traceback
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from os import environ
from pathlib import Path
from socketserver import StreamRequestHandler, ThreadingTCPServer
from typing import Callable, Iterable, Sequence
from urllib.parse import parse_qs, urlparse

import numpy as np

from .gamecore import (
    GameConfig,
    GameState,
    IllegalActionError,
    Stage,
    finish_exploring,
    parse_action,
    restart_hiding,
    start_game,
    step,
)
from .harness.formats import load_spots, report_text
from .harness.match import report_from_state, run_seek, seek_only_game
from .harness.policies import EpsilonGreedySeeker, OracleSeeker, RandomPolicy, StagePolicy
from .oracle import HidingSpot, enumerate_spots, label_difficulty, sample_spot_sets
from .world import GOAL_TYPES, TERRAIN_TO_GLYPH, Scene, view_window

PROTOCOL = "cachegrid-play v1"
GIVE_UP_AGE = 100.0  # seconds a session must age before give_up is accepted
AGENT_SEEK_BUDGET = 500  # step cap for opponent seekers; human seekers have none
AUTO_SPOTS_PER_CLASS = 20
MAX_FRAME = 1 << 20  # stream frames above this are a protocol error

SERVER_ACTIONS = ("FinishExploring", "RestartHiding")
DIFFICULTY_LABELS = ("easy", "medium", "hard")

_SEEKER_FACTORIES: dict[str, Callable[[], StagePolicy]] = {
    "oracle": OracleSeeker,
    "greedy": lambda: EpsilonGreedySeeker(0.2),
    "random": RandomPolicy,
}

# Salts separating the rng streams drawn from one client seed.
_DRAW_STREAM = 5
_SEEK_STREAM = 6


def state_fingerprint(state: GameState) -> str:
    """Digest of everything a state payload is built from. Two states with
    equal fingerprints produce byte-identical state messages."""
    core = (
        state.state_hash(),
        state.stage.value,
        state.em_t,
        state.ps_tries,
        state.oh_t,
        state.s_t,
        len(state.history),
        len(state.om_episodes),
        state.found,
    )
    return "|".join(str(part) for part in core)


@dataclass(slots=True)
class _SpotSet:
    goal_type: str
    by_scene: dict[str, tuple[HidingSpot, ...]]


@dataclass(slots=True)
class Session:
    id: str
    role: str
    opponent: str
    seed: int
    familiarize: bool
    state: GameState
    created: float  # service clock, for give-up gating
    started: float  # wall clock, for the trial log
    spot: HidingSpot | None = None
    actions: int = 0
    illegal: list[tuple[str, str]] = field(default_factory=list)
    open_at_seek: tuple[str, ...] = ()
    done: bool = False
    reason: str | None = None
    report_name: str | None = None
    lock: threading.Lock = field(default_factory=threading.Lock)


class GameService:
    """The transport-independent message handler.

    ``clock`` must be monotonic; tests inject a fake one to exercise the
    give-up gate without waiting.
    """

    def __init__(
        self,
        scenes: Sequence[Scene],
        log_dir: str | Path,
        seed: int = 0,
        opponents: Iterable[str | Path] = (),
        clock: Callable[[], float] = time.monotonic,
    ):
        self.scenes: dict[str, Scene] = {}
        for scene in scenes:
            if scene.scene_id in self.scenes:
                raise ValueError(f"duplicate scene id {scene.scene_id!r}")
            self.scenes[scene.scene_id] = scene
        if not self.scenes:
            raise ValueError("the server needs at least one scene")
        self.clock = clock
        self.log_dir = Path(environ.get("CACHEGRID_LOG_DIR") or log_dir)
        self.log_dir.mkdir(parents=True, exist_ok=True)
        self.sessions: dict[str, Session] = {}
        self._made: dict[tuple[str, int], int] = {}  # (role, seed) creation counts
        self._create_lock = threading.Lock()
        self._log_lock = threading.Lock()
        self._spot_sets = {"auto": self._auto_spot_set(seed)}
        for path in opponents:
            self._load_spot_set(Path(path))

    # -- capability data ----------------------------------------------------

    def _auto_spot_set(self, seed: int) -> _SpotSet:
        rng = np.random.default_rng([seed, _DRAW_STREAM])
        by_scene = {}
        for scene_id in sorted(self.scenes):
            labeled = label_difficulty(enumerate_spots(self.scenes[scene_id], GOAL_TYPES[0]))
            sets = sample_spot_sets(labeled, rng, per_class=AUTO_SPOTS_PER_CLASS)
            pooled = tuple(spot for label in DIFFICULTY_LABELS for spot in sets[label])
            if pooled:
                by_scene[scene_id] = pooled
        return _SpotSet(GOAL_TYPES[0], by_scene)

    def _load_spot_set(self, path: Path) -> None:
        scene_id, goal_type, spots = load_spots(path)
        if scene_id not in self.scenes:
            raise ValueError(f"{path}: spot set names unserved scene {scene_id!r}")
        if not spots:
            raise ValueError(f"{path}: empty spot set")
        name = path.stem
        if name in self._spot_sets:
            raise ValueError(f"duplicate spot set id {name!r}")
        self._spot_sets[name] = _SpotSet(goal_type, {scene_id: tuple(spots)})

    # -- message dispatch ---------------------------------------------------

    def handle(self, message: object) -> list[dict]:
        """Apply one client message, returning the ordered replies."""
        if not isinstance(message, dict):
            return [self._error("malformed", "messages are JSON objects")]
        kind = message.get("type")
        try:
            if kind == "hello":
                return self._hello(message)
            if kind == "action":
                return self._action(message)
            if kind == "give_up":
                return self._give_up(message)
            if kind == "state":
                return self._poll(message)
        except Exception:  # a handler bug must not kill the transport
            traceback.print_exc()
            return [self._error("internal", "internal error; the session is unchanged")]
        return [self._error("malformed", f"unknown message type {kind!r}")]

    def abandon(self, session_id: str) -> None:
        """Mark a session its client walked away from; logs it incomplete."""
        session = self.sessions.get(session_id)
        if session is None:
            return
        with session.lock:
            if session.done:
                return
            session.done = True
            session.reason = "abandoned"
            session.report_name = self._write_report(session)
            self._log_trial(session)

    def shutdown(self) -> None:
        for session_id in list(self.sessions):
            self.abandon(session_id)

    # -- session creation ---------------------------------------------------

    def _hello(self, message: dict) -> list[dict]:
        if "role" not in message:
            return [
                {
                    "type": "hello",
                    "protocol": PROTOCOL,
                    "scenes": sorted(self.scenes),
                    "goals": list(GOAL_TYPES),
                    "seekers": sorted(_SEEKER_FACTORIES),
                    "spot_sets": sorted(self._spot_sets),
                    "give_up_after": GIVE_UP_AGE,
                }
            ]
        role = message["role"]
        if role not in ("hider", "seeker"):
            return [self._error("malformed", f"role must be hider or seeker, got {role!r}")]
        seed = message.get("seed", 0)
        if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2**63:
            return [self._error("malformed", "seed must be a non-negative integer")]
        familiarize = bool(message.get("familiarize", False))
        if role == "hider":
            made = self._make_hider(message, seed)
        else:
            made = self._make_seeker(message, seed)
        if isinstance(made, dict):  # an error message
            return [made]
        state, opponent, spot = made
        with self._create_lock:
            count = self._made.get((role, seed), 0)
            self._made[(role, seed)] = count + 1
            session = Session(
                id=f"{role}-{seed}-{count}",
                role=role,
                opponent=opponent,
                seed=seed,
                familiarize=familiarize,
                state=state,
                created=self.clock(),
                started=time.time(),
                spot=spot,
            )
            self.sessions[session.id] = session
        created = {
            "type": "session_created",
            "session": session.id,
            "role": role,
            "scene": state.scene.scene_id,
            "opponent": opponent,
            "goal": state.goal_type,
            "seed": seed,
            "familiarize": familiarize,
            "give_up_after": GIVE_UP_AGE,
            "protocol": PROTOCOL,
        }
        return [created, self._state_message(session)]

    def _pick_scene(self, message: dict, rng: np.random.Generator, pool: Sequence[str]):
        scene_id = message.get("scene")
        if scene_id is None:
            return pool[int(rng.integers(len(pool)))]
        if scene_id not in pool:
            return self._error("unknown_scene", f"scene {scene_id!r} is not available here")
        return scene_id

    def _make_hider(self, message: dict, seed: int):
        opponent = message.get("opponent", "greedy")
        if opponent not in _SEEKER_FACTORIES:
            return self._error("unknown_opponent", f"no seeker policy named {opponent!r}")
        goal_type = message.get("goal", GOAL_TYPES[0])
        if goal_type not in GOAL_TYPES:
            return self._error("malformed", f"goal must be one of {GOAL_TYPES}, got {goal_type!r}")
        rng = np.random.default_rng([seed, _DRAW_STREAM])
        picked = self._pick_scene(message, rng, sorted(self.scenes))
        if isinstance(picked, dict):
            return picked
        # Humans act under no step budgets; the explicit FinishExploring and
        # ReadyForSeeker actions end the stages instead. The opponent's seek
        # keeps the standard budget.
        config = GameConfig(
            em_max_steps=None,
            oh_max_steps=None,
            om_max_steps=None,
            s_max_steps=AGENT_SEEK_BUDGET,
        )
        state = start_game(self.scenes[picked], goal_type, seed, config)
        return state, opponent, None

    def _make_seeker(self, message: dict, seed: int):
        opponent = message.get("opponent", "auto")
        spot_set = self._spot_sets.get(opponent)
        if spot_set is None:
            return self._error("unknown_opponent", f"no spot set named {opponent!r}")
        label = message.get("label")
        if label is not None and label not in DIFFICULTY_LABELS:
            return self._error("malformed", f"label must be one of {DIFFICULTY_LABELS}")
        rng = np.random.default_rng([seed, _DRAW_STREAM])
        picked = self._pick_scene(message, rng, sorted(spot_set.by_scene))
        if isinstance(picked, dict):
            return picked
        spots = spot_set.by_scene[picked]
        if label is not None:
            spots = tuple(spot for spot in spots if spot.label == label)
            if not spots:
                return self._error("no_spots", f"{opponent!r} has no {label} spots in {picked!r}")
        spot = spots[int(rng.integers(len(spots)))]
        # Human seekers are never terminated on step count.
        state = seek_only_game(
            self.scenes[picked],
            spot,
            seed,
            goal_type=spot_set.goal_type,
            config=GameConfig(s_max_steps=None),
        )
        return state, opponent, spot

    # -- acting ---------------------------------------------------------------

    def _action(self, message: dict) -> list[dict]:
        session, err = self._session_of(message)
        if err:
            return [err]
        with session.lock:
            if session.done:
                return [self._error("trial_over", "the trial has ended", session.id)]
            wire = message.get("action")
            if not isinstance(wire, str):
                return [self._error("malformed", "action must be a wire string", session.id)]
            stage_before = session.state.stage
            try:
                if wire == "FinishExploring":
                    ok, events = True, finish_exploring(session.state)
                elif wire == "RestartHiding":
                    ok, events = True, restart_hiding(session.state)
                else:
                    result = step(session.state, parse_action(wire))
                    ok, events = result.success, result.events
            except IllegalActionError as exc:
                if wire not in SERVER_ACTIONS and stage_before is not Stage.DONE:
                    session.illegal.append((stage_before.value, wire))
                return [self._error("illegal_action", str(exc), session.id)]
            session.actions += 1
            replies = [
                {
                    "type": "action_result",
                    "session": session.id,
                    "action": wire,
                    "ok": ok,
                    "events": [_event_json(event) for event in events],
                }
            ]
            if session.state.stage is not stage_before:
                replies.append(self._stage_change(session, stage_before))
            if session.role == "hider" and session.state.stage is Stage.S:
                replies.extend(self._run_opponent_seek(session))
            if session.state.stage is Stage.DONE and not session.done:
                replies.extend(self._finish(session))
            replies.append(self._state_message(session))
            return replies

    def _stage_change(self, session: Session, stage_before: Stage) -> dict:
        return {
            "type": "stage_change",
            "session": session.id,
            "stage": session.state.stage.value,
            "from": stage_before.value,
        }

    def _run_opponent_seek(self, session: Session) -> list[dict]:
        state = session.state
        session.open_at_seek = tuple(
            sorted(oid for oid, is_open in state.states.open_flags.items() if is_open)
        )
        policy = _SEEKER_FACTORIES[session.opponent]()
        run_seek(state, policy, np.random.default_rng([session.seed, _SEEK_STREAM]))
        replies = [self._stage_change(session, Stage.S)]
        replies.extend(self._finish(session))
        return replies

    def _finish(self, session: Session, reason: str | None = None) -> list[dict]:
        state = session.state
        session.done = True
        if reason is None:
            reason = "claimed" if state.found else "budget"
        session.reason = reason
        session.report_name = self._write_report(session)
        self._log_trial(session)
        end = {
            "type": "trial_end",
            "session": session.id,
            "found": bool(state.found),
            "steps": state.s_t,
            "reason": reason,
            "report": session.report_name,
        }
        if session.role == "hider":
            try:
                end["outcome"] = state.hide_outcome().wire
            except ValueError:  # conceded before the hiding stages ended
                end["outcome"] = None
        else:
            end["spot"] = _spot_json(session.spot)
        return [end]

    def _give_up(self, message: dict) -> list[dict]:
        session, err = self._session_of(message)
        if err:
            return [err]
        with session.lock:
            if session.done:
                return [self._error("trial_over", "the trial has ended", session.id)]
            age = self.clock() - session.created
            if age < GIVE_UP_AGE:
                reply = self._error(
                    "give_up_too_early",
                    f"give_up is allowed {GIVE_UP_AGE:.0f} seconds into a session",
                    session.id,
                )
                reply["retry_after"] = round(GIVE_UP_AGE - age, 3)
                return [reply]
            return self._finish(session, reason="gave_up")

    def _poll(self, message: dict) -> list[dict]:
        session, err = self._session_of(message)
        if err:
            return [err]
        with session.lock:
            return [self._state_message(session)]

    def _session_of(self, message: dict):
        session_id = message.get("session")
        session = self.sessions.get(session_id)
        if session is None:
            return None, self._error("unknown_session", f"no session {session_id!r}")
        return session, None

    def _error(self, code: str, text: str, session_id: str | None = None) -> dict:
        message = {"type": "error", "code": code, "message": text}
        if session_id is not None:
            message["session"] = session_id
        return message

    # -- state payloads -----------------------------------------------------

    def _state_message(self, session: Session) -> dict:
        state = session.state
        if state.seeker_pose is not None and (
            session.role == "seeker" or state.stage in (Stage.S, Stage.DONE)
        ):
            pose = state.seeker_pose
        else:
            pose = state.hider_pose
        window = view_window(state.scene, state.states, pose)
        message = {
            "type": "state",
            "session": session.id,
            "stage": state.stage.value,
            "role": session.role,
            "done": session.done,
            "pose": {
                "x": pose.x,
                "z": pose.z,
                "rotation": pose.rotation,
                "standing": pose.standing,
            },
            "held": state.held,
            "steps": {
                "em": state.em_t,
                "ps": state.ps_tries,
                "oh": state.oh_t,
                "om": len(state.om_episodes),
                "s": state.s_t,
            },
            "actions": session.actions,
            "give_up_allowed": not session.done
            and self.clock() - session.created >= GIVE_UP_AGE,
            "window": [_cell_json(cell) for cell in window.cells],
        }
        if state.hand is not None:
            cell, height = state.hand
            message["hand"] = {"cell": [cell[0], cell[1]], "height": height}
        if session.role == "hider":
            message["map"] = self._map_summary(state)
        return message

    def _map_summary(self, state: GameState) -> dict:
        visited = {pose.cell for pose in state.em_pose_log}
        opened = set()
        for step_row in state.history:
            if step_row.stage is Stage.S:
                continue
            visited.add(step_row.pose_after.cell)
            if step_row.opened_id is not None:
                opened.add(step_row.opened_id)
        visited.add(state.hider_pose.cell)
        resting = state.states.resting
        return {
            "visited": sorted(list(cell) for cell in visited),
            "opened": sorted(opened),
            "placed": None
            if resting is None
            else {
                "cell": list(resting.cell),
                "modality": resting.modality.wire,
                "container": resting.container_id,
            },
        }

    # -- trial log ------------------------------------------------------------

    def _write_report(self, session: Session) -> str | None:
        if session.familiarize:
            return None
        try:
            report = report_from_state(
                session.state,
                session.seed,
                open_at_seek=session.open_at_seek,
                illegal=tuple(session.illegal),
            )
        except Exception:  # conceded too early for a coherent report
            return None
        name = f"trial-{session.id}.report"
        try:
            (self.log_dir / name).write_text(report_text(report))
        except OSError as exc:
            print(f"trial report {name} not written: {exc}", file=sys.stderr)
            return None
        return name

    def _log_trial(self, session: Session) -> None:
        if session.familiarize:
            return
        state = session.state
        complete = session.reason in ("claimed", "budget", "gave_up") and state.stage in (
            Stage.S,
            Stage.DONE,
        )
        row = {
            "session": session.id,
            "role": session.role,
            "opponent": session.opponent,
            "scene": state.scene.scene_id,
            "goal": state.goal_type,
            "seed": session.seed,
            "status": "complete" if complete else "incomplete",
            "reason": session.reason,
            "found": state.found,
            "steps": state.s_t,
            "actions": session.actions,
            "started": session.started,
            "duration": round(self.clock() - session.created, 3),
            "spot": _spot_json(session.spot),
            "report": session.report_name,
        }
        try:
            with self._log_lock:
                with open(self.log_dir / "trials.jsonl", "a", encoding="utf-8") as handle:
                    handle.write(json.dumps(row) + "\n")
        except OSError as exc:
            print(f"trial log write failed: {exc}", file=sys.stderr)


def _event_json(event) -> dict:
    return {"kind": event.kind, "data": [_plain(part) for part in event.data]}


def _plain(value):
    if isinstance(value, (tuple, list)):
        return [_plain(part) for part in value]
    if isinstance(value, np.integer):
        return int(value)
    return value


def _spot_json(spot: HidingSpot | None) -> dict | None:
    if spot is None:
        return None
    return {
        "cell": list(spot.cell),
        "modality": spot.modality.wire,
        "container": spot.container_id,
        "label": spot.label,
    }


def _cell_json(cell) -> dict:
    if not cell.in_bounds:
        return {"i": cell.i, "j": cell.j, "in_bounds": False}
    return {
        "i": cell.i,
        "j": cell.j,
        "in_bounds": True,
        "world": [cell.world[0], cell.world[1]],
        "visible": cell.visible,
        "terrain": TERRAIN_TO_GLYPH[cell.terrain],
        "passable": cell.passable,
        "object": cell.object_id,
        "openable": cell.openable,
        "open": cell.is_open,
        "occupants": [[modality.wire, oid] for modality, oid in cell.occupants],
    }


# ---------------------------------------------------------------------------
# Transports


class _StreamServer(ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True
    service: GameService


class _StreamHandler(StreamRequestHandler):
    """Length-delimited JSON frames; a dropped connection abandons the
    sessions it created."""

    def handle(self) -> None:
        service = self.server.service
        created: set[str] = set()
        try:
            while True:
                header = self.rfile.readline()
                if not header:
                    break
                text = header.strip()
                if not text:
                    continue
                try:
                    length = int(text)
                    if not 0 <= length <= MAX_FRAME:
                        raise ValueError
                except ValueError:
                    self._write(
                        {
                            "type": "error",
                            "code": "bad_frame",
                            "message": f"frame headers are byte counts up to {MAX_FRAME}",
                        }
                    )
                    break
                raw = self.rfile.read(length)
                if len(raw) < length:
                    break
                try:
                    message = json.loads(raw.decode("utf-8"))
                except (UnicodeDecodeError, ValueError):
                    self._write(
                        {"type": "error", "code": "malformed", "message": "frame is not JSON"}
                    )
                    continue
                for reply in service.handle(message):
                    if reply.get("type") == "session_created":
                        created.add(reply["session"])
                    self._write(reply)
        finally:
            for session_id in created:
                service.abandon(session_id)

    def _write(self, message: dict) -> None:
        body = json.dumps(message).encode("utf-8")
        self.wfile.write(f"{len(body)}\n".encode("ascii") + body)


def _http_handler(service: GameService):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, *args) -> None:
            pass

        def _send(self, payload, status: int = 200) -> None:
            body = json.dumps(payload).encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.send_header("Access-Control-Allow-Origin", "*")
            self.end_headers()
            self.wfile.write(body)

        def do_OPTIONS(self) -> None:
            # Browser clients served from another origin preflight POSTs.
            self.send_response(204)
            self.send_header("Access-Control-Allow-Origin", "*")
            self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
            self.send_header("Access-Control-Allow-Headers", "Content-Type")
            self.send_header("Content-Length", "0")
            self.end_headers()

        def do_POST(self) -> None:
            if urlparse(self.path).path != "/message":
                self._send([{"type": "error", "code": "not_found", "message": self.path}], 404)
                return
            length = int(self.headers.get("Content-Length") or 0)
            raw = self.rfile.read(length)
            try:
                message = json.loads(raw.decode("utf-8"))
            except (UnicodeDecodeError, ValueError):
                self._send(
                    [{"type": "error", "code": "malformed", "message": "body is not JSON"}], 400
                )
                return
            self._send(service.handle(message))

        def do_GET(self) -> None:
            url = urlparse(self.path)
            if url.path == "/hello":
                self._send(service.handle({"type": "hello"}))
            elif url.path == "/state":
                session_id = (parse_qs(url.query).get("session") or [None])[0]
                self._send(service.handle({"type": "state", "session": session_id}))
            else:
                self._send([{"type": "error", "code": "not_found", "message": url.path}], 404)

    return Handler


class PlayServer:
    """Both transports over one service.

    ``port`` is the HTTP port and ``port + 1`` the stream port; port 0
    binds both ephemerally (the bound ports are ``http_port`` and
    ``stream_port``). ``start`` returns immediately; ``stop`` shuts the
    transports down and logs every unfinished session as incomplete.
    """

    def __init__(
        self,
        scenes: Sequence[Scene],
        log_dir: str | Path,
        seed: int = 0,
        opponents: Iterable[str | Path] = (),
        port: int = 0,
        host: str = "127.0.0.1",
        clock: Callable[[], float] = time.monotonic,
    ):
        self.service = GameService(scenes, log_dir, seed=seed, opponents=opponents, clock=clock)
        self._http = ThreadingHTTPServer((host, port), _http_handler(self.service))
        self._stream = _StreamServer((host, port + 1 if port else 0), _StreamHandler)
        self._stream.service = self.service
        self.http_port = self._http.server_address[1]
        self.stream_port = self._stream.server_address[1]
        self._threads: list[threading.Thread] = []

    def start(self) -> None:
        for server in (self._http, self._stream):
            thread = threading.Thread(target=server.serve_forever, daemon=True)
            thread.start()
            self._threads.append(thread)

    def stop(self) -> None:
        for server in (self._http, self._stream):
            server.shutdown()
            server.server_close()
        for thread in self._threads:
            thread.join(timeout=5)
        self._threads.clear()
        self.service.shutdown()


def serve_forever(
    scenes: Sequence[Scene],
    port: int,
    log_dir: str | Path,
    seed: int = 0,
    opponents: Iterable[str | Path] = (),
) -> None:
    """Run both transports until interrupted."""
    server = PlayServer(scenes, log_dir, seed=seed, opponents=opponents, port=port)
    server.start()
    print(f"serving {len(server.service.scenes)} scenes")
    print(f"  poll endpoint   http://127.0.0.1:{server.http_port}/message")
    print(f"  stream endpoint 127.0.0.1:{server.stream_port}")
    print(f"  trial log       {server.service.log_dir}")
    try:
        while True:
            time.sleep(3600)
    except KeyboardInterrupt:
        pass
    finally:
        server.stop()
