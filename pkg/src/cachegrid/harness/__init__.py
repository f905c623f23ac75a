"""Match harness: stock policies, match running, evaluation statistics,
procedural scenes, seriation data, file formats and the command line."""

from .formats import (
    FormatError,
    FormatVersionError,
    RunConfig,
    load_config,
    load_policies,
    load_report,
    load_scene_file,
    load_scenes,
    load_seriation,
    load_spots,
    load_training_log,
    parse_report,
    parse_seriation,
    parse_spots,
    report_text,
    save_policies,
    save_report,
    save_scene_file,
    save_seriation,
    save_spots,
    save_training_log,
    seriation_text,
    spots_text,
    write_text_atomic,
)
from .match import (
    EvalRow,
    MatchReport,
    evaluate,
    report_from_state,
    run_match,
    run_seek,
    seek_only_game,
    spot_tasks,
    t_interval,
    wilson_interval,
)
from .policies import (
    DropAheadHider,
    EpsilonGreedySeeker,
    LearnedPolicy,
    OracleSeeker,
    RandomPolicy,
    StagePolicy,
)
from .scenegen import generate_scene, generate_scenes
from .seriation import SeriationExample, positions_per_scene, seriation_dataset

__all__ = [
    "DropAheadHider",
    "EpsilonGreedySeeker",
    "EvalRow",
    "FormatError",
    "FormatVersionError",
    "LearnedPolicy",
    "MatchReport",
    "OracleSeeker",
    "RandomPolicy",
    "RunConfig",
    "SeriationExample",
    "StagePolicy",
    "evaluate",
    "generate_scene",
    "generate_scenes",
    "load_config",
    "load_policies",
    "load_report",
    "load_scene_file",
    "load_scenes",
    "load_seriation",
    "load_spots",
    "load_training_log",
    "parse_report",
    "parse_seriation",
    "parse_spots",
    "positions_per_scene",
    "report_from_state",
    "report_text",
    "run_match",
    "run_seek",
    "save_policies",
    "save_report",
    "save_scene_file",
    "save_seriation",
    "save_spots",
    "save_training_log",
    "seek_only_game",
    "seriation_dataset",
    "seriation_text",
    "spot_tasks",
    "spots_text",
    "t_interval",
    "wilson_interval",
    "write_text_atomic",
]
