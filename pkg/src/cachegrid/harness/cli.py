"""Command line for the whole artifact.

Verbs: gen-scenes, spots, play, eval, train, seriation, serve. Every verb
takes --seed, --config (JSON overrides for the game, learner and reward
configs) and --out (output directory). File outputs are written atomically;
play and eval render figures next to their text output.
"""

from __future__ import annotations

import argparse
import csv
import io
from pathlib import Path

import numpy as np

from ..learner import train
from ..oracle import enumerate_spots, label_difficulty, sample_spot_sets
from ..world import GOAL_TYPES
from . import figures, formats, match, scenegen
from .policies import (
    DropAheadHider,
    EpsilonGreedySeeker,
    LearnedPolicy,
    OracleSeeker,
    RandomPolicy,
    StagePolicy,
)
from .seriation import seriation_dataset

HIDERS = ("random", "scripted", "learned")
SEEKERS = ("oracle", "greedy", "random", "learned")


def _build_policy(name: str, run: formats.RunConfig, args: argparse.Namespace) -> StagePolicy:
    if name == "random":
        return RandomPolicy()
    if name == "scripted":
        return DropAheadHider()
    if name == "oracle":
        return OracleSeeker()
    if name == "greedy":
        return EpsilonGreedySeeker(args.epsilon)
    if args.policies is None:
        raise SystemExit("--policies is required for learned agents")
    return LearnedPolicy(formats.load_policies(args.policies), run.learner)


def _out_dir(args: argparse.Namespace) -> Path:
    args.out.mkdir(parents=True, exist_ok=True)
    return args.out


def cmd_gen_scenes(args: argparse.Namespace) -> int:
    out = _out_dir(args)
    for scene in scenegen.generate_scenes(args.count, args.seed):
        path = formats.save_scene_file(out / f"{scene.scene_id}.scene", scene)
        print(path)
    return 0


def cmd_spots(args: argparse.Namespace) -> int:
    out = _out_dir(args)
    scene = formats.load_scene_file(args.scene)
    labeled = label_difficulty(enumerate_spots(scene, args.goal))
    if args.per_class > 0:
        sets = sample_spot_sets(labeled, np.random.default_rng(args.seed), args.per_class)
        spots = [spot for label in ("hard", "medium", "easy") for spot in sets[label]]
    else:
        spots = list(labeled)
    path = formats.save_spots(out / f"{scene.scene_id}-{args.goal}.spots",
                              scene.scene_id, args.goal, spots)
    print(f"{path} ({len(spots)} spots)")
    return 0


def cmd_play(args: argparse.Namespace) -> int:
    out = _out_dir(args)
    run = formats.load_config(args.config)
    scene = formats.load_scene_file(args.scene)
    hider = _build_policy(args.hider, run, args)
    seeker = _build_policy(args.seeker, run, args)
    report = match.run_match(
        scene, hider, seeker, args.seed,
        goal_type=args.goal, config=run.game, rewards_config=run.rewards,
    )
    base = out / f"match-{scene.scene_id}-{args.seed}"
    report_path = formats.save_report(base.with_suffix(".report"), report)
    figure_path = figures.save_match_figure(scene, report, base.with_suffix(".png"))
    found = "found" if report.found else "not found"
    print(f"outcome {report.hide_outcome}; {found} in {report.seeker_steps} steps; "
          f"visible from {report.visible_from_pct:.3f} of poses")
    print(report_path)
    print(figure_path)
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    out = _out_dir(args)
    run = formats.load_config(args.config)
    by_id = {scene.scene_id: scene for scene in formats.load_scenes(args.scenes)}
    tasks: dict[str, list] = {}
    goal = None
    for spots_path in args.spots:
        scene_id, file_goal, spots = formats.load_spots(spots_path)
        if scene_id not in by_id:
            raise SystemExit(f"{spots_path}: no scene named {scene_id!r} among --scenes")
        if goal is None:
            goal = file_goal
        elif goal != file_goal:
            raise SystemExit(f"{spots_path}: goal {file_goal!r} differs from {goal!r}")
        for spot in spots:
            if spot.label is None:
                raise SystemExit(f"{spots_path}: unlabeled spot at {spot.cell}")
            tasks.setdefault(spot.label, []).append((by_id[scene_id], spot))
    seeker = _build_policy(args.seeker, run, args)
    rows = match.evaluate(tasks, seeker, args.trials, args.seed,
                          goal_type=goal, config=run.game)
    buffer = io.StringIO()
    writer = csv.writer(buffer)
    writer.writerow(["label", "spots", "trials", "n", "found", "find_rate",
                     "wilson_low", "wilson_high", "mean_steps", "steps_low", "steps_high"])
    for label in sorted(rows, key=lambda l: ("easy", "medium", "hard").index(l) if l in ("easy", "medium", "hard") else 3):
        row = rows[label]
        writer.writerow([row.label, row.spots, row.trials, row.n, row.found, row.find_rate,
                         row.wilson_low, row.wilson_high, row.mean_steps,
                         row.steps_low, row.steps_high])
        print(f"{row.label}: find rate {row.find_rate:.3f} "
              f"[{row.wilson_low:.3f}, {row.wilson_high:.3f}] over {row.n} runs; "
              f"mean steps {row.mean_steps:.1f}")
    csv_path = formats.write_text_atomic(out / "eval.csv", buffer.getvalue())
    figure_path = figures.save_eval_figure(rows, out / "eval.png")
    print(csv_path)
    print(figure_path)
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    out = _out_dir(args)
    run = formats.load_config(args.config)
    scenes = formats.load_scenes(args.scenes)
    policies, log = train(run.learner, scenes, args.episodes, args.seed, game_config=run.game)
    policies_path = formats.save_policies(out / "policies.npz", policies)
    log_path = formats.save_training_log(out / "training-log.jsonl", log)
    figure_path = figures.save_training_figure(log, out / "training.png")
    tail = log[-min(len(log), 20):]
    if tail:
        mean_cov = sum(record["coverage"] for record in tail) / len(tail)
        print(f"{len(log)} episodes; coverage over the last {len(tail)}: {mean_cov:.3f}")
    for path in (policies_path, log_path, figure_path):
        print(path)
    return 0


def cmd_seriation(args: argparse.Namespace) -> int:
    out = _out_dir(args)
    scenes = formats.load_scenes(args.scenes)
    examples = seriation_dataset(scenes, np.random.default_rng(args.seed))
    path = formats.save_seriation(out / "seriation.txt", examples)
    positive = sum(1 for e in examples if e.label)
    print(f"{path} ({len(examples)} examples, {positive} strictly-greater)")
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    from ..playserver import serve_forever

    scenes = formats.load_scenes(args.scenes)
    out = _out_dir(args)
    serve_forever(scenes, args.port, out, args.seed, opponents=args.opponents)
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="root random seed")
    common.add_argument("--config", type=Path, default=None,
                        help="JSON file overriding game/learner/reward settings")
    common.add_argument("--out", type=Path, default=Path("."), help="output directory")

    parser = argparse.ArgumentParser(
        prog="cachegrid",
        description="Grid-world hide-and-seek: scenes, matches, evaluation, training.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-scenes", parents=[common], help="generate a seeded scene corpus")
    p.add_argument("--count", type=int, default=8)
    p.set_defaults(func=cmd_gen_scenes)

    p = sub.add_parser("spots", parents=[common], help="enumerate and label hiding spots")
    p.add_argument("--scene", type=Path, required=True)
    p.add_argument("--goal", choices=GOAL_TYPES, default=GOAL_TYPES[0])
    p.add_argument("--per-class", type=int, default=20,
                   help="spots sampled per difficulty; 0 keeps every labeled spot")
    p.set_defaults(func=cmd_spots)

    p = sub.add_parser("play", parents=[common], help="run one full game and report it")
    p.add_argument("--scene", type=Path, required=True)
    p.add_argument("--goal", choices=GOAL_TYPES, default=GOAL_TYPES[0])
    p.add_argument("--hider", choices=HIDERS, default="random")
    p.add_argument("--seeker", choices=SEEKERS, default="oracle")
    p.add_argument("--epsilon", type=float, default=0.2, help="deviation rate of the greedy seeker")
    p.add_argument("--policies", type=Path, default=None, help="npz from the train verb")
    p.set_defaults(func=cmd_play)

    p = sub.add_parser("eval", parents=[common], help="score a seeker over labeled spot sets")
    p.add_argument("--spots", type=Path, nargs="+", required=True)
    p.add_argument("--scenes", type=Path, nargs="+", required=True,
                   help="scene files or directories resolving the spot files' scene ids")
    p.add_argument("--seeker", choices=SEEKERS, default="oracle")
    p.add_argument("--epsilon", type=float, default=0.2, help="deviation rate of the greedy seeker")
    p.add_argument("--trials", type=int, default=3)
    p.add_argument("--policies", type=Path, default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("train", parents=[common], help="train the linear policies")
    p.add_argument("--scenes", type=Path, nargs="+", required=True)
    p.add_argument("--episodes", type=int, default=200)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("seriation", parents=[common], help="build the rotation-sweep dataset")
    p.add_argument("--scenes", type=Path, nargs="+", required=True)
    p.set_defaults(func=cmd_seriation)

    p = sub.add_parser("serve", parents=[common], help="serve live games for human trials")
    p.add_argument("--scenes", type=Path, nargs="+", required=True)
    p.add_argument("--port", type=int, default=8128)
    p.add_argument("--opponents", type=Path, nargs="*", default=[],
                   help="spot files offered to human seekers besides the auto-sampled set")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
