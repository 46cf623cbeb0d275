"""Command-line surface: corpus generation, staged training, evaluation,
overlay rendering, and closed-loop demo runs.

Commands operate on a workspace directory (override with --workspace or the
HANDCAST_WORKSPACE environment variable) laid out as
workspace/{corpus, checkpoints, reports, overlays, demos}. Every run writes a
resolved-config snapshot into its output directory.

Exit codes: 0 success, 2 usage, 3 I/O failure, 4 missing stage dependency,
5 numeric abort.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import evaluation as ev
from . import synthworld as sw
from . import training as tr
from .core.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .detector import build_hand_net, desk_config
from .manip import ManipConfig, build_manip_net
from .regressor import build_regressor, desk_regressor_config, predict_future_boxes
from .types import HandClass

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_DEPENDENCY = 4
EXIT_NUMERIC = 5

DEFAULT_DELTA = 10
DEFAULT_K = 10


class DependencyError(RuntimeError):
    pass


def _workspace(args) -> Path:
    root = args.workspace or os.environ.get("HANDCAST_WORKSPACE", "workspace")
    return Path(root)


def _snapshot(out_dir: Path, command: str, payload: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    resolved = {"command": command, **{k: v for k, v in sorted(payload.items())}}
    (out_dir / f"{command}_config.json").write_text(json.dumps(resolved, sort_keys=True, indent=1) + "\n")


def _load_interaction(corpus_dir: Path) -> list:
    inter = corpus_dir / "interaction"
    if not inter.is_dir():
        raise DependencyError(f"no interaction corpus at {inter}; run 'generate' first")
    return [sw.load_episode(d) for d in sorted(inter.iterdir()) if d.is_dir()]


def _require_checkpoint(path: Path, stage: str) -> dict:
    if not path.exists():
        raise DependencyError(f"missing checkpoint {path}; train stage '{stage}' first")
    return load_checkpoint(path)


def _load_pipeline(ck_dir: Path, k: int, untrained: bool = False):
    net_config = desk_config()
    net = build_hand_net(net_config, 0)
    reg = build_regressor(desk_regressor_config(k=k, delta=DEFAULT_DELTA),
                          net_config.bottleneck_shape, 0)
    arm = sw.default_arm()
    manip = build_manip_net(ManipConfig(), arm, 0)
    if not untrained:
        net.load_state_dict(_require_checkpoint(ck_dir / "handnet.ckpt", "handnet"))
        reg.load_state_dict(_require_checkpoint(ck_dir / f"regressor_k{k}.ckpt", "regressor"))
        manip.load_state_dict(_require_checkpoint(ck_dir / "manip.ckpt", "manip"))
    return net, reg, manip, arm


# ----------------------------------------------------------------------------
# generate


def cmd_generate(args) -> int:
    if args.episodes <= 0:
        print("error: --episodes must be positive", file=sys.stderr)
        return EXIT_USAGE
    ws = _workspace(args)
    out = Path(args.out) if args.out else ws / "corpus"
    scenario = args.scenario
    _snapshot(out, "generate", {"scenario": scenario, "episodes": args.episodes,
                                "seed": args.seed, "out": str(out)})

    detector_set = sw.generate_detector_set(n_frames=args.detector_frames, seed=args.seed)
    sw.save_episode(detector_set, out / "detector")

    episodes = []
    for i in range(args.episodes):
        if scenario == "mixed":
            kind = ("ClearTable", "PushTrivet", "ConstantVelocity")[i % 3]
        else:
            kind = scenario
        script = sw.make_script(kind, seed=sw.splitmix64(args.seed, i), fps=args.fps)
        episodes.append(sw.generate_episode(script, episode_id=f"ep_{i:03d}"))
    for ep in episodes:
        sw.save_episode(ep, out / "interaction" / ep.episode_id)

    arm, cam = sw.default_arm(), sw.default_camera()
    logs = sw.generate_robot_logs(arm, cam, n_sequences=args.logs, seed=args.seed)
    sw.save_logs(logs, out / "logs")

    manifest = {
        "detector_frames": len(detector_set),
        "interaction_episodes": len(episodes),
        "robot_logs": len(logs),
        "seed": args.seed,
        "scenario": scenario,
        "fps": args.fps,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=1) + "\n")
    print(f"corpus written to {out}: {len(detector_set)} labeled frames, "
          f"{len(episodes)} episodes, {len(logs)} logs")
    return EXIT_OK


# ----------------------------------------------------------------------------
# train


def _stage_config(sections: dict, stage: str, seed_override=None, k=None, delta=None) -> tr.TrainConfig:
    defaults = {
        "handnet": dict(epochs=12, batch_size=8, learning_rate=3e-3),
        "regressor": dict(epochs=8, batch_size=8, learning_rate=1.2e-3),
        "manip": dict(epochs=200, batch_size=64, learning_rate=2e-3),
        "hands_only": dict(epochs=30, batch_size=64, learning_rate=2e-3),
        "future_detector": dict(epochs=2, batch_size=8, learning_rate=1e-3),
    }[stage]
    section = dict(sections.get(stage, {}))
    merged = {**defaults, **section}
    seed = seed_override if seed_override is not None else merged.pop("seed", 0)
    merged.pop("seed", None)
    cfg = tr.TrainConfig(stage=stage, seed=int(seed), k=k, delta=delta, **merged)
    return cfg


def cmd_train(args) -> int:
    ws = _workspace(args)
    corpus_dir = Path(args.data) if args.data else ws / "corpus"
    out = Path(args.out) if args.out else ws / "checkpoints"
    sections = tr.read_config_file(args.config) if args.config else {}
    stages = ([args.stage] if args.stage != "all"
              else ["handnet", "regressor", "manip"])
    _snapshot(out, "train", {"stage": args.stage, "config": args.config,
                             "data": str(corpus_dir), "out": str(out),
                             "seed": args.seed, "k": args.k, "delta": args.delta})

    net = None
    for stage in stages:
        if stage == "handnet":
            detector_set = sw.load_episode(corpus_dir / "detector")
            cfg = _stage_config(sections, "handnet", args.seed)
            net, report = tr.train_hand_net(cfg, detector_set, out_dir=out)
        elif stage == "regressor":
            if net is None:
                net = build_hand_net(desk_config(), 0)
                net.load_state_dict(_require_checkpoint(out / "handnet.ckpt", "handnet"))
            episodes = _load_interaction(corpus_dir)[:32]
            cache = tr.build_feature_dataset(net, episodes, k=args.k, delta=args.delta)
            cfg = _stage_config(sections, "regressor", args.seed, k=args.k, delta=args.delta)
            _, report = tr.train_regressor(cfg, cache, out_dir=out)
        elif stage == "manip":
            logs = sw.load_logs(corpus_dir / "logs")
            if not logs:
                raise DependencyError(f"no robot logs under {corpus_dir / 'logs'}")
            cfg = _stage_config(sections, "manip", args.seed, delta=30)
            _, report = tr.train_manipulation(cfg, logs[:40], sw.default_arm(), out_dir=out)
        elif stage == "hands_only":
            if net is None:
                net = build_hand_net(desk_config(), 0)
                net.load_state_dict(_require_checkpoint(out / "handnet.ckpt", "handnet"))
            episodes = _load_interaction(corpus_dir)[:32]
            cfg = _stage_config(sections, "hands_only", args.seed)
            _, report = tr.train_baseline_hands_only(cfg, episodes, net, delta=args.delta, out_dir=out)
        elif stage == "future_detector":
            base = build_hand_net(desk_config(), 0)
            base.load_state_dict(_require_checkpoint(out / "handnet.ckpt", "handnet"))
            episodes = _load_interaction(corpus_dir)[:32]
            cfg = _stage_config(sections, "future_detector", args.seed)
            _, report = tr.train_baseline_future_detector(cfg, episodes, delta=args.delta,
                                                          base_net=base, out_dir=out)
        else:
            print(f"error: unknown stage {stage!r}", file=sys.stderr)
            return EXIT_USAGE
        print(f"[{stage}] final loss {report.final_loss:.5f} -> {report.checkpoint}")
    return EXIT_OK


# ----------------------------------------------------------------------------
# eval


def cmd_eval(args) -> int:
    ws = _workspace(args)
    corpus_dir = Path(args.data) if args.data else ws / "corpus"
    ck = Path(args.checkpoints) if args.checkpoints else ws / "checkpoints"
    out = Path(args.report) if args.report else ws / "reports"
    episodes = _load_interaction(corpus_dir)
    split = args.split
    test_eps = episodes[32:] if split == "test" else episodes[:32]
    if not test_eps:
        raise DependencyError("no episodes in the requested split")
    _snapshot(out, "eval", {"methods": args.methods, "split": split,
                            "checkpoints": str(ck), "data": str(corpus_dir)})

    net = build_hand_net(desk_config(), 0)
    net.load_state_dict(_require_checkpoint(ck / "handnet.ckpt", "handnet"))
    named = {}
    t_start = 9
    for method in args.methods.split(","):
        method = method.strip()
        if method.startswith("full_k"):
            k = int(method[len("full_k"):])
            reg = build_regressor(desk_regressor_config(k=k, delta=args.delta),
                                  net.config.bottleneck_shape, 0)
            reg.load_state_dict(_require_checkpoint(ck / f"regressor_k{k}.ckpt", "regressor"))
            named[method] = ev.evaluate_method("full", test_eps, net, reg=reg, t_start=t_start)
        elif method == "hands_only":
            ho = tr.HandsOnlyNet(0)
            ho.load_state_dict(_require_checkpoint(ck / "hands_only.ckpt", "hands_only"))
            named[method] = ev.evaluate_method("hands_only", test_eps, net, hands_only=ho,
                                               delta=args.delta, t_start=t_start)
        elif method == "future_detector":
            fnet = build_hand_net(desk_config(), 0)
            fnet.load_state_dict(_require_checkpoint(ck / "future_detector.ckpt", "future_detector"))
            named[method] = ev.evaluate_method("future_detector", test_eps, net, future_net=fnet,
                                               delta=args.delta, t_start=t_start)
        else:
            print(f"error: unknown method {method!r}", file=sys.stderr)
            return EXIT_USAGE

    report = ev.build_report(named)
    out.mkdir(parents=True, exist_ok=True)
    report.save(out / "prediction_report.json")
    tables = [
        ev.format_prediction_table(report),
        ev.format_distance_table(report),
        ev.format_distance_table(report, right_only=True),
    ]
    text = "\n\n".join(tables) + "\n"
    (out / "prediction_tables.txt").write_text(text)
    print(text, end="")
    return EXIT_OK


# ----------------------------------------------------------------------------
# predict (overlay rendering)


def cmd_predict(args) -> int:
    ws = _workspace(args)
    corpus_dir = Path(args.data) if args.data else ws / "corpus"
    ck = Path(args.checkpoints) if args.checkpoints else ws / "checkpoints"
    out = Path(args.out) if args.out else ws / "overlays"
    ep_dir = corpus_dir / "interaction" / args.episode
    if not ep_dir.is_dir():
        raise DependencyError(f"episode directory {ep_dir} not found")
    episode = sw.load_episode(ep_dir)
    net, reg, _, _ = _load_pipeline(ck, args.k)
    _snapshot(out, "predict", {"episode": args.episode, "t": args.t, "k": args.k})

    k, delta = reg.config.k, reg.config.delta
    sample_every = episode.fps if args.t is None else None
    ts = ([args.t] if args.t is not None
          else list(range(k - 1, len(episode) - delta, sample_every)))
    written = []
    for t in ts:
        if t < k - 1 or t + delta >= len(episode):
            print(f"error: t={t} leaves no room for the K window or the horizon", file=sys.stderr)
            return EXIT_USAGE
        dets = predict_future_boxes(net, reg, episode.frames[t - k + 1:t + 1])
        trip = ev.render_triptych(episode.frames[t], dets.boxes, episode.frames[t + delta])
        out.mkdir(parents=True, exist_ok=True)
        path = out / f"{args.episode}_t{t:04d}.ppm"
        ev.write_ppm(path, trip)
        written.append(path)
    print(f"wrote {len(written)} overlay triptychs to {out}")
    return EXIT_OK


# ----------------------------------------------------------------------------
# demo (closed loop)


def cmd_demo(args) -> int:
    ws = _workspace(args)
    ck = Path(args.checkpoints) if args.checkpoints else ws / "checkpoints"
    out = Path(args.out) if args.out else ws / "demos"
    net, reg, manip, arm = _load_pipeline(ck, args.k, untrained=args.untrained)
    cam = sw.default_camera()
    _snapshot(out, "demo", {"episodes": args.episodes, "seed": args.seed,
                            "oracle": args.oracle, "untrained": args.untrained})

    report = ev.run_closed_loop(net, reg, None if args.oracle else manip, arm, cam,
                                n_episodes=args.episodes, seed=args.seed, oracle=args.oracle)
    out.mkdir(parents=True, exist_ok=True)
    (out / "closed_loop_report.json").write_text(report.to_json() + "\n")
    for i, entry in enumerate(report.entries):
        print(f"episode {i}: {'success' if entry.success else 'failure'} "
              f"mean error {entry.mean_error_px:.1f} px over {entry.steps} steps")
    print(f"success rate: {report.success_rate:.2f}")
    return EXIT_OK


# ----------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="handcast",
                                     description="Synthetic future-hand prediction pipeline")
    parser.add_argument("--workspace", default=None, help="workspace root directory")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="generate the synthetic corpus")
    g.add_argument("--scenario", default="mixed",
                   choices=["mixed", "ClearTable", "PushTrivet", "Static", "ConstantVelocity"])
    g.add_argument("--episodes", type=int, default=47)
    g.add_argument("--detector-frames", type=int, default=500)
    g.add_argument("--logs", type=int, default=50)
    g.add_argument("--fps", type=int, default=10)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", default=None)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train one stage or all stages in order")
    t.add_argument("--stage", required=True,
                   choices=["all", "handnet", "regressor", "manip", "hands_only", "future_detector"])
    t.add_argument("--config", default=None, help="flat-section key/value config file")
    t.add_argument("--data", default=None)
    t.add_argument("--out", default=None)
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--k", type=int, default=DEFAULT_K)
    t.add_argument("--delta", type=int, default=DEFAULT_DELTA)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate methods on a corpus split")
    e.add_argument("--methods", default="full_k10,hands_only,future_detector")
    e.add_argument("--split", default="test", choices=["test", "train"])
    e.add_argument("--data", default=None)
    e.add_argument("--checkpoints", default=None)
    e.add_argument("--report", default=None)
    e.add_argument("--delta", type=int, default=DEFAULT_DELTA)
    e.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="render prediction overlay triptychs")
    p.add_argument("--episode", required=True)
    p.add_argument("--t", type=int, default=None, help="frame index (default: every second)")
    p.add_argument("--k", type=int, default=DEFAULT_K)
    p.add_argument("--data", default=None)
    p.add_argument("--checkpoints", default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_predict)

    d = sub.add_parser("demo", help="run closed-loop scripted episodes")
    d.add_argument("--episodes", type=int, default=20)
    d.add_argument("--seed", type=int, default=999)
    d.add_argument("--k", type=int, default=DEFAULT_K)
    d.add_argument("--oracle", action="store_true",
                   help="use ground-truth future boxes and the IK oracle")
    d.add_argument("--untrained", action="store_true",
                   help="negative control with freshly initialized networks")
    d.add_argument("--checkpoints", default=None)
    d.add_argument("--out", default=None)
    d.set_defaults(func=cmd_demo)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DependencyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DEPENDENCY
    except (tr.TrainingAbort, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
