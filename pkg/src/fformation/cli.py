"""Command-line interface.

Subcommands: generate, train-crf, train-svm, predict, evaluate, baseline,
bench. Every command takes --seed and is deterministic given its flags.
Exit codes: 0 success, 2 configuration error, 3 data error.
"""
from __future__ import annotations

import argparse
import json
import sys

from . import crf as crf_mod
from . import svm as svm_mod
from .errors import ConfigError, DataError
from .experiments import (
    ExperimentConfig,
    SynthSpec,
    TrainingConfig,
    bench_latency,
    latency_stats_to_dict,
    resolve_gamma,
    run_experiment,
)
from .pipeline import (
    ANGLE_CLASSES,
    JOINT_CLASSES,
    build_angle_data,
    build_crf_chains,
    build_formation_data,
    build_joint_data,
    detect,
    detect_joint,
    load_models,
    rule_classify,
    write_detections,
)
from .pose import (
    APPROACH_ANGLES,
    FORMATIONS,
    convert_ego_group_file,
    load_scenes,
    save_scenes,
)
from .synth import generate_dataset, split_train_test, synth_config_from_dict


def _parse_formations(text: str) -> tuple[str, ...]:
    names = tuple(t.strip() for t in text.split(",") if t.strip())
    bad = [n for n in names if n not in FORMATIONS]
    if bad:
        raise ConfigError(f"unknown formations {bad}; choose from {list(FORMATIONS)}")
    return names


def _parse_angles(text: str) -> tuple[int, ...]:
    try:
        angles = tuple(int(t.strip()) for t in text.split(",") if t.strip())
    except ValueError as exc:
        raise ConfigError(f"bad angle list {text!r}: {exc}") from exc
    bad = [a for a in angles if a not in APPROACH_ANGLES]
    if bad:
        raise ConfigError(f"unknown angles {bad}; choose from {list(APPROACH_ANGLES)}")
    return angles


def _parse_distance(text: str) -> tuple[float, float]:
    parts = text.split(":")
    try:
        if len(parts) == 1:
            return (float(parts[0]), float(parts[0]))
        if len(parts) == 2:
            return (float(parts[0]), float(parts[1]))
    except ValueError:
        pass
    raise ConfigError(f"distance must be 'd' or 'lo:hi', got {text!r}")


def _parse_gamma(text: str):
    if text == "auto":
        return "auto"
    try:
        return float(text)
    except ValueError as exc:
        raise ConfigError(f"gamma must be a float or 'auto', got {text!r}") from exc


def cmd_generate(args) -> int:
    if args.config:
        with open(args.config, "r", encoding="utf-8") as fp:
            try:
                doc = json.load(fp)
            except json.JSONDecodeError as exc:
                raise DataError(f"invalid config JSON {args.config}: {exc}") from exc
        try:
            cfg = synth_config_from_dict(doc)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad synth config: {exc}") from exc
        configs = [(cfg, args.count)]
    else:
        spec = SynthSpec(
            count_per_cell=args.count,
            formations=_parse_formations(args.formations),
            angles=_parse_angles(args.angles),
            outlier_fraction=args.outlier_frac,
            distance_m=_parse_distance(args.distance),
            image_width=args.width,
            image_height=args.height,
            noise_px=args.noise_px,
            formation_scale=args.formation_scale,
            angle_jitter_deg=args.angle_jitter,
            scale_jitter=args.scale_jitter,
            seed=args.seed,
        )
        configs = spec.configs()
    scenes = generate_dataset(configs, shuffle_seed=args.seed)
    save_scenes(scenes, args.out)
    print(f"wrote {len(scenes)} scenes to {args.out}")
    if args.train_out or args.test_out:
        if not (args.train_out and args.test_out):
            raise ConfigError("--train-out and --test-out must be given together")
        train, test = split_train_test(scenes, seed=args.seed)
        save_scenes(train, args.train_out)
        save_scenes(test, args.test_out)
        print(f"wrote {len(train)} train / {len(test)} test scenes")
    return 0


def cmd_train_crf(args) -> int:
    scenes = load_scenes(args.train)
    chains = build_crf_chains(scenes)
    result = crf_mod.train(
        chains,
        crf_mod.CrfTrainConfig(l2=args.l2, max_iters=args.max_iters, tol=args.tol),
    )
    crf_mod.save_crf(result.model, args.out)
    print(
        f"trained crf on {len(chains)} chains: converged={result.converged} "
        f"grad_inf_norm={result.final_grad_inf_norm:.3e} iters={result.n_iters}"
    )
    return 0


_TASKS = {
    "formation": (build_formation_data, FORMATIONS),
    "angle": (build_angle_data, ANGLE_CLASSES),
    "joint": (build_joint_data, JOINT_CLASSES),
}


def cmd_train_svm(args) -> int:
    scenes = load_scenes(args.train)
    builder, classes = _TASKS[args.task]
    crf_model = crf_mod.load_crf(args.crf) if args.crf else None
    X, y = builder(scenes, crf_model)
    training = TrainingConfig(svm_c=args.C, svm_gamma=_parse_gamma(args.gamma), svm_tol=args.tol)
    gamma = resolve_gamma(training, X, y, args.seed)
    model = svm_mod.train_one_vs_rest(
        X, y, classes, C=args.C, gamma=gamma, tol=args.tol
    )
    svm_mod.save_svm(model, args.out)
    n_sv = sum(len(b.dual_coef) for b in model.binaries)
    print(
        f"trained {args.task} svm on {len(y)} samples "
        f"(gamma={gamma:g}, {len(classes)} classes, {n_sv} stored SVs)"
    )
    return 0


def cmd_predict(args) -> int:
    scenes = load_scenes(args.data)
    bundle = load_models(args.models)
    detections = []
    for scene in scenes:
        if args.joint:
            detections.append(detect_joint(scene, bundle.crf, bundle.joint_svm))
        else:
            detections.append(
                detect(scene, bundle.crf, bundle.formation_svm, bundle.angle_svm)
            )
    with open(args.out, "w", encoding="utf-8", newline="\n") as fp:
        write_detections(detections, fp)
    print(f"wrote {len(detections)} detections to {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    tables = tuple(int(t) for t in args.tables.split(",") if t.strip())
    cfg = ExperimentConfig(
        out_dir=args.out_dir,
        tables=tables,
        train_path=args.train,
        test_path=args.test,
        models_dir=args.models,
        save_models_dir=args.save_models,
        training=TrainingConfig(
            crf_l2=args.crf_l2,
            crf_max_iters=args.crf_max_iters,
            crf_tol=args.crf_tol,
            svm_c=args.C,
            svm_gamma=_parse_gamma(args.gamma),
            svm_tol=args.svm_tol,
        ),
        seed=args.seed,
    )
    outputs = run_experiment(cfg)
    for stem, paths in outputs.items():
        print(f"{stem}: {paths}")
    return 0


def cmd_baseline(args) -> int:
    scenes = load_scenes(args.data)
    detections = []
    for scene in scenes:
        if len(scene.poses) < 2:
            raise DataError(
                f"scene {scene.frame_id!r} has fewer than two poses; "
                "the rule baseline needs at least two"
            )
        detections.append(rule_classify(scene))
    with open(args.out, "w", encoding="utf-8", newline="\n") as fp:
        write_detections(detections, fp)
    print(f"wrote {len(detections)} baseline detections to {args.out}")
    return 0


def cmd_bench(args) -> int:
    scenes = load_scenes(args.data)
    if len(scenes) < 100:
        raise DataError(
            f"{args.data} holds {len(scenes)} scenes; the benchmark needs >= 100"
        )
    bundle = load_models(args.models)
    stats = bench_latency(bundle, scenes, repetitions=args.repetitions)
    payload = latency_stats_to_dict(stats)
    with open(args.out, "w", encoding="utf-8", newline="\n") as fp:
        json.dump(payload, fp, indent=1, sort_keys=True)
        fp.write("\n")
    print(
        f"detect() latency over {stats.n_measurements} runs: "
        f"p50={stats.p50_ms:.2f} ms p95={stats.p95_ms:.2f} ms max={stats.max_ms:.2f} ms"
    )
    return 0


def cmd_convert_ego(args) -> int:
    n = convert_ego_group_file(args.annotations, args.out)
    print(f"converted {n} frames to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fformation",
        description="F-formation and approach-angle recognition from 2D keypoints",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="render a labeled synthetic dataset")
    p.add_argument("--formations", default=",".join(FORMATIONS))
    p.add_argument("--angles", default=",".join(str(a) for a in APPROACH_ANGLES))
    p.add_argument("--count", type=int, default=100, help="scenes per (formation, angle) cell")
    p.add_argument("--outlier-frac", type=float, default=0.5)
    p.add_argument("--distance", default="2:5", help="camera distance in meters, 'd' or 'lo:hi'")
    p.add_argument("--width", type=int, default=640)
    p.add_argument("--height", type=int, default=480)
    p.add_argument("--noise-px", type=float, default=1.5)
    p.add_argument("--formation-scale", type=float, default=None, help="member spacing override, meters")
    p.add_argument("--angle-jitter", type=float, default=4.0, help="per-scene camera azimuth jitter, degrees")
    p.add_argument("--scale-jitter", type=float, default=0.05, help="per-scene relative spacing jitter")
    p.add_argument(
        "--config",
        default=None,
        help="JSON file mirroring one scene config; renders --count scenes from it",
    )
    p.add_argument("--out", required=True)
    p.add_argument("--train-out", default=None, help="also write an 80%% train split")
    p.add_argument("--test-out", default=None, help="also write the 20%% test split")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train-crf", help="train the group/outlier chain model")
    p.add_argument("--train", required=True, help="labeled scene JSONL")
    p.add_argument("--out", required=True)
    p.add_argument("--l2", type=float, default=1.0)
    p.add_argument("--max-iters", type=int, default=500)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train_crf)

    p = sub.add_parser("train-svm", help="train a formation, angle, or joint classifier")
    p.add_argument("--task", choices=sorted(_TASKS), required=True)
    p.add_argument("--train", required=True, help="labeled scene JSONL")
    p.add_argument(
        "--crf",
        default=None,
        help="trained crf model; train on its filtered groups instead of gold ones",
    )
    p.add_argument("--out", required=True)
    p.add_argument("--C", type=float, default=10.0)
    p.add_argument("--gamma", default="0.125", help="RBF gamma or 'auto' for CV selection")
    p.add_argument("--tol", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train_svm)

    p = sub.add_parser("predict", help="run detection over scene JSONL")
    p.add_argument("--data", required=True)
    p.add_argument("--models", required=True, help="model bundle directory")
    p.add_argument("--out", required=True)
    p.add_argument("--joint", action="store_true", help="use the 28-class joint classifier")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="emit table-style reports")
    p.add_argument("--test", default=None, help="labeled test scene JSONL")
    p.add_argument("--train", default=None, help="labeled training scene JSONL")
    p.add_argument("--models", default=None, help="load models instead of training")
    p.add_argument("--save-models", default=None, help="write trained models here")
    p.add_argument("--tables", default="1,2,3,4")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--crf-l2", type=float, default=0.003)
    p.add_argument("--crf-max-iters", type=int, default=3000)
    p.add_argument("--crf-tol", type=float, default=1e-4)
    p.add_argument("--C", type=float, default=10.0)
    p.add_argument("--gamma", default="0.125")
    p.add_argument("--svm-tol", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("baseline", help="run the rule-based head-orientation classifier")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("bench", help="single-threaded detect() latency benchmark")
    p.add_argument("--data", required=True, help="scene JSONL with at least 100 scenes")
    p.add_argument("--models", required=True)
    p.add_argument("--repetitions", type=int, default=3)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser(
        "convert-ego-group", help="convert EGO-GROUP-style annotations to scene JSONL"
    )
    p.add_argument("--annotations", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_convert_ego)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"config error: missing input {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
