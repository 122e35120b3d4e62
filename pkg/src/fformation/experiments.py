"""Experiment drivers: table-style reports on synthetic or file data, plus a
single-threaded latency benchmark. All outputs are seeded and byte-stable:
reruns with the same configuration produce identical CSV/JSON files.
"""
from __future__ import annotations

import csv
import json
import os
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import crf as crf_mod
from . import svm as svm_mod
from .errors import ConfigError, DataError
from .metrics import report, report_to_dict
from .pipeline import (
    ANGLE_CLASSES,
    JOINT_CLASSES,
    ModelBundle,
    build_angle_data,
    build_crf_chains,
    build_formation_data,
    build_joint_data,
    detect,
    detect_joint,
    joint_class,
    load_models,
    rule_classify,
    save_models,
)
from .pose import APPROACH_ANGLES, FORMATIONS, GROUP_LABELS, Scene, load_scenes
from .synth import SynthConfig, generate_dataset, split_train_test

NONE_CLASS = "(none)"


@dataclass(frozen=True)
class SynthSpec:
    """Grid of (formation x angle) cells rendered count_per_cell times each."""

    count_per_cell: int = 100
    formations: tuple[str, ...] = FORMATIONS
    angles: tuple[int, ...] = APPROACH_ANGLES
    outlier_fraction: float = 0.5
    distance_m: tuple[float, float] = (2.0, 5.0)
    image_width: int = 640
    image_height: int = 480
    noise_px: float = 1.5
    formation_scale: float | None = None
    angle_jitter_deg: float = 4.0
    scale_jitter: float = 0.05
    seed: int = 0

    def configs(self) -> list[tuple[SynthConfig, int]]:
        """Per-cell configs; the outlier fraction becomes a second config.

        Config base seeds are spaced so per-scene derived seeds never collide.
        """
        specs = []
        stride = 10 * self.count_per_cell + 1000
        cell = 0
        for formation in self.formations:
            for angle in self.angles:
                n_out = int(round(self.outlier_fraction * self.count_per_cell))
                n_plain = self.count_per_cell - n_out
                base = self.seed + cell * stride
                common = dict(
                    formation=formation,
                    angle_deg=angle,
                    distance_m=self.distance_m,
                    image_width=self.image_width,
                    image_height=self.image_height,
                    noise_px=self.noise_px,
                    formation_scale=self.formation_scale,
                    angle_jitter_deg=self.angle_jitter_deg,
                    scale_jitter=self.scale_jitter,
                )
                if n_plain > 0:
                    specs.append(
                        (SynthConfig(**common, outlier_count=0, seed=base), n_plain)
                    )
                if n_out > 0:
                    specs.append(
                        (
                            SynthConfig(
                                **common,
                                outlier_count=1,
                                seed=base + 5 * self.count_per_cell,
                            ),
                            n_out,
                        )
                    )
                cell += 1
        return specs


@dataclass(frozen=True)
class TrainingConfig:
    # Defaults tuned on held-out synthetic data; the chain model wants weak
    # regularization and a long leash because of heavy-tailed facing scores.
    crf_l2: float = 0.003
    crf_max_iters: int = 3000
    crf_tol: float = 1e-4
    svm_c: float = 10.0
    svm_gamma: float | str = 0.125  # a float, or "auto" for CV selection
    svm_tol: float = 1e-3
    gamma_subsample: int = 600  # cap on samples fed to CV gamma selection


@dataclass(frozen=True)
class ExperimentConfig:
    out_dir: str
    tables: tuple[int, ...] = (1, 2, 3, 4)
    synth: SynthSpec | None = None
    train_path: str | None = None
    test_path: str | None = None
    models_dir: str | None = None
    save_models_dir: str | None = None
    training: TrainingConfig = field(default_factory=TrainingConfig)
    seed: int = 0


def resolve_gamma(training: TrainingConfig, X, labels, seed: int) -> float:
    if training.svm_gamma != "auto":
        return float(training.svm_gamma)
    X = np.asarray(X)
    if len(X) > training.gamma_subsample:
        rng = np.random.default_rng(seed)
        idx = np.sort(rng.choice(len(X), size=training.gamma_subsample, replace=False))
        X, labels = X[idx], np.asarray(labels)[idx]
    return svm_mod.select_gamma(
        X, labels, C=training.svm_c, tol=training.svm_tol, seed=seed
    )


def train_bundle(
    train_scenes: list[Scene], training: TrainingConfig, seed: int = 0
) -> ModelBundle:
    """Train the CRF, then the three SVMs on CRF-filtered groups.

    Feeding the classifiers the same filtered person sets they will see at
    detection time makes them robust to the filter's residual mistakes.
    """
    chains = build_crf_chains(train_scenes)
    crf_result = crf_mod.train(
        chains,
        crf_mod.CrfTrainConfig(
            l2=training.crf_l2,
            max_iters=training.crf_max_iters,
            tol=training.crf_tol,
        ),
    )
    crf_model = crf_result.model
    Xf, yf = build_formation_data(train_scenes, crf_model)
    gamma = resolve_gamma(training, Xf, yf, seed)
    formation_svm = svm_mod.train_one_vs_rest(
        Xf, yf, FORMATIONS, C=training.svm_c, gamma=gamma, tol=training.svm_tol
    )
    Xa, ya = build_angle_data(train_scenes, crf_model)
    angle_svm = svm_mod.train_one_vs_rest(
        Xa, ya, ANGLE_CLASSES, C=training.svm_c, gamma=gamma, tol=training.svm_tol
    )
    Xj, yj = build_joint_data(train_scenes, crf_model)
    joint_svm = svm_mod.train_one_vs_rest(
        Xj, yj, JOINT_CLASSES, C=training.svm_c, gamma=gamma, tol=training.svm_tol
    )
    return ModelBundle(
        crf=crf_model,
        formation_svm=formation_svm,
        angle_svm=angle_svm,
        joint_svm=joint_svm,
    )


def _require_truth(scenes: list[Scene], what: str) -> None:
    for s in scenes:
        if s.truth is None or s.truth.membership is None:
            raise DataError(f"scene {s.frame_id!r} lacks truth needed for {what}")


# ---------------------------------------------------------------------------
# Table builders. Each returns (csv_rows, json_payload); rows are written in
# a fixed column order so reruns diff cleanly.


def membership_table(scenes, bundle) -> tuple[list[list], dict]:
    gold, pred = [], []
    for scene in scenes:
        det = detect(scene, bundle.crf, bundle.formation_svm, bundle.angle_svm)
        gold.extend(scene.truth.membership)
        pred.extend(det.membership)
    rep = report(gold, pred, GROUP_LABELS)
    rows = [["class", "precision", "recall", "f1", "support"]]
    for c in GROUP_LABELS:
        pc = rep.per_class(c)
        rows.append(
            [c, f"{pc['precision']:.6f}", f"{pc['recall']:.6f}", f"{pc['f1']:.6f}", pc["support"]]
        )
    rows.append(
        [
            "weighted_avg",
            f"{rep.weighted_precision:.6f}",
            f"{rep.weighted_recall:.6f}",
            f"{rep.weighted_f1:.6f}",
            int(rep.support.sum()),
        ]
    )
    return rows, {"report": report_to_dict(rep)}


def _formation_predictions(scenes, bundle):
    learned, rule = [], []
    for scene in scenes:
        det = detect(scene, bundle.crf, bundle.formation_svm, bundle.angle_svm)
        learned.append(det.formation if det.formation is not None else NONE_CLASS)
        if len(scene.poses) >= 2:
            rb = rule_classify(scene)
            rule.append(rb.formation if rb.formation is not None else NONE_CLASS)
        else:
            rule.append(NONE_CLASS)
    return learned, rule


def formation_table(scenes, bundle) -> tuple[list[list], dict]:
    gold = [s.truth.formation for s in scenes]
    learned, rule = _formation_predictions(scenes, bundle)
    classes = FORMATIONS + (NONE_CLASS,)
    rep = report(gold, learned, classes)
    rows = [["formation", "precision", "recall", "f1", "support", "rule_accuracy"]]
    for c in FORMATIONS:
        pc = rep.per_class(c)
        in_class = [i for i, g in enumerate(gold) if g == c]
        rule_acc = (
            float(np.mean([rule[i] == c for i in in_class])) if in_class else 0.0
        )
        rows.append(
            [
                c,
                f"{pc['precision']:.6f}",
                f"{pc['recall']:.6f}",
                f"{pc['f1']:.6f}",
                pc["support"],
                f"{rule_acc:.6f}",
            ]
        )
    rule_overall = float(np.mean([r == g for r, g in zip(rule, gold)]))
    rows.append(
        [
            "weighted_avg",
            f"{rep.weighted_precision:.6f}",
            f"{rep.weighted_recall:.6f}",
            f"{rep.weighted_f1:.6f}",
            int(rep.support.sum()),
            f"{rule_overall:.6f}",
        ]
    )
    payload = {"report": report_to_dict(rep), "rule_accuracy_overall": rule_overall}
    return rows, payload


def angle_table(scenes, bundle) -> tuple[list[list], dict]:
    gold = [str(s.truth.angle_deg) for s in scenes]
    pred = []
    for scene in scenes:
        det = detect(scene, bundle.crf, bundle.formation_svm, bundle.angle_svm)
        pred.append(str(det.angle_deg) if det.angle_deg is not None else NONE_CLASS)
    classes = ANGLE_CLASSES + (NONE_CLASS,)
    rep = report(gold, pred, classes)
    rows = [["angle_deg", "precision", "recall", "f1", "support"]]
    for c in ANGLE_CLASSES:
        pc = rep.per_class(c)
        rows.append(
            [c, f"{pc['precision']:.6f}", f"{pc['recall']:.6f}", f"{pc['f1']:.6f}", pc["support"]]
        )
    rows.append(
        [
            "weighted_avg",
            f"{rep.weighted_precision:.6f}",
            f"{rep.weighted_recall:.6f}",
            f"{rep.weighted_f1:.6f}",
            int(rep.support.sum()),
        ]
    )
    return rows, {"report": report_to_dict(rep)}


def joint_table(scenes, bundle) -> tuple[list[list], dict]:
    """28 rows of (formation, angle): learned joint accuracy vs rule accuracy.

    The rule baseline predicts only the formation, so its column scores
    formation correctness within each cell, as in the compared system.
    """
    by_cell: dict[str, list[Scene]] = {c: [] for c in JOINT_CLASSES}
    for scene in scenes:
        by_cell[joint_class(scene.truth.formation, scene.truth.angle_deg)].append(scene)
    rows = [["formation", "angle_deg", "n", "learned_accuracy", "rule_accuracy"]]
    cells = {}
    total_n = 0
    learned_hits = 0.0
    rule_hits = 0.0
    for cls in JOINT_CLASSES:
        formation, angle = cls.rpartition("@")[0], int(cls.rpartition("@")[2])
        cell_scenes = by_cell[cls]
        n = len(cell_scenes)
        l_ok = r_ok = 0
        for scene in cell_scenes:
            det = detect_joint(scene, bundle.crf, bundle.joint_svm)
            if det.joint == (formation, angle):
                l_ok += 1
            if len(scene.poses) >= 2 and rule_classify(scene).formation == formation:
                r_ok += 1
        l_acc = l_ok / n if n else 0.0
        r_acc = r_ok / n if n else 0.0
        rows.append(
            [formation, angle, n, f"{l_acc:.6f}", f"{r_acc:.6f}"]
        )
        cells[cls] = {"n": n, "learned_accuracy": l_acc, "rule_accuracy": r_acc}
        total_n += n
        learned_hits += l_ok
        rule_hits += r_ok
    l_avg = learned_hits / total_n if total_n else 0.0
    r_avg = rule_hits / total_n if total_n else 0.0
    rows.append(["average", "", total_n, f"{l_avg:.6f}", f"{r_avg:.6f}"])
    payload = {
        "cells": cells,
        "learned_accuracy_avg": l_avg,
        "rule_accuracy_avg": r_avg,
    }
    return rows, payload


_TABLE_BUILDERS = {
    1: ("table1_membership", membership_table),
    2: ("table2_formation", formation_table),
    3: ("table3_angle", angle_table),
    4: ("table4_joint", joint_table),
}


def _write_outputs(out_dir, stem, rows, payload, seed) -> dict:
    csv_path = os.path.join(out_dir, stem + ".csv")
    json_path = os.path.join(out_dir, stem + ".json")
    with open(csv_path, "w", encoding="utf-8", newline="\n") as fp:
        writer = csv.writer(fp, lineterminator="\n")
        writer.writerows(rows)
    with open(json_path, "w", encoding="utf-8", newline="\n") as fp:
        json.dump({"seed": seed, **payload}, fp, indent=1, sort_keys=True)
        fp.write("\n")
    return {"csv": csv_path, "json": json_path}


def run_experiment(cfg: ExperimentConfig) -> dict:
    """Generate/load data, train/load models, and emit the requested tables.

    Returns a dict of written file paths per table, plus 'meta'.
    """
    bad_tables = [t for t in cfg.tables if t not in _TABLE_BUILDERS]
    if bad_tables:
        raise ConfigError(f"unknown tables requested: {bad_tables}")
    if cfg.synth is not None:
        scenes = generate_dataset(cfg.synth.configs(), shuffle_seed=cfg.synth.seed)
        train_scenes, test_scenes = split_train_test(scenes, seed=cfg.synth.seed)
    elif cfg.test_path is not None:
        test_scenes = load_scenes(cfg.test_path)
        train_scenes = load_scenes(cfg.train_path) if cfg.train_path else []
    else:
        raise ConfigError("experiment needs either a synthetic spec or a test path")
    _require_truth(test_scenes, "evaluation")

    if cfg.models_dir is not None:
        bundle = load_models(cfg.models_dir)
    else:
        if not train_scenes:
            raise ConfigError("no models_dir given and no training data available")
        bundle = train_bundle(train_scenes, cfg.training, seed=cfg.seed)
        if cfg.save_models_dir:
            save_models(bundle, cfg.save_models_dir)

    os.makedirs(cfg.out_dir, exist_ok=True)
    outputs = {}
    for t in cfg.tables:
        stem, builder = _TABLE_BUILDERS[t]
        rows, payload = builder(test_scenes, bundle)
        outputs[stem] = _write_outputs(cfg.out_dir, stem, rows, payload, cfg.seed)

    meta = {
        "seed": cfg.seed,
        "tables": list(cfg.tables),
        "n_train_scenes": len(train_scenes),
        "n_test_scenes": len(test_scenes),
        "training": asdict(cfg.training),
        "synth": asdict(cfg.synth) if cfg.synth is not None else None,
    }
    meta_path = os.path.join(cfg.out_dir, "meta.json")
    with open(meta_path, "w", encoding="utf-8", newline="\n") as fp:
        json.dump(meta, fp, indent=1, sort_keys=True)
        fp.write("\n")
    outputs["meta"] = meta_path
    return outputs


# ---------------------------------------------------------------------------
# Latency benchmark.


@dataclass(frozen=True)
class LatencyStats:
    n_measurements: int
    p50_ms: float
    p95_ms: float
    max_ms: float
    stages_ms: dict  # stage -> {"p50": ..., "p95": ..., "max": ...}


def latency_stats_to_dict(stats: LatencyStats) -> dict:
    return {
        "n_measurements": stats.n_measurements,
        "p50_ms": stats.p50_ms,
        "p95_ms": stats.p95_ms,
        "max_ms": stats.max_ms,
        "stages_ms": stats.stages_ms,
    }


def bench_latency(
    bundle: ModelBundle, scenes: list[Scene], repetitions: int = 3, warmup: int = 5
) -> LatencyStats:
    """Single-threaded timing of detect(), I/O excluded, warmup excluded."""
    if len(scenes) < 100:
        raise ValueError("latency benchmark needs at least 100 scenes")
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")

    def run():
        for scene in scenes[:warmup]:
            detect(scene, bundle.crf, bundle.formation_svm, bundle.angle_svm)
        totals = []
        stages = {"features": [], "crf": [], "svm": []}
        for _ in range(repetitions):
            for scene in scenes:
                timings: dict = {}
                t0 = time.perf_counter()
                detect(
                    scene,
                    bundle.crf,
                    bundle.formation_svm,
                    bundle.angle_svm,
                    timings=timings,
                )
                totals.append(time.perf_counter() - t0)
                for key in stages:
                    stages[key].append(timings[key])
        return totals, stages

    try:
        from threadpoolctl import threadpool_limits

        with threadpool_limits(limits=1):
            totals, stages = run()
    except ImportError:
        totals, stages = run()

    totals_ms = np.array(totals) * 1e3
    stage_stats = {
        key: {
            "p50": float(np.percentile(np.array(vals) * 1e3, 50)),
            "p95": float(np.percentile(np.array(vals) * 1e3, 95)),
            "max": float(np.max(np.array(vals) * 1e3)),
        }
        for key, vals in stages.items()
    }
    return LatencyStats(
        n_measurements=len(totals),
        p50_ms=float(np.percentile(totals_ms, 50)),
        p95_ms=float(np.percentile(totals_ms, 95)),
        max_ms=float(np.max(totals_ms)),
        stages_ms=stage_stats,
    )
