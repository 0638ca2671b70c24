"""Experiment orchestration.

Two protocols drive the same pick cycle (render, project, propose,
select, execute, verify, log, maybe retrain):

* ``run_learning_experiment`` keeps the belt creeping at constant speed
  with the material loop closed, for a fixed budget of logged attempts.
* ``run_clean_experiment`` opens the loop, queues every object upstream,
  and steps the belt only when the working area is empty, until the belt
  is clear or the attempt budget runs out.

Everything is driven by one JSON-overridable config dict and a single
seed; two runs with the same pair produce byte-identical outputs.
"""

import copy
import json
import os
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import sim as S
from .calib import CalibModel, calibration_grid, run_calibration
from .features import FeatureConfig, featurize, featurize_batch
from .forest import predict_scores, train_forest
from .handles import GripperModel, generate_candidates
from .heightmap import GridSpec, occlusion_fill, project
from .policy import EveryNAttempts, EveryTSeconds, post_verify, \
    select_handle
from .storage import AttemptLog, LoggedAttempt, save_model_bundle, \
    write_attempts_csv, write_blocks_csv


class ConfigError(ValueError):
    pass


DEFAULT_CONFIG = {
    "seed": None,
    "attempts": 600,
    "schedule": {"type": "every_n", "n": 100},
    "sim": {},                   # SimConfig field overrides
    "grid": {"cell_size": 0.005},
    "gripper": {},               # GripperModel field overrides
    "features": {},              # FeatureConfig field overrides
    "handles": {"angle_count": 8, "sample_count": 200,
                "splat_radius": 1},
    "forest": {"n_trees": 100, "min_leaf": 2, "n_jobs": 1},
    "policy": {"score_threshold": 0.1, "explore_prob": 0.05,
               "closed_eps": 0.005},
    "spawn": {"count": 25},
    "clean": {"object_count": 80, "budget": 240,
              "warmup_attempts": 300, "max_hold_cycles": 20,
              "entry_margin": 0.08, "advance_after_failures": 6,
              "spacing": 0.1, "cluster_prob": 0.2},
}


def fast_preset():
    """Config overrides sized so a 600-attempt run finishes in seconds:
    smaller area and camera, coarser grid, fewer angles and samples, a
    lighter forest.  The method itself is unchanged."""
    return {
        "sim": {
            "area_len": 0.9, "area_dep": 0.6,
            "belt_start": -0.5, "belt_end": 1.1,
            "cam_res": (112, 144), "cam_f": 170.0,
        },
        "grid": {"cell_size": 0.0075},
        "handles": {"angle_count": 4, "sample_count": 24},
        "forest": {"n_trees": 25},
        "spawn": {"count": 18},
    }


def merge_config(base, override):
    out = copy.deepcopy(base)
    for key, val in override.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = merge_config(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def load_config(path: Optional[str], overrides: Optional[dict] = None):
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if path is not None:
        try:
            with open(path) as f:
                user = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"config {path} is not valid JSON: {e}")
        if not isinstance(user, dict):
            raise ConfigError(f"config {path} must be a JSON object")
        cfg = merge_config(cfg, user)
    if overrides:
        cfg = merge_config(cfg, overrides)
    validate_config(cfg)
    return cfg


def validate_config(cfg):
    if cfg.get("seed") is None:
        raise ConfigError("seed is mandatory")
    if not isinstance(cfg["seed"], int) or cfg["seed"] < 0:
        raise ConfigError(f"seed must be a non-negative integer, "
                          f"got {cfg['seed']!r}")
    if cfg["attempts"] < 1:
        raise ConfigError("attempts must be >= 1")
    sched = cfg["schedule"]
    if sched.get("type") not in ("every_n", "every_t"):
        raise ConfigError(f"unknown schedule type {sched.get('type')!r}")
    if sched["type"] == "every_n" and sched.get("n", 0) < 1:
        raise ConfigError("schedule.n must be >= 1")
    if sched["type"] == "every_t" and sched.get("t", 0) <= 0:
        raise ConfigError("schedule.t must be > 0")
    if cfg["grid"]["cell_size"] <= 0:
        raise ConfigError("grid.cell_size must be > 0")
    for key in ("angle_count", "sample_count"):
        if cfg["handles"][key] < 1:
            raise ConfigError(f"handles.{key} must be >= 1")


def _build(cfg):
    sim_cfg = S.SimConfig(**cfg["sim"])
    cell = cfg["grid"]["cell_size"]
    grid = GridSpec(
        x0=0.0, y0=0.0, cell_size=cell,
        nx=cfg["grid"].get("nx", round(sim_cfg.area_len / cell)),
        ny=cfg["grid"].get("ny", round(sim_cfg.area_dep / cell)))
    gripper = GripperModel(**cfg["gripper"])
    feat = FeatureConfig(**cfg["features"])
    return sim_cfg, grid, gripper, feat


def _make_schedule(cfg):
    sched = cfg["schedule"]
    if sched["type"] == "every_n":
        return EveryNAttempts(sched.get("n", 100))
    return EveryTSeconds(sched.get("t", 10.0))


def _calibrate(scene: S.BeltScene):
    cfg = scene.config
    grid_pts = calibration_grid(
        (0.1 * cfg.area_len, 0.9 * cfg.area_len),
        (0.1 * cfg.area_dep, 0.9 * cfg.area_dep),
        (0.05, 0.35))
    model, _ = run_calibration(
        lambda p: S.render_calibration_target(scene, p), grid_pts)
    return model


@dataclass
class PickCycleState:
    """Everything the per-cycle step reads and mutates."""
    scene: S.BeltScene
    calib: CalibModel
    grid: GridSpec
    gripper: GripperModel
    feat: FeatureConfig
    policy_rng: np.random.Generator
    angle_count: int
    sample_count: int
    splat_radius: int
    score_threshold: float
    explore_prob: float
    closed_eps: float
    forest: object = None
    model_version: int = 0
    records: list = None

    def __post_init__(self):
        if self.records is None:
            self.records = []


def _pick_cycle(st: PickCycleState,
                x_window=None) -> Optional[LoggedAttempt]:
    """One sensing/decision/execution pass.  Returns the logged attempt,
    or None when the cycle was skipped (no candidates, or the 5% rule
    declined a low-scoring best).  ``x_window`` restricts proposals to
    an x band, used by the clean protocol to leave objects still
    entering the sensed area alone."""
    scene = st.scene
    img = S.render_depth(scene)
    hm = project(img, st.calib, st.grid, splat_radius=st.splat_radius)
    occlusion_fill(hm, scene.config.camera_pose[0])
    cands = generate_candidates(
        hm, st.gripper, st.policy_rng,
        angle_count=st.angle_count, sample_count=st.sample_count)
    if x_window is not None:
        cands = [h for h in cands
                 if x_window[0] <= h.x <= x_window[1]]
    scores = None
    feats32 = None
    if st.forest is not None and cands:
        F = featurize_batch(hm, cands, st.feat)
        # features are logged as float32; score the same quantized
        # values so the stored score matches the stored vector
        feats32 = F.astype(np.float32)
        scores = predict_scores(st.forest, feats32.astype(np.float64))
    sel = select_handle(scores, len(cands), st.policy_rng,
                        threshold=st.score_threshold,
                        explore_prob=st.explore_prob)
    if sel is None:
        return None
    handle = cands[sel]
    if feats32 is None:
        fvec = featurize(hm, handle, st.feat).astype(np.float32)
        score = -1.0
    else:
        # copy: records outlive the cycle, and a view would pin the
        # whole candidate batch per attempt
        fvec = feats32[sel].copy()
        score = float(scores[sel])
    outcome = S.execute_pick(scene, handle, st.gripper)
    ok = post_verify(outcome.trace, closed_eps=st.closed_eps)
    return LoggedAttempt(
        attempt_index=len(st.records) + 1, sim_time=scene.sim_time,
        model_version=st.model_version, label=int(ok),
        verdict=outcome.verdict, x=handle.x, y=handle.y,
        angle=handle.angle, opening=handle.opening, extra=handle.extra,
        z=handle.z, weight=handle.weight, score=score, features=fvec)


def _retrain(st: PickCycleState, forest_cfg, seed):
    X = np.stack([r.features for r in st.records]).astype(np.float64)
    y = np.array([r.label for r in st.records], dtype=np.uint8)
    st.forest = train_forest(
        X, y, n_trees=forest_cfg["n_trees"],
        min_leaf=forest_cfg["min_leaf"], seed=seed,
        n_jobs=forest_cfg["n_jobs"])
    st.model_version += 1


@dataclass
class ExperimentResult:
    out_dir: str
    records: list
    model_paths: list
    scene: S.BeltScene


def _model_path(out_dir, version):
    return os.path.join(out_dir, f"model_v{version:03d}.zrpk")


def run_learning_experiment(cfg, out_dir) -> ExperimentResult:
    validate_config(cfg)
    os.makedirs(out_dir, exist_ok=True)
    sim_cfg, grid, gripper, feat = _build(cfg)
    seed = cfg["seed"]
    schedule = _make_schedule(cfg)

    scene = S.make_scene(sim_cfg, [seed, 0])
    calib = _calibrate(scene)
    S.spawn_objects(scene, cfg["spawn"]["count"],
                    (sim_cfg.belt_start, sim_cfg.area_len))

    st = PickCycleState(
        scene=scene, calib=calib, grid=grid, gripper=gripper, feat=feat,
        policy_rng=np.random.default_rng([seed, 1]),
        angle_count=cfg["handles"]["angle_count"],
        sample_count=cfg["handles"]["sample_count"],
        splat_radius=cfg["handles"]["splat_radius"],
        score_threshold=cfg["policy"]["score_threshold"],
        explore_prob=cfg["policy"]["explore_prob"],
        closed_eps=cfg["policy"]["closed_eps"])

    log = AttemptLog(os.path.join(out_dir, "attempts.zrat"))
    model_paths = []
    last_attempt = 0
    last_time = scene.sim_time
    budget = cfg["attempts"]

    while len(st.records) < budget:
        rec = _pick_cycle(st)
        if rec is not None:
            st.records.append(rec)
            log.append(rec)
        if st.records and schedule.due(len(st.records), scene.sim_time,
                                       last_attempt, last_time):
            _retrain(st, cfg["forest"], seed)
            path = _model_path(out_dir, st.model_version)
            save_model_bundle(path, calib, feat, st.forest,
                              st.model_version)
            model_paths.append(path)
            last_attempt = len(st.records)
            last_time = scene.sim_time
        S.advance(scene)

    write_attempts_csv(os.path.join(out_dir, "attempts.csv"),
                       st.records)
    write_blocks_csv(os.path.join(out_dir, "blocks.csv"), st.records)
    return ExperimentResult(out_dir, st.records, model_paths, scene)


def run_clean_experiment(cfg, out_dir,
                         model_path: Optional[str] = None):
    """Pick the belt clean: all objects start queued upstream, the belt
    steps only while the working area is empty, picked objects leave for
    good.  Returns the report dict (also written as clean_report.json).
    """
    validate_config(cfg)
    os.makedirs(out_dir, exist_ok=True)
    clean_cfg = cfg["clean"]
    n_objects = clean_cfg["object_count"]

    if model_path is None and clean_cfg["warmup_attempts"] > 0:
        warm_cfg = merge_config(cfg, {
            "attempts": clean_cfg["warmup_attempts"]})
        warm = run_learning_experiment(
            warm_cfg, os.path.join(out_dir, "warmup"))
        if not warm.model_paths:
            raise ConfigError(
                "warmup produced no model; raise clean.warmup_attempts "
                "past the first schedule firing")
        model_path = warm.model_paths[-1]

    # objects queue upstream; stretch the belt to hold them all at the
    # configured spacing (the material is laid out, not piled solid)
    upstream = max(1.0, n_objects * clean_cfg["spacing"] + 0.5)
    sim_over = dict(cfg["sim"])
    sim_over.update(loop_enabled=False,
                    belt_start=-upstream,
                    belt_end=cfg["sim"].get("belt_end", 1.5) + 0.5,
                    cluster_prob=clean_cfg["cluster_prob"])
    sim_cfg = S.SimConfig(**sim_over)
    _, grid, gripper, _ = _build(cfg)
    seed = cfg["seed"]

    scene = S.make_scene(sim_cfg, [seed, 3])
    if model_path is not None:
        from .storage import load_model_bundle
        calib, feat, forest, version = load_model_bundle(model_path)
    else:
        calib = _calibrate(scene)
        feat = FeatureConfig(**cfg["features"])
        forest, version = None, 0
    S.spawn_objects(scene, n_objects, (sim_cfg.belt_start, -0.05))

    st = PickCycleState(
        scene=scene, calib=calib, grid=grid, gripper=gripper, feat=feat,
        policy_rng=np.random.default_rng([seed, 4]),
        angle_count=cfg["handles"]["angle_count"],
        sample_count=cfg["handles"]["sample_count"],
        splat_radius=cfg["handles"]["splat_radius"],
        score_threshold=cfg["policy"]["score_threshold"],
        explore_prob=cfg["policy"]["explore_prob"],
        closed_eps=cfg["policy"]["closed_eps"],
        forest=forest, model_version=version)

    log = AttemptLog(os.path.join(out_dir, "attempts.zrat"))
    budget = clean_cfg["budget"]
    max_hold = clean_cfg["max_hold_cycles"]
    max_failures = clean_cfg["advance_after_failures"]
    entry_margin = clean_cfg["entry_margin"]
    hold_streak = 0
    failure_streak = 0

    def on_belt():
        return any(o.x <= sim_cfg.belt_end for o in scene.objects)

    while len(st.records) < budget and on_belt():
        if not S.objects_in_area(scene, entry_margin):
            S.advance(scene)
            hold_streak = 0
            failure_streak = 0
            continue
        rec = _pick_cycle(st, x_window=(entry_margin,
                                        sim_cfg.area_len))
        if rec is None:
            # model refused everything in view; idle a cycle, and if
            # that keeps happening let the belt move on
            hold_streak += 1
            scene.sim_time += sim_cfg.cycle_time
            if hold_streak > max_hold:
                S.advance(scene)
                hold_streak = 0
            continue
        hold_streak = 0
        st.records.append(rec)
        log.append(rec)
        scene.sim_time += sim_cfg.cycle_time
        if rec.label:
            failure_streak = 0
        else:
            # a human operator nudges the belt a short distance when
            # the robot keeps whiffing at the same spot
            failure_streak += 1
            if failure_streak >= max_failures:
                S.advance(scene, sim_cfg.cycle_time / 4.0)
                failure_streak = 0

    write_attempts_csv(os.path.join(out_dir, "attempts.csv"),
                       st.records)
    write_blocks_csv(os.path.join(out_dir, "blocks.csv"), st.records)
    report = {
        "object_count": n_objects,
        "deposited": scene.deposited,
        "lost_off_belt": scene.lost,
        "left_on_belt": len(scene.objects),
        "attempts_used": len(st.records),
        "model_path": model_path,
    }
    with open(os.path.join(out_dir, "clean_report.json"), "w") as f:
        json.dump(report, f, indent=2, sort_keys=True)
        f.write("\n")
    return report


def run_calibration_only(cfg, out_dir):
    """Fit the camera-to-gantry map against the simulated target and
    write it as JSON for inspection."""
    validate_config(cfg)
    os.makedirs(out_dir, exist_ok=True)
    sim_cfg, _, _, _ = _build(cfg)
    scene = S.make_scene(sim_cfg, [cfg["seed"], 0])
    model = _calibrate(scene)
    out = {
        "matrix": model.matrix.tolist(),
        "residual_rmse_m": model.residual_rmse,
    }
    path = os.path.join(out_dir, "calib.json")
    with open(path, "w") as f:
        json.dump(out, f, indent=2)
        f.write("\n")
    return model, path


def summarize_run(out_dir):
    """Digest an experiment directory into a report dict."""
    from .storage import read_attempts_csv
    attempts_path = os.path.join(out_dir, "attempts.csv")
    if not os.path.exists(attempts_path):
        raise FileNotFoundError(f"no attempts.csv under {out_dir}")
    rows = read_attempts_csv(attempts_path)
    n = len(rows)
    wins = sum(r["outcome"] == "success" for r in rows)
    blocks = []
    for b in range(n // 25):
        chunk = rows[b * 25:(b + 1) * 25]
        blocks.append(sum(r["outcome"] == "success"
                          for r in chunk) / 25)
    versions = sorted({int(r["model_version"]) for r in rows})
    report = {
        "attempts": n,
        "successes": wins,
        "success_rate": wins / n if n else 0.0,
        "block_fractions": blocks,
        "first_block": blocks[0] if blocks else None,
        "last_block": blocks[-1] if blocks else None,
        "model_versions_seen": versions,
    }
    clean_path = os.path.join(out_dir, "clean_report.json")
    if os.path.exists(clean_path):
        with open(clean_path) as f:
            report["clean"] = json.load(f)
    return report
