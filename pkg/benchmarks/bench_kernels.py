#!/usr/bin/env python3
"""Time the hot kernels on the compiled and the pure-numpy path.

Each workload runs in two fresh subprocesses, one with numba enabled
and one with ``BELTPICK_NO_NUMBA=1``, so the kernel selection (made
once at import time) is honest.  Prints the best-of-``--repeat`` time
per workload and the speedup.

    python3 benchmarks/bench_kernels.py
"""

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np

SRC = os.path.join(os.path.dirname(os.path.abspath(__file__)),
                   os.pardir, "src")


def _workloads():
    """name -> zero-argument callable, with setup done up front."""
    from beltpick import sim as S
    from beltpick.forest import predict_scores, train_forest
    from beltpick.handles import GripperModel, generate_candidates
    from beltpick.harness import _calibrate
    from beltpick.heightmap import GridSpec, occlusion_fill, project
    from beltpick.wavelets import transform2_magnitudes

    scene = S.make_scene(S.SimConfig(), [0, 0])
    S.spawn_objects(scene, 25, (scene.config.belt_start,
                                scene.config.area_len))
    calib = _calibrate(scene)
    grid = GridSpec(0.0, 0.0, 0.005, 240, 160)
    img = S.render_depth(scene)
    hm = project(img, calib, grid)
    occlusion_fill(hm, scene.config.camera_pose[0])
    gripper = GripperModel()

    rng = np.random.default_rng(0)
    stack = np.ascontiguousarray(rng.normal(size=(72, 40, 20)))
    X = rng.uniform(size=(400, 5102))
    y = (X[:, 40] > 0.5).astype(np.uint8)
    model = train_forest(X, y, n_trees=10, min_leaf=2, seed=0)
    Xs = np.ascontiguousarray(X[:200])

    return {
        "render_depth (240x320)":
            lambda: S.render_depth(scene),
        "heightmap project+fill (240x160)":
            lambda: occlusion_fill(project(img, calib, grid),
                                   scene.config.camera_pose[0]),
        "handle candidates (8 angles, 200 draws)":
            lambda: generate_candidates(
                hm, gripper, np.random.default_rng(1),
                angle_count=8, sample_count=200),
        "wavelet magnitudes (72 slices)":
            lambda: transform2_magnitudes(stack),
        "forest train (400 x 5102, 10 trees)":
            lambda: train_forest(X, y, n_trees=10, min_leaf=2, seed=0),
        "forest score (200 x 5102)":
            lambda: predict_scores(model, Xs),
    }


def run_worker(repeat):
    from beltpick.accel import HAS_NUMBA
    times = {}
    for name, fn in _workloads().items():
        fn()                      # warm up: compile, load caches
        best = min(_timed(fn) for _ in range(repeat))
        times[name] = best
    json.dump({"has_numba": HAS_NUMBA, "times": times}, sys.stdout)


def _timed(fn):
    t0 = time.perf_counter()
    fn()
    return time.perf_counter() - t0


def _spawn(disable_numba, repeat):
    env = dict(os.environ)
    env["PYTHONPATH"] = os.pathsep.join(
        [SRC] + ([env["PYTHONPATH"]] if env.get("PYTHONPATH") else []))
    if disable_numba:
        env["BELTPICK_NO_NUMBA"] = "1"
    else:
        env.pop("BELTPICK_NO_NUMBA", None)
    out = subprocess.run(
        [sys.executable, os.path.abspath(__file__),
         "--worker", "--repeat", str(repeat)],
        env=env, capture_output=True, text=True, check=True)
    return json.loads(out.stdout)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5,
                    help="timed repetitions per workload (best wins)")
    ap.add_argument("--worker", action="store_true",
                    help=argparse.SUPPRESS)
    args = ap.parse_args()

    if args.worker:
        run_worker(args.repeat)
        return

    fast = _spawn(False, args.repeat)
    slow = _spawn(True, args.repeat)
    if not fast["has_numba"]:
        print("numba unavailable; both columns run the numpy path")

    width = max(map(len, fast["times"]))
    print(f"{'workload':<{width}}  {'numba':>9}  {'numpy':>9}  speedup")
    for name, tf in fast["times"].items():
        ts = slow["times"][name]
        print(f"{name:<{width}}  {tf * 1e3:>7.1f}ms  {ts * 1e3:>7.1f}ms"
              f"  {ts / tf:>6.1f}x")


if __name__ == "__main__":
    main()
