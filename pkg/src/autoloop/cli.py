"""Command-line pipeline: scene generation, database build, fine-tuning,
evaluation, and the pre-computation cost model.

Every command writes a run manifest (resolved config, input digests, seeds,
output paths) into the output directory before doing any work; `--seed` is the
only entropy source, so reruns are byte-identical.

Exit codes: 0 success, 1 user/input error, 2 internal invariant violation.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import sys

import numpy as np

from . import __version__
from . import evaluation as ev
from . import loopdb as ldb
from . import losses
from . import scene as sc
from . import trainer as tr
from .liegroup import MalformedLine, write_tum

log = logging.getLogger("autoloop")


class UserError(Exception):
    """Input or argument problem attributable to the caller (exit code 1)."""


def _setup_logging():
    level = {"debug": logging.DEBUG, "info": logging.INFO}.get(
        os.environ.get("AUTOLOOP_LOG", "").lower(), logging.WARNING)
    logging.basicConfig(level=level,
                        format="%(levelname)s %(name)s: %(message)s")


def _digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(out_dir, command, config, inputs, outputs):
    os.makedirs(out_dir, exist_ok=True)
    manifest = {
        "tool": "autoloop",
        "version": __version__,
        "command": command,
        "config": config,
        "inputs": {p: _digest(p) for p in inputs},
        "outputs": sorted(outputs),
    }
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return path


# --- gen-scenes -------------------------------------------------------------

def cmd_gen_scenes(args):
    if not os.path.exists(args.spec):
        raise UserError(f"spec file not found: {args.spec}")
    specs = sc.load_scene_specs(args.spec)
    out_dir = args.out
    outputs = []
    for spec in specs:
        base = os.path.join(out_dir, spec.scene_id)
        outputs += [base + ".scene.json", base + ".gt.tum", base + ".features.txt"]
    _write_manifest(out_dir, "gen-scenes",
                    {"spec": args.spec, "scenes": [s.scene_id for s in specs]},
                    [args.spec], outputs)
    for spec in specs:
        scene = sc.generate_scene(spec)
        base = os.path.join(out_dir, spec.scene_id)
        with open(base + ".scene.json", "w") as fh:
            json.dump(dataclasses.asdict(spec), fh, sort_keys=True, indent=2)
            fh.write("\n")
        write_tum(base + ".gt.tum", scene.timestamps, scene.gt_poses)
        ldb.write_features(base + ".features.txt", ldb.scene_frames(scene))
        print(f"{spec.scene_id}: {scene.n_frames} frames, "
              f"{len(scene.revisits)} planted revisits")
    return 0


# --- build-db ---------------------------------------------------------------

def cmd_build_db(args):
    if not os.path.isdir(args.scenes):
        raise UserError(f"scene directory not found: {args.scenes}")
    feature_files = sorted(
        f for f in os.listdir(args.scenes) if f.endswith(".features.txt"))
    params = ldb.DbParams(
        clusters=args.clusters, threshold=args.threshold, window=args.window,
        exclusion=args.exclusion, min_inliers=args.min_inliers, seed=args.seed)
    out_dir = os.path.dirname(os.path.abspath(args.out)) or "."
    hist_path = os.path.join(out_dir, "pairs_per_scene.csv")
    _write_manifest(out_dir, "build-db", dataclasses.asdict(params),
                    [os.path.join(args.scenes, f) for f in feature_files],
                    [os.path.abspath(args.out), hist_path])
    corpus = []
    for fname in feature_files:
        scene_id = fname[:-len(".features.txt")]
        corpus.append((scene_id, ldb.read_features(os.path.join(args.scenes, fname))))
    if not corpus:
        log.warning("empty corpus: writing an empty database")
        db = ldb.LoopDatabase(params=params)
    else:
        db = ldb.build_database(corpus, params)
    db.save(args.out)
    counts = db.scene_counts()
    with open(hist_path, "w") as fh:
        fh.write("scene,pairs\n")
        for scene_id, _ in corpus:
            fh.write(f"{scene_id},{counts.get(scene_id, 0)}\n")
    print(f"{len(db.pairs)} pairs across {len(corpus)} scenes -> {args.out}")
    return 0


# --- train ------------------------------------------------------------------

def _trainer_config(args):
    base = {}
    if args.config:
        if not os.path.exists(args.config):
            raise UserError(f"config file not found: {args.config}")
        with open(args.config) as fh:
            base = json.load(fh)
    cfg = tr.TrainerConfig.from_dict(base) if base else tr.TrainerConfig()
    if args.steps is not None:
        cfg.total_steps = args.steps
    if args.cadence is not None:
        cfg.cadence = args.cadence
    if args.agent is not None:
        cfg.agent_enabled = args.agent == "on"
    if args.w_loop is not None:
        cfg.fixed_w_loop = args.w_loop
    if args.window is not None:
        cfg.window = args.window
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def cmd_train(args):
    for path in (args.scene, args.database):
        if not os.path.exists(path):
            raise UserError(f"input not found: {path}")
    cfg = _trainer_config(args)
    out_dir = args.out
    out_paths = {name: os.path.join(out_dir, name) for name in
                 ("trainlog.csv", "trajectory.tum", "agent.json", "config.json")}
    _write_manifest(out_dir, "train", cfg.to_dict(),
                    [args.scene, args.database], list(out_paths.values()))
    with open(args.scene) as fh:
        spec = sc.SceneSpec.from_dict(json.load(fh))
    scene = sc.generate_scene(spec)
    database = ldb.LoopDatabase.load(args.database)
    if not database.pairs_for_scene(scene.scene_id):
        raise UserError(
            f"database has no pairs for scene {scene.scene_id!r}; "
            "rebuild it over this scene or pick another scene")
    model, train_log, agent = tr.finetune(scene, database, cfg)
    with open(out_paths["config.json"], "w") as fh:
        json.dump(cfg.to_dict(), fh, sort_keys=True, indent=2)
        fh.write("\n")
    train_log.write_csv(out_paths["trainlog.csv"])
    write_tum(out_paths["trajectory.tum"], scene.timestamps, model.predictions())
    if agent is not None:
        agent.save(out_paths["agent.json"])
    print(f"{len(train_log.rows)} steps logged -> {out_paths['trainlog.csv']}")
    return 0


# --- eval -------------------------------------------------------------------

def _ate_from_files(est_path, gt_path, mode):
    est = ev.Trajectory.from_tum(est_path)
    gt = ev.Trajectory.from_tum(gt_path)
    return ev.ate(est, gt, mode=mode, associate_by="timestamp")


def cmd_eval(args):
    mode = {"rigid": "rigid", "sim": "similarity"}[args.align]
    if not os.path.exists(args.gt):
        raise UserError(f"ground-truth file not found: {args.gt}")
    if args.runs:
        if not os.path.isdir(args.runs):
            raise UserError(f"runs directory not found: {args.runs}")
        run_files = sorted(f for f in os.listdir(args.runs) if f.endswith(".tum"))
        if not run_files:
            raise UserError(f"no .tum trajectories in {args.runs}")
        reports = {
            f: _ate_from_files(os.path.join(args.runs, f), args.gt, mode)
            for f in run_files
        }
        ordered = sorted(reports.items(), key=lambda kv: (kv[1].rmse, kv[0]))
        med_name, med = ordered[(len(ordered) - 1) // 2]
        payload = {
            "median": med.to_dict(), "median_run": med_name,
            "runs": {name: rep.rmse for name, rep in reports.items()},
        }
    else:
        if not args.est or not os.path.exists(args.est):
            raise UserError(f"estimate file not found: {args.est}")
        payload = _ate_from_files(args.est, args.gt, mode).to_dict()
    text = json.dumps(payload, sort_keys=True, indent=2)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    print(text)
    return 0


# --- cost -------------------------------------------------------------------

def cmd_cost(args):
    if args.frames < 0 or args.scenes < 0:
        raise UserError("--frames and --scenes must be >= 0")
    total = args.scenes * ev.precompute_cost(args.frames)
    print(f"{args.scenes} scene(s) x {args.frames} frames -> {total:.6g} FLOPs")
    return 0


# --- argument parsing -------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(
        prog="autoloop",
        description="Loop-closure-aware fine-tuning pipeline (offline stages).")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-scenes", help="generate synthetic scenes from a spec")
    p.add_argument("spec", help="scene spec JSON file")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(fn=cmd_gen_scenes)

    p = sub.add_parser("build-db", help="build the loop-closure database")
    p.add_argument("scenes", help="directory with *.features.txt files")
    p.add_argument("--out", required=True, help="database output file")
    p.add_argument("--clusters", type=int, default=ldb.DbParams.clusters)
    p.add_argument("--threshold", type=float, default=ldb.DbParams.threshold)
    p.add_argument("--window", type=int, default=ldb.DbParams.window,
                   help="retrieval window (frames)")
    p.add_argument("--exclusion", type=int, default=ldb.DbParams.exclusion)
    p.add_argument("--min-inliers", type=int, default=ldb.DbParams.min_inliers)
    p.add_argument("--seed", type=int, default=ldb.DbParams.seed)
    p.set_defaults(fn=cmd_build_db)

    p = sub.add_parser("train", help="fine-tune on a scene with its database")
    p.add_argument("scene", help="scene spec JSON (*.scene.json)")
    p.add_argument("database", help="loop database file")
    p.add_argument("--out", required=True, help="run output directory")
    p.add_argument("--config", help="trainer config JSON")
    p.add_argument("--steps", type=int)
    p.add_argument("--cadence", type=int)
    p.add_argument("--agent", choices=("on", "off"))
    p.add_argument("--w-loop", type=float, dest="w_loop",
                   help="fixed loop weight when the agent is off")
    p.add_argument("--window", type=int, help="training window (frames)")
    p.add_argument("--seed", type=int)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="absolute trajectory error of a run")
    p.add_argument("est", nargs="?", help="estimated trajectory (TUM)")
    p.add_argument("gt", help="ground-truth trajectory (TUM)")
    p.add_argument("--align", choices=("rigid", "sim"), default="rigid")
    p.add_argument("--runs", help="directory of .tum runs; reports the median")
    p.add_argument("--out", help="write the report JSON here as well")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("cost", help="offline pre-computation FLOP estimate")
    p.add_argument("--frames", type=int, required=True)
    p.add_argument("--scenes", type=int, default=1)
    p.set_defaults(fn=cmd_cost)
    return parser


USER_ERRORS = (UserError, sc.InvalidSpec, MalformedLine,
               ev.AssociationTooSparse, tr.NoPairsInScene,
               FileNotFoundError, PermissionError, json.JSONDecodeError)


def main(argv=None):
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except USER_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - anything else is an internal bug
        log.exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
