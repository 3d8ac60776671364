"""Trajectory evaluation: ATE with rigid or similarity alignment, the
median-of-5 experiment protocol, and the offline pre-computation cost model.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

DESCRIPTOR_FLOPS_PER_FRAME = 1.2e6
FEATURE_FLOPS_PER_FRAME = 3.5e6
ASSOCIATION_TOLERANCE = 0.020  # seconds


class DegenerateGeometry(Warning):
    pass


class AssociationTooSparse(ValueError):
    pass


@dataclass
class Trajectory:
    timestamps: list
    poses: list

    def __post_init__(self):
        if len(self.timestamps) != len(self.poses):
            raise ValueError("timestamps and poses length mismatch")
        for a, b in zip(self.timestamps, self.timestamps[1:]):
            if b <= a:
                raise ValueError("timestamps must be strictly increasing")

    def positions(self):
        return np.array([p.translation for p in self.poses])

    @staticmethod
    def from_tum(path):
        from .liegroup import read_tum
        ts, poses = read_tum(path)
        return Trajectory(ts, poses)


@dataclass
class AteReport:
    rmse: float
    alignment: str                 # rigid | similarity
    scale: float
    per_frame_errors: list
    degenerate: bool = False

    def to_dict(self):
        return {
            "rmse": self.rmse,
            "alignment": self.alignment,
            "scale": self.scale,
            "per_frame_errors": list(self.per_frame_errors),
            "degenerate": self.degenerate,
        }

    def save_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True)

    def save_errors_csv(self, path):
        with open(path, "w") as fh:
            fh.write("frame,error\n")
            for k, e in enumerate(self.per_frame_errors):
                fh.write(f"{k},{e!r}\n")


def align(est_positions, gt_positions, mode="rigid"):
    """Closed-form least-squares point-set alignment (Umeyama).

    Minimizes sum ||gt_k - (s R est_k + t)||^2; s = 1 in rigid mode.
    Returns (R, t, s, degenerate).
    """
    if mode not in ("rigid", "similarity"):
        raise ValueError(f"unknown alignment mode {mode!r}")
    est = np.asarray(est_positions, float)
    gt = np.asarray(gt_positions, float)
    if est.shape != gt.shape or est.shape[0] < 3:
        raise ValueError("need two equal-length position sets with >= 3 points")
    mu_e = est.mean(axis=0)
    mu_g = gt.mean(axis=0)
    xe = est - mu_e
    xg = gt - mu_g
    cov = xg.T @ xe / est.shape[0]
    u, d, vt = np.linalg.svd(cov)
    s_mat = np.eye(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        s_mat[2, 2] = -1.0
    rot = u @ s_mat @ vt
    degenerate = bool(d[1] < 1e-12 * max(d[0], 1.0))  # collinear: rotation non-unique
    if degenerate:
        log.warning("degenerate geometry: alignment is not unique")
    if mode == "similarity":
        var_e = np.mean(np.sum(xe * xe, axis=1))
        scale = float(np.trace(np.diag(d) @ s_mat) / var_e)
    else:
        scale = 1.0
    t = mu_g - scale * rot @ mu_e
    return rot, t, scale, degenerate


def associate(est: Trajectory, gt: Trajectory, tolerance=ASSOCIATION_TOLERANCE):
    """Nearest-neighbour timestamp association; unmatched frames dropped."""
    gt_ts = np.asarray(gt.timestamps)
    pairs = []
    used = set()
    for i, t in enumerate(est.timestamps):
        j = int(np.argmin(np.abs(gt_ts - t)))
        if abs(gt_ts[j] - t) <= tolerance and j not in used:
            pairs.append((i, j))
            used.add(j)
    return pairs


def ate(est: Trajectory, gt: Trajectory, mode="rigid", associate_by="index") -> AteReport:
    """Absolute trajectory error after best-fit alignment of positions."""
    if associate_by == "index":
        if len(est.poses) != len(gt.poses):
            raise ValueError("index association needs equal-length trajectories")
        pairs = list(zip(range(len(est.poses)), range(len(gt.poses))))
    else:
        pairs = associate(est, gt)
    if len(pairs) < 3:
        raise AssociationTooSparse(f"only {len(pairs)} associated frames")
    p_est = np.array([est.poses[i].translation for i, _ in pairs])
    p_gt = np.array([gt.poses[j].translation for _, j in pairs])
    rot, t, s, degenerate = align(p_est, p_gt, mode)
    aligned = p_est @ (s * rot).T + t
    errors = np.linalg.norm(p_gt - aligned, axis=1)
    rmse = float(np.sqrt(np.mean(errors ** 2)))
    return AteReport(rmse=rmse, alignment=mode, scale=s,
                     per_frame_errors=errors.tolist(), degenerate=degenerate)


@dataclass
class ExperimentResult:
    median: AteReport
    median_seed: int
    runs: dict              # seed -> AteReport
    failures: dict          # seed -> error message


def run_experiment(run_fn, seed0=0, runs=5, min_complete=3):
    """Median-of-runs protocol: run_fn(seed) -> AteReport.

    Seeds are seed0..seed0+runs-1; the headline report is the run with the
    median RMSE (ties broken by lower seed). Requires `runs` odd; falls back
    to the median over completed runs when >= min_complete succeed.
    """
    if runs % 2 == 0:
        raise ValueError("runs must be odd")
    reports = {}
    failures = {}
    for seed in range(seed0, seed0 + runs):
        try:
            reports[seed] = run_fn(seed)
        except Exception as exc:  # noqa: BLE001 - per-run failures are data
            failures[seed] = str(exc)
            log.warning("run with seed %d failed: %s", seed, exc)
    if len(reports) < min_complete:
        raise RuntimeError(
            f"only {len(reports)} of {runs} runs completed (need {min_complete})")
    if failures:
        log.warning("median over %d completed runs (%d failed)",
                    len(reports), len(failures))
    ordered = sorted(reports.items(), key=lambda kv: (kv[1].rmse, kv[0]))
    med_seed, med_report = ordered[(len(ordered) - 1) // 2]
    return ExperimentResult(median=med_report, median_seed=med_seed,
                            runs=reports, failures=failures)


def precompute_cost(frames: int,
                    descriptor_flops: float = DESCRIPTOR_FLOPS_PER_FRAME,
                    feature_flops: float = FEATURE_FLOPS_PER_FRAME) -> float:
    """Offline pipeline FLOP count: frames x (descriptor + feature cost)."""
    if frames < 0:
        raise ValueError("frames must be >= 0")
    return frames * (descriptor_flops + feature_flops)
