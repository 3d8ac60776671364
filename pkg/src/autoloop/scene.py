"""Synthetic scenes with planted revisits: ground-truth trajectory, 3-D
landmarks with descriptors, per-frame noisy observations, and a drifted
odometry baseline for fine-tuning experiments.

Frames at a planted revisit (i, j) reuse the exact pose of frame i, so the
frames co-observe the same landmarks and the loop objective is well-posed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .liegroup import Pose, Rotation, Twist, exp_se3


class InvalidSpec(ValueError):
    pass


@dataclass(frozen=True)
class PinholeCamera:
    fx: float = 320.0
    fy: float = 320.0
    cx: float = 320.0
    cy: float = 240.0
    width: int = 640
    height: int = 480
    z_min: float = 1.0    # depth floor; keeps projections stable under pose noise
    z_max: float = 8.0    # visibility horizon; keeps observations local


@dataclass(frozen=True)
class SceneSpec:
    scene_id: str
    n_frames: int = 150
    trajectory: str = "arc"          # arc | line | loop (closed circle, two laps)
    step: float = 1.0                # meters per frame
    landmarks_per_frame: int = 20
    landmark_depth: tuple = (3.0, 6.0)
    revisits: tuple = ()             # ((i, j), ...) with j > i
    descriptor_dim: int = 8
    vocabulary_size: int = 32     # landmark descriptors cluster around words
    word_spread: float = 0.4      # per-landmark offset magnitude from its word
    descriptor_noise: float = 0.05
    pixel_noise: float = 0.5
    seed: int = 0

    @staticmethod
    def from_dict(d):
        try:
            d = dict(d)
            d["revisits"] = tuple(tuple(p) for p in d.get("revisits", ()))
            if "landmark_depth" in d:
                d["landmark_depth"] = tuple(d["landmark_depth"])
            spec = SceneSpec(**d)
        except TypeError as exc:
            raise InvalidSpec(str(exc)) from None
        spec.validate()
        return spec

    def validate(self):
        if self.n_frames < 2:
            raise InvalidSpec("n_frames must be >= 2")
        if self.landmarks_per_frame < 1:
            raise InvalidSpec("need at least one landmark per frame")
        if self.trajectory not in ("arc", "line", "loop"):
            raise InvalidSpec(f"unknown trajectory shape {self.trajectory!r}")
        for i, j in self.revisits:
            if not (0 <= i < j < self.n_frames):
                raise InvalidSpec(f"bad revisit pair ({i}, {j})")


@dataclass
class FrameObservation:
    landmark_ids: np.ndarray     # (m,)
    positions: np.ndarray        # (m, 2) pixels
    descriptors: np.ndarray      # (m, D) unit rows


@dataclass
class SyntheticScene:
    spec: SceneSpec
    camera: PinholeCamera
    timestamps: list
    gt_poses: list
    landmark_positions: np.ndarray    # (M, 3) world
    landmark_descriptors: np.ndarray  # (M, D) unit rows
    observations: list                # FrameObservation per frame
    revisits: list                    # [(i, j), ...]
    _covis: dict = field(default_factory=dict)

    @property
    def scene_id(self):
        return self.spec.scene_id

    @property
    def n_frames(self):
        return len(self.gt_poses)

    def visible_ids(self, k):
        return self.observations[k].landmark_ids

    def covisible(self, a, b):
        """Landmark indices visible (under ground truth) in both frames."""
        key = (a, b)
        if key not in self._covis:
            ids = np.intersect1d(self.visible_ids(a), self.visible_ids(b))
            self._covis[key] = ids
        return self._covis[key]


def _separated_words(k, dim, rng, candidates=4096, sweeps=50):
    """k unit vectors with large pairwise separation: greedy max-min over a
    random candidate pool, then a few repulsion sweeps."""
    pool = rng.normal(size=(candidates, dim))
    pool /= np.linalg.norm(pool, axis=1, keepdims=True)
    chosen = [0]
    d2 = np.sum((pool - pool[0]) ** 2, axis=1)
    for _ in range(1, k):
        nxt = int(np.argmax(d2))
        chosen.append(nxt)
        d2 = np.minimum(d2, np.sum((pool - pool[nxt]) ** 2, axis=1))
    words = pool[chosen]
    for _ in range(sweeps):
        gram = words @ words.T
        np.fill_diagonal(gram, -1.0)
        nearest = np.argmax(gram, axis=1)
        words = words - 0.1 * words[nearest]
        words /= np.linalg.norm(words, axis=1, keepdims=True)
    return words


def _trajectory_poses(spec: SceneSpec):
    """Poses along an arc or line; camera z looks along the direction of travel."""
    poses = []
    if spec.trajectory == "line":
        curvature = 0.0
    elif spec.trajectory == "loop":
        # closed circle traversed twice: the second half revisits the first
        curvature = (4.0 * math.pi) / (spec.n_frames * spec.step)
    else:
        # gentle arc: full path subtends ~90 degrees
        curvature = (math.pi / 2.0) / (spec.n_frames * spec.step)
    heading = 0.0
    position = np.zeros(3)
    for _ in range(spec.n_frames):
        # camera-to-world: z (forward) along heading in the xy plane, y down -> world -z
        forward = np.array([math.cos(heading), math.sin(heading), 0.0])
        left = np.array([-math.sin(heading), math.cos(heading), 0.0])
        up = np.array([0.0, 0.0, 1.0])
        r_mat = np.stack([-left, -up, forward], axis=1)  # columns: cam x, y, z in world
        poses.append(Pose(_rotation_from_matrix(r_mat), position.copy()))
        position = position + spec.step * forward
        heading += curvature * spec.step
    return poses


def _rotation_from_matrix(m):
    """Rotation matrix -> unit quaternion (Shepperd's method, stable branch pick)."""
    t = np.trace(m)
    if t > 0:
        s = math.sqrt(t + 1.0) * 2.0
        q = np.array([0.25 * s,
                      (m[2, 1] - m[1, 2]) / s,
                      (m[0, 2] - m[2, 0]) / s,
                      (m[1, 0] - m[0, 1]) / s])
    else:
        i = int(np.argmax(np.diag(m)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = math.sqrt(max(1.0 + m[i, i] - m[j, j] - m[k, k], 0.0)) * 2.0
        q = np.empty(4)
        q[0] = (m[k, j] - m[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (m[j, i] + m[i, j]) / s
        q[1 + k] = (m[k, i] + m[i, k]) / s
    return Rotation(q)


def _project_points(pose, points, cam):
    inv = pose.inverse()
    y = points @ inv.rotation.matrix().T + inv.translation
    z = y[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = cam.fx * y[:, 0] / z + cam.cx
        v = cam.fy * y[:, 1] / z + cam.cy
    vis = ((z > cam.z_min) & (z < cam.z_max)
           & (u >= 0) & (u < cam.width) & (v >= 0) & (v < cam.height))
    return np.stack([u, v], axis=1), vis


def generate_scene(spec: SceneSpec, camera: PinholeCamera = PinholeCamera()) -> SyntheticScene:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    poses = _trajectory_poses(spec)
    for i, j in spec.revisits:
        poses[j] = poses[i]

    # landmarks planted in front of each (pre-revisit) anchor pose
    anchors = [k for k in range(spec.n_frames)
               if k not in {j for _, j in spec.revisits}]
    positions = []
    lo, hi = spec.landmark_depth
    for k in anchors:
        local = np.stack([
            rng.uniform(-2.0, 2.0, spec.landmarks_per_frame),
            rng.uniform(-1.5, 1.5, spec.landmarks_per_frame),
            rng.uniform(lo, hi, spec.landmarks_per_frame),
        ], axis=1)
        r = poses[k].rotation.matrix()
        positions.append(local @ r.T + poses[k].translation)
    positions = np.concatenate(positions, axis=0)

    # descriptors scatter (fixed offset magnitude) around well-separated unit
    # "words" so that hard assignment in VLAD is stable under observation noise
    words = _separated_words(spec.vocabulary_size, spec.descriptor_dim, rng)
    word_of = rng.integers(spec.vocabulary_size, size=positions.shape[0])
    offsets = rng.normal(size=(positions.shape[0], spec.descriptor_dim))
    offsets *= spec.word_spread / np.linalg.norm(offsets, axis=1, keepdims=True)
    descriptors = words[word_of] + offsets
    descriptors /= np.linalg.norm(descriptors, axis=1, keepdims=True)

    observations = []
    for k in range(spec.n_frames):
        uv, vis = _project_points(poses[k], positions, camera)
        ids = np.nonzero(vis)[0]
        pix = uv[ids] + rng.normal(scale=spec.pixel_noise, size=(ids.size, 2))
        desc = descriptors[ids] + rng.normal(
            scale=spec.descriptor_noise, size=(ids.size, spec.descriptor_dim))
        norms = np.linalg.norm(desc, axis=1, keepdims=True)
        norms[norms == 0] = 1.0
        desc = desc / norms
        observations.append(FrameObservation(ids, pix, desc))

    timestamps = [round(0.1 * k, 6) for k in range(spec.n_frames)]
    return SyntheticScene(
        spec=spec, camera=camera, timestamps=timestamps, gt_poses=poses,
        landmark_positions=positions, landmark_descriptors=descriptors,
        observations=observations, revisits=[tuple(p) for p in spec.revisits])


def drifted_trajectory(scene: SyntheticScene, drift_sigma: float = 0.01,
                       rot_sigma: float = 0.002, seed: int = 0):
    """Odometry baseline: GT relative motions corrupted by a per-step random
    twist, then re-chained. Error accumulates into low-frequency drift."""
    rng = np.random.default_rng(seed)
    poses = [scene.gt_poses[0]]
    for k in range(1, scene.n_frames):
        rel = scene.gt_poses[k - 1].inverse().compose(scene.gt_poses[k])
        noise = exp_se3(Twist(rng.normal(scale=drift_sigma, size=3),
                              rng.normal(scale=rot_sigma, size=3)))
        poses.append(poses[-1].compose(rel.compose(noise)))
    return poses


def load_scene_specs(path):
    """Scene spec file: JSON object {"scenes": [spec, ...]} or a single spec."""
    with open(path) as fh:
        data = json.load(fh)
    if isinstance(data, dict) and "scenes" in data:
        return [SceneSpec.from_dict(d) for d in data["scenes"]]
    return [SceneSpec.from_dict(data)]
