"""Offline loop-closure pipeline: VLAD global description, windowed candidate
retrieval, epipolar geometric verification, and database construction.

Stages per frame (processed in sequence order):
  1. aggregate local features into a VLAD descriptor over a k-means codebook;
  2. retrieve past frames within a bounded window whose descriptor cosine
     similarity clears the threshold (default 0.75);
  3. verify candidates with mutual-NN matching + ratio test and an eight-point
     RANSAC fundamental-matrix fit, accepting pairs with enough Sampson
     inliers (default 30).
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, asdict

import numpy as np

log = logging.getLogger(__name__)


class TooFewFeatures(ValueError):
    pass


class EmptyFrame(ValueError):
    pass


@dataclass(frozen=True)
class LoopPair:
    scene: str
    frame_i: int
    frame_j: int
    similarity: float
    inliers: int


@dataclass(frozen=True)
class DbParams:
    clusters: int = 32
    threshold: float = 0.75
    window: int = 2000
    exclusion: int = 100
    min_inliers: int = 30
    ratio: float = 0.8
    ransac_iters: int = 2000
    sampson_thresh: float = 1.0   # pixels
    max_candidates: int = 5       # retrieval candidates verified per query
    seed: int = 0


@dataclass
class LoopDatabase:
    params: DbParams
    pairs: list = field(default_factory=list)

    def sorted_pairs(self):
        return sorted(self.pairs, key=lambda p: (p.scene, p.frame_i, p.frame_j))

    def pairs_for_scene(self, scene_id):
        return [p for p in self.sorted_pairs() if p.scene == scene_id]

    def scene_counts(self):
        counts = {}
        for p in self.pairs:
            counts[p.scene] = counts.get(p.scene, 0) + 1
        return counts

    def save(self, path):
        """JSON-lines: one provenance object, then one object per pair."""
        with open(path, "w") as fh:
            fh.write(json.dumps({"provenance": asdict(self.params)},
                                sort_keys=True) + "\n")
            for p in self.sorted_pairs():
                fh.write(json.dumps(asdict(p), sort_keys=True) + "\n")

    @staticmethod
    def load(path):
        with open(path) as fh:
            lines = [json.loads(l) for l in fh if l.strip()]
        if not lines or "provenance" not in lines[0]:
            raise ValueError("missing provenance header")
        db = LoopDatabase(DbParams(**lines[0]["provenance"]))
        db.pairs = [LoopPair(**d) for d in lines[1:]]
        return db


# --- codebook & VLAD -------------------------------------------------------

def build_codebook(descriptors, k=32, seed=0, max_iter=100, tol=1e-6):
    """Lloyd's k-means with k-means++ seeding; deterministic given seed."""
    descriptors = np.asarray(descriptors, dtype=float)
    n = descriptors.shape[0]
    if n < k:
        raise TooFewFeatures(f"{n} features < {k} clusters")
    rng = np.random.default_rng(seed)

    centers = np.empty((k, descriptors.shape[1]))
    centers[0] = descriptors[rng.integers(n)]
    d2 = np.sum((descriptors - centers[0]) ** 2, axis=1)
    for i in range(1, k):
        probs = d2 / d2.sum() if d2.sum() > 0 else np.full(n, 1.0 / n)
        centers[i] = descriptors[rng.choice(n, p=probs)]
        d2 = np.minimum(d2, np.sum((descriptors - centers[i]) ** 2, axis=1))

    for _ in range(max_iter):
        dist = _sq_dists(descriptors, centers)
        assign = np.argmin(dist, axis=1)
        new_centers = centers.copy()
        for i in range(k):
            members = descriptors[assign == i]
            if members.size:
                new_centers[i] = members.mean(axis=0)
        shift = np.max(np.linalg.norm(new_centers - centers, axis=1))
        centers = new_centers
        if shift < tol:
            break
    return centers


def _sq_dists(x, centers):
    return (np.sum(x * x, axis=1)[:, None]
            - 2.0 * x @ centers.T
            + np.sum(centers * centers, axis=1)[None, :])


def vlad_descriptor(descriptors, codebook):
    """Classic VLAD: hard-assign, accumulate residuals, intra- then L2-normalize.

    Returns (vector, valid); an all-zero aggregate is flagged invalid.
    """
    descriptors = np.asarray(descriptors, dtype=float)
    if descriptors.shape[0] == 0:
        raise EmptyFrame("frame has no features")
    k, d = codebook.shape
    assign = np.argmin(_sq_dists(descriptors, codebook), axis=1)
    v = np.zeros((k, d))
    np.add.at(v, assign, descriptors - codebook[assign])
    norms = np.linalg.norm(v, axis=1, keepdims=True)
    nz = norms[:, 0] > 0
    v[nz] /= norms[nz]
    flat = v.ravel()
    total = np.linalg.norm(flat)
    if total == 0.0:
        return flat, False
    return flat / total, True


def cosine_similarity(a, b):
    return float(a @ b)


def retrieve_candidates(descriptors, query_index, threshold=0.75,
                        window=2000, exclusion=100):
    """Past frames f with query-window <= f < query-exclusion and cosine >= threshold.

    `descriptors` maps frame index -> (vector, valid); invalid frames skipped.
    Sorted by similarity descending, ties by smaller frame index.
    """
    q_vec, q_valid = descriptors[query_index]
    if not q_valid:
        return []
    lo = max(query_index - window, 0)
    hi = query_index - exclusion
    out = []
    for f in range(lo, hi):
        vec, valid = descriptors[f]
        if not valid:
            continue
        sim = cosine_similarity(q_vec, vec)
        if sim >= threshold:
            out.append((f, sim))
    out.sort(key=lambda t: (-t[1], t[0]))
    return out


# --- geometric verification ------------------------------------------------

def match_features(desc_a, desc_b, ratio=0.8):
    """Mutual nearest neighbours passing Lowe's ratio test in both directions."""
    d2 = _sq_dists(np.asarray(desc_a, float), np.asarray(desc_b, float))
    nn_ab = np.argmin(d2, axis=1)
    nn_ba = np.argmin(d2, axis=0)
    matches = []
    for i, j in enumerate(nn_ab):
        if nn_ba[j] != i:
            continue
        if d2.shape[1] >= 2:
            row = np.partition(d2[i], 1)
            if row[1] > 0 and row[0] > ratio * ratio * row[1]:
                continue
        matches.append((i, int(j)))
    return matches


def _eight_point(x1, x2):
    """Normalized eight-point fundamental matrix from >= 8 correspondences."""
    def normalize(pts):
        mean = pts.mean(axis=0)
        scale = np.sqrt(2.0) / max(np.mean(np.linalg.norm(pts - mean, axis=1)), 1e-12)
        t = np.array([[scale, 0, -scale * mean[0]],
                      [0, scale, -scale * mean[1]],
                      [0, 0, 1.0]])
        homog = np.column_stack([pts, np.ones(len(pts))])
        return homog @ t.T, t

    p1, t1 = normalize(x1)
    p2, t2 = normalize(x2)
    a = np.column_stack([
        p2[:, 0] * p1[:, 0], p2[:, 0] * p1[:, 1], p2[:, 0],
        p2[:, 1] * p1[:, 0], p2[:, 1] * p1[:, 1], p2[:, 1],
        p1[:, 0], p1[:, 1], np.ones(len(p1)),
    ])
    _, _, vt = np.linalg.svd(a)
    f = vt[-1].reshape(3, 3)
    u, s, vt = np.linalg.svd(f)
    f = u @ np.diag([s[0], s[1], 0.0]) @ vt   # enforce rank 2
    return t2.T @ f @ t1


def _sampson_distances(f, x1, x2):
    h1 = np.column_stack([x1, np.ones(len(x1))])
    h2 = np.column_stack([x2, np.ones(len(x2))])
    fx1 = h1 @ f.T
    ftx2 = h2 @ f
    num = np.sum(h2 * fx1, axis=1) ** 2
    den = fx1[:, 0] ** 2 + fx1[:, 1] ** 2 + ftx2[:, 0] ** 2 + ftx2[:, 1] ** 2
    return num / np.maximum(den, 1e-18)


def geometric_verify(positions_a, descriptors_a, positions_b, descriptors_b,
                     min_inliers=30, ratio=0.8, ransac_iters=2000,
                     sampson_thresh=1.0, seed=0):
    """RANSAC epipolar check between two frames.

    Returns (inlier_count, accepted). Adaptive iteration count with 0.999
    confidence; deterministic given seed.
    """
    if len(positions_a) < 8 or len(positions_b) < 8:
        return 0, False
    matches = match_features(descriptors_a, descriptors_b, ratio)
    if len(matches) < 8:
        return len(matches) if len(matches) >= min_inliers else 0, False
    ia = np.array([m[0] for m in matches])
    ib = np.array([m[1] for m in matches])
    x1 = np.asarray(positions_a, float)[ia]
    x2 = np.asarray(positions_b, float)[ib]

    rng = np.random.default_rng(seed)
    n = len(matches)
    thresh2 = sampson_thresh * sampson_thresh
    best_mask = None
    best_count = 0
    needed = ransac_iters
    it = 0
    while it < min(needed, ransac_iters):
        idx = rng.choice(n, size=8, replace=False)
        try:
            f = _eight_point(x1[idx], x2[idx])
        except np.linalg.LinAlgError:
            it += 1
            continue
        mask = _sampson_distances(f, x1, x2) < thresh2
        count = int(mask.sum())
        if count > best_count:
            best_count = count
            best_mask = mask
            w = count / n
            if w >= 1.0 - 1e-12:
                break
            denom = np.log(max(1.0 - w ** 8, 1e-12))
            needed = int(np.ceil(np.log(1e-3) / denom))
        it += 1

    if best_mask is not None and best_count >= 8:
        # refit on the consensus set
        f = _eight_point(x1[best_mask], x2[best_mask])
        mask = _sampson_distances(f, x1, x2) < thresh2
        if int(mask.sum()) > best_count:
            best_count = int(mask.sum())
    return best_count, best_count >= min_inliers


# --- feature interchange files --------------------------------------------

def write_features(path, frames):
    """`frames` is a list of (positions (m,2), descriptors (m,D)) per frame."""
    dim = None
    for _, desc in frames:
        if len(desc):
            dim = np.asarray(desc).shape[1]
            break
    if dim is None:
        raise EmptyFrame("no features in any frame")
    with open(path, "w") as fh:
        fh.write(f"D {dim}\n")
        for index, (pos, desc) in enumerate(frames):
            fh.write(f"frame {index} {len(pos)}\n")
            for p, d in zip(np.asarray(pos, float), np.asarray(desc, float)):
                vals = list(p) + list(d)
                fh.write(" ".join(f"{v:.9g}" for v in vals) + "\n")


def read_features(path):
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 2 or header[0] != "D":
            raise ValueError("bad feature file header")
        dim = int(header[1])
        frames = []
        for line in fh:
            tokens = line.split()
            if not tokens:
                continue
            if tokens[0] == "frame":
                count = int(tokens[2])
                rows = np.array(
                    [[float(v) for v in fh.readline().split()] for _ in range(count)]
                ).reshape(count, 2 + dim)
                frames.append((rows[:, :2], rows[:, 2:]))
    return frames


def scene_frames(scene):
    """Adapter: per-frame (positions, descriptors) from a SyntheticScene."""
    return [(o.positions, o.descriptors) for o in scene.observations]


# --- database construction -------------------------------------------------

def build_database(scenes, params: DbParams = DbParams()) -> LoopDatabase:
    """Run the full pipeline over a corpus.

    `scenes` is a list of (scene_id, frames) with frames per scene_frames(),
    or SyntheticScene objects. Per-frame failures are skipped and counted,
    never aborting the corpus.
    """
    prepared = []
    for s in scenes:
        if hasattr(s, "observations"):
            prepared.append((s.scene_id, scene_frames(s)))
        else:
            prepared.append(s)

    all_desc = np.concatenate(
        [desc for _, frames in prepared for _, desc in frames if len(desc)])
    # deterministic subsample keeps k-means tractable on large corpora
    if all_desc.shape[0] > 50000:
        stride = int(np.ceil(all_desc.shape[0] / 50000))
        all_desc = all_desc[::stride]
    codebook = build_codebook(all_desc, k=params.clusters, seed=params.seed)

    db = LoopDatabase(params=params)
    skipped = 0
    for scene_id, frames in prepared:
        descriptors = []
        for pos, desc in frames:
            try:
                descriptors.append(vlad_descriptor(desc, codebook))
            except EmptyFrame:
                descriptors.append((None, False))
                skipped += 1
        seen = set()
        for q in range(len(frames)):
            if not descriptors[q][1]:
                continue
            candidates = retrieve_candidates(
                descriptors, q, threshold=params.threshold,
                window=params.window, exclusion=params.exclusion)
            # verify the top candidates and keep only the strongest verified
            # one per query frame: the exact revisit maximizes covisibility,
            # so the inlier count separates it from its temporal neighbours
            best = None
            for f, sim in candidates[:params.max_candidates]:
                if (f, q) in seen:
                    continue
                inliers, accepted = geometric_verify(
                    frames[f][0], frames[f][1], frames[q][0], frames[q][1],
                    min_inliers=params.min_inliers, ratio=params.ratio,
                    ransac_iters=params.ransac_iters,
                    sampson_thresh=params.sampson_thresh,
                    seed=params.seed + 7919 * q + f)
                if accepted and (best is None or (inliers, sim) > (best.inliers, best.similarity)):
                    best = LoopPair(scene_id, f, q, sim, inliers)
            if best is not None:
                seen.add((best.frame_i, best.frame_j))
                db.pairs.append(best)
    if skipped:
        log.warning("skipped %d empty frames during database build", skipped)
    db.pairs = db.sorted_pairs()
    return db
