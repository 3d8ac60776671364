"""Loss terms for loop-closure-aware fine-tuning, with analytic gradients.

Total objective: s_f * flow + s_p * pose + w_loop * loop. The loop term
averages Huber-robustified SE(3) residual norms between predicted poses and
the ground-truth poses of their verified loop partners. All gradients are
taken with respect to a right-multiplied twist perturbation of each predicted
pose: predictions[i] <- predictions[i] * exp(eps).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .liegroup import (
    AngleNearPi,
    Pose,
    Twist,
    log_se3,
    se3_left_jacobian_inverse,
    se3_right_jacobian_inverse,
    adjoint,
    twist_norm,
)

log = logging.getLogger(__name__)


class LengthMismatch(ValueError):
    pass


class NoVisibleLandmarks(ValueError):
    pass


@dataclass(frozen=True)
class LossWeights:
    s_p: float = 10.0
    s_f: float = 0.1
    w_loop: float = 0.0

    def __post_init__(self):
        if self.s_p < 0 or self.s_f < 0 or self.w_loop < 0:
            raise ValueError("loss weights must be nonnegative")


@dataclass(frozen=True)
class HuberParam:
    delta: float = 1.0

    def __post_init__(self):
        if self.delta <= 0:
            raise ValueError("delta must be > 0")


@dataclass(frozen=True)
class LoopConstraint:
    """Predicted frame index paired with the ground-truth pose of its loop partner."""
    pred_index: int
    target_pose: Pose


@dataclass(frozen=True)
class LossBreakdown:
    pose: float
    flow: float
    loop: float
    total: float
    loop_empty: bool = False


def huber(x: float, delta: HuberParam = HuberParam()) -> float:
    d = delta.delta
    ax = abs(x)
    if ax <= d:
        return 0.5 * x * x
    return d * ax - 0.5 * d * d


def huber_grad(x: float, delta: HuberParam = HuberParam()) -> float:
    d = delta.delta
    if abs(x) <= d:
        return x
    return d * math.copysign(1.0, x)


def _huber_scale(n: float, delta: HuberParam) -> float:
    """huber_grad(n)/n with the n -> 0 limit (quadratic branch slope 1)."""
    if n == 0.0:
        return 1.0
    return huber_grad(n, delta) / n


def _loop_residual(pred: Pose, target: Pose):
    """Residual twist xi = log(pred^-1 target); clamped to norm pi near the cut."""
    rel = pred.inverse().compose(target)
    try:
        xi = log_se3(rel)
        return xi, False
    except AngleNearPi:
        log.warning("loop residual rotation near pi; clamping to norm pi")
        return None, True


def loop_loss(predictions, constraints, delta: HuberParam = HuberParam()):
    """Mean Huber SE(3) residual over loop constraints.

    Returns (value, empty): empty=True flags a window with no constraints,
    letting the trainer drop the loop term that step instead of erroring.
    """
    if not constraints:
        return 0.0, True
    total = 0.0
    for c in constraints:
        xi, clamped = _loop_residual(predictions[c.pred_index], c.target_pose)
        n = math.pi if clamped else twist_norm(xi)
        total += huber(n, delta)
    return total / len(constraints), False


def loop_loss_grad(predictions, constraints, delta: HuberParam = HuberParam()):
    """Per-pose right-tangent gradients of loop_loss; zero for unconstrained frames."""
    _, grads, empty = loop_loss_and_grad(predictions, constraints, delta)
    return grads, empty


def loop_loss_and_grad(predictions, constraints, delta: HuberParam = HuberParam()):
    """(value, per-pose gradients, empty) in one pass over the constraints."""
    grads = [np.zeros(6) for _ in predictions]
    if not constraints:
        return 0.0, grads, True
    n_c = len(constraints)
    total = 0.0
    for c in constraints:
        xi, clamped = _loop_residual(predictions[c.pred_index], c.target_pose)
        if clamped:
            total += huber(math.pi, delta)
            continue  # clamped residual treated as constant
        n = twist_norm(xi)
        total += huber(n, delta)
        if n == 0.0:
            continue
        scale = _huber_scale(n, delta) / n_c
        v = xi.as_vector()
        # d xi = -Jl_inv(xi) eps  for pred <- pred*exp(eps)
        grads[c.pred_index] += -scale * (se3_left_jacobian_inverse(xi).T @ v)
    return total / n_c, grads, False


def _relative(a: Pose, b: Pose) -> Pose:
    return a.inverse().compose(b)


def pose_targets(ground_truth):
    """Precomputed per-pair ground-truth relative motions (and their adjoints);
    pass to pose_loss/pose_loss_and_grad to avoid recomputing them per step."""
    return [
        (_relative(ground_truth[k], ground_truth[k + 1]),
         adjoint(_relative(ground_truth[k + 1], ground_truth[k])).T)
        for k in range(len(ground_truth) - 1)
    ]


def pose_loss(predictions, ground_truth, delta: HuberParam = HuberParam(),
              targets=None) -> float:
    """Mean Huber residual of consecutive relative motions vs ground truth."""
    if len(predictions) != len(ground_truth):
        raise LengthMismatch(
            f"{len(predictions)} predictions vs {len(ground_truth)} ground truth")
    if len(predictions) < 2:
        raise LengthMismatch("need at least 2 frames")
    if targets is None:
        targets = pose_targets(ground_truth)
    total = 0.0
    for k in range(len(predictions) - 1):
        rel_pred = _relative(predictions[k], predictions[k + 1])
        xi = log_se3(rel_pred.inverse().compose(targets[k][0]))
        total += huber(twist_norm(xi), delta)
    return total / (len(predictions) - 1)


def pose_loss_grad(predictions, ground_truth, delta: HuberParam = HuberParam(),
                   targets=None):
    """Right-tangent gradients of pose_loss for every predicted pose."""
    _, grads = pose_loss_and_grad(predictions, ground_truth, delta, targets)
    return grads


def pose_loss_and_grad(predictions, ground_truth, delta: HuberParam = HuberParam(),
                       targets=None):
    """(value, per-pose right-tangent gradients) in one pass over the pairs."""
    if len(predictions) != len(ground_truth):
        raise LengthMismatch(
            f"{len(predictions)} predictions vs {len(ground_truth)} ground truth")
    if len(predictions) < 2:
        raise LengthMismatch("need at least 2 frames")
    if targets is None:
        targets = pose_targets(ground_truth)
    n_pairs = len(predictions) - 1
    total = 0.0
    grads = [np.zeros(6) for _ in predictions]
    for k in range(n_pairs):
        rel_gt, ad_t = targets[k]
        rel_pred = _relative(predictions[k], predictions[k + 1])
        xi = log_se3(rel_pred.inverse().compose(rel_gt))
        n = twist_norm(xi)
        total += huber(n, delta)
        if n == 0.0:
            continue
        scale = _huber_scale(n, delta) / n_pairs
        v = xi.as_vector()
        jr_inv = se3_right_jacobian_inverse(xi)
        jl_inv = se3_left_jacobian_inverse(xi)
        # residual xi = log(rel_pred^-1 rel_gt) under right perturbations of
        # predictions k (via Ad of rel_gt^-1) and k+1
        grads[k] += scale * (ad_t @ (jr_inv.T @ v))
        grads[k + 1] += -scale * (jl_inv.T @ v)
    return total / n_pairs, grads


def flow_loss(predictions, scene, targets=None) -> float:
    """Surrogate flow supervision: mean squared difference between predicted and
    ground-truth pixel flow of scene landmarks over consecutive frame pairs."""
    value, _ = _flow_loss_impl(predictions, scene, want_grad=False, targets=targets)
    return value


def flow_loss_grad(predictions, scene, targets=None):
    _, grads = _flow_loss_impl(predictions, scene, want_grad=True, targets=targets)
    return grads


def flow_loss_and_grad(predictions, scene, targets=None):
    return _flow_loss_impl(predictions, scene, want_grad=True, targets=targets)


def flow_targets(scene, n_frames=None):
    """Per-pair ground-truth flow references: (y, ug) with y the covisible
    landmarks in the frame-k camera and ug their projection into frame k+1
    under the ground-truth relative motion. None for pairs with no overlap."""
    points = scene.landmark_positions
    n = len(scene.gt_poses) if n_frames is None else n_frames
    out = []
    for k in range(n - 1):
        idx = scene.covisible(k, k + 1)
        if idx.size == 0:
            out.append(None)
            continue
        gk = scene.gt_poses[k].inverse()
        y = points[idx] @ gk.rotation.matrix().T + gk.translation  # frame-k camera
        rel_gt = scene.gt_poses[k].inverse().compose(scene.gt_poses[k + 1]).inverse()
        yg = y @ rel_gt.rotation.matrix().T + rel_gt.translation
        ug = _project_unit(yg)
        out.append((y, ug))
    return out


def _flow_loss_impl(predictions, scene, want_grad, targets=None):
    """Relative-motion flow surrogate on the normalized image plane.

    Covisible landmarks are expressed in the ground-truth frame-k camera, then
    reprojected into frame k+1 under the predicted vs. ground-truth relative
    motion. Flow only constrains relative motion, so this stays well-posed no
    matter how far the absolute predictions have drifted.
    """
    if targets is None:
        targets = flow_targets(scene, len(predictions))
    total = 0.0
    count = 0
    grads = [np.zeros(6) for _ in predictions] if want_grad else None
    pair_terms = []
    for k in range(len(predictions) - 1):
        if targets[k] is None:
            continue
        y, ug = targets[k]
        rel_pred = predictions[k].inverse().compose(predictions[k + 1]).inverse()
        yp = y @ rel_pred.rotation.matrix().T + rel_pred.translation
        up = _project_unit(yp)
        diff = up - ug  # (m, 2)
        total += float(np.sum(diff * diff))
        count += y.shape[0]
        if want_grad:
            pair_terms.append((k, diff, y, yp, rel_pred.rotation.matrix()))
    if count == 0:
        raise NoVisibleLandmarks("no landmark visible in any consecutive pair")
    value = total / count
    if want_grad:
        for k, diff, y, yp, r_inv in pair_terms:
            # w_m = (d proj / d y)^T diff_m, per point, for the unit projection
            z = yp[:, 2]
            w = np.stack([
                diff[:, 0] / z,
                diff[:, 1] / z,
                -(diff[:, 0] * yp[:, 0] + diff[:, 1] * yp[:, 1]) / (z * z),
            ], axis=1)
            # pred_{k+1} <- pred_{k+1} exp(eps): dy'/deps = [-I | skew(y')],
            # so w^T dy' sums to (-w, w x y') per point
            grads[k + 1] += (2.0 / count) * np.concatenate(
                (-w.sum(axis=0), np.cross(w, yp).sum(axis=0)))
            # pred_k <- pred_k exp(eps): dy'/deps = R_inv [I | -skew(y)],
            # so with u = R_inv^T w the sum is (u, y x u) per point
            u = w @ r_inv
            grads[k] += (2.0 / count) * np.concatenate(
                (u.sum(axis=0), np.cross(y, u).sum(axis=0)))
    return value, grads


def _project_unit(y):
    """Normalized pinhole projection (unit focal length, centered)."""
    return y[:, :2] / y[:, 2, None]


def total_loss(pose: float, flow: float, loop: float,
               weights: LossWeights, loop_empty: bool = False) -> LossBreakdown:
    """Weighted combination; reduces exactly to the baseline at w_loop = 0."""
    w_loop = 0.0 if loop_empty else weights.w_loop
    total = weights.s_f * flow + weights.s_p * pose + w_loop * loop
    return LossBreakdown(pose=pose, flow=flow, loop=loop, total=total,
                         loop_empty=loop_empty)
