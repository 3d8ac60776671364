"""SO(3)/SE(3) group operations on unit quaternions, exp/log maps and TUM I/O.

Conventions:
    - Quaternions are stored (w, x, y, z), unit norm, canonical sign w >= 0.
    - Twists are 6-vectors split as (rho, omega): translational part first,
      rotational part second. rho in meters, omega in radians.
    - Poses map points from the local (camera/body) frame to the world frame:
      x_world = R @ x_local + t.
"""

from __future__ import annotations

import math

import numpy as np

SMALL_ANGLE = 1e-6
NEAR_PI = 1e-6


class AngleNearPi(ValueError):
    """Rotation angle within NEAR_PI of pi: the log map is non-unique there."""


class MalformedLine(ValueError):
    """Trajectory line with wrong field count or a non-numeric token."""


def _skew(v):
    return np.array([
        [0.0, -v[2], v[1]],
        [v[2], 0.0, -v[0]],
        [-v[1], v[0], 0.0],
    ])


class Rotation:
    """Unit quaternion rotation; renormalized and sign-canonicalized on construction."""

    __slots__ = ("q", "_mat")

    def __init__(self, q):
        q = np.asarray(q, dtype=float)
        n = math.sqrt(float(q @ q))
        if n == 0.0:
            raise ValueError("zero quaternion")
        q = q / n
        if q[0] < 0.0:
            q = -q
        self.q = q
        self._mat = None

    @staticmethod
    def identity():
        return Rotation(np.array([1.0, 0.0, 0.0, 0.0]))

    @staticmethod
    def from_axis_angle(omega):
        omega = np.asarray(omega, dtype=float)
        theta = math.sqrt(float(omega @ omega))
        if theta < SMALL_ANGLE:
            # sin(t/2)/t = 1/2 - t^2/48 + O(t^4)
            s = 0.5 - theta * theta / 48.0
            return Rotation(np.concatenate(([math.cos(theta / 2.0)], s * omega)))
        axis = omega / theta
        return Rotation(np.concatenate(
            ([math.cos(theta / 2.0)], math.sin(theta / 2.0) * axis)))

    def matrix(self):
        if self._mat is None:
            w, x, y, z = self.q
            self._mat = np.array([
                [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
                [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
                [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
            ])
        return self._mat

    def apply(self, v):
        return self.matrix() @ np.asarray(v, dtype=float)

    def compose(self, other):
        w1, x1, y1, z1 = self.q
        w2, x2, y2, z2 = other.q
        return Rotation(np.array([
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        ]))

    def inverse(self):
        w, x, y, z = self.q
        return Rotation(np.array([w, -x, -y, -z]))

    def angle(self):
        """Rotation angle in [0, pi]."""
        v = math.sqrt(float(self.q[1:] @ self.q[1:]))
        return 2.0 * math.atan2(v, self.q[0])

    def axis_angle(self):
        """omega = angle * axis; raises AngleNearPi close to the cut locus."""
        theta = self.angle()
        if theta > math.pi - NEAR_PI:
            raise AngleNearPi(f"rotation angle {theta} within {NEAR_PI} of pi")
        v = self.q[1:]
        s = math.sqrt(float(v @ v))  # sin(theta/2)
        if theta < SMALL_ANGLE:
            # theta / sin(theta/2) = 2 + theta^2/12 + O(theta^4)
            return (2.0 + theta * theta / 12.0) * v
        return (theta / s) * v

    def __repr__(self):
        return f"Rotation(q={self.q!r})"


class Pose:
    """Rigid transform in SE(3): rotation plus translation (meters)."""

    __slots__ = ("rotation", "translation")

    def __init__(self, rotation, translation):
        self.rotation = rotation
        self.translation = np.asarray(translation, dtype=float)

    @staticmethod
    def identity():
        return Pose(Rotation.identity(), np.zeros(3))

    def compose(self, other):
        return Pose(
            self.rotation.compose(other.rotation),
            self.rotation.apply(other.translation) + self.translation,
        )

    def inverse(self):
        rinv = self.rotation.inverse()
        return Pose(rinv, -rinv.apply(self.translation))

    def apply(self, v):
        return self.rotation.apply(v) + self.translation

    def __repr__(self):
        return f"Pose(rotation={self.rotation!r}, translation={self.translation!r})"


class Twist:
    """Element of se(3): rho (m) translational, omega (rad) rotational."""

    __slots__ = ("rho", "omega")

    def __init__(self, rho, omega):
        self.rho = np.asarray(rho, dtype=float)
        self.omega = np.asarray(omega, dtype=float)

    @staticmethod
    def zero():
        return Twist(np.zeros(3), np.zeros(3))

    @staticmethod
    def from_vector(v):
        v = np.asarray(v, dtype=float)
        return Twist(v[:3], v[3:])

    def as_vector(self):
        return np.concatenate((self.rho, self.omega))

    def __repr__(self):
        return f"Twist(rho={self.rho!r}, omega={self.omega!r})"


def compose(a: Pose, b: Pose) -> Pose:
    return a.compose(b)


def inverse(p: Pose) -> Pose:
    return p.inverse()


def _exp_coefficients(theta):
    """(A, B) with V = I + A*skew(w) + B*skew(w)^2 for the SE(3) exponential."""
    if theta < SMALL_ANGLE:
        t2 = theta * theta
        return 0.5 - t2 / 24.0, 1.0 / 6.0 - t2 / 120.0
    t2 = theta * theta
    return (1.0 - math.cos(theta)) / t2, (theta - math.sin(theta)) / (t2 * theta)


def exp_se3(xi: Twist) -> Pose:
    """Closed-form Rodrigues exponential se(3) -> SE(3)."""
    omega = xi.omega
    theta = math.sqrt(float(omega @ omega))
    rot = Rotation.from_axis_angle(omega)
    a, b = _exp_coefficients(theta)
    wx = _skew(omega)
    v_mat = np.eye(3) + a * wx + b * (wx @ wx)
    return Pose(rot, v_mat @ xi.rho)


def log_se3(p: Pose) -> Twist:
    """Log map SE(3) -> se(3); raises AngleNearPi near the cut locus."""
    omega = p.rotation.axis_angle()
    theta = math.sqrt(float(omega @ omega))
    wx = _skew(omega)
    if theta < SMALL_ANGLE:
        # V^-1 = I - skew/2 + skew^2/12 + O(theta^2)
        c = 1.0 / 12.0 + theta * theta / 720.0
    else:
        c = (1.0 / (theta * theta)
             - (1.0 + math.cos(theta)) / (2.0 * theta * math.sin(theta)))
    v_inv = np.eye(3) - 0.5 * wx + c * (wx @ wx)
    return Twist(v_inv @ p.translation, omega)


def twist_norm(xi: Twist) -> float:
    """Euclidean norm of the stacked 6-vector (mixed meter/radian magnitude)."""
    v = xi.as_vector()
    return math.sqrt(float(v @ v))


def adjoint(p: Pose) -> np.ndarray:
    """6x6 adjoint of a pose for (rho, omega)-ordered twists: exp(Ad_T xi) = T exp(xi) T^-1."""
    r = p.rotation.matrix()
    ad = np.zeros((6, 6))
    ad[:3, :3] = r
    ad[:3, 3:] = _skew(p.translation) @ r
    ad[3:, 3:] = r
    return ad


def _so3_left_jacobian_inverse(omega):
    theta = math.sqrt(float(omega @ omega))
    wx = _skew(omega)
    if theta < SMALL_ANGLE:
        c = 1.0 / 12.0 + theta * theta / 720.0
    else:
        c = (1.0 / (theta * theta)
             - (1.0 + math.cos(theta)) / (2.0 * theta * math.sin(theta)))
    return np.eye(3) - 0.5 * wx + c * (wx @ wx)


def _se3_q_matrix(rho, omega):
    """Translational cross-block of the SE(3) left Jacobian (Barfoot-style)."""
    theta = math.sqrt(float(omega @ omega))
    px = _skew(rho)
    wx = _skew(omega)
    if theta < SMALL_ANGLE:
        t2 = theta * theta
        c2 = 1.0 / 6.0 - t2 / 120.0          # (t - sin t)/t^3
        c3 = 1.0 / 24.0 - t2 / 720.0         # (1 - t^2/2 - cos t)/t^4
        c4 = -0.5 * (c3 - 3.0 * (1.0 / 120.0 - t2 / 5040.0))
    else:
        t2 = theta * theta
        t3 = t2 * theta
        c2 = (theta - math.sin(theta)) / t3
        c3 = (1.0 - 0.5 * t2 - math.cos(theta)) / (t2 * t2)
        c4 = -0.5 * (c3 - 3.0 * (theta - math.sin(theta) - t3 / 6.0) / (t3 * t2))
    wp = wx @ px
    pw = px @ wx
    wpw = wp @ wx
    return (0.5 * px
            + c2 * (wp + pw + wpw)
            - c3 * (wx @ wp + pw @ wx - 3.0 * wpw)
            + c4 * (wpw @ wx + wx @ wpw))


def se3_left_jacobian_inverse(xi: Twist) -> np.ndarray:
    """Inverse left Jacobian of SE(3): log(exp(eps) exp(xi)) ~ xi + Jl_inv(xi) eps."""
    j_inv = _so3_left_jacobian_inverse(xi.omega)
    q = _se3_q_matrix(xi.rho, xi.omega)
    out = np.zeros((6, 6))
    out[:3, :3] = j_inv
    out[3:, 3:] = j_inv
    out[:3, 3:] = -j_inv @ q @ j_inv
    return out


def se3_right_jacobian_inverse(xi: Twist) -> np.ndarray:
    """Inverse right Jacobian: log(exp(xi) exp(eps)) ~ xi + Jr_inv(xi) eps."""
    return se3_left_jacobian_inverse(Twist(-xi.rho, -xi.omega))


# --- TUM trajectory interchange -------------------------------------------

def pose_from_quaternion_line(line: str, lineno: int = 0):
    """Parse one TUM line `t tx ty tz qx qy qz qw` into (timestamp, Pose)."""
    tokens = line.split()
    if len(tokens) != 8:
        raise MalformedLine(f"line {lineno}: expected 8 fields, got {len(tokens)}")
    try:
        vals = [float(tok) for tok in tokens]
    except ValueError as exc:
        raise MalformedLine(f"line {lineno}: non-numeric token: {exc}") from None
    t = vals[0]
    tx, ty, tz, qx, qy, qz, qw = vals[1:]
    n = math.sqrt(qx * qx + qy * qy + qz * qz + qw * qw)
    if abs(n - 1.0) > 1e-3:
        raise MalformedLine(f"line {lineno}: quaternion norm {n} off unit by > 1e-3")
    return t, Pose(Rotation(np.array([qw, qx, qy, qz])), np.array([tx, ty, tz]))


def pose_to_quaternion_line(t: float, p: Pose) -> str:
    """Serialize (timestamp, Pose) back to a canonical TUM line (9 sig digits)."""
    w, x, y, z = p.rotation.q
    tx, ty, tz = p.translation
    fields = (t, tx, ty, tz, x, y, z, w)
    return " ".join(f"{v:.9g}" for v in fields)


def read_tum(path):
    """Read a TUM trajectory file; returns (timestamps, poses), skipping # comments."""
    timestamps, poses = [], []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            t, pose = pose_from_quaternion_line(line, lineno)
            if timestamps and t <= timestamps[-1]:
                raise MalformedLine(
                    f"line {lineno}: timestamp {t} not strictly increasing")
            timestamps.append(t)
            poses.append(pose)
    return timestamps, poses


def write_tum(path, timestamps, poses):
    with open(path, "w") as fh:
        for t, p in zip(timestamps, poses):
            fh.write(pose_to_quaternion_line(t, p) + "\n")
