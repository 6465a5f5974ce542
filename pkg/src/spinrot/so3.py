"""SO(3) and unit-quaternion algebra for the Bloch rotation model.

Generators follow the Bloch-equation convention

    dU/dt = (w_x * EPS_X + w_y * EPS_Y + delta * EPS_Z) U

so that ``[EPS_X, EPS_Y] = -EPS_Z`` (and cyclic).  With this convention
``exp(angle * (n . eps))`` is the rotation written ``(angle, n)`` throughout the
package, and its quaternion is ``(cos(angle/2), -sin(angle/2) * n)`` under the
usual Hamilton product / matrix mapping.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import atan2, cos, pi, sin, sqrt

import numpy as np

EPS_X = np.array([[0.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, -1.0, 0.0]])
EPS_Y = np.array([[0.0, 0.0, -1.0], [0.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
EPS_Z = np.array([[0.0, 1.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
_GENERATORS = {"x": EPS_X, "y": EPS_Y, "z": EPS_Z}

ORTHO_TOL = 1e-12


def so3_generator(axis_label: str) -> np.ndarray:
    """Return a copy of the generator for ``"x"``, ``"y"`` or ``"z"``."""
    try:
        return _GENERATORS[axis_label].copy()
    except KeyError:
        raise ValueError(f"axis_label must be one of x, y, z (got {axis_label!r})") from None


def hat(c) -> np.ndarray:
    """Map generator coefficients ``(c_x, c_y, c_z)`` to ``c . eps`` (skew-symmetric)."""
    cx, cy, cz = c
    return np.array([[0.0, cz, -cy], [-cz, 0.0, cx], [cy, -cx, 0.0]])


def quat_multiply(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Hamilton product ``p * q`` for quaternions stored as ``(w, x, y, z)``."""
    pw, px, py, pz = p
    qw, qx, qy, qz = q
    return np.array([
        pw * qw - px * qx - py * qy - pz * qz,
        pw * qx + px * qw + py * qz - pz * qy,
        pw * qy - px * qz + py * qw + pz * qx,
        pw * qz + px * qy - py * qx + pz * qw,
    ])


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def matrix_to_quat(m: np.ndarray) -> np.ndarray:
    """Shepperd's method; returns a unit quaternion with ``w >= 0``."""
    m = np.asarray(m, dtype=float)
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    diag = (tr, m[0, 0], m[1, 1], m[2, 2])
    i = int(np.argmax(diag))
    if i == 0:
        s = 2.0 * sqrt(max(1.0 + tr, 0.0))
        q = np.array([0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s])
    elif i == 1:
        s = 2.0 * sqrt(max(1.0 + m[0, 0] - m[1, 1] - m[2, 2], 0.0))
        q = np.array([(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s])
    elif i == 2:
        s = 2.0 * sqrt(max(1.0 - m[0, 0] + m[1, 1] - m[2, 2], 0.0))
        q = np.array([(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s])
    else:
        s = 2.0 * sqrt(max(1.0 - m[0, 0] - m[1, 1] + m[2, 2], 0.0))
        q = np.array([(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s])
    return _canonical(q)


def _canonical(q: np.ndarray) -> np.ndarray:
    q = q / np.linalg.norm(q)
    return -q if q[0] < 0 else q


@dataclass(frozen=True, eq=False)
class Rotation:
    """An SO(3) element kept as a matrix together with its unit quaternion.

    The quaternion is stored with ``w >= 0``; ``q`` and ``-q`` describe the same
    rotation so this makes comparisons deterministic.
    """

    matrix: np.ndarray
    quat: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.matrix.setflags(write=False)
        self.quat.setflags(write=False)

    @classmethod
    def identity(cls) -> "Rotation":
        return cls(np.eye(3), np.array([1.0, 0.0, 0.0, 0.0]))

    @classmethod
    def from_matrix(cls, m, check: bool = True) -> "Rotation":
        m = np.array(m, dtype=float)
        if m.shape != (3, 3):
            raise ValueError(f"expected a 3x3 matrix, got shape {m.shape}")
        if check:
            if np.max(np.abs(m @ m.T - np.eye(3))) > 1e-9 or abs(np.linalg.det(m) - 1.0) > 1e-9:
                raise ValueError("matrix is not a proper rotation")
        return cls(m, matrix_to_quat(m))

    @classmethod
    def from_quat(cls, q) -> "Rotation":
        q = _canonical(np.array(q, dtype=float))
        return cls(quat_to_matrix(q), q)

    @classmethod
    def from_axis_angle(cls, axis, angle: float) -> "Rotation":
        """Rotation ``exp(angle * (axis . eps))``."""
        n = np.asarray(axis, dtype=float)
        n = n / np.linalg.norm(n)
        return cls.from_quat(np.concatenate(([cos(angle / 2)], -sin(angle / 2) * n)))

    @property
    def T(self) -> "Rotation":
        """Inverse rotation."""
        q = self.quat
        return Rotation(self.matrix.T.copy(), np.array([q[0], -q[1], -q[2], -q[3]]))

    def trace(self) -> float:
        return float(np.trace(self.matrix))

    def to_axis_angle(self) -> "AxisAngle":
        return AxisAngle.from_quat(self.quat)

    def __matmul__(self, other: "Rotation") -> "Rotation":
        return compose(self, other)

    def allclose(self, other: "Rotation", atol: float = 1e-10) -> bool:
        return bool(np.max(np.abs(self.matrix - other.matrix)) <= atol)


@dataclass(frozen=True)
class AxisAngle:
    """Rotation ``exp(angle * (axis . eps))`` with ``angle`` in ``[0, 2*pi)``.

    ``degenerate`` is set when the rotation is the identity; the axis is then
    arbitrary (reported as ``(1, 0, 0)``).
    """

    axis: tuple[float, float, float]
    angle: float
    degenerate: bool = False

    @classmethod
    def from_quat(cls, q, atol: float = 1e-14) -> "AxisAngle":
        w = float(q[0])
        v = -np.asarray(q[1:], dtype=float)
        s = float(np.linalg.norm(v))
        if s <= atol:
            return cls((1.0, 0.0, 0.0), 0.0, True)
        angle = 2.0 * atan2(s, w)
        n = v / s
        if angle >= 2 * pi:
            angle -= 2 * pi
        return cls(tuple(float(c) for c in n), angle)

    def to_rotation(self) -> Rotation:
        if self.degenerate:
            return Rotation.identity()
        return Rotation.from_axis_angle(self.axis, self.angle)


def rot_exp(direction, duration: float) -> Rotation:
    """Closed-form ``exp(duration * (c . eps))`` for ``direction = (c_x, c_y, c_z)``."""
    c = np.asarray(direction, dtype=float)
    return Rotation(rodrigues(c, duration), _exp_quat(c, duration))


def _exp_quat(c: np.ndarray, t: float) -> np.ndarray:
    norm = float(np.linalg.norm(c))
    if norm == 0.0 or t == 0.0:
        return np.array([1.0, 0.0, 0.0, 0.0])
    half = 0.5 * t * norm
    return _canonical(np.concatenate(([cos(half)], -sin(half) * c / norm)))


def rodrigues(c: np.ndarray, t: float) -> np.ndarray:
    """Matrix ``exp(t * hat(c))`` via ``I + sin(a) K + (1 - cos(a)) K^2``."""
    norm = float(np.linalg.norm(c))
    angle = t * norm
    if norm == 0.0 or angle == 0.0:
        return np.eye(3)
    k = hat(c / norm)
    return np.eye(3) + sin(angle) * k + (1.0 - cos(angle)) * (k @ k)


def rodrigues_batch(c: np.ndarray, t) -> np.ndarray:
    """Vectorised :func:`rodrigues` over leading axes of ``c`` (shape ``(..., 3)``)."""
    c = np.asarray(c, dtype=float)
    t = np.asarray(t, dtype=float)
    norm = np.linalg.norm(c, axis=-1)
    angle = t * norm
    safe = np.where(norm > 0, norm, 1.0)
    n = c / safe[..., None]
    k = np.zeros(c.shape[:-1] + (3, 3))
    k[..., 0, 1] = n[..., 2]
    k[..., 0, 2] = -n[..., 1]
    k[..., 1, 0] = -n[..., 2]
    k[..., 1, 2] = n[..., 0]
    k[..., 2, 0] = n[..., 1]
    k[..., 2, 1] = -n[..., 0]
    k2 = k @ k
    s = np.sin(angle)[..., None, None]
    oc = (1.0 - np.cos(angle))[..., None, None]
    return np.eye(3) + s * k + oc * k2


def rot_exp_derivative(c: np.ndarray, t: float, dc: np.ndarray) -> np.ndarray:
    """Derivative of ``exp(t * hat(c))`` along ``c -> c + s * dc`` at ``s = 0``.

    Uses ``d exp(X) = hat(J(v) dv) exp(X)`` with the left Jacobian of SO(3),
    written here for ``v = t * c`` in the ``eps`` basis (``hat(v) = -[v]_x``).
    """
    return rot_exp_derivative_batch(np.asarray(c, float)[None], np.asarray([t], float),
                                    np.asarray(dc, float)[None])[0]


def rot_exp_derivative_batch(c: np.ndarray, t, dc: np.ndarray) -> np.ndarray:
    c = np.asarray(c, dtype=float)
    t = np.asarray(t, dtype=float)
    v = t[..., None] * c
    dv = t[..., None] * np.asarray(dc, dtype=float)
    theta = np.linalg.norm(v, axis=-1)
    small = theta < 1e-6
    th = np.where(small, 1.0, theta)
    # coefficients of J = I + a [u]x + b [u]x^2 for u = -v (cross-product form)
    a = np.where(small, 0.5 - theta**2 / 24.0, (1.0 - np.cos(th)) / th**2)
    b = np.where(small, 1.0 / 6.0 - theta**2 / 120.0, (th - np.sin(th)) / th**3)
    u = -v
    du = -dv
    ux_du = np.cross(u, du)
    ux_ux_du = np.cross(u, ux_du)
    jd = du + a[..., None] * ux_du + b[..., None] * ux_ux_du
    # hat_cross(jd) = [jd]_x = -hat(jd)
    w = -_hat_batch(jd)
    return w @ rodrigues_batch(c, t)


def _hat_batch(v: np.ndarray) -> np.ndarray:
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = v[..., 2]
    out[..., 0, 2] = -v[..., 1]
    out[..., 1, 0] = -v[..., 2]
    out[..., 1, 2] = v[..., 0]
    out[..., 2, 0] = v[..., 1]
    out[..., 2, 1] = -v[..., 0]
    return out


def compose(a: Rotation, b: Rotation) -> Rotation:
    """Rotation ``a`` applied after ``b`` (matrix product ``a @ b``)."""
    return Rotation(a.matrix @ b.matrix, _canonical(quat_multiply(a.quat, b.quat)))


def compose_axis_angle(a: AxisAngle, b: AxisAngle, atol: float = 1e-14) -> AxisAngle:
    """Compose two axis-angle rotations (``a`` after ``b``) with the closed forms

        cos(g/2) = cos((al - be)/2) sin^2(th/2) + cos((al + be)/2) cos^2(th/2)
        sin(g/2) n3 = cos(al/2) sin(be/2) n2 + cos(be/2) sin(al/2) n1
                      - sin(al/2) sin(be/2) n1 x n2

    where ``cos(th) = n1 . n2``.
    """
    if a.degenerate and b.degenerate:
        return AxisAngle((1.0, 0.0, 0.0), 0.0, True)
    n1 = np.asarray(a.axis, dtype=float)
    n2 = np.asarray(b.axis, dtype=float)
    ca, sa = cos(a.angle / 2), sin(a.angle / 2)
    cb, sb = cos(b.angle / 2), sin(b.angle / 2)
    if a.degenerate:
        ca, sa = 1.0, 0.0
    if b.degenerate:
        cb, sb = 1.0, 0.0
    cos_th = float(np.clip(n1 @ n2, -1.0, 1.0))
    sin2 = 0.5 * (1.0 - cos_th)
    cos2 = 0.5 * (1.0 + cos_th)
    cg = cos((a.angle - b.angle) / 2) * sin2 + cos((a.angle + b.angle) / 2) * cos2
    if a.degenerate or b.degenerate:
        cg = ca * cb
    vec = ca * sb * n2 + cb * sa * n1 - sa * sb * np.cross(n1, n2)
    s = float(np.linalg.norm(vec))
    if s <= atol:
        return AxisAngle((1.0, 0.0, 0.0), 0.0, True)
    # orient n3 along n1 + n2 so that coaxial angles simply add
    n3 = vec / s
    if n3 @ (n1 + n2) < 0:
        n3 = -n3
    gamma = 2.0 * atan2(float(vec @ n3), cg)
    return AxisAngle(tuple(float(x) for x in n3), gamma % (2 * pi))


def fidelity(u: Rotation, target: Rotation) -> float:
    """Squared Frobenius distance ``||u - target||^2 = 6 - 2 tr(target^T u)``, in ``[0, 8]``."""
    val = 6.0 - 2.0 * float(np.sum(target.matrix * u.matrix))
    return min(max(val, 0.0), 8.0)


def x_rotation(phi: float) -> Rotation:
    """Target rotation ``exp(phi * EPS_X)``."""
    return rot_exp((1.0, 0.0, 0.0), phi)
