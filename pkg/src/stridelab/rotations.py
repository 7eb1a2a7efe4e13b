"""Quaternion and 6D rotation utilities.

Quaternions are wxyz, unit norm, vectorized over arbitrary leading axes.
Outputs are canonicalized to w >= 0.
"""
import numpy as np

from .errors import InvalidRotationError

_EPS_DEGENERATE = 1e-8


def quat_identity(shape=()):
    q = np.zeros(shape + (4,))
    q[..., 0] = 1.0
    return q


def quat_normalize(q):
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def quat_canonical(q):
    """Flip sign so w >= 0 (same rotation)."""
    return np.where(q[..., :1] < 0.0, -q, q)


def quat_mul(a, b):
    aw, ax, ay, az = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    bw, bx, by, bz = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def quat_conj(q):
    out = q.copy()
    out[..., 1:] = -out[..., 1:]
    return out


def _cross3(a, b):
    # hand-rolled to dodge np.cross's axis-normalization overhead
    return np.stack(
        [
            a[..., 1] * b[..., 2] - a[..., 2] * b[..., 1],
            a[..., 2] * b[..., 0] - a[..., 0] * b[..., 2],
            a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0],
        ],
        axis=-1,
    )


def quat_rotate(q, v):
    """Rotate vectors v (..., 3) by quaternions q (..., 4)."""
    qv = q[..., 1:]
    qw = q[..., :1]
    t = 2.0 * _cross3(qv, v)
    return v + qw * t + _cross3(qv, t)


def quat_from_axis_angle(axis, angle):
    axis = np.asarray(axis, dtype=float)
    angle = np.asarray(angle, dtype=float)
    half = 0.5 * angle
    return np.concatenate(
        [np.cos(half)[..., None], axis * np.sin(half)[..., None]], axis=-1
    )


def quat_from_yaw(yaw):
    yaw = np.asarray(yaw, dtype=float)
    half = 0.5 * yaw
    zeros = np.zeros_like(half)
    return np.stack([np.cos(half), zeros, zeros, np.sin(half)], axis=-1)


def quat_exp(v):
    """Rotation-vector (..., 3) to quaternion."""
    v = np.asarray(v, dtype=float)
    angle = np.linalg.norm(v, axis=-1, keepdims=True)
    small = angle < 1e-12
    safe = np.where(small, 1.0, angle)
    axis = np.where(small, 0.0, v / safe)
    half = 0.5 * angle[..., 0]
    return np.concatenate(
        [np.cos(half)[..., None], axis * np.sin(half)[..., None]], axis=-1
    )


def quat_log(q):
    """Quaternion to rotation vector (..., 3), angle in [0, pi]."""
    q = quat_canonical(q)
    w = np.clip(q[..., 0], -1.0, 1.0)
    v = q[..., 1:]
    vn = np.linalg.norm(v, axis=-1, keepdims=True)
    angle = 2.0 * np.arctan2(vn[..., 0], w)
    small = vn < 1e-12
    safe = np.where(small, 1.0, vn)
    return np.where(small, 2.0 * v, v / safe * angle[..., None])


def quat_angle(q):
    """Geodesic rotation angle of q, in [0, pi]."""
    q = quat_canonical(q)
    w = np.clip(q[..., 0], -1.0, 1.0)
    return 2.0 * np.arccos(w)


def quat_diff_angle(a, b):
    """Geodesic angle between two rotations."""
    return quat_angle(quat_mul(a, quat_conj(b)))


def quat_to_matrix(q):
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    m = np.empty(q.shape[:-1] + (3, 3))
    m[..., 0, 0] = 1 - 2 * (y * y + z * z)
    m[..., 0, 1] = 2 * (x * y - w * z)
    m[..., 0, 2] = 2 * (x * z + w * y)
    m[..., 1, 0] = 2 * (x * y + w * z)
    m[..., 1, 1] = 1 - 2 * (x * x + z * z)
    m[..., 1, 2] = 2 * (y * z - w * x)
    m[..., 2, 0] = 2 * (x * z - w * y)
    m[..., 2, 1] = 2 * (y * z + w * x)
    m[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return m


def matrix_to_quat(m):
    """Rotation matrix (..., 3, 3) to canonical quaternion."""
    m = np.asarray(m, dtype=float)
    w = np.sqrt(np.maximum(0.0, 1.0 + m[..., 0, 0] + m[..., 1, 1] + m[..., 2, 2])) / 2
    x = np.sqrt(np.maximum(0.0, 1.0 + m[..., 0, 0] - m[..., 1, 1] - m[..., 2, 2])) / 2
    y = np.sqrt(np.maximum(0.0, 1.0 - m[..., 0, 0] + m[..., 1, 1] - m[..., 2, 2])) / 2
    z = np.sqrt(np.maximum(0.0, 1.0 - m[..., 0, 0] - m[..., 1, 1] + m[..., 2, 2])) / 2
    x = np.copysign(x, m[..., 2, 1] - m[..., 1, 2])
    y = np.copysign(y, m[..., 0, 2] - m[..., 2, 0])
    z = np.copysign(z, m[..., 1, 0] - m[..., 0, 1])
    q = np.stack([w, x, y, z], axis=-1)
    return quat_canonical(quat_normalize(q))


def quat_to_6d(q):
    """First two columns of the rotation matrix, stacked column-major."""
    m = quat_to_matrix(q)
    return np.concatenate([m[..., :, 0], m[..., :, 1]], axis=-1)


def sixd_to_quat(v):
    """Orthonormalize a 6D representation back to a quaternion.

    Raises InvalidRotationError when the first column is degenerate.
    """
    v = np.asarray(v, dtype=float)
    a = v[..., 0:3]
    b = v[..., 3:6]
    na = np.linalg.norm(a, axis=-1, keepdims=True)
    if np.any(na < _EPS_DEGENERATE):
        raise InvalidRotationError("6D first column norm below 1e-8")
    c0 = a / na
    b_proj = b - np.sum(c0 * b, axis=-1, keepdims=True) * c0
    nb = np.linalg.norm(b_proj, axis=-1, keepdims=True)
    if np.any(nb < _EPS_DEGENERATE):
        raise InvalidRotationError("6D second column parallel to the first")
    c1 = b_proj / nb
    c2 = np.cross(c0, c1)
    m = np.stack([c0, c1, c2], axis=-1)
    return matrix_to_quat(m)


def slerp(a, b, t):
    """Shortest-arc spherical interpolation; t may broadcast."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    t = np.asarray(t, dtype=float)
    dot = np.sum(a * b, axis=-1, keepdims=True)
    b = np.where(dot < 0.0, -b, b)
    dot = np.abs(dot)
    dot = np.clip(dot, -1.0, 1.0)
    theta = np.arccos(dot)
    sin_theta = np.sin(theta)
    near = sin_theta < 1e-8
    t = t[..., None] if t.ndim < a.ndim else t
    w0 = np.where(near, 1.0 - t, np.sin((1.0 - t) * theta) / np.where(near, 1.0, sin_theta))
    w1 = np.where(near, t, np.sin(t * theta) / np.where(near, 1.0, sin_theta))
    return quat_canonical(quat_normalize(w0 * a + w1 * b))


def yaw_of(q):
    """Heading (rotation of +x about z) extracted from a quaternion."""
    fwd = quat_rotate(q, np.broadcast_to(np.array([1.0, 0.0, 0.0]), q.shape[:-1] + (3,)))
    return np.arctan2(fwd[..., 1], fwd[..., 0])


def rotate_xy(v, yaw):
    """Rotate planar vectors (..., 2) by yaw about +z."""
    c, s = np.cos(yaw), np.sin(yaw)
    x = c * v[..., 0] - s * v[..., 1]
    y = s * v[..., 0] + c * v[..., 1]
    return np.stack([x, y], axis=-1)
