"""Rigid-transform helpers: the 6D rotation representation, rotation
distances and chordal rotation averaging.

Everything here runs in float64 regardless of the training precision.
Functions accept either a single item or a leading batch axis where noted.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateMean, DegenerateRotation6D

EPS_6D = 1e-8
ORTHO_TOL = 1e-6


@dataclass(frozen=True)
class Pose:
    """Camera pose ``[R | t]``: rotation matrix and translation vector."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        R.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    def is_valid(self, tol=ORTHO_TOL):
        R = self.rotation
        return (
            np.abs(R.T @ R - np.eye(3)).max() <= tol
            and abs(np.linalg.det(R) - 1.0) <= tol
            and bool(np.all(np.isfinite(self.translation)))
        )

    def to_vec9(self):
        return np.concatenate([matrix_to_rot6d(self.rotation), self.translation])

    @classmethod
    def from_vec9(cls, vec):
        vec = np.asarray(vec, dtype=np.float64)
        return cls(rot6d_to_matrix(vec[:6]), vec[6:9])

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3))

    def __eq__(self, other):
        if not isinstance(other, Pose):
            return NotImplemented
        return np.array_equal(self.rotation, other.rotation) and np.array_equal(
            self.translation, other.translation
        )

    __hash__ = None


def rot6d_to_matrix(rot6, eps=EPS_6D):
    """Gram-Schmidt a 6-vector ``(a1, a2)`` into a rotation matrix.

    Columns of the result are ``b1 = a1/|a1|``, ``b2`` the normalized part of
    ``a2`` orthogonal to ``b1`` and ``b3 = b1 x b2``. A trailing batch
    shape ``(..., 6)`` maps to ``(..., 3, 3)``.

    Raises DegenerateRotation6D if either normalization would divide by a
    norm of ``eps`` or less.
    """
    rot6 = np.asarray(rot6, dtype=np.float64)
    if rot6.shape[-1] != 6:
        raise ValueError(f"expected trailing dimension 6, got shape {rot6.shape}")
    a1, a2 = rot6[..., :3], rot6[..., 3:]
    n1 = np.linalg.norm(a1, axis=-1, keepdims=True)
    if np.any(~(n1 > eps)):
        raise DegenerateRotation6D("first column of 6D rotation has (near-)zero norm")
    b1 = a1 / n1
    u2 = a2 - np.sum(b1 * a2, axis=-1, keepdims=True) * b1
    n2 = np.linalg.norm(u2, axis=-1, keepdims=True)
    if np.any(~(n2 > eps)):
        raise DegenerateRotation6D("second column of 6D rotation is (near-)parallel to the first")
    b2 = u2 / n2
    b3 = np.cross(b1, b2)
    return np.stack([b1, b2, b3], axis=-1)


def rot6d_is_degenerate(rot6, eps=EPS_6D):
    """Boolean mask, per row, of 6-vectors that rot6d_to_matrix rejects."""
    rot6 = np.asarray(rot6, dtype=np.float64)
    a1, a2 = rot6[..., :3], rot6[..., 3:]
    n1 = np.linalg.norm(a1, axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        b1 = a1 / n1[..., None]
        u2 = a2 - np.sum(b1 * a2, axis=-1, keepdims=True) * b1
    n2 = np.linalg.norm(u2, axis=-1)
    return ~(n1 > eps) | ~(n2 > eps)


def matrix_to_rot6d(R):
    """First two columns of ``R`` concatenated; ``(..., 3, 3) -> (..., 6)``."""
    R = np.asarray(R, dtype=np.float64)
    return np.concatenate([R[..., :, 0], R[..., :, 1]], axis=-1)


def geodesic_angle(R1, R2):
    """Rotation angle of ``R1^T R2`` in degrees, in [0, 180]. Broadcasts."""
    R1 = np.asarray(R1, dtype=np.float64)
    R2 = np.asarray(R2, dtype=np.float64)
    # trace(R1^T R2) is the elementwise inner product
    tr = np.sum(R1 * R2, axis=(-2, -1))
    cos = np.clip((tr - 1.0) / 2.0, -1.0, 1.0)
    return np.degrees(np.arccos(cos))


def chordal_l2_mean(rotations):
    """Rotation minimizing the summed squared Frobenius distance to the inputs.

    Projects the arithmetic mean matrix onto SO(3) through its SVD. Raises
    DegenerateMean when the mean is rank deficient (``s2 + s3 <= 1e-9``),
    which happens for antipodal or widely dispersed inputs.
    """
    Rs = np.asarray(rotations, dtype=np.float64)
    if Rs.ndim == 2:
        Rs = Rs[None]
    if Rs.shape[0] == 0:
        raise ValueError("chordal_l2_mean needs at least one rotation")
    M = Rs.mean(axis=0)
    U, s, Vt = np.linalg.svd(M)
    if s[1] + s[2] <= 1e-9:
        raise DegenerateMean(f"mean rotation matrix is rank deficient (singular values {s})")
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ D @ Vt


def pose_distance(p1: Pose, p2: Pose):
    """``(translation distance, geodesic rotation angle in degrees)``."""
    return (
        float(np.linalg.norm(p1.translation - p2.translation)),
        float(geodesic_angle(p1.rotation, p2.rotation)),
    )


def rotation_about(axis, degrees):
    """Rotation by ``degrees`` about a coordinate axis ('x', 'y' or 'z')."""
    a = np.radians(degrees)
    c, s = np.cos(a), np.sin(a)
    if axis == "x":
        return np.array([[1, 0, 0], [0, c, -s], [0, s, c]])
    if axis == "y":
        return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])
    if axis == "z":
        return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])
    raise ValueError(f"unknown axis {axis!r}")


def random_rotations(rng, n):
    """``n`` uniformly distributed rotations (QR of Gaussian matrices)."""
    A = rng.standard_normal((n, 3, 3))
    Q, Rr = np.linalg.qr(A)
    Q = Q * np.sign(np.diagonal(Rr, axis1=-2, axis2=-1))[:, None, :]
    det = np.linalg.det(Q)
    Q[det < 0, :, 0] *= -1
    return Q
