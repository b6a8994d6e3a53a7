"""Planar homographies between the object plane, camera images and viewpoints.

Conventions
-----------
World frame: ground plane is z = 0, z points up.  Image coordinates are
(x, y) = (column, row) in pixels, y pointing down.

The object plane is the vertical plane through the object's base point whose
normal is the horizontal projection of the camera-to-object ray.  Plane
coordinates are meters with the origin at the base point, +x to the right as
seen from the camera and +y up.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateAngle, GeometryError, NonInvertible, PointAtInfinity

EPS = 1e-12

# Canonical training window: 64x128 pixels with a 96 px tall object whose base
# sits on row 112, horizontally centered.
WINDOW_SIZE = (64, 128)
OBJECT_PX = 96.0
BASE_ROW = 112.0
TOP_ROW = 16.0
CENTER_COL = 32.0


@dataclass(frozen=True)
class CameraPose:
    """Camera placement relative to an object.

    ``distance`` is measured from the camera center to the center of the
    object plane (the aim point), and ``elevation`` is the angle of that ray
    above the horizontal.
    """

    elevation: float
    distance: float = 6.0
    focal_length: float = 800.0
    principal_point: tuple[float, float] = (320.0, 240.0)
    image_size: tuple[int, int] = (640, 480)

    def __post_init__(self):
        if not (0.0 <= self.elevation < math.pi / 2):
            raise GeometryError(f"elevation must lie in [0, pi/2), got {self.elevation!r}")
        if not self.distance > 0:
            raise GeometryError(f"distance must be positive, got {self.distance!r}")
        if not self.focal_length > 0:
            raise GeometryError(f"focal_length must be positive, got {self.focal_length!r}")
        if min(self.image_size) <= 0:
            raise GeometryError(f"image_size must be positive, got {self.image_size!r}")
        object.__setattr__(self, "principal_point", tuple(float(v) for v in self.principal_point))
        object.__setattr__(self, "image_size", tuple(int(v) for v in self.image_size))

    def to_dict(self) -> dict:
        return {
            "elevation": self.elevation,
            "distance": self.distance,
            "focal_length": self.focal_length,
            "principal_point": list(self.principal_point),
            "image_size": list(self.image_size),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CameraPose":
        return cls(
            elevation=float(d["elevation"]),
            distance=float(d["distance"]),
            focal_length=float(d["focal_length"]),
            principal_point=tuple(d["principal_point"]),
            image_size=tuple(d["image_size"]),
        )


@dataclass(frozen=True)
class ObjectPlaneSpec:
    height: float = 1.75
    width: float = 0.6
    base_point: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if not self.height > 0 or not self.width > 0:
            raise GeometryError("object height and width must be positive")
        bp = tuple(float(v) for v in self.base_point)
        if len(bp) == 2:
            bp = bp + (0.0,)
        if len(bp) != 3 or abs(bp[2]) > EPS:
            raise GeometryError(f"base point must lie on the ground plane, got {self.base_point!r}")
        object.__setattr__(self, "base_point", bp)

    def with_base(self, x: float, y: float) -> "ObjectPlaneSpec":
        return ObjectPlaneSpec(self.height, self.width, (float(x), float(y), 0.0))


@dataclass(frozen=True, eq=False)
class Homography:
    """3x3 projective map, stored as its normalized representative.

    ``normalized`` is False only when the bottom-right entry is (numerically)
    zero; the matrix is then scaled to unit Frobenius norm instead.
    """

    m: np.ndarray
    normalized: bool = True

    @classmethod
    def from_matrix(cls, m, eps: float = EPS) -> "Homography":
        m = np.array(m, dtype=np.float64).reshape(3, 3)
        if not np.all(np.isfinite(m)):
            raise NonInvertible("homography has non-finite entries")
        sv = np.linalg.svd(m, compute_uv=False)
        if sv[0] == 0 or sv[2] / sv[0] < eps:
            raise NonInvertible("homography is singular")
        if abs(m[2, 2]) > eps * sv[0]:
            m = m / m[2, 2]
            normalized = True
        else:
            m = m / np.linalg.norm(m)
            normalized = False
        m.setflags(write=False)
        return cls(m, normalized)

    @classmethod
    def identity(cls) -> "Homography":
        return cls.from_matrix(np.eye(3))

    @classmethod
    def translation(cls, tx: float, ty: float) -> "Homography":
        return cls.from_matrix([[1, 0, tx], [0, 1, ty], [0, 0, 1]])

    @classmethod
    def scaling(cls, sx: float, sy: float | None = None) -> "Homography":
        sy = sx if sy is None else sy
        return cls.from_matrix([[sx, 0, 0], [0, sy, 0], [0, 0, 1]])

    @classmethod
    def rotation(cls, phi: float, center: tuple[float, float] = (0.0, 0.0)) -> "Homography":
        c, s = math.cos(phi), math.sin(phi)
        cx, cy = center
        r = np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])
        t = np.array([[1, 0, cx], [0, 1, cy], [0, 0, 1]])
        ti = np.array([[1, 0, -cx], [0, 1, -cy], [0, 0, 1]])
        return cls.from_matrix(t @ r @ ti)

    def inverse(self) -> "Homography":
        return Homography.from_matrix(np.linalg.inv(self.m))

    def __matmul__(self, other: "Homography") -> "Homography":
        return Homography.from_matrix(self.m @ other.m)

    def apply(self, pts, eps: float = EPS) -> np.ndarray:
        """Map an (N, 2) array of points; raises PointAtInfinity if any w ~ 0."""
        pts = np.asarray(pts, dtype=np.float64)
        single = pts.ndim == 1
        pts = np.atleast_2d(pts)
        q = pts @ self.m[:, :2].T + self.m[:, 2]
        w = q[:, 2]
        if np.any(np.abs(w) < eps):
            raise PointAtInfinity("point maps to infinity")
        out = q[:, :2] / w[:, None]
        return out[0] if single else out

    def to_list(self) -> list[float]:
        return [float(v) for v in self.m.ravel()]

    @classmethod
    def from_list(cls, values) -> "Homography":
        values = list(values)
        if len(values) != 9:
            raise GeometryError(f"a homography needs 9 numbers, got {len(values)}")
        return cls.from_matrix(np.array(values, dtype=np.float64).reshape(3, 3))

    def key(self) -> str:
        """Stable hash of the matrix, rounded to 10 significant digits."""
        text = ",".join(f"{v:.10g}" for v in self.m.ravel())
        return hashlib.sha1(text.encode()).hexdigest()[:16]

    def __repr__(self) -> str:
        rows = "; ".join(" ".join(f"{v:.6g}" for v in row) for row in self.m)
        return f"Homography([{rows}])"


def transform_point(h: Homography, p, eps: float = EPS) -> np.ndarray:
    """Apply ``h`` to a homogeneous point and dehomogenize to [u, v, 1]."""
    p = np.asarray(p, dtype=np.float64)
    if p.shape == (2,):
        p = np.append(p, 1.0)
    q = h.m @ p
    if abs(q[2]) < eps:
        raise PointAtInfinity(f"point {p.tolist()} maps to infinity")
    return np.array([q[0] / q[2], q[1] / q[2], 1.0])


def relative_homography(h1: Homography, h2: Homography) -> Homography:
    """Return H1 @ inv(H2): maps points of image 2 into image 1."""
    return Homography.from_matrix(h1.m @ np.linalg.inv(h2.m))


def _angle_jacobian(h: Homography, x, y):
    m = h.m
    a = m[0, 0] - m[2, 0] * x
    b = m[0, 1] - m[2, 1] * x
    c = m[1, 0] - m[2, 0] * y
    d = m[1, 1] - m[2, 1] * y
    return a, b, c, d


def angle_orientation(h: Homography, x: float, y: float) -> int:
    """+1 if the induced angle map preserves angular order at (x, y), else -1."""
    a, b, c, d = _angle_jacobian(h, x, y)
    det = a * d - b * c
    if abs(det) < EPS:
        raise DegenerateAngle(f"angle map is degenerate at ({x}, {y})")
    return 1 if det > 0 else -1


def transform_gradient_angle(h: Homography, x, y, theta, normal: bool = True, eps: float = EPS):
    """Map a gradient angle from the source view to the target view.

    ``h`` maps source coordinates to target coordinates and ``(x, y)`` is the
    target-view point.  The local linear map is
    ``J = [[h1 - h7 x, h2 - h8 x], [h4 - h7 y, h5 - h8 y]]``.

    With ``normal=False`` the direction ``(cos t, sin t)`` is pushed forward
    through ``J`` directly.  That is right for edge tangents; a gradient is an
    edge normal, so the default maps it through the inverse transpose of
    ``J``.  Both agree for similarity transforms.

    Returns angles in [0, pi).  ``theta`` may be an array.
    """
    a, b, c, d = _angle_jacobian(h, x, y)
    theta = np.asarray(theta, dtype=np.float64)
    ct, st = np.cos(theta), np.sin(theta)
    if normal:
        vx = d * ct - c * st
        vy = a * st - b * ct
    else:
        vx = a * ct + b * st
        vy = c * ct + d * st
    if np.any((np.abs(vx) < eps) & (np.abs(vy) < eps)):
        raise DegenerateAngle(f"gradient angle undefined at ({x}, {y})")
    out = np.mod(np.arctan2(vy, vx), np.pi)
    out = np.where(out >= np.pi, 0.0, out)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True, eq=False)
class SceneCamera:
    """Pinhole camera: x_img ~ K R (X - center)."""

    K: np.ndarray
    R: np.ndarray
    center: np.ndarray
    image_size: tuple[int, int] = field(default=(640, 480))

    def project(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        q = (X - self.center) @ self.R.T @ self.K.T
        if np.any(q[:, 2] <= EPS):
            raise PointAtInfinity("point is behind the camera")
        return q[:, :2] / q[:, 2:3]

    def projection_matrix(self) -> np.ndarray:
        return self.K @ np.hstack([self.R, -(self.R @ self.center)[:, None]])


def camera_for_pose(pose: CameraPose, obj: ObjectPlaneSpec) -> SceneCamera:
    """Camera on the -y side of ``obj``, aimed at the object-plane center."""
    base = np.array(obj.base_point)
    target = base + np.array([0.0, 0.0, obj.height / 2])
    e = pose.elevation
    center = target + pose.distance * np.array([0.0, -math.cos(e), math.sin(e)])
    forward = (target - center) / pose.distance
    right = np.cross(forward, [0.0, 0.0, 1.0])
    n = np.linalg.norm(right)
    if n < 1e-9:
        raise NonInvertible("camera looks straight down; object plane projects to a line")
    right /= n
    down = np.cross(forward, right)
    R = np.vstack([right, down, forward])
    f = pose.focal_length
    cx, cy = pose.principal_point
    K = np.array([[f, 0, cx], [0, f, cy], [0, 0, 1.0]])
    return SceneCamera(K, R, center, pose.image_size)


def object_plane_homography(camera: SceneCamera, base_point) -> Homography:
    """Homography from object-plane meters at ``base_point`` to image pixels."""
    P = np.asarray(base_point, dtype=np.float64)
    if P.shape == (2,):
        P = np.append(P, 0.0)
    horiz = (camera.center - P) * np.array([1.0, 1.0, 0.0])
    n = np.linalg.norm(horiz)
    if n < 1e-9:
        raise NonInvertible("camera lies above the base point; object plane is undefined")
    normal = horiz / n
    ex = np.cross(-normal, [0.0, 0.0, 1.0])
    ez = np.array([0.0, 0.0, 1.0])
    M = camera.K @ camera.R @ np.column_stack([ex, ez, P - camera.center])
    return Homography.from_matrix(M)


def build_object_plane_homography(pose: CameraPose, obj: ObjectPlaneSpec) -> Homography:
    return object_plane_homography(camera_for_pose(pose, obj), obj.base_point)


def canonical_window_homography(obj_height: float = 1.75) -> Homography:
    """Object plane (meters) to the canonical 64x128 fronto-parallel window."""
    s = OBJECT_PX / obj_height
    return Homography.from_matrix([[s, 0, CENTER_COL], [0, -s, BASE_ROW], [0, 0, 1]])


def crop_homography(pose: CameraPose, obj: ObjectPlaneSpec | None = None) -> Homography:
    """Object plane to a 64x128 crop taken at ``pose``.

    The bounding box of the projected canonical window is scaled uniformly
    to fit 64x128 and centered.  At elevation 0 this is the canonical window
    itself; at other elevations the whole window footprint stays inside the
    crop, which picks up a little context around it.
    """
    obj = obj or ObjectPlaneSpec()
    local = ObjectPlaneSpec(obj.height, obj.width)
    h = build_object_plane_homography(pose, local)
    can = canonical_window_homography(obj.height)
    w, hh = WINDOW_SIZE
    corners = (h @ can.inverse()).apply([[0.0, 0.0], [w, 0.0], [w, hh], [0.0, hh]])
    lo, hi = corners.min(axis=0), corners.max(axis=0)
    s = min(w / (hi[0] - lo[0]), hh / (hi[1] - lo[1]))
    c = (lo + hi) / 2
    a = np.array([[s, 0, w / 2 - s * c[0]], [0, s, hh / 2 - s * c[1]], [0, 0, 1]])
    return Homography.from_matrix(a @ h.m)


def view_transfer(from_pose: CameraPose, to_pose: CameraPose, obj: ObjectPlaneSpec | None = None) -> Homography:
    """Map crop pixels at ``from_pose`` to crop pixels at ``to_pose``."""
    return relative_homography(crop_homography(to_pose, obj), crop_homography(from_pose, obj))
