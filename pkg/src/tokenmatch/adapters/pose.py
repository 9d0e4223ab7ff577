"""6D object pose from dense 2D-3D correspondences.

Dense labels encode, per foreground pixel, the normalized object-frame
coordinate of the surface point seen there (a 3-channel "texture" in [-1, 1]
plus a foreground channel).  Pose recovery un-normalizes the textures into 3D
points, pairs them with their pixel coordinates, and solves
perspective-n-point: RANSAC over 6-point DLT minimal solutions, then
reprojection-error refinement on the inliers.

Pixel coordinates here follow the camera convention (x = column, y = row),
matching intrinsics K = [[fx, 0, cx], [0, fy, cy], [0, 0, 1]].
"""

from dataclasses import dataclass, field

import numpy as np
import torch
from scipy.optimize import least_squares
from scipy.spatial.transform import Rotation

from ..errors import ConfigError, NoPoseError


@dataclass
class PoseProblem:
    intrinsics: np.ndarray  # [3, 3]
    vertices: np.ndarray  # [V, 3] object frame
    diameter: float
    center: np.ndarray = None  # normalization: normalized = (v - center) / scale
    scale: float = None

    def __post_init__(self):
        self.intrinsics = np.asarray(self.intrinsics, dtype=np.float64)
        self.vertices = np.asarray(self.vertices, dtype=np.float64)
        if abs(np.linalg.det(self.intrinsics)) < 1e-12:
            raise ConfigError("camera intrinsics must be invertible")
        if self.diameter <= 0:
            raise ConfigError("object diameter must be positive")
        if self.center is None:
            lo, hi = self.vertices.min(axis=0), self.vertices.max(axis=0)
            self.center = (lo + hi) / 2.0
        self.center = np.asarray(self.center, dtype=np.float64)
        if self.scale is None:
            self.scale = float(np.abs(self.vertices - self.center).max())
        if self.scale <= 0:
            raise ConfigError("degenerate vertex normalization scale")

    def normalize(self, points3d):
        return (np.asarray(points3d, dtype=np.float64) - self.center) / self.scale

    def denormalize(self, normalized):
        return np.asarray(normalized, dtype=np.float64) * self.scale + self.center


def project(K, R, t, points3d):
    """Object-frame points -> pixel (x, y) coordinates."""
    cam = np.asarray(points3d) @ np.asarray(R).T + np.asarray(t)
    uv = cam @ np.asarray(K).T
    return uv[:, :2] / uv[:, 2:3]


def texture_from_pose(problem: PoseProblem, R, t, size):
    """Render normalized object coordinates by vertex splatting.

    Returns (texture [3, H, W] in [-1, 1], foreground [1, H, W] in {0, 1}).
    Vertices project through K[R|t]; at pixel collisions the nearest depth
    wins; untouched pixels stay zero.
    """
    H, W = size
    R = np.asarray(R, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    cam = problem.vertices @ R.T + t
    in_front = cam[:, 2] > 1e-9
    uv = cam[in_front] @ problem.intrinsics.T
    xy = uv[:, :2] / uv[:, 2:3]
    px = np.round(xy).astype(np.int64)
    ok = (px[:, 0] >= 0) & (px[:, 0] < W) & (px[:, 1] >= 0) & (px[:, 1] < H)
    px = px[ok]
    depth = cam[in_front][ok, 2]
    values = problem.normalize(problem.vertices[in_front][ok])
    order = np.argsort(-depth)  # nearest written last wins the collision
    texture = np.zeros((3, H, W), dtype=np.float32)
    fg = np.zeros((1, H, W), dtype=np.float32)
    rows, cols = px[order, 1], px[order, 0]
    texture[:, rows, cols] = values[order].T.astype(np.float32)
    fg[0, rows, cols] = 1.0
    return torch.from_numpy(texture), torch.from_numpy(fg)


def _proper_rotation(A):
    U, S, Vt = np.linalg.svd(A)
    R = U @ Vt
    if np.linalg.det(R) < 0:
        R = U @ np.diag([1.0, 1.0, -1.0]) @ Vt
    return R, S


def _dlt(points3d, rays):
    """Direct linear transform for [R|t] from >= 6 correspondences.

    rays: [N, 2] K-normalized image coordinates.  The 3D points are centered
    and scaled for conditioning; the result is un-normalized before return.
    """
    X = np.asarray(points3d, dtype=np.float64)
    n = len(X)
    c = X.mean(axis=0)
    spread = np.sqrt(((X - c) ** 2).sum(axis=1).mean())
    if spread < 1e-12:
        raise np.linalg.LinAlgError("collapsed 3D sample")
    s = spread / np.sqrt(3.0)
    Xn = (X - c) / s
    Xh = np.hstack([Xn, np.ones((n, 1))])
    A = np.zeros((2 * n, 12))
    A[0::2, 0:4] = Xh
    A[0::2, 8:12] = -rays[:, 0:1] * Xh
    A[1::2, 4:8] = Xh
    A[1::2, 8:12] = -rays[:, 1:2] * Xh
    _, _, Vt = np.linalg.svd(A)
    P = Vt[-1].reshape(3, 4)

    best = None
    for sign in (1.0, -1.0):
        A3, b = sign * P[:, :3], sign * P[:, 3]
        R, S = _proper_rotation(A3)
        if S.sum() < 1e-12:
            raise np.linalg.LinAlgError("degenerate projection estimate")
        lam = 3.0 / S.sum()
        t_norm = lam * b
        t = s * t_norm - R @ c
        depths = (X @ R.T + t)[:, 2]
        score = float((depths > 0).mean())
        if best is None or score > best[0]:
            best = (score, R, t)
    return best[1], best[2]


def _refine(points3d, points2d, K, R, t):
    def residuals(theta):
        Rm = Rotation.from_rotvec(theta[:3]).as_matrix()
        return (project(K, Rm, theta[3:], points3d) - points2d).ravel()

    x0 = np.concatenate([Rotation.from_matrix(R).as_rotvec(), t])
    result = least_squares(residuals, x0, method="lm", max_nfev=200)
    R_ref = Rotation.from_rotvec(result.x[:3]).as_matrix()
    return R_ref, result.x[3:]


def solve_pnp_points(points2d, points3d, K, ransac_iters: int = 500,
                     inlier_px: float = 2.0, rng=None, refine: bool = True):
    """RANSAC PnP over pixel (x, y) <-> object-frame 3D correspondences.

    Returns (R, t, inlier mask); R is orthonormal with det +1.
    """
    points2d = np.asarray(points2d, dtype=np.float64)
    points3d = np.asarray(points3d, dtype=np.float64)
    K = np.asarray(K, dtype=np.float64)
    n = len(points2d)
    if n < 6 or len(points3d) != n:
        raise NoPoseError(f"need at least 6 correspondences, got {n}")
    if rng is None:
        rng = np.random.default_rng(0)
    K_inv = np.linalg.inv(K)
    homo = np.hstack([points2d, np.ones((n, 1))])
    rays = (homo @ K_inv.T)[:, :2]

    def inliers_of(R, t):
        err = np.linalg.norm(project(K, R, t, points3d) - points2d, axis=1)
        return err < inlier_px

    best_R, best_t, best_mask = None, None, None
    try:
        R0, t0 = _dlt(points3d, rays)
        mask0 = inliers_of(R0, t0)
        best_R, best_t, best_mask = R0, t0, mask0
    except np.linalg.LinAlgError:
        pass

    if best_mask is None or best_mask.mean() < 1.0:
        for _ in range(ransac_iters):
            sample = rng.choice(n, size=6, replace=False)
            try:
                R_s, t_s = _dlt(points3d[sample], rays[sample])
            except np.linalg.LinAlgError:
                continue  # coplanar-collapsed sample: resample
            mask = inliers_of(R_s, t_s)
            if best_mask is None or mask.sum() > best_mask.sum():
                best_R, best_t, best_mask = R_s, t_s, mask
                if mask.all():
                    break

    if best_mask is None or best_mask.sum() < 6:
        raise NoPoseError("RANSAC found no 6-inlier consensus")

    R, t = _dlt(points3d[best_mask], rays[best_mask])
    if refine:
        R, t = _refine(points3d[best_mask], points2d[best_mask], K, R, t)
    mask = inliers_of(R, t)
    return R, t, mask


def solve_pnp(texture, foreground, problem: PoseProblem, threshold: float = 0.5,
              **kwargs):
    """Pose from predicted texture and foreground maps.

    texture: [3, H, W] normalized coordinates; foreground: [1, H, W].
    """
    tex = texture.detach().cpu().numpy() if isinstance(texture, torch.Tensor) else np.asarray(texture)
    fg = foreground.detach().cpu().numpy() if isinstance(foreground, torch.Tensor) else np.asarray(foreground)
    rows, cols = np.nonzero(fg[0] > threshold)
    if len(rows) < 6:
        raise NoPoseError(f"only {len(rows)} foreground pixels, need >= 6")
    points2d = np.stack([cols, rows], axis=1).astype(np.float64)
    normalized = tex[:, rows, cols].T
    points3d = problem.denormalize(normalized)
    R, t, _ = solve_pnp_points(points2d, points3d, problem.intrinsics, **kwargs)
    return R, t


def rotation_angle(R_a, R_b) -> float:
    """Geodesic angle between two rotations, in radians."""
    M = np.asarray(R_a) @ np.asarray(R_b).T
    cos = (np.trace(M) - 1.0) / 2.0
    return float(np.arccos(np.clip(cos, -1.0, 1.0)))
