import math

import numpy as np

from tokenwarp.camera import CameraIntrinsics, CameraPose

K0 = CameraIntrinsics(100.0, 100.0, 64.0, 64.0, 128, 128)


def random_rotation(rng, max_deg: float) -> np.ndarray:
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = math.radians(rng.uniform(0, max_deg))
    Kx = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    return np.eye(3) + math.sin(angle) * Kx + (1 - math.cos(angle)) * Kx @ Kx


def random_pose(rng, max_rot_deg=15.0, max_trans=0.5) -> CameraPose:
    t = rng.normal(size=3)
    t *= rng.uniform(0, max_trans) / np.linalg.norm(t)
    return CameraPose(random_rotation(rng, max_rot_deg), t)
