"""Viewpoint-conditioned VQA construction: visibility, overlap binning,
flip-pair keypoints, questions and the geometry-only answerer."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .camera import (
    SOURCE_TO_TARGET,
    CameraIntrinsics,
    CameraPose,
    DepthMap,
    RelativePose,
    project_points,
    unproject_pixels,
)
from .errors import InvalidDepthAtKeypoint
from .markers import Marker

DEFAULT_OCCLUSION_TOL = 0.02
DEFAULT_TAU = 50.0
OVERLAP_BINS = ((0.05, 0.15, "5-15"), (0.15, 0.25, "15-25"), (0.25, 0.35, "25-35"))

TEXT, SHAPE, OBJECT = "text", "shape", "object"
TASKS = (TEXT, SHAPE, OBJECT)
LEFT, RIGHT = "left", "right"

TEXT_TEMPLATE = "Is the A point on the {} or {} of the B point?"
SHAPE_TEMPLATE = "Is the star shape on the {} or {} of the triangle shape?"
OBJECT_QUESTION = "Can you describe the object or feature at the red point?"

LABEL_COLOR = (255, 0, 0)
STAR_COLOR = (255, 200, 0)
TRIANGLE_COLOR = (0, 200, 255)
OBJECT_COLOR = (255, 0, 0)


def camera_points(points_world: np.ndarray, pose: CameraPose, K: CameraIntrinsics):
    """Camera-frame projection of world points. Returns ``(uv, z)``."""
    return project_points(pose.apply(points_world), K)


def visible_set(points_world: np.ndarray, pose: CameraPose, K: CameraIntrinsics, depth: DepthMap,
                occlusion_tol: float = DEFAULT_OCCLUSION_TOL) -> np.ndarray:
    """Sorted indices of points in front of the camera, inside the image and
    not behind the depth surface: ``z < d(u, v) + occlusion_tol``.

    ``d`` is read at the pixel containing the projection; points landing on
    invalid depth are excluded. ``occlusion_tol=0`` gives the strict rule.
    """
    if occlusion_tol < 0:
        raise ValueError("occlusion tolerance must be >= 0")
    depth.check_matches(K)
    uv, z = camera_points(np.asarray(points_world, dtype=np.float64), pose, K)
    front = z > 0
    d, ok = depth.lookup_nearest(np.where(front[:, None], uv, -1.0))
    with np.errstate(invalid="ignore"):
        vis = front & ok & (z < d + occlusion_tol)
    return np.flatnonzero(vis)


def overlap_ratio(a, b) -> float:
    a = np.unique(np.asarray(list(a) if isinstance(a, (set, frozenset)) else a, dtype=np.int64))
    b = np.unique(np.asarray(list(b) if isinstance(b, (set, frozenset)) else b, dtype=np.int64))
    union = len(np.union1d(a, b))
    if union == 0:
        return 0.0
    return len(np.intersect1d(a, b, assume_unique=True)) / union


def overlap_bin(ratio: float) -> str | None:
    for lo, hi, label in OVERLAP_BINS:
        if lo <= ratio < hi:
            return label
    return None


@dataclass(frozen=True)
class ViewPairRecord:
    source: str
    target: str
    overlap: float
    bin: str | None = None

    def to_json(self) -> dict:
        return {"source_frame": self.source, "target_frame": self.target,
                "overlap": self.overlap, "overlap_bin": self.bin}

    @classmethod
    def from_json(cls, d: dict) -> "ViewPairRecord":
        return cls(str(d["source_frame"]), str(d["target_frame"]), float(d["overlap"]), d.get("overlap_bin"))


def bin_and_sample_pairs(records, per_bin: int, seed: int) -> list[ViewPairRecord]:
    """Keep pairs with overlap in [5%, 35%), then sample up to ``per_bin`` per bin.

    Output is grouped by bin (low to high) and keeps input order inside a bin.
    """
    if per_bin < 1:
        raise ValueError("per_bin must be >= 1")
    rng = np.random.default_rng(seed)
    out = []
    for lo, hi, label in OVERLAP_BINS:
        members = [r for r in records if lo <= r.overlap < hi]
        if not members:
            continue
        take = np.sort(rng.choice(len(members), size=min(per_bin, len(members)), replace=False))
        out.extend(ViewPairRecord(members[i].source, members[i].target, members[i].overlap, label)
                   for i in take)
    return out


@dataclass(frozen=True)
class Keypoint:
    index: int
    source_uv: tuple[float, float]
    target_uv: tuple[float, float]
    source_depth: float = float("nan")
    target_depth: float = float("nan")

    def to_json(self) -> dict:
        def num(v):
            return None if np.isnan(v) else v

        return {"index": self.index, "source_uv": list(self.source_uv), "target_uv": list(self.target_uv),
                "source_depth": num(self.source_depth), "target_depth": num(self.target_depth)}

    @classmethod
    def from_json(cls, d: dict) -> "Keypoint":
        def num(v):
            return float("nan") if v is None else float(v)

        return cls(int(d["index"]), tuple(d["source_uv"]), tuple(d["target_uv"]),
                   num(d.get("source_depth")), num(d.get("target_depth")))


@dataclass(frozen=True)
class KeypointPair:
    a: Keypoint
    b: Keypoint


def flips(ua_s: float, ub_s: float, ua_t: float, ub_t: float, tau: float = DEFAULT_TAU) -> bool:
    """Left/right order reverses between views and the target gap is at least ``tau``."""
    return (ua_s - ub_s) * (ua_t - ub_t) < 0 and abs(ua_t - ub_t) >= tau


def _keypoint(i, suv, tuv, sd, td) -> Keypoint:
    return Keypoint(int(i), (float(suv[i, 0]), float(suv[i, 1])), (float(tuv[i, 0]), float(tuv[i, 1])),
                    float(sd[i]) if sd is not None else float("nan"),
                    float(td[i]) if td is not None else float("nan"))


def select_keypoint_pair(covisible, source_uv: np.ndarray, target_uv: np.ndarray,
                         tau: float = DEFAULT_TAU, seed: int = 0, source_depth=None, target_depth=None,
                         budget: int | None = None) -> KeypointPair | None:
    """Draw random distinct covisible pairs until one flips with gap >= ``tau``.

    ``source_uv``/``target_uv`` are indexed by scene-point index. Gives up
    after ``10 * len(covisible)`` draws and returns ``None``.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    cov = np.asarray(covisible, dtype=np.int64)
    n = len(cov)
    if n < 2:
        return None
    budget = 10 * n if budget is None else budget
    rng = np.random.default_rng(seed)
    ia = rng.integers(n, size=budget)
    ib = rng.integers(n - 1, size=budget)
    ib += ib >= ia
    a, b = cov[ia], cov[ib]
    ds = source_uv[a, 0] - source_uv[b, 0]
    dt = target_uv[a, 0] - target_uv[b, 0]
    ok = (ds * dt < 0) & (np.abs(dt) >= tau)
    hits = np.flatnonzero(ok)
    if len(hits) == 0:
        return None
    k = hits[0]
    return KeypointPair(_keypoint(a[k], source_uv, target_uv, source_depth, target_depth),
                        _keypoint(b[k], source_uv, target_uv, source_depth, target_depth))


def select_keypoint(covisible, source_uv, target_uv, seed: int = 0, source_depth=None,
                    target_depth=None) -> Keypoint | None:
    cov = np.asarray(covisible, dtype=np.int64)
    if len(cov) == 0:
        return None
    i = cov[np.random.default_rng(seed).integers(len(cov))]
    return _keypoint(i, source_uv, target_uv, source_depth, target_depth)


def warp_keypoints(uv: np.ndarray, depth: DepthMap, rel: RelativePose, K: CameraIntrinsics) -> np.ndarray:
    """Target-image positions of source keypoints via their source depth."""
    uv = np.atleast_2d(np.asarray(uv, dtype=np.float64))
    d, ok = depth.lookup_nearest(uv)
    if not ok.all():
        raise InvalidDepthAtKeypoint(f"no valid source depth at {uv[~ok].tolist()}")
    X = rel.as_direction(SOURCE_TO_TARGET).apply(unproject_pixels(uv, d, K))
    return project_points(X, K)[0]


def geometry_oracle(pair: KeypointPair, depth: DepthMap, rel: RelativePose, K: CameraIntrinsics) -> str:
    """Answer "is A left or right of B in the target view" from geometry alone."""
    warped = warp_keypoints(np.array([pair.a.source_uv, pair.b.source_uv]), depth, rel, K)
    return LEFT if warped[0, 0] < warped[1, 0] else RIGHT


def target_answer(pair: KeypointPair) -> str:
    return LEFT if pair.a.target_uv[0] < pair.b.target_uv[0] else RIGHT


@dataclass
class VqaInstance:
    task: str
    question: str
    answer: str | None
    markers: list[Marker]
    target_markers: list[Marker]
    keypoints: list[Keypoint]
    source_frame: str | None = None
    target_frame: str | None = None
    overlap_bin: str | None = None
    extra: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        d = {"task": self.task, "question": self.question, "answer": self.answer,
             "markers": [m.to_json() for m in self.markers],
             "target_markers": [m.to_json() for m in self.target_markers],
             "source_frame": self.source_frame, "target_frame": self.target_frame,
             "overlap_bin": self.overlap_bin,
             "keypoints": [k.to_json() for k in self.keypoints]}
        d.update(self.extra)
        return d

    @classmethod
    def from_json(cls, d: dict) -> "VqaInstance":
        known = {"task", "question", "answer", "markers", "target_markers", "source_frame",
                 "target_frame", "overlap_bin", "keypoints"}
        return cls(d["task"], d["question"], d.get("answer"),
                   [Marker.from_json(m) for m in d.get("markers", [])],
                   [Marker.from_json(m) for m in d.get("target_markers", [])],
                   [Keypoint.from_json(k) for k in d.get("keypoints", [])],
                   d.get("source_frame"), d.get("target_frame"), d.get("overlap_bin"),
                   {k: v for k, v in d.items() if k not in known})


def _pair_markers(task: str, pair: KeypointPair, where: str, size: float) -> list[Marker]:
    pa = getattr(pair.a, where)
    pb = getattr(pair.b, where)
    if task == TEXT:
        return [Marker("text:A", pa[0], pa[1], size, LABEL_COLOR),
                Marker("text:B", pb[0], pb[1], size, LABEL_COLOR)]
    return [Marker("star", pa[0], pa[1], size, STAR_COLOR),
            Marker("triangle", pb[0], pb[1], size, TRIANGLE_COLOR)]


def gen_question(keypoints, task: str, seed: int = 0, marker_size: float = 14.0,
                 circle_radius: float = 6.0, **frame_info) -> VqaInstance:
    """Fill the task template for a keypoint pair (or a single keypoint for
    the object task).

    Left/right option order is drawn from ``seed``; the label comes from the
    target-view x-coordinates. Object questions carry no label.
    """
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}")
    if task == OBJECT:
        kp = keypoints.a if isinstance(keypoints, KeypointPair) else keypoints
        return VqaInstance(OBJECT, OBJECT_QUESTION, None,
                           [Marker("circle", *kp.source_uv, circle_radius, OBJECT_COLOR)],
                           [Marker("circle", *kp.target_uv, circle_radius, OBJECT_COLOR)],
                           [kp], **frame_info)
    if not isinstance(keypoints, KeypointPair):
        raise ValueError(f"{task} questions need a keypoint pair")
    rng = np.random.default_rng(seed)
    options = (RIGHT, LEFT) if rng.random() < 0.5 else (LEFT, RIGHT)
    template = TEXT_TEMPLATE if task == TEXT else SHAPE_TEMPLATE
    return VqaInstance(task, template.format(*options), target_answer(keypoints),
                       _pair_markers(task, keypoints, "source_uv", marker_size),
                       _pair_markers(task, keypoints, "target_uv", marker_size),
                       [keypoints.a, keypoints.b], **frame_info)


@dataclass(frozen=True, eq=False)
class ViewSample:
    """Everything needed about one frame for annotation."""

    pose: CameraPose
    depth: DepthMap


def covisible_projections(points_world, source: ViewSample, target: ViewSample, K: CameraIntrinsics,
                          occlusion_tol: float = DEFAULT_OCCLUSION_TOL):
    """``(covisible, source_uv, target_uv, source_z, target_z)`` for a frame pair."""
    vs = visible_set(points_world, source.pose, K, source.depth, occlusion_tol)
    vt = visible_set(points_world, target.pose, K, target.depth, occlusion_tol)
    cov = np.intersect1d(vs, vt, assume_unique=True)
    suv, sz = camera_points(points_world, source.pose, K)
    tuv, tz = camera_points(points_world, target.pose, K)
    return cov, suv, tuv, sz, tz


def annotate_pair(points_world, source: ViewSample, target: ViewSample, K: CameraIntrinsics,
                  task: str, seed: int, tau: float = DEFAULT_TAU,
                  occlusion_tol: float = DEFAULT_OCCLUSION_TOL, **frame_info) -> VqaInstance | None:
    """One VQA instance for a frame pair, or ``None`` when no keypoint qualifies."""
    cov, suv, tuv, sz, tz = covisible_projections(points_world, source, target, K, occlusion_tol)
    ss = np.random.SeedSequence(seed).spawn(2)
    pick_seed = int(ss[0].generate_state(1)[0])
    q_seed = int(ss[1].generate_state(1)[0])
    if task == OBJECT:
        kp = select_keypoint(cov, suv, tuv, pick_seed, sz, tz)
        if kp is None:
            return None
        return gen_question(kp, OBJECT, q_seed, **frame_info)
    pair = select_keypoint_pair(cov, suv, tuv, tau, pick_seed, sz, tz)
    if pair is None:
        return None
    return gen_question(pair, task, q_seed, **frame_info)
