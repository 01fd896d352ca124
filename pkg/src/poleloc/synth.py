"""Synthetic pole worlds, observations and a brute-force localization oracle."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from poleloc.errors import CapacityError, InvalidArgumentError, NoHypothesisError
from poleloc.geometry import IDENTITY, Point2, Pose2, inverse
from poleloc.matcher import Hypothesis, MatchResult, RansacParams, estimate_transform
from poleloc.polemap import DEFAULT_MAX_DISTANCE, Pole, PoleMap

MAX_PLACEMENT_ATTEMPTS = 10_000
ORACLE_MAX_LOCAL = 12
ORACLE_MAX_GLOBAL = 40


@dataclass(frozen=True)
class PoleType:
    height: float
    width: float
    sigma: float = 0.05  # descriptor noise


DEFAULT_TYPES = (
    PoleType(2.0, 0.2, 0.05),
    PoleType(3.5, 0.35, 0.05),
    PoleType(6.0, 0.6, 0.05),
    PoleType(9.0, 0.25, 0.05),
)


@dataclass(frozen=True)
class WorldSpec:
    extent: tuple = (200.0, 200.0)
    pole_count: int = 300
    type_count: int = 4
    types: tuple = DEFAULT_TYPES
    min_separation: float = 3.0
    seed: int = 0
    slice_count: int = 10
    min_height: float = 1.5

    def __post_init__(self):
        if self.pole_count < 0:
            raise InvalidArgumentError("pole_count must be >= 0")
        if not self.min_separation > 0:
            raise InvalidArgumentError("min_separation must be > 0")
        if self.type_count < 1:
            raise InvalidArgumentError("type_count must be >= 1")
        if len(self.types) < self.type_count:
            raise InvalidArgumentError(f"{self.type_count} types requested, {len(self.types)} defined")

    @property
    def active_types(self) -> tuple:
        return tuple(self.types[: self.type_count])


@dataclass(frozen=True)
class ObservationSpec:
    sensor_range: float = 30.0
    noise_sigma: float = 0.0
    dropout: float = 0.0
    distractors: int = 0
    true_pose: Pose2 = IDENTITY
    seed: int = 0
    descriptor_noise: float = 0.0
    distractor_hull: tuple | None = None  # (vertices, pad) from distractor_hull()
    distractor_width: float = 0.3

    def __post_init__(self):
        if not self.sensor_range > 0:
            raise InvalidArgumentError("sensor_range must be > 0")
        if not 0.0 <= self.dropout <= 1.0:
            raise InvalidArgumentError("dropout must be in [0, 1]")
        if self.noise_sigma < 0 or self.descriptor_noise < 0:
            raise InvalidArgumentError("noise must be >= 0")
        if self.distractors < 0:
            raise InvalidArgumentError("distractors must be >= 0")


def type_descriptor(height: float, width: float, slice_count: int = 10, min_height: float = 1.5) -> np.ndarray:
    """Noise-free descriptor of an ideal solid cylinder (same layout as extraction)."""
    S = slice_count
    slice_h = 2.0 * min_height / S
    desc = np.zeros(2 * S + 2)
    for s in range(S):
        filled = min(max(height - s * slice_h, 0.0), slice_h) / slice_h
        desc[s] = filled
        desc[S + s] = 0.5 * width if filled > 0 else 0.0
    desc[2 * S] = height
    desc[2 * S + 1] = width
    return desc


def distractor_hull(spec: WorldSpec) -> tuple:
    """Type descriptor means (hull vertices) and a padding of 3 sigma."""
    means = np.array([type_descriptor(t.height, t.width, spec.slice_count, spec.min_height) for t in spec.active_types])
    return means, 3.0 * max(t.sigma for t in spec.active_types)


def sample_hull(rng, vertices, pad: float) -> np.ndarray:
    """One point of conv(vertices) plus a uniform offset in [-pad, pad] per axis.

    Flat Dirichlet weights are uniform on the simplex when the vertices
    are affinely independent, which holds for a handful of type means.
    """
    vertices = np.asarray(vertices, dtype=float)
    w = rng.dirichlet(np.ones(len(vertices)))
    return w @ vertices + rng.uniform(-pad, pad, size=vertices.shape[1])


def generate_world(spec: WorldSpec):
    """Place poles by rejection sampling. Returns (global PoleMap, true type per pole)."""
    rng = np.random.default_rng(spec.seed)
    W, H = spec.extent
    types = spec.active_types
    means = [type_descriptor(t.height, t.width, spec.slice_count, spec.min_height) for t in types]
    placed = np.empty((spec.pole_count, 2))
    min_sep2 = spec.min_separation ** 2
    for i in range(spec.pole_count):
        for _ in range(MAX_PLACEMENT_ATTEMPTS):
            cand = rng.uniform((0.0, 0.0), (W, H))
            if i == 0 or ((placed[:i] - cand) ** 2).sum(axis=1).min() >= min_sep2:
                placed[i] = cand
                break
        else:
            raise CapacityError(
                f"could not place pole {i} of {spec.pole_count} at separation {spec.min_separation} "
                f"in {W}x{H} after {MAX_PLACEMENT_ATTEMPTS} attempts"
            )
    labels = rng.integers(0, len(types), size=spec.pole_count)
    poles = []
    for i in range(spec.pole_count):
        t = types[labels[i]]
        desc = means[labels[i]] + rng.normal(0.0, t.sigma, size=len(means[0]))
        poles.append(Pole(i, Point2(*placed[i]), t.width, None, tuple(desc)))
    return PoleMap(poles, "global"), labels


def observe(global_map: PoleMap, spec: ObservationSpec) -> PoleMap:
    """Local map seen from ``spec.true_pose``, in the sensor frame.

    True observations keep their global id; distractors get fresh ids above it.
    """
    rng = np.random.default_rng(spec.seed)
    pose = spec.true_pose
    xy = global_map.xy
    if len(xy):
        rng_mask = np.hypot(xy[:, 0] - pose.tx, xy[:, 1] - pose.ty) <= spec.sensor_range
    else:
        rng_mask = np.zeros(0, dtype=bool)
    idx = np.flatnonzero(rng_mask)
    local_xy = inverse(pose).apply_points(xy[idx]) if len(idx) else np.empty((0, 2))
    local_xy = local_xy + rng.normal(0.0, 1.0, size=local_xy.shape) * spec.noise_sigma
    keep = rng.random(len(idx)) >= spec.dropout

    poles = []
    for k in np.flatnonzero(keep):
        src = global_map.poles[idx[k]]
        desc = src.descriptor
        if desc is not None and spec.descriptor_noise > 0:
            desc = np.asarray(desc) + rng.normal(0.0, spec.descriptor_noise, size=len(desc))
        poles.append(Pole(src.id, Point2(*local_xy[k]), src.width, None, desc))

    next_id = (max((p.id for p in global_map.poles), default=-1)) + 1
    if spec.distractors:
        hull = spec.distractor_hull
        box = None
        if hull is None and len(global_map) and global_map.poles[0].descriptor is not None:
            D = global_map.descriptors()
            box = (D.min(axis=0), D.max(axis=0))
        r_max = spec.sensor_range if math.isfinite(spec.sensor_range) else 50.0
        for i in range(spec.distractors):
            rad = r_max * math.sqrt(rng.random())
            ang = rng.uniform(-math.pi, math.pi)
            desc = None
            if hull is not None:
                desc = sample_hull(rng, *hull)
            elif box is not None:
                lo, hi = (np.asarray(b, dtype=float) for b in box)
                desc = rng.uniform(lo, hi)
            poles.append(
                Pole(next_id + i, Point2(rad * math.cos(ang), rad * math.sin(ang)), spec.distractor_width, None, desc)
            )
    return PoleMap(poles, "local")


def sample_poses(extent, count: int, seed: int, margin: float = 0.0) -> list:
    rng = np.random.default_rng(seed)
    W, H = extent
    out = []
    for _ in range(count):
        x = rng.uniform(margin, W - margin)
        y = rng.uniform(margin, H - margin)
        out.append(Pose2(x, y, rng.uniform(-math.pi, math.pi)))
    return out


# ---------------------------------------------------------------- clouds for extraction


def column_cloud(
    centers,
    widths,
    heights,
    voxel_size: float = 0.2,
    points_per_voxel: int = 3,
    seed: int = 0,
    ground: tuple | None = None,
    ground_density: float = 2.0,
) -> np.ndarray:
    """Voxel-aligned point columns standing on z = 0.

    Each column fills the voxels whose centers lie inside its disk (at
    least the voxel holding the center). ``ground`` = (xmin, ymin, xmax,
    ymax) adds a thin floor of points in z in [0, 0.1).
    """
    rng = np.random.default_rng(seed)
    vs = voxel_size
    chunks = []
    for (cx, cy), w, h in zip(centers, widths, heights):
        r = 0.5 * w
        i0, i1 = int(math.floor((cx - r) / vs)), int(math.floor((cx + r) / vs))
        j0, j1 = int(math.floor((cy - r) / vs)), int(math.floor((cy + r) / vs))
        cells = [
            (i, j)
            for i in range(i0, i1 + 1)
            for j in range(j0, j1 + 1)
            if math.hypot((i + 0.5) * vs - cx, (j + 0.5) * vs - cy) <= r
        ]
        if not cells:
            cells = [(int(math.floor(cx / vs)), int(math.floor(cy / vs)))]
        layers = max(1, int(round(h / vs)))
        cells = np.array(cells, dtype=float)
        kk = np.arange(layers, dtype=float)
        vox = np.array([(i, j, k) for i, j in cells for k in kk])
        vox = np.repeat(vox, points_per_voxel, axis=0)
        # keep points off voxel faces so binning is unambiguous
        jitter = rng.uniform(0.05, 0.95, size=vox.shape)
        chunks.append((vox + jitter) * vs)
    if ground is not None:
        xmin, ymin, xmax, ymax = ground
        n = int(ground_density * (xmax - xmin) * (ymax - ymin))
        g = np.column_stack(
            [rng.uniform(xmin, xmax, n), rng.uniform(ymin, ymax, n), rng.uniform(0.0, 0.1, n)]
        )
        chunks.append(g)
    if not chunks:
        return np.empty((0, 3))
    return np.concatenate(chunks)


def wall_cloud(start, end, height: float, voxel_size: float = 0.2, points_per_voxel: int = 3, seed: int = 0):
    """A one-voxel-thick vertical wall from ``start`` to ``end`` (xy)."""
    rng = np.random.default_rng(seed)
    (x0, y0), (x1, y1) = start, end
    length = math.hypot(x1 - x0, y1 - y0)
    steps = max(1, int(math.ceil(length / (0.5 * voxel_size))))
    t = np.linspace(0.0, 1.0, steps + 1)
    cells = np.unique(
        np.floor(np.column_stack([x0 + t * (x1 - x0), y0 + t * (y1 - y0)]) / voxel_size).astype(int), axis=0
    )
    layers = max(1, int(round(height / voxel_size)))
    vox = np.array([(i, j, k) for i, j in cells for k in range(layers)], dtype=float)
    vox = np.repeat(vox, points_per_voxel, axis=0)
    return (vox + rng.uniform(0.05, 0.95, size=vox.shape)) * voxel_size


# ---------------------------------------------------------------- oracle


def _brute_scores(theta, tx, ty, lxy, gxy, r2, mode, lcls, gcls):
    """Dense all-pairs scoring; one-to-one by per-global argmin over claimants."""
    c, s = np.cos(theta)[:, None], np.sin(theta)[:, None]
    px = c * lxy[None, :, 0] - s * lxy[None, :, 1] + tx[:, None]
    py = s * lxy[None, :, 0] + c * lxy[None, :, 1] + ty[:, None]
    d2 = (px[:, :, None] - gxy[None, None, :, 0]) ** 2 + (py[:, :, None] - gxy[None, None, :, 1]) ** 2
    H, n, G = d2.shape
    nn = np.argmin(d2, axis=2)  # lowest global index on ties
    nn_d2 = np.take_along_axis(d2, nn[:, :, None], axis=2)[:, :, 0]
    within = nn_d2 <= r2
    claims = np.full((H, n, G), np.inf)
    hh, ll = np.nonzero(within)
    claims[hh, ll, nn[hh, ll]] = nn_d2[hh, ll]
    winner = np.argmin(claims, axis=1)  # (H, G) lowest local index on ties
    claimed_any = np.isfinite(claims.min(axis=1))
    won = np.zeros((H, n), dtype=bool)
    gh, gg = np.nonzero(claimed_any)
    won[gh, winner[gh, gg]] = True
    score = won.sum(axis=1)
    if mode == "class_gated":
        score = score + (won & (gcls[nn] == lcls[None, :])).sum(axis=1)
    elif mode == "class_literal":
        present = np.isin(lcls, gcls)
        score = (won | present[None, :]).sum(axis=1)
    return score, won, nn


def oracle_localize(local: PoleMap, global_map: PoleMap, params: RansacParams,
                    max_distance: float = DEFAULT_MAX_DISTANCE) -> MatchResult:
    """Exhaustive localization: every ordered local pair x every compatible ordered global pair.

    Compatibility is checked directly (no distance table): global separation
    in (min_separation, max_distance] and within ``distance_tol`` of the
    local separation. Hypotheses are enumerated local pair outer, global
    pair inner, both in lexicographic index order.
    """
    if len(local) > ORACLE_MAX_LOCAL or len(global_map) > ORACLE_MAX_GLOBAL:
        raise CapacityError(
            f"oracle limited to {ORACLE_MAX_LOCAL} local / {ORACLE_MAX_GLOBAL} global poles"
        )
    if len(global_map) == 0 or len(local) < 2:
        raise NoHypothesisError("oracle needs >= 2 local poles and a non-empty global map")
    lxy, gxy = local.xy, global_map.xy
    n, G = len(lxy), len(gxy)
    sources, poses = [], []
    any_valid = False
    for a in range(n):
        for b in range(n):
            if a == b:
                continue
            dl = math.dist(lxy[a], lxy[b])
            if dl < params.min_separation:
                continue
            any_valid = True
            for i in range(G):
                for j in range(G):
                    if i == j:
                        continue
                    dg = math.dist(gxy[i], gxy[j])
                    if not (params.min_separation < dg <= max_distance):
                        continue
                    if abs(dg - dl) > params.distance_tol:
                        continue
                    pose = estimate_transform(lxy[a], lxy[b], gxy[i], gxy[j], params.min_separation)
                    sources.append((a, b, i, j))
                    poses.append((pose.theta, pose.tx, pose.ty))
    if not any_valid or not poses:
        raise NoHypothesisError("oracle found no compatible pair")
    P = np.array(poses)
    lcls = gcls = None
    if params.mode != "baseline":
        lcls, gcls = local.classes(), global_map.classes()
    r2 = params.inlier_radius ** 2
    scores = np.concatenate([
        _brute_scores(P[s:s + 512, 0], P[s:s + 512, 1], P[s:s + 512, 2], lxy, gxy, r2, params.mode, lcls, gcls)[0]
        for s in range(0, len(P), 512)
    ])
    k = int(np.argmax(scores))
    a, b, i, j = sources[k]
    _, won, nn = _brute_scores(P[k:k + 1, 0], P[k:k + 1, 1], P[k:k + 1, 2], lxy, gxy, r2, params.mode, lcls, gcls)
    lids, gids = local.ids, global_map.ids
    best = Hypothesis(
        pose=Pose2(P[k, 1], P[k, 2], P[k, 0]),
        score=int(scores[k]),
        source=((int(lids[a]), int(lids[b])), (int(gids[i]), int(gids[j]))),
        index=k,
    )
    inliers = [(int(lids[l]), int(gids[nn[0, l]])) for l in np.flatnonzero(won[0])]
    return MatchResult(best=best, inlier_pairs=inliers, hypotheses_evaluated=len(P))
