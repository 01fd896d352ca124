"""RANSAC pole-map matching.

Every ordered pair of selected local poles is looked up in the global
distance table; each compatible global pair yields one rigid hypothesis.
All hypotheses are scored and the best (score, earliest index) wins.

Scoring modes:

* ``baseline``       +1 per local pole whose nearest global pole is within
                     ``inlier_radius``.
* ``class_gated``    as baseline, +1 more when the matched classes agree.
* ``class_literal``  +1 per local pole that is a position inlier OR whose
                     class occurs anywhere in the global map.

A global pole is claimed by at most one local pole; the closest claimant
wins, ties to the lower local index.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from poleloc.errors import DegenerateGeometryError, InvalidArgumentError, NoHypothesisError
from poleloc.geometry import Pose2, normalize_angles
from poleloc.polemap import MIN_PAIR_SEPARATION, DistanceTable, PoleMap

MODES = ("baseline", "class_gated", "class_literal")


@dataclass(frozen=True)
class RansacParams:
    n_input_poles: int = 20
    inlier_radius: float = 1.0
    distance_tol: float = 0.5
    max_hypotheses: int = 50_000
    seed: int = 0
    mode: str = "class_gated"
    min_separation: float = MIN_PAIR_SEPARATION

    def __post_init__(self):
        if self.n_input_poles < 2:
            raise InvalidArgumentError("n_input_poles must be >= 2")
        if not self.inlier_radius > 0:
            raise InvalidArgumentError("inlier_radius must be > 0")
        if self.distance_tol < 0:
            raise InvalidArgumentError("distance_tol must be >= 0")
        if self.max_hypotheses < 1:
            raise InvalidArgumentError("max_hypotheses must be >= 1")
        if self.mode not in MODES:
            raise InvalidArgumentError(f"mode must be one of {MODES}, got {self.mode!r}")


@dataclass(frozen=True)
class Hypothesis:
    pose: Pose2
    score: int
    source: tuple  # ((local_a_id, local_b_id), (global_a_id, global_b_id))
    index: int


@dataclass
class MatchResult:
    best: Hypothesis
    inlier_pairs: list = field(default_factory=list)  # (local id, global id)
    hypotheses_evaluated: int = 0


def estimate_transform(
    local_a, local_b, global_a, global_b, min_separation: float = MIN_PAIR_SEPARATION
) -> Pose2:
    """Rigid pose mapping local_a onto global_a and local_b's direction onto global_b's."""
    lax, lay = local_a
    lbx, lby = local_b
    gax, gay = global_a
    gbx, gby = global_b
    if math.hypot(lbx - lax, lby - lay) < min_separation:
        raise DegenerateGeometryError("local pair closer than the minimum separation")
    theta = math.atan2(gby - gay, gbx - gax) - math.atan2(lby - lay, lbx - lax)
    pose = Pose2(0.0, 0.0, theta)
    c, s = math.cos(pose.theta), math.sin(pose.theta)
    return Pose2(gax - (c * lax - s * lay), gay - (s * lax + c * lay), pose.theta)


def _transforms(la, lb, ga, gb):
    """Vectorized estimate_transform over (H, 2) arrays; returns theta, tx, ty."""
    theta = np.arctan2(gb[:, 1] - ga[:, 1], gb[:, 0] - ga[:, 0]) - np.arctan2(
        lb[:, 1] - la[:, 1], lb[:, 0] - la[:, 0]
    )
    theta = normalize_angles(theta)
    c, s = np.cos(theta), np.sin(theta)
    tx = ga[:, 0] - (c * la[:, 0] - s * la[:, 1])
    ty = ga[:, 1] - (s * la[:, 0] + c * la[:, 1])
    return theta, tx, ty


class GlobalGrid:
    """Uniform grid over a global map with cell = inlier_radius.

    Each cell stores the ascending global indices of its 3x3 neighbourhood,
    so the first minimum found is also the lowest-index one. Points within
    ``radius`` of a query always sit in that neighbourhood.
    """

    def __init__(self, gxy: np.ndarray, radius: float):
        self.gxy = np.ascontiguousarray(gxy, dtype=np.float64)
        self.radius = radius
        self.r2 = radius * radius
        G = len(gxy)
        if G == 0:
            self.origin = np.zeros(2)
            self.shape = (1, 1)
            self.neigh = np.full((2, 1), -1, dtype=np.int64)
            return
        self.origin = gxy.min(axis=0) - radius
        span = gxy.max(axis=0) - self.origin
        nx, ny = (np.floor(span / radius).astype(np.int64) + 2).tolist()
        self.shape = (nx, ny)
        cell = np.floor((gxy - self.origin) / radius).astype(np.int64)
        offs = np.array([(dx, dy) for dx in (-1, 0, 1) for dy in (-1, 0, 1)])
        cc = (cell[:, None, :] + offs[None, :, :]).reshape(-1, 2)
        gg = np.repeat(np.arange(G), len(offs))
        ok = (cc[:, 0] >= 0) & (cc[:, 0] < nx) & (cc[:, 1] >= 0) & (cc[:, 1] < ny)
        flat, gg = cc[ok, 0] * ny + cc[ok, 1], gg[ok]
        order = np.lexsort((gg, flat))
        flat, gg = flat[order], gg[order]
        starts = np.searchsorted(flat, flat, side="left")
        slot = np.arange(len(flat)) - starts
        # last row is the sentinel for points outside the grid
        neigh = np.full((nx * ny + 1, int(slot.max()) + 1), -1, dtype=np.int64)
        neigh[flat, slot] = gg
        self.neigh = neigh

    @classmethod
    def for_map(cls, pmap: PoleMap, radius: float) -> "GlobalGrid":
        cache = pmap.__dict__.setdefault("_grid_cache", {})
        key = (radius, len(pmap))
        if key not in cache:
            cache[key] = cls(pmap.xy, radius)
        return cache[key]


_MODE_CODE = {"baseline": 0, "class_gated": 1, "class_literal": 2}


@njit(cache=True)
def _score_kernel(theta, tx, ty, lxy, gxy, origin, radius, nx, ny, neigh, mode, lcls, gcls, lpresent, claimed_out):
    """Score H poses. ``claimed_out`` (H_out, n) receives claims for the first H_out poses."""
    H = theta.shape[0]
    n = lxy.shape[0]
    M = neigh.shape[1]
    sentinel = nx * ny
    r2 = radius * radius
    scores = np.zeros(H, dtype=np.int64)
    near = np.empty(n, dtype=np.int64)
    near_d2 = np.empty(n)
    owner = np.full(gxy.shape[0], -1, dtype=np.int64)
    for h in range(H):
        c = np.cos(theta[h])
        s = np.sin(theta[h])
        for l in range(n):
            px = c * lxy[l, 0] - s * lxy[l, 1] + tx[h]
            py = s * lxy[l, 0] + c * lxy[l, 1] + ty[h]
            cx = np.floor((px - origin[0]) / radius)
            cy = np.floor((py - origin[1]) / radius)
            cell = sentinel
            if cx >= 0 and cx < nx and cy >= 0 and cy < ny:
                cell = np.int64(cx) * ny + np.int64(cy)
            best = -1
            best_d2 = np.inf
            for m in range(M):
                g = neigh[cell, m]
                if g < 0:
                    break
                dx = gxy[g, 0] - px
                dy = gxy[g, 1] - py
                d2 = dx * dx + dy * dy
                # candidates ascend by index: strict < keeps the lowest index on ties
                if d2 <= r2 and d2 < best_d2:
                    best = g
                    best_d2 = d2
            near[l] = best
            near_d2[l] = best_d2
        # one-to-one: closest claimant wins, lower local index on ties
        for l in range(n):
            g = near[l]
            if g >= 0:
                o = owner[g]
                if o < 0 or near_d2[l] < near_d2[o]:
                    owner[g] = l
        total = 0
        for l in range(n):
            g = near[l]
            won = g >= 0 and owner[g] == l
            if h < claimed_out.shape[0]:
                claimed_out[h, l] = g if won else -1
            if mode == 0:
                total += 1 if won else 0
            elif mode == 1:
                if won:
                    total += 2 if lcls[l] == gcls[g] else 1
            else:
                total += 1 if (won or lpresent[l]) else 0
        for l in range(n):
            if near[l] >= 0:
                owner[near[l]] = -1
        scores[h] = total
    return scores


class _Scorer:
    """Scores batches of poses of one local map against one global map."""

    def __init__(self, local: PoleMap, global_map: PoleMap, params: RansacParams):
        self.local_xy = np.ascontiguousarray(local.xy)
        self.grid = GlobalGrid.for_map(global_map, params.inlier_radius)
        self.mode = _MODE_CODE[params.mode]
        if params.mode == "baseline":
            self.lcls = np.zeros(len(local), dtype=np.int64)
            self.gcls = np.zeros(len(global_map), dtype=np.int64)
        else:
            self.lcls = local.classes()
            self.gcls = global_map.classes()
        self.lpresent = np.isin(self.lcls, self.gcls)

    def _run(self, theta, tx, ty, n_claims=0):
        g = self.grid
        claimed = np.empty((n_claims, len(self.local_xy)), dtype=np.int64)
        scores = _score_kernel(
            np.ascontiguousarray(theta, dtype=np.float64),
            np.ascontiguousarray(tx, dtype=np.float64),
            np.ascontiguousarray(ty, dtype=np.float64),
            self.local_xy, g.gxy, g.origin, float(g.radius), g.shape[0], g.shape[1], g.neigh,
            self.mode, self.lcls, self.gcls, self.lpresent, claimed,
        )
        return scores, claimed

    def score_batch(self, theta, tx, ty) -> np.ndarray:
        return self._run(theta, tx, ty)[0]

    def score_one(self, pose: Pose2):
        scores, claimed = self._run(np.array([pose.theta]), np.array([pose.tx]), np.array([pose.ty]), 1)
        pairs = [(l, int(g)) for l, g in enumerate(claimed[0].tolist()) if g >= 0]
        return int(scores[0]), pairs


def score_hypothesis(pose: Pose2, local: PoleMap, global_map: PoleMap, params: RansacParams):
    """Score one pose. Returns (score, [(local id, global id), ...])."""
    if len(local) == 0:
        return 0, []
    scorer = _Scorer(local, global_map, params)
    score, pairs = scorer.score_one(pose)
    lids, gids = local.ids, global_map.ids
    return score, [(int(lids[l]), int(gids[g])) for l, g in pairs]


def select_input_poles(n_local: int, params: RansacParams) -> np.ndarray:
    if n_local <= params.n_input_poles:
        return np.arange(n_local)
    rng = np.random.default_rng(params.seed)
    return np.sort(rng.choice(n_local, size=params.n_input_poles, replace=False))


def generate_hypotheses(local: PoleMap, table: DistanceTable, params: RansacParams):
    """Hypothesis sources in generation order, truncated at max_hypotheses.

    Local pairs are visited as ``for a in sel: for b in sel``; each one's
    compatible global pairs follow in (i, j) order. Returns (local_a,
    local_b, global_a, global_b) row-index arrays.
    """
    lxy = local.xy
    sel = select_input_poles(len(lxy), params)
    a, b = np.meshgrid(sel, sel, indexing="ij")
    a, b = a.ravel(), b.ravel()
    off = a != b
    a, b = a[off], b[off]
    d = np.hypot(lxy[b, 0] - lxy[a, 0], lxy[b, 1] - lxy[a, 1])
    ok = d >= params.min_separation
    if not ok.any():
        raise NoHypothesisError("local map has no pole pair above the minimum separation")
    a, b, d = a[ok], b[ok], d[ok]
    group, pairs = table.query_many(d, params.distance_tol)
    group, pairs = group[: params.max_hypotheses], pairs[: params.max_hypotheses]
    return a[group], b[group], pairs[:, 0], pairs[:, 1]


def ransac_localize(
    local: PoleMap, global_map: PoleMap, table: DistanceTable, params: RansacParams
) -> MatchResult:
    if len(global_map) == 0:
        raise NoHypothesisError("global map is empty")
    if len(local) < 2:
        raise NoHypothesisError("local map needs at least 2 poles")
    la, lb, ga, gb = generate_hypotheses(local, table, params)
    if len(la) == 0:
        raise NoHypothesisError("no global pair matches any local pair distance")

    lxy, gxy = local.xy, global_map.xy
    theta, tx, ty = _transforms(lxy[la], lxy[lb], gxy[ga], gxy[gb])
    scorer = _Scorer(local, global_map, params)
    scores = scorer.score_batch(theta, tx, ty)
    k = int(np.argmax(scores))  # first maximum = earliest generated

    pose = Pose2(float(tx[k]), float(ty[k]), float(theta[k]))
    score, pairs = scorer.score_one(pose)
    lids, gids = local.ids, global_map.ids
    best = Hypothesis(
        pose=pose,
        score=score,
        source=((int(lids[la[k]]), int(lids[lb[k]])), (int(gids[ga[k]]), int(gids[gb[k]]))),
        index=k,
    )
    return MatchResult(
        best=best,
        inlier_pairs=[(int(lids[l]), int(gids[g])) for l, g in pairs],
        hypotheses_evaluated=len(la),
    )
