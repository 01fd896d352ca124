"""Localization accuracy and baseline-vs-class experiments.

A query succeeds at threshold ``t`` when its position error is strictly
below ``t``. Failed localizations carry an infinite error and stay in the
denominator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from poleloc.classing import KMeansModel, KMeansParams, kmeans_fit
from poleloc.errors import InvalidArgumentError, NoHypothesisError, ParseError
from poleloc.geometry import Point2, Pose2, normalize_angle
from poleloc.matcher import MODES, RansacParams, ransac_localize
from poleloc.polemap import (
    DEFAULT_BIN_WIDTH,
    DEFAULT_MAX_DISTANCE,
    DistanceTable,
    PoleMap,
    build_distance_table,
)
from poleloc.synth import ObservationSpec, WorldSpec, distractor_hull, generate_world, observe, sample_poses

DEFAULT_THRESHOLDS = (5.0, 1.0)
TRAJECTORY_HEADER = "query_id,mode,x_true,y_true,x_pred,y_pred,error,score"


@dataclass(frozen=True)
class EvalRecord:
    query_id: int
    mode: str
    ground_truth: Point2
    predicted: Point2 | None  # None for a failed query
    score: int = -1
    heading_error: float = math.nan

    @property
    def error(self) -> float:
        if self.predicted is None or not all(map(math.isfinite, self.predicted)):
            return math.inf
        return self.predicted.distance(self.ground_truth)


def accuracy(records, threshold: float) -> float:
    records = list(records)
    if not records:
        raise InvalidArgumentError("accuracy of an empty record set is undefined")
    hits = sum(1 for r in records if r.error < threshold)
    return 100.0 * hits / len(records)


@dataclass(frozen=True)
class ThresholdResult:
    threshold: float
    success: int
    total: int

    @property
    def accuracy(self) -> float:
        return 100.0 * self.success / self.total


@dataclass
class AccuracyReport:
    thresholds: tuple
    results: dict = field(default_factory=dict)  # mode -> [ThresholdResult]

    @classmethod
    def from_records(cls, records, thresholds=DEFAULT_THRESHOLDS) -> "AccuracyReport":
        by_mode = {}
        for r in records:
            by_mode.setdefault(r.mode, []).append(r)
        if not by_mode:
            raise InvalidArgumentError("no records")
        rep = cls(tuple(float(t) for t in thresholds))
        for mode in sorted(by_mode, key=_mode_order):
            recs = by_mode[mode]
            rep.results[mode] = [
                ThresholdResult(t, sum(1 for r in recs if r.error < t), len(recs)) for t in rep.thresholds
            ]
        return rep

    def accuracy(self, mode: str, threshold: float) -> float:
        for tr in self.results[mode]:
            if tr.threshold == threshold:
                return tr.accuracy
        raise KeyError(threshold)

    def summary_text(self) -> str:
        lines = []
        for mode, rows in self.results.items():
            for tr in rows:
                key = f"{mode}.{_tlabel(tr.threshold)}"
                lines.append(f"{key}.success: {tr.success}")
                lines.append(f"{key}.total: {tr.total}")
                lines.append(f"{key}.accuracy: {tr.accuracy:.2f}")
        return "\n".join(lines) + "\n"

    def table_csv(self, dataset: str = "synthetic") -> str:
        """One row per dataset; per threshold an Ours (class) and a Baseline column."""
        ours = "class_gated" if "class_gated" in self.results else (
            "class_literal" if "class_literal" in self.results else None)
        cols, vals = ["dataset"], [dataset]
        for t in self.thresholds:
            for label, mode in (("ours", ours), ("baseline", "baseline")):
                if mode is None or mode not in self.results:
                    continue
                cols.append(f"{label}_{_tlabel(t)}")
                vals.append(f"{self.accuracy(mode, t):.2f}")
        return ",".join(cols) + "\n" + ",".join(vals) + "\n"


def _mode_order(mode):
    return MODES.index(mode) if mode in MODES else len(MODES)


def _tlabel(t: float) -> str:
    return f"{t:g}m"


# ---------------------------------------------------------------- experiments


def localize_query(local, global_map, table, params: RansacParams, truth: Pose2, query_id: int) -> EvalRecord:
    gt = Point2(truth.tx, truth.ty)
    try:
        res = ransac_localize(local, global_map, table, params)
    except NoHypothesisError:
        return EvalRecord(query_id, params.mode, gt, None)
    pose = res.best.pose
    return EvalRecord(
        query_id,
        params.mode,
        gt,
        Point2(pose.tx, pose.ty),
        res.best.score,
        abs(normalize_angle(pose.theta - truth.theta)),
    )


def classify_map(pmap: PoleMap, model: KMeansModel) -> PoleMap:
    if len(pmap) == 0:
        return pmap
    return pmap.with_classes(model.predict(pmap.descriptors()))


def run_experiment(
    global_map: PoleMap,
    queries,
    params_by_mode: dict,
    model: KMeansModel | None = None,
    table: DistanceTable | None = None,
    thresholds=DEFAULT_THRESHOLDS,
):
    """Localize every query in every mode.

    ``queries`` is a list of ObservationSpec (the true pose lives in each
    spec) or of ready-made ``(true_pose, local PoleMap)`` pairs. Local
    poles are classed with ``model`` when given. Returns (report, records).
    """
    queries = list(queries)
    if not queries:
        raise InvalidArgumentError("no queries")
    if not params_by_mode:
        raise InvalidArgumentError("no matcher modes")
    if table is None:
        table = build_distance_table(global_map)
    records = []
    for qid, q in enumerate(queries):
        if isinstance(q, ObservationSpec):
            truth, local = q.true_pose, observe(global_map, q)
        else:
            truth, local = q
        if model is not None:
            local = classify_map(local, model)
        for mode, params in params_by_mode.items():
            if params.mode != mode:
                raise InvalidArgumentError(f"params for {mode!r} carry mode {params.mode!r}")
            records.append(localize_query(local, global_map, table, params, truth, qid))
    return AccuracyReport.from_records(records, thresholds), records


# ---------------------------------------------------------------- per-query CSV


def _f(v: float) -> str:
    return repr(float(v))


def write_records(records, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(TRAJECTORY_HEADER + "\n")
        for r in records:
            px, py = r.predicted if r.predicted is not None else (math.nan, math.nan)
            fh.write(
                f"{r.query_id},{r.mode},{_f(r.ground_truth.x)},{_f(r.ground_truth.y)},"
                f"{_f(px)},{_f(py)},{_f(r.error)},{r.score}\n"
            )


def read_records(path) -> list:
    """Load a per-query CSV. Errors are recomputed from the coordinates."""
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or lines[0].strip() != TRAJECTORY_HEADER:
        raise ParseError(f"expected header {TRAJECTORY_HEADER!r}", line=1, path=path)
    out = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 8:
            raise ParseError(f"expected 8 fields, got {len(parts)}", line=lineno, path=path)
        try:
            qid, mode = int(parts[0]), parts[1]
            xt, yt, xp, yp = (float(v) for v in parts[2:6])
            score = int(parts[7])
        except ValueError as exc:
            raise ParseError(str(exc), line=lineno, path=path) from None
        pred = Point2(xp, yp) if math.isfinite(xp) and math.isfinite(yp) else None
        out.append(EvalRecord(qid, mode, Point2(xt, yt), pred, score))
    return out


def accuracy_matrix(records, thresholds=DEFAULT_THRESHOLDS) -> np.ndarray:
    """(modes x thresholds) accuracy array in MODES order, for quick comparisons."""
    rep = AccuracyReport.from_records(records, thresholds)
    return np.array([[tr.accuracy for tr in rows] for rows in rep.results.values()])


# ---------------------------------------------------------------- seeded synthetic runs

SEED_WORLD, SEED_CLUSTER, SEED_QUERIES, SEED_OBSERVE, SEED_RANSAC = 0, 1, 2, 3, 4


@dataclass
class SyntheticSetup:
    world: WorldSpec
    observation: ObservationSpec  # template; true_pose and seed are filled per query
    query_count: int = 200
    query_margin: float = 20.0
    kmeans: KMeansParams = field(default_factory=lambda: KMeansParams(k=4))
    ransac: RansacParams = field(default_factory=RansacParams)
    modes: tuple = ("baseline", "class_gated")
    bin_width: float = DEFAULT_BIN_WIDTH
    max_distance: float = DEFAULT_MAX_DISTANCE
    thresholds: tuple = DEFAULT_THRESHOLDS
    seed: int = 0


@dataclass
class SyntheticRun:
    global_map: PoleMap  # classed
    true_types: np.ndarray
    model: KMeansModel
    queries: list  # ObservationSpec per query
    report: AccuracyReport
    records: list


def build_synthetic(setup: SyntheticSetup):
    """World, classed global map, k-means model and per-query specs from one seed."""
    seed = setup.seed
    world = replace(setup.world, seed=seed + SEED_WORLD)
    gmap, types = generate_world(world)
    k = min(setup.kmeans.k, len(gmap))
    fit = kmeans_fit(gmap.descriptors(), replace(setup.kmeans, k=k, seed=seed + SEED_CLUSTER))
    gmap = gmap.with_classes(fit.labels)
    hull = setup.observation.distractor_hull or distractor_hull(world)
    poses = sample_poses(world.extent, setup.query_count, seed + SEED_QUERIES, setup.query_margin)
    obs_seed = (seed + SEED_OBSERVE) * 1_000_003
    queries = [
        replace(setup.observation, true_pose=p, seed=obs_seed + q, distractor_hull=hull)
        for q, p in enumerate(poses)
    ]
    return gmap, types, fit.model, queries


def run_synthetic(setup: SyntheticSetup) -> SyntheticRun:
    gmap, types, model, queries = build_synthetic(setup)
    table = build_distance_table(gmap, setup.bin_width, setup.max_distance, setup.ransac.min_separation)
    params = {
        m: replace(setup.ransac, mode=m, seed=setup.seed + SEED_RANSAC) for m in setup.modes
    }
    report, records = run_experiment(gmap, queries, params, model=model, table=table, thresholds=setup.thresholds)
    return SyntheticRun(gmap, types, model, queries, report, records)
