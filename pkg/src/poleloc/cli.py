"""Command-line interface.

Subcommands: extract, cluster, build-table, localize, synth, eval.

Parameters come from a flat ``key = value`` config file (``--config``)
and are overridden by flags of the same name, e.g. ``--ransac.inlier_radius 1.5``.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from poleloc import __version__
from poleloc.classing import KMeansParams, assign_class, kmeans_fit, load_model, save_model
from poleloc.errors import InvalidArgumentError, ParseError, PolelocError
from poleloc.evaluation import (
    SyntheticSetup,
    build_synthetic,
    run_synthetic,
    write_records,
)
from poleloc.extraction import ExtractionParams, build_grid, detect_poles, read_cloud
from poleloc.matcher import MODES, RansacParams, ransac_localize
from poleloc.polemap import (
    DEFAULT_BIN_WIDTH,
    DEFAULT_MAX_DISTANCE,
    MIN_PAIR_SEPARATION,
    Pole,
    PoleMap,
    build_distance_table,
    load_map,
    save_map,
    save_table,
)
from poleloc.synth import DEFAULT_TYPES, ObservationSpec, PoleType, WorldSpec, observe

log = logging.getLogger("poleloc")


def _floats(text):
    return tuple(float(v) for v in str(text).split(",") if v.strip())


def _bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _types(text):
    out = []
    for chunk in str(text).split(";"):
        if chunk.strip():
            h, w, s = (float(v) for v in chunk.split(":"))
            out.append(PoleType(h, w, s))
    return tuple(out)


# key -> (parser, default); default None means required
EXTRACT_KEYS = {
    "extract.voxel_size": (float, 0.2),
    "extract.count_threshold": (int, 2),
    "extract.min_height": (float, 1.5),
    "extract.max_width": (float, 0.8),
    "extract.isolation_radius": (float, 1.6),
    "extract.slice_count": (int, 10),
}
CLUSTER_KEYS = {
    "cluster.k": (int, 200),
    "cluster.max_iters": (int, 300),
    "cluster.standardize": (_bool, False),
}
TABLE_KEYS = {
    "table.bin_width": (float, DEFAULT_BIN_WIDTH),
    "table.max_distance": (float, DEFAULT_MAX_DISTANCE),
    "table.min_separation": (float, MIN_PAIR_SEPARATION),
}
RANSAC_KEYS = {
    "ransac.n_input_poles": (int, 20),
    "ransac.inlier_radius": (float, 1.0),
    "ransac.distance_tol": (float, 0.5),
    "ransac.max_hypotheses": (int, 50_000),
}
WORLD_KEYS = {
    "world.extent": (_floats, None),
    "world.pole_count": (int, None),
    "world.type_count": (int, 4),
    "world.types": (_types, DEFAULT_TYPES),
    "world.min_separation": (float, 3.0),
    "obs.sensor_range": (float, None),
    "obs.noise_sigma": (float, 0.0),
    "obs.dropout": (float, 0.0),
    "obs.distractors": (int, 0),
    "obs.descriptor_noise": (float, 0.0),
    "queries.count": (int, None),
    "queries.margin": (float, 0.0),
}
EVAL_KEYS = {
    **WORLD_KEYS,
    **{k: v for k, v in CLUSTER_KEYS.items()},
    "cluster.k": (int, 4),
    **TABLE_KEYS,
    **RANSAC_KEYS,
    "eval.modes": (lambda t: tuple(m.strip() for m in str(t).split(",") if m.strip()), ("baseline", "class_gated")),
    "eval.thresholds": (_floats, (5.0, 1.0)),
    "eval.dataset": (str, "synthetic"),
}


class ConfigError(PolelocError):
    pass


def read_config(path) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    path = Path(path)
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"expected 'key = value', got {raw!r}", line=lineno, path=path)
        key, value = (p.strip() for p in line.split("=", 1))
        out[key] = value
    return out


def resolve(schema: dict, args: argparse.Namespace) -> dict:
    """Merge defaults < config file < flags, parse values, enforce required keys."""
    raw = read_config(args.config) if getattr(args, "config", None) else {}
    for key in schema:
        flag = getattr(args, key, None)
        if flag is not None:
            raw[key] = flag
    out = {}
    for key, (parse, default) in schema.items():
        if key in raw:
            try:
                out[key] = parse(raw[key])
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad value for {key}: {raw[key]!r} ({exc})") from None
        elif default is None:
            raise ConfigError(f"missing config key: {key}")
        else:
            out[key] = default
    return out


def _add_schema_flags(p: argparse.ArgumentParser, schema: dict):
    for key in schema:
        p.add_argument(f"--{key}", dest=key, default=None, metavar="V")


# ---------------------------------------------------------------- subcommands


def _extraction_params(cfg) -> ExtractionParams:
    return ExtractionParams(**{k.split(".", 1)[1]: v for k, v in cfg.items() if k.startswith("extract.")})


def cmd_extract(args) -> int:
    cfg = resolve(EXTRACT_KEYS, args)
    params = _extraction_params(cfg)
    pts = read_cloud(args.cloud)
    detections = []
    drop = 0
    if len(pts):
        if args.bounds:
            b = _floats(args.bounds)
            if len(b) != 6:
                raise InvalidArgumentError("--bounds needs xmin,ymin,zmin,xmax,ymax,zmax")
            bounds = (b[:3], b[3:])
        else:
            pad = params.voxel_size
            bounds = (pts.min(axis=0) - np.array([pad, pad, 0.0]), pts.max(axis=0) + pad)
        grid = build_grid(pts, params, bounds)
        drop = grid.drop_count
        detections = detect_poles(grid, params)
    poles = [Pole(i, d.center, d.width, None, tuple(d.descriptor)) for i, d in enumerate(detections)]
    save_map(PoleMap(poles, "global"), args.out)
    log.info("extract: %d points, %d dropped, %d poles -> %s", len(pts), drop, len(poles), args.out)
    return 0


def cmd_cluster(args) -> int:
    cfg = resolve(CLUSTER_KEYS, args)
    pmap = load_map(args.map)
    params = KMeansParams(
        k=cfg["cluster.k"], seed=args.seed, max_iters=cfg["cluster.max_iters"],
        standardize=cfg["cluster.standardize"],
    )
    if len(pmap) == 0 or params.k > len(pmap):
        raise InvalidArgumentError(f"k={params.k} exceeds the number of poles ({len(pmap)})")
    fit = kmeans_fit(pmap.descriptors(), params)
    save_model(fit.model, args.model)
    save_map(pmap.with_classes(fit.labels), args.out)
    log.info("cluster: k=%d, %d iterations, converged=%s", params.k, fit.n_iter, fit.converged)
    return 0


def cmd_build_table(args) -> int:
    cfg = resolve(TABLE_KEYS, args)
    table = build_distance_table(
        load_map(args.map), cfg["table.bin_width"], cfg["table.max_distance"], cfg["table.min_separation"]
    )
    save_table(table, args.out)
    log.info("build-table: %d ordered pairs -> %s", len(table), args.out)
    return 0


def _classify_if_needed(pmap: PoleMap, model_path) -> PoleMap:
    if all(p.class_id is not None for p in pmap) or model_path is None:
        return pmap
    model = load_model(model_path)
    return pmap.with_classes([assign_class(model, p.descriptor) for p in pmap])


def cmd_localize(args) -> int:
    cfg = resolve({**RANSAC_KEYS, **TABLE_KEYS}, args)
    local = load_map(args.local, frame="local")
    global_map = load_map(args.global_map, frame="global")
    if args.mode != "baseline":
        local = _classify_if_needed(local, args.model)
        global_map = _classify_if_needed(global_map, args.model)
    params = RansacParams(
        n_input_poles=cfg["ransac.n_input_poles"],
        inlier_radius=cfg["ransac.inlier_radius"],
        distance_tol=cfg["ransac.distance_tol"],
        max_hypotheses=cfg["ransac.max_hypotheses"],
        seed=args.seed,
        mode=args.mode,
        min_separation=cfg["table.min_separation"],
    )
    table = build_distance_table(
        global_map, cfg["table.bin_width"], cfg["table.max_distance"], cfg["table.min_separation"]
    )
    res = ransac_localize(local, global_map, table, params)
    p = res.best.pose
    print(f"{p.tx!r},{p.ty!r},{p.theta!r},{res.best.score}")
    log.info("localize: %d hypotheses, %d inliers", res.hypotheses_evaluated, len(res.inlier_pairs))
    return 0


def _setup_from(cfg, seed) -> SyntheticSetup:
    extent = cfg["world.extent"]
    if len(extent) != 2:
        raise ConfigError("world.extent needs two values: width,height")
    world = WorldSpec(
        extent=extent,
        pole_count=cfg["world.pole_count"],
        type_count=cfg["world.type_count"],
        types=cfg["world.types"],
        min_separation=cfg["world.min_separation"],
    )
    obs = ObservationSpec(
        sensor_range=cfg["obs.sensor_range"],
        noise_sigma=cfg["obs.noise_sigma"],
        dropout=cfg["obs.dropout"],
        distractors=cfg["obs.distractors"],
        descriptor_noise=cfg["obs.descriptor_noise"],
    )
    kw = dict(world=world, observation=obs, query_count=cfg["queries.count"],
              query_margin=cfg["queries.margin"], seed=seed)
    if "cluster.k" in cfg:
        kw["kmeans"] = KMeansParams(k=cfg["cluster.k"], max_iters=cfg["cluster.max_iters"],
                                    standardize=cfg["cluster.standardize"])
    if "ransac.n_input_poles" in cfg:
        kw["ransac"] = RansacParams(
            n_input_poles=cfg["ransac.n_input_poles"],
            inlier_radius=cfg["ransac.inlier_radius"],
            distance_tol=cfg["ransac.distance_tol"],
            max_hypotheses=cfg["ransac.max_hypotheses"],
            min_separation=cfg["table.min_separation"],
        )
        kw["bin_width"] = cfg["table.bin_width"]
        kw["max_distance"] = cfg["table.max_distance"]
    if "eval.modes" in cfg:
        bad = [m for m in cfg["eval.modes"] if m not in MODES]
        if bad or not cfg["eval.modes"]:
            raise ConfigError(f"eval.modes must be a subset of {MODES}")
        kw["modes"] = cfg["eval.modes"]
        kw["thresholds"] = cfg["eval.thresholds"]
    return SyntheticSetup(**kw)


def cmd_synth(args) -> int:
    cfg = resolve({**WORLD_KEYS, **CLUSTER_KEYS, "cluster.k": (int, 4)}, args)
    setup = _setup_from(cfg, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    gmap, types, model, queries = build_synthetic(setup)
    save_map(gmap, out / "global.csv")
    save_model(model, out / "model.csv")
    with open(out / "types.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("id,type\n")
        for p, t in zip(gmap, types.tolist()):
            fh.write(f"{p.id},{t}\n")
    with open(out / "queries.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("query_id,tx,ty,theta,local_map\n")
        for q, spec in enumerate(queries):
            name = f"local_{q:04d}.csv"
            local = observe(gmap, spec)
            local = local.with_classes(model.predict(local.descriptors())) if len(local) else local
            save_map(local, out / name)
            p = spec.true_pose
            fh.write(f"{q},{p.tx!r},{p.ty!r},{p.theta!r},{name}\n")
    log.info("synth: %d poles, %d queries -> %s", len(gmap), len(queries), out)
    return 0


def cmd_eval(args) -> int:
    cfg = resolve(EVAL_KEYS, args)
    if args.mode:
        cfg["eval.modes"] = tuple(m.strip() for m in args.mode.split(","))
    if args.thresholds:
        cfg["eval.thresholds"] = _floats(args.thresholds)
    setup = _setup_from(cfg, args.seed)
    run = run_synthetic(setup)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_records(run.records, out / "trajectory.csv")
    (out / "report.txt").write_text(run.report.summary_text(), encoding="utf-8")
    (out / "table.csv").write_text(run.report.table_csv(cfg["eval.dataset"]), encoding="utf-8")
    sys.stdout.write(run.report.summary_text())
    return 0


# ---------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="poleloc", description="Pole-landmark localization toolkit")
    ap.add_argument("--version", action="version", version=f"poleloc {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, schema):
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--seed", type=int, default=0)
        _add_schema_flags(p, schema)

    p = sub.add_parser("extract", help="detect poles in a point cloud")
    p.add_argument("cloud")
    p.add_argument("-o", "--out", required=True)
    p.add_argument("--bounds", help="xmin,ymin,zmin,xmax,ymax,zmax")
    common(p, EXTRACT_KEYS)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("cluster", help="learn pseudo pole classes with k-means")
    p.add_argument("map")
    p.add_argument("-o", "--out", required=True, help="classed map CSV")
    p.add_argument("--model", required=True, help="centroid CSV")
    p.add_argument("--k", dest="cluster.k", default=None)
    common(p, {k: v for k, v in CLUSTER_KEYS.items() if k != "cluster.k"})
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("build-table", help="dump the pairwise distance table")
    p.add_argument("map")
    p.add_argument("-o", "--out", required=True)
    common(p, TABLE_KEYS)
    p.set_defaults(func=cmd_build_table)

    p = sub.add_parser("localize", help="match a local map against a global map")
    p.add_argument("local")
    p.add_argument("global_map", metavar="global")
    p.add_argument("--mode", choices=MODES, default="class_gated")
    p.add_argument("--model", help="centroid CSV used to class unclassed poles")
    common(p, {**RANSAC_KEYS, **TABLE_KEYS})
    p.set_defaults(func=cmd_localize)

    p = sub.add_parser("synth", help="generate a synthetic world and query maps")
    p.add_argument("-o", "--out", required=True, help="output directory")
    common(p, {**WORLD_KEYS, **CLUSTER_KEYS})
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("eval", help="run a seeded synthetic accuracy experiment")
    p.add_argument("-o", "--out", required=True, help="output directory")
    p.add_argument("--mode", help="comma-separated modes (overrides eval.modes)")
    p.add_argument("--thresholds", help="comma-separated meters, e.g. 5,1")
    common(p, {k: v for k, v in EVAL_KEYS.items() if k not in ("eval.modes", "eval.thresholds")})
    p.set_defaults(func=cmd_eval)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except (PolelocError, OSError, ValueError) as exc:
        print(f"poleloc {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
