"""Pole maps, the pairwise-distance lookup table and the map CSV format."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from poleloc.errors import InvalidArgumentError, ParseError, ValidationError
from poleloc.geometry import Point2, Pose2

DEFAULT_BIN_WIDTH = 0.5
DEFAULT_MAX_DISTANCE = 60.0
MIN_PAIR_SEPARATION = 1.0


@dataclass(frozen=True)
class Pole:
    id: int
    center: Point2
    width: float
    class_id: int | None = None
    descriptor: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "center", Point2(float(self.center[0]), float(self.center[1])))
        if not (math.isfinite(self.center.x) and math.isfinite(self.center.y)):
            raise ValidationError(f"pole {self.id}: non-finite center")
        if not self.width > 0:
            raise ValidationError(f"pole {self.id}: width must be > 0")
        if self.descriptor is not None:
            object.__setattr__(self, "descriptor", tuple(float(v) for v in self.descriptor))


@dataclass
class PoleMap:
    poles: list = field(default_factory=list)
    frame: str = "global"

    def __post_init__(self):
        if self.frame not in ("global", "local"):
            raise InvalidArgumentError(f"frame must be 'global' or 'local', got {self.frame!r}")
        seen = set()
        for p in self.poles:
            if p.id in seen:
                raise ValidationError(f"duplicate pole id {p.id}")
            seen.add(p.id)
        self.poles = list(self.poles)
        self._xy = None

    def __len__(self):
        return len(self.poles)

    def __iter__(self):
        return iter(self.poles)

    @property
    def xy(self) -> np.ndarray:
        if self._xy is None or len(self._xy) != len(self.poles):
            self._xy = np.array([[p.center.x, p.center.y] for p in self.poles], dtype=float).reshape(-1, 2)
        return self._xy

    @property
    def ids(self) -> np.ndarray:
        return np.array([p.id for p in self.poles], dtype=np.int64)

    def classes(self) -> np.ndarray:
        """Class ids as an int array; raises if any pole is unclassified."""
        missing = [p.id for p in self.poles if p.class_id is None]
        if missing:
            raise InvalidArgumentError(f"poles without class_id: {missing[:5]}")
        return np.array([p.class_id for p in self.poles], dtype=np.int64)

    def descriptors(self) -> np.ndarray:
        missing = [p.id for p in self.poles if p.descriptor is None]
        if missing:
            raise InvalidArgumentError(f"poles without descriptor: {missing[:5]}")
        return np.array([p.descriptor for p in self.poles], dtype=float).reshape(len(self.poles), -1)

    def with_classes(self, classes) -> "PoleMap":
        poles = [
            Pole(p.id, p.center, p.width, int(c), p.descriptor) for p, c in zip(self.poles, classes)
        ]
        return PoleMap(poles, self.frame)

    def transformed(self, pose: Pose2, frame: str | None = None) -> "PoleMap":
        xy = pose.apply_points(self.xy)
        poles = [
            Pole(p.id, Point2(*xy[i]), p.width, p.class_id, p.descriptor)
            for i, p in enumerate(self.poles)
        ]
        return PoleMap(poles, frame or self.frame)

    def __eq__(self, other):
        if not isinstance(other, PoleMap):
            return NotImplemented
        return self.frame == other.frame and self.poles == other.poles


@dataclass
class DistanceTable:
    """Quantized pair distance -> ordered pole pairs (i, j), i != j.

    Pair (i, j) with distance d lives in bin ``floor(d / bin_width)``. Pairs
    are stored contiguously, sorted by (bin, i, j), with ``offsets[b]``
    marking where bin ``b`` starts. Pairs are row indices into the source
    map; ``ids`` maps them back to pole ids.
    """

    bin_width: float
    max_distance: float
    min_separation: float
    pairs: np.ndarray  # (m, 2) int64
    distances: np.ndarray  # (m,)
    offsets: np.ndarray  # (n_bins + 1,)
    ids: np.ndarray

    def __len__(self):
        return len(self.distances)

    @property
    def bins(self) -> dict:
        """Non-empty bins as {bin: (pairs, distances)} views."""
        out = {}
        for b in np.flatnonzero(np.diff(self.offsets)).tolist():
            s, e = self.offsets[b], self.offsets[b + 1]
            out[b] = (self.pairs[s:e], self.distances[s:e])
        return out

    def query_indices(self, d: float, tol: float) -> tuple[np.ndarray, np.ndarray]:
        """Row-index pairs with true distance in [d - tol, d + tol], sorted by (i, j)."""
        lo, hi = d - tol, d + tol
        nb = len(self.offsets) - 1
        b0 = max(0, int(math.floor(lo / self.bin_width)))
        b1 = min(nb - 1, int(math.floor(hi / self.bin_width)))
        if b1 < b0:
            return np.empty((0, 2), np.int64), np.empty(0)
        s, e = self.offsets[b0], self.offsets[b1 + 1]
        dist = self.distances[s:e]
        keep = (dist >= lo) & (dist <= hi)
        pairs, dist = self.pairs[s:e][keep], dist[keep]
        if b1 > b0 and len(dist) > 1:
            order = np.lexsort((pairs[:, 1], pairs[:, 0]))
            pairs, dist = pairs[order], dist[order]
        return pairs, dist

    def query_many(self, ds: np.ndarray, tol: float):
        """Batched query_indices.

        Returns (group, pairs): ``group[k]`` is the position in ``ds`` that
        produced ``pairs[k]``; rows are ordered by group, then (i, j).
        """
        ds = np.asarray(ds, dtype=float)
        nb = len(self.offsets) - 1
        if nb == 0 or len(ds) == 0:
            return np.empty(0, np.int64), np.empty((0, 2), np.int64)
        lo, hi = ds - tol, ds + tol
        b0 = np.clip(np.floor(lo / self.bin_width), 0, nb).astype(np.int64)
        b1 = np.clip(np.floor(hi / self.bin_width) + 1, 0, nb).astype(np.int64)
        starts, ends = self.offsets[b0], self.offsets[np.maximum(b1, b0)]
        lens = ends - starts
        group = np.repeat(np.arange(len(ds)), lens)
        pos = np.arange(lens.sum()) - np.repeat(np.cumsum(lens) - lens, lens) + np.repeat(starts, lens)
        dist = self.distances[pos]
        keep = (dist >= lo[group]) & (dist <= hi[group])
        group, pos = group[keep], pos[keep]
        pairs = self.pairs[pos]
        # slices are sorted per bin already; a stable sort on one key merges the runs cheaply
        P = np.int64(len(self.ids))
        key = (group * P + pairs[:, 0]) * P + pairs[:, 1]
        order = np.argsort(key, kind="stable")
        return group[order], pairs[order]


def build_distance_table(
    pmap: PoleMap,
    bin_width: float = DEFAULT_BIN_WIDTH,
    max_distance: float = DEFAULT_MAX_DISTANCE,
    min_separation: float = MIN_PAIR_SEPARATION,
) -> DistanceTable:
    if not bin_width > 0:
        raise InvalidArgumentError("bin_width must be > 0")
    if pmap.frame != "global":
        raise InvalidArgumentError("distance tables are built from global maps")
    xy = pmap.xy
    P = len(xy)
    ii = jj = np.empty(0, np.int64)
    d = np.empty(0)
    if P >= 2:
        ii, jj = np.nonzero(~np.eye(P, dtype=bool))
        d = np.hypot(xy[jj, 0] - xy[ii, 0], xy[jj, 1] - xy[ii, 1])
        keep = (d > min_separation) & (d <= max_distance)
        ii, jj, d = ii[keep], jj[keep], d[keep]
    b = np.floor(d / bin_width).astype(np.int64)
    order = np.lexsort((jj, ii, b))
    ii, jj, d, b = ii[order], jj[order], d[order], b[order]
    n_bins = int(b.max()) + 1 if len(b) else 0
    offsets = np.searchsorted(b, np.arange(n_bins + 1), side="left").astype(np.int64)
    pairs = np.stack([ii, jj], axis=1).astype(np.int64).reshape(-1, 2)
    return DistanceTable(bin_width, max_distance, min_separation, pairs, d, offsets, pmap.ids)


def query_pairs(table: DistanceTable, d: float, tol: float) -> list[tuple[int, int]]:
    """Ordered pole-id pairs whose distance lies within ``tol`` of ``d``."""
    if d < 0 or tol < 0:
        raise InvalidArgumentError("d and tol must be >= 0")
    pairs, _ = table.query_indices(d, tol)
    ids = table.ids
    return [(int(ids[i]), int(ids[j])) for i, j in pairs.tolist()]


def save_table(table: DistanceTable, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("bin,id_i,id_j,distance\n")
        for b, (pairs, dist) in sorted(table.bins.items()):
            for (i, j), dd in zip(pairs.tolist(), dist.tolist()):
                fh.write(f"{b},{table.ids[i]},{table.ids[j]},{dd!r}\n")


# ---------------------------------------------------------------- map CSV


def _fmt(v: float) -> str:
    return repr(float(v))


def save_map(pmap: PoleMap, path) -> None:
    D = 0
    for p in pmap.poles:
        if p.descriptor is not None:
            D = len(p.descriptor)
            break
    header = ["id", "x", "y", "width", "class"] + [f"d{i}" for i in range(D)]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for p in pmap.poles:
            row = [str(p.id), _fmt(p.center.x), _fmt(p.center.y), _fmt(p.width)]
            row.append("" if p.class_id is None else str(p.class_id))
            if D:
                if p.descriptor is None or len(p.descriptor) != D:
                    raise ValidationError(f"pole {p.id}: descriptor length differs from D={D}")
                row += [_fmt(v) for v in p.descriptor]
            fh.write(",".join(row) + "\n")


def load_map(path, frame: str = "global") -> PoleMap:
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ParseError("empty file, expected header", line=1, path=path)
    header = [h.strip() for h in lines[0].split(",")]
    if header[:5] != ["id", "x", "y", "width", "class"]:
        raise ParseError("header must start with id,x,y,width,class", line=1, path=path)
    D = len(header) - 5
    if header[5:] != [f"d{i}" for i in range(D)]:
        raise ParseError("descriptor columns must be d0..d{D-1}", line=1, path=path)

    poles, seen = [], set()
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != len(header):
            raise ParseError(f"expected {len(header)} fields, got {len(parts)}", line=lineno, path=path)
        try:
            pid = int(parts[0])
            x, y, w = float(parts[1]), float(parts[2]), float(parts[3])
            cls = int(parts[4]) if parts[4].strip() else None
            desc = tuple(float(v) for v in parts[5:]) if D else None
        except ValueError as exc:
            raise ParseError(f"bad field ({exc})", line=lineno, path=path) from None
        vals = (x, y, w) + (desc or ())
        if not all(math.isfinite(v) for v in vals):
            raise ParseError("non-finite value", line=lineno, path=path)
        if pid in seen:
            raise ValidationError(f"{path}:{lineno}: duplicate pole id {pid}")
        if not w > 0:
            raise ParseError(f"width must be > 0, got {w}", line=lineno, path=path)
        seen.add(pid)
        poles.append(Pole(pid, Point2(x, y), w, cls, desc))
    return PoleMap(poles, frame)
