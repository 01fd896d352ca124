"""Occupancy-grid pole extraction.

Registered 3D points are binned into a voxel grid of reflection counts.
Voxels at or above ``count_threshold`` are occupied; 26-connected groups
of occupied voxels that are tall, narrow and isolated become poles (see
``detect_poles`` for the exact tests).

Descriptor layout, for ``S = slice_count``::

    [0, S)      occupied fraction per height slice over [0, 2*min_height]
    [S, 2S)     footprint radius per slice (m)
    2S          stack height (m)
    2S + 1      width (m)
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from poleloc.errors import InvalidArgumentError, ParseError
from poleloc.geometry import Point2

GROUND_CLEARANCE = 0.3  # meters above the grid floor ignored during detection
CLOUD_MAGIC = b"POLECLOUD1"
_HEADER_LEN = 16


@dataclass(frozen=True)
class ExtractionParams:
    voxel_size: float = 0.2
    count_threshold: int = 2
    min_height: float = 1.5
    max_width: float = 0.8
    isolation_radius: float = 1.6
    slice_count: int = 10

    def __post_init__(self):
        if not self.voxel_size > 0:
            raise InvalidArgumentError("voxel_size must be > 0")
        if not self.min_height > 0:
            raise InvalidArgumentError("min_height must be > 0")
        if not self.max_width > 0:
            raise InvalidArgumentError("max_width must be > 0")
        if not self.isolation_radius >= self.max_width:
            raise InvalidArgumentError("isolation_radius must be >= max_width")
        if self.slice_count < 1:
            raise InvalidArgumentError("slice_count must be >= 1")
        if self.count_threshold < 0:
            raise InvalidArgumentError("count_threshold must be >= 0")

    @property
    def descriptor_dim(self) -> int:
        return 2 * self.slice_count + 2


@dataclass
class OccupancyGrid:
    origin: np.ndarray  # (3,) lower corner
    voxel_size: float
    counts: np.ndarray  # (nx, ny, nz) int64
    drop_count: int = 0

    @property
    def dims(self) -> tuple:
        return self.counts.shape

    def voxel_center(self, idx) -> np.ndarray:
        return self.origin + (np.asarray(idx, dtype=float) + 0.5) * self.voxel_size


@dataclass(frozen=True)
class PoleDetection:
    center: Point2
    width: float
    descriptor: np.ndarray = field(compare=False)
    height: float = 0.0


def _as_cloud(cloud) -> np.ndarray:
    pts = np.asarray(cloud, dtype=float)
    if pts.size == 0:
        return pts.reshape(0, 3)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise InvalidArgumentError(f"expected (N, 3) points, got shape {pts.shape}")
    if not np.all(np.isfinite(pts)):
        raise InvalidArgumentError("point cloud contains non-finite coordinates")
    return pts


def build_grid(cloud, params: ExtractionParams, bounds) -> OccupancyGrid:
    """Bin points into voxels; out-of-bounds points are dropped and tallied.

    ``bounds`` is ``(lo, hi)`` with ``lo`` and ``hi`` 3-vectors. A point is
    in bounds when its voxel index lies inside the grid, which spans
    ``ceil((hi - lo) / voxel_size)`` voxels along each axis.
    """
    lo, hi = (np.asarray(b, dtype=float).reshape(3) for b in bounds)
    extent = hi - lo
    if not np.all(extent > 0):
        raise InvalidArgumentError(f"degenerate bounds: extent {extent.tolist()}")
    vs = params.voxel_size
    dims = tuple(int(max(1, math.ceil(e / vs - 1e-9))) for e in extent)
    pts = _as_cloud(cloud)

    idx = np.floor((pts - lo) / vs).astype(np.int64)
    inside = np.all((idx >= 0) & (idx < np.array(dims)), axis=1)
    flat = np.ravel_multi_index(idx[inside].T, dims) if inside.any() else np.empty(0, np.int64)
    counts = np.bincount(flat, minlength=int(np.prod(dims))).astype(np.int64).reshape(dims)
    return OccupancyGrid(origin=lo, voxel_size=vs, counts=counts, drop_count=int((~inside).sum()))


def _disk_offsets(radius_cells: float) -> np.ndarray:
    r = int(math.floor(radius_cells + 1e-9))
    ii, jj = np.mgrid[-r : r + 1, -r : r + 1]
    keep = ii * ii + jj * jj <= radius_cells * radius_cells + 1e-9
    return np.stack([ii[keep], jj[keep]], axis=1)


def _footprint_width(cells: np.ndarray, vs: float) -> float:
    """Diameter of a circle enclosing all footprint cells (cell squares included)."""
    centers = (cells + 0.5) * vs
    mid = 0.5 * (centers.min(axis=0) + centers.max(axis=0))
    r = np.sqrt(((centers - mid) ** 2).sum(axis=1)).max()
    return 2.0 * (r + 0.5 * vs)


def compute_descriptor(
    voxels: np.ndarray, grid: OccupancyGrid, params: ExtractionParams, width: float | None = None
) -> np.ndarray:
    """Columnar descriptor of one stack.

    ``voxels`` is the (M, 3) integer index list of the stack's occupied voxels.
    """
    vs = grid.voxel_size
    S = params.slice_count
    k = voxels[:, 2]
    kmin, kmax = int(k.min()), int(k.max())
    footprint = np.unique(voxels[:, :2], axis=0)
    if width is None:
        width = _footprint_width(footprint, vs)
    slice_h = 2.0 * params.min_height / S

    desc = np.zeros(2 * S + 2)
    layer_rel = np.arange(kmax - kmin + 1)
    layer_slice = np.floor((layer_rel + 0.5) * vs / slice_h).astype(int)
    vox_slice = layer_slice[k - kmin]
    for s in range(S):
        layers = int((layer_slice == s).sum())
        if layers == 0:
            continue
        in_s = vox_slice == s
        desc[s] = in_s.sum() / (layers * len(footprint))
        if in_s.any():
            cells = np.unique(voxels[in_s, :2], axis=0)
            desc[S + s] = math.sqrt(len(cells) * vs * vs / math.pi)
    desc[2 * S] = (kmax - kmin + 1) * vs
    desc[2 * S + 1] = width
    return desc


def detect_poles(grid: OccupancyGrid, params: ExtractionParams) -> list[PoleDetection]:
    """Find tall, narrow, isolated stacks of occupied voxels.

    Objects are 26-connected groups of voxels holding any reflection above
    the ground layers. An object becomes a pole when its footprint fits in
    ``max_width``, no other reflecting column lies within
    ``isolation_radius`` of it, and it contains a 26-connected stack of
    occupied voxels (count >= count_threshold) at least ``min_height``
    tall. Only the stack test depends on the count threshold, so raising
    it can only remove detections.

    Detections come back sorted by center (x, y).
    """
    if abs(grid.voxel_size - params.voxel_size) > 1e-12:
        raise InvalidArgumentError("grid voxel_size differs from params.voxel_size")
    vs = grid.voxel_size
    ground_layers = int(math.ceil(GROUND_CLEARANCE / vs - 1e-9))
    counts = grid.counts.copy()
    counts[:, :, :ground_layers] = 0
    occ = counts >= max(params.count_threshold, 1)
    if not occ.any():
        return []

    full = np.ones((3, 3, 3), dtype=bool)
    objects, _ = ndimage.label(counts > 0, structure=full)
    stacks, _ = ndimage.label(occ, structure=full)
    stack_slices = ndimage.find_objects(stacks)
    column_hit = (counts > 0).any(axis=2)
    nx, ny = column_hit.shape
    ring = _disk_offsets(params.isolation_radius / vs)
    min_layers = params.min_height / vs - 1e-9

    # tallest stack per object
    tallest = {}
    for lab, sl in enumerate(stack_slices, start=1):
        if sl is None:
            continue
        layers = sl[2].stop - sl[2].start
        if layers < min_layers:
            continue
        i, j, k = (s.start for s in sl)
        sub = stacks[sl] == lab
        first = np.argwhere(sub)[0] + (i, j, k)
        obj = int(objects[tuple(first)])
        if obj not in tallest or layers > tallest[obj][0]:
            tallest[obj] = (layers, lab, sl)

    obj_slices = ndimage.find_objects(objects)
    out = []
    for obj in sorted(tallest):
        _, lab, sl = tallest[obj]
        osl = obj_slices[obj - 1]
        footprint = np.unique(
            np.argwhere(objects[osl] == obj)[:, :2] + np.array([osl[0].start, osl[1].start]), axis=0
        )
        width = _footprint_width(footprint, vs)
        if width > params.max_width + 1e-9:
            continue

        near = (footprint[:, None, :] + ring[None, :, :]).reshape(-1, 2)
        ok = (near[:, 0] >= 0) & (near[:, 0] < nx) & (near[:, 1] >= 0) & (near[:, 1] < ny)
        near = np.unique(near[ok], axis=0)
        busy = near[column_hit[near[:, 0], near[:, 1]]]
        if len(busy) > len(footprint):
            continue  # footprint columns are always busy; anything more is clutter

        voxels = np.argwhere(stacks[sl] == lab) + np.array([s.start for s in sl])
        w = counts[voxels[:, 0], voxels[:, 1], voxels[:, 2]].astype(float)
        xy = grid.origin[:2] + (voxels[:, :2] + 0.5) * vs
        cx, cy = (w[:, None] * xy).sum(axis=0) / w.sum()
        desc = compute_descriptor(voxels, grid, params, width=width)
        out.append(PoleDetection(Point2(float(cx), float(cy)), width, desc, float(desc[-2])))

    out.sort(key=lambda d: (d.center.x, d.center.y))
    return out


def extract_poles(cloud, params: ExtractionParams | None = None, bounds=None) -> list[PoleDetection]:
    """Grid + detect in one call. Default bounds: cloud bbox padded by one voxel."""
    params = params or ExtractionParams()
    pts = _as_cloud(cloud)
    if len(pts) == 0:
        return []
    if bounds is None:
        pad = params.voxel_size
        lo = pts.min(axis=0) - np.array([pad, pad, 0.0])
        hi = pts.max(axis=0) + pad
        bounds = (lo, hi)
    return detect_poles(build_grid(pts, params, bounds), params)


# ---------------------------------------------------------------- cloud I/O


def read_cloud(path) -> np.ndarray:
    """Read a binary POLECLOUD1 stream or a CSV with optional header."""
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(_HEADER_LEN)
    if head.startswith(CLOUD_MAGIC):
        return _read_cloud_binary(path)
    return _read_cloud_csv(path)


def _read_cloud_binary(path: Path) -> np.ndarray:
    data = path.read_bytes()
    if len(data) < _HEADER_LEN + 8:
        raise ParseError("truncated binary cloud header", path=path)
    (n,) = struct.unpack_from("<Q", data, _HEADER_LEN)
    body = data[_HEADER_LEN + 8 :]
    if len(body) != n * 24:
        raise ParseError(f"binary cloud declares {n} points but holds {len(body)} bytes", path=path)
    pts = np.frombuffer(body, dtype="<f8").reshape(n, 3).astype(float)
    if not np.all(np.isfinite(pts)):
        raise ParseError("binary cloud contains non-finite coordinates", path=path)
    return pts


def _read_cloud_csv(path: Path) -> np.ndarray:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = [p.strip() for p in line.split(",")]
            if lineno == 1 and not rows and parts == ["x", "y", "z"]:
                continue
            if len(parts) != 3:
                raise ParseError(f"expected 3 fields x,y,z, got {len(parts)}", line=lineno, path=path)
            try:
                vals = [float(p) for p in parts]
            except ValueError:
                raise ParseError(f"non-numeric field in {line!r}", line=lineno, path=path) from None
            if not all(math.isfinite(v) for v in vals):
                raise ParseError("non-finite coordinate", line=lineno, path=path)
            rows.append(vals)
    return np.array(rows, dtype=float).reshape(-1, 3)


def write_cloud(path, points, binary: bool = False) -> None:
    pts = _as_cloud(points)
    path = Path(path)
    if binary:
        header = CLOUD_MAGIC.ljust(_HEADER_LEN, b"\0") + struct.pack("<Q", len(pts))
        path.write_bytes(header + pts.astype("<f8").tobytes())
        return
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("x,y,z\n")
        for x, y, z in pts.tolist():
            fh.write(f"{x!r},{y!r},{z!r}\n")
