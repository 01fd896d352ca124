import math

import numpy as np
import pytest

from poleloc.errors import InvalidArgumentError, ParseError
from poleloc.extraction import (
    ExtractionParams,
    build_grid,
    compute_descriptor,
    detect_poles,
    extract_poles,
    read_cloud,
    write_cloud,
)
from poleloc.synth import column_cloud, wall_cloud

P = ExtractionParams()
BOUNDS = ((0.0, 0.0, 0.0), (20.0, 20.0, 8.0))


def test_params_validation():
    with pytest.raises(InvalidArgumentError):
        ExtractionParams(voxel_size=0)
    with pytest.raises(InvalidArgumentError):
        ExtractionParams(isolation_radius=0.5, max_width=0.8)
    with pytest.raises(InvalidArgumentError):
        ExtractionParams(slice_count=0)


def test_empty_cloud_grid():
    g = build_grid(np.empty((0, 3)), P, BOUNDS)
    assert g.counts.sum() == 0 and g.drop_count == 0
    assert g.dims == (100, 100, 40)


def test_identical_points_share_one_voxel():
    g = build_grid(np.tile([[3.33, 4.41, 1.05]], (5, 1)), P, BOUNDS)
    assert g.counts[16, 22, 5] == 5
    assert g.counts.sum() == 5


def test_conservation_uniform_points(rng):
    pts = rng.uniform((0, 0, 0), (20, 20, 8), (1000, 3))
    g = build_grid(pts, P, BOUNDS)
    assert g.counts.sum() == 1000 and g.drop_count == 0


def test_out_of_bounds_dropped_and_tallied(rng):
    pts = rng.uniform((-10, -10, -2), (30, 30, 10), (2000, 3))
    g = build_grid(pts, P, BOUNDS)
    inside = np.all((pts >= 0) & (pts < (20, 20, 8)), axis=1).sum()
    assert g.counts.sum() == inside
    assert g.counts.sum() + g.drop_count == 2000
    assert (g.counts >= 0).all()


@pytest.mark.parametrize("hi", [(20, 20, 0), (20, -1, 8), (0, 20, 8)])
def test_degenerate_bounds(hi):
    with pytest.raises(InvalidArgumentError):
        build_grid(np.zeros((1, 3)), P, ((0, 0, 0), hi))


def test_nonfinite_cloud_rejected():
    with pytest.raises(InvalidArgumentError):
        build_grid(np.array([[0.0, math.inf, 0.0]]), P, BOUNDS)


def test_empty_grid_no_detections():
    g = build_grid(np.empty((0, 3)), P, BOUNDS)
    assert detect_poles(g, P) == []


def test_single_column_detected_at_centroid():
    center = (10.13, 9.87)
    pts = column_cloud([center], [0.2], [3.0], seed=1)
    dets = detect_poles(build_grid(pts, P, BOUNDS), P)
    assert len(dets) == 1
    d = dets[0]
    assert math.dist(d.center, center) <= P.voxel_size
    assert 0 < d.width <= P.max_width
    assert d.descriptor.shape == (P.descriptor_dim,)
    assert np.all(np.isfinite(d.descriptor))


def test_wall_rejected():
    pts = wall_cloud((5.0, 10.0), (15.0, 10.0), 3.0, seed=2)
    assert detect_poles(build_grid(pts, P, BOUNDS), P) == []


def test_short_column_rejected():
    pts = column_cloud([(10.0, 10.0)], [0.2], [1.2], seed=3)
    assert detect_poles(build_grid(pts, P, BOUNDS), P) == []


def test_neighbouring_clutter_breaks_isolation():
    pts = column_cloud([(10.1, 10.1), (11.1, 10.1)], [0.2, 0.2], [3.0, 1.0], seed=4)
    assert detect_poles(build_grid(pts, P, BOUNDS), P) == []
    # the same pair far apart: the tall column survives, the short one is too low
    pts = column_cloud([(5.1, 5.1), (15.1, 15.1)], [0.2, 0.2], [3.0, 1.0], seed=4)
    assert len(detect_poles(build_grid(pts, P, BOUNDS), P)) == 1


def test_ground_layer_ignored():
    pts = column_cloud([(10.1, 10.1)], [0.4], [3.0], seed=5, ground=(0, 0, 20, 20), ground_density=30.0)
    dets = detect_poles(build_grid(pts, P, BOUNDS), P)
    assert len(dets) == 1


def _uniform_cylinder_voxels(radius_cells, layers):
    cells = [(i, j) for i in range(-4, 5) for j in range(-4, 5) if i * i + j * j <= radius_cells ** 2]
    return np.array([(50 + i, 50 + j, 2 + k) for i, j in cells for k in range(layers)])


def test_uniform_cylinder_descriptor_radii_equal():
    grid = build_grid(np.empty((0, 3)), P, BOUNDS)
    vox = _uniform_cylinder_voxels(1.5, 20)  # 4 m tall, covers all slices
    desc = compute_descriptor(vox, grid, P)
    S = P.slice_count
    radii = desc[S : 2 * S]
    assert radii.max() - radii.min() <= P.voxel_size
    assert np.allclose(desc[:S], 1.0)
    assert desc[2 * S] == pytest.approx(4.0)


def test_cylinders_differing_in_height():
    grid = build_grid(np.empty((0, 3)), P, BOUNDS)
    S = P.slice_count
    short = compute_descriptor(_uniform_cylinder_voxels(1.0, 10), grid, P)  # 2.0 m
    tall = compute_descriptor(_uniform_cylinder_voxels(1.0, 14), grid, P)  # 2.8 m
    assert short[2 * S] != tall[2 * S]
    assert short[2 * S + 1] == tall[2 * S + 1]
    # slices are 0.3 m: the 2.0 m stack is empty from slice 7 up, the 2.8 m one is not
    assert short[7] == 0 and tall[7] > 0
    assert np.array_equal(short[:6], tall[:6])


def test_translation_equivariance():
    pts = column_cloud([(6.1, 7.3), (14.2, 12.9)], [0.3, 0.5], [3.0, 4.0], seed=6)
    shift = np.array([3.4, -1.7, 0.0])
    base = detect_poles(build_grid(pts, P, BOUNDS), P)
    moved = detect_poles(
        build_grid(pts + shift, P, (np.array(BOUNDS[0]) + shift, np.array(BOUNDS[1]) + shift)), P
    )
    assert len(base) == len(moved) == 2
    for a, b in zip(base, moved):
        assert math.dist((a.center.x + shift[0], a.center.y + shift[1]), b.center) <= P.voxel_size


def test_determinism_and_sorting():
    pts = column_cloud([(15.1, 3.3), (4.2, 12.9), (4.0, 4.0)], [0.3, 0.5, 0.2], [3.0, 4.0, 2.5], seed=7)
    a = detect_poles(build_grid(pts, P, BOUNDS), P)
    b = detect_poles(build_grid(pts, P, BOUNDS), P)
    assert [(d.center, d.width) for d in a] == [(d.center, d.width) for d in b]
    assert [d.center for d in a] == sorted(d.center for d in a)


def test_raising_threshold_never_adds_detections():
    centers = [(3 + 4 * i + 0.1, 5.1) for i in range(4)]
    pts = np.vstack([
        column_cloud(centers[:2], [0.3] * 2, [3.0] * 2, points_per_voxel=2, seed=8),
        column_cloud(centers[2:], [0.3] * 2, [3.0] * 2, points_per_voxel=5, seed=9),
    ])
    counts = []
    for t in range(1, 8):
        params = ExtractionParams(count_threshold=t)
        counts.append(len(detect_poles(build_grid(pts, params, BOUNDS), params)))
    assert counts == [4, 4, 2, 2, 2, 0, 0]


@pytest.mark.parametrize("seed", range(15))
def test_threshold_monotonicity_random_clouds(seed):
    rng = np.random.default_rng(seed)
    centers = rng.uniform(1, 19, (6, 2))
    pts = column_cloud(
        centers, rng.uniform(0.2, 0.9, 6), rng.uniform(1.0, 5.0, 6),
        points_per_voxel=int(rng.integers(1, 6)), seed=seed,
    )
    pts = np.vstack([pts, rng.uniform((0, 0, 0), (20, 20, 6), (int(rng.integers(0, 40)), 3))])
    prev = None
    for t in range(1, 9):
        params = ExtractionParams(count_threshold=t)
        n = len(detect_poles(build_grid(pts, params, BOUNDS), params))
        assert prev is None or n <= prev
        prev = n


def test_extract_poles_default_bounds():
    pts = column_cloud([(2.1, 3.1)], [0.3], [3.0], seed=10)
    assert len(extract_poles(pts)) == 1
    assert extract_poles(np.empty((0, 3))) == []


def test_cloud_io_round_trip(tmp_path, rng):
    pts = rng.uniform(-5, 5, (50, 3))
    write_cloud(tmp_path / "c.csv", pts)
    write_cloud(tmp_path / "c.bin", pts, binary=True)
    assert np.array_equal(read_cloud(tmp_path / "c.csv"), pts)
    assert np.array_equal(read_cloud(tmp_path / "c.bin"), pts)


def test_cloud_csv_without_header(tmp_path):
    (tmp_path / "c.csv").write_text("1,2,3\n4,5,6\n")
    assert read_cloud(tmp_path / "c.csv").tolist() == [[1, 2, 3], [4, 5, 6]]


def test_malformed_cloud_reports_line(tmp_path):
    (tmp_path / "c.csv").write_text("x,y,z\n1,2,3\n4,five,6\n")
    with pytest.raises(ParseError) as err:
        read_cloud(tmp_path / "c.csv")
    assert err.value.line == 3


def test_truncated_binary_cloud(tmp_path, rng):
    write_cloud(tmp_path / "c.bin", rng.uniform(size=(4, 3)), binary=True)
    data = (tmp_path / "c.bin").read_bytes()
    (tmp_path / "c.bin").write_bytes(data[:-8])
    with pytest.raises(ParseError):
        read_cloud(tmp_path / "c.bin")
