import json

import numpy as np
import pytest
from hypothesis import given, strategies as st
from PIL import Image

from dynavo.camera import CameraIntrinsics
from dynavo.dataset_io import (DatasetError, Detection, Trajectory, associate, decode_rle, encode_rle,
                               format_pose_line, load_depth_image, load_detections,
                               load_intensity_image, load_tum_sequence, read_trajectory,
                               write_trajectory)
from dynavo.geometry import PoseSE3, so3_exp

from oracles import associate_bruteforce

K = CameraIntrinsics(525.0, 525.0, 319.5, 239.5, 640, 480)

stamps = st.lists(st.integers(0, 400), min_size=0, max_size=12, unique=True).map(
    lambda v: [1000.0 + k * 0.005 for k in sorted(v)])


# ---------------------------------------------------------------- association

def test_identical_lists_pair_one_to_one():
    ts = [1.0, 1.1, 1.2]
    assert associate(ts, ts) == [(0, 0), (1, 1), (2, 2)]


def test_tie_breaks_to_earlier():
    assert associate([1.000], [0.985, 1.015]) == [(0, 0)]


def test_beyond_tolerance_dropped():
    assert associate([1.000], [1.050], 0.02) == []


@given(stamps, stamps, st.sampled_from([0.005, 0.01, 0.02]))
def test_association_matches_bruteforce(a, b, tol):
    assert associate(a, b, tol) == associate_bruteforce(a, b, tol)


@given(stamps, stamps, st.randoms(use_true_random=False))
def test_association_independent_of_row_order(a, b, rnd):
    pa, pb = a[:], b[:]
    rnd.shuffle(pa)
    rnd.shuffle(pb)
    ref = {(a[i], b[j]) for i, j in associate(a, b)}
    got = {(pa[i], pb[j]) for i, j in associate(pa, pb)}
    assert ref == got
    assert all(abs(x - y) <= 0.02 + 1e-9 for x, y in got)


# ---------------------------------------------------------------- images

def test_depth_png_scaling(tmp_path):
    raw = np.array([[5000, 0], [65535, 2500]], dtype=np.uint16)
    Image.fromarray(raw).save(tmp_path / "d.png")
    d = load_depth_image(tmp_path / "d.png", K)
    assert d[0, 0] == 1.0
    assert np.isnan(d[0, 1])
    assert abs(d[1, 0] - 13.107) < 1e-12
    assert d[1, 1] == 0.5


def test_depth_png_rejects_8bit(tmp_path):
    Image.fromarray(np.zeros((4, 4), np.uint8)).save(tmp_path / "d.png")
    with pytest.raises(DatasetError):
        load_depth_image(tmp_path / "d.png", K)
    with pytest.raises(DatasetError):
        load_depth_image(tmp_path / "missing.png", K)


def test_intensity_png_range(tmp_path):
    rgb = np.zeros((3, 3, 3), np.uint8)
    rgb[0, 0] = 255
    Image.fromarray(rgb).save(tmp_path / "c.png")
    img = load_intensity_image(tmp_path / "c.png")
    assert img.shape == (3, 3) and abs(img[0, 0] - 1.0) < 1e-12 and img[1, 1] == 0.0


# ---------------------------------------------------------------- detections

def _sidecar(tmp_path, rows):
    p = tmp_path / "detections.jsonl"
    p.write_text("\n".join(json.dumps(r) for r in rows) + ("\n" if rows else ""))
    return p


def test_empty_sidecar(tmp_path):
    assert load_detections(_sidecar(tmp_path, [])) == {}


def test_one_person_box(tmp_path):
    p = _sidecar(tmp_path, [{"timestamp": 1.0, "objects": [
        {"class": "person", "conf": 0.9, "bbox": [10, 20, 30, 40], "dynamic_prior": True}]}])
    dets = load_detections(p)[1.0]
    assert len(dets) == 1
    d = dets[0]
    assert d.class_name == "person" and d.dynamic_prior and d.bbox == (10, 20, 30, 40)


def test_bbox_clamped_and_area_recomputed(tmp_path):
    p = _sidecar(tmp_path, [{"timestamp": 1.0, "objects": [
        {"class": "chair", "conf": 0.5, "bbox": [-10, 470, 50, 40]}]}])
    d = load_detections(p)[1.0][0]
    assert d.bbox == (0, 470, 40, 10) and d.area == 400


def test_default_dynamic_classes(tmp_path):
    p = _sidecar(tmp_path, [{"timestamp": 1.0, "objects": [
        {"class": "person", "conf": 0.5, "bbox": [0, 0, 5, 5]},
        {"class": "monitor", "conf": 0.5, "bbox": [0, 0, 5, 5]},
        {"class": "person", "conf": 0.5, "bbox": [0, 0, 5, 5], "dynamic_prior": False}]}])
    assert [d.dynamic_prior for d in load_detections(p)[1.0]] == [True, False, False]


def test_confidence_out_of_range_rejected(tmp_path):
    p = _sidecar(tmp_path, [{"timestamp": 1.0, "objects": []},
                            {"timestamp": 2.0, "objects": [{"class": "x", "conf": 1.5, "bbox": [0, 0, 1, 1]}]}])
    with pytest.raises(DatasetError, match=":2:"):
        load_detections(p)


def test_malformed_line_reports_number(tmp_path):
    p = tmp_path / "d.jsonl"
    p.write_text('{"timestamp": 1.0, "objects": []}\n{not json\n')
    with pytest.raises(DatasetError, match=":2:"):
        load_detections(p)


def test_bbox_scoped_mask(tmp_path):
    local = np.zeros((4, 6), bool)
    local[1:3, 2:5] = True
    p = _sidecar(tmp_path, [{"timestamp": 1.0, "objects": [
        {"class": "cup", "conf": 0.6, "bbox": [100, 50, 6, 4], "mask_rle": encode_rle(local),
         "mask_scope": "bbox"}]}])
    d = load_detections(p)[1.0][0]
    assert d.mask.shape == (480, 640) and d.mask.sum() == local.sum()
    assert d.mask[51:53, 102:105].all()


@given(st.integers(1, 9), st.integers(1, 9), st.data())
def test_rle_round_trip(h, w, data):
    bits = data.draw(st.lists(st.booleans(), min_size=h * w, max_size=h * w))
    m = np.array(bits).reshape(h, w)
    assert np.array_equal(decode_rle(encode_rle(m), (h, w)), m)


def test_detection_confidence_validated():
    with pytest.raises(ValueError):
        Detection("x", -0.1, (0, 0, 1, 1))


# ---------------------------------------------------------------- trajectories

def test_identity_line():
    assert format_pose_line(0.0, PoseSE3()) == "0.000000 0 0 0 0 0 0 1"


def test_trajectory_round_trip(tmp_path, rng):
    poses = []
    for k in range(50):
        axis = rng.normal(size=3)
        poses.append((1000.0 + k / 30, PoseSE3(so3_exp(axis / np.linalg.norm(axis) * rng.uniform(0, 3)),
                                               rng.uniform(-5, 5, 3))))
    write_trajectory(Trajectory(poses), tmp_path / "t.txt")
    back = read_trajectory(tmp_path / "t.txt")
    assert len(back) == 50
    for (t0, p0), (t1, p1) in zip(poses, back):
        assert abs(t0 - t1) < 5e-7
        assert np.abs(p0.translation - p1.translation).max() < 1e-8
        assert np.abs(p0.rotation - p1.rotation).max() < 1e-8


def test_trajectory_comments_and_errors(tmp_path):
    p = tmp_path / "t.txt"
    p.write_text("# header\n1.0 0 0 0 0 0 0 1\n\n2.0 1 0 0 0 0 0 1\n")
    assert len(read_trajectory(p)) == 2
    p.write_text("1.0 0 0 0 0 0 0 1\n2.0 1 0 0 0 0 1\n")
    with pytest.raises(DatasetError, match=":2:"):
        read_trajectory(p)
    p.write_text("2.0 0 0 0 0 0 0 1\n1.0 0 0 0 0 0 0 1\n")
    with pytest.raises(DatasetError):
        read_trajectory(p)


# ---------------------------------------------------------------- sequences

def _write_sequence(root, rgb_ts, depth_ts):
    (root / "rgb").mkdir(parents=True)
    (root / "depth").mkdir()
    img = np.zeros((8, 8, 3), np.uint8)
    for t in rgb_ts:
        Image.fromarray(img).save(root / "rgb" / f"{t:.6f}.png")
    for t in depth_ts:
        Image.fromarray(np.full((8, 8), 5000, np.uint16)).save(root / "depth" / f"{t:.6f}.png")
    (root / "rgb.txt").write_text("# rgb\n" + "".join(f"{t:.6f} rgb/{t:.6f}.png\n" for t in rgb_ts))
    (root / "depth.txt").write_text("".join(f"{t:.6f} depth/{t:.6f}.png\n" for t in depth_ts))


def test_load_sequence_with_drops(tmp_path):
    _write_sequence(tmp_path, [1.0, 1.1, 1.2, 1.3], [1.005, 1.098, 1.25])
    seq = load_tum_sequence(tmp_path)
    assert [f.timestamp for f in seq] == [1.0, 1.1]
    assert seq.dropped == {"rgb": 2, "depth": 1}
    for f in seq:
        assert abs(f.timestamp - f.depth_timestamp) <= 0.02


def test_load_sequence_missing_index(tmp_path):
    with pytest.raises(DatasetError, match="rgb.txt"):
        load_tum_sequence(tmp_path)


def test_load_sequence_bad_row(tmp_path):
    _write_sequence(tmp_path, [1.0], [1.0])
    (tmp_path / "depth.txt").write_text("1.0 depth/1.000000.png\nabc depth/x.png\n")
    with pytest.raises(DatasetError, match="depth.txt:2"):
        load_tum_sequence(tmp_path)


def test_load_sequence_empty_association(tmp_path):
    _write_sequence(tmp_path, [1.0], [2.0])
    with pytest.raises(DatasetError, match="no rgb/depth pairs"):
        load_tum_sequence(tmp_path)
