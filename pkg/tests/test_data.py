import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rsnet.data import (BoneTable, CameraModel, PoseSample, bone_lengths, default_cameras,
                        denormalize_2d, flip_arrays, flip_pose, load_bone_table, normalize,
                        normalize_2d, read_jsonl, rot_x, rot_y, stack, synth_generate, write_jsonl)
from rsnet.graph import load_topology


@pytest.fixture(scope="module")
def samples17():
    return synth_generate(load_topology("h36m17"), 40, seed=11)


def test_normalize_2d_examples():
    np.testing.assert_array_equal(normalize_2d([[500.0, 500.0]], (1000, 1000)), [[0.0, 0.0]])
    np.testing.assert_array_equal(normalize_2d([[1000.0, 500.0]], (1000, 1000)), [[1.0, 0.0]])
    # aspect ratio kept: the long side maps to [-1, 1]
    np.testing.assert_allclose(normalize_2d([[0.0, 0.0]], (1000, 500)), [[-1.0, -0.5]])
    with pytest.raises(ValueError):
        normalize_2d([[0.0, 0.0]], (0, 100))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 4000), st.integers(1, 4000))
def test_normalize_2d_roundtrip(w, h):
    px = np.array([[0.0, 0.0], [w, h], [w / 3, h / 7]])
    np.testing.assert_allclose(denormalize_2d(normalize_2d(px, (w, h)), (w, h)), px, atol=1e-9)


def test_normalize_sample_root_at_origin():
    rng = np.random.default_rng(0)
    raw = PoseSample("x", rng.uniform(0, 1000, (17, 2)), rng.uniform(-500, 500, (17, 3)) + 4000)
    out = normalize(raw, (1000, 1000))
    np.testing.assert_array_equal(out.pose3d[0], 0.0)
    np.testing.assert_allclose(out.pose3d + out.root_offset, raw.pose3d, atol=1e-12)


def test_pose_sample_validation():
    with pytest.raises(ValueError, match="non-finite"):
        PoseSample("bad", np.full((3, 2), np.nan), np.zeros((3, 3)))
    with pytest.raises(ValueError, match="shapes"):
        PoseSample("bad", np.zeros((3, 2)), np.zeros((4, 3)))


def test_jsonl_roundtrip_bit_exact(samples17, tmp_path):
    path = tmp_path / "d.jsonl"
    write_jsonl(samples17, path)
    back = read_jsonl(path)
    assert len(back) == len(samples17)
    for a, b in zip(samples17, back):
        assert a.id == b.id and a.camera == b.camera
        assert np.array_equal(a.pose2d, b.pose2d) and np.array_equal(a.pose3d, b.pose3d)
        assert np.array_equal(a.root_offset, b.root_offset)


def test_jsonl_minimal_format_and_error_line(tmp_path):
    path = tmp_path / "d.jsonl"
    path.write_text(json.dumps({"id": "a", "pose2d": [[0, 0]] * 2, "pose3d": [[0, 0, 0]] * 2}) + "\n\n"
                    + json.dumps({"id": "b", "pose2d": [[0, 0]], "pose3d": [[0, 0, 0]] * 2}) + "\n")
    with pytest.raises(ValueError, match=r"d.jsonl:3"):
        read_jsonl(path)


def test_synth_deterministic_bytes(tmp_path):
    topo = load_topology("h36m17")
    write_jsonl(synth_generate(topo, 10, seed=5), tmp_path / "a.jsonl")
    write_jsonl(synth_generate(topo, 10, seed=5), tmp_path / "b.jsonl")
    write_jsonl(synth_generate(topo, 10, seed=6), tmp_path / "c.jsonl")
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    assert (tmp_path / "a.jsonl").read_bytes() != (tmp_path / "c.jsonl").read_bytes()


@pytest.mark.parametrize("name", ["h36m17", "h36m16"])
def test_synth_bone_lengths_match_table(name):
    table = load_bone_table(name)
    for s in synth_generate(load_topology(name), 20, seed=1):
        lengths = bone_lengths(s.pose3d, table)
        for child, length in lengths.items():
            assert abs(length - table.lengths[child]) < 1e-9


def test_synth_reprojection_consistent(samples17):
    cams = default_cameras()
    for s in samples17:
        cam = cams[s.camera]
        px = cam.project(s.pose3d + s.root_offset)
        np.testing.assert_allclose(normalize_2d(px, (1000, 1000)), s.pose2d, atol=1e-9)
        np.testing.assert_array_equal(s.pose3d[0], 0.0)


def test_synth_sample_ranges(samples17):
    X, Y = stack(samples17)
    assert X.shape == (40, 17, 2) and Y.shape == (40, 17, 3)
    assert np.all(np.abs(X) < 1.0)
    assert len({s.camera for s in samples17}) > 1


def test_synth_behind_camera_errors():
    cam = CameraModel(1000.0, (500.0, 500.0), np.eye(3), np.array([0.0, 0.0, -2000.0]))
    with pytest.raises(RuntimeError, match="behind the camera"):
        synth_generate(load_topology("h36m17"), 1, seed=0, cameras=[cam], max_retries=3)


def test_camera_rotation_validated():
    with pytest.raises(ValueError):
        CameraModel(1000.0, (0.0, 0.0), np.diag([1.0, 1.0, -1.0]))
    with pytest.raises(ValueError):
        CameraModel(1000.0, (0.0, 0.0), 2 * np.eye(3))
    CameraModel(1000.0, (0.0, 0.0), rot_x(10) @ rot_y(-30))


def test_project_pinhole():
    cam = CameraModel(1000.0, (500.0, 400.0))
    np.testing.assert_allclose(cam.project(np.array([[100.0, -200.0, 2000.0]])), [[550.0, 300.0]])
    with pytest.raises(ValueError):
        cam.project(np.array([[0.0, 0.0, -1.0]]))


def test_flip_involution_and_midline(samples17, h36m17):
    s = samples17[0]
    f = flip_pose(s, h36m17.flip_pairs)
    ff = flip_pose(f, h36m17.flip_pairs)
    np.testing.assert_array_equal(ff.pose2d, s.pose2d)
    np.testing.assert_array_equal(ff.pose3d, s.pose3d)
    for mid in (0, 7, 8, 9, 10):
        np.testing.assert_array_equal(f.pose3d[mid], s.pose3d[mid] * [-1, 1, 1])
    np.testing.assert_array_equal(f.pose3d[4], s.pose3d[1] * [-1, 1, 1])


def test_flip_preserves_edge_lengths(samples17, h36m17):
    for s in samples17:
        f = flip_pose(s, h36m17.flip_pairs)
        for i, j in h36m17.edges:
            assert np.linalg.norm(f.pose3d[i] - f.pose3d[j]) == pytest.approx(
                np.linalg.norm(s.pose3d[i] - s.pose3d[j]), abs=1e-9)


def test_flip_arrays_matches_per_sample(samples17, h36m17):
    X, Y = stack(samples17[:5])
    Xf, Yf = flip_arrays(X, Y, h36m17.flip_permutation())
    for k, s in enumerate(samples17[:5]):
        f = flip_pose(s, h36m17.flip_pairs)
        np.testing.assert_array_equal(Xf[k], f.pose2d)
        np.testing.assert_array_equal(Yf[k], f.pose3d)


def test_bone_table_must_be_tree():
    table = BoneTable.from_dict({"bones": [{"child": 1, "parent": 2, "length_mm": 1.0},
                                           {"child": 2, "parent": 1, "length_mm": 1.0}]})
    with pytest.raises(ValueError, match="not a tree"):
        table.order(0)


def test_stack_empty():
    with pytest.raises(ValueError):
        stack([])
