"""Synthetic scan generator tests.

The generator's decomposition is known analytically, so every invariant here
is checked against closed-form expectations computed in the test.
"""

import json

import numpy as np
import pytest

from pointcloth.body import HumanoidConfig, Pose, build_humanoid
from pointcloth.geometry import vertex_normals
from pointcloth.synthdata import (
    JOINT_AXES,
    OutfitSpec,
    WrinkleSpec,
    base_offset_values,
    displaced_vertices,
    generate_dataset,
    generate_scan,
    jacket_spec,
    load_dataset,
    load_scan,
    sample_poses,
    save_scan,
    signed_joint_angles,
    skirt_spec,
    wrinkle_drive,
    wrinkle_offset_values,
)

SMALL = HumanoidConfig(resolution=0.5)


@pytest.fixture(scope="module")
def body():
    return build_humanoid(SMALL)


def bent_pose(body, bends):
    """Axis-angle pose bending the named hinges by the given angles."""
    names = body.skeleton.names
    aa = np.zeros((body.skeleton.num_joints, 3))
    for joint, angle in bends.items():
        aa[names.index(joint)] = angle * np.asarray(JOINT_AXES[joint])
    return Pose.from_axis_angle(aa)


# ---------------------------------------------------------------------------
# closed-form displacement structure


def test_zero_amplitude_outfit_sits_on_the_body(body):
    spec = OutfitSpec(name="bare", base_amplitude=0.0,
                      wrinkle=WrinkleSpec(amplitude=0.0))
    pose = bent_pose(body, {"l_elbow": 0.4, "r_knee": -0.3})
    clothed, posed = displaced_vertices(body, spec, pose)
    assert np.array_equal(clothed, posed)


def test_identity_pose_displacement_equals_base_offset(body):
    spec = jacket_spec()
    ident = Pose.identity(body.skeleton.num_joints)
    clothed, posed = displaced_vertices(body, spec, ident)
    n = vertex_normals(posed, body.faces)
    h = base_offset_values(body, spec)
    assert np.array_equal(clothed, posed + h[:, None] * n)


def test_wrinkles_vanish_at_identity_pose(body):
    for spec in (jacket_spec(), skirt_spec()):
        ident = Pose.identity(body.skeleton.num_joints)
        w = wrinkle_offset_values(body, spec, ident)
        assert np.array_equal(w, np.zeros_like(w))


def test_pose_displacement_difference_is_pure_wrinkle(body):
    spec = jacket_spec()
    pose = bent_pose(body, {"l_elbow": 0.5, "r_elbow": -0.2})
    clothed, posed = displaced_vertices(body, spec, pose)
    n = vertex_normals(posed, body.faces)
    h = np.einsum("ij,ij->i", clothed - posed, n)
    want = base_offset_values(body, spec) + wrinkle_offset_values(body, spec, pose)
    assert np.allclose(h, want, atol=1e-12)


def test_base_offset_is_non_negative_and_pose_free(body):
    for spec in (jacket_spec(), skirt_spec()):
        h = base_offset_values(body, spec)
        assert np.all(h >= 0.0)
        assert h.max() <= spec.base_amplitude + 1e-12
        assert h.max() > 0.0


def test_quilted_base_offset_matches_its_formula(body):
    from pointcloth.synthdata import _region_weights
    spec = OutfitSpec(name="q", base_amplitude=0.05, region="jacket",
                      quilt_amplitude=0.015, quilt_frequency=40.0,
                      quilt_direction=(1.0, 0.0, 0.0), quilt_phase=0.3)
    y = body.vertices[:, 1]
    sway = 0.6 + 0.4 * np.sin(2.0 * np.pi * y / 0.8 + 1.0)
    u = body.vertices @ np.asarray(spec.quilt_direction)
    ripple = spec.quilt_amplitude * np.sin(spec.quilt_frequency * u
                                           + spec.quilt_phase)
    want = (np.clip(spec.base_amplitude * sway + ripple, 0.0, None)
            * _region_weights(body, spec.region))
    assert np.array_equal(base_offset_values(body, spec), want)


def test_zero_quilt_amplitude_is_inert(body):
    plain = jacket_spec()
    assert plain.quilt_amplitude == 0.0
    quilted = OutfitSpec(name=plain.name, base_amplitude=plain.base_amplitude,
                         region=plain.region, wrinkle=plain.wrinkle,
                         quilt_amplitude=0.0, quilt_frequency=99.0)
    assert np.array_equal(base_offset_values(body, plain),
                          base_offset_values(body, quilted))


def test_quilted_base_offset_stays_non_negative(body):
    spec = OutfitSpec(name="q", base_amplitude=0.01, region="jacket",
                      quilt_amplitude=0.05, quilt_frequency=40.0)
    h = base_offset_values(body, spec)
    assert h.min() >= 0.0
    assert h.max() > 0.0


def test_wrinkles_average_out_over_symmetric_poses(body):
    spec = jacket_spec()
    poses = sample_poses(body, 400, seed=2)
    acc = np.zeros(body.num_vertices)
    for pose in poses:
        acc += wrinkle_offset_values(body, spec, pose)
    mean_wrinkle = np.abs(acc / len(poses)).mean()
    mean_base = base_offset_values(body, spec).mean()
    assert mean_wrinkle < 0.05 * mean_base


# ---------------------------------------------------------------------------
# the pose drive


def test_signed_angle_recovers_hinge_rotation(body):
    pose = bent_pose(body, {"l_elbow": 0.3, "r_hip": -0.25})
    angles = signed_joint_angles(body.skeleton.names, pose)
    assert angles["l_elbow"] == pytest.approx(0.3, abs=1e-12)
    assert angles["r_hip"] == pytest.approx(-0.25, abs=1e-12)
    assert angles["l_knee"] == pytest.approx(0.0, abs=1e-12)


def test_wrinkle_drive_is_coupling_weighted_sum(body):
    spec = OutfitSpec(name="w", wrinkle=WrinkleSpec(
        joint_coupling={"l_elbow": 2.0, "r_elbow": -1.0}))
    pose = bent_pose(body, {"l_elbow": 0.2, "r_elbow": 0.1})
    assert wrinkle_drive(body, spec, pose) == pytest.approx(
        2.0 * 0.2 - 1.0 * 0.1, abs=1e-12)


def test_wrinkle_field_matches_its_formula(body):
    spec = jacket_spec()
    pose = bent_pose(body, {"l_elbow": 0.4})
    w = spec.wrinkle
    ridge = np.sin(w.frequency * (body.vertices @ np.asarray(w.direction))
                   + w.phase)
    drive = wrinkle_drive(body, spec, pose)
    from pointcloth.synthdata import _region_weights
    want = w.amplitude * ridge * _region_weights(body, spec.region) * drive
    assert np.array_equal(wrinkle_offset_values(body, spec, pose), want)


def test_sample_poses_bounded_and_deterministic(body):
    a = sample_poses(body, 20, seed=5, max_angle=0.3)
    b = sample_poses(body, 20, seed=5, max_angle=0.3)
    c = sample_poses(body, 20, seed=6, max_angle=0.3)
    for pa, pb in zip(a, b):
        assert np.array_equal(pa.joint_rotations, pb.joint_rotations)
    assert any(not np.array_equal(pa.joint_rotations, pc.joint_rotations)
               for pa, pc in zip(a, c))
    for pose in a:
        angles = signed_joint_angles(body.skeleton.names, pose)
        assert all(abs(v) <= 0.3 + 1e-12 for v in angles.values())


# ---------------------------------------------------------------------------
# scans


def test_scan_points_lie_on_the_displaced_surface(body):
    spec = jacket_spec()
    pose = bent_pose(body, {"l_elbow": 0.5})
    scan = generate_scan(body, spec, pose, count=256, seed=3)
    assert scan.cloud.positions.shape == (256, 3)
    assert scan.outfit == "jacket"
    clothed, _ = displaced_vertices(body, spec, pose)
    lo = clothed.min(axis=0) - 1e-9
    hi = clothed.max(axis=0) + 1e-9
    assert np.all(scan.cloud.positions >= lo)
    assert np.all(scan.cloud.positions <= hi)


def test_scan_normals_are_unit_and_outward(body):
    spec = jacket_spec()
    pose = bent_pose(body, {"l_elbow": 0.4, "l_shoulder": 0.2})
    scan = generate_scan(body, spec, pose, count=512, seed=4)
    n = scan.cloud.normals
    assert np.allclose(np.linalg.norm(n, axis=1), 1.0, atol=1e-12)
    # outward: positive dot with the direction away from the nearest bare
    # body point (the garment stands off along the posed body normal)
    bare = generate_scan(body, OutfitSpec(name="b", base_amplitude=0.0,
                                          wrinkle=WrinkleSpec(amplitude=0.0)),
                         pose, count=512, seed=4)
    away = scan.cloud.positions - bare.cloud.positions
    covered = scan.gt_base_offset > 1e-3  # skip bare skin (zero standoff)
    assert covered.sum() > 100
    away = away[covered] / np.linalg.norm(away[covered], axis=1, keepdims=True)
    assert np.einsum("ij,ij->i", n[covered], away).min() > 0.0


def test_scan_ground_truth_matches_generator_fields(body):
    spec = jacket_spec()
    pose = bent_pose(body, {"l_elbow": -0.35})
    scan = generate_scan(body, spec, pose, count=128, seed=5)
    assert scan.gt_base_offset.shape == (128,)
    assert scan.gt_wrinkle_offset.shape == (128,)
    assert scan.gt_base_offset.min() >= 0.0
    assert scan.gt_base_offset.max() <= spec.base_amplitude + 1e-12
    assert np.abs(scan.gt_wrinkle_offset).max() <= \
        spec.wrinkle.amplitude * abs(wrinkle_drive(body, spec, pose)) + 1e-12


def test_scan_generation_is_deterministic(body):
    spec = skirt_spec()
    pose = bent_pose(body, {"l_hip": 0.3})
    a = generate_scan(body, spec, pose, count=64, seed=6)
    b = generate_scan(body, spec, pose, count=64, seed=6)
    c = generate_scan(body, spec, pose, count=64, seed=7)
    assert np.array_equal(a.cloud.positions, b.cloud.positions)
    assert np.array_equal(a.cloud.normals, b.cloud.normals)
    assert not np.array_equal(a.cloud.positions, c.cloud.positions)


def test_scan_jitter_perturbs_at_the_requested_scale(body):
    spec = jacket_spec()
    pose = Pose.identity(body.skeleton.num_joints)
    clean = generate_scan(body, spec, pose, count=2048, seed=8)
    noisy = generate_scan(body, spec, pose, count=2048, seed=8, jitter=0.002)
    d = noisy.cloud.positions - clean.cloud.positions
    rms = float(np.sqrt((d ** 2).mean()))
    assert 0.0015 < rms < 0.0025
    assert np.array_equal(noisy.cloud.normals, clean.cloud.normals)


def test_scan_round_trip_through_files(tmp_path, body):
    spec = jacket_spec()
    pose = bent_pose(body, {"r_elbow": 0.2})
    scan = generate_scan(body, spec, pose, count=100, seed=9)
    save_scan(scan, tmp_path / "s.ply", tmp_path / "s.json")
    back = load_scan(tmp_path / "s.ply", tmp_path / "s.json")
    # cloud files hold 32-bit floats, so equality is exact at that precision
    as_stored = scan.cloud.positions.astype(np.float32).astype(np.float64)
    assert np.array_equal(back.cloud.positions, as_stored)
    stored_n = scan.cloud.normals.astype(np.float32).astype(np.float64)
    assert np.array_equal(back.cloud.normals, stored_n)
    assert back.outfit == scan.outfit
    assert np.allclose(back.pose.joint_rotations, scan.pose.joint_rotations,
                       atol=1e-15)
    assert np.allclose(back.gt_base_offset, scan.gt_base_offset, atol=1e-15)
    assert np.allclose(back.gt_wrinkle_offset, scan.gt_wrinkle_offset,
                       atol=1e-15)


# ---------------------------------------------------------------------------
# outfit specs


def test_outfit_spec_json_round_trip():
    spec = OutfitSpec(name="loose", base_amplitude=0.04, region="skirt",
                      seed=7, quilt_amplitude=0.01, quilt_frequency=33.0,
                      quilt_direction=(0.0, 1.0, 0.0), quilt_phase=0.4,
                      wrinkle=WrinkleSpec(amplitude=0.02,
                                          frequency=21.0,
                                          direction=(1.0, 0.0, 0.0),
                                          phase=0.1,
                                          joint_coupling={"l_hip": 0.5}))
    doc = json.loads(json.dumps(spec.to_json_dict()))
    assert OutfitSpec.from_json_dict(doc) == spec


def test_outfit_spec_json_defaults_tolerate_missing_quilt_fields():
    doc = jacket_spec().to_json_dict()
    for key in list(doc):
        if key.startswith("quilt_"):
            del doc[key]
    assert OutfitSpec.from_json_dict(doc) == jacket_spec()


def test_outfit_spec_validation():
    with pytest.raises(ValueError, match="base amplitude"):
        OutfitSpec(name="x", base_amplitude=-0.01)
    with pytest.raises(ValueError, match="region"):
        OutfitSpec(name="x", region="cape")
    with pytest.raises(ValueError, match="quilt amplitude"):
        OutfitSpec(name="x", quilt_amplitude=-0.01)
    with pytest.raises(ValueError, match="amplitude"):
        WrinkleSpec(amplitude=-1e-6)


# ---------------------------------------------------------------------------
# dataset generation


@pytest.fixture(scope="module")
def tiny_dataset(body, tmp_path_factory):
    root = tmp_path_factory.mktemp("ds")
    manifest = generate_dataset(
        body, [jacket_spec(), skirt_spec()], root, pose_count=10, split=0.8,
        points_per_scan=128, seed=12, body_params={"resolution": 0.5})
    return root, manifest


def test_dataset_manifest_inventory(tiny_dataset):
    root, manifest = tiny_dataset
    assert set(manifest["outfits"]) == {"jacket", "skirt"}
    assert manifest["pose_count"] == 10
    assert len(manifest["scans"]) == 20
    for record in manifest["scans"]:
        assert (root / record["ply"]).exists()
        assert (root / record["sidecar"]).exists()
    assert (root / "body.obj").exists()
    assert (root / "body.rig.json").exists()


def test_dataset_split_is_disjoint_and_shared_across_outfits(tiny_dataset):
    _, manifest = tiny_dataset
    by_outfit = {}
    for record in manifest["scans"]:
        by_outfit.setdefault(record["outfit"], {})[record["pose_index"]] = \
            record["split"]
    assert by_outfit["jacket"] == by_outfit["skirt"]
    splits = by_outfit["jacket"]
    train = {i for i, s in splits.items() if s == "train"}
    test = {i for i, s in splits.items() if s == "test"}
    assert train | test == set(range(10))
    assert not train & test
    assert len(train) == 8


def test_dataset_loader_round_trip(tiny_dataset):
    root, manifest = tiny_dataset
    ds = load_dataset(root / "manifest.json")
    assert set(ds.outfits) == {"jacket", "skirt"}
    assert ds.body_params == {"resolution": 0.5}
    assert len(ds.scan_records("train", "jacket")) == 8
    assert len(ds.scan_records("test", "skirt")) == 2
    assert len(ds.scan_records(None, None)) == 20
    record = ds.scan_records("test", "jacket")[0]
    scan = ds.load(record)
    assert scan.outfit == "jacket"
    assert scan.cloud.positions.shape == (128, 3)
    # loading via the directory works too
    assert len(load_dataset(root).scans) == 20


def test_dataset_generation_is_deterministic(body, tmp_path):
    kw = dict(pose_count=4, split=0.5, points_per_scan=64, seed=3)
    m1 = generate_dataset(body, [jacket_spec()], tmp_path / "a", **kw)
    m2 = generate_dataset(body, [jacket_spec()], tmp_path / "b", **kw)
    assert m1 == m2
    for record in m1["scans"]:
        a = (tmp_path / "a" / record["ply"]).read_bytes()
        b = (tmp_path / "b" / record["ply"]).read_bytes()
        assert a == b


def test_dataset_rejects_degenerate_pose_count(body, tmp_path):
    with pytest.raises(ValueError, match="at least 2 poses"):
        generate_dataset(body, [jacket_spec()], tmp_path, pose_count=1)
