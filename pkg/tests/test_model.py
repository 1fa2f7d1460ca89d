"""Deformation model tests.

Checks the structural guarantees of the decomposition: the world-space
assembly identity, pose invariance of the garment branch, cross-face
continuity of the surface feature route, and checkpoint fidelity.
"""

import numpy as np
import pytest
import torch

from pointcloth.body import HumanoidConfig, Pose, build_humanoid
from pointcloth.geometry import pack_surface_points, sample_surface
from pointcloth.model import (
    ClothModel,
    ModelConfig,
    default_abstraction_counts,
)
from pointcloth.nets import EncoderConfig
from pointcloth.uvgrid import humanoid_atlas

SMALL = HumanoidConfig(resolution=0.5)
TINY_WIDTHS = (16, 16, 16)


def small_model(seed=0, **config_kw):
    body = build_humanoid(SMALL)
    kw = dict(code_width=8, decoder_widths=TINY_WIDTHS)
    kw.update(config_kw)
    model = ClothModel(body, ModelConfig(**kw), seed=seed)
    model.add_outfit("jacket")
    return model


@pytest.fixture(scope="module")
def kit():
    model = small_model()
    points = sample_surface(model.body, 64, seed=5)
    face_idx, bary = pack_surface_points(points)
    return model, points, face_idx, bary


def random_poses(num_joints, count, seed):
    rng = np.random.default_rng(seed)
    return [Pose.from_axis_angle(rng.uniform(-0.4, 0.4, size=(num_joints, 3)))
            for _ in range(count)]


# ---------------------------------------------------------------------------
# decomposition structure


def test_world_points_obey_assembly_identity(kit):
    model, points, face_idx, bary = kit
    pose = random_poses(model.body.skeleton.num_joints, 1, 11)[0]
    samples = model.forward(pose, "jacket", points)
    for s in samples:
        want = s.frame.rotation @ (s.r_g + s.r_p) + s.p_u
        assert np.array_equal(s.x_world, want)
        n = s.frame.rotation @ s.normal_local
        assert np.array_equal(s.n_world, n / np.linalg.norm(n))


def test_training_route_matches_inference_route(kit):
    model, _, face_idx, bary = kit
    pose = random_poses(model.body.skeleton.num_joints, 1, 12)[0]
    out = model.training_forward(pose, "jacket", face_idx, bary)
    a = model.forward_arrays(pose, "jacket", face_idx, bary)
    rebuilt = np.einsum("mij,mj->mi", a["rot"], a["r_g"] + a["r_p"]) + a["p_u"]
    assert np.allclose(out.x_world.detach().numpy(), rebuilt, atol=1e-5)
    assert np.allclose(out.r_total.detach().numpy(), a["r_g"] + a["r_p"],
                       atol=1e-6)


def test_frame_rotations_are_orthonormal(kit):
    model, _, face_idx, bary = kit
    pose = random_poses(model.body.skeleton.num_joints, 1, 13)[0]
    a = model.forward_arrays(pose, "jacket", face_idx, bary)
    eye = np.eye(3)
    for rot in a["rot"]:
        assert np.allclose(rot.T @ rot, eye, atol=1e-10)
        assert np.linalg.det(rot) == pytest.approx(1.0, abs=1e-10)


def test_world_normals_are_unit_length(kit):
    model, _, face_idx, bary = kit
    pose = random_poses(model.body.skeleton.num_joints, 1, 14)[0]
    out = model.training_forward(pose, "jacket", face_idx, bary)
    norms = out.n_world.detach().norm(dim=1).numpy()
    assert np.allclose(norms, 1.0, atol=1e-6)


# ---------------------------------------------------------------------------
# pose invariance of the garment branch


def test_garment_branch_is_pose_invariant(kit):
    model, _, face_idx, bary = kit
    poses = random_poses(model.body.skeleton.num_joints, 10, 21)
    first = model.forward_arrays(poses[0], "jacket", face_idx, bary)["r_g"]
    for pose in poses[1:]:
        r_g = model.forward_arrays(pose, "jacket", face_idx, bary)["r_g"]
        assert np.array_equal(r_g, first)


def test_template_preview_is_deterministic_and_poseless(kit):
    model, points, face_idx, bary = kit
    tmpl_a = model.template_preview_packed("jacket", face_idx, bary)
    tmpl_b = model.template_preview_packed("jacket", face_idx, bary)
    assert np.array_equal(tmpl_a.positions, tmpl_b.positions)
    ident = Pose.identity(model.body.skeleton.num_joints)
    arrays = model.forward_arrays(ident, "jacket", face_idx, bary)
    want = (np.einsum("mij,mj->mi", arrays["rot"], arrays["r_g"])
            + arrays["p_u"])
    assert np.array_equal(tmpl_a.positions, want)


def test_wrinkles_vanish_in_merged_variant(kit):
    model = small_model(merge_decoders=True)
    points = sample_surface(model.body, 32, seed=6)
    face_idx, bary = pack_surface_points(points)
    pose = random_poses(model.body.skeleton.num_joints, 1, 22)[0]
    out = model.training_forward(pose, "jacket", face_idx, bary)
    assert out.r_pose is None
    assert np.all(np.isfinite(out.x_world.detach().numpy()))
    arrays = model.forward_arrays(pose, "jacket", face_idx, bary)
    assert np.array_equal(arrays["r_p"], np.zeros_like(arrays["r_p"]))


def test_pose_branch_ignores_code_when_link_disabled(kit):
    model = small_model(garment_to_pose_decoder=False)
    model.add_outfit("skirt")
    points = sample_surface(model.body, 32, seed=7)
    face_idx, bary = pack_surface_points(points)
    pose = random_poses(model.body.skeleton.num_joints, 1, 23)[0]
    a = model.forward_arrays(pose, "jacket", face_idx, bary)
    b = model.forward_arrays(pose, "skirt", face_idx, bary)
    assert np.array_equal(a["r_p"], b["r_p"])
    assert not np.array_equal(a["r_g"], b["r_g"])


# ---------------------------------------------------------------------------
# continuity across faces


def shared_edge_pairs(faces):
    """(face_a, face_b, v0, v1) for every interior edge."""
    owners = {}
    for f, (a, b, c) in enumerate(faces):
        for v0, v1 in ((a, b), (b, c), (c, a)):
            owners.setdefault((min(v0, v1), max(v0, v1)), []).append(f)
    return [(fs[0], fs[1], e[0], e[1]) for e, fs in owners.items()
            if len(fs) == 2]


def edge_bary(faces, face, v0, v1, t):
    bary = np.zeros(3)
    corners = list(faces[face])
    bary[corners.index(v0)] = 1.0 - t
    bary[corners.index(v1)] = t
    return bary


def test_surface_route_is_continuous_across_faces(kit):
    model, _, _, _ = kit
    faces = model.body.faces
    pairs = shared_edge_pairs(faces)
    rng = np.random.default_rng(31)
    picks = rng.choice(len(pairs), size=40, replace=False)
    pose = random_poses(model.body.skeleton.num_joints, 1, 32)[0]
    f_a, f_b, b_a, b_b = [], [], [], []
    for i in picks:
        fa, fb, v0, v1 = pairs[i]
        t = rng.uniform(0.05, 0.95)
        f_a.append(fa)
        f_b.append(fb)
        b_a.append(edge_bary(faces, fa, v0, v1, t))
        b_b.append(edge_bary(faces, fb, v0, v1, t))
    via_a = model.forward_arrays(pose, "jacket", np.array(f_a), np.array(b_a))
    via_b = model.forward_arrays(pose, "jacket", np.array(f_b), np.array(b_b))
    for key in ("r_g", "r_p", "p_u", "rot", "normal_local"):
        assert np.array_equal(via_a[key], via_b[key]), key
    x_a = np.einsum("mij,mj->mi", via_a["rot"], via_a["r_g"] + via_a["r_p"]) \
        + via_a["p_u"]
    x_b = np.einsum("mij,mj->mi", via_b["rot"], via_b["r_g"] + via_b["r_p"]) \
        + via_b["p_u"]
    assert np.array_equal(x_a, x_b)


# ---------------------------------------------------------------------------
# zeroed decoders reproduce the bare body


def zero_output_layers(model):
    with torch.no_grad():
        for name in model.store.names():
            if name.endswith("out.w") or name.endswith("out.b"):
                model.store[name].zero_()


def test_zeroed_heads_give_bare_posed_body(kit):
    model = small_model(seed=3)
    zero_output_layers(model)
    points = sample_surface(model.body, 48, seed=8)
    face_idx, bary = pack_surface_points(points)
    pose = random_poses(model.body.skeleton.num_joints, 1, 33)[0]
    a = model.forward_arrays(pose, "jacket", face_idx, bary)
    assert np.array_equal(a["r_g"], np.zeros_like(a["r_g"]))
    assert np.array_equal(a["r_p"], np.zeros_like(a["r_p"]))
    out = model.training_forward(pose, "jacket", face_idx, bary)
    assert np.allclose(out.x_world.detach().numpy(), a["p_u"], atol=1e-6)


# ---------------------------------------------------------------------------
# gradients respect the decomposition


def test_wrinkle_penalty_never_reaches_garment_decoder(kit):
    model = small_model(seed=4)
    points = sample_surface(model.body, 32, seed=9)
    face_idx, bary = pack_surface_points(points)
    pose = random_poses(model.body.skeleton.num_joints, 1, 34)[0]
    out = model.training_forward(pose, "jacket", face_idx, bary)
    penalty = (out.r_pose * out.r_pose).sum(dim=1).mean()
    penalty.backward()
    for name in model.store.names():
        if name.startswith("decoder.garment."):
            assert float(np.abs(model.store.gradient(name)).sum()) == 0.0, name
    pose_grads = sum(float(np.abs(model.store.gradient(n)).sum())
                     for n in model.store.names()
                     if n.startswith("decoder.pose."))
    assert pose_grads > 0.0


def test_garment_code_gradient_flows_through_chamfer(kit):
    model = small_model(seed=5)
    points = sample_surface(model.body, 32, seed=10)
    face_idx, bary = pack_surface_points(points)
    pose = random_poses(model.body.skeleton.num_joints, 1, 35)[0]
    out = model.training_forward(pose, "jacket", face_idx, bary)
    out.x_world.square().sum().backward()
    code_name = [n for n in model.store.names() if n.startswith("garment_code.")]
    assert code_name
    assert float(np.abs(model.store.gradient(code_name[0])).sum()) > 0.0


# ---------------------------------------------------------------------------
# outfits


def test_add_outfit_is_idempotent():
    model = small_model(seed=6)
    names_before = model.store.names()
    model.add_outfit("jacket")
    assert model.store.names() == names_before
    assert model.outfits.count("jacket") == 1


def test_unknown_outfit_raises(kit):
    model, _, face_idx, bary = kit
    pose = Pose.identity(model.body.skeleton.num_joints)
    with pytest.raises(ValueError, match="unknown outfit"):
        model.forward_arrays(pose, "gown", face_idx, bary)


def test_distinct_outfits_get_distinct_codes():
    model = small_model(seed=7)
    model.add_outfit("skirt")
    a = model.store["garment_code.jacket"].detach().numpy()
    b = model.store["garment_code.skirt"].detach().numpy()
    assert a.shape == b.shape
    assert not np.array_equal(a, b)


def test_pose_joint_count_mismatch_raises(kit):
    model, _, face_idx, bary = kit
    with pytest.raises(ValueError, match="joint count"):
        model.forward_arrays(Pose.identity(3), "jacket", face_idx, bary)


# ---------------------------------------------------------------------------
# checkpointing


def test_checkpoint_round_trip(tmp_path, kit):
    model, _, face_idx, bary = kit
    path = tmp_path / "model.ckpt"
    model.save(path, extra_meta={"note": 7})
    clone = ClothModel.load(path, model.body)
    assert clone.outfits == model.outfits
    assert clone.config == model.config
    ours, theirs = model.store.state_arrays(), clone.store.state_arrays()
    assert sorted(ours) == sorted(theirs)
    for name in ours:
        assert np.array_equal(ours[name], theirs[name]), name
    pose = random_poses(model.body.skeleton.num_joints, 1, 36)[0]
    a = model.forward_arrays(pose, "jacket", face_idx, bary)
    b = clone.forward_arrays(pose, "jacket", face_idx, bary)
    for key in a:
        assert np.array_equal(a[key], b[key]), key


def test_checkpoint_rejects_wrong_body(tmp_path, kit):
    model, _, _, _ = kit
    path = tmp_path / "model.ckpt"
    model.save(path)
    other = build_humanoid(HumanoidConfig(resolution=0.45))
    with pytest.raises(ValueError, match="different template body"):
        ClothModel.load(path, other)


def test_checkpoint_rejects_foreign_kind(tmp_path, kit):
    model, _, _, _ = kit
    from pointcloth.meshio import save_checkpoint
    path = tmp_path / "other.ckpt"
    save_checkpoint(path, {"x": np.zeros(3)}, {"kind": "something-else"})
    with pytest.raises(ValueError, match="not a model checkpoint"):
        ClothModel.load(path, model.body)


# ---------------------------------------------------------------------------
# configuration


def test_model_config_json_round_trip():
    cfg = ModelConfig(code_width=8, decoder_widths=(16, 16, 16),
                      garment_encoder=EncoderConfig(
                          input_width=8, abstraction_counts=(16, 8), k=4,
                          sa_widths=(6, 7), fp_widths=(7, 6)),
                      pose_encoder=EncoderConfig(
                          input_width=6, abstraction_counts=(16, 8), k=4,
                          sa_widths=(6, 7), fp_widths=(7, 6)))
    doc = cfg.to_json_dict()
    import json
    assert ModelConfig.from_json_dict(json.loads(json.dumps(doc))) == cfg


def test_abstraction_counts_scale_with_template():
    assert default_abstraction_counts(6890) == (2048, 1024, 512, 256, 128, 64)
    assert default_abstraction_counts(246) == (64, 32, 16, 8, 4, 2)
    with pytest.raises(ValueError, match="too small"):
        default_abstraction_counts(16)


def test_uv_route_requires_atlas():
    body = build_humanoid(SMALL)
    with pytest.raises(ValueError, match="atlas"):
        ClothModel(body, ModelConfig(code_width=8, decoder_widths=TINY_WIDTHS,
                                     uv_features=True))


def test_uv_route_forward_runs():
    body = build_humanoid(SMALL)
    atlas = humanoid_atlas(SMALL)
    model = ClothModel(body, ModelConfig(code_width=8,
                                         decoder_widths=TINY_WIDTHS,
                                         uv_features=True,
                                         uv_grid_resolution=32),
                       atlas=atlas)
    model.add_outfit("jacket")
    points = sample_surface(body, 32, seed=12)
    face_idx, bary = pack_surface_points(points)
    pose = Pose.identity(body.skeleton.num_joints)
    out = model.training_forward(pose, "jacket", face_idx, bary)
    assert np.all(np.isfinite(out.x_world.detach().numpy()))


def test_same_seed_models_are_bitwise_identical():
    a, b = small_model(seed=9), small_model(seed=9)
    sa, sb = a.store.state_arrays(), b.store.state_arrays()
    assert sorted(sa) == sorted(sb)
    for name in sa:
        assert np.array_equal(sa[name], sb[name]), name


def test_different_seed_models_differ():
    a, b = small_model(seed=9), small_model(seed=10)
    diff = sum(not np.array_equal(x, y)
               for x, y in zip(a.store.state_arrays().values(),
                               b.store.state_arrays().values()))
    assert diff > 0
