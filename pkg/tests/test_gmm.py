import numpy as np
import pytest

from sketchshape import gmm


def isotropic_part(mu=(0.0, 0.0, 0.0), scale=0.3, weight=1.0):
    return gmm.GaussianPart(
        mu=np.array(mu), axes=np.eye(3), scales=np.full(3, scale), weight=weight
    )


def single_part_shape(scale=0.3, weight=1.0, d_z=8):
    return gmm.ShapeGMM(parts=(isotropic_part(scale=scale, weight=weight),), latents=np.zeros((1, d_z)))


def test_occupancy_peak_at_center():
    shape = single_part_shape()
    assert gmm.occupancy(shape, np.zeros(3)) == pytest.approx(1.0, abs=1e-12)


def test_occupancy_zero_when_all_weights_zero():
    shape = single_part_shape(weight=0.0)
    pts = np.random.default_rng(0).uniform(-1, 1, (100, 3))
    assert np.all(gmm.occupancy(shape, pts) == 0.0)


def test_half_occupancy_sphere():
    # exp(-r^2 / 2 s^2) = 0.5  =>  r = s * sqrt(2 ln 2)
    s = 0.25
    shape = single_part_shape(scale=s)
    r = s * np.sqrt(2.0 * np.log(2.0))
    rng = np.random.default_rng(1)
    dirs = rng.normal(size=(50, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    vals = gmm.occupancy(shape, r * dirs)
    assert np.abs(vals - 0.5).max() < 1e-6


def test_occupancy_compact_support():
    s = 0.2
    shape = single_part_shape(scale=s)
    rng = np.random.default_rng(2)
    dirs = rng.normal(size=(50, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    outside = (6.0 * s + 1e-9) * dirs
    assert np.all(gmm.occupancy(shape, outside) == 0.0)


def test_occupancy_axis_permutation_invariance():
    # (axes, scales) -> (axes . P, P^{-1}-permuted scales) leaves covariance unchanged
    rng = np.random.default_rng(3)
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    scales = np.array([0.1, 0.2, 0.3])
    perm = [2, 0, 1]
    p_mat = np.eye(3)[:, perm]
    if np.linalg.det(p_mat) < 0:
        p_mat = p_mat[:, [0, 2, 1]]
    part_a = gmm.GaussianPart(np.zeros(3), q, scales, 1.0)
    axes_b = q @ p_mat
    scales_b = np.abs(p_mat.T @ scales)
    part_b = gmm.GaussianPart(np.zeros(3), axes_b, scales_b, 1.0)
    assert np.allclose(part_a.covariance(), part_b.covariance(), atol=1e-12)
    sa = gmm.ShapeGMM((part_a,), np.zeros((1, 4)))
    sb = gmm.ShapeGMM((part_b,), np.zeros((1, 4)))
    pts = rng.uniform(-0.8, 0.8, (200, 3))
    assert np.abs(gmm.occupancy(sa, pts) - gmm.occupancy(sb, pts)).max() < 1e-12


def two_part_shape():
    parts = (
        isotropic_part(mu=(-0.5, 0, 0), scale=0.2),
        isotropic_part(mu=(0.5, 0, 0), scale=0.2),
    )
    return gmm.ShapeGMM(parts=parts, latents=np.zeros((2, 4)))


def test_translate_locality():
    shape = two_part_shape()
    edited = gmm.apply_edit(shape, gmm.Translate(parts=(1,), delta=np.array([0.1, 0.0, 0.0])))
    assert np.array_equal(edited.parts[0].mu, shape.parts[0].mu)
    assert edited.parts[0] is shape.parts[0]
    assert np.allclose(edited.parts[1].mu, [0.6, 0.0, 0.0])


def test_delete_then_restore_roundtrip():
    shape = two_part_shape()
    deleted = gmm.apply_edit(shape, gmm.Delete(parts=(0,)))
    assert deleted.parts[0].weight == 0.0
    restored = gmm.apply_edit(deleted, gmm.Restore(part=0, template=shape.parts[0]))
    assert gmm.shape_to_json(restored) == gmm.shape_to_json(shape)


def test_edit_locality_outside_six_sigma():
    shape = two_part_shape()
    edit = gmm.Translate(parts=(1,), delta=np.array([0.05, 0.05, 0.0]))
    edited = gmm.apply_edit(shape, edit)
    rng = np.random.default_rng(4)
    pts = rng.uniform(-1.5, 1.5, (3000, 3))
    s_max = shape.parts[1].scales.max()
    far_before = np.linalg.norm(pts - shape.parts[1].mu, axis=1) > 6.0 * s_max
    far_after = np.linalg.norm(pts - edited.parts[1].mu, axis=1) > 6.0 * s_max
    far = far_before & far_after
    diff = np.abs(gmm.occupancy(shape, pts[far]) - gmm.occupancy(edited, pts[far]))
    assert diff.max() < 1e-9


def test_rescale_rejects_nonpositive():
    with pytest.raises(gmm.EditError):
        gmm.apply_edit(two_part_shape(), gmm.Rescale(parts=(0,), factors=np.array([1.0, -1.0, 1.0])))


def test_edit_index_out_of_range():
    with pytest.raises(gmm.EditError):
        gmm.apply_edit(two_part_shape(), gmm.Delete(parts=(7,)))


def test_rotate_keeps_center():
    theta = 0.4
    rot = np.array(
        [[np.cos(theta), -np.sin(theta), 0], [np.sin(theta), np.cos(theta), 0], [0, 0, 1.0]]
    )
    shape = two_part_shape()
    edited = gmm.apply_edit(shape, gmm.Rotate(parts=(0,), rotation=rot))
    assert np.array_equal(edited.parts[0].mu, shape.parts[0].mu)
    assert np.allclose(edited.parts[0].axes, rot @ shape.parts[0].axes, atol=1e-15)


def test_json_roundtrip_and_field_names():
    shape = two_part_shape()
    d = gmm.shape_to_dict(shape)
    assert set(d) == {"version", "parts", "latents"}
    assert set(d["parts"][0]) == {"mu", "axes", "scales", "weight"}
    assert d["version"] == 1
    back = gmm.shape_from_json(gmm.shape_to_json(shape))
    assert gmm.shape_to_json(back) == gmm.shape_to_json(shape)


def test_edit_json_roundtrip():
    edits = [
        gmm.Translate((1, 2), np.array([0.1, 0.0, -0.2])),
        gmm.Rescale((0,), np.array([2.0, 1.0, 0.5])),
        gmm.Rotate((3,), np.eye(3)),
        gmm.Delete((4,)),
        gmm.Restore(5, isotropic_part(), np.arange(4.0)),
    ]
    for e in edits:
        round_tripped = gmm.edit_from_dict(gmm.edit_to_dict(e))
        assert gmm.edit_to_dict(round_tripped) == gmm.edit_to_dict(e)
