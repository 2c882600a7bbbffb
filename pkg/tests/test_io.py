import struct

import numpy as np
import pytest

from clods import io, sh
from clods.geometry import Trajectory, grid_mesh
from clods.splat import OpacityNet, anchor_gaussians
from clods.synth import make_camera_ring

rng = np.random.default_rng(0)


def test_obj_roundtrip_keeps_positions_uv_faces_and_pins(tmp_path):
    m = grid_mesh(4, 3)
    m = m.with_positions(m.world_pos + rng.normal(0, 0.01, m.world_pos.shape))
    io.write_obj(tmp_path / "cloth.obj", m)
    io.write_pinned(tmp_path / "cloth_pinned.json", [0, 3])
    back = io.read_obj(tmp_path / "cloth.obj")
    np.testing.assert_array_equal(back.world_pos, m.world_pos)
    np.testing.assert_array_equal(back.mesh_pos, m.mesh_pos)
    np.testing.assert_array_equal(back.faces, m.faces)
    np.testing.assert_array_equal(back.pinned, [0, 3])


def test_obj_rejects_quads_and_split_indices(tmp_path):
    p = tmp_path / "bad.obj"
    p.write_text("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nvt 0 0\nvt 1 0\nvt 1 1\nvt 0 1\nf 1 2 3 4\n")
    with pytest.raises(ValueError):
        io.read_obj(p)
    p.write_text("v 0 0 0\nv 1 0 0\nv 1 1 0\nvt 0 0\nvt 1 0\nvt 1 1\nf 1/2 2/2 3/3\n")
    with pytest.raises(ValueError):
        io.read_obj(p)


def test_ctrj_byte_layout(tmp_path):
    x = rng.normal(size=(3, 2, 3))
    io.write_trajectory(tmp_path / "a.ctrj", Trajectory(x))
    raw = (tmp_path / "a.ctrj").read_bytes()
    assert raw[:4] == b"CTRJ"
    assert struct.unpack("<III", raw[4:16]) == (1, 3, 2)
    assert len(raw) == 16 + x.size * 8
    np.testing.assert_array_equal(np.frombuffer(raw[16:], "<f8").reshape(x.shape), x)
    np.testing.assert_array_equal(io.read_trajectory(tmp_path / "a.ctrj").node_pos, x)


def test_ctrj_rejects_bad_magic_and_version(tmp_path):
    p = tmp_path / "x.ctrj"
    p.write_bytes(b"NOPE" + bytes(12))
    with pytest.raises(ValueError):
        io.read_trajectory(p)
    p.write_bytes(b"CTRJ" + struct.pack("<III", 9, 0, 0))
    with pytest.raises(ValueError):
        io.read_trajectory(p)


def test_pfm_layout_is_bottom_up_little_endian(tmp_path):
    img = np.arange(2 * 3 * 3, dtype=float).reshape(2, 3, 3) / 10
    io.write_pfm(tmp_path / "a.pfm", img)
    raw = (tmp_path / "a.pfm").read_bytes()
    header = b"PF\n3 2\n-1.0\n"
    assert raw.startswith(header)
    body = np.frombuffer(raw[len(header):], "<f4").reshape(2, 3, 3)
    np.testing.assert_array_equal(body[0], img[1].astype(np.float32))
    back = io.read_pfm(tmp_path / "a.pfm")
    np.testing.assert_array_equal(back, img.astype(np.float32).astype(np.float64))


def test_pfm_big_endian_and_grayscale_read(tmp_path):
    g = np.array([[0.25, 0.5], [1.0, 2.0]])
    p = tmp_path / "g.pfm"
    p.write_bytes(b"Pf\n2 2\n1.0\n" + g[::-1].astype(">f4").tobytes())
    np.testing.assert_array_equal(io.read_pfm(p), g)


def test_srgb_transfer_roundtrip_and_png(tmp_path):
    x = np.linspace(0, 1, 101)
    np.testing.assert_allclose(io.srgb_to_linear(io.linear_to_srgb(x)), x, atol=1e-12)
    assert io.linear_to_srgb(np.array(0.5)) == pytest.approx(0.7353569830524495)
    img = rng.uniform(size=(5, 4, 3))
    io.write_png(tmp_path / "a.png", img)
    # 8-bit quantization in sRGB space: one code step is at most 1/255 of the encoded value
    back = io.read_png(tmp_path / "a.png")
    assert np.abs(io.linear_to_srgb(back) - io.linear_to_srgb(img)).max() <= 0.5 / 255 + 1e-12


def test_cameras_roundtrip(tmp_path):
    cams = make_camera_ring(3, 2.0, (0.1, 0.2, 0.3), 0.5, 24)
    io.write_cameras(tmp_path / "cams.json", cams)
    back = io.read_cameras(tmp_path / "cams.json")
    for a, b in zip(cams, back):
        assert a.to_dict() == b.to_dict()
        X = rng.normal(size=(4, 3))
        np.testing.assert_array_equal(a.to_view(X), b.to_view(X))


def test_splat_checkpoint_roundtrip(tmp_path):
    m = grid_mesh(3, 3)
    gc = anchor_gaussians(m, 3, seed=1, sh_degree=1)
    gc.color_coeffs = rng.normal(size=gc.color_coeffs.shape)
    gc.scale_mult = rng.uniform(0.5, 1.5, len(gc))
    net = OpacityNet.for_mesh(m, seed=2, input_mask=(False, True))
    io.save_splat(tmp_path / "s.smgs", gc, net, m.n_faces)
    gc2, net2, F = io.load_splat(tmp_path / "s.smgs")
    assert F == m.n_faces and gc2.sh_degree == 1 and net2.input_mask == (False, True)
    for a, b in [(gc.face_id, gc2.face_id), (gc.beta, gc2.beta),
                 (gc.color_coeffs, gc2.color_coeffs), (gc.scale_mult, gc2.scale_mult)]:
        np.testing.assert_array_equal(a, b)
    for a, b in zip(net.params, net2.params):
        np.testing.assert_array_equal(a, b)
    assert gc2.color_coeffs.shape[1] == 3 * sh.n_basis(1)
    (tmp_path / "bad.smgs").write_bytes(b"XXXX" + bytes(80))
    with pytest.raises(ValueError):
        io.load_splat(tmp_path / "bad.smgs")


def test_manifest_and_frame_paths(tmp_path):
    man = {"b": [1, 2], "a": {"x": 0.5}}
    io.write_manifest(tmp_path / "sub" / "m.json", man)
    assert io.read_manifest(tmp_path / "sub" / "m.json") == man
    assert io.frame_path(tmp_path, "frames", 2, 7) == tmp_path / "frames" / "view2" / "t7.pfm"
    imgs = [rng.uniform(size=(4, 4, 3)) for _ in range(2)]
    for cid, im in enumerate(imgs):
        io.write_pfm(io.frame_path(tmp_path, "frames", cid, 3), im)
    (fs,) = io.load_frames(tmp_path, "frames", [0, 1], [3])
    assert fs.timestep == 3 and fs.camera_ids == [0, 1]
    np.testing.assert_allclose(fs.images[1], imgs[1], atol=1e-7)
