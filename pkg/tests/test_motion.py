import struct

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from ustvsr.errors import FormatError, UsageError
from ustvsr.gradsuite import check_fuse, check_predict_mask, check_warp_flow, check_warp_image
from ustvsr.imaging import psnr
from ustvsr.motion import (FINet, MaskNet, estimate_flow, fill_holes, finet_forward, fuse, horn_schunck,
                           predict_mask, read_flo, reverse_flow, scale_flow, splat_flow, warp, write_flo)

from oracles import brute_force_splat, smooth_field, texture


# ------------------------------------------------------------------ flow files

def test_flo_round_trip_bit_exact(tmp_path, gen):
    flow = (torch.rand(2, 5, 7, generator=gen) - 0.5) * 6
    write_flo(tmp_path / "f.flo", flow)
    assert torch.equal(read_flo(tmp_path / "f.flo"), flow)


def test_flo_layout_matches_hand_written_file(tmp_path):
    # width 2, height 1: pixel (0,0) = (1.5, -2), pixel (0,1) = (0.25, 0)
    raw = b"PIEH" + struct.pack("<ii", 2, 1) + struct.pack("<4f", 1.5, -2.0, 0.25, 0.0)
    (tmp_path / "hand.flo").write_bytes(raw)
    flow = read_flo(tmp_path / "hand.flo")
    assert flow.shape == (2, 1, 2)
    assert flow[:, 0, 0].tolist() == [1.5, -2.0] and flow[:, 0, 1].tolist() == [0.25, 0.0]
    write_flo(tmp_path / "mine.flo", flow)
    assert (tmp_path / "mine.flo").read_bytes() == raw


def test_flo_errors(tmp_path):
    (tmp_path / "magic.flo").write_bytes(b"ABCD" + struct.pack("<ii", 1, 1) + bytes(8))
    with pytest.raises(FormatError):
        read_flo(tmp_path / "magic.flo")
    (tmp_path / "short.flo").write_bytes(b"PIEH" + struct.pack("<ii", 4, 4) + bytes(8))
    with pytest.raises(OSError):
        read_flo(tmp_path / "short.flo")
    (tmp_path / "huge.flo").write_bytes(b"PIEH" + struct.pack("<ii", 1, 1) + struct.pack("<2f", 50.0, 0.0))
    with pytest.raises(FormatError):
        read_flo(tmp_path / "huge.flo")
    with pytest.raises(OSError):
        read_flo(tmp_path / "absent.flo")


def test_precomputed_backend(tmp_path, gen):
    flow = torch.rand(2, 6, 6, generator=gen)
    write_flo(tmp_path / "f.flo", flow)
    frame = torch.rand(3, 6, 6, generator=gen)
    assert torch.equal(estimate_flow(frame, frame, "precomputed", tmp_path / "f.flo"), flow)
    with pytest.raises(OSError):
        estimate_flow(torch.zeros(3, 4, 4), torch.zeros(3, 4, 4), "precomputed", tmp_path / "f.flo")
    with pytest.raises(OSError):
        estimate_flow(frame, frame, "precomputed", tmp_path / "none.flo")


# ----------------------------------------------------------------- estimation

def test_horn_schunck_static_scene():
    img = texture(48, 48)
    flow = horn_schunck(img, img)
    assert flow.norm(dim=0).mean() <= 0.05


def test_horn_schunck_recovers_circular_shift():
    img = texture(64, 64, seed=3)
    shifted = torch.roll(img, shifts=2, dims=-1)  # content moves 2 px to the right
    flow = estimate_flow(img, shifted)
    m = int(64 * 0.1)
    u = flow[0, m:-m, m:-m].median().item()
    v = flow[1, m:-m, m:-m].median().item()
    assert abs(u - 2) <= 0.5 and abs(v) <= 0.5


# ------------------------------------------------------------- scale / reverse

def test_scale_flow():
    f = torch.stack([torch.full((3, 3), 4.0), torch.full((3, 3), -2.0)])
    assert torch.equal(scale_flow(f, 0.0), torch.zeros_like(f))
    assert torch.equal(scale_flow(f, 1.0), f)
    assert torch.equal(scale_flow(f, 0.25)[:, 1, 1], torch.tensor([1.0, -0.5]))


def test_reverse_constant_field():
    f = torch.stack([torch.full((12, 12), 3.0), torch.full((12, 12), 1.0)]).double()
    rev = reverse_flow(f)
    interior = rev[:, 2:-1, 4:-1]
    assert (interior[0] + 3).abs().max() <= 1e-5 and (interior[1] + 1).abs().max() <= 1e-5
    assert torch.equal(reverse_flow(torch.zeros(2, 5, 5)), torch.zeros(2, 5, 5))


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_splat_matches_brute_force(seed):
    f = smooth_field(16, 16, seed)
    num, den = brute_force_splat(f.numpy())
    got = reverse_flow(f, fill=False).numpy()
    valid = den > 0
    expect = np.where(valid, num / np.where(valid, den, 1), 0)
    assert np.abs(got - expect).max() <= 1e-6
    n, d = splat_flow(f)
    assert np.abs(d[0, 0].numpy() - den).max() <= 1e-9


def test_hole_filling_covers_everything():
    f = torch.zeros(2, 10, 10, dtype=torch.float64)
    f[0, :, :5] = 2.0  # left half moves right and leaves holes behind
    filled = reverse_flow(f)
    _, den = splat_flow(f)
    assert bool((den == 0).any())
    assert torch.isfinite(filled).all()
    holes = (den[0, 0] == 0)
    assert filled[:, holes].abs().sum() > 0
    valid = torch.zeros(1, 1, 4, 4)
    valid[..., 0, 0] = 1
    grown = fill_holes(torch.ones(1, 2, 4, 4), valid)
    assert torch.equal(grown, torch.ones(1, 2, 4, 4))


# ------------------------------------------------------------------- warping

def test_warp_identity_and_integer_shift(gen):
    img = torch.rand(3, 7, 9, generator=gen)
    assert torch.equal(warp(img, torch.zeros(2, 7, 9)), img)
    f = torch.zeros(2, 7, 9)
    f[0] = -1
    out = warp(img, f)
    assert torch.equal(out[:, :, 1:], img[:, :, :-1])


@settings(max_examples=20, deadline=None)
@given(a=st.floats(-1, 1), b=st.floats(-1, 1), c=st.floats(-1, 1),
       u=st.floats(-1.5, 1.5), v=st.floats(-1.5, 1.5))
def test_warp_exact_on_affine_images(a, b, c, u, v):
    h, w = 8, 9
    y, x = torch.meshgrid(torch.arange(h, dtype=torch.float64), torch.arange(w, dtype=torch.float64),
                          indexing="ij")
    img = (a * x + b * y + c)[None]
    f = torch.stack([torch.full((h, w), u, dtype=torch.float64), torch.full((h, w), v, dtype=torch.float64)])
    out = warp(img, f)
    sl = (slice(2, -2), slice(2, -2))
    expect = a * (x + u) + b * (y + v) + c
    assert (out[0][sl] - expect[sl]).abs().max() <= 1e-9


def test_warp_half_pixel_ramp():
    ramp = torch.arange(6, dtype=torch.float64).repeat(4, 1)[None]
    f = torch.zeros(2, 4, 6, dtype=torch.float64)
    f[0] = 0.5
    assert torch.allclose(warp(ramp, f)[0, :, :-1], ramp[0, :, :-1] + 0.5, atol=0)


def test_warp_shape_mismatch():
    with pytest.raises(UsageError):
        warp(torch.zeros(3, 4, 4), torch.zeros(2, 5, 4))


# ---------------------------------------------------------------- mask, fuse

def test_mask_range_and_determinism(gen):
    torch.manual_seed(0)
    net_a = MaskNet()
    torch.manual_seed(0)
    net_b = MaskNet()
    with torch.no_grad():
        for p in net_a.parameters():
            p.mul_(50)  # push logits to saturation
        for p in net_b.parameters():
            p.mul_(50)
    inputs = [torch.rand(3, 6, 6, generator=gen), torch.rand(3, 6, 6, generator=gen),
              torch.randn(2, 6, 6, generator=gen) * 5, torch.randn(2, 6, 6, generator=gen) * 5]
    m = predict_mask(*inputs, net_a)
    assert m.shape == (1, 6, 6)
    assert m.min() >= 1e-3 and m.max() <= 1 - 1e-3
    assert torch.equal(m, predict_mask(*inputs, net_b))


def test_fuse_boundaries(gen):
    i0, i1 = torch.rand(2, 3, 5, 5, generator=gen)
    z = torch.zeros(2, 5, 5)
    rand_flow = torch.randn(2, 5, 5, generator=gen)
    for b in (1e-3, 0.5, 1 - 1e-3):
        mask = torch.full((1, 5, 5), b)
        assert (fuse(i0, i1, z, rand_flow, mask, 0.0) - i0).abs().max() <= 1e-5
        assert (fuse(i0, i1, rand_flow, z, mask, 1.0) - i1).abs().max() <= 1e-5
    half = fuse(i0, i1, z, z, torch.full((1, 5, 5), 0.5), 0.5)
    assert (half - (i0 + i1) / 2).abs().max() <= 1e-6


@pytest.mark.parametrize("check", [check_warp_image, check_warp_flow, check_fuse, check_predict_mask])
def test_motion_gradients(check):
    rep = check(torch.Generator().manual_seed(7))
    assert rep.passed, str(rep)
    assert rep.num_points >= 100


# --------------------------------------------------------------------- FINet

def test_finet_boundaries_and_static_scene():
    torch.manual_seed(0)
    net = FINet()
    i0, i1 = texture(32, 32, 1), texture(32, 32, 2)
    with torch.no_grad():
        out0, _, _ = finet_forward(i0, i1, 0.0, net)
        out1, _, _ = finet_forward(i0, i1, 1.0, net)
        assert (out0 - i0).abs().max() <= 1e-5
        assert (out1 - i1).abs().max() <= 1e-5
        for t in (0.25, 0.6):
            mid, ft0, ft1 = net(i0, i0, t)
            assert psnr(mid, i0) >= 45
            assert ft0.shape == ft1.shape == (2, 32, 32)
    with pytest.raises(UsageError):
        net(i0, i1, 1.5)
