import cv2
import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from ustvsr.errors import UsageError
from ustvsr.imaging import bicubic_resize, psnr, read_image, ssim, to_bytes, write_image

from oracles import bicubic_oracle, psnr_oracle, ssim_oracle


# -------------------------------------------------------------------- I/O

def test_png_bytes_match_reference_codec(tmp_path):
    frame = torch.tensor([[[0.0, 1.0], [0.5, 0.2]],
                          [[1.0, 0.0], [0.25, 0.8]],
                          [[0.0, 0.0], [1.0, 0.6]]])
    expected = np.floor(frame.numpy().transpose(1, 2, 0) * 255 + 0.5).astype(np.uint8)
    write_image(tmp_path / "a.png", frame)
    decoded = cv2.imread(str(tmp_path / "a.png"), cv2.IMREAD_UNCHANGED)[..., ::-1]
    assert np.array_equal(decoded, expected)
    # and the other direction: bytes written by the reference codec
    cv2.imwrite(str(tmp_path / "b.png"), expected[..., ::-1])
    back = read_image(tmp_path / "b.png")
    assert torch.equal(back, torch.from_numpy(expected.transpose(2, 0, 1).astype(np.float32) / 255))


def test_single_white_pixel(tmp_path):
    cv2.imwrite(str(tmp_path / "w.png"), np.full((1, 1, 3), 255, np.uint8))
    assert torch.equal(read_image(tmp_path / "w.png"), torch.ones(3, 1, 1))


def test_round_trip_quantisation_bound(tmp_path, gen):
    frame = torch.rand(3, 9, 7, generator=gen)
    write_image(tmp_path / "r.png", frame)
    assert (read_image(tmp_path / "r.png") - frame).abs().max() <= 1 / 510 + 1e-7


def test_write_rejects_out_of_range(tmp_path):
    with pytest.raises(UsageError):
        write_image(tmp_path / "x.png", torch.full((3, 2, 2), 1.5))
    assert to_bytes(torch.ones(3, 1, 1)).dtype == np.uint8


def test_read_errors_mention_path(tmp_path):
    bad = tmp_path / "junk.png"
    bad.write_bytes(b"not an image")
    with pytest.raises(OSError, match="junk.png"):
        read_image(bad)
    with pytest.raises(OSError, match="missing.png"):
        read_image(tmp_path / "missing.png")


# ----------------------------------------------------------------- resize

def test_bicubic_ramp_matches_kernel_oracle():
    ramp = np.arange(16, dtype=np.float64).reshape(4, 4) / 15
    got = bicubic_resize(torch.from_numpy(ramp), 8, 8).numpy()
    assert np.abs(got - bicubic_oracle(ramp, 8, 8)).max() <= 1e-6


@pytest.mark.parametrize("shape,out", [((5, 7), (3, 4)), ((6, 6), (13, 9)), ((3, 8), (7, 20))])
def test_bicubic_random_matches_kernel_oracle(shape, out, gen):
    img = torch.rand(*shape, generator=gen, dtype=torch.float64)
    got = bicubic_resize(img, *out).numpy()
    assert np.abs(got - bicubic_oracle(img.numpy(), *out)).max() <= 1e-6


def test_bicubic_constant_and_identity(gen):
    const = torch.full((3, 5, 6), 0.42, dtype=torch.float64)
    assert torch.allclose(bicubic_resize(const, 17, 11), torch.full((3, 17, 11), 0.42, dtype=torch.float64))
    img = torch.rand(3, 5, 6, generator=gen)
    assert (bicubic_resize(img, 5, 6) - img).abs().max() <= 1e-6
    with pytest.raises(UsageError):
        bicubic_resize(img, 0, 3)


@settings(max_examples=25, deadline=None)
@given(alpha=st.floats(-2, 2), beta=st.floats(-2, 2), oh=st.integers(1, 12), ow=st.integers(1, 12),
       seed=st.integers(0, 10_000))
def test_bicubic_is_linear(alpha, beta, oh, ow, seed):
    g = torch.Generator().manual_seed(seed)
    x, y = torch.rand(2, 2, 5, 6, generator=g, dtype=torch.float64)
    lhs = bicubic_resize(alpha * x + beta * y, oh, ow)
    rhs = alpha * bicubic_resize(x, oh, ow) + beta * bicubic_resize(y, oh, ow)
    assert (lhs - rhs).abs().max() <= 1e-6


def test_down_up_is_deterministic_and_capped(gen):
    img = torch.rand(3, 24, 24, generator=gen)
    a = bicubic_resize(bicubic_resize(img, 12, 12), 24, 24)
    b = bicubic_resize(bicubic_resize(img, 12, 12), 24, 24)
    assert torch.equal(a, b)
    assert psnr(a, img) <= 99.0


# ---------------------------------------------------------------- metrics

def test_psnr_known_values():
    assert psnr(torch.zeros(3, 4, 4), torch.zeros(3, 4, 4)) == 99.0
    assert psnr(torch.zeros(3, 4, 4), torch.ones(3, 4, 4)) == 0.0
    a = torch.tensor([[0.0, 0.0]], dtype=torch.float64)
    b = torch.tensor([[0.1, 0.0]], dtype=torch.float64)
    assert round(psnr(a, b), 4) == 23.0103
    with pytest.raises(UsageError):
        psnr(torch.zeros(2, 2), torch.zeros(2, 3))


def test_psnr_matches_direct_formula(gen):
    a, b = torch.rand(2, 3, 16, 16, generator=gen, dtype=torch.float64)
    assert abs(psnr(a, b) - psnr_oracle(a.numpy(), b.numpy())) <= 1e-6


def test_ssim_matches_direct_formula(gen):
    a, b = torch.rand(2, 3, 16, 16, generator=gen, dtype=torch.float64)
    assert abs(ssim(a, b) - ssim_oracle(a.numpy(), b.numpy())) <= 1e-6


def test_ssim_identical_and_constant():
    img = torch.rand(3, 12, 12)
    assert ssim(img, img) == pytest.approx(1.0, abs=1e-12)
    a, b = 0.3, 0.7
    c1 = 0.01 ** 2
    got = ssim(torch.full((3, 12, 12), a, dtype=torch.float64), torch.full((3, 12, 12), b, dtype=torch.float64))
    assert got == pytest.approx((2 * a * b + c1) / (a * a + b * b + c1), abs=1e-9)


def test_ssim_rejects_small_images():
    with pytest.raises(UsageError):
        ssim(torch.zeros(3, 10, 20), torch.zeros(3, 10, 20))


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_metrics_symmetric(seed):
    g = torch.Generator().manual_seed(seed)
    a, b = torch.rand(2, 3, 12, 12, generator=g, dtype=torch.float64)
    assert psnr(a, b) == psnr(b, a)
    assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-12)
