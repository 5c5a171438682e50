import numpy as np
import pytest
from PIL import Image

from osmose.grid_image import (ImageBuffer, ImageDecodeError, MaskField, dilate_mask,
                               grid_position, lift_positive, linear_index, load_image,
                               load_mask, save_image, to_uint8)


def test_pgm_bytes_scale_to_unit_interval(tmp_path):
    path = tmp_path / "tiny.pgm"
    path.write_bytes(b"P5\n2 2\n255\n" + bytes([0, 128, 255, 64]))
    img = load_image(path)
    assert img.channels == 1
    np.testing.assert_array_equal(img.channel(0), [[0, 128 / 255], [1, 64 / 255]])


def test_rgb_png_dimensions(tmp_path):
    path = tmp_path / "rgb.png"
    Image.fromarray(np.zeros((80, 100, 3), np.uint8)).save(path)
    img = load_image(path)
    assert (img.height, img.width, img.channels) == (80, 100, 3)


def test_sixteen_bit_png(tmp_path):
    path = tmp_path / "deep.png"
    Image.fromarray(np.array([[0, 65535], [32768, 1]], dtype=np.uint16)).save(path)
    img = load_image(path)
    np.testing.assert_allclose(img.channel(0), [[0, 1], [32768 / 65535, 1 / 65535]])


def test_truncated_file_raises(tmp_path):
    path = tmp_path / "bad.png"
    Image.fromarray(np.zeros((20, 20), np.uint8)).save(path)
    path.write_bytes(path.read_bytes()[:30])
    with pytest.raises(ImageDecodeError):
        load_image(path)


def test_missing_file_raises(tmp_path):
    with pytest.raises(ImageDecodeError):
        load_image(tmp_path / "nope.png")


def test_buffer_shape_rules():
    with pytest.raises(ValueError):
        ImageBuffer(np.ones((1, 5)))
    with pytest.raises(ValueError):
        ImageBuffer(np.ones((4, 4, 2)))
    assert ImageBuffer(np.ones((3, 4))).channels == 1


def test_lift_examples():
    img = ImageBuffer(np.array([[0.0, 1.0], [0.5, 0.25]]))
    lifted = lift_positive(img, 1 / 255)
    assert lifted.channel(0)[0, 0] == 1 / 255
    assert lifted.channel(0)[0, 1] == 1 + 1 / 255
    assert lifted.offset == 1 / 255
    for bad in (0.0, -1.0):
        with pytest.raises(ValueError):
            lift_positive(img, bad)


def test_lift_shifts_mean_exactly(rng):
    # dyadic values on a power-of-two grid keep every sum and mean exact
    data = rng.integers(0, 256, (32, 32)) / 256.0
    img = ImageBuffer(data)
    assert lift_positive(img, 1 / 256).data.mean() == data.mean() + 1 / 256
    data = rng.random((17, 9))
    assert lift_positive(ImageBuffer(data), 0.1).data.mean() == pytest.approx(data.mean() + 0.1, rel=1e-15)


def test_save_clamps_and_undoes_lift(tmp_path):
    img = ImageBuffer(np.array([[1.3, -0.01], [0.5, 1.0]]) + 0.25, offset=0.25)
    np.testing.assert_array_equal(to_uint8(img)[..., 0], [[255, 0], [128, 255]])
    path = tmp_path / "out.png"
    save_image(img, path)
    np.testing.assert_array_equal(np.asarray(Image.open(path)), [[255, 0], [128, 255]])


def test_round_trip_within_quantisation(tmp_path, rng):
    raw = rng.integers(0, 256, (12, 7, 3), dtype=np.uint8)
    src = tmp_path / "src.png"
    Image.fromarray(raw).save(src)
    out = tmp_path / "out.png"
    save_image(lift_positive(load_image(src)), out)
    np.testing.assert_array_equal(np.asarray(Image.open(out)), raw)


def test_save_to_unwritable_path(tmp_path):
    with pytest.raises(OSError):
        save_image(ImageBuffer(np.ones((2, 2))), tmp_path / "missing" / "x.png")


@pytest.mark.parametrize("grey,expected", [(0, 0), (255, 1), (153, 1), (120, 0)])
def test_mask_threshold(tmp_path, grey, expected):
    path = tmp_path / "mask.png"
    Image.fromarray(np.full((5, 6), grey, np.uint8)).save(path)
    mask = load_mask(path, 0.5)
    assert mask.shape == (5, 6)
    assert set(np.unique(mask.data)) == {expected}


def test_colour_mask_uses_grey_mean(tmp_path):
    rgb = np.zeros((3, 3, 3), np.uint8)
    rgb[0, 0] = (255, 255, 0)      # mean 2/3
    rgb[1, 1] = (255, 0, 0)        # mean 1/3
    path = tmp_path / "m.png"
    Image.fromarray(rgb).save(path)
    mask = load_mask(path)
    assert mask.data[0, 0] == 1 and mask.data[1, 1] == 0


def test_mask_rejects_non_binary():
    with pytest.raises(ValueError):
        MaskField(np.array([[0, 2], [1, 0]]))


def test_dilation_examples():
    m = np.zeros((5, 5), np.uint8)
    m[0, 0] = 1
    m[2, 2] = 1
    assert np.array_equal(dilate_mask(MaskField(m), 0).data, m)
    grown = dilate_mask(MaskField(m), 1).data
    expected = np.zeros((5, 5), np.uint8)
    expected[0:2, 0:2] = 1
    expected[1:4, 1:4] = 1
    np.testing.assert_array_equal(grown, expected)
    with pytest.raises(ValueError):
        dilate_mask(MaskField(m), -1)


def test_three_pixel_band_dilates_to_five():
    m = np.zeros((20, 20), np.uint8)
    m[:, 8:11] = 1
    grown = dilate_mask(MaskField(m), 1).data
    assert np.all(grown.sum(axis=1) == 5)


def test_linear_index_bijection():
    m, n = 7, 5
    k = np.arange(m * n)
    i, j = grid_position(k, n)
    np.testing.assert_array_equal(linear_index(i, j, n), k)
    assert linear_index(2, 3, n) == 13
