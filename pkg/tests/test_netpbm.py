import numpy as np
import pytest
from PIL import Image

from labelloop.netpbm import (
    NetpbmError,
    float_to_image,
    image_to_float,
    read_pgm,
    read_ppm,
    write_pgm,
    write_ppm,
)


def test_pgm_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    labels = rng.integers(0, 256, size=(7, 5)).astype(np.uint8)
    path = tmp_path / "x.pgm"
    write_pgm(path, labels)
    np.testing.assert_array_equal(read_pgm(path), labels)


def test_ppm_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    pixels = rng.integers(0, 256, size=(4, 6, 3)).astype(np.uint8)
    path = tmp_path / "x.ppm"
    write_ppm(path, pixels)
    np.testing.assert_array_equal(read_ppm(path), pixels)


def test_one_pixel_ignore_sentinel(tmp_path):
    path = tmp_path / "i.pgm"
    write_pgm(path, np.array([[255]], dtype=np.uint8))
    assert read_pgm(path)[0, 0] == 255


def test_reads_pillow_written_ppm(tmp_path):
    # cross-tool fixture: an independent writer's P6 must parse identically
    rng = np.random.default_rng(2)
    pixels = rng.integers(0, 256, size=(9, 11, 3)).astype(np.uint8)
    path = tmp_path / "ref.ppm"
    Image.fromarray(pixels, mode="RGB").save(path, format="PPM")
    np.testing.assert_array_equal(read_ppm(path), pixels)


def test_reads_pillow_written_pgm(tmp_path):
    rng = np.random.default_rng(3)
    gray = rng.integers(0, 256, size=(5, 8)).astype(np.uint8)
    path = tmp_path / "ref.pgm"
    Image.fromarray(gray, mode="L").save(path, format="PPM")
    np.testing.assert_array_equal(read_pgm(path), gray)


def test_header_comments_are_skipped(tmp_path):
    path = tmp_path / "c.pgm"
    path.write_bytes(b"P5\n# a comment\n2 2\n# another\n255\n" + bytes([1, 2, 3, 4]))
    np.testing.assert_array_equal(read_pgm(path), np.array([[1, 2], [3, 4]], dtype=np.uint8))


def test_bad_magic_reports_offset(tmp_path):
    path = tmp_path / "bad.pgm"
    path.write_bytes(b"Q5\n2 2\n255\n" + bytes(4))
    with pytest.raises(NetpbmError) as err:
        read_pgm(path)
    assert "byte 0" in str(err.value)


def test_truncated_payload_reports_offset(tmp_path):
    path = tmp_path / "short.pgm"
    path.write_bytes(b"P5\n2 2\n255\n" + bytes(3))
    with pytest.raises(NetpbmError) as err:
        read_pgm(path)
    assert "truncated" in str(err.value)
    assert err.value.offset == 11 + 3


def test_wrong_maxval_rejected(tmp_path):
    path = tmp_path / "m.pgm"
    path.write_bytes(b"P5\n2 2\n65535\n" + bytes(8))
    with pytest.raises(NetpbmError):
        read_pgm(path)


def test_float_quantization_round_trip():
    rng = np.random.default_rng(4)
    image = rng.uniform(size=(3, 6, 6)).astype(np.float32)
    quantized = float_to_image(image)
    assert quantized.shape == (6, 6, 3)
    np.testing.assert_array_equal(quantized, np.rint(image * 255).astype(np.uint8).transpose(1, 2, 0))
    back = image_to_float(quantized)
    assert back.shape == image.shape
    assert np.abs(back - image).max() <= 0.5 / 255 + 1e-7
