import hashlib

import numpy as np
import pytest
from PIL import Image

from nucsynth.errors import InputError
from nucsynth.files import (
    read_image_png, read_json, read_mask_png, save_field_png, sha256_file, write_image_png,
    write_json_atomic, write_mask_png,
)


def test_gray_image_is_16_bit(tmp_path):
    img = np.random.default_rng(0).random((1, 20, 30))
    path = tmp_path / "img.png"
    write_image_png(path, img)
    back = read_image_png(path)
    assert back.shape == (1, 20, 30)
    assert np.abs(back - img).max() <= 0.5 / 65535 + 1e-12


def test_rgb_image_is_8_bit(tmp_path):
    img = np.random.default_rng(1).random((3, 12, 16))
    path = tmp_path / "rgb.png"
    write_image_png(path, img)
    with Image.open(path) as im:
        assert im.mode == "RGB"
    assert np.abs(read_image_png(path) - img).max() <= 0.5 / 255 + 1e-12


def test_mask_labels_are_raw_values(tmp_path):
    mask = np.zeros((16, 16), dtype=np.uint16)
    mask[2:5, 2:5] = 1
    mask[8:12, 8:12] = 300
    path = tmp_path / "mask.png"
    write_mask_png(path, mask)
    assert np.array_equal(read_mask_png(path), mask)


def test_mask_beyond_16_bits_rejected(tmp_path):
    with pytest.raises(InputError):
        write_mask_png(tmp_path / "m.png", np.full((2, 2), 70000, dtype=np.int32))


def test_bad_channel_count(tmp_path):
    with pytest.raises(InputError):
        write_image_png(tmp_path / "x.png", np.zeros((2, 4, 4)))


def test_field_dump_spans_full_range(tmp_path):
    path = tmp_path / "field.png"
    save_field_png(np.linspace(-3.0, 5.0, 64).reshape(8, 8), path)
    arr = np.asarray(Image.open(path))
    assert arr.min() == 0 and arr.max() == 65535


def test_json_and_checksum(tmp_path):
    path = tmp_path / "m.json"
    write_json_atomic(path, {"b": 1, "a": [1, 2]})
    assert read_json(path) == {"a": [1, 2], "b": 1}
    assert not (tmp_path / "m.json.tmp").exists()
    assert path.read_text().index('"a"') < path.read_text().index('"b"')
    assert sha256_file(path) == hashlib.sha256(path.read_bytes()).hexdigest()
