# nucsynth/files.py
from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path
from typing import Any

import numpy as np
from PIL import Image

from .errors import InputError


def write_image_png(path, image: np.ndarray) -> None:
    """(1, h, w) -> 16-bit grayscale, value = round(65535 v); (3, h, w) -> 8-bit RGB."""
    img = np.clip(np.asarray(image, dtype=float), 0.0, 1.0)
    if img.ndim == 2:
        img = img[None]
    if img.shape[0] == 1:
        Image.fromarray(np.rint(img[0] * 65535).astype(np.uint16)).save(path, format="PNG")
    elif img.shape[0] == 3:
        Image.fromarray(np.rint(np.moveaxis(img, 0, -1) * 255).astype(np.uint8)).save(path, format="PNG")
    else:
        raise InputError(f"cannot write image with {img.shape[0]} channels")


def write_mask_png(path, mask: np.ndarray) -> None:
    if mask.max(initial=0) > 65535:
        raise InputError("mask labels exceed 16 bits")
    Image.fromarray(np.asarray(mask).astype(np.uint16)).save(path, format="PNG")


def read_image_png(path) -> np.ndarray:
    """Inverse of write_image_png: (channels, h, w) float in [0, 1]."""
    with Image.open(path) as im:
        mode = im.mode
        arr = np.asarray(im)
    if mode == "RGB":
        return np.moveaxis(arr.astype(float) / 255.0, -1, 0)
    if mode in ("I;16", "I;16B", "I"):
        return arr.astype(float)[None] / 65535.0
    if mode == "L":
        return arr.astype(float)[None] / 255.0
    raise InputError(f"{path}: unsupported PNG mode {mode}")


def read_mask_png(path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im)
    if arr.ndim != 2:
        raise InputError(f"{path}: mask must be single-channel")
    return arr.astype(np.uint16)


def save_field_png(field: np.ndarray, path) -> None:
    """Debug dump: affine map of the field's range onto [0, 65535]."""
    lo, hi = float(field.min()), float(field.max())
    scaled = (field - lo) / (hi - lo) if hi > lo else np.zeros_like(field)
    Image.fromarray(np.rint(scaled * 65535).astype(np.uint16)).save(path, format="PNG")


def dumps_json(obj: Any) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def write_json(path, obj: Any) -> None:
    Path(path).write_text(dumps_json(obj), encoding="utf-8")


def write_json_atomic(path, obj: Any) -> None:
    p = Path(path)
    tmp = p.with_suffix(p.suffix + ".tmp")
    tmp.write_text(dumps_json(obj), encoding="utf-8")
    os.replace(tmp, p)


def read_json(path) -> Any:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
