"""Dataset generation and verification: one deterministic stream per image index, a worker pool
over indices, and a manifest of SHA-256 checksums written last."""
from __future__ import annotations

import logging
import platform
import time
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Tuple

import numpy as np

from . import __version__
from .augment import augment
from .config import SPLITS, DatasetConfig
from .errors import InputError, NucsynthError
from .files import (
    read_image_png, read_json, read_mask_png, save_field_png, sha256_file,
    write_image_png, write_json, write_json_atomic, write_mask_png,
)
from .geometry import generate_layout
from .render import FieldSample, render
from .rng import image_stream

log = logging.getLogger(__name__)

MANIFEST = "manifest.json"
RUN_INFO = "run_info.json"


def dataset_dir(cfg: DatasetConfig) -> Path:
    return Path(cfg.out) / cfg.modality


def file_names(index: int) -> Dict[str, str]:
    return {"image": f"img_{index:05d}.png", "mask": f"mask_{index:05d}.png", "meta": f"meta_{index:05d}.json"}


def generate_image(cfg: DatasetConfig, index: int, split: str = "train") -> FieldSample:
    rng = image_stream(cfg.master_seed, index)
    size = cfg.image_size
    layout = generate_layout(size, size, rng.child(0), cfg.layout, cfg.render, cfg.dysplasia_fraction)
    sample = render(cfg.modality, layout, rng.child(1), cfg.render)
    if cfg.augment.enabled and split == "train":
        sample = augment(sample, rng.child(2), cfg.augment)
        sample.meta["nucleus_count"] = int(np.count_nonzero(np.unique(sample.mask)))
    sample.meta.update({"index": index, "split": split})
    return sample


def _write_one(task: Tuple[DatasetConfig, int, str, str]) -> Dict[str, Any]:
    cfg, index, split, root = task
    try:
        sample = generate_image(cfg, index, split)
    except NucsynthError as e:
        return {"index": index, "split": split, "error": str(e)}

    names = file_names(index)
    folder = Path(root) / split
    sample.meta["params_hash"] = cfg.params_hash()
    write_image_png(folder / names["image"], sample.image)
    write_mask_png(folder / names["mask"], sample.mask)
    write_json(folder / names["meta"], sample.meta)

    records = []
    for kind, name in names.items():
        records.append({
            "path": f"{split}/{name}",
            "index": index,
            "kind": kind,
            "split": split,
            "sha256": sha256_file(folder / name),
            "nucleus_count": sample.meta["nucleus_count"],
            "measured_snr_db": sample.meta.get("measured_snr_db"),
        })
    return {"index": index, "split": split, "files": records, "nucleus_count": sample.meta["nucleus_count"]}


def generate_dataset(cfg: DatasetConfig, dump_fields: Optional[str] = None) -> Tuple[Path, Dict[str, Any]]:
    root = dataset_dir(cfg)
    for split in SPLITS:
        (root / split).mkdir(parents=True, exist_ok=True)
    tasks = [(cfg, index, split, str(root)) for index, split in cfg.split_plan()]
    log.info(f"[generate] {cfg.modality}: {len(tasks)} images -> {root} with {cfg.workers} worker(s)")

    start = time.perf_counter()
    files: List[Dict[str, Any]] = []
    failures: List[Dict[str, Any]] = []
    counts: Dict[str, int] = defaultdict(int)
    nuclei = 0

    def consume(results):
        nonlocal nuclei
        for done, res in enumerate(results, start=1):
            if "error" in res:
                log.error(f"[ERROR] image {res['index']} ({res['split']}): {res['error']}")
                failures.append(res)
            else:
                files.extend(res["files"])
                counts[res["split"]] += 1
                nuclei += res["nucleus_count"]
                log.debug(f"[GENERATE #{res['index']}] {res['split']} with {res['nucleus_count']} nuclei")
            if done % 100 == 0:
                log.info(f"[PROGRESS] {done}/{len(tasks)} images")

    if cfg.workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            consume(pool.map(_write_one, tasks, chunksize=max(1, len(tasks) // (4 * cfg.workers))))
    else:
        consume(map(_write_one, tasks))

    manifest = {
        "tool": "nucsynth",
        "version": __version__,
        "config": cfg.echo(),
        "params_hash": cfg.params_hash(),
        "counts": {s: counts.get(s, 0) for s in SPLITS},
        "files": files,
        "failures": failures,
    }
    write_json_atomic(root / MANIFEST, manifest)
    write_json(root / RUN_INFO, {
        "created": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "host": platform.node(),
        "workers": cfg.workers,
    })

    if dump_fields and tasks:
        out = Path(dump_fields)
        out.mkdir(parents=True, exist_ok=True)
        index, split = cfg.split_plan()[0]
        for name, values in generate_image(cfg, index, split).fields.items():
            save_field_png(values, out / f"{name}.png")

    elapsed = time.perf_counter() - start
    rate = len(tasks) / elapsed if elapsed > 0 else float("inf")
    log.info(f"[FINAL] {len(tasks) - len(failures)} images, {nuclei} nuclei, {len(failures)} failures "
             f"in {elapsed:.1f}s ({rate:.1f} images/s)")
    return root, manifest


@dataclass
class Mismatch:
    path: str
    status: str  # "missing" or "hash_mismatch"


def load_manifest(root) -> Dict[str, Any]:
    path = Path(root) / MANIFEST
    if not path.exists():
        raise InputError(f"manifest not found: {path}")
    return read_json(path)


def verify_manifest(root) -> List[Mismatch]:
    """Re-hash every listed file; an empty list means the dataset is intact."""
    manifest = load_manifest(root)
    problems: List[Mismatch] = []
    for rec in manifest["files"]:
        path = Path(root) / rec["path"]
        if not path.exists():
            problems.append(Mismatch(rec["path"], "missing"))
        elif sha256_file(path) != rec["sha256"]:
            problems.append(Mismatch(rec["path"], "hash_mismatch"))
    return problems


@dataclass
class ImageEntry:
    index: int
    split: str
    image: Path
    mask: Path
    meta: Path

    @property
    def image_id(self) -> str:
        return f"{self.split}/img_{self.index:05d}"


def iter_images(root) -> Iterator[ImageEntry]:
    grouped: Dict[int, Dict[str, Any]] = defaultdict(dict)
    for rec in load_manifest(root)["files"]:
        grouped[rec["index"]][rec["kind"]] = rec
    for index in sorted(grouped):
        recs = grouped[index]
        yield ImageEntry(
            index=index,
            split=recs["image"]["split"],
            image=Path(root) / recs["image"]["path"],
            mask=Path(root) / recs["mask"]["path"],
            meta=Path(root) / recs["meta"]["path"],
        )


def load_sample(entry: ImageEntry) -> FieldSample:
    meta = read_json(entry.meta) if entry.meta.exists() else {}
    return FieldSample(read_image_png(entry.image), read_mask_png(entry.mask), meta)
