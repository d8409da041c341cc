import numpy as np
import pytest

from nucsynth.config import DatasetConfig, LayoutConfig
from nucsynth.geometry import FieldLayout, NucleusInstance


def circle(radius: float, center=(0.0, 0.0), n: int = 256) -> np.ndarray:
    t = np.linspace(0.0, 2 * np.pi, n, endpoint=False)
    pts = np.column_stack([center[0] + radius * np.cos(t), center[1] + radius * np.sin(t)])
    return np.vstack([pts, pts[:1]])


def _make_layout(size, centers, radius=18.0, classes=None, packing=None) -> FieldLayout:
    layout = FieldLayout(size, size, [], len(centers))
    for i, c in enumerate(centers):
        layout.nuclei.append(NucleusInstance(
            id=i + 1,
            center=(float(c[0]), float(c[1])),
            boundary=circle(radius, c),
            tissue_class=classes[i] if classes else "normal",
            packing_fraction=packing[i] if packing else 0.35,
        ))
    return layout


@pytest.fixture
def make_layout():
    return _make_layout


@pytest.fixture
def grid_layout():
    """3x3 disks of radius 18 on a 160 px field, 50 px apart."""
    centers = [(30 + 50 * i, 30 + 50 * j) for j in range(3) for i in range(3)]
    return _make_layout(160, centers)


@pytest.fixture
def small_config(tmp_path):
    # sparse layouts on 128 px keep generation fast and placement far from the packing limit
    return DatasetConfig(
        modality="cspws",
        counts={"train": 2, "val": 1, "test": 1},
        image_size=128,
        master_seed=7,
        out=str(tmp_path / "data"),
        layout=LayoutConfig(count_mean=16, count_sd=4, fill_fraction=0.3),
    )
