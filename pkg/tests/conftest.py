from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from mecd.dataio import ClassData, ClassStream, EmbeddingRecord, Label


def make_record(
    image_id: str,
    patches,
    label: Label = Label.NORMAL,
    grid: tuple[int, int] | None = None,
) -> EmbeddingRecord:
    mat = np.asarray(patches, dtype=np.float32)
    if grid is None:
        grid = (1, mat.shape[0])
    return EmbeddingRecord(
        image_id=image_id, label=label, grid_h=grid[0], grid_w=grid[1], patches=mat
    )


def tiny_stream(dimension: int = 3) -> ClassStream:
    """Two small classes with mixed test splits; values are exact floats."""
    rng = np.random.default_rng(7)

    def cls(name: str, shift: float) -> ClassData:
        train = [
            make_record(f"{name}_train_{i}", shift + rng.standard_normal((4, dimension)))
            for i in range(3)
        ]
        test = [
            make_record(f"{name}_good_0", shift + rng.standard_normal((4, dimension))),
            make_record(
                f"{name}_bad_0",
                shift + 50.0 + rng.standard_normal((4, dimension)),
                label=Label.ANOMALOUS,
            ),
        ]
        return ClassData(name=name, train=train, test=test)

    return ClassStream(dimension=dimension, classes=[cls("alpha", 0.0), cls("beta", 5.0)])


@pytest.fixture
def tmp_dataset(tmp_path):
    from mecd.dataio import write_dataset_file

    path = tmp_path / "tiny.mecd"
    write_dataset_file(tiny_stream(), path)
    return path
