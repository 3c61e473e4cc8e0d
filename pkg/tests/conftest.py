import json

import numpy as np
import pytest
from PIL import Image

from vcmbench.datamodel import FrameRef


@pytest.fixture
def make_frame(tmp_path):
    """FrameRef factory backed by a real PNG on disk."""

    def _make(width=32, height=24, sequence_id="seq0", frame_index=0, fill=0):
        path = tmp_path / "images" / f"{sequence_id}_{frame_index:06d}.png"
        path.parent.mkdir(parents=True, exist_ok=True)
        arr = np.full((height, width, 3), fill, dtype=np.uint8)
        Image.fromarray(arr).save(path)
        return FrameRef(
            dataset_id="test",
            sequence_id=sequence_id,
            frame_index=frame_index,
            image_path=path,
            width=width,
            height=height,
        )

    return _make


@pytest.fixture
def write_json(tmp_path):
    def _write(records, name="anno.json"):
        path = tmp_path / name
        path.write_text(json.dumps(records))
        return path

    return _write
