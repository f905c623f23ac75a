import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from reference import empty_room, make_scene  # noqa: E402


@pytest.fixture
def room9():
    return empty_room(9, 9, scene_id="room9")


@pytest.fixture
def room20():
    return empty_room(20, 20, scene_id="room20")


@pytest.fixture
def cabinet_scene():
    """7x7 room, one openable opaque cabinet two cells north of the start."""
    rows = [
        ".......",
        ".......",
        ".......",
        "...A...",
        ".......",
        ".......",
        ".......",
    ]
    return make_scene(
        rows,
        objects=["cabinet receptacle 3 1 openable height=low slots=ContainedIn,OnTop capacity=large"],
        scene_id="cabinet7",
    )


@pytest.fixture
def occluder_scene():
    """9x9 room with a high occluder two cells north of the start."""
    rows = ["." * 9 for _ in range(9)]
    rows[4] = "....A...."
    return make_scene(
        rows,
        objects=["crate occluder 4 2 height=high slots=Behind,OnTop"],
        scene_id="occluder9",
    )
