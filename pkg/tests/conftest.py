import numpy as np
import pytest

from beltpick.heightmap import GridSpec, Heightmap


@pytest.fixture
def flat_map():
    """Small all-known flat heightmap at belt level."""
    grid = GridSpec(x0=0.0, y0=0.0, cell_size=0.005, nx=120, ny=80)
    hm = Heightmap.empty(grid)
    hm.unknown[:] = False
    return hm


def put_box(hm, x, y, sx, sy, height):
    """Paint an axis-aligned box of the given height onto a heightmap."""
    g = hm.grid
    ix0 = int(round((x - sx / 2 - g.x0) / g.cell_size))
    ix1 = int(round((x + sx / 2 - g.x0) / g.cell_size))
    iy0 = int(round((y - sy / 2 - g.y0) / g.cell_size))
    iy1 = int(round((y + sy / 2 - g.y0) / g.cell_size))
    hm.heights[max(iy0, 0):iy1, max(ix0, 0):ix1] = height
    return hm


@pytest.fixture
def box_map(flat_map):
    return put_box(flat_map, 0.3, 0.2, 0.08, 0.06, 0.05)
