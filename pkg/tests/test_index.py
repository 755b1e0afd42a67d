import numpy as np
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from lsrf.index import CellIndex


@given(arrays(float, st.tuples(st.integers(1, 60), st.integers(1, 3)), elements=st.floats(0, 1)),
       st.floats(0.01, 0.6), st.data())
def test_query_covers_every_point_within_radius(pts, radius, data):
    idx = CellIndex(pts, radius)
    u = np.array(data.draw(st.lists(st.floats(0, 1), min_size=pts.shape[1], max_size=pts.shape[1])))
    got = idx.query(u)
    near = np.flatnonzero(np.max(np.abs(pts - u), axis=1) <= radius)
    assert set(near) <= set(got.tolist())
    assert len(set(got.tolist())) == len(got)


def test_query_order_is_cell_then_index():
    pts = np.array([[0.9, 0.9], [0.1, 0.1], [0.15, 0.12], [0.5, 0.5]])
    idx = CellIndex(pts, 0.2)
    got = idx.query(np.array([0.1, 0.1]))
    assert got.tolist() == [1, 2]
