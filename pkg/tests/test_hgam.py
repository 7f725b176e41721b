import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from relgraph.backbone import NodeGraph
from relgraph.hgam import (
    AlignmentError,
    AlignMatrix,
    OracleRangeError,
    StateError,
    brute_force_distance,
    cross_edges,
    local_distance,
    shortest_path_distance,
    squash,
    trace_path,
)
from relgraph.tensormath import Tensor

square = st.integers(1, 6).flatmap(lambda h: arrays(np.float64, (h, h), elements=st.floats(0, 1, width=64)))


def matrix(values):
    return AlignMatrix.from_normalized(np.asarray(values, dtype=np.float64))


def graph(values, modality):
    return NodeGraph(Tensor(np.asarray(values, dtype=np.float64)), modality)


# -- cross edges ---------------------------------------------------------------

def test_identical_graphs_have_zero_diagonal(rng):
    v = rng.standard_normal((6, 4))
    m = cross_edges(graph(v, "vis"), graph(v, "ir"))
    np.testing.assert_array_equal(np.diag(m.raw.data), 0.0)
    np.testing.assert_array_equal(np.diag(m.normalized.data), 0.0)


def test_squash_endpoints():
    out = squash(Tensor(np.array([0.0, 1e3, 2.0]))).data
    assert out[0] == 0.0
    assert out[1] == pytest.approx(1.0, abs=1e-15)
    assert out[2] == pytest.approx((np.exp(2.0) - 1) / (np.exp(2.0) + 1), abs=1e-15)


def test_raw_edges_match_double_loop(rng):
    a, b = rng.standard_normal((5, 3)), rng.standard_normal((5, 3))
    m = cross_edges(graph(a, "vis"), graph(b, "ir"))
    oracle = np.array([[np.sqrt(np.sum((a[i] - b[j]) ** 2)) for j in range(5)] for i in range(5)])
    np.testing.assert_allclose(m.raw.data, oracle, rtol=0, atol=1e-12)
    np.testing.assert_allclose(m.normalized.data, np.tanh(oracle / 2), rtol=0, atol=1e-12)


def test_cross_edges_mismatch():
    with pytest.raises(AlignmentError):
        cross_edges(graph(np.zeros((6, 3)), "vis"), graph(np.zeros((5, 3)), "ir"))
    with pytest.raises(AlignmentError):
        cross_edges(graph(np.zeros((6, 3)), "vis"), graph(np.zeros((6, 4)), "ir"))


# -- local distance ------------------------------------------------------------

def test_single_cell():
    assert local_distance(matrix([[3.0]])).item() == 3.0


def test_all_ones():
    assert local_distance(matrix(np.ones((6, 6)))).item() == 11.0


def test_three_by_three_example():
    assert local_distance(matrix(np.arange(1.0, 10.0).reshape(3, 3))).item() == 21.0


def test_empty_matrix():
    with pytest.raises(AlignmentError):
        local_distance(matrix(np.zeros((0, 0))))


def test_batched_matches_single(rng):
    edges = rng.uniform(0, 1, (3, 4, 5, 5))
    dist, _ = shortest_path_distance(Tensor(edges))
    for idx in np.ndindex(3, 4):
        assert dist.data[idx] == local_distance(matrix(edges[idx])).item()


@settings(max_examples=150, deadline=None)
@given(square)
def test_dp_equals_brute_force(m):
    assert local_distance(matrix(m)).item() == pytest.approx(brute_force_distance(matrix(m)), abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(square)
def test_transpose_symmetry(m):
    assert local_distance(matrix(m)).item() == pytest.approx(local_distance(matrix(m.T)).item(), abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(square, st.data())
def test_raising_an_edge_never_lowers_distance(m, data):
    i = data.draw(st.integers(0, m.shape[0] - 1))
    j = data.draw(st.integers(0, m.shape[1] - 1))
    bump = data.draw(st.floats(0, 2))
    raised = m.copy()
    raised[i, j] += bump
    assert local_distance(matrix(raised)).item() >= local_distance(matrix(m)).item()


@settings(max_examples=100, deadline=None)
@given(square)
def test_gradient_on_traced_cells_only(m):
    t = Tensor(m, requires_grad=True)
    am = AlignMatrix.from_normalized(t)
    local_distance(am).backward()
    path = trace_path(am)
    h = m.shape[0]
    assert len(path) == 2 * h - 1
    mask = np.zeros_like(m)
    for i, j in path:
        mask[i, j] = 1.0
    np.testing.assert_array_equal(t.grad, mask)


# -- path tracing --------------------------------------------------------------

def test_trace_single_cell():
    m = matrix([[5.0]])
    local_distance(m)
    assert trace_path(m) == [(0, 0)]


def test_trace_avoids_large_cell():
    m = matrix([[0.0, 9.0], [0.0, 0.0]])
    local_distance(m)
    assert trace_path(m) == [(0, 0), (1, 0), (1, 1)]


def test_trace_sum_equals_distance():
    values = np.arange(1.0, 10.0).reshape(3, 3)
    m = matrix(values)
    d = local_distance(m).item()
    path = trace_path(m)
    assert sum(values[i, j] for i, j in path) == d
    for (i0, j0), (i1, j1) in zip(path, path[1:]):
        assert (i1 - i0, j1 - j0) in ((1, 0), (0, 1))


def test_trace_tie_prefers_up():
    m = matrix(np.ones((2, 2)))
    local_distance(m)
    assert trace_path(m) == [(0, 0), (0, 1), (1, 1)]


def test_trace_before_dp():
    with pytest.raises(StateError):
        trace_path(matrix(np.ones((2, 2))))


# -- brute force oracle --------------------------------------------------------

def test_brute_force_single():
    assert brute_force_distance(matrix([[0.25]])) == 0.25


def test_brute_force_all_ones():
    assert brute_force_distance(matrix(np.ones((6, 6)))) == 11.0


def test_brute_force_range_limit():
    with pytest.raises(OracleRangeError):
        brute_force_distance(matrix(np.ones((11, 11))))
