import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import enumerate_paths, random_dag
from segcascade.lattice import (Alphabet, CycleError, Fst, LatticeError, Segment, SegmentPath,
                                build_hypothesis_space, dense_edge_count, format_lattice,
                                parse_lattice, read_lattice, read_lattice_interned,
                                topological_order, write_lattice)

AB = Alphabet(["a", "b"])


def t2_fst():
    return build_hypothesis_space(2, AB, 2).with_weights([1, 0, 2, 3, 2.5, 1])


def test_dense_t2_matches_hand_enumeration():
    f = build_hypothesis_space(2, AB, 2)
    assert f.num_vertices == 3
    segs = {f.edge_segment(e) for e in range(f.num_edges)}
    assert segs == {Segment(0, 1, 0), Segment(0, 1, 1), Segment(1, 2, 0), Segment(1, 2, 1),
                    Segment(0, 2, 0), Segment(0, 2, 1)}
    assert f.starts.tolist() == [0] and f.finals.tolist() == [2]
    assert np.all(f.weights == 0)


def test_dense_single_frame_single_label():
    f = build_hypothesis_space(1, 1, 1)
    assert (f.num_vertices, f.num_edges) == (2, 1)
    assert f.edge_segment(0) == Segment(0, 1, 0)


def test_dense_forced_segmentation_has_one_path():
    f = build_hypothesis_space(3, 1, 1)
    assert f.num_edges == 3
    assert len(enumerate_paths(f)) == 1


@pytest.mark.parametrize("T,L,D", [(0, 1, 1), (1, 0, 1), (1, 1, 0)])
def test_dense_rejects_degenerate(T, L, D):
    with pytest.raises(ValueError):
        build_hypothesis_space(T, L, D)


def test_dense_edge_count_matches_enumeration():
    for T, L, D in itertools.product(range(1, 7), range(1, 4), range(1, 5)):
        f = build_hypothesis_space(T, L, D)
        expected = {(s, t, l) for t in range(1, T + 1) for s in range(max(0, t - D), t)
                    for l in range(L)}
        got = {tuple(f.edge_segment(e)) for e in range(f.num_edges)}
        assert got == expected and f.num_edges == len(expected) == dense_edge_count(T, L, D)


@pytest.mark.parametrize("T,L,D", [(4, 2, 2), (5, 1, 3), (3, 3, 3)])
def test_dense_paths_tile_the_utterance(T, L, D):
    f = build_hypothesis_space(T, L, D)
    for p in enumerate_paths(f):
        path = f.path_segments(p)  # raises if not connected
        assert path.covers(T)
        assert all(s.duration <= D for s in path)


def test_segment_path_rejects_gaps_and_empty_segments():
    with pytest.raises(ValueError):
        SegmentPath([(0, 2, 0), (3, 4, 1)])
    with pytest.raises(ValueError):
        SegmentPath([(1, 1, 0)])
    p = SegmentPath([(0, 2, 0), (2, 5, 1)])
    assert p.labels == [0, 1] and p.covers(5) and not p.covers(6)


def test_topological_order_examples():
    chain = Fst([0, 1, 2], [0, 1], [1, 2], [0, 0], [0, 0], [0], [2])
    assert topological_order(chain).tolist() == [0, 1, 2]
    assert topological_order(t2_fst()).tolist() == [0, 1, 2]
    # vertex 3 (time 1) is unreachable but must follow vertex 0 only by time
    f = Fst([0, 2, 3, 1], [0, 1], [1, 2], [0, 0], [0, 0], [0], [2])
    order = topological_order(f).tolist()
    assert sorted(order) == [0, 1, 2, 3]
    assert order.index(0) < order.index(1) < order.index(2)


def test_topological_order_detects_cycles():
    f = Fst([0, 1, 2], [0, 1, 2], [1, 2, 1], [0, 0, 0], [0, 0, 0], [0], [2], check=False)
    with pytest.raises(CycleError):
        topological_order(f)


def test_unchecked_order_breaks_ties_by_time_then_id():
    # no edges: order is purely by (time, id)
    f = Fst([2, 0, 1, 0], [], [], [], [], [1], [0], check=False)
    assert topological_order(f).tolist() == [1, 3, 2, 0]


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_topological_order_is_a_valid_permutation(seed):
    f = random_dag(np.random.default_rng(seed))
    order = topological_order(f).tolist()
    assert sorted(order) == list(range(f.num_vertices))
    pos = {v: i for i, v in enumerate(order)}
    assert all(pos[t] < pos[h] for t, h in zip(f.tails.tolist(), f.heads.tolist()))
    # same order from the general (Kahn) path
    g = Fst(f.times, f.tails, f.heads, f.labels, f.weights, f.starts, f.finals, check=False)
    gorder = topological_order(g).tolist()
    gpos = {v: i for i, v in enumerate(gorder)}
    assert all(gpos[t] < gpos[h] for t, h in zip(f.tails.tolist(), f.heads.tolist()))


def test_adjacency_is_exactly_outgoing_edges():
    f = t2_fst()
    for v in range(f.num_vertices):
        assert sorted(f.adjacency(v).tolist()) == [e for e in range(f.num_edges) if f.tails[e] == v]


def test_fst_rejects_invalid_structure():
    with pytest.raises(LatticeError):
        Fst([0, 1], [1], [0], [0], [0.0], [0], [1])  # goes back in time
    with pytest.raises(LatticeError):
        Fst([0, 1], [0], [1], [0], [np.nan], [0], [1])
    with pytest.raises(LatticeError):
        Fst([0, 1], [0], [5], [0], [0.0], [0], [1])


def test_round_trip_t2_example(tmp_path):
    f = t2_fst()
    write_lattice(f, tmp_path / "x.lat", AB)
    g = read_lattice(tmp_path / "x.lat", AB)
    assert g.edge_keys() == f.edge_keys()
    assert g.times.tolist() == f.times.tolist()
    assert g.starts.tolist() == f.starts.tolist() and g.finals.tolist() == f.finals.tolist()


def test_round_trip_empty_lattice():
    f = Fst([0, 1], [], [], [], [], [0], [1], num_frames=7)
    g = parse_lattice(format_lattice(f))
    assert g.num_edges == 0 and g.num_frames == 7 and g.num_vertices == 2


def test_reader_names_the_offending_line():
    text = "#frames 2\nv 0 0\nv 1 2\ne 0 0 5 a 1.0\ni 0\nf 1\n"
    with pytest.raises(LatticeError, match=r":4: reference to undeclared vertex 5"):
        parse_lattice(text, AB)
    with pytest.raises(LatticeError, match=r":4: non-finite"):
        parse_lattice("#frames 2\nv 0 0\nv 1 2\ne 0 0 1 a inf\n", AB)
    with pytest.raises(LatticeError, match=r":2: "):
        parse_lattice("#frames 2\nv 0\n")
    with pytest.raises(LatticeError, match=r":3: unknown record"):
        parse_lattice("#frames 2\nv 0 0\nx 1\n")


def test_interned_reader_round_trips_symbolic_labels(tmp_path):
    f = t2_fst()
    write_lattice(f, tmp_path / "x.lat", Alphabet(["zz", "yy"]))
    g, alphabet = read_lattice_interned(tmp_path / "x.lat")
    assert list(alphabet) == ["zz", "yy"]
    assert format_lattice(g, alphabet) == format_lattice(f, Alphabet(["zz", "yy"]))


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_round_trip_is_identity_on_random_lattices(seed):
    rng = np.random.default_rng(seed)
    f = random_dag(rng)
    f = f.with_weights(rng.standard_normal(f.num_edges) * 10.0 ** rng.integers(-300, 300))
    g = parse_lattice(format_lattice(f))
    assert g.edge_keys() == f.edge_keys()
    assert np.array_equal(g.weights, f.weights)
    assert g.times.tolist() == f.times.tolist() and g.num_frames == f.num_frames


def test_trim_and_subgraph_preserve_order():
    f = Fst([0, 1, 3, 2], [0, 0, 1, 3], [1, 2, 2, 2], [0, 1, 0, 1], [1, 2, 3, 4], [0], [2])
    t = f.trim()
    assert t.num_vertices == 3 and t.num_edges == 3
    assert t.edge_keys() == f.edge_keys()[:3]
    assert t.is_trimmed() and not f.is_trimmed()


def test_find_path():
    f = t2_fst()
    assert f.find_path(SegmentPath([(0, 1, 0), (1, 2, 1)])) == [0, 3]
    assert f.find_path(SegmentPath([(0, 2, 1)])) == [5]
    assert f.find_path(SegmentPath([(0, 1, 0)])) is None
