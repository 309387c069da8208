import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import brute_best, brute_max_marginals, enumerate_paths, path_score, random_dag
from segcascade.inference import max_marginals
from segcascade.lattice import Alphabet, Fst, build_hypothesis_space
from segcascade.pruning import (PruneParams, beam_prune, beam_prune_mask, edge_prune,
                                edge_prune_mask, edge_threshold, interpolate, prune, prune_mask,
                                vertex_prune, vertex_prune_masks)

AB = Alphabet(["a", "b"])
ALPHAS = (0.0, 0.25, 0.5, 0.75, 1.0)
seeds = st.integers(0, 2**32 - 1)


def t2_fst():
    return build_hypothesis_space(2, AB, 2).with_weights([1, 0, 2, 3, 2.5, 1])


def segments(f):
    return {tuple(f.edge_segment(e)) for e in range(f.num_edges)}


def path_segments(f):
    return {tuple(tuple(f.edge_segment(e)) for e in p) for p in enumerate_paths(f)}


def test_params_validate():
    with pytest.raises(ValueError):
        PruneParams("edge", 1.5)
    with pytest.raises(ValueError):
        PruneParams("nbest", 0.5)
    assert PruneParams("beam", 0.0).alpha == 0.0


def test_interpolate_stays_between_its_ends():
    assert interpolate(0.5, 4.0, 2.0) == 3.0
    assert interpolate(1.0, 4.0, 2.0) == 4.0
    assert interpolate(0.0, 4.0, 2.0) == 2.0
    # 0.3*g + 0.7*g can exceed g in floating point; the threshold must not
    g = 11.463117504072404
    assert interpolate(0.3, g, g) == g


@settings(max_examples=300)
@given(st.floats(0, 1), st.floats(0, 1), st.floats(-1e6, 1e6), st.floats(-1e6, 1e6))
def test_interpolate_is_monotone_and_bounded(a1, a2, x, y):
    hi, lo = max(x, y), min(x, y)
    a1, a2 = sorted((a1, a2))
    t1, t2 = interpolate(a1, hi, lo), interpolate(a2, hi, lo)
    assert lo <= t1 <= t2 <= hi


def test_beam_example_loses_the_best_path():
    out = beam_prune(t2_fst(), 0.5)
    assert segments(out) == {(0, 2, 0)}


def test_beam_example_alpha_0_2():
    out = beam_prune(t2_fst(), 0.2)
    assert path_segments(out) == {((0, 1, 0), (1, 2, 1)), ((0, 2, 0),), ((0, 2, 1),)}


def test_beam_equal_branches_at_alpha_zero_are_all_pruned():
    f = build_hypothesis_space(2, AB, 2)  # all weights zero
    assert not beam_prune_mask(f, 0.0).any()
    assert beam_prune(f, 0.0).num_edges == 0


def test_edge_prune_examples():
    f = t2_fst()
    assert segments(edge_prune(f, 1.0)) == {(0, 1, 0), (1, 2, 1)}
    mm = max_marginals(f)
    assert edge_threshold(mm.edges, 0.0) == pytest.approx(17.5 / 6)
    assert segments(edge_prune(f, 0.0)) == {(0, 1, 0), (0, 1, 1), (1, 2, 0), (1, 2, 1)}


def test_single_path_survives_any_alpha():
    f = Fst([0, 1, 3], [0, 1], [1, 2], [0, 1], [1.5, -4.0], [0], [2])
    for a in ALPHAS:
        assert edge_prune(f, a).edge_keys() == f.edge_keys()
        assert vertex_prune(f, a).edge_keys() == f.edge_keys()
        # a lone branch has s_max = s_min = t and fails the strict beam test
        assert beam_prune(f, a).num_edges == 0


def test_vertex_prune_keeps_everything_when_all_gammas_tie():
    f = t2_fst()
    for a in ALPHAS:
        assert vertex_prune(f, a).edge_keys() == f.edge_keys()


def test_vertex_prune_removes_detour():
    # 0 -> 1 -> 2 scores 4; the detour through vertex 3 scores 0
    f = Fst([0, 1, 2, 1], [0, 1, 0, 3], [1, 2, 3, 2], [0, 0, 1, 1], [2, 2, 0, 0], [0], [2])
    vkeep, ekeep = vertex_prune_masks(f, 1.0)
    assert vkeep.tolist() == [True, True, True, False]
    assert ekeep.tolist() == [True, True, False, False]
    out = vertex_prune(f, 1.0)
    assert out.num_vertices == 3 and out.num_edges == 2


@settings(max_examples=200, deadline=None)
@given(seeds, st.sampled_from(ALPHAS))
def test_vertex_removal_drops_incident_edges(seed, alpha):
    f = random_dag(np.random.default_rng(seed))
    vkeep, ekeep = vertex_prune_masks(f, alpha)
    dropped = ~vkeep
    assert not np.any(ekeep & (dropped[f.tails] | dropped[f.heads]))


@settings(max_examples=300, deadline=None)
@given(seeds, st.sampled_from(["beam", "edge", "vertex"]), st.floats(0, 1))
def test_output_is_a_trimmed_subset_with_unchanged_weights(seed, method, alpha):
    f = random_dag(np.random.default_rng(seed))
    keep = prune_mask(f, PruneParams(method, alpha))
    out = prune(f, PruneParams(method, alpha))
    kept = {k: w for k, w in zip(f.edge_keys(), f.weights.tolist())}
    assert set(out.edge_keys()) == {f.edge_keys()[e] for e in np.flatnonzero(keep)}
    for k, w in zip(out.edge_keys(), out.weights.tolist()):
        assert kept[k] == w
    assert out.is_trimmed()


@settings(max_examples=300, deadline=None)
@given(seeds, st.sampled_from(ALPHAS), st.booleans())
def test_edge_pruning_keeps_exactly_high_gamma_edges(seed, alpha, integer_weights):
    f = random_dag(np.random.default_rng(seed), integer_weights=integer_weights)
    mm = max_marginals(f)
    t = edge_threshold(mm.edges, alpha, mm.best_edges())
    assert abs(t - edge_threshold(brute_max_marginals(f)[0], alpha)) <= 1e-9
    keep = edge_prune_mask(f, alpha)
    assert keep.tolist() == (mm.edges >= t).tolist()
    out = f.subgraph(keep).trim()
    # every kept edge lies on a surviving path scoring at least t
    out_ge, _ = brute_max_marginals(out)
    assert np.all(out_ge >= t - 1e-9)
    assert out.num_edges == int(keep.sum())


@settings(max_examples=300, deadline=None)
@given(seeds, st.sampled_from(ALPHAS), st.booleans())
def test_vertex_pruning_keeps_vertices_on_good_paths(seed, alpha, integer_weights):
    f = random_dag(np.random.default_rng(seed), integer_weights=integer_weights)
    mm = max_marginals(f)
    t = edge_threshold(mm.vertices, alpha, mm.best_vertices())
    vkeep, ekeep = vertex_prune_masks(f, alpha)
    out = f.subgraph(ekeep, vkeep).trim()
    _, out_gv = brute_max_marginals(out)
    assert np.all(out_gv >= t - 1e-9)
    # the survivors are exactly the vertices at or above the threshold
    assert out.num_vertices == int(vkeep.sum())


@settings(max_examples=300, deadline=None)
@given(seeds, st.floats(0, 1), st.sampled_from(["edge", "vertex"]))
def test_best_path_survives(seed, alpha, method):
    f = random_dag(np.random.default_rng(seed))
    _, best = brute_best(f)
    keep = prune_mask(f, PruneParams(method, alpha))
    assert keep[list(best)].all()


@settings(max_examples=300, deadline=None)
@given(seeds, st.floats(0, 1), st.floats(0, 1), st.sampled_from(["edge", "vertex"]),
       st.booleans())
def test_survivors_shrink_as_alpha_grows(seed, a1, a2, method, integer_weights):
    f = random_dag(np.random.default_rng(seed), integer_weights=integer_weights)
    a1, a2 = sorted((a1, a2))
    k1 = prune_mask(f, PruneParams(method, a1))
    k2 = prune_mask(f, PruneParams(method, a2))
    assert not np.any(k2 & ~k1)


@settings(max_examples=200, deadline=None)
@given(seeds, st.booleans())
def test_alpha_one_keeps_only_best_path_elements(seed, integer_weights):
    f = random_dag(np.random.default_rng(seed), integer_weights=integer_weights)
    best, path = brute_best(f)
    for method in ("edge", "vertex"):
        out = prune(f, PruneParams(method, 1.0))
        ge, gv = brute_max_marginals(out)
        assert np.all(np.abs(gv - best) <= 1e-9)
        if method == "edge":
            assert np.all(np.abs(ge - best) <= 1e-9)
        assert max(path_score(out, p) for p in enumerate_paths(out)) == pytest.approx(best)


def test_rounding_never_drops_the_best_path():
    # here the vertex max-marginals along the best path differ in the last bit
    f = random_dag(np.random.default_rng(400992))
    mm = max_marginals(f)
    assert len(set(mm.vertices[mm.best_vertices()].tolist())) > 1
    _, best = brute_best(f)
    for method in ("edge", "vertex"):
        assert prune_mask(f, PruneParams(method, 1.0))[list(best)].all()


def test_repruning_with_tied_gammas_is_a_fixed_point():
    f = edge_prune(t2_fst(), 1.0)
    for method in ("edge", "vertex"):
        assert prune(f, PruneParams(method, 0.0)).edge_keys() == f.edge_keys()


def test_negative_scores_use_the_same_affine_threshold():
    f = t2_fst()
    g = f.with_weights(f.weights - 100.0)
    # every path here has at most two edges; shifting changes path scores unevenly
    mm = max_marginals(g)
    t = edge_threshold(mm.edges, 0.5)
    assert t == interpolate(0.5, mm.edges.max(), mm.edges.mean())
    assert edge_prune_mask(g, 0.5).tolist() == (mm.edges >= t).tolist()
