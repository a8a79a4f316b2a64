import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import edge_cosine_gap, finite_difference, max_relative_error
from rxdistill.errors import DimensionMismatch, EmptyGraph, SnapshotError, UnknownEntity, ZeroVector
from rxdistill.kg_embed import (
    EmbeddingTable, EmbedTrainConfig, cosine, entity_similarity, init_tables, load_embeddings,
    objective, ranking_loss, save_embeddings, similarity_to_all, train,
)
from rxdistill.kg_store import build_graph


@pytest.mark.parametrize("u,v,expected", [
    ([1, 0], [0, 1], 0.0),
    ([2, 0], [1, 0], 1.0),
    ([1, 1], [1, 0], 0.7071067811865475),
])
def test_cosine_examples(u, v, expected):
    assert cosine(u, v) == pytest.approx(expected, abs=1e-15)


def test_cosine_errors():
    with pytest.raises(ZeroVector):
        cosine([0, 0], [1, 0])
    with pytest.raises(DimensionMismatch):
        cosine([1, 0, 0], [1, 0])


def test_entity_similarity_table():
    t = EmbeddingTable([[1.0, 1.0], [1.0, 0.0], [0.0, 0.0]])
    assert entity_similarity(t, 0, 1) == pytest.approx(0.7071067811865475, abs=1e-15)
    assert entity_similarity(t, 0, 0) == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(ZeroVector):
        entity_similarity(t, 0, 2)
    with pytest.raises(UnknownEntity):
        entity_similarity(t, 0, 7)


finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)
vec = arrays(np.float64, 6, elements=finite).filter(lambda v: np.linalg.norm(v) > 1e-3)


@settings(max_examples=200, deadline=None)
@given(vec, vec, st.floats(1e-3, 1e3))
def test_cosine_scale_invariant_and_bounded(u, v, alpha):
    c = cosine(u, v)
    assert abs(c) <= 1 + 1e-12
    assert cosine(alpha * u, v) == pytest.approx(c, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (5, 4), elements=finite).filter(lambda m: np.all(np.linalg.norm(m, axis=1) > 1e-3)))
def test_similarity_to_all_matches_pairwise(m):
    t = EmbeddingTable(m)
    for a in range(5):
        row = similarity_to_all(t, a)
        for b in range(5):
            assert row[b] == pytest.approx(entity_similarity(t, a, b), abs=1e-12)


def _five_entity_instance():
    rng = np.random.default_rng(3)
    ent = rng.normal(size=(5, 4))
    rel = rng.normal(size=(2, 4))
    batch = [(0, 0, 1, 2), (0, 0, 1, 3), (2, 1, 3, 4), (4, 1, 0, 1), (3, 0, 4, 0)]
    return ent, rel, batch


def test_ranking_loss_gradient_matches_finite_differences():
    ent, rel, batch = _five_entity_instance()
    margin = 5.0  # large enough that every hinge is active, away from the kink
    _, g_ent, g_rel = ranking_loss(ent, rel, batch, margin)
    f = lambda: ranking_loss(ent, rel, batch, margin)[0]
    assert max_relative_error(g_ent, finite_difference(f, ent)) < 1e-4
    assert max_relative_error(g_rel, finite_difference(f, rel)) < 1e-4


def test_objective_gradient_matches_finite_differences():
    ent, rel, batch = _five_entity_instance()
    _, g_ent, g_rel = objective(ent, rel, batch, 5.0, relation_l2=0.7)
    f = lambda: objective(ent, rel, batch, 5.0, 0.7)[0]
    assert max_relative_error(g_ent, finite_difference(f, ent)) < 1e-4
    assert max_relative_error(g_rel, finite_difference(f, rel)) < 1e-4


def test_inactive_hinge_contributes_nothing():
    ent = np.array([[0.0, 0.0], [1.0, 0.0], [50.0, 0.0]])
    rel = np.array([[1.0, 0.0]])
    loss, g_ent, g_rel = ranking_loss(ent, rel, [(0, 0, 1, 2)], 1.0)
    assert loss == 0.0 and not g_ent.any() and not g_rel.any()


def test_zero_epochs_returns_initialization(fixture_graph):
    cfg = EmbedTrainConfig(dim=8, epochs=0, seed=5)
    res = train(fixture_graph, cfg)
    ent, _, _ = init_tables(fixture_graph.num_entities, fixture_graph.num_relations, 8, 5)
    assert np.array_equal(res.table.vectors, ent)
    assert res.epoch_losses == []


def test_training_is_deterministic(fixture_graph):
    cfg = EmbedTrainConfig(dim=8, epochs=50, seed=42)
    a, b = train(fixture_graph, cfg), train(fixture_graph, cfg)
    assert a.table == b.table
    assert a.epoch_losses == b.epoch_losses


def test_training_reduces_loss_and_separates_edges(fixture_graph):
    res = train(fixture_graph, EmbedTrainConfig())
    assert all(math.isfinite(x) for x in res.epoch_losses)
    assert res.epoch_losses[-1] < res.epoch_losses[0]
    assert edge_cosine_gap(fixture_graph.edges, res.table.vectors) >= 0.1


def test_empty_graph_rejected():
    with pytest.raises(EmptyGraph):
        train(build_graph([]), EmbedTrainConfig(epochs=1))


@pytest.mark.parametrize("kwargs", [{"dim": 0}, {"epochs": -1}, {"learning_rate": 0},
                                    {"negatives_per_positive": 0}, {"relation_l2": -1}])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        EmbedTrainConfig(**kwargs)


def test_save_load_roundtrip(tmp_path, fixture_graph):
    t = train(fixture_graph, EmbedTrainConfig(dim=8, epochs=3)).table
    path = tmp_path / "e.emb"
    save_embeddings(t, path)
    assert load_embeddings(path) == t
    path.write_text("garbage\n")
    with pytest.raises(SnapshotError):
        load_embeddings(path)
