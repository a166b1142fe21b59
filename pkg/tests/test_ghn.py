import math
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import softmax

from hope.errors import GraphError
from hope.ghn import (
    AgentState,
    GhnParams,
    Hyperedge,
    HypergraphScene,
    _attention_projections,
    _pairwise_attention,
    attention_baseline,
    attention_op_count,
    build_hyperedges,
    edge_membership,
    edge_message,
    ghn_op_count,
    max_hyperedge_membership,
    node_update,
    redimension_scene,
    run_ghn,
    run_mixed_paths,
    scene_from_dict,
    scene_to_dict,
)
from hope.grassmann import Subspace, grassmann_distance, random_subspace
from hope.router import PathSpec
from hope.scenegen import group_subspaces, layout_agents, scaling_scene

SHALLOW = PathSpec.named("shallow")


def make_agents(positions, n=12, k=8, seed=0, groups=2):
    rng = np.random.default_rng(seed)
    which = rng.integers(groups, size=len(positions))
    bases = group_subspaces(which, rng, n=n, k=k)
    return [AgentState(i, p, Subspace(bases[i])) for i, p in enumerate(positions)]


def brute_edges(agents, eps_s, eps_g):
    """O(L^2) oracle: neighborhood sets as frozensets of ids, duplicates merged."""
    out = set()
    for a in agents:
        members = {
            b.id
            for b in agents
            if np.linalg.norm(a.position - b.position) <= eps_s and grassmann_distance(a.subspace, b.subspace) <= eps_g
        }
        out.add(frozenset(members | {a.id}))
    return out


def edge_ids(edges, agents):
    return {frozenset(agents[m].id for m in e.members) for e in edges}


def sign_fixed_qr(M):
    Q, R = np.linalg.qr(M)
    s = np.where(np.diag(R) < 0, -1.0, 1.0)
    return Q * s


# -- hyperedges ---------------------------------------------------------------


def test_single_agent_has_self_edge():
    agents = make_agents([[0.0, 0.0]])
    assert [e.members for e in build_hyperedges(agents)] == [(0,)]


def test_far_agents_get_singleton_edges():
    agents = make_agents([[0.0, 0.0], [100.0, 0.0]], groups=1)
    assert sorted(e.members for e in build_hyperedges(agents, eps_s=3.0)) == [(0,), (1,)]


@pytest.mark.parametrize("L, seed", [(200, 0), (200, 1), (500, 2)])
def test_hyperedges_match_brute_force(L, seed):
    rng = np.random.default_rng(seed)
    side = math.sqrt(L / 0.3)
    agents = make_agents(rng.uniform(0, side, size=(L, 2)), seed=seed, groups=3)
    edges = build_hyperedges(agents, 3.0, 0.8)
    assert edge_ids(edges, agents) == brute_edges(agents, 3.0, 0.8)
    assert any(len(e) > 1 for e in edges)


def test_hyperedges_reject_mixed_dimensions():
    a = AgentState(0, [0, 0], random_subspace(10, 4, 0))
    b = AgentState(1, [1, 0], random_subspace(10, 5, 1))
    with pytest.raises(GraphError, match="mixed subspace dimensions"):
        build_hyperedges([a, b])
    with pytest.raises(GraphError, match="no agents"):
        build_hyperedges([])


def test_edges_are_canonically_ordered():
    rng = np.random.default_rng(4)
    agents = make_agents(rng.uniform(0, 15, size=(60, 2)), seed=4)
    edges = build_hyperedges(agents)
    keys = [tuple(agents[m].id for m in e.members) for e in edges]
    assert keys == sorted(keys)
    assert all(list(k) == sorted(k) for k in keys)


# -- membership bound ----------------------------------------------------------


def test_membership_bound_value():
    assert max_hyperedge_membership(0.5, 3.0) == 15
    assert 0.5 * math.pi * 9 == pytest.approx(14.137, abs=1e-3)
    assert max_hyperedge_membership(0.5, 1e-3) == 1
    with pytest.raises(GraphError):
        max_hyperedge_membership(0.0, 3.0)


@pytest.mark.parametrize("seed", range(20))
def test_membership_within_bound_on_capped_scenes(seed):
    rng = np.random.default_rng(seed)
    pos, which = layout_agents(80, 25.0, 25.0, 0.5, 3.0, rng, min_sep=0.5)
    bases = group_subspaces(which, rng, n=12, k=4)
    agents = [AgentState(i, p, Subspace(bases[i])) for i, p in enumerate(pos)]
    edges = build_hyperedges(agents, 3.0, 0.8)
    counts = edge_membership(edges, len(agents))
    assert counts.max() <= max_hyperedge_membership(0.5, 3.0)
    assert counts.min() >= 1


# -- edge_message and node_update --------------------------------------------


def test_singleton_message_is_the_basis():
    agents = make_agents([[0.0, 0.0]])
    np.testing.assert_array_equal(edge_message(Hyperedge((0,)), agents, np.eye(8)), agents[0].subspace.basis)


def test_message_of_identical_bases():
    U = random_subspace(10, 3, 0)
    agents = [AgentState(0, [0, 0], U), AgentState(1, [1, 0], U)]
    np.testing.assert_allclose(edge_message(Hyperedge((0, 1)), agents, np.eye(3)), U.basis, atol=1e-15)


def test_message_matches_direct_sum():
    rng = np.random.default_rng(1)
    agents = [AgentState(i, [i, 0], random_subspace(10, 4, i)) for i in range(3)]
    W = rng.standard_normal((4, 4))
    expected = sum(a.subspace.basis @ W for a in agents) / 3
    np.testing.assert_allclose(edge_message(Hyperedge((0, 1, 2)), agents, W), expected, atol=1e-12)


def test_self_message_is_a_fixed_point():
    a = AgentState(0, [0, 0], random_subspace(12, 5, 3))
    params = GhnParams(phi_weights=np.eye(5), psi_weights=np.eye(5))
    out = node_update(a, [edge_message(Hyperedge((0,)), [a], np.eye(5))], params)
    np.testing.assert_allclose(out.projector, a.subspace.projector, atol=1e-12)


def test_vanishing_step_leaves_subspace_unchanged():
    a = AgentState(0, [0, 0], random_subspace(12, 5, 3))
    M = np.random.default_rng(0).standard_normal((12, 5))
    out = node_update(a, [M], GhnParams(eta=1e-300))
    np.testing.assert_allclose(out.basis, a.subspace.basis, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31), eta=st.floats(1e-3, 2.0), count=st.integers(1, 4))
def test_node_update_output_is_orthonormal(seed, eta, count):
    rng = np.random.default_rng(seed)
    a = AgentState(0, [0, 0], random_subspace(16, 6, seed))
    msgs = [rng.standard_normal((16, 6)) for _ in range(count)]
    U = node_update(a, msgs, GhnParams(eta=eta)).basis
    assert np.linalg.norm(U.T @ U - np.eye(6)) <= 1e-10


def test_node_update_needs_a_message():
    with pytest.raises(GraphError):
        node_update(AgentState(0, [0, 0], random_subspace(5, 2, 0)), [], GhnParams())


@pytest.mark.parametrize("field", ["eta", "eps_s", "eps_g", "rho_max"])
@pytest.mark.parametrize("value", [0.0, -1.0, math.inf])
def test_params_validation(field, value):
    with pytest.raises(GraphError):
        GhnParams(**{field: value})


def test_params_weight_shape_checked():
    with pytest.raises(GraphError, match="expected"):
        GhnParams(phi_weights=np.eye(3)).weights(4)


# -- run_ghn ------------------------------------------------------------------


def test_zero_rounds_leave_scene_unchanged():
    scene = scaling_scene(30, seed=1)
    scene = redimension_scene(scene, 8)
    out = run_ghn(scene, SimpleNamespace(rounds=0, subspace_dim=8))
    for a, b in zip(scene.agents, out.agents):
        np.testing.assert_array_equal(a.subspace.basis, b.subspace.basis)


def test_two_agent_round_matches_hand_oracle():
    rng = np.random.default_rng(7)
    U0 = random_subspace(10, 8, 1).basis
    U1 = Subspace(sign_fixed_qr(U0 + 0.02 * rng.standard_normal((10, 8)))).basis
    scene = HypergraphScene([AgentState(0, [0, 0], Subspace(U0)), AgentState(1, [1, 0], Subspace(U1))])
    phi, psi = rng.standard_normal((8, 8)), rng.standard_normal((8, 8))
    params = GhnParams(eta=0.1, phi_weights=phi, psi_weights=psi)
    # 1 round of the shallow path: run the first of its two rounds by hand
    out = run_ghn(scene, SimpleNamespace(rounds=1, subspace_dim=8), params)

    M = 0.5 * (U0 + U1) @ phi
    for U, agent in zip((U0, U1), out.agents):
        step = (M - U @ (U.T @ M)) @ psi
        np.testing.assert_allclose(agent.subspace.basis, sign_fixed_qr(U + 0.1 * step), atol=1e-10)


def test_run_requires_matching_dimension():
    scene = scaling_scene(10, seed=0)
    with pytest.raises(GraphError, match="path needs"):
        run_ghn(scene, SHALLOW)


@pytest.mark.parametrize("seed", range(3))
def test_permutation_equivariance_exact(seed):
    scene = redimension_scene(scaling_scene(80, seed=seed), 8)
    perm = np.random.default_rng(seed).permutation(len(scene))
    shuffled = HypergraphScene([scene.agents[i] for i in perm])
    a = run_ghn(scene, SHALLOW)
    b = run_ghn(shuffled, SHALLOW)
    by_id = {ag.id: ag.subspace.basis for ag in b.agents}
    for ag in a.agents:
        np.testing.assert_array_equal(ag.subspace.basis, by_id[ag.id])
    assert edge_ids(a.edges, a.agents) == edge_ids(b.edges, b.agents)


def test_locality_far_agents_do_not_matter():
    scene = redimension_scene(scaling_scene(40, seed=3), 8)
    far = [AgentState(1000 + i, a.position + 1e4, a.subspace) for i, a in enumerate(scene.agents[:10])]
    one_round = SimpleNamespace(rounds=1, subspace_dim=8)
    a = run_ghn(scene, one_round)
    b = run_ghn(HypergraphScene(list(scene.agents) + far), one_round)
    for x, y in zip(a.agents, b.agents):
        np.testing.assert_allclose(x.subspace.basis, y.subspace.basis, atol=1e-12)


@pytest.mark.parametrize("path", ["shallow", "medium", "deep"])
def test_run_keeps_bases_orthonormal(path):
    spec = PathSpec.named(path)
    scene = redimension_scene(scaling_scene(64, seed=5), spec.subspace_dim)
    out = run_ghn(scene, spec)
    err = np.linalg.norm(np.swapaxes(out.bases, 1, 2) @ out.bases - np.eye(spec.subspace_dim), axis=(1, 2))
    assert err.max() <= 1e-6
    assert edge_membership(out.edges, len(out)).min() >= 1


def test_scene_dict_roundtrip():
    scene = redimension_scene(scaling_scene(12, seed=0), 8)
    scene = run_ghn(scene, SHALLOW)
    params = GhnParams(eta=0.2, seed=3, phi_weights=np.eye(8))
    back, p2 = scene_from_dict(scene_to_dict(scene, params))
    assert p2.eta == 0.2 and p2.seed == 3
    np.testing.assert_array_equal(p2.phi_weights, np.eye(8))
    np.testing.assert_array_equal(back.bases, scene.bases)
    assert [e.members for e in back.edges] == [e.members for e in scene.edges]


def test_scene_validation():
    U = random_subspace(4, 2, 0)
    with pytest.raises(GraphError, match="unique"):
        HypergraphScene([AgentState(0, [0, 0], U), AgentState(0, [1, 1], U)])
    with pytest.raises(GraphError, match="out of range"):
        HypergraphScene([AgentState(0, [0, 0], U)], [Hyperedge((3,))])
    with pytest.raises(GraphError, match="empty hyperedge"):
        Hyperedge(())
    with pytest.raises(GraphError, match="non-finite"):
        AgentState(0, [np.nan, 0], U)


# -- attention baseline -------------------------------------------------------


def dense_oracle(scene, feat_dim, seed, layers=1):
    X = np.stack([a.subspace.basis.ravel() for a in scene.agents])
    for Wq, Wk, Wv in _attention_projections(X.shape[1], feat_dim, seed, layers):
        A = softmax((X @ Wq) @ (X @ Wk).T / math.sqrt(feat_dim), axis=1)
        X = A @ (X @ Wv)
    return X


def test_attention_single_agent_returns_value():
    scene = HypergraphScene([AgentState(0, [0, 0], random_subspace(6, 2, 0))])
    _, _, Wv = _attention_projections(12, 16, 0, 1)[0]
    np.testing.assert_allclose(attention_baseline(scene, 16), scene.agents[0].subspace.basis.reshape(1, -1) @ Wv, atol=1e-14)


def test_attention_rows_sum_to_one():
    rng = np.random.default_rng(0)
    Q, K = rng.standard_normal((7, 5)), rng.standard_normal((7, 5))
    out = _pairwise_attention(Q, K, np.ones((7, 1)), 1 / math.sqrt(5))
    np.testing.assert_allclose(out, 1.0, atol=1e-9)


@pytest.mark.parametrize("kernel", ["pairwise", "dense"])
@pytest.mark.parametrize("L, layers", [(3, 1), (9, 3)])
def test_attention_matches_dense_oracle(kernel, L, layers):
    scene = HypergraphScene([AgentState(i, [i, 0], random_subspace(8, 3, i)) for i in range(L)])
    np.testing.assert_allclose(attention_baseline(scene, 16, 4, layers, kernel), dense_oracle(scene, 16, 4, layers), atol=1e-10)


def test_attention_errors():
    with pytest.raises(GraphError, match="no agents"):
        attention_baseline(HypergraphScene([]))
    scene = HypergraphScene([AgentState(0, [0, 0], random_subspace(4, 2, 0))])
    with pytest.raises(GraphError, match="kernel"):
        attention_baseline(scene, kernel="sparse")


def test_op_counts():
    assert ghn_op_count(100, PathSpec.named("deep"), 48) == 6 * 100 * 48 * 32**2
    assert attention_op_count(10, 64, 2) == 2 * 2 * 100 * 64
    # doubling L doubles GHN work and quadruples attention work
    assert ghn_op_count(200, SHALLOW, 48) == 2 * ghn_op_count(100, SHALLOW, 48)
    assert attention_op_count(200, 64) == 4 * attention_op_count(100, 64)


# -- mixed paths ----------------------------------------------------------------


def test_one_hot_mixture_is_the_single_path_projector():
    scene = redimension_scene(scaling_scene(24, seed=2), 16)
    mixed = run_mixed_paths(scene, [0.0, 1.0, 0.0])
    B = run_ghn(scene, PathSpec.named("medium")).bases
    np.testing.assert_allclose(mixed, B @ np.swapaxes(B, 1, 2), atol=1e-14)


def test_mixture_trace_and_symmetry():
    scene = scaling_scene(16, seed=4)
    w = [0.2, 0.3, 0.5]
    P = run_mixed_paths(scene, w)
    np.testing.assert_allclose(np.trace(P, axis1=1, axis2=2), 0.2 * 8 + 0.3 * 16 + 0.5 * 32, atol=1e-9)
    np.testing.assert_allclose(P, np.swapaxes(P, 1, 2), atol=1e-14)
    eig = np.linalg.eigvalsh(P)
    assert eig.min() >= -1e-12 and eig.max() <= 1 + 1e-12


@pytest.mark.parametrize("w", [[0.5, 0.5], [0.5, 0.6, -0.1], [0.2, 0.2, 0.2]])
def test_mixture_weight_validation(w):
    with pytest.raises(GraphError, match="path weights"):
        run_mixed_paths(scaling_scene(4, seed=0), w)
