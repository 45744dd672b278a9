"""Seven-block network: recovery of known models, degeneracies, equivariance."""

import numpy as np
import pytest

import nodenas.autodiff as ad
from nodenas.autodiff import ParameterError, SparseMatrix, Tape, Tensor, backward_all
from nodenas.graphs import Graph, synth_heterophilous
from nodenas.supernet import (
    NodeArchitecture,
    SupernetConfig,
    SupernetParams,
    forward_fixed,
    forward_weighted,
    one_hot_weights,
    realized_edges,
    slot_label,
    uniform_architecture,
)


# ---------------------------------------------------------------------------
# Oracles: dense reference implementations written independently of the module
# ---------------------------------------------------------------------------

def gcn_oracle(x, dense_adj, w_in, layer_ws, w_c):
    """Plain dense GCN with self-loops and symmetric normalization."""
    a = dense_adj + np.eye(dense_adj.shape[0])
    deg = a.sum(axis=1)
    s = a / np.sqrt(np.outer(deg, deg))
    h = np.maximum(x @ w_in, 0.0)
    for w in layer_ws:
        h = np.maximum(s @ h @ w, 0.0)
    return h @ w_c


def mlp_oracle(x, w1, w2, w_c):
    return np.maximum(np.maximum(x @ w1, 0.0) @ w2, 0.0) @ w_c


def random_graph(n, p, f, c, seed):
    rng = np.random.default_rng(seed)
    dense = (rng.random((n, n)) < p)
    dense = np.triu(dense, 1)
    dense = (dense | dense.T).astype(float)
    # make sure nobody is isolated so the GCN oracle is on classic footing
    for u in range(n):
        if dense[u].sum() == 0:
            v = (u + 1) % n
            dense[u, v] = dense[v, u] = 1.0
    adj = SparseMatrix.from_dense(dense)
    feats = rng.normal(size=(n, f))
    labels = rng.integers(0, c, size=n)
    return Graph(adj, feats, labels, num_classes=c), dense


def small_setup(n=12, f=5, d=6, c=3, layers=2, seed=0, p=0.3, dropout=0.0):
    g, dense = random_graph(n, p, f, c, seed)
    config = SupernetConfig(num_layers=layers, hidden=d, dropout=dropout)
    params = SupernetParams(config, f, c, n, seed=seed + 100)
    return g, dense, config, params


# ---------------------------------------------------------------------------
# Known-model recovery
# ---------------------------------------------------------------------------

def test_gcn_configuration_matches_dense_oracle():
    for seed in (0, 1, 2):
        g, dense, config, params = small_setup(n=20, f=7, d=8, c=4, seed=seed)
        arch = uniform_architecture(g.num_nodes, config)  # GCN defaults
        logits = forward_fixed(arch, g, params, mode="eval").values
        want = gcn_oracle(g.features.values, dense, params["w_in"].values,
                          [params["layer1.w"].values, params["layer2.w"].values],
                          params["classifier"].values)
        assert np.max(np.abs(logits - want)) < 1e-6


def test_mlp_configuration_matches_mlp_oracle_exactly():
    g, _, config, params = small_setup(seed=3)
    arch = uniform_architecture(g.num_nodes, config, residual="RES",
                                inter="NONSKIP", output="MLP")
    logits = forward_fixed(arch, g, params).values
    want = mlp_oracle(g.features.values, params["mlp.w1"].values,
                      params["mlp.w2"].values, params["classifier"].values)
    assert np.max(np.abs(logits - want)) < 1e-12


def test_mlp_output_ignores_adjacency():
    g, dense, config, params = small_setup(seed=4)
    arch = uniform_architecture(g.num_nodes, config, output="MLP")
    base = forward_fixed(arch, g, params).values
    # rewire the graph completely; logits must not move
    g2, _ = random_graph(g.num_nodes, 0.6, g.num_features, g.num_classes, seed=77)
    g2 = Graph(g2.adjacency, g.features.values, g.labels,
               num_classes=g.num_classes)
    again = forward_fixed(arch, g2, params).values
    assert np.array_equal(base, again)


def test_full_skip_equals_classifier_of_h0():
    g, _, config, params = small_setup(seed=5)
    arch = uniform_architecture(g.num_nodes, config, residual="RES",
                                inter="NONSKIP", output="GNN")
    logits = forward_fixed(arch, g, params).values
    h0 = np.maximum(g.features.values @ params["w_in"].values, 0.0)
    want = h0 @ params["classifier"].values
    assert np.max(np.abs(logits - want)) < 1e-12


def test_learn_att_one_hot_on_last_layer_equals_nonskip():
    g, _, config, params = small_setup(seed=6)
    gamma = np.zeros((g.num_nodes, config.num_layers + 1))
    gamma[:, -1] = 1.0
    params["inter_gamma"].values = gamma
    a1 = uniform_architecture(g.num_nodes, config, inter="LEARN_ATT")
    a2 = uniform_architecture(g.num_nodes, config, inter="NONSKIP")
    l1 = forward_fixed(a1, g, params).values
    l2 = forward_fixed(a2, g, params).values
    assert np.max(np.abs(l1 - l2)) < 1e-12


def test_update_att_with_zero_gate_matches_mean():
    g, _, config, params = small_setup(seed=7)
    params["layer1.update_gate"].values[:] = 0.0
    params["layer2.update_gate"].values[:] = 0.0
    att = uniform_architecture(g.num_nodes, config, update="ATT")
    mean = uniform_architecture(g.num_nodes, config, update="MEAN")
    la = forward_fixed(att, g, params).values
    lm = forward_fixed(mean, g, params).values
    assert np.max(np.abs(la - lm)) < 1e-12


def test_update_sum_equals_ego_when_messages_vanish():
    # gate weights 0 => GATE_FILTER attention weights are all tanh(0) = 0
    g, _, config, params = small_setup(seed=8)
    for l in (1, 2):
        params[f"layer{l}.gate_src"].values[:] = 0.0
        params[f"layer{l}.gate_dst"].values[:] = 0.0
    s = uniform_architecture(g.num_nodes, config, attention="GATE_FILTER",
                             update="SUM")
    e = uniform_architecture(g.num_nodes, config, attention="GATE_FILTER",
                             update="EGO")
    assert np.max(np.abs(forward_fixed(s, g, params).values
                         - forward_fixed(e, g, params).values)) < 1e-12


# ---------------------------------------------------------------------------
# Edge weight semantics
# ---------------------------------------------------------------------------

def test_two_joined_nodes_sym_norm_gives_half():
    adj = SparseMatrix.from_edges((2, 2), [0, 1], [1, 0])
    g = Graph(adj, np.eye(2), [0, 1], num_classes=2)
    config = SupernetConfig(num_layers=1, hidden=3)
    params = SupernetParams(config, 2, 2, 2, seed=0)
    arch = uniform_architecture(2, config)  # 1LOOPN + SYM_NORM
    (e,) = realized_edges(arch, g, params)
    assert e.nnz == 4  # both edges plus both self-loops
    np.testing.assert_allclose(e.values.values, 0.5)


def test_per_node_selection_support():
    # path 0-1-2; node 1 keeps 1N, nodes 0 and 2 take the self-loop variant
    adj = SparseMatrix.from_edges((3, 3), [0, 1, 1, 2], [1, 0, 2, 1])
    g = Graph(adj, np.eye(3), [0, 1, 0], num_classes=2)
    config = SupernetConfig(num_layers=1, hidden=3)
    params = SupernetParams(config, 3, 2, 3, seed=1)
    arch = uniform_architecture(3, config, attention="CONST")
    arch.choices[slot_label("selection", 1)] = np.array([1, 0, 1])  # 1LOOPN,1N,1LOOPN
    (e,) = realized_edges(arch, g, params)
    dense = e.densify()
    assert dense[1].tolist() == [1.0, 0.0, 1.0]  # no self-loop on row 1
    assert dense[0].tolist() == [1.0, 1.0, 0.0]
    assert dense[2].tolist() == [0.0, 1.0, 1.0]


def test_signed_attention_weights_bounded_and_symmetric_features_give_one():
    # two nodes with identical feature rows: cosine similarity 1
    adj = SparseMatrix.from_edges((2, 2), [0, 1], [1, 0])
    g = Graph(adj, np.array([[1.0, 2.0], [1.0, 2.0]]), [0, 1], num_classes=2)
    config = SupernetConfig(num_layers=1, hidden=4)
    params = SupernetParams(config, 2, 2, 2, seed=2)
    arch = uniform_architecture(2, config, selection="1N", attention="SIGNED")
    (e,) = realized_edges(arch, g, params)
    vals = e.values.values
    assert np.all(np.abs(vals) <= 1.0)
    # h rows are identical, so cos = 1 and both weights equal tanh(scale)
    np.testing.assert_allclose(vals, np.tanh(1.0), atol=1e-12)


def test_isolated_node_with_1n_gets_zero_logits_row():
    adj = SparseMatrix.from_edges((3, 3), [0, 1], [1, 0])  # node 2 isolated
    g = Graph(adj, np.abs(np.random.default_rng(0).normal(size=(3, 4))),
              [0, 1, 0], num_classes=2)
    config = SupernetConfig(num_layers=2, hidden=5)
    params = SupernetParams(config, 4, 2, 3, seed=3)
    arch = uniform_architecture(3, config, selection="1N", attention="CONST",
                                update="NEIGHBOR", residual="AGG",
                                inter="NONSKIP", output="GNN")
    logits = forward_fixed(arch, g, params).values
    np.testing.assert_allclose(logits[2], 0.0)


def test_isolated_node_with_1loopn_keeps_itself():
    adj = SparseMatrix.from_edges((1, 1), [], [])
    g = Graph(adj, np.array([[1.0, 0.5]]), [0], num_classes=1)
    config = SupernetConfig(num_layers=1, hidden=3)
    params = SupernetParams(config, 2, 1, 1, seed=4)
    arch = uniform_architecture(1, config, attention="CONST")
    (e,) = realized_edges(arch, g, params)
    assert e.densify().tolist() == [[1.0]]


# ---------------------------------------------------------------------------
# Structural invariants
# ---------------------------------------------------------------------------

def random_architecture(config, n, seed):
    rng = np.random.default_rng(seed)
    choices = {}
    for label in config.slot_labels():
        k = len(config.candidates[config.block_of_slot(label)])
        choices[label] = rng.integers(0, k, size=n)
    return NodeArchitecture(config, n, choices)


def test_permutation_equivariance():
    g, dense, config, params = small_setup(n=15, f=6, d=5, c=3, seed=9)
    arch = random_architecture(config, g.num_nodes, seed=10)
    logits = forward_fixed(arch, g, params).values

    rng = np.random.default_rng(11)
    perm = rng.permutation(g.num_nodes)
    pdense = dense[np.ix_(perm, perm)]
    inv = np.argsort(perm)
    # node i of the new graph is node perm[i] of the old one
    g2 = Graph(SparseMatrix.from_dense(pdense), g.features.values[perm],
               g.labels[perm], num_classes=g.num_classes)
    choices2 = {k: v[perm] for k, v in arch.choices.items()}
    arch2 = NodeArchitecture(config, g.num_nodes, choices2)
    params2 = SupernetParams(config, g.num_features, g.num_classes,
                             g.num_nodes, seed=109)
    params2.load_state(params.state_dict())
    params2["inter_gamma"].values = params["inter_gamma"].values[perm]
    logits2 = forward_fixed(arch2, g2, params2).values
    assert np.max(np.abs(logits2 - logits[perm])) < 1e-9
    assert np.max(np.abs(logits2[inv] - logits)) < 1e-9


def test_locality_of_choice_edits():
    g, dense, config, params = small_setup(n=14, f=4, d=5, c=3, seed=12, p=0.2)
    arch = random_architecture(config, g.num_nodes, seed=13)
    base = forward_fixed(arch, g, params).values
    u = 3

    # layer-2 edit: only u itself may move (L - l = 0 hops)
    arch2 = NodeArchitecture(config, g.num_nodes,
                             {k: v.copy() for k, v in arch.choices.items()})
    lbl = slot_label("update", 2)
    arch2.choices[lbl][u] = (arch.choices[lbl][u] + 1) % len(
        config.candidates["update"])
    moved = np.where(np.abs(forward_fixed(arch2, g, params).values - base)
                     .max(axis=1) > 1e-13)[0]
    assert set(moved) <= {u}

    # layer-1 edit: changes may reach u's one-hop neighborhood
    arch3 = NodeArchitecture(config, g.num_nodes,
                             {k: v.copy() for k, v in arch.choices.items()})
    lbl = slot_label("update", 1)
    arch3.choices[lbl][u] = (arch.choices[lbl][u] + 1) % len(
        config.candidates["update"])
    moved = np.where(np.abs(forward_fixed(arch3, g, params).values - base)
                     .max(axis=1) > 1e-13)[0]
    ball = {u} | set(np.where(dense[u] > 0)[0])
    assert set(moved) <= ball


def test_identical_feature_rows_on_regular_graph_give_identical_logits():
    n = 8
    pairs = [(i, (i + 1) % n) for i in range(n)]  # cycle, 2-regular
    rows = [u for u, v in pairs] + [v for u, v in pairs]
    cols = [v for u, v in pairs] + [u for u, v in pairs]
    adj = SparseMatrix.from_edges((n, n), rows, cols)
    g = Graph(adj, np.tile([[0.3, -1.2, 0.7]], (n, 1)), [0] * n, num_classes=1)
    config = SupernetConfig(num_layers=2, hidden=4)
    params = SupernetParams(config, 3, 1, n, seed=5)
    arch = uniform_architecture(n, config, attention="CONST", update="SUM",
                                residual="SUM", inter="SUM", output="SUM")
    logits = forward_fixed(arch, g, params).values
    assert np.max(np.abs(logits - logits[0])) < 1e-12


def test_one_hot_weighted_forward_matches_fixed():
    g, _, config, params = small_setup(n=13, f=5, d=6, c=3, seed=14)
    arch = random_architecture(config, g.num_nodes, seed=15)
    fixed = forward_fixed(arch, g, params).values

    # same one-hot weights, but marked differentiable so no branch is skipped
    hot = one_hot_weights(arch, config)
    for t in hot.values():
        t.requires_grad = True

    def weight_fn(block, layer, inputs):
        return hot[slot_label(block, layer)]

    mixed = forward_weighted(g, params, weight_fn).values
    assert np.max(np.abs(mixed - fixed)) < 1e-10


def test_gradients_flow_through_full_network():
    g, _, config, params = small_setup(n=6, f=3, d=3, c=2, seed=16, p=0.5)
    # exercise the learnable attention and combine paths
    arch = uniform_architecture(g.num_nodes, config, attention="GATE_FILTER",
                                update="ATT", residual="ATT",
                                inter="LEARN_ATT", output="ATT")
    arch.choices[slot_label("attention", 2)][:3] = 3  # SIGNED for some nodes
    mask = np.arange(g.num_nodes)

    def f():
        logits = forward_fixed(arch, g, params)
        return ad.cross_entropy_mean(logits, g.labels, mask)

    err = ad.grad_check(f, params.tensors(), eps=1e-4)
    assert err < 1e-4


def test_every_parameter_gets_finite_gradient():
    g, _, config, params = small_setup(n=6, f=3, d=3, c=2, seed=17, p=0.5)
    arch = uniform_architecture(g.num_nodes, config, attention="SIGNED",
                                update="ATT", residual="ATT",
                                inter="LEARN_ATT", output="ATT")
    with Tape() as tape:
        logits = forward_fixed(arch, g, params)
        loss = ad.cross_entropy_mean(logits, g.labels, np.arange(g.num_nodes))
    grads = backward_all(loss, tape)
    for t, grad in grads.items():
        assert np.all(np.isfinite(grad))


def test_dropout_train_mode_differs_and_eval_is_deterministic():
    g, _, config, params = small_setup(seed=18, dropout=0.4)
    arch = uniform_architecture(g.num_nodes, config)
    e1 = forward_fixed(arch, g, params, mode="eval").values
    e2 = forward_fixed(arch, g, params, mode="eval").values
    assert np.array_equal(e1, e2)
    t1 = forward_fixed(arch, g, params, mode="train",
                       rng=np.random.default_rng(0)).values
    t2 = forward_fixed(arch, g, params, mode="train",
                       rng=np.random.default_rng(1)).values
    assert not np.array_equal(t1, t2)
    with pytest.raises(ParameterError, match="rng"):
        forward_fixed(arch, g, params, mode="train")


# ---------------------------------------------------------------------------
# Types: config, architecture, parameters
# ---------------------------------------------------------------------------

def test_config_validation():
    with pytest.raises(ParameterError, match="unknown"):
        SupernetConfig(candidates={"update": ("EGO", "MAX")})
    with pytest.raises(ParameterError, match="empty"):
        SupernetConfig(candidates={"attention": ()})
    with pytest.raises(ParameterError, match="aggregation"):
        SupernetConfig(candidates={"aggregation": ("ADD", "ADD")})
    cfg = SupernetConfig(num_layers=3, hidden=16)
    assert cfg.slot_labels()[0] == "L1_O_se"
    assert cfg.slot_labels()[-1] == "O_om"
    assert len(cfg.slot_labels()) == 3 * 4 + 2


def test_architecture_json_round_trip_and_stability():
    config = SupernetConfig(num_layers=2, hidden=8)
    arch = random_architecture(config, 9, seed=19)
    text = arch.to_json()
    assert text == NodeArchitecture.from_json(text).to_json()
    again = random_architecture(config, 9, seed=19)
    assert again.to_json() == text
    assert NodeArchitecture.from_json(text) == arch


def test_architecture_validation_errors():
    config = SupernetConfig(num_layers=1, hidden=4)
    with pytest.raises(ParameterError, match="slots"):
        NodeArchitecture(config, 3, {"L1_O_se": np.zeros(3, dtype=int)})
    arch = uniform_architecture(4, config)
    other = SupernetConfig(num_layers=2, hidden=4)
    with pytest.raises(ParameterError, match="disagree"):
        arch.compatible_with(other, 4)
    with pytest.raises(ParameterError, match="nodes"):
        arch.compatible_with(config, 5)
    with pytest.raises(ParameterError, match="candidate"):
        uniform_architecture(4, config, update="MAXPOOL")


def test_params_determinism_and_size_dependence():
    config = SupernetConfig(num_layers=2, hidden=8)
    a = SupernetParams(config, 5, 3, 10, seed=1)
    b = SupernetParams(config, 5, 3, 10, seed=1)
    for n1, n2 in zip(a.tensors(), b.tensors()):
        assert np.array_equal(n1.values, n2.values)
    c = SupernetParams(config, 5, 3, 10000, seed=1)
    # only the per-node inter-merge coefficients depend on the node count
    assert c.count() - a.count() == (10000 - 10) * (config.num_layers + 1)


def test_forward_shape_and_graph_mismatch():
    g, _, config, params = small_setup(seed=20)
    arch = uniform_architecture(g.num_nodes, config)
    other = synth_heterophilous(30, 3, 0.5, avg_degree=3, feature_dim=5, seed=0)
    with pytest.raises(ParameterError):
        forward_fixed(arch, other, params)
    logits = forward_fixed(arch, g, params)
    assert logits.shape == (g.num_nodes, g.num_classes)
