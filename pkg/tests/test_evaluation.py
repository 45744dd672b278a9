"""Tests for retraining, evaluation, and the label-replay purity score.

The hand-worked h_iir fixtures come first: tiny graphs where the replay
result can be worked out by hand, plus a brute-force per-node replay oracle
that cross-checks the vectorized implementation on random architectures.
"""

import numpy as np
import pytest

from nodenas import (
    MetricsTable,
    ParameterError,
    Split,
    SupernetConfig,
    SupernetParams,
    TrainConfig,
    TrainingDivergence,
    accuracy_by_homophily_bin,
    bare_architecture,
    compute_hiir,
    evaluate,
    forward_fixed,
    make_splits,
    op_distribution,
    synth_heterophilous,
    train,
    uniform_architecture,
)
from nodenas.autodiff import SparseMatrix
from nodenas.graphs import Graph
from nodenas.supernet import NodeArchitecture, slot_label


# ---------------------------------------------------------------------------
# Oracles
# ---------------------------------------------------------------------------

def oracle_replay_hiir(model, g, threshold=1e-12):
    """Per-node python-loop replay of the architecture on one-hot labels.

    Deliberately written with dense matrices and explicit branching per node
    so it shares no vectorization with compute_hiir.
    """
    arch = model.arch
    cfg = arch.config
    n = g.num_nodes
    y = np.zeros((n, g.num_classes))
    y[np.arange(n), g.labels] = 1.0
    h = y.copy()
    states = [h.copy()]
    for l in range(1, cfg.num_layers + 1):
        dense_e = model.edges[l - 1].densify()
        msg = dense_e @ h
        upd = arch.op_names(slot_label("update", l))
        res = arch.op_names(slot_label("residual", l))
        nxt = np.zeros_like(h)
        for u in range(n):
            if upd[u] == "EGO":
                agg = h[u]
            elif upd[u] == "NEIGHBOR":
                agg = msg[u]
            elif upd[u] == "SUM":
                agg = h[u] + msg[u]
            elif upd[u] == "MEAN":
                agg = (h[u] + msg[u]) / 2.0
            else:
                gam = model.frozen[("update_gamma", l)][u, 0]
                agg = gam * h[u] + (1.0 - gam) * msg[u]
            if res[u] == "RES":
                nxt[u] = h[u]
            elif res[u] == "AGG":
                nxt[u] = agg
            elif res[u] == "SUM":
                nxt[u] = h[u] + agg
            elif res[u] == "MEAN":
                nxt[u] = (h[u] + agg) / 2.0
            else:
                gam = model.frozen[("residual_gamma", l)][u, 0]
                nxt[u] = gam * h[u] + (1.0 - gam) * agg
        h = nxt
        states.append(h.copy())

    inter = arch.op_names(slot_label("inter"))
    out_ops = arch.op_names(slot_label("output"))
    ratios = np.full(n, np.nan)
    excluded = 0
    for u in range(n):
        if inter[u] == "SUM":
            gnn = sum(s[u] for s in states)
        elif inter[u] == "MEAN":
            gnn = sum(s[u] for s in states) / len(states)
        elif inter[u] == "NONSKIP":
            gnn = states[-1][u]
        else:
            gam = model.params["inter_gamma"].values[u]
            gnn = sum(gam[l] * states[l][u] for l in range(len(states)))
        if out_ops[u] == "MLP":
            z_u = y[u]
        elif out_ops[u] == "GNN":
            z_u = gnn
        elif out_ops[u] == "SUM":
            z_u = y[u] + gnn
        elif out_ops[u] == "MEAN":
            z_u = (y[u] + gnn) / 2.0
        else:
            gam = model.frozen[("output_gamma",)][u, 0]
            z_u = gam * y[u] + (1.0 - gam) * gnn
        z_hat = np.maximum(z_u, 0.0)
        mass = z_hat.sum()
        if mass < threshold:
            excluded += 1
        else:
            ratios[u] = z_hat[g.labels[u]] / mass
    good = ratios[~np.isnan(ratios)]
    mean = float(good.mean()) if good.size else float("nan")
    return mean, ratios, excluded


def oracle_binned_accuracy(per_node_h, correct, n_bins):
    """Loop-based equal-width binning of test-node correctness."""
    out = []
    for b in range(n_bins):
        lo, hi = b / n_bins, (b + 1) / n_bins
        hits = []
        for hv, ok in zip(per_node_h, correct):
            if np.isnan(hv):
                continue
            idx = min(int(hv * n_bins), n_bins - 1)
            if idx == b:
                hits.append(ok)
        out.append((lo, hi, len(hits),
                    float(np.mean(hits)) if hits else None))
    return out


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------

def graph_from_pairs(n, pairs, labels, feature_dim=4, seed=0):
    rng = np.random.default_rng(seed)
    rows, cols = [], []
    for u, v in pairs:
        rows += [u, v]
        cols += [v, u]
    adj = SparseMatrix.from_edges((n, n), np.array(rows, dtype=np.int64),
                                  np.array(cols, dtype=np.int64))
    feats = rng.normal(size=(n, feature_dim))
    return Graph(adj, feats, labels)


def tiny_split(n, seed=0):
    """Crude fixed split for graphs too small for stratified sampling."""
    idx = np.arange(n)
    k = max(1, n // 3)
    return Split(train=idx[:k], val=idx[k:2 * k], test=idx[2 * k:],
                 seed=seed, fractions=(0.33, 0.33, 0.34))


def quick_config(hidden=8, num_layers=2):
    return SupernetConfig(num_layers=num_layers, hidden=hidden)


def random_architecture(num_nodes, config, seed):
    rng = np.random.default_rng(seed)
    choices = {}
    for label in config.slot_labels():
        block = config.block_of_slot(label)
        k = len(config.candidates[block])
        choices[label] = rng.integers(0, k, size=num_nodes)
    return NodeArchitecture(config, num_nodes, choices)


class FakeModel:
    """Stands in for TrainedModel where only logits matter."""

    def __init__(self, logits):
        self._logits = np.asarray(logits, dtype=np.float64)

    def logits(self, g):
        return self._logits

    def predictions(self, g):
        return np.argmax(self._logits, axis=1)


def quick_problem(seed=0, n=48, c=3, h=0.6):
    g = synth_heterophilous(n, c, h, avg_degree=4.0, feature_dim=8, seed=seed)
    split = make_splits(g, n_splits=1, seed=seed)[0]
    return g, split


# ---------------------------------------------------------------------------
# Hand-worked h_iir cases
# ---------------------------------------------------------------------------

def test_hiir_sum_update_two_nodes_is_half():
    """One edge, opposite labels, SUM update: z_u = [1, 1] so ratio 0.5."""
    g = graph_from_pairs(2, [(0, 1)], labels=[0, 1])
    cfg = quick_config(num_layers=1)
    arch = uniform_architecture(2, cfg, selection="1N", attention="CONST",
                                update="SUM", residual="AGG",
                                inter="NONSKIP", output="GNN")
    model = train(arch, g, tiny_split(2), TrainConfig(epochs=0))
    rep = compute_hiir(model, g)
    assert rep.num_excluded == 0
    assert np.allclose(rep.per_node, 0.5)
    assert rep.h_iir == pytest.approx(0.5)


def test_hiir_pure_closed_neighborhoods_is_one():
    """Two label-pure triangles: neighbor aggregation keeps full purity."""
    pairs = [(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5)]
    g = graph_from_pairs(6, pairs, labels=[0, 0, 0, 1, 1, 1])
    cfg = quick_config(num_layers=1)
    arch = uniform_architecture(6, cfg, selection="1LOOPN", attention="CONST",
                                update="NEIGHBOR", residual="AGG",
                                inter="NONSKIP", output="GNN")
    model = train(arch, g, tiny_split(6), TrainConfig(epochs=0))
    rep = compute_hiir(model, g)
    assert rep.num_excluded == 0
    assert np.allclose(rep.per_node, 1.0)
    assert rep.h_iir == pytest.approx(1.0)


def test_hiir_identity_wiring_is_one():
    """Full residual skips plus output SUM give z = 2Y regardless of labels."""
    g = graph_from_pairs(4, [(0, 1), (1, 2), (2, 3)], labels=[0, 1, 0, 1])
    cfg = quick_config(num_layers=2)
    arch = uniform_architecture(4, cfg, selection="1N", attention="SYM_NORM",
                                update="NEIGHBOR", residual="RES",
                                inter="NONSKIP", output="SUM")
    model = train(arch, g, tiny_split(4), TrainConfig(epochs=0))
    rep = compute_hiir(model, g)
    assert rep.num_excluded == 0
    assert np.allclose(rep.per_node, 1.0)
    assert rep.h_iir == pytest.approx(1.0)


def test_hiir_isolated_node_with_neighbor_update_excluded():
    """A neighborless node under pure neighbor wiring has zero mass."""
    g = graph_from_pairs(3, [(0, 1)], labels=[0, 1, 0])
    cfg = quick_config(num_layers=1)
    arch = uniform_architecture(3, cfg, selection="1N", attention="CONST",
                                update="NEIGHBOR", residual="AGG",
                                inter="NONSKIP", output="GNN")
    model = train(arch, g, tiny_split(3), TrainConfig(epochs=0))
    rep = compute_hiir(model, g)
    assert rep.num_excluded == 1
    assert np.isnan(rep.per_node[2])
    # the two connected nodes see only the opposite class
    assert rep.per_node[0] == pytest.approx(0.0)
    assert rep.per_node[1] == pytest.approx(0.0)
    assert rep.h_iir == pytest.approx(0.0)


def test_hiir_in_unit_interval_and_excludes_count():
    g, split = quick_problem(seed=3, n=60, h=0.3)
    cfg = quick_config()
    arch = random_architecture(g.num_nodes, cfg, seed=7)
    model = train(arch, g, split, TrainConfig(epochs=3, seed=1))
    rep = compute_hiir(model, g)
    finite = rep.per_node[~np.isnan(rep.per_node)]
    assert finite.size + rep.num_excluded == g.num_nodes
    assert np.all(finite >= 0.0) and np.all(finite <= 1.0)
    if finite.size:
        assert 0.0 <= rep.h_iir <= 1.0


@pytest.mark.parametrize("seed", [0, 1, 2, 3])
def test_hiir_matches_bruteforce_oracle(seed):
    """Vectorized replay agrees with the per-node loop on random wirings."""
    g, split = quick_problem(seed=seed, n=40, h=0.4)
    cfg = quick_config(num_layers=2)
    arch = random_architecture(g.num_nodes, cfg, seed=seed + 100)
    model = train(arch, g, split, TrainConfig(epochs=4, seed=seed))
    rep = compute_hiir(model, g)
    mean, ratios, excluded = oracle_replay_hiir(model, g)
    assert rep.num_excluded == excluded
    both = ~(np.isnan(rep.per_node) | np.isnan(ratios))
    assert np.array_equal(np.isnan(rep.per_node), np.isnan(ratios))
    assert np.allclose(rep.per_node[both], ratios[both], atol=1e-10)
    if not np.isnan(mean):
        assert rep.h_iir == pytest.approx(mean, abs=1e-10)


def test_hiir_report_as_dict_handles_nan():
    g = graph_from_pairs(3, [(0, 1)], labels=[0, 1, 0])
    cfg = quick_config(num_layers=1)
    arch = uniform_architecture(3, cfg, selection="1N", attention="CONST",
                                update="NEIGHBOR", residual="AGG",
                                inter="NONSKIP", output="GNN")
    model = train(arch, g, tiny_split(3), TrainConfig(epochs=0))
    d = compute_hiir(model, g).as_dict()
    assert d["per_node"][2] is None
    assert d["num_excluded"] == 1


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

def test_train_mlp_fits_separable_data():
    g = synth_heterophilous(120, 3, 0.5, avg_degree=4.0, feature_dim=8,
                            seed=5, class_sep=3.0)
    split = make_splits(g, n_splits=1, seed=5)[0]
    arch = uniform_architecture(g.num_nodes, quick_config(hidden=16),
                                selection="1N", attention="CONST",
                                update="EGO", residual="RES",
                                inter="NONSKIP", output="MLP")
    model = train(arch, g, split, TrainConfig(epochs=400, patience=400,
                                              lr=0.01, weight_decay=0.0))
    assert evaluate(model, g, split.train) >= 0.99


def test_train_zero_epochs_returns_initialized_model():
    g, split = quick_problem(seed=1)
    cfg = quick_config()
    arch = uniform_architecture(g.num_nodes, cfg)
    model = train(arch, g, split, TrainConfig(epochs=0, seed=9))
    fresh = SupernetParams(cfg, g.num_features, g.num_classes, g.num_nodes,
                           seed=9)
    want = forward_fixed(arch, g, fresh, mode="eval").values
    assert np.array_equal(model.logits(g), want)
    assert model.best_epoch == -1
    assert model.trace == []


def test_train_keeps_best_validation_checkpoint():
    g, split = quick_problem(seed=2)
    arch = uniform_architecture(g.num_nodes, quick_config())
    model = train(arch, g, split, TrainConfig(epochs=40, patience=40, seed=0))
    from nodenas import cross_entropy_mean
    val = float(cross_entropy_mean(
        forward_fixed(model.arch, g, model.params, mode="eval"),
        g.labels, split.val).values[0, 0])
    best = min(r["val_loss"] for r in model.trace)
    assert val == best
    assert model.trace[model.best_epoch]["val_loss"] == best


def test_train_early_stopping_cuts_run_short():
    g, split = quick_problem(seed=4)
    arch = uniform_architecture(g.num_nodes, quick_config())
    patient = train(arch, g, split, TrainConfig(epochs=120, patience=120))
    impatient = train(arch, g, split, TrainConfig(epochs=120, patience=3))
    assert len(impatient.trace) <= len(patient.trace)
    assert len(impatient.trace) < 120  # stopped before the budget ran out


def test_train_same_seed_reproduces_accuracy():
    g, split = quick_problem(seed=6)
    arch = uniform_architecture(g.num_nodes, quick_config())
    cfgt = TrainConfig(epochs=25, seed=3)
    a = train(arch, g, split, cfgt)
    b = train(arch, g, split, cfgt)
    assert np.array_equal(a.logits(g), b.logits(g))
    assert evaluate(a, g, split.test) == evaluate(b, g, split.test)


@pytest.mark.filterwarnings("ignore:overflow:RuntimeWarning",
                            "ignore:invalid value:RuntimeWarning")
def test_train_divergence_aborts_with_trace():
    g, split = quick_problem(seed=7)
    arch = uniform_architecture(g.num_nodes, quick_config())
    with pytest.raises(TrainingDivergence) as info:
        train(arch, g, split, TrainConfig(epochs=50, lr=1e100,
                                          weight_decay=0.0))
    assert isinstance(info.value.trace, list)


def test_train_config_validation():
    with pytest.raises(ParameterError):
        TrainConfig(epochs=-1)
    with pytest.raises(ParameterError):
        TrainConfig(patience=0)
    with pytest.raises(ParameterError):
        TrainConfig(lr=0.0)
    with pytest.raises(ParameterError):
        TrainConfig(weight_decay=-0.1)


def test_trained_model_edges_follow_selection_choices():
    """Realized per-layer matrices use each node's chosen support row."""
    g, split = quick_problem(seed=8, n=30)
    cfg = quick_config(num_layers=1)
    rng = np.random.default_rng(0)
    choices = {}
    for label in cfg.slot_labels():
        block = cfg.block_of_slot(label)
        k = len(cfg.candidates[block])
        if block == "selection":
            choices[label] = rng.integers(0, k, size=g.num_nodes)
        elif block == "attention":
            choices[label] = np.full(g.num_nodes,
                                     cfg.candidates[block].index("SYM_NORM"),
                                     dtype=np.int64)
        else:
            choices[label] = np.zeros(g.num_nodes, dtype=np.int64)
    arch = NodeArchitecture(cfg, g.num_nodes, choices)
    model = train(arch, g, split, TrainConfig(epochs=2))
    e = model.edges[0]
    sel = arch.op_names(slot_label("selection", 1))
    for u in range(g.num_nodes):
        row = e.indices[e.indptr[u]:e.indptr[u + 1]]
        base = g.adjacency.indices[g.adjacency.indptr[u]:
                                   g.adjacency.indptr[u + 1]]
        want = sorted(base) if sel[u] == "1N" else sorted(list(base) + [u])
        assert list(row) == want


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------

def test_evaluate_matches_manual_argmax():
    g, split = quick_problem(seed=9)
    arch = uniform_architecture(g.num_nodes, quick_config())
    model = train(arch, g, split, TrainConfig(epochs=5))
    logits = model.logits(g)
    nodes = split.test
    want = np.mean(np.argmax(logits[nodes], axis=1) == g.labels[nodes])
    assert evaluate(model, g, nodes) == pytest.approx(float(want))


def test_evaluate_breaks_ties_toward_lowest_class():
    g = graph_from_pairs(4, [(0, 1), (2, 3)], labels=[1, 0, 1, 0])
    logits = np.zeros((4, 2))  # every row tied, argmax must pick class 0
    model = FakeModel(logits)
    acc = evaluate(model, g, np.arange(4))
    assert acc == pytest.approx(0.5)  # exactly the class-0 nodes


def test_evaluate_empty_node_set_rejected():
    g, split = quick_problem(seed=10)
    model = FakeModel(np.zeros((g.num_nodes, g.num_classes)))
    with pytest.raises(ParameterError):
        evaluate(model, g, np.array([], dtype=np.int64))


def test_evaluate_random_logits_near_chance():
    """Balanced 4-class labels scored against random logits sit near 0.25."""
    rng = np.random.default_rng(42)
    n = 1000
    labels = np.tile(np.arange(4), n // 4)
    pairs = [(i, i + 1) for i in range(0, n - 1, 2)]
    g = graph_from_pairs(n, pairs, labels=labels)
    model = FakeModel(rng.normal(size=(n, 4)))
    acc = evaluate(model, g, np.arange(n))
    assert 0.15 <= acc <= 0.35


# ---------------------------------------------------------------------------
# Homophily-binned accuracy
# ---------------------------------------------------------------------------

def test_binned_accuracy_single_bin_is_overall():
    g, split = quick_problem(seed=11)
    arch = uniform_architecture(g.num_nodes, quick_config())
    model = train(arch, g, split, TrainConfig(epochs=5))
    report = accuracy_by_homophily_bin(model, g, split, n_bins=1)
    assert len(report["bins"]) == 1
    assert report["bins"][0]["accuracy"] == pytest.approx(
        evaluate(model, g, split.test))
    assert report["bins"][0]["count"] == len(split.test)


def test_binned_accuracy_matches_loop_oracle():
    from nodenas import node_homophily
    g, split = quick_problem(seed=12, n=80, h=0.4)
    arch = uniform_architecture(g.num_nodes, quick_config())
    model = train(arch, g, split, TrainConfig(epochs=8))
    report = accuracy_by_homophily_bin(model, g, split, n_bins=4)
    per = node_homophily(g).per_node[split.test]
    correct = model.predictions(g)[split.test] == g.labels[split.test]
    want = oracle_binned_accuracy(per, correct, 4)
    for got, (lo, hi, count, acc) in zip(report["bins"], want):
        assert got["lo"] == pytest.approx(lo)
        assert got["hi"] == pytest.approx(hi)
        assert got["count"] == count
        if acc is None:
            assert got["accuracy"] is None
        else:
            assert got["accuracy"] == pytest.approx(acc)


def test_binned_accuracy_empty_bins_are_none_not_zero():
    """All-homophilous graph: every test node lands in the top bin."""
    g = synth_heterophilous(60, 3, 1.0, avg_degree=4.0, seed=13)
    split = make_splits(g, n_splits=1, seed=13)[0]
    model = FakeModel(g.onehot_labels())  # perfect classifier
    report = accuracy_by_homophily_bin(model, g, split, n_bins=5)
    assert report["bins"][-1]["count"] == len(split.test)
    for b in report["bins"][:-1]:
        assert b["count"] == 0
        assert b["accuracy"] is None
    assert report["bins"][-1]["accuracy"] == pytest.approx(1.0)


def test_binned_accuracy_skips_isolated_test_nodes():
    g = graph_from_pairs(5, [(0, 1), (1, 2), (2, 3)], labels=[0, 1, 0, 1, 0])
    split = Split(train=np.array([0]), val=np.array([1]),
                  test=np.array([2, 3, 4]), seed=0, fractions=(0.2, 0.2, 0.6))
    model = FakeModel(np.eye(5, 2))
    report = accuracy_by_homophily_bin(model, g, split, n_bins=2)
    assert report["skipped_isolated"] == 1  # node 4 has no neighbors
    assert sum(b["count"] for b in report["bins"]) == 2


def test_binned_accuracy_rejects_zero_bins():
    g, split = quick_problem(seed=14)
    model = FakeModel(np.zeros((g.num_nodes, g.num_classes)))
    with pytest.raises(ParameterError):
        accuracy_by_homophily_bin(model, g, split, n_bins=0)


# ---------------------------------------------------------------------------
# Operation histograms and summary tables
# ---------------------------------------------------------------------------

def test_op_distribution_hand_example():
    cfg = quick_config(num_layers=1)
    choices = {}
    for label in cfg.slot_labels():
        block = cfg.block_of_slot(label)
        choices[label] = np.zeros(3, dtype=np.int64)
    choices["L1_O_se"] = np.array([0, 1, 0])  # two 1N, one 1LOOPN
    arch = NodeArchitecture(cfg, 3, choices)
    dist = op_distribution(arch)
    assert dist["L1_O_se"] == {"1N": 2, "1LOOPN": 1}


def test_op_distribution_counts_sum_to_num_nodes():
    cfg = quick_config()
    arch = random_architecture(25, cfg, seed=3)
    dist = op_distribution(arch)
    assert set(dist) == set(cfg.slot_labels())
    for label, hist in dist.items():
        assert sum(hist.values()) == 25
        block = cfg.block_of_slot(label)
        assert set(hist) == set(cfg.candidates[block])


def test_metrics_table_mean_and_population_std():
    accs = [0.8, 0.9, 0.7, 0.85]
    table = MetricsTable.from_accuracies(accs, dataset="synthetic")
    assert table.mean == pytest.approx(np.mean(accs))
    assert table.std == pytest.approx(np.std(accs))
    d = table.as_dict()
    assert d["dataset"] == "synthetic"
    assert d["accuracies"] == accs


def test_metrics_table_rejects_empty():
    with pytest.raises(ParameterError):
        MetricsTable.from_accuracies([])


def test_bare_architectures_shape():
    for kind, op in (("sum", "SUM"), ("mean", "MEAN")):
        arch = bare_architecture(10, kind=kind, hidden=12)
        assert arch.config.num_layers == 3
        for l in (1, 2, 3):
            assert set(arch.op_names(slot_label("update", l))) == {op}
            assert set(arch.op_names(slot_label("attention", l))) == {"CONST"}
    with pytest.raises(ParameterError):
        bare_architecture(10, kind="max")
