"""Seven-block graph network executable with per-node operation choices.

A network instance is organized in four levels. At the neighbor level each
layer first selects which neighbors a node listens to (with or without its
self-loop) and then weights those edges with one of four attention
functions, two of which can emit negative weights. At the message level the
weighted neighbor features are added up and combined with the node's own
features by an update rule, followed by a shared linear transform and relu.
At the layer level a residual merge decides how much of the previous
representation survives, and an inter-merge combines the per-layer
representations (including the transformed input) into one GNN branch. At
the network level a two-layer MLP branch that never touches the adjacency
is merged with the GNN branch, and a linear classifier produces logits.

Every block choice is made per node. forward_fixed runs the network for a
concrete NodeArchitecture; forward_weighted runs the same computation with
arbitrary per-node soft weights over the candidates of every block, which
is what differentiable search uses. Both paths share the block evaluators
below, so a one-hot weighting reproduces the fixed forward exactly.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterError, ShapeError, SparseMatrix, Tensor

BLOCK_CATALOG = {
    "selection": ("1N", "1LOOPN"),
    "attention": ("CONST", "SYM_NORM", "GATE_FILTER", "SIGNED"),
    "aggregation": ("ADD",),
    "update": ("EGO", "NEIGHBOR", "SUM", "MEAN", "ATT"),
    "residual": ("RES", "AGG", "SUM", "MEAN", "ATT"),
    "inter": ("SUM", "MEAN", "LEARN_ATT", "NONSKIP"),
    "output": ("MLP", "GNN", "SUM", "MEAN", "ATT"),
}

_SLOT_SHORT = {"selection": "se", "attention": "att", "update": "update",
               "residual": "rm", "inter": "im", "output": "om"}

# blocks that pick one operation per node and layer
LAYER_BLOCKS = ("selection", "attention", "update", "residual")
# blocks picked once per node for the whole network
NETWORK_BLOCKS = ("inter", "output")


def slot_label(block, layer=None):
    """Canonical name of a block slot, e.g. L1_O_se or O_im."""
    if block in NETWORK_BLOCKS:
        return f"O_{_SLOT_SHORT[block]}"
    if layer is None:
        raise ParameterError(f"block {block!r} needs a layer index")
    return f"L{layer}_O_{_SLOT_SHORT[block]}"


@dataclass
class SupernetConfig:
    """Structural hyperparameters: depth, width, and candidate lists."""

    num_layers: int = 2
    hidden: int = 64
    dropout: float = 0.0
    candidates: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.num_layers < 1:
            raise ParameterError("num_layers must be at least 1")
        if self.hidden < 1:
            raise ParameterError("hidden width must be at least 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ParameterError(f"dropout must be in [0, 1), got {self.dropout}")
        cands = {}
        for block, default in BLOCK_CATALOG.items():
            chosen = tuple(self.candidates.get(block, default))
            if not chosen:
                raise ParameterError(f"candidate list for {block} is empty")
            unknown = [op for op in chosen if op not in default]
            if unknown:
                raise ParameterError(
                    f"unknown {block} operation(s) {unknown}; valid: {default}")
            if len(set(chosen)) != len(chosen):
                raise ParameterError(f"duplicate candidates in {block}: {chosen}")
            cands[block] = chosen
        if cands["aggregation"] != ("ADD",):
            raise ParameterError("the aggregation block supports exactly ADD")
        self.candidates = cands

    def slot_labels(self):
        labels = []
        for l in range(1, self.num_layers + 1):
            for block in LAYER_BLOCKS:
                labels.append(slot_label(block, l))
        for block in NETWORK_BLOCKS:
            labels.append(slot_label(block))
        return labels

    def block_of_slot(self, label):
        for block in LAYER_BLOCKS + NETWORK_BLOCKS:
            short = f"_O_{_SLOT_SHORT[block]}"
            if label.endswith(short) or label == f"O_{_SLOT_SHORT[block]}":
                return block
        raise ParameterError(f"unknown slot label {label!r}")

    def as_dict(self):
        return {"num_layers": self.num_layers, "hidden": self.hidden,
                "dropout": self.dropout, "aggregation": "ADD",
                "candidates": {b: list(ops) for b, ops in self.candidates.items()
                               if b != "aggregation"}}

    @classmethod
    def from_dict(cls, d):
        return cls(num_layers=int(d["num_layers"]), hidden=int(d["hidden"]),
                   dropout=float(d.get("dropout", 0.0)),
                   candidates={b: tuple(ops)
                               for b, ops in d.get("candidates", {}).items()})

    def structural_signature(self):
        """The part of the config an architecture must agree on."""
        return (self.num_layers,
                tuple((b, self.candidates[b])
                      for b in LAYER_BLOCKS + NETWORK_BLOCKS))


class NodeArchitecture:
    """Discrete per-node operation choices for every searchable slot."""

    def __init__(self, config, num_nodes, choices):
        self.config = config
        self.num_nodes = int(num_nodes)
        expected = set(config.slot_labels())
        got = set(choices)
        if expected != got:
            raise ParameterError(
                f"architecture slots {sorted(got)} do not match the config's "
                f"{sorted(expected)}")
        self.choices = {}
        for label, idx in choices.items():
            idx = np.asarray(idx, dtype=np.int64).reshape(-1)
            if idx.shape[0] != self.num_nodes:
                raise ShapeError(
                    f"slot {label}: {idx.shape[0]} choices for {num_nodes} nodes")
            block = config.block_of_slot(label)
            k = len(config.candidates[block])
            if idx.size and (idx.min() < 0 or idx.max() >= k):
                raise ParameterError(
                    f"slot {label}: choice index out of range [0, {k})")
            self.choices[label] = idx

    def op_names(self, label):
        block = self.config.block_of_slot(label)
        cands = self.config.candidates[block]
        return [cands[i] for i in self.choices[label]]

    def compatible_with(self, config, num_nodes):
        if num_nodes != self.num_nodes:
            raise ParameterError(
                f"architecture is for {self.num_nodes} nodes, graph has {num_nodes}")
        if config.structural_signature() != self.config.structural_signature():
            raise ParameterError(
                "architecture and config disagree on layers or candidate lists")

    def as_dict(self):
        return {"format": "node-architecture/v1",
                "num_nodes": self.num_nodes,
                "config": self.config.as_dict(),
                "blocks": {label: self.op_names(label)
                           for label in self.config.slot_labels()}}

    def to_json(self):
        return json.dumps(self.as_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d):
        config = SupernetConfig.from_dict(d["config"])
        n = int(d["num_nodes"])
        choices = {}
        for label, names in d["blocks"].items():
            block = config.block_of_slot(label)
            lookup = {op: i for i, op in enumerate(config.candidates[block])}
            try:
                choices[label] = np.array([lookup[nm] for nm in names], dtype=np.int64)
            except KeyError as exc:
                raise ParameterError(
                    f"slot {label} names an unknown operation {exc}") from None
        return cls(config, n, choices)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    def __eq__(self, other):
        if not isinstance(other, NodeArchitecture):
            return NotImplemented
        return (self.num_nodes == other.num_nodes
                and self.config.as_dict() == other.config.as_dict()
                and all(np.array_equal(self.choices[k], other.choices[k])
                        for k in self.choices))


def uniform_architecture(num_nodes, config, selection="1LOOPN",
                         attention="SYM_NORM", update="NEIGHBOR",
                         residual="AGG", inter="NONSKIP", output="GNN"):
    """Same operation for every node; defaults recover a plain GCN."""
    wanted = {"selection": selection, "attention": attention, "update": update,
              "residual": residual, "inter": inter, "output": output}
    choices = {}
    for block, op in wanted.items():
        cands = config.candidates[block]
        if op not in cands:
            raise ParameterError(f"{op!r} is not a {block} candidate {cands}")
        idx = np.full(num_nodes, cands.index(op), dtype=np.int64)
        if block in NETWORK_BLOCKS:
            choices[slot_label(block)] = idx
        else:
            for l in range(1, config.num_layers + 1):
                choices[slot_label(block, l)] = idx.copy()
    return NodeArchitecture(config, num_nodes, choices)


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------

def _glorot(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class SupernetParams:
    """All learnable weights of one supernet instance.

    Linear maps are bias-free. Parameters are created in a fixed order from
    one seeded generator, so identical seeds give identical models. The
    inter-merge LEARN_ATT coefficients are per node (|V| x (L+1)); everything
    else is independent of the graph size.
    """

    def __init__(self, config, num_features, num_classes, num_nodes, seed=0):
        self.config = config
        self.num_features = int(num_features)
        self.num_classes = int(num_classes)
        self.num_nodes = int(num_nodes)
        rng = np.random.default_rng(seed)
        d, f, c, n = config.hidden, self.num_features, self.num_classes, self.num_nodes
        layers = config.num_layers

        arrays = {"w_in": _glorot(rng, f, d)}
        for l in range(1, layers + 1):
            arrays[f"layer{l}.w"] = _glorot(rng, d, d)
            arrays[f"layer{l}.gate_src"] = _glorot(rng, d, 1)
            arrays[f"layer{l}.gate_dst"] = _glorot(rng, d, 1)
            arrays[f"layer{l}.signed_scale"] = np.ones((1, 1))
            arrays[f"layer{l}.update_gate"] = _glorot(rng, 2 * d, 1)
            arrays[f"layer{l}.residual_gate"] = _glorot(rng, 2 * d, 1)
        arrays["inter_gamma"] = np.full((n, layers + 1), 1.0 / (layers + 1))
        arrays["output_gate"] = _glorot(rng, 2 * d, 1)
        arrays["mlp.w1"] = _glorot(rng, f, d)
        arrays["mlp.w2"] = _glorot(rng, d, d)
        arrays["classifier"] = _glorot(rng, d, c)
        self._params = {k: Tensor(v, requires_grad=True) for k, v in arrays.items()}

    def __getitem__(self, name):
        return self._params[name]

    def names(self):
        return list(self._params)

    def tensors(self):
        return list(self._params.values())

    def count(self):
        return sum(t.values.size for t in self._params.values())

    def zero_grad(self):
        for t in self._params.values():
            t.grad = None

    def state_dict(self):
        return {k: np.array(t.values) for k, t in self._params.items()}

    def load_state(self, state):
        if set(state) != set(self._params):
            raise ParameterError("state dict names do not match this model")
        for k, t in self._params.items():
            if state[k].shape != t.values.shape:
                raise ShapeError(f"state {k} has shape {state[k].shape}, "
                                 f"expected {t.values.shape}")
            t.values = np.array(state[k])


# ---------------------------------------------------------------------------
# Block evaluators (shared by the fixed and the soft-weighted forward)
# ---------------------------------------------------------------------------

def _selection_supports(g, sel_candidates):
    """Sparse 0/1 support per selection op; 1LOOPN adds the diagonal."""
    out = {}
    for op in sel_candidates:
        if op == "1N":
            out[op] = g.adjacency
        elif op == "1LOOPN":
            n = g.num_nodes
            rows = np.concatenate([g.adjacency.row_of_entry(), np.arange(n)])
            cols = np.concatenate([g.adjacency.indices, np.arange(n)])
            out[op] = SparseMatrix.from_edges((n, n), rows, cols)
        else:
            raise ParameterError(f"unknown selection operation {op!r}")
    return out


def _edge_matrix(att_op, support, h, params, layer):
    """Attention-weighted copy of the support for one (selection, attention) pair."""
    rows = support.row_of_entry()
    cols = support.indices
    if att_op == "CONST":
        return support
    if att_op == "SYM_NORM":
        deg = np.maximum(np.diff(support.indptr), 1)
        w = 1.0 / np.sqrt(deg[rows] * deg[cols])
        return support.with_values(Tensor(w.reshape(-1, 1)))
    if att_op == "GATE_FILTER":
        p = ad.dense_matmul(h, params[f"layer{layer}.gate_src"])
        q = ad.dense_matmul(h, params[f"layer{layer}.gate_dst"])
        vals = ad.tanh(ad.add(ad.gather_rows(p, rows), ad.gather_rows(q, cols)))
        return support.with_values(vals)
    if att_op == "SIGNED":
        norm = ad.sqrt(ad.add_scalar(ad.row_sum(ad.mul(h, h)), 1e-24))
        dots = ad.row_sum(ad.mul(ad.gather_rows(h, rows), ad.gather_rows(h, cols)))
        denom = ad.mul(ad.gather_rows(norm, rows), ad.gather_rows(norm, cols))
        cosine = ad.div(dots, denom)
        return support.with_values(
            ad.scalar_scale(cosine, ad.tanh(params[f"layer{layer}.signed_scale"])))
    raise ParameterError(f"unknown attention operation {att_op!r}")


def _surely_zero(t):
    """True for a constant tensor that is identically zero (safe to skip)."""
    return not t.requires_grad and not np.any(t.values)


def _att_combine(x1, x2, gate):
    """gamma * x1 + (1 - gamma) * x2 with gamma = sigmoid([x1 || x2] gate)."""
    gamma = ad.sigmoid(ad.dense_matmul(ad.concat_cols([x1, x2]), gate))
    return ad.add(ad.row_scale(ad.sub(x1, x2), gamma), x2), gamma


def _mixed_messages(g, h, params, layer, w_sel, w_att, supports, config, collect):
    """Soft-weighted neighbor aggregation over all (selection, attention) pairs."""
    sel_ops = config.candidates["selection"]
    att_ops = config.candidates["attention"]
    total = None
    for si, sop in enumerate(sel_ops):
        ws = ad.col_slice(w_sel, si)
        if _surely_zero(ws):
            continue
        for ai, aop in enumerate(att_ops):
            wa = ad.col_slice(w_att, ai)
            if _surely_zero(wa):
                continue
            weight = ad.mul(ws, wa)
            if _surely_zero(weight):
                continue
            e = _edge_matrix(aop, supports[sop], h, params, layer)
            if collect is not None:
                collect.setdefault(("edges", layer), {})[(sop, aop)] = e
            m = ad.row_scale(ad.sparse_dense_matmul(e, h), weight)
            total = m if total is None else ad.add(total, m)
    if total is None:
        raise ParameterError("all selection/attention weights are zero")
    return total


def _update_mixture(h_prev, m, params, layer, w, config, collect):
    ops = config.candidates["update"]
    w_l = params[f"layer{layer}.w"]
    total = None
    for i, op in enumerate(ops):
        wc = ad.col_slice(w, i)
        if _surely_zero(wc):
            continue
        if op == "EGO":
            x = h_prev
        elif op == "NEIGHBOR":
            x = m
        elif op == "SUM":
            x = ad.add(h_prev, m)
        elif op == "MEAN":
            x = ad.scale(ad.add(h_prev, m), 0.5)
        elif op == "ATT":
            x, gamma = _att_combine(h_prev, m, params[f"layer{layer}.update_gate"])
            if collect is not None:
                collect[("update_gamma", layer)] = np.array(gamma.values)
        else:
            raise ParameterError(f"unknown update operation {op!r}")
        y = ad.relu(ad.dense_matmul(x, w_l))
        term = ad.row_scale(y, wc)
        total = term if total is None else ad.add(total, term)
    if total is None:
        raise ParameterError("all update weights are zero")
    return total


def _residual_mixture(h_prev, h_agg, params, layer, w, config, collect):
    ops = config.candidates["residual"]
    total = None
    for i, op in enumerate(ops):
        wc = ad.col_slice(w, i)
        if _surely_zero(wc):
            continue
        if op == "RES":
            x = h_prev
        elif op == "AGG":
            x = h_agg
        elif op == "SUM":
            x = ad.add(h_prev, h_agg)
        elif op == "MEAN":
            x = ad.scale(ad.add(h_prev, h_agg), 0.5)
        elif op == "ATT":
            x, gamma = _att_combine(h_prev, h_agg,
                                    params[f"layer{layer}.residual_gate"])
            if collect is not None:
                collect[("residual_gamma", layer)] = np.array(gamma.values)
        else:
            raise ParameterError(f"unknown residual operation {op!r}")
        term = ad.row_scale(x, wc)
        total = term if total is None else ad.add(total, term)
    if total is None:
        raise ParameterError("all residual weights are zero")
    return total


def _inter_mixture(states, params, w, config):
    if len(states) < 2:
        raise ParameterError("inter-merge needs at least two layer states")
    ops = config.candidates["inter"]
    total = None
    for i, op in enumerate(ops):
        wc = ad.col_slice(w, i)
        if _surely_zero(wc):
            continue
        if op == "SUM":
            x = states[0]
            for s in states[1:]:
                x = ad.add(x, s)
        elif op == "MEAN":
            x = states[0]
            for s in states[1:]:
                x = ad.add(x, s)
            x = ad.scale(x, 1.0 / len(states))
        elif op == "LEARN_ATT":
            gamma = params["inter_gamma"]
            x = None
            for l, s in enumerate(states):
                term = ad.row_scale(s, ad.col_slice(gamma, l))
                x = term if x is None else ad.add(x, term)
        elif op == "NONSKIP":
            x = states[-1]
        else:
            raise ParameterError(f"unknown inter-merge operation {op!r}")
        term = ad.row_scale(x, wc)
        total = term if total is None else ad.add(total, term)
    if total is None:
        raise ParameterError("all inter-merge weights are zero")
    return total


def _output_mixture(h_mlp, h_gnn, params, w, config, collect):
    ops = config.candidates["output"]
    total = None
    for i, op in enumerate(ops):
        wc = ad.col_slice(w, i)
        if _surely_zero(wc):
            continue
        if op == "MLP":
            x = h_mlp
        elif op == "GNN":
            x = h_gnn
        elif op == "SUM":
            x = ad.add(h_mlp, h_gnn)
        elif op == "MEAN":
            x = ad.scale(ad.add(h_mlp, h_gnn), 0.5)
        elif op == "ATT":
            x, gamma = _att_combine(h_mlp, h_gnn, params["output_gate"])
            if collect is not None:
                collect[("output_gamma",)] = np.array(gamma.values)
        else:
            raise ParameterError(f"unknown output-merge operation {op!r}")
        term = ad.row_scale(x, wc)
        total = term if total is None else ad.add(total, term)
    if total is None:
        raise ParameterError("all output-merge weights are zero")
    return total


def _mlp_branch(x, params):
    return ad.relu(ad.dense_matmul(ad.relu(ad.dense_matmul(x, params["mlp.w1"])),
                                   params["mlp.w2"]))


# ---------------------------------------------------------------------------
# Forward passes
# ---------------------------------------------------------------------------

def forward_weighted(g, params, weight_fn, mode="eval", rng=None, collect=None):
    """Run the supernet with per-node soft weights over every block's candidates.

    weight_fn(block, layer, inputs) must return a (|V|, k) tensor of weights
    over the block's k candidates; inputs is the list of tensors the block
    consumes (which is also what architecture predictors read). One-hot
    weights reproduce forward_fixed exactly. In train mode, dropout from the
    config is applied to the input features and the pre-classifier features.
    """
    if mode not in ("train", "eval"):
        raise ParameterError(f"mode must be 'train' or 'eval', got {mode!r}")
    config = params.config
    if g.num_nodes != params.num_nodes:
        raise ParameterError(
            f"params were sized for {params.num_nodes} nodes, graph has {g.num_nodes}")
    if g.num_features != params.num_features:
        raise ParameterError(
            f"params expect {params.num_features} features, graph has {g.num_features}")
    drop = config.dropout if mode == "train" else 0.0
    if drop and rng is None:
        raise ParameterError("training-mode dropout needs an rng")

    x = g.features
    if drop:
        x = ad.dropout(x, drop, rng)
    supports = _selection_supports(g, config.candidates["selection"])

    def weights_for(block, layer, inputs):
        w = weight_fn(block, layer, inputs)
        k = len(config.candidates[block])
        if w.shape != (g.num_nodes, k):
            raise ShapeError(f"weights for {slot_label(block, layer)} must be "
                             f"({g.num_nodes}, {k}), got {w.shape}")
        return w

    h = ad.relu(ad.dense_matmul(x, params["w_in"]))
    states = [h]
    for l in range(1, config.num_layers + 1):
        w_sel = weights_for("selection", l, [h])
        w_att = weights_for("attention", l, [h])
        m = _mixed_messages(g, h, params, l, w_sel, w_att, supports, config, collect)
        w_upd = weights_for("update", l, [h, m])
        h_agg = _update_mixture(h, m, params, l, w_upd, config, collect)
        w_res = weights_for("residual", l, [h, h_agg])
        h = _residual_mixture(h, h_agg, params, l, w_res, config, collect)
        states.append(h)

    w_im = weights_for("inter", None, [states[0], states[-1]])
    h_gnn = _inter_mixture(states, params, w_im, config)
    h_mlp = _mlp_branch(x, params)
    w_om = weights_for("output", None, [h_mlp, h_gnn])
    h_final = _output_mixture(h_mlp, h_gnn, params, w_om, config, collect)
    if drop:
        h_final = ad.dropout(h_final, drop, rng)
    logits = ad.dense_matmul(h_final, params["classifier"])

    if collect is not None:
        collect["states"] = [np.array(s.values) for s in states]
        collect["h_mlp"] = np.array(h_mlp.values)
        collect["h_gnn"] = np.array(h_gnn.values)
        collect["logits"] = np.array(logits.values)
    return logits


def one_hot_weights(arch, config):
    """Constant one-hot weight tensors per slot label for a fixed architecture."""
    out = {}
    for label, idx in arch.choices.items():
        block = config.block_of_slot(label)
        k = len(config.candidates[block])
        w = np.zeros((arch.num_nodes, k))
        w[np.arange(arch.num_nodes), idx] = 1.0
        out[label] = Tensor(w)
    return out


def forward_fixed(arch, g, params, mode="eval", rng=None, collect=None):
    """Run the supernet under concrete per-node choices.

    Candidates no node picked are skipped entirely, so the cost matches a
    hand-written network for the same architecture. Deterministic in eval
    mode (dropout only applies in train mode).
    """
    arch.compatible_with(params.config, g.num_nodes)
    onehots = one_hot_weights(arch, params.config)

    def weight_fn(block, layer, inputs):
        return onehots[slot_label(block, layer)]

    return forward_weighted(g, params, weight_fn, mode=mode, rng=rng,
                            collect=collect)


def realized_edges(arch, g, params):
    """Per-layer realized edge weights under a fixed architecture.

    Returns one SparseMatrix per layer whose row u is the support row of u's
    chosen selection op weighted by u's chosen attention op, evaluated on the
    trained representations (eval mode, no tape). This is the per-layer e
    matrix a trained model freezes for later analysis.
    """
    collect = {}
    forward_fixed(arch, g, params, mode="eval", collect=collect)
    config = params.config
    out = []
    for l in range(1, config.num_layers + 1):
        per_combo = collect[("edges", l)]
        sel_names = np.array(arch.op_names(slot_label("selection", l)))
        att_names = np.array(arch.op_names(slot_label("attention", l)))
        rows_acc, cols_acc, vals_acc = [], [], []
        for (sop, aop), e in per_combo.items():
            mask = (sel_names == sop) & (att_names == aop)
            if not mask.any():
                continue
            erows = e.row_of_entry()
            keep = mask[erows]
            rows_acc.append(erows[keep])
            cols_acc.append(e.indices[keep])
            vals_acc.append(e.values.values[keep, 0])
        rows = np.concatenate(rows_acc) if rows_acc else np.zeros(0, dtype=np.int64)
        cols = np.concatenate(cols_acc) if cols_acc else np.zeros(0, dtype=np.int64)
        vals = np.concatenate(vals_acc) if vals_acc else np.zeros(0)
        out.append(SparseMatrix.from_edges((g.num_nodes, g.num_nodes),
                                           rows, cols, vals))
    return out
