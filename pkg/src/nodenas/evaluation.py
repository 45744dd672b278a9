"""Retraining and analysis of derived architectures.

train() fits a fixed per-node architecture from scratch with Adam and early
stopping on the validation loss, returning the best-validation checkpoint
together with the frozen quantities later analysis needs: the realized
per-layer edge weight matrices and the attention-combine coefficients the
trained model produced in evaluation mode.

compute_hiir() measures how much intra-class signal the trained wiring
extracts: it replays the architecture's block structure on the one-hot
label matrix with every learned dense transform (input map, layer weights,
MLP branch, relu) replaced by the identity, keeping the frozen edge weights
and combine coefficients. For each node the ratio of its own-class mass to
its total nonnegative mass is averaged over nodes with any mass at all.

The rest is bookkeeping: plain accuracy, accuracy split by per-node
homophily bins, per-block operation histograms, and a small table type for
mean/std summaries across splits.
"""

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import (Adam, NumericsError, ParameterError, Tape,
                       backward_all)
from .graphs import node_homophily
from .supernet import (NodeArchitecture, SupernetConfig, SupernetParams,
                       forward_fixed, realized_edges, slot_label,
                       uniform_architecture)


class TrainingDivergence(ArithmeticError):
    """Training hit a non-finite loss; .trace holds the epochs completed."""

    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


@dataclass
class TrainConfig:
    """Hyperparameters for retraining a fixed architecture."""

    epochs: int = 1000
    patience: int = 100
    lr: float = 0.01
    weight_decay: float = 5e-4
    hidden: int = None
    dropout: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ParameterError("epochs must be nonnegative")
        if self.patience < 1:
            raise ParameterError("patience must be at least 1")
        if self.lr <= 0:
            raise ParameterError("learning rate must be positive")
        if self.weight_decay < 0:
            raise ParameterError("weight decay must be nonnegative")


class TrainedModel:
    """A fixed architecture with its learned weights and frozen edge state.

    edges holds one realized sparse edge-weight matrix per layer (row u is
    node u's selected support weighted by its attention choice, evaluated on
    the trained representations). frozen holds the attention-combine
    coefficients observed in the final evaluation-mode forward.
    """

    def __init__(self, arch, params, trace, best_epoch, edges, frozen):
        self.arch = arch
        self.params = params
        self.trace = trace
        self.best_epoch = best_epoch
        self.edges = edges
        self.frozen = frozen

    def logits(self, g):
        return forward_fixed(self.arch, g, self.params, mode="eval").values

    def predictions(self, g):
        return np.argmax(self.logits(g), axis=1)


def train(arch, g, split, config=None):
    """Fit the architecture's weights; keep the best-validation checkpoint.

    A zero-epoch budget returns the freshly initialized model. A non-finite
    loss aborts with TrainingDivergence carrying the loss trace so far.
    """
    config = config or TrainConfig()
    run_cfg = SupernetConfig(num_layers=arch.config.num_layers,
                             hidden=config.hidden or arch.config.hidden,
                             dropout=config.dropout,
                             candidates=arch.config.candidates)
    arch.compatible_with(run_cfg, g.num_nodes)
    params = SupernetParams(run_cfg, g.num_features, g.num_classes,
                            g.num_nodes, seed=config.seed)
    # rebind the choices to the config actually being trained under
    run_arch = arch
    if arch.config.as_dict() != run_cfg.as_dict():
        run_arch = NodeArchitecture(run_cfg, arch.num_nodes,
                                    {k: v.copy() for k, v in arch.choices.items()})

    opt = Adam(params.tensors(), config.lr, weight_decay=config.weight_decay)
    rng = np.random.default_rng(config.seed + 1)

    best_val = np.inf
    best_state = params.state_dict()
    best_epoch = -1
    since_best = 0
    trace = []
    try:
        for epoch in range(config.epochs):
            with Tape() as tape:
                logits = forward_fixed(run_arch, g, params, mode="train",
                                       rng=rng)
                loss = ad.cross_entropy_mean(logits, g.labels, split.train)
            params.zero_grad()
            backward_all(loss, tape)
            opt.step()

            val_logits = forward_fixed(run_arch, g, params, mode="eval")
            val_loss = float(ad.cross_entropy_mean(
                val_logits, g.labels, split.val).values[0, 0])
            trace.append({"epoch": epoch,
                          "train_loss": float(loss.values[0, 0]),
                          "val_loss": val_loss})
            if val_loss < best_val:
                best_val = val_loss
                best_state = params.state_dict()
                best_epoch = epoch
                since_best = 0
            else:
                since_best += 1
                if since_best >= config.patience:
                    break
    except NumericsError as exc:
        raise TrainingDivergence(
            f"training diverged after {len(trace)} epoch(s): {exc}",
            trace) from exc

    params.load_state(best_state)
    collect = {}
    forward_fixed(run_arch, g, params, mode="eval", collect=collect)
    edges = realized_edges(run_arch, g, params)
    frozen = {k: v for k, v in collect.items()
              if isinstance(k, tuple) and k[0].endswith("_gamma")}
    return TrainedModel(run_arch, params, trace, best_epoch, edges, frozen)


def evaluate(model, g, node_set):
    """Fraction of node_set whose argmax logit matches the label."""
    node_set = np.asarray(node_set, dtype=np.int64).reshape(-1)
    if node_set.size == 0:
        raise ParameterError("cannot evaluate on an empty node set")
    pred = model.predictions(g)
    return float(np.mean(pred[node_set] == g.labels[node_set]))


# ---------------------------------------------------------------------------
# Intra-class information ratio
# ---------------------------------------------------------------------------

@dataclass
class HiirReport:
    """Label-replay result: mean ratio, per-node ratios, exclusion count."""

    h_iir: float
    per_node: np.ndarray
    num_excluded: int

    def as_dict(self):
        return {"h_iir": None if np.isnan(self.h_iir) else self.h_iir,
                "num_excluded": self.num_excluded,
                "per_node": [None if np.isnan(v) else v for v in self.per_node]}


def _combine_rows(op_names, first, second, gamma):
    """Per-node combine where each row picks its own operation.

    first is the op family's "keep the first input" result (EGO/RES/MLP) and
    second the "keep the second input" one (NEIGHBOR/AGG/GNN); SUM, MEAN and
    ATT (with frozen per-node gamma) blend the two.
    """
    names = np.asarray(op_names)
    out = np.empty_like(first)
    for op in np.unique(names):
        m = names == op
        if op in ("EGO", "RES", "MLP"):
            out[m] = first[m]
        elif op in ("NEIGHBOR", "AGG", "GNN", "NONSKIP"):
            out[m] = second[m]
        elif op == "SUM":
            out[m] = first[m] + second[m]
        elif op == "MEAN":
            out[m] = 0.5 * (first[m] + second[m])
        elif op == "ATT":
            if gamma is None:
                raise ParameterError("ATT chosen but no frozen gamma recorded")
            out[m] = gamma[m] * first[m] + (1.0 - gamma[m]) * second[m]
        else:
            raise ParameterError(f"unexpected operation {op!r} in replay")
    return out


def compute_hiir(model, g, threshold=1e-12):
    """Replay the trained wiring on one-hot labels and score class purity.

    All dense transforms and nonlinearities act as the identity; only the
    frozen edge weights, the frozen combine coefficients, and the per-node
    operation choices shape the result. Nodes whose clamped mass sums below
    the threshold are excluded and counted.
    """
    arch = model.arch
    config = arch.config
    y = g.onehot_labels()
    h = y
    states = [h]
    for l in range(1, config.num_layers + 1):
        msg = model.edges[l - 1]._scipy() @ h
        h_agg = _combine_rows(arch.op_names(slot_label("update", l)), h, msg,
                              model.frozen.get(("update_gamma", l)))
        h = _combine_rows(arch.op_names(slot_label("residual", l)), h, h_agg,
                          model.frozen.get(("residual_gamma", l)))
        states.append(h)

    inter_names = np.asarray(arch.op_names(slot_label("inter")))
    stack = np.stack(states)  # (L+1, n, C)
    h_gnn = np.empty_like(h)
    for op in np.unique(inter_names):
        m = inter_names == op
        if op == "SUM":
            h_gnn[m] = stack[:, m].sum(axis=0)
        elif op == "MEAN":
            h_gnn[m] = stack[:, m].mean(axis=0)
        elif op == "NONSKIP":
            h_gnn[m] = states[-1][m]
        elif op == "LEARN_ATT":
            gammas = model.params["inter_gamma"].values  # (n, L+1), frozen
            h_gnn[m] = np.einsum("lkc,kl->kc", stack[:, m], gammas[m])
        else:
            raise ParameterError(f"unexpected inter-merge {op!r} in replay")

    z = _combine_rows(arch.op_names(slot_label("output")), y, h_gnn,
                      model.frozen.get(("output_gamma",)))
    z_hat = np.maximum(z, 0.0)
    mass = z_hat.sum(axis=1)
    included = mass >= threshold
    per_node = np.full(g.num_nodes, np.nan)
    idx = np.where(included)[0]
    per_node[idx] = z_hat[idx, g.labels[idx]] / mass[idx]
    h_iir = float(per_node[idx].mean()) if idx.size else float("nan")
    return HiirReport(h_iir=h_iir, per_node=per_node,
                      num_excluded=int((~included).sum()))


# ---------------------------------------------------------------------------
# Summaries
# ---------------------------------------------------------------------------

def accuracy_by_homophily_bin(model, g, split, n_bins=5):
    """Test accuracy within equal-width per-node-homophily bins over [0, 1].

    Isolated test nodes (undefined homophily) are skipped and reported in
    the returned dict. Empty bins carry accuracy None rather than zero.
    """
    if n_bins < 1:
        raise ParameterError("n_bins must be at least 1")
    ratios = node_homophily(g).per_node
    test = np.asarray(split.test, dtype=np.int64)
    pred = model.predictions(g)
    correct = pred[test] == g.labels[test]
    hv = ratios[test]
    defined = ~np.isnan(hv)
    bin_of = np.clip((hv[defined] * n_bins).astype(np.int64), 0, n_bins - 1)
    bins = []
    for b in range(n_bins):
        members = bin_of == b
        count = int(members.sum())
        acc = float(correct[defined][members].mean()) if count else None
        bins.append({"lo": b / n_bins, "hi": (b + 1) / n_bins,
                     "count": count, "accuracy": acc})
    return {"bins": bins, "skipped_isolated": int((~defined).sum())}


def op_distribution(arch):
    """Per-slot histogram of chosen operations; counts sum to the node count."""
    out = {}
    for label in arch.config.slot_labels():
        block = arch.config.block_of_slot(label)
        cands = arch.config.candidates[block]
        counts = np.bincount(arch.choices[label], minlength=len(cands))
        out[label] = {op: int(c) for op, c in zip(cands, counts)}
    return out


@dataclass
class MetricsTable:
    """Per-split accuracies with their mean and population std."""

    accuracies: list
    mean: float
    std: float
    extras: dict = field(default_factory=dict)

    @classmethod
    def from_accuracies(cls, accuracies, **extras):
        accs = [float(a) for a in accuracies]
        if not accs:
            raise ParameterError("need at least one accuracy")
        return cls(accuracies=accs, mean=float(np.mean(accs)),
                   std=float(np.std(accs)), extras=dict(extras))

    def as_dict(self):
        return {"accuracies": self.accuracies, "mean": self.mean,
                "std": self.std, **self.extras}


def bare_architecture(num_nodes, kind="sum", hidden=64):
    """Three-layer fixed baseline keeping only basic aggregation.

    kind 'sum' adds messages onto the ego features; 'mean' averages the two.
    """
    if kind not in ("sum", "mean"):
        raise ParameterError(f"kind must be 'sum' or 'mean', got {kind!r}")
    config = SupernetConfig(num_layers=3, hidden=hidden)
    return uniform_architecture(num_nodes, config, selection="1LOOPN",
                                attention="CONST", update=kind.upper(),
                                residual="AGG", inter="NONSKIP", output="GNN")
