"""Differentiable per-node architecture search driven by block predictors.

Instead of one learnable logit vector per node and block (whose size would
grow with the graph), every searchable block slot owns a small two-layer
perceptron that maps the tensors the block consumes to candidate logits.
A temperature softmax turns the logits into mixture weights, the supernet
runs every candidate and blends the results per node, and the predictors
are trained by gradient descent alongside the model weights.

The default scheme is alternating and first-order: each epoch takes one
Adam step on the model weights against the training-split loss, then one
Adam step on the predictor weights against the validation-split loss while
the temperature anneals geometrically. A joint mode (both groups updated on
the training loss) is available behind a flag, as is a straight-through
mode that forwards hard argmax choices while backpropagating through the
soft weights. Discretization keeps each node's highest-weight candidate,
ties falling to the lowest index.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import (Adam, NumericsError, ParameterError, Tape, Tensor,
                       backward_all)
from .supernet import (NodeArchitecture, SupernetParams, _glorot,
                       forward_weighted, slot_label)

# how many of the supernet's tensors each block's predictor reads, in units
# of the hidden width d
_INPUT_WIDTH_FACTOR = {"selection": 1, "attention": 1, "update": 2,
                       "residual": 2, "inter": 2, "output": 2}


class SearchDivergence(ArithmeticError):
    """Search hit a non-finite loss; .trace holds the epochs completed."""

    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


@dataclass
class SearchConfig:
    """Optimization hyperparameters for one search run."""

    epochs: int = 200
    lr_model: float = 0.01
    lr_predictor: float = 0.005
    weight_decay_model: float = 5e-4
    weight_decay_predictor: float = 1e-3
    tau_start: float = 1.0
    tau_end: float = 0.1
    joint_update: bool = False
    straight_through: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ParameterError("search needs at least one epoch")
        if self.lr_model <= 0 or self.lr_predictor <= 0:
            raise ParameterError("learning rates must be positive")
        if self.weight_decay_model < 0 or self.weight_decay_predictor < 0:
            raise ParameterError("weight decay must be nonnegative")
        if not 0 < self.tau_end <= self.tau_start:
            raise ParameterError(
                f"need 0 < tau_end <= tau_start, got {self.tau_end} "
                f"and {self.tau_start}")

    def tau_at(self, epoch):
        """Geometric anneal from tau_start to tau_end across the epochs."""
        if self.epochs == 1 or self.tau_start == self.tau_end:
            return self.tau_start if epoch == 0 else self.tau_end
        frac = min(epoch, self.epochs - 1) / (self.epochs - 1)
        return float(self.tau_start * (self.tau_end / self.tau_start) ** frac)


class PredictorSet:
    """One two-layer perceptron per searchable block slot.

    Each predictor maps that block's input tensors (concatenated) to one
    logit per candidate; hidden width is twice the supernet width. The
    parameter count depends only on the config, never on the graph.
    """

    def __init__(self, config, seed=0):
        self.config = config
        rng = np.random.default_rng(seed)
        d = config.hidden
        hidden = 2 * d
        self._params = {}
        for label in config.slot_labels():
            block = config.block_of_slot(label)
            in_width = _INPUT_WIDTH_FACTOR[block] * d
            out_width = len(config.candidates[block])
            self._params[f"{label}.w1"] = Tensor(
                _glorot(rng, in_width, hidden), requires_grad=True)
            self._params[f"{label}.w2"] = Tensor(
                _glorot(rng, hidden, out_width), requires_grad=True)

    def __getitem__(self, name):
        return self._params[name]

    def tensors(self):
        return list(self._params.values())

    def count(self):
        return sum(t.values.size for t in self._params.values())

    def zero_grad(self):
        for t in self._params.values():
            t.grad = None

    def weights_for(self, block, layer, inputs, tau):
        """Soft candidate weights for one slot: softmax(MLP(inputs) / tau)."""
        label = slot_label(block, layer)
        w1 = self._params[f"{label}.w1"]
        w2 = self._params[f"{label}.w2"]
        x = inputs[0] if len(inputs) == 1 else ad.concat_cols(list(inputs))
        if x.shape[1] != w1.shape[0]:
            raise ParameterError(
                f"predictor for {label} expects input width {w1.shape[0]}, "
                f"got {x.shape[1]}")
        logits = ad.dense_matmul(ad.relu(ad.dense_matmul(x, w1)), w2)
        return ad.softmax_temperature(logits, tau)


def predict_block_weights(w1, w2, inputs, tau):
    """Functional form of one predictor: softmax(relu(x W1) W2 / tau)."""
    x = inputs[0] if len(inputs) == 1 else ad.concat_cols(list(inputs))
    if x.shape[1] != w1.shape[0]:
        raise ParameterError(
            f"predictor expects input width {w1.shape[0]}, got {x.shape[1]}")
    logits = ad.dense_matmul(ad.relu(ad.dense_matmul(x, w1)), w2)
    return ad.softmax_temperature(logits, tau)


@dataclass
class MixWeights:
    """Per-slot soft candidate weights for every node."""

    per_slot: dict

    def validate(self, config, num_nodes):
        labels = config.slot_labels()
        if set(self.per_slot) != set(labels):
            raise ParameterError(
                f"mix weights cover {sorted(self.per_slot)}, expected {labels}")
        for label in labels:
            w = self.per_slot[label]
            k = len(config.candidates[config.block_of_slot(label)])
            if w.shape != (num_nodes, k):
                raise ParameterError(
                    f"{label}: weights shaped {w.shape}, expected {(num_nodes, k)}")
            if not np.all(np.isfinite(w)) or np.any(w < 0):
                # softmax outputs are strictly positive; an exact zero can
                # only appear through float underflow of a vanishing weight,
                # which is still a valid distribution for our purposes
                raise ParameterError(f"{label}: negative or non-finite weight")
            if np.max(np.abs(w.sum(axis=1) - 1.0)) > 1e-10:
                raise ParameterError(f"{label}: rows do not sum to 1")

    def mean_entropy(self):
        """Mean over slots of the mean per-node entropy of c (natural log)."""
        per_slot = []
        for w in self.per_slot.values():
            terms = np.where(w > 0, -w * np.log(np.where(w > 0, w, 1.0)), 0.0)
            per_slot.append(float(np.mean(np.sum(terms, axis=1))))
        return float(np.mean(per_slot))


def forward_mixed(g, params, predictors, tau, mode="eval", rng=None,
                  record=None, straight_through=False):
    """Supernet forward with predictor-generated soft weights.

    With record (a dict) the soft weights of every slot are stored as plain
    arrays, which is what discretization and the entropy trace read. In
    straight-through mode the forward uses hard argmax choices while
    gradients follow the soft weights.
    """

    def weight_fn(block, layer, inputs):
        soft = predictors.weights_for(block, layer, inputs, tau)
        if record is not None:
            record[slot_label(block, layer)] = np.array(soft.values)
        if straight_through:
            hard = np.zeros_like(soft.values)
            hard[np.arange(hard.shape[0]), np.argmax(soft.values, axis=1)] = 1.0
            return ad.add(soft, Tensor(hard - soft.values))
        return soft

    return forward_weighted(g, params, weight_fn, mode=mode, rng=rng)


def discretize(mix, config, num_nodes):
    """Keep each node's largest-weight candidate; ties go to the lowest index."""
    mix.validate(config, num_nodes)
    choices = {}
    for label in config.slot_labels():
        choices[label] = np.argmax(mix.per_slot[label], axis=1).astype(np.int64)
    return NodeArchitecture(config, num_nodes, choices)


def search(g, split, snconfig, sconfig=None):
    """Run differentiable search and return (architecture, trace).

    Alternating first-order updates: model weights descend the training-split
    loss, predictor weights the validation-split loss (or both the training
    loss with joint_update). The trace holds one row per epoch with the two
    losses, the temperature, and the mean mixture entropy. A non-finite loss
    aborts with SearchDivergence carrying the partial trace.
    """
    sconfig = sconfig or SearchConfig()
    if len(split.train) == 0:
        raise ParameterError("training split is empty")
    if len(split.val) == 0:
        raise ParameterError("validation split is empty")

    params = SupernetParams(snconfig, g.num_features, g.num_classes,
                            g.num_nodes, seed=sconfig.seed)
    predictors = PredictorSet(snconfig, seed=sconfig.seed + 1)
    opt_model = Adam(params.tensors(), sconfig.lr_model,
                     weight_decay=sconfig.weight_decay_model)
    opt_pred = Adam(predictors.tensors(), sconfig.lr_predictor,
                    weight_decay=sconfig.weight_decay_predictor)
    rng = np.random.default_rng(sconfig.seed + 2)

    def clear_grads():
        params.zero_grad()
        predictors.zero_grad()

    trace = []
    try:
        for epoch in range(sconfig.epochs):
            tau = sconfig.tau_at(epoch)
            record = {}
            with Tape() as tape:
                logits = forward_mixed(g, params, predictors, tau,
                                       mode="train", rng=rng, record=record,
                                       straight_through=sconfig.straight_through)
                loss_train = ad.cross_entropy_mean(logits, g.labels, split.train)
            clear_grads()
            backward_all(loss_train, tape)
            opt_model.step()

            if sconfig.joint_update:
                opt_pred.step()
                logits_val = forward_mixed(g, params, predictors, tau,
                                           mode="eval", record=record,
                                           straight_through=sconfig.straight_through)
                loss_val = ad.cross_entropy_mean(logits_val, g.labels, split.val)
            else:
                record = {}
                with Tape() as tape:
                    logits_val = forward_mixed(g, params, predictors, tau,
                                               mode="train", rng=rng,
                                               record=record,
                                               straight_through=sconfig.straight_through)
                    loss_val = ad.cross_entropy_mean(logits_val, g.labels,
                                                     split.val)
                clear_grads()
                backward_all(loss_val, tape)
                opt_pred.step()

            trace.append({
                "epoch": epoch,
                "train_loss": float(loss_train.values[0, 0]),
                "val_loss": float(loss_val.values[0, 0]),
                "tau": tau,
                "mix_entropy": MixWeights(record).mean_entropy(),
            })
    except NumericsError as exc:
        raise SearchDivergence(
            f"search diverged after {len(trace)} completed epoch(s): {exc}",
            trace) from exc

    record = {}
    forward_mixed(g, params, predictors, sconfig.tau_end, mode="eval",
                  record=record)
    mix = MixWeights(record)
    arch = discretize(mix, snconfig, g.num_nodes)
    return arch, trace
