"""Train fixed per-node architectures and watch homophily decide the winner.

A uniform NEIGHBOR/SYM_NORM architecture is an ordinary GCN. A uniform
EGO/MLP architecture never touches the graph. On a homophilous graph the
GCN should win; flip the generator to strong heterophily and the MLP
usually comes out ahead because neighbors stop being informative.

    python3 demos/fixed_architectures.py
"""

from nodenas import (SupernetConfig, TrainConfig, evaluate, make_splits,
                     synth_heterophilous, train, uniform_architecture)

CFG = SupernetConfig(num_layers=2, hidden=24)
TRAIN = TrainConfig(epochs=250, patience=60, lr=0.01, seed=0)


def run(name, arch, g, split):
    model = train(arch, g, split, TRAIN)
    acc = evaluate(model, g, split.test)
    print(f"  {name:<6} stopped at epoch {model.best_epoch:3d}   "
          f"test accuracy {acc:.3f}")
    return acc


def compare_on(h_target):
    g = synth_heterophilous(500, 4, h_target, feature_dim=12, seed=3,
                            class_sep=1.2)
    split = make_splits(g, n_splits=1, seed=1)[0]
    print(f"h_target = {h_target}")
    gcn = uniform_architecture(g.num_nodes, CFG)
    mlp = uniform_architecture(g.num_nodes, CFG, selection="1LOOPN",
                               attention="CONST", update="EGO",
                               residual="RES", inter="NONSKIP", output="MLP")
    a = run("GCN", gcn, g, split)
    b = run("MLP", mlp, g, split)
    print(f"  -> {'GCN' if a >= b else 'MLP'} wins by {abs(a - b):.3f}\n")


if __name__ == "__main__":
    compare_on(0.85)
    compare_on(0.10)
