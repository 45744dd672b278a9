#!/usr/bin/env python3
"""Download the WebKB/Wikipedia/Actor benchmarks and convert them to bundles.

Pulls the raw `new_data` files (out1_graph_edges.txt plus
out1_node_feature_label.txt) for texas, chameleon, squirrel, and actor from
the geom-gcn repository mirror on GitHub and writes each one as a dataset
bundle directory (edges.txt, features.txt, labels.txt, meta.json) that
nodenas.load_dataset understands.

Needs network access for the download step only; the conversion logic is a
pure function so it can be exercised offline. The actor corpus stores
features as comma-separated active indices (multi-hot), the others as dense
comma-separated vectors; both forms are handled.

Usage:
    python3 scripts/fetch_datasets.py [--dest data] [--names texas actor ...]
"""

import argparse
import json
import sys
import urllib.request
from pathlib import Path

RAW_BASE = ("https://raw.githubusercontent.com/graphdml-uiuc-jlu/geom-gcn/"
            "master/new_data")

# our name -> (upstream directory, multi-hot features, feature dim)
SOURCES = {
    "texas": ("texas", False, None),
    "chameleon": ("chameleon", False, None),
    "squirrel": ("squirrel", False, None),
    "actor": ("film", True, 932),
}


def parse_new_data(edge_text, node_text, multi_hot=False, num_features=None):
    """Parse the two geom-gcn text files into (edges, features, labels).

    Both files carry a single header line. Node lines are
    "id<TAB>feature<TAB>label" where feature is a comma-separated dense
    vector, or a comma-separated list of active indices when multi_hot is
    set. Node ids must be 0..n-1; rows may appear in any order.
    """
    node_lines = [ln for ln in node_text.strip().splitlines()[1:] if ln]
    n = len(node_lines)
    labels = [None] * n
    raw_feats = [None] * n
    for ln in node_lines:
        sid, feat, lab = ln.split("\t")
        u = int(sid)
        if not 0 <= u < n:
            raise ValueError(f"node id {u} outside 0..{n - 1}")
        raw_feats[u] = feat
        labels[u] = int(lab)
    if any(v is None for v in labels):
        raise ValueError("node file skips some ids")

    if multi_hot:
        dim = num_features
        idx_lists = [[int(t) for t in feat.split(",")] for feat in raw_feats]
        if dim is None:
            dim = 1 + max(max(idx) for idx in idx_lists if idx)
        features = [[0.0] * dim for _ in range(n)]
        for u, idx in enumerate(idx_lists):
            for j in idx:
                features[u][j] = 1.0
    else:
        features = [[float(t) for t in feat.split(",")] for feat in raw_feats]
        widths = {len(row) for row in features}
        if len(widths) != 1:
            raise ValueError(f"inconsistent feature widths: {sorted(widths)}")

    edges = []
    for ln in edge_text.strip().splitlines()[1:]:
        if not ln:
            continue
        u, v = ln.split()
        edges.append((int(u), int(v)))
    return edges, features, labels


def write_bundle(dest, name, edges, features, labels):
    """Write a loadable bundle; cleanup (dedup, symmetrize) happens on load."""
    dest = Path(dest)
    dest.mkdir(parents=True, exist_ok=True)
    with open(dest / "edges.txt", "w") as fh:
        for u, v in edges:
            fh.write(f"{u} {v}\n")
    n = len(features)
    with open(dest / "features.txt", "w") as fh:
        fh.write(f"{n} {len(features[0])}\n")
        for row in features:
            fh.write(" ".join(f"{v:.17g}" for v in row) + "\n")
    with open(dest / "labels.txt", "w") as fh:
        for lab in labels:
            fh.write(f"{lab}\n")
    meta = {"name": name, "directed": False,
            "num_classes": 1 + max(labels), "source": "geom-gcn new_data"}
    with open(dest / "meta.json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def fetch(name, dest):
    upstream, multi_hot, dim = SOURCES[name]
    base = f"{RAW_BASE}/{upstream}"
    print(f"fetching {name} from {base} ...")
    with urllib.request.urlopen(f"{base}/out1_graph_edges.txt") as resp:
        edge_text = resp.read().decode()
    with urllib.request.urlopen(
            f"{base}/out1_node_feature_label.txt") as resp:
        node_text = resp.read().decode()
    edges, features, labels = parse_new_data(edge_text, node_text,
                                             multi_hot=multi_hot,
                                             num_features=dim)
    write_bundle(Path(dest) / name, name, edges, features, labels)
    print(f"  wrote {len(labels)} nodes, {len(edges)} edge lines "
          f"-> {Path(dest) / name}")


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--dest", default="data",
                        help="bundle parent directory (default data/)")
    parser.add_argument("--names", nargs="+", default=sorted(SOURCES),
                        choices=sorted(SOURCES))
    args = parser.parse_args(argv)
    for name in args.names:
        fetch(name, args.dest)
    return 0


if __name__ == "__main__":
    sys.exit(main())
