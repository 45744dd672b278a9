"""Command line front end.

Subcommands: homophily, search, train, eval, hiir, report. Flags override
values from an optional JSON config file, which in turn override the
defaults in RunConfig. Every JSON artifact embeds the fully resolved run
configuration and the package version; nothing embeds a timestamp, so a
rerun with the same inputs writes byte-identical files.

Exit codes: 0 success, 2 configuration problems, 3 data problems,
4 numerical failures (divergence).
"""

import argparse
import concurrent.futures
import csv
import json
import multiprocessing
import os
import sys
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .autodiff import NumericsError, ParameterError, ShapeError
from .evaluation import (MetricsTable, TrainConfig, TrainingDivergence,
                         accuracy_by_homophily_bin, bare_architecture,
                         compute_hiir, evaluate, op_distribution, train)
from .graphs import (DatasetError, Graph, UndefinedMetricError,
                     edge_homophily, load_dataset, make_splits,
                     node_homophily)
from .search import SearchConfig, SearchDivergence, search
from .supernet import NodeArchitecture, SupernetConfig, uniform_architecture

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

ARCH_PRESETS = ("gcn", "mlp", "bare_sum", "bare_mean")


@dataclass
class RunConfig:
    """Fully resolved settings for one invocation, echoed into artifacts."""

    dataset: str = ""
    out: str = "nodenas_out"
    layers: int = 3
    hidden: int = 64
    n_splits: int = 10
    seed: int = 0
    workers: int = 0  # 0 means one per split up to the machine's cores
    normalize_features: bool = False
    plots: bool = False
    # search hyperparameters
    search_epochs: int = 200
    lr_model: float = 0.01
    lr_predictor: float = 0.005
    weight_decay_model: float = 5e-4
    weight_decay_predictor: float = 1e-3
    tau_start: float = 1.0
    tau_end: float = 0.1
    joint_update: bool = False
    straight_through: bool = False
    dropout: float = 0.0
    # retraining hyperparameters
    arch: str = "gcn"
    train_epochs: int = 1000
    patience: int = 100
    lr: float = 0.01
    weight_decay: float = 5e-4
    bins: int = 0
    include_hiir: bool = False

    def __post_init__(self):
        for name in ("layers", "hidden", "n_splits"):
            if getattr(self, name) < 1:
                raise ParameterError(f"{name} must be at least 1")
        if self.workers < 0:
            raise ParameterError("workers must be nonnegative")
        if self.bins < 0:
            raise ParameterError("bins must be nonnegative")

    def as_dict(self):
        return asdict(self)


def _resolve_config(args):
    """defaults < JSON config file < explicit command line flags."""
    merged = asdict(RunConfig())
    if getattr(args, "config", None):
        path = Path(args.config)
        try:
            loaded = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ParameterError(f"config file {path} is not valid JSON: {exc}")
        if not isinstance(loaded, dict):
            raise ParameterError(f"config file {path} must hold a JSON object")
        unknown = set(loaded) - set(merged)
        if unknown:
            raise ParameterError(
                f"unknown config keys: {', '.join(sorted(unknown))}")
        merged.update(loaded)
    for name in merged:
        value = getattr(args, name, None)
        if value is not None:
            merged[name] = value
    return RunConfig(**merged)


# ---------------------------------------------------------------------------
# Artifact helpers
# ---------------------------------------------------------------------------

def _jsonable(x):
    """Recursively convert numpy scalars/arrays and NaN for JSON output."""
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return [_jsonable(v) for v in x.tolist()]
    if isinstance(x, (np.integer, int)) and not isinstance(x, bool):
        return int(x)
    if isinstance(x, (np.floating, float)):
        v = float(x)
        return None if np.isnan(v) else v
    return x


def _write_json(path, payload):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_jsonable(payload), indent=2, sort_keys=True)
                    + "\n")
    return path


def _write_csv(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow(["" if v is None else v for v in row])
    return path


def _provenance(cfg):
    return {"version": __version__, "run_config": cfg.as_dict()}


def _load_graph(cfg):
    if not cfg.dataset:
        raise ParameterError("--dataset is required for this command")
    g = load_dataset(cfg.dataset)
    if cfg.normalize_features:
        feats = np.array(g.features.values)
        norms = np.abs(feats).sum(axis=1, keepdims=True)
        feats = feats / np.maximum(norms, 1e-12)
        g = Graph(g.adjacency, feats, g.labels, num_classes=g.num_classes,
                  directed=g.directed, name=g.name, meta=g.meta)
    return g


def _load_arch_file(path):
    try:
        payload = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise DatasetError(f"architecture file {path} is not valid JSON: {exc}")
    if isinstance(payload, dict) and "architecture" in payload:
        payload = payload["architecture"]
    return NodeArchitecture.from_dict(payload)


def _resolve_archs(cfg, g, n_splits):
    """One architecture per split from a preset name, a file, or a directory."""
    spec = cfg.arch
    base = SupernetConfig(num_layers=cfg.layers, hidden=cfg.hidden,
                          dropout=cfg.dropout)
    n = g.num_nodes
    if spec == "gcn":
        return [uniform_architecture(n, base)] * n_splits
    if spec == "mlp":
        return [uniform_architecture(n, base, selection="1N",
                                     attention="CONST", update="EGO",
                                     residual="RES", inter="NONSKIP",
                                     output="MLP")] * n_splits
    if spec in ("bare_sum", "bare_mean"):
        return [bare_architecture(n, kind=spec.split("_")[1],
                                  hidden=cfg.hidden)] * n_splits
    path = Path(spec)
    if path.is_file():
        return [_load_arch_file(path)] * n_splits
    if path.is_dir():
        files = sorted(path.glob("arch_*.json"))
        if len(files) < n_splits:
            raise ParameterError(
                f"{path} holds {len(files)} arch_*.json files but "
                f"{n_splits} splits were requested")
        return [_load_arch_file(f) for f in files[:n_splits]]
    raise ParameterError(
        f"--arch must be one of {ARCH_PRESETS}, an architecture JSON file, "
        f"or a directory of arch_*.json files; got {spec!r}")


def _write_splits(cfg, splits, out):
    payload = {"splits": [s.as_dict() for s in splits], **_provenance(cfg)}
    return _write_json(Path(out) / "splits.json", payload)


# ---------------------------------------------------------------------------
# Per-split fanout
# ---------------------------------------------------------------------------

def _fanout(worker, tasks, workers):
    """Ordered map over tasks, in-process or on a bounded process pool."""
    if workers == 0:
        workers = min(len(tasks), os.cpu_count() or 1)
    if workers <= 1 or len(tasks) <= 1:
        return [worker(t) for t in tasks]
    try:
        ctx = multiprocessing.get_context("spawn")
        with concurrent.futures.ProcessPoolExecutor(
                max_workers=min(workers, len(tasks)), mp_context=ctx) as pool:
            return list(pool.map(worker, tasks))
    except (OSError, PermissionError) as exc:  # restricted environments
        print(f"worker pool unavailable ({exc}); running serially",
              file=sys.stderr)
        return [worker(t) for t in tasks]


def _search_task(task):
    g, split, sncfg, scfg = task
    try:
        arch, trace = search(g, split, sncfg, scfg)
        return {"status": "ok", "arch_json": arch.to_json(), "trace": trace}
    except SearchDivergence as exc:
        return {"status": "diverged", "error": str(exc), "trace": exc.trace}


def _retrain_task(task):
    g, split, arch, tcfg, wants, n_bins = task
    try:
        model = train(arch, g, split, tcfg)
    except TrainingDivergence as exc:
        return {"status": "diverged", "error": str(exc),
                "epochs_run": len(exc.trace)}
    out = {"status": "ok",
           "best_epoch": model.best_epoch,
           "epochs_run": len(model.trace),
           "train_acc": evaluate(model, g, split.train),
           "val_acc": evaluate(model, g, split.val),
           "test_acc": evaluate(model, g, split.test)}
    if "trace" in wants:
        out["trace"] = model.trace
    if "state" in wants:
        out["state"] = model.params.state_dict()
    if "hiir" in wants:
        rep = compute_hiir(model, g)
        out["h_iir"] = rep.h_iir
        out["hiir_excluded"] = rep.num_excluded
        out["hiir_per_node"] = rep.per_node
    if "bins" in wants:
        out["bins"] = accuracy_by_homophily_bin(model, g, split, n_bins)
    return out


def _retrain_all(cfg, g, splits, archs, wants, n_bins=5):
    tasks = []
    for i, (split, arch) in enumerate(zip(splits, archs)):
        tcfg = TrainConfig(epochs=cfg.train_epochs, patience=cfg.patience,
                           lr=cfg.lr, weight_decay=cfg.weight_decay,
                           dropout=cfg.dropout, seed=cfg.seed + i)
        tasks.append((g, split, arch, tcfg, wants, n_bins))
    return _fanout(_retrain_task, tasks, cfg.workers)


# ---------------------------------------------------------------------------
# SVG plots (hand rolled so plotting needs no extra dependency)
# ---------------------------------------------------------------------------

_SVG_STYLE = ("font-family:Helvetica,Arial,sans-serif;font-size:12px;"
              "fill:#222")


def _svg_header(width, height, title):
    return [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
            f'height="{height}" viewBox="0 0 {width} {height}">',
            f'<style>text{{{_SVG_STYLE}}}</style>',
            f'<rect width="{width}" height="{height}" fill="white"/>',
            f'<text x="{width / 2:.1f}" y="18" text-anchor="middle" '
            f'font-weight="bold">{title}</text>']


def svg_bar_chart(labels, values, title, ylabel=""):
    """Vertical bar chart as an SVG string."""
    width, height, left, bottom, top = 640, 360, 60, 50, 36
    plot_w, plot_h = width - left - 20, height - bottom - top
    vmax = max(max(values), 1e-12)
    parts = _svg_header(width, height, title)
    step = plot_w / max(len(values), 1)
    bar_w = step * 0.7
    for i, (lab, val) in enumerate(zip(labels, values)):
        h = plot_h * (val / vmax)
        x = left + i * step + (step - bar_w) / 2
        y = top + plot_h - h
        parts.append(f'<rect x="{x:.1f}" y="{y:.1f}" width="{bar_w:.1f}" '
                     f'height="{h:.1f}" fill="#4878a8"/>')
        parts.append(f'<text x="{x + bar_w / 2:.1f}" y="{y - 4:.1f}" '
                     f'text-anchor="middle">{val:g}</text>')
        parts.append(f'<text x="{x + bar_w / 2:.1f}" '
                     f'y="{top + plot_h + 16:.1f}" '
                     f'text-anchor="middle">{lab}</text>')
    parts.append(f'<line x1="{left}" y1="{top + plot_h:.1f}" '
                 f'x2="{width - 20}" y2="{top + plot_h:.1f}" '
                 f'stroke="#222"/>')
    if ylabel:
        parts.append(f'<text x="14" y="{top + plot_h / 2:.1f}" '
                     f'transform="rotate(-90 14 {top + plot_h / 2:.1f})" '
                     f'text-anchor="middle">{ylabel}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def svg_scatter(xs, ys, title, xlabel, ylabel):
    """Scatter plot with fixed [0,1] x-axis, auto y, as an SVG string."""
    width, height, left, bottom, top = 480, 360, 60, 50, 36
    plot_w, plot_h = width - left - 20, height - bottom - top
    ymin = min(ys) if ys else 0.0
    ymax = max(ys) if ys else 1.0
    if ymax - ymin < 1e-9:
        ymin, ymax = ymin - 0.05, ymax + 0.05
    parts = _svg_header(width, height, title)
    parts.append(f'<rect x="{left}" y="{top}" width="{plot_w}" '
                 f'height="{plot_h}" fill="none" stroke="#222"/>')
    for x, y in zip(xs, ys):
        px = left + plot_w * min(max(x, 0.0), 1.0)
        py = top + plot_h * (1 - (y - ymin) / (ymax - ymin))
        parts.append(f'<circle cx="{px:.1f}" cy="{py:.1f}" r="4" '
                     f'fill="#a84848"/>')
    parts.append(f'<text x="{left + plot_w / 2:.1f}" y="{height - 12}" '
                 f'text-anchor="middle">{xlabel}</text>')
    parts.append(f'<text x="14" y="{top + plot_h / 2:.1f}" '
                 f'transform="rotate(-90 14 {top + plot_h / 2:.1f})" '
                 f'text-anchor="middle">{ylabel}</text>')
    for t in (0.0, 0.5, 1.0):
        parts.append(f'<text x="{left + plot_w * t:.1f}" '
                     f'y="{top + plot_h + 16:.1f}" '
                     f'text-anchor="middle">{t:g}</text>')
    parts.append(f'<text x="{left - 6}" y="{top + plot_h:.1f}" '
                 f'text-anchor="end">{ymin:.2f}</text>')
    parts.append(f'<text x="{left - 6}" y="{top + 10:.1f}" '
                 f'text-anchor="end">{ymax:.2f}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def svg_op_distribution(histograms, title):
    """Stacked per-slot rows of operation counts as one SVG string."""
    row_h, width, left, top = 52, 720, 110, 36
    slots = list(histograms)
    height = top + row_h * len(slots) + 16
    parts = _svg_header(width, height, title)
    total = max((sum(h.values()) for h in histograms.values()), default=1)
    for r, slot in enumerate(slots):
        y0 = top + r * row_h
        parts.append(f'<text x="8" y="{y0 + 26}">{slot}</text>')
        x = left
        for op, count in histograms[slot].items():
            if count == 0:
                continue
            w = (width - left - 20) * count / total
            shade = 60 + (sum(op.encode()) % 5) * 35
            parts.append(f'<rect x="{x:.1f}" y="{y0 + 10}" width="{w:.1f}" '
                         f'height="26" fill="rgb({shade},{shade + 40},'
                         f'{255 - shade})" stroke="white"/>')
            if w > 46:
                parts.append(f'<text x="{x + w / 2:.1f}" y="{y0 + 27}" '
                             f'text-anchor="middle">{op}:{count}</text>')
            x += w
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _aggregate_op_histograms(archs):
    """Sum per-slot operation counts over a list of architectures."""
    agg = {}
    for arch in archs:
        for slot, hist in op_distribution(arch).items():
            dest = agg.setdefault(slot, {})
            for op, count in hist.items():
                dest[op] = dest.get(op, 0) + count
    return agg


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_homophily(cfg):
    g = _load_graph(cfg)
    edge_homophily(g)  # raises UndefinedMetricError on an edgeless graph
    rep = node_homophily(g)
    out = Path(cfg.out)
    payload = {"dataset": g.name or str(cfg.dataset),
               "num_nodes": g.num_nodes,
               "num_classes": g.num_classes,
               "num_features": g.num_features,
               "edges_nnz": g.adjacency.nnz,
               "edge_lines": g.meta.get("edge_lines"),
               "h_edge": rep.h_edge,
               "h_node": rep.h_node,
               "num_isolated": len(rep.isolated),
               **_provenance(cfg)}
    _write_json(out / "homophily.json", payload)
    rows = [(u, None if np.isnan(rep.per_node[u]) else float(rep.per_node[u]))
            for u in range(g.num_nodes)]
    _write_csv(out / "homophily_per_node.csv",
               ["node", "same_label_neighbor_fraction"], rows)
    print(f"h_edge={rep.h_edge:.4f} h_node={rep.h_node:.4f} "
          f"({len(rep.isolated)} isolated) -> {out / 'homophily.json'}")
    return EXIT_OK


def cmd_search(cfg):
    g = _load_graph(cfg)
    splits = make_splits(g, n_splits=cfg.n_splits, seed=cfg.seed)
    out = Path(cfg.out)
    _write_splits(cfg, splits, out)
    sncfg = SupernetConfig(num_layers=cfg.layers, hidden=cfg.hidden,
                           dropout=cfg.dropout)
    tasks = []
    for i, split in enumerate(splits):
        scfg = SearchConfig(epochs=cfg.search_epochs, lr_model=cfg.lr_model,
                            lr_predictor=cfg.lr_predictor,
                            weight_decay_model=cfg.weight_decay_model,
                            weight_decay_predictor=cfg.weight_decay_predictor,
                            tau_start=cfg.tau_start, tau_end=cfg.tau_end,
                            joint_update=cfg.joint_update,
                            straight_through=cfg.straight_through,
                            seed=cfg.seed + i)
        tasks.append((g, split, sncfg, scfg))
    results = _fanout(_search_task, tasks, cfg.workers)

    summary = []
    failures = 0
    for i, res in enumerate(results):
        trace_file = out / f"trace_{i:02d}.csv"
        _write_csv(trace_file,
                   ["epoch", "train_loss", "val_loss", "tau", "mix_entropy"],
                   [(r["epoch"], r["train_loss"], r["val_loss"], r["tau"],
                     r["mix_entropy"]) for r in res["trace"]])
        entry = {"split": i, "status": res["status"],
                 "trace_file": trace_file.name,
                 "epochs_run": len(res["trace"])}
        if res["status"] == "ok":
            arch_file = out / f"arch_{i:02d}.json"
            wrapped = {"architecture": json.loads(res["arch_json"]),
                       **_provenance(cfg)}
            _write_json(arch_file, wrapped)
            entry["arch_file"] = arch_file.name
            if res["trace"]:
                entry["final_val_loss"] = res["trace"][-1]["val_loss"]
        else:
            failures += 1
            entry["error"] = res["error"]
            print(f"split {i}: search diverged: {res['error']}",
                  file=sys.stderr)
        summary.append(entry)
    _write_json(out / "search.json", {"results": summary, **_provenance(cfg)})
    ok = cfg.n_splits - failures
    print(f"searched {cfg.n_splits} split(s): {ok} ok, {failures} diverged "
          f"-> {out / 'search.json'}")
    return EXIT_NUMERIC if failures == cfg.n_splits else EXIT_OK


def cmd_train(cfg):
    g = _load_graph(cfg)
    splits = make_splits(g, n_splits=cfg.n_splits, seed=cfg.seed)
    archs = _resolve_archs(cfg, g, cfg.n_splits)
    out = Path(cfg.out)
    _write_splits(cfg, splits, out)
    results = _retrain_all(cfg, g, splits, archs, wants=("trace", "state"))

    summary = []
    failures = 0
    for i, res in enumerate(results):
        entry = {"split": i, "status": res["status"]}
        if res["status"] == "ok":
            model_file = out / f"model_{i:02d}.npz"
            model_file.parent.mkdir(parents=True, exist_ok=True)
            np.savez(model_file, **res["state"])
            arch_file = out / f"arch_{i:02d}.json"
            _write_json(arch_file,
                        {"architecture": archs[i].as_dict(),
                         **_provenance(cfg)})
            _write_csv(out / f"train_trace_{i:02d}.csv",
                       ["epoch", "train_loss", "val_loss"],
                       [(r["epoch"], r["train_loss"], r["val_loss"])
                        for r in res["trace"]])
            entry.update(best_epoch=res["best_epoch"],
                         epochs_run=res["epochs_run"],
                         train_acc=res["train_acc"], val_acc=res["val_acc"],
                         test_acc=res["test_acc"],
                         model_file=model_file.name,
                         arch_file=arch_file.name)
        else:
            failures += 1
            entry["error"] = res["error"]
            print(f"split {i}: training diverged: {res['error']}",
                  file=sys.stderr)
        summary.append(entry)
    _write_json(out / "train.json", {"results": summary, **_provenance(cfg)})
    ok = cfg.n_splits - failures
    print(f"trained {cfg.n_splits} split(s): {ok} ok, {failures} diverged "
          f"-> {out / 'train.json'}")
    return EXIT_NUMERIC if failures == cfg.n_splits else EXIT_OK


def _metrics_payload(cfg, results, archs):
    accs = [r["test_acc"] for r in results if r["status"] == "ok"]
    if not accs:
        raise NumericsError("every split diverged during retraining")
    table = MetricsTable.from_accuracies(accs)
    per_split = []
    for i, res in enumerate(results):
        entry = {"split": i, "status": res["status"]}
        if res["status"] == "ok":
            entry.update(train_acc=res["train_acc"], val_acc=res["val_acc"],
                         test_acc=res["test_acc"],
                         best_epoch=res["best_epoch"],
                         epochs_run=res["epochs_run"])
            if "h_iir" in res:
                entry["h_iir"] = res["h_iir"]
                entry["hiir_excluded"] = res["hiir_excluded"]
            if "bins" in res:
                entry["bins"] = res["bins"]
        else:
            entry["error"] = res["error"]
        per_split.append(entry)
    payload = {"metrics": table.as_dict(), "per_split": per_split,
               "op_distribution": _aggregate_op_histograms(archs),
               **_provenance(cfg)}
    return payload, table


def cmd_eval(cfg):
    g = _load_graph(cfg)
    splits = make_splits(g, n_splits=cfg.n_splits, seed=cfg.seed)
    archs = _resolve_archs(cfg, g, cfg.n_splits)
    out = Path(cfg.out)
    _write_splits(cfg, splits, out)
    wants = []
    if cfg.include_hiir:
        wants.append("hiir")
    if cfg.bins:
        wants.append("bins")
    results = _retrain_all(cfg, g, splits, archs, wants=tuple(wants),
                           n_bins=cfg.bins or 5)
    payload, table = _metrics_payload(cfg, results, archs)
    _write_json(out / "metrics.json", payload)
    rows = []
    for entry in payload["per_split"]:
        rows.append((entry["split"], entry["status"],
                     entry.get("train_acc"), entry.get("val_acc"),
                     entry.get("test_acc"), entry.get("h_iir")))
    _write_csv(out / "metrics.csv",
               ["split", "status", "train_acc", "val_acc", "test_acc",
                "h_iir"], rows)
    if cfg.plots:
        _emit_eval_plots(out, payload)
    failures = sum(1 for r in results if r["status"] != "ok")
    print(f"test accuracy mean={table.mean:.4f} std={table.std:.4f} over "
          f"{len(table.accuracies)} split(s) ({failures} diverged) "
          f"-> {out / 'metrics.json'}")
    return EXIT_OK


def _emit_eval_plots(out, payload):
    out = Path(out)
    hist = payload.get("op_distribution")
    if hist:
        (out / "op_distribution.svg").write_text(
            svg_op_distribution(hist, "Operation distribution"))
    first_bins = next((e["bins"] for e in payload["per_split"]
                       if e.get("bins")), None)
    if first_bins:
        labels = [f"{b['lo']:.1f}-{b['hi']:.1f}" for b in first_bins["bins"]]
        values = [b["accuracy"] if b["accuracy"] is not None else 0.0
                  for b in first_bins["bins"]]
        (out / "accuracy_by_bin.svg").write_text(
            svg_bar_chart(labels, [round(v, 3) for v in values],
                          "Test accuracy by homophily bin", "accuracy"))
    pts = [(e["h_iir"], e["test_acc"]) for e in payload["per_split"]
           if e.get("h_iir") is not None and e.get("test_acc") is not None]
    if pts:
        xs, ys = zip(*pts)
        (out / "accuracy_vs_hiir.svg").write_text(
            svg_scatter(xs, ys, "Accuracy vs intra-class ratio",
                        "h_iir", "test accuracy"))


def cmd_hiir(cfg):
    g = _load_graph(cfg)
    splits = make_splits(g, n_splits=cfg.n_splits, seed=cfg.seed)
    archs = _resolve_archs(cfg, g, cfg.n_splits)
    out = Path(cfg.out)
    _write_splits(cfg, splits, out)
    results = _retrain_all(cfg, g, splits, archs, wants=("hiir",))
    ok = [r for r in results if r["status"] == "ok"]
    if not ok:
        raise NumericsError("every split diverged during retraining")
    values = [r["h_iir"] for r in ok if not np.isnan(r["h_iir"])]
    per_split = []
    for i, res in enumerate(results):
        entry = {"split": i, "status": res["status"]}
        if res["status"] == "ok":
            entry.update(h_iir=res["h_iir"],
                         num_excluded=res["hiir_excluded"],
                         test_acc=res["test_acc"])
        else:
            entry["error"] = res["error"]
        per_split.append(entry)
    payload = {"per_split": per_split,
               "mean_h_iir": float(np.mean(values)) if values else None,
               "std_h_iir": float(np.std(values)) if values else None,
               **_provenance(cfg)}
    _write_json(out / "hiir.json", payload)
    _write_csv(out / "hiir.csv",
               ["split", "status", "h_iir", "num_excluded", "test_acc"],
               [(e["split"], e["status"], e.get("h_iir"),
                 e.get("num_excluded"), e.get("test_acc"))
                for e in per_split])
    rows = []
    for i, res in enumerate(results):
        if res["status"] != "ok":
            continue
        for u, v in enumerate(res["hiir_per_node"]):
            rows.append((i, u, None if np.isnan(v) else float(v)))
    _write_csv(out / "hiir_per_node.csv", ["split", "node", "ratio"], rows)
    mean = payload["mean_h_iir"]
    shown = "nan" if mean is None else f"{mean:.4f}"
    print(f"h_iir mean={shown} over {len(ok)} split(s) "
          f"-> {out / 'hiir.json'}")
    return EXIT_OK


def cmd_report(cfg):
    out = Path(cfg.out)
    if not out.is_dir():
        raise DatasetError(f"report directory {out} does not exist")

    def read(name):
        p = out / name
        return json.loads(p.read_text()) if p.is_file() else None

    homophily = read("homophily.json")
    metrics = read("metrics.json")
    hiir = read("hiir.json")
    searched = read("search.json")
    arch_files = sorted(out.glob("arch_*.json"))
    if not any((homophily, metrics, hiir, searched, arch_files)):
        raise DatasetError(f"nothing to report in {out}")

    lines = ["# Run report", ""]
    if homophily:
        lines += ["## Homophily",
                  "",
                  f"- dataset: {homophily['dataset']}",
                  f"- nodes: {homophily['num_nodes']}, "
                  f"stored entries: {homophily['edges_nnz']}",
                  f"- edge homophily: {homophily['h_edge']:.4f}",
                  f"- node homophily: {homophily['h_node']:.4f}",
                  f"- isolated nodes: {homophily['num_isolated']}",
                  ""]
    if searched:
        ok = sum(1 for r in searched["results"] if r["status"] == "ok")
        lines += ["## Search",
                  "",
                  f"- splits searched: {len(searched['results'])} "
                  f"({ok} converged)",
                  ""]
    if metrics:
        m = metrics["metrics"]
        lines += ["## Test accuracy",
                  "",
                  f"- mean: {m['mean']:.4f}",
                  f"- std: {m['std']:.4f}",
                  "",
                  "| split | status | test accuracy |",
                  "|------:|--------|--------------:|"]
        for e in metrics["per_split"]:
            acc = e.get("test_acc")
            shown = "-" if acc is None else f"{acc:.4f}"
            lines.append(f"| {e['split']} | {e['status']} | {shown} |")
        lines.append("")
    if hiir:
        mean = hiir.get("mean_h_iir")
        shown = "-" if mean is None else f"{mean:.4f}"
        lines += ["## Intra-class information ratio",
                  "",
                  f"- mean h_iir: {shown}",
                  ""]
    plots = []
    if arch_files:
        archs = [_load_arch_file(f) for f in arch_files]
        hist = _aggregate_op_histograms(archs)
        (out / "op_distribution.svg").write_text(
            svg_op_distribution(hist, "Operation distribution"))
        plots.append("op_distribution.svg")
    if metrics:
        first_bins = next((e["bins"] for e in metrics["per_split"]
                           if e.get("bins")), None)
        if first_bins:
            labels = [f"{b['lo']:.1f}-{b['hi']:.1f}"
                      for b in first_bins["bins"]]
            values = [b["accuracy"] if b["accuracy"] is not None else 0.0
                      for b in first_bins["bins"]]
            (out / "accuracy_by_bin.svg").write_text(
                svg_bar_chart(labels, [round(v, 3) for v in values],
                              "Test accuracy by homophily bin", "accuracy"))
            plots.append("accuracy_by_bin.svg")
    if metrics and hiir:
        pts = []
        acc_by_split = {e["split"]: e.get("test_acc")
                        for e in metrics["per_split"]}
        for e in hiir["per_split"]:
            acc = acc_by_split.get(e["split"])
            if e.get("h_iir") is not None and acc is not None:
                pts.append((e["h_iir"], acc))
        if pts:
            xs, ys = zip(*pts)
            (out / "accuracy_vs_hiir.svg").write_text(
                svg_scatter(xs, ys, "Accuracy vs intra-class ratio",
                            "h_iir", "test accuracy"))
            plots.append("accuracy_vs_hiir.svg")
    if plots:
        lines += ["## Plots", ""]
        lines += [f"- ![{p}]({p})" for p in plots]
        lines.append("")
    (out / "report.md").write_text("\n".join(lines))
    print(f"wrote {out / 'report.md'} and {len(plots)} plot(s)")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Argument parsing and dispatch
# ---------------------------------------------------------------------------

def _common_flags():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--dataset", help="dataset bundle directory")
    common.add_argument("--out", help="output directory (default nodenas_out)")
    common.add_argument("--layers", type=int, help="supernet depth")
    common.add_argument("--hidden", type=int, help="hidden width")
    common.add_argument("--splits", type=int, dest="n_splits",
                        help="number of random splits")
    common.add_argument("--seed", type=int, help="base random seed")
    common.add_argument("--workers", type=int,
                        help="parallel workers (0 = auto)")
    common.add_argument("--config", help="JSON config file; flags win")
    common.add_argument("--plots", action=argparse.BooleanOptionalAction,
                        default=None, help="write SVG plots")
    common.add_argument("--normalize-features", dest="normalize_features",
                        action=argparse.BooleanOptionalAction, default=None,
                        help="L1-normalize feature rows on load")
    return common


def _train_flags(sp):
    sp.add_argument("--arch",
                    help="gcn | mlp | bare_sum | bare_mean | arch JSON file "
                         "| directory of arch_*.json")
    sp.add_argument("--train-epochs", type=int, dest="train_epochs")
    sp.add_argument("--patience", type=int)
    sp.add_argument("--lr", type=float)
    sp.add_argument("--weight-decay", type=float, dest="weight_decay")
    sp.add_argument("--dropout", type=float)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="nodenas",
        description="Node-wise architecture search for graph neural "
                    "networks on heterophilous graphs.")
    parser.add_argument("--version", action="version",
                        version=f"nodenas {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    common = _common_flags()

    sub.add_parser("homophily", parents=[common],
                   help="compute edge and node homophily").set_defaults(
        func=cmd_homophily)

    sp = sub.add_parser("search", parents=[common],
                        help="run architecture search per split")
    sp.add_argument("--search-epochs", type=int, dest="search_epochs")
    sp.add_argument("--lr-model", type=float, dest="lr_model")
    sp.add_argument("--lr-predictor", type=float, dest="lr_predictor")
    sp.add_argument("--weight-decay-model", type=float,
                    dest="weight_decay_model")
    sp.add_argument("--weight-decay-predictor", type=float,
                    dest="weight_decay_predictor")
    sp.add_argument("--tau-start", type=float, dest="tau_start")
    sp.add_argument("--tau-end", type=float, dest="tau_end")
    sp.add_argument("--joint-update", dest="joint_update",
                    action=argparse.BooleanOptionalAction, default=None)
    sp.add_argument("--straight-through", dest="straight_through",
                    action=argparse.BooleanOptionalAction, default=None)
    sp.add_argument("--dropout", type=float)
    sp.set_defaults(func=cmd_search)

    sp = sub.add_parser("train", parents=[common],
                        help="retrain architectures and save checkpoints")
    _train_flags(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", parents=[common],
                        help="retrain and report accuracy metrics")
    _train_flags(sp)
    sp.add_argument("--bins", type=int,
                    help="add a homophily-binned accuracy section")
    sp.add_argument("--hiir", dest="include_hiir",
                    action=argparse.BooleanOptionalAction, default=None,
                    help="add an h_iir section")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("hiir", parents=[common],
                        help="retrain and compute the intra-class ratio")
    _train_flags(sp)
    sp.set_defaults(func=cmd_hiir)

    sub.add_parser("report", parents=[common],
                   help="summarize artifacts in --out into report.md "
                        "and SVG plots").set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _resolve_config(args)
        return int(args.func(cfg) or EXIT_OK)
    except (ParameterError, ShapeError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DatasetError, UndefinedMetricError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FileNotFoundError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (SearchDivergence, TrainingDivergence, NumericsError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
