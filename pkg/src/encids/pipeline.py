"""End-to-end run: label -> flows -> stats -> diffusion map -> k-means -> scores.

:func:`run_pipeline` is pure: it returns every artifact as text keyed by file
name. :func:`write_bundle` puts them on disk all-or-nothing.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import os
import shutil
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from .cluster import evaluate, kmeans_restarts, map_clusters_to_classes
from .flows import DEFAULT_SLICE, aggregate_flows, default_epoch, write_flows_csv
from .ingest import PacketRecord, write_header_tsv
from .labeling import DEFAULT_SLACK, AttackEvent, binarize, label_packets
from .manifold import DEFAULT_CAP, KernelConfig, Normalization, build_features, diffusion_map
from .stats import (CoiConfig, classify_by_stddev, coi_scores, flow_occurrence_frequency,
                    histogram_svg, occurrence_histograms, packets_per_flow_distribution,
                    stddev_histogram, write_coi_csv, write_histograms_csv)


@dataclass
class CoiParams:
    bin_size: float = 3600.0
    period: float | None = None
    threshold: float = 0.5


@dataclass
class KernelParams:
    epsilon: float | None = None
    t: int = 1
    m: int = 3
    normalization: str = "zscore"
    cap: int = DEFAULT_CAP
    max_points: int = 2000


@dataclass
class KmeansParams:
    k: int = 2
    seeds: int = 10
    max_iter: int = 300
    source: str = "features"  # or "embedding"
    eval_unit: str = "packet"  # or "flow"


@dataclass
class PipelineConfig:
    slice_duration: float = DEFAULT_SLICE
    epoch0: float | None = None
    label_slack: float = DEFAULT_SLACK
    stddev_bin: float = 50.0
    stddev_threshold: float = 50.0
    min_count: int = 3
    reply_is_attack: bool = False
    include_ttl: bool = False
    coi: CoiParams = field(default_factory=CoiParams)
    kernel: KernelParams = field(default_factory=KernelParams)
    kmeans: KmeansParams = field(default_factory=KmeansParams)

    def validate(self) -> "PipelineConfig":
        if self.slice_duration <= 0:
            raise ValueError("slice_duration must be positive")
        if self.label_slack < 0:
            raise ValueError("label_slack must be >= 0")
        if self.stddev_bin <= 0 or self.stddev_threshold < 0:
            raise ValueError("stddev_bin must be > 0 and stddev_threshold >= 0")
        if self.min_count < 1:
            raise ValueError("min_count must be >= 1")
        CoiConfig(self.coi.bin_size, self.coi.period, self.coi.threshold)
        self.kernel_config()
        if self.kernel.max_points < 2:
            raise ValueError("kernel.max_points must be >= 2")
        if self.kmeans.k != 2:
            raise ValueError("the attack/normal mapping needs k = 2")
        if self.kmeans.seeds < 1 or self.kmeans.max_iter < 1:
            raise ValueError("kmeans.seeds and kmeans.max_iter must be >= 1")
        if self.kmeans.source not in ("features", "embedding"):
            raise ValueError("kmeans.source must be 'features' or 'embedding'")
        if self.kmeans.eval_unit not in ("packet", "flow"):
            raise ValueError("kmeans.eval_unit must be 'packet' or 'flow'")
        return self

    def kernel_config(self) -> KernelConfig:
        k = self.kernel
        return KernelConfig(k.epsilon, k.t, k.m, Normalization(k.normalization), k.cap)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        data = dict(data)
        nested = {"coi": CoiParams, "kernel": KernelParams, "kmeans": KmeansParams}
        kwargs = {}
        known = {f.name for f in dataclasses.fields(cls)}
        for key, value in data.items():
            if key not in known:
                raise ValueError(f"unknown config key {key!r}")
            if key in nested:
                sub = nested[key]
                sub_known = {f.name for f in dataclasses.fields(sub)}
                bad = set(value) - sub_known
                if bad:
                    raise ValueError(f"unknown config key(s) {sorted(bad)} under {key!r}")
                value = sub(**value)
            kwargs[key] = value
        return cls(**kwargs)

    def override(self, dotted: dict[str, Any]) -> "PipelineConfig":
        """Apply ``{"kernel.t": 2, ...}`` style overrides; None values are skipped."""
        data = self.to_dict()
        for key, value in dotted.items():
            if value is None:
                continue
            node = data
            *path, leaf = key.split(".")
            for p in path:
                node = node[p]
            if leaf not in node:
                raise ValueError(f"unknown config key {key!r}")
            node[leaf] = value
        return PipelineConfig.from_dict(data)


def load_config(path: str | os.PathLike | None) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    with open(path, encoding="utf-8") as fh:
        return PipelineConfig.from_dict(json.load(fh))


def dumps_json(obj: Any) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def sha256_file(path: str | os.PathLike) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# --------------------------------------------------------------------------


def _hist_bundle(name: str, pair, title: str, xlabel: str, out: dict[str, str]):
    out[f"{name}.csv"] = write_histograms_csv(pair)
    out[f"{name}.svg"] = histogram_svg(pair[0], pair[1], title, xlabel)


def _predict_flows(records: Sequence[PacketRecord], pred: np.ndarray, flows, cfg: PipelineConfig,
                   epoch0: float):
    """Majority vote of packet predictions per directed flow (ties -> attack)."""
    votes: dict[tuple, list[int]] = {}
    for r, p in zip(records, pred):
        key = (r.src, r.dst, int(np.floor((r.ts - epoch0) / cfg.slice_duration)))
        v = votes.setdefault(key, [0, 0])
        v[0] += 1
        v[1] += int(p)
    predicted, truth = [], []
    for f in flows:
        n, a = votes[(f.key.src, f.key.dst, f.key.slice)]
        predicted.append(2 * a >= n)
        truth.append(f.is_attack)
    return np.array(predicted, bool), np.array(truth, bool)


def assignments_csv(indices: Sequence[int], clusters: Sequence[int], mapping: dict[int, bool],
                    truth: Sequence[bool]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["record_index", "cluster", "predicted", "truth"])
    for i, c, y in zip(indices, clusters, truth):
        w.writerow([int(i), int(c), "attack" if mapping[int(c)] else "normal",
                    "attack" if y else "normal"])
    return buf.getvalue()


def embedding_csv(indices: Sequence[int], coords: np.ndarray, truth: Sequence[int]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    m = coords.shape[1]
    w.writerow(["point", "record_index"] + [f"psi{k + 2}" for k in range(m)] + ["label"])
    for p, (i, row, y) in enumerate(zip(indices, coords, truth)):
        w.writerow([p, int(i)] + [repr(float(v)) for v in row] + [int(y)])
    return buf.getvalue()


@dataclass
class RunResult:
    artifacts: dict[str, str]
    evaluation: dict


def run_pipeline(records: Sequence[PacketRecord], events: Sequence[AttackEvent],
                 cfg: PipelineConfig) -> RunResult:
    cfg.validate()
    if len(records) < 2:
        raise ValueError("need at least two packet records")
    out: dict[str, str] = {}

    labeled = label_packets(records, events, cfg.label_slack)
    out["labeled.tsv"] = write_header_tsv(labeled)
    labels = np.array([int(r.label) for r in labeled])
    truth = np.array(binarize(labels, cfg.reply_is_attack), bool)

    epoch0 = default_epoch(labeled) if cfg.epoch0 is None else cfg.epoch0
    flows = aggregate_flows(labeled, cfg.slice_duration, epoch0)
    out["flows.csv"] = write_flows_csv(flows)

    sd_all = stddev_histogram(flows, cfg.stddev_bin, min_count=1)
    sd_multi = stddev_histogram(flows, cfg.stddev_bin, min_count=cfg.min_count)
    _hist_bundle("stddev_hist", sd_all, "Packet size variation within a flow",
                 "stddev of packet length (bytes)", out)
    _hist_bundle("stddev_hist_min_count", sd_multi,
                 f"Packet size variation (flows with >= {cfg.min_count} packets)",
                 "stddev of packet length (bytes)", out)
    ppf = packets_per_flow_distribution(flows)
    _hist_bundle("packets_per_flow", ppf, "Packets within a flow", "packets (log2 bins)", out)
    occ = flow_occurrence_frequency(flows)
    _hist_bundle("flow_occurrence", occurrence_histograms(occ), "Frequency of occurrence of a flow",
                 "slices containing the pair (log2 bins)", out)
    coi = coi_scores(labeled, CoiConfig(cfg.coi.bin_size, cfg.coi.period, cfg.coi.threshold))
    out["coi.csv"] = write_coi_csv(coi)

    sd_pred = np.array([classify_by_stddev(f, cfg.stddev_threshold, cfg.min_count) == 1 for f in flows])
    sd_truth = np.array([f.is_attack for f in flows])
    sd_cm = evaluate(sd_pred, sd_truth)

    kcfg = cfg.kernel_config()
    features = build_features(labeled, kcfg.normalization, include_ttl=cfg.include_ttl)
    dm = diffusion_map(features, kcfg, max_points=cfg.kernel.max_points)
    emb_idx = dm.indices
    out["embedding.csv"] = embedding_csv(emb_idx, dm.embedding.coordinates, labels[emb_idx])
    out["embedding.json"] = dumps_json(dm.metadata())

    km = cfg.kmeans
    if km.source == "features":
        points, point_idx = features, np.arange(len(labeled))
    else:
        points, point_idx = dm.embedding.coordinates, emb_idx
    best = kmeans_restarts(points, km.k, seeds=range(km.seeds), max_iter=km.max_iter)
    point_truth = truth[point_idx]
    mapping = map_clusters_to_classes(best.assignments, point_truth)
    pred = np.array([mapping[int(c)] for c in best.assignments], bool)
    out["assignments.csv"] = assignments_csv(point_idx, best.assignments, mapping, point_truth)

    if km.eval_unit == "packet":
        cm = evaluate(pred, point_truth)
    else:
        subset = [labeled[i] for i in point_idx]
        sub_flows = aggregate_flows(subset, cfg.slice_duration, epoch0)
        fp, ft = _predict_flows(subset, pred, sub_flows, cfg, epoch0)
        cm = evaluate(fp, ft)

    n_attack_flows = int(sd_truth.sum())
    evaluation = {
        "kmeans": {
            **cm.to_dict(),
            "k": km.k,
            "seed": best.seed,
            "restarts": km.seeds,
            "iterations": best.iterations,
            "inertia": best.inertia,
            "feature_source": km.source,
            "eval_unit": km.eval_unit,
            "cluster_sizes": best.sizes(),
            "cluster_is_attack": {str(c): bool(v) for c, v in sorted(mapping.items())},
        },
        "stddev_detector": {
            **sd_cm.to_dict(),
            "threshold_bytes": cfg.stddev_threshold,
            "min_count": cfg.min_count,
            "attack_recall": sd_cm.recall,
        },
        "summary": {
            "packets": len(labeled),
            "labels": {str(k): int(np.sum(labels == k)) for k in (0, 1, 2)},
            "flows": len(flows),
            "attack_flows": n_attack_flows,
            "epoch0": epoch0,
            "attack_flows_stddev_le_threshold": _frac_le(flows, True, cfg.stddev_threshold),
            "normal_flows_stddev_le_threshold": _frac_le(flows, False, cfg.stddev_threshold),
            "coi_pairs": len(coi),
            "coi_members": sum(s.member for s in coi),
            "coi_truncated": bool(coi and coi[0].truncated),
        },
    }
    out["evaluation.json"] = dumps_json(evaluation)
    out["report.txt"] = ("K-Means Clustering Accuracy\n" + cm.table() + "\n\n"
                         "Std-dev detector (per flow)\n" + sd_cm.table() + "\n")
    return RunResult(out, evaluation)


def _frac_le(flows, attack: bool, threshold: float) -> float:
    vals = [f.stddev_len for f in flows if f.is_attack == attack]
    return sum(v <= threshold for v in vals) / len(vals) if vals else 0.0


def build_manifest(cfg: PipelineConfig, inputs: dict[str, str], artifacts: dict[str, str],
                   timestamp: float | None = None) -> dict:
    return {
        "tool": "encids",
        "version": __version__,
        "timestamp": time.time() if timestamp is None else timestamp,
        "config": cfg.to_dict(),
        "inputs": {name: {"path": os.fspath(p), "sha256": sha256_file(p)} for name, p in inputs.items()},
        "artifacts": {name: hashlib.sha256(text.encode()).hexdigest()
                      for name, text in sorted(artifacts.items())},
    }


def write_bundle(out_dir: str | os.PathLike, artifacts: dict[str, str]) -> None:
    """Write every artifact or none: files are staged in a sibling temp dir."""
    out = Path(out_dir)
    out.parent.mkdir(parents=True, exist_ok=True)
    stage = Path(tempfile.mkdtemp(prefix=".encids-", dir=out.parent))
    try:
        for name, text in artifacts.items():
            (stage / name).write_text(text, encoding="utf-8", newline="")
        out.mkdir(exist_ok=True)
        for name in artifacts:
            os.replace(stage / name, out / name)
    finally:
        shutil.rmtree(stage, ignore_errors=True)
