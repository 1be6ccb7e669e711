"""Command line entry point: ``encids <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .cluster import evaluate, kmeans_restarts, map_clusters_to_classes
from .flows import aggregate_flows, flow_direction_merge, write_flows_csv
from .ingest import (PCAP_MAGIC, PCAP_MAGIC_NSEC, CaptureMeta, FormatError, parse_header_tsv, parse_pcap,
                     write_header_tsv)
from .labeling import binarize, label_packets, parse_attack_schedule, write_attack_schedule
from .manifold import build_features, diffusion_map
from .pipeline import (PipelineConfig, assignments_csv, build_manifest, dumps_json, embedding_csv,
                       load_config, run_pipeline, write_bundle)
from .stats import (CoiConfig, coi_scores, flow_occurrence_frequency, histogram_svg,
                    occurrence_histograms, packets_per_flow_distribution, stddev_histogram,
                    write_coi_csv, write_histograms_csv)
from .synth import SynthSpec, generate

log = logging.getLogger("encids")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# --------------------------------------------------------------------------
# input helpers


def read_records(path: str):
    """Header records from a pcap (sniffed by magic) or a header TSV."""
    p = Path(path)
    data = p.read_bytes()
    if len(data) >= 4 and (int.from_bytes(data[:4], "little") in (PCAP_MAGIC, PCAP_MAGIC_NSEC)
                           or int.from_bytes(data[:4], "big") in (PCAP_MAGIC, PCAP_MAGIC_NSEC)):
        records, meta = parse_pcap(data)
        return records, meta
    return parse_header_tsv(data.decode("utf-8")), None


def read_schedule(path: str | None):
    if path is None:
        return []
    return parse_attack_schedule(Path(path).read_text(encoding="utf-8"))


def _write(path: str | None, text: str):
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text, encoding="utf-8", newline="")


def _config(args) -> PipelineConfig:
    try:
        return _build_config(args)
    except (ValueError, TypeError, json.JSONDecodeError) as exc:
        raise UsageError(f"bad configuration: {exc}") from exc


def _build_config(args) -> PipelineConfig:
    cfg = load_config(getattr(args, "config", None))
    overrides = {
        "slice_duration": getattr(args, "slice", None),
        "epoch0": getattr(args, "epoch0", None),
        "label_slack": getattr(args, "slack", None),
        "stddev_bin": getattr(args, "bin_width", None),
        "stddev_threshold": getattr(args, "threshold", None),
        "min_count": getattr(args, "min_count", None),
        "coi.bin_size": getattr(args, "coi_bin", None),
        "coi.period": getattr(args, "coi_period", None),
        "coi.threshold": getattr(args, "coi_threshold", None),
        "kernel.epsilon": getattr(args, "epsilon", None),
        "kernel.t": getattr(args, "t", None),
        "kernel.m": getattr(args, "m", None),
        "kernel.normalization": getattr(args, "normalization", None),
        "kernel.cap": getattr(args, "cap", None),
        "kernel.max_points": getattr(args, "max_points", None),
        "kmeans.seeds": getattr(args, "seeds", None),
        "kmeans.max_iter": getattr(args, "max_iter", None),
        "kmeans.source": getattr(args, "source", None),
        "kmeans.eval_unit": getattr(args, "eval_unit", None),
    }
    if getattr(args, "reply_is_attack", False):
        overrides["reply_is_attack"] = True
    if getattr(args, "use_ttl", False):
        overrides["include_ttl"] = True
    return cfg.override(overrides).validate()


# --------------------------------------------------------------------------
# subcommands


def cmd_ingest(args) -> int:
    records, meta = read_records(args.input)
    _write(args.output, write_header_tsv(records))
    if args.meta:
        if meta is None:
            meta = CaptureMeta(len(records), records[0].ts if records else None,
                               records[-1].ts if records else None, 0, None)
        _write(args.meta, dumps_json(meta.to_dict()))
    return EXIT_OK


def cmd_label(args) -> int:
    cfg = _config(args)
    records, _ = read_records(args.input)
    labeled = label_packets(records, read_schedule(args.schedule), cfg.label_slack)
    _write(args.output, write_header_tsv(labeled))
    return EXIT_OK


def cmd_flows(args) -> int:
    cfg = _config(args)
    records, _ = read_records(args.input)
    flows = aggregate_flows(records, cfg.slice_duration, cfg.epoch0)
    if args.merge_directions:
        flows = flow_direction_merge(flows)
    _write(args.output, write_flows_csv(flows))
    return EXIT_OK


def cmd_stats(args) -> int:
    cfg = _config(args)
    records, _ = read_records(args.input)
    flows = aggregate_flows(records, cfg.slice_duration, cfg.epoch0)
    out = {}
    sd = stddev_histogram(flows, cfg.stddev_bin, min_count=1)
    sd_m = stddev_histogram(flows, cfg.stddev_bin, min_count=cfg.min_count)
    ppf = packets_per_flow_distribution(flows)
    occ = occurrence_histograms(flow_occurrence_frequency(flows))
    for name, pair, title, xlabel in [
        ("stddev_hist", sd, "Packet size variation within a flow", "stddev (bytes)"),
        ("stddev_hist_min_count", sd_m, "Packet size variation (multi-packet flows)", "stddev (bytes)"),
        ("packets_per_flow", ppf, "Packets within a flow", "packets (log2 bins)"),
        ("flow_occurrence", occ, "Frequency of occurrence of a flow", "slices (log2 bins)"),
    ]:
        out[f"{name}.csv"] = write_histograms_csv(pair)
        out[f"{name}.svg"] = histogram_svg(pair[0], pair[1], title, xlabel)
    out["coi.csv"] = write_coi_csv(coi_scores(records, CoiConfig(cfg.coi.bin_size, cfg.coi.period,
                                                                  cfg.coi.threshold)))
    write_bundle(args.out_dir, out)
    return EXIT_OK


def cmd_embed(args) -> int:
    cfg = _config(args)
    records, _ = read_records(args.input)
    kcfg = cfg.kernel_config()
    features = build_features(records, kcfg.normalization, include_ttl=cfg.include_ttl)
    dm = diffusion_map(features, kcfg, max_points=cfg.kernel.max_points)
    labels = np.array([int(r.label) for r in records])
    write_bundle(args.out_dir, {
        "embedding.csv": embedding_csv(dm.indices, dm.embedding.coordinates, labels[dm.indices]),
        "embedding.json": dumps_json(dm.metadata()),
    })
    return EXIT_OK


def cmd_cluster(args) -> int:
    cfg = _config(args)
    records, _ = read_records(args.input)
    truth = np.array(binarize((r.label for r in records), cfg.reply_is_attack), bool)
    kcfg = cfg.kernel_config()
    features = build_features(records, kcfg.normalization, include_ttl=cfg.include_ttl)
    if cfg.kmeans.source == "embedding":
        dm = diffusion_map(features, kcfg, max_points=cfg.kernel.max_points)
        points, idx = dm.embedding.coordinates, dm.indices
    else:
        points, idx = features, np.arange(len(records))
    best = kmeans_restarts(points, cfg.kmeans.k, range(cfg.kmeans.seeds), cfg.kmeans.max_iter)
    mapping = map_clusters_to_classes(best.assignments, truth[idx])
    _write(args.output, assignments_csv(idx, best.assignments, mapping, truth[idx]))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    predicted, truth = [], []
    with open(args.assignments, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"predicted", "truth"} <= set(reader.fieldnames):
            raise FormatError("assignment CSV needs 'predicted' and 'truth' columns")
        for row in reader:
            predicted.append(row["predicted"] == "attack")
            truth.append(row["truth"] == "attack")
    cm = evaluate(predicted, truth)
    report = cm.to_dict()
    _write(args.output, dumps_json(report))
    print(cm.table(), file=sys.stderr)
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _config(args)
    records, meta = read_records(args.input)
    events = read_schedule(args.schedule)
    result = run_pipeline(records, events, cfg)
    artifacts = dict(result.artifacts)
    if meta is not None:
        artifacts["capture_meta.json"] = dumps_json(meta.to_dict())
    inputs = {"traffic": args.input}
    if args.schedule:
        inputs["schedule"] = args.schedule
    manifest = build_manifest(cfg, inputs, artifacts)
    artifacts["manifest.json"] = dumps_json(manifest)
    write_bundle(args.out_dir, artifacts)
    sys.stderr.write(result.artifacts["report.txt"])
    return EXIT_OK


def cmd_synth(args) -> int:
    kwargs = {}
    for name in ("normal_flows", "attack_flows", "dos_flows", "attack_len_jitter", "seed"):
        v = getattr(args, name)
        if v is not None:
            kwargs[name] = v
    if args.normal_len_range:
        kwargs["normal_len_range"] = tuple(args.normal_len_range)
    spec = SynthSpec(**kwargs)
    records, events = generate(spec)
    write_bundle(args.out_dir, {
        "traffic.tsv": write_header_tsv(records),
        "schedule.csv": write_attack_schedule(events),
        "synth.json": dumps_json(spec.to_dict()),
    })
    return EXIT_OK


# --------------------------------------------------------------------------
# parser


def _add_pipeline_flags(p, *groups):
    p.add_argument("--config", help="JSON config file; flags override it")
    if "flows" in groups:
        p.add_argument("--slice", type=float, help="flow time slice in seconds (default 60)")
        p.add_argument("--epoch0", type=float, help="slice origin (default: first ts, whole seconds)")
    if "label" in groups:
        p.add_argument("--slack", type=float, help="seconds around each attack window (default 60)")
    if "stats" in groups:
        p.add_argument("--bin-width", type=float, help="stddev histogram bin width in bytes")
        p.add_argument("--threshold", type=float, help="stddev detector threshold in bytes")
        p.add_argument("--min-count", type=int, help="minimum packets for the stddev detector")
        p.add_argument("--coi-bin", type=float, help="COI bin size Z in seconds")
        p.add_argument("--coi-period", type=float, help="COI period Y in seconds")
        p.add_argument("--coi-threshold", type=float, help="COI membership fraction")
    if "embed" in groups:
        p.add_argument("--epsilon", type=float, help="kernel width (default: median heuristic)")
        p.add_argument("-t", type=int, help="diffusion time")
        p.add_argument("-m", type=int, help="embedding dimensions")
        p.add_argument("--normalization", choices=["none", "zscore", "minmax"])
        p.add_argument("--cap", type=int, help="hard limit on kernel size")
        p.add_argument("--max-points", type=int, help="stride-subsample to this many points")
        p.add_argument("--use-ttl", action="store_true", help="add TTL as a feature")
    if "cluster" in groups:
        p.add_argument("--seeds", type=int, help="k-means restarts")
        p.add_argument("--max-iter", type=int)
        p.add_argument("--source", choices=["features", "embedding"])
        p.add_argument("--reply-is-attack", action="store_true",
                       help="count label 2 (attack replies) as attack truth")
    if "evaluate" in groups:
        p.add_argument("--eval-unit", choices=["packet", "flow"])


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="encids", description="Header-only intrusion analysis for encrypted IP traffic.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("ingest", help="pcap or header TSV -> header TSV")
    p.add_argument("input")
    p.add_argument("-o", "--output")
    p.add_argument("--meta", help="write capture metadata JSON here")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("label", help="apply an attack schedule")
    p.add_argument("input")
    p.add_argument("schedule")
    p.add_argument("-o", "--output")
    _add_pipeline_flags(p, "label")
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("flows", help="aggregate packets into flows (CSV)")
    p.add_argument("input")
    p.add_argument("-o", "--output")
    p.add_argument("--merge-directions", action="store_true")
    _add_pipeline_flags(p, "flows")
    p.set_defaults(func=cmd_flows)

    p = sub.add_parser("stats", help="histograms and COI scores of labelled traffic")
    p.add_argument("input")
    p.add_argument("--out-dir", required=True)
    _add_pipeline_flags(p, "flows", "stats")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("embed", help="diffusion-map embedding")
    p.add_argument("input")
    p.add_argument("--out-dir", required=True)
    _add_pipeline_flags(p, "embed")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("cluster", help="k-means (k=2) with cluster-to-class mapping")
    p.add_argument("input")
    p.add_argument("-o", "--output")
    _add_pipeline_flags(p, "embed", "cluster")
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("evaluate", help="confusion matrix from an assignment CSV")
    p.add_argument("assignments")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("run", help="full pipeline, writes a report bundle")
    p.add_argument("input")
    p.add_argument("schedule", nargs="?")
    p.add_argument("--out-dir", required=True)
    _add_pipeline_flags(p, "flows", "label", "stats", "embed", "cluster", "evaluate")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("synth", help="generate synthetic traffic and an attack schedule")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--normal-flows", type=int)
    p.add_argument("--attack-flows", type=int)
    p.add_argument("--dos-flows", type=int)
    p.add_argument("--attack-len-jitter", type=int)
    p.add_argument("--normal-len-range", type=int, nargs=2, metavar=("MIN", "MAX"))
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"encids {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, ValueError, OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        print(f"encids {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # eigensolver failures and similar
        print(f"encids {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
