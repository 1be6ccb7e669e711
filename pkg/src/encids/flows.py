"""Port-free flows: packets from A to B inside one fixed time slice."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Iterable, Sequence, TextIO

import numpy as np

from .ingest import Label, PacketRecord, int_to_ip

DEFAULT_SLICE = 60.0

FLOW_CSV_FIELDS = ["src", "dst", "slice", "count", "mean_len", "stddev_len", "min_len",
                   "max_len", "first_ts", "last_ts", "attack_fraction", "label"]


@dataclass(frozen=True, slots=True, order=True)
class FlowKey:
    src: int
    dst: int
    slice: int


@dataclass(frozen=True, slots=True)
class FlowStats:
    key: FlowKey
    count: int
    mean_len: float
    stddev_len: float
    min_len: int
    max_len: int
    first_ts: float
    last_ts: float
    attack_fraction: float
    label: Label

    @property
    def is_attack(self) -> bool:
        return self.label == Label.ATTACK


def default_epoch(records: Sequence[PacketRecord]) -> float:
    """Earliest timestamp truncated to whole seconds (0 for no records)."""
    if not records:
        return 0.0
    return float(math.floor(min(r.ts for r in records)))


def _address_codes(records: Sequence[PacketRecord]) -> tuple[np.ndarray, np.ndarray, list[int]]:
    n = len(records)
    try:
        src = np.fromiter((r.src for r in records), np.uint64, n)
        dst = np.fromiter((r.dst for r in records), np.uint64, n)
    except OverflowError:
        # IPv6 beyond 64 bits: factorize in Python
        codes: dict[int, int] = {}
        s = np.fromiter((codes.setdefault(r.src, len(codes)) for r in records), np.int64, n)
        d = np.fromiter((codes.setdefault(r.dst, len(codes)) for r in records), np.int64, n)
        addrs = sorted(codes)
        remap = np.empty(len(codes), np.int64)
        for code_, a in enumerate(addrs):
            remap[codes[a]] = code_
        return remap[s], remap[d], addrs
    uniq, inv = np.unique(np.concatenate([src, dst]), return_inverse=True)
    inv = inv.astype(np.int64)
    return inv[:n], inv[n:], [int(a) for a in uniq]


def aggregate_flows(records: Sequence[PacketRecord], slice_duration: float = DEFAULT_SLICE,
                    epoch0: float | None = None) -> list[FlowStats]:
    """Group packets into (src, dst, slice) flows and summarize packet lengths.

    ``stddev_len`` is the population standard deviation. A flow is labelled
    Attack when any member packet carries label 1. Output is sorted by key.
    """
    if slice_duration <= 0:
        raise ValueError("slice_duration must be positive")
    records = list(records)
    if not records:
        return []
    if epoch0 is None:
        epoch0 = default_epoch(records)
    n = len(records)
    src, dst, addrs = _address_codes(records)
    length = np.fromiter((r.length for r in records), np.float64, n)
    ts = np.fromiter((r.ts for r in records), np.float64, n)
    attack = np.fromiter((r.label == Label.ATTACK for r in records), np.bool_, n)
    slices = np.floor((ts - epoch0) / slice_duration).astype(np.int64)
    if slices.min() < 0:
        raise ValueError("epoch0 is later than the earliest packet")

    # group by (src, dst, slice): sort, then cut where any key column changes
    order = np.lexsort((slices, dst, src))
    ks, kd, kl = src[order], dst[order], slices[order]
    cut = np.flatnonzero((np.diff(ks) != 0) | (np.diff(kd) != 0) | (np.diff(kl) != 0)) + 1
    starts = np.concatenate(([0], cut))
    g = len(starts)
    count = np.diff(np.concatenate((starts, [n])))
    inv = np.repeat(np.arange(g), count)  # group id in sorted order
    len_sorted = length[order]
    ts_sorted = ts[order]
    mean = np.add.reduceat(len_sorted, starts) / count
    dev = len_sorted - mean[inv]
    std = np.sqrt(np.add.reduceat(dev * dev, starts) / count)
    n_attack = np.add.reduceat(attack[order].astype(np.float64), starts)
    lo_len = np.minimum.reduceat(len_sorted, starts)
    hi_len = np.maximum.reduceat(len_sorted, starts)
    lo_ts = np.minimum.reduceat(ts_sorted, starts)
    hi_ts = np.maximum.reduceat(ts_sorted, starts)
    uniq = np.stack([ks[starts], kd[starts], kl[starts]], axis=1)

    flows = []
    for i in range(g):
        s, d, sl = uniq[i]
        c = int(count[i])
        mean_i = float(mean[i])
        lo, hi = int(lo_len[i]), int(hi_len[i])
        # keep min <= mean <= max exact despite rounding
        mean_i = min(max(mean_i, lo), hi)
        frac = float(n_attack[i]) / c
        flows.append(FlowStats(
            key=FlowKey(addrs[s], addrs[d], int(sl)),
            count=c,
            mean_len=mean_i,
            stddev_len=0.0 if c == 1 else float(std[i]),
            min_len=lo,
            max_len=hi,
            first_ts=float(lo_ts[i]),
            last_ts=float(hi_ts[i]),
            attack_fraction=frac,
            label=Label.ATTACK if frac > 0 else Label.NORMAL,
        ))
    return flows


def _merge_group(key: FlowKey, group: list[FlowStats]) -> FlowStats:
    if len(group) == 1:
        f = group[0]
        return FlowStats(key, f.count, f.mean_len, f.stddev_len, f.min_len, f.max_len,
                         f.first_ts, f.last_ts, f.attack_fraction, f.label)
    n = sum(f.count for f in group)
    mean = sum(f.count * f.mean_len for f in group) / n
    # pooled population variance: within-group plus between-group spread
    var = sum(f.count * (f.stddev_len ** 2 + (f.mean_len - mean) ** 2) for f in group) / n
    attack = sum(f.count * f.attack_fraction for f in group) / n
    lo = min(f.min_len for f in group)
    hi = max(f.max_len for f in group)
    return FlowStats(
        key=key, count=n, mean_len=min(max(mean, lo), hi), stddev_len=math.sqrt(max(var, 0.0)),
        min_len=lo, max_len=hi,
        first_ts=min(f.first_ts for f in group), last_ts=max(f.last_ts for f in group),
        attack_fraction=min(attack, 1.0),
        label=Label.ATTACK if any(f.is_attack for f in group) else Label.NORMAL,
    )


def flow_direction_merge(flows: Iterable[FlowStats]) -> list[FlowStats]:
    """Merge A->B and B->A flows of the same slice.

    Merged keys are canonical: ``src`` is the smaller address.
    """
    groups: dict[FlowKey, list[FlowStats]] = {}
    for f in flows:
        a, b = sorted((f.key.src, f.key.dst))
        groups.setdefault(FlowKey(a, b, f.key.slice), []).append(f)
    return [_merge_group(k, groups[k]) for k in sorted(groups)]


def write_flows_csv(flows: Iterable[FlowStats], out: TextIO | None = None) -> str | None:
    buf = io.StringIO() if out is None else out
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(FLOW_CSV_FIELDS)
    for f in flows:
        w.writerow([int_to_ip(f.key.src), int_to_ip(f.key.dst), f.key.slice, f.count,
                    repr(f.mean_len), repr(f.stddev_len), f.min_len, f.max_len,
                    f"{f.first_ts:.6f}", f"{f.last_ts:.6f}", repr(f.attack_fraction),
                    f.label.name.lower()])
    return buf.getvalue() if out is None else None
