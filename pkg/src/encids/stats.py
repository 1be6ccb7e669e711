"""Flow-level discriminators: size variation, flow recurrence, flow volume, COI."""

from __future__ import annotations

import csv
import io
import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence, TextIO

from .flows import FlowStats
from .ingest import Label, PacketRecord, int_to_ip

DEFAULT_STDDEV_BIN = 50.0
DEFAULT_STDDEV_THRESHOLD = 50.0
DEFAULT_MIN_COUNT = 3
DEFAULT_COI_BIN = 3600.0
DEFAULT_COI_THRESHOLD = 0.5


@dataclass(frozen=True)
class Histogram:
    """Counts per bin, keyed by lower edge.

    ``bin_width`` is None for log-2 bins, where bin i covers [2**i, 2**(i+1)).
    """

    class_tag: Label
    bins: tuple[tuple[float, int], ...]
    bin_width: float | None = None

    @property
    def total(self) -> int:
        return sum(c for _, c in self.bins)

    @property
    def edges(self) -> list[float]:
        return [e for e, _ in self.bins]

    @property
    def counts(self) -> list[int]:
        return [c for _, c in self.bins]

    def upper_edge(self, i: int) -> float:
        lo = self.bins[i][0]
        return lo + self.bin_width if self.bin_width is not None else 2 * lo

    def cumulative_fractions(self) -> list[float]:
        total = self.total
        out, run = [], 0
        for _, c in self.bins:
            run += c
            out.append(run / total if total else 0.0)
        return out

    def fraction_at_or_below(self, value: float) -> float:
        """Fraction of the mass in bins whose upper edge is <= ``value``."""
        total = self.total
        if not total:
            return 0.0
        return sum(c for i, (_, c) in enumerate(self.bins) if self.upper_edge(i) <= value) / total


def _linear_hist(values_by_class: dict[Label, list[float]], bin_width: float) -> dict[Label, Histogram]:
    top = max((v for vs in values_by_class.values() for v in vs), default=None)
    nbins = 0 if top is None else int(math.floor(top / bin_width)) + 1
    out = {}
    for tag, values in values_by_class.items():
        counts = [0] * nbins
        for v in values:
            counts[int(math.floor(v / bin_width))] += 1
        out[tag] = Histogram(tag, tuple((i * bin_width, c) for i, c in enumerate(counts)), bin_width)
    return out


def stddev_histogram(flows: Iterable[FlowStats], bin_width: float = DEFAULT_STDDEV_BIN,
                     min_count: int = 1) -> tuple[Histogram, Histogram]:
    """Histogram of per-flow packet-length stddev, split into (normal, attack).

    Flows with fewer than ``min_count`` packets are left out. Both histograms
    share the same bin edges; bin i covers [i*w, (i+1)*w).
    """
    if bin_width <= 0:
        raise ValueError("bin_width must be positive")
    values: dict[Label, list[float]] = {Label.NORMAL: [], Label.ATTACK: []}
    for f in flows:
        if f.count >= min_count:
            values[Label.ATTACK if f.is_attack else Label.NORMAL].append(f.stddev_len)
    h = _linear_hist(values, bin_width)
    return h[Label.NORMAL], h[Label.ATTACK]


def classify_by_stddev(flow: FlowStats, threshold_bytes: float = DEFAULT_STDDEV_THRESHOLD,
                       min_count: int = DEFAULT_MIN_COUNT) -> Label:
    """Uniformly sized flows look automated: Attack iff stddev <= threshold and
    the flow has at least ``min_count`` packets."""
    if threshold_bytes < 0:
        raise ValueError("threshold must be non-negative")
    if flow.count >= min_count and flow.stddev_len <= threshold_bytes:
        return Label.ATTACK
    return Label.NORMAL


class PairOccurrence(NamedTuple):
    slices: int
    attack: bool


def flow_occurrence_frequency(flows: Iterable[FlowStats]) -> dict[tuple[int, int], PairOccurrence]:
    """Number of distinct slices in which each ordered pair had a flow.

    A pair counts as attack traffic if any of its flows was ever an attack.
    """
    slices = defaultdict(set)
    attack = defaultdict(bool)
    for f in flows:
        pair = (f.key.src, f.key.dst)
        slices[pair].add(f.key.slice)
        attack[pair] |= f.is_attack
    return {p: PairOccurrence(len(slices[p]), attack[p]) for p in sorted(slices)}


def occurrence_histograms(freq: dict[tuple[int, int], PairOccurrence]) -> tuple[Histogram, Histogram]:
    """Log-2 histograms of pair occurrence counts, (normal pairs, attack pairs)."""
    values = {Label.NORMAL: [], Label.ATTACK: []}
    for occ in freq.values():
        values[Label.ATTACK if occ.attack else Label.NORMAL].append(occ.slices)
    h = _log2_hist(values)
    return h[Label.NORMAL], h[Label.ATTACK]


def _log2_hist(values_by_class: dict[Label, list[int]]) -> dict[Label, Histogram]:
    top = max((v for vs in values_by_class.values() for v in vs), default=None)
    nbins = 0 if top is None else top.bit_length()
    out = {}
    for tag, values in values_by_class.items():
        counts = [0] * nbins
        for v in values:
            if v < 1:
                raise ValueError("log-2 bins need values >= 1")
            counts[v.bit_length() - 1] += 1
        out[tag] = Histogram(tag, tuple((float(1 << i), c) for i, c in enumerate(counts)), None)
    return out


def packets_per_flow_distribution(flows: Iterable[FlowStats]) -> tuple[Histogram, Histogram]:
    """Log-2 binned packet counts per flow, split into (normal, attack)."""
    values = {Label.NORMAL: [], Label.ATTACK: []}
    for f in flows:
        values[Label.ATTACK if f.is_attack else Label.NORMAL].append(f.count)
    h = _log2_hist(values)
    return h[Label.NORMAL], h[Label.ATTACK]


# --------------------------------------------------------------------------
# communities of interest


@dataclass(frozen=True)
class CoiConfig:
    """Z-second bins inside a Y-second period; Y=None spans the whole capture."""

    bin_size: float = DEFAULT_COI_BIN
    period: float | None = None
    threshold: float = DEFAULT_COI_THRESHOLD

    def __post_init__(self):
        if self.bin_size <= 0:
            raise ValueError("bin_size must be positive")
        if self.period is not None and self.period < self.bin_size:
            raise ValueError("period must be at least one bin long")
        if not 0 <= self.threshold <= 1:
            raise ValueError("threshold must lie in [0, 1]")


@dataclass(frozen=True)
class CoiScore:
    pair: tuple[int, int]
    bins_hit: int
    n_bins: int
    member: bool
    truncated: bool = False

    @property
    def fraction(self) -> float:
        return self.bins_hit / self.n_bins


def coi_window(records: Sequence[PacketRecord], config: CoiConfig) -> tuple[float, int]:
    """Start time and number of Z-bins of the scoring window."""
    t0 = min(r.ts for r in records)
    if config.period is None:
        span = max(r.ts for r in records) - t0
        return t0, int(math.floor(span / config.bin_size)) + 1
    return t0, int(math.floor(config.period / config.bin_size))


def coi_scores(records: Sequence[PacketRecord], config: CoiConfig = CoiConfig()) -> list[CoiScore]:
    """Fraction of Z-bins in which each unordered host pair interacted.

    Bins start at the earliest packet. Packets beyond the Y window are ignored
    and every score is then marked ``truncated``.
    """
    records = list(records)
    if not records:
        return []
    t0, n_bins = coi_window(records, config)
    hits = defaultdict(set)
    truncated = False
    for r in records:
        b = int(math.floor((r.ts - t0) / config.bin_size))
        if b >= n_bins:
            truncated = True
            continue
        pair = (r.src, r.dst) if r.src <= r.dst else (r.dst, r.src)
        hits[pair].add(b)
    return [
        CoiScore(p, len(hits[p]), n_bins, len(hits[p]) / n_bins >= config.threshold, truncated)
        for p in sorted(hits)
    ]


# --------------------------------------------------------------------------
# exports


def write_histograms_csv(hists: Iterable[Histogram], out: TextIO | None = None) -> str | None:
    buf = io.StringIO() if out is None else out
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["class", "lower_edge", "count", "cumulative_fraction"])
    for h in hists:
        for (edge, count), cum in zip(h.bins, h.cumulative_fractions()):
            w.writerow([h.class_tag.name.lower(), repr(float(edge)), count, repr(cum)])
    return buf.getvalue() if out is None else None


def write_coi_csv(scores: Iterable[CoiScore], out: TextIO | None = None) -> str | None:
    buf = io.StringIO() if out is None else out
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["src", "dst", "fraction", "member"])
    for s in scores:
        w.writerow([int_to_ip(s.pair[0]), int_to_ip(s.pair[1]), repr(s.fraction), int(s.member)])
    return buf.getvalue() if out is None else None


_COLORS = {Label.NORMAL: "#3b6fb6", Label.ATTACK: "#c0392b"}


def histogram_svg(normal: Histogram, attack: Histogram, title: str, xlabel: str,
                  width: int = 640, height: int = 360) -> str:
    """Grouped bar chart of the per-class fractions in each bin."""
    left, right, top, bottom = 56, 16, 36, 56
    pw, ph = width - left - right, height - top - bottom
    nb = max(len(normal.bins), len(attack.bins), 1)
    fracs = {}
    for h in (normal, attack):
        t = h.total
        fracs[h.class_tag] = [c / t if t else 0.0 for c in h.counts] + [0.0] * (nb - len(h.bins))
    ymax = max([f for fs in fracs.values() for f in fs] + [1e-9])
    slot = pw / nb
    bar = slot * 0.4
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-size="14">{title}</text>',
        f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" stroke="black"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" stroke="black"/>',
    ]
    for k, tag in enumerate((Label.NORMAL, Label.ATTACK)):
        for i, f in enumerate(fracs[tag]):
            if f <= 0:
                continue
            h = ph * f / ymax
            x = left + i * slot + slot * 0.1 + k * bar
            parts.append(f'<rect x="{x:.2f}" y="{top + ph - h:.2f}" width="{bar:.2f}" '
                         f'height="{h:.2f}" fill="{_COLORS[tag]}"/>')
    ref = normal if normal.bins else attack
    step = max(1, nb // 10)
    for i in range(0, len(ref.bins), step):
        edge = ref.bins[i][0]
        label = f"{edge:g}"
        parts.append(f'<text x="{left + i * slot:.2f}" y="{top + ph + 14}" '
                     f'text-anchor="middle">{label}</text>')
    for q in (0.0, 0.5, 1.0):
        y = top + ph - ph * q
        parts.append(f'<text x="{left - 4}" y="{y + 4:.2f}" text-anchor="end">{q * ymax:.2f}</text>')
    parts += [
        f'<text x="{left + pw / 2:.1f}" y="{height - 16}" text-anchor="middle">{xlabel}</text>',
        f'<text x="14" y="{top + ph / 2:.1f}" text-anchor="middle" '
        f'transform="rotate(-90 14 {top + ph / 2:.1f})">fraction of flows</text>',
        f'<rect x="{left + pw - 110}" y="{top}" width="10" height="10" fill="{_COLORS[Label.NORMAL]}"/>',
        f'<text x="{left + pw - 96}" y="{top + 9}">normal ({normal.total})</text>',
        f'<rect x="{left + pw - 110}" y="{top + 14}" width="10" height="10" fill="{_COLORS[Label.ATTACK]}"/>',
        f'<text x="{left + pw - 96}" y="{top + 23}">attack ({attack.total})</text>',
        "</svg>",
    ]
    return "\n".join(parts) + "\n"
