"""Attack schedules and per-packet labels (0 normal, 1 attack, 2 attack reply)."""

from __future__ import annotations

import bisect
import csv
import io
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Sequence, TextIO

from .ingest import FormatError, Label, PacketRecord, int_to_ip, ip_to_int

DEFAULT_SLACK = 60.0


@dataclass(frozen=True, slots=True)
class AttackEvent:
    src: int
    dst: int
    start_ts: float
    end_ts: float
    name: str = ""

    def __post_init__(self):
        if self.end_ts < self.start_ts:
            raise ValueError(f"attack {self.name!r} ends before it starts")


def parse_attack_schedule(stream: TextIO | str) -> list[AttackEvent]:
    """Read ``name,src,dst,start,duration`` rows, returned sorted by start time.

    Blank lines and lines starting with ``#`` are ignored.
    """
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    events = []
    for lineno, row in enumerate(csv.reader(stream), start=1):
        if not row or not "".join(row).strip() or row[0].lstrip().startswith("#"):
            continue
        if len(row) != 5:
            raise FormatError(f"expected 5 comma-separated fields, got {len(row)}", lineno)
        name, src, dst, start, duration = (f.strip() for f in row)
        try:
            src_i, dst_i = ip_to_int(src), ip_to_int(dst)
            start_f, dur_f = float(start), float(duration)
        except ValueError as exc:
            raise FormatError(str(exc), lineno) from None
        if dur_f < 0:
            raise FormatError(f"negative duration {dur_f}", lineno)
        events.append(AttackEvent(src_i, dst_i, round(start_f, 6), round(start_f + dur_f, 6), name))
    events.sort(key=lambda e: (e.start_ts, e.end_ts, e.src, e.dst, e.name))
    return events


def write_attack_schedule(events: Iterable[AttackEvent], out: TextIO | None = None) -> str | None:
    buf = io.StringIO() if out is None else out
    w = csv.writer(buf, lineterminator="\n")
    for e in events:
        w.writerow([e.name, int_to_ip(e.src), int_to_ip(e.dst),
                    f"{e.start_ts:.6f}", f"{e.end_ts - e.start_ts:.6f}"])
    return buf.getvalue() if out is None else None


def _window_index(events: Sequence[AttackEvent], slack: float) -> dict:
    """(src, dst) -> (sorted lows, highs) of merged [start - slack, end + slack] windows."""
    raw = defaultdict(list)
    for e in events:
        raw[(e.src, e.dst)].append((e.start_ts - slack, e.end_ts + slack))
    index = {}
    for pair, wins in raw.items():
        wins.sort()
        merged = [list(wins[0])]
        for lo, hi in wins[1:]:
            if lo <= merged[-1][1]:
                merged[-1][1] = max(merged[-1][1], hi)
            else:
                merged.append([lo, hi])
        index[pair] = ([w[0] for w in merged], [w[1] for w in merged])
    return index


def _hit(windows, ts: float) -> bool:
    if windows is None:
        return False
    lows, highs = windows
    i = bisect.bisect_right(lows, ts) - 1
    return i >= 0 and ts <= highs[i]


def label_packets(records: Iterable[PacketRecord], events: Sequence[AttackEvent],
                  slack: float = DEFAULT_SLACK) -> list[PacketRecord]:
    """Return a copy of ``records`` with labels set from the attack schedule.

    A packet matching an event's (src, dst) within ``[start - slack, end + slack]``
    gets label 1; one matching the reversed pair in the same window gets 2.
    Label 1 wins when both apply. Existing labels are overwritten.
    """
    if slack < 0:
        raise ValueError("slack must be non-negative")
    index = _window_index(events, slack)
    get = index.get
    out = []
    append = out.append
    for r in records:
        src, dst, _, _, ts, old = r
        if _hit(get((src, dst)), ts):
            label = Label.ATTACK
        elif _hit(get((dst, src)), ts):
            label = Label.ATTACK_REPLY
        else:
            label = Label.NORMAL
        append(r if old is label else r.with_label(label))
    return out


def binarize(labels: Iterable[int], reply_is_attack: bool = False) -> list[bool]:
    """Map 0/1/2 labels to attack truth. Replies count as normal unless asked."""
    attack = {Label.ATTACK, Label.ATTACK_REPLY} if reply_is_attack else {Label.ATTACK}
    return [int(v) in attack for v in labels]
