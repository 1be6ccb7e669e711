"""Desk-scale synthetic header traffic with a matching attack schedule.

Normal flows draw packet lengths uniformly from a range; attack flows keep a
near-constant length (base +/- jitter), and DoS flows pour 1e5..5e5 packets
into a single slice. Attackers get dedicated addresses so that no normal
packet falls inside an attack window for the same pair.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .ingest import PacketRecord
from .labeling import AttackEvent

BASE_TS = 896_400_000.0  # early June 1998
INTERNAL_NET = 0xAC100000  # 172.16.0.0
EXTERNAL_NET = 0xC0A80000  # 192.168.0.0 (stands in for outside hosts)
ATTACKER_NET = 0xCA4DA200  # 202.77.162.0


@dataclass(frozen=True)
class SynthSpec:
    normal_flows: int = 500
    attack_flows: int = 100
    normal_len_range: tuple[int, int] = (40, 1500)
    attack_len_jitter: int = 10
    dos_flows: int = 1
    dos_packets: tuple[int, int] = (100_000, 500_000)
    normal_packets: tuple[int, int] = (1, 200)
    attack_packets: tuple[int, int] = (3, 60)
    reply_fraction: float = 0.5
    hosts: int = 40
    attackers: int = 8
    duration: float = 86_400.0
    slice_duration: float = 60.0
    seed: int = 0

    def __post_init__(self):
        for name in ("normal_flows", "attack_flows", "dos_flows", "attack_len_jitter"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        lo, hi = self.normal_len_range
        if not 20 <= lo < hi <= 65535:
            raise ValueError("normal_len_range must satisfy 20 <= min < max <= 65535")
        for name in ("dos_packets", "normal_packets", "attack_packets"):
            a, b = getattr(self, name)
            if not 1 <= a <= b:
                raise ValueError(f"{name} must satisfy 1 <= min <= max")
        if self.hosts < 2 or self.attackers < 1:
            raise ValueError("need at least 2 hosts and 1 attacker")
        if self.duration < self.slice_duration or self.slice_duration <= 0:
            raise ValueError("duration must cover at least one slice")
        if not 0 <= self.reply_fraction <= 1:
            raise ValueError("reply_fraction must lie in [0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class _Builder:
    src: list = field(default_factory=list)
    dst: list = field(default_factory=list)
    length: list = field(default_factory=list)
    ttl: list = field(default_factory=list)
    ts: list = field(default_factory=list)

    def add(self, src, dst, lengths, ttl, ts):
        n = len(ts)
        self.src.append(np.full(n, src, dtype=np.int64))
        self.dst.append(np.full(n, dst, dtype=np.int64))
        self.length.append(np.asarray(lengths, dtype=np.int64))
        self.ttl.append(np.full(n, ttl, dtype=np.int64))
        self.ts.append(np.asarray(ts, dtype=np.float64))


def _times(rng, slot_start: float, width: float, n: int) -> np.ndarray:
    # microsecond grid inside [slot_start, slot_start + width)
    us = rng.integers(0, int(width * 1e6), size=n)
    return np.sort(slot_start + us / 1e6)


def generate(spec: SynthSpec = SynthSpec()) -> tuple[list[PacketRecord], list[AttackEvent]]:
    """Records in timestamp order plus one schedule row per attack or DoS flow.

    All flows stay inside one ``slice_duration`` slot aligned to BASE_TS, and
    a packet at exactly BASE_TS anchors the default slicing epoch.
    """
    rng = np.random.default_rng(spec.seed)
    n_slots = int(spec.duration // spec.slice_duration)
    sd = spec.slice_duration
    width = sd * 0.95
    internal = INTERNAL_NET + 1 + np.arange(spec.hosts // 2)
    external = EXTERNAL_NET + 1 + np.arange(spec.hosts - spec.hosts // 2)
    hosts = np.concatenate([internal, external])
    attackers = ATTACKER_NET + 1 + np.arange(spec.attackers)
    lo, hi = spec.normal_len_range

    b = _Builder()
    events: list[AttackEvent] = []

    b.add(int(internal[0]), int(external[0]), [lo], 64, [BASE_TS])

    for _ in range(spec.normal_flows):
        s, d = rng.choice(len(hosts), size=2, replace=False)
        slot = rng.integers(0, n_slots)
        # log-uniform packet counts: many short flows, a few long ones
        a, z = spec.normal_packets
        n = int(np.floor(np.exp(rng.uniform(np.log(a), np.log(z + 1)))))
        n = min(max(n, a), z)
        b.add(int(hosts[s]), int(hosts[d]), rng.integers(lo, hi + 1, size=n),
              int(rng.integers(32, 129)), _times(rng, BASE_TS + slot * sd, width, n))

    jitter = spec.attack_len_jitter

    def attack_lengths(n):
        base = int(rng.integers(lo + jitter, hi - jitter + 1)) if hi - lo > 2 * jitter else (lo + hi) // 2
        return np.clip(base + rng.integers(-jitter, jitter + 1, size=n), 20, 65535)

    def add_attack(name: str, n: int):
        atk = int(attackers[rng.integers(0, len(attackers))])
        victim = int(internal[rng.integers(0, len(internal))])
        slot = rng.integers(1, n_slots)
        ts = _times(rng, BASE_TS + slot * sd, width, n)
        b.add(atk, victim, attack_lengths(n), int(rng.integers(32, 129)), ts)
        events.append(AttackEvent(atk, victim, float(round(ts[0], 6)), float(round(ts[-1], 6)), name))
        if spec.reply_fraction > 0 and not name.startswith("dos"):
            m = int(round(n * spec.reply_fraction))
            if m:
                rts = np.sort(rng.choice(ts, size=m, replace=False))
                b.add(victim, atk, attack_lengths(m), 64, rts)

    for i in range(spec.attack_flows):
        a, z = spec.attack_packets
        add_attack(f"attack{i:04d}", int(rng.integers(a, z + 1)))
    for i in range(spec.dos_flows):
        a, z = spec.dos_packets
        add_attack(f"dos{i:04d}", int(rng.integers(a, z + 1)))

    src = np.concatenate(b.src)
    dst = np.concatenate(b.dst)
    length = np.concatenate(b.length)
    ttl = np.concatenate(b.ttl)
    ts = np.concatenate(b.ts)
    order = np.lexsort((dst, src, ts))
    ts = np.round(ts, 6)
    assert length.min() >= 20 and length.max() <= 65535 and ts.min() >= 0
    make = PacketRecord.trusted
    records = [make(s, d, n, t, x) for s, d, n, t, x in zip(
        src[order].tolist(), dst[order].tolist(), length[order].tolist(),
        ttl[order].tolist(), ts[order].tolist())]
    events.sort(key=lambda e: (e.start_ts, e.end_ts, e.src, e.dst, e.name))
    return records, events
