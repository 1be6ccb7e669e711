"""Header-only packet ingestion.

Only the outer IP header and the capture timestamp are read. Transport
headers and payload bytes are never touched, so everything downstream sees
exactly what an observer of IPsec-encrypted traffic would see.
"""

from __future__ import annotations

import enum
import functools
import io
import ipaddress
import math
import struct
from dataclasses import dataclass
from typing import BinaryIO, Iterable, Iterator, NamedTuple, TextIO

__all__ = [
    "Label",
    "PacketRecord",
    "CaptureMeta",
    "FormatError",
    "ip_to_int",
    "int_to_ip",
    "parse_pcap",
    "parse_header_tsv",
    "write_header_tsv",
    "iter_header_tsv",
]

PCAP_MAGIC = 0xA1B2C3D4
PCAP_MAGIC_NSEC = 0xA1B23C4D
GLOBAL_HEADER_LEN = 24
RECORD_HEADER_LEN = 16

LINKTYPE_NULL = 0
LINKTYPE_ETHERNET = 1
LINKTYPE_RAW = 101
LINKTYPE_LINUX_SLL = 113
LINKTYPE_IPV4 = 228
LINKTYPE_IPV6 = 229

ETHERTYPE_IPV4 = 0x0800
ETHERTYPE_IPV6 = 0x86DD
ETHERTYPE_VLAN = (0x8100, 0x88A8)

IPV4_MIN_HEADER = 20
IPV6_HEADER = 40
MAX_IP = (1 << 128) - 1


class FormatError(ValueError):
    """Raised for unreadable capture or header files.

    ``line`` is set for line-oriented formats.
    """

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class Label(enum.IntEnum):
    NORMAL = 0
    ATTACK = 1
    ATTACK_REPLY = 2


class _PacketFields(NamedTuple):
    src: int
    dst: int
    length: int
    ttl: int
    ts: float
    label: Label = Label.NORMAL


class PacketRecord(_PacketFields):
    """One IP header observation (immutable).

    Addresses are integers; IPv4 sits in the low 32 bits. ``ts`` is kept at
    microsecond precision.
    """

    __slots__ = ()

    def __new__(cls, src: int, dst: int, length: int, ttl: int, ts: float,
                label: Label = Label.NORMAL):
        if not (0 <= src <= MAX_IP and 0 <= dst <= MAX_IP):
            raise ValueError(f"address out of range: {src}, {dst}")
        if not 0 <= ttl <= 255:
            raise ValueError(f"ttl out of range: {ttl}")
        if not IPV4_MIN_HEADER <= length <= 65535:
            raise ValueError(f"length out of range: {length}")
        if not 0 <= ts < math.inf:
            raise ValueError(f"timestamp must be finite and non-negative: {ts}")
        return _tuple_new(cls, (src, dst, length, ttl, round(float(ts), 6), Label(label)))

    @classmethod
    def trusted(cls, src: int, dst: int, length: int, ttl: int, ts: float,
                label: Label = Label.NORMAL) -> "PacketRecord":
        """Build without validation, for callers whose values are already in range."""
        return _tuple_new(cls, (src, dst, length, ttl, ts, label))

    def with_label(self, label: Label) -> "PacketRecord":
        if label == self[5]:
            return self
        if type(label) is not Label:
            label = Label(label)
        return _tuple_new(PacketRecord, (self[0], self[1], self[2], self[3], self[4], label))


_tuple_new = tuple.__new__


@dataclass(frozen=True)
class CaptureMeta:
    record_count: int = 0
    first_ts: float | None = None
    last_ts: float | None = None
    skipped_frames: int = 0
    link_type: int | None = None

    def to_dict(self) -> dict:
        return {
            "record_count": self.record_count,
            "first_ts": self.first_ts,
            "last_ts": self.last_ts,
            "skipped_frames": self.skipped_frames,
            "link_type": self.link_type,
        }


def ip_to_int(text: str) -> int:
    return int(ipaddress.ip_address(text.strip()))


@functools.lru_cache(maxsize=1 << 16)
def int_to_ip(value: int) -> str:
    if 0 <= value <= 0xFFFFFFFF:
        return f"{value >> 24}.{(value >> 16) & 255}.{(value >> 8) & 255}.{value & 255}"
    return str(ipaddress.IPv6Address(value))


# --------------------------------------------------------------------------
# pcap


def _read_exact(stream: BinaryIO, n: int) -> bytes:
    buf = stream.read(n)
    return buf if buf is not None else b""


def _ip_offset(link_type: int, frame: bytes, endian: str) -> int | None:
    """Offset of the IP header inside ``frame``, or None for non-IP frames."""
    if link_type in (LINKTYPE_RAW, LINKTYPE_IPV4, LINKTYPE_IPV6):
        return 0
    if link_type == LINKTYPE_ETHERNET:
        off = 12
        while True:
            if len(frame) < off + 2:
                return None
            (ethertype,) = struct.unpack_from("!H", frame, off)
            if ethertype in ETHERTYPE_VLAN:
                off += 4
                continue
            if ethertype in (ETHERTYPE_IPV4, ETHERTYPE_IPV6):
                return off + 2
            return None
    if link_type == LINKTYPE_LINUX_SLL:
        if len(frame) < 16:
            return None
        (proto,) = struct.unpack_from("!H", frame, 14)
        return 16 if proto in (ETHERTYPE_IPV4, ETHERTYPE_IPV6) else None
    if link_type == LINKTYPE_NULL:
        if len(frame) < 4:
            return None
        (family,) = struct.unpack_from(endian + "I", frame, 0)
        # AF_INET is 2 everywhere; AF_INET6 varies by OS (10, 24, 28, 30)
        return 4 if family in (2, 10, 24, 28, 30) else None
    raise FormatError(f"unsupported link type {link_type}")


def _decode_ip(frame: bytes, off: int, ts: float) -> PacketRecord | None:
    if len(frame) < off + 1:
        return None
    version = frame[off] >> 4
    if version == 4:
        if len(frame) < off + IPV4_MIN_HEADER:
            return None
        total_len, = struct.unpack_from("!H", frame, off + 2)
        ttl = frame[off + 8]
        src, dst = struct.unpack_from("!II", frame, off + 12)
        if total_len < IPV4_MIN_HEADER:
            return None
        return PacketRecord(src, dst, total_len, ttl, ts)
    if version == 6:
        if len(frame) < off + IPV6_HEADER:
            return None
        payload_len, = struct.unpack_from("!H", frame, off + 4)
        hop_limit = frame[off + 7]
        src = int.from_bytes(frame[off + 8:off + 24], "big")
        dst = int.from_bytes(frame[off + 24:off + 40], "big")
        length = payload_len + IPV6_HEADER
        if length > 65535:
            # jumbogram; the 16-bit contract cannot hold it
            return None
        return PacketRecord(src, dst, length, hop_limit, ts)
    return None


def iter_pcap(stream: BinaryIO, meta_out: list | None = None) -> Iterator[PacketRecord]:
    """Stream records from a classic pcap file.

    If ``meta_out`` is a list, a :class:`CaptureMeta` is appended to it once
    the stream is exhausted.
    """
    header = _read_exact(stream, GLOBAL_HEADER_LEN)
    if len(header) < GLOBAL_HEADER_LEN:
        raise FormatError(f"pcap global header truncated ({len(header)} of 24 bytes)")
    magic_le, = struct.unpack_from("<I", header, 0)
    magic_be, = struct.unpack_from(">I", header, 0)
    if magic_le in (PCAP_MAGIC, PCAP_MAGIC_NSEC):
        endian, magic = "<", magic_le
    elif magic_be in (PCAP_MAGIC, PCAP_MAGIC_NSEC):
        endian, magic = ">", magic_be
    else:
        raise FormatError(f"not a classic pcap file (magic 0x{magic_le:08x})")
    _, _, _, _, _, link_type = struct.unpack_from(endian + "HHiIII", header, 4)
    link_type &= 0xFFFF
    known = (LINKTYPE_NULL, LINKTYPE_ETHERNET, LINKTYPE_RAW, LINKTYPE_LINUX_SLL,
             LINKTYPE_IPV4, LINKTYPE_IPV6)
    if link_type not in known:
        raise FormatError(f"unsupported link type {link_type}")
    divisor = 1e9 if magic == PCAP_MAGIC_NSEC else 1e6

    count = skipped = 0
    first = last = None
    while True:
        rec_hdr = _read_exact(stream, RECORD_HEADER_LEN)
        if not rec_hdr:
            break
        if len(rec_hdr) < RECORD_HEADER_LEN:
            skipped += 1
            break
        ts_sec, ts_frac, incl_len, _orig_len = struct.unpack(endian + "IIII", rec_hdr)
        frame = _read_exact(stream, incl_len)
        if len(frame) < incl_len:
            skipped += 1
            break
        ts = ts_sec + ts_frac / divisor
        off = _ip_offset(link_type, frame, endian)
        rec = None if off is None else _decode_ip(frame, off, ts)
        if rec is None:
            skipped += 1
            continue
        count += 1
        if first is None:
            first = rec.ts
        last = rec.ts
        yield rec
    if meta_out is not None:
        meta_out.append(CaptureMeta(count, first, last, skipped, link_type))


def parse_pcap(data: bytes | BinaryIO) -> tuple[list[PacketRecord], CaptureMeta]:
    """Parse a classic pcap capture into header records.

    Accepts raw bytes or a binary file object. Frames that are not IPv4/IPv6
    or are cut short are skipped and counted.
    """
    stream = io.BytesIO(data) if isinstance(data, (bytes, bytearray, memoryview)) else data
    meta: list[CaptureMeta] = []
    records = list(iter_pcap(stream, meta))
    return records, meta[0]


# --------------------------------------------------------------------------
# header TSV (tshark -T fields order: ip.src ip.dst ip.len ip.ttl frame.time_epoch)


def _parse_line(line: str, lineno: int) -> PacketRecord:
    parts = line.rstrip("\r\n").split("\t")
    if len(parts) not in (5, 6):
        raise FormatError(f"expected 5 or 6 tab-separated fields, got {len(parts)}", lineno)
    try:
        src = ip_to_int(parts[0])
        dst = ip_to_int(parts[1])
        length = int(parts[2])
        ttl = int(parts[3])
        ts = float(parts[4])
        label = Label(int(parts[5])) if len(parts) == 6 else Label.NORMAL
        return PacketRecord(src, dst, length, ttl, ts, label)
    except ValueError as exc:
        raise FormatError(str(exc), lineno) from None


def iter_header_tsv(stream: Iterable[str]) -> Iterator[PacketRecord]:
    for lineno, line in enumerate(stream, start=1):
        if not line.strip():
            continue
        yield _parse_line(line, lineno)


def parse_header_tsv(stream: TextIO | str | Iterable[str]) -> list[PacketRecord]:
    """Parse tshark-style header lines. A string argument is parsed as text."""
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    return list(iter_header_tsv(stream))


def _format_record(r: PacketRecord, with_label: bool) -> str:
    row = f"{int_to_ip(r.src)}\t{int_to_ip(r.dst)}\t{r.length}\t{r.ttl}\t{r.ts:.6f}"
    if with_label:
        row += f"\t{int(r.label)}"
    return row + "\n"


def write_header_tsv(records: Iterable[PacketRecord], out: TextIO | None = None) -> str | None:
    """Serialize records; the label column appears only if some label is non-zero.

    Returns the text when ``out`` is None, otherwise writes to ``out``.
    """
    records = list(records)
    with_label = any(r.label != Label.NORMAL for r in records)
    text = "".join(_format_record(r, with_label) for r in records)
    if out is None:
        return text
    out.write(text)
    return None
