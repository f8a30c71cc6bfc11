"""Classic libpcap traces with bit-addressable protocol fields.

A :class:`Trace` keeps every pcap record verbatim so that an unmodified
trace serializes back to the exact input bytes.  Each Ethernet/IPv4 frame
gets a *layout*: a map from :class:`FieldPath` to the ``(bit_offset,
bit_width)`` range of that field inside the frame.  Fields are read and
overwritten through the layout only; nothing else in the frame is touched
and checksums are left alone unless :func:`recompute_checksums` is called.
"""

from __future__ import annotations

import dataclasses
import enum
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

from idsutil.errors import BadMagic, FieldAbsent, TruncatedRecord, WidthMismatch

LINKTYPE_ETHERNET = 1

_MAGIC_LE = b"\xd4\xc3\xb2\xa1"
_MAGIC_BE = b"\xa1\xb2\xc3\xd4"
_NANO_MAGICS = (b"\x4d\x3c\xb2\xa1", b"\xa1\xb2\x3c\x4d")

GLOBAL_HEADER_LEN = 24
RECORD_HEADER_LEN = 16

_VLAN_ETHERTYPES = (0x8100, 0x88A8, 0x9100)
_ETHERTYPE_IPV4 = 0x0800


class DataType(enum.Enum):
    BINARY = "binary"
    NUMERIC = "numeric"
    TIMESTAMP = "timestamp"


class Protocol(enum.Enum):
    TCP = "tcp"
    UDP = "udp"
    ICMP = "icmp"

    @classmethod
    def coerce(cls, value) -> "Protocol":
        if isinstance(value, Protocol):
            return value
        return cls(str(value).lower())


class FieldPath(enum.Enum):
    """Anonymizable pcap fields: ``(ordinal, data type, bit width)``; width None is variable."""

    SRC_MAC = (1, DataType.BINARY, 48)
    DST_MAC = (2, DataType.BINARY, 48)
    TS_SEC = (3, DataType.TIMESTAMP, 32)
    TS_USEC = (4, DataType.TIMESTAMP, 32)
    IPV4_SRC_IP = (5, DataType.BINARY, 32)
    IPV4_DST_IP = (6, DataType.BINARY, 32)
    IPV4_ID = (7, DataType.NUMERIC, 16)
    IPV4_OFFSET = (8, DataType.NUMERIC, 13)
    IPV4_TTL = (9, DataType.NUMERIC, 8)
    IPV4_CHECKSUM = (10, DataType.BINARY, 16)
    TCP_SRC_PORT = (11, DataType.NUMERIC, 16)
    TCP_DST_PORT = (12, DataType.NUMERIC, 16)
    TCP_SEQUENCE = (13, DataType.NUMERIC, 32)
    TCP_ACK_NO = (14, DataType.NUMERIC, 32)
    TCP_FLAGS = (15, DataType.BINARY, 8)
    TCP_WINDOW = (16, DataType.NUMERIC, 16)
    TCP_CHECKSUM = (17, DataType.BINARY, 16)
    TCP_URGENT = (18, DataType.NUMERIC, 16)
    TCP_OPTIONS = (19, DataType.BINARY, None)
    UDP_SRC_PORT = (20, DataType.NUMERIC, 16)
    UDP_DST_PORT = (21, DataType.NUMERIC, 16)
    UDP_CHECKSUM = (22, DataType.BINARY, 16)
    ICMP_TYPE = (23, DataType.NUMERIC, 8)
    ICMP_CODE = (24, DataType.NUMERIC, 8)
    ICMP_CHECKSUM = (25, DataType.BINARY, 16)
    ICMP_IDENTIFIER = (26, DataType.NUMERIC, 16)
    ICMP_SEQUENCE = (27, DataType.NUMERIC, 16)
    ICMP_GATEWAY = (28, DataType.BINARY, 32)
    ICMP_POINTER = (29, DataType.NUMERIC, 8)
    ICMP_TS_ORIG = (30, DataType.NUMERIC, 32)
    ICMP_TS_REC = (31, DataType.NUMERIC, 32)
    ICMP_TS_TRANS = (32, DataType.NUMERIC, 32)
    ICMP_ORIG_DATA = (33, DataType.BINARY, None)
    ICMP_IPV4_SRC_IP = (34, DataType.BINARY, 32)
    ICMP_IPV4_DST_IP = (35, DataType.BINARY, 32)
    ICMP_IPV4_ID = (36, DataType.NUMERIC, 16)
    ICMP_IPV4_OFFSET = (37, DataType.NUMERIC, 13)
    ICMP_IPV4_TTL = (38, DataType.NUMERIC, 8)
    ICMP_IPV4_CHECKSUM = (39, DataType.BINARY, 16)

    def __init__(self, ordinal: int, dtype: DataType, width: int | None):
        self.dtype = dtype
        self.width = width

    @property
    def variable_width(self) -> bool:
        return self.width is None

    @property
    def protocol(self) -> Protocol | None:
        for proto in Protocol:
            if self.name.startswith(proto.name + "_"):
                return proto
        return None

    @property
    def in_record_header(self) -> bool:
        return self in (FieldPath.TS_SEC, FieldPath.TS_USEC)

    @property
    def is_ipv4_address(self) -> bool:
        return self in _ADDRESS_FIELDS

    @classmethod
    def parse(cls, name: str) -> "FieldPath":
        try:
            return cls[name.strip().upper()]
        except KeyError:
            raise KeyError(name) from None


_ADDRESS_FIELDS = frozenset(
    {
        FieldPath.IPV4_SRC_IP,
        FieldPath.IPV4_DST_IP,
        FieldPath.ICMP_IPV4_SRC_IP,
        FieldPath.ICMP_IPV4_DST_IP,
        FieldPath.ICMP_GATEWAY,
    }
)


# -- field values ------------------------------------------------------------

@dataclass(frozen=True)
class Bits:
    """An unstructured bit string; ``value`` holds the bits MSB-first."""

    value: int
    width: int

    def __post_init__(self):
        if self.width < 0:
            raise ValueError("negative width")
        if not 0 <= self.value < (1 << self.width) and not (self.width == 0 and self.value == 0):
            raise WidthMismatch(f"value {self.value:#x} does not fit in {self.width} bits")

    def to_bytes(self) -> bytes:
        return self.value.to_bytes((self.width + 7) // 8, "big")


@dataclass(frozen=True)
class Number:
    """Unsigned integer interpreted in ``base`` (digits are the units)."""

    value: int
    base: int = 10

    def __post_init__(self):
        if self.value < 0:
            raise ValueError("numeric field values are unsigned")
        if self.base < 2:
            raise ValueError("base must be >= 2")


@dataclass(frozen=True, order=True)
class Timestamp:
    seconds: int
    microseconds: int = 0

    def __post_init__(self):
        if not 0 <= self.microseconds < 1_000_000:
            raise ValueError(f"microseconds out of range: {self.microseconds}")

    @property
    def total_us(self) -> int:
        return self.seconds * 1_000_000 + self.microseconds

    @classmethod
    def from_us(cls, total_us: int) -> "Timestamp":
        sec, usec = divmod(total_us, 1_000_000)
        return cls(sec, usec)


FieldValue = Bits | Number | Timestamp


# -- packets and traces ------------------------------------------------------

@dataclass(frozen=True)
class PacketRecord:
    ts_sec: int
    ts_usec: int
    captured_len: int
    original_len: int
    frame: bytes
    layout: Mapping[FieldPath, tuple[int, int]] = field(default_factory=dict)
    # byte range of the transport payload, None when no transport header parsed
    payload_span: tuple[int, int] | None = None

    @property
    def protocol(self) -> Protocol | None:
        if FieldPath.TCP_SRC_PORT in self.layout:
            return Protocol.TCP
        if FieldPath.UDP_SRC_PORT in self.layout:
            return Protocol.UDP
        if FieldPath.ICMP_TYPE in self.layout:
            return Protocol.ICMP
        return None

    @property
    def is_ipv4(self) -> bool:
        return FieldPath.IPV4_SRC_IP in self.layout

    @property
    def payload(self) -> bytes:
        if self.payload_span is None:
            return b""
        start, end = self.payload_span
        return self.frame[start:end]

    def has(self, path: FieldPath) -> bool:
        return path.in_record_header or path in self.layout

    def field_width(self, path: FieldPath) -> int:
        if path.in_record_header:
            return 32
        try:
            return self.layout[path][1]
        except KeyError:
            raise FieldAbsent(f"{path.name} not present in packet") from None


@dataclass(frozen=True)
class Trace:
    link_type: int
    snap_len: int
    byte_order: str  # "native": little-endian file, "swapped": big-endian file
    packets: tuple[PacketRecord, ...] = ()
    version: tuple[int, int] = (2, 4)
    thiszone: int = 0
    sigfigs: int = 0

    def __post_init__(self):
        if self.byte_order not in ("native", "swapped"):
            raise ValueError(f"byte_order must be 'native' or 'swapped', got {self.byte_order!r}")
        if not isinstance(self.packets, tuple):
            object.__setattr__(self, "packets", tuple(self.packets))

    def __len__(self):
        return len(self.packets)

    def __iter__(self):
        return iter(self.packets)

    @property
    def endian(self) -> str:
        return "<" if self.byte_order == "native" else ">"

    def with_packets(self, packets: Iterable[PacketRecord]) -> "Trace":
        return dataclasses.replace(self, packets=tuple(packets))


# -- layout construction -----------------------------------------------------

def _bytes_field(layout, path, byte_offset, byte_width):
    layout[path] = (byte_offset * 8, byte_width * 8)


def _ipv4_header(frame: bytes, start: int):
    """Return IHL in bytes if a complete IPv4 header starts at ``start``."""
    if len(frame) < start + 20:
        return None
    vihl = frame[start]
    if vihl >> 4 != 4:
        return None
    ihl = (vihl & 0x0F) * 4
    if ihl < 20 or len(frame) < start + ihl:
        return None
    return ihl


def _add_ipv4_fields(layout, start, id_path, off_path, ttl_path, sum_path, src_path, dst_path):
    _bytes_field(layout, id_path, start + 4, 2)
    layout[off_path] = ((start + 6) * 8 + 3, 13)
    _bytes_field(layout, ttl_path, start + 8, 1)
    _bytes_field(layout, sum_path, start + 10, 2)
    _bytes_field(layout, src_path, start + 12, 4)
    _bytes_field(layout, dst_path, start + 16, 4)


_ICMP_QUERY_TYPES = frozenset({0, 8, 13, 14, 15, 16, 17, 18})
_ICMP_ERROR_TYPES = frozenset({3, 4, 5, 11, 12})


def build_layout(frame: bytes, link_type: int = LINKTYPE_ETHERNET):
    """Walk Ethernet, IPv4 and TCP/UDP/ICMP headers of ``frame``.

    Returns ``(layout, payload_span)``.  Frames that are not Ethernet/IPv4,
    or whose IPv4 header is incomplete, get an empty layout.
    """
    layout: dict[FieldPath, tuple[int, int]] = {}
    if link_type != LINKTYPE_ETHERNET or len(frame) < 14:
        return layout, None

    l3 = 14
    ethertype = int.from_bytes(frame[12:14], "big")
    while ethertype in _VLAN_ETHERTYPES and len(frame) >= l3 + 4:
        ethertype = int.from_bytes(frame[l3 + 2:l3 + 4], "big")
        l3 += 4
    if ethertype != _ETHERTYPE_IPV4:
        return layout, None
    ihl = _ipv4_header(frame, l3)
    if ihl is None:
        return layout, None

    _bytes_field(layout, FieldPath.DST_MAC, 0, 6)
    _bytes_field(layout, FieldPath.SRC_MAC, 6, 6)
    _add_ipv4_fields(
        layout, l3,
        FieldPath.IPV4_ID, FieldPath.IPV4_OFFSET, FieldPath.IPV4_TTL,
        FieldPath.IPV4_CHECKSUM, FieldPath.IPV4_SRC_IP, FieldPath.IPV4_DST_IP,
    )

    frag_offset = int.from_bytes(frame[l3 + 6:l3 + 8], "big") & 0x1FFF
    if frag_offset:
        return layout, None

    total_len = int.from_bytes(frame[l3 + 2:l3 + 4], "big")
    ip_end = l3 + total_len if total_len >= ihl else len(frame)
    ip_end = min(ip_end, len(frame))
    proto = frame[l3 + 9]
    t = l3 + ihl
    payload_span = None

    if proto == 6 and len(frame) >= t + 20:
        doff = (frame[t + 12] >> 4) * 4
        if doff >= 20 and len(frame) >= t + doff:
            _bytes_field(layout, FieldPath.TCP_SRC_PORT, t, 2)
            _bytes_field(layout, FieldPath.TCP_DST_PORT, t + 2, 2)
            _bytes_field(layout, FieldPath.TCP_SEQUENCE, t + 4, 4)
            _bytes_field(layout, FieldPath.TCP_ACK_NO, t + 8, 4)
            _bytes_field(layout, FieldPath.TCP_FLAGS, t + 13, 1)
            _bytes_field(layout, FieldPath.TCP_WINDOW, t + 14, 2)
            _bytes_field(layout, FieldPath.TCP_CHECKSUM, t + 16, 2)
            _bytes_field(layout, FieldPath.TCP_URGENT, t + 18, 2)
            _bytes_field(layout, FieldPath.TCP_OPTIONS, t + 20, doff - 20)
            payload_span = (t + doff, max(t + doff, ip_end))
    elif proto == 17 and len(frame) >= t + 8:
        _bytes_field(layout, FieldPath.UDP_SRC_PORT, t, 2)
        _bytes_field(layout, FieldPath.UDP_DST_PORT, t + 2, 2)
        _bytes_field(layout, FieldPath.UDP_CHECKSUM, t + 6, 2)
        payload_span = (t + 8, max(t + 8, ip_end))
    elif proto == 1 and len(frame) >= t + 4:
        _add_icmp_fields(layout, frame, t, ip_end)
        body = t + 8 if len(frame) >= t + 8 else t + 4
        payload_span = (body, max(body, ip_end))
    return layout, payload_span


def _add_icmp_fields(layout, frame, t, ip_end):
    icmp_type = frame[t]
    _bytes_field(layout, FieldPath.ICMP_TYPE, t, 1)
    _bytes_field(layout, FieldPath.ICMP_CODE, t + 1, 1)
    _bytes_field(layout, FieldPath.ICMP_CHECKSUM, t + 2, 2)
    n = len(frame)
    if icmp_type in _ICMP_QUERY_TYPES and n >= t + 8:
        _bytes_field(layout, FieldPath.ICMP_IDENTIFIER, t + 4, 2)
        _bytes_field(layout, FieldPath.ICMP_SEQUENCE, t + 6, 2)
    if icmp_type in (13, 14) and n >= t + 20:
        _bytes_field(layout, FieldPath.ICMP_TS_ORIG, t + 8, 4)
        _bytes_field(layout, FieldPath.ICMP_TS_REC, t + 12, 4)
        _bytes_field(layout, FieldPath.ICMP_TS_TRANS, t + 16, 4)
    if icmp_type == 5 and n >= t + 8:
        _bytes_field(layout, FieldPath.ICMP_GATEWAY, t + 4, 4)
    if icmp_type == 12 and n >= t + 5:
        _bytes_field(layout, FieldPath.ICMP_POINTER, t + 4, 1)
    if icmp_type in _ICMP_ERROR_TYPES:
        inner = t + 8
        inner_ihl = _ipv4_header(frame, inner)
        if inner_ihl is not None:
            _add_ipv4_fields(
                layout, inner,
                FieldPath.ICMP_IPV4_ID, FieldPath.ICMP_IPV4_OFFSET, FieldPath.ICMP_IPV4_TTL,
                FieldPath.ICMP_IPV4_CHECKSUM, FieldPath.ICMP_IPV4_SRC_IP, FieldPath.ICMP_IPV4_DST_IP,
            )
            data_start = inner + inner_ihl
            data_end = max(data_start, ip_end)
            _bytes_field(layout, FieldPath.ICMP_ORIG_DATA, data_start, data_end - data_start)


def make_packet(frame: bytes, ts_sec: int = 0, ts_usec: int = 0, original_len: int | None = None,
                link_type: int = LINKTYPE_ETHERNET) -> PacketRecord:
    frame = bytes(frame)
    layout, span = build_layout(frame, link_type)
    return PacketRecord(
        ts_sec=ts_sec,
        ts_usec=ts_usec,
        captured_len=len(frame),
        original_len=len(frame) if original_len is None else original_len,
        frame=frame,
        layout=layout,
        payload_span=span,
    )


# -- pcap container ----------------------------------------------------------

def parse_pcap(data: bytes) -> Trace:
    data = bytes(data)
    magic = data[:4]
    if magic == _MAGIC_LE:
        endian, order = "<", "native"
    elif magic == _MAGIC_BE:
        endian, order = ">", "swapped"
    elif magic in _NANO_MAGICS:
        raise BadMagic("nanosecond-resolution pcap is not supported")
    else:
        raise BadMagic(f"not a pcap file (magic {magic.hex() or 'missing'})")
    if len(data) < GLOBAL_HEADER_LEN:
        raise TruncatedRecord("global header is shorter than 24 bytes")

    vmaj, vmin, thiszone, sigfigs, snaplen, network = struct.unpack_from(endian + "HHiIII", data, 4)
    rec_fmt = endian + "IIII"
    packets = []
    pos = GLOBAL_HEADER_LEN
    while pos < len(data):
        if pos + RECORD_HEADER_LEN > len(data):
            raise TruncatedRecord(f"record header at byte {pos} exceeds remaining {len(data) - pos} bytes")
        ts_sec, ts_usec, incl_len, orig_len = struct.unpack_from(rec_fmt, data, pos)
        pos += RECORD_HEADER_LEN
        if pos + incl_len > len(data):
            raise TruncatedRecord(
                f"record {len(packets)} claims {incl_len} bytes, only {len(data) - pos} remain")
        frame = data[pos:pos + incl_len]
        pos += incl_len
        layout, span = build_layout(frame, network)
        packets.append(PacketRecord(ts_sec, ts_usec, incl_len, orig_len, frame, layout, span))

    return Trace(
        link_type=network,
        snap_len=snaplen,
        byte_order=order,
        packets=tuple(packets),
        version=(vmaj, vmin),
        thiszone=thiszone,
        sigfigs=sigfigs,
    )


def write_pcap(trace: Trace) -> bytes:
    e = trace.endian
    out = [
        (_MAGIC_LE if e == "<" else _MAGIC_BE),
        struct.pack(e + "HHiIII", trace.version[0], trace.version[1], trace.thiszone,
                    trace.sigfigs, trace.snap_len, trace.link_type),
    ]
    rec = struct.Struct(e + "IIII")
    for p in trace.packets:
        out.append(rec.pack(p.ts_sec, p.ts_usec, len(p.frame), p.original_len))
        out.append(p.frame)
    return b"".join(out)


def read_pcap(path) -> Trace:
    return parse_pcap(Path(path).read_bytes())


def save_pcap(path, trace: Trace) -> None:
    Path(path).write_bytes(write_pcap(trace))


def filter_protocols(trace: Trace, keep) -> Trace:
    keep = {Protocol.coerce(k) for k in keep}
    return trace.with_packets(p for p in trace.packets if p.protocol in keep)


# -- field access ------------------------------------------------------------

def _read_bits(frame: bytes, offset: int, width: int) -> int:
    if width == 0:
        return 0
    if offset % 8 == 0 and width % 8 == 0:
        return int.from_bytes(frame[offset // 8:(offset + width) // 8], "big")
    first = offset // 8
    last = (offset + width + 7) // 8
    chunk = int.from_bytes(frame[first:last], "big")
    shift = last * 8 - (offset + width)
    return (chunk >> shift) & ((1 << width) - 1)


def _write_bits(frame: bytes, offset: int, width: int, value: int) -> bytes:
    if width == 0:
        return frame
    first = offset // 8
    last = (offset + width + 7) // 8
    nbytes = last - first
    chunk = int.from_bytes(frame[first:last], "big")
    shift = last * 8 - (offset + width)
    mask = ((1 << width) - 1) << shift
    chunk = (chunk & ~mask) | (value << shift)
    return frame[:first] + chunk.to_bytes(nbytes, "big") + frame[last:]


def get_field(packet: PacketRecord, path: FieldPath) -> FieldValue:
    if path.in_record_header:
        return Timestamp(packet.ts_sec, packet.ts_usec)
    try:
        offset, width = packet.layout[path]
    except KeyError:
        raise FieldAbsent(f"{path.name} not present in packet") from None
    raw = _read_bits(packet.frame, offset, width)
    if path.dtype is DataType.NUMERIC:
        return Number(raw)
    return Bits(raw, width)


def set_field(packet: PacketRecord, path: FieldPath, value: FieldValue) -> PacketRecord:
    """Return a copy of ``packet`` with exactly the bits of ``path`` replaced."""
    if path.in_record_header:
        if not isinstance(value, Timestamp):
            raise TypeError(f"{path.name} takes a Timestamp, got {type(value).__name__}")
        if path is FieldPath.TS_SEC:
            if not 0 <= value.seconds < 1 << 32:
                raise WidthMismatch(f"seconds {value.seconds} do not fit in 32 bits")
            return dataclasses.replace(packet, ts_sec=value.seconds)
        return dataclasses.replace(packet, ts_usec=value.microseconds)

    try:
        offset, width = packet.layout[path]
    except KeyError:
        raise FieldAbsent(f"{path.name} not present in packet") from None
    if isinstance(value, Bits):
        if value.width != width:
            raise WidthMismatch(f"{path.name} is {width} bits wide, value has {value.width}")
        raw = value.value
    elif isinstance(value, Number):
        if value.value >= 1 << width:
            raise WidthMismatch(f"{value.value} does not fit in {path.name} ({width} bits)")
        raw = value.value
    else:
        raise TypeError(f"{path.name} takes Bits or Number, got {type(value).__name__}")
    return dataclasses.replace(packet, frame=_write_bits(packet.frame, offset, width, raw))


# -- checksums (opt-in, never applied implicitly) ----------------------------

def internet_checksum(data: bytes) -> int:
    if len(data) % 2:
        data += b"\x00"
    total = sum(struct.unpack(f"!{len(data) // 2}H", data))
    while total >> 16:
        total = (total & 0xFFFF) + (total >> 16)
    return ~total & 0xFFFF


def recompute_checksums(packet: PacketRecord) -> PacketRecord:
    """Recompute IPv4, TCP, UDP and ICMP checksums where the data is fully captured."""
    layout = packet.layout
    if FieldPath.IPV4_SRC_IP not in layout:
        return packet
    frame = bytearray(packet.frame)
    l3 = layout[FieldPath.IPV4_ID][0] // 8 - 4
    ihl = (frame[l3] & 0x0F) * 4
    total_len = int.from_bytes(frame[l3 + 2:l3 + 4], "big")
    frame[l3 + 10:l3 + 12] = b"\x00\x00"
    frame[l3 + 10:l3 + 12] = internet_checksum(bytes(frame[l3:l3 + ihl])).to_bytes(2, "big")

    t = l3 + ihl
    seg_end = l3 + total_len
    complete = seg_end <= len(frame) and total_len >= ihl and packet.original_len == packet.captured_len
    proto = frame[l3 + 9]
    if complete and proto in (6, 17) and packet.protocol in (Protocol.TCP, Protocol.UDP):
        csum_at = t + (16 if proto == 6 else 6)
        pseudo = bytes(frame[l3 + 12:l3 + 20]) + struct.pack("!BBH", 0, proto, seg_end - t)
        frame[csum_at:csum_at + 2] = b"\x00\x00"
        value = internet_checksum(pseudo + bytes(frame[t:seg_end]))
        if proto == 17 and value == 0:
            value = 0xFFFF
        frame[csum_at:csum_at + 2] = value.to_bytes(2, "big")
    elif complete and proto == 1 and packet.protocol is Protocol.ICMP:
        frame[t + 2:t + 4] = b"\x00\x00"
        frame[t + 2:t + 4] = internet_checksum(bytes(frame[t:seg_end])).to_bytes(2, "big")
    return dataclasses.replace(packet, frame=bytes(frame))
