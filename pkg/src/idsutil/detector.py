"""Alert sets: Snort CSV ingestion and a small stateless signature engine.

The CSV layout is Snort's ``alert_csv`` "default" column order, 27 columns,
no header.  The built-in engine evaluates per-packet header/payload
signatures only; it exists so that sweeps can run without an external IDS.

Rule file grammar, one rule per line (``#`` comments)::

    rule sid=<int> msg="<text>" proto=<TCP|UDP|ICMP> <pred>(,<pred>)*

Predicates::

    srcport==20   dstport<1024   port==0 (either port)   dstport=1..1023
    flags&0x12==0x02   src=10.0.0.0/8   dst=192.168.1.0/24
    content="GET /"    icontent="root"   (\\xNN escapes allowed)
"""

from __future__ import annotations

import csv
import datetime as dt
import hashlib
import io
import ipaddress
import operator
import re
from collections import Counter
from dataclasses import asdict, dataclass, fields
from typing import Iterable, Sequence

from idsutil.errors import BadColumnCount, BadFieldFormat, RuleSyntaxError
from idsutil.trace import FieldPath, PacketRecord, Protocol, Trace, get_field

ALERT_FIELDS = (
    "timestamp", "sig_generator", "sig_id", "sig_rev", "msg", "proto",
    "src", "srcport", "dst", "dstport",
    "ethsrc", "ethdst", "ethlen", "tcpflags", "tcpseq", "tcpack", "tcplen", "tcpwindow", "ttl",
    "tos", "id", "dgmlen", "iplen", "icmptype", "icmpcode", "icmpid", "icmpseq",
)

_DEC_COLUMNS = frozenset({
    "sig_generator", "sig_id", "sig_rev", "srcport", "dstport", "ttl", "tos", "id",
    "dgmlen", "iplen", "icmptype", "icmpcode", "icmpid", "icmpseq",
})
_HEX_COLUMNS = frozenset({"ethlen", "tcpseq", "tcpack", "tcplen", "tcpwindow"})


@dataclass(frozen=True, kw_only=True)
class Alert:
    timestamp: str | None = None
    sig_generator: int | None = None
    sig_id: int
    sig_rev: int | None = None
    msg: str | None = None
    proto: str | None = None
    src: str | None = None
    srcport: int | None = None
    dst: str | None = None
    dstport: int | None = None
    ethsrc: str | None = None
    ethdst: str | None = None
    ethlen: int | None = None
    tcpflags: str | None = None
    tcpseq: int | None = None
    tcpack: int | None = None
    tcplen: int | None = None
    tcpwindow: int | None = None
    ttl: int | None = None
    tos: int | None = None
    id: int | None = None
    dgmlen: int | None = None
    iplen: int | None = None
    icmptype: int | None = None
    icmpcode: int | None = None
    icmpid: int | None = None
    icmpseq: int | None = None

    def project(self, names: Sequence[str]) -> tuple:
        return tuple(getattr(self, n) for n in names)


assert tuple(f.name for f in fields(Alert)) == ALERT_FIELDS

AlertSet = list  # multiset of Alert: duplicates are meaningful


# -- CSV ---------------------------------------------------------------------

def _parse_cell(name: str, text: str, line: int, column: int):
    if text == "":
        return None
    if name in _DEC_COLUMNS or name in _HEX_COLUMNS:
        try:
            return int(text, 16) if text[:2].lower() == "0x" else int(text)
        except ValueError:
            raise BadFieldFormat(f"{name}: expected an integer, got {text!r}", line, column) from None
    return text


def _is_header(row: list[str]) -> bool:
    return [c.strip().lower() for c in row] in (
        list(ALERT_FIELDS), [("icmpcoe" if n == "icmpcode" else n) for n in ALERT_FIELDS])


def parse_snort_csv(text: str) -> list[Alert]:
    alerts = []
    reader = csv.reader(io.StringIO(text))
    for row in reader:
        line = reader.line_num
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if not alerts and _is_header(row):
            continue
        if len(row) != len(ALERT_FIELDS):
            raise BadColumnCount(f"expected {len(ALERT_FIELDS)} columns, got {len(row)}", line)
        values = {n: _parse_cell(n, c.strip(), line, i + 1) for i, (n, c) in enumerate(zip(ALERT_FIELDS, row))}
        if values["sig_id"] is None:
            raise BadFieldFormat("sig_id is required", line, ALERT_FIELDS.index("sig_id") + 1)
        alerts.append(Alert(**values))
    return alerts


def _format_cell(name: str, value) -> str:
    if value is None:
        return ""
    if name in _HEX_COLUMNS:
        return f"0x{value:X}"
    return str(value)


def write_snort_csv(alerts: Iterable[Alert]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    for a in alerts:
        d = asdict(a)
        writer.writerow([_format_cell(n, d[n]) for n in ALERT_FIELDS])
    return buf.getvalue()


# -- rules -------------------------------------------------------------------

_OPS = {
    "==": operator.eq, "!=": operator.ne, "<": operator.lt,
    "<=": operator.le, ">": operator.gt, ">=": operator.ge,
}


@dataclass(frozen=True)
class PortPredicate:
    which: str  # "src", "dst" or "any"
    op: str
    lo: int
    hi: int | None = None  # set for inclusive ranges

    def test(self, value: int) -> bool:
        if self.op == "range":
            return self.lo <= value <= self.hi
        return _OPS[self.op](value, self.lo)

    def matches(self, view: "PacketView") -> bool:
        if view.sport is None:
            return False
        if self.which == "src":
            return self.test(view.sport)
        if self.which == "dst":
            return self.test(view.dport)
        return self.test(view.sport) or self.test(view.dport)

    def __str__(self):
        name = {"src": "srcport", "dst": "dstport", "any": "port"}[self.which]
        if self.op == "range":
            return f"{name}={self.lo}..{self.hi}"
        return f"{name}{self.op}{self.lo}"


@dataclass(frozen=True)
class FlagPredicate:
    mask: int
    value: int

    def matches(self, view):
        return view.flags is not None and view.flags & self.mask == self.value

    def __str__(self):
        return f"flags&0x{self.mask:02X}==0x{self.value:02X}"


@dataclass(frozen=True)
class AddressPredicate:
    which: str  # "src" or "dst"
    network: ipaddress.IPv4Network

    def matches(self, view):
        addr = view.src if self.which == "src" else view.dst
        return addr is not None and (addr & int(self.network.netmask)) == int(self.network.network_address)

    def __str__(self):
        return f"{self.which}={self.network}"


@dataclass(frozen=True)
class ContentPredicate:
    needle: bytes
    nocase: bool = False

    def matches(self, view):
        if self.nocase:
            return self.needle.lower() in view.payload.lower()
        return self.needle in view.payload

    def __str__(self):
        body = "".join(
            chr(b) if 0x20 <= b < 0x7F and b not in (0x22, 0x5C) else f"\\x{b:02x}" for b in self.needle)
        return f'{"icontent" if self.nocase else "content"}="{body}"'


@dataclass(frozen=True)
class Rule:
    sid: int
    msg: str
    proto: Protocol
    predicates: tuple
    rev: int = 1
    gid: int = 1

    def matches(self, view: "PacketView") -> bool:
        return view.proto is self.proto and all(p.matches(view) for p in self.predicates)

    def __str__(self):
        msg = self.msg.replace("\\", "\\\\").replace('"', '\\"')
        preds = ",".join(str(p) for p in self.predicates)
        return f'rule sid={self.sid} msg="{msg}" proto={self.proto.name} {preds}'.rstrip()


class RuleSet(tuple):
    def __new__(cls, rules: Iterable[Rule] = ()):
        rules = tuple(rules)
        seen = set()
        for r in rules:
            if r.sid in seen:
                raise RuleSyntaxError(f"duplicate sid {r.sid}")
            seen.add(r.sid)
        return super().__new__(cls, rules)

    def to_text(self) -> str:
        return "".join(f"{r}\n" for r in self)

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()


_RULE_RE = re.compile(r'^rule\s+sid=(\d+)\s+msg="((?:[^"\\]|\\.)*)"\s+proto=(\w+)(?:\s+(.*))?$')
_PRED_SPLIT_RE = re.compile(r'(?:[^,"]|"(?:\\.|[^"\\])*")+')
_PORT_RE = re.compile(r"^(srcport|dstport|port)(==|!=|<=|>=|<|>)(\d+)$")
_RANGE_RE = re.compile(r"^(srcport|dstport|port)=(\d+)\.\.(\d+)$")
_FLAGS_RE = re.compile(r"^flags(?:&(0x[0-9a-fA-F]+|\d+))?==(0x[0-9a-fA-F]+|\d+)$")
_ADDR_RE = re.compile(r"^(src|dst)=([0-9./]+)$")
_CONTENT_RE = re.compile(r'^(content|icontent)="((?:[^"\\]|\\.)*)"$')
_WHICH = {"srcport": "src", "dstport": "dst", "port": "any"}


def _unescape(body: str) -> bytes:
    out = bytearray()
    i = 0
    while i < len(body):
        ch = body[i]
        if ch == "\\" and i + 1 < len(body):
            nxt = body[i + 1]
            if nxt == "x" and re.fullmatch(r"[0-9a-fA-F]{2}", body[i + 2:i + 4]):
                out.append(int(body[i + 2:i + 4], 16))
                i += 4
                continue
            out.extend(nxt.encode())
            i += 2
            continue
        out.extend(ch.encode())
        i += 1
    return bytes(out)


def _parse_predicate(text: str, proto: Protocol, line: int):
    text = text.strip()
    if m := _PORT_RE.match(text):
        if proto is Protocol.ICMP:
            raise RuleSyntaxError("port predicates need a TCP or UDP rule", line)
        return PortPredicate(_WHICH[m[1]], m[2], int(m[3]))
    if m := _RANGE_RE.match(text):
        if proto is Protocol.ICMP:
            raise RuleSyntaxError("port predicates need a TCP or UDP rule", line)
        lo, hi = int(m[2]), int(m[3])
        if hi < lo:
            raise RuleSyntaxError(f"empty port range {text!r}", line)
        return PortPredicate(_WHICH[m[1]], "range", lo, hi)
    if m := _FLAGS_RE.match(text):
        if proto is not Protocol.TCP:
            raise RuleSyntaxError("flag predicates need a TCP rule", line)
        mask = int(m[1], 0) if m[1] else 0xFF
        return FlagPredicate(mask, int(m[2], 0) & mask)
    if m := _ADDR_RE.match(text):
        try:
            net = ipaddress.IPv4Network(m[2], strict=False)
        except ValueError as exc:
            raise RuleSyntaxError(str(exc), line) from None
        return AddressPredicate(m[1], net)
    if m := _CONTENT_RE.match(text):
        needle = _unescape(m[2])
        if not needle:
            raise RuleSyntaxError("empty content", line)
        return ContentPredicate(needle, nocase=m[1] == "icontent")
    raise RuleSyntaxError(f"cannot parse predicate {text!r}", line)


def parse_rules(text: str) -> RuleSet:
    rules = []
    seen: dict[int, int] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        m = _RULE_RE.match(line)
        if not m:
            raise RuleSyntaxError("expected 'rule sid=<int> msg=\"...\" proto=<P> <pred>,...'", lineno)
        sid = int(m[1])
        if sid in seen:
            raise RuleSyntaxError(f"sid {sid} already defined on line {seen[sid]}", lineno)
        seen[sid] = lineno
        try:
            proto = Protocol.coerce(m[3])
        except ValueError:
            raise RuleSyntaxError(f"unknown protocol {m[3]!r}", lineno) from None
        msg = _unescape(m[2]).decode("utf-8", "replace")
        preds = tuple(_parse_predicate(p, proto, lineno) for p in _PRED_SPLIT_RE.findall(m[4] or "") if p.strip())
        rules.append(Rule(sid, msg, proto, preds))
    return RuleSet(rules)


# Stand-ins for a handful of stock signatures, header-only and content-based.
DEMO_RULES_TEXT = """\
rule sid=524 msg="BAD-TRAFFIC tcp port 0 traffic" proto=TCP port==0
rule sid=525 msg="BAD-TRAFFIC udp port 0 traffic" proto=UDP port==0
rule sid=503 msg="MISC Source Port 20 to <1024" proto=TCP srcport==20,dstport<1024
rule sid=323 msg="FINGER root query" proto=TCP dstport==79,content="root"
rule sid=330 msg="FINGER redirection attempt" proto=TCP dstport==79,content="@"
rule sid=1201 msg="ATTACK-RESPONSES 403 Forbidden" proto=TCP srcport==80,content="HTTP/1.1 403"
rule sid=1292 msg="ATTACK-RESPONSES directory listing" proto=TCP content="Volume Serial Number"
"""


def demo_rules() -> RuleSet:
    return parse_rules(DEMO_RULES_TEXT)


# -- engine ------------------------------------------------------------------

@dataclass(frozen=True)
class PacketView:
    """Header values a rule can look at, decoded once per packet."""

    proto: Protocol | None
    sport: int | None
    dport: int | None
    src: int | None
    dst: int | None
    flags: int | None
    payload: bytes

    @classmethod
    def of(cls, packet: PacketRecord) -> "PacketView":
        proto = packet.protocol
        sport = dport = flags = None
        if proto is Protocol.TCP:
            sport = get_field(packet, FieldPath.TCP_SRC_PORT).value
            dport = get_field(packet, FieldPath.TCP_DST_PORT).value
            flags = get_field(packet, FieldPath.TCP_FLAGS).value
        elif proto is Protocol.UDP:
            sport = get_field(packet, FieldPath.UDP_SRC_PORT).value
            dport = get_field(packet, FieldPath.UDP_DST_PORT).value
        src = dst = None
        if packet.is_ipv4:
            src = get_field(packet, FieldPath.IPV4_SRC_IP).value
            dst = get_field(packet, FieldPath.IPV4_DST_IP).value
        return cls(proto, sport, dport, src, dst, flags, packet.payload)


_FLAG_CHARS = "12UAPRSF"


def format_snort_time(ts_sec: int, ts_usec: int) -> str:
    when = dt.datetime(1970, 1, 1) + dt.timedelta(seconds=ts_sec)
    return f"{when:%m/%d/%y-%H:%M:%S}.{ts_usec:06d}"


def _mac(b: bytes) -> str:
    return ":".join(f"{x:X}" for x in b)


def alert_from_packet(rule: Rule, packet: PacketRecord, view: PacketView | None = None) -> Alert:
    view = view or PacketView.of(packet)
    frame = packet.frame
    layout = packet.layout
    values = dict(
        timestamp=format_snort_time(packet.ts_sec, packet.ts_usec),
        sig_generator=rule.gid,
        sig_id=rule.sid,
        sig_rev=rule.rev,
        msg=rule.msg,
        proto=view.proto.name if view.proto else None,
        ethlen=packet.original_len,
    )
    if FieldPath.SRC_MAC in layout:
        values["ethsrc"] = _mac(frame[6:12])
        values["ethdst"] = _mac(frame[0:6])
    if packet.is_ipv4:
        l3 = layout[FieldPath.IPV4_ID][0] // 8 - 4
        values.update(
            src=str(ipaddress.IPv4Address(view.src)),
            dst=str(ipaddress.IPv4Address(view.dst)),
            ttl=frame[l3 + 8],
            tos=frame[l3 + 1],
            id=int.from_bytes(frame[l3 + 4:l3 + 6], "big"),
            dgmlen=int.from_bytes(frame[l3 + 2:l3 + 4], "big"),
            iplen=(frame[l3] & 0x0F) * 4,
        )
    if view.proto in (Protocol.TCP, Protocol.UDP):
        values.update(srcport=view.sport, dstport=view.dport)
    if view.proto is Protocol.TCP:
        t = layout[FieldPath.TCP_SRC_PORT][0] // 8
        values.update(
            tcpflags="".join(c if view.flags & (0x80 >> i) else "*" for i, c in enumerate(_FLAG_CHARS)),
            tcpseq=get_field(packet, FieldPath.TCP_SEQUENCE).value,
            tcpack=get_field(packet, FieldPath.TCP_ACK_NO).value,
            tcplen=(frame[t + 12] >> 4) * 4,
            tcpwindow=get_field(packet, FieldPath.TCP_WINDOW).value,
        )
    elif view.proto is Protocol.ICMP:
        values.update(
            icmptype=get_field(packet, FieldPath.ICMP_TYPE).value,
            icmpcode=get_field(packet, FieldPath.ICMP_CODE).value,
        )
        if FieldPath.ICMP_IDENTIFIER in layout:
            values.update(
                icmpid=get_field(packet, FieldPath.ICMP_IDENTIFIER).value,
                icmpseq=get_field(packet, FieldPath.ICMP_SEQUENCE).value,
            )
    return Alert(**values)


def run_mini_ids(trace: Trace, rules: Sequence[Rule]) -> list[Alert]:
    """One alert per (packet, matching rule), in packet order then rule order."""
    alerts = []
    if not rules:
        return alerts
    by_proto: dict[Protocol, list[Rule]] = {}
    for r in rules:
        by_proto.setdefault(r.proto, []).append(r)
    for packet in trace.packets:
        proto = packet.protocol
        candidates = by_proto.get(proto)
        if not candidates:
            continue
        view = PacketView.of(packet)
        for rule in candidates:
            if rule.matches(view):
                alerts.append(alert_from_packet(rule, packet, view))
    return alerts


def sid_counts(alerts: Iterable[Alert]) -> Counter:
    return Counter(a.sig_id for a in alerts)
