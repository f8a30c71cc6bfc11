"""Synthetic Ethernet/IPv4 traffic for fixtures and desk-scale experiments."""

from __future__ import annotations

import ipaddress
import random
import struct

from idsutil.trace import LINKTYPE_ETHERNET, Trace, make_packet, recompute_checksums

DEFAULT_START = 952_425_600  # 2000-03-07 00:00:00 UTC


def _ip(addr) -> bytes:
    return ipaddress.IPv4Address(addr).packed


def _mac(mac) -> bytes:
    if isinstance(mac, bytes):
        return mac
    return bytes.fromhex(mac.replace(":", "").replace("-", ""))


def tcp_segment(sport, dport, seq=0, ack=0, flags=0x18, window=8192, urgent=0, options=b"", payload=b""):
    if len(options) % 4:
        options += b"\x01" * (4 - len(options) % 4)  # NOP padding
    doff = (20 + len(options)) // 4
    hdr = struct.pack("!HHIIBBHHH", sport, dport, seq, ack, doff << 4, flags, window, 0, urgent)
    return hdr + options + payload


def udp_datagram(sport, dport, payload=b""):
    return struct.pack("!HHHH", sport, dport, 8 + len(payload), 0) + payload


def icmp_message(icmp_type, code=0, rest=b"\x00\x00\x00\x00", data=b""):
    return struct.pack("!BBH", icmp_type, code, 0) + rest + data


def ipv4_packet(src, dst, proto, body, ttl=64, ip_id=0, tos=0, options=b"", frag=0, df=False):
    if len(options) % 4:
        options += b"\x00" * (4 - len(options) % 4)
    ihl = 5 + len(options) // 4
    flags_frag = (0x4000 if df else 0) | (frag & 0x1FFF)
    hdr = struct.pack("!BBHHHBBH4s4s", (4 << 4) | ihl, tos, ihl * 4 + len(body), ip_id,
                      flags_frag, ttl, proto, 0, _ip(src), _ip(dst))
    return hdr + options + body


def ethernet_frame(payload, src_mac="02:00:00:00:00:01", dst_mac="02:00:00:00:00:02",
                   ethertype=0x0800, vlan=None):
    head = _mac(dst_mac) + _mac(src_mac)
    if vlan is not None:
        head += struct.pack("!HH", 0x8100, vlan & 0x0FFF)
    return head + struct.pack("!H", ethertype) + payload


def finish(frame: bytes, ts_sec=DEFAULT_START, ts_usec=0, pad_to: int | None = None):
    """Packet record for ``frame`` with valid checksums (and optional Ethernet padding)."""
    pkt = recompute_checksums(make_packet(frame, ts_sec, ts_usec))
    if pad_to is not None and len(pkt.frame) < pad_to:
        pkt = make_packet(pkt.frame + b"\x00" * (pad_to - len(pkt.frame)), ts_sec, ts_usec)
    return pkt


def tcp_packet(sport=1024, dport=80, src="10.0.0.1", dst="10.0.0.2", payload=b"", ts=(DEFAULT_START, 0),
               flags=0x18, seq=0, ack=0, ip_id=0, ttl=64, ip_options=b"", tcp_options=b"", **eth):
    seg = tcp_segment(sport, dport, seq=seq, ack=ack, flags=flags, options=tcp_options, payload=payload)
    frame = ethernet_frame(ipv4_packet(src, dst, 6, seg, ttl=ttl, ip_id=ip_id, options=ip_options), **eth)
    return finish(frame, *ts)


def udp_packet(sport=1024, dport=53, src="10.0.0.1", dst="10.0.0.2", payload=b"", ts=(DEFAULT_START, 0),
               ip_id=0, ttl=64, ip_options=b"", **eth):
    frame = ethernet_frame(ipv4_packet(src, dst, 17, udp_datagram(sport, dport, payload),
                                       ttl=ttl, ip_id=ip_id, options=ip_options), **eth)
    return finish(frame, *ts)


def icmp_packet(icmp_type=8, code=0, src="10.0.0.1", dst="10.0.0.2", rest=b"\x00\x01\x00\x01", data=b"",
                ts=(DEFAULT_START, 0), ip_id=0, ttl=64, **eth):
    frame = ethernet_frame(ipv4_packet(src, dst, 1, icmp_message(icmp_type, code, rest, data),
                                       ttl=ttl, ip_id=ip_id), **eth)
    return finish(frame, *ts)


def arp_packet(ts=(DEFAULT_START, 0)):
    body = struct.pack("!HHBBH6s4s6s4s", 1, 0x0800, 6, 4, 1, _mac("02:00:00:00:00:01"),
                       _ip("10.0.0.1"), b"\x00" * 6, _ip("10.0.0.2"))
    return make_packet(ethernet_frame(body, dst_mac="ff:ff:ff:ff:ff:ff", ethertype=0x0806), *ts)


def make_trace(packets, byte_order="native", snap_len=65535) -> Trace:
    return Trace(link_type=LINKTYPE_ETHERNET, snap_len=snap_len, byte_order=byte_order, packets=tuple(packets))


# payloads that trip the content signatures of the demo rule set
_INTERESTING = [
    b"root\r\n",
    b"user@host\r\n",
    b"HTTP/1.1 403 Forbidden\r\n\r\n",
    b" Volume Serial Number is 1234-ABCD\r\n",
]


def random_trace(n_packets: int, seed: int = 0, protocols=("tcp", "udp", "icmp"), start=DEFAULT_START,
                 byte_order="native", hosts: int = 64, interesting_rate: float = 0.05,
                 port0_rate: float = 0.0, ip_options_rate: float = 0.0) -> Trace:
    """Deterministic mixed traffic; timestamps strictly increase."""
    rng = random.Random(seed)
    protos = list(protocols)
    services = [20, 21, 23, 25, 53, 79, 80, 110, 139, 161, 443, 445, 515, 8080]
    t_us = start * 1_000_000
    packets = []
    for i in range(n_packets):
        t_us += rng.randint(1, 50_000)
        ts = divmod(t_us, 1_000_000)
        src = f"172.16.{rng.randrange(4)}.{rng.randrange(1, hosts + 1)}"
        dst = f"192.168.{rng.randrange(4)}.{rng.randrange(1, hosts + 1)}"
        eth = dict(src_mac=f"02:00:00:00:{rng.randrange(256):02x}:{rng.randrange(256):02x}",
                   dst_mac=f"02:00:00:01:{rng.randrange(256):02x}:{rng.randrange(256):02x}")
        ip_id = rng.randrange(65536)
        ttl = rng.choice([32, 64, 128, 255])
        opts = b"\x94\x04\x00\x00" if rng.random() < ip_options_rate else b""
        proto = rng.choice(protos)
        payload = rng.choice(_INTERESTING) if rng.random() < interesting_rate else rng.randbytes(rng.randrange(0, 48))
        if proto == "tcp":
            sport, dport = rng.randrange(1024, 65536), rng.choice(services)
            if rng.random() < 0.5:
                sport, dport = dport, sport
            if rng.random() < port0_rate:
                dport = 0
            packets.append(tcp_packet(sport, dport, src, dst, payload, ts, flags=rng.choice([0x02, 0x10, 0x18, 0x11]),
                                      seq=rng.getrandbits(32), ack=rng.getrandbits(32), ip_id=ip_id, ttl=ttl,
                                      ip_options=opts, **eth))
        elif proto == "udp":
            sport, dport = rng.randrange(1024, 65536), rng.choice([53, 123, 161, 162, 514])
            if rng.random() < port0_rate:
                dport = 0
            packets.append(udp_packet(sport, dport, src, dst, payload, ts, ip_id=ip_id, ttl=ttl,
                                      ip_options=opts, **eth))
        elif proto == "icmp":
            packets.append(icmp_packet(rng.choice([0, 8]), 0, src, dst, struct.pack("!HH", rng.randrange(65536), i & 0xFFFF),
                                       payload, ts, ip_id=ip_id, ttl=ttl, **eth))
        elif proto == "arp":
            packets.append(arp_packet(ts))
        else:
            raise ValueError(f"unknown protocol {proto!r}")
    return make_trace(packets, byte_order=byte_order)
