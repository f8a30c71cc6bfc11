"""Independent reference implementations used to check the package.

Nothing here imports the code under test's internals; each oracle takes a
different (usually slower, more literal) route to the same answer.
"""

from __future__ import annotations

import calendar
import struct
import time

from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes


# -- pcap --------------------------------------------------------------------

def ref_pcap(records, big_endian=False, snaplen=65535, linktype=1, version=(2, 4), thiszone=0, sigfigs=0):
    """Classic pcap bytes from ``(ts_sec, ts_usec, frame, orig_len)`` tuples."""
    e = ">" if big_endian else "<"
    out = bytearray(struct.pack(e + "IHHiIII", 0xA1B2C3D4, version[0], version[1], thiszone, sigfigs,
                                snaplen, linktype))
    for ts_sec, ts_usec, frame, orig_len in records:
        out += struct.pack(e + "IIII", ts_sec, ts_usec, len(frame), orig_len)
        out += frame
    return bytes(out)


def walk_headers(frame: bytes) -> dict:
    """Field values of an untagged Ethernet/IPv4 frame by direct slicing."""
    out = {"SRC_MAC": frame[6:12], "DST_MAC": frame[0:6]}
    if len(frame) < 34 or frame[12:14] != b"\x08\x00":
        return {}
    ip = frame[14:]
    ihl = (ip[0] & 0x0F) * 4
    out["IPV4_ID"] = int.from_bytes(ip[4:6], "big")
    out["IPV4_OFFSET"] = int.from_bytes(ip[6:8], "big") & 0x1FFF
    out["IPV4_TTL"] = ip[8]
    out["IPV4_CHECKSUM"] = int.from_bytes(ip[10:12], "big")
    out["IPV4_SRC_IP"] = int.from_bytes(ip[12:16], "big")
    out["IPV4_DST_IP"] = int.from_bytes(ip[16:20], "big")
    proto = ip[9]
    l4 = ip[ihl:]
    if out["IPV4_OFFSET"]:
        return out
    if proto == 6 and len(l4) >= 20:
        out.update(
            TCP_SRC_PORT=int.from_bytes(l4[0:2], "big"),
            TCP_DST_PORT=int.from_bytes(l4[2:4], "big"),
            TCP_SEQUENCE=int.from_bytes(l4[4:8], "big"),
            TCP_ACK_NO=int.from_bytes(l4[8:12], "big"),
            TCP_FLAGS=l4[13],
            TCP_WINDOW=int.from_bytes(l4[14:16], "big"),
            TCP_CHECKSUM=int.from_bytes(l4[16:18], "big"),
            TCP_URGENT=int.from_bytes(l4[18:20], "big"),
        )
    elif proto == 17 and len(l4) >= 8:
        out.update(
            UDP_SRC_PORT=int.from_bytes(l4[0:2], "big"),
            UDP_DST_PORT=int.from_bytes(l4[2:4], "big"),
            UDP_CHECKSUM=int.from_bytes(l4[6:8], "big"),
        )
    elif proto == 1 and len(l4) >= 4:
        out.update(ICMP_TYPE=l4[0], ICMP_CODE=l4[1], ICMP_CHECKSUM=int.from_bytes(l4[2:4], "big"))
    return out


def ones_complement_ok(data: bytes) -> bool:
    if len(data) % 2:
        data += b"\x00"
    s = 0
    for i in range(0, len(data), 2):
        s += (data[i] << 8) | data[i + 1]
        s = (s & 0xFFFF) + (s >> 16)
    return s == 0xFFFF


# -- addresses ---------------------------------------------------------------

def lcp32(a: int, b: int) -> int:
    x = a ^ b
    n = 0
    for bit in range(31, -1, -1):
        if x >> bit & 1:
            break
        n += 1
    return n


def cryptopan_reference(key: bytes, addr: int) -> int:
    """Bit-at-a-time Crypto-PAn, one AES call per output bit."""
    aes = Cipher(algorithms.AES(key[:16]), modes.ECB()).encryptor()
    pad = aes.update(key[16:32])
    pad_bits = "".join(f"{b:08b}" for b in pad)
    addr_bits = f"{addr:032b}"
    out_bits = []
    for i in range(32):
        block_bits = addr_bits[:i] + pad_bits[i:]
        block = int(block_bits, 2).to_bytes(16, "big")
        flip = aes.update(block)[0] >> 7
        out_bits.append(str(int(addr_bits[i]) ^ flip))
    return int("".join(out_bits), 2)


# -- alerts ------------------------------------------------------------------

def naive_compare(baseline, anony, names):
    """Quadratic greedy matching of projected alerts."""
    base = [tuple(getattr(a, n) for n in names) for a in baseline]
    used = [False] * len(base)
    tp = 0
    for a in anony:
        key = tuple(getattr(a, n) for n in names)
        for i, b in enumerate(base):
            if not used[i] and b == key:
                used[i] = True
                tp += 1
                break
    return tp, len(anony) - tp, len(base) - tp


# -- time --------------------------------------------------------------------

def zero_units(seconds: int, units) -> int:
    """Calendar reset through time.gmtime / calendar.timegm."""
    t = time.gmtime(seconds)
    y, mo, d, h, mi, s = t.tm_year, t.tm_mon, t.tm_mday, t.tm_hour, t.tm_min, t.tm_sec
    if "year" in units:
        y = 1970
    if "month" in units:
        mo = 1
    if "day" in units:
        d = 1
    if "hour" in units:
        h = 0
    if "minute" in units:
        mi = 0
    if "second" in units:
        s = 0
    d = min(d, calendar.monthrange(y, mo)[1])
    return calendar.timegm((y, mo, d, h, mi, s, 0, 0, 0))


def dense_ranks(xs):
    order = sorted(set(xs))
    return [order.index(x) for x in xs]
