"""Deterministic, seedable anonymization algorithms over field values.

Every algorithm has a scalar form (``truncate``, ``black_marker`` ...) and is
reachable through :func:`run_algorithm`, which transforms all values of one
field across a trace in packet order.  Whole-trace algorithms (time shift,
enumeration) need that view; the rest map value by value.

Numeric fields are fixed-width bit strings as well, so binary-only algorithms
(black marker, hashing, permutation, annihilation) apply to them by viewing
the number as ``Bits`` of the field width.
"""

from __future__ import annotations

import bisect
import calendar
import datetime as dt
import enum
import hashlib
import hmac
import random
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

from idsutil.errors import (
    BadBoundaries,
    ParamError,
    TooManyUnits,
    ValueOutOfRange,
    WidthMismatch,
    WrongWidth,
)
from idsutil.trace import Bits, DataType, FieldPath, Number, Timestamp


class Algorithm(enum.Enum):
    PREFIX_PRESERVING = "PrefixPreserving"
    TRUNCATION = "Truncation"
    HASH = "Hash"
    BLACK_MARKER = "BlackMarker"
    TIME_UNIT_ANNIHILATION = "TimeUnitAnnihilation"
    RANDOM_TIME_SHIFT = "RandomTimeShift"
    TIME_ENUMERATION = "TimeEnumeration"
    RANDOM_PERMUTATION = "RandomPermutation"
    ANNIHILATION = "Annihilation"
    CLASSIFY = "Classify"
    SUBSTITUTION = "Substitution"

    @property
    def data_types(self) -> frozenset[str]:
        return APPLICABLE_TYPES[self]

    @classmethod
    def parse(cls, name: str) -> "Algorithm":
        key = name.strip().lower()
        for alg in cls:
            if alg.value.lower() == key:
                return alg
        if key in _ALIASES:
            return _ALIASES[key]
        raise KeyError(name)


_ALIASES = {
    "binaryblackmarker": Algorithm.BLACK_MARKER,
    "blackmarker": Algorithm.BLACK_MARKER,
    "numerictruncation": Algorithm.TRUNCATION,
    "binarytruncation": Algorithm.TRUNCATION,
    "ipv4prefixpreserving": Algorithm.PREFIX_PRESERVING,
    "enumeration": Algorithm.TIME_ENUMERATION,
    "binaryannihilation": Algorithm.ANNIHILATION,
    "binaryhash": Algorithm.HASH,
    "binaryrandompermutation": Algorithm.RANDOM_PERMUTATION,
    "numericclassify": Algorithm.CLASSIFY,
}

# Data types per algorithm, including the string/hostname types that no
# pcap field carries.
APPLICABLE_TYPES: dict[Algorithm, frozenset[str]] = {
    Algorithm.PREFIX_PRESERVING: frozenset({"binary"}),
    Algorithm.TRUNCATION: frozenset({"binary", "string", "numeric"}),
    Algorithm.HASH: frozenset({"binary", "string", "hostname"}),
    Algorithm.BLACK_MARKER: frozenset({"binary", "string", "hostname"}),
    Algorithm.TIME_UNIT_ANNIHILATION: frozenset({"timestamp"}),
    Algorithm.RANDOM_TIME_SHIFT: frozenset({"timestamp"}),
    Algorithm.TIME_ENUMERATION: frozenset({"timestamp"}),
    Algorithm.RANDOM_PERMUTATION: frozenset({"binary"}),
    Algorithm.ANNIHILATION: frozenset({"binary", "string"}),
    Algorithm.CLASSIFY: frozenset({"numeric"}),
    Algorithm.SUBSTITUTION: frozenset({"binary", "numeric"}),
}

_VARIABLE_WIDTH_OK = frozenset({Algorithm.BLACK_MARKER, Algorithm.ANNIHILATION})


def type_compatible(algorithm: Algorithm, path: FieldPath) -> bool:
    """Data-type check only: does ``algorithm`` accept values of ``path``'s type?"""
    types = algorithm.data_types
    if path.dtype.value in types:
        return True
    return path.dtype is DataType.NUMERIC and "binary" in types


def applicable(algorithm: Algorithm, path: FieldPath) -> bool:
    """Type check plus the structural limits used by the default matrix."""
    if not type_compatible(algorithm, path):
        return False
    if algorithm is Algorithm.PREFIX_PRESERVING and not path.is_ipv4_address:
        return False
    if path.variable_width and algorithm not in _VARIABLE_WIDTH_OK:
        return False
    return True


# -- parameters --------------------------------------------------------------

TIME_UNITS = ("year", "month", "day", "hour", "minute", "second", "microsecond")


def _as_int(value) -> int:
    if isinstance(value, bool):
        raise ValueError("boolean is not an integer")
    if isinstance(value, int):
        return value
    return int(str(value).strip(), 0)


def _as_number(value) -> int | float:
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return value
    text = str(value).strip()
    try:
        return int(text, 0)
    except ValueError:
        return float(text)


def _as_units(value):
    if isinstance(value, str) and value.strip().lower() == "all":
        return "all"
    n = _as_int(value)
    if n < 0:
        raise ValueError("units must be >= 0")
    return n


def _as_direction(value) -> str:
    text = str(value).strip().lower()
    if text not in ("prefix", "suffix"):
        raise ValueError("direction must be 'prefix' or 'suffix'")
    return text


def _as_bool(value) -> bool:
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {value!r}")


def _as_list(item):
    def convert(value):
        if isinstance(value, str):
            parts = [p for p in value.replace(";", ",").split(",") if p.strip()]
        else:
            parts = list(value)
        return tuple(item(p) for p in parts)
    return convert


def _as_time_unit(value) -> str:
    text = str(value).strip().lower()
    if text not in TIME_UNITS:
        raise ValueError(f"unknown time unit {value!r}")
    return text


def _as_key(value) -> bytes:
    if isinstance(value, bytes):
        return value
    return bytes.fromhex(str(value).strip())


def _as_digest(value) -> str:
    name = str(value).strip().lower()
    if name not in hashlib.algorithms_guaranteed or name.startswith("shake"):
        raise ValueError(f"unsupported digest {value!r}")
    return name


PARAM_SPECS: dict[Algorithm, dict[str, Any]] = {
    Algorithm.PREFIX_PRESERVING: {"key": _as_key},
    Algorithm.TRUNCATION: {"units": _as_units, "direction": _as_direction, "fill": _as_int, "base": _as_int},
    Algorithm.HASH: {"digest": _as_digest, "truncate_to_width": _as_bool, "key": _as_key},
    Algorithm.BLACK_MARKER: {"units": _as_units, "constant": _as_int, "direction": _as_direction},
    Algorithm.TIME_UNIT_ANNIHILATION: {"units_to_zero": _as_list(_as_time_unit)},
    Algorithm.RANDOM_TIME_SHIFT: {"window_seconds": _as_number},
    Algorithm.TIME_ENUMERATION: {"base": _as_number, "step": _as_number},
    Algorithm.RANDOM_PERMUTATION: {},
    Algorithm.ANNIHILATION: {},
    Algorithm.CLASSIFY: {"boundaries": _as_list(_as_int), "representatives": _as_list(_as_int)},
    Algorithm.SUBSTITUTION: {"constant": _as_int},
}

# Documented defaults.  Port-valued fields come out as 0 under black marker,
# substitution, truncation and annihilation.
DEFAULT_PARAMS: dict[Algorithm, dict[str, Any]] = {
    Algorithm.PREFIX_PRESERVING: {},
    Algorithm.TRUNCATION: {"units": "all", "direction": "suffix", "fill": 0},
    Algorithm.HASH: {"digest": "sha256", "truncate_to_width": True},
    Algorithm.BLACK_MARKER: {"units": "all", "constant": 0, "direction": "prefix"},
    Algorithm.TIME_UNIT_ANNIHILATION: {"units_to_zero": ("hour", "minute")},
    Algorithm.RANDOM_TIME_SHIFT: {"window_seconds": 3600},
    Algorithm.TIME_ENUMERATION: {"base": 0, "step": 1},
    Algorithm.RANDOM_PERMUTATION: {},
    Algorithm.ANNIHILATION: {},
    Algorithm.CLASSIFY: {"boundaries": (1024,)},
    Algorithm.SUBSTITUTION: {"constant": 0},
}


def normalize_params(algorithm: Algorithm, params: Mapping[str, Any] | None) -> dict[str, Any]:
    """Coerce raw (possibly string) parameter values; reject unknown keys."""
    spec = PARAM_SPECS[algorithm]
    out = {}
    for key, raw in (params or {}).items():
        if key not in spec:
            known = ", ".join(sorted(spec)) or "none"
            raise ParamError(f"{algorithm.value} does not take parameter {key!r} (known: {known})")
        try:
            out[key] = spec[key](raw)
        except (TypeError, ValueError) as exc:
            raise ParamError(f"{algorithm.value}: bad value for {key!r}: {exc}") from None
    if algorithm is Algorithm.PREFIX_PRESERVING and "key" in out and len(out["key"]) != 32:
        raise ParamError("PrefixPreserving key must be 32 bytes (64 hex digits)")
    if algorithm is Algorithm.TIME_ENUMERATION and out.get("step", 1) <= 0:
        raise ParamError("TimeEnumeration step must be > 0")
    if algorithm is Algorithm.RANDOM_TIME_SHIFT and out.get("window_seconds", 0) < 0:
        raise ParamError("RandomTimeShift window_seconds must be >= 0")
    if algorithm is Algorithm.HASH and out.get("truncate_to_width") is False:
        raise ParamError("Hash output must keep the field width; truncate_to_width=false is unsupported")
    if algorithm is Algorithm.CLASSIFY:
        _check_bins(out.get("boundaries", DEFAULT_PARAMS[Algorithm.CLASSIFY]["boundaries"]),
                    out.get("representatives"))
    return out


def effective_params(algorithm: Algorithm, params: Mapping[str, Any] | None) -> dict[str, Any]:
    merged = dict(DEFAULT_PARAMS[algorithm])
    merged.update(normalize_params(algorithm, params))
    return merged


# -- state -------------------------------------------------------------------

def derive_seed(seed: int, *parts) -> int:
    """64-bit sub-seed from a parent seed and a label path."""
    text = ":".join(str(p) for p in (seed, *parts)).encode()
    return int.from_bytes(hashlib.sha256(text).digest()[:8], "big")


def _derive_key(seed: int, label: str) -> bytes:
    return hashlib.sha256(f"{label}:{seed}".encode()).digest()


@dataclass
class AnonymizerState:
    """Randomness and lazily built tables for one (run, field) transform."""

    seed: int
    pp_key: bytes | None = None
    hash_key: bytes | None = None
    rng: random.Random = field(init=False, repr=False)
    permutation_map: dict[int, int] = field(default_factory=dict, repr=False)
    enumeration_table: dict[int, int] = field(default_factory=dict, repr=False)
    shift_delta: int | None = None
    _perm_pool: list[int] | None = field(default=None, repr=False)
    _perm_pool_width: int = field(default=-1, repr=False)
    _perm_pool_next: int = field(default=0, repr=False)
    _perm_used: set[int] = field(default_factory=set, repr=False)
    _pp_cipher: "PrefixPreservingCipher | None" = field(default=None, repr=False)

    def __post_init__(self):
        if not 0 <= self.seed < 1 << 64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        self.rng = random.Random(self.seed)
        if self.pp_key is None:
            self.pp_key = _derive_key(self.seed, "prefix-preserving")
        if self.hash_key is None:
            self.hash_key = _derive_key(self.seed, "hash")

    @property
    def pp_cipher(self) -> "PrefixPreservingCipher":
        if self._pp_cipher is None:
            self._pp_cipher = PrefixPreservingCipher(self.pp_key)
        return self._pp_cipher


# -- prefix-preserving permutation -------------------------------------------

class PrefixPreservingCipher:
    """Keyed prefix-preserving permutation of 32-bit addresses.

    Output bit ``i`` is input bit ``i`` XOR the top bit of
    ``AES_k(prefix_i(a) || pad)``, where ``prefix_i`` keeps the first ``i``
    bits of ``a`` and fills the rest from a secret pad.  The 32-byte key is
    the AES-128 key followed by the pad seed.
    """

    def __init__(self, key: bytes):
        if len(key) != 32:
            raise ParamError("key must be 32 bytes")
        cipher = Cipher(algorithms.AES(key[:16]), modes.ECB())  # noqa: S305 (one block per prefix)
        self._enc = cipher.encryptor()
        pad = self._enc.update(key[16:])
        pad_int = int.from_bytes(pad[:4], "big")
        self._tail = pad[4:]
        keep = [0] + [(0xFFFFFFFF << (32 - i)) & 0xFFFFFFFF for i in range(1, 32)]
        self._masks = [(m, pad_int & ~m & 0xFFFFFFFF) for m in keep]
        self._np_keep = np.array(keep, dtype=np.uint32)
        self._np_fill = np.array([f for _, f in self._masks], dtype=np.uint32)
        self._np_tail = np.frombuffer(self._tail, dtype=np.uint8)
        self._weights = (np.uint64(1) << np.arange(31, -1, -1, dtype=np.uint64))

    def anonymize(self, addr: int) -> int:
        if not 0 <= addr < 1 << 32:
            raise WrongWidth(f"not a 32-bit address: {addr}")
        tail = self._tail
        blocks = b"".join(((addr & m) | f).to_bytes(4, "big") + tail for m, f in self._masks)
        out = self._enc.update(blocks)
        otp = 0
        for b in out[::16]:
            otp = (otp << 1) | (b >> 7)
        return addr ^ otp

    def anonymize_many(self, addrs) -> np.ndarray:
        a = np.asarray(addrs, dtype=np.uint64)
        if a.size and (a.max() >= 1 << 32):
            raise WrongWidth("addresses must be 32-bit")
        a32 = a.astype(np.uint32)
        n = a32.shape[0]
        prefixes = (a32[:, None] & self._np_keep) | self._np_fill
        blocks = np.empty((n, 32, 16), dtype=np.uint8)
        blocks[:, :, :4] = prefixes.astype(">u4").view(np.uint8).reshape(n, 32, 4)
        blocks[:, :, 4:] = self._np_tail
        out = np.frombuffer(self._enc.update(blocks.tobytes()), dtype=np.uint8).reshape(n, 32, 16)
        bits = (out[:, :, 0] >> 7).astype(np.uint64)
        otp = (bits * self._weights).sum(axis=1, dtype=np.uint64)
        return a ^ otp


def prefix_preserving(addr: Bits, state: AnonymizerState) -> Bits:
    if not isinstance(addr, Bits) or addr.width != 32:
        raise WrongWidth("prefix-preserving permutation takes exactly 32 bits")
    return Bits(state.pp_cipher.anonymize(addr.value), 32)


# -- bit / digit algorithms --------------------------------------------------

def _digit_count(width: int | None, value: int, base: int) -> int:
    top = (1 << width) - 1 if width is not None else value
    n = 1
    while top >= base:
        top //= base
        n += 1
    return n


def truncate(v, units, direction: str = "suffix", fill: int = 0, width: int | None = None):
    """Zero-fill (or ``fill``-fill) ``units`` leading or trailing units of ``v``.

    Units are bits for ``Bits`` and base-``v.base`` digits for ``Number``;
    the digit count of a number comes from the field ``width`` when given.
    """
    direction = _as_direction(direction)
    if isinstance(v, Bits):
        total = v.width
        n = total if units == "all" else units
        if n > total:
            raise TooManyUnits(f"{n} units requested, value has {total} bits")
        if fill not in (0, 1):
            raise ParamError("bit fill must be 0 or 1")
        if n == 0:
            return v
        block = ((1 << n) - 1) if fill else 0
        if direction == "suffix":
            keep = v.value & ~((1 << n) - 1)
            return Bits(keep | block, total)
        shift = total - n
        keep = v.value & ((1 << shift) - 1)
        return Bits(keep | (block << shift), total)

    if isinstance(v, Number):
        base = v.base
        total = _digit_count(width, v.value, base)
        n = total if units == "all" else units
        if n > total:
            raise TooManyUnits(f"{n} units requested, value has {total} base-{base} digits")
        if not 0 <= fill < base:
            raise ParamError(f"fill digit must be in [0, {base})")
        if n == 0:
            return v
        digits = []
        x = v.value
        for _ in range(total):
            x, d = divmod(x, base)
            digits.append(d)
        digits.reverse()  # most significant first
        if direction == "suffix":
            digits[total - n:] = [fill] * n
        else:
            digits[:n] = [fill] * n
        out = 0
        for d in digits:
            out = out * base + d
        if width is not None and out >= 1 << width:
            raise ValueOutOfRange(f"truncated value {out} exceeds {width} bits")
        return Number(out, base)

    raise TypeError(f"truncation does not apply to {type(v).__name__}")


def hash_value(v: Bits, key: bytes = b"", digest: str = "sha256", truncate_to_width: bool = True) -> Bits:
    """Keyed digest (HMAC) of the field bits, cut to the field width.

    Widths beyond one digest block are filled by counter-mode HMAC blocks.
    """
    if not isinstance(v, Bits):
        raise TypeError("hash applies to binary values")
    if not truncate_to_width:
        raise ParamError("hash output must keep the field width")
    if v.width == 0:
        return v
    data = v.to_bytes()
    need = (v.width + 7) // 8
    stream = b""
    counter = 0
    while len(stream) < need:
        msg = counter.to_bytes(4, "big") + v.width.to_bytes(4, "big") + data
        stream += hmac.new(key, msg, digest).digest()
        counter += 1
    out = int.from_bytes(stream[:need], "big") >> (need * 8 - v.width)
    return Bits(out, v.width)


def black_marker(v: Bits, units, constant: int = 0, direction: str = "prefix") -> Bits:
    """Overwrite the first (``prefix``) or last ``units`` bits with ``constant``."""
    if not isinstance(v, Bits):
        raise TypeError("black marker applies to binary values")
    n = v.width if units == "all" else units
    if n > v.width:
        raise TooManyUnits(f"{n} units requested, value has {v.width} bits")
    if constant not in (0, 1):
        raise ParamError("binary black-marker constant is a bit (0 or 1)")
    # same bit surgery as truncation with a fill bit
    return truncate(v, n, _as_direction(direction), fill=constant)


def annihilate(v):
    if isinstance(v, Bits):
        return Bits(0, v.width)
    if isinstance(v, Number):
        return Number(0, v.base)
    raise TypeError(f"annihilation does not apply to {type(v).__name__}")


def _check_bins(boundaries, representatives):
    boundaries = list(boundaries)
    if any(b2 <= b1 for b1, b2 in zip(boundaries, boundaries[1:])):
        raise BadBoundaries("classify boundaries must be strictly ascending")
    if representatives is not None and len(representatives) != len(boundaries) + 1:
        raise BadBoundaries(
            f"{len(boundaries)} boundaries need {len(boundaries) + 1} representatives, "
            f"got {len(representatives)}")


def classify(v: Number, boundaries: Sequence[int], representatives: Sequence[int] | None = None) -> Number:
    """Map ``v`` to the representative of its half-open bin ``[b_i, b_{i+1})``.

    Representatives default to each bin's lower bound (0 for the first bin).
    """
    if not isinstance(v, Number):
        raise TypeError("classify applies to numeric values")
    _check_bins(boundaries, representatives)
    if representatives is None:
        representatives = [0, *boundaries]
    idx = bisect.bisect_right(list(boundaries), v.value)
    return Number(representatives[idx], v.base)


def substitute(v, constant, width: int | None = None):
    if isinstance(v, Bits):
        if isinstance(constant, Bits):
            if constant.width != v.width:
                raise WidthMismatch(f"constant is {constant.width} bits, field is {v.width}")
            return constant
        if not 0 <= constant < 1 << v.width:
            raise WidthMismatch(f"constant {constant} does not fit in {v.width} bits")
        return Bits(constant, v.width)
    if isinstance(v, Number):
        c = constant.value if isinstance(constant, (Bits, Number)) else constant
        if width is not None and not 0 <= c < 1 << width:
            raise WidthMismatch(f"constant {c} does not fit in {width} bits")
        if isinstance(constant, Bits) and width is not None and constant.width != width:
            raise WidthMismatch(f"constant is {constant.width} bits, field is {width}")
        return Number(c, v.base)
    raise TypeError(f"substitution does not apply to {type(v).__name__}")


def random_permutation(v: Bits, state: AnonymizerState) -> Bits:
    """Lazily built random bijection: first sighting draws an unused image."""
    if not isinstance(v, Bits):
        raise TypeError("random permutation applies to binary values")
    width = v.width
    table = state.permutation_map
    key = (width, v.value)
    if key in table:
        return Bits(table[key], width)
    if width <= 20:
        if state._perm_pool is None or state._perm_pool_width != width:
            pool = list(range(1 << width))
            state.rng.shuffle(pool)
            state._perm_pool = pool
            state._perm_pool_width = width
            state._perm_pool_next = 0
        image = state._perm_pool[state._perm_pool_next]
        state._perm_pool_next += 1
    else:
        used = state._perm_used
        image = state.rng.getrandbits(width)
        while image in used:
            image = state.rng.getrandbits(width)
        used.add(image)
    table[key] = image
    return Bits(image, width)


# -- timestamp algorithms ----------------------------------------------------

_UNIT_MINIMUM = {"year": 1970, "month": 1, "day": 1, "hour": 0, "minute": 0, "second": 0, "microsecond": 0}


def time_unit_annihilation(ts: Timestamp, units_to_zero) -> Timestamp:
    """Reset the named UTC calendar units to their minimum and re-encode."""
    units = {_as_time_unit(u) for u in units_to_zero}
    if not units:
        return ts
    when = dt.datetime(1970, 1, 1) + dt.timedelta(seconds=ts.seconds, microseconds=ts.microseconds)
    parts = {
        "year": when.year, "month": when.month, "day": when.day, "hour": when.hour,
        "minute": when.minute, "second": when.second, "microsecond": when.microsecond,
    }
    for u in units:
        parts[u] = _UNIT_MINIMUM[u]
    # Feb 29 -> a non-leap year, or Jan 31 -> month reset still valid etc.
    last_day = calendar.monthrange(parts["year"], parts["month"])[1]
    parts["day"] = min(parts["day"], last_day)
    out = dt.datetime(**parts)
    delta = out - dt.datetime(1970, 1, 1)
    return Timestamp(delta.days * 86400 + delta.seconds, delta.microseconds)


def random_time_shift(timestamps: Sequence[Timestamp], window_seconds, state: AnonymizerState) -> list[Timestamp]:
    """Shift all timestamps by one delta drawn uniformly from ±window (µs grain)."""
    if window_seconds < 0:
        raise ParamError("window_seconds must be >= 0")
    if state.shift_delta is None:
        w = round(window_seconds * 1_000_000)
        state.shift_delta = state.rng.randint(-w, w) if w else 0
    delta = state.shift_delta
    out = []
    for ts in timestamps:
        total = ts.total_us + delta
        if total < 0:
            raise ValueOutOfRange("time shift moved a timestamp before the epoch")
        out.append(Timestamp.from_us(total))
    return out


def time_enumeration(timestamps: Sequence[Timestamp], base=0, step=1, state: AnonymizerState | None = None) -> list[Timestamp]:
    """i-th distinct timestamp (ascending) becomes ``base + i*step`` seconds."""
    if step <= 0:
        raise ParamError("step must be > 0")
    table = state.enumeration_table if state is not None else {}
    for rank, t in enumerate(sorted({ts.total_us for ts in timestamps})):
        table[t] = rank
    return [Timestamp.from_us(round((base + table[ts.total_us] * step) * 1_000_000)) for ts in timestamps]


# -- field-level driver ------------------------------------------------------

def _as_bits(value, width: int) -> Bits:
    if isinstance(value, Bits):
        return value
    if isinstance(value, Number):
        return Bits(value.value, width)
    raise TypeError(f"expected a binary or numeric value, got {type(value).__name__}")


def _like(original, result: Bits):
    """Return ``result`` in the representation of ``original``."""
    if isinstance(original, Number):
        return Number(result.value, original.base)
    return result


def _require_timestamps(values):
    for v in values:
        if not isinstance(v, Timestamp):
            raise TypeError(f"timestamp algorithm got {type(v).__name__}")


def run_algorithm(
    algorithm: Algorithm,
    values: Sequence,
    widths: Sequence[int],
    params: Mapping[str, Any] | None,
    state: AnonymizerState,
) -> list:
    """Anonymize every occurrence of one field, given in packet order."""
    p = effective_params(algorithm, params)
    A = Algorithm

    if algorithm is A.PREFIX_PRESERVING:
        if "key" in p and p["key"] != state.pp_key:
            state.pp_key = p["key"]
            state._pp_cipher = None
        bits = [_as_bits(v, w) for v, w in zip(values, widths)]
        if any(b.width != 32 for b in bits):
            raise WrongWidth("prefix-preserving permutation takes exactly 32 bits")
        uniq = sorted({b.value for b in bits})
        mapped = dict(zip(uniq, (int(x) for x in state.pp_cipher.anonymize_many(uniq))))
        return [_like(v, Bits(mapped[b.value], 32)) for v, b in zip(values, bits)]

    if algorithm is A.TRUNCATION:
        out = []
        for v, w in zip(values, widths):
            if isinstance(v, Number) and "base" in p:
                v = Number(v.value, p["base"])
            out.append(truncate(v, p["units"], p["direction"], p.get("fill", 0), width=w))
        return out

    if algorithm is A.HASH:
        key = p.get("key", state.hash_key)
        return [_like(v, hash_value(_as_bits(v, w), key, p["digest"])) for v, w in zip(values, widths)]

    if algorithm is A.BLACK_MARKER:
        return [
            _like(v, black_marker(_as_bits(v, w), p["units"], p["constant"], p["direction"]))
            for v, w in zip(values, widths)
        ]

    if algorithm is A.TIME_UNIT_ANNIHILATION:
        _require_timestamps(values)
        return [time_unit_annihilation(v, p["units_to_zero"]) for v in values]

    if algorithm is A.RANDOM_TIME_SHIFT:
        _require_timestamps(values)
        return random_time_shift(values, p["window_seconds"], state)

    if algorithm is A.TIME_ENUMERATION:
        _require_timestamps(values)
        return time_enumeration(values, p["base"], p["step"], state)

    if algorithm is A.RANDOM_PERMUTATION:
        return [_like(v, random_permutation(_as_bits(v, w), state)) for v, w in zip(values, widths)]

    if algorithm is A.ANNIHILATION:
        return [annihilate(v) for v in values]

    if algorithm is A.CLASSIFY:
        return [classify(v, p["boundaries"], p.get("representatives")) for v in values]

    if algorithm is A.SUBSTITUTION:
        return [substitute(v, p["constant"], width=w) for v, w in zip(values, widths)]

    raise AssertionError(algorithm)
