"""Anonymization policies: parsing, validation, enumeration and application.

Policy file grammar (UTF-8, ``#`` starts a comment)::

    policy <name>
    seed <decimal u64>
    entry field=<FIELDPATH> algorithm=<ALGORITHM> [param.<key>=<value> ...]

Matrix file grammar, one field per line::

    <FIELDPATH>: <ALGORITHM>, <ALGORITHM>, ...
    <FIELDPATH>: *            # every algorithm applicable to the field
"""

from __future__ import annotations

import shlex
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping

from idsutil.anonymizers import (
    DEFAULT_PARAMS,
    Algorithm,
    AnonymizerState,
    applicable,
    derive_seed,
    normalize_params,
    run_algorithm,
    type_compatible,
)
from idsutil.errors import (
    DuplicateField,
    ParamError,
    PolicyInvalid,
    PolicySyntaxError,
    UnknownAlgorithm,
    UnknownField,
)
from idsutil.trace import FieldPath, Trace, get_field, set_field

U64_MAX = (1 << 64) - 1


@dataclass(frozen=True)
class PolicyEntry:
    field: FieldPath
    algorithm: Algorithm
    params: Mapping[str, Any] = field(default_factory=dict, hash=False)
    line: int | None = field(default=None, compare=False, hash=False)


@dataclass(frozen=True)
class Policy:
    name: str
    seed: int = 0
    entries: tuple[PolicyEntry, ...] = ()

    def __post_init__(self):
        if not isinstance(self.entries, tuple):
            object.__setattr__(self, "entries", tuple(self.entries))
        if not 0 <= self.seed <= U64_MAX:
            raise ValueError("policy seed must be an unsigned 64-bit integer")
        seen = {}
        for e in self.entries:
            if e.field in seen:
                raise DuplicateField(f"field {e.field.name} appears more than once", line=e.line)
            seen[e.field] = e

    @property
    def fields(self) -> tuple[FieldPath, ...]:
        return tuple(e.field for e in self.entries)

    @property
    def is_multi_field(self) -> bool:
        return len(self.entries) >= 2

    @property
    def field_label(self) -> str:
        return "+".join(e.field.name for e in self.entries)

    @property
    def algorithm_label(self) -> str:
        return "+".join(e.algorithm.value for e in self.entries)

    def with_seed(self, seed: int) -> "Policy":
        return Policy(self.name, seed, self.entries)


class CompatibilityMatrix:
    """Which algorithms may be applied to which field."""

    def __init__(self, allowed: Mapping[FieldPath, Iterable[Algorithm]]):
        self._allowed = {f: frozenset(algs) for f, algs in allowed.items()}

    def __getitem__(self, path: FieldPath) -> frozenset[Algorithm]:
        return self._allowed.get(path, frozenset())

    def __contains__(self, path) -> bool:
        return path in self._allowed

    def __len__(self):
        return len(self._allowed)

    def __eq__(self, other):
        return isinstance(other, CompatibilityMatrix) and self._allowed == other._allowed

    def fields(self) -> list[FieldPath]:
        """Fields in catalog order."""
        return [f for f in FieldPath if f in self._allowed]

    def algorithms(self, path: FieldPath) -> list[Algorithm]:
        """Algorithms for ``path`` in catalog order."""
        allowed = self[path]
        return [a for a in Algorithm if a in allowed]

    def pair_count(self) -> int:
        return sum(len(a) for a in self._allowed.values())

    def type_violations(self) -> list[tuple[FieldPath, Algorithm]]:
        return [(f, a) for f in self.fields() for a in self.algorithms(f) if not type_compatible(a, f)]

    @classmethod
    def default(cls) -> "CompatibilityMatrix":
        return cls({f: [a for a in Algorithm if applicable(a, f)] for f in FieldPath})

    @classmethod
    def from_text(cls, text: str) -> "CompatibilityMatrix":
        allowed: dict[FieldPath, list[Algorithm]] = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if ":" not in line:
                raise PolicySyntaxError("expected '<FIELD>: <ALGORITHM>, ...'", line=lineno)
            name, rest = line.split(":", 1)
            path = _parse_field(name, lineno)
            if path in allowed:
                raise DuplicateField(f"field {path.name} listed twice", line=lineno)
            items = [t.strip() for t in rest.replace(",", " ").split() if t.strip()]
            if items == ["*"]:
                algs = [a for a in Algorithm if applicable(a, path)]
            else:
                algs = [_parse_algorithm(t, lineno) for t in items]
            allowed[path] = algs
        return cls(allowed)

    def to_text(self) -> str:
        return "".join(
            f"{f.name}: {', '.join(a.value for a in self.algorithms(f))}\n" for f in self.fields()
        )


def _parse_field(name: str, lineno: int | None) -> FieldPath:
    try:
        return FieldPath.parse(name)
    except KeyError:
        raise UnknownField(f"unknown field {name.strip()!r}", line=lineno) from None


def _parse_algorithm(name: str, lineno: int | None) -> Algorithm:
    try:
        return Algorithm.parse(name)
    except KeyError:
        raise UnknownAlgorithm(f"unknown algorithm {name.strip()!r}", line=lineno) from None


def parse_policy_file(text: str) -> Policy:
    name = None
    seed = None
    entries: list[PolicyEntry] = []
    seen: dict[FieldPath, int] = {}

    for lineno, raw in enumerate(text.splitlines(), 1):
        try:
            tokens = shlex.split(raw, comments=True)
        except ValueError as exc:
            raise PolicySyntaxError(str(exc), line=lineno) from None
        if not tokens:
            continue
        keyword, args = tokens[0], tokens[1:]

        if name is None and keyword != "policy":
            raise PolicySyntaxError("first statement must be 'policy <name>'", line=lineno)
        if keyword == "policy":
            if name is not None:
                raise PolicySyntaxError("'policy' given twice", line=lineno)
            if len(args) != 1:
                raise PolicySyntaxError("expected 'policy <name>'", line=lineno)
            name = args[0]
        elif keyword == "seed":
            if seed is not None:
                raise PolicySyntaxError("'seed' given twice", line=lineno)
            if len(args) != 1 or not args[0].isdigit() or int(args[0]) > U64_MAX:
                raise PolicySyntaxError("expected 'seed <decimal u64>'", line=lineno)
            seed = int(args[0])
        elif keyword == "entry":
            entry = _parse_entry(args, lineno)
            if entry.field in seen:
                raise DuplicateField(
                    f"field {entry.field.name} already bound on line {seen[entry.field]}", line=lineno)
            seen[entry.field] = lineno
            entries.append(entry)
        else:
            raise PolicySyntaxError(f"unknown statement {keyword!r}", line=lineno)

    if name is None:
        raise PolicySyntaxError("missing 'policy <name>' statement")
    return Policy(name=name, seed=seed or 0, entries=tuple(entries))


def _parse_entry(args: list[str], lineno: int) -> PolicyEntry:
    path = None
    algorithm = None
    params: dict[str, str] = {}
    for tok in args:
        if "=" not in tok:
            raise PolicySyntaxError(f"expected key=value, got {tok!r}", line=lineno)
        key, value = tok.split("=", 1)
        if key == "field":
            path = _parse_field(value, lineno)
        elif key == "algorithm":
            algorithm = _parse_algorithm(value, lineno)
        elif key.startswith("param.") and len(key) > 6:
            params[key[6:]] = value
        else:
            raise PolicySyntaxError(f"unexpected key {key!r}", line=lineno)
    if path is None or algorithm is None:
        raise PolicySyntaxError("entry needs both field= and algorithm=", line=lineno)
    return PolicyEntry(path, algorithm, params, line=lineno)


def _format_value(value) -> str:
    if isinstance(value, bytes):
        return value.hex()
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (list, tuple)):
        return ",".join(_format_value(v) for v in value)
    return str(value)


def format_policy(policy: Policy) -> str:
    lines = [f"policy {shlex.quote(policy.name)}", f"seed {policy.seed}"]
    for e in policy.entries:
        parts = [f"entry field={e.field.name} algorithm={e.algorithm.value}"]
        parts += [shlex.quote(f"param.{k}={_format_value(v)}") for k, v in e.params.items()]
        lines.append(" ".join(parts))
    return "\n".join(lines) + "\n"


# -- validation / enumeration ------------------------------------------------

@dataclass(frozen=True)
class Violation:
    index: int
    field: FieldPath
    algorithm: Algorithm
    reason: str
    line: int | None = None

    def __str__(self):
        where = f"line {self.line}: " if self.line is not None else ""
        return f"{where}{self.field.name}/{self.algorithm.value}: {self.reason}"


def validate(policy: Policy, matrix: CompatibilityMatrix | None = None) -> list[Violation]:
    """Every entry that the matrix forbids or whose parameters are invalid.

    Without a matrix only the data-type check is applied.
    """
    violations = []
    for i, e in enumerate(policy.entries):
        if matrix is not None:
            if e.algorithm not in matrix[e.field]:
                violations.append(Violation(i, e.field, e.algorithm, "not allowed by matrix", e.line))
                continue
        elif not type_compatible(e.algorithm, e.field):
            violations.append(Violation(
                i, e.field, e.algorithm,
                f"{e.algorithm.value} does not apply to {e.field.dtype.value} data", e.line))
            continue
        try:
            normalize_params(e.algorithm, e.params)
        except ParamError as exc:
            violations.append(Violation(i, e.field, e.algorithm, str(exc), e.line))
    return violations


def policy_name(path: FieldPath, algorithm: Algorithm) -> str:
    return f"{path.name}-{algorithm.value}"


def enumerate_single_field_policies(
    matrix: CompatibilityMatrix,
    default_params: Mapping[Algorithm, Mapping[str, Any]] | None = None,
    exclude: Iterable[FieldPath] = (),
    seed: int = 0,
) -> list[Policy]:
    """One policy per allowed (field, algorithm) pair, ordered field then algorithm."""
    if default_params is None:
        default_params = DEFAULT_PARAMS
    exclude = set(exclude)
    out = []
    for path in matrix.fields():
        if path in exclude:
            continue
        for alg in matrix.algorithms(path):
            params = dict(default_params.get(alg, {}))
            out.append(Policy(policy_name(path, alg), seed, (PolicyEntry(path, alg, params),)))
    return out


def compose(name: str, policies: Iterable[Policy], seed: int | None = None) -> Policy:
    """Concatenate the entries of several policies into one multi-field policy."""
    policies = list(policies)
    entries = tuple(e for p in policies for e in p.entries)
    if seed is None:
        seed = policies[0].seed if policies else 0
    return Policy(name, seed, entries)


# -- application -------------------------------------------------------------

def apply_entry(trace: Trace, entry: PolicyEntry, state: AnonymizerState) -> Trace:
    """Run one entry over the whole trace; packets lacking the field pass through."""
    path = entry.field
    packets = list(trace.packets)
    idxs = [i for i, p in enumerate(packets) if p.has(path)]
    if not idxs:
        return trace
    values = [get_field(packets[i], path) for i in idxs]
    widths = [packets[i].field_width(path) for i in idxs]
    new_values = run_algorithm(entry.algorithm, values, widths, entry.params, state)
    for i, old, new in zip(idxs, values, new_values):
        if new != old:
            packets[i] = set_field(packets[i], path, new)
    return trace.with_packets(packets)


def entry_state(policy: Policy, index: int) -> AnonymizerState:
    return AnonymizerState(derive_seed(policy.seed, index))


def apply_policy(trace: Trace, policy: Policy, matrix: CompatibilityMatrix | None = None) -> Trace:
    """Apply entries in order, each with a fresh state seeded from (seed, index)."""
    violations = validate(policy, matrix)
    if violations:
        raise PolicyInvalid("; ".join(str(v) for v in violations))
    for i, entry in enumerate(policy.entries):
        trace = apply_entry(trace, entry, entry_state(policy, i))
    return trace
