"""IDS utility metric: multiset TP/FP/FN between alert sets, plus marginals."""

from __future__ import annotations

import csv
import io
import statistics
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from idsutil.detector import ALERT_FIELDS, Alert
from idsutil.errors import MissingConstituent
from idsutil.trace import FieldPath


@dataclass(frozen=True)
class FieldSet:
    name: str
    fields: tuple[str, ...]

    def __post_init__(self):
        unknown = [f for f in self.fields if f not in ALERT_FIELDS]
        if unknown:
            raise ValueError(f"unknown alert fields: {', '.join(unknown)}")
        if not isinstance(self.fields, tuple):
            object.__setattr__(self, "fields", tuple(self.fields))

    def key(self, alert: Alert) -> tuple:
        return alert.project(self.fields)

    def without(self, names: Iterable[str]) -> "FieldSet":
        drop = set(names)
        kept = tuple(f for f in self.fields if f not in drop)
        if kept == self.fields:
            return self
        return FieldSet(f"{self.name}-" + "-".join(sorted(drop & set(self.fields))), kept)


FS1 = FieldSet("fs1", ("timestamp", "sig_id", "id"))
FS2 = FieldSet("fs2", ("sig_id", "src", "srcport", "dst", "dstport", "id", "tcpseq"))


def custom_field_set(names: Iterable[str], name: str = "custom") -> FieldSet:
    return FieldSet(name, tuple(names))


# Alert columns whose value is copied from a packet field.
DERIVED_ALERT_FIELDS: dict[FieldPath, tuple[str, ...]] = {
    FieldPath.TS_SEC: ("timestamp",),
    FieldPath.TS_USEC: ("timestamp",),
    FieldPath.IPV4_SRC_IP: ("src",),
    FieldPath.IPV4_DST_IP: ("dst",),
    FieldPath.TCP_SRC_PORT: ("srcport",),
    FieldPath.UDP_SRC_PORT: ("srcport",),
    FieldPath.TCP_DST_PORT: ("dstport",),
    FieldPath.UDP_DST_PORT: ("dstport",),
    FieldPath.IPV4_ID: ("id",),
    FieldPath.TCP_SEQUENCE: ("tcpseq",),
}


def select_field_set(policy, generalized: bool = False) -> FieldSet:
    """FS2 when the policy rewrites TS_SEC or TS_USEC, FS1 otherwise.

    ``policy`` is a Policy or any iterable of FieldPath.  In generalized mode
    the chosen set also loses every alert column copied from a rewritten
    packet field.
    """
    targeted = set(getattr(policy, "fields", policy))
    chosen = FS2 if targeted & {FieldPath.TS_SEC, FieldPath.TS_USEC} else FS1
    if not generalized:
        return chosen
    derived = {col for f in targeted for col in DERIVED_ALERT_FIELDS.get(f, ())}
    return chosen.without(derived)


@dataclass(frozen=True)
class ComparisonResult:
    tp: int
    fp: int
    fn: int

    @property
    def baseline_count(self) -> int:
        return self.tp + self.fn

    @property
    def anony_count(self) -> int:
        return self.tp + self.fp

    @property
    def error(self) -> int:
        return self.fp + self.fn


def compare(baseline: Iterable[Alert], anony: Iterable[Alert], fs: FieldSet) -> ComparisonResult:
    """Multiset match on projected keys: tp = sum of min counts per key."""
    base = Counter(fs.key(a) for a in baseline)
    anon = Counter(fs.key(a) for a in anony)
    tp = sum(min(c, anon[k]) for k, c in base.items())
    return ComparisonResult(tp=tp, fp=sum(anon.values()) - tp, fn=sum(base.values()) - tp)


# -- per-run rows and marginals ----------------------------------------------

@dataclass(frozen=True)
class RunResult:
    policy: str
    field: str
    algorithm: str
    result: ComparisonResult | None = None
    status: str = "ok"

    @property
    def ok(self) -> bool:
        return self.result is not None and self.status == "ok"


@dataclass(frozen=True)
class MarginalRow:
    name: str
    runs: int
    fp_avg: float
    fn_avg: float
    error_avg: float
    alerts_avg: float
    alerts_max: int
    alerts_min: int


@dataclass(frozen=True)
class MarginalReport:
    axis: str
    rows: tuple[MarginalRow, ...]

    def row(self, name: str) -> MarginalRow:
        for r in self.rows:
            if r.name == name:
                return r
        raise KeyError(name)


def marginal(results: Iterable[tuple[str, str, ComparisonResult]], axis: str) -> MarginalReport:
    """Average FP/FN/error and alert counts per field or per algorithm."""
    if axis not in ("by_field", "by_algorithm"):
        raise ValueError("axis must be 'by_field' or 'by_algorithm'")
    groups: dict[str, list[ComparisonResult]] = {}
    for fld, alg, res in results:
        name = getattr(fld, "name", fld) if axis == "by_field" else getattr(alg, "value", alg)
        groups.setdefault(str(name), []).append(res)
    rows = []
    for name in sorted(groups):
        rs = groups[name]
        alerts = [r.anony_count for r in rs]
        rows.append(MarginalRow(
            name=name,
            runs=len(rs),
            fp_avg=statistics.fmean(r.fp for r in rs),
            fn_avg=statistics.fmean(r.fn for r in rs),
            error_avg=statistics.fmean(r.error for r in rs),
            alerts_avg=statistics.fmean(alerts),
            alerts_max=max(alerts),
            alerts_min=min(alerts),
        ))
    return MarginalReport(axis, tuple(rows))


def marginal_from_runs(runs: Iterable[RunResult], axis: str) -> MarginalReport:
    """Marginals over successful single-field runs only."""
    return marginal(
        ((r.field, r.algorithm, r.result) for r in runs if r.ok and "+" not in r.field), axis)


# -- multi-field non-additivity ----------------------------------------------

@dataclass(frozen=True)
class NonAdditivityRow:
    policy: str
    constituents: tuple[str, ...]
    sum_fp: int
    observed_fp: int

    @property
    def deviation(self) -> int:
        return self.observed_fp - self.sum_fp


def _constituent_keys(policy):
    """(field name, algorithm name or None) pairs of a combined policy key."""
    entries = getattr(policy, "entries", None)
    if entries is not None:
        return policy.name, [(e.field.name, e.algorithm.value) for e in entries]
    if isinstance(policy, str):
        items = policy.split("+")
    else:
        items = list(policy)
    name = "+".join(getattr(i, "name", str(i)) for i in items)
    return name, [(getattr(i, "name", str(i)), None) for i in items]


def _lookup_single(single: Mapping, field_name: str, algorithm: str | None):
    candidates = []
    if algorithm is not None:
        candidates.append(f"{field_name}-{algorithm}")
    candidates.append(field_name)
    try:
        candidates.append(FieldPath[field_name])
    except KeyError:
        pass
    for key in candidates:
        if key in single:
            return key, single[key]
    raise MissingConstituent(f"no single-field result for {field_name}")


def nonadditivity_report(single: Mapping, combined: Mapping) -> list[NonAdditivityRow]:
    """Compare each combined policy's FP with the sum of its constituents' FP.

    ``single`` maps a field (FieldPath, field name, or ``FIELD-Algorithm``
    policy name) to its single-field result.  ``combined`` maps a Policy (or
    a sequence of fields, or a ``+``-joined field string) to its result.
    """
    rows = []
    for policy, observed in combined.items():
        name, parts = _constituent_keys(policy)
        found = [_lookup_single(single, f, a) for f, a in parts]
        rows.append(NonAdditivityRow(
            policy=name,
            constituents=tuple(getattr(k, "name", k) for k, _ in found),
            sum_fp=sum(r.fp for _, r in found),
            observed_fp=observed.fp,
        ))
    return rows


# -- CSV emission ------------------------------------------------------------

REPORT_COLUMNS = ("policy", "field", "algorithm", "baseline_count", "anony_count", "tp", "fp", "fn", "error", "status")
MARGINAL_COLUMNS = ("name", "runs", "fp_avg", "fn_avg", "error_avg", "alerts_avg", "alerts_max", "alerts_min")


def _fmt(x: float) -> str:
    return f"{x:.2f}"


def write_report_csv(runs: Iterable[RunResult]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for r in sorted(runs, key=lambda r: r.policy):
        if r.result is None:
            w.writerow([r.policy, r.field, r.algorithm, "", "", "", "", "", "", r.status])
        else:
            c = r.result
            w.writerow([r.policy, r.field, r.algorithm, c.baseline_count, c.anony_count,
                        c.tp, c.fp, c.fn, c.error, r.status])
    return buf.getvalue()


def read_report_csv(text: str) -> list[RunResult]:
    out = []
    for row in csv.DictReader(io.StringIO(text)):
        if row["tp"] == "":
            out.append(RunResult(row["policy"], row["field"], row["algorithm"], None, row.get("status") or "error"))
        else:
            res = ComparisonResult(int(row["tp"]), int(row["fp"]), int(row["fn"]))
            out.append(RunResult(row["policy"], row["field"], row["algorithm"], res, row.get("status") or "ok"))
    return out


def write_marginal_csv(report: MarginalReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(MARGINAL_COLUMNS)
    for r in report.rows:
        w.writerow([r.name, r.runs, _fmt(r.fp_avg), _fmt(r.fn_avg), _fmt(r.error_avg),
                    _fmt(r.alerts_avg), r.alerts_max, r.alerts_min])
    return buf.getvalue()


def write_nonadditivity_csv(rows: Sequence[NonAdditivityRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("policy", "constituents", "sum_fp", "observed_fp", "deviation"))
    for r in rows:
        w.writerow([r.policy, "+".join(r.constituents), r.sum_fp, r.observed_fp, r.deviation])
    return buf.getvalue()
