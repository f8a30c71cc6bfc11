"""Command-line harness: anonymize traces, sweep policies, compare alert files."""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import re
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from idsutil import __version__
from idsutil.detector import demo_rules, parse_rules, parse_snort_csv, run_mini_ids, write_snort_csv
from idsutil.errors import IdsUtilError, PolicyError, RuleSyntaxError
from idsutil.metrics import (
    FS1,
    FS2,
    DERIVED_ALERT_FIELDS,
    RunResult,
    compare,
    marginal_from_runs,
    nonadditivity_report,
    read_report_csv,
    select_field_set,
    write_marginal_csv,
    write_nonadditivity_csv,
    write_report_csv,
)
from idsutil.policy import (
    CompatibilityMatrix,
    Policy,
    apply_policy,
    enumerate_single_field_policies,
    format_policy,
    parse_policy_file,
    policy_name,
    validate,
)
from idsutil.trace import Protocol, filter_protocols, parse_pcap, recompute_checksums, write_pcap

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2

BUILTIN_RULES = "builtin:demo"
MANIFEST_NAME = "manifest.json"


class UsageError(Exception):
    """Bad input that should end the command with exit status 2."""


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _safe_name(name: str) -> str:
    return re.sub(r"[^\w.+-]", "_", name)


def _read_text(path) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"{path}: {exc.strerror}") from None


def _read_bytes(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise UsageError(f"{path}: {exc.strerror}") from None


def _load_policy(path) -> Policy:
    try:
        return parse_policy_file(_read_text(path))
    except PolicyError as exc:
        raise UsageError(f"{path}: {exc}") from None


def _load_matrix(path) -> CompatibilityMatrix:
    if path is None:
        return CompatibilityMatrix.default()
    try:
        return CompatibilityMatrix.from_text(_read_text(path))
    except PolicyError as exc:
        raise UsageError(f"{path}: {exc}") from None


def _load_rules_text(spec: str) -> str:
    if spec == BUILTIN_RULES:
        return demo_rules().to_text()
    return _read_text(spec)


def _check_policy(policy: Policy, matrix, source) -> None:
    problems = validate(policy, matrix)
    if problems:
        raise UsageError("\n".join(f"{source}: {p}" for p in problems))


def _post_process(trace, recompute: bool):
    if recompute:
        trace = trace.with_packets(recompute_checksums(p) for p in trace.packets)
    return trace


def _field_set(choice: str, policy: Policy | None, generalized: bool):
    fields = policy.fields if policy is not None else ()
    if choice == "auto":
        return select_field_set(fields, generalized)
    fs = FS1 if choice == "fs1" else FS2
    if generalized:
        fs = fs.without(col for f in fields for col in DERIVED_ALERT_FIELDS.get(f, ()))
    return fs


# -- anonymize ---------------------------------------------------------------

def cmd_anonymize(args) -> int:
    policy = _load_policy(args.policy)
    if args.seed is not None:
        policy = policy.with_seed(args.seed)
    matrix = _load_matrix(args.matrix) if args.matrix else None
    _check_policy(policy, matrix, args.policy)

    raw = _read_bytes(args.trace)
    trace = parse_pcap(raw)
    out_trace = _post_process(apply_policy(trace, policy, matrix), args.recompute_checksums)
    data = write_pcap(out_trace)
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_bytes(data)

    manifest = Path(args.manifest) if args.manifest else out.parent / "manifest.jsonl"
    record = {
        "command": "anonymize",
        "tool_version": __version__,
        "input": {"path": str(args.trace), "sha256": sha256_bytes(raw)},
        "policy": {"path": str(args.policy), "name": policy.name, "seed": policy.seed,
                   "text": format_policy(policy)},
        "recompute_checksums": bool(args.recompute_checksums),
        "output": {"path": str(out), "sha256": sha256_bytes(data)},
    }
    with manifest.open("a", encoding="utf-8") as fh:
        fh.write(json.dumps(record, sort_keys=True) + "\n")
    return EXIT_OK


# -- sweep -------------------------------------------------------------------

# Per-process sweep context, set once by _init_worker.
_CTX: dict = {}


def _init_worker(ctx: dict) -> None:
    _CTX.clear()
    _CTX.update(ctx)
    _CTX["trace"] = parse_pcap(ctx["trace_bytes"])
    _CTX["rules"] = parse_rules(ctx["rules_text"]) if ctx["rules_text"] is not None else None


def _run_one(policy_text: str) -> tuple[RunResult, dict]:
    """Anonymize, detect and compare for one policy; failures become status rows."""
    policy = parse_policy_file(policy_text)
    fname = _safe_name(policy.name)
    out_dir = Path(_CTX["out_dir"])
    outputs = {}
    status = "ok"
    result = None
    try:
        anon = _post_process(apply_policy(_CTX["trace"], policy), _CTX["recompute"])
        data = write_pcap(anon)
        if _CTX["write_pcaps"]:
            rel = f"anonymized/{fname}.pcap"
            (out_dir / rel).write_bytes(data)
            outputs["pcap"] = rel
        outputs["pcap_sha256"] = sha256_bytes(data)
        if _CTX["rules"] is not None:
            # detect on what a downstream tool would read back, not the in-memory trace
            alerts = run_mini_ids(parse_pcap(data), _CTX["rules"])
            rel = f"alerts/{fname}.csv"
            (out_dir / rel).write_text(write_snort_csv(alerts), encoding="utf-8")
            outputs["alerts"] = rel
        else:
            src = Path(_CTX["alerts_dir"]) / f"{fname}.csv"
            alerts = parse_snort_csv(src.read_text(encoding="utf-8"))
        fs = _field_set(_CTX["field_set"], policy, _CTX["generalized"])
        result = compare(_CTX["baseline"], alerts, fs)
    except Exception as exc:  # crash isolation: record and carry on
        status = f"error: {type(exc).__name__}: {exc}"
    row = RunResult(policy.name, policy.field_label, policy.algorithm_label, result, status)
    return row, outputs


def _constituents(policy: Policy) -> list[Policy]:
    return [Policy(f"{policy.name}.{policy_name(e.field, e.algorithm)}", policy.seed, (e,))
            for e in policy.entries]


def _alerts_digest(alerts_dir: Path) -> str:
    h = hashlib.sha256()
    for p in sorted(alerts_dir.glob("*.csv")):
        h.update(f"{p.name}\0{sha256_bytes(p.read_bytes())}\n".encode())
    return h.hexdigest()


def _settings_from_args(args) -> dict:
    if args.trace is None:
        raise UsageError("sweep needs a trace (or --from-manifest)")
    if (args.rules is None) == (args.alerts_dir is None):
        raise UsageError("give exactly one of --rules or --alerts-dir")
    matrix_text = _read_text(args.matrix) if args.matrix else None
    matrix = _load_matrix(args.matrix)
    keep = sorted({Protocol.coerce(k).value for k in args.keep}) if args.keep else None
    excluded = set()
    if keep:
        excluded = {f for f in matrix.fields() if f.protocol is not None and f.protocol.value not in keep}
    policies = enumerate_single_field_policies(matrix, exclude=excluded, seed=args.seed)
    extra = []
    for path in args.policy or ():
        p = _load_policy(path)
        if args.seed is not None and p.seed == 0:
            p = p.with_seed(args.seed)
        _check_policy(p, None, path)  # the matrix scopes enumeration, not hand-written policies
        extra.append(p)
    return {
        "trace": str(args.trace),
        "rules": args.rules,
        "alerts_dir": str(args.alerts_dir) if args.alerts_dir else None,
        "matrix": str(args.matrix) if args.matrix else None,
        "matrix_sha256": sha256_bytes(matrix_text.encode()) if matrix_text is not None else None,
        "seed": args.seed,
        "field_set": args.field_set,
        "generalized": bool(args.generalized_fieldset),
        "keep": keep,
        "recompute_checksums": bool(args.recompute_checksums),
        "write_pcaps": not args.no_pcaps,
        "policies": [format_policy(p) for p in policies],
        "multi_policies": [format_policy(p) for p in extra],
    }


def _settings_from_manifest(path) -> dict:
    try:
        m = json.loads(_read_text(path))
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: not a manifest ({exc})") from None
    s = dict(m["settings"])
    s["policies"] = [p["text"] for p in m["policies"]]
    s["multi_policies"] = [p["text"] for p in m.get("multi_policies", [])]
    s["expect"] = m["inputs"]
    return s


def run_sweep(settings: dict, out_dir: Path, jobs: int = 1) -> int:
    trace_bytes = _read_bytes(settings["trace"])
    trace = parse_pcap(trace_bytes)
    if settings["keep"]:
        trace = filter_protocols(trace, settings["keep"])
        trace_bytes_used = write_pcap(trace)
    else:
        trace_bytes_used = trace_bytes

    inputs = {"trace_sha256": sha256_bytes(trace_bytes)}
    rules_text = None
    if settings["rules"] is not None:
        rules_text = _load_rules_text(settings["rules"])
        try:
            rules = parse_rules(rules_text)
        except RuleSyntaxError as exc:
            raise UsageError(f"{settings['rules']}: {exc}") from None
        inputs["rules_sha256"] = rules.digest()
    else:
        inputs["alerts_sha256"] = _alerts_digest(Path(settings["alerts_dir"]))
    if settings.get("matrix_sha256"):
        inputs["matrix_sha256"] = settings["matrix_sha256"]

    expect = settings.pop("expect", None)
    if expect is not None:
        changed = sorted(k for k, v in expect.items() if inputs.get(k) != v)
        if changed:
            raise UsageError(f"inputs differ from manifest: {', '.join(changed)}")

    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "alerts").mkdir(exist_ok=True)
    if settings["write_pcaps"]:
        (out_dir / "anonymized").mkdir(exist_ok=True)

    # baseline: computed once, shared by every policy run
    baseline_runs = 0
    if rules_text is not None:
        baseline = run_mini_ids(trace, rules)
        baseline_runs += 1
        baseline_src = "alerts/baseline.csv"
        (out_dir / baseline_src).write_text(write_snort_csv(baseline), encoding="utf-8")
    else:
        src = Path(settings["alerts_dir"]) / "baseline.csv"
        try:
            baseline = parse_snort_csv(_read_text(src))
        except IdsUtilError as exc:
            raise UsageError(f"{src}: {exc}") from None
        baseline_src = str(src)

    single_texts = list(settings["policies"])
    multi = [parse_policy_file(t) for t in settings["multi_policies"]]
    constituent_texts = [format_policy(c) for p in multi for c in _constituents(p)]
    all_texts = single_texts + settings["multi_policies"] + constituent_texts

    ctx = {
        "trace_bytes": trace_bytes_used,
        "rules_text": rules_text,
        "alerts_dir": settings["alerts_dir"],
        "baseline": baseline,
        "out_dir": str(out_dir),
        "field_set": settings["field_set"],
        "generalized": settings["generalized"],
        "recompute": settings["recompute_checksums"],
        "write_pcaps": settings["write_pcaps"],
    }
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs, initializer=_init_worker, initargs=(ctx,)) as pool:
            outcomes = list(pool.map(_run_one, all_texts, chunksize=4))
    else:
        _init_worker(ctx)
        outcomes = [_run_one(t) for t in all_texts]
    by_name = {row.policy: (row, outputs) for row, outputs in outcomes}

    rows = [row for row, _ in outcomes]
    (out_dir / "results.csv").write_text(write_report_csv(rows), encoding="utf-8")
    write_marginal_outputs(rows, out_dir)

    if multi:
        nonadd = []
        for p in multi:
            if not by_name[p.name][0].ok:
                continue
            single = {}
            for c in _constituents(p):
                r = by_name[c.name][0]
                if r.ok:
                    single[policy_name(c.entries[0].field, c.entries[0].algorithm)] = r.result
            try:
                nonadd += nonadditivity_report(single, {p: by_name[p.name][0].result})
            except KeyError:
                continue
        (out_dir / "nonadditivity.csv").write_text(write_nonadditivity_csv(nonadd), encoding="utf-8")

    def describe(text: str) -> dict:
        p = parse_policy_file(text)
        row, outputs = by_name[p.name]
        return {"name": p.name, "seed": p.seed, "text": text, "status": row.status, "outputs": outputs}

    manifest = {
        "tool": "idsutil",
        "tool_version": __version__,
        "inputs": inputs,
        "settings": {k: v for k, v in settings.items() if k not in ("policies", "multi_policies")},
        "baseline": {"detection_runs": baseline_runs, "alerts": len(baseline), "source": baseline_src},
        "policies": [describe(t) for t in single_texts],
        "multi_policies": [describe(t) for t in settings["multi_policies"]],
        # regenerated from multi_policies on replay, listed for their outputs only
        "constituent_policies": [describe(t) for t in constituent_texts],
        "outputs": sorted(p.name for p in out_dir.iterdir() if p.is_file() and p.name != MANIFEST_NAME),
    }
    (out_dir / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    failed = sum(1 for r in rows if not r.ok)
    if failed:
        print(f"{failed} of {len(rows)} policies failed; see results.csv", file=sys.stderr)
    return EXIT_OK


def cmd_sweep(args) -> int:
    if args.from_manifest:
        settings = _settings_from_manifest(args.from_manifest)
    else:
        settings = _settings_from_args(args)
    return run_sweep(settings, Path(args.output), jobs=max(1, args.jobs))


# -- report ------------------------------------------------------------------

def _enumerated(rows):
    # constituent runs of multi-field policies carry a prefixed name and stay out of marginals
    return [r for r in rows if r.policy == f"{r.field}-{r.algorithm}"]


def write_marginal_outputs(rows, out_dir: Path, charts: bool = True) -> None:
    single = _enumerated(rows)
    for axis in ("by_field", "by_algorithm"):
        report = marginal_from_runs(single, axis)
        (out_dir / f"marginal_{axis}.csv").write_text(write_marginal_csv(report), encoding="utf-8")
        if charts:
            write_marginal_chart(report, out_dir / f"marginal_{axis}.svg")


def write_marginal_chart(report, path: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "idsutil"
    names = [r.name for r in report.rows]
    xs = range(len(names))
    fig, ax = plt.subplots(figsize=(max(6.0, 0.45 * len(names) + 2), 4.5))
    ax.bar([x - 0.2 for x in xs], [r.fp_avg for r in report.rows], width=0.4, label="avg FP")
    ax.bar([x + 0.2 for x in xs], [r.fn_avg for r in report.rows], width=0.4, label="avg FN")
    ax.set_xticks(list(xs))
    ax.set_xticklabels(names, rotation=60, ha="right", fontsize=7)
    ax.set_ylabel("alerts")
    ax.set_title("field marginals" if report.axis == "by_field" else "algorithm marginals")
    if any(r.fp_avg > 0 or r.fn_avg > 0 for r in report.rows):
        ax.set_yscale("symlog")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def cmd_report(args) -> int:
    rows = read_report_csv(_read_text(args.results))
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    write_marginal_outputs(rows, out, charts=not args.no_charts)
    return EXIT_OK


# -- compare -----------------------------------------------------------------

def cmd_compare(args) -> int:
    sides = []
    for path in (args.baseline, args.anony):
        try:
            sides.append(parse_snort_csv(_read_text(path)))
        except IdsUtilError as exc:
            raise UsageError(f"{path}: {exc}") from None
    policy = _load_policy(args.policy) if args.policy else None
    fs = _field_set(args.field_set, policy, args.generalized_fieldset)
    res = compare(sides[0], sides[1], fs)
    name = policy.name if policy else Path(args.anony).stem
    row = RunResult(name, policy.field_label if policy else "", policy.algorithm_label if policy else "", res)
    sys.stdout.write(write_report_csv([row]))
    return EXIT_OK


# -- entry point -------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="idsutil", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def field_set_flags(p):
        p.add_argument("--field-set", choices=("auto", "fs1", "fs2"), default="auto",
                       help="alert projection used for matching (auto: FS2 iff timestamps are rewritten)")
        p.add_argument("--generalized-fieldset", action="store_true",
                       help="also drop alert columns copied from rewritten packet fields")

    p = sub.add_parser("anonymize", help="apply one policy file to a pcap")
    p.add_argument("trace")
    p.add_argument("policy")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--seed", type=int, help="override the policy seed")
    p.add_argument("--matrix", help="compatibility matrix file to validate against")
    p.add_argument("--manifest", help="manifest to append to (default: manifest.jsonl next to output)")
    p.add_argument("--recompute-checksums", action="store_true")
    p.set_defaults(func=cmd_anonymize)

    p = sub.add_parser("sweep", help="run every single-field policy of a matrix and report utility")
    p.add_argument("trace", nargs="?")
    p.add_argument("-o", "--output", required=True, help="output directory")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--rules", help=f"rule file for the built-in detector, or {BUILTIN_RULES}")
    src.add_argument("--alerts-dir", help="pre-generated Snort CSVs: baseline.csv and <policy>.csv")
    p.add_argument("--matrix", help="compatibility matrix file (default: derived from data types)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--policy", action="append", help="extra multi-field policy file (repeatable)")
    p.add_argument("--keep", action="append", choices=("tcp", "udp", "icmp"),
                   help="keep only these protocols (repeatable); fields of the others are skipped")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--recompute-checksums", action="store_true")
    p.add_argument("--no-pcaps", action="store_true", help="do not keep anonymized pcaps")
    p.add_argument("--from-manifest", help="re-run the sweep recorded in a manifest.json")
    field_set_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("compare", help="compare two Snort CSV alert files")
    p.add_argument("baseline")
    p.add_argument("anony")
    p.add_argument("--policy", help="policy file, used by --field-set auto")
    field_set_flags(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("report", help="rebuild marginal CSVs and charts from results.csv")
    p.add_argument("results")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--no-charts", action="store_true")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"idsutil {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except IdsUtilError as exc:
        print(f"idsutil {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"idsutil {args.command}: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
