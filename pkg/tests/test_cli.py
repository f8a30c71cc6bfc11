import csv
import io
import json

import pytest

from idsutil import cli
from idsutil.detector import demo_rules, parse_snort_csv, run_mini_ids, write_snort_csv
from idsutil.synth import random_trace
from idsutil.trace import FieldPath, Number, Protocol, get_field, parse_pcap, read_pcap, save_pcap


@pytest.fixture()
def trace_file(tmp_path):
    path = tmp_path / "in.pcap"
    save_pcap(path, random_trace(100, seed=21, port0_rate=0.05))
    return path


def rows(path):
    return list(csv.DictReader(io.StringIO(path.read_text())))


def test_anonymize_identity(tmp_path, trace_file):
    pol = tmp_path / "id.pol"
    pol.write_text("policy identity\n")
    out = tmp_path / "out" / "id.pcap"
    assert cli.main(["anonymize", str(trace_file), str(pol), "-o", str(out)]) == 0
    assert out.read_bytes() == trace_file.read_bytes()
    (entry,) = [json.loads(x) for x in (out.parent / "manifest.jsonl").read_text().splitlines()]
    assert entry["policy"]["name"] == "identity"
    assert entry["input"]["sha256"] == entry["output"]["sha256"]


def test_anonymize_black_marker_dst_port(tmp_path, trace_file):
    pol = tmp_path / "bm.pol"
    pol.write_text("policy bm\nentry field=TCP_DST_PORT algorithm=BlackMarker param.constant=0\n")
    out = tmp_path / "bm.pcap"
    assert cli.main(["anonymize", str(trace_file), str(pol), "-o", str(out), "--seed", "9"]) == 0
    tcp = [p for p in read_pcap(out).packets if p.protocol is Protocol.TCP]
    assert tcp and all(get_field(p, FieldPath.TCP_DST_PORT) == Number(0) for p in tcp)
    assert cli.main(["anonymize", str(trace_file), str(pol), "-o", str(out)]) == 0
    assert len((tmp_path / "manifest.jsonl").read_text().splitlines()) == 2


def test_anonymize_unknown_field_exit_2(tmp_path, trace_file, capsys):
    pol = tmp_path / "bad.pol"
    pol.write_text("policy bad\nseed 1\nentry field=NOT_A_FIELD algorithm=Hash\n")
    assert cli.main(["anonymize", str(trace_file), str(pol), "-o", str(tmp_path / "x.pcap")]) == 2
    assert "line 3" in capsys.readouterr().err
    assert not (tmp_path / "x.pcap").exists()


def test_anonymize_matrix_violation_exit_2(tmp_path, trace_file, capsys):
    pol = tmp_path / "p.pol"
    pol.write_text("policy p\nentry field=TCP_DST_PORT algorithm=Hash\n")
    mat = tmp_path / "m.txt"
    mat.write_text("TCP_DST_PORT: Annihilation\n")
    assert cli.main(["anonymize", str(trace_file), str(pol), "-o", str(tmp_path / "x.pcap"),
                     "--matrix", str(mat)]) == 2
    assert "line 2" in capsys.readouterr().err


def test_anonymize_recompute_checksums(tmp_path, trace_file):
    pol = tmp_path / "p.pol"
    pol.write_text("policy p\nentry field=IPV4_TTL algorithm=Substitution param.constant=1\n")
    out = tmp_path / "o.pcap"
    assert cli.main(["anonymize", str(trace_file), str(pol), "-o", str(out), "--recompute-checksums"]) == 0
    from oracles import ones_complement_ok
    for p in read_pcap(out).packets:
        assert ones_complement_ok(p.frame[14:14 + (p.frame[14] & 0xF) * 4])


def test_sweep_small_matrix(tmp_path, trace_file):
    mat = tmp_path / "m.txt"
    mat.write_text("TCP_DST_PORT: BlackMarker, RandomPermutation\nIPV4_TTL: Annihilation, Substitution\n")
    out = tmp_path / "sweep"
    assert cli.main(["sweep", str(trace_file), "--matrix", str(mat), "--rules", "builtin:demo",
                     "-o", str(out)]) == 0
    res = rows(out / "results.csv")
    assert [r["policy"] for r in res] == sorted(r["policy"] for r in res)
    assert len(res) == 4
    assert {r["status"] for r in res} == {"ok"}
    assert len(rows(out / "marginal_by_field.csv")) == 2
    assert len(rows(out / "marginal_by_algorithm.csv")) == 4
    for name in ("marginal_by_field.svg", "marginal_by_algorithm.svg"):
        assert (out / name).read_text().lstrip().startswith("<?xml")
    ttl = [r for r in res if r["field"] == "IPV4_TTL"]
    assert all(r["fp"] == "0" and r["fn"] == "0" for r in ttl)
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["baseline"]["detection_runs"] == 1
    assert [p["name"] for p in manifest["policies"]] == [
        "IPV4_TTL-Annihilation", "IPV4_TTL-Substitution", "TCP_DST_PORT-BlackMarker",
        "TCP_DST_PORT-RandomPermutation"]
    assert (out / "anonymized" / "IPV4_TTL-Annihilation.pcap").exists()


def test_sweep_port_zero_counts_match_direct_scan(tmp_path, trace_file):
    mat = tmp_path / "m.txt"
    mat.write_text("TCP_DST_PORT: BlackMarker, Substitution, Truncation, Annihilation\n")
    out = tmp_path / "s"
    assert cli.main(["sweep", str(trace_file), "--matrix", str(mat), "--rules", "builtin:demo",
                     "-o", str(out), "--no-pcaps"]) == 0
    trace = read_pcap(trace_file)
    tcp = [p for p in trace.packets if p.protocol is Protocol.TCP]
    already = sum(1 for p in tcp if get_field(p, FieldPath.TCP_SRC_PORT).value == 0
                  or get_field(p, FieldPath.TCP_DST_PORT).value == 0)
    for r in rows(out / "results.csv"):
        assert int(r["fp"]) == len(tcp) - already
    assert not (out / "anonymized").exists()


def test_baseline_detected_once(tmp_path, trace_file, monkeypatch):
    calls = []
    real = cli.run_mini_ids

    def counting(trace, rules):
        calls.append(len(trace))
        return real(trace, rules)

    monkeypatch.setattr(cli, "run_mini_ids", counting)
    mat = tmp_path / "m.txt"
    mat.write_text("IPV4_TTL: Annihilation, Substitution, RandomPermutation\n")
    assert cli.main(["sweep", str(trace_file), "--matrix", str(mat), "--rules", "builtin:demo",
                     "-o", str(tmp_path / "s")]) == 0
    assert len(calls) == 1 + 3


def test_sweep_records_failures_and_continues(tmp_path, trace_file):
    mat = tmp_path / "m.txt"
    mat.write_text("IPV4_TTL: Annihilation\n")
    bad = tmp_path / "bad.pol"
    bad.write_text("policy too-many\nentry field=TCP_DST_PORT algorithm=Truncation param.units=9\n"
                   "entry field=TCP_SRC_PORT algorithm=Annihilation\n")
    out = tmp_path / "s"
    assert cli.main(["sweep", str(trace_file), "--matrix", str(mat), "--rules", "builtin:demo",
                     "--policy", str(bad), "-o", str(out)]) == 0
    res = {r["policy"]: r for r in rows(out / "results.csv")}
    assert res["too-many"]["status"].startswith("error: TooManyUnits")
    assert res["too-many.TCP_DST_PORT-Truncation"]["status"].startswith("error")
    assert res["too-many.TCP_SRC_PORT-Annihilation"]["status"] == "ok"
    assert res["IPV4_TTL-Annihilation"]["status"] == "ok"
    # marginals only cover enumerated runs
    assert [r["name"] for r in rows(out / "marginal_by_field.csv")] == ["IPV4_TTL"]


def test_sweep_parallel_equals_serial(tmp_path, trace_file):
    mat = tmp_path / "m.txt"
    mat.write_text("TCP_DST_PORT: *\nIPV4_SRC_IP: *\n")
    outs = []
    for jobs in ("1", "3"):
        out = tmp_path / f"j{jobs}"
        assert cli.main(["sweep", str(trace_file), "--matrix", str(mat), "--rules", "builtin:demo",
                         "-o", str(out), "--jobs", jobs]) == 0
        outs.append(out)
    for name in ("results.csv", "marginal_by_field.csv", "marginal_by_algorithm.csv", "marginal_by_field.svg"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()


def test_sweep_keep_excludes_other_protocol_fields(tmp_path, trace_file):
    mat = tmp_path / "m.txt"
    mat.write_text("UDP_DST_PORT: Annihilation\nTCP_DST_PORT: Annihilation\nIPV4_TTL: Annihilation\n")
    out = tmp_path / "s"
    assert cli.main(["sweep", str(trace_file), "--matrix", str(mat), "--rules", "builtin:demo",
                     "--keep", "tcp", "-o", str(out)]) == 0
    assert {r["field"] for r in rows(out / "results.csv")} == {"TCP_DST_PORT", "IPV4_TTL"}
    kept = parse_pcap((out / "anonymized" / "IPV4_TTL-Annihilation.pcap").read_bytes())
    assert {p.protocol for p in kept.packets} == {Protocol.TCP}


def test_sweep_with_external_alerts(tmp_path, trace_file):
    trace = read_pcap(trace_file)
    alerts = tmp_path / "alerts"
    alerts.mkdir()
    base = run_mini_ids(trace, demo_rules())
    (alerts / "baseline.csv").write_text(write_snort_csv(base))
    (alerts / "IPV4_TTL-Annihilation.csv").write_text(write_snort_csv(base[:-1]))
    mat = tmp_path / "m.txt"
    mat.write_text("IPV4_TTL: Annihilation, Substitution\n")
    out = tmp_path / "s"
    assert cli.main(["sweep", str(trace_file), "--matrix", str(mat), "--alerts-dir", str(alerts),
                     "-o", str(out)]) == 0
    res = {r["policy"]: r for r in rows(out / "results.csv")}
    assert res["IPV4_TTL-Annihilation"]["fn"] == "1"
    assert res["IPV4_TTL-Substitution"]["status"].startswith("error: FileNotFoundError")


def test_sweep_needs_one_detection_backend(tmp_path, trace_file, capsys):
    assert cli.main(["sweep", str(trace_file), "-o", str(tmp_path / "s")]) == 2


def test_from_manifest_rejects_changed_input(tmp_path, trace_file, capsys):
    mat = tmp_path / "m.txt"
    mat.write_text("IPV4_TTL: Annihilation\n")
    out = tmp_path / "s"
    assert cli.main(["sweep", str(trace_file), "--matrix", str(mat), "--rules", "builtin:demo", "-o", str(out)]) == 0
    save_pcap(trace_file, random_trace(10, seed=99))
    assert cli.main(["sweep", "--from-manifest", str(out / "manifest.json"), "-o", str(tmp_path / "t")]) == 2
    assert "trace_sha256" in capsys.readouterr().err


def test_compare_command(tmp_path, capsys, trace_file):
    alerts = run_mini_ids(read_pcap(trace_file), demo_rules())
    assert alerts
    a = tmp_path / "a.csv"
    a.write_text(write_snort_csv(alerts))
    assert cli.main(["compare", str(a), str(a)]) == 0
    (r,) = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
    assert (int(r["tp"]), r["fp"], r["fn"]) == (len(alerts), "0", "0")

    changed = [alerts[0].__class__(**{**alerts[0].__dict__, "sig_id": 99999})] + alerts[1:]
    b = tmp_path / "b.csv"
    b.write_text(write_snort_csv(changed))
    assert cli.main(["compare", str(a), str(b), "--field-set", "fs1"]) == 0
    (r,) = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
    assert (r["fp"], r["fn"]) == ("1", "1")

    moved = [alerts[0].__class__(**{**alerts[0].__dict__, "srcport": 1})] + alerts[1:]
    c = tmp_path / "c.csv"
    c.write_text(write_snort_csv(moved))
    assert cli.main(["compare", str(a), str(c)]) == 0
    assert list(csv.DictReader(io.StringIO(capsys.readouterr().out)))[0]["fp"] == "0"
    assert cli.main(["compare", str(a), str(c), "--field-set", "fs2"]) == 0
    assert list(csv.DictReader(io.StringIO(capsys.readouterr().out)))[0]["fp"] == "1"

    broken = tmp_path / "broken.csv"
    broken.write_text("1,2,3\n")
    assert cli.main(["compare", str(a), str(broken)]) == 2
    assert parse_snort_csv(a.read_text()) == alerts


def test_report_rebuilds_marginals(tmp_path, trace_file):
    mat = tmp_path / "m.txt"
    mat.write_text("TCP_DST_PORT: BlackMarker, Hash\nIPV4_TTL: Annihilation\n")
    out = tmp_path / "s"
    assert cli.main(["sweep", str(trace_file), "--matrix", str(mat), "--rules", "builtin:demo", "-o", str(out)]) == 0
    rep = tmp_path / "r"
    assert cli.main(["report", str(out / "results.csv"), "-o", str(rep)]) == 0
    for name in ("marginal_by_field.csv", "marginal_by_algorithm.csv", "marginal_by_field.svg"):
        assert (rep / name).read_bytes() == (out / name).read_bytes()
