import pytest
from hypothesis import given, strategies as st

from idsutil.anonymizers import Algorithm
from idsutil.detector import Alert
from idsutil.errors import MissingConstituent
from idsutil.metrics import (
    FS1,
    FS2,
    ComparisonResult,
    FieldSet,
    RunResult,
    compare,
    custom_field_set,
    marginal,
    marginal_from_runs,
    nonadditivity_report,
    read_report_csv,
    select_field_set,
    write_marginal_csv,
    write_nonadditivity_csv,
    write_report_csv,
)
from idsutil.policy import Policy, PolicyEntry
from idsutil.trace import FieldPath
from oracles import naive_compare

small_alerts = st.builds(
    Alert,
    sig_id=st.integers(1, 3),
    timestamp=st.sampled_from(["t1", "t2"]),
    id=st.integers(0, 2),
    src=st.sampled_from(["a", "b"]),
    srcport=st.integers(0, 1),
    dst=st.just("d"),
    dstport=st.integers(0, 1),
    tcpseq=st.just(5),
)


@given(st.lists(small_alerts, max_size=30), st.lists(small_alerts, max_size=30), st.sampled_from([FS1, FS2]))
def test_compare_matches_quadratic_oracle(base, anon, fs):
    r = compare(base, anon, fs)
    assert (r.tp, r.fp, r.fn) == naive_compare(base, anon, fs.fields)
    assert r.tp + r.fn == len(base) and r.tp + r.fp == len(anon)


def test_compare_examples():
    a = [Alert(sig_id=1, timestamp="t", id=1), Alert(sig_id=1, timestamp="t", id=1)]
    b = [Alert(sig_id=1, timestamp="t", id=1)]
    assert compare(a, a, FS1) == ComparisonResult(2, 0, 0)
    assert compare(a, b, FS1) == ComparisonResult(1, 0, 1)
    c = [Alert(sig_id=2, timestamp="t", id=1), Alert(sig_id=1, timestamp="t", id=1)]
    assert compare(a, c, FS1) == ComparisonResult(1, 1, 1)
    # only projected columns matter
    d = [Alert(sig_id=1, timestamp="t", id=1, src="x"), Alert(sig_id=1, timestamp="t", id=1, src="y")]
    assert compare(a, d, FS1).error == 0
    assert compare([], [], FS2) == ComparisonResult(0, 0, 0)


def test_field_sets():
    assert FS1.fields == ("timestamp", "sig_id", "id")
    assert FS2.fields == ("sig_id", "src", "srcport", "dst", "dstport", "id", "tcpseq")
    with pytest.raises(ValueError):
        custom_field_set(["sig_id", "nonsense"])
    assert custom_field_set(["sig_id"]).key(Alert(sig_id=4)) == (4,)


@pytest.mark.parametrize("path", list(FieldPath))
def test_select_field_set(path):
    expected = FS2 if path in (FieldPath.TS_SEC, FieldPath.TS_USEC) else FS1
    assert select_field_set([path]) == expected


def test_generalized_field_set():
    p = Policy("p", 0, (PolicyEntry(FieldPath.IPV4_SRC_IP, Algorithm.HASH),
                        PolicyEntry(FieldPath.TS_SEC, Algorithm.TIME_ENUMERATION)))
    assert select_field_set(p).fields == FS2.fields
    assert select_field_set(p, generalized=True).fields == ("sig_id", "srcport", "dst", "dstport", "id", "tcpseq")
    q = Policy("q", 0, (PolicyEntry(FieldPath.IPV4_ID, Algorithm.HASH),))
    assert select_field_set(q, generalized=True).fields == ("timestamp", "sig_id")
    assert select_field_set([FieldPath.IPV4_TTL], generalized=True) == FS1


def test_marginals_hand_computed():
    rows = [
        ("TCP_DST_PORT", "BlackMarker", ComparisonResult(tp=5, fp=10, fn=0)),
        ("TCP_DST_PORT", "Hash", ComparisonResult(tp=4, fp=1, fn=1)),
        ("IPV4_TTL", "BlackMarker", ComparisonResult(tp=5, fp=0, fn=0)),
    ]
    by_field = marginal(rows, "by_field")
    assert [r.name for r in by_field.rows] == ["IPV4_TTL", "TCP_DST_PORT"]
    port = by_field.row("TCP_DST_PORT")
    assert (port.runs, port.fp_avg, port.fn_avg, port.error_avg) == (2, 5.5, 0.5, 6.0)
    assert (port.alerts_avg, port.alerts_max, port.alerts_min) == (10.0, 15, 5)
    bm = marginal(rows, "by_algorithm").row("BlackMarker")
    assert (bm.runs, bm.fp_avg, bm.alerts_max) == (2, 5.0, 15)
    assert write_marginal_csv(by_field) == (
        "name,runs,fp_avg,fn_avg,error_avg,alerts_avg,alerts_max,alerts_min\n"
        "IPV4_TTL,1,0.00,0.00,0.00,5.00,5,5\n"
        "TCP_DST_PORT,2,5.50,0.50,6.00,10.00,15,5\n"
    )
    with pytest.raises(ValueError):
        marginal(rows, "by_color")


def test_marginals_skip_failures_and_multi_field():
    runs = [
        RunResult("A-X", "A", "X", ComparisonResult(1, 2, 0)),
        RunResult("A-Y", "A", "Y", None, "error: boom"),
        RunResult("m", "A+B", "X+Y", ComparisonResult(0, 9, 9)),
    ]
    rep = marginal_from_runs(runs, "by_field")
    assert [(r.name, r.runs, r.fp_avg) for r in rep.rows] == [("A", 1, 2.0)]


def test_nonadditivity():
    single = {
        "TCP_SRC_PORT-Annihilation": ComparisonResult(5, 40, 0),
        FieldPath.TCP_DST_PORT: ComparisonResult(5, 40, 0),
    }
    p = Policy("both", 0, (PolicyEntry(FieldPath.TCP_SRC_PORT, Algorithm.ANNIHILATION),
                           PolicyEntry(FieldPath.TCP_DST_PORT, Algorithm.ANNIHILATION)))
    (row,) = nonadditivity_report(single, {p: ComparisonResult(5, 40, 0)})
    assert (row.sum_fp, row.observed_fp, row.deviation) == (80, 40, -40)
    assert row.constituents == ("TCP_SRC_PORT-Annihilation", "TCP_DST_PORT")
    (row2,) = nonadditivity_report({"A": ComparisonResult(0, 1, 0), "B": ComparisonResult(0, 2, 0)},
                                   {"A+B": ComparisonResult(0, 3, 0)})
    assert row2.deviation == 0
    assert write_nonadditivity_csv([row2]) == "policy,constituents,sum_fp,observed_fp,deviation\nA+B,A+B,3,3,0\n"
    with pytest.raises(MissingConstituent):
        nonadditivity_report({}, {"A+B": ComparisonResult(0, 3, 0)})


def test_report_csv_roundtrip_and_sorted():
    runs = [
        RunResult("b", "F", "X", ComparisonResult(1, 2, 3)),
        RunResult("a", "G", "Y", None, "error: ValueError: nope, really"),
    ]
    text = write_report_csv(runs)
    assert text.splitlines()[0] == "policy,field,algorithm,baseline_count,anony_count,tp,fp,fn,error,status"
    assert text.splitlines()[2] == "b,F,X,4,3,1,2,3,5,ok"
    back = read_report_csv(text)
    assert [r.policy for r in back] == ["a", "b"]
    assert back[1] == runs[0] and back[0] == runs[1]


def test_fieldset_without():
    fs = FieldSet("x", ("sig_id", "src", "dst"))
    assert fs.without(["src"]).fields == ("sig_id", "dst")
    assert fs.without(["ttl"]) is fs
