import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flagcheck.classifier import (
    KEYWORD_ONLY,
    LOW_LOGPROB,
    NEAR_COMMENT,
    STANDARD_CRITERIA,
    WITHIN_LD,
    WS_RECOMPUTE,
    Criterion,
    CriterionKind,
    LineResult,
    ReportedLine,
    ReportedLines,
    classify_file,
    classify_line,
    reduce_fp,
)
from flagcheck.features import LineFeatures, extract_features
from flagcheck.srcmodel import preprocess_text

C0 = CriterionKind.C0
C1 = CriterionKind.C1
C2 = CriterionKind.C2


def feats(ld, dfc=None, ld_no_ws=None, logprob=None):
    return LineFeatures(ld=ld, ld_no_ws=ld if ld_no_ws is None else ld_no_ws, dfc=dfc, mean_logprob=logprob)


@pytest.mark.parametrize("f, c, expected", [
    (feats(15, 1), Criterion(C2, 20, 10), True),
    (feats(0, 1), Criterion(C2, 20, 10), False),
    (feats(0, None), Criterion(C0, 10, None), False),
    (feats(25, 5), Criterion(C1, 20, 10), True),
    (feats(25, None), Criterion(C1, 20, 10), False),
    (feats(25, 0), Criterion(C1, 20, 10), False),
    (feats(25, 10), Criterion(C1, 20, 10), False),
    (feats(25, 9), Criterion(C1, 20, 10), True),
    (feats(10, None), Criterion(C0, 10, None), True),
    (feats(11, 1), Criterion(C0, 10, None), False),
])
def test_classify_line_examples(f, c, expected):
    assert classify_line(f, c) is expected


def test_criterion_validation_and_labels():
    assert [c.label for c in STANDARD_CRITERIA] == ["C0(10)", "C1(20,10)", "C2(20,10)"]
    assert Criterion.parse("C2(20,10)") == Criterion(C2, 20, 10)
    assert Criterion.parse(" C0(7) ") == Criterion(C0, 7, None)
    for bad in ["C3(1)", "C1", "C2(20,)"]:
        with pytest.raises(ValueError):
            Criterion.parse(bad)
    with pytest.raises(ValueError):
        Criterion(C1, 20, None)
    with pytest.raises(ValueError):
        Criterion(C0, -1, None)


def result(index, f, code="x = y;", line_no=None):
    return LineResult(index, line_no or index + 1, code, code, "gen", f)


def test_reduce_fp_whitespace_example():
    f = preprocess_text("always(@posedge clk)\n", "verilog")
    features = extract_features(f.lines[0], "always (@posedge clk)", f, 0)
    assert features.ld == 1 and features.ld_no_ws == 0
    rep = classify_file([result(0, features, "always(@posedge clk)")], Criterion(), "verilog")
    assert rep.entries[0].removed_by == WS_RECOMPUTE
    assert rep.flagged == []


@pytest.mark.parametrize("logprob, removed", [(-0.6, LOW_LOGPROB), (-0.33, None), (-0.5, None), (None, None)])
def test_reduce_fp_logprob(logprob, removed):
    rep = classify_file([result(0, feats(18, 3, logprob=logprob))], Criterion(), "c")
    assert rep.entries[0].removed_by == removed


def test_reduce_fp_keyword_only_and_priority():
    candidates = ReportedLines([
        ReportedLine(0, 1, feats(7, 3, ld_no_ws=0, logprob=-2.0), (WITHIN_LD,)),
        ReportedLine(1, 2, feats(7, 3, logprob=-2.0), (WITHIN_LD,)),
        ReportedLine(2, 3, feats(7, 3, logprob=-2.0), (WITHIN_LD,)),
    ])
    originals = {0: "}", 1: "}", 2: "return x;"}
    out = reduce_fp(candidates, originals, "c", Criterion())
    assert [e.removed_by for e in out.entries] == [WS_RECOMPUTE, KEYWORD_ONLY, LOW_LOGPROB]
    # audit trail retained
    assert len(out.entries) == 3 and len(out.flagged) == 0
    with pytest.raises(ValueError):
        reduce_fp(candidates, originals, "c", Criterion(C1, 20, 10))


def test_low_logprob_row_detected_by_c1_not_c2():
    r = [result(0, feats(18, 3, logprob=-0.6), "assign out = a & b;")]
    assert classify_file(r, Criterion(C1, 20, 10), "verilog").flagged_line_nos() == {1}
    assert classify_file(r, Criterion(C2, 20, 10, -0.5), "verilog").flagged_line_nos() == set()


def test_reasons_recorded():
    rep = classify_file([result(0, feats(5, 2)), result(1, feats(30, 2)), result(2, feats(5, None))],
                        Criterion(C1, 20, 10), "c")
    assert [e.reasons for e in rep.entries] == [(WITHIN_LD, NEAR_COMMENT), (NEAR_COMMENT,), (WITHIN_LD,)]


def test_echo_run_flags_nothing(c1_10):
    results = [result(i, feats(0, 1), ln.code_part) for i, ln in enumerate(c1_10.lines)]
    for c in STANDARD_CRITERIA:
        assert classify_file(results, c, "c").flagged == []


def test_worked_example_c2(c1_10, c1_10_mock):
    from flagcheck.pipeline import run_file
    from flagcheck.prompting import GenerationParams

    results = run_file(c1_10, "auto", GenerationParams(), c1_10_mock)
    rep = classify_file(results, Criterion(C2, 20, 10), "c")
    assert rep.flagged_line_nos() == {7, 12}
    assert {e.line_no: e.removed_by for e in rep.removed} == {10: WS_RECOMPUTE, 14: KEYWORD_ONLY, 15: KEYWORD_ONLY}


# --- properties -------------------------------------------------------------

feature_sets = st.lists(
    st.builds(
        lambda ld, dfc, ws, lp: LineFeatures(ld=ld, ld_no_ws=min(ws, ld), dfc=dfc, mean_logprob=lp),
        st.integers(0, 40), st.one_of(st.none(), st.integers(0, 60)), st.integers(0, 40),
        st.one_of(st.none(), st.floats(-3, 0)),
    ),
    min_size=1, max_size=30,
)


def flagged(fs, c, codes=None):
    results = [result(i, f, (codes or {}).get(i, "x = y;")) for i, f in enumerate(fs)]
    return classify_file(results, c, "c").flagged_line_nos()


@settings(max_examples=200)
@given(feature_sets, st.integers(0, 30), st.integers(0, 50), st.lists(st.booleans(), max_size=30))
def test_containment(fs, ld_limit, dfc_limit, keyword):
    codes = {i: "}" for i, k in enumerate(keyword) if k}
    c0 = flagged(fs, Criterion(C0, ld_limit, None), codes)
    c1 = flagged(fs, Criterion(C1, ld_limit, dfc_limit), codes)
    c2 = flagged(fs, Criterion(C2, ld_limit, dfc_limit), codes)
    near = {i + 1 for i, f in enumerate(fs) if f.ld > 0 and f.dfc is not None and 0 < f.dfc < dfc_limit}
    assert c2 <= c1 <= c0 | near
    assert c0 <= c1
    zero = {i + 1 for i, f in enumerate(fs) if f.ld == 0}
    assert not (c0 | c1 | c2) & zero


@settings(max_examples=200)
@given(feature_sets, st.sampled_from([C0, C1, C2]), st.integers(0, 29), st.integers(0, 49))
def test_monotone_in_limits(fs, kind, ld_limit, dfc_limit):
    def make(ld, dfc):
        return Criterion(kind, ld, None if kind is C0 else dfc)

    base = flagged(fs, make(ld_limit, dfc_limit))
    assert base <= flagged(fs, make(ld_limit + 1, dfc_limit))
    assert base <= flagged(fs, make(ld_limit, dfc_limit + 1))


@settings(max_examples=100)
@given(feature_sets)
def test_reduce_fp_never_adds(fs):
    c = Criterion(C2, 20, 10)
    results = [result(i, f) for i, f in enumerate(fs)]
    c2 = classify_file(results, c, "c")
    c1 = classify_file(results, Criterion(C1, 20, 10), "c")
    assert [e.line_no for e in c2.entries] == [e.line_no for e in c1.entries]
    assert c2.flagged_line_nos() <= c1.flagged_line_nos()
