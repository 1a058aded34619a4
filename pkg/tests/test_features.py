import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import brute_levenshtein, worked_example_generations
from flagcheck.backend import GeneratedLine
from flagcheck.features import (
    LineFeatures,
    bleu,
    comment_tokens,
    distance_from_comment,
    extract_features,
    extract_file_features,
    levenshtein,
)
from flagcheck.srcmodel import preprocess_text


@pytest.mark.parametrize("a, b, d", [
    ("return 0;", "return 0;", 0),
    ("if(index <size) {", "if (index >= 0 && index <size) {", 15),
    ("}", "} else {", 7),
    ("", "abc", 3),
    ("abc", "", 3),
    ("kitten", "sitting", 3),
    ("café", "cafe", 1),
    ("😀a", "a", 1),
])
def test_levenshtein_examples(a, b, d):
    assert levenshtein(a, b) == d
    assert levenshtein(b, a) == d


short = st.text(alphabet="abc", max_size=6)
any_text = st.text(max_size=15)


@settings(max_examples=300)
@given(short, short)
def test_levenshtein_matches_brute_force(a, b):
    assert levenshtein(a, b) == brute_levenshtein(a, b)


@settings(max_examples=200)
@given(any_text, any_text, any_text)
def test_levenshtein_is_a_metric(a, b, c):
    assert levenshtein(a, a) == 0
    assert levenshtein(a, b) == levenshtein(b, a)
    assert (levenshtein(a, b) == 0) == (a == b)
    assert levenshtein(a, c) <= levenshtein(a, b) + levenshtein(b, c)
    assert abs(len(a) - len(b)) <= levenshtein(a, b) <= max(len(a), len(b))


# --- BLEU -------------------------------------------------------------------

def test_bleu_perfect_and_disjoint():
    toks = "return the value at index".split()
    assert bleu(toks, toks) == [1.0] * 4
    assert bleu(["x", "y"], ["a", "b"])[0] == 0.0


def test_bleu_brevity_hand_oracle():
    got = bleu(["a", "b"], ["a", "c", "d"])
    assert got[0] == pytest.approx(0.5 * math.exp(1 - 3 / 2), abs=1e-12)
    assert got[0] == pytest.approx(0.3033, abs=1e-4)
    assert got[1:] == [0.0, 0.0, 0.0]


def test_bleu2_hand_oracle():
    # p1 = 2/3, p2 = 1/2, equal length so no brevity penalty
    got = bleu(["a", "b", "c"], ["a", "b", "d"], max_n=2)
    assert got[0] == pytest.approx(2 / 3)
    assert got[1] == pytest.approx(math.sqrt(2 / 3 * 1 / 2))


def test_bleu_clipping():
    # "the the the" against "the cat": unigram match clipped to 1
    assert bleu(["the"] * 3, ["the", "cat"])[0] == pytest.approx(1 / 3)


def test_bleu_empty_scores_zero():
    assert bleu([], ["a"]) == [0.0] * 4
    assert bleu(["a"], []) == [0.0] * 4
    with pytest.raises(ValueError):
        bleu(["a"], ["a"], max_n=0)


tokens = st.lists(st.sampled_from(list("abcdefg")), max_size=10)


@settings(max_examples=200)
@given(tokens, tokens, st.randoms(use_true_random=False))
def test_bleu1_range_and_permutation_invariance(cand, ref, rnd):
    scores = bleu(cand, ref)
    assert all(0.0 <= s <= 1.0 + 1e-12 for s in scores)
    shuffled = list(cand)
    rnd.shuffle(shuffled)
    assert bleu(shuffled, ref)[0] == pytest.approx(scores[0], abs=1e-12)


def test_comment_tokens():
    assert comment_tokens("//Given The  array", "c") == ["given", "the", "array"]
    assert comment_tokens("/* Block */", "c") == ["block"]
    assert comment_tokens('"""Doc string."""', "python") == ["doc", "string."]
    assert comment_tokens("# x", "python") == ["x"]


# --- dfc --------------------------------------------------------------------

def test_dfc_around_comment_line(c1_10):
    # index 10 is the comment line of the worked example
    assert [distance_from_comment(c1_10, i) for i in range(10, 14)] == [0, 1, 2, 3]


def test_dfc_absent_without_prior_comment():
    f = preprocess_text("a = 1\nb = 2\n# c\nd = 3\n", "python")
    assert distance_from_comment(f, 0) is None
    assert distance_from_comment(f, 1) is None
    assert distance_from_comment(f, 2) == 0
    assert distance_from_comment(f, 3) == 1


def test_dfc_counts_checkable_lines_not_blank_ones():
    f = preprocess_text("# c\n\n\nx = 1\n", "python")
    assert distance_from_comment(f, 1) == 1


@settings(max_examples=200)
@given(st.lists(st.sampled_from(["x = 1", "# note", "y = 2  # trailing", "z()"]), min_size=1, max_size=30))
def test_dfc_zero_on_comments_and_steps_by_one(lines):
    f = preprocess_text("\n".join(lines), "python")
    prev = None
    for i, line in enumerate(f.lines):
        d = distance_from_comment(f, i)
        if line.comment_part:
            assert d == 0
        elif prev is None:
            assert d is None
        else:
            assert d == prev + 1
        prev = d


# --- extract_features -------------------------------------------------------

def test_worked_example_features(c1_10):
    gens = worked_example_generations()

    def feats(line_no):
        loc = c1_10.index_of_line_no(line_no)
        return extract_features(c1_10.lines[loc], gens[line_no], c1_10, loc)

    assert (feats(13).ld, feats(12).ld, feats(14).ld) == (0, 15, 7)
    assert feats(12).dfc == 1
    assert feats(11).dfc == 0
    assert feats(11).ld == 0
    # spacing-only differences
    assert feats(10).ld == 2
    assert feats(10).ld_no_ws == 0
    assert feats(10).dfc == 9


def test_worked_example_comment_bleu(c1_10):
    loc = c1_10.index_of_line_no(11)
    f = extract_features(c1_10.lines[loc], "//if the index is out of bounds return -1", c1_10, loc)
    # all 9 candidate tokens occur in the 21-token reference; only brevity applies
    assert f.bleu1 == pytest.approx(math.exp(1 - 21 / 9), abs=1e-12)
    assert 0.0 < f.bleu1 < 1.0
    assert len(f.bleu_cumulative) == 4


def test_identity_features():
    f = preprocess_text("# head\nx = compute(1)  # why\n", "python")
    feats = extract_features(f.lines[1], f.lines[1].raw, f, 1)
    assert (feats.ld, feats.ld_no_ws, feats.bleu1, feats.dfc) == (0, 0, 1.0, 0)


def test_bleu_absent_when_either_comment_missing():
    f = preprocess_text("x = 1  # note\ny = 2\n", "python")
    assert extract_features(f.lines[0], "x = 1", f, 0).bleu1 is None
    assert extract_features(f.lines[1], "y = 2  # extra", f, 1).bleu1 is None


def test_empty_generation_costs_full_length():
    f = preprocess_text("return value;\n", "c")
    assert extract_features(f.lines[0], "", f, 0).ld == len("return value;")


def test_mean_logprob_from_generated_line():
    f = preprocess_text("x = 1\n", "python")
    g = GeneratedLine("x = 2", token_logprobs=[-0.2, -0.4, -0.6])
    assert extract_features(f.lines[0], g, f, 0).mean_logprob == pytest.approx(-0.4)
    assert extract_features(f.lines[0], "x = 2", f, 0).mean_logprob is None


@settings(max_examples=200)
@given(st.text(alphabet="abc =()+", min_size=1, max_size=12).filter(str.strip),
       st.text(alphabet="abc =()+", max_size=12),
       st.text(alphabet="xyz ", max_size=8))
def test_trailing_comment_does_not_change_ld(orig, gen, note):
    plain = preprocess_text(orig + "\n", "python")
    commented = preprocess_text(orig + "  # " + note + "\n", "python")
    a = extract_features(plain.lines[0], gen, plain, 0)
    b = extract_features(commented.lines[0], gen + "  # " + note, commented, 0)
    assert a.ld == b.ld
    assert a.ld_no_ws == b.ld_no_ws


def test_prev_comment_bleu_on_file(c1_10):
    gens = worked_example_generations()
    generated = [gens.get(ln.original_line_no, ln.raw) for ln in c1_10.lines]
    feats = extract_file_features(c1_10, generated)
    comment_bleu = feats[10].bleu1
    assert feats[11].prev_comment_bleu1 == pytest.approx(comment_bleu)
    assert feats[14].prev_comment_bleu1 == pytest.approx(comment_bleu)
    # the header comment was echoed
    assert feats[5].prev_comment_bleu1 == 1.0


def test_extract_file_features_length_check(c1_10):
    with pytest.raises(ValueError):
        extract_file_features(c1_10, ["x"])


def test_line_features_round_trip():
    f = LineFeatures(3, 2, 0.5, (0.5, 0.25, 0.0, 0.0), 4, -0.3, None)
    assert LineFeatures.from_dict(f.to_dict()) == f
