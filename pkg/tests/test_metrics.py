import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ocr_agent.errors import EmptyGoldError, LengthMismatchError
from ocr_agent.metrics import (
    BoundingBox,
    MetricScore,
    TableNode,
    anls,
    best_iou,
    bleu,
    contains_match,
    counting_score,
    edit_similarity,
    exact_match,
    extraction_f1,
    iou,
    levenshtein,
    long_reading_score,
    meteor_lite,
    normalize_text,
    normalized_similarity,
    parse_table_markup,
    spotting_score,
    teds,
    token_f1,
    tokenize,
    tree_edit_distance,
    vqa_score,
)

from oracles import bleu_oracle, levenshtein_oracle_table, unigram_f1_oracle


class TestMetricScore:
    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            MetricScore(1.2, "x")
        with pytest.raises(ValueError):
            MetricScore(-0.1, "x")

    def test_clamps_rounding_noise(self):
        assert MetricScore(1 + 1e-12, "x").value == 1.0

    def test_roundtrip(self):
        s = MetricScore(0.5, "anls", {"k": 1})
        assert MetricScore.from_dict(s.to_dict()) == s


def test_normalize_text():
    assert normalize_text("  Hello,   WORLD. ") == "hello, world"
    assert normalize_text("ＡＢＣ") == "abc"
    assert normalize_text("总计。") == "总计"


class TestLevenshtein:
    @pytest.mark.parametrize("a,b,d", [("", "", 0), ("", "abc", 3), ("kitten", "sitting", 3),
                                       ("flaw", "lawn", 2), ("abc", "abc", 0)])
    def test_known(self, a, b, d):
        assert levenshtein(a, b) == d

    def test_matches_oracle_short(self):
        table = levenshtein_oracle_table("ab", 4)
        for (a, b), d in table.items():
            assert levenshtein(a, b) == d

    @given(st.text(max_size=12), st.text(max_size=12), st.text(max_size=12))
    def test_metric_axioms(self, a, b, c):
        assert levenshtein(a, b) == levenshtein(b, a)
        assert levenshtein(a, c) <= levenshtein(a, b) + levenshtein(b, c)
        assert (levenshtein(a, b) == 0) == (a == b)

    def test_normalized_similarity_edges(self):
        assert normalized_similarity("", "") == 1.0
        assert normalized_similarity("abc", "") == 0.0


class TestANLS:
    def test_threshold_point(self):
        assert anls("abcd", ["abcx"], 0.5).value == pytest.approx(0.75, abs=1e-12)

    def test_below_threshold_is_zero(self):
        # distance 3/4 -> similarity 0.25 < 0.5
        assert anls("abcd", ["axyz"]).value == 0.0

    def test_max_over_gold(self):
        assert anls("exit", ["entry", "EXIT"]).value == 1.0

    def test_empty_gold(self):
        with pytest.raises(EmptyGoldError):
            anls("x", [])

    def test_bad_tau(self):
        with pytest.raises(ValueError):
            anls("x", ["x"], tau=1.0)


class TestVQARouting:
    def test_short_gold_uses_exact(self):
        s = vqa_score("Exit.", ["EXIT"])
        assert s.value == 1.0 and s.diagnostics["method"] == "exact"
        assert vqa_score("exot", ["exit"]).value == 0.0

    def test_long_gold_uses_anls(self):
        s = vqa_score("the quick brown fix", ["the quick brown fox"])
        assert s.diagnostics["method"] == "anls"
        assert 0.9 < s.value < 1.0

    def test_directive_overrides(self):
        s = vqa_score("It was in March 2020", ["March"], directive="contains")
        assert s.value == 1.0 and s.diagnostics["routed_by"] == "directive"

    def test_contains_enumerative(self):
        assert contains_match("apples only", ["pears"]).value == 0.0
        # an enumerative gold lists several items; naming one of them counts
        assert contains_match("pears", ["apples, pears"], enumerative=True).value == 1.0
        assert contains_match("pears", ["apples, pears"]).value == 0.0

    def test_exact(self):
        assert exact_match(" 42 ", ["42"]).value == 1.0


class TestGeometry:
    def test_iou_known(self):
        a = BoundingBox(0, 0, 10, 10)
        b = BoundingBox(5, 0, 15, 10)
        assert iou(a, b).value == pytest.approx(1 / 3, abs=1e-12)

    def test_disjoint_and_identity(self):
        a = BoundingBox(0, 0, 1, 1)
        assert iou(a, BoundingBox(2, 2, 3, 3)).value == 0.0
        assert iou(a, a).value == 1.0

    def test_degenerate_zero_union(self):
        p = BoundingBox(1, 1, 1, 1)
        assert iou(p, p).value == 0.0

    def test_invalid_box(self):
        with pytest.raises(ValueError):
            BoundingBox(5, 0, 1, 1)

    def test_from_corners_orders(self):
        assert BoundingBox.from_corners(10, 10, 0, 0) == BoundingBox(0, 0, 10, 10)

    def test_best_iou(self):
        a = BoundingBox(0, 0, 10, 10)
        assert best_iou(a, [BoundingBox(50, 50, 60, 60), a]).value == 1.0

    def test_spotting(self):
        gold = [("EXIT", BoundingBox(0, 0, 10, 10)), ("PUSH", BoundingBox(20, 0, 30, 10))]
        assert spotting_score(gold, gold).value == 1.0
        wrong_text = [("EXTT", BoundingBox(0, 0, 10, 10)), ("PUSH", BoundingBox(20, 0, 30, 10))]
        assert spotting_score(wrong_text, gold).value == pytest.approx(0.5)
        assert spotting_score([], gold).value == 0.0


def chain(*labels):
    root = TableNode(labels[0])
    node = root
    for l in labels[1:]:
        node = node.add(TableNode(l))
    return root


class TestTrees:
    def test_identity(self):
        t = parse_table_markup("<table><tr><td>a</td><td>b</td></tr></table>")
        assert tree_edit_distance(t, t) == 0
        assert teds(t, t).value == 1.0

    def test_single_cell_difference(self):
        a = parse_table_markup("<table><tr><td>a</td><td>b</td></tr></table>")
        b = parse_table_markup("<table><tr><td>a</td><td>c</td></tr></table>")
        assert tree_edit_distance(a, b) == 1
        assert teds(a, b).value == pytest.approx(1 - 1 / 4)

    def test_missing_row(self):
        a = parse_table_markup("<table><tr><td>a</td></tr><tr><td>b</td></tr></table>")
        b = parse_table_markup("<table><tr><td>a</td></tr></table>")
        assert tree_edit_distance(a, b) == 2

    def test_classic_example(self):
        # f(d(a, c(b)), e) vs f(c(d(a, b)), e): distance 2
        def t(label, *kids):
            n = TableNode(label)
            for k in kids:
                n.add(k)
            return n
        a = t("f", t("d", t("a"), t("c", t("b"))), t("e"))
        b = t("f", t("c", t("d", t("a"), t("b"))), t("e"))
        assert tree_edit_distance(a, b) == 2

    def test_spans_matter(self):
        a = parse_table_markup('<table><tr><td colspan="2">x</td></tr></table>')
        b = parse_table_markup("<table><tr><td>x</td></tr></table>")
        assert tree_edit_distance(a, b) == 1

    def test_wrappers_and_th(self):
        a = parse_table_markup("<table><thead><tr><th>h</th></tr></thead><tbody><tr><td>v</td></tr></tbody></table>")
        b = parse_table_markup("<table><tr><td>h</td></tr><tr><td>v</td></tr></table>")
        assert tree_edit_distance(a, b) == 0

    def test_pipe_table(self):
        a = parse_table_markup("| a | b |\n|---|---|\n| 1 | 2 |")
        b = parse_table_markup("<table><tr><td>a</td><td>b</td></tr><tr><td>1</td><td>2</td></tr></table>")
        assert teds(a, b).value == 1.0

    def test_raw_text_scores_low(self):
        gold = parse_table_markup("<table><tr><td>a</td><td>b</td></tr></table>")
        assert teds(parse_table_markup("no table here"), gold).value < 0.5
        assert teds(parse_table_markup(""), gold).value < 0.5


class TestExtraction:
    def test_perfect(self):
        g = {"company": "ACME LTD", "total": "12.50"}
        assert extraction_f1({"company": "acme ltd.", "total": "12.50"}, g).value == 1.0

    def test_partial(self):
        s = extraction_f1({"company": "ACME LTD", "total": "99"}, {"company": "ACME LTD", "total": "12.50"})
        assert s.value == pytest.approx(0.5)

    def test_two_of_four_plus_spurious(self):
        gold = {"a": "1", "b": "2", "c": "3", "d": "4"}
        pred = {"a": "1", "b": "2", "x": "9", "y": "8"}
        s = extraction_f1(pred, gold)
        assert s.value == pytest.approx(0.5)
        assert s.diagnostics["precision"] == pytest.approx(0.5)
        assert s.diagnostics["recall"] == pytest.approx(0.5)

    def test_empty_both_has_no_true_positive(self):
        assert extraction_f1({}, {}).value == 0.0

    def test_empty_pred(self):
        assert extraction_f1({}, {"a": "b"}).value == 0.0


class TestGeneration:
    def test_tokenize_cjk(self):
        assert tokenize("总计 100元") == ["总", "计", "100", "元"]
        assert tokenize("Hello, world!") == ["hello", "world"]

    def test_bleu_identity(self):
        assert bleu("the cat sat on the mat", "the cat sat on the mat").value == pytest.approx(1.0)

    def test_bleu_zero_pred(self):
        assert bleu("", "x y").value == 0.0

    @settings(max_examples=300)
    @given(st.lists(st.sampled_from("abcd"), min_size=1, max_size=9),
           st.lists(st.sampled_from("abcd"), min_size=1, max_size=9))
    def test_bleu_oracle(self, p, r):
        assert bleu(" ".join(p), " ".join(r)).value == pytest.approx(bleu_oracle(p, r), abs=1e-12)

    @settings(max_examples=300)
    @given(st.lists(st.sampled_from("abcd"), max_size=9), st.lists(st.sampled_from("abcd"), max_size=9))
    def test_token_f1_oracle(self, p, r):
        expected = unigram_f1_oracle(p, r) if (p or r) else 0.0
        assert token_f1(" ".join(p), " ".join(r)).value == pytest.approx(expected, abs=1e-12)

    def test_meteor_known(self):
        # 6 matches in one chunk: P=R=1, penalty 0.5*(1/6)^3
        s = meteor_lite("the cat sat on the mat", "the cat sat on the mat")
        assert s.value == pytest.approx(1 - 0.5 / 216)
        # reversed two tokens: 2 matches, 2 chunks, penalty 0.5
        assert meteor_lite("b a", "a b").value == pytest.approx(0.5)

    def test_meteor_no_match(self):
        assert meteor_lite("x", "y").value == 0.0

    def test_edit_similarity(self):
        assert edit_similarity("abc", "abd").value == pytest.approx(2 / 3)

    def test_long_reading_composite(self):
        s = long_reading_score("the cat sat", "the cat sat")
        expected = sum(s.diagnostics.values()) / 4
        assert s.value == pytest.approx(expected)
        assert long_reading_score("", "the cat").value == 0.0


class TestCounting:
    def test_known(self):
        assert counting_score([8], [10]).value == pytest.approx(0.8, abs=1e-12)

    def test_clamps(self):
        assert counting_score([35], [10]).value == 0.0

    def test_zero_gold(self):
        assert counting_score([0], [0]).value == 1.0
        assert counting_score([1], [0]).value == 0.0

    def test_mean_over_items(self):
        assert counting_score([10, 5], [10, 10]).value == pytest.approx(0.75)

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatchError):
            counting_score([1, 2], [1])


def test_all_metrics_bounded_random():
    rng = random.Random(7)
    alphabet = "ab c.总"

    def s():
        return "".join(rng.choice(alphabet) for _ in range(rng.randint(0, 10)))

    def box():
        x1, x2 = sorted(rng.uniform(0, 50) for _ in range(2))
        y1, y2 = sorted(rng.uniform(0, 50) for _ in range(2))
        return BoundingBox(x1, y1, x2, y2)

    for _ in range(500):
        vals = [
            anls(s(), [s() or "x"]).value,
            vqa_score(s(), [s() or "x"]).value,
            iou(box(), box()).value,
            long_reading_score(s(), s()).value,
            counting_score([rng.randint(0, 30)], [rng.randint(0, 30)]).value,
            extraction_f1({"k": s()}, {"k": s()}).value,
        ]
        assert all(0.0 <= v <= 1.0 and not math.isnan(v) for v in vals)
