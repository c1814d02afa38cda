"""Ranking metrics against hand values and brute-force oracles."""

from __future__ import annotations

import numpy as np
import pytest

from groupsift.errors import DegenerateLabelsError, UnlabeledImageError
from groupsift.manifest import Grouping, OutlierType
from groupsift.metrics import (
    REPORT_COLUMNS,
    MetricReport,
    auroc,
    average_precision,
    evaluate,
    format_report_table,
    fraction_at_recall,
    recall_at_fraction,
    tpr_at_head,
)
from groupsift.ranking import DistanceMetric, Method, build_ranked_list

from .conftest import record
from .oracles import (
    ap_prefix,
    auroc_pairs,
    fraction_at_recall_prefix,
    recall_at_fraction_prefix,
    tpr_at_head_prefix,
)


def ranked_from_labels(labels: str):
    """Expand a label string like '+-+-' into a strictly ordered ranking.

    Returns (scored pairs, ids in rank order, positive id set).
    """
    scored = [(f"i{k:03d}", float(len(labels) - k)) for k in range(len(labels))]
    ids = [i for i, _ in scored]
    positives = {f"i{k:03d}" for k, c in enumerate(labels) if c == "+"}
    return scored, ids, positives


class TestHandValues:
    def test_auroc_alternating(self):
        scored, _, pos = ranked_from_labels("+-+-")
        assert auroc(scored, pos) == 0.75

    def test_auroc_perfect(self):
        scored, _, pos = ranked_from_labels("++--")
        assert auroc(scored, pos) == 1.0

    def test_auroc_inverted(self):
        scored, _, pos = ranked_from_labels("--++")
        assert auroc(scored, pos) == 0.0

    def test_auroc_all_tied_scores(self):
        scored = [("a", 1.0), ("b", 1.0), ("c", 1.0), ("d", 1.0)]
        assert auroc(scored, {"a", "c"}) == 0.5

    def test_ap_example(self):
        _, ids, pos = ranked_from_labels("+-+")
        np.testing.assert_allclose(average_precision(ids, pos), 5.0 / 6.0)

    def test_tpr_at_head(self):
        _, ids, pos = ranked_from_labels("+-+-")
        assert tpr_at_head(ids, pos) == 0.5

    def test_recall_at_fraction_rounds_prefix_up(self):
        _, ids, pos = ranked_from_labels("+-" + "-" * 8)
        # ceil(0.05 * 10) = 1 and the single top entry is positive
        assert recall_at_fraction(ids, pos, 0.05) == 1.0

    def test_fraction_at_recall(self):
        _, ids, pos = ranked_from_labels("+--+" + "-" * 6)
        # both positives found after 4 of 10 entries
        assert fraction_at_recall(ids, pos, 0.95) == 0.4

    def test_fraction_at_recall_rounds_required_up(self):
        _, ids, pos = ranked_from_labels("++-+" + "-" * 16)
        # ceil(0.95 * 3) = 3 positives required, reached at rank 4
        assert fraction_at_recall(ids, pos, 0.95) == 0.2

    def test_fraction_bounds_checked(self):
        _, ids, pos = ranked_from_labels("+-")
        with pytest.raises(ValueError):
            recall_at_fraction(ids, pos, 0.0)
        with pytest.raises(ValueError):
            fraction_at_recall(ids, pos, 1.5)


class TestOracleAgreement:
    """Randomized instances must match the brute-force oracles exactly."""

    def instances(self, count: int, rng: np.random.Generator):
        for _ in range(count):
            n = int(rng.integers(10, 200))
            n_pos = int(rng.integers(1, max(2, n // 4)))
            ids = [f"i{k:04d}" for k in range(n)]
            # coarse score grid so ties occur often
            scores = rng.integers(0, 12, size=n).astype(np.float64)
            positives = set(rng.choice(ids, size=n_pos, replace=False))
            scored = sorted(zip(ids, scores), key=lambda t: (-t[1], t[0]))
            yield scored, [i for i, _ in scored], positives

    def test_auroc_matches_pair_enumeration(self, rng):
        for scored, _, pos in self.instances(60, rng):
            np.testing.assert_allclose(
                auroc(scored, pos), auroc_pairs(scored, pos), rtol=0, atol=1e-12
            )

    def test_prefix_metrics_match_prefix_scans(self, rng):
        for scored, ids, pos in self.instances(60, rng):
            np.testing.assert_allclose(
                average_precision(ids, pos), ap_prefix(scored, pos), rtol=0, atol=1e-12
            )
            assert tpr_at_head(ids, pos) == tpr_at_head_prefix(scored, pos)
            assert recall_at_fraction(ids, pos, 0.05) == recall_at_fraction_prefix(
                scored, pos, 0.05
            )
            assert fraction_at_recall(ids, pos, 0.95) == fraction_at_recall_prefix(
                scored, pos, 0.95
            )

    def test_auroc_invariant_to_monotone_score_maps(self, rng):
        for scored, _, pos in self.instances(20, rng):
            remapped = [(i, 3.0 * s + 7.0) for i, s in scored]
            assert auroc(scored, pos) == auroc(remapped, pos)


def as_ranked_list(scored_pairs):
    triples = [(i, "g", s) for i, s in scored_pairs]
    return build_ranked_list(
        triples,
        method=Method.EMBEDDING,
        grouping=Grouping.SAMPLE,
        normalized=False,
        distance=DistanceMetric.COSINE,
    )


class TestEvaluate:
    def labeled_case(self):
        recs = [
            record("a", outlier=True, outlier_type=OutlierType.BUBBLES),
            record("b", outlier=False),
            record("c", outlier=True, outlier_type=OutlierType.FORCEPS),
            record("d", outlier=False),
        ]
        ranked = as_ranked_list([("a", 4.0), ("b", 3.0), ("c", 2.0), ("d", 1.0)])
        return ranked, recs

    def test_pooled_report(self):
        ranked, recs = self.labeled_case()
        report = evaluate(ranked, recs)
        assert report.n_total == 4
        assert report.n_outliers == 2
        assert report.tpr_at_head == 0.5
        assert report.outlier_filter is None
        # positives at ranks 1 and 3: pairs (a,b)+, (a,d)+, (c,d)+ of 4
        assert report.auroc == 0.75

    def test_per_type_excludes_other_outlier_types(self):
        ranked, recs = self.labeled_case()
        report = evaluate(ranked, recs, outlier_filter=OutlierType.BUBBLES)
        # the Forceps image is dropped entirely, leaving a + b + d
        assert report.n_total == 3
        assert report.n_outliers == 1
        assert report.auroc == 1.0

    def test_per_type_can_keep_other_types_as_negatives(self):
        ranked, recs = self.labeled_case()
        report = evaluate(
            ranked, recs, outlier_filter=OutlierType.FORCEPS, include_other_types=True
        )
        assert report.n_total == 4
        assert report.n_outliers == 1
        # negatives a, b, d; a and b outrank the lone Forceps positive
        assert report.auroc == pytest.approx(1.0 / 3.0)

    def test_unlabeled_entry_rejected(self):
        _, recs = self.labeled_case()
        ranked = as_ranked_list([("a", 4.0), ("b", 3.0), ("zzz", 0.5)])
        with pytest.raises(UnlabeledImageError, match="zzz"):
            evaluate(ranked, recs)

    def test_missing_label_rejected(self):
        recs = [record("a", outlier=True), record("b", outlier=None)]
        ranked = as_ranked_list([("a", 1.0), ("b", 0.5)])
        with pytest.raises(UnlabeledImageError):
            evaluate(ranked, recs)

    def test_single_class_rejected(self):
        recs = [record("a", outlier=False), record("b", outlier=False)]
        ranked = as_ranked_list([("a", 1.0), ("b", 0.5)])
        with pytest.raises(DegenerateLabelsError):
            evaluate(ranked, recs)

    def test_report_table_lists_all_metrics(self):
        ranked, recs = self.labeled_case()
        table = format_report_table(evaluate(ranked, recs))
        for name in ("AUROC", "AP", "TPR@Head", "Rec@5%p", "p@95%Rec"):
            assert name in table

    def test_report_row_matches_columns(self):
        ranked, recs = self.labeled_case()
        report = evaluate(ranked, recs)
        row = report.row()
        assert len(row) == len(REPORT_COLUMNS)
        assert float(row[0]) == report.auroc
        assert int(row[6]) == report.n_outliers


class TestMetricReport:
    def test_frozen(self):
        report = MetricReport(
            auroc=1.0,
            ap=1.0,
            tpr_at_head=1.0,
            rec_at_5pct=1.0,
            p_at_95rec=0.1,
            n_total=10,
            n_outliers=1,
            outlier_filter=None,
        )
        with pytest.raises(AttributeError):
            report.auroc = 0.5
