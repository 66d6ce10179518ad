"""Difference-transform machinery: step kinds, rank statistics, and the
error-driven gradient assembly shared by every ranking loss."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import naive_pair_tables, random_scenario
from rankloss.fixtures import fixture_scenario
from rankloss.losses import ALRPLossDef, APLossDef, NDCGLossDef
from rankloss.ranking import (
    IGNORE,
    NEG,
    POS,
    AnchorRecord,
    RankingLossDef,
    Scenario,
    StepKind,
    assemble_gradients,
    diff_transform,
    gradient_sums,
    primary_term_sum,
    rank_stats,
    step,
)

LOSS_DEFS = (APLossDef(), ALRPLossDef(), NDCGLossDef())
STEP_KINDS = (StepKind.exact(), StepKind.smoothed(1.0))


class TestStepKind:
    def test_exact_semantics(self):
        kind = StepKind.exact()
        np.testing.assert_array_equal(step([-1.0, -1e-12, 0.0, 1e-12, 1.0], kind), [0, 0, 1, 1, 1])

    def test_smooth_semantics(self):
        kind = StepKind.smoothed(1.0)
        np.testing.assert_allclose(
            step([-2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0], kind),
            [0.0, 0.0, 0.25, 0.5, 0.75, 1.0, 1.0],
            rtol=1e-15,
        )

    def test_smooth_delta_scales_ramp(self):
        kind = StepKind.smoothed(0.5)
        np.testing.assert_allclose(step([-0.5, 0.25, 0.5], kind), [0.0, 0.75, 1.0], rtol=1e-15)

    def test_rejects_nonpositive_delta(self):
        with pytest.raises(ValueError):
            StepKind.smoothed(0.0)
        with pytest.raises(ValueError):
            StepKind(smooth=True, delta=-1.0)


class TestDiffTransform:
    def test_sign_convention(self):
        # x_ij = s_j - s_i: negative when the first score is larger
        np.testing.assert_allclose(diff_transform(1.00, 0.90), -0.10, rtol=1e-12)

    def test_broadcasts(self):
        x = diff_transform(0.5, np.array([0.2, 0.5, 0.9]))
        np.testing.assert_allclose(x, [-0.3, 0.0, 0.4], rtol=1e-12)


class TestRankStats:
    def test_canonical_exact_ranks(self):
        scn = fixture_scenario("aligned")
        stats = rank_stats(scn, StepKind.exact())
        np.testing.assert_array_equal(stats.rank_pos, [1, 2, 3, 4])
        np.testing.assert_array_equal(stats.n_fp, [0, 1, 3, 6])
        np.testing.assert_array_equal(stats.rank, [1, 3, 6, 10])

    def test_matches_naive_definition(self):
        rng = np.random.default_rng(7)
        for kind in STEP_KINDS:
            scn = random_scenario(rng, n_pos=5, n_neg=17, tie_fraction=0.3)
            stats = rank_stats(scn, kind)
            ps, ns = scn.pos_scores(), scn.neg_scores()
            for i in range(ps.size):
                others = np.delete(ps, i)
                rank_pos = 1.0 + step(diff_transform(ps[i], others), kind).sum()
                n_fp = step(diff_transform(ps[i], ns), kind).sum()
                np.testing.assert_allclose(stats.rank_pos[i], rank_pos, rtol=1e-14)
                np.testing.assert_allclose(stats.n_fp[i], n_fp, rtol=1e-14)
                np.testing.assert_allclose(stats.rank[i], rank_pos + n_fp, rtol=1e-14)

    def test_exact_ties_count_both_ways(self):
        gt = [np.array([0.0, 0.0, 1.0, 1.0])]
        box = np.array([0.0, 0.0, 1.0, 0.9])
        scn = Scenario(
            [
                AnchorRecord(POS, 0.5, gt=0, box=box),
                AnchorRecord(POS, 0.5, gt=0, box=box),
                AnchorRecord(NEG, 0.5),
            ],
            gt,
        )
        stats = rank_stats(scn, StepKind.exact())
        # H(0) = 1: each positive counts the other and the tied negative
        np.testing.assert_array_equal(stats.rank_pos, [2, 2])
        np.testing.assert_array_equal(stats.n_fp, [1, 1])
        np.testing.assert_array_equal(stats.rank, [3, 3])


class TestScenario:
    def _gt(self):
        return [np.array([0.0, 0.0, 1.0, 1.0])]

    def _box(self):
        return np.array([0.0, 0.0, 1.0, 0.9])

    def test_requires_a_positive(self):
        with pytest.raises(ValueError):
            Scenario([AnchorRecord(NEG, 0.5)], self._gt())

    def test_requires_finite_scores(self):
        with pytest.raises(ValueError):
            Scenario([AnchorRecord(POS, float("nan"), gt=0, box=self._box())], self._gt())

    def test_positive_needs_valid_gt_and_box(self):
        with pytest.raises(ValueError):
            Scenario([AnchorRecord(POS, 0.5, gt=None, box=self._box())], self._gt())
        with pytest.raises(ValueError):
            Scenario([AnchorRecord(POS, 0.5, gt=3, box=self._box())], self._gt())
        with pytest.raises(ValueError):
            Scenario([AnchorRecord(POS, 0.5, gt=0, box=None)], self._gt())

    def test_rejects_unknown_label(self):
        with pytest.raises(ValueError):
            AnchorRecord("background", 0.5)

    def test_counts_and_views(self):
        scn = fixture_scenario("aligned")
        assert scn.n_pos == 4 and scn.n_neg == 6
        np.testing.assert_array_equal(scn.pos_scores(), [1.0, 0.8, 0.5, 0.1])
        np.testing.assert_allclose(scn.loc_errors(), [0.1, 0.4, 0.7, 1.0], rtol=1e-12)

    def test_with_scores_copies(self):
        scn = fixture_scenario("aligned")
        new = scn.with_scores(scn.scores + 1.0)
        np.testing.assert_allclose(new.scores, scn.scores + 1.0)
        np.testing.assert_array_equal(scn.pos_scores(), [1.0, 0.8, 0.5, 0.1])

    def test_with_positive_boxes_copies(self):
        scn = fixture_scenario("aligned")
        boxes = scn.pos_boxes()
        boxes[:, 3] = 1.0
        new = scn.with_positive_boxes(boxes)
        np.testing.assert_allclose(new.loc_errors(), np.zeros(4), atol=1e-15)
        np.testing.assert_allclose(scn.loc_errors(), [0.1, 0.4, 0.7, 1.0], rtol=1e-12)

    def test_ignored_anchors_are_inert(self):
        scn = fixture_scenario("aligned")
        with_ignored = Scenario(
            list(scn.anchors) + [AnchorRecord(IGNORE, 99.0)], scn.gts, scn.loc_kind
        )
        for kind in STEP_KINDS:
            base = rank_stats(scn, kind)
            extended = rank_stats(with_ignored, kind)
            np.testing.assert_array_equal(base.rank, extended.rank)
            np.testing.assert_array_equal(base.n_fp, extended.n_fp)
            report = assemble_gradients(with_ignored, ALRPLossDef(), kind)
            assert report.score_grads[-1] == 0.0


class _TargetAbovePrimaryDef(RankingLossDef):
    """Deliberately inconsistent: the target exceeds the primary term."""

    name = "inconsistent"

    def normalizer(self, scenario):
        return scenario.n_pos

    def local_errors(self, scenario, stats, kind):
        n = scenario.n_pos
        return np.zeros(n), np.ones(n)


class TestAssembly:
    def test_gradient_signs(self):
        rng = np.random.default_rng(11)
        for loss_def in LOSS_DEFS:
            for kind in STEP_KINDS:
                scn = random_scenario(rng, sentinel=True)
                g = assemble_gradients(scn, loss_def, kind).score_grads
                assert (g[scn.pos_index] <= 0.0).all()
                assert (g[scn.neg_index] >= 0.0).all()

    def test_raises_when_target_exceeds_primary(self):
        rng = np.random.default_rng(12)
        scn = random_scenario(rng, sentinel=True)
        with pytest.raises(ValueError):
            assemble_gradients(scn, _TargetAbovePrimaryDef(), StepKind.exact())

    def test_no_negatives_means_no_classification_error(self):
        gt = [np.array([0.0, 0.0, 1.0, 1.0])]
        scn = Scenario(
            [AnchorRecord(POS, 0.7, gt=0, box=np.array([0.0, 0.0, 1.0, 0.9]))], gt
        )
        report = assemble_gradients(scn, APLossDef(), StepKind.exact())
        assert report.loss_value == 0.0
        np.testing.assert_array_equal(report.score_grads, np.zeros(1))

    def test_streamed_matches_materialized_tables(self):
        rng = np.random.default_rng(13)
        for loss_def in LOSS_DEFS:
            for kind in STEP_KINDS:
                scn = random_scenario(rng, n_pos=7, n_neg=30, sentinel=True, tie_fraction=0.2)
                report = assemble_gradients(scn, loss_def, kind)
                table, table_star, z = naive_pair_tables(scn, loss_def, kind)
                np.testing.assert_allclose(report.loss_value, table.sum() / z, rtol=1e-12)
                # per-negative gradient equals its column sum of (L - L*) / z
                expected = (table - table_star).sum(axis=0) / z
                np.testing.assert_allclose(
                    report.score_grads[scn.neg_index], expected, rtol=1e-12, atol=1e-15
                )

    def test_primary_check_flags_undistributable_error(self):
        # a top-scored positive with residual local error but no negative
        # above it cannot push its error anywhere: the distributed double
        # sum falls short of the direct per-positive sum and the report
        # exposes the gap.
        gt = [np.array([0.0, 0.0, 1.0, 1.0])]
        scn = Scenario(
            [
                AnchorRecord(POS, 5.0, gt=0, box=np.array([0.0, 0.0, 1.0, 0.8])),
                AnchorRecord(NEG, 1.0),
            ],
            gt,
        )
        report = assemble_gradients(scn, ALRPLossDef(), StepKind.exact())
        assert report.primary_term_sum_check > 0.0
        # planting one negative above every positive restores the identity
        planted = Scenario(list(scn.anchors) + [AnchorRecord(NEG, 6.0)], gt)
        report = assemble_gradients(planted, ALRPLossDef(), StepKind.exact())
        assert report.primary_term_sum_check <= 1e-15


class TestBalanceProperty:
    """Positive and negative gradient magnitude sums agree row by row, so
    the totals agree for every conforming loss, step kind, and scenario."""

    @given(st.integers(0, 10_000))
    @settings(max_examples=40, deadline=None)
    def test_balance_holds_everywhere(self, seed):
        rng = np.random.default_rng(seed)
        n_pos = int(rng.integers(1, 9))
        n_neg = int(rng.integers(0, 40))
        sentinel = bool(rng.integers(0, 2))
        tie_fraction = float(rng.choice([0.0, 0.25]))
        scn = random_scenario(
            rng, n_pos=n_pos, n_neg=n_neg, sentinel=sentinel, tie_fraction=tie_fraction
        )
        for loss_def in LOSS_DEFS:
            for kind in STEP_KINDS:
                report = assemble_gradients(scn, loss_def, kind)
                pos_sum, neg_sum = gradient_sums(report, scn)
                np.testing.assert_allclose(pos_sum, neg_sum, rtol=1e-12, atol=1e-15)


class TestPrimaryTermIdentity:
    """With every positive outranked by at least one negative, the
    distributed double sum reproduces the direct per-positive loss."""

    @given(st.integers(0, 10_000))
    @settings(max_examples=40, deadline=None)
    def test_double_sum_equals_direct_loss(self, seed):
        rng = np.random.default_rng(seed)
        n_pos = int(rng.integers(1, 9))
        n_neg = int(rng.integers(0, 40))
        scn = random_scenario(rng, n_pos=n_pos, n_neg=n_neg, sentinel=True)
        for loss_def in LOSS_DEFS:
            for kind in STEP_KINDS:
                report = assemble_gradients(scn, loss_def, kind)
                assert report.primary_term_sum_check <= 1e-12 * max(1.0, report.loss_value)
                np.testing.assert_allclose(
                    primary_term_sum(scn, loss_def, kind), report.loss_value, rtol=1e-12
                )
