"""The sort/cumsum implementation must agree with the direct assembly on
every field, under both step kinds, both backends, with and without pruning."""

import numpy as np
import pytest

from conftest import random_scenario
from rankloss.fast_alrp import (
    FastConfig,
    active_backend,
    complexity_bound,
    complexity_probe,
    fast_alrp,
    operation_count,
    pruned_size,
)
from rankloss.losses import SelfBalancer, alrp_loss
from rankloss.ranking import IGNORE, NEG, POS, AnchorRecord, Scenario, StepKind

ALL_FIELDS_RTOL = 1e-12
GRAD_ATOL = 1e-14


def assert_breakdowns_match(fast, slow, rtol=ALL_FIELDS_RTOL):
    np.testing.assert_allclose(fast.total, slow.total, rtol=rtol)
    np.testing.assert_allclose(fast.cls_component, slow.cls_component, rtol=rtol, atol=1e-15)
    np.testing.assert_allclose(fast.loc_component, slow.loc_component, rtol=rtol)
    np.testing.assert_allclose(fast.score_grads, slow.score_grads, rtol=rtol, atol=GRAD_ATOL)
    np.testing.assert_allclose(fast.box_grads, slow.box_grads, rtol=rtol, atol=GRAD_ATOL)
    assert fast.sb_weight_applied == slow.sb_weight_applied
    np.testing.assert_allclose(
        fast.grad_report.loss_value, slow.grad_report.loss_value, rtol=rtol
    )
    np.testing.assert_allclose(
        fast.grad_report.primary_term_sum_check,
        slow.grad_report.primary_term_sum_check,
        rtol=rtol,
        atol=1e-14,
    )


def config_for(kind, prune=True):
    return FastConfig(delta=kind.delta, prune=prune, exact=not kind.smooth)


class TestParityWithDirectAssembly:
    def test_random_scenarios_both_steps(self):
        rng = np.random.default_rng(31)
        for trial in range(25):
            n_pos = int(rng.integers(1, 41))
            n_neg = int(rng.integers(0, 801))
            tie_fraction = float(rng.choice([0.0, 0.3]))
            scn = random_scenario(
                rng, n_pos=n_pos, n_neg=n_neg, spread=4.0, tie_fraction=tie_fraction
            )
            for kind in (StepKind.exact(), StepKind.smoothed(1.0), StepKind.smoothed(0.3)):
                slow = alrp_loss(scn, kind)
                fast = fast_alrp(scn, config_for(kind))
                assert_breakdowns_match(fast, slow)

    def test_use_fast_flag_routes_here(self):
        rng = np.random.default_rng(32)
        scn = random_scenario(rng, n_pos=8, n_neg=50)
        kind = StepKind.smoothed(0.7)
        via_flag = alrp_loss(scn, kind, use_fast=True)
        direct = fast_alrp(scn, config_for(kind))
        np.testing.assert_array_equal(via_flag.score_grads, direct.score_grads)
        assert via_flag.total == direct.total

    def test_balancer_passthrough(self):
        rng = np.random.default_rng(33)
        scn = random_scenario(rng, n_pos=6, n_neg=40)
        sb = SelfBalancer(active_weight=4.0)
        kind = StepKind.exact()
        assert_breakdowns_match(
            fast_alrp(scn, config_for(kind), balancer=sb), alrp_loss(scn, kind, balancer=sb)
        )

    def test_ignored_anchors_stay_zero(self):
        rng = np.random.default_rng(34)
        base = random_scenario(rng, n_pos=5, n_neg=30)
        scn = Scenario(
            list(base.anchors) + [AnchorRecord(IGNORE, 99.0)], base.gts, base.loc_kind
        )
        kind = StepKind.smoothed(1.0)
        fast = fast_alrp(scn, config_for(kind))
        assert fast.score_grads[-1] == 0.0
        assert_breakdowns_match(fast, alrp_loss(scn, kind))

    def test_no_negatives(self):
        rng = np.random.default_rng(35)
        scn = random_scenario(rng, n_pos=7, n_neg=0)
        for kind in (StepKind.exact(), StepKind.smoothed(1.0)):
            assert_breakdowns_match(fast_alrp(scn, config_for(kind)), alrp_loss(scn, kind))

    def test_single_positive_tied_with_negatives(self):
        gt = [np.array([0.0, 0.0, 1.0, 1.0])]
        scn = Scenario(
            [
                AnchorRecord(POS, 0.5, gt=0, box=np.array([0.0, 0.0, 1.0, 0.8])),
                AnchorRecord(NEG, 0.5),
                AnchorRecord(NEG, 0.5),
                AnchorRecord(NEG, 0.1),
            ],
            gt,
        )
        for kind in (StepKind.exact(), StepKind.smoothed(1.0)):
            assert_breakdowns_match(fast_alrp(scn, config_for(kind)), alrp_loss(scn, kind))


class TestPruning:
    def _two_pos_scenario(self, neg_scores):
        gts = [np.array([0.0, 0.0, 1.0, 1.0]), np.array([3.0, 0.0, 4.0, 1.0])]
        anchors = [
            AnchorRecord(POS, 7.0, gt=0, box=np.array([0.0, 0.0, 1.0, 0.9])),
            AnchorRecord(POS, 5.0, gt=1, box=np.array([3.0, 0.0, 4.0, 0.8])),
        ]
        anchors.extend(AnchorRecord(NEG, s) for s in neg_scores)
        return Scenario(anchors, gts)

    def test_smooth_support_bound_is_strict(self):
        # lowest positive scores 5.0; with delta 1 the step support starts
        # strictly above 4.0
        scn = self._two_pos_scenario([3.9, 4.0, 4.1, 6.0])
        assert pruned_size(scn, FastConfig(delta=1.0)) == 2
        assert pruned_size(scn, FastConfig(delta=1.0, prune=False)) == 4

    def test_exact_bound_keeps_ties(self):
        scn = self._two_pos_scenario([4.999, 5.0, 5.001])
        assert pruned_size(scn, FastConfig(exact=True)) == 2

    def test_pruning_never_changes_results(self):
        rng = np.random.default_rng(36)
        for _ in range(10):
            scn = random_scenario(rng, n_pos=5, n_neg=200, spread=10.0)
            for kind in (StepKind.exact(), StepKind.smoothed(1.0)):
                pruned = fast_alrp(scn, config_for(kind, prune=True))
                full = fast_alrp(scn, config_for(kind, prune=False))
                assert_breakdowns_match(pruned, full)

    def test_rejects_nonpositive_delta(self):
        with pytest.raises(ValueError):
            FastConfig(delta=0.0)


class TestOperationCounting:
    def test_arithmetic(self):
        assert operation_count(10, 100, 40) == 100 + 10 * (10 + 40)
        assert complexity_bound(10, 100, 40) == 100 + 10 * 40
        assert complexity_bound(10, 100, 5) == 100 + 10 * 10

    def test_count_within_twice_the_bound(self):
        rng = np.random.default_rng(37)
        for _ in range(50):
            n_pos = int(rng.integers(1, 200))
            n_neg = int(rng.integers(0, 5000))
            n_kept = int(rng.integers(0, n_neg + 1))
            ops = operation_count(n_pos, n_neg, n_kept)
            bound = complexity_bound(n_pos, n_neg, n_kept)
            assert bound <= ops <= 2 * bound

    def test_probe_rows(self):
        rows = complexity_probe([(5, 50), (8, 200)], seed=3)
        assert [r["n_pos"] for r in rows] == [5, 8]
        for r in rows:
            assert r["n_kept"] <= r["n_neg"]
            assert 1.0 <= r["ratio"] <= 2.0
            assert r["ops"] == operation_count(r["n_pos"], r["n_neg"], r["n_kept"])

    def test_probe_without_prune_keeps_everything(self):
        pruned = complexity_probe([(6, 300)], seed=4, prune=True)[0]
        full = complexity_probe([(6, 300)], seed=4, prune=False)[0]
        assert full["n_kept"] == full["n_neg"]
        assert pruned["n_kept"] < full["n_kept"]
        assert pruned["ops"] < full["ops"]


class TestBackendSelection:
    def test_forced_numpy(self, monkeypatch):
        monkeypatch.setenv("RANKLOSS_BACKEND", "numpy")
        assert active_backend() == "numpy"
        rng = np.random.default_rng(38)
        scn = random_scenario(rng, n_pos=6, n_neg=60)
        kind = StepKind.smoothed(1.0)
        assert_breakdowns_match(fast_alrp(scn, config_for(kind)), alrp_loss(scn, kind))

    def test_forced_numba_if_available(self, monkeypatch):
        pytest.importorskip("numba")
        monkeypatch.setenv("RANKLOSS_BACKEND", "numba")
        assert active_backend() == "numba"
        rng = np.random.default_rng(39)
        scn = random_scenario(rng, n_pos=6, n_neg=60)
        kind = StepKind.exact()
        assert_breakdowns_match(fast_alrp(scn, config_for(kind)), alrp_loss(scn, kind))

    def test_backends_agree_with_each_other(self, monkeypatch):
        pytest.importorskip("numba")
        rng = np.random.default_rng(40)
        scn = random_scenario(rng, n_pos=12, n_neg=300, tie_fraction=0.2)
        kind = StepKind.smoothed(0.5)
        monkeypatch.setenv("RANKLOSS_BACKEND", "numpy")
        via_numpy = fast_alrp(scn, config_for(kind))
        monkeypatch.setenv("RANKLOSS_BACKEND", "numba")
        via_numba = fast_alrp(scn, config_for(kind))
        assert_breakdowns_match(via_numba, via_numpy)

    def test_invalid_backend_rejected(self, monkeypatch):
        monkeypatch.setenv("RANKLOSS_BACKEND", "fortran")
        with pytest.raises(RuntimeError):
            active_backend()

    def test_auto_default(self, monkeypatch):
        monkeypatch.delenv("RANKLOSS_BACKEND", raising=False)
        assert active_backend() in ("numba", "numpy")
