"""Desk-scale trainer: synthetic scenarios, a toy model, and a training loop.

The model is deliberately tiny: one logit per trainable anchor (scores are
their sigmoids) and raw corner parameters for each positive's box.  Training
is full-batch gradient descent with momentum.  The point is not speed but
observability: every epoch logs the loss split, the positive/negative
gradient balance ratio, the self-balance weight, the score/IoU rank
correlation, and the mean IoU.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .geometry import LocErrorKind
from .losses import (
    LossBreakdown,
    SelfBalancer,
    alrp_loss,
    ap_loss,
    balance_ratio,
    ndcg_loss,
    self_balance_update,
    wrong_target_alrp,
)
from .metrics import positive_ious, ranking_correlation
from .ranking import NEG, POS, AnchorRecord, Scenario, StepKind

LOG_COLUMNS = ("epoch", "total", "cls", "loc", "ratio", "sb_weight", "rho", "mean_iou")


@dataclass(frozen=True)
class ScenarioGenSpec:
    """Parameters for the synthetic scenario generator.

    Ground-truth boxes are disjoint unit squares.  Each positive predicts a
    box whose IoU with its ground truth is drawn from [iou_low, iou_high];
    ``iou_order`` controls how those IoUs line up with the scores:
    "anti" (default) gives the best IoU to the lowest-scored positive so a
    trainer starts from rank correlation -1, "aligned" the reverse, and
    "random" leaves the drawn order.

    Scores default to sigmoid(score_noise * standard normal), which keeps
    them strictly inside (0, 1) so a trainer can recover logits.  Passing
    ``score_low``/``score_high`` switches to uniform scores on that range
    (``pos_score_low`` optionally raises the positives' floor), which the
    complexity probe uses to control how many negatives survive pruning.
    """

    n_pos: int
    n_neg: int
    seed: int
    score_noise: float = 1.0
    iou_low: float = 0.5
    iou_high: float = 0.7
    iou_order: str = "anti"
    score_low: Optional[float] = None
    score_high: Optional[float] = None
    pos_score_low: Optional[float] = None
    loc_kind: LocErrorKind = field(default_factory=LocErrorKind.iou)

    def __post_init__(self):
        if self.n_pos < 1 or self.n_neg < 0:
            raise ValueError("need n_pos >= 1 and n_neg >= 0")
        if not (0.0 <= self.iou_low <= self.iou_high <= 1.0):
            raise ValueError("need 0 <= iou_low <= iou_high <= 1")
        if self.iou_order not in ("anti", "aligned", "random"):
            raise ValueError("iou_order must be 'anti', 'aligned', or 'random'")
        if (self.score_low is None) != (self.score_high is None):
            raise ValueError("score_low and score_high must be given together")


def _gt_box(k: int) -> np.ndarray:
    # Unit squares three units apart: no pair of ground truths overlaps.
    return np.array([3.0 * k, 0.0, 3.0 * k + 1.0, 1.0], dtype=np.float64)


def _pred_box_with_iou(gt: np.ndarray, target: float) -> np.ndarray:
    # Shrink the top edge only: IoU with the unit ground truth is exactly
    # the retained height fraction.
    x1, y1, x2, y2 = gt
    return np.array([x1, y1, x2, y1 + target * (y2 - y1)], dtype=np.float64)


def generate_scenario(spec: ScenarioGenSpec) -> Scenario:
    """Draw a seeded scenario: scores, ground truths, and positive boxes."""
    rng = np.random.default_rng(spec.seed)
    if spec.score_low is not None:
        neg_scores = rng.uniform(spec.score_low, spec.score_high, spec.n_neg)
        lo = spec.pos_score_low if spec.pos_score_low is not None else spec.score_low
        pos_scores = rng.uniform(lo, spec.score_high, spec.n_pos)
    else:
        pos_scores = 1.0 / (1.0 + np.exp(-spec.score_noise * rng.standard_normal(spec.n_pos)))
        neg_scores = 1.0 / (1.0 + np.exp(-spec.score_noise * rng.standard_normal(spec.n_neg)))

    ious = rng.uniform(spec.iou_low, spec.iou_high, spec.n_pos)
    if spec.iou_order != "random":
        # Rank positives by score (descending, ties by index) and hand out
        # the sorted IoUs accordingly.
        score_order = np.lexsort((np.arange(spec.n_pos), -pos_scores))
        sorted_ious = np.sort(ious)
        if spec.iou_order == "aligned":
            sorted_ious = sorted_ious[::-1]
        out = np.empty_like(ious)
        out[score_order] = sorted_ious
        ious = out

    gts = [_gt_box(k) for k in range(spec.n_pos)]
    anchors = [
        AnchorRecord(POS, float(pos_scores[k]), gt=k, box=_pred_box_with_iou(gts[k], float(ious[k])))
        for k in range(spec.n_pos)
    ]
    anchors.extend(AnchorRecord(NEG, float(s)) for s in neg_scores)
    return Scenario(anchors, gts, spec.loc_kind)


# ---------------------------------------------------------------------------
# Toy model: logits for scores, raw corners for boxes.
# ---------------------------------------------------------------------------


def _logit(p: np.ndarray) -> np.ndarray:
    return np.log(p) - np.log1p(-p)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


class ToyModel:
    """Trainable state: one logit per non-ignored anchor, corner boxes.

    Scores outside (0, 1) cannot be inverted through a sigmoid, so initial
    scores are clamped into [eps, 1 - eps] before taking logits.
    """

    def __init__(self, scenario: Scenario, eps: float = 1e-4):
        self.scenario = scenario
        self.train_index = np.concatenate((scenario.pos_index, scenario.neg_index))
        init = np.clip(scenario.scores[self.train_index], eps, 1.0 - eps)
        self.logits = _logit(init)
        self.boxes = scenario.pos_boxes().copy()

    def current_scenario(self) -> Scenario:
        scores = self.scenario.scores.copy()
        scores[self.train_index] = _sigmoid(self.logits)
        return self.scenario.with_scores(scores).with_positive_boxes(self.boxes)

    def score_grad_to_logit_grad(self, score_grads: np.ndarray) -> np.ndarray:
        s = _sigmoid(self.logits)
        return score_grads[self.train_index] * s * (1.0 - s)


# ---------------------------------------------------------------------------
# Training loop.
# ---------------------------------------------------------------------------


@dataclass
class TrainLog:
    """Per-epoch rows plus run-level outcome flags.

    Row ``epoch=e`` records the state *entering* epoch ``e`` (so row 0 is
    the initial state) together with the self-balance weight active for the
    update applied at that epoch; one extra row records the final state.
    ``diverged_at`` is set instead of raising when the loss stops being
    finite -- divergence is an outcome to report, not a crash.
    """

    rows: list = field(default_factory=list)
    diverged_at: Optional[int] = None
    extras: list = field(default_factory=list)

    def values(self, column: str) -> np.ndarray:
        return np.array([row[column] for row in self.rows], dtype=np.float64)

    @property
    def initial_total(self) -> float:
        return self.rows[0]["total"]

    @property
    def final_total(self) -> float:
        return self.rows[-1]["total"]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=LOG_COLUMNS, extrasaction="ignore")
            writer.writeheader()
            for row in self.rows:
                writer.writerow(row)


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for the toy training loop."""

    loss: str = "alrp"
    epochs: int = 100
    lr: float = 1.0
    box_lr: Optional[float] = None
    momentum: float = 0.9
    step: StepKind = field(default_factory=lambda: StepKind.smoothed(1.0))
    self_balance: bool = False
    wrong_target: bool = False
    use_fast: bool = False

    def __post_init__(self):
        if self.loss not in ("ap", "alrp", "ndcg"):
            raise ValueError("loss must be 'ap', 'alrp', or 'ndcg'")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.wrong_target and self.loss != "alrp":
            raise ValueError("the wrong-target variant only applies to the alrp loss")
        if self.self_balance and self.loss != "alrp":
            raise ValueError("self-balancing only applies to the alrp loss")


def _evaluate(model: ToyModel, cfg: TrainConfig, balancer: SelfBalancer):
    scn = model.current_scenario()
    if cfg.loss == "ap":
        bd = ap_loss(scn, cfg.step)
    elif cfg.loss == "ndcg":
        bd = ndcg_loss(scn, cfg.step)
    elif cfg.wrong_target:
        bd = wrong_target_alrp(scn, cfg.step, balancer=balancer)
    else:
        bd = alrp_loss(scn, cfg.step, balancer=balancer, use_fast=cfg.use_fast)
    return scn, bd


def _safe_rho(scn: Scenario) -> float:
    try:
        return ranking_correlation(scn)
    except ValueError:
        return float("nan")


def train(scenario: Scenario, cfg: TrainConfig) -> TrainLog:
    """Full-batch gradient descent with momentum on the toy model.

    Box gradients move only the positives' boxes; score gradients move the
    logits of every positive and negative anchor.  With self-balancing on,
    the weight for epoch e+1 is the mean total/loc ratio observed at epoch
    e (identity weight at epoch 0, and iterations with a zero localisation
    component leave the weight unchanged).
    """
    model = ToyModel(scenario)
    box_lr = cfg.lr if cfg.box_lr is None else cfg.box_lr
    balancer = SelfBalancer()
    log = TrainLog()
    vel_logit = np.zeros_like(model.logits)
    vel_box = np.zeros_like(model.boxes)

    def record(epoch: int, scn: Scenario, bd: LossBreakdown) -> None:
        log.rows.append(
            {
                "epoch": epoch,
                "total": bd.total,
                "cls": bd.cls_component,
                "loc": bd.loc_component,
                "ratio": balance_ratio(bd, scn),
                "sb_weight": bd.sb_weight_applied,
                "rho": _safe_rho(scn),
                "mean_iou": float(positive_ious(scn).mean()),
            }
        )
        log.extras.append({"box_grad_norm": float(np.linalg.norm(bd.box_grads))})

    for epoch in range(cfg.epochs):
        scn, bd = _evaluate(model, cfg, balancer)
        if not np.isfinite(bd.total):
            log.diverged_at = epoch
            break
        record(epoch, scn, bd)

        g_logit = model.score_grad_to_logit_grad(bd.score_grads)
        vel_logit = cfg.momentum * vel_logit + g_logit
        model.logits = model.logits - cfg.lr * vel_logit
        if bd.box_grads.size:
            vel_box = cfg.momentum * vel_box + bd.box_grads
            model.boxes = model.boxes - box_lr * vel_box
            # Keep corner order valid: a step can push an edge past its
            # partner, which the scenario constructor rejects.
            model.boxes[:, 2] = np.maximum(model.boxes[:, 2], model.boxes[:, 0])
            model.boxes[:, 3] = np.maximum(model.boxes[:, 3], model.boxes[:, 1])

        if cfg.self_balance:
            balancer = self_balance_update(balancer, [(bd.total, bd.loc_component)])

    if log.diverged_at is None:
        scn, bd = _evaluate(model, cfg, balancer)
        if np.isfinite(bd.total):
            record(cfg.epochs, scn, bd)
        else:
            log.diverged_at = cfg.epochs
    return log


def sb_warmup_report(scenario: Scenario, cfg: TrainConfig, probe_epochs: int = 5) -> dict:
    """Side-by-side early-epoch comparison with self-balancing on and off.

    Because the self-balance weight is 1 at epoch 0, both runs apply the
    same first update; at epoch 1 the states still coincide, so the box
    gradients differ by exactly the active weight.  The report exposes the
    per-epoch weights and box-gradient norms of both runs for inspection.
    """
    base = replace(cfg, epochs=probe_epochs, self_balance=False)
    won = replace(cfg, epochs=probe_epochs, self_balance=True)
    log_off = train(scenario, base)
    log_on = train(scenario, won)
    return {
        "sb_weights": [row["sb_weight"] for row in log_on.rows],
        "box_grad_norm_on": [e["box_grad_norm"] for e in log_on.extras],
        "box_grad_norm_off": [e["box_grad_norm"] for e in log_off.extras],
        "loc_share_on": [row["loc"] / row["total"] if row["total"] else float("nan") for row in log_on.rows],
        "loc_share_off": [row["loc"] / row["total"] if row["total"] else float("nan") for row in log_off.rows],
    }
