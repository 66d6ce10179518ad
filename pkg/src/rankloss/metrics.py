"""Detection-quality metrics: average precision, LRP, and rank diagnostics.

This module evaluates *outputs* (scored boxes against ground truth), as
opposed to the loss modules which differentiate through scores.  It also
carries the reference losses used for side-by-side reporting and the
rank-vector utilities shared with the trainer.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .geometry import Box, iou
from .ranking import NEG, POS, Scenario

# Default IoU thresholds for the mean-AP sweep.
DEFAULT_TAUS = (0.50, 0.65, 0.80, 0.95)

# Default recall sampling grid: ten evenly spaced points, 0.1 through 1.0.
TEN_POINT_RECALLS = tuple(np.round(np.arange(1, 11) * 0.1, 10))


@dataclass(frozen=True)
class Detection:
    """A scored box prediction belonging to a class."""

    score: float
    box: Box
    cls: int = 0

    def __post_init__(self) -> None:
        if not np.isfinite(self.score):
            raise ValueError("detection score must be finite")


@dataclass(frozen=True)
class GroundTruth:
    """An annotated object: a box and its class."""

    box: Box
    cls: int = 0


@dataclass(frozen=True)
class EvalInput:
    """Everything the evaluator needs: detections plus ground truth."""

    detections: tuple
    ground_truths: tuple

    @staticmethod
    def build(detections: Sequence[Detection], ground_truths: Sequence[GroundTruth]) -> "EvalInput":
        return EvalInput(tuple(detections), tuple(ground_truths))

    def classes(self) -> tuple:
        seen = sorted({g.cls for g in self.ground_truths})
        return tuple(seen)


@dataclass(frozen=True)
class MatchResult:
    """Greedy matching outcome for one class at one IoU threshold.

    ``det_indices`` are indices into the original detection tuple, sorted by
    descending score.  ``is_tp[k]`` says whether the k-th of those detections
    matched a ground-truth box; ``match_iou[k]`` carries the matched IoU (zero
    for false positives) and ``match_gt[k]`` the matched ground-truth index
    (-1 for false positives).
    """

    det_indices: np.ndarray
    is_tp: np.ndarray
    match_iou: np.ndarray
    match_gt: np.ndarray
    n_gt: int


def _sorted_detection_order(scores: np.ndarray) -> np.ndarray:
    # Descending score; ties broken by original (ascending) index so the
    # outcome never depends on container ordering quirks.
    return np.lexsort((np.arange(scores.size), -scores))


def match_class(
    detections: Sequence[Detection],
    ground_truths: Sequence[GroundTruth],
    cls: int,
    tau: float,
) -> MatchResult:
    """Greedily match one class's detections to its ground-truth boxes.

    Detections are visited in descending score order.  Each one claims the
    unclaimed ground-truth box of the same class with the highest IoU, if
    that IoU reaches ``tau``; IoU ties go to the lower ground-truth index.
    Every ground-truth box can be claimed at most once.
    """
    det_idx = np.array([i for i, d in enumerate(detections) if d.cls == cls], dtype=np.int64)
    gt_idx = [i for i, g in enumerate(ground_truths) if g.cls == cls]
    scores = np.array([detections[i].score for i in det_idx], dtype=np.float64)
    order = _sorted_detection_order(scores) if det_idx.size else np.empty(0, dtype=np.int64)
    det_idx = det_idx[order]

    n_det = det_idx.size
    is_tp = np.zeros(n_det, dtype=bool)
    match_iou = np.zeros(n_det, dtype=np.float64)
    match_gt = np.full(n_det, -1, dtype=np.int64)
    claimed = set()

    for k in range(n_det):
        det_box = detections[det_idx[k]].box
        best_iou = -1.0
        best_gt = -1
        for g in gt_idx:
            if g in claimed:
                continue
            ov = iou(det_box, ground_truths[g].box)
            # Strictly-better IoU wins; an exact tie keeps the earlier
            # (lower-index) ground-truth box because gt_idx is ascending.
            if ov >= tau and ov > best_iou:
                best_iou = ov
                best_gt = g
        if best_gt >= 0:
            is_tp[k] = True
            match_iou[k] = best_iou
            match_gt[k] = best_gt
            claimed.add(best_gt)

    return MatchResult(det_idx, is_tp, match_iou, match_gt, n_gt=len(gt_idx))


@dataclass(frozen=True)
class PRCurve:
    """Precision/recall points for one class at one IoU threshold."""

    recall: np.ndarray
    precision: np.ndarray
    n_gt: int

    def interpolated_precision(self, recall_points: np.ndarray) -> np.ndarray:
        """Highest precision achieved at or beyond each queried recall."""
        if self.recall.size == 0:
            return np.zeros(recall_points.size, dtype=np.float64)
        # Monotone envelope: precision at recall r is the max precision over
        # all operating points whose recall is >= r.
        envelope = np.maximum.accumulate(self.precision[::-1])[::-1]
        out = np.zeros(recall_points.size, dtype=np.float64)
        for i, r in enumerate(recall_points):
            ok = self.recall >= r - 1e-12
            out[i] = envelope[np.argmax(ok)] if ok.any() else 0.0
        return out


def pr_curve(match: MatchResult) -> PRCurve:
    """Cumulative precision/recall along the score-sorted detection list."""
    if match.n_gt == 0:
        raise ValueError("precision/recall is undefined without ground truth")
    tp = np.cumsum(match.is_tp.astype(np.float64))
    fp = np.cumsum((~match.is_tp).astype(np.float64))
    recall = tp / match.n_gt
    precision = tp / np.maximum(tp + fp, 1.0)
    return PRCurve(recall, precision, match.n_gt)


def _recall_grid(recall_points) -> np.ndarray:
    if isinstance(recall_points, str):
        if recall_points == "coco101":
            return np.linspace(0.0, 1.0, 101)
        raise ValueError(f"unknown recall grid {recall_points!r}")
    return np.asarray(recall_points, dtype=np.float64)


def ap_at_iou(inputs: EvalInput, tau: float, recall_points=TEN_POINT_RECALLS) -> float:
    """Average precision at one IoU threshold, averaged over classes.

    Per class, precision is interpolated (monotone envelope) and sampled at
    the recall grid; the samples' mean is that class's AP.  Classes present
    in the ground truth but absent from the detections contribute zero.
    """
    classes = inputs.classes()
    if not classes:
        raise ValueError("cannot evaluate without ground-truth objects")
    grid = _recall_grid(recall_points)
    per_class = []
    for cls in classes:
        match = match_class(inputs.detections, inputs.ground_truths, cls, tau)
        curve = pr_curve(match)
        per_class.append(float(curve.interpolated_precision(grid).mean()))
    return float(np.mean(per_class))


def mean_ap(inputs: EvalInput, taus: Sequence[float] = DEFAULT_TAUS, recall_points=TEN_POINT_RECALLS) -> dict:
    """AP averaged over IoU thresholds; returns the per-threshold table too."""
    by_tau = {float(t): ap_at_iou(inputs, float(t), recall_points) for t in taus}
    return {"mean_ap": float(np.mean(list(by_tau.values()))), "by_tau": by_tau}


@dataclass(frozen=True)
class LRPResult:
    """LRP value with its component tallies at one score threshold."""

    value: float
    n_tp: int
    n_fp: int
    n_fn: int
    loc_error_sum: float
    threshold: float

    @property
    def components(self) -> dict:
        total = self.n_tp + self.n_fp + self.n_fn
        return {
            "loc": self.loc_error_sum / total if total else float("nan"),
            "fp": self.n_fp / total if total else float("nan"),
            "fn": self.n_fn / total if total else float("nan"),
        }


def lrp_at(inputs: EvalInput, tau: float = 0.5, score_threshold: float = float("-inf")) -> LRPResult:
    """Localisation-recall-precision at a score threshold.

    Detections below the threshold are dropped, the rest are greedily
    matched per class at IoU ``tau``, and the pooled error is

        (sum of scaled localisation errors + #FP + #FN) / (#TP + #FP + #FN)

    where each true positive contributes (1 - IoU) / (1 - tau), which lies
    in [0, 1) because a match requires IoU >= tau.
    """
    if not 0.0 <= tau < 1.0:
        raise ValueError("LRP needs an IoU threshold in [0, 1)")
    kept = [d for d in inputs.detections if d.score >= score_threshold]
    n_tp = 0
    n_fp = 0
    n_fn = 0
    loc_sum = 0.0
    classes = sorted({g.cls for g in inputs.ground_truths} | {d.cls for d in kept})
    for cls in classes:
        gts = [g for g in inputs.ground_truths if g.cls == cls]
        match = match_class(tuple(kept), tuple(gts), cls, tau)
        tp = int(match.is_tp.sum())
        n_tp += tp
        n_fp += int(match.det_indices.size - tp)
        n_fn += len(gts) - tp
        if tp:
            loc_sum += float(((1.0 - match.match_iou[match.is_tp]) / (1.0 - tau)).sum())
    total = n_tp + n_fp + n_fn
    if total == 0:
        raise ValueError("LRP is undefined with no detections and no ground truth")
    value = (loc_sum + n_fp + n_fn) / total
    return LRPResult(value, n_tp, n_fp, n_fn, loc_sum, score_threshold)


def olrp(inputs: EvalInput, tau: float = 0.5) -> LRPResult:
    """Optimal LRP: the minimum over score thresholds.

    Candidate thresholds are the distinct detection scores; ties in the
    minimum go to the highest threshold.  With no detections the value is
    1.0 at threshold +inf (everything is a false negative).
    """
    if not inputs.ground_truths:
        raise ValueError("oLRP needs ground-truth objects")
    scores = sorted({d.score for d in inputs.detections}, reverse=True)
    if not scores:
        n_fn = len(inputs.ground_truths)
        return LRPResult(1.0, 0, 0, n_fn, 0.0, float("inf"))
    best: Optional[LRPResult] = None
    for s in scores:
        res = lrp_at(inputs, tau, score_threshold=s)
        if best is None or res.value < best.value:
            best = res
    return best


# ---------------------------------------------------------------------------
# Reference losses reported alongside the ranking losses.
# ---------------------------------------------------------------------------


def reference_losses(scenario: Scenario) -> dict:
    """Cross-entropy, L1 box error, and IoU loss for a scenario.

    * ``ce``: binary cross-entropy over positive and negative anchors,
      mean of -log s for positives and -log(1 - s) for negatives.
    * ``l1``: mean over positives of the summed absolute corner error.
    * ``iou_loss``: mean over positives of 1 - IoU.
    """
    ps = scenario.pos_scores()
    ns = scenario.neg_scores()
    if np.any(ps <= 0.0) or np.any(ns >= 1.0):
        raise ValueError("cross-entropy needs positive scores > 0 and negative scores < 1")
    terms = np.concatenate((-np.log(ps), -np.log1p(-ns)))
    ce = float(terms.mean())

    pred = scenario.pos_boxes()
    gt = scenario.pos_gt_boxes()
    l1 = float(np.abs(pred - gt).sum(axis=1).mean())

    ious = np.array(
        [iou(Box.from_array(p), Box.from_array(g)) for p, g in zip(pred, gt)],
        dtype=np.float64,
    )
    return {"ce": ce, "l1": l1, "iou_loss": float((1.0 - ious).mean())}


# ---------------------------------------------------------------------------
# Rank vectors, their correlation, and the bound transforms.
# ---------------------------------------------------------------------------


def average_ranks_desc(values: np.ndarray) -> np.ndarray:
    """Descending ranks (1 = largest) with ties sharing their mean rank."""
    v = np.asarray(values, dtype=np.float64)
    order = np.argsort(-v, kind="stable")
    ranks = np.empty(v.size, dtype=np.float64)
    pos = 0
    while pos < v.size:
        end = pos
        while end + 1 < v.size and v[order[end + 1]] == v[order[pos]]:
            end += 1
        mean_rank = 0.5 * (pos + end) + 1.0
        ranks[order[pos : end + 1]] = mean_rank
        pos = end + 1
    return ranks


def positive_ious(scenario: Scenario) -> np.ndarray:
    """IoU of each positive's box against its assigned ground-truth box."""
    pred = scenario.pos_boxes()
    gt = scenario.pos_gt_boxes()
    return np.array(
        [iou(Box.from_array(p), Box.from_array(g)) for p, g in zip(pred, gt)],
        dtype=np.float64,
    )


def ranking_correlation(scenario: Scenario) -> float:
    """Pearson correlation between score ranks and IoU ranks of positives.

    Both vectors use descending average ranks, so +1 means classification
    order agrees perfectly with localisation quality and -1 means it is
    exactly reversed.  Needs at least two positives and nonconstant ranks.
    """
    scores = scenario.pos_scores()
    if scores.size < 2:
        raise ValueError("rank correlation needs at least two positives")
    r_score = average_ranks_desc(scores)
    r_iou = average_ranks_desc(positive_ious(scenario))
    if np.all(r_score == r_score[0]) or np.all(r_iou == r_iou[0]):
        raise ValueError("rank correlation is undefined for constant rank vectors")
    c = np.corrcoef(r_score, r_iou)
    return float(c[0, 1])


def _box_with_iou(gt: np.ndarray, target: float) -> np.ndarray:
    """A box contained in ``gt`` whose IoU with ``gt`` is exactly ``target``.

    Shrinks only the top edge: [x1, y1, x2, y1 + t * (y2 - y1)] has
    intersection t * area and union 1 * area, hence IoU exactly t.
    """
    if not 0.0 <= target <= 1.0:
        raise ValueError("target IoU must lie in [0, 1]")
    x1, y1, x2, y2 = (float(v) for v in gt)
    return np.array([x1, y1, x2, y1 + target * (y2 - y1)], dtype=np.float64)


def ranking_bound_transform(scenario: Scenario, mode: str) -> Scenario:
    """Reassign the positives' IoU multiset to the best or worst ordering.

    ``mode="upper"`` hands the highest IoU to the highest-scored positive
    (rank correlation becomes +1); ``mode="lower"`` reverses it (-1).  The
    multiset of IoU values is preserved; boxes are replaced by synthetic
    boxes achieving each target IoU exactly against the assigned ground
    truth.  Scores and labels are untouched.
    """
    if mode not in ("upper", "lower"):
        raise ValueError(f"mode must be 'upper' or 'lower', got {mode!r}")
    ious = positive_ious(scenario)
    scores = scenario.pos_scores()
    # Highest score first; ties by original order for determinism.
    score_order = np.lexsort((np.arange(scores.size), -scores))
    sorted_ious = np.sort(ious)[::-1] if mode == "upper" else np.sort(ious)
    targets = np.empty_like(ious)
    targets[score_order] = sorted_ious
    gt = scenario.pos_gt_boxes()
    new_boxes = np.stack([_box_with_iou(gt[i], targets[i]) for i in range(len(targets))])
    return scenario.with_positive_boxes(new_boxes)


def scenario_to_eval(scenario: Scenario, extra_gts: Sequence[GroundTruth] = ()) -> EvalInput:
    """Recast a scenario as evaluator input.

    Positive anchors keep their boxes; negative anchors get unit boxes far
    from every ground-truth box so they can never match (their IoU with any
    ground truth is zero).  Extra unmatched ground truths may be appended to
    model missed objects.
    """
    gts = [GroundTruth(Box.from_array(g)) for g in scenario.gts]
    gts.extend(extra_gts)
    far_x = max(float(g.box.x2) for g in gts) + 10.0
    detections = []
    for i, rec in enumerate(scenario.anchors):
        if rec.label == POS:
            detections.append(Detection(rec.score, Box.from_array(np.asarray(rec.box))))
        elif rec.label == NEG:
            x = far_x + 3.0 * i
            detections.append(Detection(rec.score, Box(x, 0.0, x + 1.0, 1.0)))
    return EvalInput.build(detections, gts)
