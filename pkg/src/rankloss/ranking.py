"""Score-difference ranking machinery shared by every ranking loss.

The central objects:

* the difference transform x_ij = s_j - s_i between anchor scores,
* a step function H applied to it (exact Heaviside with H(0)=1, or a
  piecewise-linear ramp of half-width delta with H(0)=0.5),
* per-positive rank statistics built from sums of H,
* an error-driven gradient assembly: every loss provides a per-positive
  local error l(i) and a target l*(i); the pairwise error
  L_ij = l(i) * H(x_ij)/N_FP(i) is distributed over the negatives ranked
  above i and the update Delta x_ij = L*_ij - L_ij yields the score
  gradients. Positive and negative gradient magnitude sums are equal by
  construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import Box, LocErrorKind, loc_error

POS, NEG, IGNORE = "pos", "neg", "ignore"


@dataclass(frozen=True)
class StepKind:
    """Step function selector.

    exact:  H(x) = 1 for x >= 0, else 0. Ties count: H(0) = 1.
    smooth: H(x) = 0 below -delta, x/(2 delta) + 0.5 inside [-delta, delta],
            1 above delta. H(0) = 0.5.
    """

    smooth: bool = False
    delta: float = 1.0

    def __post_init__(self):
        if self.smooth and not self.delta > 0.0:
            raise ValueError("smooth step needs delta > 0, got %r" % (self.delta,))

    @classmethod
    def exact(cls):
        return cls(smooth=False)

    @classmethod
    def smoothed(cls, delta=1.0):
        return cls(smooth=True, delta=delta)


def step(x, kind):
    """Apply the selected step function elementwise."""
    x = np.asarray(x, dtype=np.float64)
    if not kind.smooth:
        return (x >= 0.0).astype(np.float64)
    return np.clip(x / (2.0 * kind.delta) + 0.5, 0.0, 1.0)


def diff_transform(scores_i, scores_j):
    """x_ij = s_j - s_i for broadcastable score arrays."""
    return np.asarray(scores_j, dtype=np.float64) - np.asarray(scores_i, dtype=np.float64)


@dataclass(frozen=True)
class AnchorRecord:
    """One anchor: label, score, and (for positives) a matched GT + box."""

    label: str
    score: float
    gt: int | None = None
    box: np.ndarray | None = None

    def __post_init__(self):
        if self.label not in (POS, NEG, IGNORE):
            raise ValueError("unknown anchor label: %r" % (self.label,))


class Scenario:
    """A frozen mini-batch of anchors plus ground-truth boxes.

    Positives must reference a valid GT index and carry a predicted box;
    negatives and ignored anchors carry only a score. Ignored anchors are
    excluded from every sum and always receive zero gradient.
    """

    def __init__(self, anchors, gts, loc_kind=None):
        self.anchors = list(anchors)
        self.gts = [g.as_array() if isinstance(g, Box) else np.asarray(g, np.float64) for g in gts]
        self.loc_kind = loc_kind if loc_kind is not None else LocErrorKind.iou()
        self._validate()
        labels = [a.label for a in self.anchors]
        self.scores = np.array([a.score for a in self.anchors], dtype=np.float64)
        self.pos_index = np.array([i for i, l in enumerate(labels) if l == POS], dtype=np.intp)
        self.neg_index = np.array([i for i, l in enumerate(labels) if l == NEG], dtype=np.intp)

    def _validate(self):
        if not any(a.label == POS for a in self.anchors):
            raise ValueError("scenario has no positive anchors")
        for i, a in enumerate(self.anchors):
            if not np.isfinite(a.score):
                raise ValueError("anchors[%d].score is not finite" % i)
            if a.label == POS:
                if a.gt is None or not (0 <= a.gt < len(self.gts)):
                    raise ValueError("anchors[%d]: positive needs a valid gt index" % i)
                if a.box is None:
                    raise ValueError("anchors[%d]: positive needs a predicted box" % i)

    @property
    def n_pos(self):
        return len(self.pos_index)

    @property
    def n_neg(self):
        return len(self.neg_index)

    def pos_scores(self):
        return self.scores[self.pos_index]

    def neg_scores(self):
        return self.scores[self.neg_index]

    def pos_boxes(self):
        return np.stack([np.asarray(self.anchors[i].box, np.float64) for i in self.pos_index])

    def pos_gt_boxes(self):
        return np.stack([self.gts[self.anchors[i].gt] for i in self.pos_index])

    def loc_errors(self):
        """E_loc per positive, unchecked (may exceed 1 for an overlap that
        has drifted below tau; the metric-side check lives in geometry)."""
        out = np.empty(self.n_pos)
        for k, i in enumerate(self.pos_index):
            a = self.anchors[i]
            out[k] = loc_error(a.box, self.gts[a.gt], self.loc_kind, check=False)
        return out

    def with_positive_boxes(self, boxes):
        """Copy of the scenario with the positives' predicted boxes replaced
        (order follows pos_index)."""
        boxes = np.asarray(boxes, dtype=np.float64)
        new = list(self.anchors)
        for k, i in enumerate(self.pos_index):
            a = new[i]
            new[i] = AnchorRecord(a.label, a.score, a.gt, boxes[k].copy())
        return Scenario(new, self.gts, self.loc_kind)

    def with_scores(self, scores):
        """Copy of the scenario with every anchor's score replaced."""
        scores = np.asarray(scores, dtype=np.float64)
        new = [AnchorRecord(a.label, float(scores[i]), a.gt, a.box) for i, a in enumerate(self.anchors)]
        return Scenario(new, self.gts, self.loc_kind)


@dataclass
class RankStats:
    """Per-positive rank statistics (aligned with Scenario.pos_index).

    rank      = 1 + sum_{k in P, k != i} H(x_ik) + sum_{j in N} H(x_ij)
    rank_pos  = the positive-only part (including the self term 1)
    n_fp      = the negative part, i.e. rank - rank_pos
    Fractional in smooth mode.
    """

    rank: np.ndarray
    rank_pos: np.ndarray
    n_fp: np.ndarray


def rank_stats(scenario, kind):
    ps = scenario.pos_scores()
    ns = scenario.neg_scores()
    n_pos = ps.size
    rank_pos = np.empty(n_pos)
    n_fp = np.empty(n_pos)
    for i in range(n_pos):
        h_pp = step(diff_transform(ps[i], ps), kind)
        h_pp[i] = 0.0  # the self pair is the +1 term, not an H comparison
        rank_pos[i] = 1.0 + h_pp.sum()
        n_fp[i] = step(diff_transform(ps[i], ns), kind).sum() if ns.size else 0.0
    return RankStats(rank=rank_pos + n_fp, rank_pos=rank_pos, n_fp=n_fp)


@dataclass
class GradReport:
    """Output of gradient assembly.

    score_grads: per-anchor dL/ds (1/Z-normalized; <= 0 on positives,
                 >= 0 on negatives, exactly 0 on ignored anchors).
    loss_value:  (1/Z) * double sum of primary terms L_ij.
    primary_term_sum_check: |direct per-positive loss - loss_value|. Nonzero
                 only when some positive has residual local error but no
                 negative ranked above it (nothing to distribute).
    """

    score_grads: np.ndarray
    loss_value: float
    primary_term_sum_check: float


class RankingLossDef:
    """Plug-in contract for the shared assembly routine.

    Subclasses provide the normalizer Z and per-positive local/target errors
    (l(i), l*(i)); the default pairwise distribution over negatives is
    uniform over step mass, p(j|i) = H(x_ij)/N_FP(i), defined as all-zero
    when N_FP(i) = 0 so there is never a 0/0.

    unconditional_positive_grads reproduces implementations that read the
    positive gradient straight off the local error, even when there is no
    negative above to absorb it; only the wrong-target variant sets it.
    """

    name = "base"
    unconditional_positive_grads = False

    def normalizer(self, scenario):
        raise NotImplementedError

    def local_errors(self, scenario, stats, kind):
        """Return (ell, ell_star) arrays aligned with pos_index."""
        raise NotImplementedError

    def pair_distribution(self, h_row, n_fp_i):
        """p(j|i) over negatives; zero row when no step mass."""
        if n_fp_i <= 0.0:
            return np.zeros_like(h_row)
        return h_row / n_fp_i


def assemble_gradients(scenario, loss_def, kind):
    """Stream the pairwise error table row by row and accumulate gradients.

    Never materializes the |P| x |N| matrix. Raises if any target exceeds
    its primary term (the update would push the wrong way).
    """
    stats = rank_stats(scenario, kind)
    ell, ell_star = loss_def.local_errors(scenario, stats, kind)
    z = float(loss_def.normalizer(scenario))
    ps = scenario.pos_scores()
    ns = scenario.neg_scores()

    grads = np.zeros(len(scenario.anchors))
    neg_acc = np.zeros(ns.size)
    primary_sum = 0.0
    for i in range(ps.size):
        if ns.size:
            h_row = step(diff_transform(ps[i], ns), kind)
        else:
            h_row = np.zeros(0)
        p_row = loss_def.pair_distribution(h_row, stats.n_fp[i])
        gap = ell[i] - ell_star[i]
        if gap < -1e-12 * max(1.0, abs(ell[i])):
            raise ValueError(
                "target exceeds primary term for positive %d (l=%r, l*=%r)"
                % (i, ell[i], ell_star[i])
            )
        # Delta x_ij = (l*(i) - l(i)) p(j|i); positive grad is its row sum.
        mass = p_row.sum()
        if loss_def.unconditional_positive_grads:
            grads[scenario.pos_index[i]] = -gap / z
        else:
            grads[scenario.pos_index[i]] = -gap * mass / z
        neg_acc += gap * p_row / z
        primary_sum += ell[i] * mass

    grads[scenario.neg_index] = neg_acc
    loss_value = primary_sum / z
    direct = float(ell.sum()) / z
    return GradReport(
        score_grads=grads,
        loss_value=loss_value,
        primary_term_sum_check=abs(direct - loss_value),
    )


def primary_term_sum(scenario, loss_def, kind):
    """(1/Z) * sum_ij L_ij, computed from the same streamed rows."""
    return assemble_gradients(scenario, loss_def, kind).loss_value


def gradient_sums(report, scenario):
    """(sum of |grad| over positives, over negatives). Equal for every
    conforming loss; the wrong-target variant breaks the equality."""
    g = report.score_grads
    return (
        float(np.abs(g[scenario.pos_index]).sum()),
        float(np.abs(g[scenario.neg_index]).sum()),
    )
