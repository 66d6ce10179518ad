"""Canonical desk-check fixtures shared by tests, docs, and the CLI.

Three scenarios share one skeleton -- five disjoint unit ground-truth boxes,
four scored positives matched to the first four (the fifth is a missed
object), and six scored negatives -- and differ only in how localisation
quality lines up with classification score:

* ``aligned``: the best-scored positive is also the best-localised,
* ``shuffled``: localisation quality is scrambled against score,
* ``reversed``: the best-scored positive is the worst-localised.

The IoU multiset {0.95, 0.80, 0.65, 0.50} is identical across the three, so
score-independent quantities (mean IoU, L1 error, cross-entropy) agree while
every rank-sensitive quantity separates them.
"""

from __future__ import annotations

import os

import numpy as np

from .fileio import save_eval, save_scenario
from .geometry import LocErrorKind
from .metrics import EvalInput, scenario_to_eval
from .ranking import NEG, POS, AnchorRecord, Scenario

FIXTURE_NAMES = ("aligned", "shuffled", "reversed")

POS_SCORES = (1.00, 0.80, 0.50, 0.10)
NEG_SCORES = (0.90, 0.70, 0.60, 0.40, 0.30, 0.20)
N_GT = 5  # four matched + one missed object

_IOUS = {
    "aligned": (0.95, 0.80, 0.65, 0.50),
    "shuffled": (0.80, 0.65, 0.50, 0.95),
    "reversed": (0.50, 0.65, 0.80, 0.95),
}


def _gt_box(k: int) -> np.ndarray:
    return np.array([3.0 * k, 0.0, 3.0 * k + 1.0, 1.0], dtype=np.float64)


def _pred_box(gt: np.ndarray, iou_target: float) -> np.ndarray:
    """A box over ``gt`` with the requested IoU, moving only the top edge.

    Most targets shrink the box (top edge at fraction ``iou_target``); the
    0.80 case grows it past the ground truth instead (top edge at 1/0.80),
    so the fixtures exercise both under- and over-sized predictions.
    """
    x1, y1, x2, y2 = gt
    h = y2 - y1
    if iou_target == 0.80:
        return np.array([x1, y1, x2, y1 + h / iou_target], dtype=np.float64)
    return np.array([x1, y1, x2, y1 + h * iou_target], dtype=np.float64)


def fixture_scenario(name: str) -> Scenario:
    """Build one of the named scenarios (aligned / shuffled / reversed)."""
    if name not in _IOUS:
        raise ValueError(f"unknown fixture {name!r}; choose from {FIXTURE_NAMES}")
    gts = [_gt_box(k) for k in range(N_GT)]
    anchors = [
        AnchorRecord(POS, POS_SCORES[k], gt=k, box=_pred_box(gts[k], _IOUS[name][k]))
        for k in range(len(POS_SCORES))
    ]
    anchors.extend(AnchorRecord(NEG, s) for s in NEG_SCORES)
    return Scenario(anchors, gts, LocErrorKind.iou())


def fixture_eval(name: str) -> EvalInput:
    """The same fixture recast as evaluator input.

    Positives keep their boxes; negatives become far-away unit boxes that
    cannot match anything; the fifth ground truth stays unmatched.
    """
    return scenario_to_eval(fixture_scenario(name))


def write_fixture_files(directory) -> list:
    """Write every fixture as scenario and eval JSON; returns the paths."""
    os.makedirs(directory, exist_ok=True)
    paths = []
    for name in FIXTURE_NAMES:
        sp = os.path.join(directory, f"{name}_scenario.json")
        ep = os.path.join(directory, f"{name}_eval.json")
        save_scenario(fixture_scenario(name), sp)
        save_eval(fixture_eval(name), ep)
        paths.extend([sp, ep])
    return paths
