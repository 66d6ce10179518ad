"""Shared helpers for the test suite: randomized scenarios and a naive
pairwise-table oracle that materializes what the streaming assembly never
builds."""

import numpy as np

from rankloss.geometry import LocErrorKind
from rankloss.ranking import (
    NEG,
    POS,
    AnchorRecord,
    Scenario,
    diff_transform,
    rank_stats,
    step,
)


def random_scenario(
    rng,
    n_pos=6,
    n_neg=20,
    spread=10.0,
    sentinel=False,
    loc_kind=None,
    tie_fraction=0.0,
):
    """Random scenario with unit ground-truth boxes and top-edge-shrunk
    predictions (so every positive has a known overlap in (0.55, 0.95)).

    sentinel=True appends one negative scored above every positive, which
    guarantees N_FP(i) > 0 for all i. tie_fraction snaps that share of the
    negative scores onto positive scores to exercise exact-tie handling.
    """
    gts = [np.array([3.0 * k, 0.0, 3.0 * k + 1.0, 1.0]) for k in range(n_pos)]
    anchors = []
    for k in range(n_pos):
        frac = rng.uniform(0.55, 0.95)
        box = np.array([3.0 * k, 0.0, 3.0 * k + 1.0, frac])
        anchors.append(AnchorRecord(POS, float(rng.uniform(0.0, spread)), gt=k, box=box))
    neg_scores = rng.uniform(0.0, spread, size=n_neg)
    if tie_fraction > 0.0 and n_neg:
        pos_scores = [a.score for a in anchors]
        for j in range(int(tie_fraction * n_neg)):
            neg_scores[j] = pos_scores[j % n_pos]
    anchors.extend(AnchorRecord(NEG, float(s)) for s in neg_scores)
    if sentinel:
        top = max(a.score for a in anchors[:n_pos])
        anchors.append(AnchorRecord(NEG, top + 1.0))
    return Scenario(anchors, gts, loc_kind if loc_kind is not None else LocErrorKind.iou())


def naive_pair_tables(scenario, loss_def, kind):
    """Materialize the full |P| x |N| pairwise error tables.

    Returns (L, L_star, z) where L[i, j] = l(i) * p(j|i) and
    L_star[i, j] = l*(i) * p(j|i); the streaming assembly must agree with
    sums over these tables without ever building them.
    """
    stats = rank_stats(scenario, kind)
    ell, ell_star = loss_def.local_errors(scenario, stats, kind)
    z = float(loss_def.normalizer(scenario))
    ps, ns = scenario.pos_scores(), scenario.neg_scores()
    table = np.zeros((ps.size, ns.size))
    table_star = np.zeros((ps.size, ns.size))
    for i in range(ps.size):
        h_row = step(diff_transform(ps[i], ns), kind)
        p_row = h_row / stats.n_fp[i] if stats.n_fp[i] > 0.0 else np.zeros(ns.size)
        table[i] = ell[i] * p_row
        table_star[i] = ell_star[i] * p_row
    return table, table_star, z
