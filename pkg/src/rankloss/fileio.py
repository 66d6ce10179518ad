"""JSON file formats for scenarios and evaluator inputs.

Both formats carry ``"version": 1``.  Validation errors name the offending
field by path (for example ``anchors[3].score``) so a malformed file can be
fixed without reading source code.  Saving and re-loading reproduces the
original objects exactly: all numbers are written as JSON doubles, which
round-trip float64 losslessly via repr.
"""

from __future__ import annotations

import json
from typing import Optional

import numpy as np

from .geometry import Box, LocErrorKind
from .metrics import Detection, EvalInput, GroundTruth
from .ranking import IGNORE, NEG, POS, AnchorRecord, Scenario

SCENARIO_VERSION = 1
EVAL_VERSION = 1


class FileFormatError(ValueError):
    """A structural or type problem in an input file, named by field path."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


def _expect(condition: bool, path: str, message: str) -> None:
    if not condition:
        raise FileFormatError(path, message)


def _number(value, path: str) -> float:
    _expect(isinstance(value, (int, float)) and not isinstance(value, bool), path, "expected a number")
    return float(value)


def _box_array(value, path: str) -> np.ndarray:
    _expect(isinstance(value, list) and len(value) == 4, path, "expected a list of four numbers")
    return np.array([_number(v, f"{path}[{i}]") for i, v in enumerate(value)], dtype=np.float64)


def _integer(value, path: str) -> int:
    _expect(isinstance(value, int) and not isinstance(value, bool), path, "expected an integer")
    return int(value)


def _check_version(doc: dict, expected: int, path: str) -> None:
    _expect(isinstance(doc, dict), path, "expected a JSON object")
    _expect("version" in doc, f"{path}.version", "missing")
    _expect(doc["version"] == expected, f"{path}.version", f"expected {expected}, got {doc['version']!r}")


def _load_json(path) -> dict:
    with open(path) as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise FileFormatError("$", f"not valid JSON ({exc})") from exc


# ---------------------------------------------------------------------------
# Scenario files.
# ---------------------------------------------------------------------------


def scenario_to_dict(scenario: Scenario) -> dict:
    anchors = []
    for a in scenario.anchors:
        entry = {"label": a.label, "score": float(a.score)}
        if a.gt is not None:
            entry["gt"] = int(a.gt)
        if a.box is not None:
            entry["box"] = [float(v) for v in np.asarray(a.box).reshape(-1)]
        anchors.append(entry)
    return {
        "version": SCENARIO_VERSION,
        "loc_kind": {"variant": scenario.loc_kind.variant, "tau": float(scenario.loc_kind.tau)},
        "gts": [[float(v) for v in g] for g in scenario.gts],
        "anchors": anchors,
    }


def scenario_from_dict(doc: dict) -> Scenario:
    _check_version(doc, SCENARIO_VERSION, "$")

    kind_doc = doc.get("loc_kind", {"variant": "iou", "tau": 0.5})
    _expect(isinstance(kind_doc, dict), "loc_kind", "expected an object")
    variant = kind_doc.get("variant", "iou")
    _expect(variant in ("iou", "giou"), "loc_kind.variant", f"expected 'iou' or 'giou', got {variant!r}")
    tau = _number(kind_doc.get("tau", 0.5 if variant == "iou" else 0.0), "loc_kind.tau")
    try:
        loc_kind = LocErrorKind(variant, tau)
    except ValueError as exc:
        raise FileFormatError("loc_kind.tau", str(exc)) from exc

    gts_doc = doc.get("gts")
    _expect(isinstance(gts_doc, list) and gts_doc, "gts", "expected a non-empty list of boxes")
    gts = [_box_array(g, f"gts[{i}]") for i, g in enumerate(gts_doc)]

    anchors_doc = doc.get("anchors")
    _expect(isinstance(anchors_doc, list) and anchors_doc, "anchors", "expected a non-empty list")
    anchors = []
    for i, entry in enumerate(anchors_doc):
        path = f"anchors[{i}]"
        _expect(isinstance(entry, dict), path, "expected an object")
        label = entry.get("label")
        _expect(label in (POS, NEG, IGNORE), f"{path}.label", f"expected 'pos', 'neg', or 'ignore', got {label!r}")
        _expect("score" in entry, f"{path}.score", "missing")
        score = _number(entry["score"], f"{path}.score")
        gt: Optional[int] = None
        box = None
        if label == POS:
            _expect("gt" in entry, f"{path}.gt", "missing (positives must reference a ground-truth index)")
            gt = _integer(entry["gt"], f"{path}.gt")
            _expect(0 <= gt < len(gts), f"{path}.gt", f"index {gt} out of range for {len(gts)} ground truths")
            _expect("box" in entry, f"{path}.box", "missing (positives carry a predicted box)")
            box = _box_array(entry["box"], f"{path}.box")
        anchors.append(AnchorRecord(label, score, gt, box))

    try:
        return Scenario(anchors, gts, loc_kind)
    except ValueError as exc:
        raise FileFormatError("$", str(exc)) from exc


def save_scenario(scenario: Scenario, path) -> None:
    with open(path, "w") as fh:
        json.dump(scenario_to_dict(scenario), fh, indent=2)
        fh.write("\n")


def load_scenario(path) -> Scenario:
    return scenario_from_dict(_load_json(path))


# ---------------------------------------------------------------------------
# Evaluator input files.
# ---------------------------------------------------------------------------


def eval_to_dict(inputs: EvalInput) -> dict:
    return {
        "version": EVAL_VERSION,
        "detections": [
            {"score": float(d.score), "box": [float(v) for v in d.box.as_array()], "class": int(d.cls)}
            for d in inputs.detections
        ],
        "ground_truths": [
            {"box": [float(v) for v in g.box.as_array()], "class": int(g.cls)}
            for g in inputs.ground_truths
        ],
    }


def eval_from_dict(doc: dict) -> EvalInput:
    _check_version(doc, EVAL_VERSION, "$")

    dets_doc = doc.get("detections")
    _expect(isinstance(dets_doc, list), "detections", "expected a list")
    detections = []
    for i, entry in enumerate(dets_doc):
        path = f"detections[{i}]"
        _expect(isinstance(entry, dict), path, "expected an object")
        _expect("score" in entry, f"{path}.score", "missing")
        _expect("box" in entry, f"{path}.box", "missing")
        score = _number(entry["score"], f"{path}.score")
        arr = _box_array(entry["box"], f"{path}.box")
        cls = _integer(entry.get("class", 0), f"{path}.class")
        try:
            detections.append(Detection(score, Box.from_array(arr), cls))
        except ValueError as exc:
            raise FileFormatError(path, str(exc)) from exc

    gts_doc = doc.get("ground_truths")
    _expect(isinstance(gts_doc, list) and gts_doc, "ground_truths", "expected a non-empty list")
    gts = []
    for i, entry in enumerate(gts_doc):
        path = f"ground_truths[{i}]"
        _expect(isinstance(entry, dict), path, "expected an object")
        _expect("box" in entry, f"{path}.box", "missing")
        arr = _box_array(entry["box"], f"{path}.box")
        cls = _integer(entry.get("class", 0), f"{path}.class")
        try:
            gts.append(GroundTruth(Box.from_array(arr), cls))
        except ValueError as exc:
            raise FileFormatError(path, str(exc)) from exc

    return EvalInput.build(detections, gts)


def save_eval(inputs: EvalInput, path) -> None:
    with open(path, "w") as fh:
        json.dump(eval_to_dict(inputs), fh, indent=2)
        fh.write("\n")


def load_eval(path) -> EvalInput:
    return eval_from_dict(_load_json(path))
